use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{Aggregate, MethodReport, PairwiseTest, ResultRow};

pub const REPORT_SCHEMA: &str = "tvseg-report/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportKind {
    /// Methods by datasets.
    Benchmark,
    /// TOP-k settings by datasets.
    Sweep,
}

/// Run facts echoed into the report. Must not contain anything that varies
/// between equivalent runs (wall clock, endpoints, thread counts).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub seed: u64,
    pub samples: usize,
    pub skipped: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub kind: ReportKind,
    pub meta: ReportMeta,
    pub datasets: Vec<String>,
    pub methods: Vec<MethodReport>,
    pub tests: Vec<PairwiseTest>,
}

impl Report {
    pub fn new(kind: ReportKind, meta: ReportMeta, methods: Vec<MethodReport>, tests: Vec<PairwiseTest>) -> Self {
        let datasets: BTreeSet<String> = methods.iter().flat_map(|m| m.per_dataset.keys().cloned()).collect();
        Report {
            schema: REPORT_SCHEMA.to_string(),
            kind,
            meta,
            datasets: datasets.into_iter().collect(),
            methods,
            tests,
        }
    }
}

fn fmt3(v: f64) -> String {
    format!("{v:.3}")
}

fn fmt_t(t: f64) -> String {
    if t.is_infinite() {
        if t > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{t:.3}")
    }
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "<0.001".to_string()
    } else {
        format!("{p:.3}")
    }
}

/// Renders a column, bolding every cell that ties the maximum at the
/// displayed precision.
fn column(values: &[Option<f64>]) -> Vec<String> {
    let shown: Vec<Option<String>> = values.iter().map(|v| v.map(fmt3)).collect();
    let best = values
        .iter()
        .flatten()
        .copied()
        .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))))
        .map(fmt3);
    shown
        .into_iter()
        .map(|s| match s {
            Some(s) if Some(&s) == best.as_ref() => format!("**{s}**"),
            Some(s) => s,
            None => "n/a".to_string(),
        })
        .collect()
}

fn table(out: &mut String, header: &[String], rows: &[Vec<String>]) {
    let _ = writeln!(out, "| {} |", header.join(" | "));
    let align: Vec<&str> = header
        .iter()
        .enumerate()
        .map(|(i, _)| if i == 0 { "---" } else { "---:" })
        .collect();
    let _ = writeln!(out, "| {} |", align.join(" | "));
    for r in rows {
        let _ = writeln!(out, "| {} |", r.join(" | "));
    }
}

fn ci_cell(a: &Aggregate) -> String {
    if a.degenerate {
        format!("[{}, {}] (n=1)", fmt3(a.ci_low), fmt3(a.ci_high))
    } else {
        format!("[{}, {}]", fmt3(a.ci_low), fmt3(a.ci_high))
    }
}

fn markdown(r: &Report) -> String {
    let mut out = String::new();
    let (title, first) = match r.kind {
        ReportKind::Benchmark => ("Segmentation benchmark", "Method"),
        ReportKind::Sweep => ("TOP-k box selection sweep", "Setting"),
    };
    let _ = writeln!(out, "# {title}\n");
    let _ = writeln!(
        out,
        "Mean Dice over {} samples (seed {}, {} skipped). Best value per column in bold; \
         values tied at three decimals are all bold. Pooled weighs samples equally, macro weighs datasets equally.\n",
        r.meta.samples, r.meta.seed, r.meta.skipped
    );
    for note in &r.meta.notes {
        let _ = writeln!(out, "- {note}");
    }
    if !r.meta.notes.is_empty() {
        out.push('\n');
    }

    let show_macro = r.datasets.len() > 1;
    let mut header = vec![first.to_string()];
    header.extend(r.datasets.iter().cloned());
    header.push("Pooled".into());
    if show_macro {
        header.push("Macro".into());
    }
    let mut columns: Vec<Vec<String>> = r
        .datasets
        .iter()
        .map(|d| {
            column(
                &r.methods
                    .iter()
                    .map(|m| m.per_dataset.get(d).map(|a| a.mean))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    columns.push(column(
        &r.methods.iter().map(|m| m.pooled.map(|a| a.mean)).collect::<Vec<_>>(),
    ));
    if show_macro {
        columns.push(column(
            &r.methods
                .iter()
                .map(|m| m.macro_avg.map(|a| a.mean))
                .collect::<Vec<_>>(),
        ));
    }
    let rows: Vec<Vec<String>> = r
        .methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut row = vec![m.label.clone()];
            row.extend(columns.iter().map(|c| c[i].clone()));
            row
        })
        .collect();
    table(&mut out, &header, &rows);

    let _ = writeln!(out, "\n## 95% confidence intervals\n");
    let mut rows = Vec::new();
    for m in &r.methods {
        let scopes = m
            .per_dataset
            .iter()
            .map(|(d, a)| (d.as_str(), Some(a)))
            .chain([("pooled", m.pooled.as_ref())])
            .chain(show_macro.then_some(("macro", m.macro_avg.as_ref())));
        for (scope, agg) in scopes {
            if let Some(a) = agg {
                rows.push(vec![
                    m.label.clone(),
                    scope.to_string(),
                    a.n.to_string(),
                    fmt3(a.mean),
                    ci_cell(a),
                ]);
            }
        }
    }
    let header: Vec<String> = [first, "Scope", "n", "Mean", "95% CI"].map(String::from).to_vec();
    table(&mut out, &header, &rows);

    if !r.tests.is_empty() {
        let _ = writeln!(out, "\n## Paired t-tests (two-sided, pooled samples)\n");
        let rows: Vec<Vec<String>> = r
            .tests
            .iter()
            .map(|t| {
                let mut p = fmt_p(t.test.p);
                if t.test.degenerate {
                    p.push_str(" (degenerate)");
                }
                vec![
                    t.method_a.clone(),
                    t.method_b.clone(),
                    t.test.n.to_string(),
                    format!("{:+.3}", t.test.mean_diff),
                    fmt_t(t.test.t),
                    format!("{}", t.test.df),
                    p,
                ]
            })
            .collect();
        let header: Vec<String> = ["A", "B", "n", "Mean diff", "t", "df", "p"].map(String::from).to_vec();
        table(&mut out, &header, &rows);
    }

    let _ = writeln!(out, "\n## Coverage\n");
    let rows: Vec<Vec<String>> = r
        .methods
        .iter()
        .map(|m| {
            vec![
                m.label.clone(),
                m.kind.name().to_string(),
                m.selection.name().to_string(),
                m.samples.to_string(),
                m.without_gt.to_string(),
                m.grounding_misses.to_string(),
                m.backend_errors.to_string(),
            ]
        })
        .collect();
    let header: Vec<String> = [
        first,
        "Kind",
        "Selection",
        "Samples",
        "No GT",
        "Grounding misses",
        "Backend errors",
    ]
    .map(String::from)
    .to_vec();
    table(&mut out, &header, &rows);
    out
}

/// `(report.md, report.json)`. Both are pure functions of `report`.
pub fn render_report(report: &Report) -> (String, String) {
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    (markdown(report), json)
}

/// Linear-interpolation quantile of sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Dice distribution summary per method and dataset, plus a pooled row.
pub fn quantiles_csv(methods: &[String], rows: &[ResultRow]) -> String {
    let mut out = String::from("method,dataset,n,min,q25,median,q75,max\n");
    let datasets: BTreeSet<&str> = rows.iter().map(|r| r.dataset.as_str()).collect();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for m in methods {
        for scope in datasets.iter().copied().map(Some).chain([None]) {
            let mut v: Vec<f64> = rows
                .iter()
                .filter(|r| &r.method == m && scope.is_none_or(|d| r.dataset == d))
                .filter_map(|r| r.dice)
                .collect();
            if v.is_empty() {
                continue;
            }
            v.sort_by(f64::total_cmp);
            let mut rec = vec![m.clone(), scope.unwrap_or("pooled").to_string(), v.len().to_string()];
            rec.extend([0.0, 0.25, 0.5, 0.75, 1.0].map(|q| quantile(&v, q).to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf8"));
    out
}
