//! Dice aggregation, confidence intervals, paired t-tests and reports.

mod report;
pub mod tdist;

use std::collections::BTreeMap;
use std::fmt::Debug;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::methods::MethodKind;
use crate::segmenting::SelectionPolicy;

pub use report::{quantiles_csv, render_report, Report, ReportKind, ReportMeta, REPORT_SCHEMA};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("no values to aggregate")]
    Empty,
    #[error("results mix methods '{0}' and '{1}'")]
    MixedMethods(String, String),
    #[error("paired samples differ at position {index}: {a} vs {b}")]
    Misaligned { index: usize, a: String, b: String },
    #[error("paired arms have {a} and {b} samples")]
    LengthMismatch { a: usize, b: usize },
    #[error("paired t-test needs at least 2 samples, got {0}")]
    TooFew(usize),
    #[error("results reference unknown method '{0}'")]
    UnknownMethod(String),
}

/// Mean with a t-based 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub n: usize,
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Set when n == 1 and the interval collapses to the mean.
    pub degenerate: bool,
}

fn all_equal(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[0] == w[1])
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if all_equal(values) {
        return (values[0], 0.0);
    }
    let mean = values.iter().sum::<f64>() / n;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

/// mean ± t(0.975, n-1) · s / √n with the sample standard deviation s.
pub fn aggregate(values: &[f64]) -> Result<Aggregate, StatsError> {
    match values.len() {
        0 => Err(StatsError::Empty),
        1 => Ok(Aggregate {
            n: 1,
            mean: values[0],
            ci_low: values[0],
            ci_high: values[0],
            degenerate: true,
        }),
        n => {
            let (mean, sd) = mean_sd(values);
            let half = if sd == 0.0 {
                0.0
            } else {
                tdist::t_quantile(0.975, (n - 1) as f64) * sd / (n as f64).sqrt()
            };
            Ok(Aggregate {
                n,
                mean,
                ci_low: mean - half,
                ci_high: mean + half,
                degenerate: false,
            })
        }
    }
}

/// Paired t-test result on `a - b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub n: usize,
    pub mean_diff: f64,
    /// Infinite (serialized as null) for degenerate nonzero differences.
    pub t: f64,
    pub df: f64,
    pub p: f64,
    /// Differences have no spread beyond rounding.
    pub degenerate: bool,
}

/// Student paired t-test, two-sided. Arms are aligned by key.
///
/// All-zero differences give t = 0, p = 1. Differences that are equal up to
/// floating-point rounding but nonzero give p = 0 and set `degenerate`.
pub fn paired_t_test<K: PartialEq + Debug>(a: &[(K, f64)], b: &[(K, f64)]) -> Result<TTest, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch { a: a.len(), b: b.len() });
    }
    for (index, (x, y)) in a.iter().zip(b).enumerate() {
        if x.0 != y.0 {
            return Err(StatsError::Misaligned {
                index,
                a: format!("{:?}", x.0),
                b: format!("{:?}", y.0),
            });
        }
    }
    let n = a.len();
    if n < 2 {
        return Err(StatsError::TooFew(n));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x.1 - y.1).collect();
    let df = (n - 1) as f64;
    let scale = diffs.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    if scale == 0.0 {
        return Ok(TTest {
            n,
            mean_diff: 0.0,
            t: 0.0,
            df,
            p: 1.0,
            degenerate: false,
        });
    }
    let (mean, sd) = mean_sd(&diffs);
    // spread this small is rounding noise from forming the differences
    if sd <= 64.0 * f64::EPSILON * scale {
        let t = if mean == 0.0 { 0.0 } else { f64::INFINITY.copysign(mean) };
        let p = if mean == 0.0 { 1.0 } else { 0.0 };
        return Ok(TTest {
            n,
            mean_diff: mean,
            t,
            df,
            p,
            degenerate: mean != 0.0,
        });
    }
    let t = mean / (sd / (n as f64).sqrt());
    Ok(TTest {
        n,
        mean_diff: mean,
        t,
        df,
        p: tdist::two_sided_p(t, df),
        degenerate: false,
    })
}

/// One `results.csv` row: a sample evaluated by one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sample_id: String,
    pub dataset: String,
    pub method: String,
    /// Absent when the sample has no ground truth.
    pub dice: Option<f64>,
    pub grounding_miss: bool,
    pub backend_error: bool,
    pub boxes: usize,
    pub prompt: String,
    pub error: String,
}

pub fn write_results_csv(rows: &[ResultRow], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(input: impl Read) -> Result<Vec<ResultRow>, csv::Error> {
    csv::Reader::from_reader(input).deserialize().collect()
}

/// Identity of a method column in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodInfo {
    pub label: String,
    pub kind: MethodKind,
    pub selection: SelectionPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub label: String,
    pub kind: MethodKind,
    pub selection: SelectionPolicy,
    pub per_dataset: BTreeMap<String, Aggregate>,
    /// Every evaluated sample weighted equally; the headline number.
    pub pooled: Option<Aggregate>,
    /// Datasets weighted equally: aggregate of the per-dataset means.
    #[serde(rename = "macro")]
    pub macro_avg: Option<Aggregate>,
    pub samples: usize,
    pub without_gt: usize,
    pub grounding_misses: usize,
    pub backend_errors: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub method_a: String,
    pub method_b: String,
    pub paired: bool,
    #[serde(flatten)]
    pub test: TTest,
}

/// Aggregates rows of a single method.
pub fn aggregate_rows(rows: &[ResultRow]) -> Result<Aggregate, StatsError> {
    if let Some(first) = rows.first() {
        if let Some(other) = rows.iter().find(|r| r.method != first.method) {
            return Err(StatsError::MixedMethods(first.method.clone(), other.method.clone()));
        }
    }
    let values: Vec<f64> = rows.iter().filter_map(|r| r.dice).collect();
    aggregate(&values)
}

/// Per-method reports in `methods` order plus paired tests for every pair
/// (i < j) on the pooled samples both methods scored.
pub fn build_reports(
    methods: &[MethodInfo],
    rows: &[ResultRow],
) -> Result<(Vec<MethodReport>, Vec<PairwiseTest>), StatsError> {
    let mut by_method: BTreeMap<&str, Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        if !methods.iter().any(|m| m.label == r.method) {
            return Err(StatsError::UnknownMethod(r.method.clone()));
        }
        by_method.entry(r.method.as_str()).or_default().push(r);
    }

    let mut reports = Vec::with_capacity(methods.len());
    let mut scored: Vec<Vec<((String, String), f64)>> = Vec::with_capacity(methods.len());
    for m in methods {
        let mine = by_method.remove(m.label.as_str()).unwrap_or_default();
        let mut per_ds: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut keyed = Vec::new();
        for r in &mine {
            if let Some(d) = r.dice {
                per_ds.entry(r.dataset.clone()).or_default().push(d);
                keyed.push(((r.dataset.clone(), r.sample_id.clone()), d));
            }
        }
        keyed.sort_by(|x, y| x.0.cmp(&y.0));
        let per_dataset: BTreeMap<String, Aggregate> = per_ds
            .iter()
            .map(|(k, v)| Ok((k.clone(), aggregate(v)?)))
            .collect::<Result<_, StatsError>>()?;
        let pooled_values: Vec<f64> = keyed.iter().map(|x| x.1).collect();
        let means: Vec<f64> = per_dataset.values().map(|a| a.mean).collect();
        reports.push(MethodReport {
            label: m.label.clone(),
            kind: m.kind,
            selection: m.selection,
            pooled: aggregate(&pooled_values).ok(),
            macro_avg: aggregate(&means).ok(),
            per_dataset,
            samples: mine.len(),
            without_gt: mine.iter().filter(|r| r.dice.is_none()).count(),
            grounding_misses: mine.iter().filter(|r| r.grounding_miss).count(),
            backend_errors: mine.iter().filter(|r| r.backend_error).count(),
        });
        scored.push(keyed);
    }

    let mut tests = Vec::new();
    for i in 0..methods.len() {
        for j in i + 1..methods.len() {
            match paired_t_test(&scored[i], &scored[j]) {
                Ok(test) => tests.push(PairwiseTest {
                    method_a: methods[i].label.clone(),
                    method_b: methods[j].label.clone(),
                    paired: true,
                    test,
                }),
                Err(e) => tracing::warn!(
                    a = %methods[i].label,
                    b = %methods[j].label,
                    "skipping paired test: {e}"
                ),
            }
        }
    }
    Ok((reports, tests))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }

    fn keyed(v: &[f64]) -> Vec<(usize, f64)> {
        v.iter().copied().enumerate().collect()
    }

    #[test]
    fn ci_matches_reference() {
        // scipy: mean ± t.ppf(0.975, 3) · std(ddof=1) / 2
        let a = aggregate(&[0.2, 0.4, 0.6, 0.8]).unwrap();
        assert!(rel(a.mean, 0.5) < 1e-15);
        assert!(rel(a.ci_low, 0.08914794864782422) < 1e-9, "{}", a.ci_low);
        assert!(rel(a.ci_high, 0.9108520513521758) < 1e-9, "{}", a.ci_high);
        assert!(!a.degenerate);
    }

    #[test]
    fn zero_variance_and_single_value() {
        let a = aggregate(&[1.0; 10]).unwrap();
        assert_eq!((a.mean, a.ci_low, a.ci_high), (1.0, 1.0, 1.0));
        let a = aggregate(&[0.7; 10]).unwrap();
        assert_eq!(a.ci_high - a.ci_low, 0.0);
        let a = aggregate(&[0.7]).unwrap();
        assert!(a.degenerate);
        assert_eq!((a.ci_low, a.mean, a.ci_high), (0.7, 0.7, 0.7));
        assert_eq!(aggregate(&[]), Err(StatsError::Empty));
    }

    #[test]
    fn t_test_matches_reference() {
        // scipy.stats.ttest_1samp([0.05, -0.02, 0.10, 0.03, 0.07], 0)
        let d = [0.05, -0.02, 0.10, 0.03, 0.07];
        let zeros = [0.0; 5];
        let r = paired_t_test(&keyed(&d), &keyed(&zeros)).unwrap();
        assert!(rel(r.t, 2.282941668133139) < 1e-9, "t = {}", r.t);
        assert_eq!(r.df, 4.0);
        assert!(rel(r.p, 0.08451194577806809) < 1e-9, "p = {}", r.p);
        assert!(!r.degenerate);
    }

    #[test]
    fn t_test_degenerate_rules() {
        let a = [0.3, 0.9, 0.5];
        let r = paired_t_test(&keyed(&a), &keyed(&a)).unwrap();
        assert_eq!((r.t, r.p, r.degenerate), (0.0, 1.0, false));

        let r = paired_t_test(&keyed(&[0.1, 0.1, 0.1]), &keyed(&[0.0; 3])).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
        assert_eq!(r.t, f64::INFINITY);

        // differences of 0.1 that are not bitwise equal after subtraction
        let r = paired_t_test(&keyed(&[0.6, 0.7, 0.8]), &keyed(&[0.5, 0.6, 0.7])).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.0);
    }

    #[test]
    fn t_test_errors() {
        assert_eq!(
            paired_t_test(&keyed(&[0.1]), &keyed(&[0.2])),
            Err(StatsError::TooFew(1))
        );
        assert!(matches!(
            paired_t_test(&[(1, 0.1), (2, 0.2)], &[(1, 0.1), (3, 0.2)]),
            Err(StatsError::Misaligned { index: 1, .. })
        ));
        assert!(matches!(
            paired_t_test(&keyed(&[0.1, 0.2]), &keyed(&[0.1])),
            Err(StatsError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn ci_width_follows_sqrt_law() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let mut width = |n: usize| {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..1.0)).collect();
            let a = aggregate(&v).unwrap();
            a.ci_high - a.ci_low
        };
        let (w16, w64, w256) = (width(16), width(64), width(256));
        // the t quantile also shrinks with n; expected ratios include it
        let q = |n: f64| tdist::t_quantile(0.975, n - 1.0);
        for (wa, wb, na, nb) in [(w16, w64, 16.0, 64.0), (w64, w256, 64.0, 256.0)] {
            let expected = (q(na) / q(nb)) * (nb / na).sqrt();
            let ratio = wa / wb;
            assert!((ratio / expected - 1.0).abs() < 0.2, "ratio {ratio} vs {expected}");
        }
    }

    #[test]
    fn mixed_methods_rejected() {
        let row = |m: &str| ResultRow {
            sample_id: "s".into(),
            dataset: "d".into(),
            method: m.into(),
            dice: Some(0.5),
            grounding_miss: false,
            backend_error: false,
            boxes: 1,
            prompt: String::new(),
            error: String::new(),
        };
        assert!(matches!(
            aggregate_rows(&[row("a"), row("b")]),
            Err(StatsError::MixedMethods(..))
        ));
        assert!(aggregate_rows(&[row("a"), row("a")]).is_ok());
    }

    #[test]
    fn results_csv_round_trip() {
        let rows = vec![
            ResultRow {
                sample_id: "s1".into(),
                dataset: "d".into(),
                method: "TV-SAM".into(),
                dice: Some(0.1 + 0.2),
                grounding_miss: false,
                backend_error: false,
                boxes: 3,
                prompt: "round, bright cell".into(),
                error: String::new(),
            },
            ResultRow {
                sample_id: "s2".into(),
                dataset: "d".into(),
                method: "GSAM".into(),
                dice: None,
                grounding_miss: true,
                backend_error: true,
                boxes: 0,
                prompt: String::new(),
                error: "timeout after 3 attempts".into(),
            },
        ];
        let mut buf = Vec::new();
        write_results_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_results_csv(buf.as_slice()).unwrap(), rows);
    }

    proptest! {
        #[test]
        fn identical_arms(v in proptest::collection::vec(0.0f64..=1.0, 2..30)) {
            let r = paired_t_test(&keyed(&v), &keyed(&v)).unwrap();
            prop_assert_eq!((r.t, r.p), (0.0, 1.0));
        }

        #[test]
        fn swap_negates_t(pairs in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 2..30)) {
            let a: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let ab = paired_t_test(&keyed(&a), &keyed(&b)).unwrap();
            let ba = paired_t_test(&keyed(&b), &keyed(&a)).unwrap();
            prop_assert_eq!(ab.t, -ba.t);
            prop_assert_eq!(ab.p, ba.p);
            prop_assert!((0.0..=1.0).contains(&ab.p));
        }

        #[test]
        fn shift_invariant(
            pairs in proptest::collection::vec((0u32..=64, 0u32..=64), 3..30),
            c in 0u32..=64,
        ) {
            // dyadic values keep the shifted differences exact
            let a: Vec<f64> = pairs.iter().map(|p| f64::from(p.0) / 128.0).collect();
            let b: Vec<f64> = pairs.iter().map(|p| f64::from(p.1) / 128.0).collect();
            let shift = f64::from(c) / 128.0;
            let a2: Vec<f64> = a.iter().map(|x| x + shift).collect();
            let b2: Vec<f64> = b.iter().map(|x| x + shift).collect();
            let r1 = paired_t_test(&keyed(&a), &keyed(&b)).unwrap();
            let r2 = paired_t_test(&keyed(&a2), &keyed(&b2)).unwrap();
            prop_assert_eq!(r1, r2);
        }

        #[test]
        fn ci_brackets_mean(v in proptest::collection::vec(0.0f64..=1.0, 1..40)) {
            let a = aggregate(&v).unwrap();
            prop_assert!(a.ci_low <= a.mean && a.mean <= a.ci_high);
            prop_assert_eq!(a.n, v.len());
        }
    }
}
