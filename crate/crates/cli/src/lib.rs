//! `tvseg` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 no evaluable
//! samples, 3 runtime failure (I/O, socket, backend failure under `stage`).

mod serve;

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};

use tvseg_core::config::{Overrides, RunConfig};
use tvseg_core::datasets::{generate_synthetic, load_sample, SynthSpec};
use tvseg_core::evalstats::{MethodInfo, ReportKind};
use tvseg_core::geom::{rle_encode, BinaryMask};
use tvseg_core::methods::{MethodKind, MethodSpec};
use tvseg_core::pipeline::{
    render_run_dir, run_benchmark, run_method, topk_label, topk_sweep, write_run_dir, EnvStamp, LoadedSample, RunError,
    RunOptions, RunOutcome, RunRecord,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_CONFIG: u8 = 1;
pub const EXIT_NO_SAMPLES: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

/// Default TOP-k grid for `sweep`.
const DEFAULT_KS: [usize; 5] = [1, 2, 3, 5, 10];

#[derive(Debug, Parser)]
#[command(
    name = "tvseg",
    version,
    about = "Zero-shot segmentation pipeline and benchmark harness"
)]
pub struct Cli {
    /// More log output (-v debug, -vv trace). TVSEG_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// Only warnings and errors.
    #[arg(short, long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate every configured method on the manifest.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        /// Output directory, overriding the config.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Print one stage's output for a single sample.
    Stage {
        stage: StageKind,
        #[arg(long)]
        config: PathBuf,
        /// Sample id, or `dataset/sample_id` when ids repeat across datasets.
        #[arg(long)]
        sample: String,
        /// Method label; the first tv_sam method by default.
        #[arg(long)]
        method: Option<String>,
    },
    /// Host the configured mocks behind the tvseg/1 protocol.
    MockServe {
        #[arg(long)]
        config: PathBuf,
        /// 0 picks a free port.
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// TOP-k sweep for one grounded method.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',')]
        ks: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Re-render reports from a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Write a synthetic dataset with a scripted chat file.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        shapes: u32,
        #[arg(long, default_value_t = 64)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
        #[arg(long, default_value_t = 10)]
        noise: u8,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageKind {
    Prompt,
    Ground,
    Segment,
}

/// An error paired with the exit code it maps to.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: anyhow::Error,
}

impl Failure {
    fn config(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error: error.into(),
        }
    }

    fn runtime(error: impl Into<anyhow::Error>) -> Self {
        Failure {
            code: EXIT_RUNTIME,
            error: error.into(),
        }
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = match e {
            RunError::NoEvaluableSamples { .. } => EXIT_NO_SAMPLES,
            RunError::Invalid(_) => EXIT_CONFIG,
            RunError::Pool(_) => EXIT_RUNTIME,
        };
        Failure { code, error: e.into() }
    }
}

pub fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            seed,
            jobs,
            output,
        } => cmd_run(&config, Overrides { seed, jobs }, output),
        Command::Stage {
            stage,
            config,
            sample,
            method,
        } => cmd_stage(stage, &config, &sample, method.as_deref()),
        Command::MockServe { config, port, host } => serve::cmd_mock_serve(&config, &host, port),
        Command::Sweep {
            config,
            ks,
            seed,
            jobs,
            output,
        } => cmd_sweep(&config, ks, Overrides { seed, jobs }, output),
        Command::Report { run } => {
            render_run_dir(&run).map_err(Failure::config)?;
            tracing::info!("re-rendered reports in {}", run.display());
            Ok(())
        }
        Command::Synth {
            out,
            n,
            seed,
            shapes,
            width,
            height,
            noise,
        } => {
            let spec = SynthSpec {
                n,
                seed,
                shapes,
                width,
                height,
                noise,
                ..Default::default()
            };
            let manifest = generate_synthetic(&spec, &out).map_err(Failure::config)?;
            tracing::info!("wrote {n} samples; manifest at {}", manifest.display());
            Ok(())
        }
    }
}

fn load_config(path: &Path, overrides: Overrides, output: Option<PathBuf>) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(path, overrides).map_err(Failure::config)?;
    if let Some(out) = output {
        cfg.output = out;
    }
    Ok(cfg)
}

fn finish(cfg: &RunConfig, record: RunRecord, outcome: &RunOutcome) -> Result<(), Failure> {
    let report = write_run_dir(&cfg.output, &record, outcome, cfg.dump_masks)
        .with_context(|| format!("writing {}", cfg.output.display()))
        .map_err(Failure::runtime)?;
    for m in &report.methods {
        if let Some(p) = &m.pooled {
            tracing::info!(method = %m.label, n = p.n, "mean Dice {:.3} [{:.3}, {:.3}]", p.mean, p.ci_low, p.ci_high);
        }
    }
    if !outcome.skipped.is_empty() {
        tracing::warn!("{} sample(s) skipped", outcome.skipped.len());
    }
    tracing::info!("report written to {}", cfg.output.join("report.md").display());
    Ok(())
}

fn cmd_run(path: &Path, overrides: Overrides, output: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load_config(path, overrides, output)?;
    let mut prepared = cfg.prepare().map_err(Failure::config)?;
    let opts = RunOptions {
        jobs: cfg.jobs,
        prompt_cache: cfg.prompt_cache,
    };
    let outcome = run_benchmark(&prepared.manifest, &cfg.methods, &mut prepared.pipeline, &opts)?;
    let record = RunRecord {
        kind: ReportKind::Benchmark,
        seed: cfg.seed,
        methods: cfg.method_infos(),
        ks: None,
        evaluated: outcome.evaluated,
        skipped: outcome.skipped.clone(),
        config: cfg.to_json(),
        environment: EnvStamp::current(),
    };
    finish(&cfg, record, &outcome)
}

fn cmd_sweep(
    path: &Path,
    ks: Option<Vec<usize>>,
    overrides: Overrides,
    output: Option<PathBuf>,
) -> Result<(), Failure> {
    let cfg = load_config(path, overrides, output)?;
    let ks = ks
        .or_else(|| cfg.sweep.as_ref().map(|s| s.ks.clone()))
        .unwrap_or_else(|| DEFAULT_KS.to_vec());
    let spec = cfg
        .sweep_method(cfg.sweep.as_ref().and_then(|s| s.method.as_deref()))
        .map_err(Failure::config)?
        .clone();
    let mut prepared = cfg.prepare().map_err(Failure::config)?;
    let opts = RunOptions {
        jobs: cfg.jobs,
        prompt_cache: cfg.prompt_cache,
    };
    let outcome = topk_sweep(&prepared.manifest, &spec, &ks, &mut prepared.pipeline, &opts)?;
    let methods = ks
        .iter()
        .map(|&k| MethodInfo {
            label: topk_label(k),
            kind: spec.kind,
            selection: spec.selection,
        })
        .collect();
    let record = RunRecord {
        kind: ReportKind::Sweep,
        seed: cfg.seed,
        methods,
        ks: Some(ks),
        evaluated: outcome.evaluated,
        skipped: outcome.skipped.clone(),
        config: cfg.to_json(),
        environment: EnvStamp::current(),
    };
    finish(&cfg, record, &outcome)
}

fn stage_method<'a>(cfg: &'a RunConfig, label: Option<&str>, stage: StageKind) -> Result<&'a MethodSpec, Failure> {
    let found = match label {
        Some(l) => cfg.methods.iter().find(|m| m.label() == l),
        None => cfg
            .methods
            .iter()
            .find(|m| m.kind == MethodKind::TvSam)
            .or_else(|| cfg.methods.first()),
    };
    let m =
        found.ok_or_else(|| Failure::config(anyhow!("method '{}' is not configured", label.unwrap_or("tv_sam"))))?;
    if stage != StageKind::Segment && !m.kind.uses_grounding() {
        return Err(Failure::config(anyhow!(
            "method '{}' has no {stage:?} stage",
            m.label()
        )));
    }
    Ok(m)
}

fn cmd_stage(stage: StageKind, path: &Path, sample_id: &str, method: Option<&str>) -> Result<(), Failure> {
    let cfg = load_config(path, Overrides::default(), None)?;
    let spec = stage_method(&cfg, method, stage)?;
    let prepared = cfg.prepare().map_err(Failure::config)?;
    let sample = prepared
        .manifest
        .samples
        .iter()
        .find(|s| s.sample_id == sample_id || s.source_id() == sample_id)
        .ok_or_else(|| Failure::config(anyhow!("unknown sample '{sample_id}'")))?;
    let (image, gt) = load_sample(sample).map_err(Failure::config)?;
    let loaded = LoadedSample { sample, image, gt };
    let res = run_method(&loaded, &prepared.pipeline, spec);

    let failed = |what: &str| {
        Failure::runtime(anyhow!(
            "{what} failed: {}",
            res.error.as_deref().unwrap_or("no output")
        ))
    };
    let line = match stage {
        StageKind::Prompt => res.prompt.clone().ok_or_else(|| failed("prompt stage"))?,
        StageKind::Ground => {
            if res.boxes.is_empty() && !res.grounding_miss {
                return Err(failed("grounding"));
            }
            serde_json::to_string(&res.boxes).map_err(Failure::runtime)?
        }
        StageKind::Segment => {
            if res.error.is_some() {
                return Err(failed("segmentation"));
            }
            let mask = match &res.mask {
                Some(m) => m.clone(),
                None => BinaryMask::new(loaded.image.width(), loaded.image.height()).map_err(Failure::runtime)?,
            };
            let rle = rle_encode(&mask);
            if let Some(d) = res.dice {
                tracing::info!("Dice against ground truth: {d:.4}");
            }
            serde_json::json!({ "w": rle.width, "h": rle.height, "runs": rle.runs }).to_string()
        }
    };
    if res.grounding_miss {
        tracing::warn!("detector returned no boxes above threshold");
    }
    println!("{line}");
    Ok(())
}
