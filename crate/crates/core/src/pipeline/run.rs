use serde::{Deserialize, Serialize};
use thiserror::Error;

use rayon::prelude::*;

use super::{run_method, sweep_sample, LoadedSample, Pipeline, SampleResult};
use crate::datasets::{load_sample, Manifest, Sample};
use crate::methods::{MethodKind, MethodSpec};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("no evaluable samples ({skipped} skipped)")]
    NoEvaluableSamples { skipped: usize },
    #[error("invalid run request: {0}")]
    Invalid(String),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Samples processed concurrently.
    pub jobs: usize,
    /// Whether to build the per-concept prompt cache first.
    pub prompt_cache: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            jobs: 1,
            prompt_cache: false,
        }
    }
}

/// A sample that could not be loaded; it contributes no results.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub sample_id: String,
    pub dataset: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Ordered by (dataset, sample_id), then method order.
    pub results: Vec<SampleResult>,
    pub skipped: Vec<Skipped>,
    pub evaluated: usize,
}

fn load(sample: &Sample) -> Result<LoadedSample<'_>, Skipped> {
    load_sample(sample)
        .map(|(image, gt)| LoadedSample { sample, image, gt })
        .map_err(|e| Skipped {
            sample_id: sample.sample_id.clone(),
            dataset: sample.dataset.clone(),
            reason: e.to_string(),
        })
}

/// Loads every sample once and applies `eval` to it on a bounded pool.
/// Output order never depends on scheduling.
fn fan_out<F>(manifest: &Manifest, jobs: usize, eval: F) -> Result<RunOutcome, RunError>
where
    F: Fn(&LoadedSample<'_>) -> Vec<SampleResult> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| RunError::Pool(e.to_string()))?;
    let mut per_sample: Vec<(&Sample, Result<Vec<SampleResult>, Skipped>)> = pool.install(|| {
        manifest
            .samples
            .par_iter()
            .map(|s| (s, load(s).map(|loaded| eval(&loaded))))
            .collect()
    });
    per_sample.sort_by(|a, b| (&a.0.dataset, &a.0.sample_id).cmp(&(&b.0.dataset, &b.0.sample_id)));

    let mut results = Vec::new();
    let mut skipped = Vec::new();
    let mut evaluated = 0;
    for (_, r) in per_sample {
        match r {
            Ok(rs) => {
                evaluated += 1;
                results.extend(rs);
            }
            Err(s) => {
                tracing::warn!(sample = %s.sample_id, "skipping sample: {}", s.reason);
                skipped.push(s);
            }
        }
    }
    if evaluated == 0 {
        return Err(RunError::NoEvaluableSamples { skipped: skipped.len() });
    }
    Ok(RunOutcome {
        results,
        skipped,
        evaluated,
    })
}

fn warm(pipeline: &mut Pipeline, manifest: &Manifest, methods: &[MethodSpec], opts: &RunOptions) {
    if opts.prompt_cache {
        pipeline.warm_prompt_cache(&manifest.samples, methods, |s| load(s).ok());
    }
}

/// Evaluates every (sample, method) pair. Per-sample failures are recorded
/// in the results; unloadable samples are skipped and counted.
pub fn run_benchmark(
    manifest: &Manifest,
    methods: &[MethodSpec],
    pipeline: &mut Pipeline,
    opts: &RunOptions,
) -> Result<RunOutcome, RunError> {
    if methods.is_empty() {
        return Err(RunError::Invalid("no methods to run".into()));
    }
    warm(pipeline, manifest, methods, opts);
    let pipeline = &*pipeline;
    fan_out(manifest, opts.jobs, |s| {
        methods.iter().map(|m| run_method(s, pipeline, m)).collect()
    })
}

/// TOP-k sweep for one grounded method: a single backend pass per sample,
/// one result row per k labelled `TOP-k`.
pub fn topk_sweep(
    manifest: &Manifest,
    spec: &MethodSpec,
    ks: &[usize],
    pipeline: &mut Pipeline,
    opts: &RunOptions,
) -> Result<RunOutcome, RunError> {
    if ks.is_empty() {
        return Err(RunError::Invalid("ks must not be empty".into()));
    }
    if ks.contains(&0) || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(RunError::Invalid(format!(
            "ks must be positive and strictly ascending, got {ks:?}"
        )));
    }
    if !matches!(spec.kind, MethodKind::TvSam | MethodKind::Gsam) {
        return Err(RunError::Invalid(format!("{} does not select boxes", spec.kind.name())));
    }
    warm(pipeline, manifest, std::slice::from_ref(spec), opts);
    let pipeline = &*pipeline;
    fan_out(manifest, opts.jobs, |s| sweep_sample(s, pipeline, spec, ks))
}
