//! The four comparison methods, per sample and over whole manifests.

mod artifacts;
mod run;

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::backends::{
    chat_describe, segment_auto, BackendError, ChatBackend, DetectorBackend, ImagePayload, ScoredMaskCandidate,
    SegmenterBackend,
};
use crate::datasets::Sample;
use crate::geom::{dice, mask_to_bbox, BinaryMask, BoxSet};
use crate::grounding::{ground_concept, select_top_k};
use crate::methods::{MethodKind, MethodSpec};
use crate::prompting::{parse_attributes, AttributeSet, ConceptQuery, DescriptivePrompt, TemplateRegistry};
use crate::segmenting::{restrict_to_top_k, segment_candidates, select_mask};

pub use artifacts::{render_run_dir, write_run_dir, EnvStamp, RunRecord, RESULTS_CSV, RUN_JSON};
pub use run::{run_benchmark, topk_sweep, RunError, RunOptions, RunOutcome, Skipped};

/// Connected backends by role. Roles a method does not need may be absent.
#[derive(Debug, Clone, Default)]
pub struct Backends {
    pub chat: Option<ChatBackend>,
    pub detector: Option<DetectorBackend>,
    pub segmenter: Option<SegmenterBackend>,
    /// Segmenter for automatic mode; the box segmenter is used when absent.
    pub auto: Option<SegmenterBackend>,
}

fn missing(role: &str) -> Failure {
    Failure::Precondition(format!("no {role} backend configured"))
}

impl Backends {
    fn chat(&self) -> Result<&ChatBackend, Failure> {
        self.chat.as_ref().ok_or_else(|| missing("chat"))
    }
    fn detector(&self) -> Result<&DetectorBackend, Failure> {
        self.detector.as_ref().ok_or_else(|| missing("detector"))
    }
    fn segmenter(&self) -> Result<&SegmenterBackend, Failure> {
        self.segmenter.as_ref().ok_or_else(|| missing("segmenter"))
    }
    fn auto(&self) -> Result<&SegmenterBackend, Failure> {
        self.auto
            .as_ref()
            .or(self.segmenter.as_ref())
            .ok_or_else(|| missing("auto segmenter"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    concept: String,
    modality: String,
    dialog: String,
    prompt: String,
    backend: String,
}

/// Backends plus prompt templates; shared read-only across workers.
#[derive(Debug, Default)]
pub struct Pipeline {
    pub backends: Backends,
    pub templates: TemplateRegistry,
    prompt_cache: Option<HashMap<CacheKey, Result<DescriptivePrompt, Failure>>>,
}

impl Pipeline {
    pub fn new(backends: Backends, templates: TemplateRegistry) -> Self {
        Pipeline {
            backends,
            templates,
            prompt_cache: None,
        }
    }

    fn cache_key(&self, sample: &Sample, spec: &MethodSpec) -> CacheKey {
        let r = spec.resolved();
        CacheKey {
            concept: sample.concept.clone(),
            modality: sample.modality.clone(),
            dialog: r.dialog_template.unwrap_or_default(),
            prompt: r.prompt_template.unwrap_or_default(),
            backend: self
                .backends
                .chat
                .as_ref()
                .map(|c| c.id().to_string())
                .unwrap_or_default(),
        }
    }
}

/// A sample with its decoded image and mask.
#[derive(Debug, Clone)]
pub struct LoadedSample<'a> {
    pub sample: &'a Sample,
    pub image: ImagePayload,
    pub gt: Option<BinaryMask>,
}

/// Wall-clock milliseconds per stage. Never feeds into any other output.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub chat_ms: f64,
    pub detect_ms: f64,
    pub segment_ms: f64,
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1000.0
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    pub sample_id: String,
    pub dataset: String,
    pub method: String,
    pub kind: MethodKind,
    /// Present exactly when the sample has ground truth.
    pub dice: Option<f64>,
    /// Chosen mask; `None` is an empty prediction.
    pub mask: Option<BinaryMask>,
    pub prompt: Option<String>,
    pub boxes: BoxSet,
    pub timings: StageTimings,
    pub grounding_miss: bool,
    pub backend_error: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
enum Failure {
    Backend(BackendError),
    Precondition(String),
}

impl From<BackendError> for Failure {
    fn from(e: BackendError) -> Self {
        Failure::Backend(e)
    }
}

fn pre<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Precondition(e.to_string())
}

impl SampleResult {
    fn start(s: &LoadedSample<'_>, spec: &MethodSpec) -> Self {
        SampleResult {
            sample_id: s.sample.sample_id.clone(),
            dataset: s.sample.dataset.clone(),
            method: spec.label().to_string(),
            kind: spec.kind,
            dice: None,
            mask: None,
            prompt: None,
            boxes: BoxSet::default(),
            timings: StageTimings::default(),
            grounding_miss: false,
            backend_error: false,
            error: None,
        }
    }

    /// Records the outcome and scores the prediction against the ground truth.
    fn finish(mut self, s: &LoadedSample<'_>, outcome: Result<Option<BinaryMask>, Failure>) -> Self {
        match outcome {
            Ok(mask) => self.mask = mask,
            Err(Failure::Backend(e)) => {
                self.backend_error = true;
                self.error = Some(e.to_string());
                self.mask = None;
            }
            Err(Failure::Precondition(msg)) => {
                self.error = Some(msg);
                self.mask = None;
            }
        }
        if let Some(gt) = &s.gt {
            let empty;
            let pred = match &self.mask {
                Some(m) => m,
                None => {
                    empty = BinaryMask::new(gt.width(), gt.height()).expect("gt has valid shape");
                    &empty
                }
            };
            self.dice = Some(dice(pred, gt).unwrap_or(0.0));
        }
        self
    }
}

fn choose(
    candidates: &[ScoredMaskCandidate],
    spec: &MethodSpec,
    gt: Option<&BinaryMask>,
) -> Result<Option<BinaryMask>, Failure> {
    if candidates.is_empty() {
        return Ok(None);
    }
    let i = select_mask(candidates, spec.selection, gt).map_err(pre)?;
    Ok(Some(candidates[i].mask.clone()))
}

/// Stage 1: dialog, chat reply, attributes, rendered phrase.
fn describe(s: &LoadedSample<'_>, p: &Pipeline, spec: &MethodSpec) -> Result<DescriptivePrompt, Failure> {
    if let Some(cache) = &p.prompt_cache {
        if let Some(hit) = cache.get(&p.cache_key(s.sample, spec)) {
            return hit.clone();
        }
    }
    let r = spec.resolved();
    let dialog_id = r.dialog_template.as_deref().unwrap_or_default();
    let prompt_id = r.prompt_template.as_deref().unwrap_or_default();
    let query = ConceptQuery::new(&s.sample.concept, &s.sample.modality).map_err(pre)?;
    let dialog = p.templates.build_dialog(&query, dialog_id).map_err(pre)?;
    let reply = chat_describe(p.backends.chat()?, &s.image, &dialog)?;
    p.templates
        .render_prompt(&parse_attributes(&reply), &query, prompt_id)
        .map_err(pre)
}

/// Candidate pool for the first `k` filtered boxes (Stages 2 and 3).
fn grounded_pool(
    s: &LoadedSample<'_>,
    p: &Pipeline,
    spec: &MethodSpec,
    prompt: &DescriptivePrompt,
    k: usize,
    res: &mut SampleResult,
) -> Result<Vec<ScoredMaskCandidate>, Failure> {
    let t = Instant::now();
    let grounding = ground_concept(&s.image, prompt, p.backends.detector()?, &spec.grounding_config());
    res.timings.detect_ms = ms_since(t);
    let boxes = select_top_k(&grounding?.boxes, k.max(1));
    res.boxes = boxes.clone();
    if boxes.is_empty() {
        res.grounding_miss = true;
        return Ok(Vec::new());
    }
    let t = Instant::now();
    let pool = segment_candidates(&s.image, &boxes, p.backends.segmenter()?);
    res.timings.segment_ms = ms_since(t);
    Ok(pool?)
}

fn text_prompt(
    s: &LoadedSample<'_>,
    p: &Pipeline,
    spec: &MethodSpec,
    res: &mut SampleResult,
) -> Result<DescriptivePrompt, Failure> {
    match spec.kind {
        MethodKind::TvSam => {
            let t = Instant::now();
            let out = describe(s, p, spec);
            res.timings.chat_ms = ms_since(t);
            let prompt = out?;
            res.prompt = Some(prompt.text.clone());
            Ok(prompt)
        }
        MethodKind::Gsam => {
            let concept = s.sample.concept.trim().to_string();
            res.prompt = Some(concept.clone());
            Ok(DescriptivePrompt {
                text: concept,
                attributes: AttributeSet::default(),
                template_id: "bare-concept".into(),
            })
        }
        other => Err(Failure::Precondition(format!(
            "{} does not use text prompts",
            other.name()
        ))),
    }
}

fn check_kind(spec: &MethodSpec, kinds: &[MethodKind]) {
    assert!(
        kinds.contains(&spec.kind),
        "method {} passed to the wrong runner",
        spec.kind.name()
    );
}

/// Chat description, grounding, TOP-k box prompts, selection.
pub fn run_tvsam(s: &LoadedSample<'_>, p: &Pipeline, spec: &MethodSpec) -> SampleResult {
    check_kind(spec, &[MethodKind::TvSam]);
    run_grounded(s, p, spec)
}

/// As [`run_tvsam`] with the bare concept name as the phrase; no chat call.
pub fn run_gsam(s: &LoadedSample<'_>, p: &Pipeline, spec: &MethodSpec) -> SampleResult {
    check_kind(spec, &[MethodKind::Gsam]);
    run_grounded(s, p, spec)
}

fn run_grounded(s: &LoadedSample<'_>, p: &Pipeline, spec: &MethodSpec) -> SampleResult {
    let mut res = SampleResult::start(s, spec);
    let outcome = (|| {
        let prompt = text_prompt(s, p, spec, &mut res)?;
        let pool = grounded_pool(s, p, spec, &prompt, spec.grounding_config().top_k, &mut res)?;
        choose(&pool, spec, s.gt.as_ref())
    })();
    res.finish(s, outcome)
}

/// Unprompted segmentation, then selection over everything returned.
pub fn run_sam_auto(s: &LoadedSample<'_>, p: &Pipeline, spec: &MethodSpec) -> SampleResult {
    check_kind(spec, &[MethodKind::SamAuto]);
    let mut res = SampleResult::start(s, spec);
    let outcome = (|| {
        let t = Instant::now();
        let pool = segment_auto(p.backends.auto()?, &s.image);
        res.timings.segment_ms = ms_since(t);
        choose(&pool?, spec, s.gt.as_ref())
    })();
    res.finish(s, outcome)
}

/// Box prompts derived from the ground-truth mask.
pub fn run_sam_bbox(s: &LoadedSample<'_>, p: &Pipeline, spec: &MethodSpec) -> SampleResult {
    check_kind(spec, &[MethodKind::SamBbox]);
    let mut res = SampleResult::start(s, spec);
    let outcome = (|| {
        let gt =
            s.gt.as_ref()
                .ok_or_else(|| Failure::Precondition("sam_bbox needs a ground-truth mask".into()))?;
        let boxes = mask_to_bbox(gt, spec.gold_box_mode.unwrap_or_default()).map_err(pre)?;
        res.boxes = boxes.clone();
        let t = Instant::now();
        let pool = segment_candidates(&s.image, &boxes, p.backends.segmenter()?);
        res.timings.segment_ms = ms_since(t);
        choose(&pool?, spec, Some(gt))
    })();
    res.finish(s, outcome)
}

pub fn run_method(s: &LoadedSample<'_>, p: &Pipeline, spec: &MethodSpec) -> SampleResult {
    match spec.kind {
        MethodKind::TvSam => run_tvsam(s, p, spec),
        MethodKind::Gsam => run_gsam(s, p, spec),
        MethodKind::SamAuto => run_sam_auto(s, p, spec),
        MethodKind::SamBbox => run_sam_bbox(s, p, spec),
    }
}

/// One TOP-k sweep evaluation: the pool for the largest k is built once and
/// each row selects from its prefix. Row labels are `TOP-k`.
pub fn sweep_sample(s: &LoadedSample<'_>, p: &Pipeline, spec: &MethodSpec, ks: &[usize]) -> Vec<SampleResult> {
    check_kind(spec, &[MethodKind::TvSam, MethodKind::Gsam]);
    let k_max = ks.iter().copied().max().unwrap_or(1);
    let mut base = SampleResult::start(s, spec);
    let pool = (|| {
        let prompt = text_prompt(s, p, spec, &mut base)?;
        grounded_pool(s, p, spec, &prompt, k_max, &mut base)
    })();
    ks.iter()
        .map(|&k| {
            let mut res = base.clone();
            res.method = topk_label(k);
            res.boxes = base.boxes.prefix(k);
            let outcome = match &pool {
                Ok(pool) => choose(&restrict_to_top_k(pool, k), spec, s.gt.as_ref()),
                Err(f) => Err(f.clone()),
            };
            res.finish(s, outcome)
        })
        .collect()
}

pub fn topk_label(k: usize) -> String {
    format!("TOP-{k}")
}

impl Pipeline {
    /// Fills the prompt cache from the first loadable sample of every
    /// (concept, modality, templates, chat backend) combination, in manifest
    /// order, so cached runs stay deterministic under any worker count.
    pub fn warm_prompt_cache<'a>(
        &mut self,
        samples: impl IntoIterator<Item = &'a Sample>,
        specs: &[MethodSpec],
        load: impl Fn(&'a Sample) -> Option<LoadedSample<'a>>,
    ) {
        let mut cache = HashMap::new();
        for sample in samples {
            for spec in specs.iter().filter(|m| m.kind == MethodKind::TvSam) {
                let key = self.cache_key(sample, spec);
                if cache.contains_key(&key) {
                    continue;
                }
                let Some(loaded) = load(sample) else { break };
                cache.insert(key, describe(&loaded, self, spec));
            }
        }
        self.prompt_cache = Some(cache);
    }
}
