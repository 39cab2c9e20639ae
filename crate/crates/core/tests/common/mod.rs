#![allow(dead_code)]

use std::path::{Path, PathBuf};

use tvseg_core::config::{Overrides, RunConfig};
use tvseg_core::datasets::{generate_synthetic, SynthSpec};

pub const ALL_METHODS: &str = r#"
[[methods]]
kind = "tv_sam"

[[methods]]
kind = "gsam"

[[methods]]
kind = "sam_auto"

[[methods]]
kind = "sam_bbox"
"#;

pub const PERFECT_BACKENDS: &str = r#"
[backends.chat]
endpoint = "mock:scripted-chat"
[backends.detector]
endpoint = "mock:oracle-detector"
[backends.segmenter]
endpoint = "mock:oracle-segmenter"
[backends.auto]
endpoint = "mock:grid-auto"

[mocks.scripted_chat]
script = "data/chat_script.json"
"#;

/// Writes a synthetic dataset under `dir/data` and a config at
/// `dir/run.toml` made of the header plus `body`.
pub fn setup(dir: &Path, spec: &SynthSpec, body: &str) -> PathBuf {
    generate_synthetic(spec, &dir.join("data")).unwrap();
    let text = format!(
        "manifest = \"data/manifest.csv\"\noutput = \"out\"\nseed = {}\n{body}",
        spec.seed
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, text).unwrap();
    path
}

pub fn load(path: &Path) -> RunConfig {
    RunConfig::load(path, Overrides::default()).unwrap()
}
