#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use tvseg_core::datasets::{generate_synthetic, SynthSpec};

pub const MOCK_BACKENDS: &str = r#"
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

/// Distractors, jitter, score noise and a pixel-threshold segmenter: every
/// stage has something to get wrong.
pub const NOISY_BACKENDS: &str = r#"
[backends.chat]
endpoint = "mock:scripted-chat"
[backends.detector]
endpoint = "mock:oracle-detector"
[backends.segmenter]
endpoint = "mock:threshold-segmenter"
[backends.auto]
endpoint = "mock:grid-auto"

[mocks.scripted_chat]
script = "data/chat_script.json"
[mocks.oracle_detector]
jitter = 3.0
distractors = 5
score_noise = 0.4
prompt_sensitivity = 4.0
"#;

pub const ALL_METHODS: &str = r#"
[[methods]]
kind = "tv_sam"
grounding = { nms_iou_threshold = 0.5, confidence_threshold = 0.05, top_k = 10 }
[[methods]]
kind = "gsam"
[[methods]]
kind = "sam_auto"
[[methods]]
kind = "sam_bbox"
"#;

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tvseg")
}

/// Generates a synthetic dataset into `dir/data` and writes `dir/<name>`.
pub fn setup(dir: &Path, spec: &SynthSpec, name: &str, body: &str) -> PathBuf {
    if !dir.join("data/manifest.csv").exists() {
        generate_synthetic(spec, &dir.join("data")).unwrap();
    }
    write_config(dir, name, spec.seed, body)
}

pub fn write_config(dir: &Path, name: &str, seed: u64, body: &str) -> PathBuf {
    let text = format!("manifest = \"data/manifest.csv\"\noutput = \"out\"\nseed = {seed}\n{body}");
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

pub fn tvseg(args: &[&str]) -> Output {
    Command::new(bin()).arg("-q").args(args).output().unwrap()
}

pub fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// A running `mock-serve` child, interrupted on drop.
pub struct Server {
    pub child: Child,
    pub addr: String,
}

impl Server {
    pub fn start(config: &Path) -> Server {
        let mut child = Command::new(bin())
            .args(["-q", "mock-serve", "--port", "0", "--config"])
            .arg(config)
            .stderr(Stdio::piped())
            .stdout(Stdio::null())
            .spawn()
            .unwrap();
        let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
        let addr = loop {
            let line = lines.next().expect("server exited before listening").unwrap();
            if let Some(a) = line.strip_prefix("listening on ") {
                break a.trim().to_string();
            }
        };
        // keep draining so the child never blocks on a full pipe
        std::thread::spawn(move || lines.for_each(drop));
        Server { child, addr }
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Sends SIGINT and returns the exit status.
    pub fn interrupt(mut self) -> std::process::ExitStatus {
        self.stop()
    }

    fn stop(&mut self) -> std::process::ExitStatus {
        unsafe {
            libc::kill(self.child.id() as libc::pid_t, libc::SIGINT);
        }
        self.child.wait().unwrap()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if self.child.try_wait().ok().flatten().is_none() {
            self.stop();
        }
    }
}

/// Rewrites every mock endpoint to point at `url`.
pub fn remote_body(body: &str, url: &str) -> String {
    body.lines()
        .map(|l| match l.trim().strip_prefix("endpoint = \"mock:") {
            Some(_) => format!("endpoint = \"{url}\""),
            None => l.to_string(),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn read(dir: &Path, files: &[&str]) -> Vec<Vec<u8>> {
    files.iter().map(|f| std::fs::read(dir.join(f)).unwrap()).collect()
}
