#![allow(dead_code)]

use std::path::PathBuf;
use std::process::{Command, Output};

use finercam_cli::commands;
use finercam_core::eval::{SynthBenchmark, SynthSpec};
use tempfile::TempDir;

pub struct Fixture {
    pub dir: TempDir,
    pub manifest: PathBuf,
    pub head: PathBuf,
}

impl Fixture {
    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// A written synthetic benchmark with a trained head.
pub fn synth_fixture(spec: &SynthSpec) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    commands::synth(dir.path(), spec).unwrap();
    let manifest = dir.path().join("manifest.json");
    let head = dir.path().join("head.json");
    commands::train(&manifest, &head, &SynthBenchmark::train_config()).unwrap();
    Fixture { dir, manifest, head }
}

pub fn small_spec() -> SynthSpec {
    SynthSpec {
        num_train: 160,
        num_test: 16,
        ..SynthSpec::default()
    }
}

pub fn finercam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_finercam")).args(args).output().unwrap()
}

pub fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}
