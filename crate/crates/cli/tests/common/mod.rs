//! Helpers shared by the binary-level test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use thermal_pinn::experiments::{ExperimentConfig, InputSource, Preset};
use thermal_pinn::pinn::{CollocationSize, SchemeConfig};
use thermal_pinn::timeseries::SyntheticProfileConfig;

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_thermal-pinn"))
}

pub fn tiny_config(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(Preset::Desk);
    cfg.input = InputSource::Synthetic {
        days: 1,
        dt: 240.0,
        profile: SyntheticProfileConfig::default(),
        seed: 3,
    };
    cfg.iec.dt = 240.0;
    cfg.grid.nx = 11;
    cfg.train.widths = vec![2, 8, 8, 3];
    cfg.train.iterations = 30;
    cfg.train.collocation = CollocationSize::Count(200);
    cfg.train.data_batch = 64;
    cfg.train.collocation_batch = 64;
    cfg.train.log_every = 10;
    cfg.train.n_initial = 8;
    cfg.compare.schemes = vec![SchemeConfig::vanilla(), SchemeConfig::rba()];
    cfg.compare.seeds = vec![0, 1];
    cfg.sweep.hidden_layers = vec![1];
    cfg.sweep.neurons = vec![4, 6];
    cfg.sweep.boundary_fractions = vec![0.5];
    cfg.sweep.collocation_multiples = vec![0.5];
    cfg.sweep.repeats = 2;
    cfg.sweep.iterations = 10;
    cfg.ensemble_m = 2;
    cfg.out_dir = out.to_path_buf();
    cfg.workers = 2;
    cfg
}

pub fn write_config(dir: &Path, cfg: &ExperimentConfig) -> PathBuf {
    let path = dir.join("config.json");
    fs::write(&path, cfg.to_json().unwrap()).unwrap();
    path
}

pub fn run(args: &[&str], config: &Path) -> Output {
    let out = bin().args(args).arg("--config").arg(config).output().unwrap();
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Every file under `dir` except the volatile timing records.
pub fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "timing.json" {
                files.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    files
}
