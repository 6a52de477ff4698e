//! Configuration-driven experiment commands.
//!
//! Every command is a pure function of its configuration: re-running it
//! rewrites bit-identical artifacts. Wall times are the one exception and
//! always go to a separate `timing.json` next to the deterministic files.
//!
//! Output layout under `out_dir`:
//!
//! ```text
//! oracle/    field.csv field.bin meta.json
//! train/     model.bin loss_history.csv lambda.csv field.csv field.bin metrics.json timing.json
//! compare/   <scheme>/seed_<n>/{loss_history.csv,metrics.json} runs.csv summary.json timing.json
//! sweep/     cells.csv summary.json timing.json
//! ageing/    winding.* ageing_v.* lol.* spatial_max.csv report.json
//! uncertainty/ mean.* std.* runs.json timing.json
//! ```

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ageing::{ageing_field, compare_configurations, max_over_space, synthesize_fos, winding_field, PinnReadout, FOS_HEIGHTS};
use crate::error::{Error, Result};
use crate::iec::IecParams;
use crate::metrics::{ensemble_run, gamma2, max_abs_error, EnsembleReport};
use crate::nn::{param_count, Mlp};
use crate::pde::{solve_pde, PdeParams, SolverOptions, TemperatureField};
use crate::pinn::{predict_matching, train, write_lambda_snapshot, write_loss_history, CollocationSize, LossReport, SchemeConfig, TrainConfig, TrainOutcome};
use crate::timeseries::{fmt_f64, load_csv, normalize, synthesize_profile, ColumnSchema, OperatingSeries, SyntheticProfileConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Reduced budgets that run on a laptop.
    Desk,
    /// Full-scale budgets.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSource {
    Synthetic {
        days: u32,
        dt: f64,
        profile: SyntheticProfileConfig,
        seed: u64,
    },
    Csv {
        path: PathBuf,
        #[serde(default)]
        schema: ColumnSchema,
    },
}

/// Grid of the numerical reference solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleGrid {
    pub nx: usize,
    pub substeps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub schemes: Vec<SchemeConfig>,
    pub seeds: Vec<u64>,
}

/// Hyperparameter grids. The architecture grid runs at the configured
/// data sizes; the data grid runs at the configured architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub hidden_layers: Vec<usize>,
    pub neurons: Vec<usize>,
    pub boundary_fractions: Vec<f64>,
    pub collocation_multiples: Vec<f64>,
    pub repeats: usize,
    /// Adam iterations per sweep run.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgeingConfig {
    /// Trained checkpoint; defaults to `<out_dir>/train/model.bin`.
    #[serde(default)]
    pub model: Option<PathBuf>,
    /// Use the numerical solution in place of the network.
    #[serde(default)]
    pub oracle_as_pinn: bool,
    /// Standard deviation of the synthetic fibre-optic noise [K].
    pub fos_noise: f64,
    #[serde(default)]
    pub readout: PinnReadout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub version: u32,
    pub input: InputSource,
    pub pde: PdeParams,
    /// Required: the winding exponent has no default.
    pub iec: IecParams,
    pub scheme: SchemeConfig,
    pub train: TrainConfig,
    pub ensemble_m: usize,
    pub grid: OracleGrid,
    pub compare: CompareConfig,
    pub sweep: SweepConfig,
    pub ageing: AgeingConfig,
    pub out_dir: PathBuf,
    pub seed: u64,
    /// Upper bound on concurrent training runs.
    pub workers: usize,
}

impl ExperimentConfig {
    pub fn preset(preset: Preset) -> Self {
        let train = match preset {
            Preset::Desk => TrainConfig::desk(),
            Preset::Full => TrainConfig::full(),
        };
        let sweep = match preset {
            Preset::Desk => SweepConfig {
                hidden_layers: vec![2, 3],
                neurons: vec![20, 50],
                boundary_fractions: vec![0.5, 0.75],
                collocation_multiples: vec![1.0, 2.0],
                repeats: 2,
                iterations: 1000,
            },
            Preset::Full => SweepConfig {
                hidden_layers: vec![2, 3, 4, 5],
                neurons: vec![10, 20, 30, 40, 50, 100],
                boundary_fractions: vec![0.375, 0.5, 0.625, 0.75, 0.875],
                collocation_multiples: vec![10.0, 20.0, 40.0],
                repeats: 10,
                iterations: 20_000,
            },
        };
        Self {
            version: CONFIG_VERSION,
            input: InputSource::Synthetic {
                days: 4,
                dt: 60.0,
                profile: SyntheticProfileConfig::default(),
                seed: 1,
            },
            pde: PdeParams::default(),
            iec: IecParams::nameplate(1.3, 60.0),
            scheme: SchemeConfig::rba(),
            train,
            ensemble_m: match preset {
                Preset::Desk => 10,
                Preset::Full => 100,
            },
            grid: OracleGrid { nx: 101, substeps: 1 },
            compare: CompareConfig {
                schemes: vec![SchemeConfig::vanilla(), SchemeConfig::rba(), SchemeConfig::self_adaptive()],
                seeds: (0..5).collect(),
            },
            sweep,
            ageing: AgeingConfig {
                model: None,
                oracle_as_pinn: false,
                fos_noise: 0.2,
                readout: PinnReadout::SpaceMax,
            },
            out_dir: PathBuf::from("out"),
            seed: 0,
            workers: 1,
        }
    }

    /// Parse and validate. Errors name the offending line and field.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        let bad = |m: String| Err(Error::Config(m));
        match &self.input {
            InputSource::Csv { path, .. } if !path.exists() => {
                return bad(format!("input file {} does not exist", path.display()))
            }
            InputSource::Synthetic { days, dt, .. } if *days == 0 || !(*dt > 0.0) => {
                return bad("synthetic input needs days >= 1 and dt > 0".into())
            }
            _ => {}
        }
        self.pde.validate().map_err(|e| Error::Config(format!("pde: {e}")))?;
        self.iec.validate().map_err(|e| Error::Config(format!("iec: {e}")))?;
        self.scheme.validate().map_err(|e| Error::Config(format!("scheme: {e}")))?;
        self.train.validate().map_err(|e| Error::Config(format!("train: {e}")))?;
        crate::nn::Mlp::zeros(&self.train.widths).map_err(|e| Error::Config(format!("train.widths: {e}")))?;
        if self.ensemble_m < 2 {
            return bad("ensemble_m must be >= 2".into());
        }
        if self.grid.nx < 11 || self.grid.substeps == 0 {
            return bad("grid needs nx >= 11 and substeps >= 1".into());
        }
        if self.compare.schemes.is_empty() || self.compare.seeds.is_empty() {
            return bad("compare needs at least one scheme and one seed".into());
        }
        for s in &self.compare.schemes {
            s.validate().map_err(|e| Error::Config(format!("compare.schemes: {e}")))?;
        }
        let sw = &self.sweep;
        if sw.repeats == 0 || sw.iterations == 0 {
            return bad("sweep needs repeats >= 1 and iterations >= 1".into());
        }
        if sw.hidden_layers.contains(&0) || sw.neurons.contains(&0) {
            return bad("sweep layer and neuron counts must be >= 1".into());
        }
        if sw.boundary_fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
            return bad("sweep boundary fractions must lie in (0, 1]".into());
        }
        if sw.collocation_multiples.iter().any(|m| !(*m > 0.0)) {
            return bad("sweep collocation multiples must be > 0".into());
        }
        if !(self.ageing.fos_noise >= 0.0) {
            return bad("ageing.fos_noise must be >= 0".into());
        }
        if self.workers == 0 {
            return bad("workers must be >= 1".into());
        }
        Ok(())
    }

    fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            ..self.train.clone()
        }
    }
}

/// Operating series named by the configuration.
pub fn load_series(cfg: &ExperimentConfig) -> Result<OperatingSeries> {
    match &cfg.input {
        InputSource::Synthetic { days, dt, profile, seed } => synthesize_profile(*days, *dt, profile, *seed),
        InputSource::Csv { path, schema } => load_csv(path, schema),
    }
}

/// Numerical reference field for the configured series.
pub fn solve_oracle(cfg: &ExperimentConfig, series: &OperatingSeries) -> Result<TemperatureField> {
    solve_pde(
        series,
        &cfg.pde,
        &SolverOptions {
            nx: cfg.grid.nx,
            substeps: cfg.grid.substeps,
            initial: None,
        },
    )
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn save_field(field: &TemperatureField, dir: &Path, stem: &str) -> Result<String> {
    let bin = dir.join(format!("{stem}.bin"));
    field.save(dir.join(format!("{stem}.csv")), &bin)?;
    Ok(sha256_hex(&fs::read(bin)?))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub nx: usize,
    pub nt: usize,
    pub field_sha256: String,
    pub pde: PdeParams,
    pub dt: f64,
}

pub fn cmd_solve_pde(cfg: &ExperimentConfig) -> Result<SolveSummary> {
    let series = load_series(cfg)?;
    let field = solve_oracle(cfg, &series)?;
    let dir = cfg.out_dir.join("oracle");
    ensure_dir(&dir)?;
    let sum = SolveSummary {
        nx: field.nx(),
        nt: field.nt(),
        field_sha256: save_field(&field, &dir, "field")?,
        pde: cfg.pde,
        dt: series.dt,
    };
    write_json(&dir.join("meta.json"), &sum)?;
    Ok(sum)
}

/// Deterministic metrics of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scheme: String,
    pub seed: u64,
    pub gamma2: f64,
    pub max_abs_error: f64,
    pub final_loss: LossReport,
    pub physics_term: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_time_s: f64,
    pub seconds_per_iteration: f64,
}

fn evaluate_run(
    out: &TrainOutcome,
    oracle: &TemperatureField,
    scheme: &SchemeConfig,
    seed: u64,
) -> Result<(TemperatureField, RunMetrics)> {
    let pred = predict_matching(&out.model, oracle, &out.scaling)?;
    let metrics = RunMetrics {
        scheme: scheme.name().to_string(),
        seed,
        gamma2: gamma2(&pred, oracle)?,
        max_abs_error: max_abs_error(&pred, oracle)?,
        final_loss: out.final_loss,
        physics_term: !matches!(scheme, SchemeConfig::DataOnly),
    };
    Ok((pred, metrics))
}

fn timing(out: &TrainOutcome, iterations: usize) -> Timing {
    Timing {
        wall_time_s: out.wall_time_s,
        seconds_per_iteration: out.seconds_per_iteration(iterations),
    }
}

pub fn cmd_train(cfg: &ExperimentConfig) -> Result<RunMetrics> {
    let series = load_series(cfg)?;
    let oracle = solve_oracle(cfg, &series)?;
    let tc = cfg.train_config(cfg.seed);
    let out = train(&series, &cfg.pde, &cfg.scheme, &tc)?;
    let (pred, metrics) = evaluate_run(&out, &oracle, &cfg.scheme, cfg.seed)?;

    let dir = cfg.out_dir.join("train");
    ensure_dir(&dir)?;
    out.model.save(dir.join("model.bin"))?;
    write_loss_history(&out.history, BufWriter::new(File::create(dir.join("loss_history.csv"))?))?;
    let lambda_path = dir.join("lambda.csv");
    if !write_lambda_snapshot(&out.scheme, &out.sets, BufWriter::new(File::create(&lambda_path)?))? {
        fs::remove_file(lambda_path)?;
    }
    save_field(&pred, &dir, "field")?;
    write_json(&dir.join("metrics.json"), &metrics)?;
    write_json(&dir.join("timing.json"), &timing(&out, tc.iterations))?;
    Ok(metrics)
}

/// Median of finite values; `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: String,
    pub runs: usize,
    pub failures: usize,
    pub median_gamma2: Option<f64>,
    pub median_max_abs_error: Option<f64>,
    /// Median of the unweighted compound loss (sum of the four MSEs).
    pub median_final_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareSummary {
    pub schemes: Vec<SchemeSummary>,
    pub cells: Vec<CellOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellOutcome {
    pub scheme: String,
    pub seed: u64,
    pub metrics: Option<RunMetrics>,
    pub error: Option<String>,
}

pub fn cmd_compare_schemes(cfg: &ExperimentConfig) -> Result<CompareSummary> {
    let series = load_series(cfg)?;
    let oracle = solve_oracle(cfg, &series)?;
    let root = cfg.out_dir.join("compare");
    ensure_dir(&root)?;
    let cells: Vec<(SchemeConfig, u64)> = cfg
        .compare
        .schemes
        .iter()
        .flat_map(|s| cfg.compare.seeds.iter().map(move |&seed| (*s, seed)))
        .collect();
    let run_cell = |scheme: &SchemeConfig, seed: u64| -> Result<(RunMetrics, Timing)> {
        let tc = cfg.train_config(seed);
        let out = train(&series, &cfg.pde, scheme, &tc)?;
        let (_, metrics) = evaluate_run(&out, &oracle, scheme, seed)?;
        let dir = root.join(scheme.name()).join(format!("seed_{seed}"));
        ensure_dir(&dir)?;
        write_loss_history(&out.history, BufWriter::new(File::create(dir.join("loss_history.csv"))?))?;
        write_json(&dir.join("metrics.json"), &metrics)?;
        Ok((metrics, timing(&out, tc.iterations)))
    };
    let results: Vec<Result<(RunMetrics, Timing)>> =
        pool(cfg.workers)?.install(|| cells.par_iter().map(|(s, seed)| run_cell(s, *seed)).collect());

    let mut outcomes = Vec::new();
    let mut timings = Vec::new();
    for ((scheme, seed), r) in cells.iter().zip(results) {
        match r {
            Ok((m, t)) => {
                timings.push(serde_json::json!({"scheme": scheme.name(), "seed": seed, "wall_time_s": t.wall_time_s, "seconds_per_iteration": t.seconds_per_iteration}));
                outcomes.push(CellOutcome { scheme: scheme.name().into(), seed: *seed, metrics: Some(m), error: None });
            }
            Err(e) => outcomes.push(CellOutcome { scheme: scheme.name().into(), seed: *seed, metrics: None, error: Some(e.to_string()) }),
        }
    }
    let mut schemes = Vec::new();
    for s in &cfg.compare.schemes {
        let mine: Vec<&CellOutcome> = outcomes.iter().filter(|c| c.scheme == s.name()).collect();
        let ok: Vec<&RunMetrics> = mine.iter().filter_map(|c| c.metrics.as_ref()).collect();
        let col = |f: &dyn Fn(&RunMetrics) -> f64| median(&ok.iter().map(|m| f(m)).collect::<Vec<_>>());
        schemes.push(SchemeSummary {
            scheme: s.name().into(),
            runs: mine.len(),
            failures: mine.len() - ok.len(),
            median_gamma2: col(&|m| m.gamma2),
            median_max_abs_error: col(&|m| m.max_abs_error),
            median_final_mse: col(&|m| m.final_loss.compound_mse()),
        });
    }

    let mut w = csv::Writer::from_path(root.join("runs.csv"))?;
    w.write_record(["scheme", "seed", "gamma2", "max_abs_error", "final_total", "final_mse", "error"])?;
    for c in &outcomes {
        let f = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let m = c.metrics.as_ref();
        w.write_record([
            c.scheme.clone(),
            c.seed.to_string(),
            f(m.map(|m| m.gamma2)),
            f(m.map(|m| m.max_abs_error)),
            f(m.map(|m| m.final_loss.total)),
            f(m.map(|m| m.final_loss.compound_mse())),
            c.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    let summary = CompareSummary { schemes, cells: outcomes };
    write_json(&root.join("summary.json"), &summary)?;
    write_json(&root.join("timing.json"), &timings)?;
    Ok(summary)
}

/// One hyperparameter combination of the sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub hidden_layers: usize,
    pub neurons: usize,
    pub boundary_fraction: f64,
    pub collocation_multiple: f64,
}

impl SweepCell {
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![2];
        w.extend(std::iter::repeat_n(self.neurons, self.hidden_layers));
        w.push(3);
        w
    }

    pub fn num_params(&self) -> usize {
        param_count(&self.widths())
    }
}

/// Architecture grid at the base data sizes, then the data grid at the
/// base architecture. `base` supplies the fixed half of each grid.
pub fn sweep_cells(sweep: &SweepConfig, base: &TrainConfig) -> Vec<SweepCell> {
    let hidden = base.widths.len() - 2;
    let neurons = base.widths.get(1).copied().unwrap_or(1);
    let multiple = match base.collocation {
        CollocationSize::Multiple(m) => m,
        CollocationSize::Count(_) => 10.0,
    };
    let mut cells = Vec::new();
    for &l in &sweep.hidden_layers {
        for &n in &sweep.neurons {
            cells.push(SweepCell {
                hidden_layers: l,
                neurons: n,
                boundary_fraction: base.boundary_fraction,
                collocation_multiple: multiple,
            });
        }
    }
    for &f in &sweep.boundary_fractions {
        for &m in &sweep.collocation_multiples {
            cells.push(SweepCell {
                hidden_layers: hidden,
                neurons,
                boundary_fraction: f,
                collocation_multiple: m,
            });
        }
    }
    cells
}

/// Number of trained models the sweep enumerates.
pub fn sweep_model_count(sweep: &SweepConfig, base: &TrainConfig) -> usize {
    sweep_cells(sweep, base).len() * sweep.repeats
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub cell: SweepCell,
    pub num_params: usize,
    pub mean_gamma2: Option<f64>,
    pub std_gamma2: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub models: usize,
    pub rows: Vec<SweepRow>,
    pub winner: Option<SweepRow>,
}

/// Argmin of mean Γ2; ties go to the cell with fewer parameters.
pub fn sweep_winner(rows: &[SweepRow]) -> Option<&SweepRow> {
    rows.iter()
        .filter(|r| r.mean_gamma2.is_some())
        .min_by(|a, b| {
            a.mean_gamma2
                .unwrap()
                .total_cmp(&b.mean_gamma2.unwrap())
                .then(a.num_params.cmp(&b.num_params))
        })
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.len() > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
    (Some(mean), std)
}

pub fn cmd_hyperparam_sweep(cfg: &ExperimentConfig) -> Result<SweepSummary> {
    let series = load_series(cfg)?;
    let oracle = solve_oracle(cfg, &series)?;
    let cells = sweep_cells(&cfg.sweep, &cfg.train);
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..cfg.sweep.repeats as u64).map(move |r| (c, r)))
        .collect();
    let run = |c: usize, rep: u64| -> Result<(f64, f64)> {
        let cell = cells[c];
        let tc = TrainConfig {
            widths: cell.widths(),
            boundary_fraction: cell.boundary_fraction,
            collocation: CollocationSize::Multiple(cell.collocation_multiple),
            iterations: cfg.sweep.iterations,
            seed: cfg.seed + rep,
            ..cfg.train.clone()
        };
        let out = train(&series, &cfg.pde, &cfg.scheme, &tc)?;
        let (_, m) = evaluate_run(&out, &oracle, &cfg.scheme, tc.seed)?;
        Ok((m.gamma2, out.wall_time_s))
    };
    let results: Vec<Result<(f64, f64)>> =
        pool(cfg.workers)?.install(|| jobs.par_iter().map(|&(c, r)| run(c, r)).collect());

    let mut rows = Vec::new();
    let mut timings = Vec::new();
    for (c, cell) in cells.iter().enumerate() {
        let mine: Vec<&Result<(f64, f64)>> = jobs.iter().zip(&results).filter(|((jc, _), _)| *jc == c).map(|(_, r)| r).collect();
        let ok: Vec<f64> = mine.iter().filter_map(|r| r.as_ref().ok().map(|v| v.0)).collect();
        timings.push(mine.iter().filter_map(|r| r.as_ref().ok().map(|v| v.1)).sum::<f64>());
        let (mean, std) = mean_std(&ok);
        rows.push(SweepRow {
            cell: *cell,
            num_params: cell.num_params(),
            mean_gamma2: mean,
            std_gamma2: std,
            failures: mine.len() - ok.len(),
        });
    }
    let dir = cfg.out_dir.join("sweep");
    ensure_dir(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("cells.csv"))?;
    w.write_record(["hidden_layers", "neurons", "boundary_fraction", "collocation_multiple", "num_params", "mean_gamma2", "std_gamma2", "failures"])?;
    for r in &rows {
        let f = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        w.write_record([
            r.cell.hidden_layers.to_string(),
            r.cell.neurons.to_string(),
            fmt_f64(r.cell.boundary_fraction),
            fmt_f64(r.cell.collocation_multiple),
            r.num_params.to_string(),
            f(r.mean_gamma2),
            f(r.std_gamma2),
            r.failures.to_string(),
        ])?;
    }
    w.flush()?;
    let summary = SweepSummary {
        models: jobs.len(),
        winner: sweep_winner(&rows).cloned(),
        rows,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    write_json(&dir.join("timing.json"), &timings)?;
    Ok(summary)
}

/// Headline numbers of the ageing comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeingSummary {
    pub lol_fos: f64,
    pub lol_pinn: f64,
    pub lol_iec: f64,
    pub max_abs_e_vpinn: f64,
    pub max_abs_e_viec: f64,
}

pub fn cmd_ageing(cfg: &ExperimentConfig) -> Result<AgeingSummary> {
    let mut series = load_series(cfg)?;
    let oracle = solve_oracle(cfg, &series)?;
    let oil = if cfg.ageing.oracle_as_pinn {
        oracle.clone()
    } else {
        let path = cfg
            .ageing
            .model
            .clone()
            .unwrap_or_else(|| cfg.out_dir.join("train").join("model.bin"));
        if !path.exists() {
            return Err(Error::Config(format!(
                "no trained model at {} (run `train` first or set ageing.model)",
                path.display()
            )));
        }
        let model = Mlp::load(&path)?;
        let (_, scaling) = normalize(&series, &cfg.pde)?;
        predict_matching(&model, &oracle, &scaling)?
    };
    if series.fos.is_none() {
        series.fos = Some(synthesize_fos(&oracle, &series, &cfg.iec, &FOS_HEIGHTS, cfg.ageing.fos_noise, cfg.seed)?);
    }
    let winding = winding_field(&oil, &series, &cfg.iec)?;
    let ageing = ageing_field(&winding, series.dt)?;
    let report = compare_configurations(&oil, &series, &cfg.iec, cfg.ageing.readout)?;

    let dir = cfg.out_dir.join("ageing");
    ensure_dir(&dir)?;
    save_field(&winding.field, &dir, "winding")?;
    save_field(&ageing.v, &dir, "ageing_v")?;
    save_field(&ageing.lol, &dir, "lol")?;
    let wmax = max_over_space(&winding.field);
    let vmax = max_over_space(&ageing.v);
    let mut w = csv::Writer::from_path(dir.join("spatial_max.csv"))?;
    w.write_record(["t", "theta_w_max", "argmax_x", "v_max"])?;
    for i in 0..wmax.values.len() {
        w.write_record([
            fmt_f64(winding.field.t_grid[i]),
            fmt_f64(wmax.values[i]),
            fmt_f64(wmax.argmax_x[i]),
            fmt_f64(vmax.values[i]),
        ])?;
    }
    w.flush()?;
    write_json(&dir.join("report.json"), &report)?;
    let (ep, ei) = report.max_abs_errors();
    Ok(AgeingSummary {
        lol_fos: report.lol_fos,
        lol_pinn: report.lol_pinn,
        lol_iec: report.lol_iec,
        max_abs_e_vpinn: ep,
        max_abs_e_viec: ei,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySummary {
    pub m: usize,
    pub failed: usize,
    pub mean_gamma2: Option<f64>,
    pub max_std: f64,
}

/// Repeated training with seeds `seed..seed + M`.
pub fn cmd_uncertainty(cfg: &ExperimentConfig) -> Result<UncertaintySummary> {
    let series = load_series(cfg)?;
    let oracle = solve_oracle(cfg, &series)?;
    let rep: EnsembleReport = ensemble_run(cfg.scheme.name(), cfg.ensemble_m, cfg.seed, cfg.workers, Some(&oracle), |seed| {
        let out = train(&series, &cfg.pde, &cfg.scheme, &cfg.train_config(seed))?;
        Ok((predict_matching(&out.model, &oracle, &out.scaling)?, out.wall_time_s))
    })?;
    let dir = cfg.out_dir.join("uncertainty");
    ensure_dir(&dir)?;
    save_field(&rep.stats.mean, &dir, "mean")?;
    save_field(&rep.stats.std, &dir, "std")?;
    let deterministic: Vec<serde_json::Value> = rep
        .runs
        .iter()
        .map(|r| serde_json::json!({"scheme": r.scheme, "seed": r.seed, "gamma2": r.gamma2, "error": r.error}))
        .collect();
    write_json(&dir.join("runs.json"), &deterministic)?;
    write_json(&dir.join("timing.json"), &rep.runs)?;
    Ok(UncertaintySummary {
        m: rep.stats.m,
        failed: rep.failed,
        mean_gamma2: rep.mean_gamma2(),
        max_std: rep.stats.std.values.iter().fold(0.0, |a, &b| a.max(b)),
    })
}
