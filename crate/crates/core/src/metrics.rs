//! Error metrics and repeated-training statistics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::TemperatureField;

fn check_same_grid(a: &TemperatureField, b: &TemperatureField) -> Result<()> {
    if a.same_grid(b) {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!(
            "fields on different grids ({}x{} vs {}x{})",
            a.nx(),
            a.nt(),
            b.nx(),
            b.nt()
        )))
    }
}

fn rel_l2<'a>(pairs: impl Iterator<Item = (&'a f64, &'a f64)>) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for (p, r) in pairs {
        num += (p - r) * (p - r);
        den += r * r;
    }
    (den > 0.0).then(|| (num / den).sqrt())
}

/// Relative L2 error ‖û − u‖ / ‖u‖ over every grid node.
pub fn gamma2(predicted: &TemperatureField, reference: &TemperatureField) -> Result<f64> {
    check_same_grid(predicted, reference)?;
    rel_l2(predicted.values.iter().zip(&reference.values)).ok_or(Error::ZeroReference)
}

/// Largest pointwise absolute difference.
pub fn max_abs_error(predicted: &TemperatureField, reference: &TemperatureField) -> Result<f64> {
    check_same_grid(predicted, reference)?;
    Ok(predicted
        .values
        .iter()
        .zip(&reference.values)
        .fold(0.0, |m, (p, r)| m.max((p - r).abs())))
}

/// Pointwise (u − û)/u; entries with u = 0 are `None`.
pub fn relative_error_series(truth: &[f64], estimate: &[f64]) -> Result<Vec<Option<f64>>> {
    if truth.len() != estimate.len() {
        return Err(Error::ShapeMismatch(format!(
            "truth has {} samples, estimate {}",
            truth.len(),
            estimate.len()
        )));
    }
    if truth.iter().all(|u| *u == 0.0) {
        return Err(Error::ZeroReference);
    }
    Ok(truth
        .iter()
        .zip(estimate)
        .map(|(u, e)| (*u != 0.0).then(|| (u - e) / u))
        .collect())
}

/// Running average: out[i] = mean(v[0..=i]).
pub fn cumulative_mean(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .enumerate()
        .map(|(i, x)| {
            acc += x;
            acc / (i + 1) as f64
        })
        .collect()
}

/// Slice-wise Γ2 along each axis with running means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorProfiles {
    /// Γ2 of each time column.
    pub per_t: Vec<f64>,
    pub per_t_cumulative: Vec<f64>,
    /// Γ2 of each spatial row.
    pub per_x: Vec<f64>,
    pub per_x_cumulative: Vec<f64>,
}

/// Slices whose reference norm vanishes report 0 when the prediction
/// matches and infinity otherwise.
pub fn error_profiles(predicted: &TemperatureField, reference: &TemperatureField) -> Result<ErrorProfiles> {
    check_same_grid(predicted, reference)?;
    let slice = |p: Vec<f64>, r: Vec<f64>| {
        rel_l2(p.iter().zip(&r)).unwrap_or(if p == r { 0.0 } else { f64::INFINITY })
    };
    let per_t: Vec<f64> = (0..reference.nt())
        .map(|it| slice(predicted.column(it), reference.column(it)))
        .collect();
    let per_x: Vec<f64> = (0..reference.nx())
        .map(|ix| slice(predicted.row(ix).to_vec(), reference.row(ix).to_vec()))
        .collect();
    Ok(ErrorProfiles {
        per_t_cumulative: cumulative_mean(&per_t),
        per_t,
        per_x_cumulative: cumulative_mean(&per_x),
        per_x,
    })
}

/// Pointwise mean and sample standard deviation over repeated runs.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    pub mean: TemperatureField,
    pub std: TemperatureField,
    /// Runs that entered the statistics.
    pub m: usize,
}

/// Mean and sample (M − 1) standard deviation of `fields`.
///
/// Members are reduced in ascending seed order so the result does not
/// depend on the order runs finished in.
pub fn ensemble_stats(fields: &[(u64, TemperatureField)]) -> Result<EnsembleStats> {
    if fields.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "ensemble needs at least 2 members, got {}",
            fields.len()
        )));
    }
    let mut order: Vec<&(u64, TemperatureField)> = fields.iter().collect();
    order.sort_by_key(|(seed, _)| *seed);
    let first = &order[0].1;
    for (_, f) in &order[1..] {
        check_same_grid(first, f)?;
    }
    let m = order.len() as f64;
    let n = first.values.len();
    let mut mean = vec![0.0; n];
    for (_, f) in &order {
        for (a, v) in mean.iter_mut().zip(&f.values) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= m);
    let mut var = vec![0.0; n];
    for (_, f) in &order {
        for ((a, v), mu) in var.iter_mut().zip(&f.values).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    let std = var.into_iter().map(|s| (s / (m - 1.0)).sqrt()).collect();
    let with = |values| TemperatureField {
        x_grid: first.x_grid.clone(),
        t_grid: first.t_grid.clone(),
        values,
        scaling: first.scaling,
    };
    Ok(EnsembleStats {
        mean: with(mean),
        std: with(std),
        m: order.len(),
    })
}

/// Outcome of one ensemble member.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scheme: String,
    pub seed: u64,
    /// Γ2 against the reference, when one was given.
    pub gamma2: Option<f64>,
    pub wall_time_s: f64,
    /// Failure message of an aborted run.
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EnsembleReport {
    pub stats: EnsembleStats,
    /// One record per seed, ascending.
    pub runs: Vec<RunRecord>,
    pub failed: usize,
}

impl EnsembleReport {
    /// Mean Γ2 over successful runs.
    pub fn mean_gamma2(&self) -> Option<f64> {
        let g: Vec<f64> = self.runs.iter().filter_map(|r| r.gamma2).collect();
        (!g.is_empty()).then(|| g.iter().sum::<f64>() / g.len() as f64)
    }
}

/// Train-and-predict `m` times with seeds `base_seed..base_seed + m`.
///
/// `run` returns the predicted field and its training wall time. Failed
/// runs are recorded and left out of the statistics. Runs are spread over
/// at most `workers` threads.
pub fn ensemble_run<F>(
    scheme: &str,
    m: usize,
    base_seed: u64,
    workers: usize,
    reference: Option<&TemperatureField>,
    run: F,
) -> Result<EnsembleReport>
where
    F: Fn(u64) -> Result<(TemperatureField, f64)> + Sync,
{
    if m < 2 {
        return Err(Error::InvalidParameter(format!("ensemble size must be >= 2, got {m}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let seeds: Vec<u64> = (0..m as u64).map(|i| base_seed + i).collect();
    let outcomes: Vec<(u64, Result<(TemperatureField, f64)>)> =
        pool.install(|| seeds.par_iter().map(|&s| (s, run(s))).collect());

    let mut fields = Vec::new();
    let mut runs = Vec::new();
    for (seed, outcome) in outcomes {
        match outcome {
            Ok((field, wall)) => {
                let g = reference.map(|r| gamma2(&field, r)).transpose()?;
                runs.push(RunRecord {
                    scheme: scheme.to_string(),
                    seed,
                    gamma2: g,
                    wall_time_s: wall,
                    error: None,
                });
                fields.push((seed, field));
            }
            Err(e) => runs.push(RunRecord {
                scheme: scheme.to_string(),
                seed,
                gamma2: None,
                wall_time_s: 0.0,
                error: Some(e.to_string()),
            }),
        }
    }
    let failed = m - fields.len();
    Ok(EnsembleReport {
        stats: ensemble_stats(&fields)?,
        runs,
        failed,
    })
}
