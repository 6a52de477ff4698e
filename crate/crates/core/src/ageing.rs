//! Winding temperature, insulation ageing and loss-of-life fields, and the
//! three-way comparison of fibre-optic, PINN and IEC ageing estimates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iec::{ageing_factor, hst_series, lol_temporal, IecParams};
use crate::metrics::relative_error_series;
use crate::pde::TemperatureField;
use crate::timeseries::{FosChannels, OperatingSeries};

/// Fractional heights of the three fibre-optic sensors.
pub const FOS_HEIGHTS: [f64; 3] = [0.70, 0.85, 0.75];

/// Winding temperature Θ_W(x,t) = Θ_O(x,t) + ΔΘ_H(t).
#[derive(Debug, Clone, PartialEq)]
pub struct WindingField {
    pub field: TemperatureField,
    /// Hotspot rise at each field time [K].
    pub rise: Vec<f64>,
}

/// Hotspot rise of `series` at the field times, linearly interpolated
/// between samples.
fn rise_at(times: &[f64], series: &OperatingSeries, iec: &IecParams) -> Result<Vec<f64>> {
    let end = series.duration();
    let (first, last) = (times[0], times[times.len() - 1]);
    if last < 0.0 || first > end {
        return Err(Error::InvalidSeries(format!(
            "field times [{first}, {last}] s do not overlap the series [0, {end}] s"
        )));
    }
    let rise = hst_series(series, iec)?.rise();
    Ok(times
        .iter()
        .map(|&t| OperatingSeries::interp(&rise, series.dt, t))
        .collect())
}

/// Add the IEC hotspot rise to every height of an oil field.
pub fn winding_field(oil: &TemperatureField, series: &OperatingSeries, iec: &IecParams) -> Result<WindingField> {
    oil.validate()?;
    let rise = rise_at(&oil.t_grid, series, iec)?;
    let nt = oil.nt();
    let values = oil
        .values
        .iter()
        .enumerate()
        .map(|(k, v)| v + rise[k % nt])
        .collect();
    Ok(WindingField {
        field: TemperatureField {
            values,
            ..oil.clone()
        },
        rise,
    })
}

/// Ageing factor V(x,t) and cumulative loss of life LOL(x,t) [min].
#[derive(Debug, Clone, PartialEq)]
pub struct AgeingField {
    pub v: TemperatureField,
    pub lol: TemperatureField,
}

pub fn ageing_field(w: &WindingField, dt: f64) -> Result<AgeingField> {
    let v = w.field.map(ageing_factor);
    let mut lol = Vec::with_capacity(v.values.len());
    for ix in 0..v.nx() {
        lol.extend(lol_temporal(v.row(ix), dt)?);
    }
    Ok(AgeingField {
        lol: TemperatureField {
            values: lol,
            ..v.clone()
        },
        v,
    })
}

/// Per-time maximum over height and the height that attains it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMax {
    pub values: Vec<f64>,
    pub argmax_x: Vec<f64>,
}

/// Maximum over x at each time; ties go to the smallest x.
pub fn max_over_space(field: &TemperatureField) -> SpatialMax {
    let nt = field.nt();
    let mut values = field.row(0).to_vec();
    let mut arg = vec![0usize; nt];
    for ix in 1..field.nx() {
        for (it, &v) in field.row(ix).iter().enumerate() {
            if v > values[it] {
                values[it] = v;
                arg[it] = ix;
            }
        }
    }
    SpatialMax {
        values,
        argmax_x: arg.into_iter().map(|i| field.x_grid[i]).collect(),
    }
}

/// Winding temperatures at the given heights of an oil field, sampled at
/// the series times, with optional Gaussian noise [K].
///
/// The field must carry one time column per series sample.
pub fn synthesize_fos(
    oil: &TemperatureField,
    series: &OperatingSeries,
    iec: &IecParams,
    heights: &[f64],
    noise: f64,
    seed: u64,
) -> Result<FosChannels> {
    if oil.nt() != series.len() {
        return Err(Error::ShapeMismatch(format!(
            "field has {} times, series {} samples",
            oil.nt(),
            series.len()
        )));
    }
    if !(noise >= 0.0) {
        return Err(Error::InvalidParameter(format!("noise must be >= 0, got {noise}")));
    }
    let w = winding_field(oil, series, iec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let values = heights
        .iter()
        .map(|&h| {
            let mut row = w.field.profile_at_height(h);
            if noise > 0.0 {
                row.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
            }
            row
        })
        .collect();
    Ok(FosChannels {
        heights: heights.to_vec(),
        values,
    })
}

/// Where the PINN configuration reads its winding temperature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PinnReadout {
    /// Maximum over the whole height.
    #[default]
    SpaceMax,
    /// Maximum over the sensor heights only, matching what the fibres see.
    SensorHeights,
}

/// Ageing estimates of the three configurations and their errors against
/// the fibre-optic ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    /// End-of-horizon loss of life [min].
    pub lol_fos: f64,
    pub lol_pinn: f64,
    pub lol_iec: f64,
    /// Relative errors of the final LOL against the fibre-optic value.
    pub lol_error_pinn: f64,
    pub lol_error_iec: f64,
    /// Instantaneous (V_FOS − V)/V_FOS per sample.
    pub e_vpinn: Vec<f64>,
    pub e_viec: Vec<f64>,
    pub v_fos: Vec<f64>,
    pub v_pinn: Vec<f64>,
    pub v_iec: Vec<f64>,
}

impl ComparisonReport {
    /// Largest |e_v| of each configuration.
    pub fn max_abs_errors(&self) -> (f64, f64) {
        let m = |v: &[f64]| v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        (m(&self.e_vpinn), m(&self.e_viec))
    }
}

fn unmask(e: Vec<Option<f64>>) -> Vec<f64> {
    e.into_iter().map(|v| v.unwrap_or(0.0)).collect()
}

/// Compare V_FOS (hottest sensor), V_PINN (from the oil field) and V_IEC
/// (from top oil alone) over the series.
pub fn compare_configurations(
    oil: &TemperatureField,
    series: &OperatingSeries,
    iec: &IecParams,
    readout: PinnReadout,
) -> Result<ComparisonReport> {
    let fos = series
        .fos
        .as_ref()
        .ok_or_else(|| Error::InvalidSeries("series has no fibre-optic channels".into()))?;
    if fos.values.is_empty() {
        return Err(Error::InvalidSeries("series has no fibre-optic channels".into()));
    }
    let n = series.len();
    let theta_fos: Vec<f64> = (0..n)
        .map(|i| fos.values.iter().map(|c| c[i]).fold(f64::NEG_INFINITY, f64::max))
        .collect();

    // Winding field evaluated at the sample times.
    let times: Vec<f64> = (0..n).map(|i| i as f64 * series.dt).collect();
    let w = winding_field(oil, series, iec)?;
    let at_samples = |row: &[f64]| -> Vec<f64> {
        if oil.t_grid == times {
            row.to_vec()
        } else {
            times.iter().map(|&t| interp_on(&oil.t_grid, row, t)).collect()
        }
    };
    let theta_pinn: Vec<f64> = match readout {
        PinnReadout::SpaceMax => at_samples(&max_over_space(&w.field).values),
        PinnReadout::SensorHeights => {
            let rows: Vec<Vec<f64>> = fos.heights.iter().map(|&h| at_samples(&w.field.profile_at_height(h))).collect();
            (0..n)
                .map(|i| rows.iter().map(|r| r[i]).fold(f64::NEG_INFINITY, f64::max))
                .collect()
        }
    };
    let theta_iec = hst_series(series, iec)?.theta_h;

    let v = |th: &[f64]| th.iter().map(|&t| ageing_factor(t)).collect::<Vec<f64>>();
    let (v_fos, v_pinn, v_iec) = (v(&theta_fos), v(&theta_pinn), v(&theta_iec));
    let last = |v: &[f64]| -> Result<f64> { Ok(*lol_temporal(v, series.dt)?.last().expect("nonempty")) };
    let (lol_fos, lol_pinn, lol_iec) = (last(&v_fos)?, last(&v_pinn)?, last(&v_iec)?);
    Ok(ComparisonReport {
        lol_fos,
        lol_pinn,
        lol_iec,
        lol_error_pinn: (lol_fos - lol_pinn) / lol_fos,
        lol_error_iec: (lol_fos - lol_iec) / lol_fos,
        e_vpinn: unmask(relative_error_series(&v_fos, &v_pinn)?),
        e_viec: unmask(relative_error_series(&v_fos, &v_iec)?),
        v_fos,
        v_pinn,
        v_iec,
    })
}

/// Linear interpolation on an ascending, possibly nonuniform grid.
fn interp_on(grid: &[f64], values: &[f64], t: f64) -> f64 {
    match grid.iter().position(|&g| g >= t) {
        None => values[values.len() - 1],
        Some(0) => values[0],
        Some(j) => {
            let w = (t - grid[j - 1]) / (grid[j] - grid[j - 1]);
            values[j - 1] + w * (values[j] - values[j - 1])
        }
    }
}
