//! Operating time series: CSV ingestion, synthetic solar profiles,
//! resampling under the IEC step-size rule, and min-max normalization.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::PdeParams;

const SECONDS_PER_DAY: f64 = 86_400.0;
const SPACING_RTOL: f64 = 1e-6;

/// Fiber-optic winding temperature channels at fixed fractional heights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FosChannels {
    pub heights: Vec<f64>,
    /// One sequence per height, each of the series length.
    pub values: Vec<Vec<f64>>,
}

/// Uniformly sampled load, ambient and top-oil temperatures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatingSeries {
    /// Absolute start timestamp [s].
    pub t0: f64,
    /// Sample interval [s].
    pub dt: f64,
    /// Load factor [p.u.].
    pub k: Vec<f64>,
    /// Ambient temperature [°C].
    pub theta_a: Vec<f64>,
    /// Top-oil temperature [°C].
    pub theta_to: Vec<f64>,
    pub fos: Option<FosChannels>,
}

impl OperatingSeries {
    pub fn new(
        t0: f64,
        dt: f64,
        k: Vec<f64>,
        theta_a: Vec<f64>,
        theta_to: Vec<f64>,
        fos: Option<FosChannels>,
    ) -> Result<Self> {
        let s = Self {
            t0,
            dt,
            k,
            theta_a,
            theta_to,
            fos,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// Total duration covered by the samples [s].
    pub fn duration(&self) -> f64 {
        (self.len() - 1) as f64 * self.dt
    }

    /// Time of sample `i` relative to the start [s].
    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.dt
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.k.len();
        if n < 2 {
            return Err(Error::TooFewRows(n));
        }
        if self.theta_a.len() != n || self.theta_to.len() != n {
            return Err(Error::InvalidSeries(format!(
                "length mismatch: K={}, theta_A={}, theta_TO={}",
                n,
                self.theta_a.len(),
                self.theta_to.len()
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidSeries(format!("dt must be > 0, got {}", self.dt)));
        }
        if !self.t0.is_finite() {
            return Err(Error::InvalidSeries("t0 is not finite".into()));
        }
        if let Some(i) = self.k.iter().position(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(Error::InvalidSeries(format!(
                "load factor must be finite and >= 0 (sample {i}: {})",
                self.k[i]
            )));
        }
        for (name, seq) in [("theta_A", &self.theta_a), ("theta_TO", &self.theta_to)] {
            if let Some(i) = seq.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidSeries(format!("{name} not finite at sample {i}")));
            }
        }
        if let Some(fos) = &self.fos {
            if fos.heights.len() != fos.values.len() {
                return Err(Error::InvalidSeries("FOS heights/channels count mismatch".into()));
            }
            for (&x, seq) in fos.heights.iter().zip(&fos.values) {
                if !(x > 0.0 && x < 1.0) {
                    return Err(Error::InvalidSeries(format!(
                        "FOS height {x} must lie strictly inside (0,1)"
                    )));
                }
                if seq.len() != n {
                    return Err(Error::InvalidSeries("FOS channel length mismatch".into()));
                }
                if seq.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidSeries("FOS value not finite".into()));
                }
            }
        }
        Ok(())
    }

    /// Linear interpolation of a channel at time `t` [s] relative to start,
    /// clamped to the covered range.
    pub fn interp(values: &[f64], dt: f64, t: f64) -> f64 {
        let n = values.len();
        let pos = (t / dt).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let w = pos - i as f64;
        if w == 0.0 {
            values[i]
        } else if w == 1.0 {
            values[i + 1]
        } else {
            values[i] + w * (values[i + 1] - values[i])
        }
    }

    /// Write the series as CSV using the column names of `schema`.
    pub fn write_csv<W: Write>(&self, writer: W, schema: &ColumnSchema) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![
            schema.timestamp.clone(),
            schema.load.clone(),
            schema.theta_a.clone(),
            schema.theta_to.clone(),
        ];
        let fos_cols: Vec<&str> = match &self.fos {
            Some(f) => {
                if schema.fos.len() != f.heights.len() {
                    return Err(Error::InvalidSeries(
                        "schema FOS columns do not match series FOS channels".into(),
                    ));
                }
                schema.fos.iter().map(|c| c.column.as_str()).collect()
            }
            None => Vec::new(),
        };
        header.extend(fos_cols.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![
                fmt_f64(self.t0 + self.time(i)),
                fmt_f64(self.k[i]),
                fmt_f64(self.theta_a[i]),
                fmt_f64(self.theta_to[i]),
            ];
            if let Some(f) = &self.fos {
                row.extend(f.values.iter().map(|c| fmt_f64(c[i])));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f), schema)
    }
}

/// Shortest representation that parses back to the same bits.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// A fiber-optic column and the fractional height of its sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FosColumn {
    pub column: String,
    pub height: f64,
}

/// Maps logical channels onto CSV header names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub timestamp: String,
    pub load: String,
    pub theta_a: String,
    pub theta_to: String,
    #[serde(default)]
    pub fos: Vec<FosColumn>,
}

impl Default for ColumnSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            load: "K".into(),
            theta_a: "theta_A".into(),
            theta_to: "theta_TO".into(),
            fos: Vec::new(),
        }
    }
}

impl ColumnSchema {
    /// Default names plus FOS columns `fos1..fosN` at the given heights.
    pub fn with_fos(heights: &[f64]) -> Self {
        Self {
            fos: heights
                .iter()
                .enumerate()
                .map(|(i, &h)| FosColumn {
                    column: format!("fos{}", i + 1),
                    height: h,
                })
                .collect(),
            ..Self::default()
        }
    }
}

fn parse_timestamp(cell: &str) -> Option<f64> {
    let s = cell.trim();
    if let Ok(v) = s.parse::<f64>() {
        return v.is_finite().then_some(v);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.timestamp() as f64 + dt.timestamp_subsec_nanos() as f64 * 1e-9);
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            let utc = dt.and_utc();
            return Some(utc.timestamp() as f64 + utc.timestamp_subsec_nanos() as f64 * 1e-9);
        }
    }
    None
}

/// Read a series from CSV text, resolving columns through `schema`.
pub fn read_csv<R: Read>(reader: R, schema: &ColumnSchema) -> Result<OperatingSeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let ts_col = col(&schema.timestamp)?;
    let data_cols = [
        (col(&schema.load)?, schema.load.as_str()),
        (col(&schema.theta_a)?, schema.theta_a.as_str()),
        (col(&schema.theta_to)?, schema.theta_to.as_str()),
    ];
    let fos_cols = schema
        .fos
        .iter()
        .map(|f| Ok((col(&f.column)?, f.column.as_str())))
        .collect::<Result<Vec<_>>>()?;

    let mut stamps = Vec::new();
    let mut data: [Vec<f64>; 3] = Default::default();
    let mut fos: Vec<Vec<f64>> = vec![Vec::new(); fos_cols.len()];
    for (row_idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = row_idx + 1;
        let cell = |c: usize| rec.get(c).unwrap_or("");
        let ts = parse_timestamp(cell(ts_col)).ok_or_else(|| Error::NonNumeric {
            row,
            column: schema.timestamp.clone(),
            value: cell(ts_col).to_string(),
        })?;
        stamps.push(ts);
        let parse = |c: usize, name: &str| -> Result<f64> {
            cell(c).parse::<f64>().map_err(|_| Error::NonNumeric {
                row,
                column: name.to_string(),
                value: cell(c).to_string(),
            })
        };
        for (slot, &(c, name)) in data.iter_mut().zip(&data_cols) {
            slot.push(parse(c, name)?);
        }
        for (slot, &(c, name)) in fos.iter_mut().zip(&fos_cols) {
            slot.push(parse(c, name)?);
        }
    }
    if stamps.len() < 2 {
        return Err(Error::TooFewRows(stamps.len()));
    }
    let dt = stamps[1] - stamps[0];
    for (i, w) in stamps.windows(2).enumerate() {
        let step = w[1] - w[0];
        if !(step > 0.0) || (step - dt).abs() > SPACING_RTOL * dt.abs() {
            return Err(Error::NonUniformSpacing {
                row: i + 2,
                expected: dt,
                found: step,
            });
        }
    }
    let [k, theta_a, theta_to] = data;
    let fos = (!schema.fos.is_empty()).then(|| FosChannels {
        heights: schema.fos.iter().map(|f| f.height).collect(),
        values: fos,
    });
    OperatingSeries::new(stamps[0], dt, k, theta_a, theta_to, fos)
}

pub fn load_csv(path: impl AsRef<Path>, schema: &ColumnSchema) -> Result<OperatingSeries> {
    let f = std::fs::File::open(path)?;
    read_csv(std::io::BufReader::new(f), schema)
}

/// Shape of the synthetic solar-plant operating profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfileConfig {
    /// Daily peak load at solar noon [p.u.], at most 1.2.
    pub peak_load: f64,
    pub sunrise_hour: f64,
    pub sunset_hour: f64,
    /// Mean ambient temperature [°C].
    pub ambient_mean: f64,
    /// Half peak-to-peak of the daily ambient swing [K].
    pub ambient_amplitude: f64,
    /// Hour of the daily ambient maximum.
    pub ambient_peak_hour: f64,
    /// Relative noise level: multiplicative on K, scaled by the ambient
    /// amplitude on θ_A, and per-day jitter of the peak load.
    pub noise: f64,
    /// Top-oil rise over ambient at rated load [K].
    pub top_oil_rise_rated: f64,
    /// Ratio of load losses to no-load losses at rated current.
    pub loss_ratio: f64,
    /// Oil exponent of the top-oil rise.
    pub oil_exponent: f64,
    /// Oil time constant [min].
    pub tau_oil_min: f64,
}

impl Default for SyntheticProfileConfig {
    fn default() -> Self {
        Self {
            peak_load: 1.0,
            sunrise_hour: 6.0,
            sunset_hour: 18.0,
            ambient_mean: 22.0,
            ambient_amplitude: 7.0,
            ambient_peak_hour: 15.0,
            noise: 0.0,
            top_oil_rise_rated: 38.0,
            loss_ratio: 9800.0 / 842.0,
            oil_exponent: 0.8,
            tau_oil_min: 266.8,
        }
    }
}

/// Generate a deterministic synthetic series of `days` days at step `dt`.
///
/// K is a half-sine between sunrise and sunset (zero at night), θ_A a daily
/// sinusoid, and θ_TO = θ_A plus a first-order lag of the loss-driven
/// top-oil rise, started from its steady state.
pub fn synthesize_profile(
    days: u32,
    dt: f64,
    profile: &SyntheticProfileConfig,
    seed: u64,
) -> Result<OperatingSeries> {
    if days < 1 {
        return Err(Error::InvalidParameter("days must be >= 1".into()));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    if !(profile.noise >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "noise must be >= 0, got {}",
            profile.noise
        )));
    }
    if !(profile.peak_load >= 0.0 && profile.peak_load <= 1.2) {
        return Err(Error::InvalidParameter(format!(
            "peak load must lie in [0, 1.2], got {}",
            profile.peak_load
        )));
    }
    if !(profile.sunset_hour > profile.sunrise_hour) {
        return Err(Error::InvalidParameter("sunset must follow sunrise".into()));
    }
    if !(profile.tau_oil_min * 60.0 > 0.0) {
        return Err(Error::InvalidParameter("oil time constant must be > 0".into()));
    }
    let n = ((days as f64 * SECONDS_PER_DAY) / dt).round() as usize;
    if n < 2 {
        return Err(Error::InvalidParameter("profile shorter than two samples".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gauss = || -> f64 { StandardNormal.sample(&mut rng) };
    let day_peaks: Vec<f64> = (0..days)
        .map(|_| (profile.peak_load * (1.0 - profile.noise * gauss().abs())).max(0.0))
        .collect();

    let daylight = profile.sunset_hour - profile.sunrise_hour;
    let mut k = Vec::with_capacity(n);
    let mut theta_a = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let day = ((t / SECONDS_PER_DAY) as usize).min(days as usize - 1);
        let hour = (t % SECONDS_PER_DAY) / 3600.0;
        let solar = if hour > profile.sunrise_hour && hour < profile.sunset_hour {
            (PI * (hour - profile.sunrise_hour) / daylight).sin()
        } else {
            0.0
        };
        let kv = day_peaks[day] * solar * (1.0 + profile.noise * gauss());
        k.push(kv.max(0.0));
        let ta = profile.ambient_mean
            + profile.ambient_amplitude * (2.0 * PI * (hour - profile.ambient_peak_hour + 6.0) / 24.0).sin()
            + profile.noise * profile.ambient_amplitude * gauss();
        theta_a.push(ta);
    }

    let r = profile.loss_ratio;
    let ultimate = |kv: f64| {
        profile.top_oil_rise_rated * ((1.0 + r * kv * kv) / (1.0 + r)).powf(profile.oil_exponent)
    };
    let tau = profile.tau_oil_min * 60.0;
    let mut rise = ultimate(k[0]);
    let mut theta_to = Vec::with_capacity(n);
    theta_to.push(theta_a[0] + rise);
    for i in 1..n {
        rise += (dt / tau).min(1.0) * (ultimate(k[i]) - rise);
        theta_to.push(theta_a[i] + rise);
    }
    OperatingSeries::new(0.0, dt, k, theta_a, theta_to, None)
}

/// Resample to `dt_target` by linear interpolation, enforcing
/// Δt ≤ τ_min/2 for the IEC difference equations.
pub fn resample_and_check(
    series: &OperatingSeries,
    dt_target: f64,
    tau_min: f64,
) -> Result<OperatingSeries> {
    if !(dt_target > 0.0 && dt_target.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "target step must be > 0, got {dt_target}"
        )));
    }
    let limit = tau_min / 2.0;
    if dt_target > limit {
        return Err(Error::Stability {
            dt: dt_target,
            limit,
        });
    }
    if dt_target == series.dt {
        return Ok(series.clone());
    }
    let duration = series.duration();
    // Tolerate accumulated rounding when the target divides the duration.
    let n = ((duration / dt_target) * (1.0 + 1e-12)).floor() as usize + 1;
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "target step {dt_target} s leaves fewer than two samples over {duration} s"
        )));
    }
    let map = |vals: &[f64]| -> Vec<f64> {
        (0..n)
            .map(|j| OperatingSeries::interp(vals, series.dt, j as f64 * dt_target))
            .collect()
    };
    let fos = series.fos.as_ref().map(|f| FosChannels {
        heights: f.heights.clone(),
        values: f.values.iter().map(|c| map(c)).collect(),
    });
    OperatingSeries::new(
        series.t0,
        dt_target,
        map(&series.k),
        map(&series.theta_a),
        map(&series.theta_to),
        fos,
    )
}

/// Affine maps between physical and scaled coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingInfo {
    /// Tank height H [m], mapped to x ∈ [0,1].
    pub x_scale: f64,
    /// Total duration T [s], mapped to t ∈ [0,1].
    pub t_scale: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub p_min: f64,
    pub p_max: f64,
}

impl ScalingInfo {
    pub fn theta_range(&self) -> f64 {
        self.theta_max - self.theta_min
    }

    pub fn p_range(&self) -> f64 {
        self.p_max - self.p_min
    }

    pub fn scale_theta(&self, v: f64) -> f64 {
        (v - self.theta_min) / self.theta_range()
    }

    pub fn unscale_theta(&self, s: f64) -> f64 {
        self.theta_min + s * self.theta_range()
    }

    pub fn scale_p(&self, v: f64) -> f64 {
        (v - self.p_min) / self.p_range()
    }

    pub fn unscale_p(&self, s: f64) -> f64 {
        self.p_min + s * self.p_range()
    }

    pub fn scale_t(&self, t: f64) -> f64 {
        t / self.t_scale
    }

    pub fn unscale_t(&self, s: f64) -> f64 {
        s * self.t_scale
    }

    pub fn scale_x(&self, x: f64) -> f64 {
        x / self.x_scale
    }

    pub fn unscale_x(&self, s: f64) -> f64 {
        s * self.x_scale
    }
}

/// Series channels mapped into the scaled domain.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaledSeries {
    /// Sample times in [0,1].
    pub t: Vec<f64>,
    pub theta_a: Vec<f64>,
    pub theta_to: Vec<f64>,
    /// Load losses P_K = K²μ, scaled.
    pub p_k: Vec<f64>,
}

const THETA_MARGIN: f64 = 0.05;

/// Scaling that maps the series into the unit domain.
///
/// Temperatures use the joint min/max of θ_A and θ_TO widened by 5 % of the
/// range on each side; load losses use [0, μ·max(K)²].
pub fn scaling_for(series: &OperatingSeries, pde: &PdeParams) -> Result<ScalingInfo> {
    let (lo, hi) = series
        .theta_a
        .iter()
        .chain(&series.theta_to)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Err(Error::DegenerateRange(format!(
            "temperature range is empty (min = max = {lo})"
        )));
    }
    let margin = THETA_MARGIN * (hi - lo);
    let k_max = series.k.iter().fold(0.0f64, |m, &v| m.max(v));
    // An unloaded series still needs a non-empty loss range.
    let p_max = if k_max > 0.0 && pde.mu > 0.0 {
        pde.mu * k_max * k_max
    } else if pde.mu > 0.0 {
        pde.mu
    } else {
        1.0
    };
    Ok(ScalingInfo {
        x_scale: pde.height,
        t_scale: series.duration(),
        theta_min: lo - margin,
        theta_max: hi + margin,
        p_min: 0.0,
        p_max,
    })
}

/// Scale every channel of `series` into the unit domain.
pub fn normalize(series: &OperatingSeries, pde: &PdeParams) -> Result<(ScaledSeries, ScalingInfo)> {
    series.validate()?;
    let sc = scaling_for(series, pde)?;
    let scaled = ScaledSeries {
        t: (0..series.len()).map(|i| sc.scale_t(series.time(i))).collect(),
        theta_a: series.theta_a.iter().map(|&v| sc.scale_theta(v)).collect(),
        theta_to: series.theta_to.iter().map(|&v| sc.scale_theta(v)).collect(),
        p_k: series.k.iter().map(|&k| sc.scale_p(k * k * pde.mu)).collect(),
    };
    Ok((scaled, sc))
}
