//! IEC 60076-7 hotspot difference equations, ageing acceleration and
//! temporal loss of life.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::OperatingSeries;

/// Thermal constants of the IEC hotspot model.
///
/// There is deliberately no `Default`: the winding exponent `y` must always
/// be supplied by the caller.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IecParams {
    /// Hotspot rise over top oil at rated load [K].
    pub delta_theta_hr: f64,
    pub k21: f64,
    pub k22: f64,
    /// Winding time constant [min].
    pub tau_w: f64,
    /// Oil time constant [min].
    pub tau_to: f64,
    /// Winding exponent.
    pub y: f64,
    /// Step [s].
    pub dt: f64,
}

impl IecParams {
    /// Nameplate values of the 1100 kVA floating-PV distribution transformer.
    pub fn nameplate(y: f64, dt: f64) -> Self {
        Self {
            delta_theta_hr: 15.1,
            k21: 2.32,
            k22: 2.05,
            tau_w: 9.75,
            tau_to: 266.8,
            y,
            dt,
        }
    }

    /// Smaller of the two time constants, in seconds.
    pub fn tau_min_seconds(&self) -> f64 {
        self.tau_w.min(self.tau_to) * 60.0
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("delta_theta_hr", self.delta_theta_hr),
            ("k21", self.k21),
            ("k22", self.k22),
            ("tau_w", self.tau_w),
            ("tau_to", self.tau_to),
            ("y", self.y),
            ("dt", self.dt),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        let limit = self.tau_min_seconds() / 2.0;
        if self.dt > limit {
            return Err(Error::Stability { dt: self.dt, limit });
        }
        Ok(())
    }

    /// (υ₁, β₁, υ₂, β₂) of the difference equations, with Δt and τ in seconds.
    fn coefficients(&self) -> [f64; 4] {
        let ups1 = self.dt / (self.k22 * self.tau_w * 60.0);
        let beta1 = self.k21 * self.delta_theta_hr;
        let ups2 = self.k22 * self.dt / (self.tau_to * 60.0);
        let beta2 = (self.k21 - 1.0) * self.delta_theta_hr;
        [ups1, beta1, ups2, beta2]
    }
}

/// Internal rise states ΔΘ_H1, ΔΘ_H2 [K].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiseState {
    pub delta_h1: f64,
    pub delta_h2: f64,
}

impl RiseState {
    pub fn rise(&self) -> f64 {
        self.delta_h1 - self.delta_h2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HstTrajectory {
    pub theta_h: Vec<f64>,
    pub delta_h1: Vec<f64>,
    pub delta_h2: Vec<f64>,
}

impl HstTrajectory {
    /// Hotspot rise over top oil, ΔΘ_H = ΔΘ_H1 − ΔΘ_H2.
    pub fn rise(&self) -> Vec<f64> {
        self.delta_h1.iter().zip(&self.delta_h2).map(|(a, b)| a - b).collect()
    }
}

/// Steady-state initial condition for load `k0`.
pub fn hst_initial(k0: f64, theta_to0: f64, params: &IecParams) -> Result<(f64, RiseState)> {
    if !(k0 >= 0.0) {
        return Err(Error::InvalidParameter(format!("K0 must be >= 0, got {k0}")));
    }
    let ky = k0.powf(params.y);
    let state = RiseState {
        delta_h1: params.k21 * params.delta_theta_hr * ky,
        delta_h2: (params.k21 - 1.0) * params.delta_theta_hr * ky,
    };
    Ok((theta_to0 + params.delta_theta_hr * ky, state))
}

/// One explicit step of the two rise recursions under load `k`.
pub fn hst_rise_step(state: RiseState, k: f64, params: &IecParams) -> RiseState {
    let [ups1, beta1, ups2, beta2] = params.coefficients();
    let ky = k.powf(params.y);
    RiseState {
        delta_h1: state.delta_h1 + ups1 * (beta1 * ky - state.delta_h1),
        delta_h2: state.delta_h2 + ups2 * (beta2 * ky - state.delta_h2),
    }
}

/// Hotspot trajectory over a whole series, seeded from steady state.
pub fn hst_series(series: &OperatingSeries, params: &IecParams) -> Result<HstTrajectory> {
    series.validate()?;
    params.validate()?;
    if (series.dt - params.dt).abs() > 1e-9 * params.dt {
        return Err(Error::DtMismatch {
            series: series.dt,
            params: params.dt,
        });
    }
    let n = series.len();
    let mut out = HstTrajectory {
        theta_h: Vec::with_capacity(n),
        delta_h1: Vec::with_capacity(n),
        delta_h2: Vec::with_capacity(n),
    };
    let (_, mut state) = hst_initial(series.k[0], series.theta_to[0], params)?;
    for i in 0..n {
        if i > 0 {
            state = hst_rise_step(state, series.k[i], params);
        }
        out.theta_h.push(series.theta_to[i] + state.delta_h1 - state.delta_h2);
        out.delta_h1.push(state.delta_h1);
        out.delta_h2.push(state.delta_h2);
    }
    Ok(out)
}

/// Relative ageing rate, doubling every 6 K above 98 °C.
pub fn ageing_factor(theta: f64) -> f64 {
    ((theta - 98.0) / 6.0).exp2()
}

/// Cumulative loss of life [min] from ageing factors sampled every `dt` s.
pub fn lol_temporal(v: &[f64], dt: f64) -> Result<Vec<f64>> {
    if let Some(i) = v.iter().position(|x| !(*x >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "ageing factor must be >= 0 (sample {i}: {})",
            v[i]
        )));
    }
    let w = dt / 60.0;
    let mut acc = 0.0;
    Ok(v.iter()
        .map(|x| {
            acc += x * w;
            acc
        })
        .collect())
}
