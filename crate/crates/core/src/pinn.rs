//! Physics-informed training of the oil-temperature network.
//!
//! The network maps scaled (x, t) to scaled (Θ̂_O, Θ̂_A, P̂_K). Data terms
//! compare these against boundary and initial measurements; the physics
//! term penalizes the heat-diffusion residual at Latin-hypercube
//! collocation points. Four weighting schemes are supported: fixed scalar
//! weights (Vanilla), self-adaptive per-point weights trained by gradient
//! ascent (SA), residual-based attention (RBA), and a purely data-driven
//! baseline without the physics term (DataOnly).

use std::fmt;
use std::time::{Duration, Instant};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{AdamState, Jet, Mlp};
use crate::pde::{PdeParams, TemperatureField};
use crate::timeseries::{fmt_f64, normalize, OperatingSeries, ScaledSeries, ScalingInfo};

/// Names of the four loss families, in report order.
pub const TERM_NAMES: [&str; 4] = ["L_thetaO", "L_PK", "L_thetaA", "L_r"];

/// Stratified sample of `n` points in the open unit square: along each axis
/// every one of the `n` equal bins holds exactly one point.
pub fn sample_lhs<R: Rng>(n: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut axes = [(0..n).collect::<Vec<_>>(), (0..n).collect::<Vec<_>>()];
    for a in &mut axes {
        a.shuffle(rng);
    }
    let nf = n as f64;
    let mut jitter = || loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    };
    (0..n)
        .map(|i| [(axes[0][i] as f64 + jitter()) / nf, (axes[1][i] as f64 + jitter()) / nf])
        .collect()
}

/// A measured point with scaled targets for the three network outputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub t: f64,
    pub theta_o: f64,
    pub p_k: f64,
    pub theta_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSets {
    /// Bottom (x = 0) and top (x = 1) measurements.
    pub boundary: Vec<DataPoint>,
    /// Interior points at t = 0 carrying the initial profile.
    pub initial: Vec<DataPoint>,
    pub collocation: Vec<[f64; 2]>,
}

impl TrainingSets {
    /// Boundary and initial points as one data family.
    pub fn data(&self) -> impl Iterator<Item = &DataPoint> {
        self.boundary.iter().chain(&self.initial)
    }

    pub fn n_data(&self) -> usize {
        self.boundary.len() + self.initial.len()
    }

    fn data_at(&self, i: usize) -> &DataPoint {
        if i < self.boundary.len() {
            &self.boundary[i]
        } else {
            &self.initial[i - self.boundary.len()]
        }
    }

    /// Assemble the sets from a scaled series.
    ///
    /// All 2N boundary measurements are candidates; `n_boundary` of them are
    /// drawn without replacement. The initial profile is linear between the
    /// two boundary values at t = 0.
    pub fn build<R: Rng>(
        scaled: &ScaledSeries,
        n_boundary: usize,
        n_initial: usize,
        n_collocation: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let n = scaled.t.len();
        let available = 2 * n;
        if n_boundary == 0 || n_boundary > available {
            return Err(Error::InvalidParameter(format!(
                "boundary count {n_boundary} must lie in 1..={available}"
            )));
        }
        if n_collocation == 0 {
            return Err(Error::InvalidParameter("collocation count must be >= 1".into()));
        }
        let mut picks = sample(rng, available, n_boundary).into_vec();
        picks.sort_unstable();
        let boundary = picks
            .into_iter()
            .map(|idx| {
                let (i, top) = (idx / 2, idx % 2 == 1);
                DataPoint {
                    x: if top { 1.0 } else { 0.0 },
                    t: scaled.t[i],
                    theta_o: if top { scaled.theta_to[i] } else { scaled.theta_a[i] },
                    p_k: scaled.p_k[i],
                    theta_a: scaled.theta_a[i],
                }
            })
            .collect();
        let (bot0, top0) = (scaled.theta_a[0], scaled.theta_to[0]);
        let initial = (0..n_initial)
            .map(|j| {
                let x = (j as f64 + 1.0) / (n_initial as f64 + 1.0);
                DataPoint {
                    x,
                    t: 0.0,
                    theta_o: bot0 + (top0 - bot0) * x,
                    p_k: scaled.p_k[0],
                    theta_a: scaled.theta_a[0],
                }
            })
            .collect();
        let mut collocation = sample_lhs(n_collocation, rng);
        collocation.sort_by(|a, b| a[1].total_cmp(&b[1]));
        Ok(Self {
            boundary,
            initial,
            collocation,
        })
    }
}

/// Coefficients of the residual in scaled variables.
///
/// With ũ = (Θ̃_O, Θ̃_A, P̃_K) the scaled outputs, the physical residual
///
/// ```text
/// r = (1/α) ∂Θ_O/∂t − ∂²Θ_O/∂x² − (1/k)[(P0 + P_K)/V − h(Θ_O − Θ_A)]
/// ```
///
/// multiplied by H²/ΔΘ becomes
///
/// ```text
/// r̃ = c_t ∂ũ₀/∂t̃ − ∂²ũ₀/∂x̃² + c_h (ũ₀ − ũ₁) − c_p ũ₂ − c_0
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResidualCoefficients {
    pub c_t: f64,
    pub c_h: f64,
    pub c_p: f64,
    pub c_0: f64,
    /// H²/ΔΘ: converts a physical residual [K/m²] to r̃.
    pub to_scaled: f64,
}

impl ResidualCoefficients {
    pub fn new(pde: &PdeParams, sc: &ScalingInfo) -> Self {
        let h2 = pde.height * pde.height;
        let dtheta = sc.theta_range();
        let denom = pde.k * dtheta * pde.v_eff;
        Self {
            c_t: h2 / (pde.alpha * sc.t_scale),
            c_h: pde.h * h2 / pde.k,
            c_p: h2 * sc.p_range() / denom,
            c_0: h2 * (pde.p0 + sc.p_min) / denom,
            to_scaled: h2 / dtheta,
        }
    }

    /// Scaled residual r̃ from network outputs and input derivatives.
    pub fn scaled(&self, u: [f64; 3], du0_dt: f64, d2u0_dx2: f64) -> f64 {
        self.c_t * du0_dt - d2u0_dx2 + self.c_h * (u[0] - u[1]) - self.c_p * u[2] - self.c_0
    }

    /// Physical residual [K/m²].
    pub fn physical(&self, u: [f64; 3], du0_dt: f64, d2u0_dx2: f64) -> f64 {
        self.scaled(u, du0_dt, d2u0_dx2) / self.to_scaled
    }
}

/// Physical residual of the heat-diffusion equation at one scaled point.
pub fn residual(model: &Mlp, point: [f64; 2], pde: &PdeParams, scaling: &ScalingInfo) -> f64 {
    let e = model.input_derivatives(&[point]);
    let u = [e.u[[0, 0]], e.u[[0, 1]], e.u[[0, 2]]];
    ResidualCoefficients::new(pde, scaling).physical(u, e.du_dt[[0, 0]], e.d2u_dx2[[0, 0]])
}

/// Fixed scalar weights of the four loss terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixedWeights {
    pub theta_o: f64,
    pub p_k: f64,
    pub theta_a: f64,
    pub r: f64,
}

impl Default for FixedWeights {
    fn default() -> Self {
        Self {
            theta_o: 1.0,
            p_k: 1.0,
            theta_a: 1.0,
            r: 1.0,
        }
    }
}

/// Weighting scheme selection and hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchemeConfig {
    Vanilla {
        #[serde(default)]
        weights: FixedWeights,
    },
    /// Self-adaptive weights with mask m(λ) = λ².
    SelfAdaptive { rho: f64, init: f64 },
    /// Residual-based attention on the collocation residuals.
    ResidualAttention { gamma: f64, eta: f64, init: f64 },
    /// Data terms only; the physics residual carries zero weight.
    DataOnly,
}

impl SchemeConfig {
    pub fn vanilla() -> Self {
        Self::Vanilla {
            weights: FixedWeights::default(),
        }
    }

    pub fn self_adaptive() -> Self {
        Self::SelfAdaptive { rho: 0.01, init: 1.0 }
    }

    pub fn rba() -> Self {
        Self::ResidualAttention {
            gamma: 0.999,
            eta: 0.001,
            init: 0.0,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Vanilla { .. } => "vanilla",
            Self::SelfAdaptive { .. } => "sa",
            Self::ResidualAttention { .. } => "rba",
            Self::DataOnly => "data_only",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Vanilla { weights } => {
                let w = [weights.theta_o, weights.p_k, weights.theta_a, weights.r];
                if w.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(Error::InvalidParameter("vanilla weights must be >= 0".into()));
                }
            }
            Self::SelfAdaptive { rho, init } => {
                if !(rho > 0.0 && init >= 0.0) {
                    return Err(Error::InvalidParameter("SA needs rho > 0 and init >= 0".into()));
                }
            }
            Self::ResidualAttention { gamma, eta, init } => {
                if !((0.0..1.0).contains(&gamma) && eta > 0.0 && init >= 0.0) {
                    return Err(Error::InvalidParameter(
                        "RBA needs 0 <= gamma < 1, eta > 0 and init >= 0".into(),
                    ));
                }
            }
            Self::DataOnly => {}
        }
        Ok(())
    }
}

/// Self-adaptive weights, one vector per loss family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaState {
    pub rho: f64,
    pub theta_o: Vec<f64>,
    pub p_k: Vec<f64>,
    pub theta_a: Vec<f64>,
    pub r: Vec<f64>,
}

/// Residual-based attention weights over the collocation set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbaState {
    pub gamma: f64,
    pub eta: f64,
    pub lambda: Vec<f64>,
}

/// Mutable weighting state of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightingScheme {
    Vanilla(FixedWeights),
    SelfAdaptive(SaState),
    ResidualAttention(RbaState),
    DataOnly,
}

/// Self-adaptive mask m(λ) = λ².
pub fn sa_mask(lambda: f64) -> f64 {
    lambda * lambda
}

/// Gradient-ascent step λ ← max(0, λ + ρ·½·m′(λ)·e²) with m′(λ) = 2λ.
pub fn sa_update(lambda: &mut [f64], sq_errors: &[f64], rho: f64) {
    for (l, e2) in lambda.iter_mut().zip(sq_errors) {
        *l = (*l + rho * 0.5 * (2.0 * *l) * e2).max(0.0);
    }
}

/// λ_i ← γλ_i + η·|r_i| / max_j |r_j|. No-op when every residual is zero.
pub fn rba_update(lambda: &mut [f64], residuals: &[f64], gamma: f64, eta: f64) {
    let max = residuals.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    if !(max > 0.0) {
        return;
    }
    for (l, r) in lambda.iter_mut().zip(residuals) {
        *l = gamma * *l + eta * r.abs() / max;
    }
}

impl WeightingScheme {
    pub fn init(cfg: &SchemeConfig, sets: &TrainingSets) -> Result<Self> {
        cfg.validate()?;
        let nd = sets.n_data();
        let nc = sets.collocation.len();
        Ok(match *cfg {
            SchemeConfig::Vanilla { weights } => Self::Vanilla(weights),
            SchemeConfig::SelfAdaptive { rho, init } => Self::SelfAdaptive(SaState {
                rho,
                theta_o: vec![init; nd],
                p_k: vec![init; nd],
                theta_a: vec![init; nd],
                r: vec![init; nc],
            }),
            SchemeConfig::ResidualAttention { gamma, eta, init } => Self::ResidualAttention(RbaState {
                gamma,
                eta,
                lambda: vec![init; nc],
            }),
            SchemeConfig::DataOnly => Self::DataOnly,
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Vanilla(_) => "vanilla",
            Self::SelfAdaptive(_) => "sa",
            Self::ResidualAttention(_) => "rba",
            Self::DataOnly => "data_only",
        }
    }

    fn uses_physics(&self) -> bool {
        !matches!(self, Self::DataOnly)
    }

    fn check_sizes(&self, sets: &TrainingSets) -> Result<()> {
        let (nd, nc) = (sets.n_data(), sets.collocation.len());
        let ok = match self {
            Self::SelfAdaptive(s) => {
                s.theta_o.len() == nd && s.p_k.len() == nd && s.theta_a.len() == nd && s.r.len() == nc
            }
            Self::ResidualAttention(s) => s.lambda.len() == nc,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch(format!(
                "{} weights do not match {nd} data / {nc} collocation points",
                self.name()
            )))
        }
    }

    /// Per-point collocation weights, if the scheme has any.
    pub fn collocation_weights(&self) -> Option<&[f64]> {
        match self {
            Self::SelfAdaptive(s) => Some(&s.r),
            Self::ResidualAttention(s) => Some(&s.lambda),
            _ => None,
        }
    }

    /// (min, max, mean) over every adaptive weight.
    pub fn lambda_stats(&self) -> Option<(f64, f64, f64)> {
        let all: Vec<f64> = match self {
            Self::SelfAdaptive(s) => s.theta_o.iter().chain(&s.p_k).chain(&s.theta_a).chain(&s.r).copied().collect(),
            Self::ResidualAttention(s) => s.lambda.clone(),
            _ => return None,
        };
        let (lo, hi) = all.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        Some((lo, hi, all.iter().sum::<f64>() / all.len().max(1) as f64))
    }
}

/// Compound loss with its four terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub iteration: usize,
    pub total: f64,
    /// Weighted terms in [`TERM_NAMES`] order; `total` is their sum.
    pub terms: [f64; 4],
    /// Plain mean-squared errors of the same terms.
    pub mse: [f64; 4],
}

impl LossReport {
    /// Sum of the unweighted mean-squared terms; comparable across schemes.
    pub fn compound_mse(&self) -> f64 {
        self.mse.iter().sum()
    }
}

/// Errors of the data family at the given indices: (Θ_O, P_K, Θ_A) per point.
fn data_errors(model: &Mlp, sets: &TrainingSets, idx: &[usize]) -> (crate::nn::ForwardCache, Vec<[f64; 3]>) {
    let pts: Vec<[f64; 2]> = idx.iter().map(|&i| {
        let d = sets.data_at(i);
        [d.x, d.t]
    }).collect();
    let cache = model.forward_cached(&pts, Jet::Value);
    let u = cache.evaluation().u;
    let errs = idx
        .iter()
        .enumerate()
        .map(|(b, &i)| {
            let d = sets.data_at(i);
            [u[[b, 0]] - d.theta_o, u[[b, 2]] - d.p_k, u[[b, 1]] - d.theta_a]
        })
        .collect();
    (cache, errs)
}

fn collocation_residuals(
    model: &Mlp,
    sets: &TrainingSets,
    idx: &[usize],
    coef: &ResidualCoefficients,
) -> (crate::nn::ForwardCache, Vec<f64>) {
    let pts: Vec<[f64; 2]> = idx.iter().map(|&i| sets.collocation[i]).collect();
    let cache = model.forward_cached(&pts, Jet::Second);
    let e = cache.evaluation();
    let r = (0..idx.len())
        .map(|b| coef.scaled([e.u[[b, 0]], e.u[[b, 1]], e.u[[b, 2]]], e.du_dt[[b, 0]], e.d2u_dx2[[b, 0]]))
        .collect();
    (cache, r)
}

// Output column of each data term: Θ_O → 0, P_K → 2, Θ_A → 1.
const DATA_OUTPUT: [usize; 3] = [0, 2, 1];

/// Weighted loss over chosen subsets, optionally with its parameter gradient.
struct Evaluated {
    terms: [f64; 4],
    mse: [f64; 4],
    data_errors: Vec<[f64; 3]>,
    residuals: Vec<f64>,
    grad: Option<Vec<f64>>,
}

fn evaluate(
    model: &Mlp,
    sets: &TrainingSets,
    scheme: &WeightingScheme,
    coef: &ResidualCoefficients,
    data_idx: &[usize],
    coll_idx: &[usize],
    with_grad: bool,
) -> Evaluated {
    let mut terms = [0.0; 4];
    let mut mse = [0.0; 4];
    let mut grad = with_grad.then(|| vec![0.0; model.num_params()]);

    let (cache, errs) = data_errors(model, sets, data_idx);
    let nd = data_idx.len().max(1) as f64;
    let mut seeds = with_grad.then(|| cache.seeds());
    for (b, (&i, e)) in data_idx.iter().zip(&errs).enumerate() {
        for f in 0..3 {
            let e2 = e[f] * e[f];
            mse[f] += e2 / nd;
            // d(term)/d(error) for this point and family.
            let (term, slope) = match scheme {
                WeightingScheme::Vanilla(w) => {
                    let lam = [w.theta_o, w.p_k, w.theta_a][f];
                    (lam * e2 / nd, 2.0 * lam * e[f] / nd)
                }
                WeightingScheme::SelfAdaptive(s) => {
                    let m = sa_mask([&s.theta_o, &s.p_k, &s.theta_a][f][i]);
                    (0.5 * m * e2, m * e[f])
                }
                WeightingScheme::ResidualAttention(_) | WeightingScheme::DataOnly => (e2 / nd, 2.0 * e[f] / nd),
            };
            terms[f] += term;
            if let Some(s) = seeds.as_mut() {
                s.set_value(b, DATA_OUTPUT[f], slope);
            }
        }
    }
    if let (Some(g), Some(s)) = (grad.as_mut(), seeds.as_ref()) {
        model.backward_into(&cache, s, g);
    }

    let mut residuals = Vec::new();
    if !coll_idx.is_empty() {
        let (cache, r) = collocation_residuals(model, sets, coll_idx, coef);
        let nc = coll_idx.len() as f64;
        let mut seeds = (with_grad && scheme.uses_physics()).then(|| cache.seeds());
        for (b, (&j, &rv)) in coll_idx.iter().zip(&r).enumerate() {
            let r2 = rv * rv;
            mse[3] += r2 / nc;
            let (term, slope) = match scheme {
                WeightingScheme::Vanilla(w) => (w.r * r2 / nc, 2.0 * w.r * rv / nc),
                WeightingScheme::SelfAdaptive(s) => {
                    let m = sa_mask(s.r[j]);
                    (0.5 * m * r2, m * rv)
                }
                WeightingScheme::ResidualAttention(s) => {
                    let l = s.lambda[j];
                    (l * r2 / nc, 2.0 * l * rv / nc)
                }
                WeightingScheme::DataOnly => (0.0, 0.0),
            };
            terms[3] += term;
            if let Some(s) = seeds.as_mut() {
                s.set_dt(b, 0, slope * coef.c_t);
                s.set_dxx(b, 0, -slope);
                s.set_value(b, 0, slope * coef.c_h);
                s.set_value(b, 1, -slope * coef.c_h);
                s.set_value(b, 2, -slope * coef.c_p);
            }
        }
        if let (Some(g), Some(s)) = (grad.as_mut(), seeds.as_ref()) {
            model.backward_into(&cache, s, g);
        }
        residuals = r;
    }
    Evaluated {
        terms,
        mse,
        data_errors: errs,
        residuals,
        grad,
    }
}

const EVAL_CHUNK: usize = 4096;

/// Compound loss over the full training sets.
pub fn compute_loss(
    model: &Mlp,
    sets: &TrainingSets,
    scheme: &WeightingScheme,
    pde: &PdeParams,
    scaling: &ScalingInfo,
) -> Result<LossReport> {
    scheme.check_sizes(sets)?;
    let coef = ResidualCoefficients::new(pde, scaling);
    Ok(full_loss(model, sets, scheme, &coef, 0))
}

fn full_loss(model: &Mlp, sets: &TrainingSets, scheme: &WeightingScheme, coef: &ResidualCoefficients, iteration: usize) -> LossReport {
    let mut terms = [0.0; 4];
    let mut mse = [0.0; 4];
    let nd = sets.n_data();
    let nc = sets.collocation.len();
    let chunks = |n: usize| (0..n).step_by(EVAL_CHUNK).map(move |s| (s..(s + EVAL_CHUNK).min(n)).collect::<Vec<_>>());
    // Chunks are evaluated with per-chunk means; rescale to full-set means.
    for idx in chunks(nd) {
        let e = evaluate(model, sets, scheme, coef, &idx, &[], false);
        let w = idx.len() as f64 / nd as f64;
        let sum_scheme = matches!(scheme, WeightingScheme::SelfAdaptive(_));
        for f in 0..3 {
            terms[f] += if sum_scheme { e.terms[f] } else { e.terms[f] * w };
            mse[f] += e.mse[f] * w;
        }
    }
    for idx in chunks(nc) {
        let e = evaluate(model, sets, scheme, coef, &[], &idx, false);
        let w = idx.len() as f64 / nc as f64;
        let sum_scheme = matches!(scheme, WeightingScheme::SelfAdaptive(_));
        terms[3] += if sum_scheme { e.terms[3] } else { e.terms[3] * w };
        mse[3] += e.mse[3] * w;
    }
    LossReport {
        iteration,
        total: terms.iter().sum(),
        terms,
        mse,
    }
}

/// How many collocation points to draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollocationSize {
    /// Integer multiple of the available boundary measurements (2N).
    Multiple(f64),
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Layer widths, input 2 and output 3.
    pub widths: Vec<usize>,
    /// Fraction of the 2N boundary measurements used for training.
    pub boundary_fraction: f64,
    pub collocation: CollocationSize,
    /// Interior initial-condition points at t = 0.
    pub n_initial: usize,
    pub iterations: usize,
    pub lr: f64,
    /// Data points per Adam step; 0 uses the whole family.
    pub data_batch: usize,
    /// Collocation points per Adam step; 0 uses the whole set.
    pub collocation_batch: usize,
    /// Draw batches stratified over the time-ordered sets instead of
    /// uniformly at random.
    #[serde(default)]
    pub stratified_batches: bool,
    /// Full-set loss is recorded every this many iterations.
    pub log_every: usize,
    pub seed: u64,
}

impl TrainConfig {
    /// Desk-scale defaults: 3×50 tanh network, 75 % of the boundary data,
    /// 20 000 collocation points, 5 000 Adam iterations at lr 1e-3.
    pub fn desk() -> Self {
        Self {
            widths: vec![2, 50, 50, 50, 3],
            boundary_fraction: 0.75,
            collocation: CollocationSize::Count(20_000),
            n_initial: 64,
            iterations: 5_000,
            lr: 1e-3,
            data_batch: 512,
            collocation_batch: 1024,
            stratified_batches: true,
            log_every: 100,
            seed: 0,
        }
    }

    /// Full-scale settings: N_c = 10 × 2N, 20 000 Adam iterations.
    pub fn full() -> Self {
        Self {
            collocation: CollocationSize::Multiple(10.0),
            iterations: 20_000,
            ..Self::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.boundary_fraction > 0.0 && self.boundary_fraction <= 1.0) {
            return Err(Error::InvalidParameter("boundary fraction must lie in (0, 1]".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParameter("learning rate must be > 0".into()));
        }
        if self.log_every == 0 {
            return Err(Error::InvalidParameter("log_every must be >= 1".into()));
        }
        match self.collocation {
            CollocationSize::Multiple(m) if !(m > 0.0) => {
                return Err(Error::InvalidParameter("collocation multiple must be > 0".into()))
            }
            CollocationSize::Count(0) => {
                return Err(Error::InvalidParameter("collocation count must be >= 1".into()))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn n_boundary(&self, n_samples: usize) -> usize {
        ((2 * n_samples) as f64 * self.boundary_fraction).round().max(1.0) as usize
    }

    pub fn n_collocation(&self, n_samples: usize) -> usize {
        match self.collocation {
            CollocationSize::Multiple(m) => ((2 * n_samples) as f64 * m).round() as usize,
            CollocationSize::Count(c) => c,
        }
    }
}

/// Snapshot taken when the loss stops being finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceReport {
    pub iteration: usize,
    pub scheme: String,
    pub loss_terms: [f64; 4],
    pub gradient_norm: f64,
    /// (min, max, mean) of the adaptive weights, when the scheme has any.
    pub lambda_stats: Option<(f64, f64, f64)>,
}

impl fmt::Display for DivergenceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} loss not finite at iteration {} (terms {:?}, |grad| = {:e}",
            self.scheme, self.iteration, self.loss_terms, self.gradient_norm
        )?;
        if let Some((lo, hi, mean)) = self.lambda_stats {
            write!(f, ", lambda min/max/mean = {lo:e}/{hi:e}/{mean:e}")?;
        }
        write!(f, ")")
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Mlp,
    pub scheme: WeightingScheme,
    pub sets: TrainingSets,
    pub scaling: ScalingInfo,
    pub history: Vec<LossReport>,
    /// Full-set loss after the last iteration.
    pub final_loss: LossReport,
    /// Seconds spent in the optimization loop.
    pub wall_time_s: f64,
}

impl TrainOutcome {
    /// Mean wall time per Adam iteration.
    pub fn seconds_per_iteration(&self, iterations: usize) -> f64 {
        self.wall_time_s / iterations.max(1) as f64
    }
}

/// Draw a batch of `batch` indices out of `n`. Stratified draws take one
/// index from each of `batch` equal index ranges, so time-ordered sets are
/// covered evenly.
fn batch_indices<R: Rng>(rng: &mut R, n: usize, batch: usize, stratified: bool) -> Vec<usize> {
    if batch == 0 || batch >= n {
        (0..n).collect()
    } else if stratified {
        let w = n as f64 / batch as f64;
        (0..batch)
            .map(|k| (((k as f64 + rng.random::<f64>()) * w) as usize).min(n - 1))
            .collect()
    } else {
        sample(rng, n, batch).into_vec()
    }
}

/// Train a network for `series` under the given weighting scheme.
///
/// Each iteration draws a data batch and a collocation batch, takes one
/// Adam step on the weighted loss, then updates the adaptive weights of the
/// points in the batch from the errors measured before the step.
pub fn train(
    series: &OperatingSeries,
    pde: &PdeParams,
    scheme_cfg: &SchemeConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(series, pde, scheme_cfg, cfg)?;
    while !trainer.done() {
        trainer.step()?;
    }
    trainer.finish()
}

/// Optimization loop on prepared sets; `rng` drives the batch draws.
pub fn train_with_sets<R: Rng>(
    model: Mlp,
    sets: TrainingSets,
    scheme: WeightingScheme,
    scaling: ScalingInfo,
    pde: &PdeParams,
    cfg: &TrainConfig,
    rng: R,
) -> Result<TrainOutcome> {
    let mut trainer = Trainer::from_sets(model, sets, scheme, scaling, pde, cfg, rng)?;
    while !trainer.done() {
        trainer.step()?;
    }
    trainer.finish()
}

/// Training run that advances one Adam iteration at a time.
#[derive(Debug)]
pub struct Trainer<R> {
    model: Mlp,
    sets: TrainingSets,
    scheme: WeightingScheme,
    scaling: ScalingInfo,
    coef: ResidualCoefficients,
    adam: AdamState,
    cfg: TrainConfig,
    rng: R,
    history: Vec<LossReport>,
    iteration: usize,
    elapsed: Duration,
}

impl Trainer<ChaCha8Rng> {
    /// Sample the training sets and initialise the network from `cfg.seed`.
    pub fn new(series: &OperatingSeries, pde: &PdeParams, scheme_cfg: &SchemeConfig, cfg: &TrainConfig) -> Result<Self> {
        cfg.validate()?;
        pde.validate()?;
        let (scaled, scaling) = normalize(series, pde)?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let sets = TrainingSets::build(
            &scaled,
            cfg.n_boundary(series.len()),
            cfg.n_initial,
            cfg.n_collocation(series.len()),
            &mut rng,
        )?;
        let model = Mlp::glorot(&cfg.widths, rng.random())?;
        let scheme = WeightingScheme::init(scheme_cfg, &sets)?;
        Self::from_sets(model, sets, scheme, scaling, pde, cfg, rng)
    }
}

impl<R: Rng> Trainer<R> {
    pub fn from_sets(
        model: Mlp,
        sets: TrainingSets,
        scheme: WeightingScheme,
        scaling: ScalingInfo,
        pde: &PdeParams,
        cfg: &TrainConfig,
        rng: R,
    ) -> Result<Self> {
        cfg.validate()?;
        scheme.check_sizes(&sets)?;
        Ok(Self {
            adam: AdamState::new(model.num_params(), cfg.lr),
            coef: ResidualCoefficients::new(pde, &scaling),
            history: Vec::with_capacity(cfg.iterations / cfg.log_every + 2),
            model,
            sets,
            scheme,
            scaling,
            cfg: cfg.clone(),
            rng,
            iteration: 0,
            elapsed: Duration::ZERO,
        })
    }

    /// Iterations taken so far.
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Whether the configured number of iterations has been reached.
    pub fn done(&self) -> bool {
        self.iteration >= self.cfg.iterations
    }

    pub fn model(&self) -> &Mlp {
        &self.model
    }

    /// Time spent inside [`Trainer::step`].
    pub fn elapsed(&self) -> Duration {
        self.elapsed
    }

    /// One Adam iteration, preceded by a full-set loss record every
    /// `log_every` iterations.
    pub fn step(&mut self) -> Result<()> {
        let started = Instant::now();
        let result = self.step_inner();
        self.elapsed += started.elapsed();
        result
    }

    fn step_inner(&mut self) -> Result<()> {
        let it = self.iteration;
        let (sets, scheme, coef) = (&self.sets, &self.scheme, &self.coef);
        if it % self.cfg.log_every == 0 {
            let report = full_loss(&self.model, sets, scheme, coef, it);
            check_finite(&report, scheme, it, 0.0)?;
            self.history.push(report);
        }
        let rng = &mut self.rng;
        let data_idx = batch_indices(rng, sets.n_data(), self.cfg.data_batch, self.cfg.stratified_batches);
        let coll_idx = if scheme.uses_physics() {
            batch_indices(rng, sets.collocation.len(), self.cfg.collocation_batch, self.cfg.stratified_batches)
        } else {
            Vec::new()
        };
        let ev = evaluate(&self.model, sets, scheme, coef, &data_idx, &coll_idx, true);
        let grad = ev.grad.expect("gradient requested");
        let gnorm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        let batch_report = LossReport {
            iteration: it,
            total: ev.terms.iter().sum(),
            terms: ev.terms,
            mse: ev.mse,
        };
        check_finite(&batch_report, scheme, it, gnorm)?;
        if !gnorm.is_finite() {
            return Err(divergence(&batch_report, scheme, it, gnorm));
        }
        self.adam.step(self.model.params_mut(), &grad)?;

        match &mut self.scheme {
            WeightingScheme::SelfAdaptive(s) => {
                let rho = s.rho;
                for (f, lam) in [&mut s.theta_o, &mut s.p_k, &mut s.theta_a].into_iter().enumerate() {
                    for (&i, e) in data_idx.iter().zip(&ev.data_errors) {
                        sa_update(std::slice::from_mut(&mut lam[i]), &[e[f] * e[f]], rho);
                    }
                }
                for (&j, r) in coll_idx.iter().zip(&ev.residuals) {
                    sa_update(std::slice::from_mut(&mut s.r[j]), &[r * r], rho);
                }
            }
            WeightingScheme::ResidualAttention(s) => {
                let mut batch: Vec<f64> = coll_idx.iter().map(|&j| s.lambda[j]).collect();
                rba_update(&mut batch, &ev.residuals, s.gamma, s.eta);
                for (&j, l) in coll_idx.iter().zip(batch) {
                    s.lambda[j] = l;
                }
            }
            _ => {}
        }
        self.iteration += 1;
        Ok(())
    }

    /// Record the final full-set loss and hand back the trained state.
    pub fn finish(mut self) -> Result<TrainOutcome> {
        let it = self.iteration;
        let final_loss = full_loss(&self.model, &self.sets, &self.scheme, &self.coef, it);
        check_finite(&final_loss, &self.scheme, it, 0.0)?;
        self.history.push(final_loss);
        Ok(TrainOutcome {
            model: self.model,
            scheme: self.scheme,
            sets: self.sets,
            scaling: self.scaling,
            history: self.history,
            final_loss,
            wall_time_s: self.elapsed.as_secs_f64(),
        })
    }
}

fn divergence(report: &LossReport, scheme: &WeightingScheme, it: usize, gnorm: f64) -> Error {
    Error::Diverged(Box::new(DivergenceReport {
        iteration: it,
        scheme: scheme.name().to_string(),
        loss_terms: report.terms,
        gradient_norm: gnorm,
        lambda_stats: scheme.lambda_stats(),
    }))
}

fn check_finite(report: &LossReport, scheme: &WeightingScheme, it: usize, gnorm: f64) -> Result<()> {
    if report.total.is_finite() && report.mse.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(divergence(report, scheme, it, gnorm))
    }
}

/// Rectangular evaluation grid in scaled coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x: Vec<f64>,
    pub t: Vec<f64>,
}

impl GridSpec {
    /// Grid matching an existing field (x fractions, times in seconds).
    pub fn matching(field: &TemperatureField, scaling: &ScalingInfo) -> Self {
        Self {
            x: field.x_grid.clone(),
            t: field.t_grid.iter().map(|&t| scaling.scale_t(t)).collect(),
        }
    }
}

/// Evaluate Θ̂_O on `grid` and return it in °C with physical times.
pub fn predict_field(model: &Mlp, grid: &GridSpec, scaling: &ScalingInfo) -> Result<TemperatureField> {
    // A tiny tolerance absorbs rounding in t/T at the final sample.
    let inside = |v: &f64| (-1e-12..=1.0 + 1e-12).contains(v);
    if grid.x.is_empty() || grid.t.is_empty() {
        return Err(Error::GridOutOfDomain("empty grid".into()));
    }
    if !grid.x.iter().all(inside) || !grid.t.iter().all(inside) {
        return Err(Error::GridOutOfDomain("coordinates must lie in [0,1]".into()));
    }
    let nt = grid.t.len();
    let mut values = Vec::with_capacity(grid.x.len() * nt);
    let mut pts = Vec::with_capacity(nt);
    for &x in &grid.x {
        pts.clear();
        pts.extend(grid.t.iter().map(|&t| [x, t]));
        for chunk in pts.chunks(EVAL_CHUNK) {
            let u = model.forward(chunk);
            values.extend(u.column(0).iter().map(|&v| scaling.unscale_theta(v)));
        }
    }
    let mut field = TemperatureField::new(
        grid.x.clone(),
        grid.t.iter().map(|&t| scaling.unscale_t(t)).collect(),
        values,
    )?;
    field.scaling = Some(*scaling);
    Ok(field)
}

/// Predict on exactly the grid of `reference` (same x fractions and times).
pub fn predict_matching(model: &Mlp, reference: &TemperatureField, scaling: &ScalingInfo) -> Result<TemperatureField> {
    let mut f = predict_field(model, &GridSpec::matching(reference, scaling), scaling)?;
    f.t_grid = reference.t_grid.clone();
    Ok(f)
}

/// Loss history as CSV: iteration, total, four weighted terms, four MSEs.
pub fn write_loss_history<W: std::io::Write>(history: &[LossReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["iteration".to_string(), "total".to_string()];
    header.extend(TERM_NAMES.iter().map(|n| n.to_string()));
    header.extend(TERM_NAMES.iter().map(|n| format!("mse_{n}")));
    w.write_record(&header)?;
    for r in history {
        let mut row = vec![r.iteration.to_string(), fmt_f64(r.total)];
        row.extend(r.terms.iter().chain(&r.mse).map(|v| fmt_f64(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Collocation weights as CSV (x, t, lambda); nothing for fixed-weight schemes.
pub fn write_lambda_snapshot<W: std::io::Write>(scheme: &WeightingScheme, sets: &TrainingSets, writer: W) -> Result<bool> {
    let Some(lambda) = scheme.collocation_weights() else {
        return Ok(false);
    };
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["x", "t", "lambda"])?;
    for (p, l) in sets.collocation.iter().zip(lambda) {
        w.write_record([fmt_f64(p[0]), fmt_f64(p[1]), fmt_f64(*l)])?;
    }
    w.flush()?;
    Ok(true)
}
