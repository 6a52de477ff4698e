//! Finite-difference reference solution of the 1D transformer oil
//! heat-diffusion problem
//!
//! ```text
//! ρc_p ∂Θ/∂t = k ∂²Θ/∂x² + (P0 + P_K(t))/V_eff − h (Θ − Θ_A(t))
//! Θ(0,t) = Θ_A(t),  Θ(H,t) = Θ_TO(t)
//! ```
//!
//! discretized by second-order central differences in x and Crank–Nicolson
//! in t. Manufactured solutions verify the order of accuracy.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::timeseries::{fmt_f64, OperatingSeries, ScalingInfo};

/// Physical constants of the diffusion model.
///
/// Defaults are illustrative effective values (convection-enhanced
/// diffusivity and conductivity). The diffusion time H²/α is about ten
/// hours, so the interior follows the daily load cycle with a visible lag,
/// and the loss heating lifts the core up to about 8 K above the linear
/// profile between the boundaries on the desk profile.
/// They are not measured properties of any transformer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdeParams {
    /// Thermal diffusivity α [m²/s].
    pub alpha: f64,
    /// Thermal conductivity k [W/(m·K)].
    pub k: f64,
    /// Volumetric convective exchange coefficient h [W/(m³·K)].
    pub h: f64,
    /// No-load losses [W].
    pub p0: f64,
    /// Rated load losses [W].
    pub mu: f64,
    /// Tank height H [m].
    pub height: f64,
    /// Effective heated volume the losses are spread over [m³].
    pub v_eff: f64,
}

impl Default for PdeParams {
    fn default() -> Self {
        Self {
            alpha: 6.5e-5,
            k: 200.0,
            h: 100.0,
            p0: 842.0,
            mu: 9800.0,
            height: 1.5,
            v_eff: 1.0,
        }
    }
}

impl PdeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("k", self.k), ("height", self.height), ("v_eff", self.v_eff)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        for (name, v) in [("h", self.h), ("p0", self.p0), ("mu", self.mu)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Volumetric heat capacity ρc_p = k/α.
    pub fn rho_cp(&self) -> f64 {
        self.k / self.alpha
    }

    /// Volumetric heat generation (P0 + P_K)/V_eff for load factor `load`.
    pub fn heat_density(&self, load: f64) -> f64 {
        (self.p0 + load * load * self.mu) / self.v_eff
    }
}

/// Θ(x,t) on a rectangular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureField {
    /// Fractional heights in [0,1], ascending.
    pub x_grid: Vec<f64>,
    /// Times [s] relative to the series start, ascending.
    pub t_grid: Vec<f64>,
    /// Row-major Nx × Nt values [°C]; row `i` is height `x_grid[i]`.
    pub values: Vec<f64>,
    #[serde(default)]
    pub scaling: Option<ScalingInfo>,
}

const FIELD_MAGIC: &[u8; 4] = b"THF1";

impl TemperatureField {
    pub fn new(x_grid: Vec<f64>, t_grid: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        let f = Self {
            x_grid,
            t_grid,
            values,
            scaling: None,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.nx() * self.nt() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {}x{} grid",
                self.values.len(),
                self.nx(),
                self.nt()
            )));
        }
        for (name, g) in [("x", &self.x_grid), ("t", &self.t_grid)] {
            if g.is_empty() || g.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::ShapeMismatch(format!("{name} grid must be strictly increasing")));
            }
        }
        Ok(())
    }

    pub fn nx(&self) -> usize {
        self.x_grid.len()
    }

    pub fn nt(&self) -> usize {
        self.t_grid.len()
    }

    pub fn get(&self, ix: usize, it: usize) -> f64 {
        self.values[ix * self.nt() + it]
    }

    pub fn row(&self, ix: usize) -> &[f64] {
        let nt = self.nt();
        &self.values[ix * nt..(ix + 1) * nt]
    }

    pub fn column(&self, it: usize) -> Vec<f64> {
        (0..self.nx()).map(|ix| self.get(ix, it)).collect()
    }

    /// Values at fractional height `x`, linearly interpolated between rows.
    pub fn profile_at_height(&self, x: f64) -> Vec<f64> {
        let n = self.nx();
        if n == 1 {
            return self.row(0).to_vec();
        }
        let j = match self.x_grid.iter().position(|&g| g >= x) {
            Some(0) => 0,
            Some(j) => j - 1,
            None => n - 2,
        }
        .min(n - 2);
        let (x0, x1) = (self.x_grid[j], self.x_grid[j + 1]);
        let w = ((x - x0) / (x1 - x0)).clamp(0.0, 1.0);
        self.row(j)
            .iter()
            .zip(self.row(j + 1))
            .map(|(a, b)| if w == 0.0 { *a } else { a + w * (b - a) })
            .collect()
    }

    /// Same grid with every value replaced by `f(value)`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.x_grid == other.x_grid && self.t_grid == other.t_grid
    }

    /// Long-format CSV: `x,t,theta`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["x", "t", "theta"])?;
        for (ix, &x) in self.x_grid.iter().enumerate() {
            for (it, &t) in self.t_grid.iter().enumerate() {
                w.write_record([fmt_f64(x), fmt_f64(t), fmt_f64(self.get(ix, it))])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut xs: Vec<f64> = Vec::new();
        let mut ts: Vec<f64> = Vec::new();
        let mut values = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64> {
                let cell = rec.get(c).unwrap_or("");
                cell.trim().parse().map_err(|_| Error::NonNumeric {
                    row: i + 1,
                    column: ["x", "t", "theta"][c].into(),
                    value: cell.into(),
                })
            };
            let (x, t, v) = (num(0)?, num(1)?, num(2)?);
            if xs.last() != Some(&x) {
                xs.push(x);
            }
            if xs.len() == 1 {
                ts.push(t);
            }
            values.push(v);
        }
        Self::new(xs, ts, values)
    }

    /// Binary dump: `THF1`, Nx and Nt as u64 LE, the x grid, the t grid,
    /// then the row-major values, all f64 LE.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(FIELD_MAGIC)?;
        w.write_all(&(self.nx() as u64).to_le_bytes())?;
        w.write_all(&(self.nt() as u64).to_le_bytes())?;
        for v in self.x_grid.iter().chain(&self.t_grid).chain(&self.values) {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != FIELD_MAGIC {
            return Err(Error::Format(format!("bad field magic {magic:?}")));
        }
        let nx = read_u64(&mut r)? as usize;
        let nt = read_u64(&mut r)? as usize;
        let x_grid = read_f64s(&mut r, nx)?;
        let t_grid = read_f64s(&mut r, nt)?;
        let values = read_f64s(&mut r, nx * nt)?;
        Self::new(x_grid, t_grid, values)
    }

    pub fn save(&self, csv_path: impl AsRef<Path>, bin_path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(csv_path)?))?;
        self.write_binary(std::io::BufWriter::new(std::fs::File::create(bin_path)?))
    }

    pub fn load_binary(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Solve a tridiagonal system in place (forward elimination, back
/// substitution). `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64]) -> Result<()> {
    let n = rhs.len();
    if lower.len() != n || diag.len() != n || upper.len() != n {
        return Err(Error::ShapeMismatch("tridiagonal band lengths".into()));
    }
    if n == 0 {
        return Ok(());
    }
    let mut c = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 {
        return Err(Error::Numerical("singular tridiagonal system".into()));
    }
    c[0] = upper[0] / pivot;
    rhs[0] /= pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::Numerical("singular tridiagonal system".into()));
        }
        c[i] = upper[i] / pivot;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
    Ok(())
}

/// Time-dependent data of one diffusion problem.
struct Forcing<'a> {
    bottom: &'a dyn Fn(f64) -> f64,
    top: &'a dyn Fn(f64) -> f64,
    ambient: &'a dyn Fn(f64) -> f64,
    /// (P0 + P_K)/V_eff [W/m³].
    heat: &'a dyn Fn(f64) -> f64,
    /// Additional source [W/m³] at (physical x, t).
    extra: Option<&'a dyn Fn(f64, f64) -> f64>,
}

/// Crank–Nicolson integration over `times`, taking `substeps` equal steps
/// between consecutive output times. Returns Nx × Nt row-major values.
fn integrate(
    params: &PdeParams,
    forcing: &Forcing<'_>,
    nx: usize,
    initial: &[f64],
    times: &[f64],
    substeps: usize,
) -> Result<Vec<f64>> {
    let nt = times.len();
    let dx = params.height / (nx - 1) as f64;
    let xs: Vec<f64> = (0..nx).map(|i| i as f64 * dx).collect();
    let a = params.alpha / (dx * dx);
    let c = params.alpha * params.h / params.k;
    let src_scale = params.alpha / params.k;
    let source = |i: usize, t: f64| -> f64 {
        let mut q = (forcing.heat)(t) + params.h * (forcing.ambient)(t);
        if let Some(extra) = forcing.extra {
            q += extra(xs[i], t);
        }
        src_scale * q
    };

    let mut out = vec![0.0; nx * nt];
    let mut theta = initial.to_vec();
    theta[0] = (forcing.bottom)(times[0]);
    theta[nx - 1] = (forcing.top)(times[0]);
    let store = |out: &mut Vec<f64>, theta: &[f64], it: usize| {
        for (i, &v) in theta.iter().enumerate() {
            out[i * nt + it] = v;
        }
    };
    store(&mut out, &theta, 0);

    let m = nx - 2;
    let mut lower = vec![0.0; m];
    let mut diag = vec![0.0; m];
    let mut upper = vec![0.0; m];
    let mut rhs = vec![0.0; m];
    for it in 1..nt {
        let (t_start, t_end) = (times[it - 1], times[it]);
        let tau = (t_end - t_start) / substeps as f64;
        let half = 0.5 * tau;
        for s in 0..substeps {
            let t0 = t_start + s as f64 * tau;
            let t1 = if s + 1 == substeps { t_end } else { t0 + tau };
            let (b1, top1) = ((forcing.bottom)(t1), (forcing.top)(t1));
            for j in 0..m {
                let i = j + 1;
                let lap = theta[i - 1] - 2.0 * theta[i] + theta[i + 1];
                rhs[j] = theta[i]
                    + half * (a * lap - c * theta[i])
                    + half * (source(i, t0) + source(i, t1));
                lower[j] = -half * a;
                upper[j] = -half * a;
                diag[j] = 1.0 + half * (2.0 * a + c);
            }
            rhs[0] += half * a * b1;
            rhs[m - 1] += half * a * top1;
            solve_tridiagonal(&lower, &diag, &upper, &mut rhs)?;
            theta[0] = b1;
            theta[nx - 1] = top1;
            theta[1..nx - 1].copy_from_slice(&rhs);
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(format!("non-finite temperature at output step {it}")));
        }
        store(&mut out, &theta, it);
    }
    Ok(out)
}

/// Discretization options of the reference solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub nx: usize,
    /// Crank–Nicolson steps per series sample interval.
    pub substeps: usize,
    /// Initial profile on the `nx` nodes; linear between the boundary
    /// values when absent.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            nx: 101,
            substeps: 1,
            initial: None,
        }
    }
}

/// Reference oil temperature field driven by an operating series.
pub fn solve_pde(series: &OperatingSeries, params: &PdeParams, opts: &SolverOptions) -> Result<TemperatureField> {
    series.validate()?;
    params.validate()?;
    let nx = opts.nx;
    if nx < 11 {
        return Err(Error::InvalidParameter(format!("nx must be >= 11, got {nx}")));
    }
    if opts.substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be >= 1".into()));
    }
    let dt = series.dt;
    let p_k: Vec<f64> = series.k.iter().map(|k| k * k * params.mu).collect();
    let bottom = |t: f64| OperatingSeries::interp(&series.theta_a, dt, t);
    let top = |t: f64| OperatingSeries::interp(&series.theta_to, dt, t);
    let heat = |t: f64| (params.p0 + OperatingSeries::interp(&p_k, dt, t)) / params.v_eff;
    let forcing = Forcing {
        bottom: &bottom,
        top: &top,
        ambient: &bottom,
        heat: &heat,
        extra: None,
    };
    let initial = match &opts.initial {
        Some(init) if init.len() != nx => {
            return Err(Error::ShapeMismatch(format!(
                "initial profile has {} nodes, expected {nx}",
                init.len()
            )))
        }
        Some(init) => init.clone(),
        None => linear_profile(series.theta_a[0], series.theta_to[0], nx),
    };
    let times: Vec<f64> = (0..series.len()).map(|i| series.time(i)).collect();
    let values = integrate(params, &forcing, nx, &initial, &times, opts.substeps)?;
    let x_grid = unit_grid(nx);
    TemperatureField::new(x_grid, times, values)
}

pub fn unit_grid(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.0];
    }
    let mut g: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    g[n - 1] = 1.0;
    g
}

fn linear_profile(bottom: f64, top: f64, n: usize) -> Vec<f64> {
    unit_grid(n).iter().map(|&x| bottom + (top - bottom) * x).collect()
}

/// Closed-form steady state of k·Θ'' + Q − h(Θ − Θ_A) = 0 on [0, H] with
/// Θ(0) = `bottom`, Θ(H) = `top`, evaluated at fractional height `xf`.
pub fn steady_state_profile(params: &PdeParams, load: f64, ambient: f64, bottom: f64, top: f64, xf: f64) -> f64 {
    let q = params.heat_density(load);
    let hgt = params.height;
    let x = xf * hgt;
    if params.h == 0.0 {
        // Θ = −Q x²/(2k) + c1 x + c0
        let c0 = bottom;
        let c1 = (top - bottom + q * hgt * hgt / (2.0 * params.k)) / hgt;
        return -q * x * x / (2.0 * params.k) + c1 * x + c0;
    }
    let m = (params.h / params.k).sqrt();
    let base = ambient + q / params.h;
    let (pa, pb) = (bottom - base, top - base);
    let b = (pb - pa * (m * hgt).cosh()) / (m * hgt).sinh();
    base + pa * (m * x).cosh() + b * (m * x).sinh()
}

/// Constant load and ambient temperature driving a manufactured solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MmsDrive {
    pub load: f64,
    pub ambient: f64,
}

/// Registered smooth solutions with closed-form derivatives.
///
/// With ξ = x/H:
/// * id 0: Θ* = c
/// * id 1: Θ* = sin(πξ)·e^{−t} + 20 + 10ξ
/// * id 2: Θ* = 40 + 10·cos(πξ)·e^{−t/2} + 5·t·ξ
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ManufacturedSolution {
    Constant(f64),
    DecayingSine,
    CosineDrift,
}

impl ManufacturedSolution {
    pub fn from_id(id: u32) -> Result<Self> {
        match id {
            0 => Ok(Self::Constant(50.0)),
            1 => Ok(Self::DecayingSine),
            2 => Ok(Self::CosineDrift),
            other => Err(Error::UnknownTarget(other)),
        }
    }

    /// (Θ*, ∂Θ*/∂t, ∂²Θ*/∂x²) at physical (x, t).
    pub fn eval(&self, x: f64, t: f64, height: f64) -> (f64, f64, f64) {
        let xi = x / height;
        match *self {
            Self::Constant(c) => (c, 0.0, 0.0),
            Self::DecayingSine => {
                let s = (PI * xi).sin() * (-t).exp();
                (s + 20.0 + 10.0 * xi, -s, -(PI / height).powi(2) * s)
            }
            Self::CosineDrift => {
                let c = 10.0 * (PI * xi).cos() * (-0.5 * t).exp();
                (40.0 + c + 5.0 * t * xi, -0.5 * c + 5.0 * xi, -(PI / height).powi(2) * c)
            }
        }
    }
}

/// Extra source that makes `target` an exact solution of the forced PDE:
/// q_extra = ρc_p Θ*_t − k Θ*_xx − [(P0 + P_K)/V − h(Θ* − Θ_A)].
pub fn mms_source(x: f64, t: f64, target: &ManufacturedSolution, params: &PdeParams, drive: &MmsDrive) -> f64 {
    let (u, ut, uxx) = target.eval(x, t, params.height);
    params.rho_cp() * ut - params.k * uxx - (params.heat_density(drive.load) - params.h * (u - drive.ambient))
}

/// Solve the manufactured problem on `nx` nodes up to `t_end` with
/// `steps` Crank–Nicolson steps. Returns the field (x in [0,1]) and the
/// L∞ error against the exact solution over all stored nodes.
pub fn solve_manufactured(
    target: &ManufacturedSolution,
    params: &PdeParams,
    drive: &MmsDrive,
    nx: usize,
    t_end: f64,
    steps: usize,
) -> Result<(TemperatureField, f64)> {
    params.validate()?;
    if nx < 3 || steps == 0 || !(t_end > 0.0) {
        return Err(Error::InvalidParameter("manufactured problem needs nx >= 3, steps >= 1, t_end > 0".into()));
    }
    let hgt = params.height;
    let bottom = |t: f64| target.eval(0.0, t, hgt).0;
    let top = |t: f64| target.eval(hgt, t, hgt).0;
    let ambient = |_t: f64| drive.ambient;
    let q = params.heat_density(drive.load);
    let heat = |_t: f64| q;
    let extra = |x: f64, t: f64| mms_source(x, t, target, params, drive);
    let forcing = Forcing {
        bottom: &bottom,
        top: &top,
        ambient: &ambient,
        heat: &heat,
        extra: Some(&extra),
    };
    let x_grid = unit_grid(nx);
    let initial: Vec<f64> = x_grid.iter().map(|&xf| target.eval(xf * hgt, 0.0, hgt).0).collect();
    let times = [0.0, t_end];
    let values = integrate(params, &forcing, nx, &initial, &times, steps)?;
    let field = TemperatureField::new(x_grid, times.to_vec(), values)?;
    let mut err: f64 = 0.0;
    for (ix, &xf) in field.x_grid.iter().enumerate() {
        for (it, &t) in field.t_grid.iter().enumerate() {
            err = err.max((field.get(ix, it) - target.eval(xf * hgt, t, hgt).0).abs());
        }
    }
    Ok((field, err))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub nx: Vec<usize>,
    pub errors: Vec<f64>,
    /// log2(e_i / e_{i+1}) for consecutive refinements.
    pub orders: Vec<f64>,
}

/// Observed spatial order of accuracy under successive grid halving.
pub fn convergence_study(
    target: &ManufacturedSolution,
    params: &PdeParams,
    drive: &MmsDrive,
    nx_list: &[usize],
    t_end: f64,
    steps: usize,
) -> Result<ConvergenceReport> {
    if nx_list.len() < 3 {
        return Err(Error::InvalidParameter("convergence study needs at least 3 grids".into()));
    }
    for w in nx_list.windows(2) {
        if w[0] < 2 || w[1] - 1 != 2 * (w[0] - 1) {
            return Err(Error::InvalidParameter(format!(
                "grids must halve the spacing: {} -> {}",
                w[0], w[1]
            )));
        }
    }
    let errors = nx_list
        .iter()
        .map(|&nx| solve_manufactured(target, params, drive, nx, t_end, steps).map(|(_, e)| e))
        .collect::<Result<Vec<_>>>()?;
    let orders = errors.windows(2).map(|w| (w[0] / w[1]).log2()).collect();
    Ok(ConvergenceReport {
        nx: nx_list.to_vec(),
        errors,
        orders,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mms_params() -> PdeParams {
        PdeParams {
            alpha: 0.1,
            k: 1.0,
            h: 0.5,
            p0: 1.0,
            mu: 2.0,
            height: 1.0,
            v_eff: 1.0,
        }
    }

    const DRIVE: MmsDrive = MmsDrive { load: 0.5, ambient: 20.0 };

    #[test]
    fn thomas_matches_dense_solution() {
        // [2 -1 0; -1 2 -1; 0 -1 2] x = [1 0 1] has x = [1 1 1]
        let mut rhs = vec![1.0, 0.0, 1.0];
        solve_tridiagonal(&[0.0, -1.0, -1.0], &[2.0; 3], &[-1.0, -1.0, 0.0], &mut rhs).unwrap();
        for v in rhs {
            assert!((v - 1.0).abs() < 1e-14);
        }
        let mut rhs = vec![1.0, 1.0];
        assert!(solve_tridiagonal(&[0.0, 1.0], &[0.0, 1.0], &[1.0, 0.0], &mut rhs).is_err());
    }

    #[test]
    fn constant_solution_is_preserved() {
        let s = OperatingSeries::new(0.0, 60.0, vec![0.7; 50], vec![30.0; 50], vec![30.0; 50], None).unwrap();
        let p = PdeParams {
            h: 0.0,
            p0: 0.0,
            mu: 0.0,
            ..PdeParams::default()
        };
        let f = solve_pde(&s, &p, &SolverOptions { nx: 21, ..Default::default() }).unwrap();
        assert!(f.values.iter().all(|&v| (v - 30.0).abs() < 1e-12));
    }

    #[test]
    fn mms_source_constant_target() {
        let p = mms_params();
        let q = mms_source(0.3, 0.7, &ManufacturedSolution::Constant(50.0), &p, &DRIVE);
        let expected = -(p.p0 + 0.25 * p.mu) + p.h * (50.0 - 20.0);
        assert!((q - expected).abs() < 1e-12);
    }

    #[test]
    fn mms_source_decaying_sine_term() {
        // With h = 0 and no losses only (kπ² − ρc_p) sin(πx) e^{−t} remains.
        let p = PdeParams {
            h: 0.0,
            p0: 0.0,
            mu: 0.0,
            ..mms_params()
        };
        let (x, t) = (0.3, 0.4);
        let q = mms_source(x, t, &ManufacturedSolution::DecayingSine, &p, &DRIVE);
        let expected = (p.k * PI * PI - p.rho_cp()) * (PI * x).sin() * (-t).exp();
        assert!((q - expected).abs() < 1e-12);
    }

    #[test]
    fn mms_source_spot_value_target2() {
        // Independent symbolic evaluation (sympy) of
        // ρc_p Θ_t − kΘ_xx − (P0 + K²μ − h(Θ − Θ_A)) at (0.5, 0) with
        // α=0.1, k=1, h=0.5, P0=1, μ=2, H=1, K=0.5, Θ_A=20.
        let q = mms_source(0.5, 0.0, &ManufacturedSolution::from_id(2).unwrap(), &mms_params(), &DRIVE);
        assert!((q - 33.5).abs() < 1e-12, "{q}");
    }

    #[test]
    fn unknown_target_id() {
        assert!(matches!(ManufacturedSolution::from_id(9), Err(Error::UnknownTarget(9))));
    }

    #[test]
    fn convergence_requires_refinement() {
        let p = mms_params();
        let t = ManufacturedSolution::DecayingSine;
        assert!(convergence_study(&t, &p, &DRIVE, &[26, 26, 51], 1.0, 10).is_err());
        assert!(convergence_study(&t, &p, &DRIVE, &[26, 51], 1.0, 10).is_err());
    }

    #[test]
    fn steady_state_matches_closed_form() {
        let p = PdeParams::default();
        let n = 400;
        let s = OperatingSeries::new(0.0, 3600.0, vec![0.6; n], vec![20.0; n], vec![45.0; n], None).unwrap();
        let f = solve_pde(&s, &p, &SolverOptions { nx: 201, substeps: 1, initial: None }).unwrap();
        let last = f.nt() - 1;
        for (ix, &xf) in f.x_grid.iter().enumerate() {
            let exact = steady_state_profile(&p, 0.6, 20.0, 20.0, 45.0, xf);
            assert!((f.get(ix, last) - exact).abs() < 2e-3, "x={xf}: {} vs {exact}", f.get(ix, last));
        }
    }

    #[test]
    fn boundary_rows_follow_series() {
        let s = crate::timeseries::synthesize_profile(1, 60.0, &Default::default(), 3).unwrap();
        let f = solve_pde(&s, &PdeParams::default(), &SolverOptions { nx: 21, ..Default::default() }).unwrap();
        assert_eq!(f.row(0), s.theta_a.as_slice());
        assert_eq!(f.row(20), s.theta_to.as_slice());
    }

    #[test]
    fn rejects_coarse_grid() {
        let s = OperatingSeries::new(0.0, 60.0, vec![0.0; 3], vec![20.0; 3], vec![25.0; 3], None).unwrap();
        assert!(solve_pde(&s, &PdeParams::default(), &SolverOptions { nx: 10, ..Default::default() }).is_err());
    }

    #[test]
    fn field_binary_and_csv_round_trip() {
        let f = TemperatureField::new(vec![0.0, 0.5, 1.0], vec![0.0, 60.0], vec![1.0, 2.0, 1.0 / 3.0, 4.0, 5.5, 6.0])
            .unwrap();
        let mut bin = Vec::new();
        f.write_binary(&mut bin).unwrap();
        assert_eq!(&bin[..4], b"THF1");
        assert_eq!(TemperatureField::read_binary(bin.as_slice()).unwrap(), f);
        let mut csv = Vec::new();
        f.write_csv(&mut csv).unwrap();
        assert_eq!(TemperatureField::read_csv(csv.as_slice()).unwrap(), f);
        bin[0] = b'X';
        assert!(TemperatureField::read_binary(bin.as_slice()).is_err());
    }

    #[test]
    fn height_interpolation() {
        let f = TemperatureField::new(vec![0.0, 0.5, 1.0], vec![0.0], vec![10.0, 20.0, 40.0]).unwrap();
        assert_eq!(f.profile_at_height(0.75), vec![30.0]);
        assert_eq!(f.profile_at_height(0.5), vec![20.0]);
        assert_eq!(f.profile_at_height(0.0), vec![10.0]);
    }
}
