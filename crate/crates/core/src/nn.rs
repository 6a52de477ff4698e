//! Tanh multilayer perceptron over (x, t) with exact input derivatives and
//! reverse-mode parameter gradients, plus the Adam optimizer.
//!
//! Derivatives with respect to the inputs are propagated forward as
//! second-order jets: alongside every activation `a` the network carries
//! `∂a/∂x`, `∂a/∂t` and `∂²a/∂x²`. The four streams are stacked row-wise
//! into one matrix so each layer is a single matrix product. The reverse
//! sweep then differentiates any loss built from the output jets
//! (value, ∂u/∂t, ∂²u/∂x², ...) with respect to every weight and bias,
//! which includes the third-order mixed terms needed by residual losses.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::{s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pde::{read_f64s, read_u64};

pub const INPUT_DIM: usize = 2;
pub const OUTPUT_DIM: usize = 3;

/// Which input derivatives a forward pass carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Jet {
    /// Values only.
    Value,
    /// Values, ∂/∂x, ∂/∂t and ∂²/∂x².
    Second,
}

impl Jet {
    fn streams(self) -> usize {
        match self {
            Jet::Value => 1,
            Jet::Second => 4,
        }
    }
}

// Stream order inside a stacked jet matrix.
const V: usize = 0;
const DX: usize = 1;
const DT: usize = 2;
const DXX: usize = 3;

/// Tanh network on inputs (x, t) ∈ [0,1]², which are mapped affinely onto
/// [-1,1] before the first layer; derivatives are taken with respect to
/// the unmapped inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    widths: Vec<usize>,
    /// Per layer: weights (n_out × n_in, row-major) then biases (n_out).
    params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layer {
    w_off: usize,
    b_off: usize,
    n_in: usize,
    n_out: usize,
}

pub fn param_count(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return Err(Error::InvalidParameter("need at least input and output widths".into()));
    }
    if widths[0] != INPUT_DIM {
        return Err(Error::InvalidParameter(format!(
            "input width must be {INPUT_DIM} (x, t), got {}",
            widths[0]
        )));
    }
    if *widths.last().unwrap() != OUTPUT_DIM {
        return Err(Error::InvalidParameter(format!(
            "output width must be {OUTPUT_DIM}, got {}",
            widths.last().unwrap()
        )));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidParameter("layer widths must be positive".into()));
    }
    Ok(())
}

/// Network outputs and input derivatives for a batch of points.
/// Every matrix is batch × 3.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchEvaluation {
    pub u: Array2<f64>,
    pub du_dx: Array2<f64>,
    pub du_dt: Array2<f64>,
    pub d2u_dx2: Array2<f64>,
}

impl BatchEvaluation {
    /// ∂Θ̂_O/∂t per point.
    pub fn du0_dt(&self) -> Vec<f64> {
        self.du_dt.column(0).to_vec()
    }

    /// ∂²Θ̂_O/∂x² per point.
    pub fn d2u0_dx2(&self) -> Vec<f64> {
        self.d2u_dx2.column(0).to_vec()
    }
}

/// Intermediate values of a forward pass kept for the reverse sweep.
pub struct ForwardCache {
    jet: Jet,
    batch: usize,
    /// Stacked input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Stacked pre-activations of each hidden layer.
    pre: Vec<Array2<f64>>,
    /// tanh of the value stream of each hidden layer.
    act: Vec<Array2<f64>>,
    /// Stacked output jets.
    out: Array2<f64>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn jet(&self) -> Jet {
        self.jet
    }

    pub fn evaluation(&self) -> BatchEvaluation {
        let b = self.batch;
        let block = |s: usize| -> Array2<f64> {
            if s < self.jet.streams() {
                self.out.slice(ndarray::s![s * b..(s + 1) * b, ..]).to_owned()
            } else {
                Array2::zeros((b, OUTPUT_DIM))
            }
        };
        BatchEvaluation {
            u: block(V),
            du_dx: block(DX),
            du_dt: block(DT),
            d2u_dx2: block(DXX),
        }
    }

    /// Zeroed seed matrix matching the output jets.
    pub fn seeds(&self) -> OutputSeeds {
        OutputSeeds {
            batch: self.batch,
            data: Array2::zeros((self.jet.streams() * self.batch, OUTPUT_DIM)),
        }
    }
}

/// ∂L/∂(output jets) for one batch; filled by the loss and consumed by
/// [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct OutputSeeds {
    batch: usize,
    data: Array2<f64>,
}

impl OutputSeeds {
    fn set(&mut self, stream: usize, point: usize, output: usize, v: f64) {
        self.data[[stream * self.batch + point, output]] = v;
    }

    /// ∂L/∂u_out at `point`.
    pub fn set_value(&mut self, point: usize, output: usize, v: f64) {
        self.set(V, point, output, v);
    }

    /// ∂L/∂(∂u_out/∂x) at `point`.
    pub fn set_dx(&mut self, point: usize, output: usize, v: f64) {
        self.set(DX, point, output, v);
    }

    /// ∂L/∂(∂u_out/∂t) at `point`.
    pub fn set_dt(&mut self, point: usize, output: usize, v: f64) {
        self.set(DT, point, output, v);
    }

    /// ∂L/∂(∂²u_out/∂x²) at `point`.
    pub fn set_dxx(&mut self, point: usize, output: usize, v: f64) {
        self.set(DXX, point, output, v);
    }
}

impl Mlp {
    /// Network with every parameter zero.
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        check_widths(widths)?;
        Ok(Self {
            widths: widths.to_vec(),
            params: vec![0.0; param_count(widths)],
        })
    }

    /// Glorot-uniform weights, zero biases; deterministic per seed.
    pub fn glorot(widths: &[usize], seed: u64) -> Result<Self> {
        let mut m = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in m.layers() {
            let bound = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
            for w in &mut m.params[l.w_off..l.b_off] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(m)
    }

    pub fn from_params(widths: &[usize], params: Vec<f64>) -> Result<Self> {
        check_widths(widths)?;
        if params.len() != param_count(widths) {
            return Err(Error::ShapeMismatch(format!(
                "{} parameters for widths {widths:?} (expected {})",
                params.len(),
                param_count(widths)
            )));
        }
        Ok(Self {
            widths: widths.to_vec(),
            params,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    fn layers(&self) -> Vec<Layer> {
        let mut off = 0;
        self.widths
            .windows(2)
            .map(|w| {
                let l = Layer {
                    w_off: off,
                    b_off: off + w[0] * w[1],
                    n_in: w[0],
                    n_out: w[1],
                };
                off = l.b_off + w[1];
                l
            })
            .collect()
    }

    fn weight(&self, l: &Layer) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((l.n_out, l.n_in), &self.params[l.w_off..l.b_off]).expect("layer shape")
    }

    /// Network outputs for a batch of (x, t) points.
    pub fn forward(&self, points: &[[f64; 2]]) -> Array2<f64> {
        self.forward_cached(points, Jet::Value).out
    }

    /// Outputs together with exact first and second input derivatives.
    pub fn input_derivatives(&self, points: &[[f64; 2]]) -> BatchEvaluation {
        self.forward_cached(points, Jet::Second).evaluation()
    }

    pub fn forward_cached(&self, points: &[[f64; 2]], jet: Jet) -> ForwardCache {
        let b = points.len();
        let ns = jet.streams();
        let mut a = Array2::<f64>::zeros((ns * b, INPUT_DIM));
        // Inputs in [0,1] are centred onto [-1,1] before the first layer.
        for (i, p) in points.iter().enumerate() {
            a[[i, 0]] = 2.0 * p[0] - 1.0;
            a[[i, 1]] = 2.0 * p[1] - 1.0;
        }
        if jet == Jet::Second {
            for i in 0..b {
                a[[DX * b + i, 0]] = 2.0;
                a[[DT * b + i, 1]] = 2.0;
            }
        }
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut inputs = Vec::with_capacity(layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut act = Vec::with_capacity(last);
        for (li, l) in layers.iter().enumerate() {
            let w = self.weight(l);
            let mut z = a.dot(&w.t());
            let bias = &self.params[l.b_off..l.b_off + l.n_out];
            for mut row in z.slice_mut(s![0..b, ..]).rows_mut() {
                for (zv, bv) in row.iter_mut().zip(bias) {
                    *zv += bv;
                }
            }
            inputs.push(a);
            if li == last {
                return ForwardCache {
                    jet,
                    batch: b,
                    inputs,
                    pre,
                    act,
                    out: z,
                };
            }
            let n = l.n_out;
            let h = z.slice(s![0..b, ..]).mapv(f64::tanh);
            let mut next = Array2::<f64>::zeros((ns * b, n));
            {
                let zs = z.as_slice().expect("standard layout");
                let hs = h.as_slice().expect("standard layout");
                let out = next.as_slice_mut().expect("standard layout");
                let m = b * n;
                out[..m].copy_from_slice(hs);
                if jet == Jet::Second {
                    for k in 0..m {
                        let hv = hs[k];
                        let sv = 1.0 - hv * hv;
                        let s1 = -2.0 * hv * sv;
                        let zx = zs[DX * m + k];
                        out[DX * m + k] = sv * zx;
                        out[DT * m + k] = sv * zs[DT * m + k];
                        out[DXX * m + k] = sv * zs[DXX * m + k] + s1 * zx * zx;
                    }
                }
            }
            pre.push(z);
            act.push(h);
            a = next;
        }
        unreachable!("network has an output layer")
    }

    /// Gradient of a loss with respect to every parameter, given the loss
    /// sensitivities to the output jets of `cache`.
    pub fn backward(&self, cache: &ForwardCache, seeds: &OutputSeeds) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.backward_into(cache, seeds, &mut grad);
        grad
    }

    /// As [`Mlp::backward`], accumulating into `grad`.
    pub fn backward_into(&self, cache: &ForwardCache, seeds: &OutputSeeds, grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len(), "gradient length");
        assert_eq!(seeds.data.dim(), cache.out.dim(), "seed shape");
        let b = cache.batch;
        let ns = cache.jet.streams();
        let layers = self.layers();
        let mut g = seeds.data.clone();
        for li in (0..layers.len()).rev() {
            let l = &layers[li];
            let a_in = &cache.inputs[li];
            let gw = g.t().dot(a_in);
            for (dst, src) in grad[l.w_off..l.b_off].iter_mut().zip(gw.iter()) {
                *dst += src;
            }
            let gb = g.slice(s![0..b, ..]).sum_axis(Axis(0));
            for (dst, src) in grad[l.b_off..l.b_off + l.n_out].iter_mut().zip(gb.iter()) {
                *dst += src;
            }
            if li == 0 {
                break;
            }
            // Sensitivities of the previous layer's activation jets.
            let ga = g.dot(&self.weight(l));
            let z = &cache.pre[li - 1];
            let h = &cache.act[li - 1];
            let n = l.n_in;
            let m = b * n;
            let mut gz = Array2::<f64>::zeros((ns * b, n));
            {
                let gas = ga.as_slice().expect("standard layout");
                let zs = z.as_slice().expect("standard layout");
                let hs = h.as_slice().expect("standard layout");
                let out = gz.as_slice_mut().expect("standard layout");
                if ns == 1 {
                    for k in 0..m {
                        out[k] = gas[k] * (1.0 - hs[k] * hs[k]);
                    }
                } else {
                    for k in 0..m {
                        let hv = hs[k];
                        let sv = 1.0 - hv * hv;
                        let s1 = -2.0 * hv * sv;
                        let s2 = -2.0 * sv * sv + 4.0 * hv * hv * sv;
                        let (zx, zt, zxx) = (zs[DX * m + k], zs[DT * m + k], zs[DXX * m + k]);
                        let (gv, gx, gt, gxx) = (gas[k], gas[DX * m + k], gas[DT * m + k], gas[DXX * m + k]);
                        out[k] = gv * sv + gx * s1 * zx + gt * s1 * zt + gxx * (s1 * zxx + s2 * zx * zx);
                        out[DX * m + k] = gx * sv + gxx * 2.0 * s1 * zx;
                        out[DT * m + k] = gt * sv;
                        out[DXX * m + k] = gxx * sv;
                    }
                }
            }
            g = gz;
        }
    }

    /// Checkpoint: `MLP1`, layer count and widths as u64 LE, then the
    /// parameters as f64 LE.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(b"MLP1")?;
        w.write_all(&(self.widths.len() as u64).to_le_bytes())?;
        for &width in &self.widths {
            w.write_all(&(width as u64).to_le_bytes())?;
        }
        for p in &self.params {
            w.write_all(&p.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"MLP1" {
            return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
        }
        let n = read_u64(&mut r)? as usize;
        if n > 1024 {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        let widths = (0..n).map(|_| read_u64(&mut r).map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        check_widths(&widths)?;
        let params = read_f64s(&mut r, param_count(&widths))?;
        Self::from_params(&widths, params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_checkpoint(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// Adam moments and hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam state {} vs params {} vs grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Apply one Adam step to `model`.
pub fn adam_step(state: &mut AdamState, model: &mut Mlp, grad: &[f64]) -> Result<()> {
    state.step(model.params_mut(), grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parameter_count_for_3x50() {
        assert_eq!(param_count(&[2, 50, 50, 50, 3]), 5403);
        assert_eq!(Mlp::glorot(&[2, 50, 50, 50, 3], 1).unwrap().num_params(), 5403);
    }

    #[test]
    fn rejects_bad_widths() {
        assert!(Mlp::glorot(&[3, 10, 3], 0).is_err());
        assert!(Mlp::glorot(&[2, 10, 2], 0).is_err());
        assert!(Mlp::glorot(&[2], 0).is_err());
        assert!(Mlp::from_params(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn glorot_is_deterministic_and_bounded() {
        let a = Mlp::glorot(&[2, 20, 3], 5).unwrap();
        let b = Mlp::glorot(&[2, 20, 3], 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Mlp::glorot(&[2, 20, 3], 6).unwrap());
        let bound = (6.0f64 / 22.0).sqrt();
        assert!(a.params()[..40].iter().all(|w| w.abs() <= bound));
        assert!(a.params()[40..60].iter().all(|&b| b == 0.0));
    }

    #[test]
    fn zero_network_outputs_zero() {
        let m = Mlp::zeros(&[2, 5, 5, 3]).unwrap();
        let e = m.input_derivatives(&[[0.3, 0.9], [-1.0, 2.0]]);
        assert!(e.u.iter().chain(e.du_dt.iter()).chain(e.d2u_dx2.iter()).all(|&v| v == 0.0));
    }

    fn single_neuron() -> Mlp {
        // hidden: z = 0.7x − 1.3t + 0.2 ; outputs: u_k = w2_k tanh(z) + b2_k
        Mlp::from_params(&[2, 1, 3], vec![0.7, -1.3, 0.2, 1.5, -0.5, 2.0, 0.1, 0.3, -0.2]).unwrap()
    }

    #[test]
    fn single_neuron_closed_form() {
        let m = single_neuron();
        let w2 = [1.5, -0.5, 2.0];
        let b2 = [0.1, 0.3, -0.2];
        for &(x, t) in &[(0.0, 0.0), (0.5, 0.1), (-0.3, 0.8), (1.0, 1.0), (0.25, -0.6)] {
            // z in terms of the centred inputs 2x-1, 2t-1.
            let z: f64 = 0.7 * (2.0 * x - 1.0) - 1.3 * (2.0 * t - 1.0) + 0.2;
            let th = z.tanh();
            let sech2 = 1.0 - th * th;
            let e = m.input_derivatives(&[[x, t]]);
            for k in 0..3 {
                assert!((e.u[[0, k]] - (w2[k] * th + b2[k])).abs() < 1e-14);
                assert!((e.du_dx[[0, k]] - w2[k] * 1.4 * sech2).abs() < 1e-14);
                assert!((e.du_dt[[0, k]] - w2[k] * -2.6 * sech2).abs() < 1e-14);
                let d2 = w2[k] * 1.96 * (-2.0 * th * sech2);
                assert!((e.d2u_dx2[[0, k]] - d2).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn batch_equals_single_calls() {
        let m = Mlp::glorot(&[2, 8, 8, 3], 3).unwrap();
        let pts = [[0.1, 0.2], [0.5, 0.9], [0.99, 0.01]];
        let batch = m.input_derivatives(&pts);
        for (i, p) in pts.iter().enumerate() {
            let one = m.input_derivatives(&[*p]);
            for k in 0..3 {
                assert!((batch.u[[i, k]] - one.u[[0, k]]).abs() < 1e-14);
                assert!((batch.d2u_dx2[[i, k]] - one.d2u_dx2[[0, k]]).abs() < 1e-14);
            }
        }
        let plain = m.forward(&pts);
        assert!((&plain - &batch.u).iter().all(|d| d.abs() < 1e-14));
    }

    #[test]
    fn output_bias_gradient_of_squared_norm() {
        // L = Σ_k u_k² at one point of a zero network: only the output biases
        // carry a gradient, 2·u_k = 2·b_k.
        let mut m = Mlp::zeros(&[2, 4, 3]).unwrap();
        let n = m.num_params();
        m.params_mut()[n - 3..].copy_from_slice(&[0.5, -1.0, 2.0]);
        let cache = m.forward_cached(&[[0.3, 0.4]], Jet::Value);
        let u = cache.evaluation().u;
        let mut seeds = cache.seeds();
        for k in 0..3 {
            seeds.set_value(0, k, 2.0 * u[[0, k]]);
        }
        let g = m.backward(&cache, &seeds);
        assert_eq!(&g[n - 3..], &[1.0, -2.0, 4.0]);
        assert!(g[..n - 3].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_point_doubles_gradient() {
        let m = Mlp::glorot(&[2, 6, 3], 9).unwrap();
        let grad_for = |pts: &[[f64; 2]]| {
            let cache = m.forward_cached(pts, Jet::Second);
            let e = cache.evaluation();
            let mut seeds = cache.seeds();
            for i in 0..pts.len() {
                seeds.set_dxx(i, 0, 2.0 * e.d2u_dx2[[i, 0]]);
                seeds.set_value(i, 1, 1.0);
            }
            m.backward(&cache, &seeds)
        };
        let single = grad_for(&[[0.2, 0.7]]);
        let double = grad_for(&[[0.2, 0.7], [0.2, 0.7]]);
        for (a, b) in single.iter().zip(&double) {
            assert!((2.0 * a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut m = Mlp::glorot(&[2, 4, 3], 1).unwrap();
        let before = m.clone();
        let mut st = AdamState::new(m.num_params(), 1e-3);
        adam_step(&mut st, &mut m, &vec![0.0; before.num_params()]).unwrap();
        assert_eq!(m, before);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut p = vec![1.0, 1.0, 1.0];
        let mut st = AdamState::new(3, 0.01);
        st.step(&mut p, &[3.0, -0.5, 1e-3]).unwrap();
        // m̂ = g, v̂ = g²  ⇒  Δ = −lr·g/(|g| + ε)
        for (pi, g) in p.iter().zip([3.0f64, -0.5, 1e-3]) {
            let expected = 1.0 - 0.01 * g / (g.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-15);
            assert!(((1.0 - pi) - 0.01 * g.signum()).abs() < 1e-6);
        }
        assert!(st.step(&mut p, &[1.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Mlp::glorot(&[2, 7, 5, 3], 4).unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"MLP1");
        assert_eq!(Mlp::read_checkpoint(buf.as_slice()).unwrap(), m);
        buf[1] = b'X';
        assert!(Mlp::read_checkpoint(buf.as_slice()).is_err());
    }
}
