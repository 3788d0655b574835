//! Noise-conditional residual MLP with hand-written reverse-mode gradients.
//!
//! `S(y; s) = W_o h_L + b_o + A y + alpha y`, where `h_0 = act(W_i [y; s] + b_i)`
//! and `h_l = h_{l-1} + act(W_l h_{l-1} + b_l)`. The affine shortcut `A y + alpha y`
//! carries the dominant linear part of the score; the MLP models the remainder.
//! Batches are row-major `B x D` buffers.

use rand::Rng;

use crate::channel;
use crate::error::{Error, Result};
use crate::linalg::{gemm_into, View};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Self::Silu => "silu",
            Self::Tanh => "tanh",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "silu" => Some(Self::Silu),
            "tanh" => Some(Self::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Self::Silu => z / (1.0 + (-z).exp()),
            Self::Tanh => z.tanh(),
        }
    }

    #[inline]
    fn derivative(self, z: f64) -> f64 {
        match self {
            Self::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Self::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    /// `2N`.
    pub input_dim: usize,
    /// Input projection plus residual blocks; at least 1.
    pub hidden_layers: usize,
    pub width: usize,
    pub activation: Activation,
    pub linear_skip: bool,
    pub scalar_gain: bool,
}

impl Architecture {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_layers: 4,
            width: 256,
            activation: Activation::Silu,
            linear_skip: true,
            scalar_gain: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_layers == 0 || self.width == 0 {
            return Err(Error::InvalidConfig(
                "network dimensions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn layout(&self) -> Layout {
        Layout::new(self)
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// Offsets of each parameter block inside the flat vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// `(weight, bias)` offsets per hidden layer; weights are `out x in` row-major.
    pub hidden: Vec<(usize, usize)>,
    pub out_weight: usize,
    pub out_bias: usize,
    pub skip: Option<usize>,
    pub gain: Option<usize>,
    pub total: usize,
}

impl Layout {
    fn new(arch: &Architecture) -> Self {
        let (d, w) = (arch.input_dim, arch.width);
        let mut at = 0;
        let mut hidden = Vec::with_capacity(arch.hidden_layers);
        for l in 0..arch.hidden_layers {
            let fan_in = if l == 0 { d + 1 } else { w };
            hidden.push((at, at + w * fan_in));
            at += w * fan_in + w;
        }
        let out_weight = at;
        let out_bias = at + d * w;
        at = out_bias + d;
        let skip = arch.linear_skip.then(|| {
            let s = at;
            at += d * d;
            s
        });
        let gain = arch.scalar_gain.then(|| {
            let g = at;
            at += 1;
            g
        });
        Self {
            hidden,
            out_weight,
            out_bias,
            skip,
            gain,
            total: at,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Anneal {
    /// Large to small extra noise over the epochs.
    Down,
    Up,
}

impl Anneal {
    pub fn name(self) -> &'static str {
        match self {
            Self::Down => "down",
            Self::Up => "up",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "down" => Some(Self::Down),
            "up" => Some(Self::Up),
            _ => None,
        }
    }
}

/// Training provenance stored alongside the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMeta {
    pub epochs: usize,
    pub steps: usize,
    pub lr: f64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub batch_size: usize,
    pub lr_halving_period: usize,
    pub anneal: Anneal,
    pub seed: u64,
    pub dataset_fingerprint: u64,
    pub train_snr_db: f64,
    /// Real-domain noise std of the training pilots, used as the bank anchor.
    pub noise_level: f64,
}

impl Default for TrainMeta {
    fn default() -> Self {
        Self {
            epochs: 0,
            steps: 0,
            lr: 0.0,
            sigma_min: 0.0,
            sigma_max: 0.0,
            batch_size: 0,
            lr_halving_period: 0,
            anneal: Anneal::Down,
            seed: 0,
            dataset_fingerprint: 0,
            train_snr_db: f64::NAN,
            noise_level: f64::NAN,
        }
    }
}

/// Maps pilot units onto the network's working units.
///
/// The network sees `x = y / input`; its conditioning feature is `s / level`
/// for a working-unit perturbation `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scaling {
    pub input: f64,
    pub level: f64,
}

impl Default for Scaling {
    fn default() -> Self {
        Self { input: 1.0, level: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreModel {
    pub arch: Architecture,
    pub params: Vec<f64>,
    pub scaling: Scaling,
    pub meta: TrainMeta,
}

/// Cached activations from a forward pass.
struct Tape {
    batch: usize,
    /// `[y; s]` rows, `B x (D + 1)`.
    input: Vec<f64>,
    /// Pre-activations per hidden layer.
    pre: Vec<Vec<f64>>,
    /// Outputs per hidden layer.
    post: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl ScoreModel {
    /// Glorot-uniform hidden weights; output layer, shortcut and gain start at zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = arch.layout();
        let mut params = vec![0.0; layout.total];
        let mut rng = channel::rng(seed);
        for (l, &(w_off, _)) in layout.hidden.iter().enumerate() {
            let fan_in = if l == 0 { arch.input_dim + 1 } else { arch.width };
            let bound = (6.0 / (fan_in + arch.width) as f64).sqrt();
            for p in &mut params[w_off..w_off + fan_in * arch.width] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(Self {
            arch,
            params,
            scaling: Scaling::default(),
            meta: TrainMeta::default(),
        })
    }

    pub fn dim(&self) -> usize {
        self.arch.input_dim
    }

    fn tape(&self, ys: &[f64], varsigma: &[f64]) -> Result<Tape> {
        let d = self.arch.input_dim;
        let w = self.arch.width;
        if ys.len() % d != 0 {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: ys.len() % d,
            });
        }
        let b = ys.len() / d;
        if varsigma.len() != b {
            return Err(Error::DimensionMismatch {
                expected: b,
                got: varsigma.len(),
            });
        }
        let layout = self.arch.layout();
        let p = &self.params;
        let act = self.arch.activation;
        let mut input = Vec::with_capacity(b * (d + 1));
        for (row, &s) in ys.chunks_exact(d).zip(varsigma) {
            input.extend_from_slice(row);
            input.push(s / self.scaling.level);
        }
        let mut pre = Vec::with_capacity(layout.hidden.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(layout.hidden.len());
        for (l, &(w_off, b_off)) in layout.hidden.iter().enumerate() {
            let (x, fan_in) = if l == 0 {
                (&input[..], d + 1)
            } else {
                (&post[l - 1][..], w)
            };
            let mut z = bias_rows(&p[b_off..b_off + w], b);
            gemm_into(
                1.0,
                View::row_major(x, b, fan_in),
                View::row_major(&p[w_off..w_off + w * fan_in], w, fan_in).t(),
                1.0,
                &mut z,
                w,
            );
            let mut h: Vec<f64> = z.iter().map(|&v| act.apply(v)).collect();
            if l > 0 {
                h.iter_mut().zip(&post[l - 1]).for_each(|(a, prev)| *a += prev);
            }
            pre.push(z);
            post.push(h);
        }
        let last = post.last().expect("at least one hidden layer");
        let mut out = bias_rows(&p[layout.out_bias..layout.out_bias + d], b);
        gemm_into(
            1.0,
            View::row_major(last, b, w),
            View::row_major(&p[layout.out_weight..layout.out_weight + d * w], d, w).t(),
            1.0,
            &mut out,
            d,
        );
        if let Some(s_off) = layout.skip {
            gemm_into(
                1.0,
                View::row_major(ys, b, d),
                View::row_major(&p[s_off..s_off + d * d], d, d).t(),
                1.0,
                &mut out,
                d,
            );
        }
        if let Some(g) = layout.gain {
            let alpha = p[g];
            out.iter_mut().zip(ys).for_each(|(o, y)| *o += alpha * y);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Tape {
            batch: b,
            input,
            pre,
            post,
            out,
        })
    }

    /// Network output `S(x; s)` in working units for a batch of row vectors
    /// with per-row extra-noise levels.
    pub fn forward_batch(&self, ys: &[f64], varsigma: &[f64]) -> Result<Vec<f64>> {
        Ok(self.tape(ys, varsigma)?.out)
    }

    pub fn forward(&self, y: &[f64], varsigma: f64) -> Result<Vec<f64>> {
        self.forward_batch(y, &[varsigma])
    }

    /// Backpropagates `dL/dS` (row-major `B x D`) into a parameter gradient.
    fn backward(&self, tape: &Tape, grad_out: &[f64]) -> Vec<f64> {
        let d = self.arch.input_dim;
        let w = self.arch.width;
        let b = tape.batch;
        let act = self.arch.activation;
        let layout = self.arch.layout();
        let p = &self.params;
        let mut grad = vec![0.0; layout.total];
        let ys = View::row_major(&tape.input, b, d + 1);
        let y_only = View {
            cols: d,
            ..ys
        };
        let g_out = View::row_major(grad_out, b, d);

        let last = tape.post.last().expect("at least one hidden layer");
        gemm_into(
            1.0,
            g_out.t(),
            View::row_major(last, b, w),
            0.0,
            &mut grad[layout.out_weight..layout.out_weight + d * w],
            w,
        );
        col_sums(grad_out, d, &mut grad[layout.out_bias..layout.out_bias + d]);
        if let Some(s_off) = layout.skip {
            gemm_into(1.0, g_out.t(), y_only, 0.0, &mut grad[s_off..s_off + d * d], d);
        }
        if let Some(g) = layout.gain {
            let mut acc = 0.0;
            for (row_g, row_x) in grad_out.chunks_exact(d).zip(tape.input.chunks_exact(d + 1)) {
                acc += row_g.iter().zip(row_x).map(|(a, x)| a * x).sum::<f64>();
            }
            grad[g] = acc;
        }

        // dL/dh_L
        let mut dh = vec![0.0; b * w];
        gemm_into(
            1.0,
            g_out,
            View::row_major(&p[layout.out_weight..layout.out_weight + d * w], d, w),
            0.0,
            &mut dh,
            w,
        );
        for l in (0..layout.hidden.len()).rev() {
            let (w_off, b_off) = layout.hidden[l];
            let fan_in = if l == 0 { d + 1 } else { w };
            let dz: Vec<f64> = dh
                .iter()
                .zip(&tape.pre[l])
                .map(|(g, &z)| g * act.derivative(z))
                .collect();
            let x = if l == 0 {
                &tape.input[..]
            } else {
                &tape.post[l - 1][..]
            };
            gemm_into(
                1.0,
                View::row_major(&dz, b, w).t(),
                View::row_major(x, b, fan_in),
                0.0,
                &mut grad[w_off..w_off + w * fan_in],
                fan_in,
            );
            col_sums(&dz, w, &mut grad[b_off..b_off + w]);
            if l > 0 {
                // Residual path keeps dh; the block adds dz W_l.
                gemm_into(
                    1.0,
                    View::row_major(&dz, b, w),
                    View::row_major(&p[w_off..w_off + w * w], w, w),
                    1.0,
                    &mut dh,
                    w,
                );
            }
        }
        grad
    }

    /// Rescaled denoising score-matching loss on explicit perturbations.
    ///
    /// `L = (1/B) sum ||u + s S(y + s u; s)||^2` with exact gradient.
    pub fn loss_and_grad_with(&self, batch: &[f64], varsigma: &[f64], noise: &[f64]) -> Result<(f64, Vec<f64>)> {
        let d = self.arch.input_dim;
        let b = batch.len() / d;
        let mut perturbed = batch.to_vec();
        for (i, (row, u)) in perturbed.chunks_exact_mut(d).zip(noise.chunks_exact(d)).enumerate() {
            row.iter_mut().zip(u).for_each(|(y, n)| *y += varsigma[i] * n);
        }
        let tape = self.tape(&perturbed, varsigma)?;
        let mut loss = 0.0;
        let mut grad_out = vec![0.0; b * d];
        let inv_b = 1.0 / b as f64;
        for i in 0..b {
            let s = varsigma[i];
            for j in i * d..(i + 1) * d {
                let r = noise[j] + s * tape.out[j];
                loss += r * r;
                grad_out[j] = 2.0 * s * r * inv_b;
            }
        }
        Ok((loss * inv_b, self.backward(&tape, &grad_out)))
    }

    /// As [`Self::loss_and_grad_with`] with `u ~ N(0, I)` drawn from `rng`.
    pub fn loss_and_grad(&self, batch: &[f64], varsigma: f64, rng: &mut impl Rng) -> Result<(f64, Vec<f64>)> {
        let noise: Vec<f64> = (0..batch.len()).map(|_| channel::gaussian(rng)).collect();
        let b = batch.len() / self.arch.input_dim;
        self.loss_and_grad_with(batch, &vec![varsigma; b], &noise)
    }

    /// Loss only, for finite-difference checks.
    pub fn loss_with(&self, batch: &[f64], varsigma: &[f64], noise: &[f64]) -> Result<f64> {
        let d = self.arch.input_dim;
        let mut perturbed = batch.to_vec();
        for (i, (row, u)) in perturbed.chunks_exact_mut(d).zip(noise.chunks_exact(d)).enumerate() {
            row.iter_mut().zip(u).for_each(|(y, n)| *y += varsigma[i] * n);
        }
        let out = self.forward_batch(&perturbed, varsigma)?;
        let b = batch.len() / d;
        let mut loss = 0.0;
        for i in 0..b {
            for j in i * d..(i + 1) * d {
                let r = noise[j] + varsigma[i] * out[j];
                loss += r * r;
            }
        }
        Ok(loss / b as f64)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Score of the pilot distribution at `y`, in pilot units.
    pub fn score_pilots(&self, ys: &[f64]) -> Result<Vec<f64>> {
        let inv = 1.0 / self.scaling.input;
        let x: Vec<f64> = ys.iter().map(|v| v * inv).collect();
        let b = x.len() / self.arch.input_dim.max(1);
        let mut out = self.forward_batch(&x, &vec![0.0; b])?;
        out.iter_mut().for_each(|v| *v *= inv);
        Ok(out)
    }
}

fn bias_rows(bias: &[f64], rows: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(rows * bias.len());
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    out
}

fn col_sums(m: &[f64], cols: usize, out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for row in m.chunks_exact(cols) {
        out.iter_mut().zip(row).for_each(|(o, v)| *o += v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(arch: Architecture, seed: u64) -> ScoreModel {
        let mut m = ScoreModel::init(arch, seed).unwrap();
        // Nonzero everywhere so every block carries gradient.
        let mut rng = channel::rng(seed + 1);
        m.params.iter_mut().for_each(|p| *p += 0.3 * channel::gaussian(&mut rng));
        m
    }

    fn fd_check(arch: Architecture) -> f64 {
        let m = toy(arch, 3);
        let d = arch.input_dim;
        let b = 3;
        let mut rng = channel::rng(9);
        let batch: Vec<f64> = (0..b * d).map(|_| channel::gaussian(&mut rng)).collect();
        let noise: Vec<f64> = (0..b * d).map(|_| channel::gaussian(&mut rng)).collect();
        let varsigma = [0.3, 0.05, 0.7];
        let (_, grad) = m.loss_and_grad_with(&batch, &varsigma, &noise).unwrap();
        let eps = 1e-5;
        let mut worst = 0.0f64;
        for k in 0..m.params.len() {
            let mut plus = m.clone();
            plus.params[k] += eps;
            let mut minus = m.clone();
            minus.params[k] -= eps;
            let fd = (plus.loss_with(&batch, &varsigma, &noise).unwrap()
                - minus.loss_with(&batch, &varsigma, &noise).unwrap())
                / (2.0 * eps);
            let scale = fd.abs().max(grad[k].abs()).max(1e-3);
            worst = worst.max((fd - grad[k]).abs() / scale);
        }
        worst
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for activation in [Activation::Silu, Activation::Tanh] {
            let arch = Architecture {
                input_dim: 6,
                hidden_layers: 3,
                width: 5,
                activation,
                linear_skip: true,
                scalar_gain: true,
            };
            let err = fd_check(arch);
            assert!(err <= 1e-4, "{activation:?}: {err}");
        }
    }

    #[test]
    fn gradient_of_plain_two_layer_net() {
        let arch = Architecture {
            input_dim: 4,
            hidden_layers: 2,
            width: 3,
            activation: Activation::Silu,
            linear_skip: false,
            scalar_gain: false,
        };
        assert!(fd_check(arch) <= 1e-4);
    }

    #[test]
    fn zero_init_outputs_zero() {
        let m = ScoreModel::init(Architecture::new(8), 1).unwrap();
        let out = m.forward(&[1.0, -2.0, 3.0, 0.5, 0.0, 9.0, -1.0, 2.0], 0.0).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_network_loss_is_chi_square_mean() {
        let m = ScoreModel::init(Architecture::new(16), 1).unwrap();
        let mut rng = channel::rng(2);
        let batch = vec![0.3; 16 * 2000];
        let (loss, grad) = m.loss_and_grad(&batch, 0.1, &mut rng).unwrap();
        assert!((loss - 16.0).abs() < 0.5, "{loss}");
        assert!(grad.iter().all(|g| g.is_finite()));
    }

    #[test]
    fn layout_counts() {
        let arch = Architecture {
            input_dim: 4,
            hidden_layers: 2,
            width: 3,
            activation: Activation::Silu,
            linear_skip: true,
            scalar_gain: true,
        };
        // (5*3+3) + (3*3+3) + (4*3+4) + 16 + 1
        assert_eq!(arch.param_count(), 18 + 12 + 16 + 16 + 1);
    }

    #[test]
    fn forward_is_locally_lipschitz() {
        let m = toy(Architecture::new(8), 4);
        let y = [0.1, 0.2, -0.3, 0.4, 0.0, 0.5, -0.6, 0.7];
        let a = m.forward(&y, 0.0).unwrap();
        let mut y2 = y;
        y2[3] += 1e-6;
        let b = m.forward(&y2, 0.0).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        assert!(diff.is_finite() && diff / 1e-6 < 1e4);
    }

    #[test]
    fn batch_rows_are_independent() {
        let m = toy(
            Architecture {
                width: 7,
                ..Architecture::new(6)
            },
            5,
        );
        let ys: Vec<f64> = (0..18).map(|i| (i as f64).sin()).collect();
        let batch = m.forward_batch(&ys, &[0.0, 0.1, 0.2]).unwrap();
        for i in 0..3 {
            let single = m.forward(&ys[i * 6..(i + 1) * 6], 0.1 * i as f64).unwrap();
            for (a, b) in single.iter().zip(&batch[i * 6..(i + 1) * 6]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
