//! From-scratch MLP score model `s_θ(t, x)` trained by denoising score
//! matching.
//!
//! Input is `[x, e(t)]` with a sinusoidal time embedding `e`; hidden layers
//! use `tanh`; the output layer is linear. Parameters live in one flat vector,
//! layer by layer, each layer storing its row-major `out × in` weights
//! followed by its bias.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::field::ScoreField;
use crate::ou::transition_unchecked;
use crate::rng;
use crate::samples::SampleSet;
use crate::schedule::OuSchedule;

pub const CHECKPOINT_FORMAT: &str = "mlp-score-net";
pub const CHECKPOINT_VERSION: u32 = 1;

/// `[sin(ω_j t), cos(ω_j t)]` with `ω_j` geometric over `[1, 1000]`.
pub fn time_embedding(t: f64, dim: usize) -> Result<Vec<f64>> {
    if dim == 0 || dim % 2 != 0 {
        return Err(Error::InvalidInput(format!("time embedding dimension must be even and positive, got {dim}")));
    }
    let mut out = vec![0.0; dim];
    embed_into(t, &mut out);
    Ok(out)
}

fn embed_into(t: f64, out: &mut [f64]) {
    let half = out.len() / 2;
    for j in 0..half {
        let omega = if half == 1 { 1.0 } else { 1000f64.powf(j as f64 / (half - 1) as f64) };
        let (s, c) = (omega * t).sin_cos();
        out[j] = s;
        out[half + j] = c;
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetArch {
    pub dim: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
}

impl NetArch {
    pub fn new(dim: usize, embed_dim: usize, hidden: Vec<usize>) -> Result<Self> {
        if dim == 0 || hidden.iter().any(|&h| h == 0) {
            return Err(Error::InvalidInput("layer widths must be positive".into()));
        }
        time_embedding(0.0, embed_dim)?;
        Ok(Self { dim, embed_dim, hidden })
    }

    /// Embedding 16, two hidden layers of width 64.
    pub fn default_for(dim: usize) -> Self {
        Self { dim, embed_dim: 16, hidden: vec![64, 64] }
    }

    /// `(in, out)` of every affine layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.dim + self.embed_dim];
        widths.extend(&self.hidden);
        widths.push(self.dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| (i + 1) * o).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpScoreNet {
    arch: NetArch,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    arch: NetArch,
    params: Vec<f64>,
}

impl Serialize for MlpScoreNet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        Checkpoint { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, arch: self.arch.clone(), params: self.params.clone() }
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpScoreNet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let c = Checkpoint::deserialize(d)?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(serde::de::Error::custom(format!("not an MLP checkpoint: format {:?}", c.format)));
        }
        if c.version != CHECKPOINT_VERSION {
            return Err(serde::de::Error::custom(format!("unsupported checkpoint version {}", c.version)));
        }
        MlpScoreNet::from_params(c.arch, c.params).map_err(serde::de::Error::custom)
    }
}

impl MlpScoreNet {
    pub fn from_params(arch: NetArch, params: Vec<f64>) -> Result<Self> {
        let arch = NetArch::new(arch.dim, arch.embed_dim, arch.hidden)?;
        if params.len() != arch.param_count() {
            return Err(Error::InvalidInput(format!(
                "architecture needs {} parameters, got {}",
                arch.param_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::PoisonedModel);
        }
        Ok(Self { arch, params })
    }

    pub fn zeros(arch: NetArch) -> Result<Self> {
        let n = arch.param_count();
        Self::from_params(arch, vec![0.0; n])
    }

    /// Weights `N(0, 1/fan_in)`, biases zero.
    pub fn init(arch: NetArch, seed: u64) -> Result<Self> {
        let mut r = rng::stream(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for (fan_in, fan_out) in arch.layers() {
            let normal = Normal::new(0.0, (1.0 / fan_in as f64).sqrt()).expect("valid normal");
            params.extend((0..fan_in * fan_out).map(|_| r.sample(normal)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self::from_params(arch, params)
    }

    pub fn arch(&self) -> &NetArch {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Product of the weight matrices' Frobenius norms: a Lipschitz bound in
    /// `x` since `tanh` is 1-Lipschitz.
    pub fn lipschitz_bound(&self) -> f64 {
        let mut offset = 0;
        let mut bound = 1.0;
        for (i, o) in self.arch.layers() {
            bound *= self.params[offset..offset + i * o].iter().map(|w| w * w).sum::<f64>().sqrt();
            offset += (i + 1) * o;
        }
        bound
    }

    /// Batched forward pass. Activations are stored feature-major:
    /// `acts[l][f * m + b]` is feature `f` of sample `b` after layer `l`
    /// (`acts[0]` is the input `[x, e(t)]`).
    fn forward_batch(&self, times: Times<'_>, xs: &[f64], acts: &mut Vec<Vec<f64>>) {
        let (d, e) = (self.arch.dim, self.arch.embed_dim);
        let m = xs.len() / d;
        let layers = self.arch.layers();
        acts.resize(layers.len() + 1, Vec::new());

        let input = &mut acts[0];
        input.clear();
        input.resize((d + e) * m, 0.0);
        for (b, x) in xs.chunks_exact(d).enumerate() {
            for (f, &v) in x.iter().enumerate() {
                input[f * m + b] = v;
            }
        }
        let mut emb = vec![0.0; e];
        if let Times::Shared(t) = times {
            embed_into(t, &mut emb);
        }
        for b in 0..m {
            if let Times::PerSample(ts) = times {
                embed_into(ts[b], &mut emb);
            }
            for (f, &v) in emb.iter().enumerate() {
                input[(d + f) * m + b] = v;
            }
        }

        let mut offset = 0;
        for (l, &(n_in, n_out)) in layers.iter().enumerate() {
            let w = &self.params[offset..offset + n_in * n_out];
            let bias = &self.params[offset + n_in * n_out..offset + (n_in + 1) * n_out];
            offset += (n_in + 1) * n_out;
            let (prev, next) = acts.split_at_mut(l + 1);
            let (inp, out) = (&prev[l], &mut next[0]);
            out.clear();
            out.resize(n_out * m, 0.0);
            affine(w, bias, inp, n_in, m, out);
            if l + 1 < layers.len() {
                out.iter_mut().for_each(|v| *v = tanh(*v));
            }
        }
    }

    fn output_into(&self, acts: &[Vec<f64>], out: &mut [f64]) {
        let d = self.arch.dim;
        let m = out.len() / d;
        let last = &acts[acts.len() - 1];
        for b in 0..m {
            for f in 0..d {
                out[b * d + f] = last[f * m + b];
            }
        }
    }

    fn forward_unchecked(&self, t: f64, x: &[f64], out: &mut [f64]) {
        let mut acts = Vec::new();
        self.forward_batch(Times::Shared(t), x, &mut acts);
        self.output_into(&acts, out);
    }

    /// Adds `scale · Σ_b ∂‖s(t_b, x_b) − y_b‖² / ∂θ` to `grad`; returns the
    /// summed squared error.
    fn backprop_batch(&self, ts: &[f64], xs: &[f64], targets: &[f64], scale: f64, grad: &mut [f64]) -> f64 {
        let d = self.arch.dim;
        let m = ts.len();
        let mut acts = Vec::new();
        self.forward_batch(Times::PerSample(ts), xs, &mut acts);
        let layers = self.arch.layers();
        let out = &acts[layers.len()];
        let mut delta = vec![0.0; d * m];
        let mut err = 0.0;
        for b in 0..m {
            for f in 0..d {
                let r = out[f * m + b] - targets[b * d + f];
                err += r * r;
                delta[f * m + b] = 2.0 * scale * r;
            }
        }

        let mut offsets = Vec::with_capacity(layers.len());
        let mut offset = 0;
        for &(i, o) in &layers {
            offsets.push(offset);
            offset += (i + 1) * o;
        }
        for l in (0..layers.len()).rev() {
            let (n_in, n_out) = layers[l];
            let off = offsets[l];
            let inp = &acts[l];
            for r in 0..n_out {
                let dr = &delta[r * m..(r + 1) * m];
                for k in 0..n_in {
                    grad[off + r * n_in + k] += dot(dr, &inp[k * m..(k + 1) * m]);
                }
                grad[off + n_in * n_out + r] += dr.iter().sum::<f64>();
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in * m];
                for r in 0..n_out {
                    let dr = &delta[r * m..(r + 1) * m];
                    for k in 0..n_in {
                        let wk = w[r * n_in + k];
                        prev[k * m..(k + 1) * m].iter_mut().zip(dr).for_each(|(p, d)| *p += wk * d);
                    }
                }
                // tanh' = 1 - a²
                prev.iter_mut().zip(inp).for_each(|(p, a)| *p *= 1.0 - a * a);
                delta = prev;
            }
        }
        err
    }
}

/// `out[r] = bias[r] + Σ_k w[r, k] inp[k]` on feature-major rows of length
/// `m`. Four output rows share each pass over an input row.
fn affine(w: &[f64], bias: &[f64], inp: &[f64], n_in: usize, m: usize, out: &mut [f64]) {
    let n_out = bias.len();
    let mut r = 0;
    while r + 4 <= n_out {
        let (o0, rest) = out[r * m..(r + 4) * m].split_at_mut(m);
        let (o1, rest) = rest.split_at_mut(m);
        let (o2, o3) = rest.split_at_mut(m);
        o0.fill(bias[r]);
        o1.fill(bias[r + 1]);
        o2.fill(bias[r + 2]);
        o3.fill(bias[r + 3]);
        for k in 0..n_in {
            let (w0, w1, w2, w3) = (w[r * n_in + k], w[(r + 1) * n_in + k], w[(r + 2) * n_in + k], w[(r + 3) * n_in + k]);
            let a = &inp[k * m..(k + 1) * m];
            let (o0, o1, o2, o3) = (&mut o0[..m], &mut o1[..m], &mut o2[..m], &mut o3[..m]);
            for b in 0..m {
                let x = a[b];
                o0[b] += w0 * x;
                o1[b] += w1 * x;
                o2[b] += w2 * x;
                o3[b] += w3 * x;
            }
        }
        r += 4;
    }
    for r in r..n_out {
        let row = &mut out[r * m..(r + 1) * m];
        row.fill(bias[r]);
        for k in 0..n_in {
            let wk = w[r * n_in + k];
            row.iter_mut().zip(&inp[k * m..(k + 1) * m]).for_each(|(o, a)| *o += wk * a);
        }
    }
}

/// `tanh` through a single `exp`; absolute error within a few ulps of 1,
/// and about twice as fast as the libm routine.
fn tanh(z: f64) -> f64 {
    let e = (-2.0 * z.abs()).exp();
    ((1.0 - e) / (1.0 + e)).copysign(z)
}

#[derive(Clone, Copy)]
enum Times<'a> {
    Shared(f64),
    PerSample(&'a [f64]),
}

/// Four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    let mut acc = [0.0; 4];
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Checked forward pass.
pub fn net_forward(net: &MlpScoreNet, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(net.arch.dim, x.len())?;
    if !t.is_finite() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite network input".into()));
    }
    let mut out = vec![0.0; net.arch.dim];
    net.forward_unchecked(t, x, &mut out);
    Ok(out)
}

impl ScoreField for MlpScoreNet {
    fn dim(&self) -> usize {
        self.arch.dim
    }

    fn evaluate_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        self.forward_unchecked(t, x, out);
    }

    fn evaluate_batch(&self, t: f64, xs: &[f64], out: &mut [f64]) {
        let mut acts = Vec::new();
        self.forward_batch(Times::Shared(t), xs, &mut acts);
        self.output_into(&acts, out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreExample {
    pub t: f64,
    pub x: Vec<f64>,
    pub target: Vec<f64>,
}

/// Gradient of the batch mean of `‖s_θ(t, x) − target‖²`.
pub fn net_gradients(net: &MlpScoreNet, batch: &[ScoreExample]) -> Result<Vec<f64>> {
    let (grad, _) = batch_gradient(net, batch)?;
    Ok(grad)
}

/// Mean of `‖s_θ(t, x) − target‖²` over the batch.
pub fn batch_loss(net: &MlpScoreNet, batch: &[ScoreExample]) -> Result<f64> {
    let (ts, xs, targets) = flatten(net, batch)?;
    let mut acts = Vec::new();
    net.forward_batch(Times::PerSample(&ts), &xs, &mut acts);
    let mut out = vec![0.0; xs.len()];
    net.output_into(&acts, &mut out);
    let total: f64 = out.iter().zip(&targets).map(|(o, y)| (o - y) * (o - y)).sum();
    Ok(total / batch.len() as f64)
}

fn flatten(net: &MlpScoreNet, batch: &[ScoreExample]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let d = net.arch.dim;
    let (mut ts, mut xs, mut targets) = (Vec::with_capacity(batch.len()), Vec::with_capacity(batch.len() * d), Vec::with_capacity(batch.len() * d));
    for e in batch {
        check_dim(d, e.x.len())?;
        check_dim(d, e.target.len())?;
        ts.push(e.t);
        xs.extend(&e.x);
        targets.extend(&e.target);
    }
    Ok((ts, xs, targets))
}

fn batch_gradient(net: &MlpScoreNet, batch: &[ScoreExample]) -> Result<(Vec<f64>, f64)> {
    let (ts, xs, targets) = flatten(net, batch)?;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; net.params.len()];
    let loss = net.backprop_batch(&ts, &xs, &targets, scale, &mut grad);
    Ok((grad, loss * scale))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DsmConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub t_min: f64,
    /// Fraction of the data held out for best-checkpoint selection.
    pub val_fraction: f64,
    /// Noisy copies of each validation point in the fixed validation set.
    pub val_draws: usize,
    pub seed: u64,
}

impl DsmConfig {
    /// 200 epochs, batch 64, learning rate `1e-3`, `t_min = 1e-3 T`, 90/10 split.
    pub fn for_schedule(s: &OuSchedule) -> Self {
        Self { epochs: 200, batch_size: 64, learning_rate: 1e-3, t_min: 1e-3 * s.horizon(), val_fraction: 0.1, val_draws: 16, seed: 0 }
    }

    fn validate(&self, s: &OuSchedule) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.learning_rate > 0.0) {
            return Err(Error::InvalidInput("epochs, batch size and learning rate must be positive".into()));
        }
        if !(self.t_min > 0.0 && self.t_min < s.horizon()) {
            return Err(Error::InvalidInput(format!("need 0 < t_min < T, got {}", self.t_min)));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidInput(format!("validation fraction {} outside [0, 1)", self.val_fraction)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DsmFit {
    pub net: MlpScoreNet,
    /// Loss on a fixed noisy copy of the training split (one draw per point)
    /// after each epoch.
    pub train_curve: Vec<f64>,
    /// Mean minibatch loss per epoch (fresh noise every step).
    pub minibatch_curve: Vec<f64>,
    /// Validation loss per epoch (empty without a validation split).
    pub val_curve: Vec<f64>,
    pub best_epoch: usize,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize, lr: f64) -> Self {
        Self { m: vec![0.0; n], v: vec![0.0; n], step: 0, lr }
    }

    fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.step);
        let c2 = 1.0 - Self::BETA2.powi(self.step);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

fn noisy_example(x0: &[f64], s: &OuSchedule, t_min: f64, r: &mut rng::Stream) -> ScoreExample {
    let t = r.random_range(t_min..s.horizon());
    let tp = transition_unchecked(s, t);
    let sd = tp.var_t.sqrt();
    let mut x = Vec::with_capacity(x0.len());
    let mut target = Vec::with_capacity(x0.len());
    for &v in x0 {
        let z: f64 = r.sample(StandardNormal);
        x.push(tp.decay * v + sd * z);
        target.push(-z / sd);
    }
    ScoreExample { t, x, target }
}

/// Adam on the denoising loss with `t ~ U[t_min, T]`. Returns the parameters
/// with the lowest loss on a fixed noisy validation set (the final ones when
/// nothing is held out).
pub fn dsm_train(net: MlpScoreNet, data: &SampleSet, s: &OuSchedule, cfg: &DsmConfig) -> Result<DsmFit> {
    cfg.validate(s)?;
    check_dim(net.arch.dim, data.dim())?;
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training data".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut rng::substream(cfg.seed, 0));
    let n_val = if data.len() > 1 { ((data.len() as f64 * cfg.val_fraction).round() as usize).min(data.len() - 1) } else { 0 };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();

    let mut val_rng = rng::substream(cfg.seed, 1);
    let val_set: Vec<ScoreExample> = val_idx
        .iter()
        .flat_map(|&i| (0..cfg.val_draws.max(1)).map(|_| noisy_example(data.row(i), s, cfg.t_min, &mut val_rng)).collect::<Vec<_>>())
        .collect();

    let mut train_rng = rng::substream(cfg.seed, 3);
    let train_probe: Vec<ScoreExample> = train_idx
        .iter()
        .map(|&i| noisy_example(data.row(i), s, cfg.t_min, &mut train_rng))
        .collect();

    let epoch_seed = rng::derive_seed(cfg.seed, 2);
    let mut params = net.params.clone();
    let mut adam = Adam::new(params.len(), cfg.learning_rate);
    let mut current = net;
    let mut best = (f64::INFINITY, current.clone(), 0);
    let (mut train_curve, mut minibatch_curve, mut val_curve) = (Vec::new(), Vec::new(), Vec::new());

    for epoch in 0..cfg.epochs {
        let mut r = rng::substream(epoch_seed, epoch as u64);
        train_idx.shuffle(&mut r);
        let mut total = 0.0;
        for chunk in train_idx.chunks(cfg.batch_size) {
            let batch: Vec<ScoreExample> = chunk.iter().map(|&i| noisy_example(data.row(i), s, cfg.t_min, &mut r)).collect();
            let (grad, loss) = batch_gradient(&current, &batch)?;
            total += loss * chunk.len() as f64;
            adam.update(&mut params, &grad);
            if params.iter().any(|p| !p.is_finite()) {
                minibatch_curve.push(f64::NAN);
                return Err(Error::TrainingDiverged { epoch, curve: minibatch_curve });
            }
            current.params.copy_from_slice(&params);
        }
        minibatch_curve.push(total / train_idx.len() as f64);
        let train_loss = batch_loss(&current, &train_probe)?;
        train_curve.push(train_loss);
        if !train_loss.is_finite() || !total.is_finite() {
            return Err(Error::TrainingDiverged { epoch, curve: minibatch_curve });
        }
        if !val_set.is_empty() {
            let v = batch_loss(&current, &val_set)?;
            val_curve.push(v);
            if v < best.0 {
                best = (v, current.clone(), epoch);
            }
        }
    }
    let (net, best_epoch) = if val_set.is_empty() { (current, cfg.epochs - 1) } else { (best.1, best.2) };
    Ok(DsmFit { net, train_curve, minibatch_curve, val_curve, best_epoch })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_net(seed: u64) -> MlpScoreNet {
        MlpScoreNet::init(NetArch::new(2, 4, vec![5, 3]).unwrap(), seed).unwrap()
    }

    #[test]
    fn embedding_cases() {
        let e = time_embedding(0.0, 16).unwrap();
        assert!(e[..8].iter().all(|&v| v == 0.0));
        assert!(e[8..].iter().all(|&v| v == 1.0));
        let e = time_embedding(1.7, 16).unwrap();
        assert!(e.iter().map(|v| v * v).sum::<f64>().sqrt() <= 16f64.sqrt() + 1e-12);
        assert!(time_embedding(0.1, 15).is_err());
        assert!(time_embedding(0.1, 0).is_err());
    }

    #[test]
    fn param_count_matches_layout() {
        let a = NetArch::default_for(1);
        assert_eq!(a.param_count(), 17 * 64 + 64 + 64 * 64 + 64 + 64 + 1);
        assert_eq!(MlpScoreNet::init(a.clone(), 0).unwrap().params().len(), a.param_count());
        assert!(MlpScoreNet::from_params(a, vec![0.0; 3]).is_err());
    }

    #[test]
    fn zero_net_outputs_zero_and_has_zero_gradient() {
        let net = MlpScoreNet::zeros(NetArch::default_for(2)).unwrap();
        assert_eq!(net_forward(&net, 0.3, &[1.0, -2.0]).unwrap(), vec![0.0, 0.0]);
        let batch = vec![ScoreExample { t: 0.3, x: vec![1.0, -2.0], target: vec![0.0, 0.0] }];
        assert!(net_gradients(&net, &batch).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn poisoned_parameters_rejected() {
        let a = NetArch::default_for(1);
        let mut p = vec![0.0; a.param_count()];
        p[7] = f64::NAN;
        assert!(matches!(MlpScoreNet::from_params(a, p), Err(Error::PoisonedModel)));
    }

    #[test]
    fn duplicated_batch_has_same_mean_gradient() {
        let net = small_net(3);
        let batch: Vec<ScoreExample> =
            (0..4).map(|i| ScoreExample { t: 0.1 * i as f64, x: vec![i as f64, 1.0], target: vec![0.5, -0.5] }).collect();
        let doubled: Vec<ScoreExample> = batch.iter().chain(&batch).cloned().collect();
        let g1 = net_gradients(&net, &batch).unwrap();
        let g2 = net_gradients(&net, &doubled).unwrap();
        assert!(g1.iter().zip(&g2).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let net = small_net(11);
        let json = serde_json::to_string(&net).unwrap();
        let back: MlpScoreNet = serde_json::from_str(&json).unwrap();
        assert!(net.params().iter().zip(back.params()).all(|(a, b)| a.to_bits() == b.to_bits()));
        let bad = json.replace("\"version\":1", "\"version\":9");
        assert!(serde_json::from_str::<MlpScoreNet>(&bad).is_err());
    }

    #[test]
    fn training_is_deterministic() {
        let s = OuSchedule::default();
        let data = SampleSet::new(2, (0..40).map(|i| (i as f64 * 0.37).sin()).collect(), "t", None).unwrap();
        let mut cfg = DsmConfig::for_schedule(&s);
        cfg.epochs = 5;
        let a = dsm_train(small_net(1), &data, &s, &cfg).unwrap();
        let b = dsm_train(small_net(1), &data, &s, &cfg).unwrap();
        assert_eq!(a.net.params(), b.net.params());
        assert_eq!(a.train_curve, b.train_curve);
        assert_eq!(a.val_curve.len(), 5);
    }
}
