//! Small fully connected networks in `f64` with hand-written backprop,
//! categorical heads, the three training losses, Adam and Polyak averaging.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    /// `(in, out)`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Multi-layer perceptron with ReLU between layers and a linear output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations recorded by [`Mlp::forward_cached`]: the input to every layer.
pub struct ForwardCache {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [in, hidden.., out]`, weights and biases uniform in
    /// `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Linear {
                    w: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..bound)),
                    b: Array1::from_shape_simple_fn(w[1], || rng.random_range(-bound..bound)),
                }
            })
            .collect();
        Self { layers }
    }

    /// `[in] + [hidden; depth] + [out]`.
    pub fn with_hidden<R: Rng + ?Sized>(input: usize, hidden: usize, depth: usize, output: usize, rng: &mut R) -> Self {
        let mut sizes = vec![input];
        sizes.extend(std::iter::repeat_n(hidden, depth));
        sizes.push(output);
        Self::new(&sizes, rng)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Linear { w: Array2::zeros(l.w.raw_dim()), b: Array1::zeros(l.b.len()) })
                .collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").w.ncols()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: x.ncols() });
        }
        Ok(())
    }

    /// Batched forward pass, one row per input.
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            h = h.dot(&layer.w) + &layer.b;
            if i + 1 < self.layers.len() {
                h.mapv_inplace(relu);
            }
        }
        Ok(h)
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(view)?.into_raw_vec_and_offset().0)
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let out = h.dot(&layer.w) + &layer.b;
            inputs.push(h);
            h = out;
            if i + 1 < self.layers.len() {
                h.mapv_inplace(relu);
            }
        }
        Ok((h, ForwardCache { inputs }))
    }

    /// Parameter gradients given `dL/d(output)`.
    pub fn backward(&self, cache: &ForwardCache, grad_out: &Array2<f64>) -> Mlp {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let input = &cache.inputs[i];
            let w = input.t().dot(&g).as_standard_layout().into_owned();
            grads.push(Linear { w, b: g.sum_axis(Axis(0)) });
            if i > 0 {
                let mut prev = g.dot(&layer.w.t());
                // inputs to layer i are post-ReLU, so a zero marks an inactive unit
                prev.zip_mut_with(input, |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                g = prev;
            }
        }
        grads.reverse();
        Mlp { layers: grads }
    }

    pub fn param_slices(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.w.as_slice().expect("standard layout"), l.b.as_slice().expect("standard layout")])
            .collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.w.as_slice_mut().expect("standard layout"),
                    l.b.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn get_param(&self, mut index: usize) -> f64 {
        for s in self.param_slices() {
            if index < s.len() {
                return s[index];
            }
            index -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn set_param(&mut self, mut index: usize, value: f64) {
        for s in self.param_slices_mut() {
            if index < s.len() {
                s[index] = value;
                return;
            }
            index -= s.len();
        }
        panic!("parameter index out of range");
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }

    fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.w.dim() == b.w.dim() && a.b.len() == b.b.len())
    }
}

fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Stable `log softmax` of one row.
pub fn log_softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = max + logits.iter().map(|&v| (v - max).exp()).sum::<f64>().ln();
    logits.mapv(|v| v - lse)
}

pub fn softmax(logits: ArrayView1<f64>) -> Array1<f64> {
    log_softmax(logits).mapv(f64::exp)
}

/// Splits a logit row into consecutive categorical heads of the given sizes.
pub fn split_heads<'a>(row: ArrayView1<'a, f64>, heads: &[usize]) -> Vec<ArrayView1<'a, f64>> {
    let mut out = Vec::with_capacity(heads.len());
    let mut rest = row;
    for &k in heads {
        let (head, tail) = rest.split_at(Axis(0), k);
        out.push(head);
        rest = tail;
    }
    out
}

/// Mean factored cross-entropy `-1/B Σ_b Σ_k log p_k(targets[b][k])` and its
/// gradient with respect to the logits.
pub fn factored_nll(logits: &Array2<f64>, heads: &[usize], targets: &[Vec<usize>]) -> (f64, Array2<f64>) {
    let batch = logits.nrows();
    assert_eq!(batch, targets.len(), "one target per row");
    let scale = 1.0 / batch as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for (b, target) in targets.iter().enumerate() {
        let mut offset = 0;
        for (k, head) in split_heads(logits.row(b), heads).into_iter().enumerate() {
            let logp = log_softmax(head);
            loss -= logp[target[k]];
            for (j, lp) in logp.iter().enumerate() {
                grad[(b, offset + j)] = scale * lp.exp();
            }
            grad[(b, offset + target[k])] -= scale;
            offset += heads[k];
        }
    }
    (loss * scale, grad)
}

/// Mean squared error `1/B Σ (pred_b - y_b)^2` for a single-output net.
pub fn mse(pred: &Array2<f64>, y: &[f64]) -> (f64, Array2<f64>) {
    let batch = pred.nrows();
    let scale = 1.0 / batch as f64;
    let mut grad = Array2::zeros(pred.raw_dim());
    let mut loss = 0.0;
    for (b, &target) in y.iter().enumerate() {
        let e = pred[(b, 0)] - target;
        loss += e * e;
        grad[(b, 0)] = 2.0 * e * scale;
    }
    (loss * scale, grad)
}

/// Score-function surrogate `-1/B Σ log π(a_b | s_b) A_b` with `A` held
/// constant.
pub fn score_function(logits: &Array2<f64>, actions: &[usize], advantages: &[f64]) -> (f64, Array2<f64>) {
    let batch = logits.nrows();
    let scale = 1.0 / batch as f64;
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut loss = 0.0;
    for b in 0..batch {
        let logp = log_softmax(logits.row(b));
        let (a, adv) = (actions[b], advantages[b]);
        loss -= logp[a] * adv;
        for (j, lp) in logp.iter().enumerate() {
            grad[(b, j)] = scale * adv * lp.exp();
        }
        grad[(b, a)] -= scale * adv;
    }
    (loss * scale, grad)
}

/// Plain gradient descent.
pub fn sgd_step(net: &mut Mlp, grads: &Mlp, lr: f64) {
    for (p, g) in net.param_slices_mut().into_iter().zip(grads.param_slices()) {
        for (p, g) in p.iter_mut().zip(g) {
            *p -= lr * g;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let n = net.n_params();
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Mlp) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let mut i = 0;
        for (p, g) in net.param_slices_mut().into_iter().zip(grads.param_slices()) {
            for (p, &g) in p.iter_mut().zip(g) {
                self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
                self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
                let step = self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
                *p -= step;
                i += 1;
            }
        }
    }
}

/// `target ← τ online + (1 - τ) target`, coordinate-wise.
pub fn polyak(target: &mut Mlp, online: &Mlp, tau: f64) {
    assert!(target.same_shape(online), "polyak needs matching shapes");
    for (t, o) in target.param_slices_mut().into_iter().zip(online.param_slices()) {
        for (t, &o) in t.iter_mut().zip(o) {
            *t = tau * o + (1.0 - tau) * *t;
        }
    }
}

/// Online network plus its slowly tracking target copy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetPair {
    pub online: Mlp,
    pub target: Mlp,
    pub tau: f64,
}

impl TargetPair {
    pub fn new(online: Mlp, tau: f64) -> Self {
        assert!(tau > 0.0 && tau <= 1.0, "tau must lie in (0, 1]");
        Self { target: online.clone(), online, tau }
    }

    pub fn update_target(&mut self) {
        polyak(&mut self.target, &self.online, self.tau);
    }
}

/// Worst relative error between backprop and central differences of step
/// `h` over `n_probes` random parameter coordinates. `loss` maps the
/// network output to `(loss, dloss/doutput)`.
pub fn gradient_check<F, R>(net: &Mlp, x: ArrayView2<f64>, loss: F, n_probes: usize, h: f64, rng: &mut R) -> Result<f64>
where
    F: Fn(&Array2<f64>) -> (f64, Array2<f64>),
    R: Rng + ?Sized,
{
    let (out, cache) = net.forward_cached(x)?;
    let analytic = net.backward(&cache, &loss(&out).1);
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for _ in 0..n_probes {
        let i = rng.random_range(0..net.n_params());
        let original = net.get_param(i);
        probe.set_param(i, original + h);
        let up = loss(&probe.forward(x)?).0;
        probe.set_param(i, original - h);
        let down = loss(&probe.forward(x)?).0;
        probe.set_param(i, original);
        let numeric = (up - down) / (2.0 * h);
        let a = analytic.get_param(i);
        worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_CHECK_FLOOR));
    }
    Ok(worst)
}

/// Gradient magnitudes below this are compared in absolute terms.
pub const GRAD_CHECK_FLOOR: f64 = 1e-6;

pub const CHECKPOINT_FORMAT: &str = "futurevis-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: String,
    payload: T,
}

/// Writes `payload` as versioned JSON. Floats round-trip bit-exactly.
pub fn save_checkpoint<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    let env = Envelope { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, kind: kind.into(), payload };
    std::fs::write(path, serde_json::to_vec(&env)?)?;
    Ok(())
}

pub fn load_checkpoint<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let bytes = std::fs::read(path)?;
    let env: Envelope<serde_json::Value> = serde_json::from_slice(&bytes)?;
    if env.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown format `{}`", env.format)));
    }
    if env.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {}", env.version)));
    }
    if env.kind != kind {
        return Err(Error::Checkpoint(format!("expected a `{kind}` checkpoint, found `{}`", env.kind)));
    }
    Ok(serde_json::from_value(env.payload)?)
}
