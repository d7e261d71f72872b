//! Dense feed-forward network in double precision.
//!
//! ReLU hidden layers with inverted dropout, a linear output layer, and
//! either plain gradient descent or Adam. Matrices are row-major with one
//! sample per row; layer weights are stored `[in][out]` so a forward pass is
//! `X * W + b`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// Dropout probability on hidden activations, in `[0, 1)`.
    pub dropout: f64,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>, output_dim: usize, dropout: f64) -> Result<Self> {
        let spec = Self { input_dim, hidden, output_dim, dropout };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::invalid("all layer widths must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden);
        w.push(self.output_dim);
        w
    }

    pub fn parameter_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Optimizer {
    /// Plain gradient descent.
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape { expected: rows * cols, got: data.len() });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape { expected: cols, got: r.len() });
            }
            data.extend_from_slice(r);
        }
        Ok(Self { rows: rows.len(), cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

/// `c = a(m x k) * b(k x n)` where either operand may be read transposed
/// through its strides. Overwrites `c`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, c: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the slices hold exactly m*k, k*n and m*n elements and the
    // strides above address only those elements.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0,
            a.as_ptr(), rsa, csa,
            b.as_ptr(), rsb, csb,
            0.0,
            c.as_mut_ptr(), n as isize, 1,
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Layer {
    in_dim: usize,
    out_dim: usize,
    w: Vec<f64>,
    b: Vec<f64>,
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

impl Layer {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            m_w: vec![0.0; in_dim * out_dim],
            v_w: vec![0.0; in_dim * out_dim],
            m_b: vec![0.0; out_dim],
            v_b: vec![0.0; out_dim],
        }
    }

    /// `out = x * W + b` for a batch of `rows` samples.
    fn affine(&self, x: &[f64], rows: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(rows * self.out_dim, 0.0);
        if rows <= 4 {
            // matrix-vector path; gemm packing would cost as much as the product
            for r in 0..rows {
                let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
                let o = &mut out[r * self.out_dim..(r + 1) * self.out_dim];
                for (i, &xi) in xr.iter().enumerate() {
                    if xi != 0.0 {
                        let wrow = &self.w[i * self.out_dim..(i + 1) * self.out_dim];
                        for (oj, wj) in o.iter_mut().zip(wrow) {
                            *oj += xi * wj;
                        }
                    }
                }
            }
        } else {
            gemm(rows, self.in_dim, self.out_dim, x, false, &self.w, false, out);
        }
        for r in 0..rows {
            for (oj, bj) in out[r * self.out_dim..(r + 1) * self.out_dim].iter_mut().zip(&self.b) {
                *oj += bj;
            }
        }
    }
}

struct Gradients {
    w: Vec<Vec<f64>>,
    b: Vec<Vec<f64>>,
}

/// Activations kept from a forward pass for backpropagation.
struct Cache {
    rows: usize,
    /// `acts[0]` is the input; `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<f64>>,
    /// Per hidden layer, the dropout multiplier (0 or `1/(1-p)`), if active.
    masks: Vec<Option<Vec<f64>>>,
}

/// A network together with its optimizer state and dropout RNG.
#[derive(Clone, Debug)]
pub struct Network {
    spec: NetworkSpec,
    optimizer: Optimizer,
    layers: Vec<Layer>,
    step: u64,
    seed: u64,
    rng: ChaCha8Rng,
}

impl PartialEq for Network {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
            && self.optimizer == other.optimizer
            && self.layers == other.layers
            && self.step == other.step
            && self.seed == other.seed
            && self.rng.get_word_pos() == other.rng.get_word_pos()
    }
}

impl Network {
    /// He-uniform weights, zero biases.
    pub fn new(spec: NetworkSpec, optimizer: Optimizer, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .widths()
            .windows(2)
            .map(|w| {
                let mut layer = Layer::zeros(w[0], w[1]);
                let limit = (6.0 / w[0] as f64).sqrt();
                for v in &mut layer.w {
                    *v = rng.random_range(-limit..limit);
                }
                layer
            })
            .collect();
        Ok(Self { spec, optimizer, layers, step: 0, seed, rng })
    }

    /// A network with every weight and bias at zero.
    pub fn zeroed(spec: NetworkSpec, optimizer: Optimizer, seed: u64) -> Result<Self> {
        let mut net = Self::new(spec, optimizer, seed)?;
        for l in &mut net.layers {
            l.w.fill(0.0);
        }
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn optimizer(&self) -> Optimizer {
        self.optimizer
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Sets the weights (`[in][out]`, row-major) and biases of layer `idx`.
    pub fn set_layer(&mut self, idx: usize, weights: &[f64], biases: &[f64]) -> Result<()> {
        let n = self.layers.len();
        let layer = self
            .layers
            .get_mut(idx)
            .ok_or_else(|| Error::invalid(format!("layer {idx} out of {n}")))?;
        if weights.len() != layer.w.len() {
            return Err(Error::Shape { expected: layer.w.len(), got: weights.len() });
        }
        if biases.len() != layer.b.len() {
            return Err(Error::Shape { expected: layer.b.len(), got: biases.len() });
        }
        layer.w.copy_from_slice(weights);
        layer.b.copy_from_slice(biases);
        Ok(())
    }

    pub fn layer_weights(&self, idx: usize) -> (&[f64], &[f64]) {
        (&self.layers[idx].w, &self.layers[idx].b)
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.spec.input_dim {
            return Err(Error::Shape { expected: self.spec.input_dim, got: cols });
        }
        Ok(())
    }

    fn draw_masks(&mut self, rows: usize) -> Vec<Option<Vec<f64>>> {
        let p = self.spec.dropout;
        let n_hidden = self.spec.hidden.len();
        if p == 0.0 {
            return vec![None; n_hidden];
        }
        let keep = 1.0 / (1.0 - p);
        (0..n_hidden)
            .map(|l| {
                let width = self.spec.hidden[l];
                Some((0..rows * width).map(|_| if self.rng.random::<f64>() < p { 0.0 } else { keep }).collect())
            })
            .collect()
    }

    fn forward_cached(&self, x: &[f64], rows: usize, masks: Vec<Option<Vec<f64>>>) -> Cache {
        let n = self.layers.len();
        let mut acts = Vec::with_capacity(n + 1);
        let mut pre = Vec::with_capacity(n);
        acts.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::new();
            layer.affine(&acts[l], rows, &mut z);
            let a = if l + 1 < n {
                let mut a: Vec<f64> = z.iter().map(|&v| v.max(0.0)).collect();
                if let Some(mask) = &masks[l] {
                    for (ai, mi) in a.iter_mut().zip(mask) {
                        *ai *= mi;
                    }
                }
                a
            } else {
                z.clone()
            };
            pre.push(z);
            acts.push(a);
        }
        Cache { rows, acts, pre, masks }
    }

    /// Evaluation-mode forward pass of one sample.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input.len())?;
        let mut cur = input.to_vec();
        let mut next = Vec::new();
        let n = self.layers.len();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, 1, &mut next);
            if l + 1 < n {
                for v in &mut next {
                    *v = v.max(0.0);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Evaluation-mode forward pass of a batch.
    pub fn predict_batch(&self, inputs: &Matrix) -> Result<Matrix> {
        self.check_input(inputs.cols)?;
        let cache = self.forward_cached(&inputs.data, inputs.rows, vec![None; self.spec.hidden.len()]);
        let out = cache.acts.into_iter().next_back().unwrap_or_default();
        Matrix::from_vec(inputs.rows, self.spec.output_dim, out)
    }

    /// Forward pass of one sample; dropout masks are drawn in train mode.
    pub fn forward(&mut self, input: &[f64], train_mode: bool) -> Result<Vec<f64>> {
        if !train_mode {
            return self.predict(input);
        }
        self.check_input(input.len())?;
        let masks = self.draw_masks(1);
        let cache = self.forward_cached(input, 1, masks);
        Ok(cache.acts.into_iter().next_back().unwrap_or_default())
    }

    /// Gradients of `sum_rows sum_cols mask * (y - target)^2 / rows`.
    fn backward(&self, cache: &Cache, targets: &[f64], mask: Option<&[f64]>) -> (f64, Gradients) {
        let rows = cache.rows;
        let n = self.layers.len();
        let out = &cache.acts[n];
        let mut loss = 0.0;
        let mut delta: Vec<f64> = out
            .iter()
            .zip(targets)
            .enumerate()
            .map(|(i, (&y, &t))| {
                let m = mask.map_or(1.0, |m| m[i]);
                let e = (y - t) * m;
                loss += e * e;
                2.0 * e / rows as f64
            })
            .collect();
        loss /= rows as f64;

        let mut gw = vec![Vec::new(); n];
        let mut gb = vec![Vec::new(); n];
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            if l + 1 < n {
                // through dropout and ReLU of layer l
                let z = &cache.pre[l];
                for (i, d) in delta.iter_mut().enumerate() {
                    if z[i] <= 0.0 {
                        *d = 0.0;
                    }
                }
                if let Some(m) = &cache.masks[l] {
                    for (d, mi) in delta.iter_mut().zip(m) {
                        *d *= mi;
                    }
                }
            }
            let mut w_grad = vec![0.0; layer.in_dim * layer.out_dim];
            gemm(layer.in_dim, rows, layer.out_dim, &cache.acts[l], true, &delta, false, &mut w_grad);
            let mut b_grad = vec![0.0; layer.out_dim];
            for r in 0..rows {
                for (g, d) in b_grad.iter_mut().zip(&delta[r * layer.out_dim..(r + 1) * layer.out_dim]) {
                    *g += d;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; rows * layer.in_dim];
                gemm(rows, layer.out_dim, layer.in_dim, &delta, false, &layer.w, true, &mut prev);
                delta = prev;
            }
            gw[l] = w_grad;
            gb[l] = b_grad;
        }
        (loss, Gradients { w: gw, b: gb })
    }

    fn apply(&mut self, grads: &Gradients, lr: f64) {
        self.step += 1;
        match self.optimizer {
            Optimizer::Sgd => {
                for (l, layer) in self.layers.iter_mut().enumerate() {
                    for (p, g) in layer.w.iter_mut().zip(&grads.w[l]) {
                        *p -= lr * g;
                    }
                    for (p, g) in layer.b.iter_mut().zip(&grads.b[l]) {
                        *p -= lr * g;
                    }
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                let t = self.step as i32;
                let c1 = 1.0 - beta1.powi(t);
                let c2 = 1.0 - beta2.powi(t);
                let update = |p: &mut [f64], m: &mut [f64], v: &mut [f64], g: &[f64]| {
                    for i in 0..p.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                    }
                };
                for (l, layer) in self.layers.iter_mut().enumerate() {
                    update(&mut layer.w, &mut layer.m_w, &mut layer.v_w, &grads.w[l]);
                    update(&mut layer.b, &mut layer.m_b, &mut layer.v_b, &grads.b[l]);
                }
            }
        }
    }

    /// One optimizer step on mean-squared error. Returns the loss measured
    /// before the step.
    pub fn train_batch(&mut self, inputs: &Matrix, targets: &Matrix, lr: f64) -> Result<f64> {
        self.train_inner(inputs, targets, None, lr)
    }

    /// Like [`Network::train_batch`], but only entries where `mask` is
    /// non-zero contribute to the loss.
    pub fn train_batch_masked(&mut self, inputs: &Matrix, targets: &Matrix, mask: &Matrix, lr: f64) -> Result<f64> {
        if mask.rows != targets.rows || mask.cols != targets.cols {
            return Err(Error::Shape { expected: targets.data.len(), got: mask.data.len() });
        }
        self.train_inner(inputs, targets, Some(&mask.data), lr)
    }

    fn train_inner(&mut self, inputs: &Matrix, targets: &Matrix, mask: Option<&[f64]>, lr: f64) -> Result<f64> {
        self.check_input(inputs.cols)?;
        if targets.cols != self.spec.output_dim {
            return Err(Error::Shape { expected: self.spec.output_dim, got: targets.cols });
        }
        if targets.rows != inputs.rows || inputs.rows == 0 {
            return Err(Error::Shape { expected: inputs.rows, got: targets.rows });
        }
        let masks = self.draw_masks(inputs.rows);
        let cache = self.forward_cached(&inputs.data, inputs.rows, masks);
        let (loss, grads) = self.backward(&cache, &targets.data, mask);
        if !loss.is_finite() {
            return Err(Error::Divergence(format!(
                "non-finite loss {loss} after {} optimizer steps (lr {lr})",
                self.step
            )));
        }
        self.apply(&grads, lr);
        Ok(loss)
    }

    /// Compares analytic gradients with central finite differences on
    /// `probes` randomly chosen parameters, with dropout disabled.
    ///
    /// Probes whose perturbation flips a ReLU on or off are skipped, since
    /// the loss is not differentiable there.
    pub fn gradient_check(&mut self, input: &[f64], target: &[f64], probes: usize, seed: u64) -> Result<GradientCheck> {
        const STEP: f64 = 1e-5;
        self.check_input(input.len())?;
        if target.len() != self.spec.output_dim {
            return Err(Error::Shape { expected: self.spec.output_dim, got: target.len() });
        }
        let no_masks = || vec![None; self.spec.hidden.len()];
        let base = self.forward_cached(input, 1, no_masks());
        let (_, grads) = self.backward(&base, target, None);
        let pattern = |c: &Cache| -> Vec<bool> { c.pre[..c.pre.len() - 1].iter().flatten().map(|&z| z > 0.0).collect() };
        let base_pattern = pattern(&base);

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = GradientCheck { max_rel_error: 0.0, checked: 0, skipped: 0 };
        for _ in 0..probes {
            let l = rng.random_range(0..self.layers.len());
            let n_w = self.layers[l].w.len();
            let idx = rng.random_range(0..n_w + self.layers[l].b.len());
            let analytic = if idx < n_w { grads.w[l][idx] } else { grads.b[l][idx - n_w] };

            let eval_at = |net: &mut Self, delta: f64| {
                let slot = if idx < n_w { &mut net.layers[l].w[idx] } else { &mut net.layers[l].b[idx - n_w] };
                let orig = *slot;
                *slot = orig + delta;
                let c = net.forward_cached(input, 1, vec![None; net.spec.hidden.len()]);
                let slot = if idx < n_w { &mut net.layers[l].w[idx] } else { &mut net.layers[l].b[idx - n_w] };
                *slot = orig;
                let loss: f64 = c.acts[c.acts.len() - 1].iter().zip(target).map(|(y, t)| (y - t).powi(2)).sum();
                (loss, pattern(&c))
            };
            let (plus, p_plus) = eval_at(self, STEP);
            let (minus, p_minus) = eval_at(self, -STEP);
            if p_plus != base_pattern || p_minus != base_pattern {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * STEP);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            report.max_rel_error = report.max_rel_error.max((analytic - numeric).abs() / denom);
            report.checked += 1;
        }
        Ok(report)
    }

    pub fn save(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.spec.parameter_count() * 8 * 3 + 64);
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, FORMAT_VERSION);
        put_u32(&mut out, self.spec.input_dim as u32);
        put_u32(&mut out, self.spec.hidden.len() as u32);
        for &h in &self.spec.hidden {
            put_u32(&mut out, h as u32);
        }
        put_u32(&mut out, self.spec.output_dim as u32);
        put_f64(&mut out, self.spec.dropout);
        match self.optimizer {
            Optimizer::Sgd => {
                out.push(0);
                for _ in 0..3 {
                    put_f64(&mut out, 0.0);
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                out.push(1);
                put_f64(&mut out, beta1);
                put_f64(&mut out, beta2);
                put_f64(&mut out, eps);
            }
        }
        put_u64(&mut out, self.step);
        put_u64(&mut out, self.seed);
        out.extend_from_slice(&self.rng.get_word_pos().to_le_bytes());
        for layer in &self.layers {
            for blob in [&layer.w, &layer.b, &layer.m_w, &layer.v_w, &layer.m_b, &layer.v_b] {
                for &v in blob.iter() {
                    put_f64(&mut out, v);
                }
            }
        }
        out
    }

    pub fn load(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic tag".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {version}")));
        }
        let input_dim = r.u32()? as usize;
        let n_hidden = r.u32()? as usize;
        if n_hidden > 1024 {
            return Err(Error::Checkpoint(format!("implausible hidden layer count {n_hidden}")));
        }
        let hidden = (0..n_hidden).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
        let output_dim = r.u32()? as usize;
        let dropout = r.f64()?;
        let spec = NetworkSpec::new(input_dim, hidden, output_dim, dropout)
            .map_err(|e| Error::Checkpoint(format!("invalid spec block: {e}")))?;
        let tag = r.take(1)?[0];
        let (b1, b2, eps) = (r.f64()?, r.f64()?, r.f64()?);
        let optimizer = match tag {
            0 => Optimizer::Sgd,
            1 => Optimizer::Adam { beta1: b1, beta2: b2, eps },
            other => return Err(Error::Checkpoint(format!("unknown optimizer tag {other}"))),
        };
        let step = r.u64()?;
        let seed = r.u64()?;
        let word_pos = u128::from_le_bytes(r.take(16)?.try_into().expect("16 bytes"));
        let needed = spec.parameter_count() * 3 * 8;
        if bytes.len() - r.pos != needed {
            return Err(Error::Checkpoint(format!(
                "expected {needed} bytes of layer data, found {}",
                bytes.len() - r.pos
            )));
        }
        let mut layers = Vec::new();
        for w in spec.widths().windows(2) {
            let mut layer = Layer::zeros(w[0], w[1]);
            for blob in [&mut layer.w, &mut layer.b, &mut layer.m_w, &mut layer.v_w, &mut layer.m_b, &mut layer.v_b] {
                for v in blob.iter_mut() {
                    *v = r.f64()?;
                }
            }
            layers.push(layer);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_word_pos(word_pos);
        Ok(Self { spec, optimizer, layers, step, seed, rng })
    }

    /// Loads a checkpoint and insists that it was built for `spec`.
    pub fn load_expecting(bytes: &[u8], spec: &NetworkSpec) -> Result<Self> {
        let net = Self::load(bytes)?;
        if net.spec != *spec {
            return Err(Error::SpecMismatch(format!(
                "checkpoint holds {:?}, expected {:?}",
                net.spec, spec
            )));
        }
        Ok(net)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

const MAGIC: &[u8; 4] = b"CMNN";
const FORMAT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub(crate) struct Reader<'a> {
    pub(crate) buf: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated: wanted {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
