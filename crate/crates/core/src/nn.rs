//! Minimal fully-connected networks with hand-written backpropagation.
//!
//! Parameters live in one flat vector so optimizers and finite-difference
//! checks can treat a network as a point in R^n.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MODEL_FORMAT: &str = "svip-mlp";
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input has {got} values, network expects {expected}")]
    InputSize { expected: usize, got: usize },
    #[error("unsupported model file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Silu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Silu => z / (1.0 + (-z).exp()),
            Activation::Tanh => z.tanh(),
        }
    }

    fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Silu => {
                let s = 1.0 / (1.0 + (-z).exp());
                s * (1.0 + z * (1.0 - s))
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
        }
    }
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

/// Multi-layer perceptron: hidden layers use `activation`, the output is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
}

/// Pre-activations and activations of one forward pass.
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l+1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

/// Activations of a batched forward pass, each row-major `batch x width`.
pub struct BatchCache {
    batch: usize,
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl BatchCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty cache")
    }
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty cache")
    }
}

impl Mlp {
    /// He-style uniform initialization, output layer scaled down.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(Self::count(sizes));
        let n_layers = sizes.len() - 1;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut bound = (6.0 / fan_in as f64).sqrt();
            if l + 1 == n_layers {
                bound *= 0.1;
            }
            for _ in 0..fan_in * fan_out {
                params.push(rng.random_range(-bound..bound));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Self {
            sizes: sizes.to_vec(),
            activation,
            params,
        }
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
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

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut offs = Vec::with_capacity(self.sizes.len());
        let mut o = 0;
        for w in self.sizes.windows(2) {
            offs.push(o);
            o += w[0] * w[1] + w[1];
        }
        offs
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward_cached(x)?.acts.pop().unwrap())
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<ForwardCache, ModelError> {
        if x.len() != self.input_dim() {
            return Err(ModelError::InputSize {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let offs = self.layer_offsets();
        let n_layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(n_layers + 1);
        let mut pre = Vec::with_capacity(n_layers);
        acts.push(x.to_vec());
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offs[l]..offs[l] + n_in * n_out];
            let b = &self.params[offs[l] + n_in * n_out..offs[l] + n_in * n_out + n_out];
            let input = &acts[l];
            let mut z = b.to_vec();
            for (o, zo) in z.iter_mut().enumerate() {
                let row = &w[o * n_in..(o + 1) * n_in];
                *zo += dot(row, input);
            }
            let a = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            acts.push(a);
        }
        Ok(ForwardCache { acts, pre })
    }

    /// Accumulates dL/dparams into `grad` given dL/doutput; returns dL/dinput.
    pub fn backward(&self, cache: &ForwardCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        let offs = self.layer_offsets();
        let n_layers = self.sizes.len() - 1;
        let mut delta = dout.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 != n_layers {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= self.activation.derivative(*z);
                }
            }
            let input = &cache.acts[l];
            let w_off = offs[l];
            let b_off = w_off + n_in * n_out;
            for o in 0..n_out {
                let d = delta[o];
                grad[b_off + o] += d;
                if d != 0.0 {
                    let g = &mut grad[w_off + o * n_in..w_off + (o + 1) * n_in];
                    for (gi, xi) in g.iter_mut().zip(input) {
                        *gi += d * xi;
                    }
                }
            }
            let w = &self.params[w_off..b_off];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        delta
    }

    /// Forward pass over `batch` row-major inputs.
    pub fn forward_batch(&self, xs: &[f64], batch: usize) -> Result<BatchCache, ModelError> {
        if xs.len() != batch * self.input_dim() {
            return Err(ModelError::InputSize {
                expected: batch * self.input_dim(),
                got: xs.len(),
            });
        }
        let offs = self.layer_offsets();
        let n_layers = self.sizes.len() - 1;
        let mut acts = vec![xs.to_vec()];
        let mut pre = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offs[l]..offs[l] + n_in * n_out];
            let b = &self.params[offs[l] + n_in * n_out..offs[l] + n_in * n_out + n_out];
            let mut z: Vec<f64> = b.iter().copied().cycle().take(batch * n_out).collect();
            // Z (batch x n_out) += A (batch x n_in) * W^T
            unsafe {
                matrixmultiply::dgemm(
                    batch, n_in, n_out, 1.0,
                    acts[l].as_ptr(), n_in as isize, 1,
                    w.as_ptr(), 1, n_in as isize,
                    1.0,
                    z.as_mut_ptr(), n_out as isize, 1,
                );
            }
            let a = if l + 1 == n_layers {
                z.clone()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            pre.push(z);
            acts.push(a);
        }
        Ok(BatchCache { batch, acts, pre })
    }

    /// Batched [`Mlp::backward`]: accumulates the gradient summed over the
    /// batch and returns dL/dinputs row-major.
    pub fn backward_batch(&self, cache: &BatchCache, dout: &[f64], grad: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad.len(), self.params.len());
        let batch = cache.batch;
        let offs = self.layer_offsets();
        let n_layers = self.sizes.len() - 1;
        let mut delta = dout.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 != n_layers {
                for (d, z) in delta.iter_mut().zip(&cache.pre[l]) {
                    *d *= self.activation.derivative(*z);
                }
            }
            let w_off = offs[l];
            let b_off = w_off + n_in * n_out;
            for row in delta.chunks_exact(n_out) {
                for (g, d) in grad[b_off..b_off + n_out].iter_mut().zip(row) {
                    *g += d;
                }
            }
            let mut prev = vec![0.0; batch * n_in];
            unsafe {
                // dW (n_out x n_in) += Delta^T * A
                matrixmultiply::dgemm(
                    n_out, batch, n_in, 1.0,
                    delta.as_ptr(), 1, n_out as isize,
                    cache.acts[l].as_ptr(), n_in as isize, 1,
                    1.0,
                    grad[w_off..b_off].as_mut_ptr(), n_in as isize, 1,
                );
                // dA (batch x n_in) = Delta * W
                matrixmultiply::dgemm(
                    batch, n_out, n_in, 1.0,
                    delta.as_ptr(), n_out as isize, 1,
                    self.params[w_off..b_off].as_ptr(), n_in as isize, 1,
                    0.0,
                    prev.as_mut_ptr(), n_in as isize, 1,
                );
            }
            delta = prev;
        }
        delta
    }

    pub fn to_file_json(&self) -> Result<String, ModelError> {
        Ok(serde_json::to_string(&ModelFile {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            network: self.clone(),
        })?)
    }

    pub fn from_file_json(s: &str) -> Result<Self, ModelError> {
        let f: ModelFile = serde_json::from_str(s)?;
        f.check()?;
        Ok(f.network)
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    version: u32,
    network: Mlp,
}

impl ModelFile {
    fn check(&self) -> Result<(), ModelError> {
        if self.format != MODEL_FORMAT || self.version != MODEL_VERSION {
            return Err(ModelError::Format(format!(
                "{} v{}",
                self.format, self.version
            )));
        }
        if Mlp::count(&self.network.sizes) != self.network.params.len() {
            return Err(ModelError::Format("parameter count does not match layer shapes".into()));
        }
        Ok(())
    }
}

/// Versioned envelope for any trained model payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub format: String,
    pub version: u32,
    pub kind: String,
    pub model: T,
}

impl<T: Serialize + for<'de> Deserialize<'de>> Envelope<T> {
    pub fn wrap(kind: &str, model: T) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            kind: kind.into(),
            model,
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<(), ModelError> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path, kind: &str) -> Result<T, ModelError> {
        let env: Envelope<T> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if env.format != MODEL_FORMAT || env.version != MODEL_VERSION || env.kind != kind {
            return Err(ModelError::Format(format!(
                "{} v{} kind {} (wanted {kind})",
                env.format, env.version, env.kind
            )));
        }
        Ok(env.model)
    }
}

/// Optimizer stepping a flat parameter vector.
#[derive(Debug, Clone)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(AdamState),
}

#[derive(Debug, Clone)]
pub struct AdamState {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn sgd(lr: f64) -> Self {
        Optimizer::Sgd { lr }
    }

    pub fn adam(lr: f64, n: usize) -> Self {
        Optimizer::Adam(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        })
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        match self {
            Optimizer::Sgd { lr } => {
                for (p, g) in params.iter_mut().zip(grad) {
                    *p -= *lr * g;
                }
            }
            Optimizer::Adam(s) => {
                s.t += 1;
                let c1 = 1.0 - s.beta1.powi(s.t);
                let c2 = 1.0 - s.beta2.powi(s.t);
                for i in 0..params.len() {
                    s.m[i] = s.beta1 * s.m[i] + (1.0 - s.beta1) * grad[i];
                    s.v[i] = s.beta2 * s.v[i] + (1.0 - s.beta2) * grad[i] * grad[i];
                    params[i] -= s.lr * (s.m[i] / c1) / ((s.v[i] / c2).sqrt() + s.eps);
                }
            }
        }
    }
}

/// Per-dimension affine normalization fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// `floor` keeps near-constant dimensions from blowing up.
    pub fn fit(rows: &[Vec<f64>], floor: f64) -> Self {
        let d = rows.first().map_or(0, |r| r.len());
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut std = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in std.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m) / n;
            }
        }
        let std = std.into_iter().map(|s| s.sqrt().max(floor)).collect();
        Self { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }
}
