//! Toy denoising diffusion sampler over fixed-length real vectors.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::GeneratorError;
use crate::nn::{Activation, Mlp, Optimizer, Standardizer};

pub const DEFAULT_STEPS: usize = 50;
pub const BETA_MIN: f64 = 1e-4;
pub const BETA_MAX: f64 = 0.02;
/// Width of the sinusoidal step embedding.
pub const STEP_EMBEDDING: usize = 16;

/// Linear variance schedule; step `k` runs from 1 to `K`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub betas: Vec<f64>,
    pub alpha_bars: Vec<f64>,
}

impl NoiseSchedule {
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self, GeneratorError> {
        if steps == 0 || !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(GeneratorError::Schedule(format!(
                "K = {steps}, beta in [{beta_min}, {beta_max}]"
            )));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                let s = if steps == 1 { 0.0 } else { i as f64 / (steps - 1) as f64 };
                beta_min + s * (beta_max - beta_min)
            })
            .collect();
        let mut alpha_bars = Vec::with_capacity(steps);
        let mut acc = 1.0;
        for b in &betas {
            acc *= 1.0 - b;
            alpha_bars.push(acc);
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    fn beta(&self, k: usize) -> f64 {
        self.betas[k - 1]
    }

    fn alpha_bar(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else {
            self.alpha_bars[k - 1]
        }
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, BETA_MIN, BETA_MAX).expect("valid default schedule")
    }
}

pub fn step_embedding(k: usize) -> [f64; STEP_EMBEDDING] {
    let mut e = [0.0; STEP_EMBEDDING];
    let half = STEP_EMBEDDING / 2;
    for i in 0..half {
        let w = (-(1000f64.ln()) * i as f64 / half as f64).exp();
        e[2 * i] = (k as f64 * w).sin();
        e[2 * i + 1] = (k as f64 * w).cos();
    }
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for HyperParams {
    fn default() -> Self {
        Self {
            hidden: vec![128; 3],
            epochs: 1000,
            batch: 16,
            lr: 0.003,
            seed: 0,
        }
    }
}

/// Smallest standard deviation used when normalizing samples.
const SAMPLE_STD_FLOOR: f64 = 1e-3;
/// Smallest standard deviation used when normalizing conditions.
const COND_STD_FLOOR: f64 = 1e-3;

/// `ε_θ`: predicts the injected noise from the noised sample, the condition
/// and the step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    pub net: Mlp,
    pub schedule: NoiseSchedule,
    pub sample_norm: Standardizer,
    pub cond_norm: Standardizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Per-dimension mean noise-prediction loss of every epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(f64::NAN)
    }
}

impl Denoiser {
    /// Untrained network with identity normalization.
    pub fn new(sample_dim: usize, cond_dim: usize, schedule: NoiseSchedule, hidden: &[usize], seed: u64) -> Self {
        let mut sizes = vec![sample_dim + cond_dim + STEP_EMBEDDING];
        sizes.extend_from_slice(hidden);
        sizes.push(sample_dim);
        Self {
            net: Mlp::new(&sizes, Activation::Silu, seed),
            schedule,
            sample_norm: Standardizer::identity(sample_dim),
            cond_norm: Standardizer::identity(cond_dim),
        }
    }

    pub fn sample_dim(&self) -> usize {
        self.net.output_dim()
    }

    pub fn cond_dim(&self) -> usize {
        self.net.input_dim() - self.sample_dim() - STEP_EMBEDDING
    }

    fn input(x: &[f64], c: &[f64], k: usize) -> Vec<f64> {
        let mut v = Vec::with_capacity(x.len() + c.len() + STEP_EMBEDDING);
        v.extend_from_slice(x);
        v.extend_from_slice(c);
        v.extend_from_slice(&step_embedding(k));
        v
    }

    /// Noise prediction in normalized coordinates.
    pub fn predict(&self, x: &[f64], c: &[f64], k: usize) -> Result<Vec<f64>, GeneratorError> {
        Ok(self.net.forward(&Self::input(x, c, k))?)
    }

    /// Summed squared-error noise-prediction loss of one normalized sample
    /// and its gradient with respect to the network parameters.
    pub fn loss_and_grad(&self, x0: &[f64], c: &[f64], k: usize, eps: &[f64]) -> Result<(f64, Vec<f64>), GeneratorError> {
        let ab = self.schedule.alpha_bar(k);
        let xk: Vec<f64> = x0
            .iter()
            .zip(eps)
            .map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e)
            .collect();
        let cache = self.net.forward_cached(&Self::input(&xk, c, k))?;
        let mut loss = 0.0;
        let mut dout = Vec::with_capacity(eps.len());
        for (p, e) in cache.output().iter().zip(eps) {
            loss += (p - e) * (p - e);
            dout.push(2.0 * (p - e));
        }
        let mut grad = vec![0.0; self.net.num_params()];
        self.net.backward(&cache, &dout, &mut grad);
        Ok((loss, grad))
    }

    /// [`Denoiser::loss_and_grad`] summed over a batch.
    pub fn batch_loss_and_grad(
        &self,
        x0: &[&[f64]],
        c: &[&[f64]],
        ks: &[usize],
        eps: &[Vec<f64>],
    ) -> Result<(f64, Vec<f64>), GeneratorError> {
        let mut input = Vec::with_capacity(x0.len() * self.net.input_dim());
        for ((x, c), (&k, e)) in x0.iter().zip(c).zip(ks.iter().zip(eps)) {
            let ab = self.schedule.alpha_bar(k);
            let xk: Vec<f64> = x.iter().zip(e).map(|(x, e)| ab.sqrt() * x + (1.0 - ab).sqrt() * e).collect();
            input.extend(Self::input(&xk, c, k));
        }
        let cache = self.net.forward_batch(&input, x0.len())?;
        let mut loss = 0.0;
        let mut dout = Vec::with_capacity(cache.output().len());
        for (p, e) in cache.output().iter().zip(eps.iter().flatten()) {
            loss += (p - e) * (p - e);
            dout.push(2.0 * (p - e));
        }
        let mut grad = vec![0.0; self.net.num_params()];
        self.net.backward_batch(&cache, &dout, &mut grad);
        Ok((loss, grad))
    }

    /// Fits normalization and network on `(condition, sample)` pairs.
    pub fn train(
        data: &[(Vec<f64>, Vec<f64>)],
        schedule: NoiseSchedule,
        hp: &HyperParams,
    ) -> Result<(Denoiser, TrainReport), GeneratorError> {
        let (c0, x0) = data.first().ok_or(GeneratorError::TooFewSamples { got: 0, need: 1 })?;
        for (c, x) in data {
            if x.len() != x0.len() || c.len() != c0.len() {
                return Err(GeneratorError::InconsistentLength {
                    expected: x0.len(),
                    got: x.len(),
                });
            }
        }
        let mut den = Denoiser::new(x0.len(), c0.len(), schedule, &hp.hidden, hp.seed);
        let xs: Vec<Vec<f64>> = data.iter().map(|(_, x)| x.clone()).collect();
        let cs: Vec<Vec<f64>> = data.iter().map(|(c, _)| c.clone()).collect();
        den.sample_norm = Standardizer::fit(&xs, SAMPLE_STD_FLOOR);
        den.cond_norm = Standardizer::fit(&cs, COND_STD_FLOOR);
        let xs: Vec<Vec<f64>> = xs.iter().map(|x| den.sample_norm.apply(x)).collect();
        let cs: Vec<Vec<f64>> = cs.iter().map(|c| den.cond_norm.apply(c)).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(hp.seed ^ 0xd1ff);
        let mut opt = Optimizer::sgd(hp.lr);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let k_max = den.schedule.steps();
        let mut epoch_losses = Vec::with_capacity(hp.epochs);
        let batch = hp.batch.max(1);
        for _ in 0..hp.epochs {
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(batch) {
                let mut x0 = Vec::with_capacity(chunk.len());
                let mut c = Vec::with_capacity(chunk.len());
                let mut ks = Vec::with_capacity(chunk.len());
                let mut eps = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    ks.push(rng.random_range(1..=k_max));
                    eps.push((0..xs[i].len()).map(|_| rng.sample(StandardNormal)).collect::<Vec<f64>>());
                    x0.push(xs[i].as_slice());
                    c.push(cs[i].as_slice());
                }
                let (l, mut grad) = den.batch_loss_and_grad(&x0, &c, &ks, &eps)?;
                total += l;
                let n = chunk.len() as f64;
                grad.iter_mut().for_each(|g| *g /= n);
                opt.step(den.net.params_mut(), &grad);
            }
            epoch_losses.push(total / (data.len() * den.sample_dim()) as f64);
        }
        if !den.net.is_finite() {
            return Err(GeneratorError::Diverged);
        }
        Ok((den, TrainReport { epoch_losses }))
    }

    /// One reverse-diffusion chain from `N(0, I)`; returns a sample in data
    /// coordinates.
    pub fn sample(&self, cond: &[f64], seed: u64) -> Result<Vec<f64>, GeneratorError> {
        if cond.len() != self.cond_dim() {
            return Err(GeneratorError::InconsistentLength {
                expected: self.cond_dim(),
                got: cond.len(),
            });
        }
        let c = self.cond_norm.apply(cond);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = self.sample_dim();
        let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        for k in (1..=self.schedule.steps()).rev() {
            let eps = self.predict(&x, &c, k)?;
            let (beta, ab, ab_prev) = (
                self.schedule.beta(k),
                self.schedule.alpha_bar(k),
                self.schedule.alpha_bar(k - 1),
            );
            let coef = beta / (1.0 - ab).sqrt();
            let scale = 1.0 / (1.0 - beta).sqrt();
            let sigma = (beta * (1.0 - ab_prev) / (1.0 - ab)).sqrt();
            for (xi, ei) in x.iter_mut().zip(&eps) {
                *xi = scale * (*xi - coef * ei);
                if k > 1 {
                    let z: f64 = rng.sample(StandardNormal);
                    *xi += sigma * z;
                }
            }
        }
        Ok(self.sample_norm.invert(&x))
    }
}
