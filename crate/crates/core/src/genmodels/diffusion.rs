//! Noise-prediction diffusion on low-dimensional points.
//!
//! Notation: `α_t` is the per-step signal factor, `ᾱ_t = Π_{s≤t} α_s` the
//! cumulative signal, `β̄_t = sqrt(1 − ᾱ_t²)` the cumulative noise level, so
//! `x_t = ᾱ_t·x_0 + β̄_t·ε`. Steps are numbered `1..=T`; step `t` maps
//! `x_t` to `x_{t−1}`.

use serde::{Deserialize, Serialize};

use super::ar::accumulate;
use super::optim::{Adam, ParamSet, TensorRecord};
use crate::error::{Error, Result};
use crate::numerics::{gaussian_matrix, Matrix, RngStream};

const INIT_STREAM: u64 = 0x4445_4E49;
const TRAIN_STREAM: u64 = 0x5452_4E44;
const EVAL_STREAM: u64 = 0x4556_414C;
const SAMPLE_STREAM: u64 = 0x4446_534D;
const TIME_FREQS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    Ddpm,
    Ddim,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSchedule {
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    pub mode: SigmaMode,
}

impl DiffusionSchedule {
    /// Cosine schedule with per-step noise variance capped at 0.999.
    pub fn cosine(steps: usize, mode: SigmaMode) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidArgument("diffusion needs at least one step".into()));
        }
        let f = |t: usize| {
            let s = 0.008;
            ((t as f64 / steps as f64 + s) / (1.0 + s) * std::f64::consts::FRAC_PI_2).cos().powi(2)
        };
        let alphas: Vec<f64> = (1..=steps).map(|t| (f(t) / f(t - 1)).clamp(0.001, 1.0).sqrt()).collect();
        Self::from_alphas(alphas, mode)
    }

    pub fn from_alphas(alpha: Vec<f64>, mode: SigmaMode) -> Result<Self> {
        if alpha.is_empty() || alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::InvalidArgument("alphas must lie in (0, 1)".into()));
        }
        let mut alpha_bar = vec![1.0];
        for a in &alpha {
            let last = *alpha_bar.last().unwrap();
            alpha_bar.push(last * a);
        }
        Ok(DiffusionSchedule { alpha, alpha_bar, mode })
    }

    pub fn steps(&self) -> usize {
        self.alpha.len()
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `sqrt(1 − α_t²)`.
    pub fn beta(&self, t: usize) -> f64 {
        (1.0 - self.alpha(t).powi(2)).sqrt()
    }

    /// Cumulative signal factor; `alpha_bar(0) = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Cumulative noise level; `beta_bar(0) = 0`.
    pub fn beta_bar(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bar[t].powi(2)).max(0.0).sqrt()
    }

    /// `β̄_{t−1}·β_t/β̄_t` for DDPM, zero for DDIM.
    pub fn sigma(&self, t: usize) -> f64 {
        match self.mode {
            SigmaMode::Ddim => 0.0,
            SigmaMode::Ddpm => self.beta_bar(t - 1) * self.beta(t) / self.beta_bar(t),
        }
    }
}

/// Anything that predicts the noise in `x_t`.
pub trait NoisePredictor: Sync {
    fn dim(&self) -> usize;
    fn predict(&self, x: &[f64], t: usize, sched: &DiffusionSchedule) -> Vec<f64>;

    /// Named intermediate activations at `(x, t)`; empty when not applicable.
    fn activations(&self, _x: &[f64], _t: usize, _sched: &DiffusionSchedule) -> Vec<(&'static str, Vec<f64>)> {
        Vec::new()
    }
}

/// Exact posterior-mean noise predictor for a Gaussian target `N(μ, s²I)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianOracle {
    pub mean: Vec<f64>,
    pub std: f64,
}

impl NoisePredictor for GaussianOracle {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn predict(&self, x: &[f64], t: usize, sched: &DiffusionSchedule) -> Vec<f64> {
        let (a, b) = (sched.alpha_bar(t), sched.beta_bar(t));
        let denom = a * a * self.std * self.std + b * b;
        x.iter().zip(&self.mean).map(|(xi, mu)| b * (xi - a * mu) / denom).collect()
    }
}

/// `x_{t−1}` from `x_t` given the predicted noise and, for DDPM, a
/// standard-normal draw `z`:
/// `x_{t−1} = ᾱ_{t−1}·x̂_0 + sqrt(β̄_{t−1}² − σ_t²)·ε̂ + σ_t·z`,
/// `x̂_0 = (x_t − β̄_t·ε̂)/ᾱ_t`.
pub fn denoise_update(x: &[f64], eps: &[f64], t: usize, sched: &DiffusionSchedule, z: &[f64]) -> Vec<f64> {
    let (a, b) = (sched.alpha_bar(t), sched.beta_bar(t));
    let (a_prev, b_prev) = (sched.alpha_bar(t - 1), sched.beta_bar(t - 1));
    let sigma = sched.sigma(t);
    let dir = (b_prev * b_prev - sigma * sigma).max(0.0).sqrt();
    x.iter()
        .zip(eps)
        .zip(z)
        .map(|((xi, ei), zi)| a_prev * (xi - b * ei) / a + dir * ei + sigma * zi)
        .collect()
}

/// One reverse step from `x_next = x_t`, with noise from `stream` in DDPM mode.
pub fn diffusion_step(
    x_next: &[f64],
    t: usize,
    denoiser: &dyn NoisePredictor,
    sched: &DiffusionSchedule,
    stream: &mut RngStream,
) -> Result<Vec<f64>> {
    if t == 0 || t > sched.steps() {
        return Err(Error::IndexOutOfRange { index: t, len: sched.steps() + 1 });
    }
    let eps = denoiser.predict(x_next, t, sched);
    let z = draw_z(x_next.len(), sched, stream);
    Ok(denoise_update(x_next, &eps, t, sched, &z))
}

fn draw_z(d: usize, sched: &DiffusionSchedule, stream: &mut RngStream) -> Vec<f64> {
    match sched.mode {
        SigmaMode::Ddim => vec![0.0; d],
        SigmaMode::Ddpm => (0..d).map(|_| stream.normal()).collect(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionTrajectory {
    pub x0: Vec<f64>,
    /// `x_{t−1}` after each step, in generation order (`T` entries).
    pub states: Vec<Vec<f64>>,
    /// Predicted noise per step, before any hook.
    pub features: Vec<Vec<f64>>,
    pub activations: Vec<Vec<(&'static str, Vec<f64>)>>,
}

/// Sample from pure noise drawn from the stream keyed by `seed`.
pub fn diffusion_sample(denoiser: &dyn NoisePredictor, sched: &DiffusionSchedule, seed: u64) -> Result<DiffusionTrajectory> {
    let mut rng = RngStream::new(seed, SAMPLE_STREAM);
    diffusion_sample_with(denoiser, sched, &mut rng, &mut |_, _| Ok(()))
}

/// Sampling with a hook on the predicted noise of every step. Hook step
/// indices count generation order (`0` is the step from `x_T`).
pub fn diffusion_sample_with(
    denoiser: &dyn NoisePredictor,
    sched: &DiffusionSchedule,
    rng: &mut RngStream,
    hook: &mut dyn FnMut(usize, &mut Vec<f64>) -> Result<()>,
) -> Result<DiffusionTrajectory> {
    let d = denoiser.dim();
    let steps = sched.steps();
    let mut x: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
    let mut traj = DiffusionTrajectory {
        x0: Vec::new(),
        states: Vec::with_capacity(steps),
        features: Vec::with_capacity(steps),
        activations: Vec::with_capacity(steps),
    };
    for (i, t) in (1..=steps).rev().enumerate() {
        let eps = denoiser.predict(&x, t, sched);
        traj.activations.push(denoiser.activations(&x, t, sched));
        let mut hooked = eps.clone();
        hook(i, &mut hooked)?;
        let z = draw_z(d, sched, rng);
        x = denoise_update(&x, &hooked, t, sched, &z);
        traj.features.push(eps);
        traj.states.push(x.clone());
    }
    traj.x0 = x;
    Ok(traj)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenoiserParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl ParamSet for DenoiserParams {
    fn names() -> &'static [&'static str] {
        &["w1", "b1", "w2", "b2"]
    }

    fn tensors(&self) -> Vec<&Matrix> {
        vec![&self.w1, &self.b1, &self.w2, &self.b2]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        vec![&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }
}

/// `ε̂ = W2ᵀ·tanh(W1ᵀ·[x, emb(t)] + b1) + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct ToyDenoiser {
    pub dim: usize,
    pub width: usize,
    pub params: DenoiserParams,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DenoiserCheckpoint {
    kind: String,
    dim: usize,
    width: usize,
    tensors: Vec<TensorRecord>,
}

fn time_embedding(t: usize, steps: usize) -> [f64; 2 * TIME_FREQS] {
    let tau = t as f64 / steps as f64;
    let mut out = [0.0; 2 * TIME_FREQS];
    for k in 0..TIME_FREQS {
        let w = std::f64::consts::PI * (1u32 << k) as f64 * tau;
        out[2 * k] = w.sin();
        out[2 * k + 1] = w.cos();
    }
    out
}

impl ToyDenoiser {
    pub fn new(dim: usize, width: usize, seed: u64) -> Result<Self> {
        if dim == 0 || width == 0 {
            return Err(Error::InvalidArgument("denoiser needs positive dim and width".into()));
        }
        let mut rng = RngStream::new(seed, INIT_STREAM);
        let input = dim + 2 * TIME_FREQS;
        let params = DenoiserParams {
            w1: gaussian_matrix(&mut rng, input, width, 1.0 / (input as f64).sqrt()),
            b1: gaussian_matrix(&mut rng, 1, width, 0.1),
            w2: gaussian_matrix(&mut rng, width, dim, 0.01),
            b2: Matrix::zeros(1, dim),
        };
        Ok(ToyDenoiser { dim, width, params })
    }

    fn input(&self, x: &[f64], t: usize, steps: usize) -> Vec<f64> {
        let mut v = x.to_vec();
        v.extend_from_slice(&time_embedding(t, steps));
        v
    }

    fn hidden(&self, input: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let p = &self.params;
        let pre: Vec<f64> = (0..self.width)
            .map(|j| p.b1.data()[j] + input.iter().enumerate().map(|(i, v)| v * p.w1[(i, j)]).sum::<f64>())
            .collect();
        let act = pre.iter().map(|v| v.tanh()).collect();
        (pre, act)
    }

    fn output(&self, act: &[f64]) -> Vec<f64> {
        let p = &self.params;
        (0..self.dim)
            .map(|o| p.b2.data()[o] + act.iter().enumerate().map(|(j, a)| a * p.w2[(j, o)]).sum::<f64>())
            .collect()
    }

    /// Squared error `‖ε̂ − ε‖²/d` and its parameter gradient.
    fn loss_grad(&self, x: &[f64], t: usize, steps: usize, eps: &[f64]) -> (f64, DenoiserParams) {
        let input = self.input(x, t, steps);
        let (_, act) = self.hidden(&input);
        let out = self.output(&act);
        let d = self.dim as f64;
        let dout: Vec<f64> = out.iter().zip(eps).map(|(o, e)| 2.0 * (o - e) / d).collect();
        let loss = out.iter().zip(eps).map(|(o, e)| (o - e) * (o - e)).sum::<f64>() / d;
        let p = &self.params;
        let mut g = p.zeros_like();
        let mut dact = vec![0.0; self.width];
        for j in 0..self.width {
            for o in 0..self.dim {
                g.w2[(j, o)] = act[j] * dout[o];
                dact[j] += p.w2[(j, o)] * dout[o];
            }
        }
        g.b2.data_mut().copy_from_slice(&dout);
        for j in 0..self.width {
            let dpre = dact[j] * (1.0 - act[j] * act[j]);
            g.b1.data_mut()[j] = dpre;
            for (i, v) in input.iter().enumerate() {
                g.w1[(i, j)] = v * dpre;
            }
        }
        (loss, g)
    }

    /// Mean noise-prediction error on a fixed evaluation set drawn from `points`.
    pub fn eval_mse(&self, points: &[Vec<f64>], sched: &DiffusionSchedule, seed: u64) -> f64 {
        let mut rng = RngStream::new(seed, EVAL_STREAM);
        let mut total = 0.0;
        for x0 in points {
            let (xt, t, eps) = noised(x0, sched, &mut rng);
            total += self.loss_grad(&xt, t, sched.steps(), &eps).0;
        }
        total / points.len().max(1) as f64
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = DenoiserCheckpoint {
            kind: "toy_denoiser".into(),
            dim: self.dim,
            width: self.width,
            tensors: self.params.to_records(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: DenoiserCheckpoint = serde_json::from_str(s)?;
        if ck.kind != "toy_denoiser" {
            return Err(Error::InvalidArgument(format!("checkpoint kind `{}` is not toy_denoiser", ck.kind)));
        }
        let mut model = ToyDenoiser::new(ck.dim, ck.width, 0)?;
        model.params.load_records(&ck.tensors)?;
        Ok(model)
    }
}

impl NoisePredictor for ToyDenoiser {
    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: &[f64], t: usize, sched: &DiffusionSchedule) -> Vec<f64> {
        let (_, act) = self.hidden(&self.input(x, t, sched.steps()));
        self.output(&act)
    }

    fn activations(&self, x: &[f64], t: usize, sched: &DiffusionSchedule) -> Vec<(&'static str, Vec<f64>)> {
        let (pre, act) = self.hidden(&self.input(x, t, sched.steps()));
        vec![("pre", pre), ("hidden", act)]
    }
}

fn noised(x0: &[f64], sched: &DiffusionSchedule, rng: &mut RngStream) -> (Vec<f64>, usize, Vec<f64>) {
    let t = 1 + rng.below(sched.steps());
    let eps: Vec<f64> = x0.iter().map(|_| rng.normal()).collect();
    let (a, b) = (sched.alpha_bar(t), sched.beta_bar(t));
    let xt = x0.iter().zip(&eps).map(|(x, e)| a * x + b * e).collect();
    (xt, t, eps)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserTrainConfig {
    pub width: usize,
    pub steps: usize,
    pub batch: usize,
    pub learning_rate: f64,
}

impl Default for DenoiserTrainConfig {
    fn default() -> Self {
        DenoiserTrainConfig { width: 64, steps: 3000, batch: 64, learning_rate: 3e-3 }
    }
}

/// Noise-prediction MSE training with Adam.
pub fn train_toy_denoiser(
    points: &[Vec<f64>],
    sched: &DiffusionSchedule,
    cfg: &DenoiserTrainConfig,
    seed: u64,
) -> Result<ToyDenoiser> {
    if points.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dim = points[0].len();
    let mut model = ToyDenoiser::new(dim, cfg.width, seed)?;
    let mut opt = Adam::new(&model.params, cfg.learning_rate);
    let mut rng = RngStream::new(seed, TRAIN_STREAM);
    for step in 0..cfg.steps {
        let mut grads = model.params.zeros_like();
        let mut loss = 0.0;
        for _ in 0..cfg.batch {
            let x0 = &points[rng.below(points.len())];
            let (xt, t, eps) = noised(x0, sched, &mut rng);
            let (l, g) = model.loss_grad(&xt, t, sched.steps(), &eps);
            loss += l;
            accumulate(&mut grads, &g);
        }
        for t in grads.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v /= cfg.batch as f64);
        }
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { step });
        }
        opt.step(&mut model.params, &grads);
        if !model.params.all_finite() {
            return Err(Error::DivergedTraining { step });
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodels::data::{mmd2, GaussianMixture};

    struct Zero;

    impl NoisePredictor for Zero {
        fn dim(&self) -> usize {
            2
        }
        fn predict(&self, _x: &[f64], _t: usize, _s: &DiffusionSchedule) -> Vec<f64> {
            vec![0.0; 2]
        }
    }

    #[test]
    fn schedule_invariants() {
        let s = DiffusionSchedule::cosine(50, SigmaMode::Ddpm).unwrap();
        for t in 1..=50 {
            assert!(s.beta_bar(t) > s.beta_bar(t - 1));
            let expect = s.beta_bar(t - 1) * s.beta(t) / s.beta_bar(t);
            assert_eq!(s.sigma(t), expect);
            assert!(s.sigma(t) <= s.beta_bar(t - 1));
        }
        assert_eq!(s.beta_bar(0), 0.0);
        let d = DiffusionSchedule::cosine(50, SigmaMode::Ddim).unwrap();
        assert_eq!(d.sigma(7), 0.0);
    }

    #[test]
    fn ddim_zero_noise_is_rescaling() {
        let s = DiffusionSchedule::cosine(10, SigmaMode::Ddim).unwrap();
        let x = [0.5, -1.5];
        let mut rng = RngStream::new(1, 1);
        for t in 1..=10 {
            let out = diffusion_step(&x, t, &Zero, &s, &mut rng).unwrap();
            let r = s.alpha_bar(t - 1) / s.alpha_bar(t);
            assert!((out[0] - r * x[0]).abs() < 1e-12 && (out[1] - r * x[1]).abs() < 1e-12);
        }
        assert!(diffusion_step(&x, 0, &Zero, &s, &mut rng).is_err());
    }

    #[test]
    fn ddpm_step_mean_and_spread() {
        let s = DiffusionSchedule::cosine(10, SigmaMode::Ddpm).unwrap();
        let oracle = GaussianOracle { mean: vec![1.0, -1.0], std: 0.5 };
        let x = [0.3, 0.2];
        let t = 6;
        let mut r = RngStream::new(2, 0);
        let n = 10_000;
        let mut m = [0.0; 2];
        for _ in 0..n {
            let o = diffusion_step(&x, t, &oracle, &s, &mut r).unwrap();
            m[0] += o[0] / n as f64;
            m[1] += o[1] / n as f64;
        }
        let eps = oracle.predict(&x, t, &s);
        let mean = denoise_update(&x, &eps, t, &s, &[0.0, 0.0]);
        let tol = 3.0 * s.sigma(t) / 100.0;
        assert!((m[0] - mean[0]).abs() < tol && (m[1] - mean[1]).abs() < tol);
        let a = diffusion_step(&x, t, &oracle, &s, &mut RngStream::new(2, 1)).unwrap();
        let b = diffusion_step(&x, t, &oracle, &s, &mut RngStream::new(2, 2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn ddim_sampling_is_deterministic() {
        let s = DiffusionSchedule::cosine(12, SigmaMode::Ddim).unwrap();
        let oracle = GaussianOracle { mean: vec![2.0, 0.0], std: 0.3 };
        let a = diffusion_sample(&oracle, &s, 5).unwrap();
        assert_eq!(a, diffusion_sample(&oracle, &s, 5).unwrap());
        assert_eq!(a.states.len(), 12);
        assert_eq!(a.features.len(), 12);
    }

    #[test]
    fn oracle_sampling_recovers_target_mean() {
        let s = DiffusionSchedule::cosine(25, SigmaMode::Ddpm).unwrap();
        let oracle = GaussianOracle { mean: vec![1.5, -0.5], std: 0.4 };
        let n = 2000;
        let mut m = [0.0; 2];
        for seed in 0..n {
            let x = diffusion_sample(&oracle, &s, seed).unwrap().x0;
            m[0] += x[0] / n as f64;
            m[1] += x[1] / n as f64;
        }
        let tol = 3.0 * 0.4 / (n as f64).sqrt() + 0.01;
        assert!((m[0] - 1.5).abs() < tol && (m[1] + 0.5).abs() < tol, "{m:?}");
    }

    #[test]
    fn trained_denoiser_beats_zero_predictor() {
        let mix = GaussianMixture::default_2d();
        let mut rng = RngStream::new(3, 3);
        let train = mix.sample(1024, &mut rng);
        let held = mix.sample(512, &mut rng);
        let s = DiffusionSchedule::cosine(50, SigmaMode::Ddpm).unwrap();
        let cfg = DenoiserTrainConfig { steps: 1500, ..Default::default() };
        let untrained = ToyDenoiser::new(2, 64, 1).unwrap();
        let base = untrained.eval_mse(&held, &s, 9);
        assert!((base - 1.0).abs() < 0.15, "{base}");
        let model = train_toy_denoiser(&train, &s, &cfg, 1).unwrap();
        let mse = model.eval_mse(&held, &s, 9);
        assert!(mse < 0.9 * base, "{mse} vs {base}");
        let samples: Vec<Vec<f64>> = (0..200).map(|i| diffusion_sample(&model, &s, i).unwrap().x0).collect();
        let noise: Vec<Vec<f64>> = (0..200).map(|_| vec![rng.normal(), rng.normal()]).collect();
        assert!(mmd2(&samples, &held, 1.0) < mmd2(&noise, &held, 1.0));
        let short = DenoiserTrainConfig { steps: 3, ..cfg };
        assert_eq!(train_toy_denoiser(&train, &s, &short, 4).unwrap(), train_toy_denoiser(&train, &s, &short, 4).unwrap());
        let back = ToyDenoiser::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }
}
