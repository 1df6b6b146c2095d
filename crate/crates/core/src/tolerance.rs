//! Error-tolerance harness: SNR-controlled noise injection at the
//! feature-extraction output of each generation step, single-step sweeps,
//! multi-step accumulation, and activation statistics.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::genmodels::{
    ar_generate_with, diffusion_sample_with, train_toy_ar, train_toy_denoiser, ArConfig, DenoiserTrainConfig,
    DiffusionSchedule, GaussianMixture, MarkovSource, SigmaMode, ToyARModel, ToyDenoiser, TrainConfig,
};
use crate::numerics::{mean, spearman_rho, variance, RngStream};

const SAMPLE_STREAM: u64 = 0x544F_4C53;
const NOISE_STREAM: u64 = 0x544F_4C4E;

/// Relative tolerance used to bucket losses into plateaus.
pub const LEVEL_TOLERANCE: f64 = 1e-6;

/// Per-step record of one pipeline run.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    /// Representation-space reconstruction after each step.
    pub reconstructions: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub type StepHook<'a> = dyn FnMut(usize, &mut Vec<f64>) -> Result<()> + 'a;

/// Two-phase generation: each step extracts a feature, which the hook may
/// perturb, and then reconstructs in representation space.
pub trait Pipeline: Sync {
    fn name(&self) -> &'static str;
    fn step_count(&self) -> usize;
    fn run(&self, seed: u64, hook: &mut StepHook) -> Result<Trajectory>;
    /// Distance between final outputs.
    fn output_loss(&self, clean: &Trajectory, noisy: &Trajectory) -> f64;
    /// Named activations per step for one run.
    fn activations(&self, seed: u64) -> Result<Vec<Vec<(&'static str, Vec<f64>)>>>;
}

/// Codebook AR pipeline. The feature is the sampled token's centroid; the
/// reconstruction is the centroid of the token it re-encodes to.
pub struct DiscretePipeline {
    pub model: ToyARModel,
    pub top_k: usize,
}

impl Pipeline for DiscretePipeline {
    fn name(&self) -> &'static str {
        "discrete"
    }

    fn step_count(&self) -> usize {
        self.model.config.seq_len
    }

    fn run(&self, seed: u64, hook: &mut StepHook) -> Result<Trajectory> {
        let mut rng = RngStream::new(seed, SAMPLE_STREAM);
        let cond = (seed % self.model.config.classes as u64) as usize;
        let g = ar_generate_with(&self.model, cond, self.top_k, &mut rng, hook)?;
        Ok(Trajectory { reconstructions: g.reconstructions, output: g.tokens.iter().map(|&t| t as f64).collect() })
    }

    /// Token Hamming distance.
    fn output_loss(&self, clean: &Trajectory, noisy: &Trajectory) -> f64 {
        clean.output.iter().zip(&noisy.output).filter(|(a, b)| a != b).count() as f64
    }

    fn activations(&self, seed: u64) -> Result<Vec<Vec<(&'static str, Vec<f64>)>>> {
        let mut rng = RngStream::new(seed, SAMPLE_STREAM);
        let cond = (seed % self.model.config.classes as u64) as usize;
        Ok(ar_generate_with(&self.model, cond, self.top_k, &mut rng, &mut |_, _| Ok(()))?.activations)
    }
}

/// Diffusion pipeline. The feature is the predicted noise; the
/// reconstruction is the next state.
pub struct ContinuousPipeline {
    pub denoiser: ToyDenoiser,
    pub schedule: DiffusionSchedule,
}

impl Pipeline for ContinuousPipeline {
    fn name(&self) -> &'static str {
        "continuous"
    }

    fn step_count(&self) -> usize {
        self.schedule.steps()
    }

    fn run(&self, seed: u64, hook: &mut StepHook) -> Result<Trajectory> {
        let mut rng = RngStream::new(seed, SAMPLE_STREAM);
        let t = diffusion_sample_with(&self.denoiser, &self.schedule, &mut rng, hook)?;
        Ok(Trajectory { reconstructions: t.states, output: t.x0 })
    }

    /// Euclidean distance.
    fn output_loss(&self, clean: &Trajectory, noisy: &Trajectory) -> f64 {
        l2(&clean.output, &noisy.output)
    }

    fn activations(&self, seed: u64) -> Result<Vec<Vec<(&'static str, Vec<f64>)>>> {
        let mut rng = RngStream::new(seed, SAMPLE_STREAM);
        Ok(diffusion_sample_with(&self.denoiser, &self.schedule, &mut rng, &mut |_, _| Ok(()))?.activations)
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Sizes and training budgets of the default pipeline pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyPairConfig {
    pub ar: ArConfig,
    pub ar_train: TrainConfig,
    pub train_sequences: usize,
    pub denoiser: DenoiserTrainConfig,
    pub train_points: usize,
    pub sigma_mode: SigmaMode,
}

impl Default for ToyPairConfig {
    fn default() -> Self {
        ToyPairConfig {
            ar: ArConfig::default(),
            ar_train: TrainConfig::default(),
            train_sequences: 256,
            denoiser: DenoiserTrainConfig { steps: 1500, ..Default::default() },
            train_points: 1024,
            sigma_mode: SigmaMode::Ddim,
        }
    }
}

/// Discrete and continuous pipelines with equal step counts.
pub struct ToyPair {
    pub discrete: DiscretePipeline,
    pub continuous: ContinuousPipeline,
}

impl ToyPair {
    pub fn train(cfg: &ToyPairConfig, seed: u64) -> Result<Self> {
        let src = MarkovSource::new(cfg.ar.vocab, cfg.ar.classes, seed)?;
        let data = src.dataset(cfg.train_sequences, cfg.ar.seq_len, seed);
        let model = train_toy_ar(&data, cfg.ar, &cfg.ar_train, seed)?;
        let schedule = DiffusionSchedule::cosine(cfg.ar.seq_len, cfg.sigma_mode)?;
        let points = GaussianMixture::default_2d().sample(cfg.train_points, &mut RngStream::new(seed, 0x474D_4D00));
        let denoiser = train_toy_denoiser(&points, &schedule, &cfg.denoiser, seed)?;
        Ok(ToyPair {
            discrete: DiscretePipeline { model, top_k: cfg.ar.top_k },
            continuous: ContinuousPipeline { denoiser, schedule },
        })
    }
}

/// `feature + n` with i.i.d. Gaussian `n` whose per-entry variance puts
/// the signal-to-noise ratio at `snr_db` relative to the feature's mean
/// power. `+∞` leaves the feature unchanged.
pub fn inject_noise(feature: &[f64], snr_db: f64, stream: &mut RngStream) -> Result<Vec<f64>> {
    if snr_db == f64::INFINITY {
        return Ok(feature.to_vec());
    }
    let power = feature.iter().map(|v| v * v).sum::<f64>() / feature.len().max(1) as f64;
    if power == 0.0 {
        return Err(Error::ZeroSignal);
    }
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();
    Ok(feature.iter().map(|v| v + sigma * stream.normal()).collect())
}

fn noise_stream(seed: u64, step: usize) -> RngStream {
    RngStream::new(seed, NOISE_STREAM).split(step as u64)
}

/// Where and how hard to perturb one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NoiseSpec {
    pub snr_db: f64,
    pub injection_steps: Vec<usize>,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn validate(&self, step_count: usize) -> Result<()> {
        match self.injection_steps.iter().find(|&&s| s >= step_count) {
            Some(&s) => Err(Error::IndexOutOfRange { index: s, len: step_count }),
            None => Ok(()),
        }
    }
}

/// Run with noise at every injection step, recording the injected norms.
/// The noise draw at a step depends only on `(seed, step)`, so runs at
/// different SNRs perturb along the same direction.
pub fn run_injected(p: &dyn Pipeline, spec: &NoiseSpec) -> Result<(Trajectory, Vec<f64>)> {
    spec.validate(p.step_count())?;
    let mut norms = Vec::new();
    let (seed, snr_db) = (spec.seed, spec.snr_db);
    let traj = p.run(seed, &mut |step, feature| {
        if spec.injection_steps.contains(&step) {
            let noisy = inject_noise(feature, snr_db, &mut noise_stream(seed, step))?;
            norms.push(l2(&noisy, feature));
            *feature = noisy;
        }
        Ok(())
    })?;
    Ok((traj, norms))
}

/// One (snr, seed) cell of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepCell {
    pub snr_db: f64,
    pub seed: u64,
    pub loss: f64,
    pub noise_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToleranceCurve {
    pub pipeline: String,
    pub step: usize,
    pub snr_db: Vec<f64>,
    pub loss_mean: Vec<f64>,
    pub loss_std: Vec<f64>,
    /// `loss_mean` min-max scaled to [0, 1] (all zeros when constant).
    pub loss_normalized: Vec<f64>,
    pub n_seeds: usize,
    /// Spearman correlation between noise intensity (`−snr_db`) and mean loss.
    pub rho: f64,
    pub distinct_loss_levels: usize,
    pub cells: Vec<SweepCell>,
}

/// Number of plateaus among `values`, merging neighbours (after sorting)
/// that agree within `rel_tol` of the larger magnitude.
pub fn distinct_levels(values: &[f64], rel_tol: f64) -> usize {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut levels = 0;
    let mut anchor: Option<f64> = None;
    for x in v {
        match anchor {
            Some(a) if (x - a).abs() <= rel_tol * x.abs().max(a.abs()) => {}
            _ => {
                levels += 1;
                anchor = Some(x);
            }
        }
    }
    levels
}

/// Spearman correlation with constant inputs mapped to 0.
pub fn rho_or_zero(x: &[f64], y: &[f64]) -> Result<f64> {
    match spearman_rho(x, y) {
        Ok(r) => Ok(r),
        Err(Error::DegenerateInput(_)) => Ok(0.0),
        Err(e) => Err(e),
    }
}

/// Inject noise at `step` only, for every SNR and seed, and compare each
/// final output with the clean run of the same seed.
pub fn single_step_sweep(p: &dyn Pipeline, step: usize, snr_list: &[f64], seeds: &[u64]) -> Result<ToleranceCurve> {
    if step >= p.step_count() {
        return Err(Error::IndexOutOfRange { index: step, len: p.step_count() });
    }
    if snr_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidArgument("snr list must be strictly decreasing".into()));
    }
    if seeds.is_empty() || snr_list.is_empty() {
        return Err(Error::EmptyInput);
    }
    let clean: Vec<Trajectory> =
        seeds.par_iter().map(|&s| p.run(s, &mut |_, _| Ok(()))).collect::<Result<_>>()?;
    let grid: Vec<(usize, usize)> =
        (0..snr_list.len()).flat_map(|i| (0..seeds.len()).map(move |j| (i, j))).collect();
    let cells: Vec<SweepCell> = grid
        .par_iter()
        .map(|&(i, j)| {
            let spec = NoiseSpec { snr_db: snr_list[i], injection_steps: vec![step], seed: seeds[j] };
            let (traj, norms) = run_injected(p, &spec)?;
            Ok(SweepCell {
                snr_db: snr_list[i],
                seed: seeds[j],
                loss: p.output_loss(&clean[j], &traj),
                noise_norm: norms.first().copied().unwrap_or(0.0),
            })
        })
        .collect::<Result<_>>()?;
    let mut loss_mean = Vec::with_capacity(snr_list.len());
    let mut loss_std = Vec::with_capacity(snr_list.len());
    for row in cells.chunks(seeds.len()) {
        let l: Vec<f64> = row.iter().map(|c| c.loss).collect();
        loss_mean.push(mean(&l));
        loss_std.push(variance(&l).sqrt());
    }
    let lo = loss_mean.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = loss_mean.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let loss_normalized = loss_mean.iter().map(|v| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }).collect();
    let intensity: Vec<f64> = snr_list.iter().map(|s| -s).collect();
    let rho = if snr_list.len() >= 3 { rho_or_zero(&intensity, &loss_mean)? } else { 0.0 };
    Ok(ToleranceCurve {
        pipeline: p.name().to_string(),
        step,
        snr_db: snr_list.to_vec(),
        distinct_loss_levels: distinct_levels(&loss_mean, LEVEL_TOLERANCE),
        loss_mean,
        loss_std,
        loss_normalized,
        n_seeds: seeds.len(),
        rho,
        cells,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MultiStepResult {
    pub pipeline: String,
    pub snr_db: f64,
    pub injected_steps: usize,
    /// Reconstruction deviation from the clean run at every step, per seed.
    pub per_seed: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Number of leading steps covered by `fraction` of `steps`.
pub fn injected_step_count(fraction: f64, steps: usize) -> usize {
    ((fraction * steps as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Equal-intensity noise in the first `⌈fraction·steps⌉` steps, none after.
pub fn multi_step_protocol(p: &dyn Pipeline, snr_db: f64, fraction: f64, seeds: &[u64]) -> Result<MultiStepResult> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!("fraction {fraction} not in (0, 1]")));
    }
    if seeds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = p.step_count();
    let k = injected_step_count(fraction, n).min(n);
    let steps: Vec<usize> = (0..k).collect();
    let per_seed: Vec<Vec<f64>> = seeds
        .par_iter()
        .map(|&s| {
            let clean = p.run(s, &mut |_, _| Ok(()))?;
            let (noisy, _) = run_injected(p, &NoiseSpec { snr_db, injection_steps: steps.clone(), seed: s })?;
            Ok(clean.reconstructions.iter().zip(&noisy.reconstructions).map(|(a, b)| l2(a, b)).collect())
        })
        .collect::<Result<_>>()?;
    let mut m = Vec::with_capacity(n);
    let mut sd = Vec::with_capacity(n);
    for i in 0..n {
        let col: Vec<f64> = per_seed.iter().map(|r| r[i]).collect();
        m.push(mean(&col));
        sd.push(variance(&col).sqrt());
    }
    Ok(MultiStepResult { pipeline: p.name().to_string(), snr_db, injected_steps: k, per_seed, mean: m, std: sd })
}

/// Per seed, Spearman correlation between step index and reconstruction
/// deviation over the steps after the injection window (0 when undefined).
pub fn post_injection_rho(r: &MultiStepResult) -> Result<Vec<f64>> {
    r.per_seed
        .iter()
        .map(|dev| {
            let tail = &dev[r.injected_steps.min(dev.len())..];
            if tail.len() < 2 {
                return Ok(0.0);
            }
            let idx: Vec<f64> = (0..tail.len()).map(|i| i as f64).collect();
            rho_or_zero(&idx, tail)
        })
        .collect()
}

/// Per seed, whether the final deviation is at most the peak deviation
/// inside the injection window.
pub fn final_within_peak(r: &MultiStepResult) -> Vec<bool> {
    r.per_seed
        .iter()
        .map(|dev| {
            let peak = dev[..r.injected_steps.min(dev.len())].iter().cloned().fold(0.0, f64::max);
            dev.last().is_none_or(|&f| f <= peak)
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActivationStat {
    pub layer: String,
    pub step: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Per-layer, per-step statistics over all runs in `seeds` and all units.
pub fn record_activation_stats(p: &dyn Pipeline, seeds: &[u64]) -> Result<Vec<ActivationStat>> {
    if seeds.is_empty() {
        return Err(Error::EmptyInput);
    }
    let runs: Vec<Vec<Vec<(&'static str, Vec<f64>)>>> =
        seeds.par_iter().map(|&s| p.activations(s)).collect::<Result<_>>()?;
    let mut stats = Vec::new();
    let steps = runs[0].len();
    let layers: Vec<&'static str> = runs[0].first().map(|l| l.iter().map(|(n, _)| *n).collect()).unwrap_or_default();
    for (li, layer) in layers.iter().enumerate() {
        for step in 0..steps {
            let vals: Vec<f64> = runs.iter().flat_map(|r| r[step][li].1.iter().copied()).collect();
            stats.push(ActivationStat {
                layer: layer.to_string(),
                step,
                min: vals.iter().cloned().fold(f64::INFINITY, f64::min),
                max: vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
                mean: mean(&vals),
                variance: variance(&vals),
            });
        }
    }
    Ok(stats)
}

/// Across-step fluctuation of activation spread: for each layer the
/// variance of the per-step variances divided by their squared mean,
/// averaged over layers.
pub fn variance_fluctuation(stats: &[ActivationStat]) -> f64 {
    let mut layers: Vec<&str> = stats.iter().map(|s| s.layer.as_str()).collect();
    layers.dedup();
    let per_layer: Vec<f64> = layers
        .iter()
        .map(|l| {
            let v: Vec<f64> = stats.iter().filter(|s| s.layer == *l).map(|s| s.variance).collect();
            let m = mean(&v);
            if m > 0.0 {
                variance(&v) / (m * m)
            } else {
                0.0
            }
        })
        .collect();
    mean(&per_layer)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn curve_csv(c: &ToleranceCurve) -> String {
    let mut out = String::from("snr_db,loss_mean,loss_std,n_seeds\n");
    for i in 0..c.snr_db.len() {
        out.push_str(&format!("{},{},{},{}\n", fmt(c.snr_db[i]), fmt(c.loss_mean[i]), fmt(c.loss_std[i]), c.n_seeds));
    }
    out
}

pub fn trajectory_csv(r: &MultiStepResult) -> String {
    let mut out = String::from("step,loss_mean,loss_std,n_seeds\n");
    for i in 0..r.mean.len() {
        out.push_str(&format!("{},{},{},{}\n", i, fmt(r.mean[i]), fmt(r.std[i]), r.per_seed.len()));
    }
    out
}

pub fn activation_csv(stats: &[ActivationStat]) -> String {
    let mut out = String::from("layer,step,min,max,mean,variance\n");
    for s in stats {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            s.layer,
            s.step,
            fmt(s.min),
            fmt(s.max),
            fmt(s.mean),
            fmt(s.variance)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inject_noise_basics() {
        let f = [1.0, -2.0, 0.5];
        let mut s = RngStream::new(1, 1);
        assert_eq!(inject_noise(&f, f64::INFINITY, &mut s).unwrap(), f.to_vec());
        assert!(matches!(inject_noise(&[0.0; 3], 10.0, &mut s), Err(Error::ZeroSignal)));
        let a = inject_noise(&f, 5.0, &mut RngStream::new(2, 2)).unwrap();
        assert_eq!(a, inject_noise(&f, 5.0, &mut RngStream::new(2, 2)).unwrap());
    }

    #[test]
    fn zero_db_noise_matches_signal_power() {
        let f: Vec<f64> = (0..16).map(|i| (i as f64 * 0.7).sin() + 0.2).collect();
        let signal: f64 = f.iter().map(|v| v * v).sum();
        let mut s = RngStream::new(3, 0);
        let n = 1000;
        let mut acc = 0.0;
        for _ in 0..n {
            let g = inject_noise(&f, 0.0, &mut s).unwrap();
            acc += g.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n as f64;
        }
        assert!((acc / signal - 1.0).abs() < 0.05, "{}", acc / signal);
    }

    #[test]
    fn levels_and_rho_helpers() {
        assert_eq!(distinct_levels(&[0.0, 0.0, 1.0, 1.0 + 1e-9, 2.0], 1e-6), 3);
        assert_eq!(rho_or_zero(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(injected_step_count(0.1, 30), 3);
        assert_eq!(injected_step_count(0.1, 16), 2);
        assert_eq!(injected_step_count(1.0, 7), 7);
    }

    fn oracle_pipeline(steps: usize) -> ContinuousPipeline {
        ContinuousPipeline {
            denoiser: ToyDenoiser::new(2, 8, 1).unwrap(),
            schedule: DiffusionSchedule::cosine(steps, SigmaMode::Ddim).unwrap(),
        }
    }

    #[test]
    fn continuous_sweep_is_deterministic_and_positive() {
        let p = oracle_pipeline(8);
        let snr = [30.0, 20.0, 10.0, 0.0];
        let a = single_step_sweep(&p, 4, &snr, &[1, 2, 3]).unwrap();
        assert_eq!(a, single_step_sweep(&p, 4, &snr, &[1, 2, 3]).unwrap());
        assert!(a.loss_mean.iter().all(|l| *l > 0.0));
        assert!(single_step_sweep(&p, 8, &snr, &[1]).is_err());
        assert!(single_step_sweep(&p, 1, &[1.0, 2.0], &[1]).is_err());
    }

    #[test]
    fn multi_step_shapes() {
        let p = oracle_pipeline(10);
        let r = multi_step_protocol(&p, 10.0, 0.1, &[1, 2]).unwrap();
        assert_eq!(r.injected_steps, 1);
        assert_eq!(r.mean.len(), 10);
        assert!(r.mean[0] > 0.0);
        assert!(multi_step_protocol(&p, 10.0, 0.0, &[1]).is_err());
    }

    #[test]
    fn activation_stats_shape_and_determinism() {
        let p = oracle_pipeline(5);
        let a = record_activation_stats(&p, &[1, 2]).unwrap();
        assert_eq!(a.len(), 2 * 5);
        assert_eq!(a, record_activation_stats(&p, &[1, 2]).unwrap());
        assert!(activation_csv(&a).starts_with("layer,step,min,max,mean,variance\n"));
    }
}
