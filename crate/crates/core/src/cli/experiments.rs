//! Runners for each experiment kind. Every runner returns its outputs as
//! in-memory artifacts so the collector can write them in a fixed order.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use super::config::{
    Experiment, ExperimentConfig, PtqAlgorithm, PtqBenchParams, QatDistillParams, QuantizeParams, TensorSource,
    ToleranceParams, ToyFamilyParams,
};
use super::output::Artifact;
use crate::distill::{curve_csv, evaluate_student, qat_distill, quantize_linear, CurvePoint, QatConfig};
use crate::error::Result;
use crate::genmodels::{train_toy_ar, ArConfig, MarkovSource, ParamSet, Sequence, ToyARModel};
use crate::numerics::{gaussian_matrix, median, Matrix, RngStream};
use crate::plot::{scatter_svg, Plot, Scale, Series};
use crate::ptq::{
    self, estimate_hessian, gptq, gptvq, omniquant_block, rtn, Activation, AffineBlock, GptqConfig, OmniQuantConfig,
    PtqRecord,
};
use crate::quant::{calibrate_uniform, fake_quant_self, quantize, FpFormat, QuantSpec, Scheme};
use crate::scaling::{fit_power_law, pareto_frontier, scaling_shift, BitAxis, ExperimentRecord, Verdict};
use crate::tolerance::{
    activation_csv, curve_csv as tolerance_curve_csv, final_within_peak, multi_step_protocol, post_injection_rho,
    record_activation_stats, single_step_sweep, trajectory_csv, variance_fluctuation, MultiStepResult, Pipeline,
    ToleranceCurve, ToyPair,
};

const PTQ_STREAM: u64 = 0x5054_5142;
const TENSOR_STREAM: u64 = 0x5445_4E53;
const HELD_OUT_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

/// Quote a CSV field when it holds a delimiter, quote or newline.
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

pub fn execute(cfg: &ExperimentConfig) -> Result<Vec<Artifact>> {
    match &cfg.experiment {
        Experiment::Quantize(p) => run_quantize(p, cfg.seed),
        Experiment::PtqBench(p) => {
            let records = run_ptq_bench(p, cfg.seed)?;
            ptq_artifacts(p, &records)
        }
        Experiment::QatDistill(p) => qat_artifacts(&run_qat(p, cfg.seed)?),
        Experiment::Tolerance(p) => run_tolerance(p, cfg.seed),
        Experiment::ScalingReport(p) => {
            let mut records = p.records.clone();
            if let Some(f) = &p.toy_family {
                records.extend(toy_family_records(f, cfg.seed)?);
            }
            scaling_artifacts(records)
        }
    }
}

fn run_quantize(p: &QuantizeParams, seed: u64) -> Result<Vec<Artifact>> {
    let x = match &p.tensor {
        TensorSource::Values(rows) => Matrix::from_rows(rows)?,
        TensorSource::Random { rows, cols, std } => {
            gaussian_matrix(&mut RngStream::new(seed, TENSOR_STREAM), *rows, *cols, *std)
        }
    };
    let mut artifacts = Vec::new();
    let mut rows = Vec::new();
    match p.spec.scheme {
        Scheme::Integer => {
            let cal = calibrate_uniform(&x, &p.spec, p.gamma, p.beta)?;
            let q = quantize(&x, &cal)?;
            for r in 0..x.rows() {
                for c in 0..x.cols() {
                    let params = cal.params_at(r, c);
                    let code = q.get(r, c);
                    let deq = params.dequantize_value(code);
                    rows.push(vec![
                        r.to_string(),
                        c.to_string(),
                        x[(r, c)].to_string(),
                        code.to_string(),
                        deq.to_string(),
                        (x[(r, c)] - deq).abs().to_string(),
                    ]);
                }
            }
            let prow: Vec<Vec<String>> = cal
                .params
                .iter()
                .enumerate()
                .map(|(g, q)| {
                    vec![g.to_string(), q.bits.to_string(), q.s.to_string(), q.z.to_string(), q.gamma.to_string(), q.beta.to_string()]
                })
                .collect();
            artifacts.push(Artifact::text("params.csv", csv(&["group", "bits", "s", "z", "gamma", "beta"], &prow)));
            artifacts.push(Artifact::json("params.json", &cal.params)?);
        }
        Scheme::Float { exp_bits, man_bits } => {
            let fmt = FpFormat::new(exp_bits, man_bits)?;
            let layout = p.spec.group_layout(x.rows(), x.cols())?;
            let deq = fake_quant_self(&x, &p.spec, p.gamma, p.beta)?;
            for r in 0..x.rows() {
                for c in 0..x.cols() {
                    rows.push(vec![
                        r.to_string(),
                        c.to_string(),
                        x[(r, c)].to_string(),
                        String::new(),
                        deq[(r, c)].to_string(),
                        (x[(r, c)] - deq[(r, c)]).abs().to_string(),
                    ]);
                }
            }
            let prow: Vec<Vec<String>> = (0..layout.count())
                .map(|g| {
                    vec![
                        g.to_string(),
                        exp_bits.to_string(),
                        man_bits.to_string(),
                        fmt.scale_for(&layout.gather(&x, g)).to_string(),
                    ]
                })
                .collect();
            artifacts.push(Artifact::text("params.csv", csv(&["group", "exp_bits", "man_bits", "scale"], &prow)));
        }
    }
    artifacts.push(Artifact::text("values.csv", csv(&["row", "col", "x", "code", "dequantized", "abs_error"], &rows)));
    Ok(artifacts)
}

/// Weights and a correlated calibration set for one benchmark instance.
fn ptq_instance(p: &PtqBenchParams, seed: u64) -> Result<(Matrix, Matrix)> {
    let mut rng = RngStream::new(seed, PTQ_STREAM);
    let w = gaussian_matrix(&mut rng, p.rows, p.cols, 1.0);
    let z = gaussian_matrix(&mut rng, p.calib_rows, p.cols, 1.0);
    let g = gaussian_matrix(&mut rng, p.cols, p.cols, 0.5 / (p.cols as f64).sqrt());
    let mut x = z.matmul(&Matrix::identity(p.cols).add(&g)?)?;
    if let Some(scale) = p.outlier_scale {
        for r in 0..x.rows() {
            x[(r, 0)] *= scale;
        }
    }
    Ok((w, x))
}

/// One record per (instance, algorithm), instance-major. Instance `i`
/// uses seed `seed + i`.
pub fn run_ptq_bench(p: &PtqBenchParams, seed: u64) -> Result<Vec<PtqRecord>> {
    let per_instance: Vec<Vec<PtqRecord>> = (0..p.instances)
        .into_par_iter()
        .map(|i| {
            let s = seed.wrapping_add(i as u64);
            let (w, x) = ptq_instance(p, s)?;
            let h = estimate_hessian(&x, p.damping)?;
            let base = ptq::proxy_loss(&w, &rtn(&w, &p.weight)?, &h)?;
            let mut out = Vec::with_capacity(p.algorithms.len());
            for alg in &p.algorithms {
                let (before, after) = match alg {
                    PtqAlgorithm::Rtn => (base, base),
                    PtqAlgorithm::Gptq => {
                        let cfg = GptqConfig { block_size: p.block_size, spec: p.weight, act_order: p.act_order };
                        (base, gptq(&w, &h, &cfg)?.proxy_loss)
                    }
                    PtqAlgorithm::Gptvq => {
                        let vq = p.vq.as_ref().ok_or(crate::Error::InvalidConfig {
                            field: "experiment.vq".into(),
                            message: "required when gptvq is listed".into(),
                        })?;
                        (base, gptvq(&w, &h, vq)?.proxy_loss)
                    }
                    PtqAlgorithm::Omniquant => {
                        let block = AffineBlock { weight: w.transpose(), bias: vec![0.0; p.rows], activation: Activation::Identity };
                        let r = omniquant_block(&block, &x, &OmniQuantConfig::new(p.weight, p.activation))?;
                        (r.baseline_error, r.recon_error)
                    }
                };
                out.push(PtqRecord {
                    algorithm: alg.label().into(),
                    bits: p.weight.bits,
                    shape: [p.rows, p.cols],
                    proxy_loss_before: before,
                    proxy_loss_after: after,
                    seed: s,
                    wall_ms: None,
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(per_instance.into_iter().flatten().collect())
}

fn ptq_artifacts(p: &PtqBenchParams, records: &[PtqRecord]) -> Result<Vec<Artifact>> {
    let mut rows = Vec::new();
    let mut series = Vec::new();
    for alg in &p.algorithms {
        let mine: Vec<&PtqRecord> = records.iter().filter(|r| r.algorithm == alg.label()).collect();
        let before: Vec<f64> = mine.iter().map(|r| r.proxy_loss_before).collect();
        let after: Vec<f64> = mine.iter().map(|r| r.proxy_loss_after).collect();
        let not_worse = mine.iter().filter(|r| r.proxy_loss_after <= r.proxy_loss_before).count();
        rows.push(vec![
            alg.label().to_string(),
            p.weight.bits.to_string(),
            mine.len().to_string(),
            crate::numerics::mean(&before).to_string(),
            crate::numerics::mean(&after).to_string(),
            not_worse.to_string(),
        ]);
        series.push(Series { name: alg.label().into(), points: before.into_iter().zip(after).collect() });
    }
    let svg = scatter_svg(
        &Plot {
            title: "PTQ objective: baseline vs method",
            x_label: "baseline (RTN or unoptimized block)",
            y_label: "after",
            x_scale: Scale::Log,
            y_scale: Scale::Log,
            lines: false,
        },
        &series,
    );
    Ok(vec![
        Artifact::jsonl("records.jsonl", records)?,
        Artifact::text(
            "summary.csv",
            csv(&["algorithm", "bits", "instances", "mean_before", "mean_after", "not_worse"], &rows),
        ),
        Artifact::text("ptq.svg", svg),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QatRow {
    pub seed: u64,
    pub arm: String,
    pub final_forward_kld: f64,
    pub final_token_accuracy: f64,
}

pub struct QatExperiment {
    /// Arm `rtn_start` is the quantized teacher before any training.
    pub rows: Vec<QatRow>,
    pub curves: Vec<(u64, String, Vec<CurvePoint>)>,
    pub arms: Vec<String>,
}

impl QatExperiment {
    pub fn median_kld(&self, arm: &str) -> f64 {
        let v: Vec<f64> = self.rows.iter().filter(|r| r.arm == arm).map(|r| r.final_forward_kld).collect();
        median(&v)
    }
}

/// Training and held-out sequences from the seeded Markov source.
pub fn qat_data(ar: &ArConfig, train: usize, held: usize, seed: u64) -> Result<(Vec<Sequence>, Vec<Sequence>)> {
    let src = MarkovSource::new(ar.vocab, ar.classes, seed)?;
    Ok((src.dataset(train, ar.seq_len, seed), src.dataset(held, ar.seq_len, seed ^ HELD_OUT_SALT)))
}

/// Seed `i` uses `seed + i` for its source, teacher and QAT streams.
pub fn run_qat(p: &QatDistillParams, seed: u64) -> Result<QatExperiment> {
    let seeds: Vec<u64> = (0..p.seeds as u64).map(|i| seed.wrapping_add(i)).collect();
    let setups: Vec<(ToyARModel, Vec<Sequence>, Vec<Sequence>)> = seeds
        .par_iter()
        .map(|&s| {
            let (train, held) = qat_data(&p.ar, p.train_sequences, p.held_out_sequences, s)?;
            Ok((train_toy_ar(&train, p.ar, &p.teacher, s)?, train, held))
        })
        .collect::<Result<_>>()?;
    let cells: Vec<(usize, Option<usize>)> =
        (0..seeds.len()).flat_map(|i| std::iter::once((i, None)).chain((0..p.arms.len()).map(move |a| (i, Some(a))))).collect();
    let results: Vec<(QatRow, Option<Vec<CurvePoint>>)> = cells
        .par_iter()
        .map(|&(i, arm)| {
            let (teacher, train, held) = &setups[i];
            match arm {
                None => {
                    let (q, _) = quantize_linear(&teacher.params, &p.weight)?;
                    let (kld, acc) = evaluate_student(teacher, &q, p.activation.as_ref(), held)?;
                    Ok((QatRow { seed: seeds[i], arm: "rtn_start".into(), final_forward_kld: kld, final_token_accuracy: acc }, None))
                }
                Some(a) => {
                    let cfg = QatConfig {
                        loss: p.arms[a],
                        weight: p.weight,
                        activation: p.activation,
                        steps: p.steps,
                        learning_rate: p.learning_rate,
                        batch: p.batch,
                        eval_every: p.eval_every,
                        seed: seeds[i],
                    };
                    let r = qat_distill(teacher, &cfg, train, held)?;
                    let row = QatRow {
                        seed: seeds[i],
                        arm: p.arms[a].label(),
                        final_forward_kld: r.final_forward_kld,
                        final_token_accuracy: r.final_token_accuracy,
                    };
                    Ok((row, Some(r.curve)))
                }
            }
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut curves = Vec::new();
    for (row, curve) in results {
        if let Some(c) = curve {
            curves.push((row.seed, row.arm.clone(), c));
        }
        rows.push(row);
    }
    let mut arms = vec!["rtn_start".to_string()];
    arms.extend(p.arms.iter().map(|a| a.label()));
    Ok(QatExperiment { rows, curves, arms })
}

fn qat_artifacts(e: &QatExperiment) -> Result<Vec<Artifact>> {
    let mut artifacts = Vec::new();
    let rows: Vec<Vec<String>> = e
        .rows
        .iter()
        .map(|r| vec![r.seed.to_string(), csv_field(&r.arm), r.final_forward_kld.to_string(), r.final_token_accuracy.to_string()])
        .collect();
    artifacts.push(Artifact::text("summary.csv", csv(&["seed", "arm", "final_forward_kld", "final_token_accuracy"], &rows)));
    let mut med = Vec::new();
    for arm in &e.arms {
        let acc: Vec<f64> = e.rows.iter().filter(|r| &r.arm == arm).map(|r| r.final_token_accuracy).collect();
        med.push(vec![csv_field(arm), e.median_kld(arm).to_string(), median(&acc).to_string(), acc.len().to_string()]);
    }
    artifacts.push(Artifact::text(
        "medians.csv",
        csv(&["arm", "median_forward_kld", "median_token_accuracy", "n_seeds"], &med),
    ));
    let mut series = Vec::new();
    for arm in e.arms.iter().skip(1) {
        let mine: Vec<&Vec<CurvePoint>> = e.curves.iter().filter(|(_, a, _)| a == arm).map(|(_, _, c)| c).collect();
        let mut points = Vec::new();
        if let Some(first) = mine.first() {
            for (k, pt) in first.iter().enumerate() {
                if pt.eval_forward_kld.is_some() {
                    let v: Vec<f64> = mine.iter().filter_map(|c| c[k].eval_forward_kld).collect();
                    points.push((pt.step as f64, median(&v)));
                }
            }
        }
        series.push(Series { name: arm.clone(), points });
    }
    for (seed, arm, c) in &e.curves {
        artifacts.push(Artifact::text(format!("curves/seed{seed}_{arm}.csv"), curve_csv(c)));
    }
    artifacts.push(Artifact::text(
        "qat.svg",
        scatter_svg(
            &Plot {
                title: "Held-out forward KLD to teacher (median over seeds)",
                x_label: "step",
                y_label: "forward KLD",
                x_scale: Scale::Linear,
                y_scale: Scale::Linear,
                lines: true,
            },
            &series,
        ),
    ));
    Ok(artifacts)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ToleranceSummary {
    pub harness_seed: u64,
    pub pipeline: String,
    pub step: usize,
    pub spearman_rho: f64,
    pub distinct_loss_levels: usize,
    pub post_injection_rho_median: f64,
    pub final_within_peak: usize,
    pub multi_step_seeds: usize,
    pub variance_fluctuation: f64,
}

pub struct ToleranceRun {
    pub harness_seed: u64,
    pub sweeps: Vec<ToleranceCurve>,
    pub multi: Vec<MultiStepResult>,
    pub summaries: Vec<ToleranceSummary>,
    pub activations: Vec<String>,
}

/// One harness seed: train the pair, then sweep, multi-step and record
/// activations for both pipelines.
pub fn tolerance_for_seed(p: &ToleranceParams, h: u64) -> Result<ToleranceRun> {
    let pair = ToyPair::train(&p.pair, h)?;
    let pipes: [&dyn Pipeline; 2] = [&pair.discrete, &pair.continuous];
    let sample: Vec<u64> = (0..p.sample_seeds as u64).collect();
    let multi_seeds: Vec<u64> = (0..p.multi_step.seeds as u64).collect();
    let act_seeds: Vec<u64> = (0..p.activation_seeds as u64).collect();
    let mut run = ToleranceRun { harness_seed: h, sweeps: Vec::new(), multi: Vec::new(), summaries: Vec::new(), activations: Vec::new() };
    for pipe in pipes {
        let step = p.step.unwrap_or(pipe.step_count() / 2);
        let sweep = single_step_sweep(pipe, step, &p.snr_db, &sample)?;
        let multi = multi_step_protocol(pipe, p.multi_step.snr_db, p.multi_step.fraction, &multi_seeds)?;
        let stats = record_activation_stats(pipe, &act_seeds)?;
        run.summaries.push(ToleranceSummary {
            harness_seed: h,
            pipeline: pipe.name().into(),
            step,
            spearman_rho: sweep.rho,
            distinct_loss_levels: sweep.distinct_loss_levels,
            post_injection_rho_median: median(&post_injection_rho(&multi)?),
            final_within_peak: final_within_peak(&multi).iter().filter(|b| **b).count(),
            multi_step_seeds: multi.per_seed.len(),
            variance_fluctuation: variance_fluctuation(&stats),
        });
        run.activations.push(activation_csv(&stats));
        run.sweeps.push(sweep);
        run.multi.push(multi);
    }
    Ok(run)
}

fn run_tolerance(p: &ToleranceParams, seed: u64) -> Result<Vec<Artifact>> {
    let runs: Vec<ToleranceRun> = (0..p.harness_seeds as u64)
        .into_par_iter()
        .map(|i| tolerance_for_seed(p, seed.wrapping_add(i)))
        .collect::<Result<_>>()?;
    let mut artifacts = Vec::new();
    let mut summary = Vec::new();
    for run in &runs {
        let dir = format!("h{}", run.harness_seed);
        for ((sweep, multi), acts) in run.sweeps.iter().zip(&run.multi).zip(&run.activations) {
            let name = &sweep.pipeline;
            artifacts.push(Artifact::text(format!("{dir}/sweep_{name}.csv"), tolerance_curve_csv(sweep)));
            let cells: Vec<Vec<String>> = sweep
                .cells
                .iter()
                .map(|c| vec![c.snr_db.to_string(), c.seed.to_string(), c.loss.to_string(), c.noise_norm.to_string()])
                .collect();
            artifacts.push(Artifact::text(format!("{dir}/cells_{name}.csv"), csv(&["snr_db", "seed", "loss", "noise_norm"], &cells)));
            artifacts.push(Artifact::text(format!("{dir}/multistep_{name}.csv"), trajectory_csv(multi)));
            artifacts.push(Artifact::text(format!("{dir}/activations_{name}.csv"), acts.clone()));
        }
        let sweep_series: Vec<Series> = run
            .sweeps
            .iter()
            .map(|s| Series { name: s.pipeline.clone(), points: s.snr_db.iter().copied().zip(s.loss_normalized.iter().copied()).collect() })
            .collect();
        artifacts.push(Artifact::text(
            format!("{dir}/sweep.svg"),
            scatter_svg(
                &Plot {
                    title: "Single-step injection: normalized final loss",
                    x_label: "SNR (dB)",
                    y_label: "normalized loss",
                    x_scale: Scale::Linear,
                    y_scale: Scale::Linear,
                    lines: true,
                },
                &sweep_series,
            ),
        ));
        let multi_series: Vec<Series> = run
            .multi
            .iter()
            .map(|m| {
                let peak = m.mean.iter().cloned().fold(0.0, f64::max);
                let scale = if peak > 0.0 { peak } else { 1.0 };
                Series { name: m.pipeline.clone(), points: m.mean.iter().enumerate().map(|(i, v)| (i as f64, v / scale)).collect() }
            })
            .collect();
        artifacts.push(Artifact::text(
            format!("{dir}/multistep.svg"),
            scatter_svg(
                &Plot {
                    title: "Early-step injection: deviation per step (scaled to peak)",
                    x_label: "step",
                    y_label: "deviation / peak",
                    x_scale: Scale::Linear,
                    y_scale: Scale::Linear,
                    lines: true,
                },
                &multi_series,
            ),
        ));
        for s in &run.summaries {
            summary.push(vec![
                s.harness_seed.to_string(),
                s.pipeline.clone(),
                s.step.to_string(),
                s.spearman_rho.to_string(),
                s.distinct_loss_levels.to_string(),
                s.post_injection_rho_median.to_string(),
                s.final_within_peak.to_string(),
                s.multi_step_seeds.to_string(),
                s.variance_fluctuation.to_string(),
            ]);
        }
    }
    artifacts.push(Artifact::text(
        "summary.csv",
        csv(
            &[
                "harness_seed",
                "pipeline",
                "step",
                "spearman_rho",
                "distinct_loss_levels",
                "post_injection_rho_median",
                "final_within_peak",
                "multi_step_seeds",
                "variance_fluctuation",
            ],
            &summary,
        ),
    ));
    Ok(artifacts)
}

fn param_count(m: &ToyARModel) -> u64 {
    m.params.tensors().iter().map(|t| t.data().len() as u64).sum()
}

/// Full-precision teachers and quantized students across model widths,
/// scored by held-out NLL.
pub fn toy_family_records(f: &ToyFamilyParams, seed: u64) -> Result<Vec<ExperimentRecord>> {
    let (train, held) = qat_data(&f.ar, f.train_sequences, f.held_out_sequences, seed)?;
    let spec = QuantSpec::weights(f.quant_bits)?;
    let per_width: Vec<Vec<ExperimentRecord>> = f
        .widths
        .par_iter()
        .map(|&width| {
            let ar = ArConfig { width, ..f.ar };
            let teacher = train_toy_ar(&train, ar, &f.teacher, seed)?;
            let cfg = QatConfig {
                loss: f.loss,
                weight: spec,
                activation: None,
                steps: f.steps,
                learning_rate: f.learning_rate,
                batch: 8,
                eval_every: f.steps.max(1),
                seed,
            };
            let student = qat_distill(&teacher, &cfg, &train, &[])?.student;
            let n = param_count(&teacher);
            Ok(vec![
                ExperimentRecord { label: "toy-w16a16".into(), n_params: n, w_bits: 16, a_bits: 16, quality: teacher.nll(&held)? },
                ExperimentRecord {
                    label: format!("toy-w{}a16", f.quant_bits),
                    n_params: n,
                    w_bits: f.quant_bits,
                    a_bits: 16,
                    quality: student.nll(&held)?,
                },
            ])
        })
        .collect::<Result<_>>()?;
    Ok(per_width.into_iter().flatten().collect())
}

fn record_order(a: &ExperimentRecord, b: &ExperimentRecord) -> std::cmp::Ordering {
    a.label
        .cmp(&b.label)
        .then(a.n_params.cmp(&b.n_params))
        .then(a.w_bits.cmp(&b.w_bits))
        .then(a.a_bits.cmp(&b.a_bits))
        .then(a.quality.total_cmp(&b.quality))
}

fn verdict_label(v: Verdict) -> &'static str {
    match v {
        Verdict::ADominates => "a_dominates",
        Verdict::BDominates => "b_dominates",
        Verdict::Mixed => "mixed",
    }
}

/// Merged records, per-family fits, frontiers, pairwise verdicts and a
/// log-log plot. Families are record labels.
pub fn scaling_artifacts(mut records: Vec<ExperimentRecord>) -> Result<Vec<Artifact>> {
    if records.is_empty() {
        return Err(crate::Error::EmptyInput);
    }
    for r in &records {
        r.validate()?;
    }
    records.sort_by(record_order);
    let mut families: BTreeMap<&str, Vec<ExperimentRecord>> = BTreeMap::new();
    for r in &records {
        families.entry(r.label.as_str()).or_default().push(r.clone());
    }
    let axes = [BitAxis::Mt, BitAxis::Ct];
    let mut fits = Vec::new();
    for (name, fam) in &families {
        for axis in axes {
            let pts: Vec<(f64, f64)> = fam.iter().map(|r| (axis.value(r) as f64, r.quality)).collect();
            let row = match fit_power_law(&pts) {
                Ok(f) => vec!["ok".into(), f.a.to_string(), f.b.to_string(), f.c.to_string(), f.rmse.to_string()],
                Err(e) => vec![csv_field(&e.to_string()), String::new(), String::new(), String::new(), String::new()],
            };
            let mut full = vec![csv_field(name), axis.label().to_string()];
            full.extend(row);
            full.push(fam.len().to_string());
            fits.push(full);
        }
    }
    let mut verdicts = Vec::new();
    let names: Vec<&&str> = families.keys().collect();
    for i in 0..names.len() {
        for j in (i + 1)..names.len() {
            for axis in axes {
                let v = match scaling_shift(&families[*names[i]], &families[*names[j]], axis) {
                    Ok(v) => verdict_label(v).to_string(),
                    Err(e) => csv_field(&format!("unavailable: {e}")),
                };
                verdicts.push(vec![csv_field(names[i]), csv_field(names[j]), axis.label().to_string(), v]);
            }
        }
    }
    let mut artifacts = vec![
        Artifact::jsonl("records.jsonl", &records)?,
        Artifact::text("fits.csv", csv(&["family", "axis", "status", "a", "b", "c", "rmse", "points"], &fits)),
        Artifact::text("verdicts.csv", csv(&["family_a", "family_b", "axis", "verdict"], &verdicts)),
    ];
    for axis in axes {
        let rows: Vec<Vec<String>> = pareto_frontier(&records, axis)
            .iter()
            .map(|r| {
                vec![
                    csv_field(&r.label),
                    r.n_params.to_string(),
                    r.w_bits.to_string(),
                    r.a_bits.to_string(),
                    axis.value(r).to_string(),
                    r.quality.to_string(),
                ]
            })
            .collect();
        let name = match axis {
            BitAxis::Mt => "frontier_mt.csv",
            BitAxis::Ct => "frontier_ct.csv",
        };
        artifacts.push(Artifact::text(name, csv(&["label", "n_params", "w_bits", "a_bits", "bits", "quality"], &rows)));
    }
    let series: Vec<Series> = families
        .iter()
        .map(|(name, fam)| Series {
            name: name.to_string(),
            points: fam.iter().map(|r| (model_bits_f64(r), r.quality)).collect(),
        })
        .collect();
    artifacts.push(Artifact::text(
        "scaling.svg",
        scatter_svg(
            &Plot {
                title: "Quality vs total model bits",
                x_label: "model bits",
                y_label: "quality (lower is better)",
                x_scale: Scale::Log,
                y_scale: Scale::Log,
                lines: true,
            },
            &series,
        ),
    ));
    Ok(artifacts)
}

fn model_bits_f64(r: &ExperimentRecord) -> f64 {
    crate::scaling::model_bits(r) as f64
}
