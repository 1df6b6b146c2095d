//! Distillation losses over student logits and quantization-aware
//! training of the toy AR model against its full-precision teacher.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodels::ar::{accumulate, ar_backward, ar_forward_quant, cross_entropy, softmax, ArParams, LINEAR_WEIGHTS};
use crate::genmodels::optim::{sgd_step, ParamSet};
use crate::genmodels::{Sequence, ToyARModel};
use crate::numerics::{Matrix, RngStream};
use crate::quant::{fake_quant_with_mask, QuantSpec};

/// Probability floor inside logarithms.
pub const EPS: f64 = 1e-12;

const QAT_STREAM: u64 = 0x5141_5444;

fn ln_floor(p: f64) -> f64 {
    p.max(EPS).ln()
}

/// `Σ p_t ln(p_t / p_s)`.
pub fn forward_kld(p_t: &[f64], p_s: &[f64]) -> f64 {
    p_t.iter().zip(p_s).map(|(&t, &s)| if t > 0.0 { t * (ln_floor(t) - ln_floor(s)) } else { 0.0 }).sum()
}

/// `Σ p_s ln(p_s / p_t)`.
pub fn reverse_kld(p_t: &[f64], p_s: &[f64]) -> f64 {
    forward_kld(p_s, p_t)
}

/// Membership in the teacher's top-`k` (ties at the boundary go to the
/// lowest index).
pub fn top_k_mask(p_t: &[f64], k: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..p_t.len()).collect();
    order.sort_by(|&a, &b| p_t[b].total_cmp(&p_t[a]).then(a.cmp(&b)));
    let mut mask = vec![false; p_t.len()];
    for &i in order.iter().take(k) {
        mask[i] = true;
    }
    mask
}

/// One position of TopKLD: reverse-KL terms on the teacher's top-`k`,
/// forward-KL terms on the rest. Not a divergence; it can be negative.
pub fn topkld_probs(p_t: &[f64], p_s: &[f64], k: usize) -> f64 {
    let mask = top_k_mask(p_t, k);
    let mut loss = 0.0;
    for ((&t, &s), &top) in p_t.iter().zip(p_s).zip(&mask) {
        if top {
            if s > 0.0 {
                loss += s * (ln_floor(s) - ln_floor(t));
            }
        } else if t > 0.0 {
            loss += t * (ln_floor(t) - ln_floor(s));
        }
    }
    loss
}

/// Derivative of [`topkld_probs`] with respect to the student probabilities.
fn topkld_dprobs(p_t: &[f64], p_s: &[f64], k: usize) -> Vec<f64> {
    let mask = top_k_mask(p_t, k);
    p_t.iter()
        .zip(p_s)
        .zip(&mask)
        .map(|((&t, &s), &top)| match (top, s > EPS) {
            (true, true) => s.ln() - ln_floor(t) + 1.0,
            (true, false) => EPS.ln() - ln_floor(t),
            (false, true) => -t / s,
            (false, false) => 0.0,
        })
        .collect()
}

/// Teacher probabilities and student logits for `T` positions over a
/// vocabulary of `V`.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillBatch {
    teacher_probs: Matrix,
    student_logits: Matrix,
    top_k: usize,
}

impl DistillBatch {
    pub fn new(teacher_probs: Matrix, student_logits: Matrix, top_k: usize) -> Result<Self> {
        if teacher_probs.shape() != student_logits.shape() {
            return Err(Error::Shape(format!(
                "teacher {:?} vs student {:?}",
                teacher_probs.shape(),
                student_logits.shape()
            )));
        }
        if top_k > teacher_probs.cols() {
            return Err(Error::InvalidArgument(format!("top_k {top_k} exceeds vocabulary {}", teacher_probs.cols())));
        }
        for r in 0..teacher_probs.rows() {
            let row = teacher_probs.row(r);
            if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("teacher row {r} is not a distribution")));
            }
        }
        Ok(DistillBatch { teacher_probs, student_logits, top_k })
    }

    pub fn positions(&self) -> usize {
        self.teacher_probs.rows()
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn student_probs(&self, t: usize) -> Vec<f64> {
        softmax(self.student_logits.row(t))
    }
}

/// TopKLD summed over positions.
pub fn topkld(batch: &DistillBatch) -> f64 {
    (0..batch.positions())
        .map(|t| topkld_probs(batch.teacher_probs.row(t), &batch.student_probs(t), batch.top_k))
        .sum()
}

/// Gradient of [`topkld`] with respect to the student logits.
pub fn topkld_grad(batch: &DistillBatch) -> Matrix {
    let v = batch.teacher_probs.cols();
    let mut grad = Matrix::zeros(batch.positions(), v);
    for t in 0..batch.positions() {
        let p = batch.student_probs(t);
        let g = topkld_dprobs(batch.teacher_probs.row(t), &p, batch.top_k);
        let mean: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        for (j, (pj, gj)) in p.iter().zip(&g).enumerate() {
            grad[(t, j)] = pj * (gj - mean);
        }
    }
    grad
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LossKind {
    ForwardKld,
    ReverseKld,
    Topkld { k: usize },
    CrossEntropyOnly,
}

impl LossKind {
    pub fn label(&self) -> String {
        match self {
            LossKind::ForwardKld => "forward_kld".into(),
            LossKind::ReverseKld => "reverse_kld".into(),
            LossKind::Topkld { k } => format!("topkld_k{k}"),
            LossKind::CrossEntropyOnly => "cross_entropy_only".into(),
        }
    }

    /// Mean per-position loss and its logit gradient for one sequence.
    fn loss_grad(&self, teacher_logits: &Matrix, student_logits: &Matrix, targets: &[usize]) -> Result<(f64, Matrix)> {
        let v = student_logits.cols();
        let k = match self {
            LossKind::CrossEntropyOnly => return Ok(cross_entropy(student_logits, targets)),
            LossKind::ForwardKld => 0,
            LossKind::ReverseKld => v,
            LossKind::Topkld { k } => *k,
        };
        let t = student_logits.rows();
        let probs: Vec<f64> = (0..t).flat_map(|i| softmax(teacher_logits.row(i))).collect();
        let batch = DistillBatch::new(Matrix::from_vec(t, v, probs)?, student_logits.clone(), k)?;
        let n = t as f64;
        Ok((topkld(&batch) / n, topkld_grad(&batch).map(|g| g / n)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QatConfig {
    pub loss: LossKind,
    /// Weight quantizer, applied per output channel of every linear layer.
    pub weight: QuantSpec,
    /// Per-tensor quantizer on linear-layer inputs; `None` keeps them in
    /// full precision.
    #[serde(default)]
    pub activation: Option<QuantSpec>,
    pub steps: usize,
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch: usize,
    /// Held-out evaluation period in steps; the last step is always evaluated.
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    pub seed: u64,
}

fn default_batch() -> usize {
    8
}

fn default_eval_every() -> usize {
    25
}

impl QatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig { field: "learning_rate".into(), message: "must be positive".into() });
        }
        if self.batch == 0 {
            return Err(Error::InvalidConfig { field: "batch".into(), message: "must be at least 1".into() });
        }
        self.weight.validate()?;
        if let Some(a) = &self.activation {
            a.validate()?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CurvePoint {
    pub step: usize,
    pub loss: f64,
    pub eval_forward_kld: Option<f64>,
    pub eval_token_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct QatResult {
    /// Latent full-precision weights after training.
    pub latent: ArParams,
    /// Deployable student with fake-quantized linear weights.
    pub student: ToyARModel,
    pub curve: Vec<CurvePoint>,
    pub final_forward_kld: f64,
    pub final_token_accuracy: f64,
}

/// Fake-quantize every linear weight per output channel, returning the
/// quantized copy and the straight-through masks.
pub fn quantize_linear(p: &ArParams, spec: &QuantSpec) -> Result<(ArParams, Vec<Vec<bool>>)> {
    let mut q = p.clone();
    let mut masks = Vec::with_capacity(LINEAR_WEIGHTS.len());
    for (i, t) in q.tensors_mut().into_iter().enumerate() {
        if !LINEAR_WEIGHTS.contains(&i) {
            continue;
        }
        let (fq, mask_t) = fake_quant_with_mask(&t.transpose(), spec, 1.0, 1.0)?;
        let (rows, cols) = t.shape();
        *t = fq.transpose();
        // mask_t is laid out over the transpose.
        masks.push((0..rows * cols).map(|idx| mask_t[(idx % cols) * rows + idx / cols]).collect());
    }
    Ok((q, masks))
}

/// Gradient of the configured loss at `quantized` weights, summed into a
/// batch mean, with saturated weight entries zeroed.
pub fn qat_gradient(
    teacher: &ToyARModel,
    quantized: &ArParams,
    masks: &[Vec<bool>],
    cfg: &QatConfig,
    batch: &[&Sequence],
) -> Result<(f64, ArParams)> {
    let mcfg = &teacher.config;
    let mut grads = quantized.zeros_like();
    let mut loss = 0.0;
    for s in batch {
        let prefix = &s.tokens[..s.tokens.len() - 1];
        let cache = ar_forward_quant(quantized, mcfg, s.cond, prefix, cfg.activation.as_ref())?;
        let teacher_logits = match cfg.loss {
            LossKind::CrossEntropyOnly => cache.logits.clone(),
            _ => teacher.forward(s)?.logits,
        };
        let (l, dlogits) = cfg.loss.loss_grad(&teacher_logits, &cache.logits, &s.tokens)?;
        loss += l / batch.len() as f64;
        let g = ar_backward(quantized, mcfg, &cache, &dlogits.map(|v| v / batch.len() as f64))?;
        accumulate(&mut grads, &g);
    }
    for (mask, &i) in masks.iter().zip(LINEAR_WEIGHTS.iter()) {
        let t = grads.tensors_mut().swap_remove(i);
        for (g, &keep) in t.data_mut().iter_mut().zip(mask) {
            if !keep {
                *g = 0.0;
            }
        }
    }
    Ok((loss, grads))
}

/// Mean per-position forward KLD from teacher to student and token
/// accuracy of the student's argmax against the data.
pub fn evaluate_student(
    teacher: &ToyARModel,
    student: &ArParams,
    act: Option<&QuantSpec>,
    held_out: &[Sequence],
) -> Result<(f64, f64)> {
    let mut kld = 0.0;
    let mut correct = 0usize;
    let mut count = 0usize;
    for s in held_out {
        let prefix = &s.tokens[..s.tokens.len() - 1];
        let sc = ar_forward_quant(student, &teacher.config, s.cond, prefix, act)?;
        let tc = teacher.forward(s)?;
        for (i, &y) in s.tokens.iter().enumerate() {
            let ps = softmax(sc.logits.row(i));
            kld += forward_kld(&softmax(tc.logits.row(i)), &ps);
            let arg = (0..ps.len()).fold(0, |b, j| if ps[j] > ps[b] { j } else { b });
            correct += (arg == y) as usize;
            count += 1;
        }
    }
    Ok((kld / count.max(1) as f64, correct as f64 / count.max(1) as f64))
}

/// Quantization-aware distillation.
///
/// The student starts as a copy of the teacher. Each step fake-quantizes
/// the latent weights, computes the loss on a seeded mini-batch, passes
/// the gradient straight through the quantizer (blocked only where it
/// saturated) and applies plain SGD to the latent weights.
pub fn qat_distill(
    teacher: &ToyARModel,
    cfg: &QatConfig,
    data: &[Sequence],
    held_out: &[Sequence],
) -> Result<QatResult> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut latent = teacher.params.clone();
    let mut rng = RngStream::new(cfg.seed, QAT_STREAM);
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let (quantized, masks) = quantize_linear(&latent, &cfg.weight)?;
        let batch: Vec<&Sequence> = (0..cfg.batch).map(|_| &data[rng.below(data.len())]).collect();
        let (loss, grads) = qat_gradient(teacher, &quantized, &masks, cfg, &batch)?;
        if !loss.is_finite() {
            return Err(Error::DivergedTraining { step });
        }
        let mut point = CurvePoint { step, loss, eval_forward_kld: None, eval_token_accuracy: None };
        if !held_out.is_empty() && (step % cfg.eval_every.max(1) == 0 || step + 1 == cfg.steps) {
            let (kld, acc) = evaluate_student(teacher, &quantized, cfg.activation.as_ref(), held_out)?;
            point.eval_forward_kld = Some(kld);
            point.eval_token_accuracy = Some(acc);
        }
        curve.push(point);
        sgd_step(&mut latent, &grads, cfg.learning_rate);
        if !latent.all_finite() {
            return Err(Error::DivergedTraining { step });
        }
    }
    let (quantized, _) = quantize_linear(&latent, &cfg.weight)?;
    let (final_forward_kld, final_token_accuracy) =
        evaluate_student(teacher, &quantized, cfg.activation.as_ref(), held_out)?;
    let student = ToyARModel { config: teacher.config, codebook: teacher.codebook.clone(), params: quantized };
    Ok(QatResult { latent, student, curve, final_forward_kld, final_token_accuracy })
}

/// Training curve as CSV with header `step,loss,eval_forward_kld,eval_token_accuracy`;
/// steps without evaluation leave those fields empty.
pub fn curve_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("step,loss,eval_forward_kld,eval_token_accuracy\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for p in curve {
        out.push_str(&format!(
            "{},{},{},{}\n",
            p.step,
            p.loss,
            opt(p.eval_forward_kld),
            opt(p.eval_token_accuracy)
        ));
    }
    out
}
