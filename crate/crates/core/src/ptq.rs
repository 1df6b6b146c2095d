//! Post-training quantization: round-to-nearest, GPTQ, GPTVQ and an
//! OmniQuant-style block reconstruction search.
//!
//! Weights are `d_row x d_col` with the Hessian over the `d_col` input
//! dimension, so each row is an output channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genmodels::Codebook;
use crate::numerics::{cholesky, spd_inverse, spd_solve, Matrix};
use crate::quant::{
    calibrate_uniform, equivalent_transform, fake_quant, fake_quant_self, Calibration,
    EquivTransform, FpFormat, GroupLayout, QuantSpec, Scheme,
};

/// Damped second-moment estimate `H = 2·XᵀX/n` of a layer's inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianEstimate {
    pub h: Matrix,
    pub damping: f64,
    pub sample_count: usize,
}

impl HessianEstimate {
    pub fn from_matrix(h: Matrix, damping: f64) -> Result<Self> {
        if !h.is_symmetric(1e-10 * h.frobenius_norm().max(1.0)) {
            return Err(Error::InvalidArgument("hessian must be symmetric".into()));
        }
        if damping < 0.0 {
            return Err(Error::InvalidArgument("damping must be non-negative".into()));
        }
        Ok(HessianEstimate { h, damping, sample_count: 0 })
    }

    pub fn dim(&self) -> usize {
        self.h.rows()
    }

    /// `H + λI`.
    pub fn damped(&self) -> Matrix {
        let mut m = self.h.clone();
        for i in 0..m.rows() {
            m[(i, i)] += self.damping;
        }
        m
    }
}

/// `λ = λ_rel · mean(diag H)`; an all-zero calibration set uses `λ = λ_rel`.
pub fn estimate_hessian(calib_x: &Matrix, damping_rel: f64) -> Result<HessianEstimate> {
    let n = calib_x.rows();
    if n == 0 || calib_x.cols() == 0 {
        return Err(Error::EmptyCalibration);
    }
    let h = calib_x.gram().map(|v| 2.0 * v / n as f64);
    let mean_diag = h.diagonal().iter().sum::<f64>() / h.rows() as f64;
    let damping = if mean_diag > 0.0 { damping_rel * mean_diag } else { damping_rel };
    Ok(HessianEstimate { h, damping, sample_count: n })
}

/// `tr(ΔW (H+λI) ΔWᵀ)` with `ΔW = w − ŵ`.
pub fn proxy_loss(w: &Matrix, w_hat: &Matrix, h: &HessianEstimate) -> Result<f64> {
    let delta = w.sub(w_hat)?;
    if delta.cols() != h.dim() {
        return Err(Error::Shape(format!(
            "weights have {} columns but the hessian is {}x{}",
            delta.cols(),
            h.dim(),
            h.dim()
        )));
    }
    let hd = h.damped();
    let hd_delta_t = delta.matmul(&hd)?;
    Ok(delta.data().iter().zip(hd_delta_t.data()).map(|(a, b)| a * b).sum::<f64>().max(0.0))
}

/// Quantization grid fixed from the original weights before any update.
enum WeightGrid {
    Integer(Calibration),
    Float { fmt: FpFormat, layout: GroupLayout, scales: Vec<f64> },
}

impl WeightGrid {
    fn calibrate(w: &Matrix, spec: &QuantSpec) -> Result<Self> {
        match spec.scheme {
            Scheme::Integer => Ok(WeightGrid::Integer(calibrate_uniform(w, spec, 1.0, 1.0)?)),
            Scheme::Float { exp_bits, man_bits } => {
                let fmt = FpFormat::new(exp_bits, man_bits)?;
                let layout = spec.group_layout(w.rows(), w.cols())?;
                let scales = (0..layout.count()).map(|g| fmt.scale_for(&layout.gather(w, g))).collect();
                Ok(WeightGrid::Float { fmt, layout, scales })
            }
        }
    }

    fn snap(&self, r: usize, c: usize, v: f64) -> f64 {
        match self {
            WeightGrid::Integer(cal) => {
                let p = cal.params_at(r, c);
                p.dequantize_value(p.quantize_value(v))
            }
            WeightGrid::Float { fmt, layout, scales } => {
                let s = scales[layout.index(r, c)];
                fmt.round(v / s) * s
            }
        }
    }
}

/// Round-to-nearest baseline: per-group grid from min/max, no compensation.
pub fn rtn(w: &Matrix, spec: &QuantSpec) -> Result<Matrix> {
    let grid = WeightGrid::calibrate(w, spec)?;
    Ok(Matrix::from_fn(w.rows(), w.cols(), |r, c| grid.snap(r, c, w[(r, c)])))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GptqConfig {
    pub block_size: usize,
    pub spec: QuantSpec,
    /// Quantize columns in order of descending Hessian diagonal.
    pub act_order: bool,
}

impl GptqConfig {
    pub fn new(spec: QuantSpec, block_size: usize) -> Self {
        GptqConfig { block_size, spec, act_order: false }
    }
}

#[derive(Clone, Debug)]
pub struct GptqResult {
    pub weights: Matrix,
    pub proxy_loss: f64,
}

fn check_hessian(w: &Matrix, h: &HessianEstimate) -> Result<()> {
    if h.dim() != w.cols() {
        return Err(Error::Shape(format!(
            "hessian is {}x{} but weights have {} columns",
            h.dim(),
            h.dim(),
            w.cols()
        )));
    }
    Ok(())
}

/// Upper Cholesky factor `U` of `(H+λI)⁻¹`, so that `U[q, q:]` carries the
/// OBS update for column `q` given that columns `< q` are already fixed.
fn inverse_hessian_factor(hd: &Matrix) -> Result<Matrix> {
    let hinv = spd_inverse(hd)?;
    Ok(cholesky(&hinv)?.transpose())
}

fn column_order(h: &Matrix, act_order: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..h.rows()).collect();
    if act_order {
        order.sort_by(|&a, &b| h[(b, b)].total_cmp(&h[(a, a)]));
    }
    order
}

/// GPTQ with lazy block updates.
///
/// Within a block each quantized column updates the rest of the block
/// immediately; the block's scaled errors are applied to later columns
/// once the block completes. The accumulated update is applied one column
/// of errors at a time, in column order, so every weight sees the same
/// sequence of floating-point operations for any block size.
pub fn gptq(w: &Matrix, h: &HessianEstimate, cfg: &GptqConfig) -> Result<GptqResult> {
    check_hessian(w, h)?;
    if cfg.block_size == 0 {
        return Err(Error::InvalidArgument("block size must be at least 1".into()));
    }
    let grid = WeightGrid::calibrate(w, &cfg.spec)?;
    let (rows, n) = w.shape();
    let hd = h.damped();
    let perm = column_order(&hd, cfg.act_order);
    let hp = Matrix::from_fn(n, n, |i, j| hd[(perm[i], perm[j])]);
    let u = inverse_hessian_factor(&hp)?;

    let mut work = Matrix::from_fn(rows, n, |r, c| w[(r, perm[c])]);
    let mut out = Matrix::zeros(rows, n);
    let mut i1 = 0;
    while i1 < n {
        let i2 = (i1 + cfg.block_size).min(n);
        let mut err = Matrix::zeros(rows, i2 - i1);
        for i in i1..i2 {
            let d = u[(i, i)];
            for r in 0..rows {
                let q = grid.snap(r, perm[i], work[(r, i)]);
                out[(r, perm[i])] = q;
                let e = (work[(r, i)] - q) / d;
                err[(r, i - i1)] = e;
                for j in (i + 1)..i2 {
                    work[(r, j)] -= e * u[(i, j)];
                }
            }
        }
        for r in 0..rows {
            for k in 0..(i2 - i1) {
                let e = err[(r, k)];
                for j in i2..n {
                    work[(r, j)] -= e * u[(i1 + k, j)];
                }
            }
        }
        i1 = i2;
    }
    let proxy_loss = proxy_loss(w, &out, h)?;
    Ok(GptqResult { weights: out, proxy_loss })
}

/// Centroid minimizing `(x − c)ᵀ H (x − c)`, lowest index on ties.
pub fn gptvq_assign(x: &[f64], codebook: &Codebook, h_sub: &Matrix) -> usize {
    let mut best = (0, f64::INFINITY);
    for j in 0..codebook.size() {
        let cost = weighted_cost(x, codebook.centroid(j), h_sub);
        if cost < best.1 {
            best = (j, cost);
        }
    }
    best.0
}

/// `(x − c)ᵀ H (x − c)`.
pub fn weighted_cost(x: &[f64], c: &[f64], h: &Matrix) -> f64 {
    let d = x.len();
    let diff: Vec<f64> = x.iter().zip(c).map(|(a, b)| a - b).collect();
    let mut cost = 0.0;
    for i in 0..d {
        let mut row = 0.0;
        for j in 0..d {
            row += h[(i, j)] * diff[j];
        }
        cost += diff[i] * row;
    }
    cost
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VqConfig {
    /// Centroid dimension `d`; must divide the column count.
    pub dim: usize,
    /// Centroids per codebook.
    pub codebook_size: usize,
    /// Contiguous column groups, each with its own codebook.
    pub codebooks_per_group: usize,
    /// Lloyd iterations for codebook initialization.
    pub em_iters: usize,
    /// Keep every assignment query for later inspection.
    #[serde(default)]
    pub record_trace: bool,
}

/// One centroid assignment made during the GPTVQ sweep.
#[derive(Clone, Debug)]
pub struct AssignTrace {
    pub row: usize,
    pub col: usize,
    pub query: Vec<f64>,
    pub h_sub: Matrix,
    pub codebook: usize,
    pub index: usize,
}

#[derive(Clone, Debug)]
pub struct GptvqResult {
    pub weights: Matrix,
    pub codebooks: Vec<Codebook>,
    pub proxy_loss: f64,
    /// k-means objective after every E-step, one history per codebook.
    pub kmeans_history: Vec<Vec<f64>>,
    pub trace: Vec<AssignTrace>,
}

/// Hessian-weighted Lloyd iterations.
///
/// Each point carries its own weighting matrix. Centroids start from a
/// farthest-first traversal; the M-step is the weighted mean
/// `(Σ Hᵢ)⁻¹ Σ Hᵢ xᵢ`, and an empty cluster is re-seeded at the point with
/// the largest current cost. Returns the codebook and the objective after
/// every E-step (`iters + 1` values).
pub fn hessian_kmeans(
    points: &[Vec<f64>],
    weights: &[&Matrix],
    size: usize,
    iters: usize,
) -> Result<(Codebook, Vec<f64>)> {
    if points.is_empty() || size == 0 {
        return Err(Error::InvalidArgument("k-means needs points and a positive size".into()));
    }
    let d = points[0].len();
    let mut centroids = farthest_first(points, weights, size);
    let mut history = Vec::with_capacity(iters + 1);
    let mut assign = vec![0usize; points.len()];
    let mut costs = vec![0.0; points.len()];
    for it in 0..=iters {
        let cb = Codebook::from_centroids(d, centroids.concat())?;
        let mut objective = 0.0;
        for (i, p) in points.iter().enumerate() {
            assign[i] = gptvq_assign(p, &cb, weights[i]);
            costs[i] = weighted_cost(p, cb.centroid(assign[i]), weights[i]);
            objective += costs[i];
        }
        history.push(objective);
        if it == iters {
            break;
        }
        let mut reseeded = vec![false; points.len()];
        for (m, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<usize> = (0..points.len()).filter(|&i| assign[i] == m).collect();
            if members.is_empty() {
                let far = (0..points.len())
                    .filter(|&i| !reseeded[i])
                    .fold(None, |best: Option<usize>, i| match best {
                        Some(b) if costs[b] >= costs[i] => Some(b),
                        _ => Some(i),
                    });
                if let Some(p) = far {
                    reseeded[p] = true;
                    *centroid = points[p].clone();
                }
                continue;
            }
            *centroid = weighted_mean(points, weights, &members)?;
        }
    }
    Ok((Codebook::from_centroids(d, centroids.concat())?, history))
}

fn farthest_first(points: &[Vec<f64>], weights: &[&Matrix], size: usize) -> Vec<Vec<f64>> {
    let mut chosen = vec![points[0].clone()];
    let mut best: Vec<f64> =
        points.iter().enumerate().map(|(i, p)| weighted_cost(p, &points[0], weights[i])).collect();
    while chosen.len() < size {
        let next = (0..points.len()).fold(0, |b, i| if best[i] > best[b] { i } else { b });
        chosen.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            best[i] = best[i].min(weighted_cost(p, &points[next], weights[i]));
        }
    }
    chosen
}

/// Minimizer of `Σ (xᵢ − c)ᵀ Hᵢ (xᵢ − c)`, computed relative to the first
/// member so that identical members reproduce that member exactly.
fn weighted_mean(points: &[Vec<f64>], weights: &[&Matrix], members: &[usize]) -> Result<Vec<f64>> {
    let d = points[0].len();
    let anchor = &points[members[0]];
    let mut hsum = Matrix::zeros(d, d);
    let mut rhs = vec![0.0; d];
    for &i in members {
        let h = weights[i];
        for a in 0..d {
            for b in 0..d {
                hsum[(a, b)] += h[(a, b)];
                rhs[a] += h[(a, b)] * (points[i][b] - anchor[b]);
            }
        }
    }
    let offset = spd_solve(&hsum, &rhs)?;
    Ok(anchor.iter().zip(&offset).map(|(a, o)| a + o).collect())
}

fn upper_block(u: &Matrix, q: usize, d: usize) -> Matrix {
    u.principal_block(q, q + d)
}

/// Inverse of `UᵦᵀUᵦ`, the weighting for the block whose columns start at `q`.
fn block_hessian(ub: &Matrix) -> Result<Matrix> {
    spd_inverse(&ub.transpose().matmul(ub)?)
}

fn validate_vq(w: &Matrix, cfg: &VqConfig) -> Result<usize> {
    let n = w.cols();
    if cfg.dim == 0 || n % cfg.dim != 0 {
        return Err(Error::InvalidArgument(format!(
            "centroid dimension {} does not divide {n} columns",
            cfg.dim
        )));
    }
    if cfg.codebook_size == 0 || cfg.codebooks_per_group == 0 {
        return Err(Error::InvalidArgument("codebook size and count must be positive".into()));
    }
    if n % cfg.codebooks_per_group != 0 || (n / cfg.codebooks_per_group) % cfg.dim != 0 {
        return Err(Error::InvalidArgument(format!(
            "{} codebook groups cannot split {n} columns into blocks of {}",
            cfg.codebooks_per_group, cfg.dim
        )));
    }
    Ok(n / cfg.codebooks_per_group)
}

/// GPTVQ: `d` columns are quantized jointly against a per-group codebook
/// using the Hessian-weighted assignment, and the remaining columns are
/// compensated with a single block update.
pub fn gptvq(w: &Matrix, h: &HessianEstimate, cfg: &VqConfig) -> Result<GptvqResult> {
    gptvq_impl(w, h, cfg, None)
}

/// GPTVQ with caller-supplied codebooks (one per group); k-means is skipped.
pub fn gptvq_with_codebooks(
    w: &Matrix,
    h: &HessianEstimate,
    cfg: &VqConfig,
    codebooks: Vec<Codebook>,
) -> Result<GptvqResult> {
    if codebooks.len() != cfg.codebooks_per_group || codebooks.iter().any(|c| c.dim() != cfg.dim) {
        return Err(Error::InvalidArgument("codebooks do not match the configuration".into()));
    }
    gptvq_impl(w, h, cfg, Some(codebooks))
}

fn gptvq_impl(
    w: &Matrix,
    h: &HessianEstimate,
    cfg: &VqConfig,
    fixed: Option<Vec<Codebook>>,
) -> Result<GptvqResult> {
    check_hessian(w, h)?;
    let group_width = validate_vq(w, cfg)?;
    let (rows, n) = w.shape();
    let d = cfg.dim;
    let u = inverse_hessian_factor(&h.damped())?;
    let mut work = w.clone();
    let mut out = Matrix::zeros(rows, n);
    let mut codebooks = Vec::with_capacity(cfg.codebooks_per_group);
    let mut kmeans_history = Vec::new();
    let mut trace = Vec::new();

    for g in 0..cfg.codebooks_per_group {
        let g0 = g * group_width;
        let blocks: Vec<usize> = (g0..g0 + group_width).step_by(d).collect();
        let ubs: Vec<Matrix> = blocks.iter().map(|&q| upper_block(&u, q, d)).collect();
        let hsubs: Vec<Matrix> = ubs.iter().map(block_hessian).collect::<Result<_>>()?;

        let codebook = match &fixed {
            Some(cbs) => cbs[g].clone(),
            None => {
                let mut points = Vec::with_capacity(rows * blocks.len());
                let mut weights = Vec::with_capacity(rows * blocks.len());
                for (b, &q) in blocks.iter().enumerate() {
                    for r in 0..rows {
                        points.push(work.row(r)[q..q + d].to_vec());
                        weights.push(&hsubs[b]);
                    }
                }
                let (cb, hist) = hessian_kmeans(&points, &weights, cfg.codebook_size, cfg.em_iters)?;
                kmeans_history.push(hist);
                cb
            }
        };

        for (b, &q) in blocks.iter().enumerate() {
            let ub = &ubs[b];
            for r in 0..rows {
                let x = work.row(r)[q..q + d].to_vec();
                let j = gptvq_assign(&x, &codebook, &hsubs[b]);
                let c = codebook.centroid(j);
                out.row_mut(r)[q..q + d].copy_from_slice(c);
                if cfg.record_trace {
                    trace.push(AssignTrace {
                        row: r,
                        col: q,
                        query: x.clone(),
                        h_sub: hsubs[b].clone(),
                        codebook: g,
                        index: j,
                    });
                }
                // E·Uᵦ = x − c, solved forward since Uᵦ is upper triangular.
                let mut e = vec![0.0; d];
                for k in 0..d {
                    let mut s = x[k] - c[k];
                    for i in 0..k {
                        s -= e[i] * ub[(i, k)];
                    }
                    e[k] = s / ub[(k, k)];
                }
                let row = work.row_mut(r);
                for j in (q + d)..n {
                    let mut delta = 0.0;
                    for k in 0..d {
                        delta += e[k] * u[(q + k, j)];
                    }
                    row[j] -= delta;
                }
            }
        }
        codebooks.push(codebook);
    }
    let proxy_loss = proxy_loss(w, &out, h)?;
    Ok(GptvqResult { weights: out, codebooks, proxy_loss, kmeans_history, trace })
}

/// Brute-force optimum of the proxy loss over all grid assignments of a
/// single-row weight. The grid is the RTN grid for `spec`.
pub fn exhaustive_grid_optimum(w: &Matrix, h: &HessianEstimate, spec: &QuantSpec) -> Result<(Matrix, f64)> {
    if w.rows() != 1 {
        return Err(Error::Shape("exhaustive search supports a single row".into()));
    }
    let cal = calibrate_uniform(w, spec, 1.0, 1.0)?;
    let p = cal.params[0];
    let levels: Vec<f64> = (0..=spec.max_code()).map(|q| p.dequantize_value(q)).collect();
    let n = w.cols();
    let total = levels.len().pow(n as u32);
    let mut best: Option<(Matrix, f64)> = None;
    for code in 0..total {
        let mut rem = code;
        let values: Vec<f64> = (0..n)
            .map(|_| {
                let v = levels[rem % levels.len()];
                rem /= levels.len();
                v
            })
            .collect();
        let cand = Matrix::row_vector(&values)?;
        let loss = proxy_loss(w, &cand, h)?;
        if best.as_ref().is_none_or(|(_, b)| loss < *b) {
            best = Some((cand, loss));
        }
    }
    best.ok_or(Error::EmptyInput)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Gelu,
}

impl Activation {
    pub fn apply(&self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::Relu => v.max(0.0),
            Activation::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh())
            }
        }
    }
}

/// `act(X·W + b)` with `W` stored `c_in x c_out`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineBlock {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl AffineBlock {
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        forward_with(x, &self.weight, &self.bias, self.activation)
    }
}

fn forward_with(x: &Matrix, w: &Matrix, bias: &[f64], act: Activation) -> Result<Matrix> {
    let mut y = x.matmul(w)?;
    for r in 0..y.rows() {
        for (v, b) in y.row_mut(r).iter_mut().zip(bias) {
            *v = act.apply(*v + b);
        }
    }
    Ok(y)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OmniQuantConfig {
    /// Applied per output channel.
    pub weight: QuantSpec,
    /// Per-tensor activation quantizer; `None` keeps activations in full precision.
    pub activation: Option<QuantSpec>,
    pub rounds: usize,
    /// Points per axis of the initial (γ, β) grid over [0.5, 1].
    pub clip_grid: usize,
    pub golden_iters: usize,
    /// Candidate channel scales per side of the log-spaced grid.
    pub scale_steps: usize,
}

impl OmniQuantConfig {
    pub fn new(weight: QuantSpec, activation: Option<QuantSpec>) -> Self {
        OmniQuantConfig { weight, activation, rounds: 3, clip_grid: 6, golden_iters: 20, scale_steps: 4 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OmniQuantResult {
    pub gamma: f64,
    pub beta: f64,
    pub transform: EquivTransform,
    pub recon_error: f64,
    pub baseline_error: f64,
    /// Objective after every accepted step, starting from the baseline.
    pub history: Vec<f64>,
}

struct BlockObjective<'a> {
    block: &'a AffineBlock,
    x: &'a Matrix,
    target: Matrix,
    cfg: &'a OmniQuantConfig,
}

impl BlockObjective<'_> {
    fn quantized_output(&self, gamma: f64, beta: f64, t: &EquivTransform) -> Result<Matrix> {
        let (xt, wt, bt) = equivalent_transform(self.x, &self.block.weight, &self.block.bias, t)?;
        let wq = fake_quant_clipped(&wt.transpose(), &self.cfg.weight, gamma, beta)?.transpose();
        let xq = match &self.cfg.activation {
            Some(spec) => fake_quant_self(&xt, spec, 1.0, 1.0)?,
            None => xt,
        };
        forward_with(&xq, &wq, &bt, self.block.activation)
    }

    fn error(&self, gamma: f64, beta: f64, t: &EquivTransform) -> Result<f64> {
        let y = self.quantized_output(gamma, beta, t)?;
        let n = y.data().len() as f64;
        Ok(y.sub(&self.target)?.data().iter().map(|v| v * v).sum::<f64>() / n)
    }
}

fn fake_quant_clipped(w: &Matrix, spec: &QuantSpec, gamma: f64, beta: f64) -> Result<Matrix> {
    match spec.scheme {
        Scheme::Integer => fake_quant(w, &calibrate_uniform(w, spec, gamma, beta)?),
        Scheme::Float { .. } => fake_quant_self(w, spec, gamma, beta),
    }
}

struct SearchState {
    gamma: f64,
    beta: f64,
    t: EquivTransform,
    err: f64,
    history: Vec<f64>,
}

impl SearchState {
    fn offer(&mut self, gamma: f64, beta: f64, t: Option<EquivTransform>, err: f64) -> bool {
        if err < self.err {
            self.gamma = gamma;
            self.beta = beta;
            if let Some(t) = t {
                self.t = t;
            }
            self.err = err;
            self.history.push(err);
            true
        } else {
            false
        }
    }
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section minimum of `f` over `[lo, hi]`; returns `(x, f(x))`.
fn golden_section(lo: f64, hi: f64, iters: usize, mut f: impl FnMut(f64) -> Result<f64>) -> Result<(f64, f64)> {
    let (mut a, mut b) = (lo, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    for _ in 0..iters {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d)?;
        }
    }
    Ok(if fc <= fd { (c, fc) } else { (d, fd) })
}

/// Derivative-free block reconstruction search over weight clipping
/// `(γ, β)` and the equivalent transform `(s, δ)`.
///
/// Coordinate descent alternating (i) a `(γ, β)` grid on [0.5, 1] with
/// golden-section refinement of each factor, and (ii) per-channel scales
/// from a log-spaced grid around `sqrt(range(X_j) / range(W_j))` plus a
/// shift candidate at the channel means. Only strictly improving moves are
/// accepted, so the result never exceeds the `γ = β = 1`, identity
/// transform baseline.
pub fn omniquant_block(block: &AffineBlock, calib_x: &Matrix, cfg: &OmniQuantConfig) -> Result<OmniQuantResult> {
    if calib_x.rows() == 0 {
        return Err(Error::EmptyCalibration);
    }
    let c_in = block.weight.rows();
    let obj = BlockObjective { block, x: calib_x, target: block.forward(calib_x)?, cfg };
    let identity = EquivTransform::identity(c_in);
    let baseline = obj.error(1.0, 1.0, &identity)?;
    let mut st = SearchState { gamma: 1.0, beta: 1.0, t: identity, err: baseline, history: vec![baseline] };

    let grid: Vec<f64> = (0..cfg.clip_grid.max(2))
        .map(|i| 0.5 + 0.5 * i as f64 / (cfg.clip_grid.max(2) - 1) as f64)
        .collect();
    let cell = 0.5 / (grid.len() - 1) as f64;

    for _ in 0..cfg.rounds {
        if st.err == 0.0 {
            break;
        }
        let start = st.err;

        for &g in &grid {
            for &b in &grid {
                let e = obj.error(g, b, &st.t)?;
                st.offer(g, b, None, e);
            }
        }
        let t = st.t.clone();
        let beta = st.beta;
        let (g, e) = golden_section((st.gamma - cell).max(0.5), (st.gamma + cell).min(1.0), cfg.golden_iters, |g| {
            obj.error(g, beta, &t)
        })?;
        st.offer(g, beta, None, e);
        let gamma = st.gamma;
        let (b, e) = golden_section((st.beta - cell).max(0.5), (st.beta + cell).min(1.0), cfg.golden_iters, |b| {
            obj.error(gamma, b, &t)
        })?;
        st.offer(gamma, b, None, e);

        let base = channel_scale_centers(calib_x, &block.weight);
        for j in 0..c_in {
            for k in 1..=cfg.scale_steps {
                for sign in [-1.0, 1.0] {
                    let mut cand = st.t.clone();
                    cand.scale[j] = base[j] * 2f64.powf(sign * k as f64 / 2.0);
                    let e = obj.error(st.gamma, st.beta, &cand)?;
                    st.offer(st.gamma, st.beta, Some(cand), e);
                }
            }
            let mut cand = st.t.clone();
            cand.scale[j] = base[j];
            let e = obj.error(st.gamma, st.beta, &cand)?;
            st.offer(st.gamma, st.beta, Some(cand), e);
        }

        let means: Vec<f64> = (0..c_in).map(|j| crate::numerics::mean(&calib_x.column(j))).collect();
        for cand_shift in [means, vec![0.0; c_in]] {
            let mut cand = st.t.clone();
            cand.shift = cand_shift;
            let e = obj.error(st.gamma, st.beta, &cand)?;
            st.offer(st.gamma, st.beta, Some(cand), e);
        }

        if st.err >= start {
            break;
        }
    }
    Ok(OmniQuantResult {
        gamma: st.gamma,
        beta: st.beta,
        transform: st.t,
        recon_error: st.err,
        baseline_error: baseline,
        history: st.history,
    })
}

fn channel_scale_centers(x: &Matrix, w: &Matrix) -> Vec<f64> {
    (0..w.rows())
        .map(|j| {
            let xr = x.column(j).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let wr = w.row(j).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if xr > 0.0 && wr > 0.0 {
                (xr / wr).sqrt()
            } else {
                1.0
            }
        })
        .collect()
}

/// One line of the PTQ results file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PtqRecord {
    pub algorithm: String,
    pub bits: u32,
    pub shape: [usize; 2],
    /// Proxy loss of the round-to-nearest baseline.
    pub proxy_loss_before: f64,
    pub proxy_loss_after: f64,
    pub seed: u64,
    /// Wall time, only when timing is requested; `null` keeps files reproducible.
    pub wall_ms: Option<u64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_matrix, RngStream};

    fn int_spec(bits: u32) -> QuantSpec {
        QuantSpec::weights(bits).unwrap()
    }

    #[test]
    fn hessian_of_identity_rows() {
        let h = estimate_hessian(&Matrix::identity(4), 0.0).unwrap();
        assert_eq!(h.h, Matrix::identity(4).map(|v| v * 0.5));
        assert_eq!(h.sample_count, 4);
    }

    #[test]
    fn hessian_single_sample() {
        let h = estimate_hessian(&Matrix::row_vector(&[1.0, 2.0]).unwrap(), 0.0).unwrap();
        assert_eq!(h.h, Matrix::from_rows(&[vec![2.0, 4.0], vec![4.0, 8.0]]).unwrap());
    }

    #[test]
    fn damping_makes_rank_deficient_hessian_spd() {
        let x = Matrix::from_rows(&[vec![1.0, 1.0, 0.0], vec![2.0, 2.0, 0.0]]).unwrap();
        let h = estimate_hessian(&x, 0.01).unwrap();
        assert!(cholesky(&h.h).is_err());
        assert!(cholesky(&h.damped()).is_ok());
        assert!(matches!(estimate_hessian(&Matrix::zeros(0, 3), 0.01), Err(Error::EmptyCalibration)));
    }

    #[test]
    fn proxy_loss_basics() {
        let h = HessianEstimate::from_matrix(Matrix::identity(2), 0.0).unwrap();
        let w = Matrix::row_vector(&[1.0, 1.0]).unwrap();
        assert_eq!(proxy_loss(&w, &w, &h).unwrap(), 0.0);
        let zero = Matrix::zeros(1, 2);
        assert_eq!(proxy_loss(&w, &zero, &h).unwrap(), 2.0);
    }

    #[test]
    fn rtn_examples() {
        let aligned = Matrix::row_vector(&[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(rtn(&aligned, &int_spec(2)).unwrap(), aligned);
        let constant = Matrix::row_vector(&[0.7, 0.7, 0.7]).unwrap();
        assert_eq!(rtn(&constant, &int_spec(4)).unwrap(), constant);
        let w = Matrix::row_vector(&[1.1, 2.9]).unwrap();
        let q = rtn(&w, &int_spec(8)).unwrap();
        let s = 2.9 / 255.0;
        assert!(w.max_abs_diff(&q) <= s / 2.0 + 1e-15);
    }

    #[test]
    fn gptq_identity_hessian_equals_rtn() {
        let mut rng = RngStream::new(1, 2);
        let w = gaussian_matrix(&mut rng, 8, 8, 1.0);
        let h = HessianEstimate::from_matrix(Matrix::identity(8), 0.01).unwrap();
        let res = gptq(&w, &h, &GptqConfig::new(int_spec(4), 3)).unwrap();
        assert_eq!(res.weights, rtn(&w, &int_spec(4)).unwrap());
    }

    #[test]
    fn gptq_block_size_invariance() {
        let mut rng = RngStream::new(4, 4);
        let w = gaussian_matrix(&mut rng, 8, 8, 1.0);
        let x = gaussian_matrix(&mut rng, 32, 8, 1.0);
        let h = estimate_hessian(&x, 0.01).unwrap();
        let a = gptq(&w, &h, &GptqConfig::new(int_spec(4), 1)).unwrap();
        let b = gptq(&w, &h, &GptqConfig::new(int_spec(4), 8)).unwrap();
        let c = gptq(&w, &h, &GptqConfig::new(int_spec(4), 3)).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.weights, c.weights);
    }

    #[test]
    fn gptq_act_order_still_beats_or_matches_rtn_on_average() {
        let mut rng = RngStream::new(5, 0);
        let mut gain = 0.0;
        for _ in 0..5 {
            let w = gaussian_matrix(&mut rng, 16, 16, 1.0);
            let x = gaussian_matrix(&mut rng, 64, 16, 1.0);
            let h = estimate_hessian(&x, 0.01).unwrap();
            let cfg = GptqConfig { act_order: true, ..GptqConfig::new(int_spec(3), 4) };
            let g = gptq(&w, &h, &cfg).unwrap().proxy_loss;
            let r = proxy_loss(&w, &rtn(&w, &int_spec(3)).unwrap(), &h).unwrap();
            gain += r - g;
        }
        assert!(gain > 0.0);
    }

    #[test]
    fn gptq_rejects_mismatched_hessian() {
        let w = Matrix::zeros(2, 3);
        let h = HessianEstimate::from_matrix(Matrix::identity(2), 0.0).unwrap();
        assert!(gptq(&w, &h, &GptqConfig::new(int_spec(4), 1)).is_err());
    }

    #[test]
    fn gptq_small_instance_vs_exhaustive() {
        let w = Matrix::row_vector(&[0.3, -0.8]).unwrap();
        let h = HessianEstimate::from_matrix(
            Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap(),
            0.0,
        )
        .unwrap();
        let spec = int_spec(2);
        let g = gptq(&w, &h, &GptqConfig::new(spec, 1)).unwrap().proxy_loss;
        let r = proxy_loss(&w, &rtn(&w, &spec).unwrap(), &h).unwrap();
        let (_, opt) = exhaustive_grid_optimum(&w, &h, &spec).unwrap();
        assert!(g <= r + 1e-15);
        assert!(opt <= g + 1e-15);
    }

    #[test]
    fn gptvq_assign_weighted_example() {
        let cb = Codebook::from_centroids(2, vec![1.0, 0.0, 0.0, 1.2]).unwrap();
        let h = Matrix::from_rows(&[vec![4.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(gptvq_assign(&[0.0, 0.0], &cb, &h), 1);
        assert_eq!(gptvq_assign(&[0.0, 0.0], &cb, &Matrix::identity(2)), 0);
        assert_eq!(gptvq_assign(&[0.0, 1.2], &cb, &h), 1);
        assert_eq!(weighted_cost(&[0.0, 1.2], cb.centroid(1), &h), 0.0);
    }

    #[test]
    fn kmeans_monotone_and_memorizes() {
        let mut rng = RngStream::new(3, 3);
        let points: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.normal(), rng.normal()]).collect();
        let hm = Matrix::from_rows(&[vec![2.0, 0.3], vec![0.3, 1.0]]).unwrap();
        let weights = vec![&hm; 60];
        let (_, hist) = hessian_kmeans(&points, &weights, 5, 15).unwrap();
        for w in hist.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{hist:?}");
        }
        let (_, hist) = hessian_kmeans(&points[..4], &weights[..4], 6, 3).unwrap();
        assert_eq!(*hist.last().unwrap(), 0.0);
    }

    #[test]
    fn gptvq_memorizes_with_enough_centroids() {
        let w = Matrix::from_rows(&[vec![0.5, -1.0, 0.5, -1.0], vec![2.0, 0.25, 0.5, -1.0]]).unwrap();
        let h = HessianEstimate::from_matrix(Matrix::identity(4), 0.01).unwrap();
        let cfg = VqConfig { dim: 2, codebook_size: 3, codebooks_per_group: 1, em_iters: 10, record_trace: false };
        let res = gptvq(&w, &h, &cfg).unwrap();
        assert_eq!(res.weights, w);
        assert_eq!(res.proxy_loss, 0.0);
    }

    #[test]
    fn gptvq_config_validation() {
        let w = Matrix::zeros(2, 6);
        let h = HessianEstimate::from_matrix(Matrix::identity(6), 0.01).unwrap();
        let bad = VqConfig { dim: 4, codebook_size: 2, codebooks_per_group: 1, em_iters: 1, record_trace: false };
        assert!(gptvq(&w, &h, &bad).is_err());
    }

    #[test]
    fn omniquant_grid_aligned_is_optimal_at_baseline() {
        let w = Matrix::from_fn(4, 3, |r, c| ((r + 2 * c) % 8) as f64);
        let mut w = w;
        for c in 0..3 {
            w[(0, c)] = 0.0;
            w[(1, c)] = 7.0;
        }
        let block = AffineBlock { weight: w, bias: vec![0.0; 3], activation: Activation::Relu };
        let x = Matrix::from_fn(5, 4, |r, c| (r * c % 3) as f64);
        let cfg = OmniQuantConfig::new(int_spec(3), None);
        let res = omniquant_block(&block, &x, &cfg).unwrap();
        assert_eq!(res.baseline_error, 0.0);
        assert_eq!((res.gamma, res.beta, res.recon_error), (1.0, 1.0, 0.0));
    }

    #[test]
    fn omniquant_never_worse_and_history_non_increasing() {
        let mut rng = RngStream::new(12, 0);
        let w = gaussian_matrix(&mut rng, 8, 6, 1.0);
        let x = gaussian_matrix(&mut rng, 32, 8, 1.0);
        let block = AffineBlock { weight: w, bias: vec![0.1; 6], activation: Activation::Gelu };
        let cfg = OmniQuantConfig::new(int_spec(3), Some(QuantSpec::activations(6).unwrap()));
        let res = omniquant_block(&block, &x, &cfg).unwrap();
        assert!(res.recon_error <= res.baseline_error);
        for pair in res.history.windows(2) {
            assert!(pair[1] < pair[0]);
        }
    }

    #[test]
    fn omniquant_helps_with_outlier_channel() {
        let mut rng = RngStream::new(21, 0);
        let mut w = gaussian_matrix(&mut rng, 8, 6, 0.5);
        for c in 0..6 {
            w[(3, c)] *= 100.0;
        }
        let x = gaussian_matrix(&mut rng, 64, 8, 1.0);
        let block = AffineBlock { weight: w, bias: vec![0.0; 6], activation: Activation::Identity };
        let res = omniquant_block(&block, &x, &OmniQuantConfig::new(int_spec(3), None)).unwrap();
        assert!(res.recon_error < res.baseline_error);
    }

    #[test]
    fn golden_section_finds_parabola_minimum() {
        let (x, fx) = golden_section(0.0, 2.0, 60, |x| Ok((x - 0.7) * (x - 0.7))).unwrap();
        assert!((x - 0.7).abs() < 1e-8);
        assert!(fx < 1e-15);
    }
}
