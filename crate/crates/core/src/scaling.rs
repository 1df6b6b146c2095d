//! Bit accounting, saturating power-law fits and Pareto comparisons of
//! quantized model families. Quality is lower-is-better throughout.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentRecord {
    pub label: String,
    pub n_params: u64,
    pub w_bits: u32,
    pub a_bits: u32,
    pub quality: f64,
}

impl ExperimentRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, message: &str| Err(Error::InvalidConfig { field: field.into(), message: message.into() });
        if self.n_params < 1 {
            return bad("n_params", "must be at least 1");
        }
        if self.w_bits < 2 {
            return bad("w_bits", "must be at least 2");
        }
        if self.a_bits < 2 {
            return bad("a_bits", "must be at least 2");
        }
        if !self.quality.is_finite() {
            return bad("quality", "must be finite");
        }
        Ok(())
    }
}

/// Total model bits: `w_bits · n_params`.
pub fn model_bits(r: &ExperimentRecord) -> u128 {
    r.w_bits as u128 * r.n_params as u128
}

/// Total compute bits: `w_bits · a_bits · n_params`.
pub fn compute_bits(r: &ExperimentRecord) -> u128 {
    r.w_bits as u128 * r.a_bits as u128 * r.n_params as u128
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitAxis {
    Mt,
    Ct,
}

impl BitAxis {
    pub fn value(self, r: &ExperimentRecord) -> u128 {
        match self {
            BitAxis::Mt => model_bits(r),
            BitAxis::Ct => compute_bits(r),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            BitAxis::Mt => "model_bits",
            BitAxis::Ct => "compute_bits",
        }
    }
}

/// `y = a·x^(−b) + c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerLawFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub rmse: f64,
}

impl PowerLawFit {
    pub fn predict(&self, x: f64) -> f64 {
        self.a * x.powf(-self.b) + self.c
    }
}

const C_GRID: usize = 200;
const GOLDEN_ITERS: usize = 100;

/// Least-squares `(a, b)` and RMSE in y-space for a fixed offset `c`.
fn fit_at(points: &[(f64, f64)], c: f64) -> Option<PowerLawFit> {
    let n = points.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(x, y) in points {
        let (lx, ly) = (x.ln(), (y - c).ln());
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    let den = n * sxx - sx * sx;
    if den == 0.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / den;
    let intercept = (sy - slope * sx) / n;
    let fit = PowerLawFit { a: intercept.exp(), b: -slope, c, rmse: 0.0 };
    if !(fit.a > 0.0 && fit.b > 0.0 && fit.a.is_finite()) {
        return None;
    }
    let sse: f64 = points.iter().map(|&(x, y)| (fit.predict(x) - y).powi(2)).sum();
    Some(PowerLawFit { rmse: (sse / n).sqrt(), ..fit })
}

/// Grid over `c ∈ [0, min y)` with log-linear least squares at each `c`,
/// followed by golden-section refinement of `c` inside the best cell.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientPoints { got: points.len(), need: 4 });
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && x.is_finite() && y.is_finite())) {
        return Err(Error::InvalidArgument("points need positive finite x and finite y".into()));
    }
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    if xs.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::InvalidArgument("x values must be distinct".into()));
    }
    let y_min = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    if y_min <= 0.0 {
        return Err(Error::NoValidFit);
    }
    let step = y_min / C_GRID as f64;
    let mut best: Option<(usize, PowerLawFit)> = None;
    for i in 0..C_GRID {
        if let Some(f) = fit_at(points, i as f64 * step) {
            if best.as_ref().is_none_or(|(_, b)| f.rmse < b.rmse) {
                best = Some((i, f));
            }
        }
    }
    let (i, coarse) = best.ok_or(Error::NoValidFit)?;
    let rmse_at = |c: f64| fit_at(points, c).map_or(f64::INFINITY, |f| f.rmse);
    let lo = (i as f64 - 1.0).max(0.0) * step;
    let hi = ((i + 1) as f64 * step).min(y_min * (1.0 - 1e-12));
    let c = golden_min(rmse_at, lo, hi);
    Ok(match fit_at(points, c) {
        Some(f) if f.rmse <= coarse.rmse => f,
        _ => coarse,
    })
}

fn golden_min(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..GOLDEN_ITERS {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Records not dominated on (bits, quality), sorted by bits then quality.
/// Exact duplicates are all kept since neither strictly dominates.
pub fn pareto_frontier(records: &[ExperimentRecord], axis: BitAxis) -> Vec<ExperimentRecord> {
    let mut sorted: Vec<&ExperimentRecord> = records.iter().collect();
    sorted.sort_by(|a, b| axis.value(a).cmp(&axis.value(b)).then(a.quality.total_cmp(&b.quality)));
    let mut out: Vec<ExperimentRecord> = Vec::new();
    // Best quality seen at strictly smaller x, and at the current x.
    let mut best_before = f64::INFINITY;
    let mut i = 0;
    while i < sorted.len() {
        let x = axis.value(sorted[i]);
        let mut j = i;
        while j < sorted.len() && axis.value(sorted[j]) == x {
            j += 1;
        }
        let group_best = sorted[i].quality;
        if group_best < best_before {
            out.extend(sorted[i..j].iter().filter(|r| r.quality == group_best).map(|r| (*r).clone()));
            best_before = group_best;
        }
        i = j;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ADominates,
    BDominates,
    Mixed,
}

pub const SHIFT_SAMPLES: usize = 64;

/// Compare per-family power-law fits over the overlap of their bit ranges.
/// No overlap gives `Mixed`.
pub fn scaling_shift(a: &[ExperimentRecord], b: &[ExperimentRecord], axis: BitAxis) -> Result<Verdict> {
    for fam in [a, b] {
        if fam.len() < 2 {
            return Err(Error::InsufficientPoints { got: fam.len(), need: 2 });
        }
    }
    let pts = |f: &[ExperimentRecord]| -> Vec<(f64, f64)> { f.iter().map(|r| (axis.value(r) as f64, r.quality)).collect() };
    let (pa, pb) = (pts(a), pts(b));
    let fa = fit_power_law(&pa)?;
    let fb = fit_power_law(&pb)?;
    let range = |p: &[(f64, f64)]| {
        p.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(x, _)| (lo.min(x), hi.max(x)))
    };
    let (la, ha) = range(&pa);
    let (lb, hb) = range(&pb);
    let (lo, hi) = (la.max(lb), ha.min(hb));
    if lo > hi {
        return Ok(Verdict::Mixed);
    }
    let xs: Vec<f64> = (0..SHIFT_SAMPLES)
        .map(|i| {
            let t = if SHIFT_SAMPLES == 1 { 0.0 } else { i as f64 / (SHIFT_SAMPLES - 1) as f64 };
            (lo.ln() + t * (hi.ln() - lo.ln())).exp()
        })
        .collect();
    if xs.iter().all(|&x| fa.predict(x) < fb.predict(x)) {
        Ok(Verdict::ADominates)
    } else if xs.iter().all(|&x| fb.predict(x) < fa.predict(x)) {
        Ok(Verdict::BDominates)
    } else {
        Ok(Verdict::Mixed)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(n: u64, w: u32, a: u32, q: f64) -> ExperimentRecord {
        ExperimentRecord { label: "t".into(), n_params: n, w_bits: w, a_bits: a, quality: q }
    }

    #[test]
    fn bit_accounting() {
        let r = rec(7_000_000_000, 8, 8, 0.0);
        assert_eq!(model_bits(&r), 56_000_000_000);
        assert_eq!(compute_bits(&r), 64 * 7_000_000_000);
        assert_eq!(model_bits(&rec(1, 3, 16, 0.0)), 3);
        assert_eq!(model_bits(&rec(2_000_000_000, 4, 16, 0.0)), 8_000_000_000);
        assert_eq!(compute_bits(&rec(5, 4, 8, 0.0)) * 2, compute_bits(&rec(5, 8, 8, 0.0)));
        assert_eq!(compute_bits(&rec(9, 16, 16, 0.0)), 256 * 9);
        assert!(rec(0, 8, 8, 1.0).validate().is_err());
        assert!(rec(1, 1, 8, 1.0).validate().is_err());
    }

    #[test]
    fn recovers_noiseless_power_law() {
        let pts: Vec<(f64, f64)> = [1.0, 4.0, 16.0, 64.0].iter().map(|&x: &f64| (x, 2.0 * x.powf(-0.5) + 1.0)).collect();
        let f = fit_power_law(&pts).unwrap();
        assert!((f.a - 2.0).abs() < 1e-6 && (f.b - 0.5).abs() < 1e-6 && (f.c - 1.0).abs() < 1e-6, "{f:?}");
        assert!(f.rmse <= 1e-9);
        assert!(matches!(fit_power_law(&pts[..2]), Err(Error::InsufficientPoints { .. })));
    }

    #[test]
    fn increasing_data_has_no_fit() {
        let pts = [(1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)];
        assert!(matches!(fit_power_law(&pts), Err(Error::NoValidFit)));
    }

    #[test]
    fn frontier_small_cases() {
        let one = vec![rec(10, 4, 8, 2.0)];
        assert_eq!(pareto_frontier(&one, BitAxis::Mt), one);
        let two = vec![rec(10, 4, 8, 2.0), rec(10, 4, 8, 1.0)];
        assert_eq!(pareto_frontier(&two, BitAxis::Mt), vec![two[1].clone()]);
    }

    #[test]
    fn shift_verdicts() {
        let fam: Vec<ExperimentRecord> =
            [1e6 as u64, 4e6 as u64, 16e6 as u64, 64e6 as u64].iter().map(|&n| rec(n, 4, 16, 3.0 * (n as f64).powf(-0.3) + 1.0)).collect();
        assert_eq!(scaling_shift(&fam, &fam, BitAxis::Mt).unwrap(), Verdict::Mixed);
        let worse: Vec<ExperimentRecord> = fam.iter().map(|r| ExperimentRecord { quality: r.quality + 1.0, ..r.clone() }).collect();
        assert_eq!(scaling_shift(&fam, &worse, BitAxis::Mt).unwrap(), Verdict::ADominates);
        assert_eq!(scaling_shift(&worse, &fam, BitAxis::Mt).unwrap(), Verdict::BDominates);
        let far: Vec<ExperimentRecord> = fam.iter().map(|r| ExperimentRecord { n_params: r.n_params * 1000, ..r.clone() }).collect();
        assert_eq!(scaling_shift(&fam, &far, BitAxis::Mt).unwrap(), Verdict::Mixed);
    }
}
