//! Slow brute-force references for the fast paths, plus the self-test
//! suite that cross-checks them.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::genmodels::Codebook;
use crate::numerics::{gaussian_matrix, Matrix, RngStream};
use crate::ptq::{self, estimate_hessian, GptqConfig, HessianEstimate};
use crate::quant::{calibrate_uniform, FpFormat, QuantSpec};
use crate::scaling::{pareto_frontier, BitAxis, ExperimentRecord};

/// Every non-negative finite value of the format, ascending, built from
/// bit patterns. The all-ones pattern is reserved.
pub fn fp_grid(fmt: &FpFormat) -> Vec<f64> {
    let (e_max, m_max) = (1u32 << fmt.exp_bits, 1u32 << fmt.man_bits);
    let bias = fmt.bias();
    let mut out = Vec::new();
    for e in 0..e_max {
        for m in 0..m_max {
            if e == e_max - 1 && m == m_max - 1 {
                continue;
            }
            let frac = m as f64 / m_max as f64;
            out.push(if e == 0 {
                frac * 2f64.powi(1 - bias)
            } else {
                (1.0 + frac) * 2f64.powi(e as i32 - bias)
            });
        }
    }
    out
}

/// Nearest grid value by linear scan; ties go to the even bit pattern.
pub fn fp_nearest_exhaustive(grid: &[f64], v: f64) -> f64 {
    let a = v.abs();
    let mut best = 0;
    for (i, g) in grid.iter().enumerate() {
        let (d, db) = ((g - a).abs(), (grid[best] - a).abs());
        if d < db || (d == db && i % 2 == 0 && best % 2 == 1) {
            best = i;
        }
    }
    grid[best].copysign(v)
}

/// Argmin of `(x−c)ᵀH(x−c)` by explicit expansion, lowest index on ties.
pub fn vq_assign_brute(x: &[f64], codebook: &Codebook, h: &Matrix) -> usize {
    let d = x.len();
    let mut best = (0, f64::INFINITY);
    for j in 0..codebook.size() {
        let c = codebook.centroid(j);
        let mut cost = 0.0;
        for a in 0..d {
            for b in 0..d {
                cost += (x[a] - c[a]) * h[(a, b)] * (x[b] - c[b]);
            }
        }
        if cost < best.1 {
            best = (j, cost);
        }
    }
    best.0
}

/// O(n²) dominance check, sorted like the fast frontier.
pub fn pareto_brute(records: &[ExperimentRecord], axis: BitAxis) -> Vec<ExperimentRecord> {
    let mut out: Vec<ExperimentRecord> = records
        .iter()
        .filter(|r| {
            !records.iter().any(|o| {
                let (xo, xr) = (axis.value(o), axis.value(r));
                xo <= xr && o.quality <= r.quality && (xo < xr || o.quality < r.quality)
            })
        })
        .cloned()
        .collect();
    out.sort_by(|a, b| axis.value(a).cmp(&axis.value(b)).then(a.quality.total_cmp(&b.quality)));
    out
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::Shape("inverse needs a square matrix".into()));
    }
    let mut m = a.clone();
    let mut inv = Matrix::identity(n);
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs())).unwrap_or(col);
        if m[(piv, col)] == 0.0 {
            return Err(Error::DegenerateInput("singular matrix"));
        }
        for k in 0..n {
            let (t, ti) = (m[(col, k)], inv[(col, k)]);
            m[(col, k)] = m[(piv, k)];
            m[(piv, k)] = t;
            inv[(col, k)] = inv[(piv, k)];
            inv[(piv, k)] = ti;
        }
        let p = m[(col, col)];
        for k in 0..n {
            m[(col, k)] /= p;
            inv[(col, k)] /= p;
        }
        for r in 0..n {
            if r != col {
                let f = m[(r, col)];
                if f != 0.0 {
                    for k in 0..n {
                        m[(r, k)] -= f * m[(col, k)];
                        inv[(r, k)] -= f * inv[(col, k)];
                    }
                }
            }
        }
    }
    Ok(inv)
}

/// Column-by-column optimal-brain-quantizer update that re-inverts the
/// Hessian of the not-yet-quantized columns at every step. Integer grids
/// only, fixed from the original weights.
pub fn gptq_direct_inverse(w: &Matrix, h: &HessianEstimate, spec: &QuantSpec) -> Result<Matrix> {
    let cal = calibrate_uniform(w, spec, 1.0, 1.0)?;
    let hd = h.damped();
    let (rows, n) = w.shape();
    let mut work = w.clone();
    let mut out = Matrix::zeros(rows, n);
    for q in 0..n {
        let rest = n - q;
        let sub = Matrix::from_fn(rest, rest, |i, j| hd[(q + i, q + j)]);
        let hinv = gauss_jordan_inverse(&sub)?;
        for r in 0..rows {
            let p = cal.params_at(r, q);
            let v = p.dequantize_value(p.quantize_value(work[(r, q)]));
            out[(r, q)] = v;
            let e = (work[(r, q)] - v) / hinv[(0, 0)];
            for j in 1..rest {
                work[(r, q + j)] -= e * hinv[(0, j)];
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestCase {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn case(name: &'static str, passed: bool, detail: String) -> SelftestCase {
    SelftestCase { name, passed, detail }
}

/// Fast paths against their brute-force references on small seeded inputs.
pub fn selftest(seed: u64) -> Result<Vec<SelftestCase>> {
    let mut cases = Vec::new();
    let mut rng = RngStream::new(seed, 0x5345_4C46);

    let mut mismatches = 0;
    for (e, m) in [(2, 1), (3, 2), (4, 3), (5, 2)] {
        let fmt = FpFormat::new(e, m)?;
        let grid = fp_grid(&fmt);
        let top = fmt.max_normal() * 1.2;
        for _ in 0..500 {
            let v = (2.0 * rng.uniform() - 1.0) * top;
            if fmt.round(v) != fp_nearest_exhaustive(&grid, v) {
                mismatches += 1;
            }
        }
    }
    cases.push(case("fp_grid_nearest", mismatches == 0, format!("{mismatches} mismatches of 2000")));

    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let w = gaussian_matrix(&mut rng, 4, 16, 1.0);
        let x = gaussian_matrix(&mut rng, 64, 16, 1.0);
        let h = estimate_hessian(&x, 0.01)?;
        let spec = QuantSpec::weights(4)?;
        let fast = ptq::gptq(&w, &h, &GptqConfig::new(spec, 4))?.weights;
        worst = worst.max(fast.max_abs_diff(&gptq_direct_inverse(&w, &h, &spec)?));
    }
    cases.push(case("gptq_direct_inverse", worst <= 1e-8, format!("max abs diff {worst:e}")));

    let mut wrong = 0;
    for _ in 0..200 {
        let cb = Codebook::from_centroids(2, gaussian_matrix(&mut rng, 8, 2, 1.0).into_vec())?;
        let a = gaussian_matrix(&mut rng, 2, 2, 1.0);
        let h = a.t_matmul(&a)?.add(&Matrix::identity(2).map(|v| v * 0.1))?;
        let x = [rng.normal(), rng.normal()];
        if ptq::gptvq_assign(&x, &cb, &h) != vq_assign_brute(&x, &cb, &h) {
            wrong += 1;
        }
    }
    cases.push(case("gptvq_assign", wrong == 0, format!("{wrong} mismatches of 200")));

    let mut diff = 0;
    for _ in 0..20 {
        let recs: Vec<ExperimentRecord> = (0..30)
            .map(|i| ExperimentRecord {
                label: format!("r{i}"),
                n_params: 1 + rng.below(20) as u64,
                w_bits: 2 + rng.below(3) as u32,
                a_bits: 8,
                quality: rng.below(10) as f64,
            })
            .collect();
        for axis in [BitAxis::Mt, BitAxis::Ct] {
            if pareto_frontier(&recs, axis) != pareto_brute(&recs, axis) {
                diff += 1;
            }
        }
    }
    cases.push(case("pareto_frontier", diff == 0, format!("{diff} mismatches of 40")));

    let mut gap: f64 = 0.0;
    for _ in 0..10 {
        let w = gaussian_matrix(&mut rng, 1, 3, 1.0);
        let x = gaussian_matrix(&mut rng, 16, 3, 1.0);
        let h = estimate_hessian(&x, 0.01)?;
        let spec = QuantSpec::weights(2)?;
        let (_, best) = ptq::exhaustive_grid_optimum(&w, &h, &spec)?;
        let g = ptq::gptq(&w, &h, &GptqConfig::new(spec, 1))?.proxy_loss;
        let r = ptq::proxy_loss(&w, &ptq::rtn(&w, &spec)?, &h)?;
        gap = gap.max(best - g.min(r));
    }
    cases.push(case("exhaustive_optimum_bounds", gap <= 1e-12, format!("optimum exceeds best method by {gap:e}")));
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn e4m3_grid_shape() {
        let g = fp_grid(&FpFormat::new(4, 3).unwrap());
        assert_eq!(g.len(), 127);
        assert_eq!(*g.last().unwrap(), 448.0);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn gauss_jordan_matches_identity() {
        let a = Matrix::from_rows(&[vec![4.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let inv = gauss_jordan_inverse(&a).unwrap();
        assert!(a.matmul(&inv).unwrap().max_abs_diff(&Matrix::identity(2)) < 1e-14);
    }

    #[test]
    fn selftest_passes() {
        for c in selftest(7).unwrap() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
