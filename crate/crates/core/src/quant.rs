//! Scalar quantizers: uniform affine integer quantization with optional
//! clipping factors, a sign/exponent/mantissa floating-point grid, and the
//! per-channel equivalent transformation of an affine layer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{round_half_even, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Integer,
    Float { exp_bits: u32, man_bits: u32 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerTensor,
    PerRow,
    Group(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantSpec {
    pub bits: u32,
    pub scheme: Scheme,
    pub granularity: Granularity,
}

impl QuantSpec {
    pub fn int(bits: u32, granularity: Granularity) -> Result<Self> {
        let spec = QuantSpec { bits, scheme: Scheme::Integer, granularity };
        spec.validate()?;
        Ok(spec)
    }

    /// Integer spec with per-row granularity, the default for weights.
    pub fn weights(bits: u32) -> Result<Self> {
        Self::int(bits, Granularity::PerRow)
    }

    /// Integer spec with per-tensor granularity, the default for activations.
    pub fn activations(bits: u32) -> Result<Self> {
        Self::int(bits, Granularity::PerTensor)
    }

    pub fn float(exp_bits: u32, man_bits: u32, granularity: Granularity) -> Result<Self> {
        let spec = QuantSpec {
            bits: 1 + exp_bits + man_bits,
            scheme: Scheme::Float { exp_bits, man_bits },
            granularity,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=16).contains(&self.bits) {
            return Err(Error::InvalidArgument(format!("bits must be in 2..=16, got {}", self.bits)));
        }
        if let Scheme::Float { exp_bits, man_bits } = self.scheme {
            if 1 + exp_bits + man_bits != self.bits {
                return Err(Error::InvalidArgument(format!(
                    "float scheme e{exp_bits}m{man_bits} does not add up to {} bits",
                    self.bits
                )));
            }
            FpFormat::new(exp_bits, man_bits)?;
        }
        if let Granularity::Group(0) = self.granularity {
            return Err(Error::InvalidArgument("group size must be positive".into()));
        }
        Ok(())
    }

    /// Largest integer code, `2^b − 1`.
    pub fn max_code(&self) -> u32 {
        ((1u64 << self.bits) - 1) as u32
    }

    /// Number of parameter groups per row and in total for a `rows x cols` tensor.
    pub fn group_layout(&self, rows: usize, cols: usize) -> Result<GroupLayout> {
        match self.granularity {
            Granularity::PerTensor => Ok(GroupLayout { rows, cols, per_row: 0, width: cols }),
            Granularity::PerRow => Ok(GroupLayout { rows, cols, per_row: 1, width: cols }),
            Granularity::Group(g) => {
                if cols % g != 0 {
                    return Err(Error::InvalidArgument(format!(
                        "group size {g} does not divide row length {cols}"
                    )));
                }
                Ok(GroupLayout { rows, cols, per_row: cols / g, width: g })
            }
        }
    }
}

/// Maps tensor entries to their parameter group.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupLayout {
    rows: usize,
    cols: usize,
    /// Groups per row; zero means one group for the whole tensor.
    per_row: usize,
    width: usize,
}

impl GroupLayout {
    pub fn count(&self) -> usize {
        if self.per_row == 0 {
            1
        } else {
            self.rows * self.per_row
        }
    }

    pub fn index(&self, r: usize, c: usize) -> usize {
        if self.per_row == 0 {
            0
        } else {
            r * self.per_row + c / self.width
        }
    }

    /// Values of group `g` in row-major order.
    pub fn gather(&self, x: &Matrix, g: usize) -> Vec<f64> {
        if self.per_row == 0 {
            return x.data().to_vec();
        }
        let r = g / self.per_row;
        let start = (g % self.per_row) * self.width;
        x.row(r)[start..start + self.width].to_vec()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

/// Scale, zero-point and clipping factors of one quantization group.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantParams {
    pub bits: u32,
    pub scheme: Scheme,
    pub s: f64,
    pub z: i64,
    pub gamma: f64,
    pub beta: f64,
}

impl QuantParams {
    pub fn new(bits: u32, s: f64, z: i64) -> Self {
        QuantParams { bits, scheme: Scheme::Integer, s, z, gamma: 1.0, beta: 1.0 }
    }

    fn max_code(&self) -> f64 {
        ((1u64 << self.bits) - 1) as f64
    }

    /// Grid index before clipping, `⌊x/s⌉ + z`.
    pub fn raw_code(&self, x: f64) -> f64 {
        round_half_even(x / self.s) + self.z as f64
    }

    pub fn quantize_value(&self, x: f64) -> u32 {
        self.raw_code(x).clamp(0.0, self.max_code()) as u32
    }

    pub fn dequantize_value(&self, q: u32) -> f64 {
        (q as i64 - self.z) as f64 * self.s
    }

    /// True when `x` quantizes without hitting either clip bound.
    pub fn in_range(&self, x: f64) -> bool {
        let raw = self.raw_code(x);
        raw >= 0.0 && raw <= self.max_code()
    }

    /// Dequantized grid endpoints `[lo, hi]`.
    pub fn representable_range(&self) -> (f64, f64) {
        (self.dequantize_value(0), self.dequantize_value(self.max_code() as u32))
    }
}

/// Per-group parameters for one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub spec: QuantSpec,
    pub layout: GroupLayout,
    pub params: Vec<QuantParams>,
}

impl Calibration {
    pub fn params_at(&self, r: usize, c: usize) -> &QuantParams {
        &self.params[self.layout.index(r, c)]
    }

    /// True if any group fell back to the degenerate-range parameters.
    pub fn degenerate_groups(&self, x: &Matrix) -> Vec<usize> {
        (0..self.layout.count())
            .filter(|&g| {
                let v = self.layout.gather(x, g);
                let (l, u) = min_max(&v);
                let p = &self.params[g];
                p.gamma * u - p.beta * l <= 0.0
            })
            .collect()
    }
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

/// Parameters for one group of values.
///
/// `s = (γ·u − β·l)/(2ᵇ−1)` and `z = clip(⌊−β·l/s⌉, 0, 2ᵇ−1)`, where the
/// bounds `[l, u]` are widened to contain zero so that `z` stays on the code
/// range and calibration data is never clipped at `γ = β = 1`.
///
/// A non-positive `γ·u − β·l` (constant groups in particular) falls back to
/// `s = 1, z = 0`; constants that are not integer codes instead get
/// `s = |c|` so they still round-trip exactly.
pub fn calibrate_group(values: &[f64], bits: u32, gamma: f64, beta: f64) -> QuantParams {
    let levels = ((1u64 << bits) - 1) as f64;
    let (l, u) = min_max(values);
    if gamma * u - beta * l <= 0.0 {
        return degenerate_params(l, u, bits, gamma, beta, levels);
    }
    let (l, u) = (l.min(0.0), u.max(0.0));
    let s = (gamma * u - beta * l) / levels;
    let z = round_half_even(-beta * l / s).clamp(0.0, levels) as i64;
    QuantParams { bits, scheme: Scheme::Integer, s, z, gamma, beta }
}

fn degenerate_params(l: f64, u: f64, bits: u32, gamma: f64, beta: f64, levels: f64) -> QuantParams {
    let mut p = QuantParams { bits, scheme: Scheme::Integer, s: 1.0, z: 0, gamma, beta };
    let c = l;
    let is_code = c.fract() == 0.0 && (0.0..=levels).contains(&c);
    if l == u && !is_code {
        p.s = c.abs();
        p.z = if c > 0.0 { 0 } else { 1 };
    }
    p
}

/// One set of parameters per granularity group of `x`.
pub fn calibrate_uniform(x: &Matrix, spec: &QuantSpec, gamma: f64, beta: f64) -> Result<Calibration> {
    spec.validate()?;
    if spec.scheme != Scheme::Integer {
        return Err(Error::InvalidArgument("calibrate_uniform needs an integer scheme".into()));
    }
    if !(gamma > 0.0 && gamma <= 1.0 && beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "clip factors must lie in (0, 1], got gamma={gamma}, beta={beta}"
        )));
    }
    if x.data().is_empty() {
        return Err(Error::Shape("cannot calibrate an empty tensor".into()));
    }
    let layout = spec.group_layout(x.rows(), x.cols())?;
    let params = (0..layout.count())
        .map(|g| calibrate_group(&layout.gather(x, g), spec.bits, gamma, beta))
        .collect();
    Ok(Calibration { spec: *spec, layout, params })
}

/// Integer codes with the shape of the source tensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QuantizedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub codes: Vec<u32>,
}

impl QuantizedMatrix {
    pub fn get(&self, r: usize, c: usize) -> u32 {
        self.codes[r * self.cols + c]
    }
}

fn check_shape(x: &Matrix, cal: &Calibration) -> Result<()> {
    if x.shape() != cal.layout.shape() {
        return Err(Error::Shape(format!(
            "tensor {:?} does not match calibration {:?}",
            x.shape(),
            cal.layout.shape()
        )));
    }
    Ok(())
}

/// `clip(⌊x/s⌉ + z, 0, 2ᵇ−1)` per entry, rounding half to even.
pub fn quantize(x: &Matrix, cal: &Calibration) -> Result<QuantizedMatrix> {
    check_shape(x, cal)?;
    let mut codes = Vec::with_capacity(x.data().len());
    for r in 0..x.rows() {
        for (c, &v) in x.row(r).iter().enumerate() {
            codes.push(cal.params_at(r, c).quantize_value(v));
        }
    }
    Ok(QuantizedMatrix { rows: x.rows(), cols: x.cols(), codes })
}

/// `(q − z)·s` per entry.
pub fn dequantize(q: &QuantizedMatrix, cal: &Calibration) -> Result<Matrix> {
    if (q.rows, q.cols) != cal.layout.shape() {
        return Err(Error::Shape("codes do not match calibration".into()));
    }
    Ok(Matrix::from_fn(q.rows, q.cols, |r, c| cal.params_at(r, c).dequantize_value(q.get(r, c))))
}

/// Quantize then dequantize.
pub fn fake_quant(x: &Matrix, cal: &Calibration) -> Result<Matrix> {
    dequantize(&quantize(x, cal)?, cal)
}

/// Calibrate on `x` itself and fake-quantize it; float schemes use a
/// per-group scale mapping max |x| onto the largest normal value.
pub fn fake_quant_self(x: &Matrix, spec: &QuantSpec, gamma: f64, beta: f64) -> Result<Matrix> {
    Ok(fake_quant_with_mask(x, spec, gamma, beta)?.0)
}

/// [`fake_quant_self`] plus a row-major mask that is false wherever the
/// quantizer saturated (the entries a straight-through estimator blocks).
pub fn fake_quant_with_mask(x: &Matrix, spec: &QuantSpec, gamma: f64, beta: f64) -> Result<(Matrix, Vec<bool>)> {
    match spec.scheme {
        Scheme::Integer => {
            let cal = calibrate_uniform(x, spec, gamma, beta)?;
            let mask = (0..x.rows())
                .flat_map(|r| (0..x.cols()).map(move |c| (r, c)))
                .map(|(r, c)| cal.params_at(r, c).in_range(x[(r, c)]))
                .collect();
            Ok((fake_quant(x, &cal)?, mask))
        }
        Scheme::Float { exp_bits, man_bits } => {
            let fmt = FpFormat::new(exp_bits, man_bits)?;
            let layout = spec.group_layout(x.rows(), x.cols())?;
            let scales: Vec<f64> = (0..layout.count())
                .map(|g| {
                    let vals: Vec<f64> = layout.gather(x, g).iter().map(|v| v * if *v > 0.0 { gamma } else { beta }).collect();
                    fmt.scale_for(&vals)
                })
                .collect();
            let mut mask = Vec::with_capacity(x.rows() * x.cols());
            let q = Matrix::from_fn(x.rows(), x.cols(), |r, c| {
                let s = scales[layout.index(r, c)];
                mask.push((x[(r, c)] / s).abs() <= fmt.max_normal());
                fmt.round(x[(r, c)] / s) * s
            });
            Ok((q, mask))
        }
    }
}

/// A sign/exponent/mantissa grid with subnormals.
///
/// All exponent codes encode finite values except the single pattern with
/// every exponent and mantissa bit set, which is reserved (the "FN"
/// convention). For e4m3 this gives the familiar maximum of 448.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FpFormat {
    pub exp_bits: u32,
    pub man_bits: u32,
}

impl FpFormat {
    pub fn new(exp_bits: u32, man_bits: u32) -> Result<Self> {
        if exp_bits < 2 || man_bits < 1 || exp_bits > 8 || man_bits > 23 {
            return Err(Error::InvalidArgument(format!(
                "unsupported float format e{exp_bits}m{man_bits}"
            )));
        }
        Ok(FpFormat { exp_bits, man_bits })
    }

    pub fn bias(&self) -> i32 {
        (1 << (self.exp_bits - 1)) - 1
    }

    /// Exponent of the smallest normal value.
    pub fn min_exponent(&self) -> i32 {
        1 - self.bias()
    }

    pub fn max_exponent(&self) -> i32 {
        (1 << self.exp_bits) - 1 - self.bias()
    }

    pub fn max_normal(&self) -> f64 {
        let m = (1u64 << self.man_bits) as f64;
        2f64.powi(self.max_exponent()) * (1.0 + (m - 2.0) / m)
    }

    pub fn min_subnormal(&self) -> f64 {
        2f64.powi(self.min_exponent() - self.man_bits as i32)
    }

    /// Scale placing max |x| at the largest normal; 1 for all-zero input.
    pub fn scale_for(&self, values: &[f64]) -> f64 {
        let amax = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if amax > 0.0 {
            amax / self.max_normal()
        } else {
            1.0
        }
    }

    /// Nearest grid value, ties to even mantissa, saturating at ±max normal.
    pub fn round(&self, v: f64) -> f64 {
        let a = v.abs();
        let max = self.max_normal();
        if a >= max {
            return max.copysign(v);
        }
        let e = floor_log2(a).max(self.min_exponent());
        let quantum = 2f64.powi(e - self.man_bits as i32);
        let r = (round_half_even(a / quantum) * quantum).min(max);
        r.copysign(v)
    }
}

/// `⌊log2 a⌋` read from the IEEE-754 exponent field (`a > 0`).
fn floor_log2(a: f64) -> i32 {
    if a == 0.0 {
        return i32::MIN / 2;
    }
    let bits = a.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    if exp == 0 {
        // f64 subnormal
        -1074 + (63 - (bits & ((1u64 << 52) - 1)).leading_zeros() as i32)
    } else {
        exp - 1023
    }
}

/// Round `x/scale` onto the float grid and rescale.
pub fn fp_quantize(x: &Matrix, exp_bits: u32, man_bits: u32, scale: f64) -> Result<Matrix> {
    let fmt = FpFormat::new(exp_bits, man_bits)?;
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument(format!("scale must be positive, got {scale}")));
    }
    Ok(x.map(|v| fmt.round(v / scale) * scale))
}

/// Per input channel scale `s` and shift `δ` of an affine layer `Y = XW + B`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquivTransform {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl EquivTransform {
    pub fn identity(channels: usize) -> Self {
        EquivTransform { scale: vec![1.0; channels], shift: vec![0.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }
}

/// Rewrites `Y = X·W + B` as `X̃·W̃ + B̃` with `X̃ = (X − δ) ⊘ s`,
/// `W̃ = s ⊙ W` (row-wise) and `B̃ = B + δ·W`.
///
/// `x` is `n × c_in`, `w` is `c_in × c_out`, `bias` has length `c_out`.
pub fn equivalent_transform(
    x: &Matrix,
    w: &Matrix,
    bias: &[f64],
    t: &EquivTransform,
) -> Result<(Matrix, Matrix, Vec<f64>)> {
    let c_in = w.rows();
    if x.cols() != c_in || t.channels() != c_in || t.shift.len() != c_in || bias.len() != w.cols() {
        return Err(Error::Shape(format!(
            "x {:?}, w {:?}, bias {}, transform {} are incompatible",
            x.shape(),
            w.shape(),
            bias.len(),
            t.channels()
        )));
    }
    if let Some((channel, &value)) = t.scale.iter().enumerate().find(|(_, s)| !(**s > 0.0)) {
        return Err(Error::NonPositiveScale { channel, value });
    }
    let xt = Matrix::from_fn(x.rows(), c_in, |r, c| (x[(r, c)] - t.shift[c]) / t.scale[c]);
    let wt = Matrix::from_fn(c_in, w.cols(), |r, c| t.scale[r] * w[(r, c)]);
    let mut bt = bias.to_vec();
    for (j, b) in bt.iter_mut().enumerate() {
        for i in 0..c_in {
            *b += t.shift[i] * w[(i, j)];
        }
    }
    Ok((xt, wt, bt))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f64]) -> Matrix {
        Matrix::row_vector(values).unwrap()
    }

    #[test]
    fn calibrate_worked_example() {
        let spec = QuantSpec::int(2, Granularity::PerTensor).unwrap();
        let cal = calibrate_uniform(&row(&[-1.0, 0.0, 3.0]), &spec, 1.0, 1.0).unwrap();
        let p = cal.params[0];
        assert!((p.s - 4.0 / 3.0).abs() < 1e-15);
        assert_eq!(p.z, 1);
        let q = quantize(&row(&[-1.0, 0.0, 3.0]), &cal).unwrap();
        assert_eq!(q.codes, vec![0, 1, 3]);
        let d = dequantize(&q, &cal).unwrap();
        let expected = [-4.0 / 3.0, 0.0, 8.0 / 3.0];
        for (a, b) in d.data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn calibrate_constant_falls_back() {
        for bits in [2, 4, 8] {
            let spec = QuantSpec::activations(bits).unwrap();
            let x = row(&[2.0, 2.0, 2.0]);
            let cal = calibrate_uniform(&x, &spec, 1.0, 1.0).unwrap();
            assert_eq!((cal.params[0].s, cal.params[0].z), (1.0, 0));
            assert_eq!(cal.degenerate_groups(&x), vec![0]);
            assert_eq!(fake_quant(&x, &cal).unwrap(), x);
        }
    }

    #[test]
    fn constant_non_code_round_trips() {
        let spec = QuantSpec::activations(3).unwrap();
        for c in [2.5, -3.0, -0.125, 1e6, 0.0] {
            let x = row(&[c; 4]);
            let cal = calibrate_uniform(&x, &spec, 1.0, 1.0).unwrap();
            assert_eq!(fake_quant(&x, &cal).unwrap(), x, "c={c}");
        }
    }

    #[test]
    fn calibrate_grid_endpoints() {
        let spec = QuantSpec::activations(8).unwrap();
        let cal = calibrate_uniform(&row(&[0.0, 255.0]), &spec, 1.0, 1.0).unwrap();
        assert_eq!((cal.params[0].s, cal.params[0].z), (1.0, 0));
    }

    #[test]
    fn quantize_clips() {
        let spec = QuantSpec::activations(4).unwrap();
        let cal = Calibration {
            spec,
            layout: spec.group_layout(1, 1).unwrap(),
            params: vec![QuantParams::new(4, 1.0, 0)],
        };
        assert_eq!(quantize(&row(&[1e6]), &cal).unwrap().codes, vec![15]);
        assert_eq!(fake_quant(&row(&[0.4]), &cal).unwrap().data(), &[0.0]);
    }

    #[test]
    fn per_row_and_group_layouts() {
        let x = Matrix::from_rows(&[vec![0.0, 1.0, 10.0, 20.0], vec![-1.0, 1.0, 5.0, 6.0]]).unwrap();
        let per_row = calibrate_uniform(&x, &QuantSpec::weights(4).unwrap(), 1.0, 1.0).unwrap();
        assert_eq!(per_row.params.len(), 2);
        let grouped =
            calibrate_uniform(&x, &QuantSpec::int(4, Granularity::Group(2)).unwrap(), 1.0, 1.0)
                .unwrap();
        assert_eq!(grouped.params.len(), 4);
        assert_eq!(grouped.layout.index(1, 3), 3);
        assert!(QuantSpec::int(4, Granularity::Group(3)).unwrap().group_layout(2, 4).is_err());
    }

    #[test]
    fn clip_factors_shrink_scale() {
        let x = row(&[-1.0, 0.5, 3.0]);
        let spec = QuantSpec::activations(4).unwrap();
        let full = calibrate_uniform(&x, &spec, 1.0, 1.0).unwrap().params[0];
        let clipped = calibrate_uniform(&x, &spec, 0.5, 0.8).unwrap().params[0];
        assert!((clipped.s - (0.5 * 3.0 + 0.8 * 1.0) / 15.0).abs() < 1e-15);
        assert!(clipped.s < full.s);
        assert!(calibrate_uniform(&x, &spec, 0.0, 1.0).is_err());
    }

    #[test]
    fn params_serialize_with_expected_fields() {
        let json = serde_json::to_value(QuantParams::new(4, 0.5, 3)).unwrap();
        for key in ["bits", "scheme", "s", "z", "gamma", "beta"] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
    }

    #[test]
    fn fp_e4m3_saturates_at_448() {
        let fmt = FpFormat::new(4, 3).unwrap();
        assert_eq!(fmt.max_normal(), 448.0);
        assert_eq!(fmt.round(448.0), 448.0);
        assert_eq!(fmt.round(1e6), 448.0);
        assert_eq!(fmt.round(-1e6), -448.0);
        assert_eq!(fmt.min_subnormal(), 2f64.powi(-9));
        let x = Matrix::row_vector(&[448.0 * 0.25, 1e6]).unwrap();
        assert_eq!(fp_quantize(&x, 4, 3, 0.25).unwrap().data(), &[112.0, 112.0]);
    }

    #[test]
    fn fp_grid_points_are_fixed() {
        let fmt = FpFormat::new(3, 2).unwrap();
        for v in [0.0, 0.0625, 0.25, 1.0, 1.25, 1.5, 1.75, 2.5, 14.0, -3.5] {
            assert_eq!(fmt.round(v), v);
        }
    }

    #[test]
    fn equivalent_transform_identity_and_exactness() {
        let x = Matrix::from_rows(&[vec![1.0, 100.5], vec![-2.0, 99.0], vec![0.5, 101.0]]).unwrap();
        let w = Matrix::from_rows(&[vec![0.3, -1.0], vec![2.0, 0.25]]).unwrap();
        let bias = [0.1, -0.2];
        let (xt, wt, bt) = equivalent_transform(&x, &w, &bias, &EquivTransform::identity(2)).unwrap();
        assert_eq!((xt.clone(), wt.clone(), bt.clone()), (x.clone(), w.clone(), bias.to_vec()));

        let t = EquivTransform { scale: vec![0.5, 4.0], shift: vec![0.0, 100.0] };
        let (xt, wt, bt) = equivalent_transform(&x, &w, &bias, &t).unwrap();
        let y = x.matmul(&w).unwrap();
        let yt = xt.matmul(&wt).unwrap();
        for r in 0..3 {
            for c in 0..2 {
                let a = y[(r, c)] + bias[c];
                let b = yt[(r, c)] + bt[c];
                assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
            }
        }
        let max_before = x.column(1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let max_after = xt.column(1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(max_after < max_before);

        let bad = EquivTransform { scale: vec![1.0, 0.0], shift: vec![0.0, 0.0] };
        assert!(matches!(
            equivalent_transform(&x, &w, &bias, &bad),
            Err(Error::NonPositiveScale { channel: 1, .. })
        ));
    }
}
