//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distill::LossKind;
use crate::error::{Error, Result};
use crate::genmodels::{ArConfig, TrainConfig};
use crate::ptq::VqConfig;
use crate::quant::{Granularity, QuantSpec};
use crate::scaling::ExperimentRecord;
use crate::tolerance::ToyPairConfig;

/// JSON schema describing the accepted configuration files.
pub const SCHEMA: &str = include_str!("../../config.schema.json");

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Quantize(QuantizeParams),
    PtqBench(PtqBenchParams),
    QatDistill(QatDistillParams),
    Tolerance(ToleranceParams),
    ScalingReport(ScalingReportParams),
}

impl Experiment {
    pub fn kind(&self) -> &'static str {
        match self {
            Experiment::Quantize(_) => "quantize",
            Experiment::PtqBench(_) => "ptq_bench",
            Experiment::QatDistill(_) => "qat_distill",
            Experiment::Tolerance(_) => "tolerance",
            Experiment::ScalingReport(_) => "scaling_report",
        }
    }
}

fn invalid<T>(field: &str, message: impl Into<String>) -> Result<T> {
    Err(Error::InvalidConfig { field: field.into(), message: message.into() })
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum TensorSource {
    /// Explicit rows.
    Values(Vec<Vec<f64>>),
    /// Seeded standard normal entries times `std`.
    Random { rows: usize, cols: usize, std: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuantizeParams {
    pub tensor: TensorSource,
    pub spec: QuantSpec,
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default = "one")]
    pub beta: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PtqAlgorithm {
    Rtn,
    Gptq,
    Gptvq,
    Omniquant,
}

impl PtqAlgorithm {
    pub fn label(self) -> &'static str {
        match self {
            PtqAlgorithm::Rtn => "rtn",
            PtqAlgorithm::Gptq => "gptq",
            PtqAlgorithm::Gptvq => "gptvq",
            PtqAlgorithm::Omniquant => "omniquant",
        }
    }
}

fn default_damping() -> f64 {
    0.01
}

fn default_block() -> usize {
    128
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PtqBenchParams {
    pub rows: usize,
    pub cols: usize,
    pub calib_rows: usize,
    pub instances: usize,
    pub weight: QuantSpec,
    pub algorithms: Vec<PtqAlgorithm>,
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_block")]
    pub block_size: usize,
    #[serde(default)]
    pub act_order: bool,
    /// Required when `gptvq` is listed.
    #[serde(default)]
    pub vq: Option<VqConfig>,
    /// Per-tensor activation quantizer for `omniquant`.
    #[serde(default)]
    pub activation: Option<QuantSpec>,
    /// Multiplies the first calibration channel, building an outlier.
    #[serde(default)]
    pub outlier_scale: Option<f64>,
}

fn default_arms() -> Vec<LossKind> {
    vec![LossKind::ForwardKld, LossKind::ReverseKld, LossKind::Topkld { k: 4 }, LossKind::CrossEntropyOnly]
}

fn default_weight_spec() -> QuantSpec {
    QuantSpec { bits: 3, scheme: crate::quant::Scheme::Integer, granularity: Granularity::PerRow }
}

fn default_train_sequences() -> usize {
    256
}

fn default_held_out() -> usize {
    64
}

fn default_qat_steps() -> usize {
    150
}

fn default_qat_lr() -> f64 {
    0.02
}

fn default_qat_batch() -> usize {
    8
}

fn default_eval_every() -> usize {
    25
}

fn default_qat_seeds() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QatDistillParams {
    #[serde(default)]
    pub ar: ArConfig,
    #[serde(default)]
    pub teacher: TrainConfig,
    #[serde(default = "default_train_sequences")]
    pub train_sequences: usize,
    #[serde(default = "default_held_out")]
    pub held_out_sequences: usize,
    #[serde(default = "default_weight_spec")]
    pub weight: QuantSpec,
    #[serde(default)]
    pub activation: Option<QuantSpec>,
    #[serde(default = "default_arms")]
    pub arms: Vec<LossKind>,
    #[serde(default = "default_qat_steps")]
    pub steps: usize,
    #[serde(default = "default_qat_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_qat_batch")]
    pub batch: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Number of independent seeds; seed `i` is `config.seed + i`.
    #[serde(default = "default_qat_seeds")]
    pub seeds: usize,
}

fn default_snr() -> Vec<f64> {
    (0..11).map(|i| 40.0 - 5.0 * i as f64).collect()
}

fn default_sample_seeds() -> usize {
    8
}

fn default_harness_seeds() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultiStepParams {
    pub snr_db: f64,
    pub fraction: f64,
    pub seeds: usize,
}

impl Default for MultiStepParams {
    fn default() -> Self {
        MultiStepParams { snr_db: 10.0, fraction: 0.1, seeds: 20 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceParams {
    #[serde(default)]
    pub pair: ToyPairConfig,
    /// Independently trained pipeline pairs; pair `h` uses `config.seed + h`.
    #[serde(default = "default_harness_seeds")]
    pub harness_seeds: usize,
    #[serde(default = "default_sample_seeds")]
    pub sample_seeds: usize,
    #[serde(default = "default_snr")]
    pub snr_db: Vec<f64>,
    /// Injection step of the single-step sweep; defaults to the middle step.
    #[serde(default)]
    pub step: Option<usize>,
    #[serde(default)]
    pub multi_step: MultiStepParams,
    #[serde(default = "default_sample_seeds")]
    pub activation_seeds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyFamilyParams {
    pub widths: Vec<usize>,
    pub quant_bits: u32,
    #[serde(default)]
    pub ar: ArConfig,
    #[serde(default)]
    pub teacher: TrainConfig,
    #[serde(default = "default_train_sequences")]
    pub train_sequences: usize,
    #[serde(default = "default_held_out")]
    pub held_out_sequences: usize,
    pub loss: LossKind,
    #[serde(default = "default_qat_steps")]
    pub steps: usize,
    #[serde(default = "default_qat_lr")]
    pub learning_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingReportParams {
    #[serde(default)]
    pub records: Vec<ExperimentRecord>,
    #[serde(default)]
    pub toy_family: Option<ToyFamilyParams>,
}

impl ExperimentConfig {
    /// Semantic checks that the type structure cannot express.
    pub fn validate(&self) -> Result<()> {
        match &self.experiment {
            Experiment::Quantize(p) => {
                p.spec.validate().or_else(|e| invalid("experiment.spec", e.to_string()))?;
                if !(p.gamma > 0.0 && p.gamma <= 1.0) {
                    return invalid("experiment.gamma", "must lie in (0, 1]");
                }
                if !(p.beta > 0.0 && p.beta <= 1.0) {
                    return invalid("experiment.beta", "must lie in (0, 1]");
                }
                let (rows, cols) = match &p.tensor {
                    TensorSource::Values(v) => {
                        let cols = v.first().map_or(0, Vec::len);
                        if v.iter().any(|r| r.len() != cols) {
                            return invalid("experiment.tensor.values", "rows must have equal length");
                        }
                        if v.iter().flatten().any(|x| !x.is_finite()) {
                            return invalid("experiment.tensor.values", "entries must be finite");
                        }
                        (v.len(), cols)
                    }
                    TensorSource::Random { rows, cols, std } => {
                        if !(*std > 0.0 && std.is_finite()) {
                            return invalid("experiment.tensor.random.std", "must be positive");
                        }
                        (*rows, *cols)
                    }
                };
                if rows == 0 || cols == 0 {
                    return invalid("experiment.tensor", "tensor must be non-empty");
                }
                p.spec.group_layout(rows, cols).or_else(|e| invalid("experiment.spec.granularity", e.to_string()))?;
            }
            Experiment::PtqBench(p) => {
                if p.rows == 0 || p.cols == 0 || p.calib_rows == 0 || p.instances == 0 {
                    return invalid("experiment", "rows, cols, calib_rows and instances must be positive");
                }
                p.weight.validate().or_else(|e| invalid("experiment.weight", e.to_string()))?;
                p.weight.group_layout(p.rows, p.cols).or_else(|e| invalid("experiment.weight.granularity", e.to_string()))?;
                if p.algorithms.is_empty() {
                    return invalid("experiment.algorithms", "list at least one algorithm");
                }
                if p.block_size == 0 {
                    return invalid("experiment.block_size", "must be at least 1");
                }
                if !(p.damping >= 0.0 && p.damping.is_finite()) {
                    return invalid("experiment.damping", "must be non-negative");
                }
                if p.algorithms.contains(&PtqAlgorithm::Gptvq) {
                    let Some(vq) = &p.vq else {
                        return invalid("experiment.vq", "required when gptvq is listed");
                    };
                    if vq.dim == 0 || p.cols % vq.dim != 0 {
                        return invalid("experiment.vq.dim", "must divide cols");
                    }
                    if vq.codebook_size == 0 || vq.codebooks_per_group == 0 {
                        return invalid("experiment.vq", "codebook_size and codebooks_per_group must be positive");
                    }
                }
                if p.algorithms.contains(&PtqAlgorithm::Omniquant) && p.weight.granularity != Granularity::PerRow {
                    return invalid("experiment.weight.granularity", "omniquant quantizes per output channel (per_row)");
                }
                if let Some(s) = p.outlier_scale {
                    if !(s > 0.0 && s.is_finite()) {
                        return invalid("experiment.outlier_scale", "must be positive");
                    }
                }
            }
            Experiment::QatDistill(p) => {
                p.ar.validate().or_else(|e| invalid("experiment.ar", e.to_string()))?;
                p.weight.validate().or_else(|e| invalid("experiment.weight", e.to_string()))?;
                if p.arms.is_empty() {
                    return invalid("experiment.arms", "list at least one arm");
                }
                if p.seeds == 0 || p.train_sequences == 0 || p.held_out_sequences == 0 || p.batch == 0 {
                    return invalid("experiment", "seeds, sequence counts and batch must be positive");
                }
                if !(p.learning_rate > 0.0 && p.learning_rate.is_finite()) {
                    return invalid("experiment.learning_rate", "must be positive");
                }
                for arm in &p.arms {
                    if let LossKind::Topkld { k } = arm {
                        if *k > p.ar.vocab {
                            return invalid("experiment.arms", format!("topkld k={k} exceeds vocab {}", p.ar.vocab));
                        }
                    }
                }
            }
            Experiment::Tolerance(p) => {
                p.pair.ar.validate().or_else(|e| invalid("experiment.pair.ar", e.to_string()))?;
                if p.harness_seeds == 0 || p.sample_seeds == 0 || p.activation_seeds == 0 || p.multi_step.seeds == 0 {
                    return invalid("experiment", "seed counts must be positive");
                }
                if p.snr_db.len() < 2 || p.snr_db.windows(2).any(|w| w[1] >= w[0]) {
                    return invalid("experiment.snr_db", "need at least two strictly decreasing values");
                }
                if let Some(s) = p.step {
                    if s >= p.pair.ar.seq_len {
                        return invalid("experiment.step", format!("must be below {}", p.pair.ar.seq_len));
                    }
                }
                let f = p.multi_step.fraction;
                if !(f > 0.0 && f <= 1.0) {
                    return invalid("experiment.multi_step.fraction", "must lie in (0, 1]");
                }
            }
            Experiment::ScalingReport(p) => {
                for (i, r) in p.records.iter().enumerate() {
                    r.validate().map_err(|e| match e {
                        Error::InvalidConfig { field, message } => {
                            Error::InvalidConfig { field: format!("experiment.records[{i}].{field}"), message }
                        }
                        other => other,
                    })?;
                }
                if let Some(f) = &p.toy_family {
                    if f.widths.len() < 2 || f.widths.contains(&0) {
                        return invalid("experiment.toy_family.widths", "need at least two positive widths");
                    }
                    if !(2..=16).contains(&f.quant_bits) {
                        return invalid("experiment.toy_family.quant_bits", "must lie in 2..=16");
                    }
                }
                if p.records.is_empty() && p.toy_family.is_none() {
                    return invalid("experiment", "provide records or toy_family");
                }
            }
        }
        Ok(())
    }
}

fn path_error<T: serde::de::DeserializeOwned>(v: serde_json::Value, prefix: &str) -> Option<Error> {
    serde_path_to_error::deserialize::<_, T>(v).err().map(|e| {
        let path = e.path().to_string();
        let field = match (prefix.is_empty(), path.as_str()) {
            (true, ".") => "<root>".to_string(),
            (true, _) => path,
            (false, ".") => prefix.to_string(),
            (false, _) => format!("{prefix}.{path}"),
        };
        Error::InvalidConfig { field, message: e.into_inner().to_string() }
    })
}

/// The tagged experiment block hides nested paths from the top-level
/// error, so re-run the failing variant on its own to locate the field.
fn experiment_error(v: &serde_json::Value) -> Option<Error> {
    let mut block = v.get("experiment")?.as_object()?.clone();
    let kind = block.remove("kind")?;
    let block = serde_json::Value::Object(block);
    match kind.as_str()? {
        "quantize" => path_error::<QuantizeParams>(block, "experiment"),
        "ptq_bench" => path_error::<PtqBenchParams>(block, "experiment"),
        "qat_distill" => path_error::<QatDistillParams>(block, "experiment"),
        "tolerance" => path_error::<ToleranceParams>(block, "experiment"),
        "scaling_report" => path_error::<ScalingReportParams>(block, "experiment"),
        _ => None,
    }
}

/// Parse and validate; every failure maps to `InvalidConfig` naming the
/// offending field.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let v: serde_json::Value = serde_json::from_str(text)
        .map_err(|e| Error::InvalidConfig { field: "<root>".into(), message: e.to_string() })?;
    let cfg: ExperimentConfig = match serde_path_to_error::deserialize(v.clone()) {
        Ok(cfg) => cfg,
        Err(_) => {
            let err = experiment_error(&v)
                .or_else(|| path_error::<ExperimentConfig>(v, ""))
                .unwrap_or(Error::InvalidConfig { field: "<root>".into(), message: "invalid config".into() });
            return Err(err);
        }
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<(ExperimentConfig, Vec<u8>)> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::InvalidConfig { field: "<file>".into(), message: format!("{}: {e}", path.display()) })?;
    let text = std::str::from_utf8(&bytes)
        .map_err(|_| Error::InvalidConfig { field: "<file>".into(), message: "config is not UTF-8".into() })?;
    Ok((parse_config(text)?, bytes))
}
