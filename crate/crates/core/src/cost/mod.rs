//! Latency models for module compute and collective communication.
//!
//! Both follow the same shape: an analytic base (FLOPs over peak FLOP/s, or
//! bytes over bandwidth) multiplied by an efficiency factor. The factor
//! (`eta` for compute, `rho` for communication) is predicted by a random
//! forest trained on `measured / analytic` ratios over polynomially
//! expanded features. Without a trained model the factor is 1, which
//! reduces both estimates to a plain roofline.

pub mod dataset;
pub mod forest;
pub mod oracle;
pub mod poly;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::HardwareProfile;
use forest::{ForestParams, RandomForest};

pub use dataset::{read_dataset, write_dataset};
pub use forest::Node;
pub use oracle::{synthetic_oracle, GroundTruth, OracleParams};
pub use poly::polynomial_expand;

/// Serialization format version of [`EfficiencyModel`].
pub const MODEL_FORMAT_VERSION: u32 = 1;
/// Training needs at least this many samples.
pub const MIN_SAMPLES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleKind {
    Compute,
    Communication,
}

impl SampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Compute => "compute",
            SampleKind::Communication => "communication",
        }
    }

    pub fn target(self) -> Target {
        match self {
            SampleKind::Compute => Target::Eta,
            SampleKind::Communication => Target::Rho,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Eta,
    Rho,
}

impl Target {
    pub fn as_str(self) -> &'static str {
        match self {
            Target::Eta => "eta",
            Target::Rho => "rho",
        }
    }
}

/// What a calibration measurement probed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Probe {
    /// A `[b*s, h] x [h, h]` projection GEMM.
    Compute { b: f64, s: f64, h: f64 },
    /// One collective moving `volume` bytes per device.
    Communication { volume: f64 },
}

/// FLOPs of the reference compute probe: `2 * b * s * h * h`.
pub fn reference_gemm_flops(b: f64, s: f64, h: f64) -> f64 {
    2.0 * b * s * h * h
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub probe: Probe,
    /// Peak FLOP/s for compute probes, bandwidth in bytes/s for communication.
    pub context: f64,
    pub measured_latency: f64,
}

impl CalibrationSample {
    pub fn kind(&self) -> SampleKind {
        match self.probe {
            Probe::Compute { .. } => SampleKind::Compute,
            Probe::Communication { .. } => SampleKind::Communication,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!(
                    "calibration sample: {name} must be finite and > 0, got {v}"
                )))
            }
        };
        match self.probe {
            Probe::Compute { b, s, h } => {
                positive("b", b)?;
                positive("s", s)?;
                positive("h", h)?;
            }
            Probe::Communication { volume } => positive("volume", volume)?,
        }
        positive("context", self.context)?;
        positive("latency_s", self.measured_latency)
    }

    pub fn analytic_seconds(&self) -> f64 {
        match self.probe {
            Probe::Compute { b, s, h } => reference_gemm_flops(b, s, h) / self.context,
            Probe::Communication { volume } => volume / self.context,
        }
    }

    /// The efficiency factor this measurement implies.
    pub fn observed_factor(&self) -> f64 {
        self.measured_latency / self.analytic_seconds()
    }

    /// Raw regressor inputs: `(b, s, h)` or `(volume, bandwidth)`.
    pub fn raw_features(&self) -> Vec<f64> {
        match self.probe {
            Probe::Compute { b, s, h } => vec![b, s, h],
            Probe::Communication { volume } => vec![volume, self.context],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub forest: ForestParams,
    pub degree: u32,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            forest: ForestParams::default(),
            degree: 2,
        }
    }
}

/// Trained predictor of `eta` or `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyModel {
    pub version: u32,
    pub target: Target,
    pub feature_expansion_degree: u32,
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
    pub forest: RandomForest,
}

impl EfficiencyModel {
    /// Predicted factor for raw features `(b, s, h)` or `(volume, bandwidth)`.
    pub fn predict(&self, raw: &[f64]) -> Result<f64> {
        let x = polynomial_expand(raw, self.feature_expansion_degree)?;
        if x.len() != self.forest.n_features {
            return Err(Error::InvalidInput(format!(
                "efficiency model expects {} expanded features, got {}",
                self.forest.n_features,
                x.len()
            )));
        }
        Ok(self.forest.predict(&x))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: EfficiencyModel = serde_json::from_str(text)?;
        if m.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidInput(format!(
                "unsupported efficiency model version {} (expected {MODEL_FORMAT_VERSION})",
                m.version
            )));
        }
        if m.forest.trees.is_empty() {
            return Err(Error::InvalidInput("efficiency model has no trees".into()));
        }
        for t in &m.forest.trees {
            t.check(m.forest.n_features)?;
        }
        Ok(m)
    }

    /// A model whose every prediction is `value`. Handy for tests and for
    /// pinning a factor by hand.
    pub fn constant(target: Target, value: f64) -> Result<Self> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidInput(format!("constant factor must be > 0, got {value}")));
        }
        let n_raw = match target {
            Target::Eta => 3,
            Target::Rho => 2,
        };
        Ok(Self {
            version: MODEL_FORMAT_VERSION,
            target,
            feature_expansion_degree: 1,
            n_trees: 1,
            max_depth: 0,
            min_leaf: 1,
            seed: 0,
            forest: RandomForest {
                n_features: n_raw + 1,
                trees: vec![forest::RegressionTree {
                    nodes: vec![Node::Leaf { value }],
                }],
            },
        })
    }
}

/// Orders samples canonically so training does not depend on input order.
fn canonical_order(samples: &mut [CalibrationSample]) {
    samples.sort_by(|a, b| {
        let (fa, fb) = (a.raw_features(), b.raw_features());
        fa.iter()
            .zip(&fb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.measured_latency.total_cmp(&b.measured_latency))
    });
}

pub fn train_forest(samples: &[CalibrationSample], params: &TrainParams) -> Result<EfficiencyModel> {
    if samples.len() < MIN_SAMPLES {
        return Err(Error::InvalidInput(format!(
            "train_forest: need at least {MIN_SAMPLES} samples, got {}",
            samples.len()
        )));
    }
    let kind = samples[0].kind();
    if samples.iter().any(|s| s.kind() != kind) {
        return Err(Error::InvalidInput("train_forest: samples of mixed kinds".into()));
    }
    for s in samples {
        s.validate()?;
    }
    let mut sorted = samples.to_vec();
    canonical_order(&mut sorted);

    let mut x = Vec::with_capacity(sorted.len());
    let mut y = Vec::with_capacity(sorted.len());
    for s in &sorted {
        let t = s.observed_factor();
        if !(t.is_finite() && t > 0.0) {
            return Err(Error::InvalidInput(format!(
                "train_forest: non-positive efficiency target {t}"
            )));
        }
        x.push(polynomial_expand(&s.raw_features(), params.degree)?);
        y.push(t);
    }
    let forest = RandomForest::fit(&x, &y, &params.forest)?;
    Ok(EfficiencyModel {
        version: MODEL_FORMAT_VERSION,
        target: kind.target(),
        feature_expansion_degree: params.degree,
        n_trees: params.forest.n_trees,
        max_depth: params.forest.max_depth,
        min_leaf: params.forest.min_leaf,
        seed: params.forest.seed,
        forest,
    })
}

/// Mean of `|predicted - measured| / measured` over `samples`.
pub fn mean_relative_error(model: &EfficiencyModel, samples: &[CalibrationSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidInput("mean_relative_error: no samples".into()));
    }
    let mut total = 0.0;
    for s in samples {
        if s.kind().target() != model.target {
            return Err(Error::ModelMismatch {
                expected: s.kind().target().as_str(),
                actual: model.target.as_str(),
            });
        }
        let predicted = s.analytic_seconds() * model.predict(&s.raw_features())?;
        total += (predicted - s.measured_latency).abs() / s.measured_latency;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyEstimate {
    pub seconds: f64,
    pub base_seconds: f64,
    pub factor: f64,
}

impl LatencyEstimate {
    fn new(base_seconds: f64, factor: f64) -> Self {
        Self {
            seconds: base_seconds * factor,
            base_seconds,
            factor,
        }
    }
}

fn check_target(model: Option<&EfficiencyModel>, want: Target) -> Result<()> {
    match model {
        Some(m) if m.target != want => Err(Error::ModelMismatch {
            expected: want.as_str(),
            actual: m.target.as_str(),
        }),
        _ => Ok(()),
    }
}

/// `T = flops / peak_flops * eta(b, s, h)`.
pub fn predict_compute_latency(
    flops: f64,
    hw: &HardwareProfile,
    features: [f64; 3],
    model: Option<&EfficiencyModel>,
) -> Result<LatencyEstimate> {
    if !(flops.is_finite() && flops > 0.0) {
        return Err(Error::InvalidInput(format!("compute latency: flops must be > 0, got {flops}")));
    }
    check_target(model, Target::Eta)?;
    let factor = match model {
        Some(m) => m.predict(&features)?,
        None => 1.0,
    };
    Ok(LatencyEstimate::new(flops / hw.peak_flops, factor))
}

/// `T = volume / bandwidth * rho(volume, bandwidth)`; zero volume costs nothing.
pub fn predict_comm_latency(
    volume: f64,
    hw: &HardwareProfile,
    model: Option<&EfficiencyModel>,
) -> Result<LatencyEstimate> {
    if !(volume.is_finite() && volume >= 0.0) {
        return Err(Error::InvalidInput(format!("comm latency: volume must be >= 0, got {volume}")));
    }
    check_target(model, Target::Rho)?;
    if volume == 0.0 {
        return Ok(LatencyEstimate::new(0.0, 1.0));
    }
    let factor = match model {
        Some(m) => m.predict(&[volume, hw.intra_node_bw])?,
        None => 1.0,
    };
    Ok(LatencyEstimate::new(volume / hw.intra_node_bw, factor))
}

/// The pair of efficiency models a planning run uses. Either may be absent.
#[derive(Debug, Clone, Default)]
pub struct CostModels {
    pub eta: Option<EfficiencyModel>,
    pub rho: Option<EfficiencyModel>,
}

impl CostModels {
    pub fn roofline() -> Self {
        Self::default()
    }

    pub fn new(eta: Option<EfficiencyModel>, rho: Option<EfficiencyModel>) -> Result<Self> {
        check_target(eta.as_ref(), Target::Eta)?;
        check_target(rho.as_ref(), Target::Rho)?;
        Ok(Self { eta, rho })
    }

    /// Trains both models on the default synthetic oracle.
    pub fn from_default_oracle(n_samples: usize, seed: u64) -> Result<Self> {
        let params = TrainParams {
            forest: ForestParams {
                seed,
                ..Default::default()
            },
            ..Default::default()
        };
        let eta_data = synthetic_oracle(
            SampleKind::Compute,
            &OracleParams::default_compute(n_samples),
            seed,
        )?;
        let rho_data = synthetic_oracle(
            SampleKind::Communication,
            &OracleParams::default_communication(n_samples),
            seed,
        )?;
        Self::new(
            Some(train_forest(&eta_data, &params)?),
            Some(train_forest(&rho_data, &params)?),
        )
    }

    pub fn compute(&self, flops: f64, hw: &HardwareProfile, features: [f64; 3]) -> Result<LatencyEstimate> {
        predict_compute_latency(flops, hw, features, self.eta.as_ref())
    }

    pub fn comm(&self, volume: f64, hw: &HardwareProfile) -> Result<LatencyEstimate> {
        predict_comm_latency(volume, hw, self.rho.as_ref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hw(peak: f64, bw: f64) -> HardwareProfile {
        HardwareProfile {
            name: "t".into(),
            n_devices: 1,
            peak_flops: peak,
            device_mem_bytes: 1 << 30,
            intra_node_bw: bw,
            host_to_device_bw: 1e9,
            link_label: String::new(),
        }
    }

    #[test]
    fn compute_unit_case() {
        let h = hw(1e12, 1e9);
        let one = EfficiencyModel::constant(Target::Eta, 1.0).unwrap();
        let e = predict_compute_latency(1e12, &h, [1.0, 1.0, 1.0], Some(&one)).unwrap();
        assert_eq!(e.seconds, 1.0);
    }

    #[test]
    fn compute_single_leaf() {
        let h = hw(1e13, 1e9);
        let two = EfficiencyModel::constant(Target::Eta, 2.0).unwrap();
        let e = predict_compute_latency(1e12, &h, [4.0, 128.0, 4096.0], Some(&two)).unwrap();
        assert!((e.seconds - 0.2).abs() < 1e-15);
        assert_eq!(e.seconds, e.base_seconds * e.factor);
        let e2 = predict_compute_latency(2e12, &h, [4.0, 128.0, 4096.0], Some(&two)).unwrap();
        assert_eq!(e2.seconds, 2.0 * e.seconds);
    }

    #[test]
    fn comm_single_leaf_and_zero() {
        let h = hw(1e12, 1e9);
        let rho = EfficiencyModel::constant(Target::Rho, 1.5).unwrap();
        let e = predict_comm_latency(3e9, &h, Some(&rho)).unwrap();
        assert!((e.seconds - 4.5).abs() < 1e-12);
        assert_eq!(predict_comm_latency(0.0, &h, Some(&rho)).unwrap().seconds, 0.0);
    }

    #[test]
    fn mismatched_targets_rejected() {
        let h = hw(1e12, 1e9);
        let rho = EfficiencyModel::constant(Target::Rho, 1.5).unwrap();
        let eta = EfficiencyModel::constant(Target::Eta, 1.5).unwrap();
        assert!(matches!(
            predict_compute_latency(1.0, &h, [1.0; 3], Some(&rho)),
            Err(Error::ModelMismatch { .. })
        ));
        assert!(predict_comm_latency(1.0, &h, Some(&eta)).is_err());
        assert!(CostModels::new(Some(rho), None).is_err());
    }

    #[test]
    fn roofline_fallback() {
        let h = hw(1e12, 1e9);
        let m = CostModels::roofline();
        assert_eq!(m.compute(5e11, &h, [1.0; 3]).unwrap().seconds, 0.5);
        assert_eq!(m.comm(2e9, &h).unwrap().seconds, 2.0);
        assert!(m.compute(0.0, &h, [1.0; 3]).is_err());
    }

    fn constant_samples(n: usize, eta: f64) -> Vec<CalibrationSample> {
        (0..n)
            .map(|i| {
                let (b, s, h) = (1.0 + (i % 7) as f64, 16.0 * (1 + i % 11) as f64, 1024.0);
                let p = Probe::Compute { b, s, h };
                let base = reference_gemm_flops(b, s, h) / 1e14;
                CalibrationSample {
                    probe: p,
                    context: 1e14,
                    measured_latency: base * eta,
                }
            })
            .collect()
    }

    #[test]
    fn train_constant_eta() {
        let data = constant_samples(40, 1.3);
        let m = train_forest(&data, &TrainParams::default()).unwrap();
        assert_eq!(m.target, Target::Eta);
        for probe in [[1.0, 1.0, 1.0], [64.0, 8192.0, 16384.0], [3.0, 100.0, 512.0]] {
            assert!((m.predict(&probe).unwrap() - 1.3).abs() < 1e-6);
        }
    }

    #[test]
    fn train_is_order_invariant() {
        let data = synthetic_oracle(SampleKind::Compute, &OracleParams::default_compute(60), 3).unwrap();
        let mut rev = data.clone();
        rev.reverse();
        let p = TrainParams::default();
        assert_eq!(train_forest(&data, &p).unwrap(), train_forest(&rev, &p).unwrap());
    }

    #[test]
    fn train_rejects_bad_inputs() {
        let data = constant_samples(10, 1.3);
        assert!(train_forest(&data, &TrainParams::default()).is_err());
        let mut data = constant_samples(30, 1.3);
        data[4].measured_latency = 0.0;
        assert!(train_forest(&data, &TrainParams::default()).is_err());
        let mut data = constant_samples(30, 1.3);
        data[0] = CalibrationSample {
            probe: Probe::Communication { volume: 1e6 },
            context: 1e9,
            measured_latency: 1e-3,
        };
        assert!(train_forest(&data, &TrainParams::default()).is_err());
    }

    #[test]
    fn json_round_trip_is_stable() {
        let data = synthetic_oracle(
            SampleKind::Communication,
            &OracleParams::default_communication(50),
            9,
        )
        .unwrap();
        let m = train_forest(
            &data,
            &TrainParams {
                forest: ForestParams {
                    n_trees: 5,
                    ..Default::default()
                },
                degree: 2,
            },
        )
        .unwrap();
        let text = m.to_json().unwrap();
        let back = EfficiencyModel::from_json(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn json_rejects_wrong_version_and_bad_leaves() {
        let m = EfficiencyModel::constant(Target::Rho, 1.0).unwrap();
        let text = m.to_json().unwrap().replace("\"version\": 1", "\"version\": 99");
        assert!(EfficiencyModel::from_json(&text).is_err());
        let text = m.to_json().unwrap().replace("\"value\": 1.0", "\"value\": -1.0");
        assert!(EfficiencyModel::from_json(&text).is_err());
    }
}
