//! Synthetic calibration data with known ground-truth efficiency curves.
//!
//! Stands in for on-device benchmarking: probes are drawn log-uniformly
//! over a realistic domain and their latency is the analytic base times
//! the ground-truth factor times multiplicative Gaussian noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{CalibrationSample, Probe, SampleKind};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroundTruth {
    Constant { value: f64 },
    /// `eta = floor + span * knee / (b*s + knee)`: a logistic curve in
    /// `ln(b*s)` falling from `floor + span` for tiny batches to `floor`.
    Utilization { floor: f64, span: f64, knee_tokens: f64 },
    /// `rho = 1 + floor_bytes / volume`: a fixed per-collective latency
    /// expressed as bytes-at-bandwidth.
    LatencyFloor { floor_bytes: f64 },
}

impl GroundTruth {
    pub fn default_eta() -> Self {
        GroundTruth::Utilization {
            floor: 1.2,
            span: 0.8,
            knee_tokens: 64.0,
        }
    }

    pub fn default_rho() -> Self {
        GroundTruth::LatencyFloor {
            floor_bytes: 1_048_576.0,
        }
    }

    pub fn factor(&self, probe: &Probe) -> f64 {
        match (*self, *probe) {
            (GroundTruth::Constant { value }, _) => value,
            (GroundTruth::Utilization { floor, span, knee_tokens }, Probe::Compute { b, s, .. }) => {
                floor + span * knee_tokens / (b * s + knee_tokens)
            }
            (GroundTruth::LatencyFloor { floor_bytes }, Probe::Communication { volume }) => {
                1.0 + floor_bytes / volume
            }
            // curves applied to the other probe kind degenerate to their floor
            (GroundTruth::Utilization { floor, .. }, _) => floor,
            (GroundTruth::LatencyFloor { .. }, _) => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleParams {
    pub n_samples: usize,
    /// Relative standard deviation of the multiplicative noise.
    pub noise: f64,
    pub truth: GroundTruth,
    /// Peak FLOP/s or bandwidth values; each sample picks one uniformly.
    pub contexts: Vec<f64>,
    pub batch_range: (f64, f64),
    pub seq_range: (f64, f64),
    pub hidden_range: (f64, f64),
    pub volume_range: (f64, f64),
}

impl OracleParams {
    pub fn default_compute(n_samples: usize) -> Self {
        Self {
            n_samples,
            noise: 0.02,
            truth: GroundTruth::default_eta(),
            contexts: vec![125.0e12, 154.8e12, 312.0e12],
            batch_range: (1.0, 64.0),
            seq_range: (1.0, 8192.0),
            hidden_range: (128.0, 16384.0),
            volume_range: (1024.0, 4.0 * 1024.0 * 1024.0 * 1024.0),
        }
    }

    pub fn default_communication(n_samples: usize) -> Self {
        Self {
            contexts: vec![10.0e9, 16.0e9, 300.0e9],
            truth: GroundTruth::default_rho(),
            ..Self::default_compute(n_samples)
        }
    }
}

fn log_uniform(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp().round().max(lo.round().max(1.0))
}

pub fn synthetic_oracle(kind: SampleKind, params: &OracleParams, seed: u64) -> Result<Vec<CalibrationSample>> {
    if !(params.noise.is_finite() && params.noise >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "oracle noise must be >= 0, got {}",
            params.noise
        )));
    }
    if params.contexts.is_empty() || params.contexts.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
        return Err(Error::InvalidInput("oracle contexts must be non-empty and positive".into()));
    }
    let ranges = [
        params.batch_range,
        params.seq_range,
        params.hidden_range,
        params.volume_range,
    ];
    if ranges.iter().any(|&(lo, hi)| !(lo >= 1.0 && hi >= lo)) {
        return Err(Error::InvalidInput("oracle ranges must satisfy 1 <= lo <= hi".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(match kind {
        SampleKind::Compute => 1,
        SampleKind::Communication => 2,
    });
    let mut out = Vec::with_capacity(params.n_samples);
    for _ in 0..params.n_samples {
        let probe = match kind {
            SampleKind::Compute => Probe::Compute {
                b: log_uniform(&mut rng, params.batch_range),
                s: log_uniform(&mut rng, params.seq_range),
                h: log_uniform(&mut rng, params.hidden_range),
            },
            SampleKind::Communication => Probe::Communication {
                volume: log_uniform(&mut rng, params.volume_range),
            },
        };
        let context = params.contexts[rng.random_range(0..params.contexts.len())];
        let z: f64 = StandardNormal.sample(&mut rng);
        let noise = (1.0 + params.noise * z).max(1e-3);
        let mut sample = CalibrationSample {
            probe,
            context,
            measured_latency: 1.0,
        };
        sample.measured_latency = sample.analytic_seconds() * params.truth.factor(&probe) * noise;
        out.push(sample);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let p = OracleParams {
            noise: 0.0,
            ..OracleParams::default_compute(100)
        };
        let a = synthetic_oracle(SampleKind::Compute, &p, 5).unwrap();
        let b = synthetic_oracle(SampleKind::Compute, &p, 5).unwrap();
        assert_eq!(a, b);
        let c = synthetic_oracle(SampleKind::Compute, &p, 6).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn constant_truth_gives_equal_targets() {
        let p = OracleParams {
            noise: 0.0,
            truth: GroundTruth::Constant { value: 1.7 },
            ..OracleParams::default_communication(50)
        };
        for s in synthetic_oracle(SampleKind::Communication, &p, 1).unwrap() {
            assert!((s.observed_factor() - 1.7).abs() < 1e-12);
        }
    }

    #[test]
    fn samples_are_valid_and_in_range() {
        let p = OracleParams::default_compute(300);
        for s in synthetic_oracle(SampleKind::Compute, &p, 2).unwrap() {
            s.validate().unwrap();
            let Probe::Compute { b, s: seq, h } = s.probe else { panic!() };
            assert!((1.0..=64.0).contains(&b));
            assert!((1.0..=8192.0).contains(&seq));
            assert!((128.0..=16384.0).contains(&h));
        }
    }

    #[test]
    fn negative_noise_rejected() {
        let p = OracleParams {
            noise: -0.1,
            ..OracleParams::default_compute(10)
        };
        assert!(synthetic_oracle(SampleKind::Compute, &p, 0).is_err());
    }

    #[test]
    fn default_curves() {
        let eta = GroundTruth::default_eta();
        let tiny = eta.factor(&Probe::Compute { b: 1.0, s: 1.0, h: 1.0 });
        let huge = eta.factor(&Probe::Compute { b: 64.0, s: 8192.0, h: 1.0 });
        assert!(tiny > 1.98 && huge < 1.21 && huge > 1.2);
        let rho = GroundTruth::default_rho();
        assert_eq!(rho.factor(&Probe::Communication { volume: 1_048_576.0 }), 2.0);
    }
}
