//! Model, hardware and scenario descriptions plus the FLOP and memory
//! calculators the rest of the crate builds on.
//!
//! FLOP counts are exact `u128` integers; every multiplication is checked.
//! Memory figures are whole-model totals in bytes. Division by the device
//! count happens in the feasibility check, not here.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Multiplier applied to `B * S_input * Dim * dtype_bytes` to cover
/// residual streams and intermediate buffers.
pub const DEFAULT_ACT_FACTOR: u64 = 4;

/// Architecture parameters of a Mixture-of-Experts transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub name: String,
    pub n_layers: u32,
    pub n_q_heads: u32,
    pub n_kv_heads: u32,
    pub head_dim: u32,
    pub hidden_dim: u32,
    pub n_experts: u32,
    #[serde(default)]
    pub n_shared_experts: u32,
    pub top_k: u32,
    pub expert_inter_dim: u32,
    pub dtype_bytes: u32,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_layers", self.n_layers),
            ("n_q_heads", self.n_q_heads),
            ("n_kv_heads", self.n_kv_heads),
            ("head_dim", self.head_dim),
            ("hidden_dim", self.hidden_dim),
            ("n_experts", self.n_experts),
            ("top_k", self.top_k),
            ("expert_inter_dim", self.expert_inter_dim),
            ("dtype_bytes", self.dtype_bytes),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidInput(format!("model.{name} must be >= 1")));
            }
        }
        if u64::from(self.n_q_heads) * u64::from(self.head_dim) != u64::from(self.hidden_dim) {
            return Err(Error::InvalidInput(format!(
                "model: n_q_heads ({}) * head_dim ({}) != hidden_dim ({})",
                self.n_q_heads, self.head_dim, self.hidden_dim
            )));
        }
        if self.n_q_heads % self.n_kv_heads != 0 {
            return Err(Error::InvalidInput(format!(
                "model: n_kv_heads ({}) does not divide n_q_heads ({})",
                self.n_kv_heads, self.n_q_heads
            )));
        }
        if self.top_k > self.n_experts {
            return Err(Error::InvalidInput(format!(
                "model: top_k ({}) exceeds n_experts ({})",
                self.top_k, self.n_experts
            )));
        }
        Ok(())
    }

    /// Width of the key (or value) projection output.
    pub fn kv_dim(&self) -> u64 {
        u64::from(self.n_kv_heads) * u64::from(self.head_dim)
    }

    /// Experts evaluated per token: routed top-k plus always-on shared experts.
    pub fn active_experts(&self) -> u64 {
        u64::from(self.top_k) + u64::from(self.n_shared_experts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    #[serde(default)]
    pub name: String,
    pub n_devices: u32,
    /// Peak FLOP/s of one device.
    pub peak_flops: f64,
    pub device_mem_bytes: u64,
    /// Intra-node device-to-device bandwidth, bytes/s.
    pub intra_node_bw: f64,
    /// Host-to-device bandwidth, bytes/s.
    pub host_to_device_bw: f64,
    #[serde(default)]
    pub link_label: String,
}

impl HardwareProfile {
    pub fn validate(&self) -> Result<()> {
        if self.n_devices == 0 {
            return Err(Error::InvalidInput("hardware.n_devices must be >= 1".into()));
        }
        if self.device_mem_bytes == 0 {
            return Err(Error::InvalidInput(
                "hardware.device_mem_bytes must be > 0".into(),
            ));
        }
        for (name, v) in [
            ("peak_flops", self.peak_flops),
            ("intra_node_bw", self.intra_node_bw),
            ("host_to_device_bw", self.host_to_device_bw),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "hardware.{name} must be finite and > 0, got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn with_devices(mut self, n: u32) -> Self {
        self.n_devices = n;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InferenceScenario {
    pub batch: u32,
    pub input_len: u32,
    pub output_len: u32,
}

impl InferenceScenario {
    pub fn new(batch: u32, input_len: u32, output_len: u32) -> Self {
        Self {
            batch,
            input_len,
            output_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 {
            return Err(Error::InvalidInput("scenario.batch must be >= 1".into()));
        }
        if self.input_len == 0 {
            return Err(Error::InvalidInput("scenario.input_len must be >= 1".into()));
        }
        Ok(())
    }

    /// KV length of the representative decode step: the midpoint of generation.
    pub fn decode_kv_len(&self) -> u64 {
        u64::from(self.input_len) + u64::from(self.output_len) / 2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemoryBreakdown {
    pub kv_bytes: u64,
    pub attn_weight_bytes: u64,
    pub expert_weight_bytes: u64,
    pub activation_bytes: u64,
}

fn mul(parts: &[u64], what: &'static str) -> Result<u128> {
    parts.iter().try_fold(1u128, |acc, &p| {
        acc.checked_mul(u128::from(p)).ok_or(Error::Overflow(what))
    })
}

fn to_u64(v: u128, what: &'static str) -> Result<u64> {
    u64::try_from(v).map_err(|_| Error::Overflow(what))
}

/// Per-layer FLOPs of the attention block for `n_tokens` query tokens each
/// attending to `kv_len` keys.
///
/// Projections: Q and O are `Dim x Dim`, K and V are `Dim x (N_kv * head_dim)`.
/// The score (`QK^T`) and context (`AV`) matmuls each cost
/// `n_tokens * kv_len * Dim` multiply-adds. Two FLOPs per multiply-add.
pub fn attention_flops(model: &ModelSpec, n_tokens: u64, kv_len: u64) -> Result<u128> {
    if n_tokens == 0 {
        return Err(Error::InvalidInput("attention_flops: n_tokens must be >= 1".into()));
    }
    if kv_len == 0 {
        return Err(Error::InvalidInput("attention_flops: kv_len must be >= 1".into()));
    }
    const WHAT: &str = "attention FLOPs";
    let dim = u64::from(model.hidden_dim);
    let proj_macs_per_token = mul(&[2, dim, dim], WHAT)?
        .checked_add(mul(&[2, dim, model.kv_dim()], WHAT)?)
        .ok_or(Error::Overflow(WHAT))?;
    let proj = mul(&[2, n_tokens], WHAT)?
        .checked_mul(proj_macs_per_token)
        .ok_or(Error::Overflow(WHAT))?;
    let scores = mul(&[2, n_tokens, kv_len, dim, 2], WHAT)?;
    proj.checked_add(scores).ok_or(Error::Overflow(WHAT))
}

/// Per-layer FLOPs of the expert block for `n_tokens` tokens: gated MLPs
/// (gate, up, down) for every routed and shared expert a token visits, plus
/// the router projection.
pub fn expert_flops(model: &ModelSpec, n_tokens: u64) -> Result<u128> {
    if n_tokens == 0 {
        return Err(Error::InvalidInput("expert_flops: n_tokens must be >= 1".into()));
    }
    const WHAT: &str = "expert FLOPs";
    let dim = u64::from(model.hidden_dim);
    let inter = u64::from(model.expert_inter_dim);
    let mlp = mul(&[model.active_experts(), n_tokens, 3, 2, dim, inter], WHAT)?;
    let router = mul(&[2, n_tokens, dim, u64::from(model.n_experts)], WHAT)?;
    mlp.checked_add(router).ok_or(Error::Overflow(WHAT))
}

pub fn memory_footprint(model: &ModelSpec, scenario: &InferenceScenario) -> Result<MemoryBreakdown> {
    memory_footprint_with(model, scenario, DEFAULT_ACT_FACTOR)
}

pub fn memory_footprint_with(
    model: &ModelSpec,
    scenario: &InferenceScenario,
    act_factor: u64,
) -> Result<MemoryBreakdown> {
    model.validate()?;
    scenario.validate()?;
    const WHAT: &str = "memory footprint";
    let layers = u64::from(model.n_layers);
    let dim = u64::from(model.hidden_dim);
    let bytes = u64::from(model.dtype_bytes);
    let seq = u64::from(scenario.input_len) + u64::from(scenario.output_len);

    let kv = mul(
        &[2, layers, u64::from(scenario.batch), seq, model.kv_dim(), bytes],
        WHAT,
    )?;
    let attn_per_layer = mul(&[2, dim, dim], WHAT)? + mul(&[2, dim, model.kv_dim()], WHAT)?;
    let attn = attn_per_layer
        .checked_mul(u128::from(layers) * u128::from(bytes))
        .ok_or(Error::Overflow(WHAT))?;
    let experts = u64::from(model.n_experts) + u64::from(model.n_shared_experts);
    let exp = mul(
        &[layers, experts, 3, dim, u64::from(model.expert_inter_dim), bytes],
        WHAT,
    )?;
    let act = mul(
        &[
            u64::from(scenario.batch),
            u64::from(scenario.input_len),
            dim,
            bytes,
            act_factor,
        ],
        WHAT,
    )?;
    Ok(MemoryBreakdown {
        kv_bytes: to_u64(kv, WHAT)?,
        attn_weight_bytes: to_u64(attn, WHAT)?,
        expert_weight_bytes: to_u64(exp, WHAT)?,
        activation_bytes: to_u64(act, WHAT)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn toy() -> ModelSpec {
        ModelSpec {
            name: "toy".into(),
            n_layers: 1,
            n_q_heads: 2,
            n_kv_heads: 2,
            head_dim: 4,
            hidden_dim: 8,
            n_experts: 4,
            n_shared_experts: 0,
            top_k: 1,
            expert_inter_dim: 16,
            dtype_bytes: 2,
        }
    }

    // 2*m*n*k for an [m,k] x [k,n] matmul.
    fn mm(m: u128, k: u128, n: u128) -> u128 {
        2 * m * n * k
    }

    #[test]
    fn attention_toy_hand_count() {
        let m = toy();
        // q, k, v, o projections of one token, then per-head score and context.
        let q = mm(1, 8, 8);
        let k = mm(1, 8, 8);
        let v = mm(1, 8, 8);
        let o = mm(1, 8, 8);
        let score = 2 * mm(1, 4, 1);
        let ctx = 2 * mm(1, 1, 4);
        let expected = q + k + v + o + score + ctx;
        assert_eq!(expected, 544);
        assert_eq!(attention_flops(&m, 1, 1).unwrap(), expected);
    }

    #[test]
    fn attention_rejects_empty() {
        assert!(attention_flops(&toy(), 0, 1).is_err());
        assert!(attention_flops(&toy(), 1, 0).is_err());
    }

    #[test]
    fn attention_scaling() {
        let m = toy();
        let proj = |t: u64| attention_flops(&m, t, 1).unwrap() - 2 * 2 * t as u128 * 8;
        let f1 = attention_flops(&m, 8, 8).unwrap();
        let f2 = attention_flops(&m, 16, 16).unwrap();
        let (p1, p2) = (proj(8), proj(16));
        assert_eq!(p2, 2 * p1);
        assert_eq!(f2 - p2, 4 * (f1 - p1));
    }

    #[test]
    fn expert_toy_hand_count() {
        let m = toy();
        let gate = mm(1, 8, 16);
        let up = mm(1, 8, 16);
        let down = mm(1, 16, 8);
        let router = mm(1, 8, 4);
        assert_eq!(expert_flops(&m, 1).unwrap(), gate + up + down + router);
    }

    #[test]
    fn expert_router_and_shared_terms() {
        let a = toy();
        let mut b = toy();
        b.n_experts = 8;
        assert_eq!(
            expert_flops(&b, 3).unwrap() - expert_flops(&a, 3).unwrap(),
            mm(3, 8, 4)
        );
        let mut s = toy();
        s.n_shared_experts = 1;
        assert_eq!(
            expert_flops(&s, 1).unwrap() - expert_flops(&a, 1).unwrap(),
            3 * mm(1, 8, 16)
        );
    }

    #[test]
    fn overflow_is_reported() {
        let mut m = toy();
        m.hidden_dim = u32::MAX;
        assert!(matches!(
            attention_flops(&m, u64::MAX, u64::MAX),
            Err(Error::Overflow(_))
        ));
    }

    #[test]
    fn memory_boundaries() {
        let m = toy();
        let mem0 = memory_footprint(&m, &InferenceScenario::new(1, 10, 0)).unwrap();
        assert_eq!(mem0.kv_bytes, 2 * 10 * 8 * 2);
        let a = memory_footprint(&m, &InferenceScenario::new(1, 10, 5)).unwrap();
        let b = memory_footprint(&m, &InferenceScenario::new(2, 10, 5)).unwrap();
        assert_eq!(b.kv_bytes, 2 * a.kv_bytes);
        assert_eq!(b.activation_bytes, 2 * a.activation_bytes);
        assert_eq!(b.attn_weight_bytes, a.attn_weight_bytes);
        assert_eq!(b.expert_weight_bytes, a.expert_weight_bytes);
    }

    #[test]
    fn validation() {
        let mut m = toy();
        m.head_dim = 3;
        assert!(m.validate().is_err());
        let mut m = toy();
        m.n_kv_heads = 3;
        m.n_q_heads = 2;
        assert!(m.validate().is_err());
        let mut m = toy();
        m.top_k = 5;
        assert!(m.validate().is_err());
        assert!(InferenceScenario::new(0, 1, 1).validate().is_err());
        assert!(InferenceScenario::new(1, 1, 0).validate().is_ok());
    }
}
