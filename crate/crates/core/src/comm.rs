//! Per-layer collective communication implied by an (attention, expert)
//! layout pair.
//!
//! With `t` tokens in the stage and `w = t * hidden_dim * dtype_bytes`:
//!
//! | layout                         | collectives                                   |
//! |--------------------------------|-----------------------------------------------|
//! | attention TP (`A_t > 1`)       | AllReduce of `w / A_d` within each TP group   |
//! | attention DP only              | none                                          |
//! | expert TP only, `A_d = 1`      | AllReduce of `w` over `N`                     |
//! | expert TP only, `A_d > 1`      | AllGather `w` + ReduceScatter `w` over `N`    |
//! | expert EP only                 | dispatch + combine All-to-All of `top_k * w`  |
//! | expert EP x TP                 | All-to-All pair over `E_e`, AllReduce of `w` over `E_t`, plus the AllGather/ReduceScatter boundary when `A_d > 1` |
//!
//! The ReduceScatter at a DP boundary already sums the TP partials, so the
//! expert AllReduce is dropped whenever that boundary exists. Setting
//! [`CommOptions::fused_boundary`] to false instead charges the boundary
//! whenever `A_d > 1` and the expert layout has no DP, on top of the expert
//! AllReduce, including for pure EP. In the default mode pure EP consumes
//! DP-sharded tokens directly and needs no boundary. Shared experts are
//! replicated under EP and never enter the All-to-All.
//!
//! Latency uses the per-device wire traffic of ring algorithms: AllReduce
//! moves `2(g-1)/g` of its payload, AllGather and ReduceScatter `(g-1)/g`,
//! and an All-to-All whose total payload is `V` moves `V(g-1)/g^2`.

use serde::{Deserialize, Serialize};

use crate::cost::CostModels;
use crate::error::{Error, Result};
use crate::model::{HardwareProfile, InferenceScenario, ModelSpec};
use crate::strategy::{AttentionStrategy, ExpertStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Prefill,
    Decode,
}

impl Stage {
    pub fn tokens(self, scenario: &InferenceScenario) -> u64 {
        match self {
            Stage::Prefill => u64::from(scenario.batch) * u64::from(scenario.input_len),
            Stage::Decode => u64::from(scenario.batch),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Collective {
    #[serde(rename = "allreduce")]
    AllReduce,
    AllToAll,
    #[serde(rename = "allgather")]
    AllGather,
    #[serde(rename = "reducescatter")]
    ReduceScatter,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectiveOp {
    pub kind: Collective,
    /// Logical payload in bytes (the full tensor being reduced or exchanged).
    pub bytes: u64,
    /// Number of devices taking part.
    pub group: u32,
}

impl CollectiveOp {
    /// Bytes each device sends over its link.
    pub fn wire_bytes(&self) -> f64 {
        let g = f64::from(self.group);
        if self.group <= 1 || self.bytes == 0 {
            return 0.0;
        }
        let v = self.bytes as f64;
        match self.kind {
            Collective::AllReduce => 2.0 * (g - 1.0) / g * v,
            Collective::AllGather | Collective::ReduceScatter => (g - 1.0) / g * v,
            Collective::AllToAll => v * (g - 1.0) / (g * g),
            Collective::None => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommOptions {
    pub fused_boundary: bool,
}

impl Default for CommOptions {
    fn default() -> Self {
        Self { fused_boundary: true }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommVolumeSpec {
    pub stage: Stage,
    pub tokens: u64,
    pub attention: Vec<CollectiveOp>,
    pub expert: Vec<CollectiveOp>,
}

impl CommVolumeSpec {
    pub fn attention_bytes(&self) -> u64 {
        self.attention.iter().map(|c| c.bytes).sum()
    }

    pub fn expert_bytes(&self) -> u64 {
        self.expert.iter().map(|c| c.bytes).sum()
    }

    pub fn total_bytes(&self) -> u64 {
        self.attention_bytes() + self.expert_bytes()
    }

    pub fn ops(&self) -> impl Iterator<Item = &CollectiveOp> {
        self.attention.iter().chain(self.expert.iter())
    }

    pub fn wire_bytes(&self) -> f64 {
        self.ops().map(CollectiveOp::wire_bytes).sum()
    }

    /// Per-layer communication latency: each collective costed separately.
    pub fn latency(&self, hw: &HardwareProfile, models: &CostModels) -> Result<f64> {
        let mut total = 0.0;
        for op in self.ops() {
            total += models.comm(op.wire_bytes(), hw)?.seconds;
        }
        Ok(total)
    }
}

fn op(kind: Collective, bytes: u64, group: u32) -> CollectiveOp {
    CollectiveOp { kind, bytes, group }
}

pub fn comm_volume(
    attn: &AttentionStrategy,
    exp: &ExpertStrategy,
    model: &ModelSpec,
    scenario: &InferenceScenario,
    stage: Stage,
) -> Result<CommVolumeSpec> {
    comm_volume_with(attn, exp, model, scenario, stage, CommOptions::default())
}

pub fn comm_volume_with(
    attn: &AttentionStrategy,
    exp: &ExpertStrategy,
    model: &ModelSpec,
    scenario: &InferenceScenario,
    stage: Stage,
    options: CommOptions,
) -> Result<CommVolumeSpec> {
    let n = attn.devices();
    if n == 0 || exp.devices() != n {
        return Err(Error::InvalidInput(format!(
            "strategies {attn} and {exp} span different device counts"
        )));
    }
    if exp.dp_degree > 1 && exp.ep_degree > 1 {
        return Err(Error::InvalidInput(format!(
            "unknown strategy combination: expert layout {exp} mixes DP with EP"
        )));
    }
    let tokens = stage.tokens(scenario);
    let w = tokens
        .checked_mul(u64::from(model.hidden_dim))
        .and_then(|v| v.checked_mul(u64::from(model.dtype_bytes)))
        .ok_or(Error::Overflow("communication volume"))?;
    let routed = w
        .checked_mul(u64::from(model.top_k))
        .ok_or(Error::Overflow("communication volume"))?;

    let mut attention = Vec::new();
    if attn.tp_degree > 1 {
        attention.push(op(Collective::AllReduce, w.div_ceil(u64::from(attn.dp_degree)), attn.tp_degree));
    }

    let mut expert = Vec::new();
    let (a_d, e_t, e_e, e_d) = (attn.dp_degree, exp.tp_degree, exp.ep_degree, exp.dp_degree);
    let boundary = if e_d > 1 {
        a_d != e_d
    } else if options.fused_boundary {
        a_d > 1 && e_t > 1
    } else {
        a_d > 1
    };
    if boundary {
        expert.push(op(Collective::AllGather, w, n));
    }
    if e_e > 1 {
        expert.push(op(Collective::AllToAll, routed, e_e));
        expert.push(op(Collective::AllToAll, routed, e_e));
    }
    let reduce_in_boundary = boundary && options.fused_boundary && e_e == 1 && e_d == 1;
    if e_t > 1 && !reduce_in_boundary {
        expert.push(op(Collective::AllReduce, w.div_ceil(u64::from(e_d)), e_t));
    }
    if boundary {
        expert.push(op(Collective::ReduceScatter, w, n));
    }

    Ok(CommVolumeSpec {
        stage,
        tokens,
        attention,
        expert,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::model_preset;

    fn mixtral() -> ModelSpec {
        model_preset("mixtral-8x7b").unwrap()
    }

    fn w(model: &ModelSpec, sc: &InferenceScenario, stage: Stage) -> u64 {
        stage.tokens(sc) * u64::from(model.hidden_dim) * u64::from(model.dtype_bytes)
    }

    #[test]
    fn pure_tp_prefill_two_allreduce() {
        let m = mixtral();
        let sc = InferenceScenario::new(8, 512, 16);
        let v = comm_volume(&AttentionStrategy::new(4, 1), &ExpertStrategy::new(4, 1), &m, &sc, Stage::Prefill).unwrap();
        let w = 8 * 512 * 4096 * 2;
        assert_eq!(v.attention, vec![op(Collective::AllReduce, w, 4)]);
        assert_eq!(v.expert, vec![op(Collective::AllReduce, w, 4)]);
        assert_eq!(v.total_bytes(), 2 * w);
    }

    #[test]
    fn dp_attention_has_no_attention_traffic() {
        let m = mixtral();
        let sc = InferenceScenario::new(8, 64, 16);
        for e in [ExpertStrategy::new(4, 1), ExpertStrategy::new(1, 4), ExpertStrategy::new(2, 2)] {
            let v = comm_volume(&AttentionStrategy::new(1, 4), &e, &m, &sc, Stage::Decode).unwrap();
            assert_eq!(v.attention_bytes(), 0);
        }
    }

    #[test]
    fn pure_ep_two_all_to_all() {
        let m = mixtral();
        let sc = InferenceScenario::new(8, 64, 16);
        let v = comm_volume(&AttentionStrategy::new(4, 1), &ExpertStrategy::new(1, 4), &m, &sc, Stage::Prefill).unwrap();
        let routed = u64::from(m.top_k) * w(&m, &sc, Stage::Prefill);
        assert_eq!(v.expert, vec![op(Collective::AllToAll, routed, 4), op(Collective::AllToAll, routed, 4)]);
    }

    #[test]
    fn dp_attention_into_tp_experts_uses_boundary() {
        let m = mixtral();
        let sc = InferenceScenario::new(8, 64, 16);
        let a = AttentionStrategy::new(1, 4);
        let e = ExpertStrategy::new(4, 1);
        let wp = w(&m, &sc, Stage::Prefill);
        let fused = comm_volume(&a, &e, &m, &sc, Stage::Prefill).unwrap();
        assert_eq!(fused.expert, vec![op(Collective::AllGather, wp, 4), op(Collective::ReduceScatter, wp, 4)]);
        let literal = comm_volume_with(&a, &e, &m, &sc, Stage::Prefill, CommOptions { fused_boundary: false }).unwrap();
        assert_eq!(literal.expert.len(), 3);
        assert_eq!(literal.expert[1], op(Collective::AllReduce, wp, 4));
    }

    #[test]
    fn hybrid_expert_layout() {
        let m = mixtral();
        let sc = InferenceScenario::new(8, 64, 16);
        let wd = w(&m, &sc, Stage::Decode);
        let v = comm_volume(&AttentionStrategy::new(4, 1), &ExpertStrategy::new(2, 2), &m, &sc, Stage::Decode).unwrap();
        assert_eq!(
            v.expert,
            vec![
                op(Collective::AllToAll, 2 * wd, 2),
                op(Collective::AllToAll, 2 * wd, 2),
                op(Collective::AllReduce, wd, 2)
            ]
        );
    }

    #[test]
    fn hybrid_attention_reduces_per_replica() {
        let m = mixtral();
        let sc = InferenceScenario::new(8, 64, 16);
        let v = comm_volume(&AttentionStrategy::new(2, 2), &ExpertStrategy::new(1, 4), &m, &sc, Stage::Prefill).unwrap();
        assert_eq!(v.attention, vec![op(Collective::AllReduce, w(&m, &sc, Stage::Prefill) / 2, 2)]);
    }

    #[test]
    fn mismatched_devices_and_dp_ep_rejected() {
        let m = mixtral();
        let sc = InferenceScenario::new(8, 64, 16);
        assert!(comm_volume(&AttentionStrategy::new(2, 1), &ExpertStrategy::new(4, 1), &m, &sc, Stage::Prefill).is_err());
        assert!(comm_volume(&AttentionStrategy::new(8, 1), &ExpertStrategy::with_dp(2, 2, 2), &m, &sc, Stage::Prefill).is_err());
    }

    #[test]
    fn wire_factors() {
        assert_eq!(op(Collective::AllReduce, 100, 4).wire_bytes(), 150.0);
        assert_eq!(op(Collective::AllGather, 100, 4).wire_bytes(), 75.0);
        assert_eq!(op(Collective::AllToAll, 160, 4).wire_bytes(), 30.0);
        assert_eq!(op(Collective::AllReduce, 100, 1).wire_bytes(), 0.0);
    }

    #[test]
    fn serde_tags() {
        let s = serde_json::to_string(&[Collective::AllReduce, Collective::AllToAll, Collective::AllGather]).unwrap();
        assert_eq!(s, r#"["allreduce","all_to_all","allgather"]"#);
    }
}
