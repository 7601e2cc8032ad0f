//! Switching the Expert layout between prefill and decode.
//!
//! Two ways to get each device's decode shard in place: reshard the
//! resident prefill weights over the interconnect, or upload the missing
//! part from an INT4 host backup and dequantize it while prefill runs. The
//! charged cost is
//! `min(T_reshard, max(0, T_upload + T_dequant - overlap))`.
//!
//! The overlap budget defaults to the whole prefill (`n_layers` times the
//! per-layer prefill latency), since the upload is asynchronous across all
//! layers. [`OverlapMode::PerLayer`] uses the per-layer latency alone.

pub mod quant;
pub mod table;

use serde::{Deserialize, Serialize};

pub use quant::{cosine_similarity, dequantize, int4_bytes, quantize_int4, GroupQuantizedTensor, DEFAULT_GROUP_SIZE};
pub use table::DequantTimeTable;

use crate::cost::CostModels;
use crate::error::{Error, Result};
use crate::model::{HardwareProfile, ModelSpec};
use crate::strategy::ExpertStrategy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OverlapMode {
    #[default]
    WholePrefill,
    PerLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransitionTimings {
    pub t_upload: f64,
    pub t_dequant: f64,
    pub t_reshard: f64,
    pub overlap_budget: f64,
}

impl TransitionTimings {
    pub fn cost(&self) -> f64 {
        switch_cost(self.t_reshard, self.t_upload, self.t_dequant, self.overlap_budget)
    }
}

/// `min(reshard, max(0, upload + dequant - overlap))`.
pub fn switch_cost(t_reshard: f64, t_upload: f64, t_dequant: f64, overlap: f64) -> f64 {
    t_reshard.min((t_upload + t_dequant - overlap).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Shard {
    experts: (u64, u64),
    cols: (u64, u64),
}

fn span_overlap(a: (u64, u64), b: (u64, u64)) -> u64 {
    a.1.min(b.1).saturating_sub(a.0.max(b.0))
}

/// Device `d` is `(replica, ep_rank, tp_rank)` in row-major order; an EP
/// rank owns a contiguous block of experts and a TP rank a contiguous slice
/// of the intermediate dimension.
fn shard(s: &ExpertStrategy, model: &ModelSpec, d: u32) -> Shard {
    let (t, e) = (s.tp_degree, s.ep_degree);
    let ep_rank = u64::from((d / t) % e);
    let tp_rank = u64::from(d % t);
    let per_ep = u64::from(model.n_experts / e);
    let per_tp = u64::from(model.expert_inter_dim / t);
    Shard {
        experts: (ep_rank * per_ep, (ep_rank + 1) * per_ep),
        cols: (tp_rank * per_tp, (tp_rank + 1) * per_tp),
    }
}

/// Expert-column cells (one intermediate column of one expert, all layers)
/// that device `d` needs under `to` but does not hold under `from`. Shared
/// experts follow the TP slice only.
fn missing_cells(from: &ExpertStrategy, to: &ExpertStrategy, model: &ModelSpec, d: u32) -> u64 {
    let (a, b) = (shard(from, model, d), shard(to, model, d));
    let width = b.cols.1 - b.cols.0;
    let target = (b.experts.1 - b.experts.0 + u64::from(model.n_shared_experts)) * width;
    let cols = span_overlap(a.cols, b.cols);
    let held = span_overlap(a.experts, b.experts) * cols + u64::from(model.n_shared_experts) * cols;
    target - held
}

fn check_pair(i: &ExpertStrategy, j: &ExpertStrategy, model: &ModelSpec) -> Result<u32> {
    let n = i.devices();
    if n == 0 || j.devices() != n {
        return Err(Error::InvalidInput(format!("layouts {i} and {j} span different device counts")));
    }
    for s in [i, j] {
        let v = s.violations(model, n);
        if !v.is_empty() {
            return Err(Error::InvalidInput(format!("layout {s}: {}", v.join("; "))));
        }
    }
    Ok(n)
}

/// Largest per-device count of expert parameters that must be fetched to
/// move from layout `i` to layout `j`.
pub fn reshard_params(i: &ExpertStrategy, j: &ExpertStrategy, model: &ModelSpec) -> Result<u64> {
    let n = check_pair(i, j, model)?;
    let cells = (0..n).map(|d| missing_cells(i, j, model, d)).max().unwrap_or(0);
    let per_cell = 3 * u128::from(model.hidden_dim) * u128::from(model.n_layers);
    u64::try_from(u128::from(cells) * per_cell).map_err(|_| Error::Overflow("reshard volume"))
}

/// [`reshard_params`] in bytes at the model's native width.
pub fn reshard_volume(i: &ExpertStrategy, j: &ExpertStrategy, model: &ModelSpec) -> Result<u64> {
    reshard_params(i, j, model)?
        .checked_mul(u64::from(model.dtype_bytes))
        .ok_or(Error::Overflow("reshard volume"))
}

pub fn overlap_budget(mode: OverlapMode, n_layers: u32, per_layer_prefill_s: f64) -> f64 {
    match mode {
        OverlapMode::WholePrefill => f64::from(n_layers) * per_layer_prefill_s,
        OverlapMode::PerLayer => per_layer_prefill_s,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct TransitionSetup<'a> {
    pub model: &'a ModelSpec,
    pub hw: &'a HardwareProfile,
    pub models: &'a CostModels,
    pub table: &'a DequantTimeTable,
    pub overlap: OverlapMode,
    pub group_size: u32,
}

pub fn transition_timings(
    i: &ExpertStrategy,
    j: &ExpertStrategy,
    per_layer_prefill_s: f64,
    setup: &TransitionSetup<'_>,
) -> Result<TransitionTimings> {
    if per_layer_prefill_s.is_nan() || per_layer_prefill_s < 0.0 {
        return Err(Error::InvalidInput(format!(
            "per-layer prefill latency must be >= 0, got {per_layer_prefill_s}"
        )));
    }
    let overlap_budget = overlap_budget(setup.overlap, setup.model.n_layers, per_layer_prefill_s);
    if i == j {
        return Ok(TransitionTimings {
            overlap_budget,
            ..Default::default()
        });
    }
    let params = reshard_params(i, j, setup.model)?;
    let bytes = params
        .checked_mul(u64::from(setup.model.dtype_bytes))
        .ok_or(Error::Overflow("reshard volume"))?;
    Ok(TransitionTimings {
        t_upload: int4_bytes(params, setup.group_size) as f64 / setup.hw.host_to_device_bw,
        t_dequant: setup.table.lookup(setup.hw.n_devices, params)?,
        t_reshard: setup.models.comm(bytes as f64, setup.hw)?.seconds,
        overlap_budget,
    })
}

/// Switching cost `C_ij`; zero when the layouts match.
pub fn transition_cost(
    i: &ExpertStrategy,
    j: &ExpertStrategy,
    per_layer_prefill_s: f64,
    setup: &TransitionSetup<'_>,
) -> Result<f64> {
    if i == j {
        return Ok(0.0);
    }
    Ok(transition_timings(i, j, per_layer_prefill_s, setup)?.cost())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{hardware_preset, model_preset};

    #[test]
    fn ep4_to_tp4_fetches_three_quarters() {
        let m = model_preset("mixtral-8x7b").unwrap();
        let ep = ExpertStrategy::new(1, 4);
        let tp = ExpertStrategy::new(4, 1);
        let m_exp = u64::from(m.n_layers) * 8 * 3 * 4096 * 14336 * 2;
        assert_eq!(reshard_volume(&ep, &tp, &m).unwrap(), m_exp / 4 * 3 / 4);
        assert_eq!(reshard_volume(&tp, &ep, &m).unwrap(), m_exp / 4 * 3 / 4);
        assert_eq!(reshard_volume(&tp, &tp, &m).unwrap(), 0);
    }

    #[test]
    fn shared_experts_only_move_with_tp_slice() {
        let mut m = model_preset("qwen1.5-moe-a2.7b").unwrap();
        let ep = ExpertStrategy::new(1, 4);
        let hy = ExpertStrategy::new(2, 2);
        let cells = |m: &ModelSpec, a: &ExpertStrategy, b: &ExpertStrategy| {
            (0..4).map(|d| missing_cells(a, b, m, d)).max().unwrap()
        };
        let with_shared = (cells(&m, &ep, &hy), cells(&m, &hy, &ep));
        m.n_shared_experts = 0;
        let routed_only = (cells(&m, &ep, &hy), cells(&m, &hy, &ep));
        // ep holds every column of the shared experts; tp2ep2 holds half
        assert_eq!(with_shared.0, routed_only.0);
        assert_eq!(with_shared.1 - routed_only.1, 4 * 704);
    }

    #[test]
    fn rule_cases() {
        assert_eq!(switch_cost(1.0, 6.0, 4.0, 0.0), 1.0);
        assert_eq!(switch_cost(50.0, 6.0, 4.0, 10.0), 0.0);
        assert_eq!(switch_cost(50.0, 6.0, 4.0, 100.0), 0.0);
        assert_eq!(switch_cost(50.0, 6.0, 4.0, 7.0), 3.0);
    }

    #[test]
    fn timings_and_modes() {
        let m = model_preset("mixtral-8x7b").unwrap();
        let hw = hardware_preset("a6000-pcie").unwrap();
        let models = CostModels::roofline();
        let table = DequantTimeTable::synthetic_default();
        let mut setup = TransitionSetup {
            model: &m,
            hw: &hw,
            models: &models,
            table: &table,
            overlap: OverlapMode::WholePrefill,
            group_size: 128,
        };
        let (ep, tp) = (ExpertStrategy::new(1, 4), ExpertStrategy::new(4, 1));
        let t = transition_timings(&ep, &tp, 0.01, &setup).unwrap();
        assert_eq!(t.overlap_budget, 0.32);
        let params = reshard_params(&ep, &tp, &m).unwrap();
        assert_eq!(t.t_reshard, (params * 2) as f64 / hw.intra_node_bw);
        assert_eq!(t.t_upload, int4_bytes(params, 128) as f64 / hw.host_to_device_bw);
        assert!(t.cost() <= t.t_reshard);
        setup.overlap = OverlapMode::PerLayer;
        let t2 = transition_timings(&ep, &tp, 0.01, &setup).unwrap();
        assert_eq!(t2.overlap_budget, 0.01);
        assert!(t2.cost() >= t.cost());
        assert_eq!(transition_cost(&ep, &ep, 0.01, &setup).unwrap(), 0.0);
        assert!(transition_cost(&ep, &tp, -1.0, &setup).is_err());
    }

    #[test]
    fn table_miss_propagates() {
        let m = model_preset("mixtral-8x7b").unwrap();
        let hw = hardware_preset("a6000-pcie").unwrap();
        let models = CostModels::roofline();
        let table = DequantTimeTable::linear([8], 1e9, 0.0, 10).unwrap();
        let setup = TransitionSetup {
            model: &m,
            hw: &hw,
            models: &models,
            table: &table,
            overlap: OverlapMode::WholePrefill,
            group_size: 128,
        };
        let err = transition_cost(&ExpertStrategy::new(1, 4), &ExpertStrategy::new(4, 1), 0.0, &setup).unwrap_err();
        assert!(err.to_string().contains('4'), "{err}");
    }
}
