//! Cost tensors, the latency objective and the end-to-end planning pipeline.
//!
//! For attention layout `k`, prefill expert layout `i` and decode expert
//! layout `j` the objective is
//!
//! ```text
//! L * (a_p[k] + e_p[i] + c_p[k][i]) + S_out * L * (a_d[k] + e_d[j] + c_d[k][j]) + C[k][i][j]
//! ```
//!
//! where `L` is the layer count and every tensor entry is a per-layer
//! latency. Infeasible entries are `+inf` and make any triple using them
//! infeasible.

pub mod ilp;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use ilp::{solve_ilp, BinaryProgram};

use crate::comm::{comm_volume_with, CommOptions, CommVolumeSpec, Stage};
use crate::cost::CostModels;
use crate::error::{Error, Result};
use crate::model::{
    attention_flops, expert_flops, memory_footprint_with, HardwareProfile, InferenceScenario, MemoryBreakdown,
    ModelSpec, DEFAULT_ACT_FACTOR,
};
use crate::simulator::{simulate, LatencyBreakdown};
use crate::strategy::{memory_feasible, AttentionStrategy, ExpertStrategy, StrategyCatalog};
use crate::transition::{overlap_budget, transition_timings, DequantTimeTable, OverlapMode, TransitionSetup, TransitionTimings};

/// Relative tolerance under which two objective values count as tied.
pub const TIE_RTOL: f64 = 1e-9;
pub const DEFAULT_GAMMA: f64 = 1.3;

/// Per-layer latencies (seconds). `t_c_*` are `K_a x K_e`; `c_switch` is
/// `K_a x K_e x K_e` because the overlap budget depends on the attention
/// layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTensors {
    pub t_a_prefill: Vec<f64>,
    pub t_a_decode: Vec<f64>,
    pub t_e_prefill: Vec<f64>,
    pub t_e_decode: Vec<f64>,
    pub t_c_prefill: Vec<Vec<f64>>,
    pub t_c_decode: Vec<Vec<f64>>,
    pub c_switch: Vec<Vec<Vec<f64>>>,
}

impl CostTensors {
    pub fn k_a(&self) -> usize {
        self.t_a_prefill.len()
    }

    pub fn k_e(&self) -> usize {
        self.t_e_prefill.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (ka, ke) = (self.k_a(), self.k_e());
        let bad = |m: &str| Err(Error::InvalidInput(format!("cost tensors: {m}")));
        if ka == 0 || ke == 0 {
            return bad("empty strategy axis");
        }
        if self.t_a_decode.len() != ka || self.t_e_decode.len() != ke {
            return bad("stage vectors differ in length");
        }
        let rect = |m: &Vec<Vec<f64>>| m.len() == ka && m.iter().all(|r| r.len() == ke);
        if !rect(&self.t_c_prefill) || !rect(&self.t_c_decode) {
            return bad("communication matrices are not K_a x K_e");
        }
        if self.c_switch.len() != ka || !self.c_switch.iter().all(rect_sq(ke)) {
            return bad("switching tensor is not K_a x K_e x K_e");
        }
        let all = self
            .t_a_prefill
            .iter()
            .chain(&self.t_a_decode)
            .chain(&self.t_e_prefill)
            .chain(&self.t_e_decode)
            .chain(self.t_c_prefill.iter().flatten())
            .chain(self.t_c_decode.iter().flatten())
            .chain(self.c_switch.iter().flatten().flatten());
        for &v in all {
            if v.is_nan() || v < 0.0 {
                return bad(&format!("entry {v} is not >= 0"));
            }
        }
        for m in &self.c_switch {
            if (0..ke).any(|i| m[i][i] != 0.0) {
                return bad("switching cost diagonal is not zero");
            }
        }
        Ok(())
    }

    pub fn per_layer_prefill(&self, k: usize, i: usize) -> f64 {
        self.t_a_prefill[k] + self.t_e_prefill[i] + self.t_c_prefill[k][i]
    }
}

fn rect_sq(ke: usize) -> impl Fn(&Vec<Vec<f64>>) -> bool {
    move |m| m.len() == ke && m.iter().all(|r| r.len() == ke)
}

/// Stage weights of the objective: layer count and generated tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Horizon {
    pub n_layers: f64,
    pub output_len: f64,
}

impl Horizon {
    pub fn new(model: &ModelSpec, scenario: &InferenceScenario) -> Self {
        Self {
            n_layers: f64::from(model.n_layers),
            output_len: f64::from(scenario.output_len),
        }
    }
}

/// Objective of triple `(k, i, j)`; `+inf` when any entry it uses is.
pub fn objective(t: &CostTensors, h: &Horizon, k: usize, i: usize, j: usize) -> f64 {
    let pre = [t.t_a_prefill[k], t.t_e_prefill[i], t.t_c_prefill[k][i]];
    let dec = [t.t_a_decode[k], t.t_e_decode[j], t.t_c_decode[k][j]];
    let c = t.c_switch[k][i][j];
    if pre.iter().chain(&dec).chain([&c]).any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    let prefill = h.n_layers * (pre[0] + pre[1] + pre[2]);
    let decode = h.output_len * h.n_layers * (dec[0] + dec[1] + dec[2]);
    prefill + decode + c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub method: String,
    pub variables: usize,
    pub constraints: usize,
    pub nodes: u64,
    pub leaves: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub k: usize,
    pub i: usize,
    pub j: usize,
    pub objective: f64,
    pub stats: SolverStats,
}

/// Evaluates every triple; among values within [`TIE_RTOL`] of the
/// minimum the lexicographically smallest `(k, i, j)` wins.
pub fn solve_bruteforce(t: &CostTensors, h: &Horizon) -> Result<Solution> {
    let start = Instant::now();
    t.validate()?;
    let (ka, ke) = (t.k_a(), t.k_e());
    let triples = || (0..ka).flat_map(move |k| (0..ke).flat_map(move |i| (0..ke).map(move |j| (k, i, j))));
    let best = triples().map(|(k, i, j)| objective(t, h, k, i, j)).fold(f64::INFINITY, f64::min);
    if !best.is_finite() {
        return Err(Error::Infeasible("every strategy combination is infeasible".into()));
    }
    let cutoff = best + TIE_RTOL * best.abs();
    let (k, i, j) = triples()
        .find(|&(k, i, j)| objective(t, h, k, i, j) <= cutoff)
        .expect("minimum is attained");
    Ok(Solution {
        k,
        i,
        j,
        objective: objective(t, h, k, i, j),
        stats: SolverStats {
            method: "bruteforce".into(),
            variables: 0,
            constraints: 0,
            nodes: (ka * ke * ke) as u64,
            leaves: (ka * ke * ke) as u64,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Ilp,
    Bruteforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub allow_expert_dp: bool,
    /// Compute multiplier for EP-containing expert layouts (load imbalance).
    pub gamma: f64,
    pub overlap: OverlapMode,
    pub comm: CommOptions,
    pub act_factor: u64,
    pub group_size: u32,
    pub solver: SolverKind,
    /// Also run the other solver and fail on disagreement.
    pub cross_check: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            allow_expert_dp: false,
            gamma: DEFAULT_GAMMA,
            overlap: OverlapMode::WholePrefill,
            comm: CommOptions::default(),
            act_factor: DEFAULT_ACT_FACTOR,
            group_size: crate::transition::DEFAULT_GROUP_SIZE,
            solver: SolverKind::Ilp,
            cross_check: false,
        }
    }
}

/// Everything the solver and simulator need for one planning instance.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub model: &'a ModelSpec,
    pub hw: &'a HardwareProfile,
    pub models: &'a CostModels,
    pub table: &'a DequantTimeTable,
    pub scenario: InferenceScenario,
    pub options: PlanOptions,
    pub catalog: StrategyCatalog,
    pub memory: MemoryBreakdown,
    pub tensors: CostTensors,
    pub horizon: Horizon,
}

fn to_f64(v: u128) -> f64 {
    v as f64
}

fn attention_costs(
    s: &AttentionStrategy,
    model: &ModelSpec,
    hw: &HardwareProfile,
    sc: &InferenceScenario,
    models: &CostModels,
) -> Result<(f64, f64)> {
    if sc.batch % s.dp_degree != 0 {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let b = u64::from(sc.batch / s.dp_degree);
    let s_in = u64::from(sc.input_len);
    let h = f64::from(model.hidden_dim / s.tp_degree);
    let tp = f64::from(s.tp_degree);
    let pre = to_f64(attention_flops(model, b * s_in, s_in)?) / tp;
    let dec = to_f64(attention_flops(model, b, sc.decode_kv_len())?) / tp;
    Ok((
        models.compute(pre, hw, [b as f64, s_in as f64, h])?.seconds,
        models.compute(dec, hw, [b as f64, 1.0, h])?.seconds,
    ))
}

fn expert_costs(
    s: &ExpertStrategy,
    model: &ModelSpec,
    hw: &HardwareProfile,
    sc: &InferenceScenario,
    models: &CostModels,
    gamma: f64,
) -> Result<(f64, f64)> {
    if sc.batch % s.dp_degree != 0 {
        return Ok((f64::INFINITY, f64::INFINITY));
    }
    let n = f64::from(s.devices());
    let imbalance = if s.uses_ep() { gamma } else { 1.0 };
    let b = f64::from(sc.batch / s.dp_degree);
    let h = f64::from(model.hidden_dim / s.tp_degree);
    let cost = |stage: Stage, seq: f64| -> Result<f64> {
        let flops = to_f64(expert_flops(model, stage.tokens(sc))?) / n * imbalance;
        Ok(models.compute(flops, hw, [b, seq, h])?.seconds)
    };
    Ok((cost(Stage::Prefill, f64::from(sc.input_len))?, cost(Stage::Decode, 1.0)?))
}

/// Fills the cost tensors for every layout in `catalog`.
#[allow(clippy::too_many_arguments)]
pub fn build_cost_tensors(
    catalog: &StrategyCatalog,
    model: &ModelSpec,
    hw: &HardwareProfile,
    scenario: &InferenceScenario,
    models: &CostModels,
    table: &DequantTimeTable,
    memory: &MemoryBreakdown,
    options: &PlanOptions,
) -> Result<CostTensors> {
    if !(options.gamma.is_finite() && options.gamma >= 1.0) {
        return Err(Error::InvalidInput(format!("gamma must be >= 1, got {}", options.gamma)));
    }
    let (ka, ke) = (catalog.attention.len(), catalog.expert.len());
    let mut t = CostTensors {
        t_a_prefill: vec![0.0; ka],
        t_a_decode: vec![0.0; ka],
        t_e_prefill: vec![0.0; ke],
        t_e_decode: vec![0.0; ke],
        t_c_prefill: vec![vec![0.0; ke]; ka],
        t_c_decode: vec![vec![0.0; ke]; ka],
        c_switch: vec![vec![vec![0.0; ke]; ke]; ka],
    };
    for (k, a) in catalog.attention.iter().enumerate() {
        (t.t_a_prefill[k], t.t_a_decode[k]) = attention_costs(a, model, hw, scenario, models)?;
    }
    for (i, e) in catalog.expert.iter().enumerate() {
        (t.t_e_prefill[i], t.t_e_decode[i]) = expert_costs(e, model, hw, scenario, models, options.gamma)?;
    }
    for (k, a) in catalog.attention.iter().enumerate() {
        for (i, e) in catalog.expert.iter().enumerate() {
            if !memory_feasible(a, e, memory, hw) {
                t.t_c_prefill[k][i] = f64::INFINITY;
                t.t_c_decode[k][i] = f64::INFINITY;
                continue;
            }
            for (stage, slot) in [(Stage::Prefill, &mut t.t_c_prefill[k][i]), (Stage::Decode, &mut t.t_c_decode[k][i])] {
                *slot = comm_volume_with(a, e, model, scenario, stage, options.comm)?.latency(hw, models)?;
            }
        }
    }
    let setup = TransitionSetup {
        model,
        hw,
        models,
        table,
        overlap: options.overlap,
        group_size: options.group_size,
    };
    for i in 0..ke {
        for j in 0..ke {
            if i == j {
                continue;
            }
            // only the overlap budget depends on k
            let base = transition_timings(&catalog.expert[i], &catalog.expert[j], 0.0, &setup)?;
            for k in 0..ka {
                let per_layer = t.per_layer_prefill(k, i);
                t.c_switch[k][i][j] = if per_layer.is_finite() {
                    let mut timings = base;
                    timings.overlap_budget = overlap_budget(options.overlap, model.n_layers, per_layer);
                    timings.cost()
                } else {
                    f64::INFINITY
                };
            }
        }
    }
    Ok(t)
}

fn gib(bytes: u128) -> f64 {
    bytes as f64 / f64::from(1u32 << 30)
}

/// Explains why no triple is feasible.
fn infeasibility_report(p: &Problem<'_>) -> String {
    let mut lines = Vec::new();
    let n = u128::from(p.hw.n_devices);
    for (k, a) in p.catalog.attention.iter().enumerate() {
        if !p.tensors.t_a_prefill[k].is_finite() {
            lines.push(format!(
                "attention {a}: batch {} is not divisible by A_d = {}",
                p.scenario.batch, a.dp_degree
            ));
        }
    }
    for (i, e) in p.catalog.expert.iter().enumerate() {
        if !p.tensors.t_e_prefill[i].is_finite() {
            lines.push(format!(
                "expert {e}: batch {} is not divisible by E_d = {}",
                p.scenario.batch, e.dp_degree
            ));
        }
    }
    let m = &p.memory;
    for a in &p.catalog.attention {
        for e in &p.catalog.expert {
            if !memory_feasible(a, e, m, p.hw) {
                let need = (u128::from(m.kv_bytes)
                    + u128::from(a.dp_degree) * u128::from(m.attn_weight_bytes)
                    + u128::from(e.dp_degree) * u128::from(m.expert_weight_bytes))
                    / n
                    + 2 * u128::from(m.activation_bytes);
                lines.push(format!(
                    "attention {a} + expert {e}: needs {:.2} GiB per device, capacity {:.2} GiB",
                    gib(need),
                    gib(u128::from(p.hw.device_mem_bytes))
                ));
            }
        }
    }
    if lines.is_empty() {
        lines.push("every strategy combination is infeasible".into());
    }
    lines.join("\n")
}

impl<'a> Problem<'a> {
    pub fn build(
        model: &'a ModelSpec,
        hw: &'a HardwareProfile,
        scenario: &InferenceScenario,
        models: &'a CostModels,
        table: &'a DequantTimeTable,
        options: &PlanOptions,
    ) -> Result<Self> {
        model.validate()?;
        hw.validate()?;
        scenario.validate()?;
        let catalog = StrategyCatalog::build(model, hw, options.allow_expert_dp)?;
        let memory = memory_footprint_with(model, scenario, options.act_factor)?;
        let tensors = build_cost_tensors(&catalog, model, hw, scenario, models, table, &memory, options)?;
        Ok(Self {
            model,
            hw,
            models,
            table,
            scenario: *scenario,
            options: *options,
            catalog,
            memory,
            tensors,
            horizon: Horizon::new(model, scenario),
        })
    }

    pub fn solve(&self) -> Result<Solution> {
        let run = |kind| match kind {
            SolverKind::Ilp => solve_ilp(&self.tensors, &self.horizon),
            SolverKind::Bruteforce => solve_bruteforce(&self.tensors, &self.horizon),
        };
        let sol = run(self.options.solver).map_err(|e| match e {
            Error::Infeasible(_) => Error::Infeasible(infeasibility_report(self)),
            other => other,
        })?;
        if self.options.cross_check {
            let other = run(match self.options.solver {
                SolverKind::Ilp => SolverKind::Bruteforce,
                SolverKind::Bruteforce => SolverKind::Ilp,
            })?;
            let close = (other.objective - sol.objective).abs() <= TIE_RTOL * sol.objective.abs();
            if (other.k, other.i, other.j) != (sol.k, sol.i, sol.j) || !close {
                return Err(Error::Invariant(format!(
                    "solvers disagree: ({}, {}, {}) = {} vs ({}, {}, {}) = {}",
                    sol.k, sol.i, sol.j, sol.objective, other.k, other.i, other.j, other.objective
                )));
            }
        }
        Ok(sol)
    }

    /// Full description of triple `(k, i, j)`.
    pub fn describe(&self, k: usize, i: usize, j: usize, stats: Option<SolverStats>) -> Result<Plan> {
        let (a, ep, ed) = (self.catalog.attention[k], self.catalog.expert[i], self.catalog.expert[j]);
        let breakdown = simulate(k, i, j, &self.tensors, &self.horizon)?;
        let setup = TransitionSetup {
            model: self.model,
            hw: self.hw,
            models: self.models,
            table: self.table,
            overlap: self.options.overlap,
            group_size: self.options.group_size,
        };
        let transition = transition_timings(&ep, &ed, self.tensors.per_layer_prefill(k, i), &setup)?;
        Ok(Plan {
            attention: a,
            expert_prefill: ep,
            expert_decode: ed,
            attention_idx: k,
            expert_prefill_idx: i,
            expert_decode_idx: j,
            objective_value_s: objective(&self.tensors, &self.horizon, k, i, j),
            predicted_total_s: breakdown.total_s,
            breakdown,
            comm_prefill: comm_volume_with(&a, &ep, self.model, &self.scenario, Stage::Prefill, self.options.comm)?,
            comm_decode: comm_volume_with(&a, &ed, self.model, &self.scenario, Stage::Decode, self.options.comm)?,
            transition,
            memory_feasible: memory_feasible(&a, &ep, &self.memory, self.hw) && memory_feasible(&a, &ed, &self.memory, self.hw),
            solver: stats,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub attention: AttentionStrategy,
    pub expert_prefill: ExpertStrategy,
    pub expert_decode: ExpertStrategy,
    pub attention_idx: usize,
    pub expert_prefill_idx: usize,
    pub expert_decode_idx: usize,
    pub objective_value_s: f64,
    pub predicted_total_s: f64,
    pub breakdown: LatencyBreakdown,
    pub comm_prefill: CommVolumeSpec,
    pub comm_decode: CommVolumeSpec,
    pub transition: TransitionTimings,
    pub memory_feasible: bool,
    pub solver: Option<SolverStats>,
}

/// Enumerate, cost, solve and describe in one call.
pub fn plan(
    model: &ModelSpec,
    hw: &HardwareProfile,
    scenario: &InferenceScenario,
    models: &CostModels,
    table: &DequantTimeTable,
    options: &PlanOptions,
) -> Result<Plan> {
    let problem = Problem::build(model, hw, scenario, models, table, options)?;
    let sol = problem.solve()?;
    problem.describe(sol.k, sol.i, sol.j, Some(sol.stats))
}

/// Resolves a baseline name to catalog indices: `tp` (TP everywhere), `ep`
/// (TP attention, EP experts), `dp-ep` (DP attention, EP experts), or an
/// explicit `attention/prefill-expert/decode-expert` triple such as
/// `dp4/ep4/tp4`.
pub fn baseline_indices(catalog: &StrategyCatalog, name: &str) -> Result<(usize, usize, usize)> {
    let n = catalog.n_devices;
    let (a, ep, ed) = match name {
        "tp" => (AttentionStrategy::new(n, 1), ExpertStrategy::new(n, 1), ExpertStrategy::new(n, 1)),
        "ep" => (AttentionStrategy::new(n, 1), ExpertStrategy::new(1, n), ExpertStrategy::new(1, n)),
        "dp-ep" => (AttentionStrategy::new(1, n), ExpertStrategy::new(1, n), ExpertStrategy::new(1, n)),
        other => {
            let parts: Vec<&str> = other.split('/').collect();
            if parts.len() != 3 {
                return Err(Error::InvalidInput(format!(
                    "baseline `{other}`: expected tp, ep, dp-ep or attention/prefill/decode"
                )));
            }
            (parts[0].parse()?, parts[1].parse()?, parts[2].parse()?)
        }
    };
    let missing = |what: String| Error::InvalidInput(format!("baseline `{name}`: {what} is not in the strategy catalog"));
    Ok((
        catalog.attention_index(&a).ok_or_else(|| missing(format!("attention {a}")))?,
        catalog.expert_index(&ep).ok_or_else(|| missing(format!("expert {ep}")))?,
        catalog.expert_index(&ed).ok_or_else(|| missing(format!("expert {ed}")))?,
    ))
}
