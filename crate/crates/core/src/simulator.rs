//! End-to-end latency of a chosen layout triple.
//!
//! `total = prefill + decode + transition`, where
//! `prefill = L * (attn + experts + comm)` over the prefill per-layer
//! components and `decode = S_out * L * (attn + experts + comm)` over one
//! representative decode step.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{CostTensors, Horizon};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageComponents {
    pub attn_s: f64,
    pub experts_s: f64,
    pub comm_s: f64,
}

impl StageComponents {
    pub fn sum(&self) -> f64 {
        self.attn_s + self.experts_s + self.comm_s
    }

    /// Fraction of the stage spent in communication.
    pub fn comm_fraction(&self) -> f64 {
        let s = self.sum();
        if s > 0.0 {
            self.comm_s / s
        } else {
            0.0
        }
    }
}

/// Percentages of the end-to-end total.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Shares {
    pub prefill_attn_pct: f64,
    pub prefill_experts_pct: f64,
    pub prefill_comm_pct: f64,
    pub decode_attn_pct: f64,
    pub decode_experts_pct: f64,
    pub decode_comm_pct: f64,
    pub transition_pct: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub total_s: f64,
    pub prefill_s: f64,
    pub decode_s: f64,
    pub transition_s: f64,
    /// Per-layer prefill components.
    pub prefill: StageComponents,
    /// Per-layer components of one decode step.
    pub decode: StageComponents,
    pub shares: Shares,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9 * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

impl LatencyBreakdown {
    /// Additivity and stage-structure checks.
    pub fn check(&self, h: &Horizon) -> Result<()> {
        let fail = |m: &str| Err(Error::Invariant(format!("latency breakdown: {m}")));
        if !close(self.total_s, self.prefill_s + self.decode_s + self.transition_s) {
            return fail("total != prefill + decode + transition");
        }
        if !close(self.prefill_s, h.n_layers * self.prefill.sum()) {
            return fail("prefill != layers * per-layer prefill");
        }
        if !close(self.decode_s, h.output_len * h.n_layers * self.decode.sum()) {
            return fail("decode != output_len * layers * per-step decode");
        }
        let s = &self.shares;
        let pct = s.prefill_attn_pct
            + s.prefill_experts_pct
            + s.prefill_comm_pct
            + s.decode_attn_pct
            + s.decode_experts_pct
            + s.decode_comm_pct
            + s.transition_pct;
        if self.total_s > 0.0 && (pct - 100.0).abs() > 1e-6 {
            return fail("shares do not sum to 100%");
        }
        Ok(())
    }

    /// One row per component: `stage,component,seconds,share_pct`.
    pub fn write_csv(&self, writer: impl Write, h: &Horizon) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let map = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(["stage", "component", "seconds", "share_pct"]).map_err(map)?;
        let s = &self.shares;
        let decode_w = h.output_len * h.n_layers;
        let rows = [
            ("prefill", "attn", h.n_layers * self.prefill.attn_s, s.prefill_attn_pct),
            ("prefill", "experts", h.n_layers * self.prefill.experts_s, s.prefill_experts_pct),
            ("prefill", "comm", h.n_layers * self.prefill.comm_s, s.prefill_comm_pct),
            ("decode", "attn", decode_w * self.decode.attn_s, s.decode_attn_pct),
            ("decode", "experts", decode_w * self.decode.experts_s, s.decode_experts_pct),
            ("decode", "comm", decode_w * self.decode.comm_s, s.decode_comm_pct),
            ("switch", "transition", self.transition_s, s.transition_pct),
            ("all", "total", self.total_s, 100.0),
        ];
        for (stage, comp, secs, pct) in rows {
            w.write_record([stage, comp, &secs.to_string(), &pct.to_string()]).map_err(map)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn simulate(k: usize, i: usize, j: usize, t: &CostTensors, h: &Horizon) -> Result<LatencyBreakdown> {
    t.validate()?;
    if k >= t.k_a() || i >= t.k_e() || j >= t.k_e() {
        return Err(Error::InvalidInput(format!("indices ({k}, {i}, {j}) out of range")));
    }
    let prefill = StageComponents {
        attn_s: t.t_a_prefill[k],
        experts_s: t.t_e_prefill[i],
        comm_s: t.t_c_prefill[k][i],
    };
    let decode = StageComponents {
        attn_s: t.t_a_decode[k],
        experts_s: t.t_e_decode[j],
        comm_s: t.t_c_decode[k][j],
    };
    let transition_s = t.c_switch[k][i][j];
    if !(prefill.sum().is_finite() && decode.sum().is_finite() && transition_s.is_finite()) {
        return Err(Error::Infeasible(format!("layout triple ({k}, {i}, {j}) is infeasible")));
    }
    let prefill_s = h.n_layers * prefill.sum();
    let decode_s = h.output_len * h.n_layers * decode.sum();
    let total_s = prefill_s + decode_s + transition_s;
    let pct = |v: f64| if total_s > 0.0 { 100.0 * v / total_s } else { 0.0 };
    let dw = h.output_len * h.n_layers;
    let shares = Shares {
        prefill_attn_pct: pct(h.n_layers * prefill.attn_s),
        prefill_experts_pct: pct(h.n_layers * prefill.experts_s),
        prefill_comm_pct: pct(h.n_layers * prefill.comm_s),
        decode_attn_pct: pct(dw * decode.attn_s),
        decode_experts_pct: pct(dw * decode.experts_s),
        decode_comm_pct: pct(dw * decode.comm_s),
        transition_pct: pct(transition_s),
    };
    Ok(LatencyBreakdown {
        total_s,
        prefill_s,
        decode_s,
        transition_s,
        prefill,
        decode,
        shares,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanIndices {
    pub k: usize,
    pub i: usize,
    pub j: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub name: String,
    pub indices: PlanIndices,
    pub breakdown: LatencyBreakdown,
    /// `baseline_total / this_total`, against the first entry.
    pub speedup_vs_first: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub entries: Vec<ComparisonEntry>,
    /// `time_ratio[a][b] = total_a / total_b`; `b` is `1 / ratio` times faster.
    pub time_ratio: Vec<Vec<f64>>,
}

pub fn compare(plans: &[(String, PlanIndices)], t: &CostTensors, h: &Horizon) -> Result<Comparison> {
    if plans.len() < 2 {
        return Err(Error::InvalidInput("compare needs at least two plans".into()));
    }
    let mut entries = Vec::with_capacity(plans.len());
    for (name, idx) in plans {
        entries.push(ComparisonEntry {
            name: name.clone(),
            indices: *idx,
            breakdown: simulate(idx.k, idx.i, idx.j, t, h)?,
            speedup_vs_first: 0.0,
        });
    }
    let ratio = |a: f64, b: f64| if a == b { 1.0 } else { a / b };
    let first = entries[0].breakdown.total_s;
    for e in &mut entries {
        e.speedup_vs_first = ratio(first, e.breakdown.total_s);
    }
    let time_ratio = entries
        .iter()
        .map(|a| entries.iter().map(|b| ratio(a.breakdown.total_s, b.breakdown.total_s)).collect())
        .collect();
    Ok(Comparison { entries, time_ratio })
}
