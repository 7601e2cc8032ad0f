//! Candidate parallel layouts for the Attention and Expert modules.
//!
//! Attention shards heads across `tp` devices and replicates across `dp`.
//! Experts are split across `ep` groups, sharded along the intermediate
//! dimension across `tp`, and (optionally) replicated across `dp`. TP
//! degrees are powers of two and every degree must divide the dimension it
//! partitions.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{HardwareProfile, MemoryBreakdown, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AttentionStrategy {
    pub tp_degree: u32,
    pub dp_degree: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExpertStrategy {
    pub tp_degree: u32,
    pub ep_degree: u32,
    pub dp_degree: u32,
}

impl AttentionStrategy {
    pub fn new(tp_degree: u32, dp_degree: u32) -> Self {
        Self { tp_degree, dp_degree }
    }

    pub fn devices(&self) -> u32 {
        self.tp_degree * self.dp_degree
    }

    /// Constraints this layout breaks for `model` on `n_devices`.
    pub fn violations(&self, model: &ModelSpec, n_devices: u32) -> Vec<String> {
        let t = self.tp_degree;
        let mut out = Vec::new();
        if t == 0 || self.dp_degree == 0 {
            out.push("degrees must be >= 1".to_string());
            return out;
        }
        if u64::from(t) * u64::from(self.dp_degree) != u64::from(n_devices) {
            out.push(format!("A_t*A_d = {} != N = {n_devices}", t * self.dp_degree));
        }
        if !t.is_power_of_two() {
            out.push(format!("A_t = {t} is not a power of two"));
        }
        for (what, dim) in [
            ("n_q_heads", model.n_q_heads),
            ("n_kv_heads", model.n_kv_heads),
            ("hidden_dim", model.hidden_dim),
        ] {
            if dim % t != 0 {
                out.push(format!("A_t = {t} does not divide {what} = {dim}"));
            }
        }
        out
    }
}

impl ExpertStrategy {
    pub fn new(tp_degree: u32, ep_degree: u32) -> Self {
        Self {
            tp_degree,
            ep_degree,
            dp_degree: 1,
        }
    }

    pub fn with_dp(tp_degree: u32, ep_degree: u32, dp_degree: u32) -> Self {
        Self {
            tp_degree,
            ep_degree,
            dp_degree,
        }
    }

    pub fn devices(&self) -> u32 {
        self.tp_degree * self.ep_degree * self.dp_degree
    }

    pub fn uses_ep(&self) -> bool {
        self.ep_degree > 1
    }

    pub fn uses_tp(&self) -> bool {
        self.tp_degree > 1
    }

    pub fn violations(&self, model: &ModelSpec, n_devices: u32) -> Vec<String> {
        let (t, e, d) = (self.tp_degree, self.ep_degree, self.dp_degree);
        let mut out = Vec::new();
        if t == 0 || e == 0 || d == 0 {
            out.push("degrees must be >= 1".to_string());
            return out;
        }
        if u64::from(t) * u64::from(e) * u64::from(d) != u64::from(n_devices) {
            out.push(format!("E_d*E_t*E_e = {} != N = {n_devices}", t * e * d));
        }
        if !t.is_power_of_two() {
            out.push(format!("E_t = {t} is not a power of two"));
        }
        if model.n_experts % e != 0 {
            out.push(format!("E_e = {e} does not divide n_experts = {}", model.n_experts));
        }
        if model.expert_inter_dim % t != 0 {
            out.push(format!(
                "E_t = {t} does not divide expert_inter_dim = {}",
                model.expert_inter_dim
            ));
        }
        if d > 1 && e > 1 {
            out.push("combined DP x EP x TP expert layouts are excluded".to_string());
        }
        out
    }
}

fn write_parts(f: &mut fmt::Formatter<'_>, parts: &[(&str, u32)]) -> fmt::Result {
    let shown: Vec<String> = parts
        .iter()
        .filter(|(_, d)| *d > 1)
        .map(|(k, d)| format!("{k}{d}"))
        .collect();
    if shown.is_empty() {
        write!(f, "single")
    } else {
        write!(f, "{}", shown.join("-"))
    }
}

impl fmt::Display for AttentionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_parts(f, &[("tp", self.tp_degree), ("dp", self.dp_degree)])
    }
}

impl fmt::Display for ExpertStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_parts(
            f,
            &[
                ("dp", self.dp_degree),
                ("tp", self.tp_degree),
                ("ep", self.ep_degree),
            ],
        )
    }
}

/// Parses `tp2-dp2`, `ep4`, `tp2ep2`, `single`. Missing degrees are 1.
fn parse_degrees(s: &str) -> Result<(u32, u32, u32)> {
    let (mut tp, mut dp, mut ep) = (None, None, None);
    let text = s.trim().to_ascii_lowercase();
    if text == "single" {
        return Ok((1, 1, 1));
    }
    let mut rest = text.as_str();
    while !rest.is_empty() {
        rest = rest.trim_start_matches(['-', 'x', '_', ' ']);
        if rest.is_empty() {
            break;
        }
        if rest.len() < 3 {
            return Err(Error::InvalidInput(format!("cannot parse strategy `{s}`")));
        }
        let (key, tail) = rest.split_at(2);
        let digits = tail.chars().take_while(|c| c.is_ascii_digit()).count();
        let degree: u32 = tail[..digits]
            .parse()
            .map_err(|_| Error::InvalidInput(format!("cannot parse strategy `{s}`")))?;
        let slot = match key {
            "tp" => &mut tp,
            "dp" => &mut dp,
            "ep" => &mut ep,
            _ => return Err(Error::InvalidInput(format!("unknown parallelism `{key}` in `{s}`"))),
        };
        if slot.replace(degree).is_some() {
            return Err(Error::InvalidInput(format!("`{key}` given twice in `{s}`")));
        }
        rest = &tail[digits..];
    }
    Ok((tp.unwrap_or(1), dp.unwrap_or(1), ep.unwrap_or(1)))
}

impl FromStr for AttentionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (tp, dp, ep) = parse_degrees(s)?;
        if ep != 1 {
            return Err(Error::InvalidInput(format!("attention cannot use ep: `{s}`")));
        }
        Ok(Self::new(tp, dp))
    }
}

impl FromStr for ExpertStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (tp, dp, ep) = parse_degrees(s)?;
        Ok(Self::with_dp(tp, ep, dp))
    }
}

fn pow2_divisors(n: u32) -> impl Iterator<Item = u32> {
    (0..32).map(|i| 1u32 << i).take_while(move |&t| t <= n).filter(move |t| n % t == 0)
}

pub fn enumerate_attention(model: &ModelSpec, hw: &HardwareProfile) -> Result<Vec<AttentionStrategy>> {
    model.validate()?;
    hw.validate()?;
    let n = hw.n_devices;
    let mut out = Vec::new();
    let mut reasons = Vec::new();
    for t in pow2_divisors(n) {
        let s = AttentionStrategy::new(t, n / t);
        let v = s.violations(model, n);
        if v.is_empty() {
            out.push(s);
        } else {
            reasons.push(format!("{s}: {}", v.join("; ")));
        }
    }
    if out.is_empty() {
        return Err(Error::NoStrategy {
            module: "attention",
            reasons: reasons.join(" | "),
        });
    }
    out.sort();
    Ok(out)
}

/// Expert layouts with `E_t * E_e = N`. With `allow_dp`, pure DP x TP
/// layouts (`E_e = 1`, `E_d > 1`) are added; DP x EP x TP never is.
pub fn enumerate_expert(model: &ModelSpec, hw: &HardwareProfile, allow_dp: bool) -> Result<Vec<ExpertStrategy>> {
    model.validate()?;
    hw.validate()?;
    let n = hw.n_devices;
    let mut out = Vec::new();
    let mut reasons = Vec::new();
    let mut consider = |s: ExpertStrategy| {
        let v = s.violations(model, n);
        if v.is_empty() {
            out.push(s);
        } else {
            reasons.push(format!("{s}: {}", v.join("; ")));
        }
    };
    for t in pow2_divisors(n) {
        consider(ExpertStrategy::new(t, n / t));
        if allow_dp && n / t > 1 {
            consider(ExpertStrategy::with_dp(t, 1, n / t));
        }
    }
    if out.is_empty() {
        return Err(Error::NoStrategy {
            module: "expert",
            reasons: reasons.join(" | "),
        });
    }
    out.sort_by_key(|s| (s.tp_degree, s.ep_degree, s.dp_degree));
    Ok(out)
}

/// Canonically ordered strategy lists; positions are the decision indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyCatalog {
    pub n_devices: u32,
    pub attention: Vec<AttentionStrategy>,
    pub expert: Vec<ExpertStrategy>,
}

impl StrategyCatalog {
    pub fn build(model: &ModelSpec, hw: &HardwareProfile, allow_expert_dp: bool) -> Result<Self> {
        Ok(Self {
            n_devices: hw.n_devices,
            attention: enumerate_attention(model, hw)?,
            expert: enumerate_expert(model, hw, allow_expert_dp)?,
        })
    }

    pub fn attention_index(&self, s: &AttentionStrategy) -> Option<usize> {
        self.attention.iter().position(|x| x == s)
    }

    pub fn expert_index(&self, s: &ExpertStrategy) -> Option<usize> {
        self.expert.iter().position(|x| x == s)
    }
}

/// `(M_KV + A_d*M_attn + E_d*M_exp) / N + 2*M_act < M_gpu`, evaluated in
/// exact integer arithmetic by multiplying through by `N`.
pub fn memory_feasible(
    attn: &AttentionStrategy,
    exp: &ExpertStrategy,
    mem: &MemoryBreakdown,
    hw: &HardwareProfile,
) -> bool {
    let n = hw.n_devices;
    if attn.devices() != n || exp.devices() != n || n == 0 {
        return false;
    }
    let n = u128::from(n);
    let weights = u128::from(mem.kv_bytes)
        + u128::from(attn.dp_degree) * u128::from(mem.attn_weight_bytes)
        + u128::from(exp.dp_degree) * u128::from(mem.expert_weight_bytes);
    weights + 2 * n * u128::from(mem.activation_bytes) < n * u128::from(hw.device_mem_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{hardware_preset, model_preset};

    fn hw(n: u32) -> HardwareProfile {
        hardware_preset("a6000-pcie").unwrap().with_devices(n)
    }

    #[test]
    fn mixtral_attention_n4() {
        let m = model_preset("mixtral-8x7b").unwrap();
        let got = enumerate_attention(&m, &hw(4)).unwrap();
        assert_eq!(
            got,
            vec![
                AttentionStrategy::new(1, 4),
                AttentionStrategy::new(2, 2),
                AttentionStrategy::new(4, 1)
            ]
        );
        assert_eq!(enumerate_attention(&m, &hw(1)).unwrap(), vec![AttentionStrategy::new(1, 1)]);
    }

    #[test]
    fn kv_heads_limit_attention_tp() {
        let mut m = model_preset("mixtral-8x7b").unwrap();
        m.n_kv_heads = 2;
        let got = enumerate_attention(&m, &hw(4)).unwrap();
        assert!(!got.contains(&AttentionStrategy::new(4, 1)));
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn mixtral_expert_n4() {
        let m = model_preset("mixtral-8x7b").unwrap();
        let got = enumerate_expert(&m, &hw(4), false).unwrap();
        assert_eq!(
            got,
            vec![
                ExpertStrategy::new(1, 4),
                ExpertStrategy::new(2, 2),
                ExpertStrategy::new(4, 1)
            ]
        );
        assert!(got.iter().all(|s| s.dp_degree == 1));
    }

    #[test]
    fn six_experts_exclude_ep4() {
        let mut m = model_preset("mixtral-8x7b").unwrap();
        m.n_experts = 6;
        let got = enumerate_expert(&m, &hw(4), false).unwrap();
        assert!(!got.contains(&ExpertStrategy::new(1, 4)));
        assert!(got.contains(&ExpertStrategy::new(2, 2)));
    }

    #[test]
    fn expert_dp_only_when_allowed_and_never_three_way() {
        let m = model_preset("mixtral-8x7b").unwrap();
        let got = enumerate_expert(&m, &hw(8), true).unwrap();
        assert!(got.iter().any(|s| s.dp_degree > 1));
        assert!(got.iter().all(|s| s.dp_degree == 1 || s.ep_degree == 1));
        for s in &got {
            assert!(s.violations(&m, 8).is_empty());
        }
    }

    #[test]
    fn no_strategy_error_lists_reasons() {
        let mut m = model_preset("mixtral-8x7b").unwrap();
        m.n_experts = 3;
        m.top_k = 1;
        m.expert_inter_dim = 7;
        let err = enumerate_expert(&m, &hw(2), false).unwrap_err().to_string();
        assert!(err.contains("does not divide n_experts"), "{err}");
        assert!(err.contains("expert_inter_dim"), "{err}");
    }

    #[test]
    fn memory_predicate() {
        let h = hw(4);
        let a1 = AttentionStrategy::new(4, 1);
        let a4 = AttentionStrategy::new(1, 4);
        let e = ExpertStrategy::new(1, 4);
        let mut mem = MemoryBreakdown {
            kv_bytes: 0,
            attn_weight_bytes: 0,
            expert_weight_bytes: 4 * h.device_mem_bytes,
            activation_bytes: 0,
        };
        assert!(!memory_feasible(&a1, &e, &mem, &h));
        mem.expert_weight_bytes = 1;
        assert!(memory_feasible(&a1, &e, &mem, &h));
        let huge = HardwareProfile {
            device_mem_bytes: u64::MAX,
            ..h.clone()
        };
        mem.expert_weight_bytes = 1 << 40;
        assert!(memory_feasible(&a4, &e, &mem, &huge));
    }

    #[test]
    fn dp_multiplies_attention_weights() {
        let h = hw(4);
        let e = ExpertStrategy::new(4, 1);
        let a_dp1 = AttentionStrategy::new(4, 1);
        let a_dp2 = AttentionStrategy::new(2, 2);
        // per-device use: (A_d * attn)/4 = 30 GiB at A_d=1, 60 GiB at A_d=2
        let mem = MemoryBreakdown {
            kv_bytes: 0,
            attn_weight_bytes: 120 << 30,
            expert_weight_bytes: 0,
            activation_bytes: 0,
        };
        assert!(memory_feasible(&a_dp1, &e, &mem, &h));
        assert!(!memory_feasible(&a_dp2, &e, &mem, &h));
    }

    #[test]
    fn parse_and_display() {
        assert_eq!("tp2-dp2".parse::<AttentionStrategy>().unwrap(), AttentionStrategy::new(2, 2));
        assert_eq!("dp4".parse::<AttentionStrategy>().unwrap(), AttentionStrategy::new(1, 4));
        assert_eq!("tp2ep2".parse::<ExpertStrategy>().unwrap(), ExpertStrategy::new(2, 2));
        assert_eq!("ep4".parse::<ExpertStrategy>().unwrap(), ExpertStrategy::new(1, 4));
        assert!("ep4".parse::<AttentionStrategy>().is_err());
        assert!("tp2-tp2".parse::<ExpertStrategy>().is_err());
        assert!("zz3".parse::<ExpertStrategy>().is_err());
        for s in ["tp2-ep2", "ep4", "tp4", "dp2-tp2", "single"] {
            assert_eq!(s.parse::<ExpertStrategy>().unwrap().to_string(), s);
        }
    }
}
