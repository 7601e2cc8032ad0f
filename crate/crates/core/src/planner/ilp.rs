//! The strategy choice as an explicit 0-1 integer program, and an exact
//! implicit-enumeration solver for it.
//!
//! Decision variables are three one-hot groups: `S_k` (attention), `P_i`
//! (prefill expert layout) and `D_j` (decode expert layout). Products in
//! the objective are replaced by auxiliary binaries with the standard
//! linearization
//!
//! ```text
//! u_ki  >= S_k + P_i - 1,         u_ki  <= S_k,  u_ki  <= P_i
//! v_kj  >= S_k + D_j - 1,         v_kj  <= S_k,  v_kj  <= D_j
//! z_kij >= S_k + P_i + D_j - 2,   z_kij <= S_k,  z_kij <= P_i,  z_kij <= D_j
//! ```
//!
//! Entries that are infinite in the cost tensors fix their variable to 0.
//! A fixed auxiliary also gets a conflict row (`S_k + P_i <= 1` etc.).
//!
//! The solver branches on the groups in order S, P, D and on members in
//! ascending index. A node's bound is the cost of its fixed variables, plus
//! the auxiliaries they force, plus, for every free group, the cheapest
//! member together with the auxiliaries that member would force against
//! the fixed ones. All costs are non-negative, so the bound is valid.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{CostTensors, Horizon, SolverStats, Solution, TIE_RTOL};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variable {
    pub name: String,
    pub cost: f64,
    /// Upper bound 0: the variable stands for an infeasible choice.
    pub fixed_zero: bool,
}

/// An auxiliary product variable and the decision variables it multiplies.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub aux: usize,
    pub factors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryProgram {
    pub vars: Vec<Variable>,
    pub rows: Vec<Row>,
    /// One-hot groups of decision variables, in branching order.
    pub groups: Vec<Vec<usize>>,
    pub links: Vec<Link>,
}

fn finite_or_fixed(v: f64) -> (f64, bool) {
    if v.is_finite() {
        (v, false)
    } else {
        (0.0, true)
    }
}

impl BinaryProgram {
    fn add_var(&mut self, name: String, cost: f64) -> usize {
        let (cost, fixed_zero) = finite_or_fixed(cost);
        self.vars.push(Variable { name, cost, fixed_zero });
        self.vars.len() - 1
    }

    fn link(&mut self, aux: usize, factors: Vec<usize>) {
        let m = factors.len() as f64;
        let mut ge = vec![(aux, 1.0)];
        ge.extend(factors.iter().map(|&f| (f, -1.0)));
        self.rows.push(Row {
            terms: ge,
            sense: Sense::Ge,
            rhs: -(m - 1.0),
        });
        for &f in &factors {
            self.rows.push(Row {
                terms: vec![(aux, 1.0), (f, -1.0)],
                sense: Sense::Le,
                rhs: 0.0,
            });
        }
        if self.vars[aux].fixed_zero {
            self.rows.push(Row {
                terms: factors.iter().map(|&f| (f, 1.0)).collect(),
                sense: Sense::Le,
                rhs: m - 1.0,
            });
        }
        self.links.push(Link { aux, factors });
    }

    /// Builds the program for `tensors` under `horizon`.
    pub fn from_tensors(t: &CostTensors, h: &Horizon) -> Result<Self> {
        t.validate()?;
        let (ka, ke) = (t.k_a(), t.k_e());
        let (l, s) = (h.n_layers, h.output_len);
        let mut p = BinaryProgram {
            vars: Vec::new(),
            rows: Vec::new(),
            groups: Vec::new(),
            links: Vec::new(),
        };
        // a stage weight of 0 must not hide an infeasible entry
        let weigh = |w: f64, v: f64| if v.is_finite() { w * v } else { f64::INFINITY };
        let sv: Vec<usize> = (0..ka)
            .map(|k| {
                let c = weigh(l, t.t_a_prefill[k]) + weigh(s * l, t.t_a_decode[k]);
                p.add_var(format!("S_{k}"), c)
            })
            .collect();
        let pv: Vec<usize> = (0..ke)
            .map(|i| p.add_var(format!("P_{i}"), weigh(l, t.t_e_prefill[i])))
            .collect();
        let dv: Vec<usize> = (0..ke)
            .map(|j| p.add_var(format!("D_{j}"), weigh(s * l, t.t_e_decode[j])))
            .collect();
        for group in [&sv, &pv, &dv] {
            p.rows.push(Row {
                terms: group.iter().map(|&v| (v, 1.0)).collect(),
                sense: Sense::Eq,
                rhs: 1.0,
            });
        }
        p.groups = vec![sv.clone(), pv.clone(), dv.clone()];
        for k in 0..ka {
            for i in 0..ke {
                let u = p.add_var(format!("u_{k}_{i}"), weigh(l, t.t_c_prefill[k][i]));
                p.link(u, vec![sv[k], pv[i]]);
            }
            for j in 0..ke {
                let v = p.add_var(format!("v_{k}_{j}"), weigh(s * l, t.t_c_decode[k][j]));
                p.link(v, vec![sv[k], dv[j]]);
            }
            for i in 0..ke {
                for j in 0..ke {
                    let z = p.add_var(format!("z_{k}_{i}_{j}"), t.c_switch[k][i][j]);
                    p.link(z, vec![sv[k], pv[i], dv[j]]);
                }
            }
        }
        Ok(p)
    }

    /// Objective value of a full assignment, or `None` if a row is violated.
    pub fn evaluate(&self, x: &[u8]) -> Option<f64> {
        if x.len() != self.vars.len() {
            return None;
        }
        for (v, &xi) in self.vars.iter().zip(x) {
            if xi > 1 || (v.fixed_zero && xi == 1) {
                return None;
            }
        }
        for r in &self.rows {
            let lhs: f64 = r.terms.iter().map(|&(v, c)| c * f64::from(x[v])).sum();
            let ok = match r.sense {
                Sense::Le => lhs <= r.rhs,
                Sense::Ge => lhs >= r.rhs,
                Sense::Eq => lhs == r.rhs,
            };
            if !ok {
                return None;
            }
        }
        Some(self.vars.iter().zip(x).filter(|(_, &xi)| xi == 1).map(|(v, _)| v.cost).sum())
    }

    /// CPLEX LP text of the program.
    pub fn to_lp(&self) -> String {
        let mut out = String::from("\\ expert layout selection\nMinimize\n obj:");
        for v in self.vars.iter().filter(|v| v.cost != 0.0) {
            let _ = write!(out, " + {:e} {}", v.cost, v.name);
        }
        out.push_str("\nSubject To\n");
        for (n, r) in self.rows.iter().enumerate() {
            let _ = write!(out, " r{n}:");
            for &(v, c) in &r.terms {
                let sign = if c < 0.0 { '-' } else { '+' };
                let _ = write!(out, " {sign} {} {}", c.abs(), self.vars[v].name);
            }
            let op = match r.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {}", r.rhs);
        }
        out.push_str("Bounds\n");
        for v in self.vars.iter().filter(|v| v.fixed_zero) {
            let _ = writeln!(out, " {} = 0", v.name);
        }
        out.push_str("Binaries\n");
        for v in &self.vars {
            let _ = writeln!(out, " {}", v.name);
        }
        out.push_str("End\n");
        out
    }
}

struct Search<'a> {
    p: &'a BinaryProgram,
    x: Vec<u8>,
    /// Which decision variables are already decided (to 0 or 1).
    fixed: Vec<bool>,
    /// Links indexed by each factor.
    by_factor: Vec<Vec<usize>>,
    nodes: u64,
    leaves: u64,
}

impl<'a> Search<'a> {
    fn new(p: &'a BinaryProgram) -> Self {
        let mut by_factor = vec![Vec::new(); p.vars.len()];
        for (li, l) in p.links.iter().enumerate() {
            for &f in &l.factors {
                by_factor[f].push(li);
            }
        }
        Self {
            p,
            x: vec![0; p.vars.len()],
            fixed: vec![false; p.vars.len()],
            by_factor,
            nodes: 0,
            leaves: 0,
        }
    }

    /// Cost of auxiliaries forced to 1 once `member` is set, given the
    /// current fixings. `None` if one of them is fixed to 0.
    fn forced_by(&self, member: usize) -> Option<f64> {
        let mut cost = 0.0;
        for &li in &self.by_factor[member] {
            let l = &self.p.links[li];
            if l.factors.iter().all(|&f| f == member || (self.fixed[f] && self.x[f] == 1)) {
                let aux = &self.p.vars[l.aux];
                if aux.fixed_zero {
                    return None;
                }
                cost += aux.cost;
            }
        }
        Some(cost)
    }

    fn bound(&self, depth: usize, fixed_cost: f64) -> f64 {
        let mut b = fixed_cost;
        for g in &self.p.groups[depth..] {
            let best = g
                .iter()
                .filter(|&&m| !self.p.vars[m].fixed_zero)
                .filter_map(|&m| self.forced_by(m).map(|c| self.p.vars[m].cost + c))
                .fold(f64::INFINITY, f64::min);
            b += best;
        }
        b
    }

    fn set_group(&mut self, depth: usize, chosen: Option<usize>) {
        for &m in &self.p.groups[depth] {
            self.fixed[m] = chosen.is_some();
            self.x[m] = u8::from(Some(m) == chosen);
        }
    }

    /// Depth-first search pruning nodes whose bound exceeds `cutoff`. In
    /// improving mode every better leaf tightens `cutoff`; with
    /// `stop_at_first` the first leaf within `cutoff` is returned.
    fn dfs(&mut self, depth: usize, fixed_cost: f64, cutoff: &mut f64, stop_at_first: bool) -> Option<Vec<u8>> {
        self.nodes += 1;
        if depth == self.p.groups.len() {
            self.leaves += 1;
            let mut x = self.x.clone();
            for l in &self.p.links {
                x[l.aux] = u8::from(l.factors.iter().all(|&f| x[f] == 1));
            }
            let value = self.p.evaluate(&x)?;
            if value <= *cutoff {
                if !stop_at_first {
                    *cutoff = value;
                }
                return Some(x);
            }
            return None;
        }
        let members = self.p.groups[depth].clone();
        let mut found = None;
        for m in members {
            if self.p.vars[m].fixed_zero {
                continue;
            }
            let Some(forced) = self.forced_by(m) else { continue };
            self.set_group(depth, Some(m));
            let cost = fixed_cost + self.p.vars[m].cost + forced;
            if self.bound(depth + 1, cost) <= *cutoff {
                if let Some(x) = self.dfs(depth + 1, cost, cutoff, stop_at_first) {
                    found = Some(x);
                    if stop_at_first {
                        self.set_group(depth, None);
                        return found;
                    }
                }
            }
            self.set_group(depth, None);
        }
        found
    }
}

fn chosen(p: &BinaryProgram, x: &[u8], group: usize) -> usize {
    p.groups[group].iter().position(|&v| x[v] == 1).expect("one-hot group has a member set")
}

/// Exact minimum of the program with the lexicographically smallest
/// `(k, i, j)` among optima (values within [`TIE_RTOL`]).
pub fn solve_program(p: &BinaryProgram) -> Result<(usize, usize, usize, f64, u64, u64)> {
    let mut search = Search::new(p);
    let mut best = f64::INFINITY;
    if search.dfs(0, 0.0, &mut best, false).is_none() || !best.is_finite() {
        return Err(Error::Infeasible("every strategy combination is infeasible".into()));
    }
    let mut cutoff = best + TIE_RTOL * best.abs();
    let x = search
        .dfs(0, 0.0, &mut cutoff, true)
        .ok_or_else(|| Error::Invariant("second search pass lost the optimum".into()))?;
    let value = p.evaluate(&x).expect("accepted leaf is feasible");
    Ok((chosen(p, &x, 0), chosen(p, &x, 1), chosen(p, &x, 2), value, search.nodes, search.leaves))
}

pub fn solve_ilp(tensors: &CostTensors, horizon: &Horizon) -> Result<Solution> {
    let start = Instant::now();
    let program = BinaryProgram::from_tensors(tensors, horizon)?;
    let (k, i, j, objective, nodes, leaves) = solve_program(&program)?;
    Ok(Solution {
        k,
        i,
        j,
        objective,
        stats: SolverStats {
            method: "ilp".into(),
            variables: program.vars.len(),
            constraints: program.rows.len(),
            nodes,
            leaves,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    })
}
