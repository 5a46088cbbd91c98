//! Posterior over candidate parent sets for one (action, child) pair.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::math::{ln, ln_marginal, log_sum_exp};
use crate::model::{PartialState, VarId, VarSet, VarTable};
use crate::tree::{Categorical, Tree};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StructureError {
    #[error("alpha must be strictly positive")]
    NonpositiveAlpha,
}

/// ln P(pa) = |pa| ln ρ + (n - |pa|) ln (1 - ρ).
pub fn struct_log_prior(pa_size: usize, n_vars: usize, rho: f64) -> f64 {
    pa_size as f64 * ln(rho) + (n_vars - pa_size) as f64 * ln(1.0 - rho)
}

/// BDe score of one candidate: `counts[j][i]`, `alphas[j][i]`.
pub fn bde_log_score(counts: &[Vec<f64>], alphas: &[Vec<f64>], log_prior: f64) -> Result<f64, StructureError> {
    let mut s = log_prior;
    for (n, a) in counts.iter().zip(alphas) {
        if a.iter().any(|&x| x <= 0.0 || !x.is_finite()) {
            return Err(StructureError::NonpositiveAlpha);
        }
        s += ln_marginal(n, a);
    }
    Ok(s)
}

/// Every subset of `vars` with at most `cap` members, by size then lexicographically.
pub fn enumerate_parent_sets(vars: VarSet, cap: usize) -> Vec<VarSet> {
    let ids: Vec<VarId> = vars.iter().collect();
    let mut out = Vec::new();
    fn rec(ids: &[VarId], start: usize, left: usize, cur: VarSet, out: &mut Vec<VarSet>) {
        if left == 0 {
            out.push(cur);
            return;
        }
        for k in start..ids.len() {
            rec(ids, k + 1, left - 1, cur.with(ids[k]), out);
        }
    }
    for size in 0..=cap.min(ids.len()) {
        rec(&ids, 0, size, VarSet::EMPTY, &mut out);
    }
    out
}

fn canonical_cmp(a: &VarSet, b: &VarSet) -> core::cmp::Ordering {
    a.len().cmp(&b.len()).then_with(|| a.iter().cmp(b.iter()))
}

/// Where Dirichlet pseudo-counts come from.
#[derive(Clone, Debug)]
pub enum AlphaSource {
    /// 1/|v(X)| per child value and parent assignment.
    Uniform,
    /// The child is a newly discovered variable: K / |v(z ∪ Y)|.
    Fresh { k: f64, z: VarId },
    /// Repacked from the model in force before `z` was discovered.
    Repacked(Arc<Repack>),
}

/// Summary of discarded data and the old CPD for one (action, child).
#[derive(Debug)]
pub struct Repack {
    pub k: f64,
    pub z: VarId,
    /// Current-state projections of discarded trials (for the action, or all actions if it had none).
    pub states: Arc<Vec<PartialState>>,
    /// Old MAP CPD of the child.
    pub old_cpd: Tree<Categorical>,
    /// `old_cpd` evaluated at each state in `states`.
    pub cond: Vec<Categorical>,
}

impl Repack {
    pub fn new(k: f64, z: VarId, states: Arc<Vec<PartialState>>, old_cpd: Tree<Categorical>) -> Self {
        let cond = states.iter().map(|s| old_cpd.eval(s).clone()).collect();
        Repack { k, z, states, old_cpd, cond }
    }

    /// P(i, y) for the assignment `j` restricted to `w` = Y∖z.
    fn joint(&self, vars: &VarTable, w: VarSet, j: &PartialState, card: usize) -> Vec<f64> {
        let n = self.states.len();
        let mut c = 0usize;
        let mut cond = alloc::vec![0.0; card];
        for (s, p) in self.states.iter().zip(&self.cond) {
            if s.agrees_on(j, w) {
                c += 1;
                for (acc, x) in cond.iter_mut().zip(&p.0) {
                    *acc += x;
                }
            }
        }
        if c > 0 {
            for x in cond.iter_mut() {
                *x /= c as f64;
            }
        } else if n > 0 {
            // no matching trial: average the old conditional over all trials with y imposed
            for s in self.states.iter() {
                let mut s = s.clone();
                for v in w.iter() {
                    s.set(v, j.get(v).unwrap());
                }
                for (acc, x) in cond.iter_mut().zip(&self.old_cpd.eval(&s).0) {
                    *acc += x;
                }
            }
            for x in cond.iter_mut() {
                *x /= n as f64;
            }
        } else {
            cond.clone_from(&self.old_cpd.eval(j).0);
        }
        let py = (c as f64 + 1.0 / vars.joint_card(w) as f64) / (n as f64 + 1.0);
        cond.iter().map(|p| py * p).collect()
    }
}

impl AlphaSource {
    /// Pseudo-counts for child values given parent assignment `j` over `parents`.
    pub fn alphas(&self, vars: &VarTable, child: VarId, parents: VarSet, j: &PartialState) -> Vec<f64> {
        let card = vars.card(child);
        match self {
            AlphaSource::Uniform => alloc::vec![1.0 / card as f64; card],
            AlphaSource::Fresh { k, z } => {
                alloc::vec![k / vars.joint_card(parents.with(*z)) as f64; card]
            }
            AlphaSource::Repacked(r) => {
                let scale = r.k / vars.joint_card(parents) as f64;
                r.joint(vars, parents.without(r.z), j, card)
                    .into_iter()
                    .map(|p| scale * p)
                    .collect()
            }
        }
    }

    pub fn is_default(&self) -> bool {
        matches!(self, AlphaSource::Uniform)
    }
}

#[derive(Clone, Debug)]
struct Row {
    counts: Vec<u32>,
    total: u32,
    alphas: Vec<f64>,
    alpha_total: f64,
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub parents: VarSet,
    pub log_prior: f64,
    /// Σ_j ln B(N_j + α_j) − ln B(α_j), kept incrementally.
    pub data_score: f64,
    pvars: Vec<VarId>,
    pcards: Vec<usize>,
    rows: BTreeMap<u32, Row>,
}

impl Candidate {
    pub fn log_score(&self) -> f64 {
        self.log_prior + self.data_score
    }

    /// Count N_{i|j} where `j` assigns the parents.
    pub fn count(&self, j: &PartialState, i: u8) -> u32 {
        let key = j.index_over(&self.pvars, &self.pcards).unwrap() as u32;
        self.rows.get(&key).map_or(0, |r| r.counts[i as usize])
    }

    pub fn total_count(&self) -> u64 {
        self.rows.values().map(|r| r.total as u64).sum()
    }
}

#[derive(Clone, Debug)]
pub struct ParentPosterior {
    pub child: VarId,
    candidates: Vec<Candidate>,
    alpha: AlphaSource,
    map: usize,
}

impl ParentPosterior {
    /// Family over subsets of `aware` with the structure prior, normalized over the capped family.
    pub fn new(child: VarId, aware: VarSet, rho: f64, cap: usize, alpha: AlphaSource, vars: &VarTable) -> Self {
        let n = aware.len();
        let sets = enumerate_parent_sets(aware, cap);
        let priors: Vec<f64> = sets.iter().map(|p| struct_log_prior(p.len(), n, rho)).collect();
        Self::from_family(child, sets.into_iter().zip(priors).collect(), alpha, vars)
    }

    fn from_family(child: VarId, family: Vec<(VarSet, f64)>, alpha: AlphaSource, vars: &VarTable) -> Self {
        let z = log_sum_exp(family.iter().map(|(_, p)| *p));
        let candidates = family
            .into_iter()
            .map(|(parents, lp)| Candidate {
                parents,
                log_prior: lp - z,
                data_score: 0.0,
                pvars: parents.iter().collect(),
                pcards: parents.iter().map(|v| vars.card(v)).collect(),
                rows: BTreeMap::new(),
            })
            .collect();
        let mut p = ParentPosterior { child, candidates, alpha, map: 0 };
        p.map = p.argmax();
        p
    }

    fn argmax(&self) -> usize {
        let mut best = 0;
        for (k, c) in self.candidates.iter().enumerate().skip(1) {
            if c.log_score() > self.candidates[best].log_score() + 1e-12 {
                best = k;
            }
        }
        best
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn alpha_source(&self) -> &AlphaSource {
        &self.alpha
    }

    pub fn map_parents(&self) -> VarSet {
        self.candidates[self.map].parents
    }

    /// Normalized log posterior per candidate, in family order.
    pub fn log_posterior(&self) -> Vec<f64> {
        let z = log_sum_exp(self.candidates.iter().map(|c| c.log_score()));
        self.candidates.iter().map(|c| c.log_score() - z).collect()
    }

    pub fn log_posterior_of(&self, parents: VarSet) -> Option<f64> {
        let lp = self.log_posterior();
        self.candidates.iter().position(|c| c.parents == parents).map(|k| lp[k])
    }

    /// Adds one trial; returns true if the MAP parent set changed.
    pub fn update(&mut self, state: &PartialState, child_value: u8, vars: &VarTable) -> bool {
        let i = child_value as usize;
        for c in self.candidates.iter_mut() {
            let key = state.index_over(&c.pvars, &c.pcards).expect("trial misses a parent") as u32;
            let row = c.rows.entry(key).or_insert_with(|| {
                let j = state.project(c.parents);
                let alphas = self.alpha.alphas(vars, self.child, c.parents, &j);
                Row {
                    counts: alloc::vec![0; alphas.len()],
                    total: 0,
                    alpha_total: alphas.iter().sum(),
                    alphas,
                }
            });
            c.data_score += ln(row.counts[i] as f64 + row.alphas[i]) - ln(row.total as f64 + row.alpha_total);
            row.counts[i] += 1;
            row.total += 1;
        }
        let old = self.map;
        self.map = self.argmax();
        old != self.map
    }

    /// Prior over the family extended by `z`, from this (old) posterior; counts start empty.
    pub fn rebuild_on_new_variable(&self, z: VarId, rho: f64, cap: usize, alpha: AlphaSource, vars: &VarTable) -> Self {
        let post = self.log_posterior();
        let mut family: Vec<(VarSet, f64)> = Vec::with_capacity(2 * post.len());
        for (c, lp) in self.candidates.iter().zip(post) {
            family.push((c.parents, ln(1.0 - rho) + lp));
            if c.parents.len() < cap {
                family.push((c.parents.with(z), ln(rho) + lp));
            }
        }
        family.sort_by(|a, b| canonical_cmp(&a.0, &b.0));
        Self::from_family(self.child, family, alpha, vars)
    }
}
