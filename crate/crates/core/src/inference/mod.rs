//! Observational, interventional and counterfactual queries over a fitted
//! [`CbnModel`]. Everything here is exact enumeration except the Gumbel-max
//! counterfactual, which is Monte Carlo.

mod counterfactual;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use counterfactual::{gumbel_counterfactual, recourse, recourse_index, NoiseMode, NoiseModel, MIN_GUMBEL_SAMPLES};

use crate::error::{Error, Result};
use crate::model::{CategoricalDomain, CbnModel, Var};

/// Optional label per variable.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Evidence {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub o: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<String>,
}

impl Evidence {
    pub fn get(&self, v: Var) -> Option<&str> {
        match v {
            Var::Z => self.z.as_deref(),
            Var::C => self.c.as_deref(),
            Var::O => self.o.as_deref(),
            Var::S => self.s.as_deref(),
        }
    }

    pub fn with(mut self, v: Var, label: impl Into<String>) -> Self {
        let slot = match v {
            Var::Z => &mut self.z,
            Var::C => &mut self.c,
            Var::O => &mut self.o,
            Var::S => &mut self.s,
        };
        *slot = Some(label.into());
        self
    }

    /// Category index per variable, validated against the model's domains.
    pub fn resolve(&self, model: &CbnModel) -> Result<[Option<usize>; 4]> {
        let mut out = [None; 4];
        for v in Var::ALL {
            if let Some(label) = self.get(v) {
                out[v.index()] = Some(model.domains.get(v).index_of(label)?);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub label: String,
    pub probability: f64,
}

/// Probabilities over one variable, descending, ties by domain order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedDistribution {
    pub variable: Var,
    pub entries: Vec<RankedEntry>,
    /// Sum over the full domain before any truncation.
    pub total: f64,
    pub domain_size: usize,
}

impl RankedDistribution {
    /// Normalizes `probs` (indexed by domain position) and ranks them.
    pub fn from_dense(domain: &CategoricalDomain, probs: &[f64]) -> Self {
        debug_assert_eq!(probs.len(), domain.size());
        let sum: f64 = probs.iter().sum();
        let normalized: Vec<f64> = probs.iter().map(|p| p / sum).collect();
        let mut order: Vec<usize> = (0..normalized.len()).collect();
        order.sort_by(|&a, &b| normalized[b].total_cmp(&normalized[a]).then(a.cmp(&b)));
        RankedDistribution {
            variable: domain.name(),
            entries: order
                .iter()
                .map(|&i| RankedEntry {
                    label: domain.label(i).to_string(),
                    probability: normalized[i],
                })
                .collect(),
            total: normalized.iter().sum(),
            domain_size: domain.size(),
        }
    }

    /// Keep the first `k` entries; probabilities are not renormalized.
    pub fn truncated(mut self, k: usize) -> Self {
        self.entries.truncate(k);
        self
    }

    pub fn top(&self) -> &RankedEntry {
        &self.entries[0]
    }

    pub fn probability_of(&self, label: &str) -> Option<f64> {
        self.entries.iter().find(|e| e.label == label).map(|e| e.probability)
    }

    pub fn is_truncated(&self) -> bool {
        self.entries.len() < self.domain_size
    }

    /// Dense vector in domain order; missing (truncated) labels read as 0.
    pub fn dense(&self, domain: &CategoricalDomain) -> Vec<f64> {
        let mut out = vec![0.0; domain.size()];
        for e in &self.entries {
            if let Ok(i) = domain.index_of(&e.label) {
                out[i] = e.probability;
            }
        }
        out
    }

    /// `label (p=0.90), label (p=0.05)`
    pub fn render_inline(&self, k: usize) -> String {
        self.entries
            .iter()
            .take(k)
            .map(|e| format!("{} (p={:.2})", e.label, e.probability))
            .collect::<Vec<_>>()
            .join(", ")
    }
}

/// `P(query | evidence)` by exhaustive enumeration of the non-barren
/// variables, as a dense vector over the query's domain.
///
/// Free variables after the last queried or observed one in the order
/// `Z, C, O, S` sum out to one and are skipped.
pub fn conditional_dense(model: &CbnModel, query: Var, evidence: [Option<usize>; 4]) -> Result<Vec<f64>> {
    if evidence[query.index()].is_some() {
        return Err(Error::Argument(format!("{query} is both queried and observed")));
    }
    let sizes = model.domains.sizes();
    let last = Var::ALL
        .iter()
        .filter(|v| **v == query || evidence[v.index()].is_some())
        .map(|v| v.index())
        .max()
        .unwrap();
    let range = |v: Var| -> Vec<usize> {
        match evidence[v.index()] {
            Some(x) => vec![x],
            None if v.index() > last => vec![usize::MAX],
            None => (0..sizes[v.index()]).collect(),
        }
    };
    let (zs, cs, os, ss) = (range(Var::Z), range(Var::C), range(Var::O), range(Var::S));
    let mut acc = vec![0.0; sizes[query.index()]];
    let pick = |values: [usize; 4]| values[query.index()];

    for &z in &zs {
        let pz = model.cpts.z.prob(&[], z as u32);
        for &c in &cs {
            let pc = if c == usize::MAX { 1.0 } else { model.cpts.c.prob(&[z as u32], c as u32) };
            for &o in &os {
                let po = if o == usize::MAX {
                    1.0
                } else {
                    model.cpts.o.prob(&[c as u32, z as u32], o as u32)
                };
                for &s in &ss {
                    let ps = if s == usize::MAX {
                        1.0
                    } else {
                        model.cpts.s.prob(&[c as u32, z as u32, o as u32], s as u32)
                    };
                    acc[pick([z, c, o, s])] += pz * pc * po * ps;
                }
            }
        }
    }
    let evidence_mass: f64 = acc.iter().sum();
    // Also rejects NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    if !(evidence_mass > 0.0) {
        return Err(Error::Validation("evidence has zero probability".into()));
    }
    Ok(acc.into_iter().map(|p| p / evidence_mass).collect())
}

/// `P(query | evidence)` as a ratio of marginals.
pub fn conditional(model: &CbnModel, query: Var, evidence: &Evidence) -> Result<RankedDistribution> {
    let probs = conditional_dense(model, query, evidence.resolve(model)?)?;
    Ok(RankedDistribution::from_dense(model.domains.get(query), &probs))
}

/// Clean and quantize an observation text into its O category.
pub fn observation_category(model: &CbnModel, text: &str) -> Result<usize> {
    let q = model.quantizers()?;
    q.observation.assign(&q.cleaning.clean(text))
}

pub fn solution_category(model: &CbnModel, text: &str) -> Result<usize> {
    let q = model.quantizers()?;
    q.solution.assign(&q.cleaning.clean(text))
}

fn check_top_k(top_k: usize) -> Result<()> {
    if top_k == 0 {
        return Err(Error::Argument("top_k must be at least 1".into()));
    }
    Ok(())
}

/// Root-cause ranking `P(C | O=o)` with Z summed out, or conditioned on when
/// a subsystem is known.
pub fn rca_index(model: &CbnModel, o: usize, z: Option<usize>) -> Result<RankedDistribution> {
    let probs = conditional_dense(model, Var::C, [z, None, Some(o), None])?;
    Ok(RankedDistribution::from_dense(&model.domains.c, &probs))
}

/// Root-cause diagnosis of a free-text observation.
pub fn rca(model: &CbnModel, observation_text: &str, top_k: usize) -> Result<RankedDistribution> {
    check_top_k(top_k)?;
    let o = observation_category(model, observation_text)?;
    Ok(rca_index(model, o, None)?.truncated(top_k))
}

/// `Σ_{c,z} P(c|z) P(S|c,z,o) P_target(z)` as a dense vector over S.
pub fn adjusted_solution(model: &CbnModel, o: usize, z_marginal: &[f64]) -> Vec<f64> {
    let [nz, nc, _, ns] = model.domains.sizes();
    let mut acc = vec![0.0; ns];
    for (z, &pz) in z_marginal.iter().enumerate().take(nz) {
        let p_c = model.p_c_given_z(z);
        for (c, &pc) in p_c.iter().enumerate().take(nc) {
            let weight = pz * pc;
            for (a, ps) in acc.iter_mut().zip(model.p_s_given(c, z, o)) {
                *a += weight * ps;
            }
        }
    }
    let sum: f64 = acc.iter().sum();
    acc.iter_mut().for_each(|p| *p /= sum);
    acc
}

/// `P(S | do(O=o))` under the model's own subsystem marginal.
pub fn interventional_solution(model: &CbnModel, o: usize) -> Vec<f64> {
    adjusted_solution(model, o, &model.p_z())
}

/// Deconfounded solution ranking for a free-text observation.
pub fn intervene_solution(model: &CbnModel, observation_text: &str, top_k: usize) -> Result<RankedDistribution> {
    check_top_k(top_k)?;
    let o = observation_category(model, observation_text)?;
    let probs = interventional_solution(model, o);
    Ok(RankedDistribution::from_dense(&model.domains.s, &probs).truncated(top_k))
}

/// Target population for transport: a known environment or an explicit
/// subsystem distribution keyed by Z label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransportTarget {
    Environment(String),
    Marginal(BTreeMap<String, f64>),
}

impl TransportTarget {
    pub fn z_marginal(&self, model: &CbnModel) -> Result<Vec<f64>> {
        match self {
            TransportTarget::Environment(env) => {
                model
                    .env_z_marginals
                    .get(env)
                    .cloned()
                    .ok_or_else(|| Error::UnknownEnvironment {
                        label: env.clone(),
                        known: model.environments(),
                    })
            }
            TransportTarget::Marginal(map) => {
                let mut out = vec![0.0; model.domains.z.size()];
                for (label, &p) in map {
                    let i = model.domains.z.index_of(label).map_err(|_| {
                        Error::Validation(format!("Z marginal names unknown subsystem `{label}`"))
                    })?;
                    if !(p >= 0.0 && p.is_finite()) {
                        return Err(Error::Validation(format!("Z marginal has invalid mass {p} for `{label}`")));
                    }
                    out[i] = p;
                }
                let sum: f64 = out.iter().sum();
                if (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::Validation(format!("Z marginal sums to {sum}, expected 1")));
                }
                Ok(out)
            }
        }
    }
}

/// Solution ranking transported to a target subsystem population.
pub fn transport_solution(
    model: &CbnModel,
    target: &TransportTarget,
    observation_text: &str,
    top_k: usize,
) -> Result<RankedDistribution> {
    check_top_k(top_k)?;
    let pz = target.z_marginal(model)?;
    let o = observation_category(model, observation_text)?;
    let probs = adjusted_solution(model, o, &pz);
    Ok(RankedDistribution::from_dense(&model.domains.s, &probs).truncated(top_k))
}

pub const ORACLE_LIMIT: usize = 1_000_000;

/// Truncated-factorization reference for `P(S | do(O=o))`: the O factor is
/// dropped and every remaining product term is enumerated explicitly.
/// Refuses models with `|Z|·|C|·|S|` above [`ORACLE_LIMIT`].
pub fn enumerate_interventional_oracle(model: &CbnModel, o: usize) -> Result<Vec<f64>> {
    let [nz, nc, no, ns] = model.domains.sizes();
    if nz * nc * ns > ORACLE_LIMIT {
        return Err(Error::OracleRefused(format!(
            "|Z|·|C|·|S| = {} exceeds {ORACLE_LIMIT}",
            nz * nc * ns
        )));
    }
    if o >= no {
        return Err(Error::domain(Var::O.describe(), o.to_string()));
    }
    let mut out = vec![0.0; ns];
    for (s, slot) in out.iter_mut().enumerate() {
        for z in 0..nz {
            for c in 0..nc {
                let (z32, c32) = (z as u32, c as u32);
                *slot += model.cpts.z.prob(&[], z32)
                    * model.cpts.c.prob(&[z32], c32)
                    * model.cpts.s.prob(&[c32, z32, o as u32], s as u32);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::{numbered, random_model};
    use crate::model::{Assignment, FitOptions};

    #[test]
    fn empty_evidence_gives_prior() {
        let m = random_model([3, 2, 2, 2], 20, 1);
        let d = conditional_dense(&m, Var::Z, [None; 4]).unwrap();
        for (a, b) in d.iter().zip(m.p_z()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn conditional_agrees_with_joint_sums() {
        let m = random_model([2, 3, 4, 5], 60, 9);
        for o in 0..4 {
            let fast = conditional_dense(&m, Var::C, [None, None, Some(o), None]).unwrap();
            let mut brute = [0.0; 3];
            for z in 0..2 {
                for c in 0..3 {
                    for s in 0..5 {
                        brute[c] += m.joint_index(Assignment { z, c, o, s });
                    }
                }
            }
            let norm: f64 = brute.iter().sum();
            for c in 0..3 {
                assert!((fast[c] - brute[c] / norm).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fully_observed_context_reduces_to_factor_row() {
        let m = random_model([2, 2, 2, 2], 12, 5);
        let got = conditional_dense(&m, Var::S, [Some(1), Some(0), Some(1), None]).unwrap();
        let row = m.p_s_given(0, 1, 1);
        for (a, b) in got.iter().zip(row) {
            assert!((a - b).abs() < 1e-15);
        }
        // querying a root with everything else fixed: P(z|c,o,s) ∝ P(z)P(c|z)P(o|c,z)P(s|c,z,o)
        let got = conditional_dense(&m, Var::Z, [None, Some(1), Some(0), Some(1)]).unwrap();
        let w: Vec<f64> = (0..2)
            .map(|z| m.joint_index(Assignment { z, c: 1, o: 0, s: 1 }))
            .collect();
        let total: f64 = w.iter().sum();
        for z in 0..2 {
            assert!((got[z] - w[z] / total).abs() < 1e-15);
        }
    }

    #[test]
    fn query_cannot_be_observed() {
        let m = random_model([2, 2, 2, 2], 5, 1);
        assert!(conditional_dense(&m, Var::C, [None, Some(0), None, None]).is_err());
    }

    #[test]
    fn ranking_order_and_ties() {
        let d = CategoricalDomain::new(Var::C, vec!["a".into(), "b".into(), "c".into()]).unwrap();
        let r = RankedDistribution::from_dense(&d, &[0.25, 0.5, 0.25]);
        let labels: Vec<_> = r.entries.iter().map(|e| e.label.as_str()).collect();
        assert_eq!(labels, ["b", "a", "c"]);
        assert!((r.total - 1.0).abs() < 1e-15);
        let t = r.truncated(2);
        assert_eq!(t.entries.len(), 2);
        assert!((t.total - 1.0).abs() < 1e-15);
        assert_eq!(t.render_inline(2), "b (p=0.50), a (p=0.25)");
    }

    #[test]
    fn single_cause_domain_is_certain() {
        let m = random_model([3, 1, 4, 2], 30, 2);
        let r = rca_index(&m, 2, None).unwrap();
        assert_eq!(r.entries.len(), 1);
        assert_eq!(r.top().probability, 1.0);
    }

    #[test]
    fn rca_positive_with_known_subsystem() {
        let m = random_model([3, 5, 4, 2], 30, 8);
        for z in 0..3 {
            for o in 0..4 {
                let r = rca_index(&m, o, Some(z)).unwrap();
                assert!(r.entries.iter().all(|e| e.probability > 0.0));
            }
        }
    }

    #[test]
    fn do_equals_see_without_confounder_variation() {
        let m = random_model([1, 1, 3, 4], 30, 4);
        for o in 0..3 {
            let see = conditional_dense(&m, Var::S, [None, None, Some(o), None]).unwrap();
            let act = interventional_solution(&m, o);
            for (a, b) in see.iter().zip(&act) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn oracle_matches_adjustment() {
        for seed in 0..20 {
            let m = random_model([3, 4, 3, 6], 40, seed);
            for o in 0..3 {
                let fast = interventional_solution(&m, o);
                let slow = enumerate_interventional_oracle(&m, o).unwrap();
                assert!((slow.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                for (a, b) in fast.iter().zip(&slow) {
                    assert!((a - b).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn oracle_degenerate_and_guard() {
        let m = random_model([1, 1, 2, 3], 10, 1);
        let row = m.p_s_given(0, 0, 1);
        for (a, b) in enumerate_interventional_oracle(&m, 1).unwrap().iter().zip(row) {
            assert!((a - b).abs() < 1e-15);
        }
        let rows = [Assignment { z: 0, c: 0, o: 0, s: 0 }];
        let big = crate::model::CbnModel::from_assignments(
            numbered([101, 100, 1, 100]),
            &rows,
            BTreeMap::new(),
            &FitOptions::default(),
        )
        .unwrap();
        assert!(matches!(enumerate_interventional_oracle(&big, 0), Err(Error::OracleRefused(_))));
    }

    #[test]
    fn transport_targets() {
        let mut m = random_model([3, 2, 2, 3], 40, 6);
        m.env_z_marginals.insert("fleet-a".into(), m.p_z());
        let own = TransportTarget::Environment("fleet-a".into()).z_marginal(&m).unwrap();
        for o in 0..2 {
            let a = adjusted_solution(&m, o, &own);
            let b = interventional_solution(&m, o);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        // point mass at z1 reduces to Σ_c P(c|z1) P(S|c,z1,o)
        let point = TransportTarget::Marginal(BTreeMap::from([("z1".to_string(), 1.0)]));
        let pz = point.z_marginal(&m).unwrap();
        let got = adjusted_solution(&m, 1, &pz);
        let pc = m.p_c_given_z(1);
        for s in 0..3 {
            let closed: f64 = (0..2).map(|c| pc[c] * m.p_s_given(c, 1, 1)[s]).sum();
            assert!((got[s] - closed).abs() < 1e-12);
        }

        let err = TransportTarget::Environment("fleet-x".into()).z_marginal(&m).unwrap_err();
        assert!(err.to_string().contains("fleet-a"));
        let bad = TransportTarget::Marginal(BTreeMap::from([("z0".to_string(), 0.5)]));
        assert!(matches!(bad.z_marginal(&m), Err(Error::Validation(_))));
        let unknown = TransportTarget::Marginal(BTreeMap::from([("zz".to_string(), 1.0)]));
        assert!(matches!(unknown.z_marginal(&m), Err(Error::Validation(_))));
    }
}
