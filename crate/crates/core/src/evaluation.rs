//! Synthetic ground truth, RCA metrics and causal-estimate fidelity.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, RoxRecord};
use crate::error::{Error, Result};
use crate::inference::{adjusted_solution, interventional_solution, rca_index};
use crate::model::{
    Assignment, CategoricalDomain, CbnModel, Cpts, Domains, FitOptions, ModelMeta, SparseCpt, Var, SCHEMA_VERSION,
};

/// Counts per unit of probability in a generated true model.
const TRUTH_SCALE: f64 = 1e9;
const TRUTH_ALPHA: f64 = 1e-9;
pub const KEYWORDS_PER_TEXT: usize = 8;

/// Recipe for a random true model.
///
/// `signal` is the mass `P(O | c, z)` puts on the observation category
/// reserved for cause `c`; `confounding` in `[0,1]` mixes subsystem-specific
/// rows into `P(C|Z)` and `P(S|C,Z,O)`. `noise_p` is the chance a pseudo-text
/// has one keyword swapped for another category's.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthSpec {
    pub sizes: [usize; 4],
    pub concentration: f64,
    pub signal: f64,
    pub confounding: f64,
    pub noise_p: f64,
    pub n_environments: usize,
    pub seed: u64,
}

impl Default for GroundTruthSpec {
    fn default() -> Self {
        GroundTruthSpec {
            sizes: [3, 5, 5, 6],
            concentration: 1.0,
            signal: 0.8,
            confounding: 0.5,
            noise_p: 0.1,
            n_environments: 2,
            seed: 0,
        }
    }
}

impl GroundTruthSpec {
    /// Twenty causes, balanced, Bayes-optimal RCA accuracy close to 0.9.
    pub fn reference_scale(seed: u64) -> Self {
        GroundTruthSpec {
            sizes: [4, 20, 20, 12],
            concentration: 20.0,
            signal: 0.895,
            confounding: 0.5,
            noise_p: 0.1,
            n_environments: 2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sizes.contains(&0) {
            return Err(Error::Argument(format!("domain sizes must be at least 1, got {:?}", self.sizes)));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::Argument(format!("concentration must be positive, got {}", self.concentration)));
        }
        for (name, v) in [("signal", self.signal), ("confounding", self.confounding), ("noise_p", self.noise_p)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Argument(format!("{name} must be in [0,1], got {v}")));
            }
        }
        if self.n_environments == 0 {
            return Err(Error::Argument("n_environments must be at least 1".into()));
        }
        Ok(())
    }
}

fn dirichlet<R: Rng>(rng: &mut R, n: usize, concentration: f64) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    let gamma = Gamma::new(concentration, 1.0).expect("positive shape");
    let draws: Vec<f64> = (0..n).map(|_| gamma.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    if total > 0.0 {
        draws.iter().map(|d| d / total).collect()
    } else {
        vec![1.0 / n as f64; n]
    }
}

fn mix(a: &[f64], b: &[f64], w: f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect()
}

fn table(child: Var, parents: Vec<Var>, child_size: usize, parent_sizes: Vec<usize>, rows: Vec<(Vec<u32>, Vec<f64>)>) -> Result<SparseCpt> {
    let triples = rows.into_iter().flat_map(|(ctx, row)| {
        row.into_iter()
            .enumerate()
            .map(move |(i, p)| (ctx.clone(), i as u32, (p * TRUTH_SCALE).round() as u64))
    });
    SparseCpt::from_counts(child, parents, child_size, parent_sizes, TRUTH_ALPHA, vec![], triples)
}

pub fn subsystem_label(z: usize) -> String {
    format!("subsystem{z}")
}

pub fn cause_label(c: usize) -> String {
    format!("cause{c:02}")
}

pub fn environment_label(e: usize) -> String {
    format!("env{e}")
}

/// Draw a true model from the recipe.
pub fn true_model(spec: &GroundTruthSpec) -> Result<CbnModel> {
    spec.validate()?;
    let [nz, nc, no, ns] = spec.sizes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let conc = spec.concentration;
    let gamma = spec.confounding;

    let env_z: Vec<Vec<f64>> = (0..spec.n_environments).map(|_| dirichlet(&mut rng, nz, conc)).collect();
    let p_z: Vec<f64> = (0..nz)
        .map(|z| env_z.iter().map(|m| m[z]).sum::<f64>() / env_z.len() as f64)
        .collect();

    let base_c = dirichlet(&mut rng, nc, conc);
    let c_rows: Vec<_> = (0..nz)
        .map(|z| (vec![z as u32], mix(&base_c, &dirichlet(&mut rng, nc, conc), gamma)))
        .collect();

    let mut o_rows = Vec::with_capacity(nc * nz);
    for c in 0..nc {
        for z in 0..nz {
            let mut row: Vec<f64> = dirichlet(&mut rng, no, conc).iter().map(|p| p * (1.0 - spec.signal)).collect();
            row[c % no] += spec.signal;
            o_rows.push((vec![c as u32, z as u32], row));
        }
    }

    let by_cause: Vec<Vec<Vec<f64>>> = (0..nc)
        .map(|_| (0..no).map(|_| dirichlet(&mut rng, ns, conc)).collect())
        .collect();
    let by_subsystem: Vec<Vec<Vec<f64>>> = (0..nz)
        .map(|_| (0..no).map(|_| dirichlet(&mut rng, ns, conc)).collect())
        .collect();
    let mut s_rows = Vec::with_capacity(nc * nz * no);
    for c in 0..nc {
        for z in 0..nz {
            for o in 0..no {
                s_rows.push((vec![c as u32, z as u32, o as u32], mix(&by_cause[c][o], &by_subsystem[z][o], gamma)));
            }
        }
    }

    let domains = Domains {
        z: CategoricalDomain::new(Var::Z, (0..nz).map(subsystem_label).collect())?,
        c: CategoricalDomain::new(Var::C, (0..nc).map(cause_label).collect())?,
        o: CategoricalDomain::numbered(Var::O, no)?,
        s: CategoricalDomain::numbered(Var::S, ns)?,
    };
    let cpts = Cpts {
        z: table(Var::Z, vec![], nz, vec![], vec![(vec![], p_z)])?,
        c: table(Var::C, vec![Var::Z], nc, vec![nz], c_rows)?,
        o: table(Var::O, vec![Var::C, Var::Z], no, vec![nc, nz], o_rows)?,
        s: table(Var::S, vec![Var::C, Var::Z, Var::O], ns, vec![nc, nz, no], s_rows)?,
    };
    let model = CbnModel {
        schema_version: SCHEMA_VERSION,
        meta: ModelMeta {
            seed: spec.seed,
            alpha: TRUTH_ALPHA,
            fit_timestamp: 0,
            training_records: 0,
            corpus_digest: String::new(),
        },
        domains,
        cpts,
        quantizers: None,
        env_z_marginals: env_z.into_iter().enumerate().map(|(e, m)| (environment_label(e), m)).collect(),
    };
    model.validate()?;
    Ok(model)
}

fn keyword(prefix: &str, category: usize, k: usize) -> String {
    format!("{prefix}{category}_kw{}", k + 1)
}

fn pseudo_text<R: Rng>(rng: &mut R, prefix: &str, category: usize, n_categories: usize, noise_p: f64) -> String {
    let mut words: Vec<String> = (0..KEYWORDS_PER_TEXT).map(|k| keyword(prefix, category, k)).collect();
    if n_categories > 1 && rng.gen_bool(noise_p) {
        let slot = rng.gen_range(0..KEYWORDS_PER_TEXT);
        let mut other = rng.gen_range(0..n_categories - 1);
        if other >= category {
            other += 1;
        }
        words[slot] = keyword(prefix, other, rng.gen_range(0..KEYWORDS_PER_TEXT));
    }
    words.join(" ")
}

/// Majority category encoded in a pseudo-text, if any keyword carries `prefix`.
pub fn decode_category(text: &str, prefix: &str) -> Option<usize> {
    let mut votes: BTreeMap<usize, usize> = BTreeMap::new();
    for word in text.split_whitespace() {
        let Some(rest) = word.strip_prefix(prefix) else { continue };
        let Some((digits, _)) = rest.split_once("_kw") else { continue };
        if let Ok(c) = digits.parse() {
            *votes.entry(c).or_default() += 1;
        }
    }
    votes.into_iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0))).map(|(c, _)| c)
}

fn sample<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    WeightedIndex::new(probs).expect("valid probability row").sample(rng)
}

/// Sample `n` records from a freshly drawn true model.
pub fn generate_synthetic(spec: &GroundTruthSpec, n: usize) -> Result<(Corpus, CbnModel)> {
    if n == 0 {
        return Err(Error::Argument("synthetic corpus needs at least one record".into()));
    }
    let truth = true_model(spec)?;
    let [_, _, no, ns] = spec.sizes;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_da7a);
    let envs: Vec<(&String, &Vec<f64>)> = truth.env_z_marginals.iter().collect();
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let (env, pz) = envs[rng.gen_range(0..envs.len())];
        let z = sample(&mut rng, pz);
        let c = sample(&mut rng, &truth.p_c_given_z(z));
        let o = sample(&mut rng, &truth.p_o_given(c, z));
        let s = sample(&mut rng, &truth.p_s_given(c, z, o));
        records.push(RoxRecord {
            record_id: i.to_string(),
            environment: env.clone(),
            subsystem: truth.domains.z.label(z).to_string(),
            root_cause: truth.domains.c.label(c).to_string(),
            observation: pseudo_text(&mut rng, "obs", o, no, spec.noise_p),
            solution: pseudo_text(&mut rng, "sol", s, ns, spec.noise_p),
        });
    }
    let corpus = Corpus::from_records(records, format!("synthetic:seed={}", spec.seed))?;
    Ok((corpus, truth))
}

/// Fit on the categories encoded in pseudo-texts, bypassing the quantizers,
/// so the result shares the true model's domains.
pub fn fit_on_true_categories(corpus: &Corpus, truth: &CbnModel, options: &FitOptions) -> Result<CbnModel> {
    let mut rows = Vec::with_capacity(corpus.len());
    let mut env_counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
    for r in &corpus.records {
        let decode = |text: &str, prefix: &str| {
            decode_category(text, prefix)
                .ok_or_else(|| Error::Validation(format!("record {} carries no `{prefix}` keyword", r.record_id)))
        };
        let a = Assignment {
            z: truth.domains.z.index_of(&r.subsystem)?,
            c: truth.domains.c.index_of(&r.root_cause)?,
            o: decode(&r.observation, "obs")?,
            s: decode(&r.solution, "sol")?,
        };
        env_counts
            .entry(r.environment.clone())
            .or_insert_with(|| vec![0; truth.domains.z.size()])[a.z] += 1;
        rows.push(a);
    }
    let env = env_counts
        .into_iter()
        .map(|(e, counts)| (e, crate::model::smoothed(&counts, options.alpha)))
        .collect();
    CbnModel::from_assignments(truth.domains.clone(), &rows, env, options)
}

/// Best achievable top-1 accuracy for a cause predictor that sees only O.
pub fn bayes_optimal_rca(truth: &CbnModel) -> f64 {
    let [nz, nc, no, _] = truth.domains.sizes();
    let p_z = truth.p_z();
    let mut joint = vec![vec![0.0; nc]; no];
    for (z, &pz) in p_z.iter().enumerate().take(nz) {
        for (c, pc) in truth.p_c_given_z(z).into_iter().enumerate() {
            for (o, po) in truth.p_o_given(c, z).into_iter().enumerate() {
                joint[o][c] += pz * pc * po;
            }
        }
    }
    joint.iter().map(|row| row.iter().cloned().fold(0.0, f64::max)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub label: String,
    pub precision: f64,
    pub recall: f64,
    pub support: usize,
}

/// Top-1 cause prediction quality. Precision and recall are macro averages
/// over causes present in the test set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub averaging: String,
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class: Vec<ClassMetrics>,
    pub n_test: usize,
}

impl MetricsReport {
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Result<MetricsReport> {
        #[derive(Default)]
        struct Tally {
            support: usize,
            predicted: usize,
            hit: usize,
        }
        let mut per: BTreeMap<&str, Tally> = BTreeMap::new();
        let mut n = 0;
        let mut correct = 0;
        for (truth, predicted) in pairs {
            n += 1;
            per.entry(truth).or_default().support += 1;
            per.entry(predicted).or_default().predicted += 1;
            if truth == predicted {
                correct += 1;
                per.entry(truth).or_default().hit += 1;
            }
        }
        if n == 0 {
            return Err(Error::Argument("test corpus is empty".into()));
        }
        let per_class: Vec<ClassMetrics> = per
            .into_iter()
            .filter(|(_, t)| t.support > 0)
            .map(|(label, t)| ClassMetrics {
                label: label.to_string(),
                precision: if t.predicted == 0 { 0.0 } else { t.hit as f64 / t.predicted as f64 },
                recall: t.hit as f64 / t.support as f64,
                support: t.support,
            })
            .collect();
        let k = per_class.len() as f64;
        Ok(MetricsReport {
            averaging: "macro".into(),
            accuracy: correct as f64 / n as f64,
            macro_precision: per_class.iter().map(|m| m.precision).sum::<f64>() / k,
            macro_recall: per_class.iter().map(|m| m.recall).sum::<f64>() / k,
            per_class,
            n_test: n,
        })
    }
}

/// Compare the top-1 diagnosis of each test observation with its recorded
/// root cause.
pub fn evaluate_rca(model: &CbnModel, test: &Corpus) -> Result<MetricsReport> {
    if test.is_empty() {
        return Err(Error::Argument("test corpus is empty".into()));
    }
    let q = model.quantizers()?;
    let texts: Vec<_> = test.records.iter().map(|r| q.cleaning.clean(&r.observation)).collect();
    let o_ids = q.observation.assign_batch(&texts)?;
    let mut best: BTreeMap<usize, String> = BTreeMap::new();
    for &o in &o_ids {
        if let std::collections::btree_map::Entry::Vacant(e) = best.entry(o) {
            e.insert(rca_index(model, o, None)?.top().label.clone());
        }
    }
    MetricsReport::from_pairs(
        test.records
            .iter()
            .zip(&o_ids)
            .map(|(r, o)| (r.root_cause.as_str(), best[o].as_str())),
    )
}

fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityReport {
    /// Mean over o of TV between the two `P(S | do(O=o))`.
    pub interventional_tv: f64,
    pub transport_target: String,
    pub transport_tv: f64,
}

/// Distance between a model's causal estimates and the true model's.
///
/// The transport target is the first environment both models know, else a
/// uniform subsystem distribution.
pub fn evaluate_causal_fidelity(model: &CbnModel, truth: &CbnModel) -> Result<FidelityReport> {
    for v in Var::ALL {
        let (a, b) = (model.domains.get(v), truth.domains.get(v));
        if a.labels() != b.labels() {
            return Err(Error::Validation(format!(
                "{} domains differ: {} vs {} categories",
                v.describe(),
                a.size(),
                b.size()
            )));
        }
    }
    let no = truth.domains.o.size();
    let mean_tv = |f: &dyn Fn(&CbnModel, usize) -> Vec<f64>| {
        (0..no).map(|o| total_variation(&f(model, o), &f(truth, o))).sum::<f64>() / no as f64
    };
    let interventional_tv = mean_tv(&|m, o| interventional_solution(m, o));

    let shared = truth.env_z_marginals.keys().find(|e| model.env_z_marginals.contains_key(*e));
    let (transport_target, transport_tv) = match shared {
        Some(env) => (
            env.clone(),
            mean_tv(&|m, o| adjusted_solution(m, o, &m.env_z_marginals[env])),
        ),
        None => {
            let nz = truth.domains.z.size();
            let uniform = vec![1.0 / nz as f64; nz];
            ("uniform".to_string(), mean_tv(&|m, o| adjusted_solution(m, o, &uniform)))
        }
    };
    Ok(FidelityReport {
        interventional_tv,
        transport_target,
        transport_tv,
    })
}
