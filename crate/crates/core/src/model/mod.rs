//! The causal Bayesian network over subsystem (Z), root cause (C),
//! observation category (O) and solution category (S):
//!
//! ```text
//!   Z ──► C ──► O ──► S
//!   │     │     ▲     ▲
//!   │     └─────┼─────┤
//!   └───────────┴─────┘
//! ```
//!
//! `P(z,c,o,s) = P(z) P(c|z) P(o|c,z) P(s|c,z,o)`.

mod cpt;
mod persist;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use cpt::{CptRepr, SparseCpt};
pub use persist::{load, read_file, save, write_file, SCHEMA_VERSION};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::quantizer::Quantizer;
use crate::text::CleanConfig;

pub const DEFAULT_ALPHA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Var {
    Z,
    C,
    O,
    S,
}

impl Var {
    pub const ALL: [Var; 4] = [Var::Z, Var::C, Var::O, Var::S];

    pub fn name(self) -> &'static str {
        match self {
            Var::Z => "Z",
            Var::C => "C",
            Var::O => "O",
            Var::S => "S",
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Var::Z => "subsystem",
            Var::C => "root cause",
            Var::O => "observation category",
            Var::S => "solution category",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn parse(s: &str) -> Option<Var> {
        match s.to_ascii_uppercase().as_str() {
            "Z" => Some(Var::Z),
            "C" => Some(Var::C),
            "O" => Some(Var::O),
            "S" => Some(Var::S),
            _ => None,
        }
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered distinct labels of one variable.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "DomainRepr", into = "DomainRepr")]
pub struct CategoricalDomain {
    name: Var,
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct DomainRepr {
    name: Var,
    labels: Vec<String>,
}

impl From<CategoricalDomain> for DomainRepr {
    fn from(d: CategoricalDomain) -> Self {
        DomainRepr {
            name: d.name,
            labels: d.labels,
        }
    }
}

impl TryFrom<DomainRepr> for CategoricalDomain {
    type Error = Error;
    fn try_from(r: DomainRepr) -> Result<Self> {
        CategoricalDomain::new(r.name, r.labels)
    }
}

impl PartialEq for CategoricalDomain {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.labels == other.labels
    }
}

impl CategoricalDomain {
    pub fn new(name: Var, labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Consistency(format!("domain {name} is empty")));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, l) in labels.iter().enumerate() {
            if index.insert(l.clone(), i).is_some() {
                return Err(Error::Consistency(format!("domain {name} repeats label `{l}`")));
            }
        }
        Ok(CategoricalDomain { name, labels, index })
    }

    /// Labels `"0".."n-1"`, used for quantizer categories.
    pub fn numbered(name: Var, n: usize) -> Result<Self> {
        CategoricalDomain::new(name, (0..n).map(|i| i.to_string()).collect())
    }

    pub fn name(&self) -> Var {
        self.name
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::domain(self.name.describe(), label))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Domains {
    pub z: CategoricalDomain,
    pub c: CategoricalDomain,
    pub o: CategoricalDomain,
    pub s: CategoricalDomain,
}

impl Domains {
    pub fn get(&self, v: Var) -> &CategoricalDomain {
        match v {
            Var::Z => &self.z,
            Var::C => &self.c,
            Var::O => &self.o,
            Var::S => &self.s,
        }
    }

    pub fn sizes(&self) -> [usize; 4] {
        [self.z.size(), self.c.size(), self.o.size(), self.s.size()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cpts {
    pub z: SparseCpt,
    pub c: SparseCpt,
    pub o: SparseCpt,
    pub s: SparseCpt,
}

/// Quantizers and the cleaning settings they were trained with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantizers {
    pub cleaning: CleanConfig,
    pub observation: Quantizer,
    pub solution: Quantizer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub seed: u64,
    pub alpha: f64,
    /// Unix seconds; supplied by the caller so that fits are reproducible.
    pub fit_timestamp: u64,
    pub training_records: usize,
    /// SHA-256 over the training records, hex.
    pub corpus_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbnModel {
    pub schema_version: u32,
    pub meta: ModelMeta,
    pub domains: Domains,
    pub cpts: Cpts,
    pub quantizers: Option<Quantizers>,
    /// Smoothed `P(Z | environment)` per environment label.
    pub env_z_marginals: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub alpha: f64,
    pub seed: u64,
    pub fit_timestamp: u64,
    /// Coarser parent sets tried, in order, for unseen `(C,Z,O)` contexts.
    pub solution_backoff: Vec<Vec<Var>>,
    /// Coarser parent sets tried for unseen `(C,Z)` contexts of `P(O|C,Z)`.
    pub observation_backoff: Vec<Vec<Var>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            alpha: DEFAULT_ALPHA,
            seed: 0,
            fit_timestamp: 0,
            solution_backoff: vec![vec![Var::C, Var::Z], vec![Var::Z]],
            observation_backoff: Vec::new(),
        }
    }
}

pub fn corpus_digest(corpus: &Corpus) -> String {
    let mut h = Sha256::new();
    for r in &corpus.records {
        for field in [&r.record_id, &r.environment, &r.subsystem, &r.root_cause, &r.observation, &r.solution] {
            h.update((field.len() as u64).to_le_bytes());
            h.update(field.as_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Smoothed categorical estimate from counts.
pub(crate) fn smoothed(counts: &[u64], alpha: f64) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    let denom = total as f64 + alpha * counts.len() as f64;
    counts.iter().map(|&n| (n as f64 + alpha) / denom).collect()
}

/// Validated category index per variable, in `[Z, C, O, S]` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub z: usize,
    pub c: usize,
    pub o: usize,
    pub s: usize,
}

impl CbnModel {
    /// Count co-occurrences over `train` and smooth them.
    pub fn fit(train: &Corpus, quantizers: Quantizers, options: &FitOptions) -> Result<CbnModel> {
        if train.is_empty() {
            return Err(Error::Config("cannot fit on an empty training corpus".into()));
        }
        quantizers.observation.codebook.validate()?;
        quantizers.solution.codebook.validate()?;

        let z_labels: BTreeSet<&str> = train.records.iter().map(|r| r.subsystem.as_str()).collect();
        let c_labels: BTreeSet<&str> = train.records.iter().map(|r| r.root_cause.as_str()).collect();
        let domains = Domains {
            z: CategoricalDomain::new(Var::Z, z_labels.into_iter().map(String::from).collect())?,
            c: CategoricalDomain::new(Var::C, c_labels.into_iter().map(String::from).collect())?,
            o: CategoricalDomain::numbered(Var::O, quantizers.observation.n_categories())?,
            s: CategoricalDomain::numbered(Var::S, quantizers.solution.n_categories())?,
        };

        let clean = &quantizers.cleaning;
        let obs_texts: Vec<_> = train.records.iter().map(|r| clean.clean(&r.observation)).collect();
        let sol_texts: Vec<_> = train.records.iter().map(|r| clean.clean(&r.solution)).collect();
        let o_ids = quantizers.observation.assign_batch(&obs_texts)?;
        let s_ids = quantizers.solution.assign_batch(&sol_texts)?;

        let mut rows = Vec::with_capacity(train.len());
        let mut env_counts: BTreeMap<String, Vec<u64>> = BTreeMap::new();
        for ((r, &o), &s) in train.records.iter().zip(&o_ids).zip(&s_ids) {
            let z = domains.z.index_of(&r.subsystem)?;
            let c = domains.c.index_of(&r.root_cause)?;
            rows.push(Assignment { z, c, o, s });
            env_counts
                .entry(r.environment.clone())
                .or_insert_with(|| vec![0; domains.z.size()])[z] += 1;
        }

        let cpts = cpts_from_assignments(&domains, &rows, options)?;
        let env_z_marginals = env_counts
            .into_iter()
            .map(|(env, counts)| (env, smoothed(&counts, options.alpha)))
            .collect();

        let model = CbnModel {
            schema_version: SCHEMA_VERSION,
            meta: ModelMeta {
                seed: options.seed,
                alpha: options.alpha,
                fit_timestamp: options.fit_timestamp,
                training_records: train.len(),
                corpus_digest: corpus_digest(train),
            },
            domains,
            cpts,
            quantizers: Some(quantizers),
            env_z_marginals,
        };
        model.validate()?;
        Ok(model)
    }

    /// Model from already-categorized tuples (no text quantizers).
    pub fn from_assignments(domains: Domains, rows: &[Assignment], env_z_marginals: BTreeMap<String, Vec<f64>>, options: &FitOptions) -> Result<CbnModel> {
        let cpts = cpts_from_assignments(&domains, rows, options)?;
        let model = CbnModel {
            schema_version: SCHEMA_VERSION,
            meta: ModelMeta {
                seed: options.seed,
                alpha: options.alpha,
                fit_timestamp: options.fit_timestamp,
                training_records: rows.len(),
                corpus_digest: String::new(),
            },
            domains,
            cpts,
            quantizers: None,
            env_z_marginals,
        };
        model.validate()?;
        Ok(model)
    }

    /// Checks the graph shape and domain/table agreement.
    pub fn validate(&self) -> Result<()> {
        let expect = [
            (&self.cpts.z, Var::Z, vec![]),
            (&self.cpts.c, Var::C, vec![Var::Z]),
            (&self.cpts.o, Var::O, vec![Var::C, Var::Z]),
            (&self.cpts.s, Var::S, vec![Var::C, Var::Z, Var::O]),
        ];
        for (cpt, child, parents) in expect {
            if cpt.child() != child || cpt.parents() != parents.as_slice() {
                return Err(Error::Consistency(format!(
                    "table for {child} must have parents {parents:?}, found {:?} -> {}",
                    cpt.parents(),
                    cpt.child()
                )));
            }
            if cpt.child_size() != self.domains.get(child).size() {
                return Err(Error::Consistency(format!("table for {child} disagrees with its domain size")));
            }
        }
        for (env, m) in &self.env_z_marginals {
            if m.len() != self.domains.z.size() || (m.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(Error::Consistency(format!("Z marginal for environment `{env}` is malformed")));
            }
        }
        if let Some(q) = &self.quantizers {
            if q.observation.n_categories() != self.domains.o.size() || q.solution.n_categories() != self.domains.s.size() {
                return Err(Error::Consistency("quantizer category counts disagree with O/S domains".into()));
            }
        }
        Ok(())
    }

    pub fn quantizers(&self) -> Result<&Quantizers> {
        self.quantizers
            .as_ref()
            .ok_or_else(|| Error::Config("model carries no text quantizers".into()))
    }

    pub fn environments(&self) -> Vec<String> {
        self.env_z_marginals.keys().cloned().collect()
    }

    pub fn p_z(&self) -> Vec<f64> {
        self.cpts.z.row(&[])
    }

    pub fn p_c_given_z(&self, z: usize) -> Vec<f64> {
        self.cpts.c.row(&[z as u32])
    }

    pub fn p_o_given(&self, c: usize, z: usize) -> Vec<f64> {
        self.cpts.o.row(&[c as u32, z as u32])
    }

    pub fn p_s_given(&self, c: usize, z: usize, o: usize) -> Vec<f64> {
        self.cpts.s.row(&[c as u32, z as u32, o as u32])
    }

    pub fn resolve(&self, z: &str, c: &str, o: &str, s: &str) -> Result<Assignment> {
        Ok(Assignment {
            z: self.domains.z.index_of(z)?,
            c: self.domains.c.index_of(c)?,
            o: self.domains.o.index_of(o)?,
            s: self.domains.s.index_of(s)?,
        })
    }

    /// Factorized joint probability by index.
    pub fn joint_index(&self, a: Assignment) -> f64 {
        let (z, c, o, s) = (a.z as u32, a.c as u32, a.o as u32, a.s as u32);
        self.cpts.z.prob(&[], z)
            * self.cpts.c.prob(&[z], c)
            * self.cpts.o.prob(&[c, z], o)
            * self.cpts.s.prob(&[c, z, o], s)
    }

    /// `P(z) P(c|z) P(o|c,z) P(s|c,z,o)` by label.
    pub fn joint(&self, z: &str, c: &str, o: &str, s: &str) -> Result<f64> {
        Ok(self.joint_index(self.resolve(z, c, o, s)?))
    }

    /// Same counts with a different smoothing strength.
    pub fn with_alpha(&self, alpha: f64) -> Result<CbnModel> {
        let mut m = self.clone();
        m.cpts = Cpts {
            z: self.cpts.z.with_alpha(alpha)?,
            c: self.cpts.c.with_alpha(alpha)?,
            o: self.cpts.o.with_alpha(alpha)?,
            s: self.cpts.s.with_alpha(alpha)?,
        };
        m.meta.alpha = alpha;
        Ok(m)
    }

    /// Domain sizes and table sparsity, for CLI and service introspection.
    pub fn summary(&self) -> ModelSummary {
        let [z, c, o, s] = self.domains.sizes();
        ModelSummary {
            schema_version: self.schema_version,
            domain_sizes: DomainSizes { z, c, o, s },
            cpt_entries: [&self.cpts.z, &self.cpts.c, &self.cpts.o, &self.cpts.s]
                .iter()
                .map(|t| t.n_entries())
                .collect(),
            environments: self.environments(),
            meta: self.meta.clone(),
        }
    }
}

fn cpts_from_assignments(domains: &Domains, rows: &[Assignment], options: &FitOptions) -> Result<Cpts> {
    if rows.is_empty() {
        return Err(Error::Config("cannot fit on an empty training corpus".into()));
    }
    let [nz, nc, no, ns] = domains.sizes();
    for r in rows {
        if r.z >= nz || r.c >= nc || r.o >= no || r.s >= ns {
            return Err(Error::Consistency(format!("assignment {r:?} outside the domains")));
        }
    }
    let alpha = options.alpha;
    let tally = |key: &dyn Fn(&Assignment) -> (Vec<u32>, u32)| {
        let mut m: BTreeMap<(Vec<u32>, u32), u64> = BTreeMap::new();
        for r in rows {
            *m.entry(key(r)).or_default() += 1;
        }
        m.into_iter().map(|((ctx, c), n)| (ctx, c, n)).collect::<Vec<_>>()
    };
    Ok(Cpts {
        z: SparseCpt::from_counts(Var::Z, vec![], nz, vec![], alpha, vec![], tally(&|r| (vec![], r.z as u32)))?,
        c: SparseCpt::from_counts(Var::C, vec![Var::Z], nc, vec![nz], alpha, vec![], tally(&|r| (vec![r.z as u32], r.c as u32)))?,
        o: SparseCpt::from_counts(
            Var::O,
            vec![Var::C, Var::Z],
            no,
            vec![nc, nz],
            alpha,
            options.observation_backoff.clone(),
            tally(&|r| (vec![r.c as u32, r.z as u32], r.o as u32)),
        )?,
        s: SparseCpt::from_counts(
            Var::S,
            vec![Var::C, Var::Z, Var::O],
            ns,
            vec![nc, nz, no],
            alpha,
            options.solution_backoff.clone(),
            tally(&|r| (vec![r.c as u32, r.z as u32, r.o as u32], r.s as u32)),
        )?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSizes {
    pub z: usize,
    pub c: usize,
    pub o: usize,
    pub s: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub schema_version: u32,
    pub domain_sizes: DomainSizes,
    pub cpt_entries: Vec<usize>,
    pub environments: Vec<String>,
    pub meta: ModelMeta,
}
