//! Request-level operations shared by the CLI, the HTTP service and the C ABI.
//! Every function here is a pure function of the loaded snapshot and the
//! request (plus the seed it carries).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::advisory::{build_prompt, Advisory, Generator, SolutionIndex, StubGenerator, DEFAULT_RETRIEVE_K};
use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::inference::{
    adjusted_solution, interventional_solution, observation_category, rca_index, recourse, solution_category, Evidence,
    NoiseMode, NoiseModel, RankedDistribution, TransportTarget,
};
use crate::model::{read_file, CbnModel, ModelMeta, ModelSummary, Var};
use crate::quantizer::EmbedderConfig;

pub const DEFAULT_TOP_K: usize = 5;

/// A loaded model plus the optional training corpus used for exemplar
/// retrieval and record lookups.
pub struct Engine {
    pub model: CbnModel,
    pub corpus: Option<Corpus>,
    pub index: Option<SolutionIndex>,
    generator: Arc<dyn Generator>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine")
            .field("model", &self.model.summary())
            .field("corpus_records", &self.corpus.as_ref().map(Corpus::len))
            .finish()
    }
}

impl Engine {
    pub fn new(model: CbnModel, corpus: Option<Corpus>) -> Result<Engine> {
        model.quantizers()?;
        let index = match &corpus {
            Some(c) => Some(SolutionIndex::build(c, model.quantizers()?)?),
            None => None,
        };
        Ok(Engine {
            model,
            corpus,
            index,
            generator: Arc::new(StubGenerator),
        })
    }

    pub fn open(model_path: &Path, corpus_path: Option<&Path>) -> Result<Engine> {
        let model = read_file(model_path)?;
        let corpus = corpus_path.map(|p| Corpus::open(p).map(|(c, _)| c)).transpose()?;
        Engine::new(model, corpus)
    }

    pub fn with_generator(mut self, generator: Arc<dyn Generator>) -> Self {
        self.generator = generator;
        self
    }

    /// Point an external embedder at a different endpoint; the hashed
    /// embedder is left alone.
    pub fn with_embedder_url(mut self, url: &str) -> Result<Self> {
        let q = self
            .model
            .quantizers
            .as_mut()
            .ok_or_else(|| Error::Config("model has no quantizers".into()))?;
        for quantizer in [&mut q.observation, &mut q.solution] {
            if let EmbedderConfig::External { url: u, .. } = &mut quantizer.embedder {
                *u = url.to_string();
            }
        }
        Ok(self)
    }

    pub fn info(&self) -> ModelSummary {
        self.model.summary()
    }

    fn exemplars(&self, category: usize, k: usize) -> Result<Vec<String>> {
        match &self.index {
            Some(index) => index.retrieve(category, k),
            None => Ok(Vec::new()),
        }
    }

    fn solution_entries(&self, ranked: &RankedDistribution, k_retrieve: usize) -> Result<Vec<SolutionEntry>> {
        ranked
            .entries
            .iter()
            .map(|e| {
                let category = self.model.domains.s.index_of(&e.label)?;
                Ok(SolutionEntry {
                    label: e.label.clone(),
                    probability: e.probability,
                    exemplars: self.exemplars(category, k_retrieve)?,
                })
            })
            .collect()
    }

    pub fn diagnose(&self, req: &DiagnoseRequest) -> Result<DiagnoseResponse> {
        let top_k = check_top_k(req.top_k)?;
        let o = observation_category(&self.model, &req.text)?;
        Ok(DiagnoseResponse {
            observation_category: self.model.domains.o.label(o).to_string(),
            causes: rca_index(&self.model, o, None)?.truncated(top_k),
            solutions: None,
            advisory: None,
            model_meta: self.model.meta.clone(),
        })
    }

    pub fn solve(&self, req: &SolveRequest) -> Result<DiagnoseResponse> {
        let top_k = check_top_k(req.top_k)?;
        let k_retrieve = req.k_retrieve.unwrap_or(DEFAULT_RETRIEVE_K);
        let o = observation_category(&self.model, &req.text)?;
        let causes = rca_index(&self.model, o, None)?.truncated(top_k);
        let ranked = RankedDistribution::from_dense(&self.model.domains.s, &interventional_solution(&self.model, o))
            .truncated(top_k);
        let solutions = self.solution_entries(&ranked, k_retrieve)?;
        let advisory = if req.generate {
            let context = solutions.first().map(|s| s.exemplars.clone()).unwrap_or_default();
            Some(self.generator.generate(&build_prompt(&req.text, &causes, &context))?)
        } else {
            None
        };
        Ok(DiagnoseResponse {
            observation_category: self.model.domains.o.label(o).to_string(),
            causes,
            solutions: Some(solutions),
            advisory,
            model_meta: self.model.meta.clone(),
        })
    }

    pub fn transport(&self, req: &TransportRequest) -> Result<TransportResponse> {
        let top_k = check_top_k(req.top_k)?;
        let target = match (&req.target_env, &req.z_marginal) {
            (Some(env), None) => TransportTarget::Environment(env.clone()),
            (None, Some(m)) => TransportTarget::Marginal(m.clone()),
            _ => {
                return Err(Error::Argument(
                    "give exactly one of target_env or z_marginal".into(),
                ))
            }
        };
        let pz = target.z_marginal(&self.model)?;
        let o = observation_category(&self.model, &req.text)?;
        let ranked = RankedDistribution::from_dense(&self.model.domains.s, &adjusted_solution(&self.model, o, &pz))
            .truncated(top_k);
        Ok(TransportResponse {
            target,
            z_marginal: self
                .model
                .domains
                .z
                .labels()
                .iter()
                .cloned()
                .zip(pz)
                .collect(),
            observation_category: self.model.domains.o.label(o).to_string(),
            solutions: self.solution_entries(&ranked, req.k_retrieve.unwrap_or(0))?,
            model_meta: self.model.meta.clone(),
        })
    }

    /// `default_seed` is used when the request carries none.
    pub fn recourse(&self, req: &RecourseRequest, default_seed: u64) -> Result<RecourseResponse> {
        let factual = match (&req.factual, &req.record_id) {
            (Some(f), None) => f.clone(),
            (None, Some(id)) => {
                let corpus = self
                    .corpus
                    .as_ref()
                    .ok_or_else(|| Error::Config("record lookup needs a corpus to be loaded".into()))?;
                let r = corpus
                    .get(id)
                    .ok_or_else(|| Error::Lookup(format!("record `{id}` is not in the corpus")))?;
                Factual {
                    z: r.subsystem.clone(),
                    c: r.root_cause.clone(),
                    o_text: r.observation.clone(),
                    s_text: r.solution.clone(),
                }
            }
            _ => return Err(Error::Argument("give exactly one of factual or record_id".into())),
        };
        let defaults = NoiseModel::default();
        let noise = NoiseModel {
            mode: req.mode.unwrap_or(defaults.mode),
            samples: req.samples.unwrap_or(defaults.samples),
            seed: req.seed.unwrap_or(default_seed),
        };
        let o = observation_category(&self.model, &factual.o_text)?;
        let s = solution_category(&self.model, &factual.s_text)?;
        let evidence = Evidence::default()
            .with(Var::Z, factual.z.clone())
            .with(Var::C, factual.c.clone())
            .with(Var::O, self.model.domains.o.label(o))
            .with(Var::S, self.model.domains.s.label(s));
        let counterfactual = recourse(&self.model, &evidence, &req.alt_text, &noise)?;
        let alt_o = observation_category(&self.model, &req.alt_text)?;
        Ok(RecourseResponse {
            factual: evidence,
            alternative_observation: self.model.domains.o.label(alt_o).to_string(),
            counterfactual,
            noise,
            model_meta: self.model.meta.clone(),
        })
    }
}

fn check_top_k(top_k: Option<usize>) -> Result<usize> {
    match top_k.unwrap_or(DEFAULT_TOP_K) {
        0 => Err(Error::Argument("top_k must be at least 1".into())),
        k => Ok(k),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseRequest {
    pub text: String,
    #[serde(default)]
    pub top_k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRequest {
    pub text: String,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub generate: bool,
    #[serde(default)]
    pub k_retrieve: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportRequest {
    pub text: String,
    #[serde(default)]
    pub target_env: Option<String>,
    #[serde(default)]
    pub z_marginal: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default)]
    pub k_retrieve: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factual {
    pub z: String,
    pub c: String,
    pub o_text: String,
    pub s_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecourseRequest {
    #[serde(default)]
    pub factual: Option<Factual>,
    #[serde(default)]
    pub record_id: Option<String>,
    pub alt_text: String,
    #[serde(default)]
    pub mode: Option<NoiseMode>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionEntry {
    pub label: String,
    pub probability: f64,
    pub exemplars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseResponse {
    pub observation_category: String,
    pub causes: RankedDistribution,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solutions: Option<Vec<SolutionEntry>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub advisory: Option<Advisory>,
    pub model_meta: ModelMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransportResponse {
    pub target: TransportTarget,
    pub z_marginal: BTreeMap<String, f64>,
    pub observation_category: String,
    pub solutions: Vec<SolutionEntry>,
    pub model_meta: ModelMeta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecourseResponse {
    pub factual: Evidence,
    pub alternative_observation: String,
    pub counterfactual: RankedDistribution,
    pub noise: NoiseModel,
    pub model_meta: ModelMeta,
}
