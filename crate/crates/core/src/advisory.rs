//! Retrieval of exemplar solution texts and prompt assembly for an external
//! text generator.

use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::inference::RankedDistribution;
use crate::model::Quantizers;

pub const QUERY_TEMPLATE: &str = include_str!("../assets/prompts/query.txt");
pub const INSTRUCTION_TEMPLATE: &str = include_str!("../assets/prompts/instruction.txt");
pub const SAFETY_TEMPLATE: &str = include_str!("../assets/prompts/safety.txt");

pub const DEFAULT_RETRIEVE_K: usize = 6;
const EMPTY_SOLUTIONS: &str = "none on record";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexedSolution {
    pub record_id: String,
    pub text: String,
    pub distance: f64,
}

/// Training solutions bucketed by solution category, nearest to the
/// centroid first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionIndex {
    pub buckets: Vec<Vec<IndexedSolution>>,
}

impl SolutionIndex {
    pub fn build(corpus: &Corpus, quantizers: &Quantizers) -> Result<SolutionIndex> {
        let n = quantizers.solution.n_categories();
        let texts: Vec<_> = corpus
            .records
            .iter()
            .map(|r| quantizers.cleaning.clean(&r.solution))
            .collect();
        let placements = quantizers.solution.place_batch(&texts)?;
        let mut buckets: Vec<Vec<IndexedSolution>> = vec![Vec::new(); n];
        for (r, p) in corpus.records.iter().zip(placements) {
            let bucket = buckets.get_mut(p.category).ok_or_else(|| {
                Error::Consistency(format!(
                    "record {} maps to solution category {} but the codebook has {n}",
                    r.record_id, p.category
                ))
            })?;
            bucket.push(IndexedSolution {
                record_id: r.record_id.clone(),
                text: r.solution.clone(),
                distance: p.distance,
            });
        }
        for b in &mut buckets {
            b.sort_by(|a, b| a.distance.total_cmp(&b.distance).then_with(|| a.record_id.cmp(&b.record_id)));
        }
        Ok(SolutionIndex { buckets })
    }

    pub fn n_categories(&self) -> usize {
        self.buckets.len()
    }

    pub fn bucket(&self, category: usize) -> Result<&[IndexedSolution]> {
        self.buckets
            .get(category)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Lookup(format!("solution category {category} is not in the index")))
    }

    /// First `k` exemplar texts of a category.
    pub fn retrieve(&self, category: usize, k: usize) -> Result<Vec<String>> {
        Ok(self.bucket(category)?.iter().take(k).map(|e| e.text.clone()).collect())
    }
}

/// The three prompt blocks with their placeholders filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub query_block: String,
    pub instruction_block: String,
    pub safety_block: String,
    pub assembled: String,
    /// Exemplar texts placed in the query, kept for offline generation.
    pub solutions: Vec<String>,
}

fn render_solutions(solutions: &[String]) -> String {
    if solutions.is_empty() {
        return EMPTY_SOLUTIONS.to_string();
    }
    solutions
        .iter()
        .enumerate()
        .map(|(i, s)| format!("\n{}. {}", i + 1, s.trim()))
        .collect()
}

pub fn build_prompt(observation_text: &str, causes: &RankedDistribution, solutions: &[String]) -> PromptBundle {
    let query_block = QUERY_TEMPLATE
        .replace("{O}", observation_text.trim())
        .replace("{C}", &causes.render_inline(causes.entries.len()))
        .replace("{S}", &render_solutions(solutions));
    let safety_block = SAFETY_TEMPLATE.replace("{Q}", &query_block);
    let instruction_block = INSTRUCTION_TEMPLATE.to_string();
    let assembled = format!("{instruction_block}\n{safety_block}");
    PromptBundle {
        query_block,
        instruction_block,
        safety_block,
        assembled,
        solutions: solutions.to_vec(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Advisory {
    pub options: Vec<String>,
    pub raw_generation: String,
    pub provenance: String,
}

fn option_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)^\s*(?:[-*•]\s*)?((?:option|solution)\s*\d*\s*[:.)\-]\s*\S.*?)\s*$").expect("valid regex")
    })
}

/// Lines in the "- Option n : ..." / "Solution n: ..." layout.
pub fn parse_options(generation: &str) -> Vec<String> {
    generation
        .lines()
        .filter_map(|l| option_line().captures(l).map(|c| c[1].to_string()))
        .collect()
}

pub fn render_options(options: &[String]) -> String {
    options.iter().map(|o| format!("- {o}")).collect::<Vec<_>>().join("\n")
}

pub trait Generator: Send + Sync {
    fn generate(&self, prompt: &PromptBundle) -> Result<Advisory>;
}

/// Offline generator: one option per retrieved exemplar.
#[derive(Debug, Clone, Default)]
pub struct StubGenerator;

const STUB_WORDS: usize = 12;

fn imperative_prefix(text: &str) -> String {
    let words: Vec<&str> = text.split_whitespace().take(STUB_WORDS).collect();
    let mut joined = words.join(" ");
    if let Some(first) = joined.chars().next() {
        let upper: String = first.to_uppercase().collect();
        joined.replace_range(..first.len_utf8(), &upper);
    }
    joined
}

impl Generator for StubGenerator {
    fn generate(&self, prompt: &PromptBundle) -> Result<Advisory> {
        let raw = prompt
            .solutions
            .iter()
            .enumerate()
            .map(|(i, s)| format!("- Option {} : {}", i + 1, imperative_prefix(s)))
            .collect::<Vec<_>>()
            .join("\n");
        Ok(Advisory {
            options: parse_options(&raw),
            raw_generation: raw,
            provenance: "stub".into(),
        })
    }
}

/// `POST {prompt, max_tokens}` returning `{text}`.
#[derive(Clone)]
pub struct RemoteGenerator {
    pub url: String,
    pub max_tokens: u32,
    pub timeout: Duration,
    api_key: Option<String>,
}

pub const API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Serialize)]
struct GenerateRequest<'a> {
    prompt: &'a str,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct GenerateResponse {
    text: String,
    #[serde(default)]
    model: Option<String>,
}

// The credential never reaches logs or error messages.
impl std::fmt::Debug for RemoteGenerator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteGenerator")
            .field("url", &self.url)
            .field("max_tokens", &self.max_tokens)
            .field("timeout", &self.timeout)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl RemoteGenerator {
    /// Reads the credential from `LLM_API_KEY` if set.
    pub fn new(url: impl Into<String>, max_tokens: u32, timeout: Duration) -> Self {
        RemoteGenerator {
            url: url.into(),
            max_tokens,
            timeout,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
        }
    }

    fn transport(&self, message: impl Into<String>) -> Error {
        Error::Transport {
            endpoint: self.url.clone(),
            message: format!("{}; retry later or disable generation", message.into()),
        }
    }
}

impl Generator for RemoteGenerator {
    fn generate(&self, prompt: &PromptBundle) -> Result<Advisory> {
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| self.transport(e.to_string()))?;
        let mut request = client.post(&self.url).json(&GenerateRequest {
            prompt: &prompt.assembled,
            max_tokens: self.max_tokens,
        });
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().map_err(|e| self.transport(e.without_url().to_string()))?;
        if !response.status().is_success() {
            return Err(self.transport(format!("HTTP {}", response.status())));
        }
        let body: GenerateResponse = response
            .json()
            .map_err(|e| self.transport(format!("unreadable response: {}", e.without_url())))?;
        Ok(Advisory {
            options: parse_options(&body.text),
            raw_generation: body.text,
            provenance: body.model.unwrap_or_else(|| format!("remote:{}", self.url)),
        })
    }
}
