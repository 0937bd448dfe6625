use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::ClassifierConfig;
use crate::decontam::Scope;
use crate::error::{Error, IoContext, Result};
use crate::llm::LlmEndpoint;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    /// JSONL shard list, one `{path, format}` per line.
    pub corpus_manifest: PathBuf,
    /// Labeled JSONL `{text, label}` for the first classifier.
    pub seed_examples: PathBuf,
    /// Benchmark JSONL files or directories of them.
    #[serde(default)]
    pub benchmarks: Vec<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecallConfig {
    /// Minimum positive probability; has no default.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub round1_token_budget: u64,
    pub round2_token_budget: u64,
    /// Round-1 domains need strictly more documents than this.
    pub min_docs: u64,
    /// Same threshold for round 2; 0 retains every recalled domain.
    pub round2_min_docs: u64,
    pub per_class_cap: usize,
    pub triage_batch_size: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub triage_prompt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge1: Option<LlmEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub judge2: Option<LlmEndpoint>,
}

impl Default for RecallConfig {
    fn default() -> Self {
        Self {
            threshold: None,
            round1_token_budget: 100_000_000_000,
            round2_token_budget: 40_000_000_000,
            min_docs: 1000,
            round2_min_docs: 0,
            per_class_cap: 100_000,
            triage_batch_size: 20,
            seed: 0,
            triage_prompt: None,
            judge1: None,
            judge2: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<LlmEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PathBuf>,
    /// Documents per checkpointed work unit.
    pub batch_docs: usize,
    /// Class/id patterns added to the built-in boilerplate list.
    pub extra_boilerplate: Vec<String>,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self { endpoint: None, prompt: None, batch_docs: 64, extra_boilerplate: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignment {
    /// Each candidate goes to one endpoint by a seeded draw.
    Split,
    /// Both endpoints refine every candidate.
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    pub endpoints: Vec<LlmEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub prompt: Option<PathBuf>,
    pub split: f64,
    pub seed: u64,
    pub assignment: Assignment,
    /// Candidates per checkpointed work unit.
    pub batch_size: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        Self {
            endpoints: Vec::new(),
            prompt: None,
            split: 0.5,
            seed: 0,
            assignment: Assignment::Split,
            batch_size: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecontamConfig {
    pub n: usize,
    pub scope: Scope,
}

impl Default for DecontamConfig {
    fn default() -> Self {
        Self { n: crate::decontam::DEFAULT_ORDER, scope: Scope::SourcePage }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AssembleConfig {
    pub label_subjects: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labeler: Option<LlmEndpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub subject_prompt: Option<PathBuf>,
    pub audit_n: usize,
    pub audit_seed: u64,
    /// Records per work unit while labelling.
    pub batch_size: usize,
}

impl Default for AssembleConfig {
    fn default() -> Self {
        Self {
            label_subjects: false,
            labeler: None,
            subject_prompt: None,
            audit_n: 50,
            audit_seed: 0,
            batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub recall: RecallConfig,
    #[serde(default)]
    pub extract: ExtractConfig,
    #[serde(default)]
    pub refine: RefineConfig,
    #[serde(default)]
    pub decontam: DecontamConfig,
    #[serde(default)]
    pub assemble: AssembleConfig,
}

/// Sets `dotted.key` in a TOML table. The value is read as TOML when it
/// parses (numbers, booleans, arrays, quoted strings), else as a bare string.
pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?}: expected key=value")))?;
    let key = key.trim();
    let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_owned()),
    };
    let mut parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override {assignment:?}: bad key")));
    }
    let last = parts.pop().expect("non-empty key");
    let mut cur = table;
    for (depth, p) in parts.iter().enumerate() {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        cur = entry.as_table_mut().ok_or_else(|| {
            Error::Config(format!("override {assignment:?}: {} is not a table", parts[..=depth].join(".")))
        })?;
    }
    cur.insert(last.to_owned(), value);
    Ok(())
}

impl PipelineConfig {
    /// Parses and applies overrides, without resolving or validating paths.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.message().to_owned()))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("{path}: {}", e.into_inner().message()))
        })
    }

    /// Reads, applies overrides, resolves relative paths against the file's
    /// directory and validates.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        let mut c = Self::from_toml_str(&text, overrides)?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        c.resolve_paths(&base);
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.corpus_manifest);
        fix(&mut self.paths.seed_examples);
        fix(&mut self.paths.output_dir);
        self.paths.benchmarks.iter_mut().for_each(fix);
        if let Some(p) = &mut self.paths.cache_dir {
            fix(p);
        }
        for p in [
            &mut self.recall.triage_prompt,
            &mut self.extract.prompt,
            &mut self.refine.prompt,
            &mut self.assemble.subject_prompt,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
        let endpoints = [&mut self.recall.judge1, &mut self.recall.judge2, &mut self.extract.endpoint, &mut self.assemble.labeler]
            .into_iter()
            .flatten()
            .chain(self.refine.endpoints.iter_mut());
        for e in endpoints {
            if let Some(p) = &mut e.mock_script {
                fix(p);
            }
        }
    }

    /// Every problem is reported with its field path.
    pub fn validate(&self) -> Result<()> {
        let mut errs: Vec<String> = Vec::new();
        let mut must_exist = |field: &str, p: &Path| {
            if !p.exists() {
                errs.push(format!("{field}: {} does not exist", p.display()));
            }
        };
        must_exist("paths.corpus_manifest", &self.paths.corpus_manifest);
        must_exist("paths.seed_examples", &self.paths.seed_examples);
        for (i, b) in self.paths.benchmarks.iter().enumerate() {
            must_exist(&format!("paths.benchmarks[{i}]"), b);
        }
        for (field, p) in [
            ("recall.triage_prompt", &self.recall.triage_prompt),
            ("extract.prompt", &self.extract.prompt),
            ("refine.prompt", &self.refine.prompt),
            ("assemble.subject_prompt", &self.assemble.subject_prompt),
        ] {
            if let Some(p) = p {
                must_exist(field, p);
            }
        }
        if let Err(e) = self.classifier.validate() {
            errs.push(format!("classifier: {e}"));
        }
        let r = &self.recall;
        match r.threshold {
            None => errs.push("recall.threshold: required".into()),
            Some(t) if !(0.0..=1.0).contains(&t) => errs.push(format!("recall.threshold: {t} is outside [0, 1]")),
            _ => {}
        }
        if r.round1_token_budget == 0 {
            errs.push("recall.round1_token_budget: must be positive".into());
        }
        if r.round2_token_budget == 0 {
            errs.push("recall.round2_token_budget: must be positive".into());
        }
        if r.min_docs == 0 {
            errs.push("recall.min_docs: must be >= 1".into());
        }
        if r.per_class_cap == 0 {
            errs.push("recall.per_class_cap: must be positive".into());
        }
        if r.triage_batch_size == 0 {
            errs.push("recall.triage_batch_size: must be >= 1".into());
        }
        let mut endpoint = |field: &str, e: &Option<LlmEndpoint>| match e {
            None => errs.push(format!("{field}: required")),
            Some(e) => errs.extend(e.validate(field).err()),
        };
        endpoint("recall.judge1", &r.judge1);
        endpoint("recall.judge2", &r.judge2);
        endpoint("extract.endpoint", &self.extract.endpoint);
        if self.assemble.label_subjects {
            endpoint("assemble.labeler", &self.assemble.labeler);
        }
        if self.extract.batch_docs == 0 {
            errs.push("extract.batch_docs: must be >= 1".into());
        }
        let f = &self.refine;
        if f.endpoints.len() != 2 {
            errs.push(format!("refine.endpoints: exactly 2 required, found {}", f.endpoints.len()));
        }
        for (i, e) in f.endpoints.iter().enumerate() {
            errs.extend(e.validate(&format!("refine.endpoints[{i}]")).err());
        }
        if f.endpoints.len() == 2 && f.endpoints[0].model == f.endpoints[1].model {
            errs.push("refine.endpoints: the two endpoints need distinct model names".into());
        }
        if !(0.0..=1.0).contains(&f.split) {
            errs.push(format!("refine.split: {} is outside [0, 1]", f.split));
        }
        if f.batch_size == 0 {
            errs.push("refine.batch_size: must be >= 1".into());
        }
        if !(2..=64).contains(&self.decontam.n) {
            errs.push(format!("decontam.n: {} must be in 2..=64", self.decontam.n));
        }
        if self.assemble.batch_size == 0 {
            errs.push("assemble.batch_size: must be >= 1".into());
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}
