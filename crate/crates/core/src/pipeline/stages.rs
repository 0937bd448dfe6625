use std::borrow::Cow;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rustc_hash::{FxHashMap, FxHashSet};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::config::{Assignment, PipelineConfig};
use super::units::{concat, corpus_docs, unit_ids, LineChunks, StageDir, UntilErr};
use crate::assemble::{label_subject, sample_audit, to_sft, validate_record, LabelOutcome, StatsAccumulator};
use crate::classifier::{
    load_model, save_model, score_documents, train, LabeledExample, RecallReport, ScoreOptions, TextClassifier,
};
use crate::corpus::{load_manifest, read_shard, CorpusShard, DomainKey, RawDocument};
use crate::decontam::{benchmark_files, dedup, filter_contaminated, BenchmarkIndex, ContaminationReport, DedupReport};
use crate::error::{Error, Result};
use crate::extract::{CleanDocument, CleanSkip, Cleaner};
use crate::extract::{extract_qa, ExtractCounters, QACandidate};
use crate::hash::short_id;
use crate::jsonl::{self, AtomicWriter};
use crate::llm::{map_concurrent, LlmClient, LlmEndpoint};
use crate::prompt::{BuiltinPrompt, PromptTemplate};
use crate::recall::{build_round2_trainset, triage_batch, DomainGrouper, DomainVerdict, Grouping, RecallRoundReport};
use crate::refine::{assign_refiner, merge_refined, refine_qa, RefinedQA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    Train1,
    Recall1,
    Triage1,
    Train2,
    Recall2,
    Triage2,
    Extract,
    Refine,
    Decontaminate,
    Assemble,
    Stats,
    Audit,
}

impl Stage {
    pub const ALL: [Stage; 12] = [
        Stage::Train1,
        Stage::Recall1,
        Stage::Triage1,
        Stage::Train2,
        Stage::Recall2,
        Stage::Triage2,
        Stage::Extract,
        Stage::Refine,
        Stage::Decontaminate,
        Stage::Assemble,
        Stage::Stats,
        Stage::Audit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Train1 => "train1",
            Stage::Recall1 => "recall1",
            Stage::Triage1 => "triage1",
            Stage::Train2 => "train2",
            Stage::Recall2 => "recall2",
            Stage::Triage2 => "triage2",
            Stage::Extract => "extract",
            Stage::Refine => "refine",
            Stage::Decontaminate => "decontaminate",
            Stage::Assemble => "assemble",
            Stage::Stats => "stats",
            Stage::Audit => "audit",
        }
    }

    pub fn parse(name: &str) -> Option<Stage> {
        Stage::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Stages whose outputs this one reads.
    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Train1 => &[],
            Stage::Recall1 => &[Stage::Train1],
            Stage::Triage1 => &[Stage::Recall1],
            Stage::Train2 => &[Stage::Recall1, Stage::Triage1],
            Stage::Recall2 => &[Stage::Train2],
            Stage::Triage2 => &[Stage::Recall2],
            Stage::Extract => &[Stage::Triage2],
            Stage::Refine => &[Stage::Extract],
            Stage::Decontaminate => &[Stage::Extract, Stage::Refine],
            Stage::Assemble => &[Stage::Decontaminate],
            Stage::Stats => &[Stage::Decontaminate, Stage::Assemble],
            Stage::Audit => &[Stage::Extract, Stage::Decontaminate],
        }
    }

    fn round(self) -> u8 {
        match self {
            Stage::Train2 | Stage::Recall2 | Stage::Triage2 => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// What a stage's outputs depend on, beyond upstream stage outputs.
pub(crate) enum Input {
    File(PathBuf),
    Json(Value),
}

pub(crate) fn stage_inputs(config: &PipelineConfig, stage: Stage) -> Result<Vec<(String, Input)>> {
    let mut v: Vec<(String, Input)> = Vec::new();
    let c = config;
    let corpus = |v: &mut Vec<(String, Input)>| -> Result<()> {
        v.push(("corpus_manifest".into(), Input::File(c.paths.corpus_manifest.clone())));
        for s in load_manifest(&c.paths.corpus_manifest)? {
            v.push((format!("shard:{}", s.path.display()), Input::File(s.path)));
        }
        Ok(())
    };
    let endpoint = |v: &mut Vec<(String, Input)>, key: &str, e: &LlmEndpoint| {
        v.push((key.to_owned(), Input::Json(json!(e))));
        if let Some(m) = &e.mock_script {
            v.push((format!("{key}.mock_script"), Input::File(m.clone())));
        }
    };
    let prompt = |v: &mut Vec<(String, Input)>, which: BuiltinPrompt, path: &Option<PathBuf>| -> Result<()> {
        let p = PromptTemplate::resolve(which, path.as_deref())?;
        v.push(("prompt".into(), Input::Json(json!(p))));
        Ok(())
    };
    let r = &c.recall;
    match stage {
        Stage::Train1 => {
            v.push(("seed_examples".into(), Input::File(c.paths.seed_examples.clone())));
            v.push(("classifier".into(), Input::Json(json!(c.classifier))));
        }
        Stage::Recall1 | Stage::Recall2 => {
            corpus(&mut v)?;
            let budget = if stage == Stage::Recall1 { r.round1_token_budget } else { r.round2_token_budget };
            v.push(("recall".into(), Input::Json(json!({"threshold": r.threshold, "token_budget": budget}))));
        }
        Stage::Triage1 | Stage::Triage2 => {
            let (judge, min_docs) =
                if stage == Stage::Triage1 { (&r.judge1, r.min_docs) } else { (&r.judge2, r.round2_min_docs) };
            v.push(("recall".into(), Input::Json(json!({"min_docs": min_docs, "batch_size": r.triage_batch_size}))));
            endpoint(&mut v, "judge", judge.as_ref().ok_or_else(|| missing("recall.judge"))?);
            prompt(&mut v, BuiltinPrompt::Triage, &r.triage_prompt)?;
        }
        Stage::Train2 => {
            corpus(&mut v)?;
            v.push(("classifier".into(), Input::Json(json!(c.classifier))));
            v.push(("recall".into(), Input::Json(json!({"per_class_cap": r.per_class_cap, "seed": r.seed}))));
        }
        Stage::Extract => {
            let e = &c.extract;
            endpoint(&mut v, "extractor", e.endpoint.as_ref().ok_or_else(|| missing("extract.endpoint"))?);
            prompt(&mut v, BuiltinPrompt::Extract, &e.prompt)?;
            v.push((
                "extract".into(),
                Input::Json(json!({"batch_docs": e.batch_docs, "extra_boilerplate": e.extra_boilerplate})),
            ));
        }
        Stage::Refine => {
            let f = &c.refine;
            for (i, e) in f.endpoints.iter().enumerate() {
                endpoint(&mut v, &format!("refiner{i}"), e);
            }
            prompt(&mut v, BuiltinPrompt::Refine, &f.prompt)?;
            v.push((
                "refine".into(),
                Input::Json(json!({"split": f.split, "seed": f.seed, "assignment": f.assignment, "batch_size": f.batch_size})),
            ));
        }
        Stage::Decontaminate => {
            for f in benchmark_files(&c.paths.benchmarks)? {
                v.push((format!("benchmark:{}", f.display()), Input::File(f)));
            }
            v.push(("decontam".into(), Input::Json(json!(c.decontam))));
        }
        Stage::Assemble => {
            let a = &c.assemble;
            v.push((
                "assemble".into(),
                Input::Json(json!({"label_subjects": a.label_subjects, "batch_size": a.batch_size, "assignment": c.refine.assignment})),
            ));
            if a.label_subjects {
                endpoint(&mut v, "labeler", a.labeler.as_ref().ok_or_else(|| missing("assemble.labeler"))?);
                prompt(&mut v, BuiltinPrompt::Subject, &a.subject_prompt)?;
            }
        }
        Stage::Stats => {}
        Stage::Audit => {
            v.push(("audit".into(), Input::Json(json!({"n": c.assemble.audit_n, "seed": c.assemble.audit_seed}))));
        }
    }
    Ok(v)
}

fn missing(field: &str) -> Error {
    Error::Config(format!("{field}: required"))
}

/// One stage's work, split into checkpointed units.
pub(crate) trait StageJob: Sync {
    fn units(&self) -> Vec<String>;

    /// Units run concurrently per wave; their outputs are still committed
    /// in unit order.
    fn wave(&self) -> usize {
        1
    }

    fn run_unit(&self, index: usize, dir: &StageDir) -> Result<()>;

    /// Assembles unit parts into the stage outputs; returns their relative
    /// paths and the stage counters.
    fn finish(&self, dir: &StageDir) -> Result<(Vec<PathBuf>, Value)>;
}

pub(crate) fn prepare<'a>(config: &'a PipelineConfig, out_dir: &Path, stage: Stage) -> Result<Box<dyn StageJob + 'a>> {
    let up = |s: Stage| StageDir { out_dir: out_dir.to_path_buf(), name: s.name() };
    let client = |e: &Option<LlmEndpoint>, field: &str| -> Result<LlmClient> {
        let e = e.clone().ok_or_else(|| missing(field))?;
        build_client(config, e)
    };
    Ok(match stage {
        Stage::Train1 | Stage::Train2 => Box::new(TrainJob { config, round: stage.round(), out_dir: out_dir.to_path_buf() }),
        Stage::Recall1 | Stage::Recall2 => {
            let model_stage = if stage == Stage::Recall1 { Stage::Train1 } else { Stage::Train2 };
            let threshold = config.recall.threshold.ok_or_else(|| missing("recall.threshold"))?;
            let budget = if stage == Stage::Recall1 {
                config.recall.round1_token_budget
            } else {
                config.recall.round2_token_budget
            };
            Box::new(RecallJob {
                model: load_model(&up(model_stage).file("model.bin"))?,
                shards: load_manifest(&config.paths.corpus_manifest)?,
                opts: ScoreOptions::new(threshold, Some(budget))?,
            })
        }
        Stage::Triage1 | Stage::Triage2 => {
            let round = stage.round();
            let recall = up(if round == 1 { Stage::Recall1 } else { Stage::Recall2 });
            let (judge, min_docs, field) = if round == 1 {
                (&config.recall.judge1, config.recall.min_docs, "recall.judge1")
            } else {
                (&config.recall.judge2, config.recall.round2_min_docs, "recall.judge2")
            };
            let grouping = group_file(&recall.file("recalled.jsonl"), min_docs)?;
            let recall_report: RecallReport = jsonl::read_json(&recall.file("report.json"))?;
            Box::new(TriageJob {
                round,
                judge: client(judge, field)?,
                prompt: PromptTemplate::resolve(BuiltinPrompt::Triage, config.recall.triage_prompt.as_deref())?,
                batch_size: config.recall.triage_batch_size,
                grouping,
                recall_report,
                recalled: recall.file("recalled.jsonl"),
            })
        }
        Stage::Extract => {
            let llm = client(&config.extract.endpoint, "extract.endpoint")?;
            let prompt = PromptTemplate::resolve(BuiltinPrompt::Extract, config.extract.prompt.as_deref())?;
            prompt.validate_extraction()?;
            Box::new(ExtractJob {
                pool: LineChunks::scan(&up(Stage::Triage2).file("pool.jsonl"), config.extract.batch_docs)?,
                cleaner: Cleaner::with_extra_patterns(&config.extract.extra_boilerplate),
                llm,
                prompt,
            })
        }
        Stage::Refine => {
            let f = &config.refine;
            if f.endpoints.len() != 2 {
                return Err(Error::Config("refine.endpoints: exactly 2 required".into()));
            }
            let clients = f.endpoints.iter().map(|e| build_client(config, e.clone())).collect::<Result<Vec<_>>>()?;
            Box::new(RefineJob {
                candidates: LineChunks::scan(&up(Stage::Extract).file("candidates.jsonl"), f.batch_size)?,
                clients,
                prompt: PromptTemplate::resolve(BuiltinPrompt::Refine, f.prompt.as_deref())?,
                split: f.split,
                seed: f.seed,
                assignment: f.assignment,
            })
        }
        Stage::Decontaminate => Box::new(DecontamJob { config, out_dir: out_dir.to_path_buf() }),
        Stage::Assemble => {
            let a = &config.assemble;
            let labeler = if a.label_subjects {
                Some((
                    client(&a.labeler, "assemble.labeler")?,
                    PromptTemplate::resolve(BuiltinPrompt::Subject, a.subject_prompt.as_deref())?,
                ))
            } else {
                None
            };
            Box::new(AssembleJob {
                pairs: LineChunks::scan(&up(Stage::Decontaminate).file("kept.jsonl"), a.batch_size)?,
                labeler,
                both: config.refine.assignment == Assignment::Both,
            })
        }
        Stage::Stats => Box::new(StatsJob { out_dir: out_dir.to_path_buf() }),
        Stage::Audit => Box::new(AuditJob { config, out_dir: out_dir.to_path_buf() }),
    })
}

fn build_client(config: &PipelineConfig, e: LlmEndpoint) -> Result<LlmClient> {
    let c = LlmClient::from_endpoint(e)?;
    Ok(match &config.paths.cache_dir {
        Some(dir) => c.with_cache(dir),
        None => c,
    })
}

fn single() -> Vec<String> {
    vec!["all".to_owned()]
}

fn labels_of(config: &PipelineConfig) -> (String, String) {
    let labels = &config.classifier.labels;
    let pos = labels.iter().position(|l| l == "positive").unwrap_or(labels.len() - 1);
    let neg = (0..labels.len()).find(|&i| i != pos).unwrap_or(0);
    (labels[pos].clone(), labels[neg].clone())
}

fn read_docs(path: &Path) -> Result<impl Iterator<Item = Result<RawDocument>>> {
    jsonl::stream(path)
}

struct TrainJob<'a> {
    config: &'a PipelineConfig,
    round: u8,
    out_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct TrainSummary {
    examples: usize,
    vocab_size: usize,
    empty_examples: usize,
    epoch_losses: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trainset: Option<crate::recall::TrainsetReport>,
}

impl StageJob for TrainJob<'_> {
    fn units(&self) -> Vec<String> {
        single()
    }

    fn run_unit(&self, _: usize, dir: &StageDir) -> Result<()> {
        let c = self.config;
        let (examples, trainset) = if self.round == 1 {
            (jsonl::read_all::<LabeledExample>(&c.paths.seed_examples)?, None)
        } else {
            let verdicts: Vec<DomainVerdict> = jsonl::read_all(&self.out_dir.join("triage1/verdicts.jsonl"))?;
            let kept: FxHashSet<DomainKey> = verdicts.iter().filter(|v| v.keep).map(|v| v.domain.clone()).collect();
            let rejected: FxHashSet<DomainKey> =
                verdicts.iter().filter(|v| !v.keep).map(|v| v.domain.clone()).collect();
            let shards = load_manifest(&c.paths.corpus_manifest)?;
            let (pos, neg) = labels_of(c);
            let (mut e1, mut e2) = (None, None);
            let recalled = UntilErr::new(read_docs(&self.out_dir.join("recall1/recalled.jsonl"))?, &mut e1);
            let general = UntilErr::new(corpus_docs(&shards), &mut e2);
            let built = build_round2_trainset(
                &kept,
                &rejected,
                recalled,
                general,
                c.recall.per_class_cap,
                c.recall.seed,
                (&pos, &neg),
            );
            if let Some(e) = e1.or(e2) {
                return Err(e);
            }
            let (examples, report) = built?;
            jsonl::write_all(&dir.file("trainset.jsonl"), &examples)?;
            (examples, Some(report))
        };
        let (model, report) = train(&examples, &c.classifier)?;
        save_model(&model, &dir.file("model.bin"))?;
        let summary = TrainSummary {
            examples: report.examples,
            vocab_size: report.vocab_size,
            empty_examples: report.empty_examples,
            epoch_losses: report.epoch_losses,
            trainset,
        };
        jsonl::write_json(&dir.file("report.json"), &summary)
    }

    fn finish(&self, dir: &StageDir) -> Result<(Vec<PathBuf>, Value)> {
        let mut outputs = vec![dir.rel("model.bin"), dir.rel("report.json")];
        if self.round == 2 {
            outputs.push(dir.rel("trainset.jsonl"));
        }
        let summary: Value = jsonl::read_json(&dir.file("report.json"))?;
        Ok((outputs, summary))
    }
}

struct RecallJob {
    model: TextClassifier,
    shards: Vec<CorpusShard>,
    opts: ScoreOptions,
}

impl StageJob for RecallJob {
    fn units(&self) -> Vec<String> {
        unit_ids('s', self.shards.len())
    }

    fn run_unit(&self, index: usize, dir: &StageDir) -> Result<()> {
        // the budget left is what earlier shards did not use
        let mut before = RecallReport::default();
        for u in &self.units()[..index] {
            before.merge(&jsonl::read_json(&dir.part(u, "report.json"))?);
        }
        let unit = &self.units()[index];
        let mut report = RecallReport::default();
        let mut out = AtomicWriter::create(&dir.part(unit, "jsonl"))?;
        if !before.budget_exhausted {
            let budget = self.opts.token_budget.map(|b| b.saturating_sub(before.tokens_kept));
            let opts = ScoreOptions { token_budget: budget, ..self.opts };
            let mut reader = read_shard(&self.shards[index])?;
            let mut err = None;
            let docs = UntilErr::new(reader.by_ref(), &mut err);
            score_documents(&self.model, docs, opts, &mut report, |d| out.write_record(&d))?;
            if let Some(e) = err {
                return Err(e);
            }
            report.skipped_records = reader.skipped();
        }
        out.commit()?;
        jsonl::write_json(&dir.part(unit, "report.json"), &report)
    }

    fn finish(&self, dir: &StageDir) -> Result<(Vec<PathBuf>, Value)> {
        let units = self.units();
        concat(units.iter().map(|u| dir.part(u, "jsonl")), &dir.file("recalled.jsonl"))?;
        let mut total = RecallReport::default();
        for u in &units {
            total.merge(&jsonl::read_json(&dir.part(u, "report.json"))?);
        }
        jsonl::write_json(&dir.file("report.json"), &total)?;
        Ok((vec![dir.rel("recalled.jsonl"), dir.rel("report.json")], json!(total)))
    }
}

fn group_file(path: &Path, min_docs: u64) -> Result<Grouping> {
    let mut g = DomainGrouper::new();
    for d in read_docs(path)? {
        g.add(&d?);
    }
    Ok(g.finish(min_docs))
}

struct TriageJob {
    round: u8,
    judge: LlmClient,
    prompt: PromptTemplate,
    batch_size: usize,
    grouping: Grouping,
    recall_report: RecallReport,
    recalled: PathBuf,
}

impl TriageJob {
    fn batches(&self) -> impl Iterator<Item = &[crate::recall::DomainStats]> {
        self.grouping.retained.chunks(self.batch_size)
    }
}

impl StageJob for TriageJob {
    fn units(&self) -> Vec<String> {
        unit_ids('b', self.batches().count())
    }

    fn wave(&self) -> usize {
        self.judge.endpoint().max_in_flight
    }

    fn run_unit(&self, index: usize, dir: &StageDir) -> Result<()> {
        let batch = self.batches().nth(index).expect("unit index in range");
        let verdicts = triage_batch(&self.judge, &self.prompt, batch)?;
        jsonl::write_all(&dir.part(&self.units()[index], "jsonl"), &verdicts)?;
        Ok(())
    }

    fn finish(&self, dir: &StageDir) -> Result<(Vec<PathBuf>, Value)> {
        jsonl::write_json(&dir.file("domains.json"), &self.grouping)?;
        let units = self.units();
        concat(units.iter().map(|u| dir.part(u, "jsonl")), &dir.file("verdicts.jsonl"))?;
        let verdicts: Vec<DomainVerdict> = jsonl::read_all(&dir.file("verdicts.jsonl"))?;
        let kept: FxHashSet<&DomainKey> = verdicts.iter().filter(|v| v.keep).map(|v| &v.domain).collect();
        let report = RecallRoundReport {
            round: self.round,
            docs_recalled: self.recall_report.docs_kept,
            tokens_recalled: self.recall_report.tokens_kept,
            domains_total: self.grouping.retained.len() as u64 + self.grouping.dropped_domains,
            domains_kept: kept.len() as u64,
        };
        jsonl::write_json(&dir.file("report.json"), &report)?;
        let mut outputs = vec![dir.rel("domains.json"), dir.rel("verdicts.jsonl"), dir.rel("report.json")];
        let mut counters = json!(report);
        if self.round == 2 {
            let mut w = AtomicWriter::create(&dir.file("pool.jsonl"))?;
            let (mut docs, mut tokens) = (0u64, 0u64);
            for d in read_docs(&self.recalled)? {
                let d = d?;
                if d.domain().is_ok_and(|k| kept.contains(&k)) {
                    docs += 1;
                    tokens += d.token_count as u64;
                    w.write_record(&d)?;
                }
            }
            w.commit()?;
            outputs.push(dir.rel("pool.jsonl"));
            counters["pool_docs"] = json!(docs);
            counters["pool_tokens"] = json!(tokens);
        }
        Ok((outputs, counters))
    }
}

struct ExtractJob {
    pool: LineChunks,
    cleaner: Cleaner,
    llm: LlmClient,
    prompt: PromptTemplate,
}

impl StageJob for ExtractJob {
    fn units(&self) -> Vec<String> {
        unit_ids('u', self.pool.len())
    }

    fn run_unit(&self, index: usize, dir: &StageDir) -> Result<()> {
        let unit = &self.units()[index];
        let docs: Vec<RawDocument> = self.pool.read(index)?;
        let mut counters = ExtractCounters::default();
        let mut cleaned: Vec<CleanDocument> = Vec::with_capacity(docs.len());
        for d in &docs {
            match self.cleaner.clean(d) {
                Ok(c) if !c.text.trim().is_empty() => cleaned.push(c),
                Ok(_) | Err(CleanSkip::EmptyHtml) => counters.skipped_empty += 1,
                Err(CleanSkip::NotText) => counters.skipped_not_text += 1,
            }
        }
        let results = map_concurrent(&cleaned, self.llm.endpoint().max_in_flight, |_, c| {
            extract_qa(&self.llm, c, &self.prompt)
        });
        let mut candidates: Vec<QACandidate> = Vec::new();
        for r in results {
            let (c, k) = r?;
            counters.merge(&k);
            candidates.extend(c);
        }
        jsonl::write_all(&dir.part(unit, "clean.jsonl"), &cleaned)?;
        jsonl::write_all(&dir.part(unit, "jsonl"), &candidates)?;
        jsonl::write_json(&dir.part(unit, "report.json"), &counters)
    }

    fn finish(&self, dir: &StageDir) -> Result<(Vec<PathBuf>, Value)> {
        let units = self.units();
        concat(units.iter().map(|u| dir.part(u, "clean.jsonl")), &dir.file("clean.jsonl"))?;
        concat(units.iter().map(|u| dir.part(u, "jsonl")), &dir.file("candidates.jsonl"))?;
        let mut total = ExtractCounters::default();
        for u in &units {
            total.merge(&jsonl::read_json(&dir.part(u, "report.json"))?);
        }
        jsonl::write_json(&dir.file("report.json"), &total)?;
        Ok((
            vec![dir.rel("clean.jsonl"), dir.rel("candidates.jsonl"), dir.rel("report.json")],
            json!(total),
        ))
    }
}

struct RefineJob {
    candidates: LineChunks,
    clients: Vec<LlmClient>,
    prompt: PromptTemplate,
    split: f64,
    seed: u64,
    assignment: Assignment,
}

impl StageJob for RefineJob {
    fn units(&self) -> Vec<String> {
        unit_ids('u', self.candidates.len())
    }

    fn run_unit(&self, index: usize, dir: &StageDir) -> Result<()> {
        let cands: Vec<QACandidate> = self.candidates.read(index)?;
        let tasks: Vec<(usize, &QACandidate)> = match self.assignment {
            Assignment::Split => {
                cands.iter().map(|c| (assign_refiner(&c.candidate_id, self.seed, self.split), c)).collect()
            }
            Assignment::Both => cands.iter().flat_map(|c| [(0, c), (1, c)]).collect(),
        };
        let workers: usize = self.clients.iter().map(|c| c.endpoint().max_in_flight).sum();
        let refined = map_concurrent(&tasks, workers, |_, (i, c)| refine_qa(&self.clients[*i], c, &self.prompt))
            .into_iter()
            .collect::<Result<Vec<RefinedQA>, _>>()?;
        jsonl::write_all(&dir.part(&self.units()[index], "jsonl"), &refined)?;
        Ok(())
    }

    fn finish(&self, dir: &StageDir) -> Result<(Vec<PathBuf>, Value)> {
        let first = &self.clients[0].endpoint().model;
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for u in self.units() {
            for r in jsonl::read_all::<RefinedQA>(&dir.part(&u, "jsonl"))? {
                if &r.refiner == first { a.push(r) } else { b.push(r) }
            }
        }
        let (merged, report) = merge_refined(a, b, self.assignment == Assignment::Both)?;
        jsonl::write_all(&dir.file("refined.jsonl"), &merged)?;
        jsonl::write_json(&dir.file("merge_report.json"), &report)?;
        Ok((vec![dir.rel("refined.jsonl"), dir.rel("merge_report.json")], json!(report)))
    }
}

struct DecontamJob<'a> {
    config: &'a PipelineConfig,
    out_dir: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct IndexSummary {
    order: usize,
    distinct_grams: usize,
    short_entries: usize,
    gram_occurrences: u64,
    skipped_entries: u64,
    entries: BTreeMap<String, u64>,
}

#[derive(Serialize, Deserialize)]
struct DecontamSummary {
    index: IndexSummary,
    contamination: ContaminationReport,
    dedup: DedupReport,
    kept: u64,
}

impl StageJob for DecontamJob<'_> {
    fn units(&self) -> Vec<String> {
        single()
    }

    fn run_unit(&self, _: usize, dir: &StageDir) -> Result<()> {
        let c = self.config;
        let files = benchmark_files(&c.paths.benchmarks)?;
        let index = BenchmarkIndex::build(&files, c.decontam.n)?;
        if index.is_empty() {
            log::warn!("decontaminate: no benchmark entries found; pairs pass through unchecked");
        }
        let pairs: Vec<RefinedQA> = jsonl::read_all(&self.out_dir.join("refine/refined.jsonl"))?;
        let mut pages: FxHashMap<String, String> = FxHashMap::default();
        if c.decontam.scope == crate::decontam::Scope::SourcePage && !index.is_empty() {
            let wanted: FxHashSet<&str> = pairs.iter().map(|p| p.doc_id.as_str()).collect();
            for d in jsonl::stream::<CleanDocument>(&self.out_dir.join("extract/clean.jsonl"))? {
                let d = d?;
                if wanted.contains(d.doc_id.as_str()) {
                    pages.insert(d.doc_id, d.text);
                }
            }
        }
        let (kept, contamination) = filter_contaminated(&index, pairs, c.decontam.scope, |id| {
            pages.get(id).map(|t| Cow::Borrowed(t.as_str()))
        });
        let (kept, dedup_report) = dedup(kept);
        jsonl::write_all(&dir.file("kept.jsonl"), &kept)?;
        let summary = DecontamSummary {
            index: IndexSummary {
                order: index.order(),
                distinct_grams: index.distinct_grams(),
                short_entries: index.short_entries(),
                gram_occurrences: index.gram_occurrences,
                skipped_entries: index.skipped_entries,
                entries: index.source_counts.clone(),
            },
            contamination,
            dedup: dedup_report,
            kept: kept.len() as u64,
        };
        jsonl::write_json(&dir.file("report.json"), &summary)
    }

    fn finish(&self, dir: &StageDir) -> Result<(Vec<PathBuf>, Value)> {
        let s: DecontamSummary = jsonl::read_json(&dir.file("report.json"))?;
        let counters = json!({
            "checked": s.contamination.checked,
            "dropped": s.contamination.dropped,
            "page_fallbacks": s.contamination.page_fallbacks,
            "duplicates": s.dedup.duplicates,
            "kept": s.kept,
        });
        Ok((vec![dir.rel("kept.jsonl"), dir.rel("report.json")], counters))
    }
}

struct AssembleJob {
    pairs: LineChunks,
    labeler: Option<(LlmClient, PromptTemplate)>,
    both: bool,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct AssembleCounters {
    records: u64,
    labeled: u64,
    label_no_match: u64,
    label_failed: u64,
}

impl StageJob for AssembleJob {
    fn units(&self) -> Vec<String> {
        unit_ids('u', self.pairs.len())
    }

    fn run_unit(&self, index: usize, dir: &StageDir) -> Result<()> {
        let unit = &self.units()[index];
        let pairs: Vec<RefinedQA> = self.pairs.read(index)?;
        let mut records: Vec<_> = pairs.iter().map(to_sft).collect();
        if self.both {
            for (r, p) in records.iter_mut().zip(&pairs) {
                r.id = short_id(&[p.candidate_id.as_bytes(), p.refiner.as_bytes()]);
            }
        }
        let mut counters = AssembleCounters { records: records.len() as u64, ..Default::default() };
        if let Some((llm, prompt)) = &self.labeler {
            let labels = map_concurrent(&pairs, llm.endpoint().max_in_flight, |_, p| {
                label_subject(llm, prompt, &p.question)
            });
            for (r, (subject, outcome)) in records.iter_mut().zip(labels) {
                r.metadata.subject = Some(subject);
                match outcome {
                    LabelOutcome::Matched => counters.labeled += 1,
                    LabelOutcome::NoMatch => counters.label_no_match += 1,
                    LabelOutcome::Failed => counters.label_failed += 1,
                }
            }
        }
        for r in &records {
            validate_record(r).map_err(|e| Error::Integrity(format!("invalid SFT record {e}")))?;
        }
        jsonl::write_all(&dir.part(unit, "jsonl"), &records)?;
        jsonl::write_json(&dir.part(unit, "report.json"), &counters)
    }

    fn finish(&self, dir: &StageDir) -> Result<(Vec<PathBuf>, Value)> {
        let units = self.units();
        let mut total = AssembleCounters::default();
        for u in &units {
            let c: AssembleCounters = jsonl::read_json(&dir.part(u, "report.json"))?;
            total.records += c.records;
            total.labeled += c.labeled;
            total.label_no_match += c.label_no_match;
            total.label_failed += c.label_failed;
        }
        let dest = dir.file("sft.jsonl");
        concat(units.iter().map(|u| dir.part(u, "jsonl")), &dest)?;
        let mut ids = FxHashSet::default();
        for r in jsonl::stream::<crate::assemble::SftRecord>(&dest)? {
            let r = r?;
            if !ids.insert(r.id.clone()) {
                return Err(Error::Integrity(format!("duplicate SFT id {}", r.id)));
            }
        }
        Ok((vec![dir.rel("sft.jsonl")], json!(total)))
    }
}

struct StatsJob {
    out_dir: PathBuf,
}

impl StageJob for StatsJob {
    fn units(&self) -> Vec<String> {
        single()
    }

    fn run_unit(&self, _: usize, dir: &StageDir) -> Result<()> {
        let mut acc = StatsAccumulator::default();
        for r in jsonl::stream::<crate::assemble::SftRecord>(&self.out_dir.join("assemble/sft.jsonl"))? {
            acc.add(&r?);
        }
        let mut stats = acc.finish();
        let d: DecontamSummary = jsonl::read_json(&self.out_dir.join("decontaminate/report.json"))?;
        stats.pairs_before_dedup = Some(d.dedup.unique + d.dedup.duplicates);
        jsonl::write_json(&dir.file("stats.json"), &stats)?;
        jsonl::write_bytes(&dir.file("stats.txt"), crate::assemble::render_stats_table(&stats).as_bytes())
    }

    fn finish(&self, dir: &StageDir) -> Result<(Vec<PathBuf>, Value)> {
        let s: crate::assemble::DatasetStats = jsonl::read_json(&dir.file("stats.json"))?;
        Ok((
            vec![dir.rel("stats.json"), dir.rel("stats.txt")],
            json!({"pair_count": s.pair_count, "token_count": s.token_count, "domains": s.per_domain.len()}),
        ))
    }
}

struct AuditJob<'a> {
    config: &'a PipelineConfig,
    out_dir: PathBuf,
}

impl StageJob for AuditJob<'_> {
    fn units(&self) -> Vec<String> {
        single()
    }

    fn run_unit(&self, _: usize, dir: &StageDir) -> Result<()> {
        let candidates: Vec<QACandidate> = jsonl::read_all(&self.out_dir.join("extract/candidates.jsonl"))?;
        let refined: Vec<RefinedQA> = jsonl::read_all(&self.out_dir.join("decontaminate/kept.jsonl"))?;
        let mut n = self.config.assemble.audit_n;
        if n > refined.len() {
            log::warn!("audit: only {} pairs available, sampling all of them instead of {n}", refined.len());
            n = refined.len();
        }
        let sample = sample_audit(&candidates, &refined, n, self.config.assemble.audit_seed)?;
        jsonl::write_bytes(&dir.file("audit.csv"), &sample.to_csv()?)
    }

    fn finish(&self, dir: &StageDir) -> Result<(Vec<PathBuf>, Value)> {
        let path = dir.file("audit.csv");
        let rows = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(&path)
            .map_err(|e| Error::Stage { stage: "audit".into(), detail: e.to_string() })?
            .records()
            .count();
        Ok((vec![dir.rel("audit.csv")], json!({"rows": rows})))
    }
}
