//! Stage orchestration over one output directory: content-hash checkpoints,
//! work-unit resume and the two-round recall sequence.
//!
//! Layout under the output directory:
//! `manifests/<stage>.json`, `<stage>/parts/<unit>.*` and the stage outputs
//! in `<stage>/`. A `.lock` file keeps a second process out.

pub mod config;
pub mod manifest;
mod stages;
pub mod units;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use config::{Assignment, PipelineConfig};
pub use manifest::{DirLock, StageManifest, StageStatus};
pub use stages::Stage;

use crate::error::{Error, IoContext, Result};
use crate::hash::{file_sha256, sha256_hex};
use crate::jsonl;
use crate::llm::map_concurrent;
use crate::recall::RecallRoundReport;
use stages::{prepare, stage_inputs, Input};
use units::StageDir;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Discard existing checkpoints of the stages that run.
    pub fresh: bool,
    /// Stop with [`Error::Interrupted`] after this many work units.
    pub max_units: Option<usize>,
}

/// The machine-readable line printed after each stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage: String,
    /// `done`, or `up-to-date` when the checkpoint already covered it.
    pub status: String,
    pub units_total: usize,
    pub units_run: usize,
    pub outputs: Vec<PathBuf>,
    pub counters: serde_json::Value,
}

pub struct Pipeline {
    config: PipelineConfig,
    out_dir: PathBuf,
    opts: RunOptions,
    units_left: Option<usize>,
    _lock: DirLock,
}

impl Pipeline {
    pub fn open(config: PipelineConfig, opts: RunOptions) -> Result<Self> {
        let out_dir = config.paths.output_dir.clone();
        let lock = DirLock::acquire(&out_dir)?;
        Ok(Self { out_dir, opts, units_left: opts.max_units, config, _lock: lock })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out_dir
    }

    pub fn manifest(&self, stage: Stage) -> Result<Option<StageManifest>> {
        StageManifest::load(&self.out_dir, stage.name())
    }

    fn input_hashes(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut h = BTreeMap::new();
        for dep in stage.deps() {
            let m = self.manifest(*dep)?.filter(|m| m.is_complete(&self.out_dir)).ok_or_else(|| Error::Stage {
                stage: stage.name().into(),
                detail: format!("stage {dep} has not completed; run it first"),
            })?;
            for out in &m.outputs {
                let p = self.out_dir.join(out);
                h.insert(format!("{dep}:{}", out.display()), file_sha256(&p).at(&p)?);
            }
        }
        for (key, input) in stage_inputs(&self.config, stage)? {
            let digest = match input {
                Input::File(p) => file_sha256(&p).at(&p)?,
                Input::Json(v) => sha256_hex(v.to_string().as_bytes()),
            };
            h.insert(key, digest);
        }
        Ok(h)
    }

    /// Runs one stage, resuming from its checkpoint when the inputs are
    /// unchanged and refusing when they are not.
    pub fn run_stage(&mut self, stage: Stage) -> Result<StageSummary> {
        let name = stage.name();
        let hashes = self.input_hashes(stage)?;
        let existing = if self.opts.fresh { None } else { self.manifest(stage)? };
        let mut manifest = match existing {
            Some(m) => {
                let stale = m.stale_inputs(&hashes);
                if !stale.is_empty() {
                    return Err(Error::StaleCheckpoint {
                        stage: name.into(),
                        detail: format!("inputs changed since the checkpoint: {}", stale.join(", ")),
                    });
                }
                if m.status == StageStatus::Done {
                    if !m.is_complete(&self.out_dir) {
                        return Err(Error::StaleCheckpoint {
                            stage: name.into(),
                            detail: "stage is marked done but its outputs are missing".into(),
                        });
                    }
                    log::info!("{name}: up to date");
                    return Ok(StageSummary {
                        stage: name.into(),
                        status: "up-to-date".into(),
                        units_total: m.units_total,
                        units_run: 0,
                        outputs: m.outputs,
                        counters: m.counters,
                    });
                }
                log::info!("{name}: resuming with {} of {} units done", m.completed_units.len(), m.units_total);
                m
            }
            None => {
                let root = self.out_dir.join(name);
                if root.exists() {
                    std::fs::remove_dir_all(&root).at(&root)?;
                }
                StageManifest::new(name, hashes)
            }
        };
        let dir = StageDir { out_dir: self.out_dir.clone(), name };
        let job = prepare(&self.config, &self.out_dir, stage)?;
        let units = job.units();
        if !manifest.completed_units.is_empty() && manifest.units_total != units.len() {
            return Err(Error::StaleCheckpoint {
                stage: name.into(),
                detail: format!("checkpoint has {} units, the inputs now give {}", manifest.units_total, units.len()),
            });
        }
        manifest.units_total = units.len();
        manifest.status = StageStatus::Running;
        manifest.error = None;
        manifest.save(&self.out_dir)?;

        let pending: Vec<usize> =
            (0..units.len()).filter(|&i| !manifest.completed_units.contains(&units[i])).collect();
        let mut units_run = 0;
        let mut next = 0;
        while next < pending.len() {
            let mut take = job.wave().max(1).min(pending.len() - next);
            if let Some(left) = self.units_left {
                take = take.min(left);
            }
            if take == 0 {
                log::warn!("{name}: stopping after the unit limit");
                return Err(Error::Interrupted { stage: name.into(), completed: manifest.completed_units.len() });
            }
            let wave = &pending[next..next + take];
            let results = map_concurrent(wave, take, |_, &i| job.run_unit(i, &dir));
            let mut failure = None;
            for (&i, r) in wave.iter().zip(results) {
                match r {
                    Ok(()) => {
                        manifest.completed_units.push(units[i].clone());
                        units_run += 1;
                        if let Some(left) = &mut self.units_left {
                            *left -= 1;
                        }
                    }
                    Err(e) => {
                        failure.get_or_insert((units[i].clone(), e));
                    }
                }
            }
            if let Some((unit, e)) = failure {
                manifest.status = StageStatus::Failed;
                manifest.error = Some(format!("unit {unit}: {e}"));
                manifest.save(&self.out_dir)?;
                return Err(e);
            }
            manifest.save(&self.out_dir)?;
            next += take;
        }

        let finished = job.finish(&dir);
        let (outputs, counters) = match finished {
            Ok(v) => v,
            Err(e) => {
                manifest.status = StageStatus::Failed;
                manifest.error = Some(e.to_string());
                manifest.save(&self.out_dir)?;
                return Err(e);
            }
        };
        manifest.outputs = outputs.clone();
        manifest.counters = counters.clone();
        manifest.status = StageStatus::Done;
        manifest.save(&self.out_dir)?;
        Ok(StageSummary {
            stage: name.into(),
            status: "done".into(),
            units_total: units.len(),
            units_run,
            outputs,
            counters,
        })
    }

    /// Runs stages in order up to and including `until`, reporting each.
    pub fn run_all(&mut self, until: Option<Stage>, mut on_stage: impl FnMut(&StageSummary)) -> Result<Vec<StageSummary>> {
        let mut out = Vec::new();
        for stage in Stage::ALL {
            let s = self.run_stage(stage)?;
            on_stage(&s);
            out.push(s);
            if Some(stage) == until {
                break;
            }
        }
        Ok(out)
    }

    /// Continues an interrupted or failed stage; without a stage, continues
    /// the whole pipeline.
    pub fn resume(&mut self, stage: Option<Stage>, on_stage: impl FnMut(&StageSummary)) -> Result<Vec<StageSummary>> {
        match stage {
            None => self.run_all(None, on_stage),
            Some(s) => {
                if self.manifest(s)?.is_none() {
                    return Err(Error::Config(format!("no checkpoint for stage {s} to resume")));
                }
                let mut on_stage = on_stage;
                let summary = self.run_stage(s)?;
                on_stage(&summary);
                Ok(vec![summary])
            }
        }
    }
}

/// Final document pool of the two recall rounds with their reports.
#[derive(Debug, Clone, PartialEq)]
pub struct RecallOutcome {
    pub pool: PathBuf,
    pub rounds: [RecallRoundReport; 2],
}

/// Round 1 (train on seeds, recall, triage), then round 2 (rebuild the
/// training set, retrain, recall, triage again); each step checkpointed.
pub fn run_two_round_recall(pipeline: &mut Pipeline) -> Result<RecallOutcome> {
    pipeline.run_all(Some(Stage::Triage2), |_| {})?;
    let read = |s: &str| jsonl::read_json::<RecallRoundReport>(&pipeline.out_dir.join(s).join("report.json"));
    Ok(RecallOutcome {
        pool: pipeline.out_dir.join("triage2/pool.jsonl"),
        rounds: [read("triage1")?, read("triage2")?],
    })
}
