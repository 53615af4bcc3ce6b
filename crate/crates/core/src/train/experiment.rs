//! Strategy × seed experiment matrix.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{train_baseline, train_step1, train_step2_from, Init, Phase, RunReport, TrainSpec};
use crate::data::SampleSet;
use crate::error::{Error, Result};
use crate::losses::LossKind;
use crate::metrics;
use crate::nn::{build_autoencoder, ModelSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Cross-entropy from random init.
    Xent,
    /// Step 1 pretraining, then Step 2 fine-tuning.
    Mentor,
    JointCam,
    JointGaze,
    /// CAM joint loss starting from the Step 1 encoder.
    MentorJointCam,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Xent => "xent",
            Strategy::Mentor => "mentor",
            Strategy::JointCam => "joint_cam",
            Strategy::JointGaze => "joint_gaze",
            Strategy::MentorJointCam => "mentor_joint_cam",
        }
    }

    pub fn uses_step1(self) -> bool {
        matches!(self, Strategy::Mentor | Strategy::MentorJointCam)
    }
}

/// The experiment matrix plus the phase templates each cell instantiates.
/// Template seeds are replaced by the cell seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: ModelSpec,
    pub strategies: Vec<Strategy>,
    pub seeds: Vec<u64>,
    pub step1: TrainSpec,
    pub step2: TrainSpec,
    /// Optimizer, epochs and loss weights shared by every baseline.
    pub baseline: TrainSpec,
}

impl ExperimentSpec {
    pub fn new(model: ModelSpec, strategies: Vec<Strategy>, seeds: Vec<u64>) -> Self {
        Self {
            model,
            strategies,
            seeds,
            step1: TrainSpec::step1(0),
            step2: TrainSpec::step2(0),
            baseline: TrainSpec::baseline(Phase::BaselineXent, 0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.strategies.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("an experiment needs at least one strategy and one seed".into()));
        }
        if self.strategies.iter().collect::<BTreeSet<_>>().len() != self.strategies.len() {
            return Err(Error::Config("duplicate strategy in experiment".into()));
        }
        if self.seeds.iter().collect::<BTreeSet<_>>().len() != self.seeds.len() {
            return Err(Error::Config("duplicate seed in experiment".into()));
        }
        self.model.validate()?;
        self.step1.validate()?;
        self.step2.validate()?;
        for s in [Strategy::Xent, Strategy::JointCam, Strategy::JointGaze] {
            self.baseline_spec(s, 0).validate()?;
        }
        Ok(())
    }

    fn baseline_spec(&self, strategy: Strategy, seed: u64) -> TrainSpec {
        let (phase, kind) = match strategy {
            Strategy::JointCam | Strategy::MentorJointCam => (Phase::BaselineJointCam, LossKind::JointCam),
            Strategy::JointGaze => (Phase::BaselineJointGaze, LossKind::JointGaze),
            _ => (Phase::BaselineXent, LossKind::Xent),
        };
        let mut spec = self.baseline.clone();
        spec.phase = phase;
        spec.loss.kind = kind;
        spec.seed = seed;
        spec.init = Init::Random;
        spec
    }
}

/// One finished (strategy, seed) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub strategy: Strategy,
    pub seed: u64,
    pub report: RunReport,
    /// The shared Step 1 run this strategy started from.
    pub pretrain: Option<RunReport>,
    pub wall_time_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub strategy: Strategy,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategySummary {
    pub strategy: Strategy,
    /// Seeds whose run succeeded.
    pub seeds: Vec<u64>,
    pub auroc_mean: Option<f64>,
    pub auroc_std: Option<f64>,
    pub s_entropy_mean: Option<f64>,
    pub s_entropy_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub strategies: Vec<StrategySummary>,
    pub failures: Vec<CellFailure>,
    #[serde(skip)]
    pub runs: Vec<RunRecord>,
}

impl AggregateReport {
    pub fn summary(&self, strategy: Strategy) -> Option<&StrategySummary> {
        self.strategies.iter().find(|s| s.strategy == strategy)
    }

    pub fn run(&self, strategy: Strategy, seed: u64) -> Option<&RunRecord> {
        self.runs.iter().find(|r| r.strategy == strategy && r.seed == seed)
    }

    /// One line: each strategy with its AUROC mean±std.
    pub fn table_line(&self) -> String {
        let mut line = String::from("RESULT");
        for s in &self.strategies {
            match (s.auroc_mean, s.auroc_std) {
                (Some(m), Some(sd)) => write!(line, " | {} {m:.4}±{sd:.4}", s.strategy.as_str()),
                _ => write!(line, " | {} n/a", s.strategy.as_str()),
            }
            .expect("string write");
        }
        line.push_str(" |");
        line
    }

    /// `strategy,seed,epoch,train_loss,val_loss,lr`; Step 1 curves appear
    /// once per seed under the strategy name `step1`.
    pub fn metrics_csv(&self, strategies: &[Strategy], seeds: &[u64]) -> String {
        let mut out = String::from("strategy,seed,epoch,train_loss,val_loss,lr\n");
        let mut row = |name: &str, seed: u64, r: &RunReport| {
            for e in &r.epochs {
                writeln!(out, "{name},{seed},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr).expect("string write");
            }
        };
        if strategies.iter().any(|s| s.uses_step1()) {
            for &seed in seeds {
                if let Some(p) = self.runs.iter().find(|r| r.seed == seed).and_then(|r| r.pretrain.as_ref()) {
                    row("step1", seed, p);
                }
            }
        }
        for &strategy in strategies {
            for &seed in seeds {
                if let Some(r) = self.run(strategy, seed) {
                    row(strategy.as_str(), seed, &r.report);
                }
            }
        }
        out
    }
}

type CellOutcome = Vec<(Strategy, std::result::Result<RunRecord, String>)>;

/// Runs every strategy for every seed. Seeds run concurrently on up to `jobs`
/// threads; each seed's strategies share one Step 1 run. Failed runs are
/// listed in the report. With `out`, per-run reports, checkpoints,
/// `metrics.csv` and `aggregate.json` are written below it.
pub fn run_experiment(spec: &ExperimentSpec, data: &SampleSet, out: Option<&Path>, jobs: usize) -> Result<AggregateReport> {
    spec.validate()?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<CellOutcome>>> = Mutex::new(vec![None; spec.seeds.len()]);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, spec.seeds.len()) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(&seed) = spec.seeds.get(i) else { break };
                let outcome = run_cell(spec, data, seed, out);
                results.lock().expect("results lock")[i] = Some(outcome);
            });
        }
    });

    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (cell, &seed) in results.into_inner().expect("results lock").into_iter().zip(&spec.seeds) {
        for (strategy, r) in cell.expect("every cell ran") {
            match r {
                Ok(rec) => runs.push(rec),
                Err(error) => failures.push(CellFailure { strategy, seed, error }),
            }
        }
    }
    runs.sort_by_key(|r| (spec.strategies.iter().position(|&s| s == r.strategy), r.seed));

    let strategies = spec
        .strategies
        .iter()
        .map(|&strategy| {
            let mine: Vec<&RunRecord> = spec
                .seeds
                .iter()
                .filter_map(|&seed| runs.iter().find(|r| r.strategy == strategy && r.seed == seed))
                .collect();
            let agg = |vals: Vec<f64>| metrics::aggregate(&vals).ok();
            let auroc = agg(mine.iter().filter_map(|r| r.report.metrics.test_auroc).collect());
            let ent = agg(mine.iter().filter_map(|r| r.report.metrics.s_entropy).collect());
            StrategySummary {
                strategy,
                seeds: mine.iter().map(|r| r.seed).collect(),
                auroc_mean: auroc.map(|a| a.0),
                auroc_std: auroc.map(|a| a.1),
                s_entropy_mean: ent.map(|a| a.0),
                s_entropy_std: ent.map(|a| a.1),
            }
        })
        .collect();
    let report = AggregateReport { strategies, failures, runs };

    if let Some(dir) = out {
        write_file(&dir.join("metrics.csv"), report.metrics_csv(&spec.strategies, &spec.seeds))?;
        write_file(&dir.join("aggregate.json"), serde_json::to_string_pretty(&report)? + "\n")?;
        for r in &report.runs {
            let path = dir.join(run_dir(r.strategy.as_str(), r.seed)).join("report.json");
            write_file(&path, serde_json::to_string_pretty(r)? + "\n")?;
        }
    }
    Ok(report)
}

fn run_dir(name: &str, seed: u64) -> PathBuf {
    Path::new("runs").join(name).join(seed.to_string())
}

fn write_file(path: &Path, text: String) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Checkpoint target below `out`, returned as (absolute, relative) paths.
fn ckpt(out: Option<&Path>, name: &str, seed: u64, file: &str) -> (Option<PathBuf>, Option<String>) {
    let rel = run_dir(name, seed).join(file);
    match out {
        Some(dir) => (Some(dir.join(&rel)), Some(rel.display().to_string())),
        None => (None, None),
    }
}

fn run_cell(spec: &ExperimentSpec, data: &SampleSet, seed: u64, out: Option<&Path>) -> CellOutcome {
    let mut pretrain = None;
    if spec.strategies.iter().any(|s| s.uses_step1()) {
        let start = Instant::now();
        let mut s1 = spec.step1.clone();
        s1.seed = seed;
        let (abs, rel) = ckpt(out, "step1", seed, "autoencoder.ckpt");
        let r = build_autoencoder(&spec.model, seed)
            .and_then(|(enc, dec)| train_step1(enc, dec, data, &s1, abs.as_deref()))
            .map(|(mut report, model)| {
                report.checkpoint = rel;
                (report, model, start.elapsed().as_secs_f64())
            })
            .map_err(|e| format!("step 1 failed: {e}"));
        pretrain = Some(r);
    }

    let mut outcome = Vec::new();
    for &strategy in &spec.strategies {
        let start = Instant::now();
        let (abs, rel) = ckpt(out, strategy.as_str(), seed, "model.ckpt");
        let result: std::result::Result<(RunReport, Option<RunReport>, f64), String> = match strategy {
            Strategy::Xent | Strategy::JointCam | Strategy::JointGaze => {
                train_baseline(&spec.model, data, &spec.baseline_spec(strategy, seed), abs.as_deref())
                    .map(|(r, _)| (r, None, 0.0))
                    .map_err(|e| e.to_string())
            }
            Strategy::Mentor | Strategy::MentorJointCam => match pretrain.as_ref().expect("step 1 ran") {
                Err(e) => Err(e.clone()),
                Ok((p, model, t1)) => {
                    let run = if strategy == Strategy::Mentor {
                        let mut s2 = spec.step2.clone();
                        s2.seed = seed;
                        train_step2_from(model.encoder.clone(), data, &s2, abs.as_deref())
                    } else {
                        let s = spec.baseline_spec(strategy, seed);
                        super::build_classifier(
                            model.encoder.clone(),
                            spec.model.num_classes,
                            crate::seed::derive(seed, crate::seed::stream::HEAD_INIT),
                        )
                        .and_then(|m| super::train_classifier(m, data, &s, abs.as_deref()))
                    };
                    run.map(|(r, _)| (r, Some(p.clone()), *t1)).map_err(|e| e.to_string())
                }
            },
        };
        outcome.push((
            strategy,
            result.map(|(mut report, pretrain, t1)| {
                report.checkpoint = rel;
                RunRecord {
                    strategy,
                    seed,
                    report,
                    pretrain,
                    wall_time_seconds: t1 + start.elapsed().as_secs_f64(),
                }
            }),
        ));
    }
    outcome
}
