use std::collections::BTreeMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use adversarial_examiner::bo::BoExaminer;
use adversarial_examiner::numerics::stream;
use adversarial_examiner::rl::RlExaminer;
use adversarial_examiner::targets::{
    render, render_space, train_classifier, AnalyticLandscape, Classifier, ShapeInstance, ShapeTarget,
    TrainingMetrics,
};
use adversarial_examiner::{
    examiner_metric, read_traces_jsonl, run_examination, standard_metric, Direction, ExamTrace, Examiner,
    MetricMode, RandomExaminer, Scenario, ScenarioSpace, TargetQuery,
};
use serde::{Deserialize, Serialize};

use crate::config::{ExaminerKind, ExperimentConfig, TargetSpec};
use crate::manifest::{sha256_file, Manifest, OutputDir};
use crate::report::{self, p_true, CheckpointRow, Recovery, Report, RunRecord, SeedRate, View};
use crate::HarnessError;

/// Trailing window used for recovery rates.
const RECOVERY_WINDOW: usize = 50;

#[derive(Debug)]
pub struct Outcome {
    pub report: Report,
    pub manifest: Manifest,
}

/// `training_metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    #[serde(flatten)]
    pub metrics: TrainingMetrics,
    /// Accuracy on uniform scenarios of the full render space.
    pub heldout_accuracy: f64,
    pub heldout_images: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub classifier: Classifier,
    pub report: TrainReport,
    pub manifest: Manifest,
}

/// A target oriented for one examination.
struct Oriented<'a> {
    inner: &'a dyn TargetQuery,
    direction: Direction,
}

impl TargetQuery for Oriented<'_> {
    fn space(&self) -> &ScenarioSpace {
        self.inner.space()
    }

    fn evaluate(&self, scenario: &Scenario) -> f64 {
        self.inner.evaluate(scenario)
    }

    fn direction(&self) -> Direction {
        self.direction
    }
}

enum Prepared {
    Shapes {
        classifier: Arc<Classifier>,
        instances: Vec<ShapeInstance>,
        targets: Vec<ShapeTarget>,
    },
    Landscape(AnalyticLandscape),
}

impl Prepared {
    fn space(&self) -> ScenarioSpace {
        match self {
            Self::Shapes { .. } => render_space(),
            Self::Landscape(l) => l.space.clone(),
        }
    }

    /// (instance id, class, target) per examined instance.
    fn cells(&self) -> Vec<(String, String, &dyn TargetQuery)> {
        match self {
            Self::Shapes { instances, targets, .. } => instances
                .iter()
                .zip(targets)
                .map(|(i, t)| (i.instance_id.clone(), i.class.name().to_string(), t as &dyn TargetQuery))
                .collect(),
            Self::Landscape(l) => vec![(l.name.clone(), l.name.clone(), l as &dyn TargetQuery)],
        }
    }

    /// Correctness of the classifier on each scenario, when there is one.
    fn correctness(&self, instance: &str, scenarios: &[&Scenario]) -> Option<Vec<bool>> {
        let Self::Shapes { classifier, instances, .. } = self else {
            return None;
        };
        let inst = instances.iter().find(|i| i.instance_id == instance)?;
        Some(
            scenarios
                .iter()
                .map(|s| {
                    let probs = classifier.classify(&render(inst, s));
                    argmax(&probs) == inst.label()
                })
                .collect(),
        )
    }
}

fn argmax(xs: &[f64]) -> usize {
    (0..xs.len())
        .max_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(b.cmp(&a)))
        .unwrap_or(0)
}

fn train_from_config(config: &ExperimentConfig) -> Result<(Classifier, TrainReport), HarnessError> {
    let t = &config.training;
    let instances = config.shape_instances()?;
    let space = config.training_space()?;
    let (classifier, metrics) = train_classifier(&instances, t.m, &space, t.epochs, t.seed, &t.options)?;
    let heldout_accuracy = heldout_accuracy(&classifier, &instances, t.heldout_samples, t.seed);
    Ok((
        classifier,
        TrainReport {
            metrics,
            heldout_accuracy,
            heldout_images: instances.len() * t.heldout_samples,
        },
    ))
}

/// Accuracy over `n` uniform render-space scenarios per instance, drawn
/// from a stream disjoint from the training draws.
pub fn heldout_accuracy(classifier: &Classifier, instances: &[ShapeInstance], n: usize, seed: u64) -> f64 {
    let space = render_space();
    let mut rng = stream(seed, 2);
    let mut correct = 0usize;
    for inst in instances {
        for _ in 0..n {
            let s = space.sample_uniform(&mut rng);
            if argmax(&classifier.classify(&render(inst, &s))) == inst.label() {
                correct += 1;
            }
        }
    }
    correct as f64 / (instances.len() * n) as f64
}

/// Loads or trains the target. A freshly trained classifier is written to
/// the output directory alongside its metrics.
fn prepare(
    config: &ExperimentConfig,
    out: &mut OutputDir,
    inputs: &mut BTreeMap<String, String>,
) -> Result<Prepared, HarnessError> {
    match &config.target {
        TargetSpec::Shapes { checkpoint } => {
            let classifier = match checkpoint {
                Some(path) => {
                    inputs.insert(path.display().to_string(), sha256_file(path)?);
                    let text = fs::read_to_string(path)?;
                    Classifier::from_json(&text)
                        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?
                }
                None => {
                    let (classifier, metrics) = train_from_config(config)?;
                    out.write_json("classifier.json", &classifier)?;
                    out.write_json("training_metrics.json", &metrics)?;
                    classifier
                }
            };
            let classifier = Arc::new(classifier);
            let instances = config.shape_instances()?;
            let targets = instances
                .iter()
                .map(|i| ShapeTarget::new(classifier.clone(), i.clone()))
                .collect();
            Ok(Prepared::Shapes {
                classifier,
                instances,
                targets,
            })
        }
        TargetSpec::Landscape { path, .. } => {
            if let Some(p) = path {
                inputs.insert(p.display().to_string(), sha256_file(p)?);
            }
            Ok(Prepared::Landscape(config.landscape()?))
        }
    }
}

/// Builds the configured examiner for one cell. The stream depends on
/// the seed and the instance position only.
pub fn build_examiner(
    config: &ExperimentConfig,
    space: &ScenarioSpace,
    seed: u64,
    cell: usize,
) -> Result<Box<dyn Examiner>, HarnessError> {
    let rng = stream(seed, 1 + cell as u64);
    let spec = &config.examiner;
    Ok(match spec.kind {
        ExaminerKind::Rl => Box::new(RlExaminer::new(space.clone(), spec.rl.clone(), rng)?),
        ExaminerKind::Bo => Box::new(BoExaminer::new(space.clone(), spec.kernel, spec.ucb.clone(), rng)?),
        ExaminerKind::Random => Box::new(RandomExaminer::new(space.clone(), rng)),
    })
}

/// Rejects examiner settings that do not fit the target space, before
/// anything is evaluated.
fn check_examiner(config: &ExperimentConfig, space: &ScenarioSpace) -> Result<(), HarnessError> {
    let spec = &config.examiner;
    let result = match spec.kind {
        ExaminerKind::Rl => spec.rl.validate(space),
        ExaminerKind::Bo => spec.kernel.validate().and_then(|_| spec.ucb.validate()),
        ExaminerKind::Random => Ok(()),
    };
    result.map_err(|e| HarnessError::Config(format!("examiner: {e}")))
}

fn source_name(seed: u64) -> String {
    format!("seed-{seed}")
}

/// Runs every (seed, instance) cell and writes one trace file per seed.
fn examine_all(
    config: &ExperimentConfig,
    prepared: &Prepared,
    direction: Direction,
    out: &mut OutputDir,
) -> Result<Vec<RunRecord>, HarnessError> {
    let space = prepared.space();
    check_examiner(config, &space)?;
    let cells = prepared.cells();
    let mut records = Vec::new();
    for &seed in &config.seeds {
        let mut jsonl = Vec::new();
        for (index, (id, class, target)) in cells.iter().enumerate() {
            let oriented = Oriented {
                inner: *target,
                direction,
            };
            let mut examiner = build_examiner(config, &space, seed, index)?;
            let trace = run_examination(&oriented, &mut examiner, config.steps, id)?;
            trace.write_jsonl(&mut jsonl)?;
            let steps = &trace.steps;
            let tail: Vec<&Scenario> = steps[steps.len().saturating_sub(config.last_k)..]
                .iter()
                .map(|s| &s.scenario)
                .collect();
            records.push(RunRecord {
                source: source_name(seed),
                seed: Some(seed),
                class: class.clone(),
                correct: prepared.correctness(id, &tail),
                trace,
            });
        }
        out.write(&format!("traces/{}.jsonl", source_name(seed)), &jsonl)?;
    }
    Ok(records)
}

/// Table of p_true at each requested budget, read off the prefixes of
/// the full runs. Budget 0 is the random-scenario metric.
fn checkpoint_rows(
    config: &ExperimentConfig,
    prepared: &Prepared,
    records: &[RunRecord],
) -> Result<Vec<CheckpointRow>, HarnessError> {
    let mut rows = Vec::new();
    for &t in &config.t_checkpoints {
        if t == 0 {
            let mut losses = Vec::new();
            for &seed in &config.seeds {
                for (_, _, target) in prepared.cells() {
                    losses.push(standard_metric(target, config.standard_samples, seed)?);
                }
            }
            let p = p_true(losses.iter().sum::<f64>() / losses.len() as f64);
            rows.push(CheckpointRow {
                t,
                best_p_true: p,
                final_p_true: p,
            });
            continue;
        }
        let prefixes = records
            .iter()
            .map(|r| r.trace.prefix(t))
            .collect::<Result<Vec<ExamTrace>, _>>()?;
        rows.push(CheckpointRow {
            t,
            best_p_true: p_true(examiner_metric(&prefixes, MetricMode::Best)?),
            final_p_true: p_true(examiner_metric(&prefixes, MetricMode::Final)?),
        });
    }
    Ok(rows)
}

fn dump_images(prepared: &Prepared, records: &[RunRecord], out: &mut OutputDir) -> Result<(), HarnessError> {
    let Prepared::Shapes { instances, .. } = prepared else {
        return Ok(());
    };
    for r in records {
        let tr = &r.trace;
        let Some(inst) = instances.iter().find(|i| i.instance_id == tr.instance_id) else {
            continue;
        };
        let last = &tr.steps[tr.steps.len() - 1].scenario;
        for (tag, scenario) in [("final", last), ("best", &tr.argbest)] {
            let name = format!("images/{}/{}-{tag}.pgm", r.source, tr.instance_id);
            out.write(&name, render(inst, scenario).to_pgm().as_bytes())?;
        }
    }
    Ok(())
}

fn factor_names(space: &ScenarioSpace) -> Vec<String> {
    space.factors().iter().map(|f| f.name.clone()).collect()
}

fn run_and_report(
    command: &str,
    config: &ExperimentConfig,
    direction: Direction,
    out_dir: &Path,
    finish: impl FnOnce(&Prepared, &[RunRecord], &mut Report) -> Result<(), HarnessError>,
) -> Result<Outcome, HarnessError> {
    config.validate()?;
    let mut out = OutputDir::open(out_dir)?;
    let mut inputs = BTreeMap::new();
    let prepared = prepare(config, &mut out, &mut inputs)?;
    let records = examine_all(config, &prepared, direction, &mut out)?;
    let mut report = Report::build(command, direction, factor_names(&prepared.space()), &records);
    report.checkpoints = checkpoint_rows(config, &prepared, &records)?;
    finish(&prepared, &records, &mut report)?;
    report::write_bundle(&mut out, &report, &records, config.last_k)?;
    if config.dump_images {
        dump_images(&prepared, &records, &mut out)?;
    }
    let manifest = out.finish(command, config, inputs)?;
    Ok(Outcome { report, manifest })
}

pub fn cmd_train(config: &ExperimentConfig, out_dir: &Path) -> Result<TrainOutcome, HarnessError> {
    config.validate()?;
    if !matches!(config.target, TargetSpec::Shapes { .. }) {
        return Err(HarnessError::Config("train needs a shapes target".into()));
    }
    let mut out = OutputDir::open(out_dir)?;
    let (classifier, report) = train_from_config(config)?;
    out.write_json("classifier.json", &classifier)?;
    out.write_json("training_metrics.json", &report)?;
    let manifest = out.finish("train", config, BTreeMap::new())?;
    Ok(TrainOutcome {
        classifier,
        report,
        manifest,
    })
}

pub fn cmd_examine(config: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, HarnessError> {
    run_and_report("examine", config, config.direction, out_dir, |_, _, _| Ok(()))
}

pub fn cmd_strength(config: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, HarnessError> {
    let mut config = config.clone();
    config.direction = Direction::Strength;
    run_and_report("strength", &config, Direction::Strength, out_dir, |_, records, report| {
        report.easiest_views = records
            .iter()
            .map(|r| {
                let last = &r.trace.steps[r.trace.steps.len() - 1];
                View {
                    source: r.source.clone(),
                    instance: r.trace.instance_id.clone(),
                    scenario: last.scenario.clone(),
                    p_true: p_true(last.loss),
                }
            })
            .collect();
        Ok(())
    })
}

/// Share of the last `window` scenarios whose `factor` value lies outside
/// `[lower, upper]`.
pub fn recovery_rate(trace: &ExamTrace, factor: usize, lower: f64, upper: f64, window: usize) -> f64 {
    let steps = &trace.steps;
    let tail = &steps[steps.len().saturating_sub(window)..];
    let outside = tail
        .iter()
        .filter(|s| {
            let v = s.scenario[factor];
            v < lower || v > upper
        })
        .count();
    outside as f64 / tail.len() as f64
}

pub fn cmd_weakness_study(config: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, HarnessError> {
    let Some(restriction) = config.training.restriction.clone() else {
        return Err(HarnessError::Config(
            "weakness-study needs `training.restriction` metadata".into(),
        ));
    };
    if !matches!(config.target, TargetSpec::Shapes { .. }) {
        return Err(HarnessError::Config("weakness-study needs a shapes target".into()));
    }
    // Fails early on a bad restriction.
    config.training_space()?;
    run_and_report("weakness-study", config, config.direction, out_dir, |_, records, report| {
        let space = render_space();
        let index = space
            .index_of(&restriction.factor)
            .ok_or_else(|| HarnessError::Config(format!("unknown factor `{}`", restriction.factor)))?;
        let full = &space.factors()[index];
        let excluded = 1.0 - (restriction.upper - restriction.lower) / full.width();
        let applicable = excluded > 0.0;
        let per_seed = applicable.then(|| {
            config
                .seeds
                .iter()
                .map(|&seed| {
                    let rates: Vec<f64> = records
                        .iter()
                        .filter(|r| r.seed == Some(seed))
                        .map(|r| recovery_rate(&r.trace, index, restriction.lower, restriction.upper, RECOVERY_WINDOW))
                        .collect();
                    SeedRate {
                        seed,
                        rate: rates.iter().sum::<f64>() / rates.len() as f64,
                    }
                })
                .collect::<Vec<_>>()
        });
        let mean_rate = per_seed
            .as_ref()
            .map(|v| v.iter().map(|s| s.rate).sum::<f64>() / v.len() as f64);
        report.recovery = Some(Recovery {
            factor: restriction.factor.clone(),
            train_lower: restriction.lower,
            train_upper: restriction.upper,
            excluded_fraction: excluded,
            window: RECOVERY_WINDOW,
            per_seed,
            mean_rate,
        });
        Ok(())
    })
}

/// Builds a report from existing trace files. With a config, its
/// direction applies and a shapes checkpoint enables exact correctness
/// flags and factor names.
pub fn cmd_report(
    config: Option<&ExperimentConfig>,
    traces: &[PathBuf],
    out_dir: &Path,
) -> Result<Outcome, HarnessError> {
    if traces.is_empty() {
        return Err(HarnessError::Config("report needs at least one trace file".into()));
    }
    let config = config.cloned().unwrap_or_default();
    let mut out = OutputDir::open(out_dir)?;
    let mut inputs = BTreeMap::new();
    let prepared = match &config.target {
        TargetSpec::Shapes { checkpoint: Some(_) } | TargetSpec::Landscape { .. } => {
            config.validate()?;
            Some(prepare(&config, &mut out, &mut inputs)?)
        }
        TargetSpec::Shapes { checkpoint: None } => None,
    };
    let mut records = Vec::new();
    let mut width = 0;
    for path in traces {
        let file = fs::File::open(path).map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        inputs.insert(path.display().to_string(), sha256_file(path)?);
        let parsed = read_traces_jsonl(BufReader::new(file), config.direction).map_err(|source| {
            HarnessError::Trace {
                path: path.clone(),
                source,
            }
        })?;
        let source = path
            .file_stem()
            .map_or_else(|| "traces".to_string(), |s| s.to_string_lossy().into_owned());
        for trace in parsed {
            width = width.max(trace.steps[0].scenario.len());
            let steps = &trace.steps;
            let tail: Vec<&Scenario> = steps[steps.len().saturating_sub(config.last_k)..]
                .iter()
                .map(|s| &s.scenario)
                .collect();
            let correct = prepared.as_ref().and_then(|p| p.correctness(&trace.instance_id, &tail));
            let class = match &prepared {
                Some(Prepared::Shapes { instances, .. }) => instances
                    .iter()
                    .find(|i| i.instance_id == trace.instance_id)
                    .map(|i| i.class.name().to_string()),
                _ => None,
            }
            .unwrap_or_else(|| trace.instance_id.clone());
            records.push(RunRecord {
                source: source.clone(),
                seed: None,
                class,
                trace,
                correct,
            });
        }
    }
    let names = match &prepared {
        Some(p) => factor_names(&p.space()),
        None => (0..width).map(|i| format!("s{i}")).collect(),
    };
    let report = Report::build("report", config.direction, names, &records);
    report::write_bundle(&mut out, &report, &records, config.last_k)?;
    let manifest = out.finish("report", &config, inputs)?;
    Ok(Outcome { report, manifest })
}
