//! Report JSON and the CSV bundle derived from traces.
//!
//! `p_true` is always `1 − loss`; for classifier targets that is the
//! true-class probability.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use adversarial_examiner::{Direction, ExamTrace, Scenario};
use serde::{Deserialize, Serialize};

use crate::manifest::OutputDir;
use crate::HarnessError;

/// One examined (instance, seed) cell as fed to the report.
#[derive(Debug, Clone)]
pub struct RunRecord {
    /// Which trace file the run lives in, e.g. `seed-3`.
    pub source: String,
    pub seed: Option<u64>,
    pub class: String,
    pub trace: ExamTrace,
    /// Whether the target got each of the last-K scenarios right, when
    /// that can be recomputed; otherwise `p_true > 1/2` stands in.
    pub correct: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub source: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub instance: String,
    pub class: String,
    pub final_loss: f64,
    pub best_loss: f64,
    pub final_p_true: f64,
    pub best_p_true: f64,
    /// Step at which the best loss was first reached.
    pub best_t: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAggregate {
    pub class: String,
    pub runs: usize,
    pub mean_final_loss: f64,
    pub mean_best_loss: f64,
    pub mean_final_p_true: f64,
    pub mean_best_p_true: f64,
}

/// Loss vs t averaged over the instances of one source (or all runs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub source: String,
    pub mean_loss: Vec<f64>,
    pub mean_best_loss: Vec<f64>,
}

/// One column of the budget table; `t = 0` is the random-scenario metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub t: usize,
    pub best_p_true: f64,
    pub final_p_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    pub factor: String,
    pub train_lower: f64,
    pub train_upper: f64,
    /// Share of the factor's examination range outside training: what a
    /// uniform examiner recovers on average.
    pub excluded_fraction: f64,
    pub window: usize,
    /// `None` when the restriction excludes nothing.
    pub per_seed: Option<Vec<SeedRate>>,
    pub mean_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRate {
    pub seed: u64,
    pub rate: f64,
}

/// Final scenario of a strength run: the view the target finds easiest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct View {
    pub source: String,
    pub instance: String,
    pub scenario: Scenario,
    pub p_true: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub command: String,
    pub direction: Direction,
    pub factor_names: Vec<String>,
    pub runs: Vec<RunSummary>,
    pub classes: Vec<ClassAggregate>,
    pub curves: Vec<Curve>,
    pub mean_curve: Curve,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checkpoints: Vec<CheckpointRow>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recovery: Option<Recovery>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub easiest_views: Vec<View>,
}

pub fn p_true(loss: f64) -> f64 {
    1.0 - loss
}

fn mean(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    sum / n as f64
}

impl Report {
    pub fn build(command: &str, direction: Direction, factor_names: Vec<String>, records: &[RunRecord]) -> Self {
        let runs: Vec<RunSummary> = records
            .iter()
            .map(|r| {
                let tr = &r.trace;
                let best_t = tr
                    .steps
                    .iter()
                    .find(|s| s.loss == tr.best_loss)
                    .map_or(0, |s| s.t);
                RunSummary {
                    source: r.source.clone(),
                    seed: r.seed,
                    instance: tr.instance_id.clone(),
                    class: r.class.clone(),
                    final_loss: tr.final_loss,
                    best_loss: tr.best_loss,
                    final_p_true: p_true(tr.final_loss),
                    best_p_true: p_true(tr.best_loss),
                    best_t,
                }
            })
            .collect();
        let classes = class_aggregates(&runs);

        let mut by_source: Vec<(String, Vec<&ExamTrace>)> = Vec::new();
        for r in records {
            match by_source.iter_mut().find(|(s, _)| *s == r.source) {
                Some((_, v)) => v.push(&r.trace),
                None => by_source.push((r.source.clone(), vec![&r.trace])),
            }
        }
        let curves = by_source.iter().map(|(s, ts)| curve(s, ts)).collect();
        let all: Vec<&ExamTrace> = records.iter().map(|r| &r.trace).collect();
        Self {
            command: command.to_string(),
            direction,
            factor_names,
            runs,
            classes,
            curves,
            mean_curve: curve("all", &all),
            checkpoints: Vec::new(),
            recovery: None,
            easiest_views: Vec::new(),
        }
    }
}

/// Per-class means over run summaries, sorted by class name.
pub fn class_aggregates(runs: &[RunSummary]) -> Vec<ClassAggregate> {
    let mut groups: BTreeMap<&str, Vec<&RunSummary>> = BTreeMap::new();
    for r in runs {
        groups.entry(&r.class).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(class, rs)| ClassAggregate {
            class: class.to_string(),
            runs: rs.len(),
            mean_final_loss: mean(rs.iter().map(|r| r.final_loss)),
            mean_best_loss: mean(rs.iter().map(|r| r.best_loss)),
            mean_final_p_true: mean(rs.iter().map(|r| r.final_p_true)),
            mean_best_p_true: mean(rs.iter().map(|r| r.best_p_true)),
        })
        .collect()
}

/// Averages over traces at each t; traces shorter than t drop out.
fn curve(source: &str, traces: &[&ExamTrace]) -> Curve {
    let len = traces.iter().map(|t| t.len()).max().unwrap_or(0);
    let bests: Vec<Vec<f64>> = traces.iter().map(|t| t.best_curve()).collect();
    let mut mean_loss = Vec::with_capacity(len);
    let mut mean_best_loss = Vec::with_capacity(len);
    for i in 0..len {
        mean_loss.push(mean(traces.iter().filter_map(|t| t.steps.get(i)).map(|s| s.loss)));
        mean_best_loss.push(mean(bests.iter().filter_map(|b| b.get(i).copied())));
    }
    Curve {
        source: source.to_string(),
        mean_loss,
        mean_best_loss,
    }
}

pub fn curve_csv(trace: &ExamTrace) -> String {
    let mut out = String::from("instance,t,loss,p_true\n");
    for s in &trace.steps {
        let _ = writeln!(out, "{},{},{},{}", trace.instance_id, s.t, s.loss, p_true(s.loss));
    }
    out
}

pub fn classes_csv(classes: &[ClassAggregate]) -> String {
    let mut out = String::from("class,runs,mean_final_loss,mean_best_loss,mean_final_p_true,mean_best_p_true\n");
    for c in classes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.class, c.runs, c.mean_final_loss, c.mean_best_loss, c.mean_final_p_true, c.mean_best_p_true
        );
    }
    out
}

pub fn checkpoints_csv(rows: &[CheckpointRow]) -> String {
    let mut out = String::from("t,best_p_true,final_p_true\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.t, r.best_p_true, r.final_p_true);
    }
    out
}

/// Last `k` scenarios of every run, one row each, for external embedding.
pub fn scenario_matrix_csv(records: &[RunRecord], factor_names: &[String], k: usize) -> String {
    let mut out = String::from("source,instance,class,t");
    for name in factor_names {
        out.push(',');
        out.push_str(name);
    }
    out.push_str(",loss,p_true,correct\n");
    for r in records {
        let steps = &r.trace.steps;
        let tail = &steps[steps.len().saturating_sub(k)..];
        for (i, s) in tail.iter().enumerate() {
            let p = p_true(s.loss);
            let correct = match &r.correct {
                Some(flags) => flags[i],
                None => p > 0.5,
            };
            let _ = write!(out, "{},{},{},{}", r.source, r.trace.instance_id, r.class, s.t);
            for v in s.scenario.values() {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{},{}", s.loss, p, u8::from(correct));
        }
    }
    out
}

/// Writes `report.json` and the CSV bundle.
pub fn write_bundle(
    out: &mut OutputDir,
    report: &Report,
    records: &[RunRecord],
    last_k: usize,
) -> Result<(), HarnessError> {
    out.write_json("report.json", report)?;
    for r in records {
        let name = format!("curves/{}/{}.csv", r.source, r.trace.instance_id);
        out.write(&name, curve_csv(&r.trace).as_bytes())?;
    }
    out.write("classes.csv", classes_csv(&report.classes).as_bytes())?;
    out.write(
        "scenarios.csv",
        scenario_matrix_csv(records, &report.factor_names, last_k).as_bytes(),
    )?;
    if !report.checkpoints.is_empty() {
        out.write("checkpoints.csv", checkpoints_csv(&report.checkpoints).as_bytes())?;
    }
    Ok(())
}
