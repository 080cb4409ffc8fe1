//! The sequential examination loop and its two evaluation metrics.
//!
//! An [`Examiner`] proposes scenarios one at a time and learns from the
//! losses it observes. Examiners always maximize what they are fed; the
//! loop negates the loss in strength mode so the same examiner searches
//! for the model's easiest scenarios instead of its hardest.

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, StreamRng};
use crate::space::{Scenario, ScenarioSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Search for high loss.
    Weakness,
    /// Search for low loss.
    Strength,
}

impl Direction {
    /// The value an examiner should maximize for a given raw loss.
    pub fn examiner_reward(self, loss: f64) -> f64 {
        match self {
            Direction::Weakness => loss,
            Direction::Strength => -loss,
        }
    }

    /// Whether `candidate` is strictly better than `incumbent`.
    pub fn improves(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Direction::Weakness => candidate > incumbent,
            Direction::Strength => candidate < incumbent,
        }
    }
}

/// A black-box model under examination, seen through its scenario space.
///
/// `evaluate` must be deterministic and free of side effects; it may be
/// called concurrently.
pub trait TargetQuery: Sync {
    fn space(&self) -> &ScenarioSpace;

    fn evaluate(&self, scenario: &Scenario) -> f64;

    fn direction(&self) -> Direction {
        Direction::Weakness
    }
}

/// Re-orients any target.
#[derive(Debug, Clone)]
pub struct Directed<T> {
    pub inner: T,
    pub direction: Direction,
}

impl<T: TargetQuery> TargetQuery for Directed<T> {
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

impl<T: TargetQuery + ?Sized> TargetQuery for &T {
    fn space(&self) -> &ScenarioSpace {
        (**self).space()
    }

    fn evaluate(&self, scenario: &Scenario) -> f64 {
        (**self).evaluate(scenario)
    }

    fn direction(&self) -> Direction {
        (**self).direction()
    }
}

/// Stateful scenario proposer. `generate` and `update` strictly alternate
/// and `update` must receive the scenario just generated.
pub trait Examiner {
    fn generate(&mut self) -> Result<Scenario>;

    fn update(&mut self, scenario: &Scenario, reward: f64) -> Result<()>;
}

impl<E: Examiner + ?Sized> Examiner for Box<E> {
    fn generate(&mut self) -> Result<Scenario> {
        (**self).generate()
    }

    fn update(&mut self, scenario: &Scenario, reward: f64) -> Result<()> {
        (**self).update(scenario, reward)
    }
}

/// Tracks the generate/update alternation shared by all examiners.
#[derive(Debug, Clone, Default)]
pub struct PendingScenario(Option<Scenario>);

impl PendingScenario {
    pub fn set(&mut self, scenario: &Scenario) -> Result<()> {
        if self.0.is_some() {
            return Err(Error::Protocol("generate called twice without update".into()));
        }
        self.0 = Some(scenario.clone());
        Ok(())
    }

    pub fn take(&mut self, scenario: &Scenario) -> Result<()> {
        match self.0.take() {
            None => Err(Error::Protocol("update without a preceding generate".into())),
            Some(expected) if &expected != scenario => {
                self.0 = Some(expected);
                Err(Error::Protocol(
                    "update received a scenario other than the one just generated".into(),
                ))
            }
            Some(_) => Ok(()),
        }
    }
}

/// Uniform random search; the standard protocol recast as an examiner.
#[derive(Debug, Clone)]
pub struct RandomExaminer {
    space: ScenarioSpace,
    rng: StreamRng,
    pending: PendingScenario,
}

impl RandomExaminer {
    pub fn new(space: ScenarioSpace, rng: StreamRng) -> Self {
        Self {
            space,
            rng,
            pending: PendingScenario::default(),
        }
    }
}

impl Examiner for RandomExaminer {
    fn generate(&mut self) -> Result<Scenario> {
        let s = self.space.sample_uniform(&mut self.rng);
        self.pending.set(&s)?;
        Ok(s)
    }

    fn update(&mut self, scenario: &Scenario, _reward: f64) -> Result<()> {
        self.pending.take(scenario)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub t: usize,
    pub scenario: Scenario,
    pub loss: f64,
}

/// Full testing history of one examined instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExamTrace {
    pub instance_id: String,
    pub direction: Direction,
    pub steps: Vec<TraceStep>,
    pub final_loss: f64,
    pub best_loss: f64,
    pub argbest: Scenario,
}

impl ExamTrace {
    /// Builds a trace from raw steps, deriving the final and best entries.
    /// Ties keep the earliest step.
    pub fn from_steps(
        instance_id: impl Into<String>,
        direction: Direction,
        steps: Vec<TraceStep>,
    ) -> Result<Self> {
        let last = steps
            .last()
            .ok_or_else(|| Error::InvalidConfig("a trace needs at least one step".into()))?;
        for (i, step) in steps.iter().enumerate() {
            if step.t != i + 1 {
                return Err(Error::InvalidConfig(format!(
                    "trace steps must run 1..T, found t={} at position {}",
                    step.t,
                    i + 1
                )));
            }
        }
        let final_loss = last.loss;
        let mut best = &steps[0];
        for step in &steps[1..] {
            if direction.improves(step.loss, best.loss) {
                best = step;
            }
        }
        Ok(Self {
            instance_id: instance_id.into(),
            direction,
            final_loss,
            best_loss: best.loss,
            argbest: best.scenario.clone(),
            steps,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.loss)
    }

    /// Best-so-far loss after each step.
    pub fn best_curve(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps.len());
        let mut best = f64::NAN;
        for step in &self.steps {
            if best.is_nan() || self.direction.improves(step.loss, best) {
                best = step.loss;
            }
            out.push(best);
        }
        out
    }

    /// The trace as it stood after its first `t` steps.
    pub fn prefix(&self, t: usize) -> Result<Self> {
        if t == 0 || t > self.steps.len() {
            return Err(Error::InvalidConfig(format!(
                "prefix length {t} outside 1..={}",
                self.steps.len()
            )));
        }
        Self::from_steps(self.instance_id.clone(), self.direction, self.steps[..t].to_vec())
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for step in &self.steps {
            let line = TraceLine {
                instance: self.instance_id.clone(),
                t: step.t,
                scenario: step.scenario.clone(),
                loss: step.loss,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// One JSONL record: `{"instance": id, "t": int, "scenario": [..], "loss": x}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub instance: String,
    pub t: usize,
    pub scenario: Scenario,
    pub loss: f64,
}

/// Error raised while parsing a trace stream, with 1-based line number.
#[derive(Debug, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

/// Reads a JSONL trace stream, grouping lines by instance in order of
/// first appearance.
pub fn read_traces_jsonl<R: BufRead>(
    input: R,
    direction: Direction,
) -> std::result::Result<Vec<ExamTrace>, TraceParseError> {
    let mut groups: Vec<(String, Vec<TraceStep>)> = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| TraceParseError {
            line: lineno,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceLine = serde_json::from_str(&line).map_err(|e| TraceParseError {
            line: lineno,
            message: e.to_string(),
        })?;
        let step = TraceStep {
            t: rec.t,
            scenario: rec.scenario,
            loss: rec.loss,
        };
        match groups.iter_mut().find(|(id, _)| *id == rec.instance) {
            Some((_, steps)) => steps.push(step),
            None => groups.push((rec.instance, vec![step])),
        }
    }
    groups
        .into_iter()
        .map(|(id, steps)| {
            ExamTrace::from_steps(id.clone(), direction, steps).map_err(|e| TraceParseError {
                line: 0,
                message: format!("instance `{id}`: {e}"),
            })
        })
        .collect()
}

/// Runs one examination: `steps` rounds of generate → evaluate → update.
///
/// Losses are recorded raw; the examiner receives them oriented by the
/// target's direction. An out-of-bounds proposal aborts the run.
pub fn run_examination<E: Examiner + ?Sized>(
    target: &dyn TargetQuery,
    examiner: &mut E,
    steps: usize,
    instance_id: &str,
) -> Result<ExamTrace> {
    if steps == 0 {
        return Err(Error::InvalidConfig("examination needs T >= 1".into()));
    }
    let direction = target.direction();
    let space = target.space();
    let mut history = Vec::with_capacity(steps);
    for t in 1..=steps {
        let scenario = examiner.generate()?;
        space.check(&scenario)?;
        let loss = target.evaluate(&scenario);
        examiner.update(&scenario, direction.examiner_reward(loss))?;
        history.push(TraceStep { t, scenario, loss });
    }
    ExamTrace::from_steps(instance_id, direction, history)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricMode {
    /// Mean last-iterate loss.
    Final,
    /// Mean best-so-far loss over the whole run.
    Best,
}

/// Mean over instances of the final or best loss.
pub fn examiner_metric(traces: &[ExamTrace], mode: MetricMode) -> Result<f64> {
    let first = traces
        .first()
        .ok_or_else(|| Error::InvalidConfig("examiner metric over zero traces".into()))?;
    for trace in traces {
        if trace.len() != first.len() || trace.direction != first.direction {
            return Err(Error::InvalidConfig(
                "traces disagree on T or direction".into(),
            ));
        }
    }
    let total: f64 = traces
        .iter()
        .map(|t| match mode {
            MetricMode::Final => t.final_loss,
            MetricMode::Best => t.best_loss,
        })
        .sum();
    Ok(total / traces.len() as f64)
}

/// Monte Carlo average-case loss over `n` uniform scenarios.
pub fn standard_metric(target: &dyn TargetQuery, n: usize, rng_seed: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidConfig("standard metric needs N >= 1".into()));
    }
    let mut rng = numerics::stream(rng_seed, 0);
    Ok(mean_random_loss(target, n, &mut rng))
}

fn mean_random_loss<R: Rng>(target: &dyn TargetQuery, n: usize, rng: &mut R) -> f64 {
    let space = target.space();
    let total: f64 = (0..n)
        .map(|_| target.evaluate(&space.sample_uniform(rng)))
        .sum();
    total / n as f64
}
