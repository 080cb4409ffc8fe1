//! Experiment configuration: a JSON file, optionally overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use adversarial_examiner::bo::{KernelConfig, UcbConfig};
use adversarial_examiner::rl::RlConfig;
use adversarial_examiner::targets::{
    render_space, restrict_training_space, AnalyticLandscape, ShapeInstance, TrainingOptions,
};
use adversarial_examiner::{Direction, ScenarioSpace};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub examiner: ExaminerSpec,
    /// Examination budget per instance.
    #[serde(rename = "T")]
    pub steps: usize,
    /// Canonical instance ids to examine; all six when absent.
    pub instances: Option<Vec<String>>,
    pub seeds: Vec<u64>,
    pub direction: Direction,
    /// Budgets to tabulate; 0 means the standard (random-scenario) metric.
    pub t_checkpoints: Vec<usize>,
    /// Scenario count behind the T=0 column.
    pub standard_samples: usize,
    pub training: TrainingSpec,
    /// Scenarios per run kept in the scenario matrix.
    pub last_k: usize,
    pub dump_images: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            target: TargetSpec::Shapes { checkpoint: None },
            examiner: ExaminerSpec::default(),
            steps: 500,
            instances: None,
            seeds: vec![0],
            direction: Direction::Weakness,
            t_checkpoints: Vec::new(),
            standard_samples: 500,
            training: TrainingSpec::default(),
            last_k: 50,
            dump_images: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TargetSpec {
    /// The shape classifier. Without a checkpoint one is trained from
    /// `training` before examination.
    Shapes { checkpoint: Option<PathBuf> },
    /// A built-in landscape (`single-bump`, `three-bump`, `ridge`) or a
    /// landscape JSON file.
    Landscape {
        name: Option<String>,
        path: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExaminerKind {
    Rl,
    Bo,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExaminerSpec {
    pub kind: ExaminerKind,
    pub rl: RlConfig,
    pub kernel: KernelConfig,
    pub ucb: UcbConfig,
}

impl Default for ExaminerSpec {
    fn default() -> Self {
        Self {
            kind: ExaminerKind::Rl,
            rl: RlConfig::desk_scale(),
            kernel: KernelConfig::default(),
            ucb: UcbConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSpec {
    /// Images per instance.
    pub m: usize,
    pub epochs: usize,
    pub seed: u64,
    pub options: TrainingOptions,
    /// Narrowed factor range used only for training.
    pub restriction: Option<Restriction>,
    /// Random full-space scenarios per instance for held-out accuracy.
    pub heldout_samples: usize,
}

impl Default for TrainingSpec {
    fn default() -> Self {
        Self {
            m: 10,
            epochs: 500,
            seed: 7,
            options: TrainingOptions::default(),
            restriction: None,
            heldout_samples: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Restriction {
    pub factor: String,
    pub lower: f64,
    pub upper: f64,
}

/// Flag values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seeds: Option<Vec<u64>>,
    pub steps: Option<usize>,
    pub t_checkpoints: Option<Vec<usize>>,
    pub examiner: Option<ExaminerKind>,
    pub m: Option<usize>,
    pub dump_images: bool,
}

impl ExperimentConfig {
    /// Reads a config file. A run manifest is accepted too, in which case
    /// its recorded config is used. Relative paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if let Some(inner) = value.get_mut("config").filter(|_| value_is_manifest(&text)) {
            value = inner.take();
        }
        let mut config: Self = serde_json::from_value(value)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve_paths(base);
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.target {
            TargetSpec::Shapes { checkpoint: Some(p) } => fix(p),
            TargetSpec::Landscape { path: Some(p), .. } => fix(p),
            _ => {}
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = &o.seeds {
            self.seeds = s.clone();
        }
        if let Some(t) = o.steps {
            self.steps = t;
        }
        if let Some(c) = &o.t_checkpoints {
            self.t_checkpoints = c.clone();
        }
        if let Some(k) = o.examiner {
            self.examiner.kind = k;
        }
        if let Some(m) = o.m {
            self.training.m = m;
        }
        self.dump_images |= o.dump_images;
    }

    /// Checks everything that can be checked before any evaluation.
    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.seeds.is_empty() {
            return bad("seeds must be non-empty".into());
        }
        if self.steps == 0 {
            return bad("T must be at least 1".into());
        }
        if let Some(&t) = self.t_checkpoints.iter().find(|&&t| t > self.steps) {
            return bad(format!("checkpoint {t} exceeds T={}", self.steps));
        }
        if self.standard_samples == 0 {
            return bad("standard_samples must be at least 1".into());
        }
        if self.training.m == 0 || self.training.heldout_samples == 0 {
            return bad("training needs m >= 1 and heldout_samples >= 1".into());
        }
        match &self.target {
            TargetSpec::Shapes { checkpoint } => {
                if let Some(p) = checkpoint {
                    if !p.is_file() {
                        return bad(format!("checkpoint {} does not exist", p.display()));
                    }
                }
                self.shape_instances()?;
                self.training_space()?;
            }
            TargetSpec::Landscape { name, path } => match (name, path) {
                (Some(_), None) | (None, Some(_)) => {
                    if let Some(p) = path {
                        if !p.is_file() {
                            return bad(format!("landscape {} does not exist", p.display()));
                        }
                    }
                }
                _ => return bad("landscape target needs exactly one of `name` or `path`".into()),
            },
        }
        Ok(())
    }

    pub fn shape_instances(&self) -> Result<Vec<ShapeInstance>, HarnessError> {
        let all = ShapeInstance::canonical_set();
        let Some(ids) = &self.instances else {
            return Ok(all);
        };
        if ids.is_empty() {
            return Err(HarnessError::Config("instances must be non-empty".into()));
        }
        ids.iter()
            .map(|id| {
                all.iter()
                    .find(|i| i.instance_id == *id)
                    .cloned()
                    .ok_or_else(|| HarnessError::Config(format!("unknown instance `{id}`")))
            })
            .collect()
    }

    /// Space the classifier is trained on: the render space, narrowed by
    /// the restriction if any.
    pub fn training_space(&self) -> Result<ScenarioSpace, HarnessError> {
        let full = render_space();
        match &self.training.restriction {
            None => Ok(full),
            Some(r) => restrict_training_space(&full, &r.factor, r.lower, r.upper)
                .map_err(|e| HarnessError::Config(format!("restriction: {e}"))),
        }
    }

    pub fn landscape(&self) -> Result<AnalyticLandscape, HarnessError> {
        let TargetSpec::Landscape { name, path } = &self.target else {
            return Err(HarnessError::Config("target is not a landscape".into()));
        };
        if let Some(p) = path {
            let text = fs::read_to_string(p)
                .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", p.display())))?;
            return AnalyticLandscape::from_json(&text)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())));
        }
        let name = name.as_deref().unwrap_or_default();
        AnalyticLandscape::suite_3d()
            .into_iter()
            .find(|l| l.name == name)
            .ok_or_else(|| HarnessError::Config(format!("unknown landscape `{name}`")))
    }
}

fn value_is_manifest(text: &str) -> bool {
    serde_json::from_str::<crate::manifest::Manifest>(text).is_ok()
}
