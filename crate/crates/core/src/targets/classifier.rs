use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::render::{render, render_space, Image, ShapeInstance, IMAGE_SIZE};
use crate::error::{Error, Result};
use crate::exam::TargetQuery;
use crate::numerics::{self, softmax, AdamState};
use crate::space::{Scenario, ScenarioSpace};

pub const NUM_CLASSES: usize = 6;
const INPUTS: usize = IMAGE_SIZE * IMAGE_SIZE;
const MIN_PIXEL_SD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "type")]
pub enum Architecture {
    /// Multinomial logistic regression on the pixels.
    Linear,
    /// One tanh hidden layer.
    Hidden { units: usize },
}

/// Softmax classifier over 32×32 images. Each image is standardized to
/// zero mean and unit variance, then scaled by `1/sqrt(1024)` so every input
/// vector has unit norm and gradient steps of order one are stable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classifier {
    pub architecture: Architecture,
    /// Row-major `(out × in)` weight matrices, first layer first.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

fn input_scale() -> f64 {
    1.0 / (INPUTS as f64).sqrt()
}

fn affine(weights: &[f64], bias: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    bias.iter()
        .enumerate()
        .map(|(r, b)| b + weights[r * cols..(r + 1) * cols].iter().zip(x).map(|(w, v)| w * v).sum::<f64>())
        .collect()
}

impl Classifier {
    /// All-zero weights: uniform output everywhere.
    pub fn zeros(architecture: Architecture) -> Self {
        let shapes = Self::layer_shapes(architecture);
        Self {
            architecture,
            weights: shapes.iter().map(|&(o, i)| vec![0.0; o * i]).collect(),
            biases: shapes.iter().map(|&(o, _)| vec![0.0; o]).collect(),
        }
    }

    fn layer_shapes(architecture: Architecture) -> Vec<(usize, usize)> {
        match architecture {
            Architecture::Linear => vec![(NUM_CLASSES, INPUTS)],
            Architecture::Hidden { units } => vec![(units, INPUTS), (NUM_CLASSES, units)],
        }
    }

    fn validate(&self) -> Result<()> {
        let shapes = Self::layer_shapes(self.architecture);
        if self.weights.len() != shapes.len() || self.biases.len() != shapes.len() {
            return Err(Error::InvalidConfig("classifier layer count mismatch".into()));
        }
        for ((w, b), (o, i)) in self.weights.iter().zip(&self.biases).zip(shapes) {
            if w.len() != o * i || b.len() != o {
                return Err(Error::DimensionMismatch {
                    expected: o * i,
                    actual: w.len(),
                });
            }
        }
        if self.weights.iter().chain(&self.biases).flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("classifier weights"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Per-image standardization, recentred on the shape's centroid, then
    /// the `1/sqrt(1024)` input scale. A flat image maps to all zeros.
    ///
    /// The centroid is weighted by distance from the median intensity, which
    /// is background whenever the shape covers less than half the frame.
    pub fn features(image: &Image) -> Vec<f64> {
        let (w, h) = (image.width, image.height);
        let n = image.pixels.len() as f64;
        let mean = image.pixels.iter().sum::<f64>() / n;
        let var = image.pixels.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
        let scale = input_scale() / var.sqrt().max(MIN_PIXEL_SD);
        let z: Vec<f64> = image.pixels.iter().map(|p| (p - mean) * scale).collect();

        let mut sorted = z.clone();
        sorted.sort_by(f64::total_cmp);
        let background = sorted[sorted.len() / 2];
        let (mut mass, mut cx, mut cy) = (0.0, 0.0, 0.0);
        for (k, v) in z.iter().enumerate() {
            let weight = (v - background).abs();
            mass += weight;
            cx += weight * (k % w) as f64;
            cy += weight * (k / w) as f64;
        }
        if mass <= 0.0 {
            return z;
        }
        let dx = cx / mass - (w as f64 - 1.0) / 2.0;
        let dy = cy / mass - (h as f64 - 1.0) / 2.0;

        let at = |x: isize, y: isize| -> f64 {
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                background
            } else {
                z[y as usize * w + x as usize]
            }
        };
        let mut out = Vec::with_capacity(z.len());
        for row in 0..h {
            for col in 0..w {
                let (sx, sy) = (col as f64 + dx, row as f64 + dy);
                let (x0, y0) = (sx.floor(), sy.floor());
                let (fx, fy) = (sx - x0, sy - y0);
                let (x0, y0) = (x0 as isize, y0 as isize);
                let top = at(x0, y0) * (1.0 - fx) + at(x0 + 1, y0) * fx;
                let bottom = at(x0, y0 + 1) * (1.0 - fx) + at(x0 + 1, y0 + 1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        out
    }

    /// Forward pass; returns logits and the hidden activations, if any.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Option<Vec<f64>>) {
        match self.architecture {
            Architecture::Linear => (affine(&self.weights[0], &self.biases[0], x), None),
            Architecture::Hidden { .. } => {
                let hidden: Vec<f64> = affine(&self.weights[0], &self.biases[0], x)
                    .into_iter()
                    .map(f64::tanh)
                    .collect();
                (affine(&self.weights[1], &self.biases[1], &hidden), Some(hidden))
            }
        }
    }

    /// Class probabilities for an image.
    pub fn classify(&self, image: &Image) -> Vec<f64> {
        let (logits, _) = self.forward(&Self::features(image));
        softmax(&logits).expect("finite logits from finite weights")
    }

    pub fn p_true(&self, instance: &ShapeInstance, scenario: &Scenario) -> f64 {
        self.classify(&render(instance, scenario))[instance.label()]
    }

    /// `1 - p_true`: the negated true-class probability shifted into
    /// `[0, 1]`.
    pub fn loss_of(&self, instance: &ShapeInstance, scenario: &Scenario) -> f64 {
        (1.0 - self.p_true(instance, scenario)).clamp(0.0, 1.0)
    }

    /// Mean cross-entropy and accuracy on a labelled set.
    pub fn evaluate_set(&self, xs: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
        let mut loss = 0.0;
        let mut correct = 0usize;
        for (x, &y) in xs.iter().zip(labels) {
            let (logits, _) = self.forward(x);
            let lp = numerics::log_softmax(&logits).expect("finite logits");
            loss -= lp[y];
            let argmax = (0..lp.len()).max_by(|&a, &b| lp[a].total_cmp(&lp[b])).unwrap();
            if argmax == y {
                correct += 1;
            }
        }
        let n = xs.len() as f64;
        (loss / n, correct as f64 / n)
    }

    /// Gradient of the mean cross-entropy plus `0.5·decay·‖W‖²`.
    fn gradient(&self, xs: &[Vec<f64>], labels: &[usize], decay: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut gw: Vec<Vec<f64>> = self.weights.iter().map(|w| vec![0.0; w.len()]).collect();
        let mut gb: Vec<Vec<f64>> = self.biases.iter().map(|b| vec![0.0; b.len()]).collect();
        let scale = 1.0 / xs.len() as f64;
        let last = self.weights.len() - 1;
        for (x, &y) in xs.iter().zip(labels) {
            let (logits, hidden) = self.forward(x);
            let mut delta = softmax(&logits).expect("finite logits");
            delta[y] -= 1.0;
            let top_in: &[f64] = hidden.as_deref().unwrap_or(x);
            accumulate(&mut gw[last], &mut gb[last], &delta, top_in, scale);
            if let Some(h) = &hidden {
                let units = h.len();
                let w2 = &self.weights[1];
                let dh: Vec<f64> = (0..units)
                    .map(|j| {
                        let back: f64 = (0..NUM_CLASSES).map(|k| delta[k] * w2[k * units + j]).sum();
                        back * (1.0 - h[j] * h[j])
                    })
                    .collect();
                accumulate(&mut gw[0], &mut gb[0], &dh, x, scale);
            }
        }
        for (g, w) in gw.iter_mut().zip(&self.weights) {
            for (gi, wi) in g.iter_mut().zip(w) {
                *gi += decay * wi;
            }
        }
        (gw, gb)
    }
}

fn accumulate(gw: &mut [f64], gb: &mut [f64], delta: &[f64], input: &[f64], scale: f64) {
    let cols = input.len();
    for (r, &d) in delta.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        gb[r] += scale * d;
        let row = &mut gw[r * cols..(r + 1) * cols];
        for (g, v) in row.iter_mut().zip(input) {
            *g += scale * d * v;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingOptions {
    pub architecture: Architecture,
    pub optimizer: Optimizer,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

/// Update rule for the full-batch training loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    GradientDescent,
    Adam,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        Self {
            architecture: Architecture::Hidden { units: 64 },
            optimizer: Optimizer::Adam,
            learning_rate: 0.01,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetrics {
    pub num_images: usize,
    pub final_accuracy: f64,
    pub final_loss: f64,
    /// Training objective before each epoch's update, then after the last.
    pub loss_curve: Vec<f64>,
}

fn check_subspace(training: &ScenarioSpace, full: &ScenarioSpace) -> Result<()> {
    if training.dim() != full.dim() {
        return Err(Error::DimensionMismatch {
            expected: full.dim(),
            actual: training.dim(),
        });
    }
    for (t, f) in training.factors().iter().zip(full.factors()) {
        if t.name != f.name || t.lower < f.lower || t.upper > f.upper {
            return Err(Error::InvalidConfig(format!(
                "training factor `{}` [{}, {}] is not inside `{}` [{}, {}]",
                t.name, t.lower, t.upper, f.name, f.lower, f.upper
            )));
        }
    }
    Ok(())
}

/// Renders `m` uniform scenarios of `training_space` per instance.
pub fn render_training_set(
    instances: &[ShapeInstance],
    m: usize,
    training_space: &ScenarioSpace,
    seed: u64,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = numerics::stream(seed, 0);
    let mut xs = Vec::with_capacity(instances.len() * m);
    let mut labels = Vec::with_capacity(instances.len() * m);
    for inst in instances {
        for _ in 0..m {
            let s = training_space.sample_uniform(&mut rng);
            xs.push(Classifier::features(&render(inst, &s)));
            labels.push(inst.label());
        }
    }
    (xs, labels)
}

/// Full-batch gradient descent on cross-entropy. Deterministic in `seed`,
/// which drives both the training scenarios and hidden-layer init.
pub fn train_classifier(
    instances: &[ShapeInstance],
    m: usize,
    training_space: &ScenarioSpace,
    epochs: usize,
    seed: u64,
    options: &TrainingOptions,
) -> Result<(Classifier, TrainingMetrics)> {
    if instances.is_empty() {
        return Err(Error::InvalidConfig("no training instances".into()));
    }
    if m == 0 {
        return Err(Error::InvalidConfig("need at least one image per instance".into()));
    }
    if !(options.learning_rate > 0.0) || options.weight_decay < 0.0 {
        return Err(Error::InvalidConfig("invalid learning rate or weight decay".into()));
    }
    if let Architecture::Hidden { units: 0 } = options.architecture {
        return Err(Error::InvalidConfig("hidden layer needs units".into()));
    }
    check_subspace(training_space, &render_space())?;

    let (xs, labels) = render_training_set(instances, m, training_space, seed);
    let mut model = Classifier::zeros(options.architecture);
    if let Architecture::Hidden { .. } = options.architecture {
        let mut rng = numerics::stream(seed, 1);
        let shapes = Classifier::layer_shapes(options.architecture);
        for (w, (_, fan_in)) in model.weights.iter_mut().zip(shapes) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
    }

    let objective = |model: &Classifier| {
        let (ce, acc) = model.evaluate_set(&xs, &labels);
        let reg: f64 = model.weights.iter().flatten().map(|w| w * w).sum::<f64>();
        (ce + 0.5 * options.weight_decay * reg, acc)
    };

    let num_params: usize = model.weights.iter().chain(&model.biases).map(Vec::len).sum();
    let mut adam = AdamState::new(num_params, options.learning_rate);
    let mut curve = Vec::with_capacity(epochs + 1);
    for _ in 0..epochs {
        curve.push(objective(&model).0);
        let (gw, gb) = model.gradient(&xs, &labels, options.weight_decay);
        match options.optimizer {
            Optimizer::GradientDescent => {
                let tensors = model.weights.iter_mut().chain(model.biases.iter_mut());
                for (p, g) in tensors.zip(gw.iter().chain(&gb)) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi -= options.learning_rate * gi;
                    }
                }
            }
            Optimizer::Adam => {
                let mut flat: Vec<f64> = model.weights.iter().chain(&model.biases).flatten().copied().collect();
                let grads: Vec<f64> = gw.iter().chain(&gb).flatten().copied().collect();
                adam.step(&mut flat, &grads)?;
                let mut values = flat.into_iter();
                for p in model.weights.iter_mut().chain(model.biases.iter_mut()) {
                    p.iter_mut().for_each(|v| *v = values.next().expect("sized above"));
                }
            }
        }
    }
    let (final_loss, final_accuracy) = objective(&model);
    curve.push(final_loss);
    Ok((
        model,
        TrainingMetrics {
            num_images: xs.len(),
            final_accuracy,
            final_loss,
            loss_curve: curve,
        },
    ))
}

/// A classifier examined on one shape instance over [`render_space`].
#[derive(Debug, Clone)]
pub struct ShapeTarget {
    pub classifier: Arc<Classifier>,
    pub instance: ShapeInstance,
    space: ScenarioSpace,
}

impl ShapeTarget {
    pub fn new(classifier: Arc<Classifier>, instance: ShapeInstance) -> Self {
        Self {
            classifier,
            instance,
            space: render_space(),
        }
    }

    /// Examine over a sub-box of the render space instead.
    pub fn with_space(classifier: Arc<Classifier>, instance: ShapeInstance, space: ScenarioSpace) -> Result<Self> {
        check_subspace(&space, &render_space())?;
        Ok(Self {
            classifier,
            instance,
            space,
        })
    }

    pub fn p_true(&self, scenario: &Scenario) -> f64 {
        self.classifier.p_true(&self.instance, scenario)
    }
}

impl TargetQuery for ShapeTarget {
    fn space(&self) -> &ScenarioSpace {
        &self.space
    }

    fn evaluate(&self, scenario: &Scenario) -> f64 {
        self.classifier.loss_of(&self.instance, scenario)
    }
}
