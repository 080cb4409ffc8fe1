//! GP-UCB examiner.
//!
//! Observed `(scenario, loss)` pairs are normalized to the unit cube and
//! standardized, a GP posterior is fit, and each new scenario maximizes
//! `mean + kappa · std`. The maximization is approximate: random
//! candidates plus every observed point, then coordinate-wise golden-section
//! refinement from the best one.
//!
//! Each update costs O(|W|²) (one appended Cholesky row plus a solve) and
//! each proposal O((M + |W|) · |W|²), so long runs slow down quadratically.

mod gp;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exam::{Examiner, PendingScenario};
use crate::numerics::StreamRng;
use crate::space::{Scenario, ScenarioSpace};

pub use gp::{GpState, KernelConfig, KernelFamily};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UcbConfig {
    pub kappa: f64,
    /// Uniform random proposals before the acquisition takes over.
    pub init_random: usize,
    pub candidates: usize,
    /// Golden-section iterations per coordinate.
    pub refinement: usize,
    /// Refit the kernel length scale by marginal likelihood after every
    /// update.
    pub refit: bool,
}

impl Default for UcbConfig {
    fn default() -> Self {
        Self {
            kappa: 2.576,
            init_random: 2,
            candidates: 1000,
            refinement: 20,
            refit: false,
        }
    }
}

impl UcbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidConfig("ucb kappa must be >= 0".into()));
        }
        if self.candidates == 0 {
            return Err(Error::InvalidConfig("ucb needs at least one candidate".into()));
        }
        Ok(())
    }
}

const REFIT_LENGTH_SCALES: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.5, 0.8];

pub fn upper_confidence(mean: f64, variance: f64, kappa: f64) -> f64 {
    mean + kappa * variance.sqrt()
}

/// Upper confidence bound at a unit-cube point.
pub fn ucb_normalized(state: &GpState, kappa: f64, x: &[f64]) -> Result<f64> {
    let (mean, var) = state.predict(x)?;
    Ok(upper_confidence(mean, var, kappa))
}

pub fn gp_predict(state: &GpState, space: &ScenarioSpace, s: &Scenario) -> Result<(f64, f64)> {
    space.check(s)?;
    state.predict(&space.normalize(s))
}

pub fn ucb(state: &GpState, config: &UcbConfig, space: &ScenarioSpace, s: &Scenario) -> Result<f64> {
    space.check(s)?;
    ucb_normalized(state, config.kappa, &space.normalize(s))
}

/// Approximate argmax of the UCB over the space, with its value.
pub fn maximize_acquisition_with_value<R: Rng + ?Sized>(
    state: &GpState,
    config: &UcbConfig,
    space: &ScenarioSpace,
    rng: &mut R,
) -> Result<(Scenario, f64)> {
    let dim = space.dim();
    let acquisition = |x: &[f64]| ucb_normalized(state, config.kappa, x);

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut consider = |x: Vec<f64>, v: f64| {
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((x, v));
        }
    };
    let mut pool: Vec<Vec<f64>> = (0..config.candidates)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    pool.extend(state.inputs().iter().cloned());
    let predictions = state.predict_many(&pool)?;
    for (x, (mean, var)) in pool.into_iter().zip(predictions) {
        consider(x, upper_confidence(mean, var, config.kappa));
    }
    let (mut x, mut value) = best.expect("at least one candidate");

    if config.refinement > 0 {
        let radius = state.kernel().length_scale;
        for d in 0..dim {
            let lo = (x[d] - radius).max(0.0);
            let hi = (x[d] + radius).min(1.0);
            let mut probe = x.clone();
            let mut along = |u: f64| {
                probe[d] = u;
                acquisition(&probe)
            };
            let (u, v) = golden_section_max(&mut along, lo, hi, config.refinement)?;
            if v > value {
                x[d] = u;
                value = v;
            }
        }
    }
    Ok((space.denormalize(&x), value))
}

pub fn maximize_acquisition<R: Rng + ?Sized>(
    state: &GpState,
    config: &UcbConfig,
    space: &ScenarioSpace,
    rng: &mut R,
) -> Result<Scenario> {
    maximize_acquisition_with_value(state, config, space, rng).map(|(s, _)| s)
}

/// Golden-section search for a maximum of `f` on `[lo, hi]`. Returns the
/// best evaluated point.
fn golden_section_max<F>(f: &mut F, mut lo: f64, mut hi: f64, iterations: usize) -> Result<(f64, f64)>
where
    F: FnMut(f64) -> Result<f64>,
{
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    for _ in 0..iterations {
        if fa >= fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a)?;
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b)?;
        }
    }
    Ok(if fa >= fb { (a, fa) } else { (b, fb) })
}

/// One observation in original units, for snapshots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub scenario: Scenario,
    pub loss: f64,
}

/// The GP-UCB examiner for one instance.
#[derive(Debug, Clone)]
pub struct BoExaminer {
    space: ScenarioSpace,
    config: UcbConfig,
    gp: GpState,
    rng: StreamRng,
    generated: usize,
    pending: PendingScenario,
}

impl BoExaminer {
    pub fn new(
        space: ScenarioSpace,
        kernel: KernelConfig,
        config: UcbConfig,
        rng: StreamRng,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            space,
            config,
            gp: GpState::new(kernel)?,
            rng,
            generated: 0,
            pending: PendingScenario::default(),
        })
    }

    pub fn gp(&self) -> &GpState {
        &self.gp
    }

    /// `W` in original scenario units, as fed to the GP (oriented rewards).
    pub fn snapshot(&self) -> Vec<Observation> {
        self.gp
            .inputs()
            .iter()
            .zip(self.gp.targets())
            .map(|(x, &loss)| Observation {
                scenario: self.space.denormalize(x),
                loss,
            })
            .collect()
    }
}

impl Examiner for BoExaminer {
    fn generate(&mut self) -> Result<Scenario> {
        let s = if self.generated < self.config.init_random {
            self.space.sample_uniform(&mut self.rng)
        } else {
            maximize_acquisition(&self.gp, &self.config, &self.space, &mut self.rng)?
        };
        self.pending.set(&s)?;
        self.generated += 1;
        Ok(s)
    }

    fn update(&mut self, scenario: &Scenario, reward: f64) -> Result<()> {
        self.pending.take(scenario)?;
        self.gp.observe(self.space.normalize(scenario), reward)?;
        if self.config.refit {
            self.gp.refit_length_scale(&REFIT_LENGTH_SCALES)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
