//! Bounded factor spaces and the scenarios that live in them.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 100;

fn default_bins() -> usize {
    DEFAULT_BINS
}

/// One bounded scenario factor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    /// Discretization used by policies that pick bins.
    #[serde(default = "default_bins")]
    pub bins: usize,
}

impl Factor {
    pub fn new(name: impl Into<String>, lower: f64, upper: f64) -> Result<Self> {
        Self::with_bins(name, lower, upper, DEFAULT_BINS)
    }

    pub fn with_bins(name: impl Into<String>, lower: f64, upper: f64, bins: usize) -> Result<Self> {
        let factor = Self {
            name: name.into(),
            lower,
            upper,
            bins,
        };
        factor.validate()?;
        Ok(factor)
    }

    fn validate(&self) -> Result<()> {
        if !(self.lower.is_finite() && self.upper.is_finite() && self.lower < self.upper) {
            return Err(Error::InvalidConfig(format!(
                "factor `{}` needs finite lower < upper, got [{}, {}]",
                self.name, self.lower, self.upper
            )));
        }
        if self.bins < 2 {
            return Err(Error::InvalidConfig(format!(
                "factor `{}` needs at least 2 bins, got {}",
                self.name, self.bins
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    /// Endpoint-inclusive even spacing: bin 0 is `lower`, the last bin is
    /// exactly `upper`.
    pub fn bin_to_value(&self, index: usize) -> Result<f64> {
        if index >= self.bins {
            return Err(Error::BinOutOfRange {
                index,
                bins: self.bins,
            });
        }
        if index == self.bins - 1 {
            return Ok(self.upper);
        }
        Ok(self.lower + index as f64 * self.width() / (self.bins - 1) as f64)
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.lower && value <= self.upper
    }
}

/// Ordered Cartesian product of factors. Order matters: it is the default
/// sampling order of sequential policies and the layout of every
/// [`Scenario`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Factor>", into = "Vec<Factor>")]
pub struct ScenarioSpace {
    factors: Vec<Factor>,
}

impl TryFrom<Vec<Factor>> for ScenarioSpace {
    type Error = Error;

    fn try_from(factors: Vec<Factor>) -> Result<Self> {
        Self::new(factors)
    }
}

impl From<ScenarioSpace> for Vec<Factor> {
    fn from(space: ScenarioSpace) -> Self {
        space.factors
    }
}

impl ScenarioSpace {
    pub fn new(factors: Vec<Factor>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidConfig("scenario space has no factors".into()));
        }
        for (i, f) in factors.iter().enumerate() {
            f.validate()?;
            if factors[..i].iter().any(|g| g.name == f.name) {
                return Err(Error::InvalidConfig(format!("duplicate factor name `{}`", f.name)));
            }
        }
        Ok(Self { factors })
    }

    /// Unit cube `[0,1]^dim` with the given bin count per factor.
    pub fn unit_cube(dim: usize, bins: usize) -> Result<Self> {
        let factors = (0..dim)
            .map(|i| Factor::with_bins(format!("x{i}"), 0.0, 1.0, bins))
            .collect::<Result<Vec<_>>>()?;
        Self::new(factors)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, index: usize) -> &Factor {
        &self.factors[index]
    }

    pub fn dim(&self) -> usize {
        self.factors.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    /// Checks a scenario against the space; out-of-bounds is an error,
    /// never clamped.
    pub fn check(&self, scenario: &Scenario) -> Result<()> {
        if scenario.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: scenario.len(),
            });
        }
        for (f, &v) in self.factors.iter().zip(scenario.values()) {
            if !f.contains(v) {
                return Err(Error::OutOfBounds {
                    factor: f.name.clone(),
                    value: v,
                    lower: f.lower,
                    upper: f.upper,
                });
            }
        }
        Ok(())
    }

    pub fn contains(&self, scenario: &Scenario) -> bool {
        self.check(scenario).is_ok()
    }

    /// Each factor independently uniform on `[lower, upper]`.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Scenario {
        Scenario::new(
            self.factors
                .iter()
                .map(|f| f.lower + rng.random::<f64>() * f.width())
                .collect(),
        )
    }

    /// Maps a scenario into the unit cube.
    pub fn normalize(&self, scenario: &Scenario) -> Vec<f64> {
        self.factors
            .iter()
            .zip(scenario.values())
            .map(|(f, v)| (v - f.lower) / f.width())
            .collect()
    }

    /// Inverse of [`normalize`](Self::normalize). Coordinates are clamped
    /// to `[0,1]` first so rounding can never leave the space.
    pub fn denormalize(&self, unit: &[f64]) -> Scenario {
        Scenario::new(
            self.factors
                .iter()
                .zip(unit)
                .map(|(f, &u)| {
                    let u = u.clamp(0.0, 1.0);
                    if u == 1.0 {
                        f.upper
                    } else {
                        (f.lower + u * f.width()).clamp(f.lower, f.upper)
                    }
                })
                .collect(),
        )
    }

    /// Returns a copy with one factor's bounds replaced.
    pub fn with_bounds(&self, name: &str, lower: f64, upper: f64) -> Result<Self> {
        let index = self
            .index_of(name)
            .ok_or_else(|| Error::InvalidConfig(format!("no factor named `{name}`")))?;
        let mut factors = self.factors.clone();
        factors[index].lower = lower;
        factors[index].upper = upper;
        Self::new(factors)
    }

    /// Total number of points on the per-factor bin grid.
    pub fn grid_size(&self) -> u128 {
        self.factors.iter().map(|f| f.bins as u128).product()
    }
}

/// One point of a [`ScenarioSpace`], values in canonical factor order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Scenario(Vec<f64>);

impl Scenario {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_values(self) -> Vec<f64> {
        self.0
    }
}

impl From<Vec<f64>> for Scenario {
    fn from(values: Vec<f64>) -> Self {
        Self(values)
    }
}

impl std::ops::Index<usize> for Scenario {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.0[index]
    }
}
