use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exam::TargetQuery;
use crate::space::{Factor, Scenario, ScenarioSpace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LandscapeKind {
    SingleBump,
    ThreeBumpMixture,
    /// Gaussian tube around a segment, rising linearly towards its end.
    Ridge,
}

/// Gaussian bump. `center` is in scenario units; `width` is measured in
/// normalized (unit-cube) units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub width: f64,
    pub height: f64,
}

/// A synthetic loss surface on a bounded space with values in `[0, 1]`.
///
/// Bump kinds take the pointwise maximum of their bumps, so the global
/// maximum sits exactly at the tallest center. A ridge uses its first two
/// bumps as the segment ends, peaking at the second.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticLandscape {
    pub name: String,
    pub kind: LandscapeKind,
    pub space: ScenarioSpace,
    pub bumps: Vec<Bump>,
}

const RIDGE_FLOOR: f64 = 0.6;

impl AnalyticLandscape {
    pub fn new(
        name: impl Into<String>,
        kind: LandscapeKind,
        space: ScenarioSpace,
        bumps: Vec<Bump>,
    ) -> Result<Self> {
        let landscape = Self {
            name: name.into(),
            kind,
            space,
            bumps,
        };
        landscape.validate()?;
        Ok(landscape)
    }

    pub fn validate(&self) -> Result<()> {
        let needed = match self.kind {
            LandscapeKind::SingleBump => 1,
            LandscapeKind::ThreeBumpMixture => 3,
            LandscapeKind::Ridge => 2,
        };
        if self.bumps.len() != needed {
            return Err(Error::InvalidConfig(format!(
                "{:?} landscape needs {needed} bumps, got {}",
                self.kind,
                self.bumps.len()
            )));
        }
        for b in &self.bumps {
            self.space.check(&Scenario::new(b.center.clone()))?;
            if !(b.height > 0.0 && b.height <= 1.0) || !(b.width > 0.0) {
                return Err(Error::InvalidConfig(
                    "bump heights must lie in (0, 1] and widths be positive".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let landscape: Self = serde_json::from_str(text)?;
        landscape.validate()?;
        Ok(landscape)
    }

    /// Declared global optimum: location and value.
    pub fn global_max(&self) -> (Scenario, f64) {
        let peak = match self.kind {
            LandscapeKind::Ridge => &self.bumps[1],
            _ => self
                .bumps
                .iter()
                .fold(&self.bumps[0], |best, b| if b.height > best.height { b } else { best }),
        };
        (Scenario::new(peak.center.clone()), peak.height)
    }

    fn normalized_center(&self, bump: &Bump) -> Vec<f64> {
        self.space.normalize(&Scenario::new(bump.center.clone()))
    }

    pub fn loss(&self, scenario: &Scenario) -> f64 {
        let u = self.space.normalize(scenario);
        match self.kind {
            LandscapeKind::SingleBump | LandscapeKind::ThreeBumpMixture => self
                .bumps
                .iter()
                .map(|b| {
                    let c = self.normalized_center(b);
                    let d2: f64 = u.iter().zip(&c).map(|(x, y)| (x - y) * (x - y)).sum();
                    b.height * (-d2 / (2.0 * b.width * b.width)).exp()
                })
                .fold(0.0, f64::max),
            LandscapeKind::Ridge => {
                let a = self.normalized_center(&self.bumps[0]);
                let b = self.normalized_center(&self.bumps[1]);
                let ab: Vec<f64> = b.iter().zip(&a).map(|(x, y)| x - y).collect();
                let len2: f64 = ab.iter().map(|v| v * v).sum();
                let t = if len2 > 0.0 {
                    (u.iter().zip(&a).zip(&ab).map(|((x, y), d)| (x - y) * d).sum::<f64>() / len2)
                        .clamp(0.0, 1.0)
                } else {
                    1.0
                };
                let d2: f64 = u
                    .iter()
                    .zip(&a)
                    .zip(&ab)
                    .map(|((x, y), d)| {
                        let off = x - (y + t * d);
                        off * off
                    })
                    .sum();
                let top = &self.bumps[1];
                let rise = RIDGE_FLOOR + (1.0 - RIDGE_FLOOR) * t;
                top.height * rise * (-d2 / (2.0 * top.width * top.width)).exp()
            }
        }
    }

    /// Three 3-factor landscapes with optima on the 1/100 normalized grid,
    /// used to validate examiners against brute force.
    pub fn suite_3d() -> Vec<Self> {
        let space = ScenarioSpace::new(vec![
            Factor::new("alpha", 0.0, 1.0).expect("valid factor"),
            Factor::new("beta", -1.0, 1.0).expect("valid factor"),
            Factor::new("gamma", 0.0, 10.0).expect("valid factor"),
        ])
        .expect("valid space");
        let at = |u: [f64; 3]| space.denormalize(&u).into_values();
        vec![
            Self::new(
                "single-bump",
                LandscapeKind::SingleBump,
                space.clone(),
                vec![Bump {
                    center: at([0.72, 0.31, 0.58]),
                    width: 0.15,
                    height: 0.9,
                }],
            )
            .expect("valid landscape"),
            Self::new(
                "three-bump",
                LandscapeKind::ThreeBumpMixture,
                space.clone(),
                vec![
                    Bump {
                        center: at([0.2, 0.75, 0.3]),
                        width: 0.2,
                        height: 0.6,
                    },
                    Bump {
                        center: at([0.8, 0.2, 0.85]),
                        width: 0.12,
                        height: 0.95,
                    },
                    Bump {
                        center: at([0.45, 0.5, 0.1]),
                        width: 0.2,
                        height: 0.7,
                    },
                ],
            )
            .expect("valid landscape"),
            Self::new(
                "ridge",
                LandscapeKind::Ridge,
                space.clone(),
                vec![
                    Bump {
                        center: at([0.1, 0.2, 0.3]),
                        width: 0.12,
                        height: 1.0,
                    },
                    Bump {
                        center: at([0.85, 0.7, 0.6]),
                        width: 0.12,
                        height: 1.0,
                    },
                ],
            )
            .expect("valid landscape"),
        ]
    }
}

impl TargetQuery for AnalyticLandscape {
    fn space(&self) -> &ScenarioSpace {
        &self.space
    }

    fn evaluate(&self, scenario: &Scenario) -> f64 {
        self.loss(scenario)
    }
}
