//! Policy-gradient examiner.
//!
//! An LSTM factorizes the scenario distribution across factors: each step
//! emits a softmax over one factor's bins, the sampled bin's embedding is
//! the next step's input. Rewards are buffered until a full batch of `B`
//! rollouts is available, then one REINFORCE step is taken with Adam.

mod policy;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exam::Examiner;
use crate::numerics::{AdamState, StreamRng};
use crate::space::{Scenario, ScenarioSpace};

pub use policy::{PolicyCheckpoint, PolicyParams, Rollout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Subtract the batch-mean reward.
    BatchMean,
    /// Raw rewards, the plain score-function estimator.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlConfig {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Overrides every factor's own bin count when set.
    pub bins: Option<usize>,
    pub baseline: Baseline,
    /// Canonical factor indices in the order they are sampled; `None` is
    /// the identity.
    pub factor_order: Option<Vec<usize>>,
}

impl Default for RlConfig {
    fn default() -> Self {
        Self {
            embed_dim: 30,
            hidden_dim: 30,
            learning_rate: 0.001,
            batch_size: 32,
            bins: None,
            baseline: Baseline::BatchMean,
            factor_order: None,
        }
    }
}

impl RlConfig {
    /// Settings for budgets of a few hundred steps: with the defaults a
    /// 500-step run gets only 15 small Adam steps and barely moves.
    pub fn desk_scale() -> Self {
        Self {
            learning_rate: 0.05,
            batch_size: 8,
            ..Self::default()
        }
    }

    pub fn validate(&self, space: &ScenarioSpace) -> Result<()> {
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig(
                "rl dimensions and batch size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("rl learning rate must be positive".into()));
        }
        if matches!(self.bins, Some(b) if b < 2) {
            return Err(Error::InvalidConfig("rl needs at least 2 bins".into()));
        }
        if let Some(order) = &self.factor_order {
            check_permutation(order, space.dim())?;
        }
        Ok(())
    }

    pub fn sampling_order(&self, dim: usize) -> Vec<usize> {
        self.factor_order.clone().unwrap_or_else(|| (0..dim).collect())
    }
}

fn check_permutation(order: &[usize], dim: usize) -> Result<()> {
    let mut seen = vec![false; dim];
    if order.len() != dim {
        return Err(Error::InvalidConfig(format!(
            "factor order has {} entries for {dim} factors",
            order.len()
        )));
    }
    for &i in order {
        if i >= dim || std::mem::replace(&mut seen[i], true) {
            return Err(Error::InvalidConfig(format!(
                "factor order {order:?} is not a permutation of 0..{dim}"
            )));
        }
    }
    Ok(())
}

/// Returns `config` sampling factors in `order` (canonical indices).
pub fn permute_factor_order(config: &RlConfig, order: &[usize]) -> Result<RlConfig> {
    let dim = order.len();
    check_permutation(order, dim)?;
    Ok(RlConfig {
        factor_order: Some(order.to_vec()),
        ..config.clone()
    })
}

/// Per-rollout advantages under the configured baseline.
pub fn advantages(batch: &[Rollout], baseline: Baseline) -> Vec<f64> {
    match baseline {
        Baseline::None => batch.iter().map(|r| r.reward).collect(),
        Baseline::BatchMean => {
            // Offsets from the first reward keep a constant batch at exactly
            // zero advantage; Adam would otherwise amplify rounding noise.
            let anchor = batch[0].reward;
            let offset = batch.iter().map(|r| r.reward - anchor).sum::<f64>() / batch.len() as f64;
            batch.iter().map(|r| (r.reward - anchor) - offset).collect()
        }
    }
}

/// One REINFORCE step: ascend `(1/B) Σ_b A_b Σ_c ∇ log P(ψ_b^c | ψ_b^{<c})`
/// with Adam.
pub fn policy_gradient_update(
    params: &mut PolicyParams,
    batch: &[Rollout],
    adam: &mut AdamState,
    config: &RlConfig,
) -> Result<()> {
    if batch.len() != config.batch_size {
        return Err(Error::InvalidConfig(format!(
            "batch of {} rollouts, configured batch size is {}",
            batch.len(),
            config.batch_size
        )));
    }
    let adv = advantages(batch, config.baseline);
    let ascent = params.surrogate_gradient(batch, &adv)?;
    let descent: Vec<f64> = ascent.iter().map(|g| -g).collect();
    adam.step(params.as_mut_slice(), &descent)
}

/// Draws a scenario from the policy. Values come back in canonical factor
/// order whatever the sampling order.
pub fn sample_scenario(
    params: &PolicyParams,
    space: &ScenarioSpace,
    order: &[usize],
    rng: &mut StreamRng,
) -> Result<(Scenario, Rollout)> {
    let rollout = params.sample(rng)?;
    let scenario = scenario_from_bins(space, order, params.bins(), &rollout.bin_indices)?;
    Ok((scenario, rollout))
}

fn scenario_from_bins(
    space: &ScenarioSpace,
    order: &[usize],
    bins: &[usize],
    indices: &[usize],
) -> Result<Scenario> {
    let mut values = vec![0.0; space.dim()];
    for (step, (&canonical, &bin)) in order.iter().zip(indices).enumerate() {
        let factor = space.factor(canonical);
        let discretized = crate::space::Factor {
            bins: bins[step],
            ..factor.clone()
        };
        values[canonical] = discretized.bin_to_value(bin)?;
    }
    Ok(Scenario::new(values))
}

/// The policy-gradient examiner for one instance.
#[derive(Debug, Clone)]
pub struct RlExaminer {
    space: ScenarioSpace,
    config: RlConfig,
    order: Vec<usize>,
    params: PolicyParams,
    adam: AdamState,
    rng: StreamRng,
    buffer: Vec<Rollout>,
    pending: Option<(Scenario, Rollout)>,
    updates_applied: u64,
}

impl RlExaminer {
    /// Fresh policy; parameter initialization draws from `rng` before any
    /// sampling does.
    pub fn new(space: ScenarioSpace, config: RlConfig, mut rng: StreamRng) -> Result<Self> {
        config.validate(&space)?;
        let order = config.sampling_order(space.dim());
        let bins: Vec<usize> = order
            .iter()
            .map(|&i| config.bins.unwrap_or(space.factor(i).bins))
            .collect();
        let params = PolicyParams::init(config.embed_dim, config.hidden_dim, bins, &mut rng)?;
        let adam = AdamState::new(params.as_slice().len(), config.learning_rate);
        Ok(Self {
            space,
            config,
            order,
            params,
            adam,
            rng,
            buffer: Vec::new(),
            pending: None,
            updates_applied: 0,
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut PolicyParams {
        &mut self.params
    }

    pub fn config(&self) -> &RlConfig {
        &self.config
    }

    pub fn updates_applied(&self) -> u64 {
        self.updates_applied
    }

    pub fn buffered(&self) -> usize {
        self.buffer.len()
    }

    pub fn sampling_order(&self) -> &[usize] {
        &self.order
    }
}

impl Examiner for RlExaminer {
    fn generate(&mut self) -> Result<Scenario> {
        if self.pending.is_some() {
            return Err(Error::Protocol("generate called twice without update".into()));
        }
        let (scenario, rollout) =
            sample_scenario(&self.params, &self.space, &self.order, &mut self.rng)?;
        self.pending = Some((scenario.clone(), rollout));
        Ok(scenario)
    }

    fn update(&mut self, scenario: &Scenario, reward: f64) -> Result<()> {
        let (expected, mut rollout) = self
            .pending
            .take()
            .ok_or_else(|| Error::Protocol("update without a preceding generate".into()))?;
        if &expected != scenario {
            self.pending = Some((expected, rollout));
            return Err(Error::Protocol(
                "update received a scenario other than the one just generated".into(),
            ));
        }
        if !reward.is_finite() {
            return Err(Error::NonFinite("rl reward"));
        }
        rollout.reward = reward;
        self.buffer.push(rollout);
        if self.buffer.len() == self.config.batch_size {
            let batch = std::mem::take(&mut self.buffer);
            policy_gradient_update(&mut self.params, &batch, &mut self.adam, &self.config)?;
            self.updates_applied += 1;
        }
        Ok(())
    }
}
