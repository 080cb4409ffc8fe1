//! Gaussian-process regression on unit-cube inputs with standardized
//! targets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::LowerTriangular;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    Matern52,
    SquaredExponential,
}

/// Isotropic stationary kernel on normalized inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KernelConfig {
    pub family: KernelFamily,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self {
            family: KernelFamily::Matern52,
            length_scale: 0.2,
            signal_variance: 1.0,
            noise_variance: 1e-6,
        }
    }
}

impl KernelConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.length_scale, self.signal_variance, self.noise_variance]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !ok {
            return Err(Error::InvalidConfig(
                "kernel hyperparameters must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
        let r2 = sq / (self.length_scale * self.length_scale);
        match self.family {
            KernelFamily::SquaredExponential => self.signal_variance * (-0.5 * r2).exp(),
            KernelFamily::Matern52 => {
                let s5r = (5.0 * r2).sqrt();
                self.signal_variance * (1.0 + s5r + 5.0 * r2 / 3.0) * (-s5r).exp()
            }
        }
    }
}

/// Observed set `W` plus the cached factorization of `K(W,W) + noise·I`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpState {
    kernel: KernelConfig,
    inputs: Vec<Vec<f64>>,
    targets: Vec<f64>,
    target_mean: f64,
    target_scale: f64,
    chol: LowerTriangular,
    /// Extra diagonal added after a failed factorization.
    jitter: f64,
    alpha: Vec<f64>,
}

impl GpState {
    pub fn new(kernel: KernelConfig) -> Result<Self> {
        kernel.validate()?;
        Ok(Self {
            kernel,
            inputs: Vec::new(),
            targets: Vec::new(),
            target_mean: 0.0,
            target_scale: 1.0,
            chol: LowerTriangular::empty(),
            jitter: 0.0,
            alpha: Vec::new(),
        })
    }

    /// Builds a state from a batch of observations.
    pub fn from_observations(kernel: KernelConfig, inputs: &[Vec<f64>], targets: &[f64]) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::DimensionMismatch {
                expected: inputs.len(),
                actual: targets.len(),
            });
        }
        let mut gp = Self::new(kernel)?;
        for (x, &y) in inputs.iter().zip(targets) {
            gp.observe(x.clone(), y)?;
        }
        Ok(gp)
    }

    pub fn kernel(&self) -> &KernelConfig {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Vec<f64>] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn factor(&self) -> &LowerTriangular {
        &self.chol
    }

    /// Adds one observation: appends a row to the Cholesky factor (full
    /// refactorization with jitter escalation if that fails), then
    /// re-standardizes the targets and refreshes `alpha`.
    pub fn observe(&mut self, input: Vec<f64>, target: f64) -> Result<()> {
        if input.iter().any(|u| !(0.0..=1.0).contains(u)) {
            return Err(Error::InvalidConfig("gp inputs must lie in the unit cube".into()));
        }
        if let Some(first) = self.inputs.first() {
            if first.len() != input.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    actual: input.len(),
                });
            }
        }
        if !target.is_finite() {
            return Err(Error::NonFinite("gp target"));
        }
        let cross: Vec<f64> = self.inputs.iter().map(|x| self.kernel.eval(x, &input)).collect();
        let diag = self.kernel.eval(&input, &input) + self.kernel.noise_variance + self.jitter;
        self.inputs.push(input);
        self.targets.push(target);
        if self.chol.push_row(&cross, diag).is_err() {
            self.refactor()?;
        }
        self.refresh_alpha();
        Ok(())
    }

    fn gram(&self) -> Vec<Vec<f64>> {
        let n = self.inputs.len();
        let mut k = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let v = self.kernel.eval(&self.inputs[i], &self.inputs[j]);
                k[i][j] = v;
                k[j][i] = v;
            }
            k[i][i] += self.kernel.noise_variance;
        }
        k
    }

    fn refactor(&mut self) -> Result<()> {
        let (chol, jitter) = LowerTriangular::factor_with_jitter(&self.gram(), self.jitter)?;
        self.chol = chol;
        self.jitter = jitter;
        Ok(())
    }

    fn refresh_alpha(&mut self) {
        let n = self.targets.len() as f64;
        let mean = self.targets.iter().sum::<f64>() / n;
        let var = self.targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
        self.target_mean = mean;
        self.target_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let standardized: Vec<f64> = self
            .targets
            .iter()
            .map(|y| (y - self.target_mean) / self.target_scale)
            .collect();
        self.alpha = self.chol.solve(&standardized);
    }

    /// Replaces the kernel and refactorizes from scratch.
    pub fn set_kernel(&mut self, kernel: KernelConfig) -> Result<()> {
        kernel.validate()?;
        self.kernel = kernel;
        self.jitter = 0.0;
        if !self.inputs.is_empty() {
            self.refactor()?;
            self.refresh_alpha();
        }
        Ok(())
    }

    /// Log marginal likelihood of the standardized targets.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let n = self.targets.len();
        if n == 0 {
            return 0.0;
        }
        let standardized: Vec<f64> = self
            .targets
            .iter()
            .map(|y| (y - self.target_mean) / self.target_scale)
            .collect();
        let fit: f64 = standardized.iter().zip(&self.alpha).map(|(y, a)| y * a).sum();
        let log_det: f64 = (0..n).map(|i| self.chol.get(i, i).ln()).sum::<f64>() * 2.0;
        -0.5 * fit - 0.5 * log_det - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln()
    }

    /// Picks the length scale with the highest marginal likelihood.
    pub fn refit_length_scale(&mut self, candidates: &[f64]) -> Result<()> {
        let mut best: Option<(f64, f64)> = None;
        for &ls in candidates {
            let mut trial = self.clone();
            trial.set_kernel(KernelConfig {
                length_scale: ls,
                ..self.kernel
            })?;
            let lml = trial.log_marginal_likelihood();
            if best.is_none_or(|(_, b)| lml > b) {
                best = Some((ls, lml));
            }
        }
        if let Some((ls, _)) = best {
            self.set_kernel(KernelConfig {
                length_scale: ls,
                ..self.kernel
            })?;
        }
        Ok(())
    }

    fn check_consistent(&self) -> Result<()> {
        let n = self.inputs.len();
        if self.chol.dim() != n || self.alpha.len() != n || self.targets.len() != n {
            return Err(Error::Internal(format!(
                "gp state holds {n} points but factor is {}x{} and alpha has {}",
                self.chol.dim(),
                self.chol.dim(),
                self.alpha.len()
            )));
        }
        Ok(())
    }

    /// Posterior mean and variance of the latent function at a unit-cube
    /// point, in the original target units.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        self.check_consistent()?;
        let prior = self.kernel.eval(x, x);
        if self.inputs.is_empty() {
            return Ok((0.0, prior));
        }
        let cross: Vec<f64> = self.inputs.iter().map(|w| self.kernel.eval(w, x)).collect();
        let mean: f64 = cross.iter().zip(&self.alpha).map(|(k, a)| k * a).sum();
        let v = self.chol.solve_lower(&cross);
        let var = (prior - v.iter().map(|t| t * t).sum::<f64>()).max(0.0);
        let s = self.target_scale;
        Ok((self.target_mean + s * mean, s * s * var))
    }

    /// [`predict`](Self::predict) for many points; identical results, but
    /// the triangular solves run blockwise so the inner loop vectorizes.
    pub fn predict_many(&self, xs: &[Vec<f64>]) -> Result<Vec<(f64, f64)>> {
        const BLOCK: usize = 64;
        self.check_consistent()?;
        let n = self.inputs.len();
        let s = self.target_scale;
        let mut out = Vec::with_capacity(xs.len());
        let mut cross = Vec::new();
        for block in xs.chunks(BLOCK) {
            let width = block.len();
            if n == 0 {
                out.extend(block.iter().map(|x| (0.0, self.kernel.eval(x, x))));
                continue;
            }
            cross.clear();
            for w in &self.inputs {
                cross.extend(block.iter().map(|x| self.kernel.eval(w, x)));
            }
            // Accumulators start where `Iterator::sum` does.
            let mut means = vec![-0.0; width];
            for (i, a) in self.alpha.iter().enumerate() {
                for (m, k) in means.iter_mut().zip(&cross[i * width..(i + 1) * width]) {
                    *m += k * a;
                }
            }
            self.chol.solve_lower_many(&mut cross, width);
            let mut quad = vec![-0.0; width];
            for row in cross.chunks_exact(width) {
                for (q, v) in quad.iter_mut().zip(row) {
                    *q += v * v;
                }
            }
            for (c, x) in block.iter().enumerate() {
                let var = (self.kernel.eval(x, x) - quad[c]).max(0.0);
                out.push((self.target_mean + s * means[c], s * s * var));
            }
        }
        Ok(out)
    }

    /// Test hook: drops the factor so the state no longer matches `W`.
    #[doc(hidden)]
    pub fn corrupt_for_tests(&mut self) {
        self.chol = LowerTriangular::empty();
    }
}
