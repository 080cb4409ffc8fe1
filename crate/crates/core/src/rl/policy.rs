//! LSTM policy over discretized factors: forward sampling and hand-written
//! backpropagation through time for the score-function gradient.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{log_softmax, softmax};

const INIT_RANGE: f64 = 0.08;

#[derive(Debug, Clone, Copy, PartialEq)]
struct Span {
    start: usize,
    len: usize,
}

impl Span {
    fn range(self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

/// Offsets of each tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    embed_dim: usize,
    hidden_dim: usize,
    bins: Vec<usize>,
    lstm_weight: Span,
    lstm_bias: Span,
    init_hidden: Span,
    init_cell: Span,
    embed: Vec<Span>,
    head_weight: Vec<Span>,
    head_bias: Vec<Span>,
    total: usize,
}

impl Layout {
    fn new(embed_dim: usize, hidden_dim: usize, bins: Vec<usize>) -> Self {
        let mut cursor = 0;
        let mut take = |len: usize| {
            let span = Span { start: cursor, len };
            cursor += len;
            span
        };
        let gates = 4 * hidden_dim;
        let lstm_weight = take(gates * (embed_dim + hidden_dim));
        let lstm_bias = take(gates);
        let init_hidden = take(hidden_dim);
        let init_cell = take(hidden_dim);
        let mut embed = Vec::new();
        let mut head_weight = Vec::new();
        let mut head_bias = Vec::new();
        for &b in &bins {
            embed.push(take(b * embed_dim));
            head_weight.push(take(b * hidden_dim));
            head_bias.push(take(b));
        }
        Self {
            embed_dim,
            hidden_dim,
            bins,
            lstm_weight,
            lstm_bias,
            init_hidden,
            init_cell,
            embed,
            head_weight,
            head_bias,
            total: cursor,
        }
    }

    fn named_spans(&self) -> Vec<(String, Span)> {
        let mut out = vec![
            ("lstm.weight".to_string(), self.lstm_weight),
            ("lstm.bias".to_string(), self.lstm_bias),
            ("init.hidden".to_string(), self.init_hidden),
            ("init.cell".to_string(), self.init_cell),
        ];
        for k in 0..self.bins.len() {
            out.push((format!("embed.{k}"), self.embed[k]));
            out.push((format!("head.{k}.weight"), self.head_weight[k]));
            out.push((format!("head.{k}.bias"), self.head_bias[k]));
        }
        out
    }
}

/// One sampled scenario in policy terms. Indices and log-probabilities are
/// in sampling order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub bin_indices: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub reward: f64,
}

impl Rollout {
    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }
}

/// Per-step activations kept for the backward pass.
struct StepCache {
    input: Vec<f64>,
    prev_hidden: Vec<f64>,
    prev_cell: Vec<f64>,
    input_gate: Vec<f64>,
    forget_gate: Vec<f64>,
    output_gate: Vec<f64>,
    candidate: Vec<f64>,
    cell_tanh: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of the factorized sampling policy: an LSTM cell, learnable
/// initial state, and one embedding table plus output head per factor.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    layout: Layout,
    values: Vec<f64>,
}

impl PolicyParams {
    /// Weights uniform in ±0.08; biases and initial state zero.
    pub fn init<R: Rng + ?Sized>(
        embed_dim: usize,
        hidden_dim: usize,
        bins: Vec<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        if embed_dim == 0 || hidden_dim == 0 || bins.is_empty() || bins.iter().any(|&b| b < 2) {
            return Err(Error::InvalidConfig(
                "policy needs positive dimensions and at least 2 bins per factor".into(),
            ));
        }
        let layout = Layout::new(embed_dim, hidden_dim, bins);
        let mut values = vec![0.0; layout.total];
        let mut weights: Vec<Span> = vec![layout.lstm_weight];
        weights.extend(&layout.embed);
        weights.extend(&layout.head_weight);
        for span in weights {
            for v in &mut values[span.range()] {
                *v = rng.random_range(-INIT_RANGE..=INIT_RANGE);
            }
        }
        Ok(Self { layout, values })
    }

    pub fn embed_dim(&self) -> usize {
        self.layout.embed_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.layout.hidden_dim
    }

    /// Bins per sampling step.
    pub fn bins(&self) -> &[usize] {
        &self.layout.bins
    }

    pub fn num_steps(&self) -> usize {
        self.layout.bins.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.layout.named_spans().into_iter().map(|(n, _)| n).collect()
    }

    fn span_of(&self, name: &str) -> Option<Span> {
        self.layout
            .named_spans()
            .into_iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
    }

    pub fn tensor(&self, name: &str) -> Option<&[f64]> {
        self.span_of(name).map(|s| &self.values[s.range()])
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        self.span_of(name).map(move |s| &mut self.values[s.range()])
    }

    fn lstm_step(&self, input: &[f64], prev_hidden: &[f64], prev_cell: &[f64]) -> StepCache {
        let h = self.layout.hidden_dim;
        let cols = self.layout.embed_dim + h;
        let w = &self.values[self.layout.lstm_weight.range()];
        let b = &self.values[self.layout.lstm_bias.range()];
        let mut pre = b.to_vec();
        for (r, acc) in pre.iter_mut().enumerate() {
            let row = &w[r * cols..(r + 1) * cols];
            let (wx, wh) = row.split_at(self.layout.embed_dim);
            *acc += wx.iter().zip(input).map(|(a, b)| a * b).sum::<f64>()
                + wh.iter().zip(prev_hidden).map(|(a, b)| a * b).sum::<f64>();
        }
        let input_gate: Vec<f64> = pre[0..h].iter().map(|&z| sigmoid(z)).collect();
        let forget_gate: Vec<f64> = pre[h..2 * h].iter().map(|&z| sigmoid(z)).collect();
        let output_gate: Vec<f64> = pre[2 * h..3 * h].iter().map(|&z| sigmoid(z)).collect();
        let candidate: Vec<f64> = pre[3 * h..4 * h].iter().map(|&z| z.tanh()).collect();
        let cell: Vec<f64> = (0..h)
            .map(|j| forget_gate[j] * prev_cell[j] + input_gate[j] * candidate[j])
            .collect();
        let cell_tanh: Vec<f64> = cell.iter().map(|c| c.tanh()).collect();
        let hidden: Vec<f64> = (0..h).map(|j| output_gate[j] * cell_tanh[j]).collect();
        StepCache {
            input: input.to_vec(),
            prev_hidden: prev_hidden.to_vec(),
            prev_cell: prev_cell.to_vec(),
            input_gate,
            forget_gate,
            output_gate,
            candidate,
            cell_tanh,
            hidden,
            probs: Vec::new(),
        }
    }

    fn cell_state(cache: &StepCache) -> Vec<f64> {
        (0..cache.hidden.len())
            .map(|j| cache.forget_gate[j] * cache.prev_cell[j] + cache.input_gate[j] * cache.candidate[j])
            .collect()
    }

    fn logits(&self, step: usize, hidden: &[f64]) -> Vec<f64> {
        let h = self.layout.hidden_dim;
        let w = &self.values[self.layout.head_weight[step].range()];
        let b = &self.values[self.layout.head_bias[step].range()];
        b.iter()
            .enumerate()
            .map(|(k, bias)| bias + w[k * h..(k + 1) * h].iter().zip(hidden).map(|(a, x)| a * x).sum::<f64>())
            .collect()
    }

    fn embedding(&self, step: usize, bin: usize) -> &[f64] {
        let e = self.layout.embed_dim;
        let span = self.layout.embed[step];
        &self.values[span.start + bin * e..span.start + (bin + 1) * e]
    }

    /// Runs the chain. With `forced` given, replays those bins instead of
    /// sampling; otherwise draws each bin from its conditional.
    fn forward<R: Rng + ?Sized>(
        &self,
        forced: Option<&[usize]>,
        mut rng: Option<&mut R>,
    ) -> Result<(Vec<usize>, Vec<f64>, Vec<StepCache>)> {
        let steps = self.num_steps();
        let mut hidden = self.values[self.layout.init_hidden.range()].to_vec();
        let mut cell = self.values[self.layout.init_cell.range()].to_vec();
        let mut input = vec![0.0; self.layout.embed_dim];
        let mut bins = Vec::with_capacity(steps);
        let mut log_probs = Vec::with_capacity(steps);
        let mut caches = Vec::with_capacity(steps);
        for step in 0..steps {
            let mut cache = self.lstm_step(&input, &hidden, &cell);
            let logits = self.logits(step, &cache.hidden);
            let probs = softmax(&logits)?;
            let bin = match (forced, rng.as_deref_mut()) {
                (Some(f), _) => f[step],
                (None, Some(r)) => sample_categorical(&probs, r),
                (None, None) => unreachable!("forward needs forced bins or an rng"),
            };
            if bin >= probs.len() {
                return Err(Error::BinOutOfRange {
                    index: bin,
                    bins: probs.len(),
                });
            }
            log_probs.push(log_softmax(&logits)?[bin]);
            bins.push(bin);
            cell = Self::cell_state(&cache);
            hidden = cache.hidden.clone();
            input = self.embedding(step, bin).to_vec();
            cache.probs = probs;
            caches.push(cache);
        }
        Ok((bins, log_probs, caches))
    }

    /// Draws one bin per step, in sampling order.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Rollout> {
        let (bin_indices, log_probs, _) = self.forward(None, Some(rng))?;
        Ok(Rollout {
            bin_indices,
            log_probs,
            reward: 0.0,
        })
    }

    /// Per-step conditional distributions along a given bin sequence.
    pub fn conditionals(&self, bins: &[usize]) -> Result<Vec<Vec<f64>>> {
        self.check_bins(bins)?;
        let (_, _, caches) = self.forward::<rand_chacha::ChaCha8Rng>(Some(bins), None)?;
        Ok(caches.into_iter().map(|c| c.probs).collect())
    }

    /// Per-step log-probabilities of a given bin sequence.
    pub fn log_probs(&self, bins: &[usize]) -> Result<Vec<f64>> {
        self.check_bins(bins)?;
        let (_, lp, _) = self.forward::<rand_chacha::ChaCha8Rng>(Some(bins), None)?;
        Ok(lp)
    }

    fn check_bins(&self, bins: &[usize]) -> Result<()> {
        if bins.len() != self.num_steps() {
            return Err(Error::DimensionMismatch {
                expected: self.num_steps(),
                actual: bins.len(),
            });
        }
        Ok(())
    }

    /// `(1/B) Σ_b weight_b · log P(bins_b)`, the surrogate whose gradient is
    /// the REINFORCE estimate.
    pub fn surrogate(&self, batch: &[Rollout], weights: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (r, w) in batch.iter().zip(weights) {
            total += w * self.log_probs(&r.bin_indices)?.iter().sum::<f64>();
        }
        Ok(total / batch.len() as f64)
    }

    /// Gradient of [`surrogate`](Self::surrogate) with respect to every
    /// parameter, by backpropagation through the sampling chain.
    pub fn surrogate_gradient(&self, batch: &[Rollout], weights: &[f64]) -> Result<Vec<f64>> {
        if batch.len() != weights.len() {
            return Err(Error::DimensionMismatch {
                expected: batch.len(),
                actual: weights.len(),
            });
        }
        let l = &self.layout;
        let h = l.hidden_dim;
        let e = l.embed_dim;
        let cols = e + h;
        let scale = 1.0 / batch.len() as f64;
        let mut grad = vec![0.0; l.total];
        let lstm_w = &self.values[l.lstm_weight.range()];

        for (rollout, &weight) in batch.iter().zip(weights) {
            if weight == 0.0 {
                continue;
            }
            self.check_bins(&rollout.bin_indices)?;
            let (bins, _, caches) =
                self.forward::<rand_chacha::ChaCha8Rng>(Some(&rollout.bin_indices), None)?;
            let coef = weight * scale;
            let mut d_hidden_next = vec![0.0; h];
            let mut d_cell_next = vec![0.0; h];
            let mut d_input_next = vec![0.0; e];

            for step in (0..caches.len()).rev() {
                let cache = &caches[step];

                // Input to step+1 was the embedding of this step's bin.
                if step + 1 < caches.len() {
                    let span = l.embed[step];
                    let row = span.start + bins[step] * e;
                    for (g, d) in grad[row..row + e].iter_mut().zip(&d_input_next) {
                        *g += d;
                    }
                }

                // d log p[bin] / d logits = onehot - p
                let mut d_logits: Vec<f64> = cache.probs.iter().map(|p| -coef * p).collect();
                d_logits[bins[step]] += coef;

                let head_w = &self.values[l.head_weight[step].range()];
                let mut d_hidden = d_hidden_next.clone();
                let hw = l.head_weight[step].start;
                let hb = l.head_bias[step].start;
                for (k, &dl) in d_logits.iter().enumerate() {
                    grad[hb + k] += dl;
                    for j in 0..h {
                        grad[hw + k * h + j] += dl * cache.hidden[j];
                        d_hidden[j] += dl * head_w[k * h + j];
                    }
                }

                let mut d_pre = vec![0.0; 4 * h];
                let mut d_cell_prev = vec![0.0; h];
                for j in 0..h {
                    let (i, f, o, g, tc) = (
                        cache.input_gate[j],
                        cache.forget_gate[j],
                        cache.output_gate[j],
                        cache.candidate[j],
                        cache.cell_tanh[j],
                    );
                    let d_out = d_hidden[j] * tc;
                    let d_cell = d_cell_next[j] + d_hidden[j] * o * (1.0 - tc * tc);
                    d_pre[j] = d_cell * g * i * (1.0 - i);
                    d_pre[h + j] = d_cell * cache.prev_cell[j] * f * (1.0 - f);
                    d_pre[2 * h + j] = d_out * o * (1.0 - o);
                    d_pre[3 * h + j] = d_cell * i * (1.0 - g * g);
                    d_cell_prev[j] = d_cell * f;
                }

                let ws = l.lstm_weight.start;
                let bs = l.lstm_bias.start;
                let mut d_input = vec![0.0; e];
                let mut d_hidden_prev = vec![0.0; h];
                for (r, &dp) in d_pre.iter().enumerate() {
                    if dp == 0.0 {
                        continue;
                    }
                    grad[bs + r] += dp;
                    let row = &lstm_w[r * cols..(r + 1) * cols];
                    let g_row = &mut grad[ws + r * cols..ws + (r + 1) * cols];
                    for c in 0..e {
                        g_row[c] += dp * cache.input[c];
                        d_input[c] += dp * row[c];
                    }
                    for c in 0..h {
                        g_row[e + c] += dp * cache.prev_hidden[c];
                        d_hidden_prev[c] += dp * row[e + c];
                    }
                }
                d_hidden_next = d_hidden_prev;
                d_cell_next = d_cell_prev;
                d_input_next = d_input;
            }

            for (g, d) in grad[l.init_hidden.range()].iter_mut().zip(&d_hidden_next) {
                *g += d;
            }
            for (g, d) in grad[l.init_cell.range()].iter_mut().zip(&d_cell_next) {
                *g += d;
            }
        }
        Ok(grad)
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            embed_dim: self.layout.embed_dim,
            hidden_dim: self.layout.hidden_dim,
            bins: self.layout.bins.clone(),
            tensors: self
                .layout
                .named_spans()
                .into_iter()
                .map(|(name, span)| (name, self.values[span.range()].to_vec()))
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &PolicyCheckpoint) -> Result<Self> {
        let layout = Layout::new(ckpt.embed_dim, ckpt.hidden_dim, ckpt.bins.clone());
        let mut values = vec![0.0; layout.total];
        for (name, span) in layout.named_spans() {
            let data = ckpt
                .tensors
                .get(&name)
                .ok_or_else(|| Error::InvalidConfig(format!("checkpoint lacks tensor `{name}`")))?;
            if data.len() != span.len {
                return Err(Error::DimensionMismatch {
                    expected: span.len,
                    actual: data.len(),
                });
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("policy checkpoint"));
            }
            values[span.range()].copy_from_slice(data);
        }
        Ok(Self { layout, values })
    }
}

/// JSON checkpoint of a policy, tensors keyed by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub bins: Vec<usize>,
    pub tensors: BTreeMap<String, Vec<f64>>,
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u just above the cumulative sum; take the last bin
    // with non-zero mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}
