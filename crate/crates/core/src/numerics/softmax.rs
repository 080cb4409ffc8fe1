use crate::error::{Error, Result};

/// Numerically stable softmax (max-subtracted).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let max = checked_max(logits)?;
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for p in &mut out {
        *p /= sum;
    }
    Ok(out)
}

/// `log(softmax(logits))` without forming the probabilities first.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let max = checked_max(logits)?;
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|&z| z - lse).collect())
}

fn checked_max(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(Error::InvalidConfig("softmax of an empty vector".into()));
    }
    if logits.iter().any(|z| !z.is_finite()) {
        return Err(Error::NonFinite("softmax"));
    }
    Ok(logits.iter().copied().fold(f64::NEG_INFINITY, f64::max))
}
