use crate::error::{Error, Result};
use crate::exam::TargetQuery;
use crate::space::{Factor, Scenario, ScenarioSpace};

/// Largest grid `grid_oracle` will enumerate.
pub const GRID_BUDGET: u128 = 10_000_000;

/// Exhaustive search on the endpoint-inclusive grid with `per_dim` points
/// per factor. Returns the best grid scenario under the target's direction;
/// ties go to the lexicographically smallest index vector.
pub fn grid_oracle(
    target: &dyn TargetQuery,
    space: &ScenarioSpace,
    per_dim: usize,
) -> Result<(Scenario, f64)> {
    if per_dim < 2 {
        return Err(Error::InvalidConfig("grid oracle needs per_dim >= 2".into()));
    }
    let points = (per_dim as u128)
        .checked_pow(space.dim() as u32)
        .unwrap_or(u128::MAX);
    if points > GRID_BUDGET {
        return Err(Error::BudgetExceeded {
            points,
            budget: GRID_BUDGET,
        });
    }
    let axes: Vec<Vec<f64>> = space
        .factors()
        .iter()
        .map(|f| {
            let grid = Factor {
                bins: per_dim,
                ..f.clone()
            };
            (0..per_dim).map(|i| grid.bin_to_value(i)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;

    let direction = target.direction();
    let dim = space.dim();
    let mut index = vec![0usize; dim];
    let mut best: Option<(Scenario, f64)> = None;
    loop {
        let s = Scenario::new(index.iter().zip(&axes).map(|(&i, axis)| axis[i]).collect());
        let v = target.evaluate(&s);
        if best.as_ref().is_none_or(|(_, b)| direction.improves(v, *b)) {
            best = Some((s, v));
        }
        // Odometer increment, last factor fastest.
        let mut d = dim;
        loop {
            if d == 0 {
                return Ok(best.expect("grid is non-empty"));
            }
            d -= 1;
            index[d] += 1;
            if index[d] < per_dim {
                break;
            }
            index[d] = 0;
        }
    }
}

/// Narrows one factor for training only; the examination space stays
/// whole.
pub fn restrict_training_space(
    space: &ScenarioSpace,
    factor: &str,
    new_lower: f64,
    new_upper: f64,
) -> Result<ScenarioSpace> {
    let index = space
        .index_of(factor)
        .ok_or_else(|| Error::InvalidConfig(format!("no factor named `{factor}`")))?;
    let f = space.factor(index);
    if new_lower < f.lower || new_upper > f.upper || new_lower >= new_upper {
        return Err(Error::InvalidConfig(format!(
            "[{new_lower}, {new_upper}] is not a sub-range of `{factor}` [{}, {}]",
            f.lower, f.upper
        )));
    }
    space.with_bounds(factor, new_lower, new_upper)
}
