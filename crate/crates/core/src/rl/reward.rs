//! Reward functions of the counterfactual search.

use super::RlError;

fn check_unit(name: &str, v: f64) -> Result<(), RlError> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(RlError::RangeViolation(format!(
            "{name} = {v} is outside [0, 1]"
        )))
    }
}

/// `−α·y_c + (1−α)·K`, where `y_c` is the probability the candidate still
/// belongs to the original class `c`.
pub fn reward_classification(y_c: f64, similarity: f64, alpha: f64) -> Result<f64, RlError> {
    check_unit("class probability", y_c)?;
    check_unit("similarity", similarity)?;
    check_unit("alpha", alpha)?;
    Ok(-alpha * y_c + (1.0 - alpha) * similarity)
}

/// `sign(x)` with `sign(0) = 0`.
pub fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Direction gate of the regression reward: `+1` when the candidate's score
/// ends up farther from `s_target` than the original's, `−1` when closer.
pub fn regression_beta(s_orig: f64, s_cf: f64, s_target: f64) -> f64 {
    sign((s_cf - s_target).abs() - (s_orig - s_target).abs())
}

/// `α·β·|s_cf − s_orig| + (1−α)·K`.
pub fn reward_regression(
    s_orig: f64,
    s_cf: f64,
    s_target: f64,
    similarity: f64,
    alpha: f64,
) -> Result<f64, RlError> {
    check_unit("similarity", similarity)?;
    check_unit("alpha", alpha)?;
    let beta = regression_beta(s_orig, s_cf, s_target);
    Ok(alpha * beta * (s_cf - s_orig).abs() + (1.0 - alpha) * similarity)
}

/// Convex combination `Σ α_i r_i` of partial rewards.
pub fn combine_rewards(partials: &[f64], alphas: &[f64]) -> Result<f64, RlError> {
    if partials.len() != alphas.len() {
        return Err(RlError::WeightViolation(format!(
            "{} rewards but {} weights",
            partials.len(),
            alphas.len()
        )));
    }
    if alphas.iter().any(|&a| a.is_nan() || a < 0.0)
        || (alphas.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(RlError::WeightViolation(format!(
            "weights {alphas:?} must be non-negative and sum to 1"
        )));
    }
    Ok(partials.iter().zip(alphas).map(|(r, a)| r * a).sum())
}

/// One step of the geometric exploration decay, `ε·λ`.
pub fn epsilon_schedule(epsilon: f64, lambda: f64) -> f64 {
    epsilon * lambda
}
