//! Parameter rules: the theoretical `(η, θ)` choice for strongly convex MiG,
//! the MiG^NSC schedule, the sparse restart period, and the fixed presets
//! used by the sparse and asynchronous option-I analyses.

use crate::error::{Error, Result};

/// `(m/κ multiplier, η·L, θ)` for serial sparse MiG, option I.
pub const SPARSE_OPTION_I_PRESET: (f64, f64, f64) = (25.0, 1.0, 0.1);

/// `(m/κ multiplier, η·L, θ)` for asynchronous sparse MiG, option I.
pub const ASYNC_OPTION_I_PRESET: (f64, f64, f64) = (60.0, 0.2, 1.0 / 6.0);

fn check_positive(field: &'static str, v: f64) -> Result<()> {
    if !(v > 0.0 && v.is_finite()) {
        return Err(Error::config(field, format!("must be finite and > 0, got {v}")));
    }
    Ok(())
}

/// `Lθ + Lθ/(1-θ) <= 1/η`, the coupling constraint the strongly convex
/// analysis relies on.
pub fn coupling_constraint_holds(l: f64, eta: f64, theta: f64) -> bool {
    theta < 1.0 && l * theta + l * theta / (1.0 - theta) <= 1.0 / eta
}

/// Theoretical `(η, θ)` for MiG with `σ > 0`:
///
/// | condition   | η                 | θ             |
/// |-------------|-------------------|---------------|
/// | m/κ <= 3/4  | sqrt(1/(3σmL))    | sqrt(m/(3κ))  |
/// | m/κ >  3/4  | 2/(3L)            | 1/2           |
///
/// At the regime boundary both rows meet the coupling constraint with
/// equality, so η is nudged down by a few ulps if rounding would break it.
pub fn theoretical_params_sc(l: f64, sigma: f64, m: usize) -> Result<(f64, f64)> {
    check_positive("smoothness", l)?;
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(
            "sigma",
            format!("theoretical parameters need sigma > 0, got {sigma}; use the non-strongly convex solver"),
        ));
    }
    if m == 0 {
        return Err(Error::config("m", "epoch length must be >= 1"));
    }
    let m = m as f64;
    let kappa = l / sigma;
    let (mut eta, theta) = if m / kappa <= 0.75 {
        ((1.0 / (3.0 * sigma * m * l)).sqrt(), (m / (3.0 * kappa)).sqrt())
    } else {
        (2.0 / (3.0 * l), 0.5)
    };
    while !coupling_constraint_holds(l, eta, theta) {
        eta = eta.next_down();
    }
    Ok((eta, theta))
}

/// MiG^NSC schedule for epoch `s` (1-based): `θ = 2/(s+4)`, `η = 1/(4Lθ)`.
pub fn nsc_schedule(l: f64, s: usize) -> (f64, f64) {
    let theta = 2.0 / (s as f64 + 4.0);
    (1.0 / (4.0 * l * theta), theta)
}

/// Restart period for sparse MiG option II:
/// `ceil(2 · ((1-θ)(1+ζ) + θ/(ηmσ)) / (θ + ζθ - ζ))` with `ζ = D_m² - D_m`.
pub fn restart_period(theta: f64, zeta: f64, eta: f64, m: usize, sigma: f64) -> Result<usize> {
    check_positive("eta", eta)?;
    check_positive("sigma", sigma)?;
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::config("theta", format!("must lie in (0, 1], got {theta}")));
    }
    if zeta.is_nan() || zeta < 0.0 {
        return Err(Error::config("zeta", format!("must be >= 0, got {zeta}")));
    }
    if m == 0 {
        return Err(Error::config("m", "epoch length must be >= 1"));
    }
    let denominator = theta + zeta * theta - zeta;
    if denominator <= 0.0 {
        return Err(Error::config(
            "restart",
            format!(
                "sparse variance too large for restarts: theta + zeta*theta - zeta = {denominator} <= 0 \
                 (theta = {theta}, zeta = {zeta}); need zeta < theta / (1 - theta)"
            ),
        ));
    }
    let numerator = (1.0 - theta) * (1.0 + zeta) + theta / (eta * m as f64 * sigma);
    let period = (2.0 * numerator / denominator).ceil();
    if !period.is_finite() || period > u32::MAX as f64 {
        return Err(Error::config("restart", format!("restart period {period} is unusable")));
    }
    Ok((period as usize).max(1))
}

/// Warns when the restarted option II leaves its accelerated regime.
///
/// For `m/κ <= 3/4` the rate needs `ζ <= sqrt(m/(4κ))`; the other regime's
/// bound depends on an unspecified constant and is not checked.
pub fn sparse_variance_warning(zeta: f64, m: usize, kappa: f64) -> Option<String> {
    let ratio = m as f64 / kappa;
    if ratio <= 0.75 {
        let bound = (ratio / 4.0).sqrt();
        if zeta > bound {
            return Some(format!(
                "zeta = {zeta:.4} exceeds sqrt(m/(4 kappa)) = {bound:.4}; the accelerated rate does not apply"
            ));
        }
    }
    None
}

/// Number of MiG epochs (theoretical parameters) after which the expected
/// suboptimality is guaranteed to have shrunk by 4x.
///
/// * `m/κ <= 3/4`: `(1+ησ)^{-Sm} · (1 + θ/(η(1-θ)mσ)) <= 1/4`
/// * `m/κ >  3/4`: `(2/3)^S · (1 + 3κ/(2m)) <= 1/4`
pub fn hood_epoch_budget(l: f64, sigma: f64, m: usize) -> Result<usize> {
    let (eta, theta) = theoretical_params_sc(l, sigma, m)?;
    let mf = m as f64;
    let kappa = l / sigma;
    let epochs = if mf / kappa <= 0.75 {
        let factor = 1.0 + theta / (eta * (1.0 - theta) * mf * sigma);
        (4.0 * factor).ln() / (mf * (eta * sigma).ln_1p())
    } else {
        (4.0 * (1.0 + 1.5 * kappa / mf)).ln() / 1.5f64.ln()
    };
    Ok((epochs.ceil() as usize).max(1))
}
