/// Converts a condition difference in milliseconds into the log-scale slope
/// under sum coding, given the log-scale intercept.
///
/// The returned slope satisfies `exp(beta0 + b) - exp(beta0 - b) == eff_ms`.
pub fn effect_ms_to_log(eff_ms: f64, beta0: f64) -> f64 {
    (eff_ms / (2.0 * beta0.exp())).asinh()
}

/// Inverse of [`effect_ms_to_log`].
pub fn effect_log_to_ms(beta1: f64, beta0: f64) -> f64 {
    (beta0 + beta1).exp() - (beta0 - beta1).exp()
}
