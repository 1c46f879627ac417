use anyhow::bail;

/// `(r_pi - r_rand) / (r_star - r_rand)`: 1 at the reference return, 0 at the
/// random one.
pub fn normalized_score(r_pi: f64, r_rand: f64, r_star: f64) -> anyhow::Result<f64> {
    if !(r_pi.is_finite() && r_rand.is_finite() && r_star.is_finite()) {
        bail!("normalized_score needs finite returns, got ({r_pi}, {r_rand}, {r_star})");
    }
    let span = r_star - r_rand;
    if span.abs() <= 1e-12 * (1.0 + r_star.abs().max(r_rand.abs())) {
        bail!("degenerate normalization: reference return {r_star} equals random return {r_rand}");
    }
    Ok((r_pi - r_rand) / span)
}
