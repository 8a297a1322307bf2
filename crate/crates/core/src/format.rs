//! Number formatting shared by every CSV, JSON and config writer.

/// Shortest round-trip decimal, switching to exponent notation for very small or very
/// large magnitudes. Non-finite values print as `inf`, `-inf` and `NaN`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x.is_finite() && x != 0.0 && !(1e-5..1e16).contains(&a) {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}
