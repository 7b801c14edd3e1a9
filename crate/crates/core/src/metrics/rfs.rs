use crate::scalar::Scalar;

/// Relative foreground sensitivity from accuracies under foreground and
/// background noise: `(a_bg - a_fg) / (2 min(ā, 1 - ā))`.
///
/// Positive when background noise hurts less than foreground noise. When
/// `ā` is 0 or 1 both accuracies are equal and the result is 0.
pub fn rfs<T: Scalar>(a_fg: T, a_bg: T) -> T {
    let two = T::lit(2.0);
    let mean = (a_fg + a_bg) / two;
    let denom = two * mean.min(T::one() - mean);
    if denom <= T::zero() {
        return T::zero();
    }
    ((a_bg - a_fg) / denom).max(-T::one()).min(T::one())
}

/// Instance-wise [`rfs`] over true-class probabilities.
pub fn irfs<T: Scalar>(p_fg: T, p_bg: T) -> T {
    rfs(p_fg, p_bg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_points() {
        assert_eq!(rfs(0.5, 0.5), 0.0);
        assert!((rfs(0.2f64, 0.6) - 0.5).abs() < 1e-15);
        assert!((rfs(0.7f64, 0.9) - 0.5).abs() < 1e-12);
        assert_eq!(rfs(1.0, 1.0), 0.0);
        assert_eq!(rfs(0.0, 0.0), 0.0);
        assert_eq!(irfs(0.0f64, 0.4), 1.0);
        assert_eq!(irfs(0.4f64, 0.0), -1.0);
    }

    #[test]
    fn extremes_reach_the_unit_bounds() {
        assert_eq!(rfs(1.0f32, 0.0), -1.0);
        assert_eq!(rfs(0.0f32, 1.0), 1.0);
    }
}
