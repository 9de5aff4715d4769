//! Scalar statistics over log-probability vectors.
//!
//! Everything here is generic over [`num_traits::Float`] so the same code runs
//! in `f32` and `f64`. Inputs are natural-log probabilities. Entries whose
//! probability is exactly zero (`-inf`) contribute nothing to any sum.

use num_traits::Float;

/// Entropy and surprisal spread of one predictive distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurprisalMoments<T> {
    /// Expected surprisal, `-Σ p ln p`.
    pub entropy: T,
    /// Standard deviation of surprisal around the entropy.
    pub sigma: T,
}

/// Standard deviations below this are treated as zero by [`zscore`].
pub const SIGMA_GUARD: f64 = 1e-9;

/// Radicand values in `[-RADICAND_CLAMP, 0)` are clamped to zero.
pub const RADICAND_CLAMP: f64 = 1e-12;

fn cast<T: Float>(x: f64) -> T {
    T::from(x).expect("float constant representable")
}

/// Neumaier-compensated sum. Vocabulary-sized sums of equal terms lose
/// around `n * eps` relative accuracy when added naively.
fn compensated_sum<T: Float>(terms: impl Iterator<Item = T>) -> T {
    let (sum, carry) = terms.fold((T::zero(), T::zero()), |(sum, carry), x| {
        let t = sum + x;
        let carry = if sum.abs() >= x.abs() {
            carry + ((sum - t) + x)
        } else {
            carry + ((x - t) + sum)
        };
        (t, carry)
    });
    sum + carry
}

fn finite_terms<T: Float>(logprobs: &[T], f: impl Fn(T) -> T) -> T {
    compensated_sum(logprobs.iter().filter(|&&lp| lp != T::neg_infinity()).map(|&lp| f(lp)))
}

/// `ln Σ exp(x)` with the maximum subtracted first.
///
/// Returns `-inf` for an empty slice or when every entry is `-inf`.
pub fn logsumexp<T: Float>(logprobs: &[T]) -> T {
    let max = logprobs
        .iter()
        .copied()
        .fold(T::neg_infinity(), |a, b| if b > a { b } else { a });
    if max == T::neg_infinity() {
        return max;
    }
    if max == T::infinity() {
        return max;
    }
    max + compensated_sum(logprobs.iter().map(|&lp| (lp - max).exp())).ln()
}

/// Log-softmax of raw logits, max-subtracted.
pub fn log_softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let lse = logsumexp(logits);
    logits.iter().map(|&l| l - lse).collect()
}

/// Surprisal of an outcome with the given log-probability.
pub fn surprisal<T: Float>(logprob: T) -> T {
    -logprob
}

/// Entropy `-Σ p ln p` of a normalized log-probability vector.
pub fn entropy<T: Float>(logprobs: &[T]) -> T {
    finite_terms(logprobs, |lp| -(lp.exp() * lp)).max(T::zero())
}

/// Entropy and surprisal standard deviation.
///
/// The spread is computed in the centered form `sqrt(Σ p (-ln p - H)²)`,
/// which avoids the cancellation of `Σ p (ln p)² - H²`.
pub fn surprisal_moments<T: Float>(logprobs: &[T]) -> SurprisalMoments<T> {
    let h = entropy(logprobs);
    let radicand = finite_terms(logprobs, |lp| {
        let d = -lp - h;
        lp.exp() * d * d
    });
    SurprisalMoments {
        entropy: h,
        sigma: clamped_sqrt(radicand),
    }
}

/// Surprisal standard deviation alone.
pub fn surprisal_std<T: Float>(logprobs: &[T]) -> T {
    surprisal_moments(logprobs).sigma
}

/// Uncentered second moment `Σ p (ln p)²`.
pub fn surprisal_second_moment<T: Float>(logprobs: &[T]) -> T {
    finite_terms(logprobs, |lp| lp.exp() * lp * lp)
}

/// Standard deviation from the uncentered form `sqrt(Σ p (ln p)² - H²)`.
pub fn surprisal_std_uncentered<T: Float>(logprobs: &[T]) -> T {
    let h = entropy(logprobs);
    clamped_sqrt(surprisal_second_moment(logprobs) - h * h)
}

fn clamped_sqrt<T: Float>(radicand: T) -> T {
    if radicand < T::zero() && radicand >= -cast::<T>(RADICAND_CLAMP) {
        T::zero()
    } else {
        radicand.max(T::zero()).sqrt()
    }
}

/// Standardized surprisal `(s - h) / sigma`.
///
/// A spread below [`SIGMA_GUARD`] means every outcome is equally surprising,
/// so the result is `0`.
pub fn zscore<T: Float>(s: T, h: T, sigma: T) -> T {
    if sigma < cast(SIGMA_GUARD) {
        T::zero()
    } else {
        (s - h) / sigma
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_point(p: f64) -> Vec<f64> {
        vec![p.ln(), (1.0 - p).ln()]
    }

    #[test]
    fn entropy_two_point() {
        assert!((entropy(&two_point(0.5)) - 2f64.ln()).abs() < 1e-12);
        // -0.9 ln 0.9 - 0.1 ln 0.1
        assert!((entropy(&two_point(0.9)) - 0.325_082_973_391_448).abs() < 1e-12);
    }

    #[test]
    fn point_mass_is_degenerate() {
        let m = surprisal_moments(&[0.0f64, f64::NEG_INFINITY]);
        assert_eq!(m.entropy, 0.0);
        assert_eq!(m.sigma, 0.0);
        assert_eq!(zscore(0.0, m.entropy, m.sigma), 0.0);
    }

    #[test]
    fn two_point_sigma_and_z() {
        let lp = two_point(0.9);
        let m = surprisal_moments(&lp);
        assert!((m.sigma - 0.659_167_373_048_570_6).abs() < 1e-9);
        assert!((m.sigma - surprisal_std_uncentered(&lp)).abs() < 1e-12);
        let z_minor = zscore(-lp[1], m.entropy, m.sigma);
        let z_major = zscore(-lp[0], m.entropy, m.sigma);
        assert!((z_minor - 3.0).abs() < 1e-9);
        assert!((z_major + 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn uniform_hits_guard() {
        let lp = vec![-(7f64.ln()); 7];
        let m = surprisal_moments(&lp);
        assert!((m.entropy - 7f64.ln()).abs() < 1e-12);
        assert!(m.sigma < SIGMA_GUARD);
        assert_eq!(zscore(7f64.ln(), m.entropy, m.sigma), 0.0);
    }

    #[test]
    fn works_in_single_precision() {
        let lp: Vec<f32> = vec![0.9f32.ln(), 0.1f32.ln()];
        let m = surprisal_moments(&lp);
        assert!((zscore(-lp[1], m.entropy, m.sigma) - 3.0).abs() < 1e-4);
    }

    #[test]
    fn logsumexp_edges() {
        assert_eq!(logsumexp::<f64>(&[]), f64::NEG_INFINITY);
        assert!((logsumexp(&[1000.0f64, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-9);
        let ls = log_softmax(&[1.0f64, 2.0, 3.0]);
        assert!(logsumexp(&ls).abs() < 1e-12);
    }
}
