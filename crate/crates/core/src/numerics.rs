//! Summation helpers with a fixed reduction order.

use num_complex::Complex64;

/// Neumaier-compensated sum of real terms.
pub fn compensated_sum(terms: &[f64]) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &x in terms {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            comp += (sum - t) + x;
        } else {
            comp += (x - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

const PAIRWISE_LEAF: usize = 32;

/// Pairwise (cascade) sum of complex terms. The split points depend only on
/// the length, so the result is reproducible bit for bit.
pub fn pairwise_sum(terms: &[Complex64]) -> Complex64 {
    if terms.len() <= PAIRWISE_LEAF {
        let mut acc = Complex64::new(0.0, 0.0);
        for &t in terms {
            acc += t;
        }
        return acc;
    }
    let mid = terms.len() / 2;
    pairwise_sum(&terms[..mid]) + pairwise_sum(&terms[mid..])
}

/// Real-valued variant of [`pairwise_sum`].
pub fn pairwise_sum_f64(terms: &[f64]) -> f64 {
    if terms.len() <= PAIRWISE_LEAF {
        return terms.iter().sum();
    }
    let mid = terms.len() / 2;
    pairwise_sum_f64(&terms[..mid]) + pairwise_sum_f64(&terms[mid..])
}

/// `|a - b| <= tol * max(|a|, |b|, floor)`.
pub fn rel_close(a: f64, b: f64, tol: f64, floor: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_recovers_cancelled_terms() {
        let terms = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(&terms), 2.0);
    }

    #[test]
    fn pairwise_matches_naive_on_small_integers() {
        let v: Vec<Complex64> = (0..1000).map(|i| Complex64::new(i as f64, -(i as f64))).collect();
        let s = pairwise_sum(&v);
        assert_eq!(s, Complex64::new(499500.0, -499500.0));
        let r: Vec<f64> = (0..1000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum_f64(&r), 499500.0);
    }
}
