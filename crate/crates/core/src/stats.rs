//! Small statistics helpers shared by diagnostics and tests.

use crate::num::{rf, Real};

/// Two-sample Kolmogorov–Smirnov statistic `sup |F_a - F_b|`.
pub fn two_sample_ks<R: Real>(a: &[R], b: &[R]) -> R {
    assert!(!a.is_empty() && !b.is_empty());
    let mut a: Vec<R> = a.to_vec();
    let mut b: Vec<R> = b.to_vec();
    a.sort_by(|x, y| x.partial_cmp(y).unwrap());
    b.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (na, nb) = (a.len(), b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = R::zero();
    while i < na && j < nb {
        let x = if a[i] <= b[j] { a[i] } else { b[j] };
        while i < na && a[i] <= x {
            i += 1;
        }
        while j < nb && b[j] <= x {
            j += 1;
        }
        let fa = rf::<R>(i as f64 / na as f64);
        let fb = rf::<R>(j as f64 / nb as f64);
        let gap = (fa - fb).abs();
        if gap > d {
            d = gap;
        }
    }
    d
}

/// Asymptotic two-sample KS critical value at significance `level`.
pub fn ks_critical<R: Real>(na: usize, nb: usize, level: f64) -> R {
    let c = (-((level / 2.0).ln()) / 2.0).sqrt();
    rf::<R>(c * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt())
}

/// Ordinary least squares fit `y = slope * x + intercept`.
pub fn linear_fit<R: Real>(xs: &[R], ys: &[R]) -> (R, R) {
    assert_eq!(xs.len(), ys.len());
    assert!(xs.len() >= 2);
    let n = rf::<R>(xs.len() as f64);
    let mx = xs.iter().copied().sum::<R>() / n;
    let my = ys.iter().copied().sum::<R>() / n;
    let mut sxx = R::zero();
    let mut sxy = R::zero();
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
    }
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Median (copies and sorts).
pub fn median<R: Real>(values: &[R]) -> R {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / rf::<R>(2.0)
    }
}

/// Empirical quantile with linear interpolation, `q` in [0, 1].
pub fn quantile<R: Real>(values: &[R], q: f64) -> R {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        let w = rf::<R>(pos - lo as f64);
        v[lo] * (R::one() - w) + v[hi] * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ks_of_identical_samples_is_zero() {
        let a = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(two_sample_ks(&a, &a), 0.0);
    }

    #[test]
    fn ks_of_disjoint_samples_is_one() {
        let a = vec![0.0, 1.0, 2.0];
        let b = vec![10.0, 11.0];
        assert_eq!(two_sample_ks(&a, &b), 1.0);
    }

    #[test]
    fn ks_matches_hand_computation() {
        // F_a jumps at 1,2; F_b jumps at 1.5,2.5 -> max gap 0.5 at x in [1,1.5)
        let a = vec![1.0, 2.0];
        let b = vec![1.5, 2.5];
        assert_relative_eq!(two_sample_ks(&a, &b), 0.5);
    }

    #[test]
    fn critical_value_formula() {
        let c: f64 = ks_critical(1000, 1000, 0.01);
        let coeff = (-(0.005f64.ln()) / 2.0).sqrt(); // ~1.6276
        assert_relative_eq!(c, coeff * (2.0f64 / 1000.0).sqrt(), max_relative = 1e-12);
        assert!((coeff - 1.6276).abs() < 1e-4);
    }

    #[test]
    fn linear_fit_recovers_exact_line() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| -0.7 * x + 2.2).collect();
        let (s, b) = linear_fit(&xs, &ys);
        assert_relative_eq!(s, -0.7, epsilon = 1e-12);
        assert_relative_eq!(b, 2.2, epsilon = 1e-12);
    }

    #[test]
    fn median_and_quantile() {
        let v = vec![5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(median(&v), 3.0);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 5.0);
        assert_relative_eq!(quantile(&v, 0.5), 3.0);
    }
}
