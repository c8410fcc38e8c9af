//! Savitzky-Golay smoothing with least-squares boundary fits.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

pub const SAVGOL_WINDOW: usize = 15;
pub const SAVGOL_ORDER: usize = 3;

/// Solve a small dense system with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs()))
            .unwrap_or(c);
        if a[p][c].abs() < 1e-300 {
            return Err(Error::Numerical("singular Savitzky-Golay design".into()));
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in (c + 1)..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = ((r + 1)..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Ok(x)
}

/// Weights that evaluate the order-`order` fit over `window` samples at
/// sample `at` (0-based within the window).
pub fn savgol_coefficients(window: usize, order: usize, at: usize) -> Result<Vec<f64>> {
    check(window, order)?;
    if at >= window {
        return Err(Error::invalid("evaluation point outside the window"));
    }
    let half = (window / 2) as f64;
    let xs: Vec<f64> = (0..window).map(|j| j as f64 - half).collect();
    let p = order + 1;
    let mut ata = vec![vec![0.0; p]; p];
    for x in &xs {
        for (r, row) in ata.iter_mut().enumerate() {
            for (c, v) in row.iter_mut().enumerate() {
                *v += x.powi((r + c) as i32);
            }
        }
    }
    let t = xs[at];
    let e: Vec<f64> = (0..p).map(|k| t.powi(k as i32)).collect();
    let y = solve_dense(ata, e)?;
    Ok(xs
        .iter()
        .map(|x| (0..p).map(|k| y[k] * x.powi(k as i32)).sum())
        .collect())
}

fn check(window: usize, order: usize) -> Result<()> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::invalid(format!("window must be odd, got {window}")));
    }
    if order >= window {
        return Err(Error::invalid(format!("order {order} must be < window {window}")));
    }
    Ok(())
}

/// Same-length smoothing; series shorter than the window are returned as is.
pub fn savgol_smooth<T: Real>(xs: &[T], window: usize, order: usize) -> Result<Vec<T>> {
    check(window, order)?;
    if xs.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("savgol input"));
    }
    let n = xs.len();
    if n < window {
        return Ok(xs.to_vec());
    }
    let m = window / 2;
    let to_t = |c: Vec<f64>| c.into_iter().map(lit::<T>).collect::<Vec<T>>();
    let centre = to_t(savgol_coefficients(window, order, m)?);
    let apply = |coeffs: &[T], start: usize| -> T {
        coeffs
            .iter()
            .zip(&xs[start..start + window])
            .map(|(c, v)| *c * *v)
            .sum()
    };
    let mut out = Vec::with_capacity(n);
    for i in 0..m {
        out.push(apply(&to_t(savgol_coefficients(window, order, i)?), 0));
    }
    for i in m..(n - m) {
        out.push(apply(&centre, i - m));
    }
    for i in (n - m)..n {
        let at = i - (n - window);
        out.push(apply(&to_t(savgol_coefficients(window, order, at)?), n - window));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn centre_coefficient_matches_closed_form() {
        // h0 = 3(3m² + 3m − 1) / ((2m − 1)(2m + 1)(2m + 3)) for a quadratic/cubic fit
        let m = 7.0;
        let h0 = 3.0 * (3.0 * m * m + 3.0 * m - 1.0) / ((2.0 * m - 1.0) * (2.0 * m + 1.0) * (2.0 * m + 3.0));
        let c = savgol_coefficients(15, 3, 7).unwrap();
        assert_abs_diff_eq!(c[7], h0, epsilon = 1e-12);
        assert_abs_diff_eq!(c.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn constant_and_short_series() {
        let xs = vec![4.2; 40];
        let out = savgol_smooth(&xs, 15, 3).unwrap();
        for v in out {
            assert_abs_diff_eq!(v, 4.2, epsilon = 1e-12);
        }
        let short = vec![1.0, 5.0, -2.0];
        assert_eq!(savgol_smooth(&short, 15, 3).unwrap(), short);
    }

    #[test]
    fn invalid_parameters() {
        assert!(savgol_smooth(&[0.0; 20], 14, 3).is_err());
        assert!(savgol_smooth(&[0.0; 20], 5, 5).is_err());
        assert!(savgol_smooth(&[f64::NAN; 20], 15, 3).is_err());
    }

    #[test]
    fn impulse_attenuated() {
        let mut xs: Vec<f64> = (0..41).map(|k| 0.001 * (k as f64).powi(3)).collect();
        let base = savgol_smooth(&xs, 15, 3).unwrap();
        xs[20] += 1.0;
        let out = savgol_smooth(&xs, 15, 3).unwrap();
        let gain = out[20] - base[20];
        assert!(gain > 0.0 && gain < 1.0);
        assert_abs_diff_eq!(gain, 501.0 / 3315.0, epsilon = 1e-9);
    }

    proptest! {
        #[test]
        fn cubics_reproduced(a in -5.0f64..5.0, b in -2.0f64..2.0, c in -0.2f64..0.2, d in -0.01f64..0.01, n in 15usize..80) {
            let xs: Vec<f64> = (0..n).map(|k| { let t = k as f64; a + b * t + c * t * t + d * t * t * t }).collect();
            let out = savgol_smooth(&xs, 15, 3).unwrap();
            for (o, x) in out.iter().zip(xs.iter()) {
                // boundary fits are exact for cubics too
                prop_assert!((o - x).abs() <= 1e-9 * x.abs().max(1.0));
            }
        }
    }
}
