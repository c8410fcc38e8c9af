//! Fixed-size dense helpers for the 3-state filter.

use crate::scalar::Real;

pub type Mat3<T> = [[T; 3]; 3];
pub type Mat2<T> = [[T; 2]; 2];

pub fn zeros3<T: Real>() -> Mat3<T> {
    [[T::zero(); 3]; 3]
}

pub fn diag3<T: Real>(d: [T; 3]) -> Mat3<T> {
    let mut m = zeros3();
    for i in 0..3 {
        m[i][i] = d[i];
    }
    m
}

pub fn mul3<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut m = zeros3();
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

pub fn transpose3<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let mut m = zeros3();
    for i in 0..3 {
        for j in 0..3 {
            m[i][j] = a[j][i];
        }
    }
    m
}

pub fn symmetrize3<T: Real>(a: &Mat3<T>) -> Mat3<T> {
    let half = T::from_f64(0.5).unwrap();
    let mut m = *a;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let v = half * (a[i][j] + a[j][i]);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    m
}

pub fn trace3<T: Real>(a: &Mat3<T>) -> T {
    a[0][0] + a[1][1] + a[2][2]
}

/// Lower Cholesky factor of a symmetric positive semi-definite matrix.
///
/// A zero pivot is accepted when the rest of its column is exactly zero
/// (a channel with no uncertainty); any other non-positive pivot fails.
pub fn cholesky3<T: Real>(a: &Mat3<T>) -> Option<Mat3<T>> {
    let mut l = zeros3::<T>();
    for j in 0..3 {
        let mut d = a[j][j];
        for k in 0..j {
            d -= l[j][k] * l[j][k];
        }
        let mut col = [T::zero(); 3];
        for (i, c) in col.iter_mut().enumerate().skip(j + 1) {
            let mut v = a[i][j];
            for k in 0..j {
                v -= l[i][k] * l[j][k];
            }
            *c = v;
        }
        if !d.is_finite() {
            return None;
        }
        if d > T::zero() {
            let ljj = d.sqrt();
            l[j][j] = ljj;
            for i in (j + 1)..3 {
                l[i][j] = col[i] / ljj;
            }
        } else if d == T::zero() && col.iter().all(|v| *v == T::zero()) {
            continue;
        } else {
            return None;
        }
    }
    Some(l)
}

/// Eigenvalues of a symmetric 3×3 matrix (closed form), ascending.
pub fn sym_eigenvalues3(a: &Mat3<f64>) -> [f64; 3] {
    let p1 = a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2);
    let mut e = if p1 == 0.0 {
        [a[0][0], a[1][1], a[2][2]]
    } else {
        let q = trace3(a) / 3.0;
        let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + 2.0 * p1;
        let p = (p2 / 6.0).sqrt();
        let mut b = *a;
        for (i, row) in b.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (a[i][j] - if i == j { q } else { 0.0 }) / p;
            }
        }
        let det_b = b[0][0] * (b[1][1] * b[2][2] - b[1][2] * b[2][1])
            - b[0][1] * (b[1][0] * b[2][2] - b[1][2] * b[2][0])
            + b[0][2] * (b[1][0] * b[2][1] - b[1][1] * b[2][0]);
        let r = (det_b / 2.0).clamp(-1.0, 1.0);
        let phi = r.acos() / 3.0;
        let e1 = q + 2.0 * p * phi.cos();
        let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
        [e1, 3.0 * q - e1 - e3, e3]
    };
    e.sort_by(|x, y| x.total_cmp(y));
    e
}

pub fn inverse2<T: Real>(a: &Mat2<T>) -> Option<Mat2<T>> {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    if !det.is_finite() || det.abs() <= T::min_positive_value() {
        return None;
    }
    Some([
        [a[1][1] / det, -a[0][1] / det],
        [-a[1][0] / det, a[0][0] / det],
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cholesky_reconstructs() {
        let a = [[4.0, 2.0, 0.6], [2.0, 5.0, 1.0], [0.6, 1.0, 3.0]];
        let l = cholesky3(&a).unwrap();
        let back = mul3(&l, &transpose3(&l));
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(back[i][j], a[i][j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn cholesky_semidefinite_and_indefinite() {
        let a = [[1.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.0]];
        let l = cholesky3(&a).unwrap();
        assert_eq!(l[2][2], 0.0);
        let bad = [[1.0, 0.0, 0.0], [0.0, -1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(cholesky3(&bad).is_none());
    }

    #[test]
    fn eigenvalues_known() {
        let e = sym_eigenvalues3(&[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 5.0]]);
        assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[1], 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e[2], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse2_round_trip() {
        let a = [[4.0, 1.0], [1.0, 3.0]];
        let inv = inverse2(&a).unwrap();
        assert_abs_diff_eq!(a[0][0] * inv[0][0] + a[0][1] * inv[1][0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(a[0][0] * inv[0][1] + a[0][1] * inv[1][1], 0.0, epsilon = 1e-15);
        assert!(inverse2(&[[1.0, 2.0], [2.0, 4.0]]).is_none());
    }
}
