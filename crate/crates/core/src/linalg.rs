//! Fixed-size vector and matrix helpers for the 2-, 3- and 4-dimensional
//! objects that appear along rays.

use crate::scalar::{lit, Real};

pub type Vec2<T> = [T; 2];
pub type Mat2<T> = [[T; 2]; 2];
pub type Mat3<T> = [[T; 3]; 3];
pub type Mat4<T> = [[T; 4]; 4];

#[inline]
pub fn dot2<T: Real>(a: Vec2<T>, b: Vec2<T>) -> T {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm2<T: Real>(a: Vec2<T>) -> T {
    a[0].hypot(a[1])
}

/// Unit direction at angle `alpha` from the x axis.
#[inline]
pub fn kappa<T: Real>(alpha: T) -> Vec2<T> {
    [alpha.cos(), alpha.sin()]
}

/// Rotation by +90 degrees, `J = [[0, -1], [1, 0]]`.
#[inline]
pub fn rot90<T: Real>(a: Vec2<T>) -> Vec2<T> {
    [-a[1], a[0]]
}

/// `det(a b)` for column vectors, equal to `(J a, b)`.
#[inline]
pub fn cross2<T: Real>(a: Vec2<T>, b: Vec2<T>) -> T {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn mat2_vec<T: Real>(m: &Mat2<T>, v: Vec2<T>) -> Vec2<T> {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

pub fn det3<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

pub fn transpose3<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let mut t = [[T::zero(); 3]; 3];
    for (i, row) in m.iter().enumerate() {
        for (j, &e) in row.iter().enumerate() {
            t[j][i] = e;
        }
    }
    t
}

pub fn mat3_vec<T: Real>(m: &Mat3<T>, v: [T; 3]) -> [T; 3] {
    let mut out = [T::zero(); 3];
    for i in 0..3 {
        out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
    }
    out
}

/// Solves `m x = b` by Gaussian elimination with partial pivoting.
///
/// Returns `None` when a pivot falls below `1e-14` of the matrix scale.
pub fn solve3<T: Real>(m: &Mat3<T>, b: [T; 3]) -> Option<[T; 3]> {
    let mut a = *m;
    let mut x = b;
    let scale = a
        .iter()
        .flat_map(|r| r.iter())
        .fold(T::zero(), |acc, &e| acc.max(e.abs()));
    if scale == T::zero() {
        return None;
    }
    let eps = scale * lit::<T>(1e-14);
    for col in 0..3 {
        let pivot = (col..3)
            .max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())
            .unwrap();
        if a[pivot][col].abs() <= eps {
            return None;
        }
        a.swap(col, pivot);
        x.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..3).rev() {
        let mut s = x[col];
        for k in col + 1..3 {
            s -= a[col][k] * x[k];
        }
        x[col] = s / a[col][col];
    }
    Some(x)
}

pub fn identity4<T: Real>() -> Mat4<T> {
    let mut m = [[T::zero(); 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = T::one();
    }
    m
}

pub fn mat4_mul<T: Real>(a: &Mat4<T>, b: &Mat4<T>) -> Mat4<T> {
    let mut c = [[T::zero(); 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            let mut s = T::zero();
            for k in 0..4 {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn mat4_vec<T: Real>(m: &Mat4<T>, v: [T; 4]) -> [T; 4] {
    let mut out = [T::zero(); 4];
    for i in 0..4 {
        out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2] + m[i][3] * v[3];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve3_recovers_known_solution() {
        let m: Mat3<f64> = [[2.0, 1.0, -1.0], [-3.0, -1.0, 2.0], [-2.0, 1.0, 2.0]];
        let x = solve3(&m, [8.0, -11.0, -3.0]).unwrap();
        for (a, b) in x.iter().zip([2.0, 3.0, -1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((det3(&m) - -1.0).abs() < 1e-12);
    }

    #[test]
    fn singular_matrix_has_no_solution() {
        let m: Mat3<f64> = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [0.0, 1.0, 1.0]];
        assert!(solve3(&m, [1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn cross2_matches_rotation_identity() {
        let a: Vec2<f64> = [0.3, -1.2];
        let b = [2.0, 0.7];
        assert!((cross2(a, b) - dot2(rot90(a), b)).abs() < 1e-15);
    }
}
