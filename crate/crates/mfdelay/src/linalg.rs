//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Dense real matrix used everywhere in the crate.
pub type Mat = DMatrix<f64>;
/// Dense real vector used everywhere in the crate.
pub type Vector = DVector<f64>;

/// Matrix 1-norm (maximum absolute column sum).
pub fn norm1(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Largest absolute entry.
pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0, |a, v| a.max(v.abs()))
}

/// Largest absolute entry of a vector.
pub fn max_abs_vec(v: &Vector) -> f64 {
    v.iter().fold(0.0, |a, x| a.max(x.abs()))
}

/// A square matrix together with its LU factorization and 1-norm
/// reciprocal condition number.
#[derive(Debug, Clone)]
pub struct Factored {
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    /// Reciprocal 1-norm condition number; `0` for an exactly singular matrix.
    pub rcond: f64,
}

impl Factored {
    /// Factor `m` (pivoted LU) and measure its conditioning.
    pub fn new(m: &Mat) -> Self {
        let lu = m.clone().lu();
        let rcond = match lu.try_inverse() {
            Some(inv) => {
                let denom = norm1(m) * norm1(&inv);
                if denom > 0.0 && denom.is_finite() {
                    1.0 / denom
                } else {
                    0.0
                }
            }
            None => 0.0,
        };
        Factored { lu, rcond }
    }

    /// Solve `M X = rhs`. Only meaningful when `rcond` is positive.
    pub fn solve(&self, rhs: &Mat) -> Mat {
        self.lu
            .solve(rhs)
            .unwrap_or_else(|| Mat::from_element(rhs.nrows(), rhs.ncols(), f64::NAN))
    }

    /// Solve `M x = rhs` for a vector right-hand side.
    pub fn solve_vec(&self, rhs: &Vector) -> Vector {
        self.lu
            .solve(rhs)
            .unwrap_or_else(|| Vector::from_element(rhs.len(), f64::NAN))
    }
}

/// Smallest eigenvalue of the symmetric part (M + Mᵀ)/2.
pub fn min_sym_eig(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    let s = (m + m.transpose()) * 0.5;
    SymmetricEigen::new(s)
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Relative asymmetry ‖M − Mᵀ‖_max / ‖M‖_max (zero for the zero matrix).
pub fn asymmetry(m: &Mat) -> f64 {
    let scale = max_abs(m);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&(m - m.transpose())) / scale
}

/// Horizontal concatenation `[M_0 M_1 …]` of blocks with equal row count.
pub fn hstack(blocks: &[&Mat], rows: usize) -> Mat {
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let mut off = 0;
    for b in blocks {
        out.view_mut((0, off), (rows, b.ncols())).copy_from(b);
        off += b.ncols();
    }
    out
}

/// Block-diagonal matrix diag(M_0, M_1, …).
pub fn block_diag(blocks: &[&Mat]) -> Mat {
    let size: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = Mat::zeros(size, size);
    let mut off = 0;
    for b in blocks {
        out.view_mut((off, off), (b.nrows(), b.ncols())).copy_from(b);
        off += b.nrows();
    }
    out
}

/// Vertical concatenation of vectors.
pub fn vstack_vec(parts: &[&Vector]) -> Vector {
    let len: usize = parts.iter().map(|p| p.len()).sum();
    let mut out = Vector::zeros(len);
    let mut off = 0;
    for p in parts {
        out.rows_mut(off, p.len()).copy_from(p);
        off += p.len();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rcond_of_identity_is_one() {
        let f = Factored::new(&Mat::identity(3, 3));
        assert!((f.rcond - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rcond_of_singular_is_zero() {
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        assert_eq!(Factored::new(&m).rcond, 0.0);
    }

    #[test]
    fn solve_recovers_rhs() {
        let m = Mat::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let x = Mat::from_row_slice(2, 1, &[1.0, -1.0]);
        let b = &m * &x;
        let f = Factored::new(&m);
        assert!((f.solve(&b) - x).abs().max() < 1e-14);
    }

    #[test]
    fn stacking_helpers_place_blocks() {
        let a = Mat::from_element(2, 1, 1.0);
        let b = Mat::from_element(2, 2, 2.0);
        let h = hstack(&[&a, &b], 2);
        assert_eq!(h.ncols(), 3);
        assert_eq!(h[(1, 2)], 2.0);
        let d = block_diag(&[&Mat::identity(1, 1), &b]);
        assert_eq!(d[(0, 1)], 0.0);
        assert_eq!(d[(2, 2)], 2.0);
    }

    #[test]
    fn min_eig_and_asymmetry() {
        let m = Mat::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 2.0]);
        assert!((min_sym_eig(&m) + 1.0).abs() < 1e-14);
        let s = Mat::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!((asymmetry(&s) - 1.0).abs() < 1e-15);
        assert_eq!(asymmetry(&Mat::zeros(2, 2)), 0.0);
    }
}
