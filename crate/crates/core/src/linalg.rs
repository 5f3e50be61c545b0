//! Dense linear algebra helpers: null-space bases, orthogonal projectors and
//! backward differences of matrix-valued signals.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative singular-value threshold used to decide numerical rank.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Orthonormal basis of `{v : a * v = 0}`, one column per null direction.
///
/// Rank is decided by singular values above `RANK_TOLERANCE * sigma_max`.
/// Columns follow the descending order of their singular values and each
/// column's first nonzero entry is made positive. A full-rank input yields a
/// matrix with zero columns.
pub fn null_space_basis(a: &Matrix) -> Matrix {
    let (rows, cols) = a.shape();
    if cols == 0 {
        return Matrix::zeros(0, 0);
    }
    // Pad to at least square so the SVD returns a full right basis.
    let n = rows.max(cols);
    let mut padded = Matrix::zeros(n, cols);
    padded.view_mut((0, 0), (rows, cols)).copy_from(a);

    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let sigma = &svd.singular_values;

    let mut order: Vec<usize> = (0..sigma.len()).collect();
    // Stable sort keeps the decomposition's own order on ties.
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));

    let sigma_max = order.first().map(|&i| sigma[i]).unwrap_or(0.0);
    let threshold = RANK_TOLERANCE * sigma_max;
    let null_idx: Vec<usize> = if sigma_max == 0.0 {
        order.clone()
    } else {
        order.iter().copied().filter(|&i| sigma[i] <= threshold).collect()
    };

    let mut basis = Matrix::zeros(cols, null_idx.len());
    for (c, &i) in null_idx.iter().enumerate() {
        let mut col: Vector = v_t.row(i).transpose();
        if let Some(first) = col.iter().copied().find(|x| x.abs() > 1e-12) {
            if first < 0.0 {
                col.neg_mut();
            }
        }
        basis.set_column(c, &col);
    }
    basis
}

/// Projector onto the orthogonal complement of `range(n)`, formed as
/// `(I - N N^T)^T (I - N N^T)` for orthonormal `N`.
///
/// `dim` is the ambient dimension; it is needed when `n` has zero columns.
pub fn projection_matrix(n: &Matrix, dim: usize) -> Matrix {
    let identity = Matrix::identity(dim, dim);
    if n.ncols() == 0 {
        return identity;
    }
    let residual = &identity - n * n.transpose();
    let q = residual.transpose() * &residual;
    // Symmetrize away rounding in the product.
    (&q + q.transpose()) * 0.5
}

/// Backward difference of a matrix-valued signal sampled at a fixed step.
///
/// The first sample has no predecessor and differentiates to zero.
#[derive(Debug, Clone, Default)]
pub struct BackwardDifference {
    previous: Option<Matrix>,
}

impl BackwardDifference {
    pub fn new() -> Self {
        Self::default()
    }

    /// Seeds the history so that the next call differentiates against `sample`.
    pub fn seeded(sample: Matrix) -> Self {
        Self {
            previous: Some(sample),
        }
    }

    pub fn previous(&self) -> Option<&Matrix> {
        self.previous.as_ref()
    }

    /// Pushes the sample at time `t` and returns `(f(t) - f(t - dt)) / dt`.
    pub fn push(&mut self, sample: &Matrix, dt: f64) -> Result<Matrix> {
        let derivative = match &self.previous {
            Some(prev) => finite_diff_matrix(sample, prev, dt)?,
            None => Matrix::zeros(sample.nrows(), sample.ncols()),
        };
        self.previous = Some(sample.clone());
        Ok(derivative)
    }
}

/// `(current - previous) / dt`.
pub fn finite_diff_matrix(current: &Matrix, previous: &Matrix, dt: f64) -> Result<Matrix> {
    if current.shape() != previous.shape() {
        return Err(Error::DimensionMismatch {
            context: "finite_diff_matrix",
            expected: previous.shape(),
            found: current.shape(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "finite difference step must be positive, got {dt}"
        )));
    }
    Ok((current - previous) / dt)
}

/// Frobenius norm.
pub fn frobenius(m: &Matrix) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        // Small LCG keeps these unit tests free of extra dependencies.
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        Matrix::from_fn(rows, cols, |_, _| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
    }

    #[test]
    fn identity_has_trivial_null_space() {
        let n = null_space_basis(&Matrix::identity(3, 3));
        assert_eq!(n.shape(), (3, 0));
    }

    #[test]
    fn coordinate_null_space() {
        let a = Matrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let n = null_space_basis(&a);
        assert_eq!(n.shape(), (3, 1));
        assert!((n[(0, 0)]).abs() < 1e-14);
        assert!((n[(1, 0)]).abs() < 1e-14);
        assert!((n[(2, 0)] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn row_of_ones_null_space_sign_rule() {
        let a = Matrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let n = null_space_basis(&a);
        assert_eq!(n.shape(), (2, 1));
        assert!(frobenius(&(&a * &n)) < 1e-14);
        assert!((n.column(0).norm() - 1.0).abs() < 1e-14);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((n[(0, 0)] - s).abs() < 1e-14);
        assert!((n[(1, 0)] + s).abs() < 1e-14);
    }

    #[test]
    fn zero_matrix_null_space_is_everything() {
        let n = null_space_basis(&Matrix::zeros(2, 4));
        assert_eq!(n.shape(), (4, 4));
        assert!((n.transpose() * &n - Matrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn wide_and_tall_inputs() {
        for (rows, cols, seed) in [(2, 10, 1u64), (10, 2, 2), (5, 5, 3), (12, 12, 4), (3, 7, 5)] {
            let a = random_matrix(rows, cols, seed);
            let n = null_space_basis(&a);
            assert_eq!(n.ncols(), cols - rows.min(cols));
            assert!(frobenius(&(&a * &n)) <= 1e-8);
            let gram = n.transpose() * &n;
            assert!((gram - Matrix::identity(n.ncols(), n.ncols())).amax() <= 1e-10);
        }
    }

    #[test]
    fn rank_deficient_input() {
        let b = random_matrix(6, 2, 9);
        let c = random_matrix(2, 6, 10);
        let a = &b * &c; // rank 2
        let n = null_space_basis(&a);
        assert_eq!(n.ncols(), 4);
        assert!(frobenius(&(&a * &n)) <= 1e-8);
    }

    #[test]
    fn projector_cases() {
        assert_eq!(projection_matrix(&Matrix::zeros(3, 0), 3), Matrix::identity(3, 3));

        let e3 = Matrix::from_column_slice(3, 1, &[0.0, 0.0, 1.0]);
        let q = projection_matrix(&e3, 3);
        let expected = Matrix::from_diagonal(&Vector::from_vec(vec![1.0, 1.0, 0.0]));
        assert!((q - expected).amax() < 1e-15);

        let n = null_space_basis(&random_matrix(3, 5, 42));
        assert_eq!(n.ncols(), 2);
        let q = projection_matrix(&n, 5);
        assert!((&q * &q - &q).amax() < 1e-10);
        assert!((&q * &n).amax() < 1e-10);
        assert!((&q - q.transpose()).amax() < 1e-12);
    }

    #[test]
    fn finite_differences() {
        let m = Matrix::identity(2, 2);
        assert_eq!(finite_diff_matrix(&m, &m, 0.1).unwrap(), Matrix::zeros(2, 2));

        let dt = 0.01;
        let t = 0.37;
        let d = finite_diff_matrix(&(Matrix::identity(3, 3) * t), &(Matrix::identity(3, 3) * (t - dt)), dt)
            .unwrap();
        assert!((d - Matrix::identity(3, 3)).amax() < 1e-12);

        let dt: f64 = 1e-3;
        let e11 = |v: f64| Matrix::from_row_slice(2, 2, &[v, 0.0, 0.0, 0.0]);
        let d = finite_diff_matrix(&e11(1f64.sin()), &e11((1.0 - dt).sin()), dt).unwrap();
        assert!((d[(0, 0)] - 1f64.cos()).abs() < 1e-3);
    }

    #[test]
    fn finite_difference_rejects_shape_change() {
        let err = finite_diff_matrix(&Matrix::zeros(2, 2), &Matrix::zeros(3, 3), 0.1);
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn backward_difference_first_sample_is_zero() {
        let mut diff = BackwardDifference::new();
        let d0 = diff.push(&Matrix::identity(2, 2), 0.1).unwrap();
        assert_eq!(d0, Matrix::zeros(2, 2));
        let d1 = diff.push(&(Matrix::identity(2, 2) * 2.0), 0.1).unwrap();
        assert!((d1 - Matrix::identity(2, 2) * 10.0).amax() < 1e-12);
    }
}
