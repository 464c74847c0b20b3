//! Sparse matrix storage, products and direct solves.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("sparse matrix construction failed: {0}")]
    Construction(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("numerically singular system (residual {residual:.3e})")]
    Singular { residual: f64 },
}

/// Coordinate-format accumulator; duplicate entries are summed on assembly.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    pub nrows: usize,
    pub ncols: usize,
    entries: Vec<Triplet<usize, usize, f64>>,
}

impl TripletBuilder {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        TripletBuilder { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push(Triplet::new(row, col, value));
        }
    }

    pub fn add_dense(&mut self, rows: &[usize], cols: &[usize], block: &DMatrix<f64>) {
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                self.push(i, j, block[(a, b)]);
            }
        }
    }

    pub fn build(&self) -> Result<SparseMatrix, LinalgError> {
        let inner = SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &self.entries)
            .map_err(|e| LinalgError::Construction(format!("{e:?}")))?;
        Ok(SparseMatrix { inner })
    }
}

/// Compressed sparse column matrix.
#[derive(Clone, Debug)]
pub struct SparseMatrix {
    inner: SparseColMat<usize, f64>,
}

impl SparseMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        TripletBuilder::new(nrows, ncols).build().expect("empty matrix")
    }

    pub fn nrows(&self) -> usize {
        self.inner.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.inner.ncols()
    }

    pub fn nnz(&self) -> usize {
        self.inner.val().len()
    }

    pub fn as_faer(&self) -> &SparseColMat<usize, f64> {
        &self.inner
    }

    /// Iterates over stored entries as `(row, col, value)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.inner.triplet_iter().map(|t| (t.row, t.col, *t.val))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols());
        let mut y = vec![0.0; self.nrows()];
        for (i, j, v) in self.entries() {
            y[i] += v * x[j];
        }
        y
    }

    /// `Aᵀ x`.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows());
        let mut y = vec![0.0; self.ncols()];
        for (i, j, v) in self.entries() {
            y[j] += v * x[i];
        }
        y
    }

    /// `yᵀ A x`.
    pub fn bilinear(&self, y: &[f64], x: &[f64]) -> f64 {
        self.entries().map(|(i, j, v)| y[i] * v * x[j]).sum()
    }

    pub fn transpose(&self) -> SparseMatrix {
        let mut b = TripletBuilder::new(self.ncols(), self.nrows());
        for (i, j, v) in self.entries() {
            b.push(j, i, v);
        }
        b.build().expect("transpose of a valid matrix")
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &SparseMatrix) -> SparseMatrix {
        assert_eq!((self.nrows(), self.ncols()), (other.nrows(), other.ncols()));
        let mut b = TripletBuilder::new(self.nrows(), self.ncols());
        for (i, j, v) in self.entries() {
            b.push(i, j, v);
        }
        for (i, j, v) in other.entries() {
            b.push(i, j, s * v);
        }
        b.build().expect("sum of valid matrices")
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows(), self.ncols());
        for (i, j, v) in self.entries() {
            m[(i, j)] += v;
        }
        m
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.nrows().min(self.ncols())];
        for (i, j, v) in self.entries() {
            if i == j {
                d[i] += v;
            }
        }
        d
    }

    /// Largest entry of `|A - Aᵀ|`.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        self.add_scaled(-1.0, &t).entries().fold(0.0, |m, (_, _, v)| m.max(v.abs()))
    }

    /// MatrixMarket coordinate format, 1-based indices.
    pub fn write_matrix_market<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.nrows(), self.ncols(), self.nnz())?;
        for (i, j, v) in self.entries() {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// MatrixMarket dense array format for a vector.
pub fn write_vector_market<W: Write>(v: &[f64], mut w: W) -> std::io::Result<()> {
    writeln!(w, "%%MatrixMarket matrix array real general")?;
    writeln!(w, "{} 1", v.len())?;
    for x in v {
        writeln!(w, "{x:.17e}")?;
    }
    Ok(())
}

pub fn norm_inf(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// LU factorization with partial pivoting, reused across right-hand sides.
pub struct SparseLu {
    matrix: SparseMatrix,
    lu: Lu<usize, f64>,
}

impl std::fmt::Debug for SparseLu {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SparseLu").field("n", &self.matrix.nrows()).finish()
    }
}

impl SparseLu {
    pub fn new(matrix: &SparseMatrix) -> Result<Self, LinalgError> {
        if matrix.nrows() != matrix.ncols() {
            return Err(LinalgError::NotSquare { rows: matrix.nrows(), cols: matrix.ncols() });
        }
        // the numeric factorization panics on an exactly zero pivot instead of returning an error
        let factor = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| matrix.inner.sp_lu()));
        let lu = match factor {
            Ok(Ok(lu)) => lu,
            _ => return Err(LinalgError::Singular { residual: f64::INFINITY }),
        };
        Ok(SparseLu { matrix: matrix.clone(), lu })
    }

    /// Solves `A x = rhs` and rejects the result if the residual check fails.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
        let n = rhs.len();
        let mut x = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
        self.lu.solve_in_place(x.as_mut());
        let x: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
        let ax = self.matrix.matvec(&x);
        let residual = norm_inf(&ax.iter().zip(rhs).map(|(a, b)| a - b).collect::<Vec<_>>());
        if !residual.is_finite() || residual > 1e-10 * (1.0 + norm_inf(rhs)) {
            return Err(LinalgError::Singular { residual });
        }
        Ok(x)
    }
}

/// One-shot direct solve.
pub fn sparse_direct_solve(matrix: &SparseMatrix, rhs: &[f64]) -> Result<Vec<f64>, LinalgError> {
    SparseLu::new(matrix)?.solve(rhs)
}
