use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use super::{dot, norm, sigmoid, Layout};
use crate::data::Dataset;
use crate::error::{Error, Result};

pub const CG_TOLERANCE: f64 = 1e-8;

/// `H = (1/N) sum_i s_i (1 - s_i) x_i x_i^T + lambda I` at a fixed weight
/// vector, held either as a dense Cholesky factor or as an implicit operator
/// solved by Jacobi-preconditioned conjugate gradients.
pub struct HessianFactor<'a> {
    dim: usize,
    lambda: f64,
    repr: Repr<'a>,
}

enum Repr<'a> {
    Dense {
        matrix: DMatrix<f64>,
        cholesky: Cholesky<f64, Dyn>,
    },
    Implicit {
        data: &'a Dataset,
        layout: Layout,
        /// `s_i (1 - s_i) / N` for each training row.
        curvature: Vec<f64>,
        diagonal: Vec<f64>,
    },
}

impl<'a> HessianFactor<'a> {
    pub(crate) fn at(
        ds: &'a Dataset,
        w: &[f64],
        layout: Layout,
        lambda: f64,
        dense_limit: usize,
    ) -> Result<Self> {
        let dim = layout.dim();
        let n = ds.n_samples() as f64;
        let curvature: Vec<f64> = (0..ds.n_samples())
            .map(|i| {
                let s = sigmoid(layout.margin(ds.row(i), w));
                s * (1.0 - s) / n
            })
            .collect();

        if dim <= dense_limit {
            let mut h = vec![0.0; dim * dim];
            let mut x = vec![0.0; dim];
            for (i, &c) in curvature.iter().enumerate() {
                if c == 0.0 {
                    continue;
                }
                x.iter_mut().for_each(|v| *v = 0.0);
                layout.axpy(ds.row(i), 1.0, &mut x);
                let nz: Vec<usize> = (0..dim).filter(|&j| x[j] != 0.0).collect();
                for &a in &nz {
                    let ca = c * x[a];
                    for &b in &nz {
                        h[a * dim + b] += ca * x[b];
                    }
                }
            }
            for j in 0..dim {
                h[j * dim + j] += lambda;
            }
            let matrix = DMatrix::from_row_slice(dim, dim, &h);
            let cholesky = Cholesky::new(matrix.clone()).ok_or(Error::NotPositiveDefinite)?;
            Ok(HessianFactor {
                dim,
                lambda,
                repr: Repr::Dense { matrix, cholesky },
            })
        } else {
            let mut diagonal = vec![lambda; dim];
            for (i, &c) in curvature.iter().enumerate() {
                for (j, v) in ds.row(i).entries() {
                    diagonal[j] += c * v * v;
                }
                if layout.intercept {
                    diagonal[layout.features] += c;
                }
            }
            Ok(HessianFactor {
                dim,
                lambda,
                repr: Repr::Implicit {
                    data: ds,
                    layout,
                    curvature,
                    diagonal,
                },
            })
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.repr, Repr::Dense { .. })
    }

    fn check(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: v.len(),
            });
        }
        Ok(())
    }

    /// `H v`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v)?;
        Ok(match &self.repr {
            Repr::Dense { matrix, .. } => {
                (matrix * DVector::from_column_slice(v)).as_slice().to_vec()
            }
            Repr::Implicit {
                data,
                layout,
                curvature,
                ..
            } => {
                let mut out: Vec<f64> = v.iter().map(|x| self.lambda * x).collect();
                for (i, &c) in curvature.iter().enumerate() {
                    let row = data.row(i);
                    let proj = layout.margin(row, v);
                    layout.axpy(row, c * proj, &mut out);
                }
                out
            }
        })
    }

    /// Solves `H x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.check(b)?;
        match &self.repr {
            Repr::Dense { cholesky, .. } => Ok(cholesky
                .solve(&DVector::from_column_slice(b))
                .as_slice()
                .to_vec()),
            Repr::Implicit { diagonal, .. } => self.conjugate_gradient(b, diagonal),
        }
    }

    fn conjugate_gradient(&self, b: &[f64], diagonal: &[f64]) -> Result<Vec<f64>> {
        let b_norm = norm(b);
        let mut x = vec![0.0; self.dim];
        if b_norm == 0.0 {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<f64> = r.iter().zip(diagonal).map(|(r, d)| r / d).collect();
        let mut p = z.clone();
        let mut rz = dot(&r, &z);
        let max_iter = 10 * self.dim;
        for _ in 0..max_iter {
            let hp = self.apply(&p)?;
            let alpha = rz / dot(&p, &hp);
            for j in 0..self.dim {
                x[j] += alpha * p[j];
                r[j] -= alpha * hp[j];
            }
            if norm(&r) <= CG_TOLERANCE * b_norm {
                return Ok(x);
            }
            z = r.iter().zip(diagonal).map(|(r, d)| r / d).collect();
            let rz_next = dot(&r, &z);
            let beta = rz_next / rz;
            rz = rz_next;
            for j in 0..self.dim {
                p[j] = z[j] + beta * p[j];
            }
        }
        Err(Error::SolverFailure {
            iterations: max_iter,
            residual: norm(&r) / b_norm,
        })
    }

    /// Dense copy of `H`. Builds it column by column for the implicit form.
    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            Repr::Dense { matrix, .. } => matrix.clone(),
            Repr::Implicit { .. } => {
                let mut m = DMatrix::zeros(self.dim, self.dim);
                let mut e = vec![0.0; self.dim];
                for j in 0..self.dim {
                    e[j] = 1.0;
                    let col = self.apply(&e).expect("dimension checked");
                    m.set_column(j, &DVector::from_vec(col));
                    e[j] = 0.0;
                }
                m
            }
        }
    }

    /// `H^{-1/2}` from the symmetric eigendecomposition, with eigenvalues
    /// below `lambda / 2` raised to `lambda / 2`.
    pub fn inverse_sqrt(&self) -> Result<DMatrix<f64>> {
        let Repr::Dense { matrix, .. } = &self.repr else {
            return Err(Error::HessianSqrtUnavailable { dim: self.dim });
        };
        let eig = SymmetricEigen::new(matrix.clone());
        let floor = 0.5 * self.lambda;
        let scaled = eig.eigenvalues.map(|v| 1.0 / v.max(floor).sqrt());
        let q = &eig.eigenvectors;
        Ok(q * DMatrix::from_diagonal(&scaled) * q.transpose())
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.to_dense()).eigenvalues.min()
    }
}
