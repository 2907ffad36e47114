//! The positive unit sphere, its tangent spaces, oriented frames and
//! bordered determinants.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{column_matrix, lu_determinant, sign_of};

/// Tolerance on `| ||p|| - 1 |` for a valid price point.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// `|det| < DEGENERACY_TOL` is reported as orientation 0.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// A strictly positive price vector of unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePoint {
    coords: DVector<f64>,
}

impl PricePoint {
    /// Validates an already-normalised vector.
    pub fn new(coords: DVector<f64>) -> Result<Self> {
        check_positive(coords.as_slice())?;
        let norm = coords.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::NotUnitNorm { norm });
        }
        Ok(Self { coords })
    }

    pub fn from_slice(coords: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(coords))
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &DVector<f64> {
        &self.coords
    }

    pub fn as_slice(&self) -> &[f64] {
        self.coords.as_slice()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.coords.iter().copied().collect()
    }

    pub fn min_coord(&self) -> f64 {
        self.coords.min()
    }

    /// Great-circle distance to `other`.
    pub fn spherical_distance(&self, other: &PricePoint) -> f64 {
        spherical_distance(&self.coords, &other.coords)
    }

    /// The barycentric point `(1, ..., 1) / sqrt(n)`.
    pub fn barycenter(n: usize) -> Self {
        let v = 1.0 / (n as f64).sqrt();
        Self {
            coords: DVector::from_element(n, v),
        }
    }
}

impl Serialize for PricePoint {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_seq(self.coords.iter())
    }
}

pub fn spherical_distance(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    // 2 asin(|a-b|/2) is accurate for nearby points, unlike acos(a.b)
    let chord = (a - b).norm();
    2.0 * (0.5 * chord).min(1.0).asin()
}

fn check_positive(x: &[f64]) -> Result<()> {
    for (index, &value) in x.iter().enumerate() {
        if !(value > 0.0) || !value.is_finite() {
            return Err(Error::NonPositiveInput { index, value });
        }
    }
    Ok(())
}

/// Normalises a strictly positive vector onto the sphere.
pub fn project_to_sphere(x: &[f64]) -> Result<PricePoint> {
    check_positive(x)?;
    let v = DVector::from_column_slice(x);
    let norm = v.norm();
    Ok(PricePoint { coords: v / norm })
}

pub(crate) fn normalize(v: &DVector<f64>) -> DVector<f64> {
    v / v.norm()
}

/// An orthonormal, positively oriented basis of the tangent space at `base`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentFrame {
    pub base: PricePoint,
    pub vectors: Vec<DVector<f64>>,
}

impl TangentFrame {
    /// The frame as an `n x (n-1)` matrix with the basis vectors as columns.
    pub fn matrix(&self) -> DMatrix<f64> {
        frame_matrix(&self.vectors, self.base.dim())
    }
}

pub(crate) fn frame_matrix(vectors: &[DVector<f64>], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, vectors.len());
    for (j, v) in vectors.iter().enumerate() {
        m.set_column(j, v);
    }
    m
}

/// Orthonormal basis of `u`'s orthogonal complement with
/// `det(u, v_1, ..., v_{n-1}) > 0`, for any unit vector `u`.
///
/// Built from the Householder reflection taking `e_n` to `u`; one vector is
/// negated when the reflected basis comes out negatively oriented.
pub fn oriented_complement(u: &DVector<f64>) -> Vec<DVector<f64>> {
    let n = u.len();
    assert!(n >= 1);
    let mut w = -u.clone();
    w[n - 1] += 1.0;
    let ww = w.norm_squared();
    let mut vectors: Vec<DVector<f64>> = (0..n - 1)
        .map(|i| {
            let mut e = DVector::zeros(n);
            e[i] = 1.0;
            if ww > 1e-30 {
                let coef = 2.0 * w[i] / ww;
                e -= &w * coef;
            }
            e
        })
        .collect();
    if n >= 2 && lu_determinant(&column_matrix(u, &vectors)) < 0.0 {
        vectors[0].neg_mut();
    }
    vectors
}

pub fn tangent_basis(p: &PricePoint) -> TangentFrame {
    TangentFrame {
        base: p.clone(),
        vectors: oriented_complement(&p.coords),
    }
}

/// The `(n+1) x (n+1)` matrix `[[A, p], [p^T, 0]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BorderedMatrix {
    pub entries: DMatrix<f64>,
}

impl BorderedMatrix {
    pub fn new(a: &DMatrix<f64>, p: &DVector<f64>) -> Result<Self> {
        let n = p.len();
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: if a.nrows() != n { a.nrows() } else { a.ncols() },
            });
        }
        let mut entries = DMatrix::zeros(n + 1, n + 1);
        entries.view_mut((0, 0), (n, n)).copy_from(a);
        for i in 0..n {
            entries[(i, n)] = p[i];
            entries[(n, i)] = p[i];
        }
        Ok(Self { entries })
    }

    pub fn determinant(&self) -> f64 {
        lu_determinant(&self.entries)
    }
}

fn check_unit(p: &DVector<f64>) -> Result<()> {
    let norm = p.norm();
    if (norm - 1.0).abs() > 1e-8 {
        return Err(Error::NotUnitNorm { norm });
    }
    Ok(())
}

/// `det [[A, p], [p^T, 0]]` for a unit vector `p`.
pub fn bordered_determinant(a: &DMatrix<f64>, p: &DVector<f64>) -> Result<f64> {
    check_unit(p)?;
    Ok(BorderedMatrix::new(a, p)?.determinant())
}

/// Whether `v^T A v < 0` on `{v : v . q = 0}`, with margin `tol` on the
/// eigenvalues of the symmetric part restricted to that subspace.
pub fn negdef_on_complement(a: &DMatrix<f64>, q: &DVector<f64>, tol: f64) -> Result<bool> {
    let n = q.len();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: a.nrows(),
        });
    }
    check_unit(q)?;
    Ok(restricted_symmetric_eigenvalues(a, q)
        .iter()
        .all(|&lambda| lambda < -tol))
}

/// Eigenvalues of `B^T sym(A) B` where `B` spans `q`'s complement.
pub fn restricted_symmetric_eigenvalues(a: &DMatrix<f64>, q: &DVector<f64>) -> Vec<f64> {
    let sym = (a + a.transpose()) * 0.5;
    let b = frame_matrix(&oriented_complement(q), q.len());
    let restricted = b.transpose() * sym * &b;
    if restricted.nrows() == 0 {
        return Vec::new();
    }
    SymmetricEigen::new(restricted).eigenvalues.iter().copied().collect()
}

/// `sign(det(p, v_1, ..., v_{n-1}))`, or 0 when the determinant is below
/// [`DEGENERACY_TOL`].
pub fn oriented_sign(p: &DVector<f64>, vs: &[DVector<f64>]) -> i32 {
    debug_assert_eq!(vs.len() + 1, p.len());
    sign_of(lu_determinant(&column_matrix(p, vs)), DEGENERACY_TOL)
}
