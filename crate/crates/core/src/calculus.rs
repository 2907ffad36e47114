//! Jacobians, the bordered determinant `g(p*)`, and the two index formulas.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::economy::ExcessDemandModel;
use crate::error::{Error, Result};
use crate::geometry::{bordered_determinant, oriented_sign, tangent_basis, PricePoint, TangentFrame};
use crate::linalg::infinity_norm;
use crate::reference_field::parity;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Central differences, column by column, in ambient coordinates (no
/// renormalisation of the perturbed points).
pub fn jacobian_fd(model: &dyn ExcessDemandModel, p: &DVector<f64>, h: f64) -> Result<DMatrix<f64>> {
    let n = model.dimension();
    if p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p.len(),
        });
    }
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut plus = p.clone();
        let mut minus = p.clone();
        plus[j] += h;
        minus[j] -= h;
        let col = (model.eval(&plus)? - model.eval(&minus)?) / (2.0 * h);
        jac.set_column(j, &col);
    }
    Ok(jac)
}

/// Analytic Jacobian when the model provides one, otherwise [`jacobian_fd`].
pub fn model_jacobian(model: &dyn ExcessDemandModel, p: &DVector<f64>) -> Result<DMatrix<f64>> {
    match model.jacobian(p) {
        Some(j) => j,
        None => jacobian_fd(model, p, FD_STEP),
    }
}

/// `1e-8 (1 + |Df|_inf^n)`
pub fn regularity_tolerance(jac: &DMatrix<f64>) -> f64 {
    1e-8 * (1.0 + infinity_norm(jac).powi(jac.nrows() as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GValue {
    pub g: f64,
    pub tolerance: f64,
}

impl GValue {
    /// `|g|` at or below the regularity tolerance.
    pub fn is_singular(&self) -> bool {
        !(self.g.abs() > self.tolerance)
    }

    pub fn index(&self, n: usize) -> Option<i32> {
        if self.is_singular() {
            None
        } else if parity(n) * self.g > 0.0 {
            Some(1)
        } else {
            Some(-1)
        }
    }
}

/// `g(p*) = det [[Df(p*), p*], [p*^T, 0]]`.
pub fn g_value(model: &dyn ExcessDemandModel, p: &PricePoint) -> Result<GValue> {
    let jac = model_jacobian(model, p.coords())?;
    let g = bordered_determinant(&jac, p.coords())?;
    let tolerance = regularity_tolerance(&jac);
    if !(g.abs() > tolerance) {
        log::warn!(
            "{}: near-singular bordered determinant {g:e} at {:?}",
            model.label(),
            p.as_slice()
        );
    }
    Ok(GValue { g, tolerance })
}

fn non_regular(p: &PricePoint, gv: &GValue) -> Error {
    Error::NonRegularEquilibrium {
        price: p.to_vec(),
        g: gv.g,
        tolerance: gv.tolerance,
    }
}

/// `+1` if `(-1)^n g(p*) > 0`, `-1` if negative.
pub fn index_of(model: &dyn ExcessDemandModel, p: &PricePoint) -> Result<i32> {
    let gv = g_value(model, p)?;
    gv.index(p.dim()).ok_or_else(|| non_regular(p, &gv))
}

/// Index from the images of a positively oriented tangent frame under the
/// radially corrected Jacobian `A' = Df(p*) (I - p p^T)`:
/// `sign g = -sign det(p, A'x_1, ..., A'x_{n-1})`.
pub fn index_via_images(model: &dyn ExcessDemandModel, p: &PricePoint) -> Result<i32> {
    index_via_images_with_frame(model, p, &tangent_basis(p))
}

pub fn index_via_images_with_frame(
    model: &dyn ExcessDemandModel,
    p: &PricePoint,
    frame: &TangentFrame,
) -> Result<i32> {
    let jac = model_jacobian(model, p.coords())?;
    let gv = GValue {
        g: bordered_determinant(&jac, p.coords())?,
        tolerance: regularity_tolerance(&jac),
    };
    if gv.is_singular() {
        return Err(non_regular(p, &gv));
    }
    match image_index(&jac, p.coords(), &frame.vectors) {
        0 => Err(non_regular(p, &gv)),
        s => Ok(s),
    }
}

/// The image-based index for an explicit matrix, point and frame.
/// Returns 0 when the images are degenerate.
pub fn image_index(jac: &DMatrix<f64>, p: &DVector<f64>, frame: &[DVector<f64>]) -> i32 {
    let n = p.len();
    let corrected = radial_correction(jac, p);
    let images: Vec<DVector<f64>> = frame
        .iter()
        .map(|x| {
            let y = &corrected * x;
            let norm = y.norm();
            if norm > 0.0 {
                y / norm
            } else {
                y
            }
        })
        .collect();
    let s = oriented_sign(p, &images);
    // sign g = -s, index = (-1)^n sign g
    -s * parity(n) as i32
}

/// `A (I - p p^T)`
pub fn radial_correction(a: &DMatrix<f64>, p: &DVector<f64>) -> DMatrix<f64> {
    a - (a * p) * p.transpose()
}

/// An equilibrium together with its bordered determinant and index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquilibriumRecord {
    pub price: PricePoint,
    pub residual: f64,
    pub g_value: f64,
    pub index: i32,
}

/// Builds the record for a located zero, failing on a singular `g`.
pub fn equilibrium_record(model: &dyn ExcessDemandModel, p: &PricePoint) -> Result<EquilibriumRecord> {
    let residual = model.eval(p.coords())?.norm();
    let gv = g_value(model, p)?;
    let index = gv.index(p.dim()).ok_or_else(|| non_regular(p, &gv))?;
    Ok(EquilibriumRecord {
        price: p.clone(),
        residual,
        g_value: gv.g,
        index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economy::FnModel;
    use crate::geometry::project_to_sphere;
    use crate::reference_field::{jac_fq, ReferenceField};

    fn tangential_linear(v: DVector<f64>) -> FnModel {
        FnModel::new("tangential-linear", v.len(), move |p| {
            &v - p * (v.dot(p) / p.norm_squared())
        })
    }

    /// d/dp [v - (v.p) p / |p|^2] = -(p v^T + (v.p) I) / |p|^2 + 2 (v.p) p p^T / |p|^4
    fn tangential_linear_jac(v: &DVector<f64>, p: &DVector<f64>) -> DMatrix<f64> {
        let n = p.len();
        let r2 = p.norm_squared();
        let vp = v.dot(p);
        -(p * v.transpose() + DMatrix::identity(n, n) * vp) / r2 + p * p.transpose() * (2.0 * vp / (r2 * r2))
    }

    #[test]
    fn fd_matches_reference_jacobian_at_q() {
        let q = project_to_sphere(&[0.2, 0.5, 0.7, 0.4]).unwrap();
        let model = ReferenceField::new(q.clone());
        let fd = jacobian_fd(&model, q.coords(), 1e-5).unwrap();
        assert!((fd - jac_fq(&q, q.coords())).amax() <= 1e-6);
    }

    #[test]
    fn fd_matches_hand_differentiated_tangential_field() {
        let v = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let model = tangential_linear(v.clone());
        for p in [[0.2, 0.4, 0.9], [1.0, 1.0, 1.0], [0.7, 0.1, 0.3]] {
            let p = DVector::from_row_slice(&p);
            let fd = jacobian_fd(&model, &p, 1e-5).unwrap();
            assert!((fd - tangential_linear_jac(&v, &p)).amax() <= 1e-6);
        }
    }

    #[test]
    fn radial_direction_is_annihilated() {
        let v = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let model = tangential_linear(v);
        let p = project_to_sphere(&[0.3, 0.3, 0.9]).unwrap();
        let fd = jacobian_fd(&model, p.coords(), 1e-5).unwrap();
        assert!((fd * p.coords()).norm() <= 1e-5);
    }

    #[test]
    fn reference_field_index_is_plus_one() {
        for coords in [vec![1.0, 1.0], vec![1.0, 2.0, 2.0], vec![0.1, 0.2, 0.3, 0.4, 0.5]] {
            let q = project_to_sphere(&coords).unwrap();
            let model = ReferenceField::new(q.clone());
            let gv = g_value(&model, &q).unwrap();
            assert!(parity(q.dim()) * gv.g > 0.0);
            assert_eq!(index_of(&model, &q).unwrap(), 1);
            assert_eq!(index_via_images(&model, &q).unwrap(), 1);
        }
    }

    #[test]
    fn permuted_frame_gives_same_index() {
        let q = project_to_sphere(&[1.0, 2.0, 3.0]).unwrap();
        let model = ReferenceField::new(q.clone());
        let mut frame = tangent_basis(&q);
        frame.vectors.swap(0, 1);
        frame.vectors[0].neg_mut();
        assert_eq!(oriented_sign(q.coords(), &frame.vectors), 1);
        assert_eq!(index_via_images_with_frame(&model, &q, &frame).unwrap(), 1);
    }

    #[test]
    fn singular_point_is_rejected() {
        // f = 0 identically: g = det [[0, p], [p^T, 0]] = 0 for n = 2
        let zero = FnModel::new("zero", 2, |p| DVector::zeros(p.len()));
        let p = project_to_sphere(&[1.0, 1.0]).unwrap();
        assert!(matches!(index_of(&zero, &p), Err(Error::NonRegularEquilibrium { .. })));
        assert!(matches!(
            index_via_images(&zero, &p),
            Err(Error::NonRegularEquilibrium { .. })
        ));
    }
}
