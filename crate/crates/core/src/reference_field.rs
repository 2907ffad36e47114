//! The reference field `f^q(p) = (|p| / p.q) q - p / |p|`, whose only zero
//! on the sphere is `q` and whose index there is +1.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::economy::{check_input, sample_sphere, ExcessDemandModel, Smoothness};
use crate::error::Result;
use crate::geometry::{bordered_determinant, PricePoint};
use crate::solver::grid_scan_oracle;

pub fn eval_fq(q: &PricePoint, p: &DVector<f64>) -> DVector<f64> {
    let r = p.norm();
    let s = p.dot(q.coords());
    q.coords() * (r / s) - p / r
}

/// Analytic Jacobian of `f^q` at an arbitrary positive `p`:
///
/// `q (p / (r s) - r q / s^2)^T - I / r + p p^T / r^3`, `r = |p|`, `s = p.q`.
pub fn jac_fq(q: &PricePoint, p: &DVector<f64>) -> DMatrix<f64> {
    let n = p.len();
    let r = p.norm();
    let s = p.dot(q.coords());
    let qv = q.coords();
    let grad_scale = p / (r * s) - qv * (r / (s * s));
    qv * grad_scale.transpose() - DMatrix::identity(n, n) / r + p * p.transpose() / (r * r * r)
}

/// Whether `(-1)^n det [[Df^q(q), q], [q^T, 0]] > 0`.
pub fn certify_eq1(q: &PricePoint) -> bool {
    let n = q.dim();
    let a = jac_fq(q, q.coords());
    match bordered_determinant(&a, q.coords()) {
        Ok(g) => parity(n) * g > 0.0,
        Err(_) => false,
    }
}

/// `(-1)^n`
pub(crate) fn parity(n: usize) -> f64 {
    if n % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceField {
    q: PricePoint,
    label: String,
}

impl ReferenceField {
    pub fn new(q: PricePoint) -> Self {
        let label = format!("reference-field(n={})", q.dim());
        Self { q, label }
    }

    pub fn q(&self) -> &PricePoint {
        &self.q
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }
}

impl ExcessDemandModel for ReferenceField {
    fn dimension(&self) -> usize {
        self.q.dim()
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn eval(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(p, self.q.dim())?;
        Ok(eval_fq(&self.q, p))
    }

    fn jacobian(&self, p: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        Some(check_input(p, self.q.dim()).map(|_| jac_fq(&self.q, p)))
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::Smooth
    }
}

/// Zeros of `f^q` on `S_epsilon` by grid scan (n in {2, 3}).
pub fn unique_zero_scan(q: &PricePoint, epsilon: f64, resolution: f64) -> Result<Vec<PricePoint>> {
    grid_scan_oracle(&ReferenceField::new(q.clone()), epsilon, resolution)
}

/// Uniform draw of `q` on `S_{epsilon_prime}`.
pub fn draw_reference_price<R: Rng>(rng: &mut R, n: usize, epsilon_prime: f64) -> PricePoint {
    let v = sample_sphere(rng, n, epsilon_prime);
    PricePoint::new(v.clone()).unwrap_or_else(|_| PricePoint::new(&v / v.norm()).expect("positive draw"))
}
