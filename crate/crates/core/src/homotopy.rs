//! The homotopy `H(t, p) = (1 - t) f(p) + t f^q(p)` on `[0, 1] x S_epsilon`,
//! boundary certification, and a pseudo-arclength tracer for the components
//! of its zero set.

use std::cmp::Ordering;
use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::calculus::model_jacobian;
use crate::economy::SharedModel;
use crate::error::{Error, Result};
use crate::geometry::{frame_matrix, normalize, oriented_complement, oriented_sign, PricePoint};
use crate::linalg::{cofactor_null_vector, column_matrix, lu_determinant, singular_values};
use crate::reference_field::{eval_fq, jac_fq, parity, ReferenceField};
use crate::solver::lexicographic;

/// Number of `t` values in the certification grid.
pub const CERT_T_POINTS: usize = 64;
/// Upper bound on grid points per face of the truncated sphere.
pub const CERT_MAX_FACE_POINTS: usize = 4096;
/// Endpoints closer than this (spherical distance) are the same zero.
pub const ENDPOINT_MATCH_TOL: f64 = 1e-6;
/// Random frames tried when the standard frame gives a degenerate sign.
const FRAME_RETRIES: usize = 5;

/// A homotopy whose values are tangent to the sphere (`p . H(t, p) = 0`)
/// and homogeneous of degree zero in `p`.
pub trait TangentialHomotopy {
    fn dimension(&self) -> usize;
    /// Nodes of a traced path must keep every coordinate above this floor.
    fn epsilon(&self) -> f64;
    fn value(&self, t: f64, p: &DVector<f64>) -> Result<DVector<f64>>;
    fn dt(&self, t: f64, p: &DVector<f64>) -> Result<DVector<f64>>;
    fn dp(&self, t: f64, p: &DVector<f64>) -> Result<DMatrix<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpsilonCertificate {
    pub epsilon: f64,
    pub min_norm: f64,
    pub threshold: f64,
    pub noise: f64,
    pub witness_t: f64,
    pub witness_p: Vec<f64>,
    pub samples: usize,
    pub pass: bool,
}

pub struct HomotopyProblem {
    pub model: SharedModel,
    pub field: ReferenceField,
    pub epsilon: f64,
    pub epsilon_prime: f64,
    pub certificate: Option<EpsilonCertificate>,
}

impl std::fmt::Debug for HomotopyProblem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HomotopyProblem")
            .field("model", &self.model.label())
            .field("q", &self.field.q().as_slice())
            .field("epsilon", &self.epsilon)
            .field("epsilon_prime", &self.epsilon_prime)
            .field("certificate", &self.certificate)
            .finish()
    }
}

impl HomotopyProblem {
    pub fn new(model: SharedModel, q: PricePoint, epsilon: f64, epsilon_prime: f64) -> Result<Self> {
        let n = model.dimension();
        if q.dim() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: q.dim(),
            });
        }
        if !(epsilon > 0.0) || !(epsilon * (n as f64).sqrt() < 1.0) {
            return Err(Error::Config(format!(
                "epsilon must lie in (0, 1/sqrt(n)), got {epsilon}"
            )));
        }
        if !(epsilon < epsilon_prime) {
            return Err(Error::Config(format!(
                "epsilon ({epsilon}) must be below epsilon' ({epsilon_prime})"
            )));
        }
        if !(epsilon < q.min_coord()) {
            return Err(Error::Config(format!(
                "epsilon ({epsilon}) must be below min q_i ({})",
                q.min_coord()
            )));
        }
        Ok(Self {
            model,
            field: ReferenceField::new(q),
            epsilon,
            epsilon_prime,
            certificate: None,
        })
    }

    pub fn q(&self) -> &PricePoint {
        self.field.q()
    }

    pub fn dimension(&self) -> usize {
        self.model.dimension()
    }

    /// Certifies `H != 0` on `[0, 1] x boundary(S_epsilon)` and stores the result.
    pub fn certify(&mut self, grid_density: usize, known: &[PricePoint]) -> Result<&EpsilonCertificate> {
        let cert = certify_epsilon(self, grid_density, known)?;
        Ok(self.certificate.insert(cert))
    }
}

impl TangentialHomotopy for HomotopyProblem {
    fn dimension(&self) -> usize {
        self.model.dimension()
    }

    fn epsilon(&self) -> f64 {
        self.epsilon
    }

    fn value(&self, t: f64, p: &DVector<f64>) -> Result<DVector<f64>> {
        let f = self.model.eval(p)?;
        let fq = eval_fq(self.field.q(), p);
        Ok(f * (1.0 - t) + fq * t)
    }

    fn dt(&self, _t: f64, p: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(eval_fq(self.field.q(), p) - self.model.eval(p)?)
    }

    fn dp(&self, t: f64, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        let df = model_jacobian(self.model.as_ref(), p)?;
        Ok(df * (1.0 - t) + jac_fq(self.field.q(), p) * t)
    }
}

/// `H(t, p)` for a problem.
pub fn homotopy_eval(problem: &HomotopyProblem, t: f64, p: &PricePoint) -> Result<DVector<f64>> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("t = {t} outside [0, 1]")));
    }
    problem.value(t, p.coords())
}

/// Points of the boundary face `p_face = epsilon` of `S_epsilon`, on a grid of
/// hyperspherical angles with `m` values per angle.
fn face_points(n: usize, face: usize, epsilon: f64, m: usize) -> Vec<DVector<f64>> {
    let radius = (1.0 - epsilon * epsilon).sqrt();
    let d = n - 1;
    let mut out = Vec::new();
    let place = |u: &[f64]| -> Option<DVector<f64>> {
        let mut p = DVector::zeros(n);
        let mut k = 0;
        for i in 0..n {
            if i == face {
                p[i] = epsilon;
            } else {
                p[i] = radius * u[k];
                k += 1;
            }
        }
        // the other coordinates must stay in S_epsilon
        (p.iter().all(|&x| x >= epsilon * (1.0 - 1e-12))).then_some(p)
    };
    if d == 1 {
        out.extend(place(&[1.0]));
        return out;
    }
    let angles = d - 1;
    let step = FRAC_PI_2 / (m - 1) as f64;
    let mut idx = vec![0usize; angles];
    loop {
        let mut u = vec![0.0; d];
        let mut sin_prod = 1.0;
        for (j, &k) in idx.iter().enumerate() {
            let a = k as f64 * step;
            u[j] = sin_prod * a.cos();
            sin_prod *= a.sin();
        }
        u[d - 1] = sin_prod;
        out.extend(place(&u));
        let mut j = 0;
        while j < angles {
            idx[j] += 1;
            if idx[j] < m {
                break;
            }
            idx[j] = 0;
            j += 1;
        }
        if j == angles {
            break;
        }
    }
    out
}

fn points_per_angle(n: usize, epsilon: f64, grid_density: usize) -> usize {
    let angles = n.saturating_sub(2).max(1) as f64;
    let wanted = (FRAC_PI_2 / (epsilon / 4.0)).ceil() as usize + 1;
    let cap = (CERT_MAX_FACE_POINTS as f64).powf(1.0 / angles).floor() as usize;
    wanted.min(cap.max(grid_density)).max(grid_density).max(2)
}

/// Checks `|H(t, p)|` on a grid of `[0, 1] x boundary(S_epsilon)` against three
/// times the estimated evaluation noise, and that `q` and every known
/// equilibrium lie strictly inside `S_epsilon`.
pub fn certify_epsilon(
    problem: &HomotopyProblem,
    grid_density: usize,
    known: &[PricePoint],
) -> Result<EpsilonCertificate> {
    let n = problem.dimension();
    let eps = problem.epsilon;
    if !(eps < problem.q().min_coord()) {
        return Err(Error::Config(format!(
            "epsilon ({eps}) must be below min q_i ({})",
            problem.q().min_coord()
        )));
    }
    for p in known {
        if !(p.min_coord() > eps) {
            return Err(Error::ContainmentViolated {
                price: p.to_vec(),
                epsilon: eps,
            });
        }
    }
    let m = points_per_angle(n, eps, grid_density);
    let mut min_norm = f64::INFINITY;
    let mut noise: f64 = 0.0;
    let mut witness = (0.0, Vec::new());
    let mut samples = 0;
    for face in 0..n {
        for p in face_points(n, face, eps, m) {
            let f = problem.model.eval(&p)?;
            let f2 = problem.model.eval(&(&p * 2.0))?;
            let fq = eval_fq(problem.q(), &p);
            let fq2 = eval_fq(problem.q(), &(&p * 2.0));
            for k in 0..CERT_T_POINTS {
                let t = k as f64 / (CERT_T_POINTS - 1) as f64;
                let h = &f * (1.0 - t) + &fq * t;
                let h2 = &f2 * (1.0 - t) + &fq2 * t;
                noise = noise.max((&h - h2).norm()).max(p.dot(&h).abs());
                let norm = h.norm();
                if norm < min_norm {
                    min_norm = norm;
                    witness = (t, p.iter().copied().collect());
                }
                samples += 1;
            }
        }
    }
    let threshold = (3.0 * noise).max(1e-14);
    if !(min_norm > threshold) {
        return Err(Error::CertificationFailed {
            t: witness.0,
            p: witness.1,
            norm: min_norm,
            threshold,
        });
    }
    Ok(EpsilonCertificate {
        epsilon: eps,
        min_norm,
        threshold,
        noise,
        witness_t: witness.0,
        witness_p: witness.1,
        samples,
        pass: true,
    })
}

/// The `n x (n+1)` curve Jacobian `[[B^T H_t, B^T H_p], [0, p^T]]` for a frame
/// `B` of the tangent space at `p`.
fn curve_matrix<S: TangentialHomotopy + ?Sized>(
    sys: &S,
    t: f64,
    p: &DVector<f64>,
    frame: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = p.len();
    let ht = sys.dt(t, p)?;
    let hp = sys.dp(t, p)?;
    let bt = frame.transpose();
    let mut j = DMatrix::zeros(n, n + 1);
    j.view_mut((0, 0), (n - 1, 1)).copy_from(&(&bt * ht));
    j.view_mut((0, 1), (n - 1, n)).copy_from(&(&bt * hp));
    for i in 0..n {
        j[(n - 1, i + 1)] = p[i];
    }
    Ok(j)
}

fn frame_at(p: &DVector<f64>) -> DMatrix<f64> {
    let u = normalize(p);
    frame_matrix(&oriented_complement(&u), p.len())
}

/// Curve Jacobian at `(t, p)` with the positively oriented frame at `p`;
/// `RankDeficient` when its smallest singular value is below `rank_tol`
/// relative to the largest.
pub fn curve_jacobian<S: TangentialHomotopy + ?Sized>(
    sys: &S,
    t: f64,
    p: &DVector<f64>,
    rank_tol: f64,
) -> Result<DMatrix<f64>> {
    let j = curve_matrix(sys, t, p, &frame_at(p))?;
    let sv = singular_values(&j);
    let (largest, smallest) = (sv[0], sv[sv.len() - 1]);
    if !(smallest > rank_tol * largest.max(1.0)) {
        return Err(Error::RankDeficient { t, sigma_min: smallest });
    }
    Ok(j)
}

/// Unit tangent `tau` of the zero curve with `det([J; tau^T]) > 0`.
pub fn oriented_tangent<S: TangentialHomotopy + ?Sized>(
    sys: &S,
    t: f64,
    p: &DVector<f64>,
    rank_tol: f64,
) -> Result<DVector<f64>> {
    let j = curve_jacobian(sys, t, p, rank_tol)?;
    let c = cofactor_null_vector(&j);
    let norm = c.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::RankDeficient { t, sigma_min: 0.0 });
    }
    Ok(c / norm)
}

/// Boundary orientation sign of a zero at `t` in `{0, 1}`: with `v'` a
/// positively oriented frame of `T_p` and `s = sign det(p, H_p v'_1, ...)`,
/// the sign is `s` at `t = 1` and `-s` at `t = 0`.
pub fn boundary_sign_of<S: TangentialHomotopy + ?Sized>(sys: &S, t: f64, p: &DVector<f64>) -> Result<i32> {
    let at_one = (t - 1.0).abs() < 1e-9;
    let at_zero = t.abs() < 1e-9;
    if !(at_one || at_zero) {
        return Err(Error::Config(format!("boundary sign requested at interior t = {t}")));
    }
    let u = normalize(p);
    let hp = sys.dp(t, p)?;
    let sign_for = |frame: Vec<DVector<f64>>| {
        let images: Vec<DVector<f64>> = frame
            .into_iter()
            .map(|v| {
                let y = &hp * v;
                let norm = y.norm();
                if norm > 0.0 {
                    y / norm
                } else {
                    y
                }
            })
            .collect();
        oriented_sign(&u, &images)
    };
    let mut s = sign_for(oriented_complement(&u));
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for _ in 0..FRAME_RETRIES {
        if s != 0 {
            break;
        }
        s = sign_for(random_oriented_complement(&u, &mut rng));
    }
    if s == 0 {
        return Err(Error::NonRegularEquilibrium {
            price: u.iter().copied().collect(),
            g: 0.0,
            tolerance: 0.0,
        });
    }
    Ok(if at_one { s } else { -s })
}

/// A random orthonormal basis of `u`'s complement with `det(u, v_1, ...) > 0`.
fn random_oriented_complement<R: Rng>(u: &DVector<f64>, rng: &mut R) -> Vec<DVector<f64>> {
    let n = u.len();
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(n - 1);
    while basis.len() < n - 1 {
        let mut v = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        v -= u * u.dot(&v);
        for b in &basis {
            v -= b * b.dot(&v);
        }
        let norm = v.norm();
        if norm > 1e-8 {
            basis.push(v / norm);
        }
    }
    if lu_determinant(&column_matrix(u, &basis)) < 0.0 {
        basis[0].neg_mut();
    }
    basis
}

pub fn boundary_sign(problem: &HomotopyProblem, t: f64, p: &PricePoint) -> Result<i32> {
    boundary_sign_of(problem, t, p.coords())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepControl {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    /// Corrector iterations allowed per step.
    pub max_newton: usize,
    /// Consecutive easy steps before the step length doubles.
    pub grow_after: usize,
    pub corrector_tol: f64,
    pub rank_tol: f64,
    pub endpoint_tol: f64,
    /// Smallest cosine between consecutive tangents.
    pub min_turn_cos: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            initial: 1e-2,
            min: 1e-6,
            max: 5e-2,
            max_newton: 8,
            grow_after: 4,
            corrector_tol: 1e-10,
            rank_tol: 1e-9,
            endpoint_tol: 1e-10,
            min_turn_cos: 0.9,
        }
    }
}

impl StepControl {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.min && self.min <= self.initial && self.initial <= self.max) {
            return Err(Error::Config("step lengths must satisfy 0 < min <= initial <= max".into()));
        }
        if self.max_newton == 0 || self.grow_after == 0 {
            return Err(Error::Config("max_newton and grow_after must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathNode {
    pub t: f64,
    pub p: PricePoint,
    /// Unit tangent in `(t, p)` coordinates, pointing along the traversal.
    pub tangent: Vec<f64>,
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ComponentKind {
    Loop,
    Arc,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndpointRecord {
    pub t: f64,
    pub p: PricePoint,
    pub boundary_sign: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathComponent {
    pub nodes: Vec<PathNode>,
    pub kind: ComponentKind,
    pub endpoints: Vec<EndpointRecord>,
    /// Sign of `tau . d` between the oriented tangent and the traversal
    /// direction; constant along a component, 0 if it ever flipped.
    pub traversal_orientation: i32,
}

struct Marched {
    nodes: Vec<PathNode>,
    /// `sign(tau . d)` at each node.
    orient: Vec<i32>,
    closed: bool,
}

fn to_point(x: &DVector<f64>) -> (f64, DVector<f64>) {
    (x[0], x.rows(1, x.len() - 1).into_owned())
}

fn join(t: f64, p: &DVector<f64>) -> DVector<f64> {
    let mut x = DVector::zeros(p.len() + 1);
    x[0] = t;
    x.rows_mut(1, p.len()).copy_from(p);
    x
}

/// Newton on `[B0^T H; (p.p - 1)/2; d.(x - x_pred)] = 0` with the frame
/// `B0` fixed at the predicted point. Returns the corrected point and the
/// number of iterations.
fn correct<S: TangentialHomotopy + ?Sized>(
    sys: &S,
    pred: &DVector<f64>,
    d: &DVector<f64>,
    ctl: &StepControl,
    fixed_t: bool,
) -> Option<(DVector<f64>, usize)> {
    let n = pred.len() - 1;
    let (_, p_pred) = to_point(pred);
    if p_pred.iter().any(|&x| !(x > 0.0)) {
        return None;
    }
    let b0 = frame_at(&p_pred);
    let mut x = pred.clone();
    let mut last_step = f64::INFINITY;
    for iter in 0..=ctl.max_newton {
        let (t, p) = to_point(&x);
        if p.iter().any(|&v| !(v > 0.0)) {
            return None;
        }
        let h = sys.value(t, &p).ok()?;
        let sphere = 0.5 * (p.norm_squared() - 1.0);
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n - 1).copy_from(&(b0.transpose() * &h));
        rhs[n - 1] = sphere;
        rhs[n] = if fixed_t { 0.0 } else { d.dot(&(&x - pred)) };
        if h.norm() <= ctl.corrector_tol && sphere.abs() <= 1e-14 && rhs[n].abs() <= 1e-14 {
            return Some((x, iter));
        }
        if iter == ctl.max_newton {
            return None;
        }
        let mut j = DMatrix::zeros(n + 1, n + 1);
        j.view_mut((0, 0), (n, n + 1)).copy_from(&curve_matrix(sys, t, &p, &b0).ok()?);
        if fixed_t {
            j[(n, 0)] = 1.0;
        } else {
            j.view_mut((n, 0), (1, n + 1)).copy_from(&d.transpose());
        }
        let delta = j.lu().solve(&(-rhs))?;
        let step = delta.norm();
        if !step.is_finite() || (iter > 0 && step > last_step && step > 1e-13) {
            return None;
        }
        last_step = step;
        x += delta;
    }
    None
}

fn make_node<S: TangentialHomotopy + ?Sized>(
    sys: &S,
    x: &DVector<f64>,
    prev_dir: &DVector<f64>,
    ctl: &StepControl,
) -> Result<(PathNode, DVector<f64>, i32)> {
    let (t, p) = to_point(x);
    let p = normalize(&p);
    let tau = oriented_tangent(sys, t, &p, ctl.rank_tol)?;
    let sigma = if tau.dot(prev_dir) >= 0.0 { 1 } else { -1 };
    let dir = &tau * sigma as f64;
    let residual = sys.value(t, &p)?.norm();
    let node = PathNode {
        t,
        p: PricePoint::new(p)?,
        tangent: dir.iter().copied().collect(),
        residual,
    };
    Ok((node, dir, sigma))
}

fn check_domain<S: TangentialHomotopy + ?Sized>(sys: &S, node: &PathNode) -> Result<()> {
    let min = node.p.min_coord();
    if !(min > sys.epsilon()) {
        return Err(Error::PathLeftDomain {
            t: node.t,
            min_coord: min,
            epsilon: sys.epsilon(),
        });
    }
    Ok(())
}

/// Lands exactly on the slice `t = bound` between `x0` (inside) and a step
/// of length `h` along `d` (outside), then polishes on the slice.
fn land_on_boundary<S: TangentialHomotopy + ?Sized>(
    sys: &S,
    x0: &DVector<f64>,
    d: &DVector<f64>,
    h: f64,
    bound: f64,
    ctl: &StepControl,
) -> Result<DVector<f64>> {
    let inside = |t: f64| if bound >= 1.0 { t < bound } else { t > bound };
    let (mut lo, mut hi) = (0.0, h);
    let mut best: Option<DVector<f64>> = None;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        let pred = x0 + d * mid;
        match correct(sys, &pred, d, ctl, false) {
            Some((x, _)) => {
                let gap = (x[0] - bound).abs();
                let done = gap < ctl.endpoint_tol;
                if inside(x[0]) {
                    lo = mid;
                } else {
                    hi = mid;
                }
                best = Some(x);
                if done {
                    break;
                }
            }
            None => hi = mid,
        }
        if hi - lo < 1e-15 {
            break;
        }
    }
    let mut x = best.ok_or(Error::CorrectorDiverged { t: x0[0], step: h })?;
    x[0] = bound;
    let polish = StepControl {
        max_newton: ctl.max_newton.max(20),
        ..ctl.clone()
    };
    let (x, _) = correct(sys, &x, d, &polish, true).ok_or(Error::CorrectorDiverged { t: bound, step: h })?;
    let mut x = x;
    x[0] = bound;
    Ok(x)
}

/// Predictor-corrector march from `start` along `dir` until the path hits
/// `t = 0` or `t = 1`, or (when `detect_loop`) returns to `start`.
fn march<S: TangentialHomotopy + ?Sized>(
    sys: &S,
    start: &PathNode,
    dir: DVector<f64>,
    start_sigma: i32,
    ctl: &StepControl,
    max_steps: usize,
    detect_loop: bool,
) -> Result<Marched> {
    let start_x = join(start.t, start.p.coords());
    let start_dir = dir.clone();
    let mut nodes = vec![start.clone()];
    nodes[0].tangent = dir.iter().copied().collect();
    let mut orient = vec![start_sigma];
    let mut x = start_x.clone();
    let mut d = dir;
    let mut h = ctl.initial;
    let mut easy = 0;
    let mut steps = 0;
    loop {
        if steps >= max_steps {
            return Err(Error::StepLimitExceeded { max_steps });
        }
        steps += 1;
        let pred = &x + &d * h;
        let attempt = correct(sys, &pred, &d, ctl, false).and_then(|(xc, iters)| {
            let moved = (&xc - &x).norm();
            (moved <= 2.0 * h).then_some((xc, iters))
        });
        let Some((xc, iters)) = attempt else {
            h *= 0.5;
            easy = 0;
            if h < ctl.min {
                return Err(Error::CorrectorDiverged { t: x[0], step: h });
            }
            continue;
        };
        if xc[0] > 1.0 || xc[0] < 0.0 {
            let bound = if xc[0] > 1.0 { 1.0 } else { 0.0 };
            let xb = land_on_boundary(sys, &x, &d, h, bound, ctl)?;
            let (node, _, sigma) = make_node(sys, &xb, &d, ctl)?;
            check_domain(sys, &node)?;
            nodes.push(node);
            orient.push(sigma);
            return Ok(Marched {
                nodes,
                orient,
                closed: false,
            });
        }
        let (node, nd, sigma) = make_node(sys, &xc, &d, ctl)?;
        if nd.dot(&d) < ctl.min_turn_cos {
            h *= 0.5;
            easy = 0;
            if h < ctl.min {
                return Err(Error::CorrectorDiverged { t: x[0], step: h });
            }
            continue;
        }
        check_domain(sys, &node)?;
        x = join(node.t, node.p.coords());
        d = nd;
        nodes.push(node);
        orient.push(sigma);
        if iters <= 3 {
            easy += 1;
            if easy >= ctl.grow_after {
                h = (2.0 * h).min(ctl.max);
                easy = 0;
            }
        } else {
            easy = 0;
        }
        if detect_loop && steps >= 10 && (&x - &start_x).norm() < 10.0 * h && d.dot(&start_dir) > 0.9 {
            return Ok(Marched {
                nodes,
                orient,
                closed: true,
            });
        }
    }
}

fn on_boundary(t: f64) -> bool {
    t == 0.0 || t == 1.0
}

/// Traces the component of the zero set through `start`. A start on the
/// slice `t = 0` or `t = 1` is traced into the interior; an interior start is
/// traced forward (along `start.tangent` when given) until it closes up or
/// hits the boundary, and then backward.
pub fn trace_from<S: TangentialHomotopy + ?Sized>(
    sys: &S,
    start: &PathNode,
    max_steps: usize,
    ctl: &StepControl,
) -> Result<PathComponent> {
    ctl.validate()?;
    let (t, p) = (start.t, &start.p);
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!("t = {t} outside [0, 1]")));
    }
    let tau = oriented_tangent(sys, t, p.coords(), ctl.rank_tol)?;
    let residual = sys.value(t, p.coords())?.norm();
    let seed = |dir: &DVector<f64>| PathNode {
        t,
        p: p.clone(),
        tangent: dir.iter().copied().collect(),
        residual,
    };
    check_domain(sys, &seed(&tau))?;
    if on_boundary(t) {
        // into the interior
        if tau[0].abs() < 1e-12 {
            return Err(Error::RankDeficient { t, sigma_min: tau[0].abs() });
        }
        let inward = if t == 0.0 { 1.0 } else { -1.0 };
        let sigma = if tau[0] * inward > 0.0 { 1 } else { -1 };
        let dir = &tau * sigma as f64;
        let m = march(sys, &seed(&dir), dir, sigma, ctl, max_steps, false)?;
        return finish_arc(sys, m.nodes, m.orient);
    }
    let hint = DVector::from_column_slice(&start.tangent);
    let sigma = if hint.len() == tau.len() && hint.dot(&tau) < 0.0 { -1 } else { 1 };
    let dir = &tau * sigma as f64;
    let fwd = march(sys, &seed(&dir), dir.clone(), sigma, ctl, max_steps, true)?;
    if fwd.closed {
        let orientation = constant_sign(&fwd.orient);
        let mut nodes = fwd.nodes;
        let first = nodes[0].clone();
        nodes.push(first);
        return Ok(PathComponent {
            nodes,
            kind: ComponentKind::Loop,
            endpoints: Vec::new(),
            traversal_orientation: orientation,
        });
    }
    let back_dir = -dir;
    let bwd = march(sys, &seed(&back_dir), back_dir, -sigma, ctl, max_steps, false)?;
    let mut nodes: Vec<PathNode> = bwd
        .nodes
        .into_iter()
        .rev()
        .map(|mut n| {
            n.tangent.iter_mut().for_each(|v| *v = -*v);
            n
        })
        .collect();
    let mut orient: Vec<i32> = bwd.orient.into_iter().rev().map(|s| -s).collect();
    nodes.pop();
    orient.pop();
    nodes.extend(fwd.nodes);
    orient.extend(fwd.orient);
    finish_arc(sys, nodes, orient)
}

/// A start node on the slice `t` at a zero `p`, tangent left to the tracer.
pub fn start_node<S: TangentialHomotopy + ?Sized>(sys: &S, t: f64, p: &PricePoint) -> Result<PathNode> {
    Ok(PathNode {
        t,
        p: p.clone(),
        tangent: Vec::new(),
        residual: sys.value(t, p.coords())?.norm(),
    })
}

fn constant_sign(orient: &[i32]) -> i32 {
    match orient.first() {
        Some(&s) if orient.iter().all(|&o| o == s) => s,
        _ => 0,
    }
}

fn finish_arc<S: TangentialHomotopy + ?Sized>(
    sys: &S,
    nodes: Vec<PathNode>,
    orient: Vec<i32>,
) -> Result<PathComponent> {
    let mut endpoints = Vec::new();
    for node in [nodes.first(), nodes.last()].into_iter().flatten() {
        endpoints.push(EndpointRecord {
            t: node.t,
            p: node.p.clone(),
            boundary_sign: boundary_sign_of(sys, node.t, node.p.coords())?,
        });
    }
    Ok(PathComponent {
        nodes,
        kind: ComponentKind::Arc,
        endpoints,
        traversal_orientation: constant_sign(&orient),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceOutcome {
    pub components: Vec<PathComponent>,
    pub sign_sum: i32,
    pub t1_endpoints: usize,
    /// `(-1)^n` times the sum of boundary signs over the `t = 0` endpoints.
    pub recovered_index_sum: i32,
}

fn same_zero(a: &PricePoint, b: &PricePoint) -> bool {
    a.spherical_distance(b) < ENDPOINT_MATCH_TOL
}

/// Traces the arc from `(1, q)` and the arc from every equilibrium not yet
/// reached, checking that every endpoint is `(1, q)` or a known equilibrium
/// and that each equilibrium ends exactly one arc.
pub fn trace_all(
    problem: &HomotopyProblem,
    equilibria: &[PricePoint],
    ctl: &StepControl,
    max_steps: usize,
) -> Result<TraceOutcome> {
    let n = problem.dimension();
    let mut hits = vec![0usize; equilibria.len()];
    let mut components = Vec::new();
    let mut t1_endpoints = 0;
    let record = |comp: &PathComponent, hits: &mut Vec<usize>, t1: &mut usize| -> Result<()> {
        for e in &comp.endpoints {
            if e.t == 1.0 {
                if !same_zero(&e.p, problem.q()) {
                    return Err(Error::UnmatchedEndpoint { t: e.t, p: e.p.to_vec() });
                }
                *t1 += 1;
            } else {
                let k = equilibria
                    .iter()
                    .position(|z| same_zero(z, &e.p))
                    .ok_or_else(|| Error::UnmatchedEndpoint { t: e.t, p: e.p.to_vec() })?;
                hits[k] += 1;
            }
        }
        Ok(())
    };
    let first = trace_from(problem, &start_node(problem, 1.0, problem.q())?, max_steps, ctl)?;
    record(&first, &mut hits, &mut t1_endpoints)?;
    components.push(first);
    for (k, z) in equilibria.iter().enumerate() {
        if hits[k] > 0 {
            continue;
        }
        let comp = trace_from(problem, &start_node(problem, 0.0, z)?, max_steps, ctl)?;
        record(&comp, &mut hits, &mut t1_endpoints)?;
        components.push(comp);
    }
    for (k, z) in equilibria.iter().enumerate() {
        match hits[k] {
            0 => return Err(Error::CoverageGap { price: z.to_vec() }),
            1 => {}
            _ => return Err(Error::DuplicateEndpoint { price: z.to_vec() }),
        }
    }
    if t1_endpoints != 1 {
        return Err(Error::UnmatchedEndpoint {
            t: 1.0,
            p: problem.q().to_vec(),
        });
    }
    components.sort_by(|a, b| component_key_cmp(a, b));
    let sign_sum = components
        .iter()
        .flat_map(|c| c.endpoints.iter())
        .map(|e| e.boundary_sign)
        .sum();
    let t0_sum: i32 = components
        .iter()
        .flat_map(|c| c.endpoints.iter())
        .filter(|e| e.t == 0.0)
        .map(|e| e.boundary_sign)
        .sum();
    Ok(TraceOutcome {
        components,
        sign_sum,
        t1_endpoints,
        recovered_index_sum: parity(n) as i32 * t0_sum,
    })
}

fn endpoint_cmp(a: &EndpointRecord, b: &EndpointRecord) -> Ordering {
    a.t.total_cmp(&b.t).then_with(|| lexicographic(a.p.as_slice(), b.p.as_slice()))
}

fn component_key_cmp(a: &PathComponent, b: &PathComponent) -> Ordering {
    let key = |c: &PathComponent| c.endpoints.iter().min_by(|x, y| endpoint_cmp(x, y)).cloned();
    match (key(a), key(b)) {
        (Some(x), Some(y)) => endpoint_cmp(&x, &y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    }
}

/// `component_id,node_index,t,p_1..p_n,residual`
pub fn write_trace_csv<W: Write>(out: &mut W, components: &[PathComponent]) -> std::io::Result<()> {
    let n = components
        .iter()
        .flat_map(|c| c.nodes.first())
        .map(|node| node.p.dim())
        .next()
        .unwrap_or(0);
    let mut header = vec!["component_id".to_string(), "node_index".into(), "t".into()];
    header.extend((1..=n).map(|i| format!("p_{i}")));
    header.push("residual".into());
    writeln!(out, "{}", header.join(","))?;
    for (id, comp) in components.iter().enumerate() {
        for (k, node) in comp.nodes.iter().enumerate() {
            let mut row = vec![id.to_string(), k.to_string(), node.t.to_string()];
            row.extend(node.p.as_slice().iter().map(|v| v.to_string()));
            row.push(node.residual.to_string());
            writeln!(out, "{}", row.join(","))?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComponentSummary {
    pub id: usize,
    pub kind: ComponentKind,
    pub node_count: usize,
    pub endpoints: Vec<EndpointRecord>,
    pub traversal_orientation: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub components: Vec<ComponentSummary>,
    pub arcs: usize,
    pub loops: usize,
    pub sign_sum: i32,
    pub recovered_index_sum: i32,
}

impl TraceSummary {
    pub fn new(outcome: &TraceOutcome) -> Self {
        let components: Vec<ComponentSummary> = outcome
            .components
            .iter()
            .enumerate()
            .map(|(id, c)| ComponentSummary {
                id,
                kind: c.kind,
                node_count: c.nodes.len(),
                endpoints: c.endpoints.clone(),
                traversal_orientation: c.traversal_orientation,
            })
            .collect();
        let loops = components.iter().filter(|c| c.kind == ComponentKind::Loop).count();
        Self {
            arcs: components.len() - loops,
            loops,
            components,
            sign_sum: outcome.sign_sum,
            recovered_index_sum: outcome.recovered_index_sum,
        }
    }
}
