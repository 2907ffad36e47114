//! Equilibrium enumeration: tangential Newton on the sphere from many
//! starts, deduplication, and grid-scan oracles for n = 2, 3.

use std::f64::consts::FRAC_PI_2;

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::calculus::{equilibrium_record, model_jacobian, EquilibriumRecord};
use crate::economy::{sample_sphere, ExcessDemandModel};
use crate::error::{Error, Result};
use crate::geometry::{normalize, spherical_distance, tangent_basis, PricePoint};

/// Newton stops once the residual is below tolerance and the step is this small.
const NEWTON_STEP_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverConfig {
    pub newton_tol: f64,
    pub max_iter: usize,
    /// `None` means `200 n`.
    pub multistart_count: Option<usize>,
    pub dedupe_radius: f64,
    pub seed: u64,
    /// Worker threads for the multistart; 0 uses the global pool.
    pub jobs: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-11,
            max_iter: 100,
            multistart_count: None,
            dedupe_radius: 1e-4,
            seed: 0,
            jobs: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(Error::Config("newton_tol must be positive".into()));
        }
        if !(self.dedupe_radius > 10.0 * self.newton_tol) {
            return Err(Error::Config("dedupe_radius must exceed 10 newton_tol".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }

    pub fn starts_for(&self, n: usize) -> usize {
        self.multistart_count.unwrap_or(200 * n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonOutcome {
    pub price: PricePoint,
    pub residual: f64,
    pub iterations: usize,
}

/// Newton's method on the tangential system `B^T Df B c = -B^T f`, followed by
/// renormalisation. Absent on divergence, a singular reduced system away from
/// a zero, or an iterate leaving the positive orthant.
pub fn newton_on_sphere(
    model: &dyn ExcessDemandModel,
    p0: &PricePoint,
    cfg: &SolverConfig,
) -> Option<NewtonOutcome> {
    let mut p = p0.clone();
    for iter in 0..=cfg.max_iter {
        let f = model.eval(p.coords()).ok()?;
        let residual = f.norm();
        if !residual.is_finite() {
            return None;
        }
        let converged = residual <= cfg.newton_tol;
        let step = match tangential_newton_step(model, &p, &f) {
            Some(step) => step,
            None if converged => {
                return Some(NewtonOutcome { price: p, residual, iterations: iter });
            }
            None => return None,
        };
        if converged && step.norm() <= NEWTON_STEP_TOL {
            return Some(NewtonOutcome { price: p, residual, iterations: iter });
        }
        if iter == cfg.max_iter {
            return converged.then_some(NewtonOutcome { price: p, residual, iterations: iter });
        }
        let next = p.coords() + step;
        if next.iter().any(|&x| !(x > 0.0)) {
            return None;
        }
        p = PricePoint::new(normalize(&next)).ok()?;
    }
    None
}

fn tangential_newton_step(
    model: &dyn ExcessDemandModel,
    p: &PricePoint,
    f: &DVector<f64>,
) -> Option<DVector<f64>> {
    let jac = model_jacobian(model, p.coords()).ok()?;
    let b = tangent_basis(p).matrix();
    let reduced = b.transpose() * jac * &b;
    let rhs = -(b.transpose() * f);
    let c = reduced.lu().solve(&rhs)?;
    if c.iter().all(|x| x.is_finite()) {
        Some(b * c)
    } else {
        None
    }
}

/// Quasi-uniform points of `S_epsilon`: evenly spaced angles for n = 2, a
/// Kronecker (generalised golden ratio) sequence pushed onto the positive
/// orthant of the sphere for n >= 3.
pub fn quasi_uniform_points(n: usize, count: usize, epsilon: f64) -> Vec<PricePoint> {
    if count == 0 {
        return Vec::new();
    }
    if n == 2 {
        let (lo, hi) = angle_range(epsilon);
        return (0..count)
            .map(|k| {
                let theta = lo + (k as f64 + 0.5) / count as f64 * (hi - lo);
                PricePoint::new(DVector::from_vec(vec![theta.cos(), theta.sin()]))
                    .expect("angle inside the open quarter circle")
            })
            .collect();
    }
    let d = n - 1;
    // root of x^(d+1) = x + 1
    let mut phi = 2.0f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (d as f64 + 1.0));
    }
    let alpha: Vec<f64> = (1..=d).map(|i| (1.0 / phi.powi(i as i32)).fract()).collect();
    let mut out = Vec::with_capacity(count);
    let mut k = 0usize;
    while out.len() < count && k < 1000 * count {
        k += 1;
        let mut u: Vec<f64> = alpha.iter().map(|a| (0.5 + a * k as f64).fract()).collect();
        u.sort_by(f64::total_cmp);
        // spacings of sorted uniforms lie on the simplex
        let mut y = Vec::with_capacity(n);
        let mut prev = 0.0;
        for &ui in &u {
            y.push(ui - prev);
            prev = ui;
        }
        y.push(1.0 - prev);
        let v = DVector::from_iterator(n, y.iter().map(|yi| yi.max(0.0).sqrt()));
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        let p = v / norm;
        if p.min() >= epsilon && p.min() > 0.0 {
            out.push(PricePoint::new(p).expect("normalised positive point"));
        }
    }
    out
}

fn angle_range(epsilon: f64) -> (f64, f64) {
    let e = epsilon.clamp(0.0, 0.7);
    (e.asin(), e.acos())
}

/// Multistart Newton over `S_epsilon`, deduplicated by spherical distance and
/// sorted lexicographically. Fails if any located zero is not regular.
pub fn find_equilibria(
    model: &dyn ExcessDemandModel,
    epsilon: f64,
    cfg: &SolverConfig,
) -> Result<Vec<EquilibriumRecord>> {
    cfg.validate()?;
    let n = model.dimension();
    let total = cfg.starts_for(n).max(1);
    let quasi = total.div_ceil(2);
    let mut starts = quasi_uniform_points(n, quasi, epsilon);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    while starts.len() < total {
        let v = sample_sphere(&mut rng, n, epsilon.min(0.5 / (n as f64).sqrt()));
        starts.push(PricePoint::new(v).expect("sampled point is on the sphere"));
    }

    let run = || -> Vec<Option<NewtonOutcome>> {
        starts
            .par_iter()
            .map(|p0| newton_on_sphere(model, p0, cfg))
            .collect()
    };
    let outcomes = if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(run)
    } else {
        run()
    };

    let mut clusters: Vec<NewtonOutcome> = Vec::new();
    for outcome in outcomes.into_iter().flatten() {
        match clusters
            .iter_mut()
            .find(|c| c.price.spherical_distance(&outcome.price) <= cfg.dedupe_radius)
        {
            Some(existing) => {
                if outcome.residual < existing.residual {
                    *existing = outcome;
                }
            }
            None => clusters.push(outcome),
        }
    }

    let mut records = clusters
        .iter()
        .map(|c| equilibrium_record(model, &c.price))
        .collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| lexicographic(a.price.as_slice(), b.price.as_slice()));
    Ok(records)
}

pub(crate) fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            other => return other,
        }
    }
    a.len().cmp(&b.len())
}

/// A zero found on the quarter circle, with the direction in which the
/// tangential component `s(theta)` crosses zero (+1 rising, -1 falling).
#[derive(Debug, Clone, PartialEq)]
pub struct CircleZero {
    pub theta: f64,
    pub price: PricePoint,
    pub crossing: i32,
}

fn circle_point(theta: f64) -> DVector<f64> {
    DVector::from_vec(vec![theta.cos(), theta.sin()])
}

fn tangential_component(model: &dyn ExcessDemandModel, theta: f64) -> Result<f64> {
    let f = model.eval(&circle_point(theta))?;
    Ok(-theta.sin() * f[0] + theta.cos() * f[1])
}

/// Walks `p = (cos t, sin t)` across `S_epsilon` in steps of `resolution`
/// radians, bracketing sign changes of the tangential component of `f` and
/// bisecting each bracket to machine precision.
pub fn scan_circle(
    model: &dyn ExcessDemandModel,
    epsilon: f64,
    resolution: f64,
) -> Result<Vec<CircleZero>> {
    if model.dimension() != 2 {
        return Err(Error::ScanInfeasible { n: model.dimension() });
    }
    let (lo, hi) = angle_range(epsilon);
    let steps = ((hi - lo) / resolution).ceil().max(1.0) as usize;
    let mut zeros = Vec::new();
    let mut prev_theta = lo;
    let mut prev = tangential_component(model, lo)?;
    for k in 1..=steps {
        let theta = if k == steps { hi } else { lo + k as f64 * (hi - lo) / steps as f64 };
        let cur = tangential_component(model, theta)?;
        if prev == 0.0 {
            // counted when the bracket that ends on it was seen
        } else if cur == 0.0 || prev.signum() != cur.signum() {
            let root = if cur == 0.0 {
                theta
            } else {
                bisect(model, prev_theta, theta, prev)?
            };
            zeros.push(CircleZero {
                theta: root,
                price: PricePoint::new(circle_point(root)).expect("angle inside quarter circle"),
                crossing: if prev < 0.0 { 1 } else { -1 },
            });
        }
        prev_theta = theta;
        prev = cur;
    }
    Ok(zeros)
}

fn bisect(model: &dyn ExcessDemandModel, mut a: f64, mut b: f64, fa: f64) -> Result<f64> {
    let sa = fa.signum();
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            break;
        }
        let fm = tangential_component(model, mid)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == sa {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

const MESH_SPACING: f64 = 0.01;
const SCAN_ACCEPT: f64 = 1e-6;

fn sphere3(theta: f64, phi: f64) -> DVector<f64> {
    DVector::from_vec(vec![phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos()])
}

/// Zeros of `f` on `S_epsilon` by direct search, independent of Newton.
///
/// n = 2 uses [`scan_circle`]. n = 3 evaluates `|f|` on a 0.01-radian mesh
/// of spherical angles, zooms into every local minimum until the window is
/// below `resolution`, and keeps the points where `|f| <= 1e-6`.
pub fn grid_scan_oracle(
    model: &dyn ExcessDemandModel,
    epsilon: f64,
    resolution: f64,
) -> Result<Vec<PricePoint>> {
    match model.dimension() {
        2 => Ok(scan_circle(model, epsilon, resolution)?
            .into_iter()
            .map(|z| z.price)
            .collect()),
        3 => scan_sphere3(model, epsilon, resolution),
        n => Err(Error::ScanInfeasible { n }),
    }
}

fn scan_sphere3(model: &dyn ExcessDemandModel, epsilon: f64, resolution: f64) -> Result<Vec<PricePoint>> {
    let m = (FRAC_PI_2 / MESH_SPACING).ceil() as usize;
    let h = FRAC_PI_2 / m as f64;
    let inside = |p: &DVector<f64>| p.min() >= epsilon && p.min() > 0.0;
    let value = |theta: f64, phi: f64| -> Result<Option<f64>> {
        let p = sphere3(theta, phi);
        if !inside(&p) {
            return Ok(None);
        }
        Ok(Some(model.eval(&p)?.norm()))
    };
    // cell centres, so the coordinate planes are never sampled
    let mut grid = vec![vec![None; m]; m];
    for (i, row) in grid.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = value((i as f64 + 0.5) * h, (j as f64 + 0.5) * h)?;
        }
    }
    let mut found: Vec<PricePoint> = Vec::new();
    for i in 0..m {
        for j in 0..m {
            let Some(v) = grid[i][j] else { continue };
            let mut is_min = true;
            for di in -1i64..=1 {
                for dj in -1i64..=1 {
                    if di == 0 && dj == 0 {
                        continue;
                    }
                    let (a, b) = (i as i64 + di, j as i64 + dj);
                    if a < 0 || b < 0 || a >= m as i64 || b >= m as i64 {
                        continue;
                    }
                    if let Some(w) = grid[a as usize][b as usize] {
                        if w < v {
                            is_min = false;
                        }
                    }
                }
            }
            if !is_min {
                continue;
            }
            let (mut theta, mut phi, mut best) = ((i as f64 + 0.5) * h, (j as f64 + 0.5) * h, v);
            let mut width = 2.0 * h;
            while width > 0.1 * resolution {
                let mut improved = (theta, phi, best);
                for a in -2..=2 {
                    for b in -2..=2 {
                        let (t, f) = (theta + a as f64 * width / 2.0, phi + b as f64 * width / 2.0);
                        if let Some(val) = value(t, f)? {
                            if val < improved.2 {
                                improved = (t, f, val);
                            }
                        }
                    }
                }
                (theta, phi, best) = improved;
                width *= 0.5;
            }
            if best <= SCAN_ACCEPT {
                let p = PricePoint::new(normalize(&sphere3(theta, phi))).expect("interior point");
                if !found.iter().any(|z| spherical_distance(z.coords(), p.coords()) < 1e-4) {
                    found.push(p);
                }
            }
        }
    }
    found.sort_by(|a, b| lexicographic(a.as_slice(), b.as_slice()));
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economy::FnModel;
    use crate::geometry::project_to_sphere;
    use crate::reference_field::ReferenceField;

    #[test]
    fn newton_converges_fast_on_reference_field() {
        let q = project_to_sphere(&[0.3, 0.5, 0.8]).unwrap();
        let model = ReferenceField::new(q.clone());
        let p0 = project_to_sphere(&[0.32, 0.47, 0.81]).unwrap();
        let out = newton_on_sphere(&model, &p0, &SolverConfig::default()).unwrap();
        assert!(out.price.spherical_distance(&q) < 1e-10);
        assert!(out.iterations <= 6, "{} iterations", out.iterations);
    }

    #[test]
    fn newton_returns_immediately_at_zero() {
        let q = project_to_sphere(&[1.0, 2.0]).unwrap();
        let model = ReferenceField::new(q.clone());
        let out = newton_on_sphere(&model, &q, &SolverConfig::default()).unwrap();
        assert_eq!(out.iterations, 0);
        assert_eq!(out.price, q);
    }

    #[test]
    fn newton_gives_up_when_leaving_orthant() {
        // arctan-shaped tangential component: Newton overshoots from far away
        let model = FnModel::new("arctan", 2, |p| {
            let theta = p[1].atan2(p[0]);
            let t = DVector::from_vec(vec![-p[1], p[0]]) / p.norm();
            t * (10.0 * (theta - 0.5)).atan()
        });
        let p0 = PricePoint::new(DVector::from_vec(vec![1.2f64.cos(), 1.2f64.sin()])).unwrap();
        assert!(newton_on_sphere(&model, &p0, &SolverConfig::default()).is_none());
        let near = PricePoint::new(DVector::from_vec(vec![0.52f64.cos(), 0.52f64.sin()])).unwrap();
        assert!(newton_on_sphere(&model, &near, &SolverConfig::default()).is_some());
    }

    #[test]
    fn quasi_uniform_points_stay_in_truncated_sphere() {
        for n in 2..=6 {
            let pts = quasi_uniform_points(n, 50, 0.02);
            assert_eq!(pts.len(), 50);
            assert!(pts.iter().all(|p| p.min_coord() >= 0.02));
        }
    }

    #[test]
    fn reference_field_has_single_equilibrium() {
        let q = project_to_sphere(&[1.0, 2.0, 2.0]).unwrap();
        let model = ReferenceField::new(q.clone());
        let eqs = find_equilibria(&model, 0.01, &SolverConfig::default()).unwrap();
        assert_eq!(eqs.len(), 1);
        assert!(eqs[0].price.spherical_distance(&q) < 1e-10);
        assert_eq!(eqs[0].index, 1);
    }

    #[test]
    fn scans_find_the_reference_zero() {
        let q = project_to_sphere(&[0.6, 0.8]).unwrap();
        let zeros = grid_scan_oracle(&ReferenceField::new(q.clone()), 0.01, 1e-5).unwrap();
        assert_eq!(zeros.len(), 1);
        assert!(zeros[0].spherical_distance(&q) < 1e-4);
        let q3 = PricePoint::barycenter(3);
        let zeros = grid_scan_oracle(&ReferenceField::new(q3.clone()), 0.01, 1e-7).unwrap();
        assert_eq!(zeros.len(), 1);
        assert!(zeros[0].spherical_distance(&q3) < 1e-6);
    }

    #[test]
    fn scan_rejects_large_dimension() {
        let model = ReferenceField::new(PricePoint::barycenter(4));
        assert!(matches!(
            grid_scan_oracle(&model, 0.01, 1e-3),
            Err(Error::ScanInfeasible { n: 4 })
        ));
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig { dedupe_radius: 1e-12, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SolverConfig { newton_tol: 0.0, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
    }
}
