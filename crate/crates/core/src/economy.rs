//! Excess-demand models, the CES exchange economy family, and sampled
//! checks of the standing hypotheses (Walras' law, homogeneity, a lower
//! bound on excess demand, blow-up at the boundary of the price sphere).

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance for Walras' law: `|p.f(p)| <= WALRAS_TOL (1 + |f(p)|)`.
pub const WALRAS_TOL: f64 = 1e-8;
/// Same scaling for `|f(ap) - f(p)|_inf`.
pub const HOMOGENEITY_TOL: f64 = 1e-8;
/// Near-boundary levels used when estimating the lower bound `s`.
pub const LOWER_BOUND_LEVELS: [f64; 6] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6];
/// Levels of the vanishing coordinate along each boundary ray.
pub const RAY_LEVELS: [f64; 8] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8];
/// Limit-direction tolerances for rays approaching a face.
pub const DIRECTION_NONNEG_TOL: f64 = 1e-6;
pub const DIRECTION_DOT_TOL: f64 = 1e-4;
/// A ray counts as approaching the boundary once its last point has a
/// coordinate below this.
pub const BOUNDARY_APPROACH_TOL: f64 = 1e-4;
/// Rho values this close to zero take the Cobb-Douglas branch.
pub const COBB_DOUGLAS_RHO_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    /// Continuously differentiable on the open orthant.
    C1,
    /// Smooth on the open orthant.
    Smooth,
}

/// An aggregate excess-demand map `p -> f(p)` on the strictly positive orthant.
///
/// Implementations accept unnormalised prices; every model in this crate is
/// homogeneous of degree zero, so `eval(a p) = eval(p)`.
pub trait ExcessDemandModel: Send + Sync {
    fn dimension(&self) -> usize;

    fn label(&self) -> &str;

    fn eval(&self, p: &DVector<f64>) -> Result<DVector<f64>>;

    /// Analytic Jacobian, when the model has one.
    fn jacobian(&self, _p: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        None
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::C1
    }
}

pub type SharedModel = Arc<dyn ExcessDemandModel>;

pub(crate) fn check_input(p: &DVector<f64>, n: usize) -> Result<()> {
    if p.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: p.len(),
        });
    }
    for (i, &v) in p.iter().enumerate() {
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::EvaluationFailure(format!(
                "price coordinate {i} is not strictly positive ({v})"
            )));
        }
    }
    Ok(())
}

pub(crate) fn check_output(v: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(v)
    } else {
        Err(Error::EvaluationFailure(format!("{what} produced a non-finite value")))
    }
}

/// One consumer with CES preferences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub weights: Vec<f64>,
    pub rho: f64,
    pub endowment: Vec<f64>,
}

/// A pure exchange economy: a list of CES consumers over `n` goods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExchangeEconomySpec {
    pub agents: Vec<AgentSpec>,
}

impl ExchangeEconomySpec {
    pub fn goods(&self) -> usize {
        self.agents.first().map_or(0, |a| a.weights.len())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.goods();
        if self.agents.is_empty() {
            return Err(Error::InvalidSpec("economy has no agents".into()));
        }
        if n < 2 {
            return Err(Error::InvalidSpec(format!("need at least 2 goods, got {n}")));
        }
        let mut aggregate = vec![0.0; n];
        for (k, agent) in self.agents.iter().enumerate() {
            if agent.weights.len() != n || agent.endowment.len() != n {
                return Err(Error::InvalidSpec(format!(
                    "agent {k}: weights and endowment must both have {n} entries"
                )));
            }
            if !agent.rho.is_finite() || agent.rho >= 1.0 {
                return Err(Error::InvalidSpec(format!(
                    "agent {k}: rho must be finite and < 1 (got {})",
                    agent.rho
                )));
            }
            if agent.weights.iter().any(|&w| !(w > 0.0) || !w.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "agent {k}: weights must be strictly positive"
                )));
            }
            if agent.endowment.iter().any(|&e| !(e >= 0.0) || !e.is_finite()) {
                return Err(Error::InvalidSpec(format!(
                    "agent {k}: endowment must be nonnegative"
                )));
            }
            if agent.endowment.iter().all(|&e| e == 0.0) {
                return Err(Error::InvalidSpec(format!("agent {k}: endowment is all zero")));
            }
            for (a, e) in aggregate.iter_mut().zip(&agent.endowment) {
                *a += e;
            }
        }
        if let Some(j) = aggregate.iter().position(|&a| a <= 0.0) {
            return Err(Error::InvalidSpec(format!(
                "aggregate endowment of good {j} is zero"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct CesAgent {
    /// `a_j^sigma`
    scaled_weights: DVector<f64>,
    sigma: f64,
    endowment: DVector<f64>,
}

impl CesAgent {
    /// Demand `x`, budget shares `c` (so that `x = w c`) at prices `p`.
    fn demand(&self, p: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let wealth = p.dot(&self.endowment);
        let one_minus_sigma = 1.0 - self.sigma;
        let denom: f64 = self
            .scaled_weights
            .iter()
            .zip(p.iter())
            .map(|(a, pk)| a * pk.powf(one_minus_sigma))
            .sum();
        let c = DVector::from_iterator(
            p.len(),
            self.scaled_weights
                .iter()
                .zip(p.iter())
                .map(|(a, pj)| a * pj.powf(-self.sigma) / denom),
        );
        (&c * wealth, c)
    }
}

/// Aggregate excess demand of a CES exchange economy.
///
/// Agent demand is `x_j = w a_j^s p_j^-s / sum_k a_k^s p_k^(1-s)` with
/// `s = 1 / (1 - rho)` and wealth `w = p . e`.
#[derive(Debug, Clone)]
pub struct CesEconomy {
    label: String,
    n: usize,
    agents: Vec<CesAgent>,
    spec: ExchangeEconomySpec,
}

impl CesEconomy {
    pub fn spec(&self) -> &ExchangeEconomySpec {
        &self.spec
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn aggregate_endowment(&self) -> DVector<f64> {
        self.agents
            .iter()
            .fold(DVector::zeros(self.n), |acc, a| acc + &a.endowment)
    }
}

pub fn build_ces_economy(spec: &ExchangeEconomySpec) -> Result<CesEconomy> {
    spec.validate()?;
    let agents = spec
        .agents
        .iter()
        .map(|a| {
            let sigma = if a.rho.abs() < COBB_DOUGLAS_RHO_TOL {
                1.0
            } else {
                1.0 / (1.0 - a.rho)
            };
            CesAgent {
                scaled_weights: DVector::from_iterator(
                    a.weights.len(),
                    a.weights.iter().map(|w| w.powf(sigma)),
                ),
                sigma,
                endowment: DVector::from_column_slice(&a.endowment),
            }
        })
        .collect();
    Ok(CesEconomy {
        label: format!("ces-{}x{}", spec.agents.len(), spec.goods()),
        n: spec.goods(),
        agents,
        spec: spec.clone(),
    })
}

impl ExcessDemandModel for CesEconomy {
    fn dimension(&self) -> usize {
        self.n
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn eval(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(p, self.n)?;
        let mut f = DVector::zeros(self.n);
        for agent in &self.agents {
            let (x, _) = agent.demand(p);
            f += x - &agent.endowment;
        }
        check_output(f, &self.label)
    }

    fn jacobian(&self, p: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        if let Err(e) = check_input(p, self.n) {
            return Some(Err(e));
        }
        let n = self.n;
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for agent in &self.agents {
            let (x, c) = agent.demand(p);
            // dx_j/dp_l = e_l c_j - [j = l] s x_j / p_j - (1 - s) x_j c_l
            for j in 0..n {
                for l in 0..n {
                    let mut d = agent.endowment[l] * c[j] - (1.0 - agent.sigma) * x[j] * c[l];
                    if j == l {
                        d -= agent.sigma * x[j] / p[j];
                    }
                    jac[(j, l)] += d;
                }
            }
        }
        if jac.iter().all(|v| v.is_finite()) {
            Some(Ok(jac))
        } else {
            Some(Err(Error::EvaluationFailure(format!(
                "{}: non-finite jacobian",
                self.label
            ))))
        }
    }

    fn smoothness(&self) -> Smoothness {
        Smoothness::Smooth
    }
}

type EvalFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// A model given by closures; used for synthetic fields and broken fixtures.
#[derive(Clone)]
pub struct FnModel {
    label: String,
    n: usize,
    eval: Arc<EvalFn>,
    jac: Option<Arc<JacFn>>,
}

impl FnModel {
    pub fn new(
        label: impl Into<String>,
        n: usize,
        eval: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            n,
            eval: Arc::new(eval),
            jac: None,
        }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("analytic_jacobian", &self.jac.is_some())
            .finish()
    }
}

impl ExcessDemandModel for FnModel {
    fn dimension(&self) -> usize {
        self.n
    }

    fn label(&self) -> &str {
        &self.label
    }

    fn eval(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
        check_input(p, self.n)?;
        check_output((self.eval)(p), &self.label)
    }

    fn jacobian(&self, p: &DVector<f64>) -> Option<Result<DMatrix<f64>>> {
        let jac = self.jac.as_ref()?;
        Some(check_input(p, self.n).map(|_| jac(p)))
    }
}

/// Uniform draw on the sphere restricted to `min_i p_i >= min_coord`
/// (normalised absolute Gaussian, rejection sampled).
pub fn sample_sphere<R: Rng>(rng: &mut R, n: usize, min_coord: f64) -> DVector<f64> {
    assert!(min_coord * (n as f64).sqrt() < 1.0, "empty truncated sphere");
    loop {
        let v = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal).abs()));
        let norm = v.norm();
        if norm == 0.0 {
            continue;
        }
        let p = v / norm;
        if p.min() >= min_coord {
            return p;
        }
    }
}

/// A point with coordinate `face` pinned to `level` and the rest drawn at
/// random (positive) on the remaining sphere.
fn sample_near_face<R: Rng>(rng: &mut R, n: usize, face: usize, level: f64) -> DVector<f64> {
    let rest = sample_sphere(rng, n - 1, 0.0);
    let scale = (1.0 - level * level).sqrt();
    let mut p = DVector::zeros(n);
    let mut k = 0;
    for i in 0..n {
        if i == face {
            p[i] = level;
        } else {
            p[i] = rest[k].max(1e-300) * scale;
            k += 1;
        }
    }
    p
}

/// The largest value seen by a sampled check, with the price where it occurred.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampledMax {
    pub value: f64,
    pub witness: Vec<f64>,
    pub passed: bool,
}

/// Max of `|p . f(p)|` over `sample_count` random points of `S_0.01`.
pub fn check_walras(
    model: &dyn ExcessDemandModel,
    sample_count: usize,
    seed: u64,
) -> Result<SampledMax> {
    let n = model.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = SampledMax {
        value: 0.0,
        witness: Vec::new(),
        passed: true,
    };
    for _ in 0..sample_count.max(1) {
        let p = sample_sphere(&mut rng, n, 0.01);
        let f = model.eval(&p)?;
        let r = p.dot(&f).abs();
        if r > WALRAS_TOL * (1.0 + f.norm()) {
            worst.passed = false;
        }
        if r > worst.value || worst.witness.is_empty() {
            worst.value = r;
            worst.witness = p.iter().copied().collect();
        }
    }
    Ok(worst)
}

/// Max of `|f(a p) - f(p)|_inf` over random `p` and `a in {0.5, 2, 10}`.
pub fn check_homogeneity(
    model: &dyn ExcessDemandModel,
    sample_count: usize,
    seed: u64,
) -> Result<SampledMax> {
    let n = model.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = SampledMax {
        value: 0.0,
        witness: Vec::new(),
        passed: true,
    };
    for _ in 0..sample_count.max(1) {
        let p = sample_sphere(&mut rng, n, 0.01);
        let f = model.eval(&p)?;
        for a in [0.5, 2.0, 10.0] {
            let fa = model.eval(&(&p * a))?;
            let r = (&fa - &f).amax();
            if r > HOMOGENEITY_TOL * (1.0 + f.amax()) {
                worst.passed = false;
            }
            if r > worst.value || worst.witness.is_empty() {
                worst.value = r;
                worst.witness = p.iter().copied().collect();
            }
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundCheck {
    /// `-min_{p, i} f_i(p)` over all samples.
    pub estimate: f64,
    /// `(level, -min f_i)` for points with one coordinate pinned at `level`.
    pub by_level: Vec<(f64, f64)>,
    pub witness: Vec<f64>,
    pub passed: bool,
}

/// Estimates `s` with `f_i(p) > -s` from interior samples plus points
/// approaching every face down to `p_i = 1e-6`.
///
/// The check fails when the estimate is not finite or still grows
/// noticeably over the last two decades of boundary levels.
pub fn check_lower_bound(
    model: &dyn ExcessDemandModel,
    sample_count: usize,
    seed: u64,
) -> Result<LowerBoundCheck> {
    let n = model.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut estimate = f64::NEG_INFINITY;
    let mut witness = Vec::new();
    let mut record = |p: &DVector<f64>, f: &DVector<f64>, estimate: &mut f64| {
        let s = -f.min();
        if s > *estimate {
            *estimate = s;
            witness = p.iter().copied().collect();
        }
        s
    };
    for _ in 0..sample_count.max(1) {
        let p = sample_sphere(&mut rng, n, 0.01);
        let f = model.eval(&p)?;
        record(&p, &f, &mut estimate);
    }
    let per_face = (sample_count / n).max(4);
    let mut by_level = Vec::with_capacity(LOWER_BOUND_LEVELS.len());
    for &level in &LOWER_BOUND_LEVELS {
        let mut level_max = f64::NEG_INFINITY;
        for face in 0..n {
            for _ in 0..per_face {
                let p = sample_near_face(&mut rng, n, face, level);
                let f = model.eval(&p)?;
                level_max = level_max.max(record(&p, &f, &mut estimate));
            }
        }
        by_level.push((level, level_max));
    }
    let k = by_level.len();
    let coarse = by_level[k - 3].1;
    let fine = by_level[k - 1].1;
    let settled = fine <= coarse + 0.1 * (1.0 + coarse.abs());
    Ok(LowerBoundCheck {
        estimate,
        by_level,
        witness,
        passed: estimate.is_finite() && settled,
    })
}

/// A sequence of prices approaching the boundary of the sphere.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryRay {
    pub face: Option<usize>,
    pub points: Vec<DVector<f64>>,
}

/// Geodesic rays from the barycentre toward each face `p_i = 0`, sampled
/// where `p_i` takes the values in [`RAY_LEVELS`].
pub fn default_boundary_rays(n: usize) -> Vec<BoundaryRay> {
    (0..n)
        .map(|face| {
            let points = RAY_LEVELS
                .iter()
                .map(|&level| {
                    // (1, .., s, .., 1) normalised stays on the great circle
                    // through the barycentre and e_face
                    let s = level * ((n - 1) as f64).sqrt() / (1.0 - level * level).sqrt();
                    let mut x = DVector::from_element(n, 1.0);
                    x[face] = s;
                    let norm = x.norm();
                    x / norm
                })
                .collect();
            BoundaryRay {
                face: Some(face),
                points,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RayReport {
    pub face: Option<usize>,
    /// Smallest coordinate of each ray point.
    pub min_coords: Vec<f64>,
    pub norms: Vec<f64>,
    pub approaches_boundary: bool,
    pub blowup: bool,
    /// `f / |f|` at the last ray point.
    pub direction: Vec<f64>,
    pub direction_min_component: f64,
    pub direction_dot_limit: f64,
    pub direction_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryCheck {
    pub rays: Vec<RayReport>,
    /// True when no ray reaches the boundary, so nothing was tested.
    pub vacuous: bool,
    pub passed: bool,
    pub note: String,
}

/// Sampled check that `|f|` blows up along each ray and that the limiting
/// direction `z` satisfies `z >= 0`, `z . p_lim = 0`.
///
/// Growth is accepted when `|f|` increases monotonically along the last four
/// points with increments that do not decay geometrically (each at least
/// half the previous one); a norm that converges shows shrinking increments.
pub fn check_boundary_blowup(
    model: &dyn ExcessDemandModel,
    rays: &[BoundaryRay],
) -> Result<BoundaryCheck> {
    let n = model.dimension();
    let mut reports = Vec::with_capacity(rays.len());
    for ray in rays {
        let mut norms = Vec::with_capacity(ray.points.len());
        let mut last_f = DVector::zeros(n);
        for p in &ray.points {
            let f = model.eval(p)?;
            norms.push(f.norm());
            last_f = f;
        }
        let min_coords: Vec<f64> = ray.points.iter().map(|p| p.min()).collect();
        let approaches = min_coords.last().is_some_and(|&m| m < BOUNDARY_APPROACH_TOL);
        let blowup = tail_grows(&norms);
        let last_p = ray.points.last().cloned().unwrap_or_else(|| DVector::zeros(n));
        let limit = limit_point(&last_p);
        let norm = last_f.norm();
        let z = if norm > 0.0 { &last_f / norm } else { last_f.clone() };
        let zmin = z.min();
        let dot = z.dot(&limit);
        reports.push(RayReport {
            face: ray.face,
            min_coords,
            norms,
            approaches_boundary: approaches,
            blowup,
            direction: z.iter().copied().collect(),
            direction_min_component: zmin,
            direction_dot_limit: dot,
            direction_ok: norm > 0.0 && zmin >= -DIRECTION_NONNEG_TOL && dot.abs() <= DIRECTION_DOT_TOL,
        });
    }
    let applicable: Vec<&RayReport> = reports.iter().filter(|r| r.approaches_boundary).collect();
    let vacuous = applicable.is_empty();
    let passed = applicable.iter().all(|r| r.blowup && r.direction_ok);
    let note = if vacuous {
        "no ray approaches the boundary; condition checked vacuously (sampled, not exhaustive)"
    } else {
        "sampled, not exhaustive"
    };
    Ok(BoundaryCheck {
        rays: reports,
        vacuous,
        passed,
        note: note.to_string(),
    })
}

fn tail_grows(norms: &[f64]) -> bool {
    if norms.len() < 4 {
        return false;
    }
    let tail = &norms[norms.len() - 4..];
    let increments: Vec<f64> = tail.windows(2).map(|w| w[1] - w[0]).collect();
    increments.iter().all(|&d| d > 0.0)
        && increments.windows(2).all(|w| w[1] >= 0.5 * w[0])
        && norms[norms.len() - 1] > norms[0]
}

/// Zero the coordinates that have (nearly) vanished and renormalise.
fn limit_point(p: &DVector<f64>) -> DVector<f64> {
    let mut l = p.map(|x| if x < BOUNDARY_APPROACH_TOL { 0.0 } else { x });
    let norm = l.norm();
    if norm > 0.0 {
        l /= norm;
    }
    l
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct HypothesisFlags {
    pub walras: bool,
    pub homogeneity: bool,
    pub lower_bound: bool,
    pub boundary_blowup: bool,
}

impl HypothesisFlags {
    pub fn all(&self) -> bool {
        self.walras && self.homogeneity && self.lower_bound && self.boundary_blowup
    }
}

/// Outcome of the sampled hypothesis checks on one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub model: String,
    pub dimension: usize,
    pub walras_max_residual: f64,
    pub walras_witness: Vec<f64>,
    pub homogeneity_max_residual: f64,
    pub homogeneity_witness: Vec<f64>,
    pub lower_bound_estimate: f64,
    pub lower_bound_by_level: Vec<(f64, f64)>,
    pub boundary_blowup_witnesses: Vec<RayReport>,
    pub boundary_note: String,
    pub passed: HypothesisFlags,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.passed.all()
    }
}

pub fn verify_hypotheses(
    model: &dyn ExcessDemandModel,
    sample_count: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let walras = check_walras(model, sample_count, seed)?;
    let homog = check_homogeneity(model, sample_count, seed.wrapping_add(1))?;
    let lower = check_lower_bound(model, sample_count, seed.wrapping_add(2))?;
    let boundary = check_boundary_blowup(model, &default_boundary_rays(model.dimension()))?;
    Ok(VerificationReport {
        model: model.label().to_string(),
        dimension: model.dimension(),
        walras_max_residual: walras.value,
        walras_witness: walras.witness,
        homogeneity_max_residual: homog.value,
        homogeneity_witness: homog.witness,
        lower_bound_estimate: lower.estimate,
        lower_bound_by_level: lower.by_level,
        boundary_blowup_witnesses: boundary.rays,
        boundary_note: boundary.note,
        passed: HypothesisFlags {
            walras: walras.passed,
            homogeneity: homog.passed,
            lower_bound: lower.passed,
            boundary_blowup: boundary.passed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cobb_douglas() -> CesEconomy {
        build_ces_economy(&ExchangeEconomySpec {
            agents: vec![
                AgentSpec {
                    weights: vec![0.5, 0.5],
                    rho: 0.0,
                    endowment: vec![1.0, 0.0],
                },
                AgentSpec {
                    weights: vec![0.5, 0.5],
                    rho: 0.0,
                    endowment: vec![0.0, 1.0],
                },
            ],
        })
        .unwrap()
    }

    #[test]
    fn cobb_douglas_clears_at_symmetric_prices() {
        let m = cobb_douglas();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let f = m.eval(&DVector::from_vec(vec![s, s])).unwrap();
        assert!(f.norm() <= 1e-12, "{f}");
    }

    #[test]
    fn invalid_specs_rejected() {
        let good = AgentSpec {
            weights: vec![1.0, 1.0],
            rho: 0.5,
            endowment: vec![1.0, 1.0],
        };
        let cases = [
            AgentSpec { rho: 1.0, ..good.clone() },
            AgentSpec { rho: 2.0, ..good.clone() },
            AgentSpec { weights: vec![1.0, 0.0], ..good.clone() },
            AgentSpec { weights: vec![1.0, -1.0], ..good.clone() },
            AgentSpec { endowment: vec![0.0, 0.0], ..good.clone() },
            AgentSpec { endowment: vec![1.0, -0.5], ..good.clone() },
            AgentSpec { weights: vec![1.0, 1.0, 1.0], ..good.clone() },
        ];
        for agent in cases {
            let spec = ExchangeEconomySpec { agents: vec![agent.clone()] };
            assert!(
                matches!(build_ces_economy(&spec), Err(Error::InvalidSpec(_))),
                "{agent:?}"
            );
        }
        let no_good_two = ExchangeEconomySpec {
            agents: vec![AgentSpec { endowment: vec![1.0, 0.0], ..good.clone() }],
        };
        assert!(build_ces_economy(&no_good_two).is_err());
        assert!(build_ces_economy(&ExchangeEconomySpec { agents: vec![] }).is_err());
        assert!(build_ces_economy(&ExchangeEconomySpec { agents: vec![good] }).is_ok());
    }

    #[test]
    fn near_zero_rho_is_cobb_douglas() {
        let mut spec = cobb_douglas().spec().clone();
        for a in &mut spec.agents {
            a.rho = 1e-9;
        }
        let near = build_ces_economy(&spec).unwrap();
        let p = DVector::from_vec(vec![0.3, 0.9]);
        let d = near.eval(&p).unwrap() - cobb_douglas().eval(&p).unwrap();
        assert!(d.amax() < 1e-15);
    }

    #[test]
    fn walras_detects_broken_model() {
        let broken = FnModel::new("unit-first", 3, |p| {
            let mut f = DVector::zeros(p.len());
            f[0] = 1.0;
            f
        });
        let r = check_walras(&broken, 50, 7).unwrap();
        assert!(!r.passed);
        // residual is p_1 at the witness
        assert!((r.value - r.witness[0]).abs() < 1e-15 && r.value > 0.0);
        let ok = check_walras(&cobb_douglas(), 100, 7).unwrap();
        assert!(ok.passed && ok.value <= 1e-10);
    }

    #[test]
    fn homogeneity_detects_identity_model() {
        let broken = FnModel::new("identity", 2, |p| p.clone());
        let r = check_homogeneity(&broken, 20, 3).unwrap();
        assert!(!r.passed);
        // |a - 1| max p_i with a = 10 dominates
        let pmax = r.witness.iter().cloned().fold(0.0, f64::max);
        assert!((r.value - 9.0 * pmax).abs() < 1e-12);
        let ok = check_homogeneity(&cobb_douglas(), 100, 3).unwrap();
        assert!(ok.passed && ok.value <= 1e-10);
    }

    #[test]
    fn lower_bound_for_exchange_economy() {
        let m = cobb_douglas();
        let r = check_lower_bound(&m, 200, 11).unwrap();
        assert!(r.passed);
        let max_endowment = m.aggregate_endowment().max();
        assert!(r.estimate <= max_endowment + 1e-12, "{}", r.estimate);
    }

    #[test]
    fn lower_bound_flags_unbounded_model() {
        let broken = FnModel::new("neg-reciprocal", 2, |p| p.map(|x| -1.0 / x));
        let r = check_lower_bound(&broken, 100, 5).unwrap();
        assert!(!r.passed);
        assert!(r.estimate >= 1e6);
    }

    #[test]
    fn blowup_along_rays_toward_first_face() {
        let m = cobb_douglas();
        let rays = default_boundary_rays(2);
        assert!((rays[0].points.last().unwrap()[0] - 1e-8).abs() < 1e-20);
        let r = check_boundary_blowup(&m, &rays).unwrap();
        assert!(r.passed && !r.vacuous);
        let first = &r.rays[0];
        let crossing = first
            .min_coords
            .iter()
            .zip(&first.norms)
            .find(|(_, &nrm)| nrm > 1e6)
            .map(|(&pm, _)| pm)
            .expect("norm never exceeded 1e6");
        assert!(crossing > 1e-8 || (crossing - 1e-8).abs() < 1e-20);
        assert!(first.direction[0] >= -1e-6);
        assert!(first.direction_dot_limit <= 1e-4);
    }

    #[test]
    fn bounded_model_fails_blowup() {
        let v = DVector::from_vec(vec![1.0, 2.0]);
        let bounded = FnModel::new("tangential-constant", 2, move |p| {
            &v - p * (v.dot(p) / p.norm_squared())
        });
        let r = check_boundary_blowup(&bounded, &default_boundary_rays(2)).unwrap();
        assert!(!r.passed);
        assert!(r.rays.iter().all(|ray| !ray.blowup));
    }

    #[test]
    fn interior_rays_are_vacuous() {
        let m = cobb_douglas();
        let ray = BoundaryRay {
            face: None,
            points: vec![
                DVector::from_vec(vec![0.6, 0.8]),
                DVector::from_vec(vec![0.8, 0.6]),
            ],
        };
        let r = check_boundary_blowup(&m, &[ray]).unwrap();
        assert!(r.vacuous && r.passed);
        assert!(r.note.contains("vacuous"));
    }
}
