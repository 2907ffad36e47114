//! End-to-end check of the index theorem on one model: hypotheses,
//! equilibria, indices, homotopy trace and boundary-sign bookkeeping.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calculus::{index_via_images, EquilibriumRecord};
use crate::economy::{verify_hypotheses, SharedModel, VerificationReport};
use crate::error::{Error, Result};
use crate::geometry::PricePoint;
use crate::homotopy::{
    trace_all, ComponentSummary, EpsilonCertificate, HomotopyProblem, PathComponent, StepControl,
    TraceOutcome, TraceSummary, ENDPOINT_MATCH_TOL,
};
use crate::reference_field::{draw_reference_price, parity};
use crate::solver::{find_equilibria, SolverConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheoremConfig {
    pub seed: u64,
    /// Samples per hypothesis check.
    pub sample_count: usize,
    /// Floor of the region the multistart solver seeds from.
    pub search_epsilon: f64,
    pub newton_tol: f64,
    pub max_iter: usize,
    pub multistart_count: Option<usize>,
    pub dedupe_radius: f64,
    pub jobs: usize,
    /// First truncation level tried.
    pub epsilon: f64,
    /// `q` is drawn from `S_{epsilon_prime}`.
    pub epsilon_prime: f64,
    pub epsilon_floor: f64,
    pub epsilon_shrink: f64,
    pub max_shrinks: usize,
    pub max_q_draws: usize,
    pub grid_density: usize,
    pub max_steps: usize,
    pub step: StepControl,
}

impl Default for TheoremConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            seed: 0,
            sample_count: 1000,
            search_epsilon: 1e-3,
            newton_tol: solver.newton_tol,
            max_iter: solver.max_iter,
            multistart_count: solver.multistart_count,
            dedupe_radius: solver.dedupe_radius,
            jobs: 0,
            epsilon: 1e-2,
            epsilon_prime: 0.05,
            epsilon_floor: 1e-8,
            epsilon_shrink: 4.0,
            max_shrinks: 6,
            max_q_draws: 5,
            grid_density: 16,
            max_steps: 50_000,
            step: StepControl::default(),
        }
    }
}

impl TheoremConfig {
    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            newton_tol: self.newton_tol,
            max_iter: self.max_iter,
            multistart_count: self.multistart_count,
            dedupe_radius: self.dedupe_radius,
            seed: self.seed,
            jobs: self.jobs,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.solver().validate()?;
        self.step.validate()?;
        if !(self.epsilon_floor > 0.0 && self.epsilon_floor <= self.epsilon) {
            return Err(Error::Config("need 0 < epsilon_floor <= epsilon".into()));
        }
        if !(self.epsilon < self.epsilon_prime) {
            return Err(Error::Config("epsilon must be below epsilon_prime".into()));
        }
        if !(self.epsilon_shrink > 1.0) {
            return Err(Error::Config("epsilon_shrink must exceed 1".into()));
        }
        if !(self.search_epsilon > 0.0) {
            return Err(Error::Config("search_epsilon must be positive".into()));
        }
        if self.grid_density < 10 {
            return Err(Error::Config("grid_density must be at least 10".into()));
        }
        if self.sample_count == 0 || self.max_q_draws == 0 || self.max_steps == 0 {
            return Err(Error::Config("sample_count, max_q_draws and max_steps must be positive".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, as lowercase hex.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Verified,
    HypothesisFailed,
    NonRegular,
    TraceFailed,
}

impl Verdict {
    pub fn as_str(&self) -> &'static str {
        match self {
            Verdict::Verified => "verified",
            Verdict::HypothesisFailed => "hypothesis_failed",
            Verdict::NonRegular => "non_regular",
            Verdict::TraceFailed => "trace_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub config: TheoremConfig,
    /// Truncation level at which the boundary certificate passed.
    pub epsilon: Option<f64>,
    pub q: Option<Vec<f64>>,
    pub q_draws: usize,
    pub epsilon_attempts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoremReport {
    pub model: String,
    pub dimension: usize,
    pub verdict: Verdict,
    pub hypothesis: Option<VerificationReport>,
    pub equilibria: Vec<EquilibriumRecord>,
    pub image_indices: Vec<i32>,
    pub components: Vec<ComponentSummary>,
    pub index_sum: i32,
    pub sign_sum: Option<i32>,
    pub recovered_index_sum: Option<i32>,
    pub certificate: Option<EpsilonCertificate>,
    pub provenance: Provenance,
    pub diagnostics: Vec<String>,
    #[serde(skip)]
    pub paths: Vec<PathComponent>,
}

impl TheoremReport {
    fn new(model: &SharedModel, cfg: &TheoremConfig) -> Self {
        Self {
            model: model.label().to_string(),
            dimension: model.dimension(),
            verdict: Verdict::TraceFailed,
            hypothesis: None,
            equilibria: Vec::new(),
            image_indices: Vec::new(),
            components: Vec::new(),
            index_sum: 0,
            sign_sum: None,
            recovered_index_sum: None,
            certificate: None,
            provenance: Provenance {
                config_hash: cfg.hash(),
                seed: cfg.seed,
                config: cfg.clone(),
                epsilon: None,
                q: None,
                q_draws: 0,
                epsilon_attempts: 0,
            },
            diagnostics: Vec::new(),
            paths: Vec::new(),
        }
    }

    fn fail(mut self, verdict: Verdict, message: String) -> Self {
        self.verdict = verdict;
        self.diagnostics.push(message);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn trace_summary(&self) -> TraceSummary {
        TraceSummary {
            arcs: self.components.iter().filter(|c| !c.endpoints.is_empty()).count(),
            loops: self.components.iter().filter(|c| c.endpoints.is_empty()).count(),
            components: self.components.clone(),
            sign_sum: self.sign_sum.unwrap_or(0),
            recovered_index_sum: self.recovered_index_sum.unwrap_or(0),
        }
    }
}

struct Traced {
    problem: HomotopyProblem,
    outcome: TraceOutcome,
    draws: usize,
    attempts: usize,
}

/// Draws `q`, certifies the boundary with a shrinking `epsilon`, and traces.
fn certify_and_trace(
    model: &SharedModel,
    equilibria: &[PricePoint],
    cfg: &TheoremConfig,
    diagnostics: &mut Vec<String>,
) -> Result<Traced> {
    let n = model.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut attempts = 0;
    for draw in 1..=cfg.max_q_draws {
        let q = draw_reference_price(&mut rng, n, cfg.epsilon_prime);
        let mut eps = cfg.epsilon;
        let mut problem = None;
        for _ in 0..=cfg.max_shrinks {
            if eps < cfg.epsilon_floor {
                break;
            }
            attempts += 1;
            let mut candidate = HomotopyProblem::new(model.clone(), q.clone(), eps, cfg.epsilon_prime)?;
            match candidate.certify(cfg.grid_density, equilibria) {
                Ok(_) => {
                    problem = Some(candidate);
                    break;
                }
                Err(e @ (Error::CertificationFailed { .. } | Error::ContainmentViolated { .. })) => {
                    diagnostics.push(format!("epsilon = {eps:e}: {e}"));
                    eps /= cfg.epsilon_shrink;
                }
                Err(e) => return Err(e),
            }
        }
        let Some(problem) = problem else {
            return Err(Error::CertificationFailed {
                t: f64::NAN,
                p: Vec::new(),
                norm: f64::NAN,
                threshold: f64::NAN,
            });
        };
        match trace_all(&problem, equilibria, &cfg.step, cfg.max_steps) {
            Ok(outcome) => {
                return Ok(Traced {
                    problem,
                    outcome,
                    draws: draw,
                    attempts,
                })
            }
            Err(e @ Error::RankDeficient { .. }) => {
                diagnostics.push(format!("q draw {draw}: {e}; redrawing q"));
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::TransversalityFailure {
        attempts: cfg.max_q_draws,
    })
}

/// Runs the whole pipeline; failures become verdicts.
pub fn run_theorem_check(model: SharedModel, cfg: &TheoremConfig) -> TheoremReport {
    let mut report = TheoremReport::new(&model, cfg);
    if let Err(e) = cfg.validate() {
        return report.fail(Verdict::TraceFailed, e.to_string());
    }

    let hypothesis = match verify_hypotheses(model.as_ref(), cfg.sample_count, cfg.seed) {
        Ok(h) => h,
        Err(e) => return report.fail(Verdict::HypothesisFailed, e.to_string()),
    };
    let flags = hypothesis.passed;
    report.hypothesis = Some(hypothesis);
    if !flags.all() {
        let failed: Vec<&str> = [
            ("walras", flags.walras),
            ("homogeneity", flags.homogeneity),
            ("lower_bound", flags.lower_bound),
            ("boundary_blowup", flags.boundary_blowup),
        ]
        .iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| *name)
        .collect();
        return report.fail(
            Verdict::HypothesisFailed,
            format!("failed hypothesis checks: {}", failed.join(", ")),
        );
    }

    let equilibria = match find_equilibria(model.as_ref(), cfg.search_epsilon, &cfg.solver()) {
        Ok(e) => e,
        Err(e @ Error::NonRegularEquilibrium { .. }) => return report.fail(Verdict::NonRegular, e.to_string()),
        Err(e) => return report.fail(Verdict::TraceFailed, e.to_string()),
    };
    report.index_sum = equilibria.iter().map(|r| r.index).sum();
    report.equilibria = equilibria;
    for rec in &report.equilibria {
        match index_via_images(model.as_ref(), &rec.price) {
            Ok(i) => report.image_indices.push(i),
            Err(e) => {
                let msg = e.to_string();
                return report.fail(Verdict::NonRegular, msg);
            }
        }
    }
    if report.image_indices.iter().zip(&report.equilibria).any(|(i, r)| *i != r.index) {
        return report.fail(
            Verdict::NonRegular,
            "bordered-determinant and image-based indices disagree".into(),
        );
    }

    let prices: Vec<PricePoint> = report.equilibria.iter().map(|r| r.price.clone()).collect();
    let mut diagnostics = Vec::new();
    let traced = certify_and_trace(&model, &prices, cfg, &mut diagnostics);
    report.diagnostics.extend(diagnostics);
    let traced = match traced {
        Ok(t) => t,
        Err(e) => return report.fail(Verdict::TraceFailed, e.to_string()),
    };
    report.provenance.epsilon = Some(traced.problem.epsilon);
    report.provenance.q = Some(traced.problem.q().to_vec());
    report.provenance.q_draws = traced.draws;
    report.provenance.epsilon_attempts = traced.attempts;
    report.certificate = traced.problem.certificate.clone();
    report.components = TraceSummary::new(&traced.outcome).components;
    report.sign_sum = Some(traced.outcome.sign_sum);
    report.recovered_index_sum = Some(traced.outcome.recovered_index_sum);
    report.paths = traced.outcome.components;

    let odd = report.equilibria.len() % 2 == 1;
    if report.index_sum != 1 || !odd {
        let msg = format!(
            "index sum {} over {} equilibria",
            report.index_sum,
            report.equilibria.len()
        );
        return report.fail(Verdict::TraceFailed, msg);
    }
    if report.sign_sum != Some(0) || report.recovered_index_sum != Some(1) {
        let msg = format!(
            "boundary signs sum to {:?}, recovered index sum {:?}",
            report.sign_sum, report.recovered_index_sum
        );
        return report.fail(Verdict::TraceFailed, msg);
    }
    if !cross_validate_indices(&report) {
        return report.fail(
            Verdict::TraceFailed,
            "boundary signs disagree with equilibrium indices".into(),
        );
    }
    report.verdict = Verdict::Verified;
    report
}

/// Both index formulas agree at every equilibrium, and every `t = 0` arc
/// endpoint carries the sign `(-1)^n index` of the equilibrium it lands on.
pub fn cross_validate_indices(report: &TheoremReport) -> bool {
    if report.equilibria.is_empty() {
        log::warn!("{}: no equilibria to cross-validate", report.model);
        return true;
    }
    if report.image_indices.len() != report.equilibria.len() {
        return false;
    }
    if report.image_indices.iter().zip(&report.equilibria).any(|(i, r)| *i != r.index) {
        return false;
    }
    let sign = parity(report.dimension) as i32;
    for comp in &report.components {
        for e in comp.endpoints.iter().filter(|e| e.t == 0.0) {
            let Some(rec) = report
                .equilibria
                .iter()
                .find(|r| r.price.spherical_distance(&e.p) < ENDPOINT_MATCH_TOL)
            else {
                return false;
            };
            if e.boundary_sign != sign * rec.index {
                return false;
            }
        }
    }
    true
}

fn fmt_point(p: &[f64]) -> String {
    let parts: Vec<String> = p.iter().map(|x| format!("{x:.10}")).collect();
    format!("({})", parts.join(", "))
}

/// Human-readable rendering of a report.
pub fn render_text(report: &TheoremReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "model: {} (n = {})", report.model, report.dimension);
    let _ = writeln!(s, "verdict: {}", report.verdict.as_str());
    if let Some(h) = &report.hypothesis {
        let _ = writeln!(
            s,
            "hypotheses: walras {} (max |p.f| = {:e}), homogeneity {} (max {:e}), lower bound {} ({:e}), boundary blowup {} [{}]",
            pass(h.passed.walras),
            h.walras_max_residual,
            pass(h.passed.homogeneity),
            h.homogeneity_max_residual,
            pass(h.passed.lower_bound),
            h.lower_bound_estimate,
            pass(h.passed.boundary_blowup),
            h.boundary_note
        );
    }
    let _ = writeln!(s, "equilibria: {}", report.equilibria.len());
    for (k, r) in report.equilibria.iter().enumerate() {
        let _ = writeln!(
            s,
            "  {} p = {} residual = {:e} g = {:e} index = {:+}",
            k + 1,
            fmt_point(r.price.as_slice()),
            r.residual,
            r.g_value,
            r.index
        );
    }
    let _ = writeln!(s, "index sum: {:+}", report.index_sum);
    if let Some(q) = &report.provenance.q {
        let _ = writeln!(
            s,
            "reference price q = {}, epsilon = {:e}",
            fmt_point(q),
            report.provenance.epsilon.unwrap_or(f64::NAN)
        );
    }
    for c in &report.components {
        let ends: Vec<String> = c
            .endpoints
            .iter()
            .map(|e| format!("t={} p={} sign={:+}", e.t, fmt_point(e.p.as_slice()), e.boundary_sign))
            .collect();
        let _ = writeln!(
            s,
            "  component {} {:?} ({} nodes): {}",
            c.id,
            c.kind,
            c.node_count,
            ends.join(" | ")
        );
    }
    if let Some(sum) = report.sign_sum {
        let _ = writeln!(s, "boundary sign sum: {sum}");
    }
    for d in &report.diagnostics {
        let _ = writeln!(s, "note: {d}");
    }
    let _ = writeln!(s, "config hash: {}", report.provenance.config_hash);
    s
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "pass"
    } else {
        "FAIL"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{fixture, BROKEN_WALRAS, CES_3EQ, COBB_DOUGLAS_2};

    fn quick() -> TheoremConfig {
        TheoremConfig {
            sample_count: 200,
            ..TheoremConfig::default()
        }
    }

    #[test]
    fn cobb_douglas_is_verified() {
        let r = run_theorem_check(fixture(COBB_DOUGLAS_2).unwrap(), &quick());
        assert_eq!(r.verdict, Verdict::Verified, "{}", render_text(&r));
        assert_eq!(r.equilibria.len(), 1);
        assert_eq!(r.index_sum, 1);
        assert_eq!(r.sign_sum, Some(0));
        assert!(cross_validate_indices(&r));
    }

    #[test]
    fn three_equilibria_verified() {
        let r = run_theorem_check(fixture(CES_3EQ).unwrap(), &quick());
        assert_eq!(r.verdict, Verdict::Verified, "{}", render_text(&r));
        let idx: Vec<i32> = r.equilibria.iter().map(|e| e.index).collect();
        assert_eq!(idx, vec![1, -1, 1]);
        assert_eq!(r.components.len(), 2);
    }

    #[test]
    fn forged_index_fails_cross_validation() {
        let mut r = run_theorem_check(fixture(CES_3EQ).unwrap(), &quick());
        r.equilibria[1].index = 1;
        assert!(!cross_validate_indices(&r));
    }

    #[test]
    fn broken_walras_fails_hypotheses() {
        let r = run_theorem_check(fixture(BROKEN_WALRAS).unwrap(), &quick());
        assert_eq!(r.verdict, Verdict::HypothesisFailed);
        let h = r.hypothesis.unwrap();
        assert!(h.walras_max_residual > 0.1);
        assert!(!h.walras_witness.is_empty());
    }

    #[test]
    fn empty_report_cross_validates() {
        let r = run_theorem_check(fixture(BROKEN_WALRAS).unwrap(), &quick());
        assert!(r.equilibria.is_empty());
        assert!(cross_validate_indices(&r));
    }

    #[test]
    fn config_hash_tracks_changes() {
        let a = TheoremConfig::default();
        let b = TheoremConfig { seed: 1, ..a.clone() };
        assert_eq!(a.hash(), TheoremConfig::default().hash());
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
