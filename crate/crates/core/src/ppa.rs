//! Proximal point outer loops for possibly indefinite box-constrained QPs.
//!
//! Each outer step minimizes `q(x) + (γ/2)‖x − c‖²` with `γ` large enough that the subproblem
//! is strictly convex, using the two-stage inner solver. The plain loop takes `c = x^k`; the
//! accelerated loop extrapolates `c` along the last step once the step ratios settle.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::apg::{apg_solve, estimate_lipschitz, power_iteration, ApgParams, BqpProblem};
use crate::error::{check_len, BqpError, Result};
use crate::linalg::{dist2, OrderedWorkingSet, SymMatrix, WorkingFactor};
use crate::pas::{apg_pas_solve, kkt_residual, pas_from_approximation, KktResidual, PasParams};

/// Estimate of the smallest eigenvalue of `Q` by power iteration on `Q − s·I`, with `s` an
/// upper bound on `‖Q‖`. Zero for a zero matrix.
pub fn estimate_min_eigenvalue(q: &SymMatrix, tol: f64) -> f64 {
    let s = estimate_lipschitz(q, tol);
    if s == 0.0 {
        return 0.0;
    }
    s + power_iteration(q, s, tol, 20_000).rayleigh
}

/// Proximal shift `γ = δ + max(0, −λ̂)`.
pub fn proximal_shift(lambda_min_estimate: f64, delta: f64) -> f64 {
    delta + (-lambda_min_estimate).max(0.0)
}

/// The strictly convex subproblem `H = Q + γI`, `f = r − γ·center`, same bounds.
pub fn prox_subproblem(
    q: &SymMatrix,
    r: &[f64],
    l: &[f64],
    u: &[f64],
    center: &[f64],
    gamma: f64,
) -> Result<BqpProblem> {
    check_len(q.dim(), center.len())?;
    check_len(q.dim(), r.len())?;
    let f = r.iter().zip(center).map(|(ri, ci)| ri - gamma * ci).collect();
    BqpProblem::new(q.shifted(gamma), f, l.to_vec(), u.to_vec())
}

/// Extrapolated prox center `(x^k − ω·x^{k−1}) / (1 − ω)`.
pub fn appa_center(x_k: &[f64], x_km1: &[f64], omega: f64) -> Vec<f64> {
    debug_assert!((0.0..1.0).contains(&omega));
    x_k.iter().zip(x_km1).map(|(a, b)| (a - omega * b) / (1.0 - omega)).collect()
}

/// True when each of the last `window` step ratios (chronological `history`) is below 1 and
/// within `eps` of its predecessor.
pub fn should_accelerate(history: &[f64], eps: f64, window: usize) -> bool {
    if window == 0 || history.len() < window + 1 {
        return false;
    }
    history.windows(2).rev().take(window).all(|p| p[1] < 1.0 && (p[1] - p[0]).abs() < eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpaParams {
    /// Margin added to `−λ_min`; `None` uses `1e-3·(1 + ‖Q‖∞)`.
    pub delta: Option<f64>,
    /// Fixed proximal shift, bypassing the eigenvalue estimate.
    pub gamma: Option<f64>,
    /// Stop once `‖x^k − x^{k+1}‖ ≤ tol`.
    pub tol: f64,
    /// Sufficient decrease for skipping the active-set stage; `None` uses `1e-6·(1 + |q(x0)|)`.
    pub f_eps: Option<f64>,
    /// Accept the gradient-stage point on sufficient decrease; otherwise every step is exact.
    pub early_exit: bool,
    pub switch_eps: f64,
    pub switch_window: usize,
    pub max_outer: usize,
    /// Inner gradient settings; `lipschitz` is replaced by the bound for `Q + γI`.
    pub apg: ApgParams,
    pub pas: PasParams,
    /// Keep every outer iterate in the report.
    pub record_iterates: bool,
}

impl Default for PpaParams {
    fn default() -> Self {
        PpaParams {
            delta: None,
            gamma: None,
            tol: 1e-11,
            f_eps: None,
            early_exit: true,
            switch_eps: 0.1,
            switch_window: 1,
            max_outer: 10_000,
            apg: ApgParams::with_lipschitz(1.0),
            pas: PasParams::default(),
            record_iterates: false,
        }
    }
}

impl PpaParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(BqpError::InvalidInput(format!("{name} must be positive, got {v}")))
            }
        };
        if let Some(d) = self.delta {
            positive("delta", d)?;
        }
        if let Some(g) = self.gamma {
            positive("gamma", g)?;
        }
        if let Some(e) = self.f_eps {
            positive("f_eps", e)?;
        }
        positive("tol", self.tol)?;
        positive("switch_eps", self.switch_eps)?;
        if self.switch_window == 0 || self.max_outer == 0 {
            return Err(BqpError::InvalidInput("switch_window and max_outer must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub x_star: Vec<f64>,
    pub outer_iters: usize,
    pub inner_apg_iters: usize,
    pub pas_steps: usize,
    pub appa_accelerated_steps: usize,
    pub objective: f64,
    pub kkt: KktResidual,
    pub chol_update_flops: u64,
    pub wall_time: f64,
    /// Proximal shift used; zero when the problem was solved directly.
    pub gamma: f64,
    /// Outer steps that skipped the active-set stage on sufficient decrease.
    pub early_exits: usize,
    /// `‖x^{k+1} − x^k‖` per outer step.
    pub step_norms: Vec<f64>,
    /// `q(x^k)` for `k = 0, 1, …`.
    pub objective_history: Vec<f64>,
    /// Whether each outer step used an extrapolated center.
    pub accelerated: Vec<bool>,
    /// Outer iterates `x^0, x^1, …` when requested.
    pub iterates: Vec<Vec<f64>>,
}

/// Plain proximal point loop.
pub fn ppa_solve(
    q: &SymMatrix,
    r: &[f64],
    l: &[f64],
    u: &[f64],
    x0: &[f64],
    params: &PpaParams,
) -> Result<SolverReport> {
    run(q, r, l, u, x0, params, false)
}

/// Proximal point loop with extrapolated centers when the step ratios settle below one.
/// Ratio history restarts after every extrapolated step, and an extrapolated step that raises
/// the objective is replaced by the plain step.
pub fn appa_solve(
    q: &SymMatrix,
    r: &[f64],
    l: &[f64],
    u: &[f64],
    x0: &[f64],
    params: &PpaParams,
) -> Result<SolverReport> {
    run(q, r, l, u, x0, params, true)
}

struct InnerStep {
    x: Vec<f64>,
    apg_iters: usize,
    pas_steps: usize,
    flops: u64,
    early_exit: bool,
}

fn run(
    q: &SymMatrix,
    r: &[f64],
    l: &[f64],
    u: &[f64],
    x0: &[f64],
    params: &PpaParams,
    accelerate: bool,
) -> Result<SolverReport> {
    let start = Instant::now();
    params.validate()?;
    check_len(q.dim(), x0.len())?;
    let problem = BqpProblem::new(q.clone(), r.to_vec(), l.to_vec(), u.to_vec())?;
    let n = q.dim();
    let mut x = problem.project(x0);
    let q0 = problem.objective(&x);
    let l_q = estimate_lipschitz(q, 1e-6);

    let mut report = SolverReport {
        x_star: Vec::new(),
        outer_iters: 0,
        inner_apg_iters: 0,
        pas_steps: 0,
        appa_accelerated_steps: 0,
        objective: q0,
        kkt: KktResidual::default(),
        chol_update_flops: 0,
        wall_time: 0.0,
        gamma: 0.0,
        early_exits: 0,
        step_norms: Vec::new(),
        objective_history: vec![q0],
        accelerated: Vec::new(),
        iterates: Vec::new(),
    };
    if params.record_iterates {
        report.iterates.push(x.clone());
    }

    let lambda = match params.gamma {
        Some(_) => None,
        None => Some(estimate_min_eigenvalue(q, 1e-6)),
    };
    if let Some(lambda) = lambda {
        let all = OrderedWorkingSet::natural(&(0..n).collect::<Vec<_>>());
        if lambda > 1e-6 * (1.0 + l_q) && WorkingFactor::factorize(q, &all).is_ok() {
            let apg = ApgParams { lipschitz: l_q.max(f64::MIN_POSITIVE), ..params.apg };
            let out = apg_pas_solve(&problem, &x, &apg, &params.pas)?;
            report.outer_iters = 1;
            report.inner_apg_iters = out.apg.iterations;
            report.pas_steps = out.pas.steps;
            report.chol_update_flops = out.pas.update_flops;
            report.step_norms.push(dist2(&x, &out.z));
            report.accelerated.push(false);
            x = out.z;
            return Ok(finish(report, &problem, x, start));
        }
    }

    let delta = params.delta.unwrap_or(1e-3 * (1.0 + q.inf_norm()));
    let gamma = match (params.gamma, lambda) {
        (Some(g), _) => g,
        (None, Some(lambda)) => positive_definite_shift(q, proximal_shift(lambda, delta), delta),
        (None, None) => unreachable!(),
    };
    report.gamma = gamma;
    let f_eps = params.f_eps.unwrap_or(1e-6 * (1.0 + q0.abs()));
    let apg = ApgParams { lipschitz: l_q + gamma, ..params.apg };

    let inner = |center: &[f64], from: &[f64], q_from: f64| -> Result<InnerStep> {
        let sub = prox_subproblem(q, r, l, u, center, gamma)?;
        let approx = apg_solve(&sub, from, &apg)?;
        if params.early_exit && problem.objective(&approx.y) <= q_from - f_eps {
            return Ok(InnerStep {
                x: approx.y,
                apg_iters: approx.iterations,
                pas_steps: 0,
                flops: 0,
                early_exit: true,
            });
        }
        let out = pas_from_approximation(&sub, &approx.y, &params.pas)?;
        Ok(InnerStep {
            x: out.z,
            apg_iters: approx.iterations,
            pas_steps: out.steps,
            flops: out.update_flops,
            early_exit: false,
        })
    };

    let mut q_x = q0;
    let mut x_prev: Option<Vec<f64>> = None;
    let mut omegas: Vec<f64> = Vec::new();
    for _ in 0..params.max_outer {
        let mut used_center = false;
        let mut step = None;
        if accelerate && should_accelerate(&omegas, params.switch_eps, params.switch_window) {
            let omega = *omegas.last().expect("history is non-empty");
            let prev = x_prev.as_ref().expect("two steps exist once ratios do");
            let center = appa_center(&x, prev, omega);
            let s = inner(&center, &x, q_x)?;
            report.inner_apg_iters += s.apg_iters;
            report.pas_steps += s.pas_steps;
            report.chol_update_flops += s.flops;
            if problem.objective(&s.x) <= q_x {
                used_center = true;
                step = Some(s);
            }
            omegas.clear();
        }
        let s = match step {
            Some(s) => s,
            None => {
                let s = inner(&x, &x, q_x)?;
                report.inner_apg_iters += s.apg_iters;
                report.pas_steps += s.pas_steps;
                report.chol_update_flops += s.flops;
                s
            }
        };
        report.outer_iters += 1;
        report.early_exits += usize::from(s.early_exit);
        report.appa_accelerated_steps += usize::from(used_center);
        report.accelerated.push(used_center);

        let norm = dist2(&x, &s.x);
        if !used_center {
            if let Some(&last) = report.step_norms.last() {
                if last > 0.0 && !report.accelerated[report.accelerated.len() - 2] {
                    omegas.push(norm / last);
                }
            }
        }
        report.step_norms.push(norm);
        q_x = problem.objective(&s.x);
        report.objective_history.push(q_x);
        if params.record_iterates {
            report.iterates.push(s.x.clone());
        }
        x_prev = Some(std::mem::replace(&mut x, s.x));
        if norm <= params.tol {
            return Ok(finish(report, &problem, x, start));
        }
    }
    Err(BqpError::MaxOuterReached { iters: params.max_outer })
}

/// Raises `γ` until `Q + γI` admits a Cholesky factorization.
fn positive_definite_shift(q: &SymMatrix, gamma: f64, delta: f64) -> f64 {
    let all = OrderedWorkingSet::natural(&(0..q.dim()).collect::<Vec<_>>());
    let mut gamma = gamma;
    let mut bump = delta;
    while WorkingFactor::factorize(&q.shifted(gamma), &all).is_err() {
        gamma += bump;
        bump *= 2.0;
    }
    gamma
}

fn finish(mut report: SolverReport, p: &BqpProblem, x: Vec<f64>, start: Instant) -> SolverReport {
    report.objective = p.objective(&x);
    report.kkt = kkt_residual(p, &x);
    report.x_star = x;
    report.wall_time = start.elapsed().as_secs_f64();
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn saddle() -> (SymMatrix, Vec<f64>, Vec<f64>, Vec<f64>) {
        (SymMatrix::from_diagonal(&[1.0, -1.0]), vec![-0.5, 0.5], vec![0.0; 2], vec![1.0; 2])
    }

    #[test]
    fn min_eigenvalue_examples() {
        let lam = estimate_min_eigenvalue(&SymMatrix::identity(3), 1e-10);
        assert_abs_diff_eq!(lam, 1.0, epsilon = 1e-6);
        assert_eq!(proximal_shift(lam, 0.1), 0.1);
        let lam = estimate_min_eigenvalue(&SymMatrix::from_diagonal(&[1.0, -1.0]), 1e-10);
        assert_abs_diff_eq!(lam, -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(proximal_shift(lam, 0.1), 1.1, epsilon = 1e-6);
        assert_eq!(estimate_min_eigenvalue(&SymMatrix::zeros(2), 1e-10), 0.0);
        assert_eq!(proximal_shift(0.0, 0.1), 0.1);
    }

    #[test]
    fn prox_subproblem_saddle_data() {
        let (q, r, l, u) = saddle();
        let p = prox_subproblem(&q, &r, &l, &u, &[0.0, 0.5], 1.001).unwrap();
        assert_abs_diff_eq!(p.h().get(0, 0), 2.001, epsilon = 1e-15);
        assert_abs_diff_eq!(p.h().get(1, 1), 0.001, epsilon = 1e-15);
        assert_abs_diff_eq!(p.f()[0], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.f()[1], 0.5 - 0.5005, epsilon = 1e-15);
    }

    #[test]
    fn prox_subproblem_zero_shift() {
        let q = SymMatrix::from_diagonal(&[2.0, 3.0]);
        let p = prox_subproblem(&q, &[1.0, -1.0], &[0.0; 2], &[1.0; 2], &[0.4, 0.4], 0.0).unwrap();
        assert_eq!(p.h(), &q);
        assert_eq!(p.f(), &[1.0, -1.0]);
    }

    #[test]
    fn appa_center_examples() {
        assert_eq!(appa_center(&[1.0, 2.0], &[0.0, 0.0], 0.0), vec![1.0, 2.0]);
        assert_eq!(appa_center(&[1.0, 2.0], &[1.0, 2.0], 0.7), vec![1.0, 2.0]);
        assert_eq!(appa_center(&[1.0, 0.0], &[0.0, 0.0], 0.5), vec![2.0, 0.0]);
    }

    #[test]
    fn switch_condition_examples() {
        assert!(should_accelerate(&[0.49, 0.50], 0.1, 1));
        assert!(!should_accelerate(&[1.2, 0.5], 0.1, 1));
        assert!(!should_accelerate(&[0.9, 0.5], 0.1, 1));
        assert!(!should_accelerate(&[0.5], 0.1, 1));
        assert!(should_accelerate(&[0.9, 0.5, 0.52, 0.51], 0.1, 2));
        assert!(!should_accelerate(&[0.9, 0.5, 0.52, 0.51], 0.1, 3));
    }

    #[test]
    fn saddle_converges_to_interior_point() {
        let (q, r, l, u) = saddle();
        let params = PpaParams { gamma: Some(1.001), early_exit: false, record_iterates: true, ..PpaParams::default() };
        let rep = ppa_solve(&q, &r, &l, &u, &[0.0, 0.5], &params).unwrap();
        assert!((rep.x_star[0] - 0.5).abs() <= 1e-8);
        assert_eq!(rep.x_star[1], 0.5);
        for k in 1..rep.iterates.len().min(20) {
            let expect = (0.5 + 1.001 * rep.iterates[k - 1][0]) / 2.001;
            assert_abs_diff_eq!(rep.iterates[k][0], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn perturbed_saddle_moves_to_corner() {
        let (q, r, l, u) = saddle();
        let params = PpaParams { gamma: Some(1.001), early_exit: false, record_iterates: true, ..PpaParams::default() };
        let rep = ppa_solve(&q, &r, &l, &u, &[0.0, 0.5 + 1e-4], &params).unwrap();
        assert!((rep.x_star[0] - 0.5).abs() <= 1e-8);
        assert_eq!(rep.x_star[1], 1.0);
        for x in &rep.iterates[2..] {
            assert_eq!(x[1], 1.0);
        }
    }

    #[test]
    fn strictly_convex_is_single_phase() {
        let q = SymMatrix::from_dense(2, vec![2.0, 0.5, 0.5, 1.0]).unwrap();
        let r = vec![-3.0, 1.0];
        let (l, u) = (vec![0.0; 2], vec![1.0; 2]);
        let rep = ppa_solve(&q, &r, &l, &u, &[0.0; 2], &PpaParams::default()).unwrap();
        assert_eq!(rep.outer_iters, 1);
        let p = BqpProblem::new(q.clone(), r.clone(), l.clone(), u.clone()).unwrap();
        let direct = apg_pas_solve(&p, &[0.0; 2], &ApgParams::for_problem(&p), &PasParams::default()).unwrap();
        for (a, b) in rep.x_star.iter().zip(&direct.z) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-11);
        }
        let acc = appa_solve(&q, &r, &l, &u, &[0.0; 2], &PpaParams::default()).unwrap();
        assert_eq!(acc.x_star, rep.x_star);
    }

    #[test]
    fn prox_fixed_point() {
        let (q, r, l, u) = saddle();
        let gamma = 1.5;
        let x = [0.5, 1.0];
        let sub = prox_subproblem(&q, &r, &l, &u, &x, gamma).unwrap();
        let k = kkt_residual(&sub, &x);
        assert!(k.max() < 1e-15);
    }

    #[test]
    fn max_outer_is_reported() {
        let (q, r, l, u) = saddle();
        let params = PpaParams { gamma: Some(1.001), max_outer: 3, ..PpaParams::default() };
        let err = ppa_solve(&q, &r, &l, &u, &[0.0, 0.5], &params).unwrap_err();
        assert_eq!(err, BqpError::MaxOuterReached { iters: 3 });
    }

    #[test]
    fn invalid_params_rejected() {
        let (q, r, l, u) = saddle();
        let params = PpaParams { tol: 0.0, ..PpaParams::default() };
        assert!(ppa_solve(&q, &r, &l, &u, &[0.0; 2], &params).is_err());
        let params = PpaParams { switch_window: 0, ..PpaParams::default() };
        assert!(appa_solve(&q, &r, &l, &u, &[0.0; 2], &params).is_err());
    }
}
