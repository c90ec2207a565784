//! Problem data and the accelerated projected gradient stage.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, BqpError, Result};
use crate::linalg::{dist2, dot, norm2, SymMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ConvexityHint {
    StrictlyConvex,
    #[default]
    Unknown,
}

/// `min ½xᵀHx + fᵀx  s.t.  l ≤ x ≤ u`, with `l` entries allowed to be `−∞` and `u` entries
/// allowed to be `+∞`.
#[derive(Debug, Clone, PartialEq)]
pub struct BqpProblem {
    h: SymMatrix,
    f: Vec<f64>,
    l: Vec<f64>,
    u: Vec<f64>,
    pub convexity: ConvexityHint,
}

impl BqpProblem {
    pub fn new(h: SymMatrix, f: Vec<f64>, l: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        let n = h.dim();
        check_len(n, f.len())?;
        check_len(n, l.len())?;
        check_len(n, u.len())?;
        if let Some(j) = f.iter().position(|v| !v.is_finite()) {
            return Err(BqpError::InvalidInput(format!("linear term {j} is not finite")));
        }
        for j in 0..n {
            let (lj, uj) = (l[j], u[j]);
            if lj.is_nan() || uj.is_nan() || !(lj < uj) || lj == f64::INFINITY || uj == f64::NEG_INFINITY {
                return Err(BqpError::InvalidInput(format!("invalid bounds at {j}: [{lj}, {uj}]")));
            }
        }
        Ok(BqpProblem { h, f, l, u, convexity: ConvexityHint::Unknown })
    }

    pub fn with_convexity(mut self, hint: ConvexityHint) -> Self {
        self.convexity = hint;
        self
    }

    pub fn dim(&self) -> usize {
        self.f.len()
    }

    pub fn h(&self) -> &SymMatrix {
        &self.h
    }

    pub fn f(&self) -> &[f64] {
        &self.f
    }

    pub fn lower(&self) -> &[f64] {
        &self.l
    }

    pub fn upper(&self) -> &[f64] {
        &self.u
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let hx = self.h.mul_vec(x);
        0.5 * dot(x, &hx) + dot(&self.f, x)
    }

    /// `Hx + f`.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.h.mul_vec(x);
        for (gi, fi) in g.iter_mut().zip(&self.f) {
            *gi += fi;
        }
        g
    }

    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        project_box(z, &self.l, &self.u)
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(&self.l).zip(&self.u).all(|((v, l), u)| l <= v && v <= u)
    }
}

/// Componentwise `median(l, z, u)`.
pub fn project_box(z: &[f64], l: &[f64], u: &[f64]) -> Vec<f64> {
    z.iter().zip(l).zip(u).map(|((&v, &lo), &hi)| v.max(lo).min(hi)).collect()
}

/// Upper estimate of the spectral norm of a symmetric matrix: power iteration from the
/// normalized all-ones vector until the estimate moves by less than `tol` relatively, inflated
/// by 1%. A zero matrix gives 0.
pub fn estimate_lipschitz(h: &SymMatrix, tol: f64) -> f64 {
    power_iteration(h, 0.0, tol, 10_000).norm * 1.01
}

pub(crate) struct PowerEstimate {
    /// `vᵀ(H − shift·I)v` at the final unit iterate.
    pub rayleigh: f64,
    /// `‖(H − shift·I)v‖` at the final unit iterate.
    pub norm: f64,
}

/// Power iteration on `H − shift·I` from the normalized all-ones vector.
pub(crate) fn power_iteration(h: &SymMatrix, shift: f64, tol: f64, max_iter: usize) -> PowerEstimate {
    let n = h.dim();
    let mut est = PowerEstimate { rayleigh: 0.0, norm: 0.0 };
    if n == 0 {
        return est;
    }
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut hv = vec![0.0; n];
    let mut restarted = false;
    let mut it = 0;
    while it < max_iter {
        h.mul_vec_into(&v, &mut hv);
        for (a, b) in hv.iter_mut().zip(&v) {
            *a -= shift * b;
        }
        let nrm = norm2(&hv);
        if nrm == 0.0 {
            // the all-ones start can lie in the kernel of a nonzero matrix
            if restarted || h.as_slice().iter().all(|x| *x == 0.0) && shift == 0.0 {
                return est;
            }
            restarted = true;
            for (k, vk) in v.iter_mut().enumerate() {
                *vk = 1.0 + 0.5 * ((k * 7919 % 13) as f64) / 13.0;
            }
            let s = norm2(&v);
            v.iter_mut().for_each(|x| *x /= s);
            continue;
        }
        let rayleigh = dot(&v, &hv);
        let converged = it > 0 && (nrm - est.norm).abs() <= tol * nrm;
        est = PowerEstimate { rayleigh, norm: nrm };
        if converged {
            break;
        }
        for (a, b) in v.iter_mut().zip(&hv) {
            *a = b / nrm;
        }
        it += 1;
    }
    est
}

/// Number of components strictly inside the box by a margin of `eps1·‖y‖`.
pub fn stable_active_count(y: &[f64], l: &[f64], u: &[f64], eps1: f64) -> usize {
    let margin = norm2(y) * eps1;
    y.iter().zip(l).zip(u).filter(|((&v, &lo), &hi)| lo + margin < v && v < hi - margin).count()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApgParams {
    /// Step is `1/lipschitz`; must bound the spectral norm of `H`.
    pub lipschitz: f64,
    /// Stop once the stable-interior count has not changed for this many iterations.
    pub s_max: usize,
    pub eps1: f64,
    pub eps2: f64,
    pub max_iter: usize,
}

impl ApgParams {
    pub const DEFAULT_S_MAX: usize = 10;
    pub const DEFAULT_EPS1: f64 = 1e-3;
    pub const DEFAULT_EPS2: f64 = 1e-6;
    pub const DEFAULT_MAX_ITER: usize = 5000;

    pub fn with_lipschitz(lipschitz: f64) -> Self {
        ApgParams {
            lipschitz,
            s_max: Self::DEFAULT_S_MAX,
            eps1: Self::DEFAULT_EPS1,
            eps2: Self::DEFAULT_EPS2,
            max_iter: Self::DEFAULT_MAX_ITER,
        }
    }

    /// Defaults with `L` estimated from `H`.
    pub fn for_problem(p: &BqpProblem) -> Self {
        Self::with_lipschitz(estimate_lipschitz(p.h(), 1e-6))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz > 0.0) || !self.lipschitz.is_finite() {
            return Err(BqpError::InvalidInput(format!("lipschitz must be > 0, got {}", self.lipschitz)));
        }
        if self.s_max == 0 {
            return Err(BqpError::InvalidInput("s_max must be at least 1".into()));
        }
        // eps2 = 0 switches the step criterion off
        if !(self.eps1 > 0.0) || !(self.eps2 >= 0.0) {
            return Err(BqpError::InvalidInput("eps1 must be positive and eps2 non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ApgStop {
    ActiveSetStable,
    StepSmall,
    IterCap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApproxSolution {
    pub y: Vec<f64>,
    pub iterations: usize,
    pub stop_reason: ApgStop,
}

/// Runs the accelerated projected gradient iteration from `z0` (projected onto the box first).
///
/// ```text
/// y_l     = P(z_l − (H z_l + f) / L)
/// ρ_{l+1} = (1 + sqrt(1 + 4 ρ_l²)) / 2
/// z_{l+1} = y_l + ((ρ_l − 1) / ρ_{l+1}) (y_l − y_{l−1})
/// ```
///
/// Stops when the stable-interior count is unchanged over `s_max` consecutive iterations, when
/// the relative step drops below `eps2` (a zero iterate counts as converged), or at `max_iter`.
pub fn apg_solve(p: &BqpProblem, z0: &[f64], params: &ApgParams) -> Result<ApproxSolution> {
    params.validate()?;
    check_len(p.dim(), z0.len())?;
    let n = p.dim();
    let (l, u) = (p.lower(), p.upper());
    let inv_l = 1.0 / params.lipschitz;

    let mut y_prev = p.project(z0);
    let mut z = y_prev.clone();
    let mut y = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut rho = 1.0f64;
    let mut count_prev = stable_active_count(&y_prev, l, u, params.eps1);
    let mut unchanged = 0usize;

    if n == 0 {
        return Ok(ApproxSolution { y: Vec::new(), iterations: 0, stop_reason: ApgStop::StepSmall });
    }

    for iter in 1..=params.max_iter {
        p.h().mul_vec_into(&z, &mut grad);
        for j in 0..n {
            let step = z[j] - inv_l * (grad[j] + p.f()[j]);
            y[j] = step.max(l[j]).min(u[j]);
        }

        let count = stable_active_count(&y, l, u, params.eps1);
        if count == count_prev {
            unchanged += 1;
        } else {
            unchanged = 0;
            count_prev = count;
        }
        let ynorm = norm2(&y);
        let rel_step = if ynorm == 0.0 { 0.0 } else { dist2(&y, &y_prev) / ynorm };

        let stop = if unchanged >= params.s_max {
            Some(ApgStop::ActiveSetStable)
        } else if rel_step < params.eps2 {
            Some(ApgStop::StepSmall)
        } else {
            None
        };
        if let Some(stop_reason) = stop {
            return Ok(ApproxSolution { y, iterations: iter, stop_reason });
        }

        let rho_next = 0.5 * (1.0 + (1.0 + 4.0 * rho * rho).sqrt());
        let beta = (rho - 1.0) / rho_next;
        for j in 0..n {
            z[j] = y[j] + beta * (y[j] - y_prev[j]);
        }
        rho = rho_next;
        std::mem::swap(&mut y_prev, &mut y);
    }
    Ok(ApproxSolution { y: y_prev, iterations: params.max_iter, stop_reason: ApgStop::IterCap })
}

/// Momentum sequence `ρ_1 = 1, ρ_{l+1} = (1 + sqrt(1 + 4ρ_l²))/2`, first `count` terms.
pub fn momentum_sequence(count: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(count);
    let mut rho = 1.0f64;
    for _ in 0..count {
        out.push(rho);
        rho = 0.5 * (1.0 + (1.0 + 4.0 * rho * rho).sqrt());
    }
    out
}
