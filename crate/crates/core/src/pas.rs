//! Warm-start filtration and the simplified parametric active-set tracker.
//!
//! Given an approximate solution `ẑ`, the offset `w` makes `ẑ` the exact, strictly
//! complementary solution of `min ½zᵀHz + (f + w)ᵀz` over the box. The solution path of
//! `min ½zᵀHz + (f + t·w)ᵀz` is then followed from `t = 1` down to `t = 0`.
//!
//! On a segment with partition `(lower, free, upper)` the path is affine in `t`:
//!
//! ```text
//! z_free(t)       = μ + t·ν             H_ff ν = −w_f
//! grad_lower(t)   = ϑ + t·θ             θ = H_lf ν + w_l
//! grad_upper(t)   = φ + t·φ̂             φ̂ = H_uf ν + w_u
//! ```
//!
//! `μ` is computed in residual form against the last breakpoint (the "anchor"), which is
//! algebraically the closed form `−H_ff⁻¹(H_fl l + H_fu u + f_f)` but keeps components whose
//! gradient is exactly zero at the anchor exactly in place.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::apg::{apg_solve, ApgParams, ApproxSolution, BqpProblem};
use crate::error::{check_len, BqpError, Result};
use crate::linalg::{dot, norm2, norm_inf, sort_working_set, OrderedWorkingSet, SymMatrix, WorkingFactor};

/// Lower-active, free and upper-active index sets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub lower: Vec<usize>,
    pub free: OrderedWorkingSet,
    pub upper: Vec<usize>,
}

impl Partition {
    /// Classifies by exact equality with the bounds; the free set is in ascending order.
    pub fn from_point(z: &[f64], l: &[f64], u: &[f64]) -> Self {
        let mut lower = Vec::new();
        let mut free = Vec::new();
        let mut upper = Vec::new();
        for j in 0..z.len() {
            if z[j] == l[j] {
                lower.push(j);
            } else if z[j] == u[j] {
                upper.push(j);
            } else {
                free.push(j);
            }
        }
        Partition { lower, free: OrderedWorkingSet::natural(&free), upper }
    }

    pub fn with_natural_order(mut self) -> Self {
        self.free = OrderedWorkingSet::natural(self.free.as_slice());
        self
    }

    /// Checks that the three sets partition `0..n` and that active sets only use finite bounds.
    pub fn validate(&self, l: &[f64], u: &[f64]) -> Result<()> {
        let n = l.len();
        let mut seen = vec![false; n];
        let all = self.lower.iter().chain(self.free.as_slice()).chain(&self.upper);
        for &j in all {
            if j >= n || std::mem::replace(&mut seen[j], true) {
                return Err(BqpError::InvalidInput(format!("index {j} repeated or out of range")));
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(BqpError::InvalidInput("partition does not cover every index".into()));
        }
        if let Some(j) = self.lower.iter().find(|&&j| !l[j].is_finite()) {
            return Err(BqpError::InvalidInput(format!("index {j} active at an infinite lower bound")));
        }
        if let Some(j) = self.upper.iter().find(|&&j| !u[j].is_finite()) {
            return Err(BqpError::InvalidInput(format!("index {j} active at an infinite upper bound")));
        }
        Ok(())
    }
}

/// Snaps components within `eta·‖y‖` of a finite bound onto it (the lower bound wins when both
/// qualify) and derives the partition, with the free set sorted by non-increasing bound margin.
pub fn filter_warm_start(y: &[f64], l: &[f64], u: &[f64], eta: f64) -> (Vec<f64>, Partition) {
    let margin = eta * norm2(y);
    let mut z = y.to_vec();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut free = Vec::new();
    for j in 0..y.len() {
        if l[j].is_finite() && y[j] <= l[j] + margin {
            z[j] = l[j];
            lower.push(j);
        } else if u[j].is_finite() && y[j] >= u[j] - margin {
            z[j] = u[j];
            upper.push(j);
        } else {
            free.push(j);
        }
    }
    let free = sort_working_set(&z, l, u, &free);
    (z, Partition { lower, free, upper })
}

/// Offset `w` that makes `ẑ` solve `min ½zᵀHz + (f + w)ᵀz` with complementarity margin
/// at least `delta` on every active bound.
pub fn build_homotopy_offset(h: &SymMatrix, f: &[f64], z_hat: &[f64], partition: &Partition, delta: f64) -> Vec<f64> {
    let grad = |j: usize| h.row_dot(j, z_hat) + f[j];
    let mut w = vec![0.0; f.len()];
    for &j in partition.free.as_slice() {
        w[j] = -grad(j);
    }
    if !partition.lower.is_empty() {
        let min = partition.lower.iter().map(|&j| grad(j)).fold(f64::INFINITY, f64::min);
        let xi1 = -min + delta;
        for &j in &partition.lower {
            w[j] = xi1;
        }
    }
    if !partition.upper.is_empty() {
        let max = partition.upper.iter().map(|&j| grad(j)).fold(f64::NEG_INFINITY, f64::max);
        let xi2 = -max - delta;
        for &j in &partition.upper {
            w[j] = xi2;
        }
    }
    w
}

/// The parametric problem `min ½zᵀHz + (f + t·w)ᵀz` over `[l, u]`.
#[derive(Debug, Clone, Copy)]
pub struct Homotopy<'a> {
    pub h: &'a SymMatrix,
    pub f: &'a [f64],
    pub w: &'a [f64],
    pub l: &'a [f64],
    pub u: &'a [f64],
}

impl Homotopy<'_> {
    fn gradient_at(&self, j: usize, z: &[f64], t: f64) -> f64 {
        self.h.row_dot(j, z) + self.f[j] + t * self.w[j]
    }
}

/// Current segment of the tracked path.
#[derive(Debug, Clone, PartialEq)]
pub struct HomotopyState {
    /// Parameter value at the start (upper end) of the current segment.
    pub t: f64,
    pub partition: Partition,
    pub factor: WorkingFactor,
    /// Path intercept over the free set, aligned with `factor.order()`.
    pub mu: Vec<f64>,
    /// Path slope over the free set.
    pub nu: Vec<f64>,
    /// Lower-set gradient intercept, aligned with `partition.lower`.
    pub vartheta: Vec<f64>,
    pub theta: Vec<f64>,
    /// Upper-set gradient intercept, aligned with `partition.upper`.
    pub varphi: Vec<f64>,
    pub phi_hat: Vec<f64>,
    pub step_index: usize,
    /// Full point on the path at `t`.
    anchor: Vec<f64>,
}

impl HomotopyState {
    /// State at `t` anchored at `point`, which must lie on the path at `t` for `partition`.
    /// The factor order is taken from `partition.free`.
    pub fn new(hom: &Homotopy, point: &[f64], t: f64, partition: Partition) -> Result<Self> {
        check_len(hom.f.len(), point.len())?;
        partition.validate(hom.l, hom.u)?;
        let factor = WorkingFactor::factorize(hom.h, &partition.free)?;
        let mut anchor = point.to_vec();
        for &j in &partition.lower {
            anchor[j] = hom.l[j];
        }
        for &j in &partition.upper {
            anchor[j] = hom.u[j];
        }
        let mut state = HomotopyState {
            t,
            partition,
            factor,
            mu: Vec::new(),
            nu: Vec::new(),
            vartheta: Vec::new(),
            theta: Vec::new(),
            varphi: Vec::new(),
            phi_hat: Vec::new(),
            step_index: 0,
            anchor,
        };
        state.refresh_coefficients(hom)?;
        Ok(state)
    }

    /// Recomputes `μ, ν, ϑ, θ, φ, φ̂` from the factor and the anchor.
    pub fn refresh_coefficients(&mut self, hom: &Homotopy) -> Result<()> {
        let order = self.factor.order().as_slice().to_vec();
        let t = self.t;
        let w_free: Vec<f64> = order.iter().map(|&j| -hom.w[j]).collect();
        let residual: Vec<f64> = order.iter().map(|&j| hom.gradient_at(j, &self.anchor, t)).collect();
        self.nu = self.factor.solve(&w_free)?;
        let correction = self.factor.solve(&residual)?;
        self.mu = order.iter().enumerate().map(|(k, &j)| self.anchor[j] - t * self.nu[k] - correction[k]).collect();

        let mut base = self.anchor.clone();
        let mut slope = vec![0.0; base.len()];
        for (k, &j) in order.iter().enumerate() {
            base[j] = self.mu[k];
            slope[j] = self.nu[k];
        }
        let coeffs = |j: usize| {
            let row = hom.h.row(j);
            let intercept = dot(row, &base) + hom.f[j];
            let rate = order.iter().zip(&self.nu).map(|(&k, v)| row[k] * v).sum::<f64>() + hom.w[j];
            (intercept, rate)
        };
        (self.vartheta, self.theta) = self.partition.lower.iter().map(|&j| coeffs(j)).unzip();
        (self.varphi, self.phi_hat) = self.partition.upper.iter().map(|&j| coeffs(j)).unzip();
        Ok(())
    }

    /// Point on the current segment's line at parameter `t`.
    pub fn point_at(&self, t: f64) -> Vec<f64> {
        let mut z = self.anchor.clone();
        for (k, &j) in self.factor.order().as_slice().iter().enumerate() {
            z[j] = self.mu[k] + t * self.nu[k];
        }
        z
    }

    /// Gradient of the parametric objective along the current line, for every index.
    pub fn gradient_at(&self, hom: &Homotopy, t: f64) -> Vec<f64> {
        let z = self.point_at(t);
        (0..z.len()).map(|j| hom.gradient_at(j, &z, t)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    FreeHitsLower,
    FreeHitsUpper,
    LowerActivates,
    UpperActivates,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub index: Option<usize>,
    pub t_next: f64,
}

impl Event {
    fn finished() -> Self {
        Event { kind: EventKind::Finished, index: None, t_next: 0.0 }
    }
}

/// Largest breakpoint below the current segment start.
///
/// Candidates: a free index reaching its lower bound (`ν_j > 0`) or upper bound (`ν_j < 0`), a
/// lower-active gradient reaching zero (`θ_j > 0`), an upper-active gradient reaching zero
/// (`φ̂_j < 0`). Infinite bounds give no candidates. A candidate whose crossing lies at or above
/// `t_prev` is already violated up to rounding and is scheduled at `t_prev`. The largest positive
/// candidate wins, ties go to the event order above and then to the smaller index. No positive
/// candidate means the path runs straight to `t = 0`.
pub fn next_breakpoint(
    state: &HomotopyState,
    hom: &Homotopy,
    t_prev: f64,
    excluded: &HashSet<(EventKind, usize)>,
) -> Event {
    let mut best = Event::finished();
    let mut consider = |kind: EventKind, j: usize, ratio: f64| {
        if !(ratio > 0.0) || excluded.contains(&(kind, j)) {
            return;
        }
        let t = ratio.min(t_prev);
        let better = match best.index {
            None => true,
            Some(bj) => t > best.t_next || (t == best.t_next && (kind, j) < (best.kind, bj)),
        };
        if better {
            best = Event { kind, index: Some(j), t_next: t };
        }
    };
    for (k, &j) in state.factor.order().as_slice().iter().enumerate() {
        let (mu, nu) = (state.mu[k], state.nu[k]);
        if nu > 0.0 && hom.l[j].is_finite() {
            consider(EventKind::FreeHitsLower, j, (hom.l[j] - mu) / nu);
        } else if nu < 0.0 && hom.u[j].is_finite() {
            consider(EventKind::FreeHitsUpper, j, (hom.u[j] - mu) / nu);
        }
    }
    for (k, &j) in state.partition.lower.iter().enumerate() {
        if state.theta[k] > 0.0 {
            consider(EventKind::LowerActivates, j, -state.vartheta[k] / state.theta[k]);
        }
    }
    for (k, &j) in state.partition.upper.iter().enumerate() {
        if state.phi_hat[k] < 0.0 {
            consider(EventKind::UpperActivates, j, -state.varphi[k] / state.phi_hat[k]);
        }
    }
    best
}

/// Moves the event's index between sets, updates the factor (added indices go to the end of the
/// order), refreshes the coefficients and checks that the new segment leaves the breakpoint in
/// the right direction:
///
/// - free → lower: the new gradient at the index must grow as `t` decreases (`θ_j < 0`);
/// - free → upper: it must fall (`φ̂_j > 0`);
/// - lower → free: the component must move up into the box (`ν_j < 0`);
/// - upper → free: it must move down (`ν_j > 0`).
///
/// Returns `Ok(false)` and leaves the state untouched when the check fails.
pub fn apply_event(state: &mut HomotopyState, hom: &Homotopy, ev: &Event) -> Result<bool> {
    let j = match (ev.kind, ev.index) {
        (EventKind::Finished, _) | (_, None) => {
            return Err(BqpError::InvalidInput("cannot apply a finished event".into()))
        }
        (_, Some(j)) => j,
    };
    let saved = state.clone();
    let t = ev.t_next;
    state.anchor = state.point_at(t);
    state.t = t;

    let outcome = (|| -> Result<bool> {
        match ev.kind {
            EventKind::FreeHitsLower | EventKind::FreeHitsUpper => {
                let pos = state
                    .factor
                    .order()
                    .position(j)
                    .ok_or_else(|| BqpError::InvalidInput(format!("index {j} is not free")))?;
                state.factor.remove_index(hom.h, pos)?;
                if ev.kind == EventKind::FreeHitsLower {
                    state.anchor[j] = hom.l[j];
                    state.partition.lower.push(j);
                } else {
                    state.anchor[j] = hom.u[j];
                    state.partition.upper.push(j);
                }
            }
            EventKind::LowerActivates => {
                let pos = state
                    .partition
                    .lower
                    .iter()
                    .position(|&k| k == j)
                    .ok_or_else(|| BqpError::InvalidInput(format!("index {j} is not lower-active")))?;
                state.partition.lower.remove(pos);
                state.factor.add_index(hom.h, j)?;
            }
            EventKind::UpperActivates => {
                let pos = state
                    .partition
                    .upper
                    .iter()
                    .position(|&k| k == j)
                    .ok_or_else(|| BqpError::InvalidInput(format!("index {j} is not upper-active")))?;
                state.partition.upper.remove(pos);
                state.factor.add_index(hom.h, j)?;
            }
            EventKind::Finished => unreachable!(),
        }
        state.partition.free = state.factor.order().clone();
        state.refresh_coefficients(hom)?;
        let valid = match ev.kind {
            EventKind::FreeHitsLower => {
                let k = state.partition.lower.len() - 1;
                state.theta[k] < 0.0
            }
            EventKind::FreeHitsUpper => {
                let k = state.partition.upper.len() - 1;
                state.phi_hat[k] > 0.0
            }
            EventKind::LowerActivates => state.nu[state.factor.len() - 1] < 0.0,
            EventKind::UpperActivates => state.nu[state.factor.len() - 1] > 0.0,
            EventKind::Finished => unreachable!(),
        };
        Ok(valid)
    })();

    match outcome {
        Ok(true) => {
            state.step_index += 1;
            Ok(true)
        }
        Ok(false) => {
            *state = saved;
            Ok(false)
        }
        Err(e) => {
            *state = saved;
            Err(e)
        }
    }
}

/// Free-gradient and sign-violation norms of a point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct KktResidual {
    /// `‖g(x)‖∞` with `g` the gradient restricted to strictly interior components.
    pub g_inf: f64,
    /// Largest wrong-sign gradient on an active bound.
    pub sign_violation: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.g_inf.max(self.sign_violation)
    }
}

/// KKT residual of `x` for `p`.
pub fn kkt_residual(p: &BqpProblem, x: &[f64]) -> KktResidual {
    let g = p.gradient(x);
    let (l, u) = (p.lower(), p.upper());
    let mut r = KktResidual::default();
    for j in 0..x.len() {
        if x[j] == l[j] {
            r.sign_violation = r.sign_violation.max(-g[j]);
        } else if x[j] == u[j] {
            r.sign_violation = r.sign_violation.max(g[j]);
        } else {
            r.g_inf = r.g_inf.max(g[j].abs());
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PasParams {
    /// Filtration threshold, relative to `‖y‖`.
    pub eta: f64,
    /// Complementarity margin of the homotopy start.
    pub delta: f64,
    /// Order the initial free set by bound margin; otherwise ascending index.
    pub sort: bool,
    /// Event budget as a multiple of `n`.
    pub step_cap_factor: usize,
    /// Restarts from the endpoint when its KKT residual exceeds `kkt_rtol·(1 + ‖f‖∞)`.
    pub kkt_rtol: f64,
    pub max_restarts: usize,
    /// Keep every segment in the outcome.
    pub record_path: bool,
}

impl Default for PasParams {
    fn default() -> Self {
        PasParams {
            eta: 1e-6,
            delta: 1.0,
            sort: true,
            step_cap_factor: 20,
            kkt_rtol: 1e-9,
            max_restarts: 3,
            record_path: false,
        }
    }
}

/// One linear piece of the path, valid for `t ∈ [t_low, t_high]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSegment {
    /// Index into [`PasOutcome::offsets`] of the homotopy this segment belongs to.
    pub run: usize,
    pub t_high: f64,
    pub t_low: f64,
    pub lower: Vec<usize>,
    pub free: Vec<usize>,
    pub upper: Vec<usize>,
    pub mu: Vec<f64>,
    pub nu: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegenerateEvent {
    pub index: usize,
    pub kind: EventKind,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PasOutcome {
    pub z: Vec<f64>,
    /// Accepted breakpoints.
    pub steps: usize,
    pub breakpoints: Vec<f64>,
    pub degenerate_events: Vec<DegenerateEvent>,
    /// Flops spent in incremental factor updates (initial factorizations excluded).
    pub update_flops: u64,
    pub factorization_flops: u64,
    pub restarts: usize,
    pub kkt: KktResidual,
    pub segments: Vec<PathSegment>,
    /// Homotopy offset `w` of every tracking run (the first plus any restarts).
    pub offsets: Vec<Vec<f64>>,
}

/// Tracks the path from `ẑ` at `t = 1` to the solution of `p` at `t = 0`.
pub fn pas_solve(p: &BqpProblem, z_hat: &[f64], partition: Partition, params: &PasParams) -> Result<PasOutcome> {
    check_len(p.dim(), z_hat.len())?;
    let n = p.dim();
    let cap = params.step_cap_factor.saturating_mul(n.max(1));
    let tol = params.kkt_rtol * (1.0 + norm_inf(p.f()));
    let mut out = PasOutcome {
        z: Vec::new(),
        steps: 0,
        breakpoints: Vec::new(),
        degenerate_events: Vec::new(),
        update_flops: 0,
        factorization_flops: 0,
        restarts: 0,
        kkt: KktResidual::default(),
        segments: Vec::new(),
        offsets: Vec::new(),
    };
    let mut start = z_hat.to_vec();
    let mut partition = partition;
    let mut attempts = 0usize;
    loop {
        let z = track(p, &start, partition, params, cap, &mut attempts, &mut out)?;
        out.kkt = kkt_residual(p, &z);
        out.z = z;
        if out.kkt.max() <= tol || out.restarts >= params.max_restarts {
            return Ok(out);
        }
        out.restarts += 1;
        start = p.project(&out.z);
        partition = Partition::from_point(&start, p.lower(), p.upper());
    }
}

fn track(
    p: &BqpProblem,
    z_hat: &[f64],
    partition: Partition,
    params: &PasParams,
    cap: usize,
    attempts: &mut usize,
    out: &mut PasOutcome,
) -> Result<Vec<f64>> {
    let (l, u) = (p.lower(), p.upper());
    let mut partition = partition;
    partition.free = if params.sort {
        sort_working_set(z_hat, l, u, partition.free.as_slice())
    } else {
        OrderedWorkingSet::natural(partition.free.as_slice())
    };
    let w = build_homotopy_offset(p.h(), p.f(), z_hat, &partition, params.delta);
    let hom = Homotopy { h: p.h(), f: p.f(), w: &w, l, u };
    let mut state = HomotopyState::new(&hom, z_hat, 1.0, partition)?;
    let run = out.offsets.len();
    if params.record_path {
        out.offsets.push(w.clone());
    }
    let initial_flops = state.factor.flops();
    out.factorization_flops += initial_flops;
    let mut excluded = HashSet::new();

    loop {
        let ev = next_breakpoint(&state, &hom, state.t, &excluded);
        if params.record_path {
            out.segments.push(segment(&state, run, ev.t_next));
        }
        if ev.kind == EventKind::Finished {
            break;
        }
        if *attempts >= cap {
            return Err(BqpError::StepCap { steps: *attempts });
        }
        *attempts += 1;
        if apply_event(&mut state, &hom, &ev)? {
            excluded.clear();
            out.steps += 1;
            out.breakpoints.push(ev.t_next);
        } else {
            let index = ev.index.expect("non-final events carry an index");
            excluded.insert((ev.kind, index));
            out.degenerate_events.push(DegenerateEvent { index, kind: ev.kind, t: ev.t_next });
            if params.record_path {
                out.segments.pop();
            }
        }
    }
    out.update_flops += state.factor.flops() - initial_flops;
    Ok(state.point_at(0.0))
}

fn segment(state: &HomotopyState, run: usize, t_low: f64) -> PathSegment {
    PathSegment {
        run,
        t_high: state.t,
        t_low,
        lower: state.partition.lower.clone(),
        free: state.factor.order().as_slice().to_vec(),
        upper: state.partition.upper.clone(),
        mu: state.mu.clone(),
        nu: state.nu.clone(),
    }
}

/// Result of the two-stage solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageOutcome {
    pub z: Vec<f64>,
    pub apg: ApproxSolution,
    pub pas: PasOutcome,
}

/// Accelerated projected gradient prediction followed by path tracking from the filtered point.
pub fn apg_pas_solve(p: &BqpProblem, z0: &[f64], apg: &ApgParams, pas: &PasParams) -> Result<TwoStageOutcome> {
    let approx = apg_solve(p, z0, apg)?;
    let outcome = pas_from_approximation(p, &approx.y, pas)?;
    Ok(TwoStageOutcome { z: outcome.z.clone(), apg: approx, pas: outcome })
}

/// Second stage only: filters `y`, builds the homotopy and tracks it.
pub fn pas_from_approximation(p: &BqpProblem, y: &[f64], params: &PasParams) -> Result<PasOutcome> {
    let y = p.project(y);
    let (z_hat, partition) = filter_warm_start(&y, p.lower(), p.upper(), params.eta);
    pas_solve(p, &z_hat, partition, params)
}
