//! Time integration of the discrete gradient flow.
//!
//! Two schemes: explicit descent along `x' = -j_q(z*)` and the implicit
//! minimizing-movement step. The explicit scheme keeps a set of *sliding*
//! particles whose neighbouring gaps are held tied: when a step would flip
//! the order of two gaps, the pair is treated as tied, and the minimal
//! selection then picks the λ that keeps both gaps equal to first order.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::energy::EnergyModel;
use crate::error::{Error, Result};
use crate::particles::{
    discrete_energy, minimal_selection_with, slope_of, weighted_norm, DomainSpec, GapOrder,
    ParticleConfig, SelectionOptions, SlopeConvention, Subgradient, DEFAULT_TIE_TOL,
};

const MAX_HALVINGS: u32 = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Scheme {
    ExplicitDescent,
    MinimizingMovement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum StepControl {
    Fixed,
    Adaptive,
}

#[derive(Debug, Clone, Serialize)]
pub struct IntegratorSpec {
    pub scheme: Scheme,
    pub dt: f64,
    pub t_end: f64,
    pub adapt: StepControl,
    pub safety: f64,
    pub record_every: usize,
    /// Pin the extreme particles of an interval domain to the walls.
    pub pinned: bool,
    pub tie_tol: f64,
    /// Times in `(0, t_end)` that steps land on exactly and that are always recorded.
    pub checkpoints: Vec<f64>,
}

impl IntegratorSpec {
    pub fn explicit(dt: f64, t_end: f64) -> Self {
        Self {
            scheme: Scheme::ExplicitDescent,
            dt,
            t_end,
            adapt: StepControl::Fixed,
            safety: 0.5,
            record_every: 1,
            pinned: true,
            tie_tol: DEFAULT_TIE_TOL,
            checkpoints: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_end > 0.0) || !self.dt.is_finite() || !self.t_end.is_finite() {
            return Err(Error::InvalidParams(format!(
                "dt = {} and t_end = {} must be positive",
                self.dt, self.t_end
            )));
        }
        if self.dt > self.t_end {
            return Err(Error::InvalidParams(format!("dt = {} exceeds t_end = {}", self.dt, self.t_end)));
        }
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::InvalidParams(format!("safety = {} not in (0, 1]", self.safety)));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParams("record_every must be positive".into()));
        }
        if !(self.tie_tol >= 0.0) {
            return Err(Error::InvalidParams("tie_tol must be non-negative".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0])
            || self.checkpoints.iter().any(|t| !(*t > 0.0 && *t <= self.t_end))
        {
            return Err(Error::InvalidParams("checkpoints must increase strictly inside (0, t_end]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    #[serde(skip)]
    pub states: Vec<ParticleConfig>,
    pub energies: Vec<f64>,
    /// `g_N` under the dual-norm convention, from the integrator's selection.
    pub slopes_dual: Vec<f64>,
    pub slopes_primal: Vec<f64>,
    /// `‖x(t_{k+1}) - x(t_k)‖_{w,p} / (t_{k+1} - t_k)`, one per recorded interval.
    pub metric_speed: Vec<f64>,
    pub moments: Vec<f64>,
    /// `∫_0^t (|x'|^p/p + g^q/q)` accumulated step by step, per recorded time.
    pub dissipation_dual: Vec<f64>,
    /// Same with `g` measured in the `(w,p)` norm.
    pub dissipation_primal: Vec<f64>,
    /// `∫_0^t |x'|^p`, per recorded time.
    pub action: Vec<f64>,
    pub steps: usize,
    pub rejections: usize,
}

impl Trajectory {
    pub fn final_state(&self) -> &ParticleConfig {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Index of a recorded time equal to `t` up to rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|s| (s - t).abs() <= 1e-12 * t.abs().max(1.0))
    }

    /// Index of the recorded time closest to `t`.
    pub fn nearest(&self, t: f64) -> usize {
        let mut best = 0;
        for (k, s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = k;
            }
        }
        best
    }
}

/// `x'_i = -|z_i|^{q-2} z_i`.
pub fn velocity_from_subgradient(z: &[f64], q: f64) -> Vec<f64> {
    z.iter()
        .map(|&zi| {
            if zi == 0.0 {
                0.0
            } else if q == 2.0 {
                -zi
            } else {
                -zi.abs().powf(q - 1.0) * zi.signum()
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExplicitStep {
    pub config: ParticleConfig,
    /// Whether the requested step size was accepted without halving.
    pub accepted: bool,
    pub dt_used: f64,
    pub dt_next: f64,
    pub halvings: u32,
    /// Selection used for the velocity (with sliding ties).
    pub selection: Subgradient,
    /// Particles held in sliding mode for this step.
    pub sliding: Vec<usize>,
    pub energy: f64,
}

/// Options for [`explicit_step`].
#[derive(Debug, Clone)]
pub struct StepOptions {
    pub adapt: StepControl,
    pub safety: f64,
    pub tie_tol: f64,
    /// Sliding particles carried over from the previous step.
    pub sliding: Vec<usize>,
    /// Time stamp used in error reports.
    pub t: f64,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            adapt: StepControl::Fixed,
            safety: 0.5,
            tie_tol: DEFAULT_TIE_TOL,
            sliding: Vec::new(),
            t: 0.0,
        }
    }
}

/// Selection with the carried sliding pairs forced tied. Pairs whose optimal
/// λ reaches a bound are no longer sliding and are released.
fn sliding_selection(cfg: &ParticleConfig, model: &EnergyModel, opts: &StepOptions) -> Result<(Subgradient, Vec<usize>)> {
    let mut forced: Vec<usize> = opts.sliding.clone();
    loop {
        let sel = minimal_selection_with(
            cfg,
            model,
            &SelectionOptions {
                tie_tol: opts.tie_tol,
                forced_ties: forced.clone(),
                ..SelectionOptions::default()
            },
        )?;
        let before = forced.len();
        forced.retain(|&i| sel.classes[i] != GapOrder::Tied || (sel.lambdas[i] > 1e-12 && sel.lambdas[i] < 1.0 - 1e-12));
        if forced.len() == before {
            return Ok((sel, forced));
        }
    }
}

/// Earliest time in `(0, dt)` at which a pair of untied neighbouring gaps
/// becomes equal when moving with velocity `v`. Gaps move linearly in time,
/// so the event time is exact.
fn first_tie_event(cfg: &ParticleConfig, sel: &Subgradient, v: &[f64], dt: f64) -> Option<f64> {
    let n = cfg.n();
    let g0 = cfg.gaps();
    let moved: Vec<f64> = cfg.positions().iter().zip(v).map(|(x, vi)| x + dt * vi).collect();
    let g1 = predicted_gaps(cfg, &moved);
    let mut first: Option<f64> = None;
    for i in 0..n {
        if sel.classes[i] == GapOrder::Tied || !g0[i].is_finite() || !g0[i + 1].is_finite() {
            continue;
        }
        let before = g0[i + 1] - g0[i];
        let after = g1[i + 1] - g1[i];
        if before.signum() != after.signum() {
            let t = dt * before / (before - after);
            if t > 0.0 && t < dt {
                first = Some(first.map_or(t, |f: f64| f.min(t)));
            }
        }
    }
    first
}

/// Gaps of `positions` under the boundary rule of `cfg`, without validation.
fn predicted_gaps(cfg: &ParticleConfig, positions: &[f64]) -> Vec<f64> {
    let n = positions.len();
    let mut g = vec![0.0; n + 1];
    for k in 1..n {
        g[k] = positions[k] - positions[k - 1];
    }
    match cfg.domain() {
        DomainSpec::WholeLine => {
            g[0] = f64::INFINITY;
            g[n] = f64::INFINITY;
        }
        DomainSpec::Interval { l, pinned: false } => {
            g[0] = 2.0 * (positions[0] + l);
            g[n] = 2.0 * (l - positions[n - 1]);
        }
        DomainSpec::Interval { pinned: true, .. } => {
            g[0] = g[1];
            g[n] = g[n - 1];
        }
    }
    g
}

/// Largest step before any gap closes, scaled by `0.25·safety`.
fn crossing_dt_max(cfg: &ParticleConfig, v: &[f64], safety: f64) -> f64 {
    let x = cfg.positions();
    let n = x.len();
    let mut t = f64::INFINITY;
    for k in 1..n {
        let closing = v[k - 1] - v[k];
        if closing > 0.0 {
            t = t.min((x[k] - x[k - 1]) / closing);
        }
    }
    if let DomainSpec::Interval { l, pinned: false } = cfg.domain() {
        if v[0] < 0.0 {
            t = t.min((x[0] + l) / -v[0]);
        }
        if v[n - 1] > 0.0 {
            t = t.min((l - x[n - 1]) / v[n - 1]);
        }
    }
    0.25 * safety * t
}

/// One explicit descent step with rejection and halving.
pub fn explicit_step(cfg: &ParticleConfig, model: &EnergyModel, dt: f64, opts: &StepOptions) -> Result<ExplicitStep> {
    if !(dt > 0.0) {
        return Err(Error::InvalidParams(format!("dt = {dt} must be positive")));
    }
    let e0 = discrete_energy(cfg, model)?;
    let q = model.params.q;
    let min_gap0 = cfg.min_gap();
    let pinned = cfg.domain().is_pinned();
    let n = cfg.n();
    let (sel, sliding) = sliding_selection(cfg, model, opts)?;
    let mut v = velocity_from_subgradient(&sel.z, q);
    if pinned {
        v[0] = 0.0;
        v[n - 1] = 0.0;
    }
    if v.iter().all(|&vi| vi == 0.0) {
        return Ok(ExplicitStep {
            config: cfg.clone(),
            accepted: true,
            dt_used: dt,
            dt_next: dt,
            halvings: 0,
            selection: sel,
            sliding,
            energy: e0,
        });
    }
    let dt_max = crossing_dt_max(cfg, &v, opts.safety);
    let mut trial = dt;
    if opts.adapt == StepControl::Adaptive {
        trial = trial.min(dt_max);
    }
    let mut reason = String::new();
    for halvings in 0..=MAX_HALVINGS {
        // Stop exactly where two gaps meet; the next step sees the tie.
        let event = first_tie_event(cfg, &sel, &v, trial);
        let h = event.unwrap_or(trial);
        let moved: Vec<f64> = cfg.positions().iter().zip(&v).map(|(x, vi)| x + h * vi).collect();
        let candidate = match cfg.with_positions(moved) {
            Ok(c) if c.min_gap() >= 0.1 * min_gap0 => c,
            Ok(_) => {
                reason = "minimum gap shrank below a tenth".into();
                trial *= 0.5;
                continue;
            }
            Err(e) => {
                reason = e.to_string();
                trial *= 0.5;
                continue;
            }
        };
        let e1 = discrete_energy(&candidate, model)?;
        let g_q = weighted_norm(&sel.z, q).powf(q);
        let tol = 1e-14 * (1.0 + e0.abs());
        let ok = match opts.adapt {
            StepControl::Fixed => e1 <= e0 + tol,
            StepControl::Adaptive => e1 <= e0 - 0.5 * h * g_q + tol,
        };
        if !ok {
            reason = format!("energy {e1:e} vs {e0:e}");
            trial *= 0.5;
            continue;
        }
        let dt_next = match opts.adapt {
            StepControl::Fixed => dt,
            StepControl::Adaptive => (trial * 1.2).min(dt_max.max(trial)),
        };
        return Ok(ExplicitStep {
            config: candidate,
            accepted: halvings == 0 && event.is_none() && h == dt,
            dt_used: h,
            dt_next,
            halvings,
            selection: sel,
            sliding,
            energy: e1,
        });
    }
    Err(Error::Stiffness {
        t: opts.t,
        halvings: MAX_HALVINGS,
        reason,
        positions: cfg.positions().to_vec(),
    })
}

#[derive(Debug, Clone)]
pub struct MovementStep {
    pub config: ParticleConfig,
    /// Particles whose two gaps are equal at the minimiser.
    pub ties: Vec<usize>,
    /// `Φ(y)` at the returned minimiser.
    pub objective: f64,
    /// Final barrier duality gap times `N`.
    pub residual: f64,
    pub newton_iterations: usize,
}

/// One particle-gap constraint `r_i ≤ gap(y)`, encoded as `gap = Σ coef·y + offset`.
#[derive(Debug, Clone)]
struct GapConstraint {
    particle: usize,
    terms: Vec<(usize, f64)>,
    offset: f64,
}

fn gap_constraints(cfg: &ParticleConfig) -> Vec<GapConstraint> {
    let n = cfg.n();
    let interior = |k: usize| vec![(k, 1.0), (k - 1, -1.0)];
    // Linear form of gap k (0..=N), or None when the gap is infinite.
    let gap = |k: usize| -> Option<(Vec<(usize, f64)>, f64)> {
        if k >= 1 && k < n {
            return Some((interior(k), 0.0));
        }
        match cfg.domain() {
            DomainSpec::WholeLine => None,
            DomainSpec::Interval { l, pinned: false } => {
                if k == 0 {
                    Some((vec![(0, 2.0)], 2.0 * l))
                } else {
                    Some((vec![(n - 1, -2.0)], 2.0 * l))
                }
            }
            DomainSpec::Interval { pinned: true, .. } => {
                if k == 0 {
                    Some((interior(1), 0.0))
                } else {
                    Some((interior(n - 1), 0.0))
                }
            }
        }
    };
    let mut out = Vec::new();
    for i in 0..n {
        for k in [i, i + 1] {
            if let Some((terms, offset)) = gap(k) {
                out.push(GapConstraint {
                    particle: i,
                    terms,
                    offset,
                });
            }
        }
    }
    out
}

/// Minimise `Φ(y) = Ẽ_N(y) + ‖y - x‖_{w,p}^p / (p τ^{p-1})`.
///
/// The non-smooth `min` in the energy is lifted to ball variables `r_i` with
/// `r_i ≤ Δx_i(y)`, `r_i ≤ Δx_{i+1}(y)`, and the resulting smooth convex
/// problem is solved by a primal log-barrier interior-point method.
pub fn minimizing_movement_step(cfg: &ParticleConfig, model: &EnergyModel, tau: f64) -> Result<MovementStep> {
    if !(tau > 0.0) {
        return Err(Error::InvalidParams(format!("tau = {tau} must be positive")));
    }
    let n = cfg.n();
    let nf = n as f64;
    let p = model.params.p;
    let x = cfg.positions().to_vec();
    let pinned = cfg.domain().is_pinned();
    let cons = gap_constraints(cfg);
    let m = cons.len();
    let prox_scale = 1.0 / (nf * tau.powf(p - 1.0));
    let disp_floor = 1e-14 * cfg.max_gap();

    let e0 = discrete_energy(cfg, model)?;
    let fscale = 1.0 + e0.abs();

    // Variables w = (y_0..y_{N-1}, r_0..r_{N-1}).
    let mut w = DVector::<f64>::zeros(2 * n);
    let balls = cfg.ball_sizes();
    for i in 0..n {
        w[i] = x[i];
        w[n + i] = 0.5 * balls[i];
    }
    let slack = |w: &DVector<f64>, c: &GapConstraint| -> f64 {
        c.terms.iter().map(|&(k, a)| a * w[k]).sum::<f64>() + c.offset - w[n + c.particle]
    };
    let smooth = |w: &DVector<f64>| -> f64 {
        let mut f = 0.0;
        for i in 0..n {
            f += model.h(nf * w[n + i]) / nf;
            f += prox_scale * (w[i] - x[i]).abs().powf(p) / p;
        }
        f
    };
    let barrier_obj = |w: &DVector<f64>, mu: f64| -> f64 {
        let mut f = smooth(w);
        for c in &cons {
            let s = slack(w, c);
            if !(s > 0.0) {
                return f64::INFINITY;
            }
            f -= mu * s.ln();
        }
        for i in 0..n {
            if !(w[n + i] > 0.0) {
                return f64::INFINITY;
            }
        }
        f
    };

    let mut mu = 1e-2 * fscale / m as f64;
    let mut iterations = 0;
    loop {
        for _ in 0..100 {
            iterations += 1;
            let mut grad = DVector::<f64>::zeros(2 * n);
            let mut hess = DMatrix::<f64>::zeros(2 * n, 2 * n);
            for i in 0..n {
                let r = w[n + i];
                grad[n + i] += model.h_prime(nf * r);
                hess[(n + i, n + i)] += nf * model.h_second(nf * r);
                let d = w[i] - x[i];
                grad[i] += prox_scale * d.abs().powf(p - 1.0) * d.signum();
                hess[(i, i)] += prox_scale * (p - 1.0) * d.abs().max(disp_floor).powf(p - 2.0);
            }
            for c in &cons {
                let s = slack(&w, c);
                let mut a: Vec<(usize, f64)> = c.terms.clone();
                a.push((n + c.particle, -1.0));
                for &(j, aj) in &a {
                    grad[j] -= mu * aj / s;
                    for &(k, ak) in &a {
                        hess[(j, k)] += mu * aj * ak / (s * s);
                    }
                }
            }
            if pinned {
                for &i in &[0, n - 1] {
                    grad[i] = 0.0;
                    for j in 0..2 * n {
                        hess[(i, j)] = 0.0;
                        hess[(j, i)] = 0.0;
                    }
                    hess[(i, i)] = 1.0;
                }
            }
            let diag_max = (0..2 * n).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max);
            for i in 0..2 * n {
                hess[(i, i)] += 1e-15 * diag_max;
            }
            let step = match hess.clone().cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => match hess.lu().solve(&(-&grad)) {
                    Some(s) => s,
                    None => break,
                },
            };
            let decrement = -grad.dot(&step);
            if decrement <= 1e-15 * fscale {
                break;
            }
            // Fraction to the boundary.
            let mut alpha: f64 = 1.0;
            for c in &cons {
                let s = slack(&w, c);
                let ds = c.terms.iter().map(|&(k, a)| a * step[k]).sum::<f64>() - step[n + c.particle];
                if ds < 0.0 {
                    alpha = alpha.min(0.99 * s / -ds);
                }
            }
            for i in 0..n {
                if step[n + i] < 0.0 {
                    alpha = alpha.min(0.99 * w[n + i] / -step[n + i]);
                }
            }
            let f0 = barrier_obj(&w, mu);
            let mut moved = false;
            for _ in 0..60 {
                let trial = &w + alpha * &step;
                let ft = barrier_obj(&trial, mu);
                if ft <= f0 - 1e-4 * alpha * decrement || (ft.is_finite() && ft <= f0 && alpha < 1e-8) {
                    w = trial;
                    moved = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let gap = m as f64 * mu;
        if gap <= 1e-14 * fscale {
            break;
        }
        mu *= 0.1;
    }

    let y: Vec<f64> = (0..n).map(|i| w[i]).collect();
    let residual = nf * m as f64 * mu;
    let config = match cfg.with_positions(y.clone()) {
        Ok(c) => c,
        Err(_) => {
            return Err(Error::ToleranceNotMet {
                residual: f64::INFINITY,
                tolerance: 1e-10 * nf,
                best: y,
            })
        }
    };
    if residual > 1e-10 * nf {
        return Err(Error::ToleranceNotMet {
            residual,
            tolerance: 1e-10 * nf,
            best: y,
        });
    }
    let g = config.gaps();
    let ties: Vec<usize> = (0..n)
        .filter(|&i| {
            !(pinned && (i == 0 || i == n - 1))
                && g[i].is_finite()
                && g[i + 1].is_finite()
                && (g[i] - g[i + 1]).abs() <= 1e-7 * g[i].max(g[i + 1])
        })
        .collect();
    let objective = discrete_energy(&config, model)?
        + prox_scale * y.iter().zip(&x).map(|(a, b)| (a - b).abs().powf(p)).sum::<f64>() / p;
    Ok(MovementStep {
        config,
        ties,
        objective,
        residual,
        newton_iterations: iterations,
    })
}

/// Apply the pinning flag of `spec` to the domain of `cfg`.
fn with_pinning(cfg: &ParticleConfig, pinned: bool) -> Result<ParticleConfig> {
    match cfg.domain() {
        DomainSpec::Interval { l, pinned: p } if p != pinned => {
            ParticleConfig::new(cfg.positions().to_vec(), DomainSpec::Interval { l, pinned })
        }
        _ => Ok(cfg.clone()),
    }
}

/// Integrate from `t = 0` to `spec.t_end`.
pub fn run(cfg0: &ParticleConfig, model: &EnergyModel, spec: &IntegratorSpec) -> Result<Trajectory> {
    spec.validate()?;
    let p = model.params.p;
    let q = model.params.q;
    let mut cfg = with_pinning(cfg0, spec.pinned)?;
    let e0 = discrete_energy(&cfg, model)?;
    let sel0 = minimal_selection_with(
        &cfg,
        model,
        &SelectionOptions {
            tie_tol: spec.tie_tol,
            ..SelectionOptions::default()
        },
    )?;
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![cfg.clone()],
        energies: vec![e0],
        slopes_dual: vec![slope_of(&sel0.z, model, SlopeConvention::DualQ)],
        slopes_primal: vec![slope_of(&sel0.z, model, SlopeConvention::PrimalP)],
        metric_speed: Vec::new(),
        moments: vec![cfg.moment(p)],
        dissipation_dual: vec![0.0],
        dissipation_primal: vec![0.0],
        action: vec![0.0],
        steps: 0,
        rejections: 0,
    };
    let mut t = 0.0;
    let mut dt = spec.dt;
    let mut sliding: Vec<usize> = Vec::new();
    let mut diss_dual = 0.0;
    let mut diss_primal = 0.0;
    let mut action = 0.0;
    let mut checkpoints = spec.checkpoints.iter().copied().peekable();
    let mut since_record = 0;
    let mut last_recorded = cfg.clone();
    let mut last_t = 0.0;
    let end_tol = 1e-12 * spec.t_end;
    while t < spec.t_end - end_tol {
        while checkpoints.next_if(|c| *c <= t + end_tol).is_some() {}
        let stop = checkpoints.peek().copied().unwrap_or(spec.t_end);
        let remaining = stop - t;
        let h = if dt >= remaining - end_tol { remaining } else { dt };
        let (next, h_used, slope_d, slope_p, energy) = match spec.scheme {
            Scheme::ExplicitDescent => {
                let step = explicit_step(
                    &cfg,
                    model,
                    h,
                    &StepOptions {
                        adapt: spec.adapt,
                        safety: spec.safety,
                        tie_tol: spec.tie_tol,
                        sliding: sliding.clone(),
                        t,
                    },
                )?;
                traj.rejections += step.halvings as usize;
                // Keep sliding pairs while their λ stays strictly inside (0, 1).
                sliding = step
                    .sliding
                    .iter()
                    .copied()
                    .filter(|&i| {
                        let l = step.selection.lambdas[i];
                        l > 1e-12 && l < 1.0 - 1e-12
                    })
                    .collect();
                if spec.adapt == StepControl::Adaptive {
                    dt = step.dt_next;
                }
                let sd = slope_of(&step.selection.z, model, SlopeConvention::DualQ);
                let sp = slope_of(&step.selection.z, model, SlopeConvention::PrimalP);
                (step.config, step.dt_used, sd, sp, step.energy)
            }
            Scheme::MinimizingMovement => {
                let step = minimizing_movement_step(&cfg, model, h)?;
                let sel = minimal_selection_with(
                    &step.config,
                    model,
                    &SelectionOptions {
                        tie_tol: spec.tie_tol,
                        forced_ties: step.ties.clone(),
                        ..SelectionOptions::default()
                    },
                )?;
                let energy = discrete_energy(&step.config, model)?;
                let sd = slope_of(&sel.z, model, SlopeConvention::DualQ);
                let sp = slope_of(&sel.z, model, SlopeConvention::PrimalP);
                (step.config, h, sd, sp, energy)
            }
        };
        let disp: Vec<f64> = next.positions().iter().zip(cfg.positions()).map(|(a, b)| a - b).collect();
        let speed = weighted_norm(&disp, p) / h_used;
        diss_dual += h_used * (speed.powf(p) / p + slope_d.powf(q) / q);
        diss_primal += h_used * (speed.powf(p) / p + slope_p.powf(q) / q);
        action += h_used * speed.powf(p);
        cfg = next;
        t += h_used;
        let at_stop = stop - t <= end_tol;
        if at_stop {
            t = stop;
        }
        traj.steps += 1;
        since_record += 1;
        if since_record >= spec.record_every || at_stop {
            let sel = if spec.scheme == Scheme::ExplicitDescent {
                minimal_selection_with(
                    &cfg,
                    model,
                    &SelectionOptions {
                        tie_tol: spec.tie_tol,
                        forced_ties: sliding.clone(),
                        ..SelectionOptions::default()
                    },
                )?
                .z
            } else {
                Vec::new()
            };
            let (gd, gp) = if spec.scheme == Scheme::ExplicitDescent {
                (
                    slope_of(&sel, model, SlopeConvention::DualQ),
                    slope_of(&sel, model, SlopeConvention::PrimalP),
                )
            } else {
                (slope_d, slope_p)
            };
            let disp: Vec<f64> = cfg
                .positions()
                .iter()
                .zip(last_recorded.positions())
                .map(|(a, b)| a - b)
                .collect();
            traj.metric_speed.push(weighted_norm(&disp, p) / (t - last_t));
            traj.times.push(t);
            traj.states.push(cfg.clone());
            traj.energies.push(energy);
            traj.slopes_dual.push(gd);
            traj.slopes_primal.push(gp);
            traj.moments.push(cfg.moment(p));
            traj.dissipation_dual.push(diss_dual);
            traj.dissipation_primal.push(diss_primal);
            traj.action.push(action);
            last_recorded = cfg.clone();
            last_t = t;
            since_record = 0;
        }
    }
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{power_law_model, FlowParams};

    fn model(p: f64, gamma: f64) -> EnergyModel {
        power_law_model(FlowParams::new(p, gamma).unwrap()).unwrap()
    }

    fn line(x: &[f64]) -> ParticleConfig {
        ParticleConfig::new(x.to_vec(), DomainSpec::WholeLine).unwrap()
    }

    #[test]
    fn velocity_examples() {
        assert_eq!(velocity_from_subgradient(&[1.0, -2.0], 2.0), vec![-1.0, 2.0]);
        let v = velocity_from_subgradient(&[8.0, 0.0, 0.0], 1.5);
        assert!((v[0] + 2.0 * 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(v[1], 0.0);
        // j_p(x') = -z with p = 3.
        let jp = v[0].abs() * v[0];
        assert!((jp + 8.0).abs() < 1e-12);
    }

    #[test]
    fn small_step_decreases_energy_at_first_order() {
        let m = model(2.0, 2.0);
        let cfg = line(&[0.0, 1.0, 3.0]);
        let e0 = discrete_energy(&cfg, &m).unwrap();
        let dt = 1e-4;
        let s = explicit_step(&cfg, &m, dt, &StepOptions::default()).unwrap();
        assert!(s.accepted);
        let g2 = weighted_norm(&s.selection.z, 2.0).powi(2);
        let drop = e0 - s.energy;
        assert!((drop - dt * g2).abs() < 1e-2 * dt * g2);
    }

    #[test]
    fn huge_step_is_halved() {
        let m = model(2.0, 2.0);
        let cfg = line(&[0.0, 1.0, 3.0]);
        let s = explicit_step(&cfg, &m, 1e3, &StepOptions::default()).unwrap();
        assert!(!s.accepted);
        assert!(s.dt_used < 1.0);
        assert!(s.energy <= discrete_energy(&cfg, &m).unwrap());
    }

    #[test]
    fn stationary_configuration_stays_put() {
        let m = model(2.0, 2.0);
        let cfg = ParticleConfig::new(
            vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            DomainSpec::Interval { l: 1.0, pinned: true },
        )
        .unwrap();
        let s = explicit_step(&cfg, &m, 0.1, &StepOptions::default()).unwrap();
        for (a, b) in s.config.positions().iter().zip(cfg.positions()) {
            assert!((a - b).abs() < 1e-15);
        }
        let mm = minimizing_movement_step(&cfg, &m, 0.1).unwrap();
        for (a, b) in mm.config.positions().iter().zip(cfg.positions()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn movement_step_matches_explicit_velocity_for_small_tau() {
        for (p, gamma) in [(2.0, 2.0), (3.0, 3.0), (1.5, 1.0)] {
            let m = model(p, gamma);
            let cfg = line(&[0.0, 0.8, 2.1, 2.9, 4.5]);
            let tau = 1e-5;
            let mm = minimizing_movement_step(&cfg, &m, tau).unwrap();
            let disp: Vec<f64> = mm.config.positions().iter().zip(cfg.positions()).map(|(a, b)| a - b).collect();
            let speed = weighted_norm(&disp, p) / tau;
            let sel = crate::particles::minimal_selection(&cfg, &m).unwrap();
            let v = velocity_from_subgradient(&sel.z, m.params.q);
            let want = weighted_norm(&v, p);
            assert!((speed - want).abs() < 1e-2 * want, "p = {p}: {speed} vs {want}");
            assert!(mm.objective <= discrete_energy(&cfg, &m).unwrap());
        }
    }

    #[test]
    fn run_records_monotone_energy_and_hits_t_end() {
        let m = model(2.0, 2.0);
        let cfg = ParticleConfig::new(
            vec![-1.0, -0.7, -0.2, 0.1, 0.6, 1.0],
            DomainSpec::Interval { l: 1.0, pinned: true },
        )
        .unwrap();
        let mut spec = IntegratorSpec::explicit(1e-3, 0.05);
        spec.record_every = 5;
        let traj = run(&cfg, &m, &spec).unwrap();
        assert_eq!(traj.times[0], 0.0);
        assert_eq!(*traj.times.last().unwrap(), 0.05);
        for w in traj.energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
        for s in &traj.states {
            assert_eq!(s.positions()[0], -1.0);
            assert_eq!(s.positions()[5], 1.0);
        }
    }

    #[test]
    fn invalid_spec_is_rejected() {
        let mut spec = IntegratorSpec::explicit(1.0, 0.5);
        assert!(spec.validate().is_err());
        spec.dt = 0.1;
        spec.safety = 1.5;
        assert!(spec.validate().is_err());
    }
}
