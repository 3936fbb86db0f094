//! Grid-based dynamic programming for avoid and reach-avoid games.
//!
//! The solver marches the value function forward in time-to-go `tau` with
//! an explicit Euler step of the Lax-Friedrichs numerical Hamiltonian and
//! applies the variational-inequality clamp each step:
//!
//! * reach-avoid: `V <- min{ g, max{ l, V + dt * H_lf } }`
//! * avoid:       `V <- min{ g, V + dt * H_lf }`
//!
//! with terminal data `V(., 0) = min{l, g}` (or `g` for avoid). In
//! time-to-go form the scheme reads
//! `H_lf = H((D+ + D-)/2) + sum_i alpha_i (D+_i - D-_i) / 2`,
//! which reduces to exact upwinding for linear advection; `alpha_i` bounds
//! `|dH/dlambda_i|` so the update is monotone under the CFL condition.
//! First-order one-sided differences substitute for the missing neighbor
//! at grid edges.
//!
//! The disturbance box is either fixed or shrinks with `tau` at a fixed
//! rate (so a disturbance that grows along trajectories in forward time is
//! solved as one game). Dissipation coefficients are always computed from
//! the largest bound the schedule can reach, so tubes solved for nested
//! disturbance boxes, or for different rates of one schedule, use the same
//! numerical viscosity and stay pointwise ordered.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    dissipation_bounds, hamiltonian, ControlAffine, DisturbanceSpec, DynamicsError,
    TimeVaryingDisturbanceSet,
};
use crate::grid::{GridError, RectGrid, TubeMeta, TubeParam, ValueTube, MAX_NDIM};

#[derive(Debug, thiserror::Error)]
pub enum SolveError {
    #[error("time step {dt} violates the CFL bound {max_dt} (cfl factor {cfl})")]
    CflViolation { dt: f64, max_dt: f64, cfl: f64 },
    #[error("non-finite values at DP step {step} (tau = {tau})")]
    NonFinite { step: usize, tau: f64 },
    #[error("horizon must be positive and finite, got {0}")]
    BadHorizon(f64),
    #[error("ill-formed problem: {0}")]
    BadProblem(&'static str),
    #[error("ensemble multipliers must be non-empty, strictly increasing and within [0, 1]")]
    BadEnsemble,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Disturbance description for one solve.
#[derive(Debug, Clone)]
pub enum DisturbanceModel {
    /// Constant per-dimension box half-widths.
    Fixed(Vec<f64>),
    /// Half-widths shrink with time-to-go at a fixed rate.
    Schedule(TimeVaryingDisturbanceSet),
}

impl DisturbanceModel {
    fn bound_into(&self, tau: f64, out: &mut [f64]) {
        match self {
            DisturbanceModel::Fixed(b) => out[..b.len()].copy_from_slice(b),
            DisturbanceModel::Schedule(s) => s.bound_into(tau, out),
        }
    }

    /// Largest bound over all tau; basis for the dissipation coefficients.
    fn max_bound(&self) -> Vec<f64> {
        match self {
            DisturbanceModel::Fixed(b) => b.clone(),
            DisturbanceModel::Schedule(s) => s.d_max.clone(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            DisturbanceModel::Fixed(b) => b.len(),
            DisturbanceModel::Schedule(s) => s.d_max.len(),
        }
    }

    fn tube_param(&self) -> TubeParam {
        match self {
            DisturbanceModel::Fixed(b) => TubeParam::FixedBound { bound: b.clone() },
            DisturbanceModel::Schedule(s) => TubeParam::RateSchedule {
                d_max: s.d_max.clone(),
                ddot: s.ddot.clone(),
            },
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverSettings {
    /// CFL safety factor for the `dt <= cfl * min_i(h_i / alpha_i)` check.
    pub cfl: f64,
    /// Approximate number of tau slices archived into the tube.
    pub tube_samples: usize,
    /// Override for the disturbance part of the dissipation coefficients.
    /// Defaults to the solve's own maximum bound; ensembles pass the shared
    /// spec-wide cap so every member sees identical viscosity.
    pub dissipation_bound: Option<Vec<f64>>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            cfl: 0.5,
            tube_samples: 50,
            dissipation_bound: None,
        }
    }
}

/// One dynamic-programming problem: signed constraint `g` (failure where
/// `g <= 0`), optional signed target `l` (target where `l >= 0`), dynamics,
/// disturbance description, grid and horizon.
pub struct ReachAvoidProblem<'a, M: ControlAffine> {
    pub model: &'a M,
    pub constraint: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    pub target: Option<&'a (dyn Fn(&[f64]) -> f64 + Sync)>,
    pub disturbance: DisturbanceModel,
    pub grid: RectGrid,
    pub horizon: f64,
    /// Explicit DP step; `None` picks `0.5 / sum_i(alpha_i / h_i)`, which
    /// satisfies both the CFL check and the monotone-scheme bound.
    pub dt: Option<f64>,
    pub settings: SolverSettings,
}

impl<'a, M: ControlAffine> ReachAvoidProblem<'a, M> {
    /// Dissipation coefficients this problem will solve with.
    pub fn dissipation(&self) -> Vec<f64> {
        let basis = self
            .settings
            .dissipation_bound
            .clone()
            .unwrap_or_else(|| self.disturbance.max_bound());
        dissipation_bounds(self.model, &self.grid, &basis)
    }

    /// The automatic CFL-safe time step.
    pub fn auto_dt(&self) -> f64 {
        let alpha = self.dissipation();
        let sum: f64 = alpha
            .iter()
            .zip(self.grid.spacing())
            .map(|(a, h)| a / h)
            .sum();
        if sum <= 0.0 {
            // No transport at all; a single step per horizon is exact.
            self.horizon
        } else {
            0.5 / sum
        }
    }
}

/// Rasterize a signed function onto the grid nodes.
fn rasterize(grid: &RectGrid, f: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Vec<f64> {
    let ndim = grid.ndim();
    let n_last = *grid.counts().last().unwrap();
    let mut out = vec![0.0; grid.num_nodes()];
    out.par_chunks_mut(n_last).enumerate().for_each(|(row, chunk)| {
        let mut x = [0.0; MAX_NDIM];
        grid.node(row * n_last, &mut x[..ndim]);
        for (i, v) in chunk.iter_mut().enumerate() {
            x[ndim - 1] = grid.node_coord(ndim - 1, i);
            *v = f(&x[..ndim]);
        }
    });
    out
}

/// One explicit Euler step of the Lax-Friedrichs scheme with the VI clamp.
#[allow(clippy::too_many_arguments)]
fn lf_step<M: ControlAffine>(
    model: &M,
    grid: &RectGrid,
    prev: &[f64],
    next: &mut [f64],
    g_arr: &[f64],
    l_arr: Option<&[f64]>,
    alpha: &[f64],
    bound: &[f64],
    dt: f64,
) {
    let ndim = grid.ndim();
    let counts = grid.counts();
    let spacing = grid.spacing();
    let strides = grid.strides();
    let n_last = counts[ndim - 1];

    next.par_chunks_mut(n_last).enumerate().for_each(|(row, out)| {
        let mut idx = [0usize; MAX_NDIM];
        let mut rem = row;
        for d in (0..ndim - 1).rev() {
            idx[d] = rem % counts[d];
            rem /= counts[d];
        }
        let mut x = [0.0; MAX_NDIM];
        for d in 0..ndim - 1 {
            x[d] = grid.node_coord(d, idx[d]);
        }
        let base = row * n_last;
        let mut lambda = [0.0; MAX_NDIM];
        for i_last in 0..n_last {
            idx[ndim - 1] = i_last;
            x[ndim - 1] = grid.node_coord(ndim - 1, i_last);
            let c = base + i_last;
            let vc = prev[c];

            let mut diss = 0.0;
            for d in 0..ndim {
                let h = spacing[d];
                let has_dn = idx[d] > 0;
                let has_up = idx[d] + 1 < counts[d];
                let dp;
                let dm;
                if has_up && has_dn {
                    dp = (prev[c + strides[d]] - vc) / h;
                    dm = (vc - prev[c - strides[d]]) / h;
                } else if has_up {
                    dp = (prev[c + strides[d]] - vc) / h;
                    dm = dp;
                } else {
                    dm = (vc - prev[c - strides[d]]) / h;
                    dp = dm;
                }
                lambda[d] = 0.5 * (dp + dm);
                diss += 0.5 * alpha[d] * (dp - dm);
            }

            let h_num = hamiltonian(model, &lambda[..ndim], &x[..ndim], bound) + diss;
            let mut v = vc + dt * h_num;
            if let Some(l) = l_arr {
                v = v.max(l[c]);
            }
            out[i_last] = g_arr[c].min(v);
        }
    });
}

struct Prepared {
    g_arr: Vec<f64>,
    l_arr: Option<Vec<f64>>,
    alpha: Vec<f64>,
    dt: f64,
    n_steps: usize,
    stride: usize,
}

fn prepare<M: ControlAffine>(p: &ReachAvoidProblem<'_, M>) -> Result<Prepared, SolveError> {
    if !(p.horizon > 0.0) || !p.horizon.is_finite() {
        return Err(SolveError::BadHorizon(p.horizon));
    }
    if p.grid.ndim() != p.model.state_dim() {
        return Err(SolveError::BadProblem("grid/model dimension mismatch"));
    }
    if p.disturbance.dim() != p.model.state_dim() {
        return Err(SolveError::BadProblem("disturbance/model dimension mismatch"));
    }
    let alpha = p.dissipation();
    let max_dt = p
        .settings
        .cfl
        .min(1.0)
        .max(0.0)
        * alpha
            .iter()
            .zip(p.grid.spacing())
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, h)| h / a)
            .fold(f64::INFINITY, f64::min);
    let dt = match p.dt {
        Some(dt) => {
            if !(dt > 0.0) || dt > max_dt {
                return Err(SolveError::CflViolation {
                    dt,
                    max_dt,
                    cfl: p.settings.cfl,
                });
            }
            dt
        }
        None => p.auto_dt().min(max_dt).min(p.horizon),
    };
    let n_steps = (p.horizon / dt).ceil().max(1.0) as usize;
    let dt = p.horizon / n_steps as f64;
    let samples = p.settings.tube_samples.max(2);
    let stride = ((n_steps as f64) / (samples - 1) as f64).round().max(1.0) as usize;
    let g_arr = rasterize(&p.grid, p.constraint);
    let l_arr = p.target.map(|l| rasterize(&p.grid, l));
    Ok(Prepared {
        g_arr,
        l_arr,
        alpha,
        dt,
        n_steps,
        stride,
    })
}

fn run<M: ControlAffine>(
    p: &ReachAvoidProblem<'_, M>,
    meta: TubeMeta,
) -> Result<ValueTube, SolveError> {
    let prep = prepare(p)?;
    let n = p.grid.num_nodes();
    let terminal: Vec<f64> = match &prep.l_arr {
        Some(l) => l.iter().zip(&prep.g_arr).map(|(a, b)| a.min(*b)).collect(),
        None => prep.g_arr.clone(),
    };
    let mut taus = Vec::new();
    let mut values = Vec::new();
    taus.push(0.0);
    values.extend_from_slice(&terminal);

    let mut prev = terminal;
    let mut next = vec![0.0; n];
    let mut bound = vec![0.0; p.grid.ndim()];
    for k in 0..prep.n_steps {
        let tau_k = k as f64 * prep.dt;
        p.disturbance.bound_into(tau_k, &mut bound);
        lf_step(
            p.model,
            &p.grid,
            &prev,
            &mut next,
            &prep.g_arr,
            prep.l_arr.as_deref(),
            &prep.alpha,
            &bound,
            prep.dt,
        );
        std::mem::swap(&mut prev, &mut next);
        let step = k + 1;
        if prev.iter().any(|v| !v.is_finite()) {
            return Err(SolveError::NonFinite {
                step,
                tau: step as f64 * prep.dt,
            });
        }
        if step == prep.n_steps || step % prep.stride == 0 {
            taus.push(step as f64 * prep.dt);
            values.extend_from_slice(&prev);
        }
    }
    Ok(ValueTube::new(p.grid.clone(), taus, values, meta)?)
}

fn default_meta(dist: &DisturbanceModel) -> TubeMeta {
    let param = dist.tube_param();
    let (d_max, ddot_max) = match dist {
        DisturbanceModel::Fixed(b) => (b.clone(), vec![0.0; b.len()]),
        DisturbanceModel::Schedule(s) => (s.d_max.clone(), s.ddot.clone()),
    };
    TubeMeta {
        param,
        d_max,
        ddot_max,
    }
}

/// Solve the reach-avoid game; the problem must carry a target function.
pub fn solve_reach_avoid<M: ControlAffine>(
    p: &ReachAvoidProblem<'_, M>,
) -> Result<ValueTube, SolveError> {
    if p.target.is_none() {
        return Err(SolveError::BadProblem("reach-avoid solve requires a target"));
    }
    run(p, default_meta(&p.disturbance))
}

/// Solve the avoid game; any target on the problem is rejected so avoid
/// tubes cannot be produced from a reach-avoid setup by accident.
pub fn solve_avoid<M: ControlAffine>(
    p: &ReachAvoidProblem<'_, M>,
) -> Result<ValueTube, SolveError> {
    if p.target.is_some() {
        return Err(SolveError::BadProblem("avoid solve must not carry a target"));
    }
    run(p, default_meta(&p.disturbance))
}

/// Ensemble parameterization: scalar multipliers applied to the spec's rate
/// cap ("rates") or magnitude cap ("bounds").
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleKind {
    Rates,
    Bounds,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub kind: EnsembleKind,
    pub multipliers: Vec<f64>,
}

impl EnsembleSpec {
    /// `k` members at multipliers `{1/k, 2/k, ..., 1}`.
    pub fn evenly_spaced(kind: EnsembleKind, k: usize) -> Self {
        let multipliers = (1..=k).map(|i| i as f64 / k as f64).collect();
        Self { kind, multipliers }
    }

    pub fn validate(&self) -> Result<(), SolveError> {
        let ok = !self.multipliers.is_empty()
            && self
                .multipliers
                .iter()
                .all(|m| (0.0..=1.0).contains(m))
            && self.multipliers.windows(2).all(|w| w[0] < w[1]);
        if ok {
            Ok(())
        } else {
            Err(SolveError::BadEnsemble)
        }
    }

    /// Disturbance model of member `i` under the given spec caps.
    pub fn member_disturbance(
        &self,
        i: usize,
        spec: &DisturbanceSpec,
    ) -> Result<DisturbanceModel, SolveError> {
        let m = self.multipliers[i];
        Ok(match self.kind {
            EnsembleKind::Rates => DisturbanceModel::Schedule(TimeVaryingDisturbanceSet::new(
                spec.d_max.clone(),
                spec.ddot_max.iter().map(|r| m * r).collect(),
            )?),
            EnsembleKind::Bounds => {
                DisturbanceModel::Fixed(spec.d_max.iter().map(|b| m * b).collect())
            }
        })
    }
}

/// Solve one tube per ensemble member, ordered by multiplier. All members
/// share the spec-wide `d_max` as dissipation basis and an identical time
/// step, so slices are comparable sample by sample.
pub fn solve_ensemble<M: ControlAffine>(
    spec: &EnsembleSpec,
    base: &ReachAvoidProblem<'_, M>,
    d_spec: &DisturbanceSpec,
) -> Result<Vec<ValueTube>, SolveError> {
    spec.validate()?;
    if d_spec.dim() != base.model.state_dim() {
        return Err(SolveError::BadProblem("disturbance spec/model dimension mismatch"));
    }
    let members: Vec<(usize, DisturbanceModel)> = (0..spec.multipliers.len())
        .map(|i| Ok((i, spec.member_disturbance(i, d_spec)?)))
        .collect::<Result<_, SolveError>>()?;
    members
        .into_par_iter()
        .map(|(_, dist)| {
            let meta = TubeMeta {
                param: dist.tube_param(),
                d_max: d_spec.d_max.clone(),
                ddot_max: d_spec.ddot_max.clone(),
            };
            let p = ReachAvoidProblem {
                model: base.model,
                constraint: base.constraint,
                target: base.target,
                disturbance: dist,
                grid: base.grid.clone(),
                horizon: base.horizon,
                dt: base.dt,
                settings: SolverSettings {
                    dissipation_bound: Some(d_spec.d_max.clone()),
                    ..base.settings.clone()
                },
            };
            run(&p, meta)
        })
        .collect()
}
