//! Closed-loop rollouts and the paired benchmark harness.
//!
//! A rollout integrates the quadrotor at 40 Hz (RK4, zero-order-hold
//! inputs, wind evaluated continuously), samples the disturbance estimator
//! every tenth step, switches goals on a fixed period and terminates on
//! the first constraint violation. The benchmark reruns the same seeded
//! wind fields and goal schedules under every filter mode so that metric
//! differences isolate the filter.

mod env;
mod lqr;

pub use env::{Canyon, Environment, GoalSchedule, Rect};
pub use lqr::LqrController;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{ControlAffine, DisturbanceSpec, PlanarQuadModel};
use crate::filter::{filter_step, FilterConfig, FilterError, FilterMode, QpStatus};
use crate::wind::{DisturbanceEstimator, EstimatorError, WindConfig, WindField};

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("non-finite state at control step {step}")]
    NonFiniteState { step: usize },
    #[error("benchmark needs at least one trajectory")]
    EmptyRun,
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Filter(#[from] FilterError),
}

/// Timing and cadence of one rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    /// Control period, seconds (40 Hz).
    pub control_dt: f64,
    /// Hard step cap per trajectory.
    pub steps: usize,
    /// Goal switch period in control steps.
    pub goal_period: usize,
    /// Estimator cadence in control steps (4 Hz at the default timing).
    pub measure_every: usize,
    /// Estimator rate-history length H.
    pub estimator_horizon: usize,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            control_dt: 0.025,
            steps: 1000,
            goal_period: 100,
            measure_every: 10,
            estimator_horizon: 1,
        }
    }
}

impl RolloutConfig {
    pub fn estimator_period(&self) -> f64 {
        self.control_dt * self.measure_every as f64
    }

    pub fn goals_per_trajectory(&self) -> usize {
        self.steps.div_ceil(self.goal_period)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Completed,
    /// Steps survived before the first constraint violation.
    Crashed(usize),
}

/// One recorded control step (the crash state is appended as a final row).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub state: [f64; 4],
    pub u_nom: [f64; 2],
    pub u_star: [f64; 2],
    pub d_true: [f64; 4],
    pub d_bar: [f64; 4],
    pub rate_bar: [f64; 4],
    pub t_return: f64,
    pub value: f64,
    /// Ensemble member index; -1 when the filter is off.
    pub member: i64,
    pub qp_status: Option<QpStatus>,
    pub goal: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub stream: u64,
    pub outcome: Outcome,
    pub wind: WindField,
    pub goals: Vec<[f64; 2]>,
    pub steps: Vec<StepRecord>,
}

impl TrajectoryRecord {
    /// Steps survived; the cap if no violation occurred.
    pub fn length(&self, cap: usize) -> usize {
        match self.outcome {
            Outcome::Completed => cap,
            Outcome::Crashed(s) => s,
        }
    }
}

/// Shared immutable pieces of one rollout.
pub struct RolloutSetup<'a> {
    pub env: &'a Environment,
    pub model: &'a PlanarQuadModel,
    pub lqr: &'a LqrController,
    pub wind: &'a WindField,
    /// `None` runs the raw nominal controller.
    pub filter: Option<&'a FilterConfig>,
    pub d_spec: &'a DisturbanceSpec,
    /// Horizon used for the estimator's floor rate.
    pub t_max: f64,
    pub goals: &'a GoalSchedule,
    pub config: &'a RolloutConfig,
}

fn rk4_step(
    model: &PlanarQuadModel,
    wind: &WindField,
    x: &[f64; 4],
    u: &[f64; 2],
    dt: f64,
) -> [f64; 4] {
    let deriv = |x: &[f64; 4], out: &mut [f64; 4]| {
        let d = wind.wind_at(x);
        model.flow_unchecked(x, u, &d, out);
    };
    let mut k1 = [0.0; 4];
    let mut k2 = [0.0; 4];
    let mut k3 = [0.0; 4];
    let mut k4 = [0.0; 4];
    let mut probe = *x;
    deriv(&probe, &mut k1);
    for i in 0..4 {
        probe[i] = x[i] + 0.5 * dt * k1[i];
    }
    deriv(&probe, &mut k2);
    for i in 0..4 {
        probe[i] = x[i] + 0.5 * dt * k2[i];
    }
    deriv(&probe, &mut k3);
    for i in 0..4 {
        probe[i] = x[i] + dt * k3[i];
    }
    deriv(&probe, &mut k4);
    let mut out = *x;
    for i in 0..4 {
        out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

fn to_arr4(v: &[f64]) -> [f64; 4] {
    [v[0], v[1], v[2], v[3]]
}

/// Run one deterministic closed-loop trajectory.
pub fn rollout(setup: &RolloutSetup<'_>, stream: u64) -> Result<TrajectoryRecord, SimError> {
    let cfg = setup.config;
    let mut estimator = DisturbanceEstimator::new(
        setup.d_spec,
        cfg.estimator_period(),
        cfg.estimator_horizon,
        setup.t_max,
    );
    let mut x = setup.env.start_state();
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut outcome = Outcome::Completed;

    let record_step = |step: usize,
                           x: &[f64; 4],
                           estimator: &DisturbanceEstimator|
     -> Result<(StepRecord, [f64; 2]), SimError> {
        let t = step as f64 * cfg.control_dt;
        let (d_bar, rate_bar) = estimator.current_estimate()?;
        let goal = setup.goals.active(step);
        let u_nom = setup.lqr.control(x, goal);
        let d_true = setup.wind.wind_at(x);
        let (u_star, t_return, value, member, qp_status) = match setup.filter {
            Some(fc) => {
                let out = filter_step(fc, x, &d_bar, &rate_bar, &u_nom)?;
                assert!(
                    (0..2).all(|j| {
                        out.u_star[j] >= fc.model.u_lo[j] - 1e-9
                            && out.u_star[j] <= fc.model.u_hi[j] + 1e-9
                    }),
                    "filter produced out-of-box input"
                );
                (
                    [out.u_star[0], out.u_star[1]],
                    out.t_return,
                    out.value,
                    out.member_index as i64,
                    Some(out.qp_status),
                )
            }
            None => (u_nom, f64::NAN, f64::NAN, -1, None),
        };
        let rec = StepRecord {
            step,
            t,
            state: *x,
            u_nom,
            u_star,
            d_true: to_arr4(&d_true),
            d_bar: to_arr4(&d_bar),
            rate_bar: to_arr4(&rate_bar),
            t_return,
            value,
            member,
            qp_status,
            goal,
        };
        Ok((rec, u_star))
    };

    for step in 0..cfg.steps {
        if step % cfg.measure_every == 0 {
            let d_true = setup.wind.wind_at(&x);
            estimator.measure(&d_true, step as f64 * cfg.control_dt)?;
        }
        let (rec, u_star) = record_step(step, &x, &estimator)?;
        steps.push(rec);
        x = rk4_step(setup.model, setup.wind, &x, &u_star, cfg.control_dt);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(SimError::NonFiniteState { step: step + 1 });
        }
        if setup.env.constraint_g(&x) <= 0.0 {
            let (rec, _) = record_step(step + 1, &x, &estimator)?;
            steps.push(rec);
            outcome = Outcome::Crashed(step + 1);
            break;
        }
    }

    Ok(TrajectoryRecord {
        stream,
        outcome,
        wind: setup.wind.clone(),
        goals: setup.goals.goals.clone(),
        steps,
    })
}

/// Aggregates over one batch of rollouts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkMetrics {
    /// Fraction of trajectories that hit the failure set.
    pub pct_violations: f64,
    /// Mean over goals of the minimum position distance achieved to each
    /// goal over the whole trajectory; goals never approached keep large
    /// distances, so early crashes are penalized.
    pub mean_goal_distance: f64,
    /// Mean steps survived, capped by the step limit.
    pub mean_traj_length: f64,
}

pub fn metrics(records: &[TrajectoryRecord], step_cap: usize) -> BenchmarkMetrics {
    let n = records.len() as f64;
    let crashed = records
        .iter()
        .filter(|r| matches!(r.outcome, Outcome::Crashed(_)))
        .count() as f64;
    let mut dist_sum = 0.0;
    let mut dist_n = 0usize;
    for rec in records {
        for goal in &rec.goals {
            let best = rec
                .steps
                .iter()
                .map(|s| {
                    ((s.state[0] - goal[0]).powi(2) + (s.state[1] - goal[1]).powi(2)).sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            dist_sum += best;
            dist_n += 1;
        }
    }
    let length_sum: usize = records.iter().map(|r| r.length(step_cap)).sum();
    BenchmarkMetrics {
        pct_violations: crashed / n,
        mean_goal_distance: dist_sum / dist_n as f64,
        mean_traj_length: length_sum as f64 / n,
    }
}

/// Environment-level inputs shared by every benchmark mode.
pub struct BenchmarkSetup<'a> {
    pub env: &'a Environment,
    pub model: &'a PlanarQuadModel,
    pub lqr: &'a LqrController,
    pub wind: &'a WindConfig,
    pub d_spec: &'a DisturbanceSpec,
    pub t_max: f64,
    pub rollout: &'a RolloutConfig,
}

#[derive(Debug)]
pub struct ModeResult {
    pub mode: FilterMode,
    pub metrics: BenchmarkMetrics,
    pub records: Vec<TrajectoryRecord>,
}

/// Per-trajectory deterministic draw: trajectory `i` always sees the same
/// wind field and goal schedule, whatever the filter mode.
fn draw_trajectory_inputs(
    setup: &BenchmarkSetup<'_>,
    seed: u64,
    index: usize,
) -> (WindField, GoalSchedule) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    let wind = setup.wind.sample(&mut rng, setup.env.canyon_ranges());
    let goals = GoalSchedule::sample(
        setup.env,
        &mut rng,
        setup.rollout.goals_per_trajectory(),
        setup.rollout.goal_period,
    );
    (wind, goals)
}

/// Run `n_traj` paired rollouts for every provided filter configuration.
pub fn run_benchmark(
    setup: &BenchmarkSetup<'_>,
    filters: &[&FilterConfig],
    n_traj: usize,
    seed: u64,
) -> Result<Vec<ModeResult>, SimError> {
    if n_traj == 0 {
        return Err(SimError::EmptyRun);
    }
    filters
        .iter()
        .map(|fc| {
            let records: Result<Vec<TrajectoryRecord>, SimError> = (0..n_traj)
                .into_par_iter()
                .map(|i| {
                    let (wind, goals) = draw_trajectory_inputs(setup, seed, i);
                    let rs = RolloutSetup {
                        env: setup.env,
                        model: setup.model,
                        lqr: setup.lqr,
                        wind: &wind,
                        filter: Some(fc),
                        d_spec: setup.d_spec,
                        t_max: setup.t_max,
                        goals: &goals,
                        config: setup.rollout,
                    };
                    rollout(&rs, i as u64)
                })
                .collect();
            let records = records?;
            Ok(ModeResult {
                mode: fc.mode,
                metrics: metrics(&records, setup.rollout.steps),
                records,
            })
        })
        .collect()
}

/// Trace CSV: one row per recorded step.
pub fn write_trace_csv<W: std::io::Write>(
    rec: &TrajectoryRecord,
    w: &mut W,
) -> std::io::Result<()> {
    writeln!(
        w,
        "step,t,p_x,p_z,v_x,v_z,u_nom_1,u_nom_2,u_star_1,u_star_2,\
         d_true_1,d_true_2,d_true_3,d_true_4,d_bar_1,d_bar_2,d_bar_3,d_bar_4,\
         rate_bar_1,rate_bar_2,rate_bar_3,rate_bar_4,t_return,value,member,qp_status,goal_x,goal_z"
    )?;
    for s in &rec.steps {
        let status = s.qp_status.map_or("off", |q| q.as_str());
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.step,
            s.t,
            s.state[0],
            s.state[1],
            s.state[2],
            s.state[3],
            s.u_nom[0],
            s.u_nom[1],
            s.u_star[0],
            s.u_star[1],
            s.d_true[0],
            s.d_true[1],
            s.d_true[2],
            s.d_true[3],
            s.d_bar[0],
            s.d_bar[1],
            s.d_bar[2],
            s.d_bar[3],
            s.rate_bar[0],
            s.rate_bar[1],
            s.rate_bar[2],
            s.rate_bar[3],
            s.t_return,
            s.value,
            s.member,
            status,
            s.goal[0],
            s.goal[1],
        )?;
    }
    Ok(())
}
