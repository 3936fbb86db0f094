//! Nominal LQR controller for the planar quadrotor.
//!
//! About hover the model is a pair of decoupled double integrators
//! (`p_x'' = g u1`, `p_z'' = u2 - g`), so the infinite-horizon Riccati
//! equation solves per channel in closed form. For `A = [[0,1],[0,0]]`,
//! `B = [0, b]`, `Q = diag(q_p, q_v)`, `R = r`:
//!
//! `k_p = sqrt(q_p / r)`, `k_v = sqrt((2 sqrt(q_p r) / b + q_v) / r)`.
//!
//! The controller ignores obstacles and wind entirely; keeping it safe is
//! the filter's job.

use crate::dynamics::PlanarQuadModel;

#[derive(Debug, Clone)]
pub struct LqrController {
    k_p: [f64; 2],
    k_v: [f64; 2],
    hover: [f64; 2],
    u_lo: [f64; 2],
    u_hi: [f64; 2],
}

impl LqrController {
    /// Gains from `Q = diag(q[0..4])` over `[p_x, p_z, v_x, v_z]` and
    /// `R = diag(r[0..2])`.
    pub fn new(model: &PlanarQuadModel, q: [f64; 4], r: [f64; 2]) -> Self {
        let gains = |q_p: f64, q_v: f64, r: f64, b: f64| {
            let k_p = (q_p / r).sqrt();
            let k_v = ((2.0 * (q_p * r).sqrt() / b + q_v) / r).sqrt();
            (k_p, k_v)
        };
        let (kpx, kvx) = gains(q[0], q[2], r[0], model.gravity);
        let (kpz, kvz) = gains(q[1], q[3], r[1], 1.0);
        Self {
            k_p: [kpx, kpz],
            k_v: [kvx, kvz],
            hover: model.hover(),
            u_lo: model.u_lo,
            u_hi: model.u_hi,
        }
    }

    /// Benchmark weights: cheap vertical authority so the nominal
    /// controller dives into canyons willingly.
    pub fn benchmark_default(model: &PlanarQuadModel) -> Self {
        Self::new(model, [1.0, 1.0, 0.5, 0.5], [10.0, 0.1])
    }

    /// Feedback toward a hover at `goal`, clamped into the control box.
    pub fn control(&self, x: &[f64], goal: [f64; 2]) -> [f64; 2] {
        let u1 = self.hover[0] - (self.k_p[0] * (x[0] - goal[0]) + self.k_v[0] * x[2]);
        let u2 = self.hover[1] - (self.k_p[1] * (x[1] - goal[1]) + self.k_v[1] * x[3]);
        [
            u1.clamp(self.u_lo[0], self.u_hi[0]),
            u2.clamp(self.u_lo[1], self.u_hi[1]),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::ControlAffine;

    fn setup() -> (PlanarQuadModel, LqrController) {
        let model = PlanarQuadModel::default_bounds();
        let lqr = LqrController::benchmark_default(&model);
        (model, lqr)
    }

    #[test]
    fn hover_at_goal() {
        let (model, lqr) = setup();
        let u = lqr.control(&[0.3, 1.2, 0.0, 0.0], [0.3, 1.2]);
        assert_eq!(u, model.hover());
    }

    #[test]
    fn goal_above_pushes_thrust_up() {
        let (model, lqr) = setup();
        let u = lqr.control(&[0.0, 1.0, 0.0, 0.0], [0.0, 2.0]);
        assert!(u[1] > model.hover()[1]);
        assert_eq!(u[0], 0.0);
    }

    #[test]
    fn closed_loop_converges_within_100_steps() {
        let (model, lqr) = setup();
        let dt = 0.025;
        let mut s = 31u64;
        let mut rnd = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..50 {
            let goal = [rnd() * 2.0, 1.5 + rnd() * 0.5];
            let mut x = [goal[0] + rnd() * 0.8, goal[1] + rnd() * 0.8, 0.0, 0.0];
            for _ in 0..100 {
                let u = lqr.control(&x, goal);
                let mut k = [[0.0; 4]; 4];
                let mut probe = x;
                // RK4 without wind.
                let deriv = |x: &[f64; 4], out: &mut [f64; 4]| {
                    model.flow_unchecked(x, &u, &[0.0; 4], out);
                };
                deriv(&probe, &mut k[0]);
                for i in 0..4 {
                    probe[i] = x[i] + 0.5 * dt * k[0][i];
                }
                deriv(&probe, &mut k[1]);
                for i in 0..4 {
                    probe[i] = x[i] + 0.5 * dt * k[1][i];
                }
                deriv(&probe, &mut k[2]);
                for i in 0..4 {
                    probe[i] = x[i] + dt * k[2][i];
                }
                deriv(&probe, &mut k[3]);
                for i in 0..4 {
                    x[i] += dt / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
                }
            }
            let err = ((x[0] - goal[0]).powi(2) + (x[1] - goal[1]).powi(2)).sqrt();
            assert!(err < 0.05, "position error {err} after 100 steps");
        }
    }
}
