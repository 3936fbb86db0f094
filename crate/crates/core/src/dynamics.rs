//! Control- and disturbance-affine dynamics and the analytic optimization
//! of their Hamiltonian over box-bounded inputs.
//!
//! All models here have the form `xdot = f(x) + g(x) u + d` with `u` in an
//! axis-aligned box and `d` in a 0-centered box of per-dimension half-widths.
//! For that structure the game Hamiltonian `H = max_u min_d lambda^T xdot`
//! optimizes channel by channel: the control maximizer sits at a box vertex
//! and the disturbance minimizer is `-sign(lambda) * half_width`.

use serde::{Deserialize, Serialize};

use crate::grid::RectGrid;

/// Standard gravity, m/s^2.
pub const GRAVITY: f64 = 9.81;

/// Stack scratch cap; matches the grid dimensionality cap.
const MAX_DIM: usize = crate::grid::MAX_NDIM;

#[derive(Debug, thiserror::Error)]
pub enum DynamicsError {
    #[error("control channel {channel} value {value} outside [{lo}, {hi}]")]
    ControlOutOfBounds {
        channel: usize,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("non-finite input")]
    NonFinite,
    #[error("negative bound on dim {dim}: {value}")]
    NegativeBound { dim: usize, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
}

/// Control-affine, disturbance-affine dynamics with box-bounded control.
pub trait ControlAffine: Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn control_lo(&self) -> &[f64];
    fn control_hi(&self) -> &[f64];

    /// Drift term f(x).
    fn drift(&self, x: &[f64], out: &mut [f64]);

    /// Column `j` of g(x).
    fn control_column(&self, x: &[f64], j: usize, out: &mut [f64]);

    /// `lambda^T g(x)` per control channel.
    fn coupling(&self, x: &[f64], lambda: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        let mut col = [0.0; MAX_DIM];
        for (j, o) in out.iter_mut().enumerate().take(self.control_dim()) {
            self.control_column(x, j, &mut col[..n]);
            *o = dot(lambda, &col[..n]);
        }
    }

    /// Full flow f(x) + g(x) u + d without checking `u` against the box.
    fn flow_unchecked(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        let n = self.state_dim();
        self.drift(x, out);
        let mut col = [0.0; MAX_DIM];
        for j in 0..self.control_dim() {
            self.control_column(x, j, &mut col[..n]);
            for i in 0..n {
                out[i] += col[i] * u[j];
            }
        }
        for i in 0..n {
            out[i] += d[i];
        }
    }

    /// Flow with the control validated against the box (tiny roundoff slack).
    fn flow(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>, DynamicsError> {
        if x.iter().chain(u).chain(d).any(|v| !v.is_finite()) {
            return Err(DynamicsError::NonFinite);
        }
        let (lo, hi) = (self.control_lo(), self.control_hi());
        for j in 0..self.control_dim() {
            let slack = 1e-9 * (hi[j] - lo[j]).abs().max(1.0);
            if u[j] < lo[j] - slack || u[j] > hi[j] + slack {
                return Err(DynamicsError::ControlOutOfBounds {
                    channel: j,
                    value: u[j],
                    lo: lo[j],
                    hi: hi[j],
                });
            }
        }
        let mut out = vec![0.0; self.state_dim()];
        self.flow_unchecked(x, u, d, &mut out);
        Ok(out)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Game Hamiltonian `max_u min_d lambda^T (f(x) + g(x) u + d)` for `u` in
/// the model's control box and `|d_i| <= d_bound[i]`.
pub fn hamiltonian<M: ControlAffine + ?Sized>(
    model: &M,
    lambda: &[f64],
    x: &[f64],
    d_bound: &[f64],
) -> f64 {
    let n = model.state_dim();
    let mut f = [0.0; MAX_DIM];
    model.drift(x, &mut f[..n]);
    let mut h = dot(lambda, &f[..n]);
    let mut c = [0.0; MAX_DIM];
    model.coupling(x, lambda, &mut c[..model.control_dim()]);
    let (lo, hi) = (model.control_lo(), model.control_hi());
    for j in 0..model.control_dim() {
        h += (c[j] * lo[j]).max(c[j] * hi[j]);
    }
    for i in 0..n {
        h -= lambda[i].abs() * d_bound[i];
    }
    h
}

/// Maximizing control `argmax_u min_d lambda^T xdot`: the box vertex picked
/// by the sign of `lambda^T g(x)` per channel, box midpoint on an exact tie.
pub fn optimal_control<M: ControlAffine + ?Sized>(model: &M, lambda: &[f64], x: &[f64]) -> Vec<f64> {
    let mut c = [0.0; MAX_DIM];
    model.coupling(x, lambda, &mut c[..model.control_dim()]);
    let (lo, hi) = (model.control_lo(), model.control_hi());
    (0..model.control_dim())
        .map(|j| {
            if c[j] > 0.0 {
                hi[j]
            } else if c[j] < 0.0 {
                lo[j]
            } else {
                0.5 * (lo[j] + hi[j])
            }
        })
        .collect()
}

/// Minimizing disturbance over the 0-centered box: `-sign(lambda_i) * b_i`,
/// zero where the costate component is zero.
pub fn worst_case_disturbance(lambda: &[f64], d_bound: &[f64]) -> Vec<f64> {
    lambda
        .iter()
        .zip(d_bound)
        .map(|(&l, &b)| {
            if l > 0.0 {
                -b
            } else if l < 0.0 {
                b
            } else {
                0.0
            }
        })
        .collect()
}

/// Per-dimension bound on `|dH/dlambda_i|` over the grid box:
/// `max_x |f_i(x)| + max_u |(g(x) u)_i| + d_bound[i]`, with the maxima over
/// `x` taken at the grid corners. Exact when f and g are affine in the
/// state, which holds for every model in this crate.
pub fn dissipation_bounds<M: ControlAffine + ?Sized>(
    model: &M,
    grid: &RectGrid,
    d_bound: &[f64],
) -> Vec<f64> {
    let n = model.state_dim();
    assert_eq!(grid.ndim(), n, "grid/model dimension mismatch");
    let (lo, hi) = (model.control_lo(), model.control_hi());
    let mut alpha = vec![0.0; n];
    let mut x = [0.0; MAX_DIM];
    let mut f = [0.0; MAX_DIM];
    let mut col = [0.0; MAX_DIM];
    for corner in 0..(1usize << n) {
        for i in 0..n {
            x[i] = if corner & (1 << i) != 0 {
                grid.hi()[i]
            } else {
                grid.lo()[i]
            };
        }
        model.drift(&x[..n], &mut f[..n]);
        // max_u |(g u)_i| = max(|sum_j max terms|, |sum_j min terms|)
        let mut gmax = [0.0; MAX_DIM];
        let mut gmin = [0.0; MAX_DIM];
        for j in 0..model.control_dim() {
            model.control_column(&x[..n], j, &mut col[..n]);
            for i in 0..n {
                gmax[i] += (col[i] * lo[j]).max(col[i] * hi[j]);
                gmin[i] += (col[i] * lo[j]).min(col[i] * hi[j]);
            }
        }
        for i in 0..n {
            let reach = f[i].abs() + gmax[i].abs().max(gmin[i].abs());
            if reach > alpha[i] {
                alpha[i] = reach;
            }
        }
    }
    for i in 0..n {
        alpha[i] += d_bound[i];
    }
    alpha
}

/// Max flow norm over the state box, control box and disturbance box; the
/// dynamics bound used to convert a spatial Lipschitz constant into a
/// disturbance rate cap.
pub fn flow_norm_bound<M: ControlAffine + ?Sized>(
    model: &M,
    state_lo: &[f64],
    state_hi: &[f64],
    d_max: &[f64],
) -> f64 {
    let n = model.state_dim();
    let p = model.control_dim();
    let (ulo, uhi) = (model.control_lo(), model.control_hi());
    let mut best = 0.0f64;
    let mut x = [0.0; MAX_DIM];
    let mut u = [0.0; MAX_DIM];
    let mut dx = [0.0; MAX_DIM];
    let zero_d = [0.0; MAX_DIM];
    for xc in 0..(1usize << n) {
        for i in 0..n {
            x[i] = if xc & (1 << i) != 0 { state_hi[i] } else { state_lo[i] };
        }
        for uc in 0..(1usize << p) {
            for j in 0..p {
                u[j] = if uc & (1 << j) != 0 { uhi[j] } else { ulo[j] };
            }
            model.flow_unchecked(&x[..n], &u[..p], &zero_d[..n], &mut dx[..n]);
            let norm_sq: f64 = (0..n).map(|i| (dx[i].abs() + d_max[i]).powi(2)).sum();
            best = best.max(norm_sq.sqrt());
        }
    }
    best
}

/// Planar quadrotor: state `[p_x, p_z, v_x, v_z]`, controls `[u1, u2]`
/// (thrust tilt and vertical thrust), additive disturbance on every state:
///
/// `xdot = [v_x + d1, v_z + d2, g u1 + d3, u2 - g + d4]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarQuadModel {
    pub gravity: f64,
    pub u_lo: [f64; 2],
    pub u_hi: [f64; 2],
}

impl PlanarQuadModel {
    pub fn new(u_lo: [f64; 2], u_hi: [f64; 2]) -> Result<Self, DynamicsError> {
        for j in 0..2 {
            if !(u_lo[j] < u_hi[j]) {
                return Err(DynamicsError::ControlOutOfBounds {
                    channel: j,
                    value: u_lo[j],
                    lo: u_lo[j],
                    hi: u_hi[j],
                });
            }
        }
        Ok(Self {
            gravity: GRAVITY,
            u_lo,
            u_hi,
        })
    }

    /// Default authority: peak horizontal acceleration ~2.45 m/s^2 and
    /// +-4 m/s^2 vertical about hover.
    pub fn default_bounds() -> Self {
        Self::new([-0.25, 5.81], [0.25, 13.81]).unwrap()
    }

    /// Hover input: zero tilt, thrust canceling gravity.
    pub fn hover(&self) -> [f64; 2] {
        [0.0, self.gravity]
    }
}

impl ControlAffine for PlanarQuadModel {
    fn state_dim(&self) -> usize {
        4
    }

    fn control_dim(&self) -> usize {
        2
    }

    fn control_lo(&self) -> &[f64] {
        &self.u_lo
    }

    fn control_hi(&self) -> &[f64] {
        &self.u_hi
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[2];
        out[1] = x[3];
        out[2] = 0.0;
        out[3] = -self.gravity;
    }

    fn control_column(&self, _x: &[f64], j: usize, out: &mut [f64]) {
        out.fill(0.0);
        match j {
            0 => out[2] = self.gravity,
            _ => out[3] = 1.0,
        }
    }
}

/// Double integrator test problem: `x1dot = x2`, `x2dot = u`,
/// `|u| <= u_max`.
#[derive(Debug, Clone)]
pub struct DoubleIntegrator {
    u_lo: [f64; 1],
    u_hi: [f64; 1],
}

impl DoubleIntegrator {
    pub fn new(u_max: f64) -> Self {
        Self {
            u_lo: [-u_max],
            u_hi: [u_max],
        }
    }
}

impl ControlAffine for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn control_lo(&self) -> &[f64] {
        &self.u_lo
    }

    fn control_hi(&self) -> &[f64] {
        &self.u_hi
    }

    fn drift(&self, x: &[f64], out: &mut [f64]) {
        out[0] = x[1];
        out[1] = 0.0;
    }

    fn control_column(&self, _x: &[f64], _j: usize, out: &mut [f64]) {
        out[0] = 0.0;
        out[1] = 1.0;
    }
}

/// Disturbance magnitude and rate caps of the operational domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceSpec {
    pub d_max: Vec<f64>,
    pub ddot_max: Vec<f64>,
}

impl DisturbanceSpec {
    pub fn new(d_max: Vec<f64>, ddot_max: Vec<f64>) -> Result<Self, DynamicsError> {
        if d_max.len() != ddot_max.len() {
            return Err(DynamicsError::DimMismatch {
                expected: d_max.len(),
                got: ddot_max.len(),
            });
        }
        for (dim, &v) in d_max.iter().chain(ddot_max.iter()).enumerate() {
            if !(v >= 0.0) {
                return Err(DynamicsError::NegativeBound {
                    dim: dim % d_max.len(),
                    value: v,
                });
            }
        }
        Ok(Self { d_max, ddot_max })
    }

    /// Rate cap from the field's spatial Lipschitz constant and the dynamics
    /// bound: `ddot_max = l_d * m_f` on every dimension.
    pub fn from_lipschitz(d_max: Vec<f64>, l_d: f64, m_f: f64) -> Result<Self, DynamicsError> {
        let ddot = vec![l_d * m_f; d_max.len()];
        Self::new(d_max, ddot)
    }

    pub fn dim(&self) -> usize {
        self.d_max.len()
    }
}

/// Disturbance box whose half-width shrinks with time-to-go `tau` at a
/// fixed per-dimension rate: `bound(tau) = max(0, d_max - tau * ddot)`.
/// At `tau = 0` (the end of the horizon) the bound is the full `d_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeVaryingDisturbanceSet {
    pub d_max: Vec<f64>,
    pub ddot: Vec<f64>,
}

impl TimeVaryingDisturbanceSet {
    pub fn new(d_max: Vec<f64>, ddot: Vec<f64>) -> Result<Self, DynamicsError> {
        if d_max.len() != ddot.len() {
            return Err(DynamicsError::DimMismatch {
                expected: d_max.len(),
                got: ddot.len(),
            });
        }
        for (dim, &v) in d_max.iter().chain(ddot.iter()).enumerate() {
            if !(v >= 0.0) {
                return Err(DynamicsError::NegativeBound {
                    dim: dim % d_max.len(),
                    value: v,
                });
            }
        }
        Ok(Self { d_max, ddot })
    }

    pub fn bound_into(&self, tau: f64, out: &mut [f64]) {
        for i in 0..self.d_max.len() {
            out[i] = (self.d_max[i] - tau * self.ddot[i]).max(0.0);
        }
    }

    pub fn bound(&self, tau: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.d_max.len()];
        self.bound_into(tau, &mut out);
        out
    }
}

/// Base model with the disturbance rate appended as frozen state: the
/// augmented state is `z = [x, ddot]` and the appended rows have zero
/// derivative, so each fixed rate is one slice of the augmented system.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    pub base: PlanarQuadModel,
    pub ddot: Vec<f64>,
}

impl AugmentedModel {
    pub fn new(base: PlanarQuadModel, ddot: Vec<f64>) -> Self {
        Self { base, ddot }
    }

    pub fn augmented_state(&self, x: &[f64]) -> Vec<f64> {
        let mut z = x.to_vec();
        z.extend_from_slice(&self.ddot);
        z
    }
}

impl ControlAffine for AugmentedModel {
    fn state_dim(&self) -> usize {
        self.base.state_dim() + self.ddot.len()
    }

    fn control_dim(&self) -> usize {
        self.base.control_dim()
    }

    fn control_lo(&self) -> &[f64] {
        self.base.control_lo()
    }

    fn control_hi(&self) -> &[f64] {
        self.base.control_hi()
    }

    fn drift(&self, z: &[f64], out: &mut [f64]) {
        let n = self.base.state_dim();
        self.base.drift(&z[..n], &mut out[..n]);
        out[n..].fill(0.0);
    }

    fn control_column(&self, z: &[f64], j: usize, out: &mut [f64]) {
        let n = self.base.state_dim();
        self.base.control_column(&z[..n], j, &mut out[..n]);
        out[n..].fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn quad() -> PlanarQuadModel {
        PlanarQuadModel::default_bounds()
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let m = quad();
        let dx = m.flow(&[0.0, 0.0, 0.0, 0.0], &[0.0, 9.81], &[0.0; 4]).unwrap();
        assert_eq!(dx, vec![0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn pure_drift_carries_velocity() {
        let m = quad();
        let dx = m.flow(&[0.0, 0.0, 1.0, 0.0], &[0.0, 9.81], &[0.0; 4]).unwrap();
        assert_eq!(dx, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn flow_substitution() {
        let m = quad();
        let d = [0.5, -0.5, 0.5, -0.5];
        let dx = m.flow(&[0.0; 4], &[0.1, 9.81], &d).unwrap();
        assert!((dx[0] - 0.5).abs() < 1e-15);
        assert!((dx[1] + 0.5).abs() < 1e-15);
        assert!((dx[2] - (0.981 + 0.5)).abs() < 1e-12);
        assert!((dx[3] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn flow_rejects_out_of_box_control() {
        let m = quad();
        assert!(matches!(
            m.flow(&[0.0; 4], &[0.3, 9.81], &[0.0; 4]),
            Err(DynamicsError::ControlOutOfBounds { channel: 0, .. })
        ));
        assert!(m.flow(&[0.0; 4], &[0.25, 13.81], &[0.0; 4]).is_ok());
    }

    #[test]
    fn hamiltonian_zero_costate_is_zero() {
        let m = quad();
        assert_eq!(hamiltonian(&m, &[0.0; 4], &[0.3, 1.0, -0.5, 0.2], &[0.75; 4]), 0.0);
    }

    /// Scalar `xdot = u`, `u` in [-1, 1].
    struct Scalar;

    impl ControlAffine for Scalar {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn control_lo(&self) -> &[f64] {
            &[-1.0]
        }
        fn control_hi(&self) -> &[f64] {
            &[1.0]
        }
        fn drift(&self, _x: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn control_column(&self, _x: &[f64], _j: usize, out: &mut [f64]) {
            out[0] = 1.0;
        }
    }

    #[test]
    fn scalar_hamiltonian_hits_vertex() {
        assert_eq!(hamiltonian(&Scalar, &[2.0], &[0.0], &[0.0]), 2.0);
    }

    #[test]
    fn optimal_control_follows_coupling_sign() {
        let m = quad();
        let u = optimal_control(&m, &[0.0, 0.0, 1.0, 0.0], &[0.0; 4]);
        assert_eq!(u, vec![m.u_hi[0], 0.5 * (m.u_lo[1] + m.u_hi[1])]);
        let u = optimal_control(&m, &[0.0, 0.0, 0.0, -1.0], &[0.0; 4]);
        assert_eq!(u[1], m.u_lo[1]);
    }

    #[test]
    fn worst_case_disturbance_signs_and_clip() {
        let d = worst_case_disturbance(&[1.0, -1.0, 0.0, 2.0], &[0.5; 4]);
        assert_eq!(d, vec![-0.5, 0.5, 0.0, -0.5]);
        assert_eq!(worst_case_disturbance(&[1.0, -3.0], &[0.0; 2]), vec![0.0, 0.0]);
    }

    #[test]
    fn worst_case_payoff_identity() {
        let lambda = [0.3, -2.0, 0.0, 1.7];
        let b = [0.75, 0.4, 0.1, 0.9];
        let d = worst_case_disturbance(&lambda, &b);
        let payoff: f64 = lambda.iter().zip(&d).map(|(l, di)| l * di).sum();
        let expect: f64 = -lambda.iter().zip(&b).map(|(l, bi)| l.abs() * bi).sum::<f64>();
        assert_eq!(payoff, expect);
    }

    /// Exhaustive max-min over sampled boxes. The disturbance objective is
    /// additive across dimensions, so the per-dimension minimization equals
    /// the minimization over the full sampled product box.
    fn brute_hamiltonian(
        m: &impl ControlAffine,
        lambda: &[f64],
        x: &[f64],
        d_bound: &[f64],
        samples: usize,
    ) -> f64 {
        let n = m.state_dim();
        let p = m.control_dim();
        let mut f = vec![0.0; n];
        m.drift(x, &mut f);
        let base: f64 = lambda.iter().zip(&f).map(|(l, fi)| l * fi).sum();
        let d_term: f64 = (0..n)
            .map(|i| {
                (0..samples)
                    .map(|k| {
                        let di = -d_bound[i]
                            + 2.0 * d_bound[i] * k as f64 / (samples - 1) as f64;
                        lambda[i] * di
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        let mut coup = vec![0.0; p];
        m.coupling(x, lambda, &mut coup);
        let mut grid = vec![0usize; p];
        let mut best = f64::NEG_INFINITY;
        loop {
            let u_term: f64 = (0..p)
                .map(|j| {
                    let u = m.control_lo()[j]
                        + (m.control_hi()[j] - m.control_lo()[j]) * grid[j] as f64
                            / (samples - 1) as f64;
                    coup[j] * u
                })
                .sum();
            best = best.max(u_term);
            let mut j = 0;
            loop {
                if j == p {
                    return base + best + d_term;
                }
                grid[j] += 1;
                if grid[j] < samples {
                    break;
                }
                grid[j] = 0;
                j += 1;
            }
        }
    }

    #[test]
    fn hamiltonian_matches_brute_force() {
        let m = quad();
        let mut s = 7u64;
        let mut rnd = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        for _ in 0..100 {
            let lambda = [rnd() * 3.0, rnd() * 3.0, rnd() * 3.0, rnd() * 3.0];
            let x = [rnd() * 4.0, rnd(), rnd() * 1.9, rnd() * 1.9];
            let b = [rnd().abs(), rnd().abs(), rnd().abs(), rnd().abs()];
            let exact = hamiltonian(&m, &lambda, &x, &b);
            let brute = brute_hamiltonian(&m, &lambda, &x, &b, 21);
            assert!(
                (exact - brute).abs() < 1e-9,
                "H mismatch {exact} vs {brute}"
            );
        }
    }

    #[test]
    fn optimal_control_beats_every_vertex() {
        let m = quad();
        let mut s = 99u64;
        let mut rnd = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
        };
        let b = [0.75; 4];
        for _ in 0..200 {
            let lambda = [rnd(), rnd(), rnd(), rnd()];
            let x = [rnd(), rnd(), rnd(), rnd()];
            let u_star = optimal_control(&m, &lambda, &x);
            let payoff = |u: &[f64]| {
                let dw = worst_case_disturbance(&lambda, &b);
                let mut dx = [0.0; 4];
                m.flow_unchecked(&x, u, &dw, &mut dx);
                lambda.iter().zip(&dx).map(|(l, d)| l * d).sum::<f64>()
            };
            let star = payoff(&u_star);
            for vertex in 0..4 {
                let u = [
                    if vertex & 1 != 0 { m.u_hi[0] } else { m.u_lo[0] },
                    if vertex & 2 != 0 { m.u_hi[1] } else { m.u_lo[1] },
                ];
                assert!(star >= payoff(&u) - 1e-12);
            }
        }
    }

    #[test]
    fn augmented_rows_are_frozen() {
        let aug = AugmentedModel::new(quad(), vec![0.3, 0.3, 0.3, 0.3]);
        let z = aug.augmented_state(&[1.0, 2.0, 0.5, -0.5]);
        assert_eq!(z.len(), 8);
        let dz = aug.flow(&z, &[0.1, 9.0], &[0.2, 0.0, 0.0, -0.2, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(&dz[4..], &[0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tv_set_bound_shrinks_with_tau() {
        let s = TimeVaryingDisturbanceSet::new(vec![0.75; 2], vec![1.5; 2]).unwrap();
        assert_eq!(s.bound(0.0), vec![0.75, 0.75]);
        assert_eq!(s.bound(0.25), vec![0.375, 0.375]);
        assert_eq!(s.bound(10.0), vec![0.0, 0.0]);
    }

    #[test]
    fn disturbance_spec_from_lipschitz() {
        let s = DisturbanceSpec::from_lipschitz(vec![0.75; 4], 0.5, 3.0).unwrap();
        assert_eq!(s.ddot_max, vec![1.5; 4]);
        assert!(DisturbanceSpec::new(vec![-1.0], vec![0.0]).is_err());
    }

    #[test]
    fn flow_norm_bound_dominates_samples() {
        let m = quad();
        let lo = [-4.0, 0.0, -1.9, -1.9];
        let hi = [4.0, 2.5, 1.9, 1.9];
        let bound = flow_norm_bound(&m, &lo, &hi, &[0.75; 4]);
        let mut s = 5u64;
        let mut rnd = || {
            s ^= s << 13;
            s ^= s >> 7;
            s ^= s << 17;
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..500 {
            let x: Vec<f64> = (0..4).map(|i| lo[i] + (hi[i] - lo[i]) * rnd()).collect();
            let u = [
                m.u_lo[0] + (m.u_hi[0] - m.u_lo[0]) * rnd(),
                m.u_lo[1] + (m.u_hi[1] - m.u_lo[1]) * rnd(),
            ];
            let d: Vec<f64> = (0..4).map(|_| (rnd() * 2.0 - 1.0) * 0.75).collect();
            let dx = m.flow(&x, &u, &d).unwrap();
            let norm = dx.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm <= bound + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn hamiltonian_monotone_in_disturbance_box(
            lambda in proptest::array::uniform4(-3.0f64..3.0),
            x in proptest::array::uniform4(-2.0f64..2.0),
            b in proptest::array::uniform4(0.0f64..1.0),
            grow in proptest::array::uniform4(0.0f64..1.0),
        ) {
            let m = quad();
            let bigger: Vec<f64> = b.iter().zip(&grow).map(|(a, g)| a + g).collect();
            let h_small = hamiltonian(&m, &lambda, &x, &b);
            let h_big = hamiltonian(&m, &lambda, &x, &bigger);
            prop_assert!(h_big <= h_small + 1e-12);
        }

        #[test]
        fn hamiltonian_positively_homogeneous(
            lambda in proptest::array::uniform4(-3.0f64..3.0),
            x in proptest::array::uniform4(-2.0f64..2.0),
            alpha in 0.01f64..10.0,
        ) {
            let m = quad();
            let b = [0.75; 4];
            let scaled: Vec<f64> = lambda.iter().map(|l| alpha * l).collect();
            let lhs = hamiltonian(&m, &scaled, &x, &b);
            let rhs = alpha * hamiltonian(&m, &lambda, &x, &b);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }

        #[test]
        fn optimal_control_is_vertex_or_midpoint(
            lambda in proptest::array::uniform4(-3.0f64..3.0),
        ) {
            let m = quad();
            let u = optimal_control(&m, &lambda, &[0.0; 4]);
            for j in 0..2 {
                let mid = 0.5 * (m.u_lo[j] + m.u_hi[j]);
                prop_assert!(u[j] == m.u_lo[j] || u[j] == m.u_hi[j] || u[j] == mid);
            }
        }

        #[test]
        fn worst_case_never_beaten_by_samples(
            lambda in proptest::array::uniform4(-2.0f64..2.0),
            raw in proptest::collection::vec(-1.0f64..1.0, 64),
        ) {
            let b = [0.75, 0.4, 0.9, 0.2];
            let d_star = worst_case_disturbance(&lambda, &b);
            let best: f64 = lambda.iter().zip(&d_star).map(|(l, d)| l * d).sum();
            for chunk in raw.chunks(4) {
                let payoff: f64 = (0..4).map(|i| lambda[i] * chunk[i] * b[i]).sum();
                prop_assert!(best <= payoff + 1e-12);
            }
        }
    }
}
