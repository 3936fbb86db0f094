//! Cityscape geometry: buildings, flight boundary, flyover target, signed
//! constraint/target functions and goal scheduling.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle in the p_x/p_z plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Rect {
    pub fn new(lo: [f64; 2], hi: [f64; 2]) -> Self {
        Self { lo, hi }
    }

    pub fn center(&self) -> [f64; 2] {
        [
            0.5 * (self.lo[0] + self.hi[0]),
            0.5 * (self.lo[1] + self.hi[1]),
        ]
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        p[0] >= self.lo[0] && p[0] <= self.hi[0] && p[1] >= self.lo[1] && p[1] <= self.hi[1]
    }

    /// Exact signed distance: negative inside, positive outside.
    pub fn sdf(&self, p: [f64; 2]) -> f64 {
        let he = [0.5 * (self.hi[0] - self.lo[0]), 0.5 * (self.hi[1] - self.lo[1])];
        let c = self.center();
        let q = [(p[0] - c[0]).abs() - he[0], (p[1] - c[1]).abs() - he[1]];
        let outside = (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2)).sqrt();
        outside + q[0].max(q[1]).min(0.0)
    }
}

/// One vertical canyon between structures: x-interval plus the rim height
/// of the lower flanking structure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Canyon {
    pub x_lo: f64,
    pub x_hi: f64,
    pub rim: f64,
    pub floor: f64,
}

impl Canyon {
    pub fn x_range(&self) -> (f64, f64) {
        (self.x_lo, self.x_hi)
    }
}

/// Static environment: grid domain, flight boundary, buildings, flyover
/// target with its tighter velocity box, and the velocity limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    /// Full state-grid extent in position.
    pub domain: Rect,
    /// Keep-in box; leaving it is a failure.
    pub boundary: Rect,
    /// Symmetric velocity limit per axis; exceeding it is a failure.
    pub velocity_limit: f64,
    pub buildings: Vec<Rect>,
    /// Flyover target region.
    pub target: Rect,
    /// Symmetric velocity limit inside the target.
    pub target_velocity: f64,
}

impl Environment {
    /// The benchmark cityscape: three buildings, a flyover corridor above
    /// them, tight velocity limits.
    pub fn city_default() -> Self {
        Self {
            domain: Rect::new([-5.0, -0.2], [5.0, 2.8]),
            boundary: Rect::new([-4.0, 0.0], [4.0, 2.5]),
            velocity_limit: 1.9,
            buildings: vec![
                Rect::new([-3.1, 0.0], [-1.3, 1.5]),
                Rect::new([0.0, 0.0], [1.2, 1.0]),
                Rect::new([2.0, 0.0], [3.2, 2.0]),
            ],
            target: Rect::new([-2.5, 1.7], [1.5, 2.3]),
            target_velocity: 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        for (i, b) in self.buildings.iter().enumerate() {
            if !(b.lo[0] < b.hi[0] && b.lo[1] < b.hi[1]) {
                return Err(format!("building {i} is degenerate"));
            }
            if b.sdf(self.target.center()) < 0.0 {
                return Err(format!("building {i} overlaps the target"));
            }
        }
        if self.boundary.sdf(self.target.center()) >= 0.0 {
            return Err("target lies outside the boundary".into());
        }
        if !(self.velocity_limit > 0.0 && self.target_velocity > 0.0) {
            return Err("velocity limits must be positive".into());
        }
        Ok(())
    }

    fn velocity_box(&self) -> Rect {
        Rect::new(
            [-self.velocity_limit, -self.velocity_limit],
            [self.velocity_limit, self.velocity_limit],
        )
    }

    /// Signed constraint over the full state `[p_x, p_z, v_x, v_z]`:
    /// negative inside a building, outside the boundary, or outside the
    /// velocity box.
    pub fn constraint_g(&self, x: &[f64]) -> f64 {
        let p = [x[0], x[1]];
        let v = [x[2], x[3]];
        let mut g = -self.boundary.sdf(p);
        for b in &self.buildings {
            g = g.min(b.sdf(p));
        }
        g.min(-self.velocity_box().sdf(v))
    }

    /// Signed target function: positive inside the flyover box with
    /// velocity inside the target's velocity box.
    pub fn target_l(&self, x: &[f64]) -> f64 {
        let p = [x[0], x[1]];
        let v = [x[2], x[3]];
        let vel_box = Rect::new(
            [-self.target_velocity, -self.target_velocity],
            [self.target_velocity, self.target_velocity],
        );
        (-self.target.sdf(p)).min(-vel_box.sdf(v))
    }

    /// Rollouts start at rest in the middle of the target corridor.
    pub fn start_state(&self) -> [f64; 4] {
        let c = self.target.center();
        [c[0], c[1], 0.0, 0.0]
    }

    /// Vertical canyons: the x-gaps between consecutive structures
    /// (boundary walls count as structures of boundary height). The rim is
    /// the lower flanking height.
    pub fn canyons(&self) -> Vec<Canyon> {
        let wall_h = self.boundary.hi[1];
        let floor = self.boundary.lo[1];
        let mut buildings = self.buildings.clone();
        buildings.sort_by(|a, b| a.lo[0].partial_cmp(&b.lo[0]).unwrap());
        let mut out = Vec::new();
        let mut prev_x = self.boundary.lo[0];
        let mut prev_h = wall_h;
        for b in &buildings {
            if b.lo[0] > prev_x {
                out.push(Canyon {
                    x_lo: prev_x,
                    x_hi: b.lo[0],
                    rim: prev_h.min(b.hi[1]),
                    floor,
                });
            }
            prev_x = b.hi[0];
            prev_h = b.hi[1];
        }
        if prev_x < self.boundary.hi[0] {
            out.push(Canyon {
                x_lo: prev_x,
                x_hi: self.boundary.hi[0],
                rim: prev_h.min(wall_h),
                floor,
            });
        }
        out
    }

    /// Canyon x-intervals for the wind field.
    pub fn canyon_ranges(&self) -> Vec<(f64, f64)> {
        self.canyons().iter().map(|c| c.x_range()).collect()
    }
}

/// Cyclic goal plan: every cycle picks one canyon and visits above it,
/// near its floor, then near its rim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalSchedule {
    pub goals: Vec<[f64; 2]>,
    /// Control steps per goal.
    pub period: usize,
}

impl GoalSchedule {
    /// Margin kept from canyon walls, floors and rims.
    pub const MARGIN: f64 = 0.3;
    const WALL_INSET: f64 = 0.2;

    pub fn sample<R: Rng>(env: &Environment, rng: &mut R, n_goals: usize, period: usize) -> Self {
        let canyons = env.canyons();
        assert!(!canyons.is_empty(), "environment has no canyons");
        let mut goals = Vec::with_capacity(n_goals);
        'outer: loop {
            let c = &canyons[rng.gen_range(0..canyons.len())];
            let sample_x = |rng: &mut R| {
                let inset = Self::WALL_INSET.min(0.25 * (c.x_hi - c.x_lo));
                rng.gen_range(c.x_lo + inset..c.x_hi - inset)
            };
            let above_z = {
                let lo = env.target.lo[1];
                let hi = env.target.hi[1];
                rng.gen_range(lo..hi)
            };
            let phases = [
                [sample_x(rng), above_z],
                [sample_x(rng), c.floor + Self::MARGIN],
                [sample_x(rng), c.rim - Self::MARGIN],
            ];
            for goal in phases {
                let state = [goal[0], goal[1], 0.0, 0.0];
                assert!(
                    env.constraint_g(&state) > 0.0,
                    "sampled goal {goal:?} violates the constraint"
                );
                goals.push(goal);
                if goals.len() == n_goals {
                    break 'outer;
                }
            }
        }
        Self { goals, period }
    }

    /// Goal active at a control step.
    pub fn active(&self, step: usize) -> [f64; 2] {
        let idx = (step / self.period).min(self.goals.len() - 1);
        self.goals[idx]
    }
}
