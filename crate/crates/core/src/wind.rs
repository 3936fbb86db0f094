//! Spatial wind disturbance field and the online disturbance estimator.
//!
//! The field models canyon channeling: zero in the flyover region, growing
//! exponentially with penetration depth below the canyon-top altitude and
//! saturating toward `D * W` near the floor. Horizontally the field is
//! restricted to the canyon gaps with a cosine taper at the edges, and the
//! resulting scalar magnitude is applied along a fixed sign pattern over
//! the state dimensions.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::DisturbanceSpec;

#[derive(Debug, thiserror::Error)]
pub enum EstimatorError {
    #[error("estimator not primed: no measurement taken yet")]
    NotPrimed,
    #[error("non-monotone measurement timestamps: {prev} then {now}")]
    NonMonotoneTime { prev: f64, now: f64 },
    #[error("measurement dimension {got}, expected {expected}")]
    DimMismatch { expected: usize, got: usize },
}

/// One sampled wind field; immutable for the duration of a rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindField {
    /// Per-state sign/scale pattern the scalar magnitude multiplies.
    pub pattern: Vec<f64>,
    /// Disturbance factor D.
    pub d_factor: f64,
    /// Maximum wind magnitude W.
    pub w_max: f64,
    /// Exponential ramp rate r.
    pub ramp_rate: f64,
    /// Altitude band `[band_lo, band_hi]` where wind exists; zero outside.
    pub band_lo: f64,
    pub band_hi: f64,
    /// Altitude at which the exponential reaches `D * W * (1 - e^-r)`.
    pub peak_alt: f64,
    /// Horizontal canyon intervals where the field is active.
    pub canyons: Vec<(f64, f64)>,
    /// Cosine taper width at the canyon edges, meters.
    pub taper: f64,
}

impl WindField {
    /// Smooth horizontal canyon membership in [0, 1].
    fn window(&self, px: f64) -> f64 {
        let mut best = 0.0f64;
        for &(lo, hi) in &self.canyons {
            if px <= lo || px >= hi {
                continue;
            }
            let taper = self.taper.min(0.5 * (hi - lo));
            let edge = (px - lo).min(hi - px);
            let w = if edge >= taper {
                1.0
            } else {
                0.5 * (1.0 - (std::f64::consts::PI * edge / taper).cos())
            };
            best = best.max(w);
        }
        best
    }

    /// Scalar wind magnitude at a position. Grows exponentially with the
    /// penetration depth below the band top and saturates toward
    /// `d_factor * w_max`.
    pub fn magnitude(&self, px: f64, pz: f64) -> f64 {
        if pz < self.band_lo || pz > self.band_hi {
            return 0.0;
        }
        let depth = self.band_hi - pz;
        let peak_depth = self.band_hi - self.peak_alt;
        if peak_depth <= 0.0 {
            return 0.0;
        }
        let vertical =
            self.d_factor * self.w_max * (1.0 - (-self.ramp_rate * depth / peak_depth).exp());
        vertical * self.window(px)
    }

    /// Disturbance vector at a state: `pattern * magnitude(p_x, p_z)`.
    pub fn wind_at(&self, x: &[f64]) -> Vec<f64> {
        let m = self.magnitude(x[0], x[1]);
        self.pattern.iter().map(|p| p * m).collect()
    }

    /// Slope cap of the vertical exponential ramp.
    pub fn vertical_lipschitz(&self) -> f64 {
        let peak_depth = self.band_hi - self.peak_alt;
        if peak_depth <= 0.0 {
            return 0.0;
        }
        self.d_factor * self.w_max * self.ramp_rate / peak_depth
    }

    /// Lipschitz bound for the whole composed field, including the canyon
    /// window tapers.
    pub fn lipschitz_bound(&self) -> f64 {
        let taper = self
            .canyons
            .iter()
            .map(|&(lo, hi)| self.taper.min(0.5 * (hi - lo)))
            .fold(self.taper, f64::min)
            .max(1e-9);
        let window_slope = self.d_factor * self.w_max * std::f64::consts::PI / (2.0 * taper);
        self.vertical_lipschitz().max(window_slope)
    }

    /// Upper bound of the magnitude anywhere.
    pub fn max_magnitude(&self) -> f64 {
        self.d_factor * self.w_max
    }
}

/// Fixed field structure plus the randomization ranges; sampling draws the
/// ramp rate and the peak altitude per trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindConfig {
    pub pattern: Vec<f64>,
    pub d_factor: f64,
    pub w_max: f64,
    /// Uniform range of the exponential ramp rate.
    pub ramp_rate_range: (f64, f64),
    pub band_lo: f64,
    pub band_hi: f64,
    /// The peak altitude is drawn uniformly from
    /// `band_lo + peak_offset_min` up to `band_lo + band_height / 3`.
    pub peak_offset_min: f64,
    pub taper: f64,
}

impl WindConfig {
    /// Defaults for the cityscape benchmark: full-strength wind pattern
    /// `[1, -1, 1, -1]`, band below the flyover corridor.
    pub fn city_default(d_max: f64) -> Self {
        Self {
            pattern: vec![1.0, -1.0, 1.0, -1.0],
            d_factor: 1.0,
            w_max: d_max,
            ramp_rate_range: (3.0, 7.0),
            band_lo: 0.0,
            band_hi: 1.6,
            peak_offset_min: 0.1,
            taper: 0.2,
        }
    }

    pub fn band_height(&self) -> f64 {
        self.band_hi - self.band_lo
    }

    /// Draw one field: `r ~ U[range]`, peak altitude uniform between the
    /// minimum offset and a third of the band height.
    pub fn sample<R: Rng>(&self, rng: &mut R, canyons: Vec<(f64, f64)>) -> WindField {
        let ramp_rate = rng.gen_range(self.ramp_rate_range.0..=self.ramp_rate_range.1);
        let peak_hi = self.band_lo + self.band_height() / 3.0;
        let peak_lo = (self.band_lo + self.peak_offset_min).min(peak_hi);
        let peak_alt = rng.gen_range(peak_lo..=peak_hi);
        WindField {
            pattern: self.pattern.clone(),
            d_factor: self.d_factor,
            w_max: self.w_max,
            ramp_rate,
            band_lo: self.band_lo,
            band_hi: self.band_hi,
            peak_alt,
            canyons,
            taper: self.taper,
        }
    }
}

/// Slow-rate disturbance estimator: tracks the measured per-dimension
/// magnitude and a finite-difference growth rate, keeping the last `H`
/// rate estimates.
///
/// Decreasing magnitudes are not informative for the filter, so raw rates
/// clamp at zero and a floor of `d_max / t_max` applies: querying a tube
/// anywhere on its horizon then still covers a magnitude that merely
/// persists. Emitted values clip into `[0, d_max]` and `[0, ddot_max]`.
#[derive(Debug, Clone)]
pub struct DisturbanceEstimator {
    sample_period: f64,
    horizon: usize,
    d_max: Vec<f64>,
    ddot_max: Vec<f64>,
    floor_rate: Vec<f64>,
    history: VecDeque<Vec<f64>>,
    last_mag: Vec<f64>,
    last_time: Option<f64>,
}

impl DisturbanceEstimator {
    pub fn new(spec: &DisturbanceSpec, sample_period: f64, horizon: usize, t_max: f64) -> Self {
        let floor_rate = spec.d_max.iter().map(|d| d / t_max).collect();
        Self {
            sample_period,
            horizon: horizon.max(1),
            d_max: spec.d_max.clone(),
            ddot_max: spec.ddot_max.clone(),
            floor_rate,
            history: VecDeque::new(),
            last_mag: vec![0.0; spec.dim()],
            last_time: None,
        }
    }

    pub fn sample_period(&self) -> f64 {
        self.sample_period
    }

    pub fn is_primed(&self) -> bool {
        !self.history.is_empty()
    }

    /// Ingest the true disturbance at the sampler cadence. The rate
    /// estimate differences successive magnitudes over the sample period,
    /// clamps decreases to zero and applies the floor rate.
    pub fn measure(&mut self, true_d: &[f64], now: f64) -> Result<(), EstimatorError> {
        if true_d.len() != self.d_max.len() {
            return Err(EstimatorError::DimMismatch {
                expected: self.d_max.len(),
                got: true_d.len(),
            });
        }
        if let Some(prev) = self.last_time {
            if now <= prev {
                return Err(EstimatorError::NonMonotoneTime { prev, now });
            }
        }
        let mag: Vec<f64> = true_d.iter().map(|d| d.abs()).collect();
        let rates: Vec<f64> = mag
            .iter()
            .zip(&self.last_mag)
            .zip(&self.floor_rate)
            .map(|((m, prev), floor)| ((m - prev) / self.sample_period).max(0.0).max(*floor))
            .collect();
        self.history.push_back(rates);
        while self.history.len() > self.horizon {
            self.history.pop_front();
        }
        self.last_mag = mag;
        self.last_time = Some(now);
        Ok(())
    }

    /// Latest magnitude and the max rate over the retained window, both
    /// clipped into their caps.
    pub fn current_estimate(&self) -> Result<(Vec<f64>, Vec<f64>), EstimatorError> {
        if self.history.is_empty() {
            return Err(EstimatorError::NotPrimed);
        }
        let dim = self.d_max.len();
        let d_bar: Vec<f64> = (0..dim)
            .map(|i| self.last_mag[i].clamp(0.0, self.d_max[i]))
            .collect();
        let rate_bar: Vec<f64> = (0..dim)
            .map(|i| {
                self.history
                    .iter()
                    .map(|r| r[i])
                    .fold(0.0, f64::max)
                    .clamp(0.0, self.ddot_max[i])
            })
            .collect();
        Ok((d_bar, rate_bar))
    }

    /// Most recent (floored, unclipped) rate estimates; test hook.
    pub fn latest_rates(&self) -> Option<&[f64]> {
        self.history.back().map(|v| v.as_slice())
    }
}
