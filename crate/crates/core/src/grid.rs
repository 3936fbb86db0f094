//! Rectangular state grids and sampled value tubes.
//!
//! A [`ValueTube`] stores a value function V(x, tau) on a regular grid
//! crossed with a strictly increasing time-to-go axis `tau >= 0` (the
//! stored field uses time-to-go, so forward time is `t = -tau`). Queries
//! are multilinear in state and linear in tau; spatial gradients are
//! central differences of the interpolated field with the grid spacing as
//! step, and time derivatives difference adjacent tau samples with the
//! sign flipped to forward time.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

/// Hard cap on grid dimensionality so query scratch space can live on the
/// stack.
pub const MAX_NDIM: usize = 8;

const TUBE_MAGIC: &[u8; 4] = b"S2TV";
const TUBE_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum GridError {
    #[error("grid bounds invalid on dim {dim}: lo {lo} must be < hi {hi}")]
    InvalidBounds { dim: usize, lo: f64, hi: f64 },
    #[error("dim {dim} has {count} points; need at least 2")]
    TooFewPoints { dim: usize, count: usize },
    #[error("at most {max} dimensions supported, got {got}")]
    TooManyDims { got: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("horizon exceeded: tau {tau} outside [0, {max_tau}]")]
    HorizonExceeded { tau: f64, max_tau: f64 },
    #[error("non-finite query input")]
    NonFiniteInput,
    #[error("tube values non-finite at flat index {index}")]
    NonFiniteValue { index: usize },
    #[error("time samples must start at 0 and strictly increase")]
    BadTaus,
    #[error("value buffer has {got} entries; expected {expected}")]
    ValueLenMismatch { got: usize, expected: usize },
}

#[derive(Debug, thiserror::Error)]
pub enum TubeIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a value tube file (bad magic)")]
    BadMagic,
    #[error("unsupported tube file version {0}")]
    BadVersion(u32),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Regular rectangular grid: `counts[i]` nodes evenly spaced on
/// `[lo[i], hi[i]]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RectGrid {
    lo: Vec<f64>,
    hi: Vec<f64>,
    counts: Vec<usize>,
    spacing: Vec<f64>,
}

impl RectGrid {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, counts: Vec<usize>) -> Result<Self, GridError> {
        let ndim = lo.len();
        if hi.len() != ndim || counts.len() != ndim {
            return Err(GridError::DimMismatch {
                expected: ndim,
                got: hi.len().max(counts.len()),
            });
        }
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(GridError::TooManyDims {
                got: ndim,
                max: MAX_NDIM,
            });
        }
        for i in 0..ndim {
            if !(lo[i] < hi[i]) || !lo[i].is_finite() || !hi[i].is_finite() {
                return Err(GridError::InvalidBounds {
                    dim: i,
                    lo: lo[i],
                    hi: hi[i],
                });
            }
            if counts[i] < 2 {
                return Err(GridError::TooFewPoints {
                    dim: i,
                    count: counts[i],
                });
            }
        }
        let spacing = (0..ndim)
            .map(|i| (hi[i] - lo[i]) / (counts[i] - 1) as f64)
            .collect();
        Ok(Self {
            lo,
            hi,
            counts,
            spacing,
        })
    }

    pub fn ndim(&self) -> usize {
        self.lo.len()
    }

    pub fn lo(&self) -> &[f64] {
        &self.lo
    }

    pub fn hi(&self) -> &[f64] {
        &self.hi
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    /// Total number of nodes.
    pub fn num_nodes(&self) -> usize {
        self.counts.iter().product()
    }

    /// Row-major strides (last dimension fastest).
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1usize; self.ndim()];
        for i in (0..self.ndim().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.counts[i + 1];
        }
        strides
    }

    /// Coordinate of node `i` along `dim`.
    pub fn node_coord(&self, dim: usize, i: usize) -> f64 {
        self.lo[dim] + i as f64 * self.spacing[dim]
    }

    /// Fill `out` with the coordinates of the node at `flat` (row-major).
    pub fn node(&self, flat: usize, out: &mut [f64]) {
        let mut rem = flat;
        for i in (0..self.ndim()).rev() {
            let idx = rem % self.counts[i];
            rem /= self.counts[i];
            out[i] = self.node_coord(i, idx);
        }
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        let mut flat = 0usize;
        for i in 0..self.ndim() {
            flat = flat * self.counts[i] + idx[i];
        }
        flat
    }

    /// Clamp `x` into the grid box. Returns true if any component moved.
    pub fn clamp(&self, x: &[f64], out: &mut [f64]) -> bool {
        let mut clamped = false;
        for i in 0..self.ndim() {
            let c = x[i].clamp(self.lo[i], self.hi[i]);
            if c != x[i] {
                clamped = true;
            }
            out[i] = c;
        }
        clamped
    }

    /// Lower cell index and fractional offset of `xi` along `dim`.
    /// `xi` must already be inside the bounds.
    fn locate(&self, dim: usize, xi: f64) -> (usize, f64) {
        let u = (xi - self.lo[dim]) / self.spacing[dim];
        let mut i = u.floor() as usize;
        if i + 2 > self.counts[dim] {
            i = self.counts[dim] - 2;
        }
        let frac = (u - i as f64).clamp(0.0, 1.0);
        (i, frac)
    }
}

/// Disturbance parameterization a tube was solved under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TubeParam {
    /// Constant per-dimension box half-widths.
    FixedBound { bound: Vec<f64> },
    /// Half-width shrinks with time-to-go: `max(0, d_max - tau * ddot)`.
    RateSchedule { d_max: Vec<f64>, ddot: Vec<f64> },
}

impl TubeParam {
    /// Scalar member parameter used for ensemble ordering and selection.
    pub fn member_param(&self) -> f64 {
        match self {
            TubeParam::FixedBound { bound } => bound.iter().cloned().fold(0.0, f64::max),
            TubeParam::RateSchedule { ddot, .. } => ddot.iter().cloned().fold(0.0, f64::max),
        }
    }
}

/// Sidecar metadata serialized as JSON next to the binary tube file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TubeMeta {
    pub param: TubeParam,
    /// Magnitude cap of the disturbance spec the tube belongs to.
    pub d_max: Vec<f64>,
    /// Rate cap of the disturbance spec the tube belongs to.
    pub ddot_max: Vec<f64>,
}

/// One query: value, spatial gradient, forward-time derivative, and whether
/// the state had to be clamped into the grid box.
#[derive(Debug, Clone)]
pub struct TubeSample {
    pub value: f64,
    pub gradient: Vec<f64>,
    pub dv_dt: f64,
    pub clamped: bool,
}

/// Sampled value function over grid x time-to-go.
///
/// `values` is laid out tau-major: slice `k` occupies
/// `[k * num_nodes, (k + 1) * num_nodes)`, each slice row-major over the
/// grid. Immutable after construction; shared read access is safe.
#[derive(Debug, Clone)]
pub struct ValueTube {
    grid: RectGrid,
    taus: Vec<f64>,
    values: Vec<f64>,
    meta: TubeMeta,
}

impl ValueTube {
    pub fn new(
        grid: RectGrid,
        taus: Vec<f64>,
        values: Vec<f64>,
        meta: TubeMeta,
    ) -> Result<Self, GridError> {
        if taus.is_empty() || taus[0] != 0.0 || taus.windows(2).any(|w| w[0] >= w[1]) {
            return Err(GridError::BadTaus);
        }
        let expected = taus.len() * grid.num_nodes();
        if values.len() != expected {
            return Err(GridError::ValueLenMismatch {
                got: values.len(),
                expected,
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(GridError::NonFiniteValue { index });
        }
        Ok(Self {
            grid,
            taus,
            values,
            meta,
        })
    }

    pub fn grid(&self) -> &RectGrid {
        &self.grid
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn max_tau(&self) -> f64 {
        *self.taus.last().unwrap()
    }

    pub fn meta(&self) -> &TubeMeta {
        &self.meta
    }

    /// Value slice at tau sample `k`.
    pub fn slice(&self, k: usize) -> &[f64] {
        let n = self.grid.num_nodes();
        &self.values[k * n..(k + 1) * n]
    }

    fn check_query(&self, x: &[f64], tau: f64) -> Result<(), GridError> {
        if x.len() != self.grid.ndim() {
            return Err(GridError::DimMismatch {
                expected: self.grid.ndim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) || !tau.is_finite() {
            return Err(GridError::NonFiniteInput);
        }
        // Allow a hair of roundoff at the horizon end.
        let max_tau = self.max_tau();
        if tau < -1e-12 || tau > max_tau * (1.0 + 1e-12) + 1e-12 {
            return Err(GridError::HorizonExceeded { tau, max_tau });
        }
        Ok(())
    }

    /// Bracketing tau interval index and fraction.
    fn locate_tau(&self, tau: f64) -> (usize, f64) {
        let tau = tau.clamp(0.0, self.max_tau());
        if self.taus.len() == 1 {
            return (0, 0.0);
        }
        let mut k = self.taus.partition_point(|&t| t <= tau);
        // partition_point returns the first index with taus[i] > tau.
        k = k.saturating_sub(1).min(self.taus.len() - 2);
        let span = self.taus[k + 1] - self.taus[k];
        let frac = ((tau - self.taus[k]) / span).clamp(0.0, 1.0);
        (k, frac)
    }

    /// Multilinear interpolation over one stored slice. `x` must be clamped.
    fn interp_slice(&self, slice: &[f64], x: &[f64]) -> f64 {
        let ndim = self.grid.ndim();
        let mut base = [0usize; MAX_NDIM];
        let mut frac = [0.0f64; MAX_NDIM];
        for i in 0..ndim {
            let (b, f) = self.grid.locate(i, x[i]);
            base[i] = b;
            frac[i] = f;
        }
        let strides = {
            let mut s = [1usize; MAX_NDIM];
            for i in (0..ndim - 1).rev() {
                s[i] = s[i + 1] * self.grid.counts()[i + 1];
            }
            s
        };
        let mut acc = 0.0;
        for corner in 0..(1usize << ndim) {
            let mut w = 1.0;
            let mut off = 0usize;
            for i in 0..ndim {
                if corner & (1 << i) != 0 {
                    w *= frac[i];
                    off += (base[i] + 1) * strides[i];
                } else {
                    w *= 1.0 - frac[i];
                    off += base[i] * strides[i];
                }
            }
            if w != 0.0 {
                acc += w * slice[off];
            }
        }
        acc
    }

    fn interp_clamped(&self, x: &[f64], tau: f64) -> f64 {
        let (k, s) = self.locate_tau(tau);
        let v0 = self.interp_slice(self.slice(k), x);
        if s == 0.0 {
            return v0;
        }
        let v1 = self.interp_slice(self.slice(k + 1), x);
        (1.0 - s) * v0 + s * v1
    }

    /// Interpolated value at `(x, tau)`. States outside the grid box are
    /// clamped to the boundary.
    pub fn interpolate(&self, x: &[f64], tau: f64) -> Result<f64, GridError> {
        self.check_query(x, tau)?;
        let mut xc = [0.0f64; MAX_NDIM];
        self.grid.clamp(x, &mut xc[..x.len()]);
        Ok(self.interp_clamped(&xc[..x.len()], tau))
    }

    /// Spatial gradient of the interpolated field: central differences with
    /// the local grid spacing as step, one-sided next to the grid boundary.
    pub fn gradient(&self, x: &[f64], tau: f64) -> Result<Vec<f64>, GridError> {
        self.check_query(x, tau)?;
        let ndim = self.grid.ndim();
        let mut xc = [0.0f64; MAX_NDIM];
        self.grid.clamp(x, &mut xc[..ndim]);
        let xc = &mut xc[..ndim];
        let mut grad = vec![0.0; ndim];
        for i in 0..ndim {
            let h = self.grid.spacing()[i];
            let xi = xc[i];
            let up_ok = xi + h <= self.grid.hi()[i] + 1e-12 * h;
            let dn_ok = xi - h >= self.grid.lo()[i] - 1e-12 * h;
            grad[i] = match (dn_ok, up_ok) {
                (true, true) => {
                    xc[i] = xi + h;
                    let vp = self.interp_clamped(xc, tau);
                    xc[i] = xi - h;
                    let vm = self.interp_clamped(xc, tau);
                    (vp - vm) / (2.0 * h)
                }
                (false, true) => {
                    xc[i] = xi + h;
                    let vp = self.interp_clamped(xc, tau);
                    xc[i] = xi;
                    let v0 = self.interp_clamped(xc, tau);
                    (vp - v0) / h
                }
                (true, false) => {
                    xc[i] = xi;
                    let v0 = self.interp_clamped(xc, tau);
                    xc[i] = xi - h;
                    let vm = self.interp_clamped(xc, tau);
                    (v0 - vm) / h
                }
                (false, false) => 0.0,
            };
            xc[i] = xi;
        }
        Ok(grad)
    }

    /// Forward-time derivative dV/dt at `(x, tau)` with `t = -tau`: the
    /// negated slope across the adjacent tau samples, one-sided at the
    /// endpoints of the tau axis.
    pub fn time_derivative(&self, x: &[f64], tau: f64) -> Result<f64, GridError> {
        self.check_query(x, tau)?;
        if self.taus.len() < 2 {
            return Ok(0.0);
        }
        let mut xc = [0.0f64; MAX_NDIM];
        self.grid.clamp(x, &mut xc[..x.len()]);
        let xc = &xc[..x.len()];
        let tau = tau.clamp(0.0, self.max_tau());
        let eps = 1e-9 * self.max_tau().max(1.0);
        // On an interior sample: central difference across both neighbours.
        let on = self
            .taus
            .iter()
            .position(|&t| (t - tau).abs() <= eps)
            .filter(|&j| j > 0 && j + 1 < self.taus.len());
        let slope = if let Some(j) = on {
            let vp = self.interp_slice(self.slice(j + 1), xc);
            let vm = self.interp_slice(self.slice(j - 1), xc);
            (vp - vm) / (self.taus[j + 1] - self.taus[j - 1])
        } else {
            let (k, _) = self.locate_tau(tau);
            let vp = self.interp_slice(self.slice(k + 1), xc);
            let vm = self.interp_slice(self.slice(k), xc);
            (vp - vm) / (self.taus[k + 1] - self.taus[k])
        };
        Ok(-slope)
    }

    /// Value, gradient and time derivative in one call, plus the clamp flag.
    pub fn sample(&self, x: &[f64], tau: f64) -> Result<TubeSample, GridError> {
        self.check_query(x, tau)?;
        let mut xc = vec![0.0; x.len()];
        let clamped = self.grid.clamp(x, &mut xc);
        Ok(TubeSample {
            value: self.interp_clamped(&xc, tau),
            gradient: self.gradient(&xc, tau)?,
            dv_dt: self.time_derivative(&xc, tau)?,
            clamped,
        })
    }

    /// Write the binary tube file plus its `<path>.json` sidecar.
    ///
    /// Layout, all little-endian: magic `S2TV`, version u32, ndim u32,
    /// counts (ndim x u64), lo (ndim x f64), hi (ndim x f64), tau count
    /// u64, taus (f64), then the value data tau-major / row-major as f64.
    pub fn write_to(&self, path: &Path) -> Result<(), TubeIoError> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        w.write_all(TUBE_MAGIC)?;
        w.write_u32::<LittleEndian>(TUBE_VERSION)?;
        w.write_u32::<LittleEndian>(self.grid.ndim() as u32)?;
        for &c in self.grid.counts() {
            w.write_u64::<LittleEndian>(c as u64)?;
        }
        for &v in self.grid.lo() {
            w.write_f64::<LittleEndian>(v)?;
        }
        for &v in self.grid.hi() {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.write_u64::<LittleEndian>(self.taus.len() as u64)?;
        for &t in &self.taus {
            w.write_f64::<LittleEndian>(t)?;
        }
        for &v in &self.values {
            w.write_f64::<LittleEndian>(v)?;
        }
        w.flush()?;
        let sidecar = serde_json::to_vec_pretty(&self.meta)?;
        std::fs::write(sidecar_path(path), sidecar)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, TubeIoError> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TUBE_MAGIC {
            return Err(TubeIoError::BadMagic);
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != TUBE_VERSION {
            return Err(TubeIoError::BadVersion(version));
        }
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(GridError::TooManyDims {
                got: ndim,
                max: MAX_NDIM,
            }
            .into());
        }
        let mut counts = vec![0usize; ndim];
        for c in counts.iter_mut() {
            *c = r.read_u64::<LittleEndian>()? as usize;
        }
        let mut lo = vec![0.0; ndim];
        for v in lo.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let mut hi = vec![0.0; ndim];
        for v in hi.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let ntau = r.read_u64::<LittleEndian>()? as usize;
        let mut taus = vec![0.0; ntau];
        for t in taus.iter_mut() {
            *t = r.read_f64::<LittleEndian>()?;
        }
        let grid = RectGrid::new(lo, hi, counts)?;
        let n = ntau * grid.num_nodes();
        let mut values = vec![0.0; n];
        for v in values.iter_mut() {
            *v = r.read_f64::<LittleEndian>()?;
        }
        let meta: TubeMeta = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
        Ok(Self::new(grid, taus, values, meta)?)
    }
}

/// Sidecar path: the tube path with `.json` appended.
pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}
