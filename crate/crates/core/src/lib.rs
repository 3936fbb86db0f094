//! Numerical toolkit for disturbance-adaptive safety filtering of a planar
//! quadrotor, with a closed-loop urban-canyon benchmark.
//!
//! The pipeline has an offline and an online half:
//!
//! * **Offline** ([`hjr`]): grid-based dynamic programming solves reach-avoid
//!   and avoid games for the quadrotor under box-bounded disturbances, either
//!   with a fixed magnitude bound or with a bound that shrinks linearly in
//!   time-to-go at a fixed rate. The result is an ensemble of sampled value
//!   tubes ([`grid::ValueTube`]).
//! * **Online** ([`filter`]): a minimally invasive quadratic-program filter
//!   queries those tubes as time-varying control barrier functions. The
//!   adaptive mode converts the measured disturbance magnitude and its growth
//!   rate into a time-to-go at which the matching tube is queried, so a
//!   spatially growing disturbance is handled as a temporally growing one.
//!
//! [`sim`] provides the cityscape environment, wind field, LQR nominal
//! controller, and the benchmark harness that compares filter modes on
//! paired seeds.

pub mod dynamics;
pub mod filter;
pub mod grid;
pub mod hjr;
pub mod sim;
pub mod wind;
