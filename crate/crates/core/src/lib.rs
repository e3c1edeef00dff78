//! Default clustering analytics for large pools of names with interacting
//! default intensities.
//!
//! A pool of `N` names carries intensities that mean-revert, diffuse with a
//! square-root term, jump upward when any name in the pool defaults
//! (contagion), and co-move with an exogenous systematic factor. The crate
//! provides:
//!
//! - [`sim`] — exact Monte Carlo of the finite system (default times, loss
//!   paths, empirical loss distributions);
//! - [`affine`] — survival curves and default-time densities of a single
//!   reference intensity under deterministic contagion/systematic forcing,
//!   via an exponential-moment ODE system;
//! - [`lln`] — the large-pool limit of the loss via a truncated moment
//!   system driven by the systematic factor;
//! - [`clt`] — the Gaussian fluctuation correction that sharpens the limit
//!   for moderate pool sizes;
//! - [`ldp`] — large-deviations rate functions and most-likely paths to
//!   atypically large losses;
//! - [`importance`] — rare-event estimators for tail probabilities of the
//!   loss (exponential tilting and pool-level intensity twisting);
//! - [`stats`] — loss-distribution summaries (VaR/ES, KS distances,
//!   histograms).
//!
//! All stochastic entry points draw from counter-derived [`model::SeedSpec`]
//! streams, so ensembles are reproducible bit-for-bit regardless of thread
//! scheduling.

pub mod affine;
pub mod clt;
pub mod config;
pub mod error;
pub mod factor;
pub mod importance;
pub mod ldp;
pub mod lln;
pub mod model;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
