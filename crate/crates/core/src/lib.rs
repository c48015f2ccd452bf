//! Numerical toolkit for finite-state transfer operators: build transition
//! models for toy stochastic systems, analyze spectra, committors, and
//! transition rates, construct the effective dynamics induced by a
//! collective-variable assignment, and score collective variables by
//! timescale and relative-entropy objectives.
//!
//! ```
//! use effdyn::effective::{build_effective, CvAssignment};
//! use effdyn::tpt::SetPair;
//! use effdyn::{build_analytic_em, committor, kl, rate_energy, solve_spectrum};
//! use effdyn::{Grid, Potential};
//!
//! // discretize the one-step kernel of overdamped dynamics in a double well
//! let grid = Grid::new_1d(-1.8, 1.8, 24)?;
//! let model = build_analytic_em(&Potential::DoubleWell1d, 2.5, 0.05, &grid)?
//!     .reversibilized()?;
//!
//! // slow spectrum and the transition rate between the wells
//! let spectrum = solve_spectrum(&model, 3)?;
//! assert!(spectrum.eigenvalues[1] > 0.9); // metastable
//! let left: Vec<usize> = (0..6).collect();
//! let right: Vec<usize> = (18..24).collect();
//! let sets = SetPair::new(left, right, model.n())?;
//! let q = committor(&model, &sets)?;
//! let rate = rate_energy(&model, &q);
//! assert!(rate > 0.0);
//!
//! // reduce onto two bins split at the barrier and score the reduction
//! let split = CvAssignment::coordinate(&grid, 0, 2)?;
//! let reduced = build_effective(&model, &split)?;
//! assert_eq!(reduced.model.n(), 2);
//! let score = kl::kl_score(&model, &split)?;
//! assert!(score.is_finite());
//! # Ok::<(), effdyn::Error>(())
//! ```

pub mod effective;
pub mod error;
pub mod fixtures;
pub mod grid;
pub mod kl;
pub mod langevin;
pub mod operator;
pub mod potential;
pub mod rng;
pub mod search;
pub mod sim;
pub mod spectral;
pub mod tpt;

pub use effective::{build_effective, CvAssignment, EffectiveModel};
pub use error::{Error, Result};
pub use grid::{Axis, Grid};
pub use operator::{
    build_analytic_em, build_counts, build_counts_from_indices, nonnegativity_check, sample_chain,
    stationary_vector, ModelSource, TransitionModel,
};
pub use potential::Potential;
pub use sim::{simulate_em, simulate_langevin, subsample, SimConfig, Trajectory};
pub use spectral::{
    dirichlet_energy, dirichlet_form, ergodic_energy, ergodic_energy_weighted, implied_timescales,
    solve_spectrum, vamp1_score, variational_score, ObjectiveWeights, SpectralResult,
};
pub use tpt::{committor, rate_count, rate_energy, rate_flux, SetPair, TptResult};

pub use nalgebra;
