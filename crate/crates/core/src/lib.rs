//! Solver and Monte Carlo verification engine for a two-leader /
//! two-follower linear-quadratic Stackelberg stochastic differential game
//! with overlapping information.
//!
//! The scalar state is driven by three Brownian motions; the followers
//! observe (W1, W3), the leaders (W2, W3). The pipeline:
//!
//! 1. [`follower`]: the followers' Nash stage -- a pair of coupled scalar
//!    Riccati equations and the feedback gains on the filtered state and a
//!    backward pair.
//! 2. [`leader_mats`]: block matrices of the stacked 5/4-dimensional
//!    forward-backward system the leaders face once the followers react.
//! 3. [`decouple`]: recovery of the stacked diffusion blocks as gains on
//!    the four state estimates (four staged 12x12 solves).
//! 4. [`leader_riccati`]: backward integration of the four coupled
//!    asymmetric Riccati equations with the decoupler inside the
//!    right-hand side.
//! 5. [`equilibrium`]: the closed-loop feedback rows for all four players.
//! 6. [`sim`]: Euler-Maruyama simulation of the closed loop and Monte
//!    Carlo cost estimation with common random numbers.
//! 7. [`verify`]: shadow-adjoint residuals, filter oracles, stationarity
//!    checks, Nash deviation tests, and the symmetric-case identities.

pub mod artifacts;
pub mod decouple;
pub mod equilibrium;
pub mod error;
pub mod follower;
pub mod leader_mats;
pub mod leader_riccati;
pub mod linalg;
pub mod model;
pub mod rng;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use model::{load_model, save_model, Model};

/// Everything the simulator and verifier need, computed once per model.
pub struct Pipeline {
    pub model: Model,
    pub solution: leader_riccati::LeaderSolution,
    pub gains: equilibrium::GainTables,
    pub closed_loop: sim::ClosedLoop,
}

/// Solve all stages and assemble the closed-loop system.
pub fn solve_pipeline(model: &Model) -> Result<Pipeline> {
    let solution = leader_riccati::solve_leader(model)?;
    let gains = equilibrium::equilibrium_gains(model, &solution)?;
    let closed_loop = sim::build_closed_loop(model, &solution, &gains)?;
    Ok(Pipeline {
        model: model.clone(),
        solution,
        gains,
        closed_loop,
    })
}
