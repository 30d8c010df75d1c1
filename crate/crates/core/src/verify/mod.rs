//! Executable checks behind the structural claims: redundant forward
//! integration of the backward objects (shadow adjoints), stacked versus
//! unstacked drift comparison, particle-filter oracles for the conditional
//! expectations, stationarity residuals, Nash deviation tests, and the
//! symmetric-case Riccati identities.

mod deviation;
mod oracle;
mod shadow;

pub use deviation::{
    deviation_text, follower_directions, leader_directions, nash_deviation_test, DeviationReport,
    Direction, DirectionKind,
};
pub use oracle::{filter_oracle, oracle_text, FilterOracleReport, OracleSeeds};
pub use shadow::{shadow_run, smp_refinement_orders, RefinementReport, ShadowReport};

use crate::error::Result;
use crate::follower::{solve_follower_riccati, FollowerSolution};
use crate::model::Model;

/// Max deviations of the symmetric-case identities: the summed Riccati
/// equation against `Ptilde1 + Ptilde2`, and the linear auxiliary
/// equations against the components.
#[derive(Debug, Clone, Copy)]
pub struct LemmaReport {
    pub sum_identity_max: f64,
    pub aux_identity_max: f64,
}

/// Runs the symmetric-case suite; `None` when Assumption A3 fails (the
/// identities are only claimed there).
pub fn lemma_suite(model: &Model) -> Result<Option<LemmaReport>> {
    if !model.flags.a3 {
        return Ok(None);
    }
    let sol = solve_follower_riccati(model)?;
    Ok(Some(lemma_report(&sol)))
}

pub fn lemma_report(sol: &FollowerSolution) -> LemmaReport {
    let lem = sol
        .lemma
        .as_ref()
        .expect("lemma trajectories exist under A3");
    let mut sum_max = 0.0f64;
    let mut aux_max = 0.0f64;
    for k in 0..sol.ptilde1.len() {
        sum_max = sum_max.max((sol.ptilde1[k] + sol.ptilde2[k] - lem.ptilde_sum[k]).abs());
        aux_max = aux_max.max((sol.ptilde1[k] - lem.aux1[k]).abs());
        aux_max = aux_max.max((sol.ptilde2[k] - lem.aux2[k]).abs());
    }
    LemmaReport {
        sum_identity_max: sum_max,
        aux_identity_max: aux_max,
    }
}
