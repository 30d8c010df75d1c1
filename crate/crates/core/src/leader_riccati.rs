//! Backward integration of the four coupled asymmetric Riccati equations
//! for the stacked representation `Y = P1 X + P2 Xhat + P3 Xcheck + P4 Xhatcheck`.
//!
//! The gain families from the decoupler enter the right-hand side
//! algebraically (they are smooth functions of the current `P` through the
//! stage systems), so the composite system is an ordinary ODE in the 80
//! matrix entries plus the two follower Riccati scalars, integrated jointly
//! so that every RK4 stage sees self-consistent follower data.

use crate::decouple::{channel_relation, solve_decoupling, DecouplingGains};
use crate::error::{Error, Result};
use crate::follower::{follower_node, follower_riccati_rhs, FollowerNode, FollowerSolution};
use crate::leader_mats::{assemble_leader_mats, LeaderMats};
use crate::linalg::{self, mul, mul_acc, rk4_step, zeros, Rk4Scratch, M44, M45};
use crate::model::Model;

pub const P_BLOWUP_LIMIT: f64 = 1e8;

/// Solution of the joint backward sweep, tabulated per grid node.
#[derive(Debug, Clone)]
pub struct LeaderSolution {
    pub p: [Vec<M45>; 4],
    pub nodes: Vec<FollowerNode>,
    pub mats: Vec<LeaderMats>,
    pub gains: Vec<DecouplingGains>,
    pub follower: FollowerSolution,
}

impl LeaderSolution {
    pub fn p_at(&self, k: usize) -> [M45; 4] {
        [self.p[0][k], self.p[1][k], self.p[2][k], self.p[3][k]]
    }

    pub fn sum_p(&self, k: usize) -> M45 {
        let mut s = self.p[0][k];
        for j in 1..4 {
            s = linalg::add(&s, &self.p[j][k]);
        }
        s
    }
}

fn pack(p: &[M45; 4], y: &mut [f64]) {
    let mut idx = 2;
    for m in p.iter() {
        for r in 0..4 {
            for c in 0..5 {
                y[idx] = m[r][c];
                idx += 1;
            }
        }
    }
}

fn unpack(y: &[f64]) -> [M45; 4] {
    let mut p = [zeros::<4, 5>(); 4];
    let mut idx = 2;
    for m in p.iter_mut() {
        for r in 0..4 {
            for c in 0..5 {
                m[r][c] = y[idx];
                idx += 1;
            }
        }
    }
    p
}

/// Backward derivative of `(P1..P4)` given assembled blocks and gains.
pub fn leader_rhs(mats: &LeaderMats, p: &[M45; 4], gains: &DecouplingGains) -> [M45; 4] {
    let dr = channel_relation(mats, p, 0);
    let p12 = linalg::add(&p[0], &p[1]);
    let p34 = linalg::add(&p[2], &p[3]);
    let sp = linalg::add(&p12, &p34);

    let mut rhs1 = linalg::add(&dr.const_x, &mats.qcal);
    mul_acc(&mut rhs1, &mats.abar[0], &p[0]);

    let mut rhs2 = dr.const_xhat;
    mul_acc(&mut rhs2, &mats.abar[0], &p[1]);
    mul_acc(&mut rhs2, &mats.mbar1[0], &p12);

    let mut rhs3 = dr.const_xcheck;
    mul_acc(&mut rhs3, &mats.abar[0], &p[2]);

    let mut rhs4 = linalg::add(&dr.const_xch, &mats.qcal_checkhat);
    mul_acc(&mut rhs4, &mats.abar[0], &p[3]);
    mul_acc(&mut rhs4, &mats.mbar1[0], &p34);
    mul_acc(&mut rhs4, &mats.ical[0], &sp);

    for j in 0..3 {
        let az: M44 = linalg::add(&dr.coef_z[j], &mats.abar[j + 1]);
        mul_acc(&mut rhs1, &az, &gains.full_x[j]);
        mul_acc(&mut rhs2, &az, &gains.full_hat[j]);
        mul_acc(&mut rhs3, &az, &gains.full_chk[j]);
        mul_acc(&mut rhs4, &az, &gains.full_chkhat[j]);

        let hm: M44 = linalg::add(&dr.coef_zhat[j], &mats.mbar1[j + 1]);
        mul_acc(&mut rhs2, &hm, &gains.hat_on_hat[j]);
        mul_acc(&mut rhs4, &hm, &gains.hat_on_chkhat[j]);

        mul_acc(&mut rhs3, &dr.coef_zcheck[j], &gains.chk_on_chk[j]);
        mul_acc(&mut rhs4, &dr.coef_zcheck[j], &gains.chk_on_chkhat[j]);

        let chi: M44 = linalg::add(&dr.coef_zch[j], &mats.ical[j + 1]);
        mul_acc(&mut rhs4, &chi, &gains.chkhat[j]);
    }

    // dP/dt = -(rhs); the sweep integrates backward.
    [
        linalg::scale(&rhs1, -1.0),
        linalg::scale(&rhs2, -1.0),
        linalg::scale(&rhs3, -1.0),
        linalg::scale(&rhs4, -1.0),
    ]
}

/// Joint backward RK4 sweep over the follower pair and `P1..P4`.
///
/// `substeps` subdivides each grid step (kept at 1 unless a model is stiff
/// enough to need it); only grid nodes are tabulated.
pub fn solve_leader_with(model: &Model, substeps: usize) -> Result<LeaderSolution> {
    let grid = &model.grid;
    let n = grid.n_steps;
    let coeffs = model.coeffs.clone();
    let g3 = model.coeffs.g[2];
    let g4 = model.coeffs.g[3];
    let x0 = model.coeffs.x0;

    let mut y = vec![0.0; 82];
    y[0] = model.coeffs.g[0];
    y[1] = model.coeffs.g[1];
    let mut p_term = [zeros::<4, 5>(); 4];
    p_term[0][2][0] = g3;
    p_term[0][3][0] = g4;
    pack(&p_term, &mut y);

    let mut ptraj: [Vec<M45>; 4] = [
        vec![zeros(); n + 1],
        vec![zeros(); n + 1],
        vec![zeros(); n + 1],
        vec![zeros(); n + 1],
    ];
    let mut pt1 = vec![0.0; n + 1];
    let mut pt2 = vec![0.0; n + 1];
    for j in 0..4 {
        ptraj[j][n] = p_term[j];
    }
    pt1[n] = y[0];
    pt2[n] = y[1];

    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let c = coeffs.at(t)?;
        let d = follower_riccati_rhs(t, [y[0], y[1]], &c)?;
        dy[0] = d[0];
        dy[1] = d[1];
        let node = follower_node(t, [y[0], y[1]], &c)?;
        let mats = assemble_leader_mats(&node, &c, g3, g4, x0)?;
        let p = unpack(y);
        let gains = solve_decoupling(&mats, &p)?;
        let dp = leader_rhs(&mats, &p, &gains);
        let mut idx = 2;
        for m in dp.iter() {
            for r in 0..4 {
                for cc in 0..5 {
                    dy[idx] = m[r][cc];
                    idx += 1;
                }
            }
        }
        Ok(())
    };

    let dt = grid.dt() / substeps as f64;
    let mut scratch = Rk4Scratch::new(82);
    for k in (0..n).rev() {
        let t_hi = grid.node(k + 1);
        for s in 0..substeps {
            let t = t_hi - s as f64 * dt;
            rk4_step(&mut y, t, -dt, &mut scratch, &mut rhs)?;
        }
        for v in y.iter() {
            if !v.is_finite() || v.abs() > P_BLOWUP_LIMIT {
                return Err(Error::NonFinite {
                    what: "leader Riccati",
                    t: grid.node(k),
                    last_valid: t_hi,
                });
            }
        }
        let p = unpack(&y);
        for j in 0..4 {
            ptraj[j][k] = p[j];
        }
        pt1[k] = y[0];
        pt2[k] = y[1];
    }

    // Tabulate follower nodes, blocks and gains at the grid nodes.
    let mut nodes = Vec::with_capacity(n + 1);
    let mut mats = Vec::with_capacity(n + 1);
    let mut gains = Vec::with_capacity(n + 1);
    for k in 0..=n {
        let t = grid.node(k);
        let c = model.at(t)?;
        let node = follower_node(t, [pt1[k], pt2[k]], &c)?;
        let m = assemble_leader_mats(&node, &c, g3, g4, x0)?;
        let p = [ptraj[0][k], ptraj[1][k], ptraj[2][k], ptraj[3][k]];
        let g = solve_decoupling(&m, &p)?;
        nodes.push(node);
        mats.push(m);
        gains.push(g);
    }

    // The standalone follower sweep reproduces the joint one's follower
    // block bit for bit; keep it for the lemma trajectories.
    let follower = crate::follower::solve_follower_riccati(model)?;

    Ok(LeaderSolution {
        p: ptraj,
        nodes,
        mats,
        gains,
        follower,
    })
}

pub fn solve_leader(model: &Model) -> Result<LeaderSolution> {
    solve_leader_with(model, 1)
}

/// Labeled summands of each Riccati right-hand side, transcribed directly
/// from the displayed equations (with the index and sign slips resolved by
/// re-derivation). The production path assembles the same totals through
/// `channel_relation`; the audit exists so the two routes can disagree
/// loudly in tests rather than silently in trajectories.
pub struct RhsAudit {
    pub terms: [Vec<(&'static str, M45)>; 4],
}

impl RhsAudit {
    pub fn totals(&self) -> [M45; 4] {
        let mut out = [zeros::<4, 5>(); 4];
        for (eq, terms) in self.terms.iter().enumerate() {
            for (_, m) in terms {
                out[eq] = linalg::add(&out[eq], m);
            }
        }
        out
    }
}

pub fn riccati_rhs_audit(mats: &LeaderMats, p: &[M45; 4], gains: &DecouplingGains) -> RhsAudit {
    let p12 = linalg::add(&p[0], &p[1]);
    let p13 = linalg::add(&p[0], &p[2]);
    let p24 = linalg::add(&p[1], &p[3]);
    let p34 = linalg::add(&p[2], &p[3]);
    let sp = linalg::add(&p12, &p34);

    let mut eq1: Vec<(&'static str, M45)> = vec![
        ("P1 Acal0", mul(&p[0], &mats.acal[0])),
        ("P1 Ncal00 P1", mul(&mul(&p[0], &mats.ncal[0][0]), &p[0])),
        ("Abar0 P1", mul(&mats.abar[0], &p[0])),
        ("Qcal", mats.qcal),
    ];
    for j in 0..3 {
        eq1.push((
            "P1 Ncal0j Zx_j",
            mul(&mul(&p[0], &mats.ncal[0][j + 1]), &gains.full_x[j]),
        ));
        eq1.push(("Abar_j Zx_j", mul(&mats.abar[j + 1], &gains.full_x[j])));
    }

    let mut eq2: Vec<(&'static str, M45)> = vec![
        ("P1 Mcal01", mul(&p[0], &mats.mcal[0])),
        ("P1 Ncal00 P2", mul(&mul(&p[0], &mats.ncal[0][0]), &p[1])),
        (
            "P2 (Acal0+Mcal01)",
            mul(&p[1], &linalg::add(&mats.acal[0], &mats.mcal[0])),
        ),
        ("P2 Ncal00 (P1+P2)", mul(&mul(&p[1], &mats.ncal[0][0]), &p12)),
        ("Abar0 P2", mul(&mats.abar[0], &p[1])),
        ("Mbar01 (P1+P2)", mul(&mats.mbar1[0], &p12)),
    ];
    for j in 0..3 {
        eq2.push((
            "P1 Ncal0j Zhat_j",
            mul(&mul(&p[0], &mats.ncal[0][j + 1]), &gains.full_hat[j]),
        ));
        eq2.push(("Abar_j Zhat_j", mul(&mats.abar[j + 1], &gains.full_hat[j])));
        eq2.push((
            "P2 Ncal0j Nhat_j",
            mul(&mul(&p[1], &mats.ncal[0][j + 1]), &gains.hat_on_hat[j]),
        ));
        eq2.push(("Mbar_j1 Nhat_j", mul(&mats.mbar1[j + 1], &gains.hat_on_hat[j])));
    }

    let mut eq3: Vec<(&'static str, M45)> = vec![
        ("P1 Ncal00 P3", mul(&mul(&p[0], &mats.ncal[0][0]), &p[2])),
        ("P1 Bcal00 (P1+P3)", mul(&mul(&p[0], &mats.bcal[0][0]), &p13)),
        ("P3 Acal0", mul(&p[2], &mats.acal[0])),
        (
            "P3 (Ncal00+Bcal00) (P1+P3)",
            mul(
                &mul(&p[2], &linalg::add(&mats.ncal[0][0], &mats.bcal[0][0])),
                &p13,
            ),
        ),
        ("Abar0 P3", mul(&mats.abar[0], &p[2])),
    ];
    for j in 0..3 {
        eq3.push((
            "P1 Ncal0j Zchk_j",
            mul(&mul(&p[0], &mats.ncal[0][j + 1]), &gains.full_chk[j]),
        ));
        eq3.push(("Abar_j Zchk_j", mul(&mats.abar[j + 1], &gains.full_chk[j])));
        let coef = linalg::add(
            &mul(&p[0], &mats.bcal[0][j + 1]),
            &mul(
                &p[2],
                &linalg::add(&mats.ncal[0][j + 1], &mats.bcal[0][j + 1]),
            ),
        );
        eq3.push(("(P1 Bcal0j + P3(Ncal0j+Bcal0j)) Nchk_j", mul(&coef, &gains.chk_on_chk[j])));
    }

    let mut eq4: Vec<(&'static str, M45)> = vec![
        ("(P1+P2) Hcal0", mul(&p12, &mats.hcal[0])),
        ("P1 Ncal00 P4", mul(&mul(&p[0], &mats.ncal[0][0]), &p[3])),
        ("P1 Bcal00 (P2+P4)", mul(&mul(&p[0], &mats.bcal[0][0]), &p24)),
        ("P2 Ncal00 (P3+P4)", mul(&mul(&p[1], &mats.ncal[0][0]), &p34)),
        (
            "P3 (Mcal01+Hcal0)",
            mul(&p[2], &linalg::add(&mats.mcal[0], &mats.hcal[0])),
        ),
        (
            "P3 (Ncal00+Bcal00) (P2+P4)",
            mul(
                &mul(&p[2], &linalg::add(&mats.ncal[0][0], &mats.bcal[0][0])),
                &p24,
            ),
        ),
        (
            "P4 (Acal0+Mcal01+Hcal0)",
            mul(
                &p[3],
                &linalg::add(&linalg::add(&mats.acal[0], &mats.mcal[0]), &mats.hcal[0]),
            ),
        ),
        ("Ical0 SP", mul(&mats.ical[0], &sp)),
        ("Qcal_checkhat", mats.qcal_checkhat),
        ("Abar0 P4", mul(&mats.abar[0], &p[3])),
        ("Mbar01 (P3+P4)", mul(&mats.mbar1[0], &p34)),
    ];
    {
        // [P1 C00 + P2(B00+C00) + P3 C00 + P4(N00+B00+C00)] SP
        let mut coef = mul(&p[0], &mats.ccal[0][0]);
        coef = linalg::add(
            &coef,
            &mul(&p[1], &linalg::add(&mats.bcal[0][0], &mats.ccal[0][0])),
        );
        coef = linalg::add(&coef, &mul(&p[2], &mats.ccal[0][0]));
        coef = linalg::add(
            &coef,
            &mul(
                &p[3],
                &linalg::add(&linalg::add(&mats.ncal[0][0], &mats.bcal[0][0]), &mats.ccal[0][0]),
            ),
        );
        eq4.push(("[P1 C00 + P2(B00+C00) + P3 C00 + P4(N00+B00+C00)] SP", mul(&coef, &sp)));
    }
    for j in 0..3 {
        eq4.push((
            "P1 Ncal0j Zch_j",
            mul(&mul(&p[0], &mats.ncal[0][j + 1]), &gains.full_chkhat[j]),
        ));
        eq4.push(("Abar_j Zch_j", mul(&mats.abar[j + 1], &gains.full_chkhat[j])));
        eq4.push((
            "P2 Ncal0j Nhatch_j",
            mul(&mul(&p[1], &mats.ncal[0][j + 1]), &gains.hat_on_chkhat[j]),
        ));
        eq4.push((
            "Mbar_j1 Nhatch_j",
            mul(&mats.mbar1[j + 1], &gains.hat_on_chkhat[j]),
        ));
        let coef_chk = linalg::add(
            &mul(&p[0], &mats.bcal[0][j + 1]),
            &mul(
                &p[2],
                &linalg::add(&mats.ncal[0][j + 1], &mats.bcal[0][j + 1]),
            ),
        );
        eq4.push(("(P1 Bcal0j + P3(...)) Ntilde_j", mul(&coef_chk, &gains.chk_on_chkhat[j])));
        let mut coef_ch = mul(&p[0], &mats.ccal[0][j + 1]);
        coef_ch = linalg::add(
            &coef_ch,
            &mul(
                &p[1],
                &linalg::add(&mats.bcal[0][j + 1], &mats.ccal[0][j + 1]),
            ),
        );
        coef_ch = linalg::add(&coef_ch, &mul(&p[2], &mats.ccal[0][j + 1]));
        coef_ch = linalg::add(
            &coef_ch,
            &mul(
                &p[3],
                &linalg::add(
                    &linalg::add(&mats.ncal[0][j + 1], &mats.bcal[0][j + 1]),
                    &mats.ccal[0][j + 1],
                ),
            ),
        );
        eq4.push(("[...] Nchkhat_j", mul(&coef_ch, &gains.chkhat[j])));
        eq4.push(("Ical_j Nchkhat_j", mul(&mats.ical[j + 1], &gains.chkhat[j])));
    }

    RhsAudit {
        terms: [eq1, eq2, eq3, eq4],
    }
}

/// CSV export: `t`, the 20 entries of each `P_k` row-major, determinants.
pub fn leader_csv(model: &Model, sol: &LeaderSolution) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("t");
    for k in 1..=4 {
        for r in 0..4 {
            for c in 0..5 {
                let _ = write!(out, ",P{k}_{r}{c}");
            }
        }
    }
    out.push_str(",det1,det2,det3,det4\n");
    for k in 0..model.grid.n_nodes() {
        let _ = write!(out, "{}", model.grid.node(k));
        for j in 0..4 {
            for r in 0..4 {
                for c in 0..5 {
                    let _ = write!(out, ",{}", sol.p[j][k][r][c]);
                }
            }
        }
        let d = sol.gains[k].dets;
        let _ = writeln!(out, ",{},{},{},{}", d[0], d[1], d[2], d[3]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::constant_model;

    fn small_model(steps: usize) -> Model {
        constant_model(
            [0.1, 0.1, 0.05, 0.1],
            [0.8, 0.15, 0.1, 0.1],
            [0.7, 0.1, 0.15, 0.05],
            [0.5, 0.1, 0.05, 0.1],
            [0.4, 0.05, 0.1, 0.05],
            [0.4, 0.5, 0.3, 0.35],
            [1.0, 1.1, 1.2, 0.9],
            [0.3, 0.25, 0.2, 0.15],
            1.0,
            1.0,
            steps,
        )
        .unwrap()
    }

    #[test]
    fn zero_cost_leaders_fixpoint() {
        // Zero leader weights make P vanish identically when the followers'
        // backward pair carries no leader coupling (d = e = 0, so f1 = f2
        // = 0 and the nested-estimate weight block vanishes).
        let m = constant_model(
            [0.2, 0.1, 0.05, 0.1],
            [0.9, 0.2, 0.1, 0.1],
            [0.8, 0.1, 0.2, 0.05],
            [0.0; 4],
            [0.0; 4],
            [0.4, 0.5, 0.0, 0.0],
            [1.0, 1.1, 1.2, 0.9],
            [0.3, 0.25, 0.0, 0.0],
            1.0,
            1.0,
            64,
        )
        .unwrap();
        let sol = solve_leader(&m).unwrap();
        for k in 0..m.grid.n_nodes() {
            for j in 0..4 {
                assert_eq!(linalg::max_abs(&sol.p[j][k]), 0.0, "P{} at node {k}", j + 1);
            }
            for i in 0..3 {
                assert_eq!(linalg::max_abs(&sol.gains[k].full_x[i]), 0.0);
            }
        }
    }

    #[test]
    fn zero_data_fixpoint_with_active_leaders() {
        // Q = 0 and G = 0 for every player: the follower pair is zero, so
        // the backward coupling blocks vanish and P stays exactly zero even
        // though the leaders' control channels are live.
        let m = constant_model(
            [0.2, 0.1, 0.05, 0.1],
            [0.9, 0.2, 0.1, 0.1],
            [0.8, 0.1, 0.2, 0.05],
            [0.5, 0.1, 0.05, 0.1],
            [0.4, 0.05, 0.1, 0.05],
            [0.0; 4],
            [1.0, 1.1, 1.2, 0.9],
            [0.0; 4],
            1.0,
            1.0,
            64,
        )
        .unwrap();
        let sol = solve_leader(&m).unwrap();
        for k in 0..m.grid.n_nodes() {
            for j in 0..4 {
                assert_eq!(linalg::max_abs(&sol.p[j][k]), 0.0);
            }
        }
    }

    #[test]
    fn nested_weight_block_is_load_bearing() {
        // Dropping the nested-estimate weight block from the fourth
        // equation leaves a backward sweep whose representation drifts away
        // from the simulated backward pair at O(1); the assembled block is
        // what makes the drift comparison close. Checked here at the
        // algebra level: the block equals the substituted-control coupling
        // and is nonzero whenever the pair reacts to the leaders.
        let m = small_model(16);
        let sol = solve_leader(&m).unwrap();
        let mats = &sol.mats[0];
        let f1 = sol.nodes[0].f1;
        let f2 = sol.nodes[0].f2;
        assert!(f1[0].abs() > 1e-12, "model must have reacting followers");
        for r in 0..2 {
            for (c, want) in [
                (1, -f1[r] * f1[0] / mats.r3),
                (2, -f1[r] * f1[1] / mats.r3),
                (3, -f2[r] * f2[0] / mats.r4),
                (4, -f2[r] * f2[1] / mats.r4),
            ] {
                assert!((mats.qcal_checkhat[r][c] - want).abs() < 1e-15);
            }
        }
        for c in 0..5 {
            assert_eq!(mats.qcal_checkhat[2][c], 0.0);
            assert_eq!(mats.qcal_checkhat[3][c], 0.0);
        }
    }

    #[test]
    fn terminal_conditions_exact() {
        let m = small_model(32);
        let sol = solve_leader(&m).unwrap();
        let n = m.grid.n_steps;
        assert_eq!(sol.p[0][n][2][0], m.coeffs.g[2]);
        assert_eq!(sol.p[0][n][3][0], m.coeffs.g[3]);
        for j in 1..4 {
            assert_eq!(linalg::max_abs(&sol.p[j][n]), 0.0);
        }
    }

    #[test]
    fn joint_sweep_matches_standalone_follower() {
        let m = small_model(64);
        let sol = solve_leader(&m).unwrap();
        for k in 0..m.grid.n_nodes() {
            assert_eq!(
                sol.nodes[k].ptilde[0].to_bits(),
                sol.follower.ptilde1[k].to_bits()
            );
            assert_eq!(
                sol.nodes[k].ptilde[1].to_bits(),
                sol.follower.ptilde2[k].to_bits()
            );
        }
    }

    #[test]
    fn rk4_order_on_p1() {
        let p0 = |steps: usize| {
            let m = small_model(steps);
            let sol = solve_leader(&m).unwrap();
            sol.p[0][0]
        };
        let a = p0(100);
        let b = p0(200);
        let c = p0(400);
        let d1 = linalg::max_abs(&linalg::sub(&a, &b));
        let d2 = linalg::max_abs(&linalg::sub(&b, &c));
        let ratio = d1 / d2;
        assert!(ratio >= 8.0, "convergence ratio {ratio}");
        assert!((3.5..=4.8).contains(&ratio.log2()), "observed order {}", ratio.log2());
    }

    #[test]
    fn audit_total_matches_production_rhs() {
        let m = small_model(16);
        let sol = solve_leader(&m).unwrap();
        for k in [0, 8, 16] {
            let p = sol.p_at(k);
            let audit = riccati_rhs_audit(&sol.mats[k], &p, &sol.gains[k]);
            let totals = audit.totals();
            let rhs = leader_rhs(&sol.mats[k], &p, &sol.gains[k]);
            for eq in 0..4 {
                let diff = linalg::max_abs(&linalg::add(&totals[eq], &rhs[eq]));
                let scale = 1.0 + linalg::max_abs(&totals[eq]);
                assert!(diff / scale < 1e-13, "eq {eq} node {k}: {diff}");
            }
        }
    }

    #[test]
    fn audit_zero_p_leaves_only_q_terms() {
        // d = e = 0 so the checkhat weight block vanishes too.
        let m = constant_model(
            [0.1, 0.1, 0.05, 0.1],
            [0.8, 0.15, 0.1, 0.1],
            [0.7, 0.1, 0.15, 0.05],
            [0.0; 4],
            [0.0; 4],
            [0.4, 0.5, 0.3, 0.35],
            [1.0, 1.1, 1.2, 0.9],
            [0.3, 0.25, 0.2, 0.15],
            1.0,
            1.0,
            8,
        )
        .unwrap();
        let sol = solve_leader(&m).unwrap();
        let p = [zeros::<4, 5>(); 4];
        let gains = solve_decoupling(&sol.mats[0], &p).unwrap();
        let audit = riccati_rhs_audit(&sol.mats[0], &p, &gains);
        for (eq, terms) in audit.terms.iter().enumerate() {
            for (label, m) in terms {
                if *label == "Qcal" {
                    assert!(linalg::max_abs(m) > 0.0);
                } else {
                    assert_eq!(linalg::max_abs(m), 0.0, "eq {eq} term {label}");
                }
            }
        }
    }

    #[test]
    fn audit_perturbation_breaks_equality() {
        let m = small_model(16);
        let sol = solve_leader(&m).unwrap();
        let p = sol.p_at(8);
        let mut audit = riccati_rhs_audit(&sol.mats[8], &p, &sol.gains[8]);
        audit.terms[0][0].1[0][0] += 0.1;
        let totals = audit.totals();
        let rhs = leader_rhs(&sol.mats[8], &p, &sol.gains[8]);
        let diff = linalg::max_abs(&linalg::add(&totals[0], &rhs[0]));
        assert!(diff > 0.09);
    }

    #[test]
    fn determinants_keep_sign_along_solve() {
        let m = small_model(128);
        let sol = solve_leader(&m).unwrap();
        for stage in 0..4 {
            for k in 1..m.grid.n_nodes() {
                let a = sol.gains[k - 1].dets[stage];
                let b = sol.gains[k].dets[stage];
                assert!(a * b > 0.0, "stage {stage} determinant sign flip at node {k}");
            }
        }
    }

    #[test]
    fn substep_refinement_stays_close() {
        let m = small_model(50);
        let a = solve_leader_with(&m, 1).unwrap();
        let b = solve_leader_with(&m, 4).unwrap();
        let d = linalg::max_abs(&linalg::sub(&a.p[0][0], &b.p[0][0]));
        assert!(d < 1e-9, "substep difference {d}");
    }
}
