//! Redundant forward integration of the backward objects.
//!
//! The closed loop reads every backward quantity from its feedback
//! representation. Here the backward states are *also* advanced as forward
//! Euler processes from their time-zero representation values, using the
//! backward drifts and the representation diffusions. In the continuous
//! model both routes coincide; on the grid they differ by the Euler
//! consistency error, so the gap must shrink under refinement -- and any
//! slip in the Riccati right-hand sides, the block assembly, or the gain
//! algebra leaves an O(1) gap instead. The stationarity residuals are
//! evaluated against the shadow adjoints for the same reason.

use crate::follower::DiffusionSums;
use crate::leader_riccati::LeaderSolution;
use crate::linalg::{self, mat_vec};
use crate::model::Model;
use crate::sim::{step_state, ClosedLoop};

/// Sup-norm residuals along one driven path.
#[derive(Debug, Clone, Copy, Default)]
pub struct ShadowReport {
    /// Shadow minus representation, per backward object.
    pub gap_y: f64,
    pub gap_yhat: f64,
    pub gap_ycheck: f64,
    pub gap_ych: f64,
    /// Unstacked minus stacked forward trajectories.
    pub stacked_x: f64,
    pub stacked_xhat: f64,
    pub stacked_adjoint: f64,
    /// Terminal identities `z_j(T) - G_j x(T)` and `phi_j(T)`.
    pub terminal_z: f64,
    pub terminal_phi: f64,
    /// Stationarity residuals (players 1..4).
    pub smp: [f64; 4],
    /// Residual of the followers' 2x2 gain system along the path.
    pub gain_reconstruction: f64,
}

fn vec4_sub(a: &[f64; 4], b: &[f64; 4]) -> [f64; 4] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

fn max_abs4(a: &[f64; 4]) -> f64 {
    a.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Run the primal system and every shadow on one noise realization.
///
/// `increments(step)` supplies the Brownian increments, so refinement
/// studies can coarsen one fixed fine path.
pub fn shadow_run(
    model: &Model,
    sol: &LeaderSolution,
    cl: &ClosedLoop,
    mut increments: impl FnMut(usize) -> [f64; 3],
) -> ShadowReport {
    let n = cl.n_steps;
    let dt = cl.dt;
    let mut rep = ShadowReport::default();

    let mut s = cl.s0;
    // Shadow backward states, initialized at the representation values.
    let mut y_sh = mat_vec(&cl.rep[0].y, &s);
    let mut yhat_sh = mat_vec(&cl.rep[0].yhat, &s);
    let mut ycheck_sh = mat_vec(&cl.rep[0].ycheck, &s);
    let mut ych_sh = mat_vec(&cl.rep[0].ych, &s);
    // Unstacked forward states.
    let mut x_u = model.coeffs.x0;
    let mut xhat_u = model.coeffs.x0;
    let mut y3_u = [0.0f64; 2];
    let mut y4_u = [0.0f64; 2];

    for k in 0..=n {
        let mats = &sol.mats[k];
        let node = &sol.nodes[k];
        let c = &cl.coeffs[k];
        let r = &cl.rep[k];

        let u = mat_vec(&cl.ctrl[k], &s);
        let y_rep = mat_vec(&r.y, &s);
        let yhat_rep = mat_vec(&r.yhat, &s);
        let ycheck_rep = mat_vec(&r.ycheck, &s);
        let ych_rep = mat_vec(&r.ych, &s);
        let z_rep: [[f64; 4]; 3] = [
            mat_vec(&r.z[0], &s),
            mat_vec(&r.z[1], &s),
            mat_vec(&r.z[2], &s),
        ];
        let zhat_rep: [[f64; 4]; 3] = [
            mat_vec(&r.zhat[0], &s),
            mat_vec(&r.zhat[1], &s),
            mat_vec(&r.zhat[2], &s),
        ];
        let zcheck_rep: [[f64; 4]; 3] = [
            mat_vec(&r.zcheck[0], &s),
            mat_vec(&r.zcheck[1], &s),
            mat_vec(&r.zcheck[2], &s),
        ];
        let zch_rep: [[f64; 4]; 3] = [
            mat_vec(&r.zch[0], &s),
            mat_vec(&r.zch[1], &s),
            mat_vec(&r.zch[2], &s),
        ];

        // Gaps and residuals at this node.
        rep.gap_y = rep.gap_y.max(max_abs4(&vec4_sub(&y_sh, &y_rep)));
        rep.gap_yhat = rep.gap_yhat.max(max_abs4(&vec4_sub(&yhat_sh, &yhat_rep)));
        rep.gap_ycheck = rep
            .gap_ycheck
            .max(max_abs4(&vec4_sub(&ycheck_sh, &ycheck_rep)));
        rep.gap_ych = rep.gap_ych.max(max_abs4(&vec4_sub(&ych_sh, &ych_rep)));
        rep.stacked_x = rep.stacked_x.max((x_u - s[0]).abs());
        rep.stacked_xhat = rep.stacked_xhat.max((xhat_u - s[5]).abs());
        rep.stacked_adjoint = rep
            .stacked_adjoint
            .max((y3_u[0] - s[1]).abs())
            .max((y3_u[1] - s[2]).abs())
            .max((y4_u[0] - s[3]).abs())
            .max((y4_u[1] - s[4]).abs());

        // Leaders' stationarity against the shadow backward states.
        let xch_blk = [s[15], s[16], s[17], s[18], s[19]];
        let mut bracket3 = linalg::dot(&mats.fcal1, &xch_blk);
        bracket3 += linalg::dot(&mats.dbar[0], &ycheck_sh);
        bracket3 += linalg::dot(&mats.mbar4[0], &ych_sh);
        let mut bracket4 = linalg::dot(&mats.fcal2, &xch_blk);
        bracket4 += linalg::dot(&mats.ebar[0], &ycheck_sh);
        bracket4 += linalg::dot(&mats.mbar5[0], &ych_sh);
        for i in 0..3 {
            bracket3 += linalg::dot(&mats.dbar[i + 1], &zcheck_rep[i]);
            bracket3 += linalg::dot(&mats.mbar4[i + 1], &zch_rep[i]);
            bracket4 += linalg::dot(&mats.ebar[i + 1], &zcheck_rep[i]);
            bracket4 += linalg::dot(&mats.mbar5[i + 1], &zch_rep[i]);
        }
        rep.smp[2] = rep.smp[2].max((u[2] + bracket3 / mats.r3).abs());
        rep.smp[3] = rep.smp[3].max((u[3] + bracket4 / mats.r4).abs());

        // Followers' stationarity with shadow phi and representation zetas.
        let phih_sh = [yhat_sh[0], yhat_sh[1]];
        let zeta_w1 = [zhat_rep[0][0], zhat_rep[0][1]];
        let zeta_w3 = [zhat_rep[2][0], zhat_rep[2][1]];
        let xhat0 = s[5];
        let u3hat = {
            let mut v = 0.0;
            for cix in 0..5 {
                v += (cl.ctrl[k][2][10 + cix] + cl.ctrl[k][2][15 + cix]) * s[15 + cix];
            }
            v
        };
        let u4hat = {
            let mut v = 0.0;
            for cix in 0..5 {
                v += (cl.ctrl[k][3][10 + cix] + cl.ctrl[k][3][15 + cix]) * s[15 + cix];
            }
            v
        };
        for j in 0..2 {
            let pt = node.ptilde[j];
            let w0 = if j == 0 { c.b } else { c.c };
            let phat = -pt * xhat0 - phih_sh[j];
            let mut resid = c.r[j] * u[j] - w0[0] * phat;
            for i in 1..4 {
                let drift_i = c.a[i] * xhat0
                    + c.b[i] * u[0]
                    + c.c[i] * u[1]
                    + c.d[i] * u3hat
                    + c.e[i] * u4hat;
                let zeta_ji = match i {
                    1 => {
                        if j == 0 {
                            zeta_w1[0]
                        } else {
                            zeta_w1[1]
                        }
                    }
                    3 => {
                        if j == 0 {
                            zeta_w3[0]
                        } else {
                            zeta_w3[1]
                        }
                    }
                    _ => 0.0,
                };
                let khat = -pt * drift_i - zeta_ji;
                resid -= w0[i] * khat;
            }
            rep.smp[j] = rep.smp[j].max(resid.abs());
        }

        // Followers' 2x2 gain system residual (all quantities algebraic).
        {
            let sums = DiffusionSums::new(c);
            let lhs = [
                node.nmat[0][0] * u[0] + node.nmat[0][1] * u[1],
                node.nmat[1][0] * u[0] + node.nmat[1][1] * u[1],
            ];
            let phih_rep = [yhat_rep[0], yhat_rep[1]];
            let rhs = [
                -(node.ptilde[0] * node.bbar1 * xhat0
                    + node.ptilde[0] * sums.bd * u3hat
                    + node.ptilde[0] * sums.be * u4hat
                    + c.b[0] * phih_rep[0]
                    + c.b[1] * zeta_w1[0]
                    + c.b[3] * zeta_w3[0]),
                -(node.ptilde[1] * node.cbar1 * xhat0
                    + node.ptilde[1] * sums.cd * u3hat
                    + node.ptilde[1] * sums.ce * u4hat
                    + c.c[0] * phih_rep[1]
                    + c.c[1] * zeta_w1[1]
                    + c.c[3] * zeta_w3[1]),
            ];
            rep.gain_reconstruction = rep
                .gain_reconstruction
                .max((lhs[0] - rhs[0]).abs())
                .max((lhs[1] - rhs[1]).abs());
        }

        if k == n {
            rep.terminal_z = (y_sh[2] - model.coeffs.g[2] * s[0])
                .abs()
                .max((y_sh[3] - model.coeffs.g[3] * s[0]).abs());
            rep.terminal_phi = yhat_sh[0].abs().max(yhat_sh[1].abs());
            break;
        }

        // --- advance one step ---
        let dw = increments(k);

        // Shadow backward states: backward drifts, representation diffusions.
        let qx = |x5: &[f64; 5]| mat_vec(&mats.qcal, x5);
        let x_blk = [s[0], s[1], s[2], s[3], s[4]];
        let xh_blk = [s[5], s[6], s[7], s[8], s[9]];
        let xc_blk = [s[10], s[11], s[12], s[13], s[14]];
        let qch_x = mat_vec(&mats.qcal_checkhat, &xch_blk);

        let mut b_y = qx(&x_blk);
        let mut b_yhat = qx(&xh_blk);
        let mut b_ycheck = qx(&xc_blk);
        let mut b_ych = qx(&xch_blk);
        for r4 in 0..4 {
            b_y[r4] += qch_x[r4];
            b_yhat[r4] += qch_x[r4];
            b_ycheck[r4] += qch_x[r4];
            b_ych[r4] += qch_x[r4];
        }
        let add_mat4 = |acc: &mut [f64; 4], m: &crate::linalg::M44, v: &[f64; 4]| {
            let t = mat_vec(m, v);
            for r4 in 0..4 {
                acc[r4] += t[r4];
            }
        };
        add_mat4(&mut b_y, &mats.abar[0], &y_sh);
        add_mat4(&mut b_y, &mats.mbar1[0], &yhat_sh);
        add_mat4(&mut b_y, &mats.ical[0], &ych_sh);
        add_mat4(&mut b_yhat, &mats.abar[0], &yhat_sh);
        add_mat4(&mut b_yhat, &mats.mbar1[0], &yhat_sh);
        add_mat4(&mut b_yhat, &mats.ical[0], &ych_sh);
        add_mat4(&mut b_ycheck, &mats.abar[0], &ycheck_sh);
        add_mat4(&mut b_ycheck, &mats.mbar1[0], &ych_sh);
        add_mat4(&mut b_ycheck, &mats.ical[0], &ych_sh);
        add_mat4(&mut b_ych, &mats.abar[0], &ych_sh);
        add_mat4(&mut b_ych, &mats.mbar1[0], &ych_sh);
        add_mat4(&mut b_ych, &mats.ical[0], &ych_sh);
        for i in 0..3 {
            add_mat4(&mut b_y, &mats.abar[i + 1], &z_rep[i]);
            add_mat4(&mut b_y, &mats.mbar1[i + 1], &zhat_rep[i]);
            add_mat4(&mut b_y, &mats.ical[i + 1], &zch_rep[i]);
            add_mat4(&mut b_yhat, &mats.abar[i + 1], &zhat_rep[i]);
            add_mat4(&mut b_yhat, &mats.mbar1[i + 1], &zhat_rep[i]);
            add_mat4(&mut b_yhat, &mats.ical[i + 1], &zch_rep[i]);
            add_mat4(&mut b_ycheck, &mats.abar[i + 1], &zcheck_rep[i]);
            add_mat4(&mut b_ycheck, &mats.mbar1[i + 1], &zch_rep[i]);
            add_mat4(&mut b_ycheck, &mats.ical[i + 1], &zch_rep[i]);
            add_mat4(&mut b_ych, &mats.abar[i + 1], &zch_rep[i]);
            add_mat4(&mut b_ych, &mats.mbar1[i + 1], &zch_rep[i]);
            add_mat4(&mut b_ych, &mats.ical[i + 1], &zch_rep[i]);
        }
        for r4 in 0..4 {
            y_sh[r4] += -b_y[r4] * dt
                + z_rep[0][r4] * dw[0]
                + z_rep[1][r4] * dw[1]
                + z_rep[2][r4] * dw[2];
            yhat_sh[r4] += -b_yhat[r4] * dt + zhat_rep[0][r4] * dw[0] + zhat_rep[2][r4] * dw[2];
            ycheck_sh[r4] +=
                -b_ycheck[r4] * dt + zcheck_rep[1][r4] * dw[1] + zcheck_rep[2][r4] * dw[2];
            ych_sh[r4] += -b_ych[r4] * dt + zch_rep[2][r4] * dw[2];
        }

        // Unstacked forward states driven by the pre-update shadow phi.
        let phi_pre = phih_sh;
        let zeta_pair = |l: usize| -> [f64; 2] {
            match l {
                1 => zeta_w1,
                3 => zeta_w3,
                _ => [0.0, 0.0],
            }
        };
        let chan_x = |i: usize, x: f64, xh: f64| -> f64 {
            let nb = &node.nblk[i];
            c.a[i] * x
                + node.m1[i] * xh
                + nb[0][0] * phi_pre[0]
                + nb[0][1] * phi_pre[1]
                + nb[1][0] * zeta_pair(1)[0]
                + nb[1][1] * zeta_pair(1)[1]
                + nb[3][0] * zeta_pair(3)[0]
                + nb[3][1] * zeta_pair(3)[1]
                + c.d[i] * u[2]
                + node.m4[i] * u3hat
                + c.e[i] * u[3]
                + node.m5[i] * u4hat
        };
        let chan_xhat = |i: usize, xh: f64| -> f64 {
            let nb = &node.nblk[i];
            (c.a[i] + node.m1[i]) * xh
                + nb[0][0] * phi_pre[0]
                + nb[0][1] * phi_pre[1]
                + nb[1][0] * zeta_pair(1)[0]
                + nb[1][1] * zeta_pair(1)[1]
                + nb[3][0] * zeta_pair(3)[0]
                + nb[3][1] * zeta_pair(3)[1]
                + (c.d[i] + node.m4[i]) * u3hat
                + (c.e[i] + node.m5[i]) * u4hat
        };
        let x_u_new = x_u
            + chan_x(0, x_u, xhat_u) * dt
            + chan_x(1, x_u, xhat_u) * dw[0]
            + chan_x(2, x_u, xhat_u) * dw[1]
            + chan_x(3, x_u, xhat_u) * dw[2];
        let xhat_u_new =
            xhat_u + chan_xhat(0, xhat_u) * dt + chan_xhat(1, xhat_u) * dw[0] + chan_xhat(3, xhat_u) * dw[2];

        // Adjoint pair SDEs of the unstacked system.
        let at = |m: &[[f64; 2]; 2], v: &[f64; 2]| -> [f64; 2] {
            [m[0][0] * v[0] + m[1][0] * v[1], m[0][1] * v[0] + m[1][1] * v[1]]
        };
        let step_yj = |yj: &mut [f64; 2], zj: f64, q1: f64, q2: f64, q3: f64| {
            let nb = &node.nblk;
            let qs = [q1, q2, q3];
            let drift = {
                let a = at(&node.a0, yj);
                let mut v = [a[0] + nb[0][0][0] * zj, a[1] + nb[0][0][1] * zj];
                for i in 1..4 {
                    v[0] += nb[i][0][0] * qs[i - 1];
                    v[1] += nb[i][0][1] * qs[i - 1];
                }
                v
            };
            let dif1 = {
                let a = at(&node.a1, yj);
                let mut v = [a[0] + nb[0][1][0] * zj, a[1] + nb[0][1][1] * zj];
                for i in 1..4 {
                    v[0] += nb[i][1][0] * qs[i - 1];
                    v[1] += nb[i][1][1] * qs[i - 1];
                }
                v
            };
            let dif3 = {
                let a = at(&node.a3, yj);
                let mut v = [a[0] + nb[0][3][0] * zj, a[1] + nb[0][3][1] * zj];
                for i in 1..4 {
                    v[0] += nb[i][3][0] * qs[i - 1];
                    v[1] += nb[i][3][1] * qs[i - 1];
                }
                v
            };
            for r2 in 0..2 {
                yj[r2] += drift[r2] * dt + dif1[r2] * dw[0] + dif3[r2] * dw[2];
            }
        };
        step_yj(&mut y3_u, y_rep[2], z_rep[0][2], z_rep[1][2], z_rep[2][2]);
        step_yj(&mut y4_u, y_rep[3], z_rep[0][3], z_rep[1][3], z_rep[2][3]);

        x_u = x_u_new;
        xhat_u = xhat_u_new;

        // Primal step last: coefficients above were all read at node k.
        step_state(&mut s, &cl.f[k], dt, &dw);
    }

    rep
}

/// Refinement study of the shadow residuals on one nested Brownian path.
#[derive(Debug, Clone)]
pub struct RefinementReport {
    pub steps: Vec<usize>,
    pub reports: Vec<ShadowReport>,
    /// Observed orders between successive levels for the SMP residuals.
    pub smp_orders: Vec<[f64; 4]>,
    pub rep_gap_orders: Vec<f64>,
}

/// Solve + simulate the same model at each grid size on one common noise
/// realization (fine increments summed into coarse ones).
pub fn smp_refinement_orders(
    model: &Model,
    seed: u64,
    steps: &[usize],
) -> crate::error::Result<RefinementReport> {
    use crate::equilibrium::equilibrium_gains;
    use crate::leader_riccati::solve_leader;
    use crate::rng::NoiseGen;
    use crate::sim::build_closed_loop;

    let finest = *steps.iter().max().unwrap();
    let fine_dt = model.coeffs.horizon / finest as f64;
    let fine = NoiseGen::new(seed, fine_dt);

    let mut reports = Vec::new();
    for &n in steps {
        if n == 0 || finest % n != 0 {
            return Err(crate::error::Error::Validation(format!(
                "refinement levels must nest: {n} does not divide {finest}"
            )));
        }
        let factor = finest / n;
        let m = model.with_steps(n);
        let sol = solve_leader(&m)?;
        let gains = equilibrium_gains(&m, &sol)?;
        let cl = build_closed_loop(&m, &sol, &gains)?;
        let rep = shadow_run(&m, &sol, &cl, |k| {
            let mut acc = [0.0; 3];
            for sub in 0..factor {
                let dwf = fine.increments(0, k * factor + sub);
                for c in 0..3 {
                    acc[c] += dwf[c];
                }
            }
            acc
        });
        reports.push(rep);
    }

    let mut smp_orders = Vec::new();
    let mut rep_gap_orders = Vec::new();
    for w in reports.windows(2) {
        let mut o = [0.0; 4];
        for p in 0..4 {
            o[p] = (w[0].smp[p] / w[1].smp[p]).log2();
        }
        smp_orders.push(o);
        rep_gap_orders.push((w[0].gap_y / w[1].gap_y).log2());
    }
    Ok(RefinementReport {
        steps: steps.to_vec(),
        reports,
        smp_orders,
        rep_gap_orders,
    })
}
