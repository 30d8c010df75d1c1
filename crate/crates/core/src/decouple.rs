//! State-estimate decoupling of the stacked diffusion blocks.
//!
//! Matching diffusion terms in the stacked backward equation couples the
//! three blocks `Z_1..Z_3` to each other and to the four state estimates.
//! Taking conditional expectations stage by stage (nested estimate first,
//! then each single filtration, then the raw relation) turns the coupling
//! into four 12x12 linear systems whose solutions are the gain families
//!
//! `Zhatcheck_i = N_i Xhatcheck`, `Zcheck_i = Ncheck_i Xcheck + Ntilde_i Xhatcheck`,
//! `Zhat_i = Nhat_i Xhat + Nhatch_i Xhatcheck`, and the full
//! `Z_i = Nfull_i X + ... ` split over all four estimates.
//!
//! Everything in this module derives from a single transcription of the
//! per-channel coupled relation (`channel_relation`): each stage is the
//! corresponding conditional projection of that relation, so a slip in one
//! block cannot hide from the consistency residuals.

use crate::error::{Error, Result};
use crate::leader_mats::LeaderMats;
use crate::linalg::{self, mul, mul_acc, zeros, Lu, Mat, M44, M45};

/// Reciprocal-condition gate for the four stage systems.
pub const RCOND_TOL: f64 = 1e-12;

/// Coupled-relation coefficients for one Brownian channel (or the drift,
/// channel 0): `lhs = const_x X + const_xhat Xhat + const_xcheck Xcheck
/// + const_xch Xhatcheck + sum_j (coef_z[j] Z_j + coef_zhat[j] Zhat_j
/// + coef_zcheck[j] Zcheck_j + coef_zch[j] Zhatcheck_j)`.
#[derive(Debug, Clone)]
pub struct ChannelRelation {
    pub const_x: M45,
    pub const_xhat: M45,
    pub const_xcheck: M45,
    pub const_xch: M45,
    pub coef_z: [M44; 3],
    pub coef_zhat: [M44; 3],
    pub coef_zcheck: [M44; 3],
    pub coef_zch: [M44; 3],
}

/// Relation coefficients for the three diffusion channels.
#[derive(Debug, Clone)]
pub struct ZRelation {
    pub ch: [ChannelRelation; 3],
}

/// Sum of the four estimate gains.
fn p_sum(p: &[M45; 4]) -> M45 {
    let mut s = p[0];
    for k in 1..4 {
        s = linalg::add(&s, &p[k]);
    }
    s
}

/// Build the coupled-relation coefficients for channel `i` (0 = drift).
///
/// The estimate processes only carry diffusion in their own channels, so
/// the `P2`, `P3`, `P4` contributions switch off outside them.
pub fn channel_relation(mats: &LeaderMats, p: &[M45; 4], i: usize) -> ChannelRelation {
    let hat_on = i != 2;
    let check_on = i != 1;
    let ch_on = i == 0 || i == 3;
    let sp = p_sum(p);
    let p12 = linalg::add(&p[0], &p[1]);
    let p34 = linalg::add(&p[2], &p[3]);
    let p13 = linalg::add(&p[0], &p[2]);
    let p24 = linalg::add(&p[1], &p[3]);

    let a = &mats.acal[i];
    let m = &mats.mcal[i];
    let h = &mats.hcal[i];
    let n0 = &mats.ncal[i][0];
    let b0 = &mats.bcal[i][0];
    let c0 = &mats.ccal[i][0];

    let p1n0 = mul(&p[0], n0);
    let p1b0 = mul(&p[0], b0);
    let p1c0 = mul(&p[0], c0);

    let const_x = linalg::add(&mul(&p[0], a), &mul(&p1n0, &p[0]));

    let mut const_xhat = mul(&p[0], m);
    mul_acc(&mut const_xhat, &p1n0, &p[1]);
    if hat_on {
        let am = linalg::add(a, m);
        const_xhat = linalg::add(&const_xhat, &mul(&p[1], &am));
        mul_acc(&mut const_xhat, &mul(&p[1], n0), &p12);
    }

    let mut const_xcheck = mul(&p1n0, &p[2]);
    mul_acc(&mut const_xcheck, &p1b0, &p13);
    if check_on {
        const_xcheck = linalg::add(&const_xcheck, &mul(&p[2], a));
        let nb = linalg::add(n0, b0);
        mul_acc(&mut const_xcheck, &mul(&p[2], &nb), &p13);
    }

    let mut const_xch = mul(&p[0], h);
    mul_acc(&mut const_xch, &p1n0, &p[3]);
    mul_acc(&mut const_xch, &p1b0, &p24);
    mul_acc(&mut const_xch, &p1c0, &sp);
    if hat_on {
        const_xch = linalg::add(&const_xch, &mul(&p[1], h));
        mul_acc(&mut const_xch, &mul(&p[1], n0), &p34);
        let bc = linalg::add(b0, c0);
        mul_acc(&mut const_xch, &mul(&p[1], &bc), &sp);
    }
    if check_on {
        let mh = linalg::add(m, h);
        const_xch = linalg::add(&const_xch, &mul(&p[2], &mh));
        let nb = linalg::add(n0, b0);
        mul_acc(&mut const_xch, &mul(&p[2], &nb), &p24);
        mul_acc(&mut const_xch, &mul(&p[2], c0), &sp);
    }
    if ch_on {
        let amh = linalg::add(&linalg::add(a, m), h);
        const_xch = linalg::add(&const_xch, &mul(&p[3], &amh));
        let nbc = linalg::add(&linalg::add(n0, b0), c0);
        mul_acc(&mut const_xch, &mul(&p[3], &nbc), &sp);
    }

    let mut coef_z = [zeros::<4, 4>(); 3];
    let mut coef_zhat = [zeros::<4, 4>(); 3];
    let mut coef_zcheck = [zeros::<4, 4>(); 3];
    let mut coef_zch = [zeros::<4, 4>(); 3];
    for j in 0..3 {
        let nj = &mats.ncal[i][j + 1];
        let bj = &mats.bcal[i][j + 1];
        let cj = &mats.ccal[i][j + 1];
        coef_z[j] = mul(&p[0], nj);
        coef_zcheck[j] = mul(&p[0], bj);
        coef_zch[j] = mul(&p[0], cj);
        if hat_on {
            coef_zhat[j] = mul(&p[1], nj);
            let bcj = linalg::add(bj, cj);
            let add = mul(&p[1], &bcj);
            coef_zch[j] = linalg::add(&coef_zch[j], &add);
        }
        if check_on {
            let nbj = linalg::add(nj, bj);
            coef_zcheck[j] = linalg::add(&coef_zcheck[j], &mul(&p[2], &nbj));
            coef_zch[j] = linalg::add(&coef_zch[j], &mul(&p[2], cj));
        }
        if ch_on {
            let nbcj = linalg::add(&linalg::add(nj, bj), cj);
            coef_zch[j] = linalg::add(&coef_zch[j], &mul(&p[3], &nbcj));
        }
    }

    ChannelRelation {
        const_x,
        const_xhat,
        const_xcheck,
        const_xch,
        coef_z,
        coef_zhat,
        coef_zcheck,
        coef_zch,
    }
}

pub fn z_relation(mats: &LeaderMats, p: &[M45; 4]) -> ZRelation {
    ZRelation {
        ch: [
            channel_relation(mats, p, 1),
            channel_relation(mats, p, 2),
            channel_relation(mats, p, 3),
        ],
    }
}

/// Gain families recovered from the four staged solves.
#[derive(Debug, Clone, Default)]
pub struct DecouplingGains {
    /// `Zhatcheck_i = chkhat[i] Xhatcheck`.
    pub chkhat: [M45; 3],
    /// `Zcheck_i = chk_on_chk[i] Xcheck + chk_on_chkhat[i] Xhatcheck`.
    pub chk_on_chk: [M45; 3],
    pub chk_on_chkhat: [M45; 3],
    /// `Zhat_i = hat_on_hat[i] Xhat + hat_on_chkhat[i] Xhatcheck`.
    pub hat_on_hat: [M45; 3],
    pub hat_on_chkhat: [M45; 3],
    /// `Z_i = full_x[i] X + full_hat[i] Xhat + full_chk[i] Xcheck + full_chkhat[i] Xhatcheck`.
    pub full_x: [M45; 3],
    pub full_hat: [M45; 3],
    pub full_chk: [M45; 3],
    pub full_chkhat: [M45; 3],
    /// Determinants of the four stage systems (gates A5..A8).
    pub dets: [f64; 4],
    pub rconds: [f64; 4],
}

fn i_minus_blocks(k: &[[M44; 3]; 3]) -> Mat<12, 12> {
    let mut a = zeros::<12, 12>();
    for bi in 0..3 {
        for bj in 0..3 {
            for r in 0..4 {
                for c in 0..4 {
                    a[4 * bi + r][4 * bj + c] = -k[bi][bj][r][c];
                }
            }
        }
    }
    for d in 0..12 {
        a[d][d] += 1.0;
    }
    a
}

fn stack_rows(rows: &[M45; 3]) -> Mat<12, 5> {
    let mut b = zeros::<12, 5>();
    for bi in 0..3 {
        for r in 0..4 {
            b[4 * bi + r] = rows[bi][r];
        }
    }
    b
}

fn unstack(sol: &Mat<12, 5>) -> [M45; 3] {
    let mut out = [zeros::<4, 5>(); 3];
    for bi in 0..3 {
        for r in 0..4 {
            out[bi][r] = sol[4 * bi + r];
        }
    }
    out
}

struct StageSolve {
    lu: Lu<12>,
    det: f64,
    rcond: f64,
}

fn factor_stage(k: &[[M44; 3]; 3], assumption: &'static str, t: f64) -> Result<StageSolve> {
    let a = i_minus_blocks(k);
    let Some(lu) = Lu::factor(&a) else {
        return Err(Error::Gate {
            assumption,
            t,
            detail: "stage coefficient matrix is singular".into(),
        });
    };
    let rcond = lu.rcond(&a);
    if rcond < RCOND_TOL {
        return Err(Error::Gate {
            assumption,
            t,
            detail: format!("reciprocal condition estimate {rcond} below {RCOND_TOL}"),
        });
    }
    Ok(StageSolve {
        det: lu.det,
        rcond,
        lu,
    })
}

fn add3(a: &M44, b: &M44) -> M44 {
    linalg::add(a, b)
}

/// Run the four decoupling stages at one time node.
pub fn solve_decoupling(mats: &LeaderMats, p: &[M45; 4]) -> Result<DecouplingGains> {
    let rel = z_relation(mats, p);
    solve_decoupling_from(&rel, mats.t)
}

/// As `solve_decoupling` but reusing an already-built relation.
pub fn solve_decoupling_from(rel: &ZRelation, t: f64) -> Result<DecouplingGains> {
    let mut gains = DecouplingGains::default();

    // Stage 1: nested estimate. Everything collapses onto Xhatcheck.
    let mut k1 = [[zeros::<4, 4>(); 3]; 3];
    let mut rhs1 = [zeros::<4, 5>(); 3];
    for i in 0..3 {
        let ch = &rel.ch[i];
        rhs1[i] = linalg::add(
            &linalg::add(&ch.const_x, &ch.const_xhat),
            &linalg::add(&ch.const_xcheck, &ch.const_xch),
        );
        for j in 0..3 {
            k1[i][j] = add3(
                &add3(&ch.coef_z[j], &ch.coef_zhat[j]),
                &add3(&ch.coef_zcheck[j], &ch.coef_zch[j]),
            );
        }
    }
    let s1 = factor_stage(&k1, "A5", t)?;
    gains.chkhat = unstack(&s1.lu.solve_mat(&stack_rows(&rhs1)));
    gains.dets[0] = s1.det;
    gains.rconds[0] = s1.rcond;

    // Stage 2: leaders' filtration. Xcheck and Xhatcheck survive.
    let mut k2 = [[zeros::<4, 4>(); 3]; 3];
    let mut rhs2_chk = [zeros::<4, 5>(); 3];
    let mut rhs2_ch = [zeros::<4, 5>(); 3];
    for i in 0..3 {
        let ch = &rel.ch[i];
        rhs2_chk[i] = linalg::add(&ch.const_x, &ch.const_xcheck);
        let mut nbar = linalg::add(&ch.const_xhat, &ch.const_xch);
        for j in 0..3 {
            k2[i][j] = add3(&ch.coef_z[j], &ch.coef_zcheck[j]);
            let ktil = add3(&ch.coef_zhat[j], &ch.coef_zch[j]);
            mul_acc(&mut nbar, &ktil, &gains.chkhat[j]);
        }
        rhs2_ch[i] = nbar;
    }
    let s2 = factor_stage(&k2, "A6", t)?;
    gains.chk_on_chk = unstack(&s2.lu.solve_mat(&stack_rows(&rhs2_chk)));
    gains.chk_on_chkhat = unstack(&s2.lu.solve_mat(&stack_rows(&rhs2_ch)));
    gains.dets[1] = s2.det;
    gains.rconds[1] = s2.rcond;

    // Stage 3: followers' filtration. Xhat and Xhatcheck survive.
    let mut k3 = [[zeros::<4, 4>(); 3]; 3];
    let mut rhs3_hat = [zeros::<4, 5>(); 3];
    let mut rhs3_ch = [zeros::<4, 5>(); 3];
    for i in 0..3 {
        let ch = &rel.ch[i];
        rhs3_hat[i] = linalg::add(&ch.const_x, &ch.const_xhat);
        let mut nbb = linalg::add(&ch.const_xcheck, &ch.const_xch);
        for j in 0..3 {
            k3[i][j] = add3(&ch.coef_z[j], &ch.coef_zhat[j]);
            let kch = add3(&ch.coef_zcheck[j], &ch.coef_zch[j]);
            mul_acc(&mut nbb, &kch, &gains.chkhat[j]);
        }
        rhs3_ch[i] = nbb;
    }
    let s3 = factor_stage(&k3, "A7", t)?;
    gains.hat_on_hat = unstack(&s3.lu.solve_mat(&stack_rows(&rhs3_hat)));
    gains.hat_on_chkhat = unstack(&s3.lu.solve_mat(&stack_rows(&rhs3_ch)));
    gains.dets[2] = s3.det;
    gains.rconds[2] = s3.rcond;

    // Stage 4: the raw relation with the filtered representations inserted.
    let mut k4 = [[zeros::<4, 4>(); 3]; 3];
    let mut rhs4_x = [zeros::<4, 5>(); 3];
    let mut rhs4_hat = [zeros::<4, 5>(); 3];
    let mut rhs4_chk = [zeros::<4, 5>(); 3];
    let mut rhs4_ch = [zeros::<4, 5>(); 3];
    for i in 0..3 {
        let ch = &rel.ch[i];
        for j in 0..3 {
            k4[i][j] = ch.coef_z[j];
        }
        rhs4_x[i] = ch.const_x;
        let mut rh = ch.const_xhat;
        let mut rc = ch.const_xcheck;
        let mut rch = ch.const_xch;
        for j in 0..3 {
            mul_acc(&mut rh, &ch.coef_zhat[j], &gains.hat_on_hat[j]);
            mul_acc(&mut rc, &ch.coef_zcheck[j], &gains.chk_on_chk[j]);
            mul_acc(&mut rch, &ch.coef_zhat[j], &gains.hat_on_chkhat[j]);
            mul_acc(&mut rch, &ch.coef_zcheck[j], &gains.chk_on_chkhat[j]);
            mul_acc(&mut rch, &ch.coef_zch[j], &gains.chkhat[j]);
        }
        rhs4_hat[i] = rh;
        rhs4_chk[i] = rc;
        rhs4_ch[i] = rch;
    }
    let s4 = factor_stage(&k4, "A8", t)?;
    gains.full_x = unstack(&s4.lu.solve_mat(&stack_rows(&rhs4_x)));
    gains.full_hat = unstack(&s4.lu.solve_mat(&stack_rows(&rhs4_hat)));
    gains.full_chk = unstack(&s4.lu.solve_mat(&stack_rows(&rhs4_chk)));
    gains.full_chkhat = unstack(&s4.lu.solve_mat(&stack_rows(&rhs4_ch)));
    gains.dets[3] = s4.det;
    gains.rconds[3] = s4.rcond;

    Ok(gains)
}

/// Residual report for the recovered gain families.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConsistencyReport {
    /// Worst mismatch among the cross-stage (tower) identities.
    pub tower_max: f64,
    /// Worst residual of the raw coupled relation under the recovered gains.
    pub eq_residual_max: f64,
}

/// Check (i) tower identities between the stage families and (ii) the raw
/// relation residual after substituting every representation.
pub fn consistency_report(rel: &ZRelation, gains: &DecouplingGains) -> ConsistencyReport {
    let mut tower: f64 = 0.0;
    let mut eq: f64 = 0.0;
    for i in 0..3 {
        let sum_all = linalg::add(
            &linalg::add(&gains.full_x[i], &gains.full_hat[i]),
            &linalg::add(&gains.full_chk[i], &gains.full_chkhat[i]),
        );
        tower = tower.max(linalg::max_abs(&linalg::sub(&sum_all, &gains.chkhat[i])));
        let hat_sum = linalg::add(&gains.full_x[i], &gains.full_hat[i]);
        tower = tower.max(linalg::max_abs(&linalg::sub(&hat_sum, &gains.hat_on_hat[i])));
        let hat_ch = linalg::add(&gains.full_chk[i], &gains.full_chkhat[i]);
        tower = tower.max(linalg::max_abs(&linalg::sub(&hat_ch, &gains.hat_on_chkhat[i])));
        let chk_sum = linalg::add(&gains.full_x[i], &gains.full_chk[i]);
        tower = tower.max(linalg::max_abs(&linalg::sub(&chk_sum, &gains.chk_on_chk[i])));
        let chk_ch = linalg::add(&gains.full_hat[i], &gains.full_chkhat[i]);
        tower = tower.max(linalg::max_abs(&linalg::sub(&chk_ch, &gains.chk_on_chkhat[i])));

        let ch = &rel.ch[i];
        let mut rx = linalg::sub(&ch.const_x, &gains.full_x[i]);
        let mut rh = linalg::sub(&ch.const_xhat, &gains.full_hat[i]);
        let mut rc = linalg::sub(&ch.const_xcheck, &gains.full_chk[i]);
        let mut rch = linalg::sub(&ch.const_xch, &gains.full_chkhat[i]);
        for j in 0..3 {
            mul_acc(&mut rx, &ch.coef_z[j], &gains.full_x[j]);
            mul_acc(&mut rh, &ch.coef_z[j], &gains.full_hat[j]);
            mul_acc(&mut rh, &ch.coef_zhat[j], &gains.hat_on_hat[j]);
            mul_acc(&mut rc, &ch.coef_z[j], &gains.full_chk[j]);
            mul_acc(&mut rc, &ch.coef_zcheck[j], &gains.chk_on_chk[j]);
            mul_acc(&mut rch, &ch.coef_z[j], &gains.full_chkhat[j]);
            mul_acc(&mut rch, &ch.coef_zhat[j], &gains.hat_on_chkhat[j]);
            mul_acc(&mut rch, &ch.coef_zcheck[j], &gains.chk_on_chkhat[j]);
            mul_acc(&mut rch, &ch.coef_zch[j], &gains.chkhat[j]);
        }
        for m in [&rx, &rh, &rc, &rch] {
            eq = eq.max(linalg::max_abs(m));
        }
    }
    ConsistencyReport {
        tower_max: tower,
        eq_residual_max: eq,
    }
}
