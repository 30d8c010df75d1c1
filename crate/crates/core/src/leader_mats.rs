//! Time-indexed block matrices of the stacked leaders' system.
//!
//! The leaders' stage works on the stacked forward state `X = (x, y3, y4)`
//! in R^5 and backward state `Y = (phi1, phi2, z3, z4)` in R^4 with
//! diffusion blocks `Z_1..Z_3` in R^4 (one per Brownian channel; the top
//! two components of `Z_2` are structurally zero because the backward pair
//! is driven by W1 and W3 only). Every block below is a polynomial in the
//! follower-stage outputs; zero positions are structural and hold for all
//! models and all times.

use crate::error::{Error, Result};
use crate::follower::FollowerNode;
use crate::linalg::{Mat, M45};
use crate::model::CoeffsAt;

/// Calligraphic blocks at one grid time.
#[derive(Debug, Clone)]
pub struct LeaderMats {
    pub t: f64,
    /// State-block drift/diffusion matrices, channel 0 = drift.
    pub acal: [Mat<5, 5>; 4],
    /// Backward-block analogues.
    pub abar: [Mat<4, 4>; 4],
    /// Filtered-state coupling in the state equation, `(1,1)` entry only.
    pub mcal: [Mat<5, 5>; 4],
    /// Filtered coupling in the backward equation (lower diagonal pair).
    pub mbar1: [Mat<4, 4>; 4],
    /// Nested-estimate coupling of the state equation (top row only).
    pub hcal: [Mat<5, 5>; 4],
    /// Nested-estimate coupling of the backward equation (top two rows).
    pub ical: [Mat<4, 4>; 4],
    /// `ncal[i][j]`: channel-i coefficient on `Y` (j = 0) or `Z_j`.
    pub ncal: [[Mat<5, 4>; 4]; 4],
    /// Leaders' feedback-on-check coupling, top row only.
    pub bcal: [[Mat<5, 4>; 4]; 4],
    /// Leaders' feedback-on-checkhat coupling, top row only.
    pub ccal: [[Mat<5, 4>; 4]; 4],
    pub qcal: M45,
    /// Nested-estimate state weight in the backward drift; nonzero exactly
    /// when the filtered backward pair reacts to the leaders (f1, f2 != 0).
    pub qcal_checkhat: M45,
    pub gcal: M45,
    pub dbar: [[f64; 4]; 4],
    pub mbar4: [[f64; 4]; 4],
    pub ebar: [[f64; 4]; 4],
    pub mbar5: [[f64; 4]; 4],
    pub fcal1: [f64; 5],
    pub fcal2: [f64; 5],
    pub xcal0: [f64; 5],
    pub r3: f64,
    pub r4: f64,
    pub q3: f64,
    pub q4: f64,
}

/// Assemble every block from the follower node and model coefficients at `t`.
pub fn assemble_leader_mats(
    node: &FollowerNode,
    c: &CoeffsAt,
    g3: f64,
    g4: f64,
    x0: f64,
) -> Result<LeaderMats> {
    let t = node.t;
    let r3 = c.r[2];
    let r4 = c.r[3];
    if r3 <= 0.0 || r4 <= 0.0 {
        return Err(Error::Gate {
            assumption: "A4",
            t,
            detail: format!("R3={r3}, R4={r4}; leaders need strictly positive control weights"),
        });
    }
    let f1 = node.f1;
    let f2 = node.f2;
    let fcal1 = [0.0, f1[0], f1[1], 0.0, 0.0];
    let fcal2 = [0.0, 0.0, 0.0, f2[0], f2[1]];

    let amats: [[[f64; 2]; 2]; 4] = [node.a0, node.a1, [[0.0; 2]; 2], node.a3];

    let mut acal = [[[0.0; 5]; 5]; 4];
    let mut abar = [[[0.0; 4]; 4]; 4];
    let mut mcal = [[[0.0; 5]; 5]; 4];
    let mut mbar1 = [[[0.0; 4]; 4]; 4];
    let mut hcal = [[[0.0; 5]; 5]; 4];
    let mut ical = [[[0.0; 4]; 4]; 4];
    for i in 0..4 {
        // acal_i = blkdiag(a_i, A_i^T, A_i^T); channel 2 has no backward rows.
        acal[i][0][0] = c.a[i];
        for r in 0..2 {
            for cc in 0..2 {
                let at = amats[i][cc][r];
                acal[i][1 + r][1 + cc] = at;
                acal[i][3 + r][3 + cc] = at;
                abar[i][r][cc] = amats[i][r][cc];
            }
        }
        abar[i][2][2] = c.a[i];
        abar[i][3][3] = c.a[i];
        if i == 2 {
            // Backward objects carry no W2 block in their own dynamics.
            for r in 0..2 {
                for cc in 0..2 {
                    abar[i][r][cc] = 0.0;
                }
            }
        }

        mcal[i][0][0] = node.m1[i];
        mbar1[i][2][2] = node.m1[i];
        mbar1[i][3][3] = node.m1[i];

        let hd = -(c.d[i] + node.m4[i]) / r3;
        let he = -(c.e[i] + node.m5[i]) / r4;
        for cc in 0..5 {
            hcal[i][0][cc] = hd * fcal1[cc] + he * fcal2[cc];
        }
        for r in 0..2 {
            ical[i][r][2] = hd * f1[r];
            ical[i][r][3] = he * f2[r];
        }
    }

    let mut ncal = [[[[0.0; 4]; 5]; 4]; 4];
    let mut bcal = [[[[0.0; 4]; 5]; 4]; 4];
    let mut ccal = [[[[0.0; 4]; 5]; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            // x-row: channel-i coefficient on the top pair of Y / Z_j.
            if j != 2 {
                ncal[i][j][0][0] = node.nblk[i][j][0];
                ncal[i][j][0][1] = node.nblk[i][j][1];
            }
            // backward rows: coefficient of (z3, z4) resp. (q_{3j}, q_{4j}).
            if i != 2 {
                ncal[i][j][1][2] = node.nblk[j][i][0];
                ncal[i][j][2][2] = node.nblk[j][i][1];
                ncal[i][j][3][3] = node.nblk[j][i][0];
                ncal[i][j][4][3] = node.nblk[j][i][1];
            }
            bcal[i][j][0][2] = -c.d[i] * c.d[j] / r3;
            bcal[i][j][0][3] = -c.e[i] * c.e[j] / r4;
            ccal[i][j][0][2] =
                -(c.d[i] * node.m4[j] + node.m4[i] * c.d[j] + node.m4[i] * node.m4[j]) / r3;
            ccal[i][j][0][3] =
                -(c.e[i] * node.m5[j] + node.m5[i] * c.e[j] + node.m5[i] * node.m5[j]) / r4;
        }
    }

    let mut qcal = [[0.0; 5]; 4];
    qcal[2][0] = c.q[2];
    qcal[3][0] = c.q[3];
    let mut gcal = [[0.0; 5]; 4];
    gcal[2][0] = g3;
    gcal[3][0] = g4;

    // Substituting the filtered leader controls into the backward pair's
    // drift leaves a quadratic-in-f coupling on the nested estimate.
    let mut qch = [[0.0; 5]; 4];
    for r in 0..2 {
        for cc in 0..5 {
            qch[r][cc] = -(f1[r] * fcal1[cc] / r3 + f2[r] * fcal2[cc] / r4);
        }
    }

    let mut dbar = [[0.0; 4]; 4];
    let mut mbar4 = [[0.0; 4]; 4];
    let mut ebar = [[0.0; 4]; 4];
    let mut mbar5 = [[0.0; 4]; 4];
    for i in 0..4 {
        dbar[i][2] = c.d[i];
        mbar4[i][2] = node.m4[i];
        ebar[i][3] = c.e[i];
        mbar5[i][3] = node.m5[i];
    }

    Ok(LeaderMats {
        t,
        acal,
        abar,
        mcal,
        mbar1,
        hcal,
        ical,
        ncal,
        bcal,
        ccal,
        qcal,
        qcal_checkhat: qch,
        gcal,
        dbar,
        mbar4,
        ebar,
        mbar5,
        fcal1,
        fcal2,
        xcal0: [x0, 0.0, 0.0, 0.0, 0.0],
        r3,
        r4,
        q3: c.q[2],
        q4: c.q[3],
    })
}

/// Positions that must be exactly zero in every assembled matrix set.
pub fn structural_zero_violations(m: &LeaderMats) -> Vec<String> {
    let mut bad = Vec::new();
    let mut check = |name: String, v: f64| {
        if v != 0.0 {
            bad.push(format!("{name} = {v}"));
        }
    };
    for i in 0..4 {
        // acal: off block-diagonal.
        for r in 0..5 {
            for c in 0..5 {
                let diag = (r == 0 && c == 0)
                    || (1..3).contains(&r) && (1..3).contains(&c)
                    || (3..5).contains(&r) && (3..5).contains(&c);
                if !diag {
                    check(format!("acal[{i}][{r}][{c}]"), m.acal[i][r][c]);
                }
            }
        }
        // hcal: rows 1..5 zero.
        for r in 1..5 {
            for c in 0..5 {
                check(format!("hcal[{i}][{r}][{c}]"), m.hcal[i][r][c]);
            }
        }
        // ical: rows 2..4 and columns 0..2 zero.
        for r in 0..4 {
            for c in 0..4 {
                if r >= 2 || c < 2 {
                    check(format!("ical[{i}][{r}][{c}]"), m.ical[i][r][c]);
                }
            }
        }
        // mcal: everything outside (0,0).
        for r in 0..5 {
            for c in 0..5 {
                if !(r == 0 && c == 0) {
                    check(format!("mcal[{i}][{r}][{c}]"), m.mcal[i][r][c]);
                }
            }
        }
        for j in 0..4 {
            // ncal channel 2 on Z_2 vanishes entirely.
            if i == 2 && j == 2 {
                for r in 0..5 {
                    for c in 0..4 {
                        check(format!("ncal[2][2][{r}][{c}]"), m.ncal[i][j][r][c]);
                    }
                }
            }
            // bcal/ccal: top row, last two columns only.
            for r in 0..5 {
                for c in 0..4 {
                    if r != 0 || c < 2 {
                        check(format!("bcal[{i}][{j}][{r}][{c}]"), m.bcal[i][j][r][c]);
                        check(format!("ccal[{i}][{j}][{r}][{c}]"), m.ccal[i][j][r][c]);
                    }
                }
            }
        }
    }
    // qcal and gcal: rows 0..2 zero, column 0 only.
    for r in 0..4 {
        for c in 0..5 {
            if r < 2 || c > 0 {
                check(format!("qcal[{r}][{c}]"), m.qcal[r][c]);
                check(format!("gcal[{r}][{c}]"), m.gcal[r][c]);
            }
        }
    }
    bad
}
