//! Closed-loop Stackelberg-Nash feedback gains.
//!
//! Leaders act on `(Xcheck, Xhatcheck)` only, followers on
//! `(Xhat, Xhatcheck)` only; the tables below make that structural. Rows
//! are against the stacked 5-state `(x, y3, y4)`, with the followers' 1x3
//! rows padded by zeros on the adjoint slots.

use crate::error::Result;
use crate::leader_riccati::LeaderSolution;
use crate::linalg::{self, M45};
use crate::model::Model;

/// Per-node feedback rows for all four players.
#[derive(Debug, Clone)]
pub struct GainTables {
    pub u3_check: Vec<[f64; 5]>,
    pub u3_chkhat: Vec<[f64; 5]>,
    pub u4_check: Vec<[f64; 5]>,
    pub u4_chkhat: Vec<[f64; 5]>,
    pub u1_hat: Vec<[f64; 5]>,
    pub u1_chkhat: Vec<[f64; 5]>,
    pub u2_hat: Vec<[f64; 5]>,
    pub u2_chkhat: Vec<[f64; 5]>,
}

fn row_scale(r: &[f64; 5], s: f64) -> [f64; 5] {
    let mut out = *r;
    for v in out.iter_mut() {
        *v *= s;
    }
    out
}

fn row_add(a: &[f64; 5], b: &[f64; 5]) -> [f64; 5] {
    let mut out = *a;
    for i in 0..5 {
        out[i] += b[i];
    }
    out
}

/// `w[0] * row0(m) + w[1] * row1(m)`: a follower 1x2 row against the
/// backward-pair rows of a 4x5 gain.
fn pair_rows(w: &[f64; 2], m: &M45) -> [f64; 5] {
    let mut out = [0.0; 5];
    for c in 0..5 {
        out[c] = w[0] * m[0][c] + w[1] * m[1][c];
    }
    out
}

/// Leaders' feedback rows at node `k`.
fn leader_rows(sol: &LeaderSolution, k: usize) -> ([f64; 5], [f64; 5], [f64; 5], [f64; 5]) {
    let mats = &sol.mats[k];
    let g = &sol.gains[k];
    let p13 = linalg::add(&sol.p[0][k], &sol.p[2][k]);
    let p24 = linalg::add(&sol.p[1][k], &sol.p[3][k]);
    let sp = sol.sum_p(k);

    let mut u3c = linalg::vec_mat(&mats.dbar[0], &p13);
    let mut u4c = linalg::vec_mat(&mats.ebar[0], &p13);
    for i in 0..3 {
        let fam_cc = linalg::add(&g.full_x[i], &g.full_chk[i]);
        u3c = row_add(&u3c, &linalg::vec_mat(&mats.dbar[i + 1], &fam_cc));
        u4c = row_add(&u4c, &linalg::vec_mat(&mats.ebar[i + 1], &fam_cc));
    }

    let mut u3ch = row_add(&mats.fcal1, &linalg::vec_mat(&mats.dbar[0], &p24));
    u3ch = row_add(&u3ch, &linalg::vec_mat(&mats.mbar4[0], &sp));
    let mut u4ch = row_add(&mats.fcal2, &linalg::vec_mat(&mats.ebar[0], &p24));
    u4ch = row_add(&u4ch, &linalg::vec_mat(&mats.mbar5[0], &sp));
    for i in 0..3 {
        let fam_hch = linalg::add(&g.full_hat[i], &g.full_chkhat[i]);
        let fam_all = linalg::add(
            &linalg::add(&g.full_x[i], &g.full_hat[i]),
            &linalg::add(&g.full_chk[i], &g.full_chkhat[i]),
        );
        u3ch = row_add(&u3ch, &linalg::vec_mat(&mats.dbar[i + 1], &fam_hch));
        u3ch = row_add(&u3ch, &linalg::vec_mat(&mats.mbar4[i + 1], &fam_all));
        u4ch = row_add(&u4ch, &linalg::vec_mat(&mats.ebar[i + 1], &fam_hch));
        u4ch = row_add(&u4ch, &linalg::vec_mat(&mats.mbar5[i + 1], &fam_all));
    }

    (
        row_scale(&u3c, -1.0 / mats.r3),
        row_scale(&u3ch, -1.0 / mats.r3),
        row_scale(&u4c, -1.0 / mats.r4),
        row_scale(&u4ch, -1.0 / mats.r4),
    )
}

/// Synthesize all eight gain rows on the grid.
pub fn equilibrium_gains(model: &Model, sol: &LeaderSolution) -> Result<GainTables> {
    let n_nodes = model.grid.n_nodes();
    let mut t = GainTables {
        u3_check: Vec::with_capacity(n_nodes),
        u3_chkhat: Vec::with_capacity(n_nodes),
        u4_check: Vec::with_capacity(n_nodes),
        u4_chkhat: Vec::with_capacity(n_nodes),
        u1_hat: Vec::with_capacity(n_nodes),
        u1_chkhat: Vec::with_capacity(n_nodes),
        u2_hat: Vec::with_capacity(n_nodes),
        u2_chkhat: Vec::with_capacity(n_nodes),
    };
    for k in 0..n_nodes {
        let node = &sol.nodes[k];
        let g = &sol.gains[k];
        let (u3c, u3ch, u4c, u4ch) = leader_rows(sol, k);

        let p12 = linalg::add(&sol.p[0][k], &sol.p[1][k]);
        let p34 = linalg::add(&sol.p[2][k], &sol.p[3][k]);
        let zhat1 = linalg::add(&g.full_x[0], &g.full_hat[0]);
        let zhat3 = linalg::add(&g.full_x[2], &g.full_hat[2]);
        let zch1 = linalg::add(&g.full_chk[0], &g.full_chkhat[0]);
        let zch3 = linalg::add(&g.full_chk[2], &g.full_chkhat[2]);
        let u3hat = row_add(&u3c, &u3ch);
        let u4hat = row_add(&u4c, &u4ch);

        for j in 0..2 {
            let mut hat = [0.0; 5];
            hat[0] = -node.l[j][0];
            hat = row_add(&hat, &pair_rows(&node.alpha[j], &p12));
            hat = row_add(&hat, &pair_rows(&node.beta[j], &zhat1));
            hat = row_add(&hat, &pair_rows(&node.gamma[j], &zhat3));

            let mut ch = row_scale(&u3hat, -node.l[j][1]);
            ch = row_add(&ch, &row_scale(&u4hat, -node.l[j][2]));
            ch = row_add(&ch, &pair_rows(&node.alpha[j], &p34));
            ch = row_add(&ch, &pair_rows(&node.beta[j], &zch1));
            ch = row_add(&ch, &pair_rows(&node.gamma[j], &zch3));

            if j == 0 {
                t.u1_hat.push(hat);
                t.u1_chkhat.push(ch);
            } else {
                t.u2_hat.push(hat);
                t.u2_chkhat.push(ch);
            }
        }
        t.u3_check.push(u3c);
        t.u3_chkhat.push(u3ch);
        t.u4_check.push(u4c);
        t.u4_chkhat.push(u4ch);
    }
    Ok(t)
}

impl GainTables {
    /// Controls at node `k` for stacked estimates.
    pub fn controls(
        &self,
        k: usize,
        xhat: &[f64; 5],
        xcheck: &[f64; 5],
        xchkhat: &[f64; 5],
    ) -> [f64; 4] {
        [
            linalg::dot(&self.u1_hat[k], xhat) + linalg::dot(&self.u1_chkhat[k], xchkhat),
            linalg::dot(&self.u2_hat[k], xhat) + linalg::dot(&self.u2_chkhat[k], xchkhat),
            linalg::dot(&self.u3_check[k], xcheck) + linalg::dot(&self.u3_chkhat[k], xchkhat),
            linalg::dot(&self.u4_check[k], xcheck) + linalg::dot(&self.u4_chkhat[k], xchkhat),
        ]
    }

    pub fn csv(&self, model: &Model) -> String {
        use std::fmt::Write as _;
        let mut out = String::from("t");
        for name in [
            "u1_hat", "u1_chkhat", "u2_hat", "u2_chkhat", "u3_check", "u3_chkhat", "u4_check",
            "u4_chkhat",
        ] {
            for c in 0..5 {
                let _ = write!(out, ",{name}_{c}");
            }
        }
        out.push('\n');
        for k in 0..model.grid.n_nodes() {
            let _ = write!(out, "{}", model.grid.node(k));
            for row in [
                &self.u1_hat[k],
                &self.u1_chkhat[k],
                &self.u2_hat[k],
                &self.u2_chkhat[k],
                &self.u3_check[k],
                &self.u3_chkhat[k],
                &self.u4_check[k],
                &self.u4_chkhat[k],
            ] {
                for v in row.iter() {
                    let _ = write!(out, ",{v}");
                }
            }
            out.push('\n');
        }
        out
    }
}
