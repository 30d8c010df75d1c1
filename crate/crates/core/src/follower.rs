//! Followers' partial-information Nash stage.
//!
//! Given the leaders' controls, the two followers play an LQ Nash game on
//! the filtration generated by (W1, W3). Their equilibrium is linear
//! feedback on the filtered state and on an auxiliary backward pair; the
//! feedback gains come from a 2x2 solve against the matrix `N` and a pair
//! of coupled scalar Riccati equations for `Ptilde1`, `Ptilde2`.
//!
//! This module produces, per grid node, every scalar block the leaders'
//! stage consumes: the `L` gains, the `Ltilde` drift coefficients of the
//! filtered backward pair, the `M` coefficients of the reacted state
//! equation, and the stacked 2x2 blocks `A0`, `A1`, `A3`, `f1`, `f2`.

use crate::error::{Error, Result};
use crate::linalg::{rk4_step, Rk4Scratch};
use crate::model::{CoeffsAt, Model};

/// Scale-invariant invertibility gate for the 2x2 matrix `N`.
pub const DET_N_TOL: f64 = 1e-10;

/// Blow-up guard for the Riccati trajectories.
pub const BLOWUP_LIMIT: f64 = 1e8;

/// Products over the diffusion rows i = 1..3 that recur in every formula.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiffusionSums {
    pub aa: f64,
    pub bb: f64,
    pub cc: f64,
    pub bc: f64,
    pub ab: f64,
    pub ac: f64,
    pub bd: f64,
    pub cd: f64,
    pub be: f64,
    pub ce: f64,
    pub ad: f64,
    pub ae: f64,
}

impl DiffusionSums {
    pub fn new(c: &CoeffsAt) -> Self {
        let mut s = DiffusionSums::default();
        for i in 1..4 {
            s.aa += c.a[i] * c.a[i];
            s.bb += c.b[i] * c.b[i];
            s.cc += c.c[i] * c.c[i];
            s.bc += c.b[i] * c.c[i];
            s.ab += c.a[i] * c.b[i];
            s.ac += c.a[i] * c.c[i];
            s.bd += c.b[i] * c.d[i];
            s.cd += c.c[i] * c.d[i];
            s.be += c.b[i] * c.e[i];
            s.ce += c.c[i] * c.e[i];
            s.ad += c.a[i] * c.d[i];
            s.ae += c.a[i] * c.e[i];
        }
        s
    }
}

/// The followers' 2x2 control-coupling matrix and its determinant.
#[derive(Debug, Clone, Copy)]
pub struct NMatrix {
    pub m: [[f64; 2]; 2],
    pub det: f64,
}

/// `N = [[R1 + P1 sum b^2, P1 sum bc], [P2 sum bc, R2 + P2 sum c^2]]`.
pub fn assemble_n(p1: f64, p2: f64, c: &CoeffsAt, s: &DiffusionSums) -> NMatrix {
    let m = [
        [c.r[0] + p1 * s.bb, p1 * s.bc],
        [p2 * s.bc, c.r[1] + p2 * s.cc],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    NMatrix { m, det }
}

fn n_gate(n: &NMatrix, t: f64) -> Result<()> {
    let fro2 = n.m[0][0] * n.m[0][0] + n.m[0][1] * n.m[0][1] + n.m[1][0] * n.m[1][0] + n.m[1][1] * n.m[1][1];
    if n.det.abs() < DET_N_TOL * (1.0 + fro2) {
        return Err(Error::Gate {
            assumption: "A2",
            t,
            detail: format!("det N = {} below tolerance", n.det),
        });
    }
    Ok(())
}

/// All follower-stage quantities at one time, for given Riccati values.
#[derive(Debug, Clone, Copy, Default)]
pub struct FollowerNode {
    pub t: f64,
    pub ptilde: [f64; 2],
    pub nmat: [[f64; 2]; 2],
    pub det_n: f64,
    pub rbar1: f64,
    pub rbar2: f64,
    pub bbar1: f64,
    pub cbar1: f64,
    /// `L[j] = (L_{j+1,1}, L_{j+1,2}, L_{j+1,3})`: feedback on filtered
    /// state and filtered leader controls.
    pub l: [[f64; 3]; 2],
    /// Row of player j's control on the backward pair `(phi1, phi2)`.
    pub alpha: [[f64; 2]; 2],
    /// Row on the W1 diffusion pair `(zeta_{11}, zeta_{21})`.
    pub beta: [[f64; 2]; 2],
    /// Row on the W3 diffusion pair `(zeta_{13}, zeta_{23})`.
    pub gamma: [[f64; 2]; 2],
    /// Drift coefficients of the filtered backward pair, row per player.
    /// Slots 0..1: the `(phi1, phi2)` pair; 2 and 4: the `(zeta11, zeta21)`
    /// W1 pair; 3 and 5: the `(zeta13, zeta23)` W3 pair; 6..7: the filtered
    /// leader controls.
    pub ltilde: [[f64; 8]; 2],
    /// Drift matrix of the backward pair on `(phi1, phi2)`.
    pub a0: [[f64; 2]; 2],
    /// On the W1 diffusion pair.
    pub a1: [[f64; 2]; 2],
    /// On the W3 diffusion pair.
    pub a3: [[f64; 2]; 2],
    pub f1: [f64; 2],
    pub f2: [f64; 2],
    /// Reacted-state coefficients `M_{i1}, M_{i2}, M_{i3}, M_{i4}, M_{i5}`
    /// for rows i = 0..3 of the state equation.
    pub m1: [f64; 4],
    pub m2: [f64; 4],
    pub m3: [f64; 4],
    pub m4: [f64; 4],
    pub m5: [f64; 4],
    /// `nblk[i][l] = (M_{i2} b_l, M_{i3} c_l)` for l in {0,1,3}; l = 2 is zero.
    pub nblk: [[[f64; 2]; 4]; 4],
}

/// Assemble the node from Riccati values and coefficients at `t`.
pub fn follower_node(t: f64, ptilde: [f64; 2], c: &CoeffsAt) -> Result<FollowerNode> {
    let s = DiffusionSums::new(c);
    let n = assemble_n(ptilde[0], ptilde[1], c, &s);
    n_gate(&n, t)?;

    let inv_det = 1.0 / n.det;
    // N^{-1} and W = -N^{-1}.
    let ninv = [
        [n.m[1][1] * inv_det, -n.m[0][1] * inv_det],
        [-n.m[1][0] * inv_det, n.m[0][0] * inv_det],
    ];
    let w = [
        [-ninv[0][0], -ninv[0][1]],
        [-ninv[1][0], -ninv[1][1]],
    ];

    let bbar1 = c.b[0] + s.ab;
    let cbar1 = c.c[0] + s.ac;
    let rhs_x = [ptilde[0] * bbar1, ptilde[1] * cbar1];
    let rhs_u3 = [ptilde[0] * s.bd, ptilde[1] * s.cd];
    let rhs_u4 = [ptilde[0] * s.be, ptilde[1] * s.ce];

    let solve2 = |rhs: [f64; 2]| {
        [
            ninv[0][0] * rhs[0] + ninv[0][1] * rhs[1],
            ninv[1][0] * rhs[0] + ninv[1][1] * rhs[1],
        ]
    };
    let lx = solve2(rhs_x);
    let lu3 = solve2(rhs_u3);
    let lu4 = solve2(rhs_u4);
    let l = [[lx[0], lu3[0], lu4[0]], [lx[1], lu3[1], lu4[1]]];

    let mut alpha = [[0.0; 2]; 2];
    let mut beta = [[0.0; 2]; 2];
    let mut gamma = [[0.0; 2]; 2];
    for j in 0..2 {
        alpha[j] = [w[j][0] * c.b[0], w[j][1] * c.c[0]];
        beta[j] = [w[j][0] * c.b[1], w[j][1] * c.c[1]];
        gamma[j] = [w[j][0] * c.b[3], w[j][1] * c.c[3]];
    }

    // Ltilde rows from the drift comparison of the filtered backward pair.
    let mut ltilde = [[0.0; 8]; 2];
    for j in 0..2 {
        let bj = ptilde[j] * bbar1;
        let cj = ptilde[j] * cbar1;
        // (phi1, phi2) coefficients.
        ltilde[j][j] = bj * alpha[0][j] + cj * alpha[1][j] + c.a[0];
        ltilde[j][1 - j] = bj * alpha[0][1 - j] + cj * alpha[1][1 - j];
        // (zeta_{11}, zeta_{21}) coefficients sit at slots 2 and 4.
        let z1 = [
            bj * beta[0][0] + cj * beta[1][0] + c.a[1] * if j == 0 { 1.0 } else { 0.0 },
            bj * beta[0][1] + cj * beta[1][1] + c.a[1] * if j == 1 { 1.0 } else { 0.0 },
        ];
        // (zeta_{13}, zeta_{23}) at slots 3 and 5.
        let z3 = [
            bj * gamma[0][0] + cj * gamma[1][0] + c.a[3] * if j == 0 { 1.0 } else { 0.0 },
            bj * gamma[0][1] + cj * gamma[1][1] + c.a[3] * if j == 1 { 1.0 } else { 0.0 },
        ];
        ltilde[j][2] = z1[0];
        ltilde[j][4] = z1[1];
        ltilde[j][3] = z3[0];
        ltilde[j][5] = z3[1];
        ltilde[j][6] = -bj * l[0][1] - cj * l[1][1] + ptilde[j] * (c.d[0] + s.ad);
        ltilde[j][7] = -bj * l[0][2] - cj * l[1][2] + ptilde[j] * (c.e[0] + s.ae);
    }

    let a0 = [
        [ltilde[0][0], ltilde[0][1]],
        [ltilde[1][0], ltilde[1][1]],
    ];
    let a1 = [
        [ltilde[0][2], ltilde[0][4]],
        [ltilde[1][2], ltilde[1][4]],
    ];
    let a3 = [
        [ltilde[0][3], ltilde[0][5]],
        [ltilde[1][3], ltilde[1][5]],
    ];
    let f1 = [ltilde[0][6], ltilde[1][6]];
    let f2 = [ltilde[0][7], ltilde[1][7]];

    let mut m1 = [0.0; 4];
    let mut m2 = [0.0; 4];
    let mut m3 = [0.0; 4];
    let mut m4 = [0.0; 4];
    let mut m5 = [0.0; 4];
    let mut nblk = [[[0.0; 2]; 4]; 4];
    for i in 0..4 {
        m1[i] = -c.b[i] * l[0][0] - c.c[i] * l[1][0];
        m4[i] = -c.b[i] * l[0][1] - c.c[i] * l[1][1];
        m5[i] = -c.b[i] * l[0][2] - c.c[i] * l[1][2];
        m2[i] = c.b[i] * w[0][0] + c.c[i] * w[1][0];
        m3[i] = c.b[i] * w[0][1] + c.c[i] * w[1][1];
        for lidx in [0usize, 1, 3] {
            nblk[i][lidx] = [m2[i] * c.b[lidx], m3[i] * c.c[lidx]];
        }
    }

    Ok(FollowerNode {
        t,
        ptilde,
        nmat: n.m,
        det_n: n.det,
        rbar1: n.m[0][0],
        rbar2: n.m[1][1],
        bbar1,
        cbar1,
        l,
        alpha,
        beta,
        gamma,
        ltilde,
        a0,
        a1,
        a3,
        f1,
        f2,
        m1,
        m2,
        m3,
        m4,
        m5,
        nblk,
    })
}

/// Backward derivative of `(Ptilde1, Ptilde2)` at `t`.
pub fn follower_riccati_rhs(t: f64, ptilde: [f64; 2], c: &CoeffsAt) -> Result<[f64; 2]> {
    let s = DiffusionSums::new(c);
    let n = assemble_n(ptilde[0], ptilde[1], c, &s);
    n_gate(&n, t)?;
    let inv_det = 1.0 / n.det;
    let bbar1 = c.b[0] + s.ab;
    let cbar1 = c.c[0] + s.ac;
    let l11 = (n.m[1][1] * ptilde[0] * bbar1 - n.m[0][1] * ptilde[1] * cbar1) * inv_det;
    let l21 = (-n.m[1][0] * ptilde[0] * bbar1 + n.m[0][0] * ptilde[1] * cbar1) * inv_det;
    let mut out = [0.0; 2];
    for j in 0..2 {
        out[j] = -(2.0 * c.a[0] + s.aa) * ptilde[j] - c.q[j]
            + ptilde[j] * (bbar1 * l11 + cbar1 * l21);
    }
    Ok(out)
}

/// Trajectories produced under Assumption A3 for the uniqueness argument:
/// the summed Riccati equation and the two linear auxiliary equations.
#[derive(Debug, Clone)]
pub struct LemmaTrajectories {
    pub ptilde_sum: Vec<f64>,
    pub aux1: Vec<f64>,
    pub aux2: Vec<f64>,
}

/// Follower Riccati solution on the grid.
#[derive(Debug, Clone)]
pub struct FollowerSolution {
    pub ptilde1: Vec<f64>,
    pub ptilde2: Vec<f64>,
    /// Populated when Assumption A3 holds.
    pub lemma: Option<LemmaTrajectories>,
    /// False means existence is not covered by the symmetric-case lemma;
    /// the trajectories are still computed behind the blow-up guard.
    pub lemma_covered: bool,
}

impl FollowerSolution {
    pub fn node(&self, model: &Model, k: usize) -> Result<FollowerNode> {
        let t = model.grid.node(k);
        let c = model.at(t)?;
        follower_node(t, [self.ptilde1[k], self.ptilde2[k]], &c)
    }
}

/// Backward RK4 integration of the coupled pair with terminal data
/// `(G1, G2)`; under A3, also integrates the summed equation and the two
/// auxiliary linear equations alongside.
pub fn solve_follower_riccati(model: &Model) -> Result<FollowerSolution> {
    let grid = &model.grid;
    let n = grid.n_steps;
    let dt = grid.dt();
    let a3 = model.flags.a3;

    let dim = if a3 { 5 } else { 2 };
    let mut y = vec![0.0; dim];
    y[0] = model.coeffs.g[0];
    y[1] = model.coeffs.g[1];
    if a3 {
        y[2] = model.coeffs.g[0] + model.coeffs.g[1];
        y[3] = model.coeffs.g[0];
        y[4] = model.coeffs.g[1];
    }

    let mut p1 = vec![0.0; n + 1];
    let mut p2 = vec![0.0; n + 1];
    let mut sum = vec![0.0; n + 1];
    let mut aux1 = vec![0.0; n + 1];
    let mut aux2 = vec![0.0; n + 1];
    p1[n] = y[0];
    p2[n] = y[1];
    if a3 {
        sum[n] = y[2];
        aux1[n] = y[3];
        aux2[n] = y[4];
    }

    let coeffs = &model.coeffs;
    let mut scratch = Rk4Scratch::new(dim);
    let mut rhs = |t: f64, y: &[f64], dy: &mut [f64]| -> Result<()> {
        let c = coeffs.at(t)?;
        let d = follower_riccati_rhs(t, [y[0], y[1]], &c)?;
        dy[0] = d[0];
        dy[1] = d[1];
        if a3 {
            let s = DiffusionSums::new(&c);
            let bbar1 = c.b[0] + s.ab;
            let denom = c.r[0] + s.bb * y[2];
            if denom.abs() < 1e-14 {
                return Err(Error::Gate {
                    assumption: "A2",
                    t,
                    detail: "summed Riccati denominator vanished".into(),
                });
            }
            let lin = 2.0 * c.a[0] + s.aa;
            dy[2] = -lin * y[2] - (c.q[0] + c.q[1]) + bbar1 * bbar1 * y[2] * y[2] / denom;
            dy[3] = -lin * y[3] - c.q[0] + bbar1 * bbar1 * y[3] * y[2] / denom;
            dy[4] = -lin * y[4] - c.q[1] + bbar1 * bbar1 * y[4] * y[2] / denom;
        }
        Ok(())
    };

    for k in (0..n).rev() {
        let t_hi = grid.node(k + 1);
        rk4_step(&mut y, t_hi, -dt, &mut scratch, &mut rhs)?;
        for v in y.iter() {
            if !v.is_finite() || v.abs() > BLOWUP_LIMIT {
                return Err(Error::NonFinite {
                    what: "follower Riccati",
                    t: grid.node(k),
                    last_valid: t_hi,
                });
            }
        }
        p1[k] = y[0];
        p2[k] = y[1];
        if a3 {
            sum[k] = y[2];
            aux1[k] = y[3];
            aux2[k] = y[4];
        }
    }

    Ok(FollowerSolution {
        ptilde1: p1,
        ptilde2: p2,
        lemma: a3.then_some(LemmaTrajectories {
            ptilde_sum: sum,
            aux1,
            aux2,
        }),
        lemma_covered: a3,
    })
}

/// CSV export: `t,Ptilde1,Ptilde2,detN,L11..L23`.
pub fn follower_csv(model: &Model, sol: &FollowerSolution) -> Result<String> {
    use std::fmt::Write as _;
    let mut out = String::from("t,Ptilde1,Ptilde2,detN,L11,L12,L13,L21,L22,L23\n");
    for k in 0..model.grid.n_nodes() {
        let node = sol.node(model, k)?;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            node.t,
            node.ptilde[0],
            node.ptilde[1],
            node.det_n,
            node.l[0][0],
            node.l[0][1],
            node.l[0][2],
            node.l[1][0],
            node.l[1][1],
            node.l[1][2],
        );
    }
    Ok(out)
}
