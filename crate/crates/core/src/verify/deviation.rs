//! Nash deviation tests at Monte Carlo precision.
//!
//! A unilateral deviation is priced against the equilibrium on identical
//! noise. For a follower the other three controls are frozen as processes
//! and only the scalar state is re-simulated. For a leader the followers
//! react: their backward pair shifts by a linear response solved from a
//! pair of auxiliary backward ODEs, and the reacted state plus its filter
//! are re-simulated. Directions are measurable for the deviating player by
//! construction; pass means the cost did not significantly improve.

use crate::error::Result;
use crate::leader_riccati::LeaderSolution;
use crate::linalg::{self, mat_vec, pairwise_sum, Mat};
use crate::model::Model;
use crate::rng::NoiseGen;
use crate::sim::{simulate_path, ClosedLoop, StepRecord};

/// Feedback shapes available to a deviating player. Every shape is a
/// function of time and of estimates the player observes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DirectionKind {
    Const,
    Bump(f64, f64),
    Ramp,
    Sine,
    SignFlip,
    /// Own primary filtered state: `xhat` for followers, `xcheck` for leaders.
    LinOwnEstimate,
    /// Nested estimate component `xchkhat`.
    LinNested,
    /// First backward-pair component (followers) / third backward
    /// representation row (leaders).
    LinBackward,
    /// Difference between the primary and nested estimate.
    LinDiff,
    /// Second bump window.
    BumpLate,
    /// The player's own equilibrium control; eps scans rescale the gain.
    OwnControl,
}

#[derive(Debug, Clone)]
pub struct Direction {
    pub kind: DirectionKind,
    pub label: &'static str,
}

pub fn follower_directions() -> Vec<Direction> {
    use DirectionKind::*;
    vec![
        Direction { kind: Const, label: "const" },
        Direction { kind: Bump(0.2, 0.4), label: "bump[0.2,0.4)" },
        Direction { kind: BumpLate, label: "bump[0.6,0.8)" },
        Direction { kind: Ramp, label: "ramp" },
        Direction { kind: Sine, label: "sine" },
        Direction { kind: SignFlip, label: "sign-flip" },
        Direction { kind: LinOwnEstimate, label: "lin xhat" },
        Direction { kind: LinNested, label: "lin xchkhat" },
        Direction { kind: LinBackward, label: "lin phihat1" },
        Direction { kind: LinDiff, label: "lin (xhat - xchkhat)" },
    ]
}

pub fn leader_directions() -> Vec<Direction> {
    use DirectionKind::*;
    vec![
        Direction { kind: Const, label: "const" },
        Direction { kind: Bump(0.2, 0.4), label: "bump[0.2,0.4)" },
        Direction { kind: BumpLate, label: "bump[0.6,0.8)" },
        Direction { kind: Ramp, label: "ramp" },
        Direction { kind: Sine, label: "sine" },
        Direction { kind: SignFlip, label: "sign-flip" },
        Direction { kind: LinOwnEstimate, label: "lin xcheck" },
        Direction { kind: LinNested, label: "lin xchkhat" },
        Direction { kind: LinBackward, label: "lin zcheck3" },
        Direction { kind: LinDiff, label: "lin (xcheck - xchkhat)" },
    ]
}

fn time_shape(kind: DirectionKind, t: f64, horizon: f64) -> f64 {
    use DirectionKind::*;
    let s = t / horizon;
    match kind {
        Const => 1.0,
        Bump(a, b) => {
            if s >= a && s < b {
                1.0
            } else {
                0.0
            }
        }
        BumpLate => {
            if (0.6..0.8).contains(&s) {
                1.0
            } else {
                0.0
            }
        }
        Ramp => s,
        Sine => (std::f64::consts::TAU * s).sin(),
        SignFlip => {
            if s < 0.5 {
                1.0
            } else {
                -1.0
            }
        }
        _ => 0.0,
    }
}

fn follower_direction_value(
    kind: DirectionKind,
    player: usize,
    t: f64,
    horizon: f64,
    rec: &StepRecord,
) -> f64 {
    use DirectionKind::*;
    match kind {
        LinOwnEstimate => rec.xhat0,
        LinNested => rec.xch[0],
        LinBackward => rec.phih[0],
        LinDiff => rec.xhat0 - rec.xch[0],
        OwnControl => rec.u[player],
        k => time_shape(k, t, horizon),
    }
}

/// Leader directions split into a deterministic part and per-node rows on
/// `Xcheck` and `Xchkhat`, so the filtered direction is exact.
struct LeaderDirectionRows {
    det: Vec<f64>,
    on_check: Vec<[f64; 5]>,
    on_chkhat: Vec<[f64; 5]>,
}

fn leader_direction_rows(
    kind: DirectionKind,
    model: &Model,
    sol: &LeaderSolution,
    cl: &ClosedLoop,
    player: usize,
) -> LeaderDirectionRows {
    use DirectionKind::*;
    let n_nodes = model.grid.n_nodes();
    let mut rows = LeaderDirectionRows {
        det: vec![0.0; n_nodes],
        on_check: vec![[0.0; 5]; n_nodes],
        on_chkhat: vec![[0.0; 5]; n_nodes],
    };
    for k in 0..n_nodes {
        let t = model.grid.node(k);
        match kind {
            LinOwnEstimate => rows.on_check[k][0] = 1.0,
            LinNested => rows.on_chkhat[k][0] = 1.0,
            LinDiff => {
                rows.on_check[k][0] = 1.0;
                rows.on_chkhat[k][0] = -1.0;
            }
            LinBackward => {
                // Third row of the leaders' backward representation:
                // zcheck3 = [(P1+P3) Xcheck + (P2+P4) Xchkhat] row 2.
                let p13 = linalg::add(&sol.p[0][k], &sol.p[2][k]);
                let p24 = linalg::add(&sol.p[1][k], &sol.p[3][k]);
                rows.on_check[k] = p13[2];
                rows.on_chkhat[k] = p24[2];
            }
            OwnControl => {
                for c in 0..5 {
                    rows.on_check[k][c] = cl.ctrl[k][player][10 + c];
                    rows.on_chkhat[k][c] = cl.ctrl[k][player][15 + c];
                }
            }
            k2 => rows.det[k] = time_shape(k2, t, model.coeffs.horizon),
        }
    }
    rows
}

/// One verdict line of the deviation suite.
#[derive(Debug, Clone)]
pub struct DeviationReport {
    pub player: usize,
    pub direction: &'static str,
    pub epsilon: f64,
    pub delta_j_mean: f64,
    pub delta_j_se: f64,
    pub pass: bool,
    /// Exact per-path quadratic fit `dJ = a e^2 + b e` summarized over paths.
    pub curvature_mean: f64,
    pub curvature_se: f64,
    pub slope_mean: f64,
    pub slope_se: f64,
}

struct Summary {
    mean: f64,
    se: f64,
}

fn summarize_scalar(xs: &[f64]) -> Summary {
    let n = xs.len() as f64;
    let mean = pairwise_sum(xs) / n;
    let dev: Vec<f64> = xs.iter().map(|v| (v - mean) * (v - mean)).collect();
    let se = if xs.len() > 1 {
        (pairwise_sum(&dev) / (n - 1.0) / n).sqrt()
    } else {
        0.0
    };
    Summary { mean, se }
}

/// Re-simulate the raw state with player `j`'s control shifted by
/// `eps * v(t)` and everyone else frozen; returns player j's cost.
fn follower_perturbed_cost(
    cl: &ClosedLoop,
    recs: &[StepRecord],
    dws: &[[f64; 3]],
    j: usize,
    kind: DirectionKind,
    horizon: f64,
    eps: f64,
) -> f64 {
    let dt = cl.dt;
    let mut x = cl.s0[0];
    let mut cost = 0.0;
    for k in 0..cl.n_steps {
        let rec = &recs[k];
        let c = &cl.coeffs[k];
        let t = k as f64 * dt;
        let v = follower_direction_value(kind, j, t, horizon, rec);
        let mut u = rec.u;
        u[j] += eps * v;
        let (q, r) = cl.qr[k];
        cost += 0.5 * (q[j] * x * x + r[j] * u[j] * u[j]) * dt;
        let dw = dws[k];
        let drift = c.a[0] * x + c.b[0] * u[0] + c.c[0] * u[1] + c.d[0] * u[2] + c.e[0] * u[3];
        let mut xn = x + drift * dt;
        for i in 1..4 {
            let diff = c.a[i] * x + c.b[i] * u[0] + c.c[i] * u[1] + c.d[i] * u[2] + c.e[i] * u[3];
            xn += diff * dw[i - 1];
        }
        x = xn;
    }
    cost + 0.5 * cl.gterm[j] * x * x
}

/// Backward response of the followers' filtered pair to a leader shift.
///
/// For a deviation `eps * w` with filtered direction `s(t) + v(t) Xchkhat`
/// the pair moves by `eps * (rho(t) Xchkhat + delta(t))`, where `rho` and
/// `delta` solve linear backward ODEs driven by `f` (the pair's control
/// coupling) and the nested block dynamics.
struct LeaderResponse {
    rho: Vec<Mat<2, 5>>,
    rho_e: Vec<Mat<2, 5>>,
    delta: Vec<[f64; 2]>,
}

fn leader_response(
    model: &Model,
    sol: &LeaderSolution,
    cl: &ClosedLoop,
    rows: &LeaderDirectionRows,
    player: usize,
) -> LeaderResponse {
    let n = model.grid.n_steps;
    let dt = model.grid.dt();
    // Nested-block dynamics: rows 15..20 of the drift and W3 matrices.
    let sub55 = |m: &Mat<20, 20>| -> Mat<5, 5> {
        let mut out = [[0.0; 5]; 5];
        for r in 0..5 {
            for c in 0..5 {
                out[r][c] = m[15 + r][15 + c];
            }
        }
        out
    };
    let dmat: Vec<Mat<5, 5>> = (0..=n).map(|k| sub55(&cl.f[k][0])).collect();
    let emat: Vec<Mat<5, 5>> = (0..=n).map(|k| sub55(&cl.f[k][3])).collect();
    let fvec: Vec<[f64; 2]> = (0..=n)
        .map(|k| {
            if player == 2 {
                sol.nodes[k].f1
            } else {
                sol.nodes[k].f2
            }
        })
        .collect();
    let vrow: Vec<[f64; 5]> = (0..=n)
        .map(|k| {
            let mut v = rows.on_chkhat[k];
            for c in 0..5 {
                v[c] += rows.on_check[k][c];
            }
            v
        })
        .collect();

    let interp5 = |tab: &Vec<Mat<5, 5>>, x: f64| -> Mat<5, 5> {
        let pos = (x / dt).clamp(0.0, n as f64);
        let k0 = (pos.floor() as usize).min(n - 1);
        let w = pos - k0 as f64;
        let mut out = [[0.0; 5]; 5];
        for r in 0..5 {
            for c in 0..5 {
                out[r][c] = (1.0 - w) * tab[k0][r][c] + w * tab[k0 + 1][r][c];
            }
        }
        out
    };
    let interp2 = |tab: &Vec<[f64; 2]>, x: f64| -> [f64; 2] {
        let pos = (x / dt).clamp(0.0, n as f64);
        let k0 = (pos.floor() as usize).min(n - 1);
        let w = pos - k0 as f64;
        [
            (1.0 - w) * tab[k0][0] + w * tab[k0 + 1][0],
            (1.0 - w) * tab[k0][1] + w * tab[k0 + 1][1],
        ]
    };
    let interp_row = |tab: &Vec<[f64; 5]>, x: f64| -> [f64; 5] {
        let pos = (x / dt).clamp(0.0, n as f64);
        let k0 = (pos.floor() as usize).min(n - 1);
        let w = pos - k0 as f64;
        let mut out = [0.0; 5];
        for c in 0..5 {
            out[c] = (1.0 - w) * tab[k0][c] + w * tab[k0 + 1][c];
        }
        out
    };
    let interp_s = |x: f64| -> f64 {
        let pos = (x / dt).clamp(0.0, n as f64);
        let k0 = (pos.floor() as usize).min(n - 1);
        let w = pos - k0 as f64;
        (1.0 - w) * rows.det[k0] + w * rows.det[k0 + 1]
    };

    // a0 of the pair at interpolated times.
    let a0tab: Vec<[[f64; 2]; 2]> = (0..=n).map(|k| sol.nodes[k].a0).collect();
    let a3tab: Vec<[[f64; 2]; 2]> = (0..=n).map(|k| sol.nodes[k].a3).collect();
    let interp22 = |tab: &Vec<[[f64; 2]; 2]>, x: f64| -> [[f64; 2]; 2] {
        let pos = (x / dt).clamp(0.0, n as f64);
        let k0 = (pos.floor() as usize).min(n - 1);
        let w = pos - k0 as f64;
        let mut out = [[0.0; 2]; 2];
        for r in 0..2 {
            for c in 0..2 {
                out[r][c] = (1.0 - w) * tab[k0][r][c] + w * tab[k0 + 1][r][c];
            }
        }
        out
    };

    // Backward RK4 on the stacked (rho, delta) state (12 scalars).
    let mut y = [0.0f64; 12];
    let mut rho_traj = vec![[[0.0; 5]; 2]; n + 1];
    let mut delta_traj = vec![[0.0; 2]; n + 1];
    let deriv = |t: f64, y: &[f64; 12]| -> [f64; 12] {
        let mut rho = [[0.0; 5]; 2];
        for r in 0..2 {
            for c in 0..5 {
                rho[r][c] = y[5 * r + c];
            }
        }
        let delta = [y[10], y[11]];
        let d = interp5(&dmat, t);
        let e = interp5(&emat, t);
        let f = interp2(&fvec, t);
        let v = interp_row(&vrow, t);
        let sdet = interp_s(t);
        let a0 = interp22(&a0tab, t);
        let a3 = interp22(&a3tab, t);
        // rho' = -rho D - A0 rho - A3 rho E - f v^T
        let rho_d = linalg::mul(&rho, &d);
        let rho_e = linalg::mul(&rho, &e);
        let a0_rho = linalg::mul(&a0, &rho);
        let a3_rho_e = linalg::mul(&a3, &rho_e);
        let mut out = [0.0f64; 12];
        for r in 0..2 {
            for c in 0..5 {
                out[5 * r + c] = -rho_d[r][c] - a0_rho[r][c] - a3_rho_e[r][c] - f[r] * v[c];
            }
        }
        // delta' = -A0 delta - f s
        out[10] = -(a0[0][0] * delta[0] + a0[0][1] * delta[1]) - f[0] * sdet;
        out[11] = -(a0[1][0] * delta[0] + a0[1][1] * delta[1]) - f[1] * sdet;
        out
    };
    rho_traj[n] = [[0.0; 5]; 2];
    delta_traj[n] = [0.0; 2];
    for k in (0..n).rev() {
        let t1 = (k + 1) as f64 * dt;
        let h = -dt;
        let k1 = deriv(t1, &y);
        let mut y2 = y;
        for i in 0..12 {
            y2[i] += 0.5 * h * k1[i];
        }
        let k2 = deriv(t1 + 0.5 * h, &y2);
        let mut y3 = y;
        for i in 0..12 {
            y3[i] += 0.5 * h * k2[i];
        }
        let k3 = deriv(t1 + 0.5 * h, &y3);
        let mut y4 = y;
        for i in 0..12 {
            y4[i] += h * k3[i];
        }
        let k4 = deriv(t1 + h, &y4);
        for i in 0..12 {
            y[i] += (h / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        for r in 0..2 {
            for c in 0..5 {
                rho_traj[k][r][c] = y[5 * r + c];
            }
        }
        delta_traj[k] = [y[10], y[11]];
    }

    let rho_e: Vec<Mat<2, 5>> = (0..=n)
        .map(|k| linalg::mul(&rho_traj[k], &emat[k]))
        .collect();
    LeaderResponse {
        rho: rho_traj,
        rho_e,
        delta: delta_traj,
    }
}

/// Re-simulate the reacted state pair `(x, xhat)` with leader `j`'s control
/// shifted and the followers responding; returns leader j's cost.
#[allow(clippy::too_many_arguments)]
fn leader_perturbed_cost(
    cl: &ClosedLoop,
    sol: &LeaderSolution,
    recs: &[StepRecord],
    dws: &[[f64; 3]],
    j: usize,
    rows: &LeaderDirectionRows,
    resp: &LeaderResponse,
    eps: f64,
) -> f64 {
    let dt = cl.dt;
    let mut x = cl.s0[0];
    let mut xhat = cl.s0[0];
    let mut cost = 0.0;
    for k in 0..cl.n_steps {
        let rec = &recs[k];
        let c = &cl.coeffs[k];
        let node = &sol.nodes[k];

        let w = rows.det[k]
            + linalg::dot(&rows.on_check[k], &rec.xcheck)
            + linalg::dot(&rows.on_chkhat[k], &rec.xch);
        let what = {
            let mut acc = rows.det[k];
            for cc in 0..5 {
                acc += (rows.on_check[k][cc] + rows.on_chkhat[k][cc]) * rec.xch[cc];
            }
            acc
        };
        let dphi = {
            let r = mat_vec(&resp.rho[k], &rec.xch);
            [r[0] + resp.delta[k][0], r[1] + resp.delta[k][1]]
        };
        let dz3 = mat_vec(&resp.rho_e[k], &rec.xch);

        let phih = [rec.phih[0] + eps * dphi[0], rec.phih[1] + eps * dphi[1]];
        let z1h = rec.z1h;
        let z3h = [rec.z3h[0] + eps * dz3[0], rec.z3h[1] + eps * dz3[1]];
        let (u3, u3h, u4, u4h) = if j == 2 {
            (
                rec.u[2] + eps * w,
                rec.u3hat + eps * what,
                rec.u[3],
                rec.u4hat,
            )
        } else {
            (
                rec.u[2],
                rec.u3hat,
                rec.u[3] + eps * w,
                rec.u4hat + eps * what,
            )
        };

        let (q, r) = cl.qr[k];
        let uj = if j == 2 { u3 } else { u4 };
        cost += 0.5 * (q[j] * x * x + r[j] * uj * uj) * dt;

        let chan = |i: usize, x: f64, xh: f64| -> f64 {
            let nb = &node.nblk[i];
            c.a[i] * x
                + node.m1[i] * xh
                + nb[0][0] * phih[0]
                + nb[0][1] * phih[1]
                + nb[1][0] * z1h[0]
                + nb[1][1] * z1h[1]
                + nb[3][0] * z3h[0]
                + nb[3][1] * z3h[1]
                + c.d[i] * u3
                + node.m4[i] * u3h
                + c.e[i] * u4
                + node.m5[i] * u4h
        };
        let chan_hat = |i: usize, xh: f64| -> f64 {
            let nb = &node.nblk[i];
            (c.a[i] + node.m1[i]) * xh
                + nb[0][0] * phih[0]
                + nb[0][1] * phih[1]
                + nb[1][0] * z1h[0]
                + nb[1][1] * z1h[1]
                + nb[3][0] * z3h[0]
                + nb[3][1] * z3h[1]
                + (c.d[i] + node.m4[i]) * u3h
                + (c.e[i] + node.m5[i]) * u4h
        };
        let dw = dws[k];
        let xn = x
            + chan(0, x, xhat) * dt
            + chan(1, x, xhat) * dw[0]
            + chan(2, x, xhat) * dw[1]
            + chan(3, x, xhat) * dw[2];
        let xhn = xhat + chan_hat(0, xhat) * dt + chan_hat(1, xhat) * dw[0] + chan_hat(3, xhat) * dw[2];
        x = xn;
        xhat = xhn;
    }
    cost + 0.5 * cl.gterm[j] * x * x
}

/// Run the deviation battery for one player.
#[allow(clippy::too_many_arguments)]
pub fn nash_deviation_test(
    model: &Model,
    sol: &LeaderSolution,
    cl: &ClosedLoop,
    player: usize,
    directions: &[Direction],
    epsilons: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<DeviationReport>> {
    assert!(player < 4);
    let noise = NoiseGen::new(seed, cl.dt);
    let horizon = model.coeffs.horizon;
    let is_follower = player < 2;

    let leader_rows: Vec<LeaderDirectionRows> = if is_follower {
        Vec::new()
    } else {
        directions
            .iter()
            .map(|d| leader_direction_rows(d.kind, model, sol, cl, player))
            .collect()
    };
    let responses: Vec<LeaderResponse> = if is_follower {
        Vec::new()
    } else {
        leader_rows
            .iter()
            .map(|rows| leader_response(model, sol, cl, rows, player))
            .collect()
    };

    // delta_j[direction][epsilon][path]
    let mut deltas = vec![vec![vec![0.0f64; n_paths]; epsilons.len()]; directions.len()];
    let mut recs: Vec<StepRecord> = Vec::new();
    let mut dws = vec![[0.0f64; 3]; cl.n_steps];
    for p in 0..n_paths {
        simulate_path(cl, &noise, p as u64, Some(&mut recs), None);
        for (k, dw) in dws.iter_mut().enumerate() {
            *dw = noise.increments(p as u64, k);
        }
        for (di, dir) in directions.iter().enumerate() {
            let base = if is_follower {
                follower_perturbed_cost(cl, &recs, &dws, player, dir.kind, horizon, 0.0)
            } else {
                leader_perturbed_cost(
                    cl,
                    sol,
                    &recs,
                    &dws,
                    player,
                    &leader_rows[di],
                    &responses[di],
                    0.0,
                )
            };
            for (ei, &eps) in epsilons.iter().enumerate() {
                let cost = if is_follower {
                    follower_perturbed_cost(cl, &recs, &dws, player, dir.kind, horizon, eps)
                } else {
                    leader_perturbed_cost(
                        cl,
                        sol,
                        &recs,
                        &dws,
                        player,
                        &leader_rows[di],
                        &responses[di],
                        eps,
                    )
                };
                deltas[di][ei][p] = cost - base;
            }
        }
    }

    let mut out = Vec::new();
    for (di, dir) in directions.iter().enumerate() {
        // Exact per-path quadratic coefficients from eps = 0.1 and 0.5 when
        // both are present (the per-path cost difference is exactly
        // quadratic in eps).
        let (mut a_s, mut b_s) = (Summary { mean: 0.0, se: 0.0 }, Summary { mean: 0.0, se: 0.0 });
        let i01 = epsilons.iter().position(|e| (*e - 0.1).abs() < 1e-12);
        let i05 = epsilons.iter().position(|e| (*e - 0.5).abs() < 1e-12);
        if let (Some(i1), Some(i2)) = (i01, i05) {
            let mut a_vals = vec![0.0; n_paths];
            let mut b_vals = vec![0.0; n_paths];
            for p in 0..n_paths {
                let d1 = deltas[di][i1][p];
                let d2 = deltas[di][i2][p];
                a_vals[p] = 5.0 * d2 - 25.0 * d1;
                b_vals[p] = 12.5 * d1 - 0.5 * d2;
            }
            a_s = summarize_scalar(&a_vals);
            b_s = summarize_scalar(&b_vals);
        }
        for (ei, &eps) in epsilons.iter().enumerate() {
            let s = summarize_scalar(&deltas[di][ei]);
            out.push(DeviationReport {
                player: player + 1,
                direction: dir.label,
                epsilon: eps,
                delta_j_mean: s.mean,
                delta_j_se: s.se,
                pass: s.mean >= -3.0 * s.se,
                curvature_mean: a_s.mean,
                curvature_se: a_s.se,
                slope_mean: b_s.mean,
                slope_se: b_s.se,
            });
        }
    }
    Ok(out)
}

pub fn deviation_text(reports: &[DeviationReport]) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    for r in reports {
        let _ = writeln!(
            out,
            "player {} dir {:<22} eps {:+.2}: dJ = {:+.6e} (se {:.2e}) {}",
            r.player,
            r.direction,
            r.epsilon,
            r.delta_j_mean,
            r.delta_j_se,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    out
}
