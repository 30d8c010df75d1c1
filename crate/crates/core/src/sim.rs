//! Euler-Maruyama simulation of the closed-loop filtered system.
//!
//! The joint state stacks `(X, Xhat, Xcheck, Xhatcheck)` into twenty
//! components. With the equilibrium feedback substituted, drift and
//! diffusion are linear in the joint state, so each grid node carries one
//! drift matrix and three diffusion matrices. The estimate blocks are only
//! touched by their own noise channels -- the stepper skips inactive
//! (channel, block) pairs outright, which is what makes the adaptedness
//! tests bit-exact: regenerating W2 cannot perturb `Xhat` or `Xhatcheck`
//! by even one ulp.
//!
//! Costs use left-endpoint quadrature plus the terminal term, matching the
//! Ito convention of the integrands.

use crate::equilibrium::GainTables;
use crate::error::Result;
use crate::leader_riccati::LeaderSolution;
use crate::linalg::{self, mul, pairwise_sum, zeros, Mat};
use crate::model::{CoeffsAt, Model};
use crate::rng::NoiseGen;

/// Row ranges of the four estimate blocks inside the joint state.
pub const BLK_X: std::ops::Range<usize> = 0..5;
pub const BLK_XHAT: std::ops::Range<usize> = 5..10;
pub const BLK_XCHECK: std::ops::Range<usize> = 10..15;
pub const BLK_XCHKHAT: std::ops::Range<usize> = 15..20;

/// Representation matrices mapping the joint state to the backward objects.
#[derive(Debug, Clone)]
pub struct RepMats {
    pub y: Mat<4, 20>,
    pub yhat: Mat<4, 20>,
    pub ycheck: Mat<4, 20>,
    pub ych: Mat<4, 20>,
    pub z: [Mat<4, 20>; 3],
    pub zhat: [Mat<4, 20>; 3],
    pub zcheck: [Mat<4, 20>; 3],
    pub zch: [Mat<4, 20>; 3],
}

/// Precomputed closed-loop system on the grid.
pub struct ClosedLoop {
    pub n_steps: usize,
    pub dt: f64,
    pub horizon: f64,
    /// Drift and three diffusion matrices per node.
    pub f: Vec<[Mat<20, 20>; 4]>,
    /// Control rows (u1..u4) against the joint state, per node.
    pub ctrl: Vec<Mat<4, 20>>,
    /// `(Q_j, R_j)` per node.
    pub qr: Vec<([f64; 4], [f64; 4])>,
    pub gterm: [f64; 4],
    pub s0: [f64; 20],
    pub rep: Vec<RepMats>,
    pub coeffs: Vec<CoeffsAt>,
}

fn place<const R: usize>(dst: &mut Mat<R, 20>, src: &Mat<R, 5>, col0: usize) {
    for r in 0..R {
        for c in 0..5 {
            dst[r][col0 + c] += src[r][c];
        }
    }
}

fn selector(block: usize) -> Mat<5, 20> {
    let mut s = zeros::<5, 20>();
    for r in 0..5 {
        s[r][5 * block + r] = 1.0;
    }
    s
}

fn rep_mats(sol: &LeaderSolution, k: usize) -> RepMats {
    let p = sol.p_at(k);
    let p12 = linalg::add(&p[0], &p[1]);
    let p34 = linalg::add(&p[2], &p[3]);
    let p13 = linalg::add(&p[0], &p[2]);
    let p24 = linalg::add(&p[1], &p[3]);
    let sp = linalg::add(&p12, &p34);
    let g = &sol.gains[k];

    let mut y = zeros::<4, 20>();
    for (b, m) in p.iter().enumerate() {
        place(&mut y, m, 5 * b);
    }
    let mut yhat = zeros::<4, 20>();
    place(&mut yhat, &p12, 5);
    place(&mut yhat, &p34, 15);
    let mut ycheck = zeros::<4, 20>();
    place(&mut ycheck, &p13, 10);
    place(&mut ycheck, &p24, 15);
    let mut ych = zeros::<4, 20>();
    place(&mut ych, &sp, 15);

    let mut z = [zeros::<4, 20>(); 3];
    let mut zhat = [zeros::<4, 20>(); 3];
    let mut zcheck = [zeros::<4, 20>(); 3];
    let mut zch = [zeros::<4, 20>(); 3];
    for j in 0..3 {
        place(&mut z[j], &g.full_x[j], 0);
        place(&mut z[j], &g.full_hat[j], 5);
        place(&mut z[j], &g.full_chk[j], 10);
        place(&mut z[j], &g.full_chkhat[j], 15);
        place(&mut zhat[j], &g.hat_on_hat[j], 5);
        place(&mut zhat[j], &g.hat_on_chkhat[j], 15);
        place(&mut zcheck[j], &g.chk_on_chk[j], 10);
        place(&mut zcheck[j], &g.chk_on_chkhat[j], 15);
        place(&mut zch[j], &g.chkhat[j], 15);
    }
    RepMats {
        y,
        yhat,
        ycheck,
        ych,
        z,
        zhat,
        zcheck,
        zch,
    }
}

/// Active state rows per noise channel (0 = drift).
fn active_rows(channel: usize) -> &'static [std::ops::Range<usize>] {
    match channel {
        0 | 3 => &[0..20],
        1 => &[0..10],
        2 => &[0..5, 10..15],
        _ => unreachable!(),
    }
}

/// Assemble the per-node system matrices.
pub fn build_closed_loop(
    model: &Model,
    sol: &LeaderSolution,
    gains: &GainTables,
) -> Result<ClosedLoop> {
    let n = model.grid.n_steps;
    let mut f = Vec::with_capacity(n + 1);
    let mut ctrl = Vec::with_capacity(n + 1);
    let mut qr = Vec::with_capacity(n + 1);
    let mut rep = Vec::with_capacity(n + 1);
    let mut coeffs = Vec::with_capacity(n + 1);

    let sx = selector(0);
    let sxh = selector(1);
    let sxc = selector(2);
    let sxch = selector(3);

    for k in 0..=n {
        let t = model.grid.node(k);
        let c = model.at(t)?;
        let mats = &sol.mats[k];
        let r = rep_mats(sol, k);

        let mut fk = [zeros::<20, 20>(); 4];
        for ch in 0..4 {
            let mut block = zeros::<20, 20>();

            // X block: all channels.
            {
                let mut rows = mul(&mats.acal[ch], &sx);
                rows = linalg::add(&rows, &mul(&mats.mcal[ch], &sxh));
                rows = linalg::add(&rows, &mul(&mats.hcal[ch], &sxch));
                let mut b = mul(&mats.ncal[ch][0], &r.y);
                b = linalg::add(&b, &mul(&mats.bcal[ch][0], &r.ycheck));
                b = linalg::add(&b, &mul(&mats.ccal[ch][0], &r.ych));
                for j in 0..3 {
                    b = linalg::add(&b, &mul(&mats.ncal[ch][j + 1], &r.z[j]));
                    b = linalg::add(&b, &mul(&mats.bcal[ch][j + 1], &r.zcheck[j]));
                    b = linalg::add(&b, &mul(&mats.ccal[ch][j + 1], &r.zch[j]));
                }
                let total = linalg::add(&rows, &b);
                for rr in 0..5 {
                    block[rr] = total[rr];
                }
            }

            // Xhat block: channels 0, 1, 3.
            if ch != 2 {
                let am = linalg::add(&mats.acal[ch], &mats.mcal[ch]);
                let mut rows = mul(&am, &sxh);
                rows = linalg::add(&rows, &mul(&mats.hcal[ch], &sxch));
                let mut b = mul(&mats.ncal[ch][0], &r.yhat);
                let bc0 = linalg::add(&mats.bcal[ch][0], &mats.ccal[ch][0]);
                b = linalg::add(&b, &mul(&bc0, &r.ych));
                for j in 0..3 {
                    b = linalg::add(&b, &mul(&mats.ncal[ch][j + 1], &r.zhat[j]));
                    let bcj = linalg::add(&mats.bcal[ch][j + 1], &mats.ccal[ch][j + 1]);
                    b = linalg::add(&b, &mul(&bcj, &r.zch[j]));
                }
                let total = linalg::add(&rows, &b);
                for rr in 0..5 {
                    block[5 + rr] = total[rr];
                }
            }

            // Xcheck block: channels 0, 2, 3.
            if ch != 1 {
                let mh = linalg::add(&mats.mcal[ch], &mats.hcal[ch]);
                let mut rows = mul(&mats.acal[ch], &sxc);
                rows = linalg::add(&rows, &mul(&mh, &sxch));
                let nb0 = linalg::add(&mats.ncal[ch][0], &mats.bcal[ch][0]);
                let mut b = mul(&nb0, &r.ycheck);
                b = linalg::add(&b, &mul(&mats.ccal[ch][0], &r.ych));
                for j in 0..3 {
                    let nbj = linalg::add(&mats.ncal[ch][j + 1], &mats.bcal[ch][j + 1]);
                    b = linalg::add(&b, &mul(&nbj, &r.zcheck[j]));
                    b = linalg::add(&b, &mul(&mats.ccal[ch][j + 1], &r.zch[j]));
                }
                let total = linalg::add(&rows, &b);
                for rr in 0..5 {
                    block[10 + rr] = total[rr];
                }
            }

            // Xhatcheck block: channels 0 and 3.
            if ch == 0 || ch == 3 {
                let amh = linalg::add(&linalg::add(&mats.acal[ch], &mats.mcal[ch]), &mats.hcal[ch]);
                let rows = mul(&amh, &sxch);
                let nbc0 = linalg::add(
                    &linalg::add(&mats.ncal[ch][0], &mats.bcal[ch][0]),
                    &mats.ccal[ch][0],
                );
                let mut b = mul(&nbc0, &r.ych);
                for j in 0..3 {
                    let nbcj = linalg::add(
                        &linalg::add(&mats.ncal[ch][j + 1], &mats.bcal[ch][j + 1]),
                        &mats.ccal[ch][j + 1],
                    );
                    b = linalg::add(&b, &mul(&nbcj, &r.zch[j]));
                }
                let total = linalg::add(&rows, &b);
                for rr in 0..5 {
                    block[15 + rr] = total[rr];
                }
            }

            fk[ch] = block;
        }

        let mut ck = zeros::<4, 20>();
        for col in 0..5 {
            ck[0][5 + col] = gains.u1_hat[k][col];
            ck[0][15 + col] = gains.u1_chkhat[k][col];
            ck[1][5 + col] = gains.u2_hat[k][col];
            ck[1][15 + col] = gains.u2_chkhat[k][col];
            ck[2][10 + col] = gains.u3_check[k][col];
            ck[2][15 + col] = gains.u3_chkhat[k][col];
            ck[3][10 + col] = gains.u4_check[k][col];
            ck[3][15 + col] = gains.u4_chkhat[k][col];
        }

        f.push(fk);
        ctrl.push(ck);
        qr.push((c.q, c.r));
        rep.push(r);
        coeffs.push(c);
    }

    let mut s0 = [0.0; 20];
    for b in 0..4 {
        s0[5 * b] = model.coeffs.x0;
    }

    Ok(ClosedLoop {
        n_steps: n,
        dt: model.grid.dt(),
        horizon: model.coeffs.horizon,
        f,
        ctrl,
        qr,
        gterm: model.coeffs.g,
        s0,
        rep,
        coeffs,
    })
}

/// One Euler step of the joint system; inactive blocks are never touched.
pub fn step_state(s: &mut [f64; 20], fk: &[Mat<20, 20>; 4], dt: f64, dw: &[f64; 3]) {
    let old = *s;
    let weights = [dt, dw[0], dw[1], dw[2]];
    for ch in 0..4 {
        let w = weights[ch];
        for range in active_rows(ch) {
            for r in range.clone() {
                let mut acc = 0.0;
                let row = &fk[ch][r];
                for c in 0..20 {
                    acc += row[c] * old[c];
                }
                s[r] += w * acc;
            }
        }
    }
}

/// Per-step equilibrium record consumed by the verifier and the deviation
/// tests; small enough to keep for every node of a path.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepRecord {
    pub u: [f64; 4],
    pub u3hat: f64,
    pub u4hat: f64,
    pub phih: [f64; 2],
    pub z1h: [f64; 2],
    pub z3h: [f64; 2],
    pub x: f64,
    pub xhat0: f64,
    pub xcheck0: f64,
    pub xhat: [f64; 5],
    pub xcheck: [f64; 5],
    pub xch: [f64; 5],
}

/// Full trajectory capture for exports.
#[derive(Debug, Clone, Default)]
pub struct PathTrace {
    pub states: Vec<[f64; 20]>,
    pub controls: Vec<[f64; 4]>,
}

pub fn record_step(cl: &ClosedLoop, k: usize, s: &[f64; 20]) -> StepRecord {
    let u = linalg::mat_vec(&cl.ctrl[k], s);
    let rep = &cl.rep[k];
    let yhat = linalg::mat_vec(&rep.yhat, s);
    let z1 = linalg::mat_vec(&rep.zhat[0], s);
    let z3 = linalg::mat_vec(&rep.zhat[2], s);
    let mut xhat_blk = [0.0; 5];
    xhat_blk.copy_from_slice(&s[5..10]);
    let mut xcheck_blk = [0.0; 5];
    xcheck_blk.copy_from_slice(&s[10..15]);
    let mut xch = [0.0; 5];
    xch.copy_from_slice(&s[15..20]);
    // Filtered leader controls collapse both gain rows onto Xhatcheck.
    let mut u3hat = 0.0;
    let mut u4hat = 0.0;
    for c in 0..5 {
        u3hat += (cl.ctrl[k][2][10 + c] + cl.ctrl[k][2][15 + c]) * s[15 + c];
        u4hat += (cl.ctrl[k][3][10 + c] + cl.ctrl[k][3][15 + c]) * s[15 + c];
    }
    StepRecord {
        u,
        u3hat,
        u4hat,
        phih: [yhat[0], yhat[1]],
        z1h: [z1[0], z1[1]],
        z3h: [z3[0], z3[1]],
        x: s[0],
        xhat0: s[5],
        xcheck0: s[10],
        xhat: xhat_blk,
        xcheck: xcheck_blk,
        xch,
    }
}

/// Simulate one path; returns per-player costs. Optional recorders receive
/// every node.
pub fn simulate_path(
    cl: &ClosedLoop,
    noise: &NoiseGen,
    path: u64,
    mut records: Option<&mut Vec<StepRecord>>,
    mut trace: Option<&mut PathTrace>,
) -> [f64; 4] {
    let mut s = cl.s0;
    let mut j = [0.0f64; 4];
    if let Some(rec) = records.as_deref_mut() {
        rec.clear();
    }
    if let Some(tr) = trace.as_deref_mut() {
        tr.states.clear();
        tr.controls.clear();
    }
    for k in 0..cl.n_steps {
        let u = linalg::mat_vec(&cl.ctrl[k], &s);
        let (q, r) = cl.qr[k];
        let x = s[0];
        for p in 0..4 {
            j[p] += 0.5 * (q[p] * x * x + r[p] * u[p] * u[p]) * cl.dt;
        }
        if let Some(rec) = records.as_deref_mut() {
            rec.push(record_step(cl, k, &s));
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.states.push(s);
            tr.controls.push(u);
        }
        let dw = noise.increments(path, k);
        step_state(&mut s, &cl.f[k], cl.dt, &dw);
    }
    let xt = s[0];
    for p in 0..4 {
        j[p] += 0.5 * cl.gterm[p] * xt * xt;
    }
    if let Some(rec) = records.as_deref_mut() {
        rec.push(record_step(cl, cl.n_steps, &s));
    }
    if let Some(tr) = trace {
        tr.states.push(s);
        tr.controls.push(linalg::mat_vec(&cl.ctrl[cl.n_steps], &s));
    }
    j
}

/// Monte Carlo cost estimates with standard errors.
#[derive(Debug, Clone, Copy)]
pub struct CostReport {
    pub mean: [f64; 4],
    pub se: [f64; 4],
    pub n_paths: usize,
}

/// Mean costs over `n_paths` independent paths. Parallel chunks write into
/// disjoint slices; the pairwise reduction makes the result independent of
/// the thread count.
pub fn estimate_costs(cl: &ClosedLoop, noise: &NoiseGen, n_paths: usize, threads: usize) -> CostReport {
    let mut per_path = vec![[0.0f64; 4]; n_paths];
    let threads = threads.max(1).min(n_paths.max(1));
    if threads <= 1 || n_paths < 64 {
        for (p, out) in per_path.iter_mut().enumerate() {
            *out = simulate_path(cl, noise, p as u64, None, None);
        }
    } else {
        let chunk = n_paths.div_ceil(threads);
        std::thread::scope(|scope| {
            for (ci, slice) in per_path.chunks_mut(chunk).enumerate() {
                let noise = noise.clone();
                scope.spawn(move || {
                    for (off, out) in slice.iter_mut().enumerate() {
                        let p = ci * chunk + off;
                        *out = simulate_path(cl, &noise, p as u64, None, None);
                    }
                });
            }
        });
    }
    summarize(&per_path)
}

pub fn summarize(per_path: &[[f64; 4]]) -> CostReport {
    let n = per_path.len();
    let mut mean = [0.0; 4];
    let mut se = [0.0; 4];
    let mut col = vec![0.0; n];
    for p in 0..4 {
        for (i, row) in per_path.iter().enumerate() {
            col[i] = row[p];
        }
        let m = pairwise_sum(&col) / n as f64;
        mean[p] = m;
        if n > 1 {
            let dev: Vec<f64> = col.iter().map(|v| (v - m) * (v - m)).collect();
            let var = pairwise_sum(&dev) / (n as f64 - 1.0);
            se[p] = (var / n as f64).sqrt();
        }
    }
    CostReport {
        mean,
        se,
        n_paths: n,
    }
}

/// Trajectory CSV: time, the four estimate blocks, and the controls.
pub fn trace_csv(cl: &ClosedLoop, trace: &PathTrace) -> String {
    use std::fmt::Write as _;
    let mut out = String::from("t");
    for block in ["X", "Xhat", "Xcheck", "Xchkhat"] {
        for c in 0..5 {
            let _ = write!(out, ",{block}{c}");
        }
    }
    for p in 1..=4 {
        let _ = write!(out, ",u{p}");
    }
    out.push('\n');
    for (k, (s, u)) in trace.states.iter().zip(&trace.controls).enumerate() {
        let _ = write!(out, "{}", k as f64 * cl.dt);
        for v in s.iter() {
            let _ = write!(out, ",{v}");
        }
        for v in u.iter() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::equilibrium_gains;
    use crate::leader_riccati::solve_leader;
    use crate::model::constant_model;

    fn pipeline(model: &Model) -> ClosedLoop {
        let sol = solve_leader(model).unwrap();
        let gains = equilibrium_gains(model, &sol).unwrap();
        build_closed_loop(model, &sol, &gains).unwrap()
    }

    #[test]
    fn deterministic_cost_is_half_qt() {
        // All dynamics zero: x stays at x0 = 1, controls vanish, so
        // J1 = 0.5 * int_0^1 Q1 dt = 0.5 with zero standard error.
        let m = constant_model(
            [0.0; 4],
            [0.0; 4],
            [0.0; 4],
            [0.0; 4],
            [0.0; 4],
            [1.0, 0.0, 0.0, 0.0],
            [1.0; 4],
            [0.0; 4],
            1.0,
            1.0,
            100,
        )
        .unwrap();
        let cl = pipeline(&m);
        let noise = NoiseGen::new(11, cl.dt);
        let rep = estimate_costs(&cl, &noise, 8, 1);
        assert!((rep.mean[0] - 0.5).abs() < 1e-12, "{}", rep.mean[0]);
        assert_eq!(rep.se[0], 0.0);
        for p in 1..4 {
            assert_eq!(rep.mean[p], 0.0);
        }
    }

    #[test]
    fn zero_model_costs_vanish() {
        let m = constant_model(
            [0.1, 0.05, 0.1, 0.05],
            [0.8, 0.1, 0.1, 0.1],
            [0.7, 0.1, 0.1, 0.1],
            [0.4, 0.1, 0.0, 0.1],
            [0.3, 0.0, 0.1, 0.1],
            [0.0; 4],
            [1.0; 4],
            [0.0; 4],
            1.0,
            1.0,
            50,
        )
        .unwrap();
        let cl = pipeline(&m);
        let noise = NoiseGen::new(7, cl.dt);
        let rep = estimate_costs(&cl, &noise, 32, 1);
        for p in 0..4 {
            assert_eq!(rep.mean[p], 0.0);
            assert_eq!(rep.se[p], 0.0);
        }
    }

    #[test]
    fn estimates_coincide_at_time_zero() {
        let m = generic();
        let cl = pipeline(&m);
        assert_eq!(cl.s0[0], cl.s0[5]);
        assert_eq!(cl.s0[0], cl.s0[10]);
        assert_eq!(cl.s0[0], cl.s0[15]);
    }

    fn generic() -> Model {
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
            50,
        )
        .unwrap()
    }

    #[test]
    fn adaptedness_under_component_reseed() {
        let m = generic();
        let cl = pipeline(&m);
        let base = NoiseGen::new(42, cl.dt);
        let mut w2_new = base.clone();
        w2_new.reseed_component(1, 777);
        let mut tr_a = PathTrace::default();
        let mut tr_b = PathTrace::default();
        simulate_path(&cl, &base, 0, None, Some(&mut tr_a));
        simulate_path(&cl, &w2_new, 0, None, Some(&mut tr_b));
        for (sa, sb) in tr_a.states.iter().zip(&tr_b.states) {
            for c in BLK_XHAT {
                assert_eq!(sa[c].to_bits(), sb[c].to_bits(), "Xhat differs");
            }
            for c in BLK_XCHKHAT {
                assert_eq!(sa[c].to_bits(), sb[c].to_bits(), "Xchkhat differs");
            }
        }
        // And the X block must actually differ (the noise matters).
        let last_a = tr_a.states.last().unwrap();
        let last_b = tr_b.states.last().unwrap();
        assert_ne!(last_a[0].to_bits(), last_b[0].to_bits());

        let mut w1_new = base.clone();
        w1_new.reseed_component(0, 888);
        let mut tr_c = PathTrace::default();
        simulate_path(&cl, &w1_new, 0, None, Some(&mut tr_c));
        for (sa, sc) in tr_a.states.iter().zip(&tr_c.states) {
            for c in BLK_XCHECK {
                assert_eq!(sa[c].to_bits(), sc[c].to_bits(), "Xcheck differs");
            }
            for c in BLK_XCHKHAT {
                assert_eq!(sa[c].to_bits(), sc[c].to_bits(), "Xchkhat differs");
            }
        }
    }

    #[test]
    fn linearity_in_initial_state() {
        let m1 = generic();
        let mut m2 = m1.clone();
        m2.coeffs.x0 = 2.0 * m1.coeffs.x0;
        let cl1 = pipeline(&m1);
        let cl2 = pipeline(&m2);
        let noise = NoiseGen::new(5, cl1.dt);
        let mut tr1 = PathTrace::default();
        let mut tr2 = PathTrace::default();
        let j1 = simulate_path(&cl1, &noise, 3, None, Some(&mut tr1));
        let j2 = simulate_path(&cl2, &noise, 3, None, Some(&mut tr2));
        for (s1, s2) in tr1.states.iter().zip(&tr2.states) {
            for c in 0..20 {
                assert!(
                    (2.0 * s1[c] - s2[c]).abs() <= 1e-10 * (1.0 + s2[c].abs()),
                    "state not homogeneous"
                );
            }
        }
        for p in 0..4 {
            assert!((4.0 * j1[p] - j2[p]).abs() <= 1e-9 * (1.0 + j2[p].abs()));
        }
    }

    #[test]
    fn se_shrinks_with_path_count() {
        let m = generic();
        let cl = pipeline(&m);
        let noise = NoiseGen::new(9, cl.dt);
        let a = estimate_costs(&cl, &noise, 400, 1);
        let b = estimate_costs(&cl, &noise, 800, 1);
        for p in 0..4 {
            let ratio = b.se[p] / a.se[p];
            assert!(
                (ratio - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.2,
                "SE ratio {ratio}"
            );
        }
    }

    #[test]
    fn thread_count_does_not_change_estimates() {
        let m = generic();
        let cl = pipeline(&m);
        let noise = NoiseGen::new(9, cl.dt);
        let a = estimate_costs(&cl, &noise, 256, 1);
        let b = estimate_costs(&cl, &noise, 256, 4);
        for p in 0..4 {
            assert_eq!(a.mean[p].to_bits(), b.mean[p].to_bits());
            assert_eq!(a.se[p].to_bits(), b.se[p].to_bits());
        }
    }
}
