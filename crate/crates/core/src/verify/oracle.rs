//! Particle oracle for the conditional-expectation claims.
//!
//! The filtered blocks of the closed loop claim to be `E[X | G^1]`,
//! `E[X | G^2]` and the nested estimate. Conditioning on a filtration
//! generated by a subset of the Brownian components means: freeze those
//! components' increments, average over fresh draws of the others. For
//! the discretized linear system that average equals the discretized
//! filter exactly (the scheme commutes with the conditional expectation),
//! so the z-scores below are pure Monte Carlo noise.

use crate::rng::NoiseGen;
use crate::sim::{step_state, ClosedLoop};

/// Seeds: one stream for the frozen components, one for the fresh ones.
#[derive(Debug, Clone, Copy)]
pub struct OracleSeeds {
    pub frozen: u64,
    pub fresh: u64,
}

#[derive(Debug, Clone)]
pub struct OracleSeries {
    /// Which estimate block is being checked (state row offset 5/10/15).
    pub block: usize,
    pub label: &'static str,
    /// z-scores per checkpoint (rows) and component (columns).
    pub z: Vec<[f64; 5]>,
    pub worst: f64,
}

#[derive(Debug, Clone)]
pub struct FilterOracleReport {
    pub checkpoints: Vec<usize>,
    pub particles: usize,
    pub series: Vec<OracleSeries>,
}

impl FilterOracleReport {
    pub fn worst_abs_z(&self) -> f64 {
        self.series.iter().fold(0.0f64, |m, s| m.max(s.worst))
    }
}

struct Accum {
    sum: Vec<[f64; 5]>,
    sumsq: Vec<[f64; 5]>,
}

impl Accum {
    fn new(n_cp: usize) -> Self {
        Self {
            sum: vec![[0.0; 5]; n_cp],
            sumsq: vec![[0.0; 5]; n_cp],
        }
    }

    fn push(&mut self, cp: usize, x: &[f64; 5]) {
        for c in 0..5 {
            self.sum[cp][c] += x[c];
            self.sumsq[cp][c] += x[c] * x[c];
        }
    }
}

/// Average the X block over `particles` redraws of the components in
/// `fresh_mask`, with the others frozen, and compare against the claimed
/// estimate block at `block_offset`.
fn oracle_series(
    cl: &ClosedLoop,
    checkpoints: &[usize],
    particles: usize,
    seeds: OracleSeeds,
    fresh_mask: [bool; 3],
    block_offset: usize,
    label: &'static str,
) -> OracleSeries {
    let frozen = NoiseGen::new(seeds.frozen, cl.dt);
    let fresh = NoiseGen::new(seeds.fresh, cl.dt);
    let mut acc = Accum::new(checkpoints.len());
    let mut reference: Vec<[f64; 5]> = vec![[0.0; 5]; checkpoints.len()];

    for p in 0..particles {
        let mut s = cl.s0;
        let mut cp_iter = 0usize;
        for k in 0..=cl.n_steps {
            if cp_iter < checkpoints.len() && k == checkpoints[cp_iter] {
                let mut x = [0.0; 5];
                x.copy_from_slice(&s[0..5]);
                acc.push(cp_iter, &x);
                if p == 0 {
                    reference[cp_iter].copy_from_slice(&s[block_offset..block_offset + 5]);
                }
                cp_iter += 1;
            }
            if k == cl.n_steps {
                break;
            }
            let mut dw = [0.0; 3];
            for c in 0..3 {
                dw[c] = if fresh_mask[c] {
                    fresh.increment(p as u64, k, c)
                } else {
                    frozen.increment(0, k, c)
                };
            }
            step_state(&mut s, &cl.f[k], cl.dt, &dw);
        }
    }

    let m = particles as f64;
    let mut z = Vec::with_capacity(checkpoints.len());
    let mut worst = 0.0f64;
    for cp in 0..checkpoints.len() {
        let mut zrow = [0.0; 5];
        for c in 0..5 {
            let mean = acc.sum[cp][c] / m;
            let var = (acc.sumsq[cp][c] / m - mean * mean).max(0.0) * m / (m - 1.0);
            let se = (var / m).sqrt();
            let target = reference[cp][c];
            let floor = 1e-9 * (1.0 + target.abs()) / 3.0;
            zrow[c] = (mean - target) / se.max(floor);
            worst = worst.max(zrow[c].abs());
        }
        z.push(zrow);
    }
    OracleSeries {
        block: block_offset,
        label,
        z,
        worst,
    }
}

/// Run the three oracles (followers' filtration, leaders' filtration, and
/// the nested estimate twice with the nesting order swapped).
pub fn filter_oracle(
    cl: &ClosedLoop,
    particles: usize,
    seeds: OracleSeeds,
    checkpoints: &[usize],
) -> FilterOracleReport {
    let series = vec![
        oracle_series(
            cl,
            checkpoints,
            particles,
            seeds,
            [false, true, false],
            5,
            "E[X|G1] vs Xhat",
        ),
        oracle_series(
            cl,
            checkpoints,
            particles,
            OracleSeeds {
                frozen: seeds.frozen ^ 0x5bd1e995,
                fresh: seeds.fresh ^ 0x9e3779b9,
            },
            [true, false, false],
            10,
            "E[X|G2] vs Xcheck",
        ),
        oracle_series(
            cl,
            checkpoints,
            particles,
            OracleSeeds {
                frozen: seeds.frozen ^ 0x27d4eb2f,
                fresh: seeds.fresh ^ 0x2545f491,
            },
            [true, true, false],
            15,
            "E[E[X|G1]|G2] vs Xchkhat",
        ),
        oracle_series(
            cl,
            checkpoints,
            particles,
            OracleSeeds {
                frozen: seeds.frozen ^ 0x85ebca6b,
                fresh: seeds.fresh ^ 0xc2b2ae35,
            },
            [true, true, false],
            15,
            "E[E[X|G2]|G1] vs Xchkhat",
        ),
    ];
    FilterOracleReport {
        checkpoints: checkpoints.to_vec(),
        particles,
        series,
    }
}

/// Verdict table rendered as plain text.
pub fn oracle_text(rep: &FilterOracleReport, dt: f64) -> String {
    use std::fmt::Write as _;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "filter oracle: {} particles, checkpoints at steps {:?}",
        rep.particles, rep.checkpoints
    );
    for s in &rep.series {
        let _ = writeln!(out, "  {} (worst |z| = {:.3})", s.label, s.worst);
        for (cp, zrow) in s.z.iter().enumerate() {
            let t = rep.checkpoints[cp] as f64 * dt;
            let _ = writeln!(
                out,
                "    t={t:.3}: z = [{:+.2}, {:+.2}, {:+.2}, {:+.2}, {:+.2}]",
                zrow[0], zrow[1], zrow[2], zrow[3], zrow[4]
            );
        }
    }
    out
}
