//! Counter-based normal increment generation.
//!
//! Every draw is a pure function of `(seed, path, step, component)`, so a
//! path can be replayed without storing it and two policies can be priced
//! on identical noise (common random numbers). Regenerating one Brownian
//! component means swapping that component's derived seed and nothing else.

const GOLDEN: u64 = 0x9e3779b97f4a7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

#[inline]
fn key(seed: u64, path: u64, step: u64, sub: u64) -> u64 {
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    h = mix64(h ^ path.wrapping_mul(0xd6e8feb86659fd93));
    h = mix64(h ^ step.wrapping_add(GOLDEN));
    mix64(h ^ sub)
}

/// Uniform in (0, 1], from the top 53 bits.
#[inline]
fn to_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 1.0) * (1.0 / 9007199254740992.0)
}

/// Standard normal draw at a counter position (Box-Muller, cosine branch).
#[inline]
pub fn standard_normal(seed: u64, path: u64, step: u64, component: u32) -> f64 {
    let sub = (component as u64) << 1;
    let u1 = to_unit(key(seed, path, step, sub));
    let u2 = to_unit(key(seed, path, step, sub | 1));
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Brownian increment source for a three-dimensional motion on a fixed grid.
///
/// Each component carries its own derived seed; `reseed_component` replaces
/// exactly one stream while the other two reproduce bit-identical draws.
#[derive(Debug, Clone)]
pub struct NoiseGen {
    comp_seeds: [u64; 3],
    sqrt_dt: f64,
}

impl NoiseGen {
    pub fn new(master_seed: u64, dt: f64) -> Self {
        let comp_seeds = [
            mix64(master_seed ^ mix64(1)),
            mix64(master_seed ^ mix64(2)),
            mix64(master_seed ^ mix64(3)),
        ];
        Self {
            comp_seeds,
            sqrt_dt: dt.sqrt(),
        }
    }

    /// Fresh independent stream for one component only.
    pub fn reseed_component(&mut self, component: usize, new_seed: u64) {
        self.comp_seeds[component] = mix64(new_seed ^ mix64(component as u64 + 101));
    }

    /// `dW_component` over `[t_step, t_step+dt)` for a given path id.
    #[inline]
    pub fn increment(&self, path: u64, step: usize, component: usize) -> f64 {
        standard_normal(self.comp_seeds[component], path, step as u64, 0) * self.sqrt_dt
    }

    /// All three increments of a step.
    #[inline]
    pub fn increments(&self, path: u64, step: usize) -> [f64; 3] {
        [
            self.increment(path, step, 0),
            self.increment(path, step, 1),
            self.increment(path, step, 2),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn draws_are_reproducible() {
        let g = NoiseGen::new(42, 0.01);
        for step in 0..50 {
            for c in 0..3 {
                assert_eq!(
                    g.increment(7, step, c).to_bits(),
                    g.increment(7, step, c).to_bits()
                );
            }
        }
    }

    #[test]
    fn reseeding_one_component_leaves_others_alone() {
        let g = NoiseGen::new(42, 0.01);
        let mut h = g.clone();
        h.reseed_component(1, 999);
        for step in 0..50 {
            assert_eq!(g.increment(3, step, 0).to_bits(), h.increment(3, step, 0).to_bits());
            assert_eq!(g.increment(3, step, 2).to_bits(), h.increment(3, step, 2).to_bits());
            assert_ne!(g.increment(3, step, 1).to_bits(), h.increment(3, step, 1).to_bits());
        }
    }

    #[test]
    fn sample_mean_within_clt_bound() {
        // 1e5 draws of dW1: mean within 4*sqrt(dt/m).
        let dt = 0.01;
        let m = 100_000u64;
        let g = NoiseGen::new(2024, dt);
        let mut sum = 0.0;
        for p in 0..m {
            sum += g.increment(p, 0, 0);
        }
        let mean = sum / m as f64;
        let bound = 4.0 * (dt / m as f64).sqrt();
        assert!(mean.abs() < bound, "mean {mean} vs bound {bound}");
    }

    #[test]
    fn cross_component_covariance_within_clt_bound() {
        let dt = 0.01;
        let m = 100_000u64;
        let g = NoiseGen::new(2024, dt);
        let mut sum = 0.0;
        for p in 0..m {
            sum += g.increment(p, 0, 0) * g.increment(p, 0, 1);
        }
        let cov = sum / m as f64;
        let bound = 4.0 * dt / (m as f64).sqrt();
        assert!(cov.abs() < bound, "cov {cov} vs bound {bound}");
    }

    #[test]
    fn variance_close_to_dt() {
        let dt = 0.02;
        let m = 100_000u64;
        let g = NoiseGen::new(9, dt);
        let mut sumsq = 0.0;
        for p in 0..m {
            let x = g.increment(p, 5, 2);
            sumsq += x * x;
        }
        let var = sumsq / m as f64;
        assert!((var - dt).abs() < 6.0 * dt / (m as f64).sqrt() * 2.0f64.sqrt());
    }
}
