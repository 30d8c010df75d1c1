//! Small dense linear algebra on stack-allocated fixed-size matrices.
//!
//! Every matrix in this crate has compile-time shape (the stacked game
//! lives in dimensions 4, 5, 12 and 20), so the helpers are const-generic
//! over rows/columns and never allocate.

/// `R x C` row-major matrix.
pub type Mat<const R: usize, const C: usize> = [[f64; C]; R];

pub type M45 = Mat<4, 5>;
pub type M44 = Mat<4, 4>;
pub type M55 = Mat<5, 5>;
pub type M54 = Mat<5, 4>;

pub fn zeros<const R: usize, const C: usize>() -> Mat<R, C> {
    [[0.0; C]; R]
}

pub fn add<const R: usize, const C: usize>(a: &Mat<R, C>, b: &Mat<R, C>) -> Mat<R, C> {
    let mut out = *a;
    for r in 0..R {
        for c in 0..C {
            out[r][c] += b[r][c];
        }
    }
    out
}

pub fn sub<const R: usize, const C: usize>(a: &Mat<R, C>, b: &Mat<R, C>) -> Mat<R, C> {
    let mut out = *a;
    for r in 0..R {
        for c in 0..C {
            out[r][c] -= b[r][c];
        }
    }
    out
}

pub fn scale<const R: usize, const C: usize>(a: &Mat<R, C>, s: f64) -> Mat<R, C> {
    let mut out = *a;
    for row in out.iter_mut() {
        for v in row.iter_mut() {
            *v *= s;
        }
    }
    out
}

/// `out += s * a`, the workhorse of the block assemblies.
pub fn axpy<const R: usize, const C: usize>(out: &mut Mat<R, C>, s: f64, a: &Mat<R, C>) {
    for r in 0..R {
        for c in 0..C {
            out[r][c] += s * a[r][c];
        }
    }
}

pub fn mul<const R: usize, const K: usize, const C: usize>(
    a: &Mat<R, K>,
    b: &Mat<K, C>,
) -> Mat<R, C> {
    let mut out = [[0.0; C]; R];
    for r in 0..R {
        for k in 0..K {
            let ark = a[r][k];
            if ark == 0.0 {
                continue;
            }
            for c in 0..C {
                out[r][c] += ark * b[k][c];
            }
        }
    }
    out
}

/// `out += a * b` without a temporary.
pub fn mul_acc<const R: usize, const K: usize, const C: usize>(
    out: &mut Mat<R, C>,
    a: &Mat<R, K>,
    b: &Mat<K, C>,
) {
    for r in 0..R {
        for k in 0..K {
            let ark = a[r][k];
            if ark == 0.0 {
                continue;
            }
            for c in 0..C {
                out[r][c] += ark * b[k][c];
            }
        }
    }
}

pub fn mat_vec<const R: usize, const C: usize>(a: &Mat<R, C>, v: &[f64; C]) -> [f64; R] {
    let mut out = [0.0; R];
    for r in 0..R {
        let mut acc = 0.0;
        for c in 0..C {
            acc += a[r][c] * v[c];
        }
        out[r] = acc;
    }
    out
}

/// Row vector times matrix: `v^T a`.
pub fn vec_mat<const R: usize, const C: usize>(v: &[f64; R], a: &Mat<R, C>) -> [f64; C] {
    let mut out = [0.0; C];
    for r in 0..R {
        let vr = v[r];
        if vr == 0.0 {
            continue;
        }
        for c in 0..C {
            out[c] += vr * a[r][c];
        }
    }
    out
}

pub fn dot<const N: usize>(a: &[f64; N], b: &[f64; N]) -> f64 {
    let mut acc = 0.0;
    for i in 0..N {
        acc += a[i] * b[i];
    }
    acc
}

pub fn max_abs<const R: usize, const C: usize>(a: &Mat<R, C>) -> f64 {
    let mut m = 0.0f64;
    for row in a.iter() {
        for v in row.iter() {
            m = m.max(v.abs());
        }
    }
    m
}

pub fn frob_norm<const R: usize, const C: usize>(a: &Mat<R, C>) -> f64 {
    let mut s = 0.0;
    for row in a.iter() {
        for v in row.iter() {
            s += v * v;
        }
    }
    s.sqrt()
}

fn norm1<const N: usize>(a: &Mat<N, N>) -> f64 {
    let mut best = 0.0f64;
    for c in 0..N {
        let mut s = 0.0;
        for r in 0..N {
            s += a[r][c].abs();
        }
        best = best.max(s);
    }
    best
}

/// LU factorization with partial pivoting of an `N x N` matrix.
pub struct Lu<const N: usize> {
    lu: Mat<N, N>,
    piv: [usize; N],
    /// Determinant of the factored matrix.
    pub det: f64,
}

impl<const N: usize> Lu<N> {
    /// Factor `a`. Returns `None` when a pivot is exactly zero.
    pub fn factor(a: &Mat<N, N>) -> Option<Self> {
        let mut lu = *a;
        let mut piv = [0usize; N];
        let mut det = 1.0;
        for k in 0..N {
            let mut p = k;
            let mut best = lu[k][k].abs();
            for r in (k + 1)..N {
                let v = lu[r][k].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 {
                return None;
            }
            piv[k] = p;
            if p != k {
                lu.swap(p, k);
                det = -det;
            }
            det *= lu[k][k];
            let inv = 1.0 / lu[k][k];
            for r in (k + 1)..N {
                let f = lu[r][k] * inv;
                lu[r][k] = f;
                for c in (k + 1)..N {
                    lu[r][c] -= f * lu[k][c];
                }
            }
        }
        Some(Lu { lu, piv, det })
    }

    pub fn solve_vec(&self, b: &[f64; N]) -> [f64; N] {
        let mut x = *b;
        for k in 0..N {
            x.swap(k, self.piv[k]);
            for r in (k + 1)..N {
                x[r] -= self.lu[r][k] * x[k];
            }
        }
        for k in (0..N).rev() {
            for c in (k + 1)..N {
                x[k] -= self.lu[k][c] * x[c];
            }
            x[k] /= self.lu[k][k];
        }
        x
    }

    /// Solve for a block of right-hand sides given as columns of `b`.
    pub fn solve_mat<const C: usize>(&self, b: &Mat<N, C>) -> Mat<N, C> {
        let mut out = zeros::<N, C>();
        for c in 0..C {
            let mut col = [0.0; N];
            for r in 0..N {
                col[r] = b[r][c];
            }
            let x = self.solve_vec(&col);
            for r in 0..N {
                out[r][c] = x[r];
            }
        }
        out
    }

    pub fn inverse(&self) -> Mat<N, N> {
        let mut inv = zeros::<N, N>();
        for c in 0..N {
            let mut e = [0.0; N];
            e[c] = 1.0;
            let x = self.solve_vec(&e);
            for r in 0..N {
                inv[r][c] = x[r];
            }
        }
        inv
    }

    /// Reciprocal condition estimate in the 1-norm, `1 / (|A|_1 |A^-1|_1)`.
    pub fn rcond(&self, a: &Mat<N, N>) -> f64 {
        let na = norm1(a);
        let ninv = norm1(&self.inverse());
        if na == 0.0 || ninv == 0.0 {
            return 0.0;
        }
        1.0 / (na * ninv)
    }
}

/// One classical RK4 step of `dy/dt = f(t, y)` with a fallible right-hand side.
///
/// The state is a flat slice; `f` writes the derivative into its third
/// argument. Stage times follow the classical tableau.
pub fn rk4_step<F>(y: &mut [f64], t: f64, dt: f64, scratch: &mut Rk4Scratch, f: &mut F) -> crate::error::Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]) -> crate::error::Result<()>,
{
    let n = y.len();
    scratch.resize(n);
    let Rk4Scratch { k1, k2, k3, k4, tmp } = scratch;
    f(t, y, k1)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k1[i];
    }
    f(t + 0.5 * dt, tmp, k2)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    f(t + 0.5 * dt, tmp, k3)?;
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    f(t + dt, tmp, k4)?;
    for i in 0..n {
        y[i] += (dt / 6.0) * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    Ok(())
}

pub struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Scratch {
    pub fn new(n: usize) -> Self {
        Self {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }

    fn resize(&mut self, n: usize) {
        if self.k1.len() != n {
            self.k1.resize(n, 0.0);
            self.k2.resize(n, 0.0);
            self.k3.resize(n, 0.0);
            self.k4.resize(n, 0.0);
            self.tmp.resize(n, 0.0);
        }
    }
}

/// Pairwise summation; keeps parallel cost merges independent of chunking.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let (a, b) = xs.split_at(n / 2);
            pairwise_sum(a) + pairwise_sum(b)
        }
    }
}
