//! Game data: deterministic coefficient functions, time grid, cost weights,
//! and the assumption flags the solver stages gate on.
//!
//! The scalar state follows
//! `dx = (a0 x + b0 u1 + c0 u2 + d0 u3 + e0 u4) dt + sum_i (a_i x + b_i u1 + c_i u2 + d_i u3 + e_i u4) dW_i`
//! and player j pays `1/2 E[ int Q_j x^2 + R_j u_j^2 dt + G_j x(T)^2 ]`.
//! Players 1 and 2 are the followers (they observe W1, W3), players 3 and 4
//! the leaders (they observe W2, W3); W3 is the shared channel.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A deterministic bounded function of time on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    Sampled {
        kind: SampleKind,
        times: Vec<f64>,
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleKind {
    /// Left-closed steps: value `j` holds on `[times[j], times[j+1])`.
    Piecewise,
    /// Linear interpolation through the sample points.
    Grid,
}

impl Coefficient {
    pub fn constant(v: f64) -> Self {
        Coefficient::Constant(v)
    }

    /// Evaluate at `t` in `[0, horizon]`.
    pub fn eval(&self, t: f64, horizon: f64) -> Result<f64> {
        if !(0.0..=horizon).contains(&t) {
            return Err(Error::Validation(format!(
                "coefficient evaluated at t={t} outside [0, {horizon}]"
            )));
        }
        match self {
            Coefficient::Constant(v) => Ok(*v),
            Coefficient::Sampled { kind, times, values } => {
                // times is validated as strictly increasing starting at 0.
                let mut j = 0;
                while j + 1 < times.len() && t >= times[j + 1] {
                    j += 1;
                }
                match kind {
                    SampleKind::Piecewise => Ok(values[j]),
                    SampleKind::Grid => {
                        if j + 1 == times.len() {
                            Ok(values[j])
                        } else {
                            let w = (t - times[j]) / (times[j + 1] - times[j]);
                            Ok(values[j] + w * (values[j + 1] - values[j]))
                        }
                    }
                }
            }
        }
    }

    fn validate(&self, name: &str, horizon: f64) -> Result<()> {
        if let Coefficient::Sampled { kind, times, values } = self {
            if times.is_empty() || times.len() != values.len() {
                return Err(Error::Validation(format!(
                    "coefficient {name}: times and values must be nonempty and equal length"
                )));
            }
            if times[0] != 0.0 {
                return Err(Error::Validation(format!(
                    "coefficient {name}: first breakpoint must be 0"
                )));
            }
            for w in times.windows(2) {
                if w[1] <= w[0] {
                    return Err(Error::Validation(format!(
                        "coefficient {name}: breakpoints must be strictly increasing"
                    )));
                }
            }
            if *times.last().unwrap() > horizon {
                return Err(Error::Validation(format!(
                    "coefficient {name}: breakpoint beyond horizon"
                )));
            }
            if *kind == SampleKind::Grid && (times.last().unwrap() - horizon).abs() > 1e-12 && times.len() > 1 {
                // Grid samples short of T are extended by the last value; allowed.
            }
            for v in values {
                if !v.is_finite() {
                    return Err(Error::Validation(format!(
                        "coefficient {name}: nonfinite sample"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Uniform grid `t_k = k T / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub n_steps: usize,
    pub horizon: f64,
}

impl TimeGrid {
    pub fn new(n_steps: usize, horizon: f64) -> Self {
        Self { n_steps, horizon }
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn node(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            k as f64 * self.dt()
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_steps + 1
    }
}

/// Which Brownian components generate each observation filtration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InformationStructure {
    pub follower_sigma: [usize; 2],
    pub leader_sigma: [usize; 2],
}

impl Default for InformationStructure {
    fn default() -> Self {
        Self {
            follower_sigma: [1, 3],
            leader_sigma: [2, 3],
        }
    }
}

impl InformationStructure {
    pub fn overlap(&self) -> Vec<usize> {
        self.follower_sigma
            .iter()
            .filter(|c| self.leader_sigma.contains(c))
            .copied()
            .collect()
    }
}

/// Assumption flags recorded at load time.
///
/// A1 (follower weights nonnegative) is required; a violation is a load
/// error. A3 (symmetric followers) and A4 (leader weights, R strictly
/// positive) are recorded and gated where they matter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssumptionFlags {
    pub a1: bool,
    pub a3: bool,
    pub a4: bool,
}

/// All coefficient functions and weights of the four-player game.
#[derive(Debug, Clone)]
pub struct ModelCoefficients {
    pub a: [Coefficient; 4],
    pub b: [Coefficient; 4],
    pub c: [Coefficient; 4],
    pub d: [Coefficient; 4],
    pub e: [Coefficient; 4],
    /// Running state weights per player (index 0 is player 1).
    pub q: [Coefficient; 4],
    /// Control weights per player.
    pub r: [Coefficient; 4],
    /// Terminal weights per player.
    pub g: [f64; 4],
    pub x0: f64,
    pub horizon: f64,
}

/// Snapshot of every coefficient at one time.
#[derive(Debug, Clone, Copy, Default)]
pub struct CoeffsAt {
    pub a: [f64; 4],
    pub b: [f64; 4],
    pub c: [f64; 4],
    pub d: [f64; 4],
    pub e: [f64; 4],
    pub q: [f64; 4],
    pub r: [f64; 4],
}

impl ModelCoefficients {
    pub fn at(&self, t: f64) -> Result<CoeffsAt> {
        let mut out = CoeffsAt::default();
        for i in 0..4 {
            out.a[i] = self.a[i].eval(t, self.horizon)?;
            out.b[i] = self.b[i].eval(t, self.horizon)?;
            out.c[i] = self.c[i].eval(t, self.horizon)?;
            out.d[i] = self.d[i].eval(t, self.horizon)?;
            out.e[i] = self.e[i].eval(t, self.horizon)?;
            out.q[i] = self.q[i].eval(t, self.horizon)?;
            out.r[i] = self.r[i].eval(t, self.horizon)?;
        }
        Ok(out)
    }
}

/// A validated model plus its grid and recorded assumption flags.
#[derive(Debug, Clone)]
pub struct Model {
    pub coeffs: ModelCoefficients,
    pub grid: TimeGrid,
    pub info: InformationStructure,
    pub flags: AssumptionFlags,
}

impl Model {
    pub fn at(&self, t: f64) -> Result<CoeffsAt> {
        self.coeffs.at(t)
    }

    pub fn with_steps(&self, n_steps: usize) -> Model {
        let mut m = self.clone();
        m.grid = TimeGrid::new(n_steps, self.coeffs.horizon);
        m
    }
}

// --- TOML configuration ----------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RawFamily {
    i0: Coefficient,
    i1: Coefficient,
    i2: Coefficient,
    i3: Coefficient,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawPlayerCost {
    #[serde(rename = "Q")]
    q: Coefficient,
    #[serde(rename = "R")]
    r: Coefficient,
    #[serde(rename = "G")]
    g: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawCost {
    player1: RawPlayerCost,
    player2: RawPlayerCost,
    player3: RawPlayerCost,
    player4: RawPlayerCost,
}

#[derive(Debug, Serialize, Deserialize)]
struct RawConfig {
    horizon: f64,
    x0: f64,
    steps: usize,
    a: RawFamily,
    b: RawFamily,
    c: RawFamily,
    d: RawFamily,
    e: RawFamily,
    cost: RawCost,
}

impl RawFamily {
    fn into_array(self) -> [Coefficient; 4] {
        [self.i0, self.i1, self.i2, self.i3]
    }

    fn from_array(a: &[Coefficient; 4]) -> Self {
        Self {
            i0: a[0].clone(),
            i1: a[1].clone(),
            i2: a[2].clone(),
            i3: a[3].clone(),
        }
    }
}

/// Parse and validate a TOML model configuration.
pub fn load_model(config_text: &str) -> Result<Model> {
    let raw: RawConfig =
        toml::from_str(config_text).map_err(|e| Error::Parse(e.to_string()))?;
    build_model(raw)
}

fn build_model(raw: RawConfig) -> Result<Model> {
    if !(raw.horizon.is_finite() && raw.horizon > 0.0) {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    if raw.steps == 0 {
        return Err(Error::Validation("steps must be positive".into()));
    }
    let horizon = raw.horizon;
    let coeffs = ModelCoefficients {
        a: raw.a.into_array(),
        b: raw.b.into_array(),
        c: raw.c.into_array(),
        d: raw.d.into_array(),
        e: raw.e.into_array(),
        q: [
            raw.cost.player1.q,
            raw.cost.player2.q,
            raw.cost.player3.q,
            raw.cost.player4.q,
        ],
        r: [
            raw.cost.player1.r,
            raw.cost.player2.r,
            raw.cost.player3.r,
            raw.cost.player4.r,
        ],
        g: [
            raw.cost.player1.g,
            raw.cost.player2.g,
            raw.cost.player3.g,
            raw.cost.player4.g,
        ],
        x0: raw.x0,
        horizon,
    };
    for (fam, name) in [
        (&coeffs.a, "a"),
        (&coeffs.b, "b"),
        (&coeffs.c, "c"),
        (&coeffs.d, "d"),
        (&coeffs.e, "e"),
        (&coeffs.q, "Q"),
        (&coeffs.r, "R"),
    ] {
        for (i, f) in fam.iter().enumerate() {
            f.validate(&format!("{name}[{i}]"), horizon)?;
        }
    }
    let grid = TimeGrid::new(raw.steps, horizon);
    let flags = check_assumptions(&coeffs, &grid)?;
    Ok(Model {
        coeffs,
        grid,
        info: InformationStructure::default(),
        flags,
    })
}

/// Grid-node check of Assumptions A1, A3 and A4. A1 failures are errors.
pub fn check_assumptions(coeffs: &ModelCoefficients, grid: &TimeGrid) -> Result<AssumptionFlags> {
    let mut a3 = true;
    let mut a4 = true;
    for k in 0..grid.n_nodes() {
        let t = grid.node(k);
        let c = coeffs.at(t)?;
        for j in 0..2 {
            if c.q[j] < 0.0 {
                return Err(Error::Validation(format!(
                    "Assumption A1 violated: Q{}(t) < 0 at t={t}",
                    j + 1
                )));
            }
            if c.r[j] < 0.0 {
                return Err(Error::Validation(format!(
                    "Assumption A1 violated: R{}(t) < 0 at t={t}",
                    j + 1
                )));
            }
        }
        if (c.r[0] - c.r[1]).abs() > 0.0 {
            a3 = false;
        }
        for i in 0..4 {
            if (c.b[i] - c.c[i]).abs() > 0.0 {
                a3 = false;
            }
        }
        for j in 2..4 {
            if c.q[j] < 0.0 || c.r[j] <= 0.0 {
                a4 = false;
            }
        }
    }
    for j in 0..2 {
        if coeffs.g[j] < 0.0 {
            return Err(Error::Validation(format!(
                "Assumption A1 violated: G{} < 0",
                j + 1
            )));
        }
    }
    for j in 2..4 {
        if coeffs.g[j] < 0.0 {
            a4 = false;
        }
    }
    Ok(AssumptionFlags { a1: true, a3, a4 })
}

/// Serialize a model back to TOML; reloading reproduces identical samples.
pub fn save_model(model: &Model) -> String {
    let raw = RawConfig {
        horizon: model.coeffs.horizon,
        x0: model.coeffs.x0,
        steps: model.grid.n_steps,
        a: RawFamily::from_array(&model.coeffs.a),
        b: RawFamily::from_array(&model.coeffs.b),
        c: RawFamily::from_array(&model.coeffs.c),
        d: RawFamily::from_array(&model.coeffs.d),
        e: RawFamily::from_array(&model.coeffs.e),
        cost: RawCost {
            player1: RawPlayerCost {
                q: model.coeffs.q[0].clone(),
                r: model.coeffs.r[0].clone(),
                g: model.coeffs.g[0],
            },
            player2: RawPlayerCost {
                q: model.coeffs.q[1].clone(),
                r: model.coeffs.r[1].clone(),
                g: model.coeffs.g[1],
            },
            player3: RawPlayerCost {
                q: model.coeffs.q[2].clone(),
                r: model.coeffs.r[2].clone(),
                g: model.coeffs.g[2],
            },
            player4: RawPlayerCost {
                q: model.coeffs.q[3].clone(),
                r: model.coeffs.r[3].clone(),
                g: model.coeffs.g[3],
            },
        },
    };
    toml::to_string(&raw).expect("model serializes")
}

/// CSV of every coefficient sampled on the grid: `t,name,value`.
pub fn coefficients_csv(model: &Model) -> Result<String> {
    let mut out = String::from("t,name,value\n");
    let names = ["a", "b", "c", "d", "e"];
    for k in 0..model.grid.n_nodes() {
        let t = model.grid.node(k);
        let c = model.at(t)?;
        let fams = [c.a, c.b, c.c, c.d, c.e];
        for (f, name) in fams.iter().zip(names) {
            for i in 0..4 {
                let _ = writeln!(out, "{t},{name}{i},{}", f[i]);
            }
        }
        for j in 0..4 {
            let _ = writeln!(out, "{t},Q{},{}", j + 1, c.q[j]);
            let _ = writeln!(out, "{t},R{},{}", j + 1, c.r[j]);
        }
    }
    Ok(out)
}

/// Convenience builder for tests and benchmarks: everything constant.
#[allow(clippy::too_many_arguments)]
pub fn constant_model(
    a: [f64; 4],
    b: [f64; 4],
    c: [f64; 4],
    d: [f64; 4],
    e: [f64; 4],
    q: [f64; 4],
    r: [f64; 4],
    g: [f64; 4],
    x0: f64,
    horizon: f64,
    steps: usize,
) -> Result<Model> {
    let coeffs = ModelCoefficients {
        a: a.map(Coefficient::Constant),
        b: b.map(Coefficient::Constant),
        c: c.map(Coefficient::Constant),
        d: d.map(Coefficient::Constant),
        e: e.map(Coefficient::Constant),
        q: q.map(Coefficient::Constant),
        r: r.map(Coefficient::Constant),
        g,
        x0,
        horizon,
    };
    let grid = TimeGrid::new(steps, horizon);
    let flags = check_assumptions(&coeffs, &grid)?;
    Ok(Model {
        coeffs,
        grid,
        info: InformationStructure::default(),
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
horizon = 1.0
x0 = 1.0
steps = 100

[a]
i0 = 0.1
i1 = 0.0
i2 = 0.0
i3 = 0.0
[b]
i0 = 1.0
i1 = 0.0
i2 = 0.0
i3 = 0.0
[c]
i0 = 1.0
i1 = 0.0
i2 = 0.0
i3 = 0.0
[d]
i0 = 0.5
i1 = 0.0
i2 = 0.0
i3 = 0.0
[e]
i0 = 0.5
i1 = 0.0
i2 = 0.0
i3 = 0.0

[cost.player1]
Q = 1.0
R = 1.0
G = 0.5
[cost.player2]
Q = 1.0
R = 1.0
G = 0.5
[cost.player3]
Q = 1.0
R = 1.0
G = 0.5
[cost.player4]
Q = 1.0
R = 1.0
G = 0.5
"#;

    #[test]
    fn loads_valid_model() {
        let m = load_model(BASE).unwrap();
        assert!(m.flags.a1);
        assert!(m.flags.a3);
        assert!(m.flags.a4);
        assert_eq!(m.grid.n_steps, 100);
        assert_eq!(m.info.overlap(), vec![3]);
    }

    #[test]
    fn negative_q1_is_a1_error() {
        let text = BASE.replace("[cost.player1]\nQ = 1.0", "[cost.player1]\nQ = -1.0");
        let err = load_model(&text).unwrap_err();
        assert!(err.to_string().contains("Assumption A1 violated: Q1"), "{err}");
    }

    #[test]
    fn zero_r3_loads_but_clears_a4() {
        let text = BASE.replace("[cost.player3]\nQ = 1.0\nR = 1.0", "[cost.player3]\nQ = 1.0\nR = 0.0");
        let m = load_model(&text).unwrap();
        assert!(m.flags.a1);
        assert!(!m.flags.a4);
    }

    #[test]
    fn a3_flag_follows_symmetry() {
        let m = load_model(BASE).unwrap();
        assert!(m.flags.a3);
        let text = BASE.replace("[c]\ni0 = 1.0", "[c]\ni0 = 0.9");
        let m2 = load_model(&text).unwrap();
        assert!(!m2.flags.a3);
    }

    #[test]
    fn missing_key_is_parse_error() {
        let text = BASE.replace("x0 = 1.0\n", "");
        let err = load_model(&text).unwrap_err();
        assert!(matches!(err, Error::Parse(_)));
    }

    #[test]
    fn piecewise_is_left_closed() {
        let f = Coefficient::Sampled {
            kind: SampleKind::Piecewise,
            times: vec![0.0, 0.5],
            values: vec![1.0, 3.0],
        };
        assert_eq!(f.eval(0.49, 1.0).unwrap(), 1.0);
        assert_eq!(f.eval(0.5, 1.0).unwrap(), 3.0);
        assert_eq!(f.eval(1.0, 1.0).unwrap(), 3.0);
    }

    #[test]
    fn grid_interpolates_linearly() {
        let f = Coefficient::Sampled {
            kind: SampleKind::Grid,
            times: vec![0.0, 1.0],
            values: vec![0.0, 2.0],
        };
        assert!((f.eval(0.25, 1.0).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn constant_everywhere() {
        let f = Coefficient::Constant(2.5);
        assert_eq!(f.eval(0.7, 1.0).unwrap(), 2.5);
        assert!(f.eval(1.5, 1.0).is_err());
        assert!(f.eval(-0.1, 1.0).is_err());
    }

    #[test]
    fn roundtrip_is_bit_exact_on_grid() {
        let text = BASE.replace(
            "[a]\ni0 = 0.1",
            "[a]\ni0 = { kind = \"grid\", times = [0.0, 0.3, 1.0], values = [0.1, -0.27, 0.333333333333333314829616256247] }",
        );
        let m = load_model(&text).unwrap();
        let saved = save_model(&m);
        let m2 = load_model(&saved).unwrap();
        for k in 0..m.grid.n_nodes() {
            let t = m.grid.node(k);
            let x = m.at(t).unwrap();
            let y = m2.at(t).unwrap();
            for i in 0..4 {
                assert_eq!(x.a[i].to_bits(), y.a[i].to_bits());
                assert_eq!(x.q[i].to_bits(), y.q[i].to_bits());
            }
        }
    }

    #[test]
    fn coefficients_csv_has_rows() {
        let m = load_model(BASE).unwrap();
        let csv = coefficients_csv(&m).unwrap();
        assert!(csv.starts_with("t,name,value\n"));
        assert!(csv.lines().count() > 100);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            // Evaluation is pure.
            #[test]
            fn eval_is_pure(v in -10.0f64..10.0, t in 0.0f64..1.0) {
                let f = Coefficient::Constant(v);
                prop_assert_eq!(f.eval(t, 1.0).unwrap().to_bits(), f.eval(t, 1.0).unwrap().to_bits());
            }

            // Raising Q pointwise never turns A1 from true to false.
            #[test]
            fn a1_monotone_under_tightening(q1 in 0.0f64..5.0, bump in 0.0f64..5.0) {
                let m = constant_model(
                    [0.1, 0.0, 0.0, 0.0],
                    [1.0, 0.0, 0.0, 0.0],
                    [1.0, 0.0, 0.0, 0.0],
                    [0.0; 4],
                    [0.0; 4],
                    [q1, 0.5, 0.0, 0.0],
                    [1.0; 4],
                    [0.0; 4],
                    1.0,
                    1.0,
                    16,
                ).unwrap();
                prop_assert!(m.flags.a1);
                let m2 = constant_model(
                    [0.1, 0.0, 0.0, 0.0],
                    [1.0, 0.0, 0.0, 0.0],
                    [1.0, 0.0, 0.0, 0.0],
                    [0.0; 4],
                    [0.0; 4],
                    [q1 + bump, 0.5, 0.0, 0.0],
                    [1.0; 4],
                    [0.0; 4],
                    1.0,
                    1.0,
                    16,
                ).unwrap();
                prop_assert!(m2.flags.a1);
            }

            // Grid interpolation stays within the sample hull.
            #[test]
            fn grid_interp_bounded(t in 0.0f64..1.0, v0 in -5.0f64..5.0, v1 in -5.0f64..5.0) {
                let f = Coefficient::Sampled {
                    kind: SampleKind::Grid,
                    times: vec![0.0, 1.0],
                    values: vec![v0, v1],
                };
                let y = f.eval(t, 1.0).unwrap();
                prop_assert!(y >= v0.min(v1) - 1e-12 && y <= v0.max(v1) + 1e-12);
            }
        }
    }
}
