//! Benchmark problems with closed-form solutions.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{BenchmarkDomain, GeometryMap, MapPoint};
use crate::spline::MAX_DIM;

/// Which benchmark problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", rename_all = "lowercase")]
pub enum ExampleId {
    /// Polynomial solution on the unit square.
    Ex1,
    /// `sin(k1 π x) sin(k2 π t)`.
    Ex2 { k1: f64, k2: f64 },
    /// Sharp Gaussian peak at `(0.8, 0.05)`.
    Ex3,
    /// `sin(π x) |1 − t|^λ` on `t ∈ (0, 2)`, singular in time at `t = 1`.
    Ex4 { lambda: f64 },
    /// Polynomial in the parameter coordinates of the quarter annulus.
    Ex5,
}

impl ExampleId {
    pub fn domain(self) -> BenchmarkDomain {
        match self {
            Self::Ex5 => BenchmarkDomain::QuarterAnnulusTime,
            _ => BenchmarkDomain::UnitIntervalTime,
        }
    }

    pub fn describe(self) -> &'static str {
        match self {
            Self::Ex1 => "u = (1-x) x^2 (1-t) t on (0,1)x(0,1)",
            Self::Ex2 { .. } => "u = sin(k1 pi x) sin(k2 pi t) on (0,1)x(0,1)",
            Self::Ex3 => "u = (x^2-x)(t^2-t) exp(-100 |(x,t)-(0.8,0.05)|^2) on (0,1)x(0,1)",
            Self::Ex4 { .. } => "u = sin(pi x) |1-t|^lambda on (0,1)x(0,2)",
            Self::Ex5 => "u = (1-x) x^2 (1-y) y^2 (1-t) t^2 in annulus parameter coordinates, T = 1",
        }
    }
}

impl fmt::Display for ExampleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Ex1 => write!(f, "ex1"),
            Self::Ex2 { k1, k2 } => write!(f, "ex2({k1},{k2})"),
            Self::Ex3 => write!(f, "ex3"),
            Self::Ex4 { lambda } => write!(f, "ex4({lambda})"),
            Self::Ex5 => write!(f, "ex5"),
        }
    }
}

impl FromStr for ExampleId {
    type Err = Error;

    /// Accepts `ex1`, `ex2(k1,k2)` (default `(1,1)`), `ex3`, `ex4(λ)` (default `0.5`), `ex5`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, args) = match s.find('(') {
            Some(i) if s.ends_with(')') => (&s[..i], Some(&s[i + 1..s.len() - 1])),
            Some(_) => return Err(Error::Unknown { kind: "example", name: s.to_string() }),
            None => (s, None),
        };
        let nums = |a: &str| -> Result<Vec<f64>> {
            a.split(',')
                .map(|x| {
                    let x = x.trim();
                    parse_number(x).ok_or_else(|| Error::Config(format!("bad example parameter `{x}`")))
                })
                .collect()
        };
        let id = match (name, args) {
            ("ex1", None) => Self::Ex1,
            ("ex2", None) => Self::Ex2 { k1: 1.0, k2: 1.0 },
            ("ex2", Some(a)) => match nums(a)?.as_slice() {
                [k1, k2] => Self::Ex2 { k1: *k1, k2: *k2 },
                _ => return Err(Error::Config("ex2 takes two parameters (k1,k2)".into())),
            },
            ("ex3", None) => Self::Ex3,
            ("ex4", None) => Self::Ex4 { lambda: 0.5 },
            ("ex4", Some(a)) => match nums(a)?.as_slice() {
                [l] => Self::Ex4 { lambda: *l },
                _ => return Err(Error::Config("ex4 takes one parameter (lambda)".into())),
            },
            ("ex5", None) => Self::Ex5,
            _ => return Err(Error::Unknown { kind: "example", name: s.to_string() }),
        };
        Ok(id)
    }
}

/// Plain decimals and simple fractions such as `3/2`.
fn parse_number(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => Some(a.trim().parse::<f64>().ok()? / b.trim().parse::<f64>().ok()?),
        None => s.parse().ok(),
    }
}

/// Exact solution data at a point: value, full physical gradient (time last), spatial Laplacian.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ExactValue {
    pub u: f64,
    pub grad: [f64; MAX_DIM],
    pub lap: f64,
}

impl ExactValue {
    pub fn dt(&self, dim: usize) -> f64 {
        self.grad[dim - 1]
    }
}

/// A benchmark problem: geometry, data, and exact solution.
#[derive(Clone, Debug)]
pub struct ProblemCase {
    pub id: ExampleId,
    pub t_end: f64,
    geo: GeometryMap,
}

impl ProblemCase {
    pub fn new(id: ExampleId) -> Result<Self> {
        match id {
            ExampleId::Ex4 { lambda } if !(lambda > 0.0) => {
                return Err(Error::Config(format!("lambda must be positive, got {lambda}")));
            }
            ExampleId::Ex2 { k1, k2 } if !(k1.is_finite() && k2.is_finite()) => {
                return Err(Error::Config("k1 and k2 must be finite".into()));
            }
            _ => {}
        }
        let t_end = match id {
            ExampleId::Ex4 { .. } => 2.0,
            _ => 1.0,
        };
        let geo = GeometryMap::benchmark(id.domain(), t_end)?;
        Ok(Self { id, t_end, geo })
    }

    pub fn geometry(&self) -> &GeometryMap {
        &self.geo
    }

    pub fn domain(&self) -> BenchmarkDomain {
        self.id.domain()
    }

    /// Number of spatial dimensions.
    pub fn d(&self) -> usize {
        self.domain().spatial_dim()
    }

    /// Friedrichs constant (upper bound) of the spatial domain.
    pub fn friedrichs_constant(&self) -> f64 {
        friedrichs_constant(self.domain())
    }

    pub fn exact(&self, mp: &MapPoint) -> ExactValue {
        let (x, t) = (mp.x[0], mp.t());
        match self.id {
            ExampleId::Ex1 => {
                let gx = (1.0 - x) * x * x;
                let ht = (1.0 - t) * t;
                ExactValue {
                    u: gx * ht,
                    grad: [(2.0 * x - 3.0 * x * x) * ht, gx * (1.0 - 2.0 * t), 0.0],
                    lap: (2.0 - 6.0 * x) * ht,
                }
            }
            ExampleId::Ex2 { k1, k2 } => {
                let (a, b) = (k1 * PI, k2 * PI);
                let (sx, cx) = (a * x).sin_cos();
                let (st, ct) = (b * t).sin_cos();
                ExactValue { u: sx * st, grad: [a * cx * st, b * sx * ct, 0.0], lap: -a * a * sx * st }
            }
            ExampleId::Ex3 => {
                let (dx, dt) = (x - 0.8, t - 0.05);
                let e = (-100.0 * (dx * dx + dt * dt)).exp();
                let g = (x * x - x) * (t * t - t);
                let gx = (2.0 * x - 1.0) * (t * t - t);
                let gxx = 2.0 * (t * t - t);
                let gt = (x * x - x) * (2.0 * t - 1.0);
                ExactValue {
                    u: g * e,
                    grad: [e * (gx - 200.0 * dx * g), e * (gt - 200.0 * dt * g), 0.0],
                    lap: e * (gxx - 400.0 * dx * gx + g * (4e4 * dx * dx - 200.0)),
                }
            }
            ExampleId::Ex4 { lambda } => {
                let (s, c) = (PI * x).sin_cos();
                let w = (1.0 - t).abs();
                let wl = w.powf(lambda);
                // the slice t = 1 itself is never a quadrature point; 0 keeps the value finite
                let dwl = if w > 0.0 { -lambda * (1.0 - t).signum() * w.powf(lambda - 1.0) } else { 0.0 };
                ExactValue { u: s * wl, grad: [PI * c * wl, s * dwl, 0.0], lap: -PI * PI * s * wl }
            }
            ExampleId::Ex5 => self.ex5(mp),
        }
    }

    /// `u` is a polynomial in the parameter coordinates; physical derivatives
    /// follow from the chain rule through the map.
    fn ex5(&self, mp: &MapPoint) -> ExactValue {
        let owned;
        let mp = if mp.has_hess {
            mp
        } else {
            owned = self.geo.eval(&mp.xi[..3], true).expect("point inside the patch");
            &owned
        };
        let [a, b, s] = [mp.xi[0], mp.xi[1], mp.xi[2]];
        let p = |z: f64| (1.0 - z) * z * z;
        let dp = |z: f64| 2.0 * z - 3.0 * z * z;
        let ddp = |z: f64| 2.0 - 6.0 * z;
        let q = |z: f64| (1.0 - z) * z * z;
        let (pa, pb, qs) = (p(a), p(b), q(s));
        let g_xi = [dp(a) * pb * qs, pa * dp(b) * qs, pa * pb * dp(s)];
        let mut h_xi = [0.0; 9];
        h_xi[0] = ddp(a) * pb * qs;
        h_xi[4] = pa * ddp(b) * qs;
        h_xi[8] = pa * pb * ddp(s);
        h_xi[1] = dp(a) * dp(b) * qs;
        h_xi[3] = h_xi[1];
        h_xi[2] = dp(a) * pb * dp(s);
        h_xi[6] = h_xi[2];
        h_xi[5] = pa * dp(b) * dp(s);
        h_xi[7] = h_xi[5];
        let g = mp.push_grad(&g_xi);
        ExactValue { u: pa * pb * qs, grad: g, lap: mp.push_laplacian(&g, &h_xi) }
    }

    /// `f = ∂t u − Δx u`.
    pub fn source(&self, mp: &MapPoint) -> f64 {
        let e = self.exact(mp);
        e.dt(mp.dim) - e.lap
    }

    /// Lateral boundary data `u_D`.
    pub fn dirichlet(&self, mp: &MapPoint) -> f64 {
        self.exact(mp).u
    }

    /// Initial data `u_0` at the spatial point of `mp` (its time is ignored).
    pub fn initial(&self, mp: &MapPoint) -> f64 {
        self.initial_point(mp).u
    }

    /// `u(·, 0)` and its spatial gradient at the spatial point of `mp`.
    pub fn initial_point(&self, mp: &MapPoint) -> ExactValue {
        let n = mp.dim;
        if mp.xi[n - 1] == 0.0 {
            return self.exact(mp);
        }
        let mut xi = mp.xi;
        xi[n - 1] = 0.0;
        let p = self.geo.eval(&xi[..n], matches!(self.id, ExampleId::Ex5)).expect("point inside the patch");
        self.exact(&p)
    }

    /// Sample the manufactured source against finite differences of `u`.
    ///
    /// Returns the largest relative mismatch; errors if it exceeds `tol`.
    pub fn validate(&self, samples: usize, tol: f64) -> Result<f64> {
        let n = self.geo.dim();
        // Kronecker sequence with the generalized golden ratio: deterministic and well spread
        const ALPHA: [f64; MAX_DIM] = [0.819_172_513_396_164_4, 0.671_043_606_703_789_2, 0.549_700_477_901_970_4];
        let mut worst: f64 = 0.0;
        let h: f64 = 1e-3;
        for k in 0..samples {
            let mut xi = [0.0; MAX_DIM];
            for (i, v) in xi.iter_mut().enumerate().take(n) {
                *v = 0.02 + 0.96 * (0.5 + (k + 1) as f64 * ALPHA[i]).fract();
            }
            let mp = self.geo.eval(&xi[..n], true)?;
            // near the singular slice of Example 4 the time step shrinks with the distance
            let ht = match self.id {
                ExampleId::Ex4 { .. } => {
                    let d = (mp.t() - 1.0).abs();
                    if d < 1e-4 {
                        continue;
                    }
                    h.min(5e-3 * d)
                }
                _ => h,
            };
            let e = self.exact(&mp);
            let at = |dx: &[f64; MAX_DIM]| -> Result<f64> {
                let mut x = mp.x;
                for i in 0..n {
                    x[i] += dx[i];
                }
                let xi = if self.domain() == BenchmarkDomain::QuarterAnnulusTime {
                    self.geo.inverse(&x[..n])?
                } else {
                    let mut xi = x;
                    xi[n - 1] /= self.t_end;
                    xi
                };
                let p = self.geo.eval(&xi[..n], true)?;
                Ok(self.exact(&p).u)
            };
            let fd = |h: f64, ht: f64| -> Result<(f64, f64)> {
                let mut lap = 0.0;
                for i in 0..n - 1 {
                    let mut dp = [0.0; MAX_DIM];
                    dp[i] = h;
                    let mut dm = [0.0; MAX_DIM];
                    dm[i] = -h;
                    lap += (at(&dp)? - 2.0 * e.u + at(&dm)?) / (h * h);
                }
                let mut tp = [0.0; MAX_DIM];
                tp[n - 1] = ht;
                let mut tm = [0.0; MAX_DIM];
                tm[n - 1] = -ht;
                Ok(((at(&tp)? - at(&tm)?) / (2.0 * ht), lap))
            };
            // one Richardson step removes the O(h²) term
            let (ut1, lap1) = fd(h, ht)?;
            let (ut2, lap2) = fd(0.5 * h, 0.5 * ht)?;
            let ut = (4.0 * ut2 - ut1) / 3.0;
            let f_fd = ut - (4.0 * lap2 - lap1) / 3.0;
            let f = self.source(&mp);
            let scale = 1.0 + f.abs().max(e.lap.abs()).max(ut.abs());
            worst = worst.max((f - f_fd).abs() / scale);
        }
        if worst > tol {
            return Err(Error::Config(format!("{}: manufactured source mismatch {worst:.3e}", self.id)));
        }
        Ok(worst)
    }
}

/// Upper bound of the Friedrichs constant of the spatial domain.
///
/// Unit interval `1/π`, unit square `1/(√2 π)`; the quarter annulus uses the
/// conservative `√5/π`, which exceeds the bound `√2/π` of the enclosing square `[0, 2]²`.
pub fn friedrichs_constant(domain: BenchmarkDomain) -> f64 {
    match domain {
        BenchmarkDomain::UnitIntervalTime => 1.0 / PI,
        BenchmarkDomain::UnitSquareTime => 1.0 / (2f64.sqrt() * PI),
        BenchmarkDomain::QuarterAnnulusTime => 5f64.sqrt() / PI,
    }
}

/// The catalog shown by `list-examples`.
pub fn catalog() -> Vec<ExampleId> {
    vec![
        ExampleId::Ex1,
        ExampleId::Ex2 { k1: 1.0, k2: 1.0 },
        ExampleId::Ex3,
        ExampleId::Ex4 { lambda: 0.5 },
        ExampleId::Ex5,
    ]
}
