//! Gauss–Legendre rules on `[0, 1]` and their tensor products.

use crate::error::{Error, Result};
use crate::geometry::{MapPoint, MappedElement};
use crate::spline::MAX_DIM;

/// Univariate Gauss–Legendre rule on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// `n`-point rule, exact for polynomials of degree `2n − 1`.
    pub fn new(n: usize) -> Result<Self> {
        if !(1..=30).contains(&n) {
            return Err(Error::Quadrature(format!("{n} points requested, supported range is 1..=30")));
        }
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1, 1] -> [0, 1]
            nodes[i] = 0.5 * (1.0 - x);
            nodes[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.5;
        }
        Ok(Self { nodes, weights })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let h = b - a;
        self.nodes.iter().zip(&self.weights).map(move |(&x, &w)| (a + h * x, h * w))
    }
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = n as f64 * (x * p - p0) / (x * x - 1.0);
    (p, d)
}

/// Tensor-product rule on a parameter box.
#[derive(Clone, Debug)]
pub struct TensorRule {
    rule: GaussRule,
    dim: usize,
}

/// A quadrature point in a parameter box: coordinates and weight (box volume included).
#[derive(Clone, Copy, Debug)]
pub struct ParamPoint {
    pub xi: [f64; MAX_DIM],
    pub weight: f64,
}

impl TensorRule {
    pub fn new(n: usize, dim: usize) -> Result<Self> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::DimensionMismatch { expected: MAX_DIM, got: dim });
        }
        Ok(Self { rule: GaussRule::new(n)?, dim })
    }

    pub fn points_per_dir(&self) -> usize {
        self.rule.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn univariate(&self) -> &GaussRule {
        &self.rule
    }

    pub fn num_points(&self) -> usize {
        self.rule.len().pow(self.dim as u32)
    }

    /// Points on the box `bounds[a] = (lo, hi)`; first direction runs fastest.
    pub fn points(&self, bounds: &[(f64, f64)]) -> Vec<ParamPoint> {
        self.points_with(bounds, None)
    }

    /// Points on one face of the box: direction `fixed.0` pinned at `fixed.1`.
    /// The weight covers only the free directions.
    pub fn face_points(&self, bounds: &[(f64, f64)], fixed: (usize, f64)) -> Vec<ParamPoint> {
        self.points_with(bounds, Some(fixed))
    }

    fn points_with(&self, bounds: &[(f64, f64)], fixed: Option<(usize, f64)>) -> Vec<ParamPoint> {
        let n = self.rule.len();
        let dim = self.dim;
        let free: Vec<usize> = (0..dim).filter(|&a| fixed.is_none_or(|f| f.0 != a)).collect();
        let total = n.pow(free.len() as u32);
        let mut out = Vec::with_capacity(total);
        for k in 0..total {
            let mut rem = k;
            let mut xi = [0.0; MAX_DIM];
            let mut weight = 1.0;
            for &a in &free {
                let i = rem % n;
                rem /= n;
                let (lo, hi) = bounds[a];
                xi[a] = lo + (hi - lo) * self.rule.nodes[i];
                weight *= (hi - lo) * self.rule.weights[i];
            }
            if let Some((a, v)) = fixed {
                xi[a] = v;
            }
            out.push(ParamPoint { xi, weight });
        }
        out
    }
}

/// `Σ_q w_q f(x_q) |det J(ξ_q)|` over a mapped element.
pub fn integrate_element<F>(elem: &MappedElement, mut f: F) -> Result<f64>
where
    F: FnMut(&MapPoint) -> Result<f64>,
{
    let mut sum = 0.0;
    for (p, w) in elem.points.iter().zip(&elem.weights) {
        sum += w * f(p)?;
    }
    Ok(sum)
}
