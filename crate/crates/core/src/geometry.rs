//! NURBS geometry maps from the parameter cube to the space-time cylinder.
//!
//! Time is always the last coordinate. Spatial coordinates never depend on the
//! time parameter in the benchmark patches, but nothing here relies on that.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hier::Cell;
use crate::quadrature::{ParamPoint, TensorRule};
use crate::spline::{KnotVector, TensorSplineSpace, MAX_DIM};

type Mat = [[f64; MAX_DIM]; MAX_DIM];

/// NURBS patch `Φ(ξ) = Σ w_i B_i(ξ) P_i / Σ w_i B_i(ξ)`.
#[derive(Clone, Debug)]
pub struct GeometryMap {
    space: TensorSplineSpace,
    ctrl: Vec<[f64; MAX_DIM]>,
    weights: Vec<f64>,
    domain: Option<BenchmarkDomain>,
}

/// Geometry data at one parameter point.
#[derive(Clone, Copy, Debug, Default)]
pub struct MapPoint {
    pub xi: [f64; MAX_DIM],
    pub x: [f64; MAX_DIM],
    /// `jac[i][a] = ∂x_i/∂ξ_a`.
    pub jac: Mat,
    /// `jinv[a][i] = ∂ξ_a/∂x_i`.
    pub jinv: Mat,
    pub det: f64,
    /// `hess[i][a][b] = ∂²x_i/∂ξ_a∂ξ_b`, zero unless requested.
    pub hess: [Mat; MAX_DIM],
    /// Whether `hess` was computed.
    pub has_hess: bool,
    pub dim: usize,
}

impl MapPoint {
    /// Physical time coordinate.
    pub fn t(&self) -> f64 {
        self.x[self.dim - 1]
    }

    /// Number of spatial coordinates.
    pub fn d(&self) -> usize {
        self.dim - 1
    }

    /// Physical gradient from parametric first derivatives.
    pub fn push_grad(&self, g_xi: &[f64]) -> [f64; MAX_DIM] {
        let mut g = [0.0; MAX_DIM];
        for (i, gi) in g.iter_mut().enumerate().take(self.dim) {
            *gi = (0..self.dim).map(|a| g_xi[a] * self.jinv[a][i]).sum();
        }
        g
    }

    /// Physical Hessian from parametric first and second derivatives
    /// (`h_xi[a * dim + b]`), given the physical gradient.
    pub fn push_hess(&self, g_x: &[f64; MAX_DIM], h_xi: &[f64]) -> Mat {
        let n = self.dim;
        let mut corr = [[0.0; MAX_DIM]; MAX_DIM];
        for a in 0..n {
            for b in 0..n {
                let mut v = h_xi[a * n + b];
                for k in 0..n {
                    v -= g_x[k] * self.hess[k][a][b];
                }
                corr[a][b] = v;
            }
        }
        let mut out = [[0.0; MAX_DIM]; MAX_DIM];
        for i in 0..n {
            for j in i..n {
                let mut v = 0.0;
                for a in 0..n {
                    for b in 0..n {
                        v += self.jinv[a][i] * corr[a][b] * self.jinv[b][j];
                    }
                }
                out[i][j] = v;
                out[j][i] = v;
            }
        }
        out
    }

    /// Spatial Laplacian from parametric derivatives.
    pub fn push_laplacian(&self, g_x: &[f64; MAX_DIM], h_xi: &[f64]) -> f64 {
        let h = self.push_hess(g_x, h_xi);
        (0..self.d()).map(|i| h[i][i]).sum()
    }
}

/// One active cell with its geometry sampled at quadrature points.
#[derive(Clone, Debug)]
pub struct MappedElement {
    pub cell: Cell,
    pub bounds: [(f64, f64); MAX_DIM],
    pub h: f64,
    pub points: Vec<MapPoint>,
    /// Quadrature weight times `|det J|`.
    pub weights: Vec<f64>,
}

/// Spatial domains of the benchmark patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkDomain {
    UnitIntervalTime,
    UnitSquareTime,
    QuarterAnnulusTime,
}

impl BenchmarkDomain {
    pub const ALL: [BenchmarkDomain; 3] =
        [Self::UnitIntervalTime, Self::UnitSquareTime, Self::QuarterAnnulusTime];

    pub fn name(self) -> &'static str {
        match self {
            Self::UnitIntervalTime => "unit_interval_time",
            Self::UnitSquareTime => "unit_square_time",
            Self::QuarterAnnulusTime => "quarter_annulus_time",
        }
    }

    /// Number of spatial dimensions.
    pub fn spatial_dim(self) -> usize {
        match self {
            Self::UnitIntervalTime => 1,
            _ => 2,
        }
    }
}

impl fmt::Display for BenchmarkDomain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchmarkDomain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| Error::Unknown { kind: "domain", name: s.to_string() })
    }
}

impl GeometryMap {
    pub fn new(space: TensorSplineSpace, ctrl: Vec<[f64; MAX_DIM]>, weights: Vec<f64>) -> Result<Self> {
        let n = space.num_basis();
        if ctrl.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: ctrl.len() });
        }
        if weights.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: weights.len() });
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::Geometry("NURBS weights must be positive".into()));
        }
        Ok(Self { space, ctrl, weights, domain: None })
    }

    /// Exact benchmark patch with final time `t_end`.
    pub fn benchmark(domain: BenchmarkDomain, t_end: f64) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(Error::Geometry(format!("final time must be positive, got {t_end}")));
        }
        let lin = || KnotVector::open_uniform(1, 1);
        let mut g = match domain {
            BenchmarkDomain::UnitIntervalTime => {
                let space = TensorSplineSpace::new(vec![lin(), lin()])?;
                let ctrl = (0..4).map(|k| [(k % 2) as f64, t_end * (k / 2) as f64, 0.0]).collect();
                Self::new(space, ctrl, vec![1.0; 4])?
            }
            BenchmarkDomain::UnitSquareTime => {
                let space = TensorSplineSpace::new(vec![lin(), lin(), lin()])?;
                let ctrl = (0..8)
                    .map(|k| [(k % 2) as f64, ((k / 2) % 2) as f64, t_end * (k / 4) as f64])
                    .collect();
                Self::new(space, ctrl, vec![1.0; 8])?
            }
            BenchmarkDomain::QuarterAnnulusTime => {
                // radial direction first (linear), then the rational quadratic arc
                let arc = KnotVector::open_uniform(2, 1);
                let space = TensorSplineSpace::new(vec![lin(), arc, lin()])?;
                let c = std::f64::consts::FRAC_1_SQRT_2;
                let arc_pts = [[1.0, 0.0], [1.0, 1.0], [0.0, 1.0]];
                let arc_w = [1.0, c, 1.0];
                let mut ctrl = Vec::new();
                let mut weights = Vec::new();
                for k in 0..2 {
                    for (pt, &w) in arc_pts.iter().zip(&arc_w) {
                        for r in [1.0, 2.0] {
                            ctrl.push([r * pt[0], r * pt[1], t_end * k as f64]);
                            weights.push(w);
                        }
                    }
                }
                Self::new(space, ctrl, weights)?
            }
        };
        g.domain = Some(domain);
        Ok(g)
    }

    pub fn domain(&self) -> Option<BenchmarkDomain> {
        self.domain
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Final time, read off the time extent of the patch.
    pub fn final_time(&self) -> f64 {
        let n = self.dim();
        self.ctrl.iter().map(|p| p[n - 1]).fold(f64::MIN, f64::max)
    }

    pub fn space(&self) -> &TensorSplineSpace {
        &self.space
    }

    /// `Φ(ξ)` and `∇_ξ Φ`.
    pub fn map_and_jacobian(&self, xi: &[f64]) -> Result<([f64; MAX_DIM], Mat)> {
        let p = self.eval(xi, false)?;
        Ok((p.x, p.jac))
    }

    /// Full geometry data at `xi`; second derivatives of the map when `second` is set.
    pub fn eval(&self, xi: &[f64], second: bool) -> Result<MapPoint> {
        let n = self.dim();
        let b = self.space.eval(xi, if second { 2 } else { 1 })?;
        let g = b.grad.as_ref().unwrap();
        let mut w = 0.0;
        let mut dw = [0.0; MAX_DIM];
        let mut hw = [[0.0; MAX_DIM]; MAX_DIM];
        let mut a = [0.0; MAX_DIM];
        let mut da = [[0.0; MAX_DIM]; MAX_DIM];
        let mut ha = [[[0.0; MAX_DIM]; MAX_DIM]; MAX_DIM];
        let counts: Vec<usize> = b.windows.iter().map(|w| w.1).collect();
        for j in 0..b.len() {
            let mut rem = j;
            let mut multi = [0usize; MAX_DIM];
            for d in 0..n {
                multi[d] = b.windows[d].0 + rem % counts[d];
                rem /= counts[d];
            }
            let gi = self.space.flat_index(&multi[..n]);
            let wi = self.weights[gi];
            let pi = &self.ctrl[gi];
            w += wi * b.values[j];
            for s in 0..n {
                a[s] += wi * pi[s] * b.values[j];
            }
            for d in 0..n {
                let v = wi * g[j * n + d];
                dw[d] += v;
                for s in 0..n {
                    da[s][d] += v * pi[s];
                }
            }
            if let Some(h) = &b.hess {
                for d in 0..n {
                    for e in 0..n {
                        let v = wi * h[(j * n + d) * n + e];
                        hw[d][e] += v;
                        for s in 0..n {
                            ha[s][d][e] += v * pi[s];
                        }
                    }
                }
            }
        }
        let mut out = MapPoint { dim: n, has_hess: second, ..Default::default() };
        out.xi[..n].copy_from_slice(&xi[..n]);
        for s in 0..n {
            out.x[s] = a[s] / w;
            for d in 0..n {
                out.jac[s][d] = (da[s][d] - out.x[s] * dw[d]) / w;
            }
        }
        if second {
            for s in 0..n {
                for d in 0..n {
                    for e in 0..n {
                        out.hess[s][d][e] = (ha[s][d][e]
                            - out.x[s] * hw[d][e]
                            - out.jac[s][d] * dw[e]
                            - out.jac[s][e] * dw[d])
                            / w;
                    }
                }
            }
        }
        let (det, inv) = invert(&out.jac, n);
        if det.abs() < 1e-14 {
            return Err(Error::Geometry(format!("singular Jacobian at {:?}", &xi[..n])));
        }
        out.det = det;
        out.jinv = inv;
        Ok(out)
    }

    /// Operator norm of the spatial rows of `J`.
    fn spatial_norm(&self, p: &MapPoint) -> f64 {
        let n = self.dim();
        let d = n - 1;
        // B Bᵀ for the d × n spatial block, at most 2 × 2
        let mut m = [[0.0; 2]; 2];
        for i in 0..d {
            for j in 0..d {
                m[i][j] = (0..n).map(|a| p.jac[i][a] * p.jac[j][a]).sum();
            }
        }
        let lam = if d == 1 {
            m[0][0]
        } else {
            let tr = m[0][0] + m[1][1];
            let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            0.5 * (tr + (tr * tr - 4.0 * det).max(0.0).sqrt())
        };
        lam.sqrt()
    }

    /// `h_K`: sampled `‖∇xΦ‖` over the box (Gauss points and corners) times the parameter diameter.
    pub fn element_size(&self, bounds: &[(f64, f64)], rule: &TensorRule) -> Result<f64> {
        let n = self.dim();
        let mut pts: Vec<[f64; MAX_DIM]> = rule.points(bounds).iter().map(|p| p.xi).collect();
        for c in 0..(1usize << n) {
            let mut xi = [0.0; MAX_DIM];
            for a in 0..n {
                xi[a] = if c >> a & 1 == 0 { bounds[a].0 } else { bounds[a].1 };
            }
            pts.push(xi);
        }
        let mut norm: f64 = 0.0;
        for xi in &pts {
            let p = self.eval(&xi[..n], false)?;
            norm = norm.max(self.spatial_norm(&p));
        }
        let diam = bounds[..n].iter().map(|(a, b)| (b - a).powi(2)).sum::<f64>().sqrt();
        Ok(norm * diam)
    }

    /// Map an element: geometry at every quadrature point, `h_K`, and `|det J|`-scaled weights.
    pub fn map_element(&self, cell: Cell, bounds: [(f64, f64); MAX_DIM], rule: &TensorRule, second: bool) -> Result<MappedElement> {
        let n = self.dim();
        let qp = rule.points(&bounds[..n]);
        let mut points = Vec::with_capacity(qp.len());
        let mut weights = Vec::with_capacity(qp.len());
        for ParamPoint { xi, weight } in qp {
            let p = self.eval(&xi[..n], second)?;
            if p.det <= 0.0 {
                return Err(Error::Geometry(format!("non-positive Jacobian determinant at {:?}", &xi[..n])));
            }
            weights.push(weight * p.det);
            points.push(p);
        }
        let h = self.element_size(&bounds[..n], rule)?;
        Ok(MappedElement { cell, bounds, h, points, weights })
    }

    /// Quadrature on one face of a box: `fixed = (direction, value)`.
    /// Returned weights include the surface measure.
    pub fn map_face(
        &self,
        bounds: &[(f64, f64)],
        fixed: (usize, f64),
        rule: &TensorRule,
        second: bool,
    ) -> Result<(Vec<MapPoint>, Vec<f64>)> {
        let n = self.dim();
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for ParamPoint { xi, weight } in rule.face_points(&bounds[..n], fixed) {
            let p = self.eval(&xi[..n], second)?;
            // Gram determinant of the tangent columns
            let free: Vec<usize> = (0..n).filter(|&a| a != fixed.0).collect();
            let mut g = [[0.0; MAX_DIM]; MAX_DIM];
            for (r, &a) in free.iter().enumerate() {
                for (c, &b) in free.iter().enumerate() {
                    g[r][c] = (0..n).map(|s| p.jac[s][a] * p.jac[s][b]).sum();
                }
            }
            let (gdet, _) = invert(&g, free.len());
            weights.push(weight * gdet.max(0.0).sqrt());
            points.push(p);
        }
        Ok((points, weights))
    }

    /// Parameter point mapped to `x`, by Newton iteration from the cube center.
    pub fn inverse(&self, x: &[f64]) -> Result<[f64; MAX_DIM]> {
        let n = self.dim();
        let mut xi = [0.5; MAX_DIM];
        for _ in 0..60 {
            let p = self.eval(&xi[..n], false)?;
            let mut step = 0.0f64;
            let mut next = xi;
            for a in 0..n {
                let dxi: f64 = (0..n).map(|i| p.jinv[a][i] * (x[i] - p.x[i])).sum();
                next[a] = (xi[a] + dxi).clamp(0.0, 1.0);
                step = step.max(dxi.abs());
            }
            xi = next;
            if step < 1e-15 {
                break;
            }
        }
        let p = self.eval(&xi[..n], false)?;
        let err = (0..n).map(|i| (p.x[i] - x[i]).abs()).fold(0.0, f64::max);
        if err > 1e-10 {
            return Err(Error::Geometry(format!("point {:?} is outside the patch", &x[..n])));
        }
        Ok(xi)
    }
}

/// Determinant and inverse of the leading `n × n` block.
fn invert(m: &Mat, n: usize) -> (f64, Mat) {
    let mut inv = [[0.0; MAX_DIM]; MAX_DIM];
    match n {
        1 => {
            let d = m[0][0];
            inv[0][0] = 1.0 / d;
            (d, inv)
        }
        2 => {
            let d = m[0][0] * m[1][1] - m[0][1] * m[1][0];
            inv[0][0] = m[1][1] / d;
            inv[0][1] = -m[0][1] / d;
            inv[1][0] = -m[1][0] / d;
            inv[1][1] = m[0][0] / d;
            (d, inv)
        }
        _ => {
            let c = |i: usize, j: usize| {
                let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
                let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
                m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1]
            };
            let d = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
            for i in 0..3 {
                for j in 0..3 {
                    inv[j][i] = c(i, j) / d;
                }
            }
            (d, inv)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_patch() {
        let g = GeometryMap::benchmark(BenchmarkDomain::UnitSquareTime, 1.0).unwrap();
        let (x, j) = g.map_and_jacobian(&[0.3, 0.7, 0.1]).unwrap();
        for a in 0..3 {
            assert!((x[a] - [0.3, 0.7, 0.1][a]).abs() < 1e-15);
            for b in 0..3 {
                assert!((j[a][b] - f64::from(a == b)).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn annulus_corners() {
        let g = GeometryMap::benchmark(BenchmarkDomain::QuarterAnnulusTime, 1.0).unwrap();
        let (x, _) = g.map_and_jacobian(&[0.0, 0.0, 0.4]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && x[1].abs() < 1e-15 && (x[2] - 0.4).abs() < 1e-15);
        let (x, _) = g.map_and_jacobian(&[1.0, 1.0, 0.9]).unwrap();
        assert!(x[0].abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn time_scaling_and_inverse() {
        let g = GeometryMap::benchmark(BenchmarkDomain::UnitIntervalTime, 2.0).unwrap();
        assert_eq!(g.final_time(), 2.0);
        let p = g.eval(&[0.5, 0.5], false).unwrap();
        assert!((p.det - 2.0).abs() < 1e-15);
        let q = GeometryMap::benchmark(BenchmarkDomain::QuarterAnnulusTime, 1.0).unwrap();
        let xi = q.inverse(&[1.2, 0.9, 0.3]).unwrap();
        let (x, _) = q.map_and_jacobian(&xi).unwrap();
        assert!((x[0] - 1.2).abs() < 1e-12 && (x[1] - 0.9).abs() < 1e-12);
        assert!(q.inverse(&[0.1, 0.1, 0.5]).is_err());
    }

    #[test]
    fn unknown_domain_name() {
        assert!("disk".parse::<BenchmarkDomain>().is_err());
        assert_eq!("unit_square_time".parse::<BenchmarkDomain>().unwrap(), BenchmarkDomain::UnitSquareTime);
    }
}
