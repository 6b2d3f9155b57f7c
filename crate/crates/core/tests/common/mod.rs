//! Brute-force oracle for the element terms on a single Bézier element.

use stiga::adaptivity::initial_space;
use stiga::assembly::{assemble_stabilized_system, element_terms, Discretization, StabilizationConfig};
use stiga::geometry::{BenchmarkDomain, GeometryMap, MapPoint};
use stiga::parallel::Exec;

/// Gauss–Legendre nodes and weights on [0, 1] by Newton iteration on P_n.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = -(std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let pn = if n == 0 { 1.0 } else { p1 };
                let pm = if n == 1 { 1.0 } else { p0 };
                dp = n as f64 * (x * pn - pm) / (x * x - 1.0);
                let dx = pn / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (0.5 * (x + 1.0), 1.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Bernstein polynomial `B_{i,p}` and its first two derivatives at `x`.
pub fn bernstein(p: usize, i: usize, x: f64) -> [f64; 3] {
    let b = |q: usize, j: isize| -> f64 {
        if j < 0 || j as usize > q {
            0.0
        } else {
            let j = j as usize;
            binom(q, j) * x.powi(j as i32) * (1.0 - x).powi((q - j) as i32)
        }
    };
    let i = i as isize;
    let pf = p as f64;
    let d1 = if p >= 1 { pf * (b(p - 1, i - 1) - b(p - 1, i)) } else { 0.0 };
    let d2 = if p >= 2 { pf * (pf - 1.0) * (b(p - 2, i - 2) - 2.0 * b(p - 2, i - 1) + b(p - 2, i)) } else { 0.0 };
    [b(p, i), d1, d2]
}

pub struct OracleTerms {
    dt_v: Vec<f64>,
    grad_grad: Vec<f64>,
    dt_dt: Vec<f64>,
    lap_dt: Vec<f64>,
    f_v: Vec<f64>,
    f_dt: Vec<f64>,
}

/// Term matrices on `(0,1)^d × (0,T)` with tensor Bernstein functions, first direction fastest.
pub fn oracle(p: usize, dim: usize, t_end: f64, f: impl Fn(&[f64]) -> f64) -> OracleTerms {
    let n1 = p + 1;
    let nf = n1.pow(dim as u32);
    let locals: Vec<Vec<usize>> = (0..nf)
        .map(|mut k| {
            (0..dim)
                .map(|_| {
                    let i = k % n1;
                    k /= n1;
                    i
                })
                .collect()
        })
        .collect();
    let gl = gauss_legendre(p + 3);
    let mut o = OracleTerms {
        dt_v: vec![0.0; nf * nf],
        grad_grad: vec![0.0; nf * nf],
        dt_dt: vec![0.0; nf * nf],
        lap_dt: vec![0.0; nf * nf],
        f_v: vec![0.0; nf],
        f_dt: vec![0.0; nf],
    };
    let npts = gl.len().pow(dim as u32);
    for q in 0..npts {
        let mut k = q;
        let mut xi = vec![0.0; dim];
        let mut w = t_end;
        for a in 0..dim {
            let (x, wa) = gl[k % gl.len()];
            k /= gl.len();
            xi[a] = x;
            w *= wa;
        }
        let mut phys = xi.clone();
        phys[dim - 1] *= t_end;
        let fv = f(&phys);
        // value, spatial gradient, ∂t, spatial Laplacian per function
        let data: Vec<(f64, Vec<f64>, f64, f64)> = locals
            .iter()
            .map(|idx| {
                let b: Vec<[f64; 3]> = (0..dim).map(|a| bernstein(p, idx[a], xi[a])).collect();
                let prod = |sel: &dyn Fn(usize) -> usize| (0..dim).map(|a| b[a][sel(a)]).product::<f64>();
                let val = prod(&|_| 0);
                let grad: Vec<f64> = (0..dim - 1).map(|c| prod(&|a| usize::from(a == c))).collect();
                let dt = prod(&|a| usize::from(a == dim - 1)) / t_end;
                let lap: f64 = (0..dim - 1).map(|c| prod(&|a| if a == c { 2 } else { 0 })).sum();
                (val, grad, dt, lap)
            })
            .collect();
        for i in 0..nf {
            let (vi, ref gi, dti, _) = data[i];
            o.f_v[i] += w * fv * vi;
            o.f_dt[i] += w * fv * dti;
            for j in 0..nf {
                let (_, ref gj, dtj, lapj) = data[j];
                let gg: f64 = gi.iter().zip(gj).map(|(a, b)| a * b).sum();
                o.dt_v[i * nf + j] += w * dtj * vi;
                o.grad_grad[i * nf + j] += w * gg;
                o.dt_dt[i * nf + j] += w * dtj * dti;
                o.lap_dt[i * nf + j] += w * lapj * dti;
            }
        }
    }
    o
}

/// Largest deviation between the library and the oracle on a single element.
pub fn single_element_deviation(p: usize, domain: BenchmarkDomain, t_end: f64) -> f64 {
    let geo = GeometryMap::benchmark(domain, t_end).unwrap();
    let dim = geo.dim();
    let space = initial_space(dim, p, 0, Exec::Serial).unwrap();
    assert_eq!(space.num_cells(), 1);
    let disc = Discretization::new(&space, &geo);
    let f = |x: &[f64]| 1.0 + x[0] * x[0] * x[dim - 1] - 0.5 * x[dim - 1];
    let source = |mp: &MapPoint| f(&mp.x[..dim]);
    let t = element_terms(&disc, 0, &disc.rule().unwrap(), Some(&source)).unwrap();
    let o = oracle(p, dim, t_end, f);
    let nf = t.funcs.len();
    assert_eq!(nf, (p + 1).pow(dim as u32));
    // global numbering of a single-element space is the tensor numbering
    assert_eq!(t.funcs, (0..nf).collect::<Vec<_>>());
    let mut worst: f64 = 0.0;
    let pairs: [(&[f64], &[f64]); 6] = [
        (&t.dt_v, &o.dt_v),
        (&t.grad_grad, &o.grad_grad),
        (&t.dt_dt, &o.dt_dt),
        (&t.lap_dt, &o.lap_dt),
        (&t.f_v, &o.f_v),
        (&t.f_dt, &o.f_dt),
    ];
    for (a, b) in pairs {
        let diff = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(diff);
    }
    // assembled matrix on one element equals the oracle combination
    let cfg = StabilizationConfig::default();
    let sys = assemble_stabilized_system(&disc, &source, &cfg).unwrap();
    let delta = sys.deltas[0];
    if delta <= 0.0 {
        return f64::INFINITY;
    }
    for i in 0..nf {
        let lo = o.f_v[i] + delta * o.f_dt[i];
        worst = worst.max((sys.load[i] - lo).abs());
        for j in 0..nf {
            let k = i * nf + j;
            let m = o.dt_v[k] + o.grad_grad[k] + delta * (o.dt_dt[k] - o.lap_dt[k]);
            worst = worst.max((sys.matrix.get(i, j) - m).abs());
        }
    }
    worst
}

