use super::{KnotVector, MAX_DIM};
use crate::error::{Error, Result};

/// Tensor product of univariate open knot vectors, one per parameter direction.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorSplineSpace {
    dirs: Vec<KnotVector>,
}

/// Nonzero tensor basis functions at a point.
///
/// Local functions are ordered with the first direction running fastest.
#[derive(Clone, Debug, Default)]
pub struct BasisEval {
    /// `(first global index, count)` per direction.
    pub windows: Vec<(usize, usize)>,
    pub values: Vec<f64>,
    /// `grad[j * dim + a]`: derivative of local function `j` along direction `a`.
    pub grad: Option<Vec<f64>>,
    /// `hess[(j * dim + a) * dim + b]`.
    pub hess: Option<Vec<f64>>,
}

impl BasisEval {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.windows.len()
    }
}

impl TensorSplineSpace {
    pub fn new(dirs: Vec<KnotVector>) -> Result<Self> {
        if dirs.is_empty() || dirs.len() > MAX_DIM {
            return Err(Error::DimensionMismatch { expected: MAX_DIM, got: dirs.len() });
        }
        Ok(Self { dirs })
    }

    pub fn dim(&self) -> usize {
        self.dirs.len()
    }

    pub fn dirs(&self) -> &[KnotVector] {
        &self.dirs
    }

    pub fn dir(&self, a: usize) -> &KnotVector {
        &self.dirs[a]
    }

    pub fn num_basis(&self) -> usize {
        self.dirs.iter().map(KnotVector::num_basis).product()
    }

    /// Flat index of a multi-index (first direction fastest).
    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        for a in (0..self.dim()).rev() {
            idx = idx * self.dirs[a].num_basis() + multi[a];
        }
        idx
    }

    pub fn multi_index(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut out = [0; MAX_DIM];
        for (a, kv) in self.dirs.iter().enumerate() {
            out[a] = flat % kv.num_basis();
            flat /= kv.num_basis();
        }
        out
    }

    pub fn eval(&self, point: &[f64], nderiv: usize) -> Result<BasisEval> {
        if point.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: point.len() });
        }
        let mut spans = [0usize; MAX_DIM];
        for (a, (&xi, kv)) in point.iter().zip(&self.dirs).enumerate() {
            if !(0.0..=1.0).contains(&xi) {
                return Err(Error::Domain(format!("parameter {xi} outside [0, 1]")));
            }
            spans[a] = kv.find_span(xi);
        }
        let mut out = BasisEval::default();
        eval_on_spans(&self.dirs, &spans[..self.dim()], point, nderiv, &mut out);
        Ok(out)
    }
}

/// Evaluate the tensor basis on fixed knot spans, reusing `out`'s buffers.
pub(crate) fn eval_on_spans(
    dirs: &[KnotVector],
    spans: &[usize],
    point: &[f64],
    nderiv: usize,
    out: &mut BasisEval,
) {
    let dim = dirs.len();
    let nd = nderiv.min(2);
    let mut univ: [Vec<Vec<f64>>; MAX_DIM] = Default::default();
    out.windows.clear();
    for a in 0..dim {
        let p = dirs[a].degree();
        univ[a] = vec![vec![0.0; p + 1]; nd + 1];
        dirs[a].eval_in_span(spans[a], point[a], nd, &mut univ[a]);
        out.windows.push((spans[a] - p, p + 1));
    }
    tensor_combine(&univ[..dim], &out.windows.iter().map(|w| w.1).collect::<Vec<_>>(), nd, out);
}

/// Form tensor-product values and derivatives from univariate derivative tables.
pub(crate) fn tensor_combine(
    univ: &[Vec<Vec<f64>>],
    counts: &[usize],
    nderiv: usize,
    out: &mut BasisEval,
) {
    let dim = univ.len();
    let n: usize = counts.iter().product();
    out.values.clear();
    out.values.resize(n, 0.0);
    let grad = if nderiv >= 1 {
        let g = out.grad.get_or_insert_with(Vec::new);
        g.clear();
        g.resize(n * dim, 0.0);
        true
    } else {
        out.grad = None;
        false
    };
    let hess = if nderiv >= 2 {
        let h = out.hess.get_or_insert_with(Vec::new);
        h.clear();
        h.resize(n * dim * dim, 0.0);
        true
    } else {
        out.hess = None;
        false
    };
    let mut local = [0usize; MAX_DIM];
    for j in 0..n {
        let mut rem = j;
        for a in 0..dim {
            local[a] = rem % counts[a];
            rem /= counts[a];
        }
        let val = |a: usize, k: usize| univ[a][k][local[a]];
        out.values[j] = (0..dim).map(|a| val(a, 0)).product();
        if grad {
            let g = out.grad.as_mut().unwrap();
            for a in 0..dim {
                g[j * dim + a] = (0..dim).map(|b| val(b, usize::from(a == b))).product();
            }
        }
        if hess {
            let h = out.hess.as_mut().unwrap();
            for a in 0..dim {
                for b in a..dim {
                    let v: f64 = (0..dim)
                        .map(|c| {
                            let k = usize::from(c == a) + usize::from(c == b);
                            val(c, k)
                        })
                        .product();
                    h[(j * dim + a) * dim + b] = v;
                    h[(j * dim + b) * dim + a] = v;
                }
            }
        }
    }
}
