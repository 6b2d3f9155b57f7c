use crate::error::{Error, Result};

/// Knots closer than this are merged at construction.
const SNAP_TOL: f64 = 1e-14;

/// An open knot vector on `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    knots: Vec<f64>,
    degree: usize,
    /// Knot-span index `μ` (with `t_μ < t_{μ+1}`) of every nonempty span, left to right.
    spans: Vec<usize>,
}

/// Values and derivatives of the `p + 1` basis functions that are nonzero at a point.
#[derive(Clone, Debug, PartialEq)]
pub struct UnivariateEval {
    /// Global index of the first nonzero function.
    pub first: usize,
    /// `ders[k][j]` is the `k`-th derivative of function `first + j`.
    pub ders: Vec<Vec<f64>>,
}

impl KnotVector {
    pub fn new(knots: Vec<f64>, degree: usize) -> Result<Self> {
        if degree == 0 {
            return Err(Error::InvalidKnots("degree must be at least 1".into()));
        }
        let mut knots = knots;
        if knots.iter().any(|t| !t.is_finite() || *t < -SNAP_TOL || *t > 1.0 + SNAP_TOL) {
            return Err(Error::InvalidKnots("knots must lie in [0, 1]".into()));
        }
        for w in 1..knots.len() {
            if knots[w] < knots[w - 1] - SNAP_TOL {
                return Err(Error::InvalidKnots("knots must be nondecreasing".into()));
            }
            if (knots[w] - knots[w - 1]).abs() < SNAP_TOL {
                knots[w] = knots[w - 1];
            }
        }
        for t in knots.iter_mut() {
            *t = t.clamp(0.0, 1.0);
        }
        let p = degree;
        if knots.len() < 2 * (p + 1) {
            return Err(Error::InvalidKnots(format!(
                "need at least {} knots for degree {p}",
                2 * (p + 1)
            )));
        }
        let n = knots.len();
        let first_ok = knots[..=p].iter().all(|&t| t == 0.0) && knots[p + 1] > 0.0;
        let last_ok = knots[n - p - 1..].iter().all(|&t| t == 1.0) && knots[n - p - 2] < 1.0;
        if !first_ok || !last_ok {
            return Err(Error::InvalidKnots(
                "knot vector must be open: end knots 0 and 1 with multiplicity exactly p+1".into(),
            ));
        }
        let spans: Vec<usize> = (p..n - p - 1).filter(|&i| knots[i] < knots[i + 1]).collect();
        let mults = Self::multiplicities_of(&knots);
        if let Some(&(t, m)) = mults[1..mults.len() - 1].iter().find(|r| r.1 > p) {
            return Err(Error::InvalidKnots(format!(
                "interior knot {t} has multiplicity {m} > p"
            )));
        }
        Ok(Self { knots, degree, spans })
    }

    /// Open knot vector with `n_elems` equal spans and simple interior knots.
    pub fn open_uniform(degree: usize, n_elems: usize) -> Self {
        assert!(n_elems >= 1 && degree >= 1);
        let mut knots = vec![0.0; degree + 1];
        for i in 1..n_elems {
            knots.push(i as f64 / n_elems as f64);
        }
        knots.extend(std::iter::repeat_n(1.0, degree + 1));
        Self::new(knots, degree).expect("uniform open knot vector is valid")
    }

    fn multiplicities_of(knots: &[f64]) -> Vec<(f64, usize)> {
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &t in knots {
            match out.last_mut() {
                Some((v, m)) if *v == t => *m += 1,
                _ => out.push((t, 1)),
            }
        }
        out
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    /// Number of basis functions `n`.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Distinct knots with their multiplicities.
    pub fn multiplicities(&self) -> Vec<(f64, usize)> {
        Self::multiplicities_of(&self.knots)
    }

    /// Distinct knot values (element breakpoints).
    pub fn breaks(&self) -> Vec<f64> {
        self.multiplicities().into_iter().map(|(t, _)| t).collect()
    }

    /// Largest interior knot multiplicity (0 when there are no interior knots).
    pub fn max_interior_multiplicity(&self) -> usize {
        let m = self.multiplicities();
        m[1..m.len() - 1].iter().map(|r| r.1).max().unwrap_or(0)
    }

    /// True when every interior multiplicity is at most `p - 1`, i.e. the basis is `C¹`.
    pub fn is_c1(&self) -> bool {
        self.degree >= 2 && self.max_interior_multiplicity() < self.degree
    }

    pub fn num_elements(&self) -> usize {
        self.spans.len()
    }

    pub fn element_bounds(&self, e: usize) -> (f64, f64) {
        let s = self.spans[e];
        (self.knots[s], self.knots[s + 1])
    }

    /// Knot-span index of element `e`.
    pub fn span_of_element(&self, e: usize) -> usize {
        self.spans[e]
    }

    /// Element containing `xi`; the right end point belongs to the last element.
    pub fn element_of(&self, xi: f64) -> usize {
        let breaks_hi = |e: usize| self.knots[self.spans[e] + 1];
        let (mut lo, mut hi) = (0usize, self.spans.len() - 1);
        while lo < hi {
            let mid = (lo + hi) / 2;
            if xi < breaks_hi(mid) {
                hi = mid;
            } else {
                lo = mid + 1;
            }
        }
        lo
    }

    /// Span index `μ` with `t_μ ≤ ξ < t_{μ+1}` (last nonempty span at `ξ = 1`).
    pub fn find_span(&self, xi: f64) -> usize {
        self.spans[self.element_of(xi)]
    }

    /// Inclusive element range on which basis function `i` is supported.
    pub fn support_elements(&self, i: usize) -> (usize, usize) {
        let lo = self.knots[i];
        let hi = self.knots[i + self.degree + 1];
        let first = self.spans.partition_point(|&s| self.knots[s] < lo);
        let last = self.spans.partition_point(|&s| self.knots[s + 1] <= hi) - 1;
        (first, last)
    }

    /// Inclusive index range of the functions that are nonzero on element `e`.
    pub fn functions_on_element(&self, e: usize) -> (usize, usize) {
        let s = self.spans[e];
        (s - self.degree, s)
    }

    /// Evaluate the nonzero basis functions and their derivatives up to `nderiv`.
    pub fn eval(&self, xi: f64, nderiv: usize) -> Result<UnivariateEval> {
        if !(0.0..=1.0).contains(&xi) {
            return Err(Error::Domain(format!("parameter {xi} outside [0, 1]")));
        }
        let span = self.find_span(xi);
        let p = self.degree;
        let mut ders = vec![vec![0.0; p + 1]; nderiv + 1];
        self.eval_in_span(span, xi, nderiv, &mut ders);
        Ok(UnivariateEval { first: span - p, ders })
    }

    /// Triangular (de Boor) evaluation of derivatives on a known span.
    ///
    /// `ders` must hold `nderiv + 1` rows of length `p + 1`. Zero denominators
    /// contribute zero.
    pub fn eval_in_span(&self, span: usize, xi: f64, nderiv: usize, ders: &mut [Vec<f64>]) {
        let p = self.degree;
        let t = &self.knots;
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = xi - t[span + 1 - j];
            right[j] = t[span + j] - xi;
            let mut saved = 0.0;
            for r in 0..j {
                ndu[j][r] = right[r + 1] + left[j - r];
                let temp = if ndu[j][r] == 0.0 { 0.0 } else { ndu[r][j - 1] / ndu[j][r] };
                ndu[r][j] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        for j in 0..=p {
            ders[0][j] = ndu[j][p];
        }
        let nd = nderiv.min(p);
        let mut a = [vec![0.0; p + 1], vec![0.0; p + 1]];
        for r in 0..=p {
            let (mut s1, mut s2) = (0usize, 1usize);
            a[0].iter_mut().for_each(|v| *v = 0.0);
            a[0][0] = 1.0;
            for k in 1..=nd {
                let mut d = 0.0;
                let rk = r as isize - k as isize;
                let pk = p - k;
                if r >= k {
                    let den = ndu[pk + 1][rk as usize];
                    a[s2][0] = if den == 0.0 { 0.0 } else { a[s1][0] / den };
                    d = a[s2][0] * ndu[rk as usize][pk];
                }
                let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
                let j2 = if r as isize - 1 <= pk as isize { k - 1 } else { p - r };
                for j in j1..=j2 {
                    let idx = (rk + j as isize) as usize;
                    let den = ndu[pk + 1][idx];
                    a[s2][j] = if den == 0.0 { 0.0 } else { (a[s1][j] - a[s1][j - 1]) / den };
                    d += a[s2][j] * ndu[idx][pk];
                }
                if r <= pk {
                    let den = ndu[pk + 1][r];
                    a[s2][k] = if den == 0.0 { 0.0 } else { -a[s1][k - 1] / den };
                    d += a[s2][k] * ndu[r][pk];
                }
                ders[k][r] = d;
                std::mem::swap(&mut s1, &mut s2);
            }
        }
        let mut fac = p as f64;
        for k in 1..=nd {
            for v in ders[k].iter_mut() {
                *v *= fac;
            }
            fac *= (p - k) as f64;
        }
        for row in ders.iter_mut().skip(nd + 1) {
            row.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Insert the midpoint of every nonempty span once.
    pub fn dyadic_refine(&self) -> KnotVector {
        let mut knots = Vec::with_capacity(self.knots.len() + self.spans.len());
        for i in 0..self.knots.len() {
            knots.push(self.knots[i]);
            if i + 1 < self.knots.len() && self.spans.binary_search(&i).is_ok() {
                knots.push(0.5 * (self.knots[i] + self.knots[i + 1]));
            }
        }
        KnotVector::new(knots, self.degree).expect("refinement of an open knot vector is open")
    }

    /// Greville abscissae: means of `p` consecutive interior knots.
    pub fn greville(&self) -> Vec<f64> {
        let p = self.degree;
        (0..self.num_basis())
            .map(|i| self.knots[i + 1..=i + p].iter().sum::<f64>() / p as f64)
            .collect()
    }

    /// Coefficients expressing each basis function of `self` in the basis of `fine`,
    /// whose knots must contain those of `self` (Oslo algorithm).
    pub fn refinement_to(&self, fine: &KnotVector) -> RefinementMatrix {
        assert_eq!(self.degree, fine.degree);
        let p = self.degree;
        let t = &self.knots;
        let tau = &fine.knots;
        let n_coarse = self.num_basis();
        let n_fine = fine.num_basis();
        let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_coarse];
        let mut b = vec![0.0; p + 1];
        for j in 0..n_fine {
            let mu = self.span_at_left(tau[j]);
            b.iter_mut().for_each(|v| *v = 0.0);
            b[p] = 1.0;
            // b[p - k + m] holds the coefficient of coarse function mu - k + m
            for k in 1..=p {
                let x = tau[j + k];
                for m in (mu + 1 - k)..=mu {
                    let denom = t[m + k] - t[m];
                    let (a, c) = if denom == 0.0 {
                        (0.0, 0.0)
                    } else {
                        ((x - t[m]) / denom, (t[m + k] - x) / denom)
                    };
                    let slot = p - (mu - m);
                    let old = b[slot];
                    b[slot] = a * old;
                    b[slot - 1] += c * old;
                }
            }
            for (slot, &v) in b.iter().enumerate() {
                if v != 0.0 {
                    rows[mu + slot - p].push((j, v));
                }
            }
        }
        RefinementMatrix { rows, n_fine }
    }

    /// Largest `μ ≤ n - 1` with `t_μ ≤ x < t_{μ+1}`.
    fn span_at_left(&self, x: f64) -> usize {
        let n = self.num_basis();
        let idx = self.knots.partition_point(|&t| t <= x);
        (idx.saturating_sub(1)).clamp(self.degree, n - 1)
    }
}

/// Sparse two-scale relation: row `i` lists `(fine index, coefficient)` for coarse function `i`.
#[derive(Clone, Debug)]
pub struct RefinementMatrix {
    rows: Vec<Vec<(usize, f64)>>,
    n_fine: usize,
}

impl RefinementMatrix {
    pub fn row(&self, coarse: usize) -> &[(usize, f64)] {
        &self.rows[coarse]
    }

    pub fn num_coarse(&self) -> usize {
        self.rows.len()
    }

    pub fn num_fine(&self) -> usize {
        self.n_fine
    }

    /// Inclusive range of coarse functions whose refinement touches `fine`.
    pub fn coarse_range_of_fine(&self, fine_lo: usize, fine_hi: usize) -> (usize, usize) {
        let mut lo = usize::MAX;
        let mut hi = 0;
        for (i, row) in self.rows.iter().enumerate() {
            if row.iter().any(|&(j, _)| j >= fine_lo && j <= fine_hi) {
                lo = lo.min(i);
                hi = hi.max(i);
            }
        }
        (lo, hi)
    }

    /// Apply to coarse coefficients, producing fine coefficients.
    pub fn apply(&self, coarse: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_fine];
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out[j] += v * coarse[i];
            }
        }
        out
    }
}
