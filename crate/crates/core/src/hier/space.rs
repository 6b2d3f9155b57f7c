use std::collections::{HashMap, HashSet};

use super::mesh::{box_indices, pack, Cell, HierarchicalMesh};
use crate::error::{Error, Result};
use crate::parallel::{par_map, Exec};
use crate::spline::tensor::{eval_on_spans, BasisEval};
use crate::spline::{KnotVector, RefinementMatrix, MAX_DIM};

/// An active basis function: level and per-direction B-spline index at that level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FuncId {
    pub level: u8,
    pub idx: [u32; MAX_DIM],
}

/// Restriction of the truncated basis to one active cell, written in terms of
/// the tensor B-splines of the cell's level.
#[derive(Clone, Debug)]
pub struct CellBasis {
    pub cell: Cell,
    /// Global indices of the functions that are nonzero on the cell.
    pub funcs: Vec<usize>,
    /// Knot-span index per direction at the cell's level.
    pub spans: [usize; MAX_DIM],
    /// Row-major `funcs.len() × n_local` extraction coefficients.
    pub coeffs: Vec<f64>,
    pub n_local: usize,
}

/// Truncated basis values on one cell.
#[derive(Clone, Debug, Default)]
pub struct ActiveEval {
    pub funcs: Vec<usize>,
    pub values: Vec<f64>,
    /// `grad[f * dim + a]`, present when requested.
    pub grad: Vec<f64>,
    /// `hess[(f * dim + a) * dim + b]`, present when requested.
    pub hess: Vec<f64>,
}

/// Truncated hierarchical B-spline space over a [`HierarchicalMesh`].
#[derive(Clone, Debug)]
pub struct HierarchicalSplineSpace {
    mesh: HierarchicalMesh,
    /// Knot vectors per level and direction.
    knots: Vec<Vec<KnotVector>>,
    /// Two-scale relation from level `l` to `l + 1`, per direction.
    refine: Vec<Vec<RefinementMatrix>>,
    /// For each level `l + 1`, direction and fine function: coarse index range at level `l`.
    fine_to_coarse: Vec<Vec<Vec<(usize, usize)>>>,
    functions: Vec<FuncId>,
    func_lookup: Vec<HashMap<u64, usize>>,
    cells: Vec<Cell>,
    cell_lookup: HashMap<Cell, usize>,
    cell_basis: Vec<CellBasis>,
}

impl HierarchicalSplineSpace {
    /// Build the truncated basis on `mesh`, with level-0 knot vectors `base`.
    ///
    /// The breakpoints of `base` must coincide with the mesh's level-0 grid.
    pub fn new(base: Vec<KnotVector>, mesh: HierarchicalMesh) -> Result<Self> {
        Self::build(base, mesh, Exec::default())
    }

    pub fn build(base: Vec<KnotVector>, mesh: HierarchicalMesh, exec: Exec) -> Result<Self> {
        let dim = mesh.dim();
        if base.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: base.len() });
        }
        for (a, kv) in base.iter().enumerate() {
            if kv.breaks() != mesh.base_breaks()[a] {
                return Err(Error::Config(format!(
                    "knot vector breakpoints in direction {a} do not match the mesh"
                )));
            }
        }
        let levels = mesh.num_levels().max(1);
        let mut knots = vec![base];
        for l in 1..levels {
            let next = knots[l - 1].iter().map(KnotVector::dyadic_refine).collect();
            knots.push(next);
        }
        let mut refine = Vec::new();
        let mut fine_to_coarse = Vec::new();
        for l in 0..levels.saturating_sub(1) {
            let mats: Vec<RefinementMatrix> =
                (0..dim).map(|a| knots[l][a].refinement_to(&knots[l + 1][a])).collect();
            let ranges = mats
                .iter()
                .map(|m| {
                    let mut r = vec![(usize::MAX, 0usize); m.num_fine()];
                    for i in 0..m.num_coarse() {
                        for &(j, _) in m.row(i) {
                            r[j].0 = r[j].0.min(i);
                            r[j].1 = r[j].1.max(i);
                        }
                    }
                    r
                })
                .collect();
            refine.push(mats);
            fine_to_coarse.push(ranges);
        }

        let mut space = Self {
            mesh,
            knots,
            refine,
            fine_to_coarse,
            functions: Vec::new(),
            func_lookup: Vec::new(),
            cells: Vec::new(),
            cell_lookup: HashMap::new(),
            cell_basis: Vec::new(),
        };
        let inside = space.functions_inside_regions();
        space.select_active(&inside);
        space.cells = space.mesh.active_cells();
        space.cell_lookup = space.cells.iter().enumerate().map(|(i, c)| (*c, i)).collect();
        let cells = space.cells.clone();
        let sp = &space;
        space.cell_basis = par_map(exec, &cells, |c| sp.extract_cell(c, &inside));
        Ok(space)
    }

    pub fn mesh(&self) -> &HierarchicalMesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.mesh.dim()
    }

    pub fn degree(&self, a: usize) -> usize {
        self.knots[0][a].degree()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.dim()).map(|a| self.degree(a)).collect()
    }

    pub fn base_knots(&self) -> &[KnotVector] {
        &self.knots[0]
    }

    pub fn level_knots(&self, level: usize) -> &[KnotVector] {
        &self.knots[level]
    }

    pub fn space_dimension(&self) -> usize {
        self.functions.len()
    }

    pub fn functions(&self) -> &[FuncId] {
        &self.functions
    }

    pub fn function_index(&self, f: &FuncId) -> Option<usize> {
        self.func_lookup.get(f.level as usize)?.get(&pack(&f.idx)).copied()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell_index(&self, cell: &Cell) -> Option<usize> {
        self.cell_lookup.get(cell).copied()
    }

    pub fn cell_basis(&self, i: usize) -> &CellBasis {
        &self.cell_basis[i]
    }

    /// Global indices of the functions whose truncated support meets the cell.
    pub fn active_functions_on_cell(&self, cell: &Cell) -> Option<&[usize]> {
        self.cell_index(cell).map(|i| self.cell_basis[i].funcs.as_slice())
    }

    /// Index of the active cell containing a parameter point.
    pub fn cell_containing(&self, xi: &[f64]) -> usize {
        self.cell_lookup[&self.mesh.leaf_containing(xi)]
    }

    /// Index of the active cell that contains a (possibly finer) cell of another mesh.
    pub fn cell_covering(&self, cell: &Cell) -> Option<usize> {
        self.mesh.active_ancestor(cell).and_then(|c| self.cell_index(&c))
    }

    /// Refine the marked cells (with admissibility closure) and rebuild the basis.
    pub fn refine_marked(&self, marked: &[Cell], exec: Exec) -> Result<Self> {
        Self::build(self.knots[0].clone(), self.mesh.refine_marked(marked), exec)
    }

    /// Same mesh, different degree: level-0 knot vectors rebuilt as open uniform
    /// knots on the mesh breakpoints with simple interior knots.
    pub fn with_degree(mesh: HierarchicalMesh, degree: usize, exec: Exec) -> Result<Self> {
        let base = mesh
            .base_breaks()
            .iter()
            .map(|b| {
                let mut k = vec![0.0; degree + 1];
                k.extend_from_slice(&b[1..b.len() - 1]);
                k.extend(std::iter::repeat_n(1.0, degree + 1));
                KnotVector::new(k, degree)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::build(base, mesh, exec)
    }

    fn support_box(&self, level: usize, idx: &[u32; MAX_DIM]) -> Vec<(u32, u32)> {
        (0..self.dim())
            .map(|a| {
                let (lo, hi) = self.knots[level][a].support_elements(idx[a] as usize);
                (lo as u32, hi as u32)
            })
            .collect()
    }

    fn window(&self, cell: &Cell) -> Vec<(u32, u32)> {
        (0..self.dim())
            .map(|a| {
                let (lo, hi) = self.knots[cell.level()][a].functions_on_element(cell.idx[a] as usize);
                (lo as u32, hi as u32)
            })
            .collect()
    }

    /// Per level, the functions whose support lies in the region covered by
    /// cells of that level or finer.
    fn functions_inside_regions(&self) -> Vec<HashSet<u64>> {
        let levels = self.mesh.num_levels().max(1);
        let mut inside = vec![HashSet::new(); levels];
        let mut seen: HashSet<u64> = HashSet::new();
        for (l, slot) in inside.iter_mut().enumerate() {
            seen.clear();
            for cell in self.present_cells(l) {
                for f in box_indices(&self.window(&cell)) {
                    let k = pack(&f);
                    if !seen.insert(k) {
                        continue;
                    }
                    let supp = self.support_box(l, &f);
                    if box_indices(&supp).all(|c| self.mesh.is_present(&Cell::new(l, c))) {
                        slot.insert(k);
                    }
                }
            }
        }
        inside
    }

    fn present_cells(&self, level: usize) -> Vec<Cell> {
        // present cells at `level` are the active ones plus ancestors of finer active cells
        let mut set: HashSet<Cell> = HashSet::new();
        for c in self.mesh.active_cells() {
            if c.level() < level {
                continue;
            }
            let mut a = c;
            while a.level() > level {
                a = a.parent().unwrap();
            }
            set.insert(a);
        }
        let mut v: Vec<Cell> = set.into_iter().collect();
        v.sort();
        v
    }

    fn select_active(&mut self, inside: &[HashSet<u64>]) {
        let mut funcs = Vec::new();
        for (l, set) in inside.iter().enumerate() {
            let mut level_funcs: Vec<[u32; MAX_DIM]> = set
                .iter()
                .map(|&k| super::mesh::unpack(k))
                .filter(|f| {
                    box_indices(&self.support_box(l, f)).any(|c| self.mesh.is_active(&Cell::new(l, c)))
                })
                .collect();
            level_funcs.sort_by_key(|f| (f[2], f[1], f[0]));
            funcs.extend(level_funcs.into_iter().map(|idx| FuncId { level: l as u8, idx }));
        }
        let levels = inside.len();
        let mut lookup = vec![HashMap::new(); levels];
        for (i, f) in funcs.iter().enumerate() {
            lookup[f.level as usize].insert(pack(&f.idx), i);
        }
        self.functions = funcs;
        self.func_lookup = lookup;
    }

    fn extract_cell(&self, cell: &Cell, inside: &[HashSet<u64>]) -> CellBasis {
        let dim = self.dim();
        let k = cell.level();
        // boxes[j]: index box at level j of functions that can influence the cell
        let mut boxes: Vec<Vec<(u32, u32)>> = vec![Vec::new(); k + 1];
        boxes[k] = self.window(cell);
        for j in (1..=k).rev() {
            let b = (0..dim)
                .map(|a| {
                    let r = &self.fine_to_coarse[j - 1][a];
                    let (lo, hi) = boxes[j][a];
                    (r[lo as usize].0 as u32, r[hi as usize].1 as u32)
                })
                .collect();
            boxes[j - 1] = b;
        }
        let n_local: usize = boxes[k].iter().map(|r| (r.1 - r.0 + 1) as usize).product();
        let mut funcs = Vec::new();
        let mut coeffs = Vec::new();
        for l in 0..=k {
            for f in box_indices(&boxes[l]) {
                let Some(&gi) = self.func_lookup.get(l).and_then(|m| m.get(&pack(&f))) else {
                    continue;
                };
                let mut c = unit_on_box(&boxes[l], &f);
                for j in l + 1..=k {
                    c = self.refine_on_box(j - 1, &boxes[j - 1], &boxes[j], &c);
                    for (pos, idx) in box_indices(&boxes[j]).enumerate() {
                        if c[pos] != 0.0 && inside[j].contains(&pack(&idx)) {
                            c[pos] = 0.0;
                        }
                    }
                }
                if c.iter().any(|&v| v != 0.0) {
                    funcs.push(gi);
                    coeffs.extend_from_slice(&c);
                }
            }
        }
        let mut spans = [0usize; MAX_DIM];
        for a in 0..dim {
            spans[a] = self.knots[k][a].span_of_element(cell.idx[a] as usize);
        }
        CellBasis { cell: *cell, funcs, spans, coeffs, n_local }
    }

    /// Apply the level-`l` two-scale relation to coefficients on `coarse`,
    /// returning coefficients on the level-`l + 1` box `fine`.
    fn refine_on_box(&self, l: usize, coarse: &[(u32, u32)], fine: &[(u32, u32)], c: &[f64]) -> Vec<f64> {
        let dim = self.dim();
        let mut shape: Vec<usize> = coarse.iter().map(|r| (r.1 - r.0 + 1) as usize).collect();
        let mut data = c.to_vec();
        for a in 0..dim {
            let n_fine = (fine[a].1 - fine[a].0 + 1) as usize;
            let stride: usize = shape[..a].iter().product();
            let outer: usize = shape[a + 1..].iter().product();
            let mut next_shape = shape.clone();
            next_shape[a] = n_fine;
            let mut out = vec![0.0; stride * n_fine * outer];
            let mat = &self.refine[l][a];
            for o in 0..outer {
                for i in 0..shape[a] {
                    let coarse_idx = coarse[a].0 as usize + i;
                    for s in 0..stride {
                        let v = data[s + stride * (i + shape[a] * o)];
                        if v == 0.0 {
                            continue;
                        }
                        for &(j, w) in mat.row(coarse_idx) {
                            if j < fine[a].0 as usize || j > fine[a].1 as usize {
                                continue;
                            }
                            let jj = j - fine[a].0 as usize;
                            out[s + stride * (jj + n_fine * o)] += w * v;
                        }
                    }
                }
            }
            data = out;
            shape = next_shape;
        }
        data
    }

    /// Tensor B-splines of cell `ci`'s level evaluated at parameter points.
    pub fn tensor_eval_on_cell(&self, ci: usize, xi: &[f64], nderiv: usize, out: &mut BasisEval) {
        let cb = &self.cell_basis[ci];
        let dim = self.dim();
        eval_on_spans(&self.knots[cb.cell.level()], &cb.spans[..dim], xi, nderiv, out);
    }

    /// Values and parametric derivatives of the truncated functions on cell `ci` at `xi`.
    pub fn eval_on_cell(&self, ci: usize, xi: &[f64], nderiv: usize) -> ActiveEval {
        let mut tensor = BasisEval::default();
        let mut out = ActiveEval::default();
        self.eval_on_cell_into(ci, xi, nderiv, &mut tensor, &mut out);
        out
    }

    pub fn eval_on_cell_into(
        &self,
        ci: usize,
        xi: &[f64],
        nderiv: usize,
        tensor: &mut BasisEval,
        out: &mut ActiveEval,
    ) {
        self.tensor_eval_on_cell(ci, xi, nderiv, tensor);
        let cb = &self.cell_basis[ci];
        let dim = self.dim();
        let nf = cb.funcs.len();
        let nl = cb.n_local;
        out.funcs.clear();
        out.funcs.extend_from_slice(&cb.funcs);
        out.values.clear();
        out.values.resize(nf, 0.0);
        out.grad.clear();
        out.hess.clear();
        if nderiv >= 1 {
            out.grad.resize(nf * dim, 0.0);
        }
        if nderiv >= 2 {
            out.hess.resize(nf * dim * dim, 0.0);
        }
        for f in 0..nf {
            let row = &cb.coeffs[f * nl..(f + 1) * nl];
            for (m, &w) in row.iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                out.values[f] += w * tensor.values[m];
                if let Some(g) = &tensor.grad {
                    for a in 0..dim {
                        out.grad[f * dim + a] += w * g[m * dim + a];
                    }
                }
                if let Some(h) = &tensor.hess {
                    for ab in 0..dim * dim {
                        out.hess[f * dim * dim + ab] += w * h[m * dim * dim + ab];
                    }
                }
            }
        }
    }

    /// Evaluate all active functions that are nonzero at a parameter point.
    pub fn eval_active(&self, xi: &[f64], nderiv: usize) -> Result<ActiveEval> {
        if xi.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: xi.len() });
        }
        if xi.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(Error::Domain("point outside the parameter cube".into()));
        }
        let ci = self.cell_containing(xi);
        Ok(self.eval_on_cell(ci, xi, nderiv))
    }

    /// Value of the spline with coefficients `coeffs` at a parameter point.
    pub fn eval_function(&self, coeffs: &[f64], xi: &[f64]) -> Result<f64> {
        let e = self.eval_active(xi, 0)?;
        Ok(e.funcs.iter().zip(&e.values).map(|(&f, v)| coeffs[f] * v).sum())
    }

    /// Greville point of an active function (at its own level).
    pub fn greville_point(&self, f: usize) -> [f64; MAX_DIM] {
        let id = self.functions[f];
        let mut out = [0.0; MAX_DIM];
        for a in 0..self.dim() {
            let kv = &self.knots[id.level as usize][a];
            let p = kv.degree();
            let i = id.idx[a] as usize;
            out[a] = kv.knots()[i + 1..=i + p].iter().sum::<f64>() / p as f64;
        }
        out
    }

    /// Level-`level` B-spline count per direction.
    pub fn level_num_basis(&self, level: usize, a: usize) -> usize {
        self.knots[level][a].num_basis()
    }
}

fn unit_on_box(b: &[(u32, u32)], f: &[u32; MAX_DIM]) -> Vec<f64> {
    let counts: Vec<usize> = b.iter().map(|r| (r.1 - r.0 + 1) as usize).collect();
    let n: usize = counts.iter().product();
    let mut c = vec![0.0; n];
    let mut pos = 0;
    for a in (0..b.len()).rev() {
        pos = pos * counts[a] + (f[a] - b[a].0) as usize;
    }
    c[pos] = 1.0;
    c
}
