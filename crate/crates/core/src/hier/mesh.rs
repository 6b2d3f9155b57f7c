use std::collections::{BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::spline::MAX_DIM;

/// Default deepest refinement level.
pub const DEFAULT_MAX_LEVEL: usize = 12;

const BITS: u32 = 21;

/// A dyadic cell: level plus per-direction element index at that level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub level: u8,
    pub idx: [u32; MAX_DIM],
}

impl Cell {
    pub fn new(level: usize, idx: [u32; MAX_DIM]) -> Self {
        Self { level: level as u8, idx }
    }

    pub fn level(&self) -> usize {
        self.level as usize
    }

    fn key(&self) -> u64 {
        pack(&self.idx)
    }

    pub fn parent(&self) -> Option<Cell> {
        (self.level > 0).then(|| Cell {
            level: self.level - 1,
            idx: self.idx.map(|i| i >> 1),
        })
    }

    pub fn children(&self, dim: usize) -> impl Iterator<Item = Cell> + '_ {
        (0..1u32 << dim).map(move |bits| {
            let mut idx = [0; MAX_DIM];
            for a in 0..dim {
                idx[a] = 2 * self.idx[a] + ((bits >> a) & 1);
            }
            Cell { level: self.level + 1, idx }
        })
    }
}

pub(crate) fn pack(idx: &[u32; MAX_DIM]) -> u64 {
    (idx[0] as u64) | ((idx[1] as u64) << BITS) | ((idx[2] as u64) << (2 * BITS))
}

pub(crate) fn unpack(key: u64) -> [u32; MAX_DIM] {
    let mask = (1u64 << BITS) - 1;
    [(key & mask) as u32, ((key >> BITS) & mask) as u32, ((key >> (2 * BITS)) & mask) as u32]
}

/// Sort key: time (last direction) slowest, first direction fastest.
fn order_key(idx: &[u32; MAX_DIM]) -> u64 {
    (idx[0] as u64) | ((idx[1] as u64) << BITS) | ((idx[2] as u64) << (2 * BITS))
}

/// Leveled dyadic cell grids over the parameter cube.
///
/// Level-0 cells are the nonempty spans of the base knot vectors; a level-`ℓ + 1`
/// cell is one of the `2^dim` halves of a level-`ℓ` cell.
#[derive(Clone, Debug)]
pub struct HierarchicalMesh {
    dim: usize,
    base_breaks: Vec<Vec<f64>>,
    /// Cells that are active or refined, per level.
    present: Vec<HashSet<u64>>,
    active: Vec<BTreeSet<u64>>,
    /// Support-extension radius (in cells) per direction used for admissibility.
    ext: [usize; MAX_DIM],
    max_level: usize,
}

impl PartialEq for HierarchicalMesh {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.base_breaks == other.base_breaks
            && self.active_cells() == other.active_cells()
    }
}

impl HierarchicalMesh {
    /// Mesh whose active cells are all level-0 cells.
    ///
    /// `ext` is the support-extension radius per direction, normally the spline degree.
    pub fn new(base_breaks: Vec<Vec<f64>>, ext: &[usize]) -> Self {
        let dim = base_breaks.len();
        assert!((1..=MAX_DIM).contains(&dim) && ext.len() == dim);
        let mut e = [0; MAX_DIM];
        e[..dim].copy_from_slice(ext);
        let mut mesh = Self {
            dim,
            base_breaks,
            present: vec![HashSet::new()],
            active: vec![BTreeSet::new()],
            ext: e,
            max_level: DEFAULT_MAX_LEVEL,
        };
        let counts: Vec<usize> = (0..dim).map(|a| mesh.base_breaks[a].len() - 1).collect();
        for idx in grid_indices(&counts) {
            let k = pack(&idx);
            mesh.present[0].insert(k);
            mesh.active[0].insert(order_key(&idx));
        }
        mesh
    }

    /// Uniform mesh with every cell at `level`.
    pub fn uniform(base_breaks: Vec<Vec<f64>>, ext: &[usize], level: usize) -> Self {
        let mut mesh = Self::new(base_breaks, ext);
        for _ in 0..level {
            let all = mesh.active_cells();
            mesh = mesh.refine_marked(&all);
        }
        mesh
    }

    pub fn with_max_level(mut self, max_level: usize) -> Self {
        self.max_level = max_level;
        self
    }

    pub fn max_level(&self) -> usize {
        self.max_level
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn base_breaks(&self) -> &[Vec<f64>] {
        &self.base_breaks
    }

    pub fn support_extension(&self) -> &[usize] {
        &self.ext[..self.dim]
    }

    /// Number of levels holding at least one active cell (highest level + 1).
    pub fn num_levels(&self) -> usize {
        self.active.iter().rposition(|s| !s.is_empty()).map_or(0, |l| l + 1)
    }

    pub fn num_active(&self) -> usize {
        self.active.iter().map(BTreeSet::len).sum()
    }

    /// Cells per direction at `level`.
    pub fn cells_per_dir(&self, level: usize, a: usize) -> usize {
        (self.base_breaks[a].len() - 1) << level
    }

    /// Active cells, level-major, lexicographic within a level (time slowest).
    pub fn active_cells(&self) -> Vec<Cell> {
        let mut out = Vec::with_capacity(self.num_active());
        for (l, set) in self.active.iter().enumerate() {
            out.extend(set.iter().map(|&k| Cell::new(l, unpack(k))));
        }
        out
    }

    pub fn is_present(&self, cell: &Cell) -> bool {
        self.present.get(cell.level()).is_some_and(|s| s.contains(&cell.key()))
    }

    pub fn is_active(&self, cell: &Cell) -> bool {
        self.active.get(cell.level()).is_some_and(|s| s.contains(&order_key(&cell.idx)))
    }

    /// Present but not active: the cell has been split.
    pub fn is_refined(&self, cell: &Cell) -> bool {
        self.is_present(cell) && !self.is_active(cell)
    }

    /// Parameter box of a cell.
    pub fn cell_bounds(&self, cell: &Cell) -> [(f64, f64); MAX_DIM] {
        let mut out = [(0.0, 0.0); MAX_DIM];
        let l = cell.level();
        for a in 0..self.dim {
            let base = (cell.idx[a] >> l) as usize;
            let sub = cell.idx[a] & ((1u32 << l) - 1);
            let (lo, hi) = (self.base_breaks[a][base], self.base_breaks[a][base + 1]);
            let w = (hi - lo) / (1u64 << l) as f64;
            out[a] = (lo + w * sub as f64, lo + w * (sub + 1) as f64);
        }
        out
    }

    /// Active cell containing a parameter point (right end points belong to the last cell).
    pub fn leaf_containing(&self, xi: &[f64]) -> Cell {
        let mut idx = [0u32; MAX_DIM];
        for a in 0..self.dim {
            let b = &self.base_breaks[a];
            let e = b[1..b.len() - 1].partition_point(|&t| t <= xi[a]);
            idx[a] = e as u32;
        }
        let mut cell = Cell::new(0, idx);
        while !self.is_active(&cell) {
            let bounds = self.cell_bounds(&cell);
            let mut child = [0u32; MAX_DIM];
            for a in 0..self.dim {
                let mid = 0.5 * (bounds[a].0 + bounds[a].1);
                child[a] = 2 * cell.idx[a] + u32::from(xi[a] >= mid);
            }
            cell = Cell::new(cell.level() + 1, child);
            debug_assert!(self.is_present(&cell));
        }
        cell
    }

    /// Active cell of the mesh that contains `cell` (which may be finer).
    pub fn active_ancestor(&self, cell: &Cell) -> Option<Cell> {
        let mut c = *cell;
        loop {
            if self.is_active(&c) {
                return Some(c);
            }
            c = c.parent()?;
        }
    }

    fn split(&mut self, cell: &Cell) {
        let l = cell.level();
        self.active[l].remove(&order_key(&cell.idx));
        if self.present.len() <= l + 1 {
            self.present.push(HashSet::new());
            self.active.push(BTreeSet::new());
        }
        for child in cell.children(self.dim).collect::<Vec<_>>() {
            self.present[l + 1].insert(child.key());
            self.active[l + 1].insert(order_key(&child.idx));
        }
    }

    /// Split each marked active cell into its children, then refine further
    /// until the mesh is admissible of class 2.
    ///
    /// Marks at or beyond the maximum level are dropped with a warning.
    pub fn refine_marked(&self, marked: &[Cell]) -> Self {
        let mut mesh = self.clone();
        let mut skipped = 0usize;
        for cell in marked {
            if !mesh.is_active(cell) {
                continue;
            }
            if cell.level() >= self.max_level {
                skipped += 1;
                continue;
            }
            mesh.split(cell);
        }
        if skipped > 0 {
            log::warn!("{skipped} marked cells at maximum level {} not refined", self.max_level);
        }
        mesh.close_admissible();
        mesh
    }

    /// Active cells whose support extension meets an active cell two or more levels finer.
    pub fn admissibility_violations(&self) -> Vec<Cell> {
        // grandparents of every present cell at level l + 2, per level l
        let levels = self.present.len();
        let mut deep: Vec<HashSet<u64>> = vec![HashSet::new(); levels];
        for l in 2..levels {
            for &k in &self.present[l] {
                let idx = unpack(k).map(|i| i >> 2);
                deep[l - 2].insert(pack(&idx));
            }
        }
        let mut out = Vec::new();
        for cell in self.active_cells() {
            let l = cell.level();
            if l >= levels || deep[l].is_empty() {
                continue;
            }
            let ranges: Vec<(u32, u32)> = (0..self.dim)
                .map(|a| {
                    let n = self.cells_per_dir(l, a) as u32;
                    let r = self.ext[a] as u32;
                    (cell.idx[a].saturating_sub(r), (cell.idx[a] + r).min(n - 1))
                })
                .collect();
            let hit = box_indices(&ranges).any(|idx| deep[l].contains(&pack(&idx)));
            if hit {
                out.push(cell);
            }
        }
        out
    }

    fn close_admissible(&mut self) {
        loop {
            let bad = self.admissibility_violations();
            if bad.is_empty() {
                break;
            }
            for c in &bad {
                self.split(c);
            }
        }
    }

    /// Deepest active level below (or at) each present cell.
    fn depth_table(&self) -> Vec<HashMap<u64, usize>> {
        let levels = self.present.len();
        let mut depth: Vec<HashMap<u64, usize>> = vec![HashMap::new(); levels];
        for l in (0..levels).rev() {
            for &k in &self.present[l] {
                let cell = Cell::new(l, unpack(k));
                let d = if self.is_active(&cell) {
                    l
                } else {
                    cell.children(self.dim)
                        .map(|c| depth[l + 1][&c.key()])
                        .max()
                        .unwrap_or(l)
                };
                depth[l].insert(k, d);
            }
        }
        depth
    }

    /// Coarser mesh in which every active cell is `levels` levels above the
    /// active cells it covers (clamped at level 0).
    pub fn coarsened(&self, levels: usize) -> Self {
        if levels == 0 {
            return self.clone();
        }
        let depth = self.depth_table();
        let mut out = Self::new(self.base_breaks.clone(), &self.ext[..self.dim]).with_max_level(self.max_level);
        let mut frontier: Vec<Cell> = out.active_cells();
        while let Some(cell) = frontier.pop() {
            let l = cell.level();
            let d = depth[l][&cell.key()];
            if d >= l + 1 + levels {
                out.split(&cell);
                frontier.extend(cell.children(self.dim));
            }
        }
        out
    }

    /// Number of active cells per level.
    pub fn level_histogram(&self) -> Vec<usize> {
        self.active.iter().map(BTreeSet::len).collect()
    }
}

/// All multi-indices of a grid with `counts[a]` entries per direction.
pub(crate) fn grid_indices(counts: &[usize]) -> impl Iterator<Item = [u32; MAX_DIM]> + '_ {
    let total: usize = counts.iter().product();
    (0..total).map(move |mut k| {
        let mut idx = [0u32; MAX_DIM];
        for (a, &n) in counts.iter().enumerate() {
            idx[a] = (k % n) as u32;
            k /= n;
        }
        idx
    })
}

/// All multi-indices in an inclusive box.
pub(crate) fn box_indices(ranges: &[(u32, u32)]) -> impl Iterator<Item = [u32; MAX_DIM]> + '_ {
    let counts: Vec<usize> = ranges.iter().map(|r| (r.1 - r.0 + 1) as usize).collect();
    let total: usize = counts.iter().product();
    (0..total).map(move |mut k| {
        let mut idx = [0u32; MAX_DIM];
        for (a, &n) in counts.iter().enumerate() {
            idx[a] = ranges[a].0 + (k % n) as u32;
            k /= n;
        }
        idx
    })
}
