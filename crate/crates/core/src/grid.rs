//! Structured space-time grids.
//!
//! The spatial domain is a rectangle split into `n_coarse_x × n_coarse_y`
//! coarse cells, each refined into `fine_per_coarse²` square-ish fine cells.
//! Fine nodes are numbered row by row, `j * (nx + 1) + i`, and fine cells
//! `j * nx + i`. Time is split into `N` uniform coarse slabs of `p` fine
//! steps each. Slabs are indexed from zero.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub domain_x: f64,
    pub domain_y: f64,
    pub n_coarse_x: usize,
    pub n_coarse_y: usize,
    pub fine_per_coarse: usize,
}

impl GridSpec {
    pub fn unit_square(n_coarse: usize, fine_per_coarse: usize) -> Self {
        Self {
            domain_x: 1.0,
            domain_y: 1.0,
            n_coarse_x: n_coarse,
            n_coarse_y: n_coarse,
            fine_per_coarse,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePartition {
    pub t_end: f64,
    pub n_coarse_intervals: usize,
    pub fine_per_coarse_t: usize,
}

impl TimePartition {
    pub fn new(t_end: f64, n_coarse_intervals: usize, fine_per_coarse_t: usize) -> Self {
        Self {
            t_end,
            n_coarse_intervals,
            fine_per_coarse_t,
        }
    }

    pub fn n_slabs(&self) -> usize {
        self.n_coarse_intervals
    }

    pub fn steps_per_slab(&self) -> usize {
        self.fine_per_coarse_t
    }

    pub fn n_fine_steps(&self) -> usize {
        self.n_coarse_intervals * self.fine_per_coarse_t
    }

    pub fn tau(&self) -> f64 {
        self.t_end / self.n_fine_steps() as f64
    }

    /// Time of global fine level `k`.
    pub fn level_time(&self, k: usize) -> f64 {
        self.tau() * k as f64
    }

    /// Coarse endpoint `T_n`.
    pub fn coarse_time(&self, n: usize) -> f64 {
        self.level_time(n * self.fine_per_coarse_t)
    }

    /// Global index of the first fine level of `slab`.
    pub fn slab_first_level(&self, slab: usize) -> usize {
        slab * self.fine_per_coarse_t
    }
}

/// A rectangle of fine nodes `[i0, i1] × [j0, j1]` (inclusive).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Rect {
    pub i0: usize,
    pub i1: usize,
    pub j0: usize,
    pub j1: usize,
}

impl Rect {
    pub fn new(i0: usize, i1: usize, j0: usize, j1: usize) -> Self {
        debug_assert!(i0 <= i1 && j0 <= j1);
        Self { i0, i1, j0, j1 }
    }

    pub fn width(&self) -> usize {
        self.i1 - self.i0 + 1
    }

    pub fn height(&self) -> usize {
        self.j1 - self.j0 + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.width() * self.height()
    }

    pub fn n_cells(&self) -> usize {
        (self.width() - 1) * (self.height() - 1)
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.i0 && i <= self.i1 && j >= self.j0 && j <= self.j1
    }

    pub fn contains_rect(&self, other: &Rect) -> bool {
        self.contains(other.i0, other.j0) && self.contains(other.i1, other.j1)
    }

    pub fn on_boundary(&self, i: usize, j: usize) -> bool {
        i == self.i0 || i == self.i1 || j == self.j0 || j == self.j1
    }

    /// Local (row-major) index of global node `(i, j)`.
    pub fn local(&self, i: usize, j: usize) -> usize {
        (j - self.j0) * self.width() + (i - self.i0)
    }

    /// Global `(i, j)` of local node `l`.
    pub fn global(&self, l: usize) -> (usize, usize) {
        (self.i0 + l % self.width(), self.j0 + l / self.width())
    }

    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let i0 = self.i0.max(other.i0);
        let i1 = self.i1.min(other.i1);
        let j0 = self.j0.max(other.j0);
        let j1 = self.j1.min(other.j1);
        (i0 <= i1 && j0 <= j1).then(|| Rect::new(i0, i1, j0, j1))
    }

    /// True when the open interiors overlap (a shared edge does not count).
    pub fn interiors_overlap(&self, other: &Rect) -> bool {
        self.i0.max(other.i0) < self.i1.min(other.i1)
            && self.j0.max(other.j0) < self.j1.min(other.j1)
    }

    pub fn nodes(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.j0..=self.j1).flat_map(move |j| (self.i0..=self.i1).map(move |i| (i, j)))
    }

    /// Lower-left node `(i, j)` of every fine cell in the rectangle.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.j0..self.j1).flat_map(move |j| (self.i0..self.i1).map(move |i| (i, j)))
    }

    /// Local indices of nodes on the rectangle's boundary.
    pub fn boundary_locals(&self) -> Vec<usize> {
        self.nodes()
            .filter(|&(i, j)| self.on_boundary(i, j))
            .map(|(i, j)| self.local(i, j))
            .collect()
    }

    pub fn n_boundary_nodes(&self) -> usize {
        if self.width() == 1 || self.height() == 1 {
            self.n_nodes()
        } else {
            2 * (self.width() + self.height()) - 4
        }
    }

    /// Grow by `layers` nodes on every side, clipped to `bounds`.
    pub fn grown(&self, layers: usize, bounds: &Rect) -> Rect {
        Rect::new(
            self.i0.saturating_sub(layers).max(bounds.i0),
            (self.i1 + layers).min(bounds.i1),
            self.j0.saturating_sub(layers).max(bounds.j0),
            (self.j1 + layers).min(bounds.j1),
        )
    }
}

/// Node, cell and DOF lookups for a structured space-time mesh.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub spec: GridSpec,
    pub time: TimePartition,
    pub nx: usize,
    pub ny: usize,
    pub hx: f64,
    pub hy: f64,
}

/// Validates the grid and time partition and builds the mesh index.
pub fn build_mesh(spec: GridSpec, time: TimePartition) -> Result<Mesh> {
    if spec.n_coarse_x == 0 || spec.n_coarse_y == 0 || spec.fine_per_coarse == 0 {
        return Err(Error::InvalidGrid(format!(
            "cell counts must be positive, got {}x{} coarse with {} fine per coarse",
            spec.n_coarse_x, spec.n_coarse_y, spec.fine_per_coarse
        )));
    }
    if !(spec.domain_x > 0.0 && spec.domain_y > 0.0) {
        return Err(Error::InvalidGrid("domain extents must be positive".into()));
    }
    if time.n_coarse_intervals == 0 || time.fine_per_coarse_t == 0 {
        return Err(Error::InvalidGrid("time step counts must be positive".into()));
    }
    if !(time.t_end > 0.0) {
        return Err(Error::InvalidGrid("final time must be positive".into()));
    }
    let nx = spec.n_coarse_x * spec.fine_per_coarse;
    let ny = spec.n_coarse_y * spec.fine_per_coarse;
    Ok(Mesh {
        spec,
        time,
        nx,
        ny,
        hx: spec.domain_x / nx as f64,
        hy: spec.domain_y / ny as f64,
    })
}

impl Mesh {
    pub fn n_nodes(&self) -> usize {
        (self.nx + 1) * (self.ny + 1)
    }

    pub fn n_cells(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_index(&self, i: usize, j: usize) -> usize {
        j * (self.nx + 1) + i
    }

    pub fn cell_index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn node_coords(&self, i: usize, j: usize) -> (f64, f64) {
        (i as f64 * self.hx, j as f64 * self.hy)
    }

    pub fn cell_center(&self, i: usize, j: usize) -> (f64, f64) {
        ((i as f64 + 0.5) * self.hx, (j as f64 + 0.5) * self.hy)
    }

    pub fn domain_rect(&self) -> Rect {
        Rect::new(0, self.nx, 0, self.ny)
    }

    pub fn is_boundary_node(&self, i: usize, j: usize) -> bool {
        i == 0 || j == 0 || i == self.nx || j == self.ny
    }

    /// Mask over all fine nodes, true on ∂Ω.
    pub fn boundary_mask(&self) -> Vec<bool> {
        self.domain_rect()
            .nodes()
            .map(|(i, j)| self.is_boundary_node(i, j))
            .collect()
    }

    pub fn fpc(&self) -> usize {
        self.spec.fine_per_coarse
    }

    pub fn n_coarse_nodes(&self) -> usize {
        (self.spec.n_coarse_x + 1) * (self.spec.n_coarse_y + 1)
    }

    /// Fine node of coarse node `(ci, cj)`.
    pub fn coarse_node_fine(&self, ci: usize, cj: usize) -> (usize, usize) {
        (ci * self.fpc(), cj * self.fpc())
    }

    pub fn is_interior_coarse_node(&self, ci: usize, cj: usize) -> bool {
        ci > 0 && cj > 0 && ci < self.spec.n_coarse_x && cj < self.spec.n_coarse_y
    }

    /// Interior coarse nodes in lexicographic order `(ci, cj)` with `ci` fastest.
    pub fn interior_coarse_nodes(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for cj in 1..self.spec.n_coarse_y {
            for ci in 1..self.spec.n_coarse_x {
                out.push((ci, cj));
            }
        }
        out
    }

    pub fn coarse_cell_index(&self, ci: usize, cj: usize) -> usize {
        cj * self.spec.n_coarse_x + ci
    }

    /// Fine-node rectangle covered by coarse cell `(ci, cj)`.
    pub fn coarse_cell_rect(&self, ci: usize, cj: usize) -> Rect {
        let f = self.fpc();
        Rect::new(ci * f, (ci + 1) * f, cj * f, (cj + 1) * f)
    }

    /// Coarse cell containing fine cell `(i, j)`.
    pub fn coarse_cell_of_fine(&self, i: usize, j: usize) -> (usize, usize) {
        (i / self.fpc(), j / self.fpc())
    }

    pub fn neighborhood(&self, ci: usize, cj: usize) -> Result<Neighborhood> {
        neighborhood(self, ci, cj)
    }
}

/// Coarse neighborhood `ω_i`: the union of coarse cells sharing an interior
/// coarse node.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    pub center: (usize, usize),
    /// Flat index among the interior coarse nodes.
    pub id: usize,
    pub coarse_cells: Vec<usize>,
    pub rect: Rect,
}

impl Neighborhood {
    pub fn fine_nodes(&self, mesh: &Mesh) -> Vec<usize> {
        self.rect.nodes().map(|(i, j)| mesh.node_index(i, j)).collect()
    }

    pub fn boundary_fine_nodes(&self, mesh: &Mesh) -> Vec<usize> {
        self.rect
            .nodes()
            .filter(|&(i, j)| self.rect.on_boundary(i, j))
            .map(|(i, j)| mesh.node_index(i, j))
            .collect()
    }
}

pub fn neighborhood(mesh: &Mesh, ci: usize, cj: usize) -> Result<Neighborhood> {
    if !mesh.is_interior_coarse_node(ci, cj) {
        return Err(Error::BoundaryCoarseNode(ci, cj));
    }
    let f = mesh.fpc();
    let coarse_cells = [(ci - 1, cj - 1), (ci, cj - 1), (ci - 1, cj), (ci, cj)]
        .iter()
        .map(|&(a, b)| mesh.coarse_cell_index(a, b))
        .collect();
    let id = (cj - 1) * (mesh.spec.n_coarse_x - 1) + (ci - 1);
    Ok(Neighborhood {
        center: (ci, cj),
        id,
        coarse_cells,
        rect: Rect::new((ci - 1) * f, (ci + 1) * f, (cj - 1) * f, (cj + 1) * f),
    })
}

/// All interior neighborhoods, ordered by [`Neighborhood::id`].
pub fn all_neighborhoods(mesh: &Mesh) -> Vec<Neighborhood> {
    mesh.interior_coarse_nodes()
        .into_iter()
        .map(|(ci, cj)| neighborhood(mesh, ci, cj).expect("interior node"))
        .collect()
}

/// Oversampled space-time region `ω⁺ × (T*_{n-1}, T_n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OversampledRegion {
    pub base: Neighborhood,
    pub slab: usize,
    /// Requested layers and extension.
    pub space_layers: usize,
    pub time_extension: usize,
    pub rect: Rect,
    /// Global fine level of `T*_{n-1}`.
    pub initial_level: usize,
    /// Fine steps actually added on the left after clipping at `t = 0`.
    pub applied_time_extension: usize,
    pub space_clipped: bool,
    pub time_clipped: bool,
}

impl OversampledRegion {
    pub fn fine_nodes(&self, mesh: &Mesh) -> Vec<usize> {
        self.rect.nodes().map(|(i, j)| mesh.node_index(i, j)).collect()
    }

    pub fn boundary_fine_nodes(&self, mesh: &Mesh) -> Vec<usize> {
        self.rect
            .nodes()
            .filter(|&(i, j)| self.rect.on_boundary(i, j))
            .map(|(i, j)| mesh.node_index(i, j))
            .collect()
    }

    /// Number of fine steps in `(T*_{n-1}, T_n)`.
    pub fn n_steps(&self, mesh: &Mesh) -> usize {
        mesh.time.steps_per_slab() + self.applied_time_extension
    }
}

pub fn oversample(
    mesh: &Mesh,
    nbhd: &Neighborhood,
    space_layers: usize,
    time_extension: usize,
    slab: usize,
) -> Result<OversampledRegion> {
    if slab >= mesh.time.n_slabs() {
        return Err(Error::InvalidParameter(format!(
            "slab {slab} out of range 0..{}",
            mesh.time.n_slabs()
        )));
    }
    let domain = mesh.domain_rect();
    let rect = nbhd.rect.grown(space_layers, &domain);
    let space_clipped = nbhd.rect.i0 < space_layers
        || nbhd.rect.j0 < space_layers
        || nbhd.rect.i1 + space_layers > domain.i1
        || nbhd.rect.j1 + space_layers > domain.j1;
    let first = mesh.time.slab_first_level(slab);
    let applied = time_extension.min(first);
    Ok(OversampledRegion {
        base: nbhd.clone(),
        slab,
        space_layers,
        time_extension,
        rect,
        initial_level: first - applied,
        applied_time_extension: applied,
        space_clipped,
        time_clipped: applied < time_extension,
    })
}

/// Splits the interior coarse nodes into parity classes `(ci mod 2, cj mod 2)`.
/// Neighborhoods within one class have pairwise disjoint interiors.
pub fn nonoverlapping_groups(mesh: &Mesh) -> Vec<Vec<usize>> {
    let nodes = mesh.interior_coarse_nodes();
    let mut groups = Vec::new();
    for (pi, pj) in [(1, 1), (0, 1), (1, 0), (0, 0)] {
        let g: Vec<usize> = nodes
            .iter()
            .enumerate()
            .filter(|(_, &(ci, cj))| ci % 2 == pi && cj % 2 == pj)
            .map(|(k, _)| k)
            .collect();
        if !g.is_empty() {
            groups.push(g);
        }
    }
    groups
}
