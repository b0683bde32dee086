//! Multiscale partition of unity.
//!
//! `χ_i` is the discrete `κ(·, T_{n-1})`-harmonic extension, cell by cell,
//! of the bilinear hat of coarse node `x_i` restricted to the cell edges.

use faer::linalg::solvers::Solve;
use faer::{Mat, Side};
use rayon::prelude::*;

use crate::coefficient::CoefficientField;
use crate::error::{Error, Result};
use crate::fem::{ElementMatrices, Stencil9};
use crate::grid::{all_neighborhoods, Mesh, Rect};

/// `χ_i` on the fine nodes of `ω_i` (or of a larger region after extension).
#[derive(Debug, Clone, PartialEq)]
pub struct Chi {
    pub center: (usize, usize),
    pub nbhd: usize,
    pub rect: Rect,
    pub values: Vec<f64>,
}

impl Chi {
    pub fn value(&self, i: usize, j: usize) -> f64 {
        if self.rect.contains(i, j) {
            self.values[self.rect.local(i, j)]
        } else {
            0.0
        }
    }

    /// Zero extension onto `rect ⊇ self.rect`.
    pub fn extend_to(&self, rect: Rect) -> Chi {
        assert!(rect.contains_rect(&self.rect), "extension target must contain the support");
        let values = rect.nodes().map(|(i, j)| self.value(i, j)).collect();
        Chi { rect, values, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOfUnity {
    pub slab: usize,
    /// One function per interior coarse node, ordered by neighborhood id.
    pub functions: Vec<Chi>,
}

impl PartitionOfUnity {
    /// `Σ_i χ_i` at every fine node.
    pub fn sum(&self, mesh: &Mesh) -> Vec<f64> {
        let mut s = vec![0.0; mesh.n_nodes()];
        for chi in &self.functions {
            for (k, (i, j)) in chi.rect.nodes().enumerate() {
                s[mesh.node_index(i, j)] += chi.values[k];
            }
        }
        s
    }
}

/// Harmonic extensions of the four corner hats of coarse cell `(ci, cj)`,
/// in corner order `(0,0)`, `(1,0)`, `(1,1)`, `(0,1)`.
fn cell_corner_functions(mesh: &Mesh, kappa_step: &[f64], ci: usize, cj: usize) -> Result<[Vec<f64>; 4]> {
    let rect = mesh.coarse_cell_rect(ci, cj);
    let elem = ElementMatrices::new(mesh.hx, mesh.hy);
    let cells: Vec<usize> = rect.cells().map(|(i, j)| mesh.cell_index(i, j)).collect();
    let k = Stencil9::assemble(rect, &elem.stiffness, |c| kappa_step[cells[c]]);
    let n = rect.n_nodes();
    let mut free = vec![None; n];
    let mut n_free = 0;
    for (l, (i, j)) in rect.nodes().enumerate() {
        if !rect.on_boundary(i, j) {
            free[l] = Some(n_free);
            n_free += 1;
        }
    }
    let (w, h) = ((rect.width() - 1) as f64, (rect.height() - 1) as f64);
    let hats: [Vec<f64>; 4] = std::array::from_fn(|c| {
        rect.nodes()
            .map(|(i, j)| {
                let x = (i - rect.i0) as f64 / w;
                let y = (j - rect.j0) as f64 / h;
                let fx = if c == 0 || c == 3 { 1.0 - x } else { x };
                let fy = if c < 2 { 1.0 - y } else { y };
                fx * fy
            })
            .collect()
    });
    if n_free == 0 {
        return Ok(hats);
    }
    let mut a = Mat::<f64>::zeros(n_free, n_free);
    let mut rhs = Mat::<f64>::zeros(n_free, 4);
    for (r, c, v) in k.entries() {
        let Some(fr) = free[r] else { continue };
        match free[c] {
            Some(fc) => a[(fr, fc)] += v,
            None => {
                for (corner, hat) in hats.iter().enumerate() {
                    rhs[(fr, corner)] -= v * hat[c];
                }
            }
        }
    }
    let llt = a.llt(Side::Lower).map_err(|_| Error::Singular {
        context: format!("partition of unity, coarse cell ({ci}, {cj})"),
    })?;
    llt.solve_in_place(rhs.as_mut());
    let mut out = hats;
    for (corner, vals) in out.iter_mut().enumerate() {
        for l in 0..n {
            if let Some(f) = free[l] {
                vals[l] = rhs[(f, corner)];
            }
        }
    }
    Ok(out)
}

fn chi_from_cells(
    mesh: &Mesh,
    ci: usize,
    cj: usize,
    corner_of: impl Fn(usize, usize) -> Result<[Vec<f64>; 4]>,
) -> Result<Chi> {
    let nbhd = mesh.neighborhood(ci, cj)?;
    let mut values = vec![0.0; nbhd.rect.n_nodes()];
    // The coarse node is corner (1,1), (0,1), (0,0), (1,0) of the cells to its
    // lower-left, lower-right, upper-right, upper-left.
    for (dci, dcj, corner) in [(0, 0, 2), (1, 0, 3), (1, 1, 0), (0, 1, 1)] {
        let (kci, kcj) = (ci + dci - 1, cj + dcj - 1);
        let rect = mesh.coarse_cell_rect(kci, kcj);
        let f = &corner_of(kci, kcj)?[corner];
        for (l, (i, j)) in rect.nodes().enumerate() {
            values[nbhd.rect.local(i, j)] = f[l];
        }
    }
    Ok(Chi { center: (ci, cj), nbhd: nbhd.id, rect: nbhd.rect, values })
}

/// `χ_i` for one interior coarse node, using `κ` at the first fine step of `slab`.
pub fn compute_chi(mesh: &Mesh, kappa: &CoefficientField, slab: usize, ci: usize, cj: usize) -> Result<Chi> {
    kappa.check_mesh(mesh)?;
    let step = kappa.step(mesh.time.slab_first_level(slab));
    chi_from_cells(mesh, ci, cj, |a, b| cell_corner_functions(mesh, step, a, b))
}

/// All `χ_i` for `slab`; every coarse cell is solved once.
pub fn compute_partition(mesh: &Mesh, kappa: &CoefficientField, slab: usize) -> Result<PartitionOfUnity> {
    kappa.check_mesh(mesh)?;
    let step = kappa.step(mesh.time.slab_first_level(slab));
    let (ncx, ncy) = (mesh.spec.n_coarse_x, mesh.spec.n_coarse_y);
    let cells: Vec<[Vec<f64>; 4]> = (0..ncx * ncy)
        .into_par_iter()
        .map(|c| cell_corner_functions(mesh, step, c % ncx, c / ncx))
        .collect::<Result<_>>()?;
    let functions = all_neighborhoods(mesh)
        .iter()
        .map(|n| chi_from_cells(mesh, n.center.0, n.center.1, |a, b| Ok(cells[b * ncx + a].clone())))
        .collect::<Result<_>>()?;
    Ok(PartitionOfUnity { slab, functions })
}

/// `χ_i⁺`: each `χ_i` extended by zero onto the matching region of `regions`.
pub fn compute_chi_plus(chis: &PartitionOfUnity, regions: &[Rect]) -> Result<PartitionOfUnity> {
    if regions.len() != chis.functions.len() {
        return Err(Error::Dimension(format!(
            "{} regions for {} partition functions",
            regions.len(),
            chis.functions.len()
        )));
    }
    let functions = chis
        .functions
        .iter()
        .zip(regions)
        .map(|(chi, &r)| {
            if !r.contains_rect(&chi.rect) {
                return Err(Error::NotNested(format!("{:?} inside {:?}", chi.rect, r)));
            }
            Ok(chi.extend_to(r))
        })
        .collect::<Result<_>>()?;
    Ok(PartitionOfUnity { slab: chis.slab, functions })
}
