use crate::coefficient::CoefficientField;
use crate::error::{Error, Result};
use crate::fem::function::SpaceTimeFunction;
use crate::fem::stencil::{ElementMatrices, Stencil9};
use crate::grid::{Mesh, Rect};

/// The slab bilinear form on `rect × (t_first, t_last)`:
///
/// `a(u, v) = ∫∫ ∂_t u v + ∫∫ κ ∇u·∇v + ∫ u(t_first⁺) v(t_first⁺)`
///
/// for `u, v` bilinear in space and continuous piecewise linear in time.
/// With `κ` constant on each fine step every time integral is exact:
/// the `∂_t` term gives `±½ M` couplings between neighbouring levels and the
/// stiffness term gives `τ/3` (same level) and `τ/6` (neighbouring level)
/// weights on the step's stiffness matrix.
#[derive(Debug, Clone)]
pub struct SlabForm {
    pub rect: Rect,
    pub first_level: usize,
    pub n_steps: usize,
    pub tau: f64,
    pub elem: ElementMatrices,
    pub mass: Stencil9,
    pub stiffness: Vec<Stencil9>,
    /// `κ` per step on the cells of `rect` (local cell order).
    pub kappa_cells: Vec<Vec<f64>>,
}

impl SlabForm {
    /// Assembles the form over `n_steps` fine steps starting at global level
    /// `first_level`.
    pub fn new(mesh: &Mesh, kappa: &CoefficientField, rect: Rect, first_level: usize, n_steps: usize) -> Result<Self> {
        kappa.check_mesh(mesh)?;
        if first_level + n_steps > mesh.time.n_fine_steps() {
            return Err(Error::Dimension(format!(
                "levels {}..={} exceed the {} fine steps of the time partition",
                first_level,
                first_level + n_steps,
                mesh.time.n_fine_steps()
            )));
        }
        if !mesh.domain_rect().contains_rect(&rect) || rect.width() < 2 || rect.height() < 2 {
            return Err(Error::Dimension(format!("rectangle {rect:?} is not a 2D subregion of the mesh")));
        }
        let elem = ElementMatrices::new(mesh.hx, mesh.hy);
        let cells: Vec<usize> = rect.cells().map(|(i, j)| mesh.cell_index(i, j)).collect();
        let kappa_cells: Vec<Vec<f64>> = (0..n_steps)
            .map(|s| {
                let k = kappa.step(first_level + s);
                cells.iter().map(|&c| k[c]).collect()
            })
            .collect();
        let mass = Stencil9::assemble(rect, &elem.mass, |_| 1.0);
        let stiffness = kappa_cells
            .iter()
            .map(|k| Stencil9::assemble(rect, &elem.stiffness, |c| k[c]))
            .collect();
        Ok(Self {
            rect,
            first_level,
            n_steps,
            tau: mesh.time.tau(),
            elem,
            mass,
            stiffness,
            kappa_cells,
        })
    }

    /// The slab form of coarse interval `slab` on the whole domain.
    pub fn for_slab(mesh: &Mesh, kappa: &CoefficientField, slab: usize) -> Result<Self> {
        let p = mesh.time.steps_per_slab();
        Self::new(mesh, kappa, mesh.domain_rect(), slab * p, p)
    }

    pub fn n_levels(&self) -> usize {
        self.n_steps + 1
    }

    pub fn n_nodes(&self) -> usize {
        self.rect.n_nodes()
    }

    pub fn len(&self) -> usize {
        self.n_nodes() * self.n_levels()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.len() {
            return Err(Error::Dimension(format!("vector of length {} for a form of size {}", v.len(), self.len())));
        }
        Ok(())
    }

    /// Load-vector representation of `v ↦ a(u, v)` over every node and level.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.len(), "slab form: vector length mismatch");
        let n = self.n_nodes();
        let mut out = vec![0.0; self.len()];
        let mut diff = vec![0.0; n];
        for s in 0..self.n_steps {
            let (a, b) = (&u[s * n..(s + 1) * n], &u[(s + 1) * n..(s + 2) * n]);
            for k in 0..n {
                diff[k] = b[k] - a[k];
            }
            let (lo, hi) = out.split_at_mut((s + 1) * n);
            let row_a = &mut lo[s * n..];
            let row_b = &mut hi[..n];
            self.mass.apply_add(&diff, row_a, 0.5);
            self.mass.apply_add(&diff, row_b, 0.5);
            let k = &self.stiffness[s];
            k.apply_add(a, row_a, self.tau / 3.0);
            k.apply_add(b, row_a, self.tau / 6.0);
            k.apply_add(a, row_b, self.tau / 6.0);
            k.apply_add(b, row_b, self.tau / 3.0);
        }
        self.mass.apply_add(&u[..n], &mut out[..n], 1.0);
        out
    }

    /// `a(u, v)`.
    pub fn eval(&self, u: &[f64], v: &[f64]) -> Result<f64> {
        self.check_len(u)?;
        self.check_len(v)?;
        Ok(self.apply(u).iter().zip(v).map(|(a, b)| a * b).sum())
    }

    /// Load vector of `F(v) = ∫∫ f v + ∫ g v(t_first⁺)`, with `f` given by
    /// its nodal values per level (interpolated in space and time) and `g`
    /// by nodal values.
    pub fn load(&self, f: Option<&[f64]>, g: Option<&[f64]>) -> Vec<f64> {
        let n = self.n_nodes();
        let mut out = vec![0.0; self.len()];
        if let Some(f) = f {
            assert_eq!(f.len(), self.len(), "source length mismatch");
            for s in 0..self.n_steps {
                let (a, b) = (&f[s * n..(s + 1) * n], &f[(s + 1) * n..(s + 2) * n]);
                let (lo, hi) = out.split_at_mut((s + 1) * n);
                let row_a = &mut lo[s * n..];
                let row_b = &mut hi[..n];
                self.mass.apply_add(a, row_a, self.tau / 3.0);
                self.mass.apply_add(b, row_a, self.tau / 6.0);
                self.mass.apply_add(a, row_b, self.tau / 6.0);
                self.mass.apply_add(b, row_b, self.tau / 3.0);
            }
        }
        if let Some(g) = g {
            assert_eq!(g.len(), n, "initial data length mismatch");
            self.mass.apply_add(g, &mut out[..n], 1.0);
        }
        out
    }

    /// Load-vector representation of `R(v) = F(v) − a(u, v)`.
    pub fn residual(&self, u: &[f64], f: Option<&[f64]>, g: Option<&[f64]>) -> Result<Vec<f64>> {
        self.check_len(u)?;
        let mut r = self.load(f, g);
        for (ri, ai) in r.iter_mut().zip(self.apply(u)) {
            *ri -= ai;
        }
        Ok(r)
    }

    /// `∫∫ κ |∇u|²`, exact for piecewise-linear-in-time `u`.
    pub fn gradient_energy(&self, u: &[f64]) -> f64 {
        let n = self.n_nodes();
        (0..self.n_steps)
            .map(|s| {
                let (a, b) = (&u[s * n..(s + 1) * n], &u[(s + 1) * n..(s + 2) * n]);
                let k = &self.stiffness[s];
                self.tau / 3.0 * (k.quadratic(a, a) + k.quadratic(a, b) + k.quadratic(b, b))
            })
            .sum()
    }

    /// `∫ u(t_l)²` at local level `l`.
    pub fn level_mass(&self, u: &[f64], l: usize) -> f64 {
        let n = self.n_nodes();
        let x = &u[l * n..(l + 1) * n];
        self.mass.quadratic(x, x)
    }

    /// Applies the form to a function that lives on a sub-rectangle and
    /// vanishes on its boundary at every level. The image is supported on the
    /// same sub-rectangle and is returned there.
    pub fn apply_local(&self, phi: &SpaceTimeFunction) -> Vec<f64> {
        let sub = phi.rect;
        let local = self.sub_form(sub);
        local.apply(&phi.values)
    }

    /// The same form assembled only over the cells of `sub`.
    pub fn sub_form(&self, sub: Rect) -> SlabForm {
        assert!(self.rect.contains_rect(&sub), "sub-rectangle outside the form");
        let cw = self.rect.width() - 1;
        let cells: Vec<usize> = sub
            .cells()
            .map(|(i, j)| (j - self.rect.j0) * cw + (i - self.rect.i0))
            .collect();
        SlabForm {
            rect: sub,
            first_level: self.first_level,
            n_steps: self.n_steps,
            tau: self.tau,
            elem: self.elem,
            mass: Stencil9::assemble(sub, &self.elem.mass, |_| 1.0),
            stiffness: self
                .kappa_cells
                .iter()
                .map(|k| Stencil9::assemble(sub, &self.elem.stiffness, |c| k[cells[c]]))
                .collect(),
            kappa_cells: self.kappa_cells.iter().map(|k| cells.iter().map(|&c| k[c]).collect()).collect(),
        }
    }

    /// Mass-type stencil on the form's rectangle with the given per-step
    /// cellwise weights (indexed like the form's cells).
    pub fn weighted_mass(&self, weights: &[f64]) -> Stencil9 {
        Stencil9::assemble(self.rect, &self.elem.mass, |c| weights[c])
    }

    /// Global fine-cell indices of the form's cells, in local cell order.
    pub fn cell_indices(&self, mesh: &Mesh) -> Vec<usize> {
        self.rect.cells().map(|(i, j)| mesh.cell_index(i, j)).collect()
    }
}
