//! Bilinear-in-space, continuous-linear-in-time Galerkin discretization of
//! `∂_t u − div(κ ∇u) = f` on coarse time slabs coupled by upwind jumps.

mod form;
mod function;
mod stencil;
mod system;

use std::sync::Arc;

pub use form::SlabForm;
pub use function::SpaceTimeFunction;
pub use stencil::{ElementMatrices, Stencil9, CELL_OFFSETS};
pub use system::{LocalData, SlabSystem};

use crate::coefficient::CoefficientField;
use crate::error::{Error, Result};
use crate::grid::{Mesh, Rect};

/// Right-hand side `f(x, y, t)`.
#[derive(Clone)]
pub enum Source {
    Zero,
    Constant(f64),
    Function(Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>),
}

impl std::fmt::Debug for Source {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Source::Zero => write!(f, "Zero"),
            Source::Constant(c) => write!(f, "Constant({c})"),
            Source::Function(_) => write!(f, "Function(..)"),
        }
    }
}

impl Source {
    pub fn function(f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Source::Function(Arc::new(f))
    }

    /// Nodal values on `rect` at global levels `first_level ..= first_level + n_steps`,
    /// or `None` for a vanishing source.
    pub fn nodal(&self, mesh: &Mesh, rect: Rect, first_level: usize, n_steps: usize) -> Option<Vec<f64>> {
        let levels = first_level..=first_level + n_steps;
        match self {
            Source::Zero => None,
            Source::Constant(c) => Some(vec![*c; rect.n_nodes() * (n_steps + 1)]),
            Source::Function(f) => Some(
                levels
                    .flat_map(|k| {
                        let t = mesh.time.level_time(k);
                        rect.nodes()
                            .map(move |(i, j)| {
                                let (x, y) = mesh.node_coords(i, j);
                                f(x, y, t)
                            })
                            .collect::<Vec<_>>()
                    })
                    .collect(),
            ),
        }
    }
}

/// Everything that defines one parabolic problem on a mesh.
#[derive(Debug, Clone)]
pub struct Problem {
    pub mesh: Mesh,
    pub kappa: CoefficientField,
    pub source: Source,
    /// Initial state `β` at every fine node.
    pub initial: Vec<f64>,
}

impl Problem {
    pub fn new(mesh: Mesh, kappa: CoefficientField, source: Source, initial: Vec<f64>) -> Result<Self> {
        kappa.check_mesh(&mesh)?;
        if initial.len() != mesh.n_nodes() {
            return Err(Error::Dimension(format!(
                "initial state has {} values for {} nodes",
                initial.len(),
                mesh.n_nodes()
            )));
        }
        Ok(Self { mesh, kappa, source, initial })
    }

    /// `β(x, y) = sin(πx) sin(πy)` on the unit square (scaled to the domain).
    pub fn sine_initial(mesh: &Mesh) -> Vec<f64> {
        let pi = std::f64::consts::PI;
        mesh.domain_rect()
            .nodes()
            .map(|(i, j)| {
                let (x, y) = mesh.node_coords(i, j);
                (pi * x / mesh.spec.domain_x).sin() * (pi * y / mesh.spec.domain_y).sin()
            })
            .collect()
    }

    pub fn slab_form(&self, slab: usize) -> Result<SlabForm> {
        SlabForm::for_slab(&self.mesh, &self.kappa, slab)
    }

    pub fn slab_source(&self, slab: usize) -> Option<Vec<f64>> {
        let p = self.mesh.time.steps_per_slab();
        self.source.nodal(&self.mesh, self.mesh.domain_rect(), slab * p, p)
    }
}

/// `a_n(u, v)` for two functions on the form's rectangle and levels.
pub fn apply_form(form: &SlabForm, u: &SpaceTimeFunction, v: &SpaceTimeFunction) -> Result<f64> {
    if u.rect != form.rect || v.rect != form.rect || u.n_levels != form.n_levels() || v.n_levels != form.n_levels() {
        return Err(Error::Dimension("functions do not match the slab form".into()));
    }
    form.eval(&u.values, &v.values)
}

/// Load-vector representation of `R(v) = F(v) − a(u, v)` with incoming state `g`.
pub fn residual_functional(form: &SlabForm, u: &SpaceTimeFunction, f: Option<&[f64]>, g: &[f64]) -> Result<Vec<f64>> {
    if u.rect != form.rect || u.n_levels != form.n_levels() {
        return Err(Error::Dimension("function does not match the slab form".into()));
    }
    form.residual(&u.values, f, Some(g))
}

/// Sequential slab-by-slab fine solve with homogeneous Dirichlet data on ∂Ω.
/// Slab `n` receives slab `n − 1`'s final level as incoming state.
pub fn solve_fine(problem: &Problem) -> Result<Vec<SpaceTimeFunction>> {
    let mesh = &problem.mesh;
    let mut incoming = problem.initial.clone();
    let mut out = Vec::with_capacity(mesh.time.n_slabs());
    for slab in 0..mesh.time.n_slabs() {
        let form = problem.slab_form(slab)?;
        let (first, nl) = (form.first_level, form.n_levels());
        let system = SlabSystem::new(form, &format!("fine solve, slab {slab}"))?;
        let data = LocalData {
            dirichlet: None,
            initial: Some(incoming),
            source: problem.slab_source(slab),
        };
        let values = system.solve(&data)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular { context: format!("fine solve, slab {slab}") });
        }
        let u = SpaceTimeFunction::from_values(slab, mesh.domain_rect(), first, nl, values)?;
        incoming = u.last().to_vec();
        out.push(u);
    }
    Ok(out)
}

/// Solves the slab form on `rect × (first_level, first_level + n_steps)` with
/// Dirichlet data on the rectangle boundary at every level and incoming state
/// `initial` imposed through the jump term.
#[allow(clippy::too_many_arguments)]
pub fn solve_local(
    mesh: &Mesh,
    kappa: &CoefficientField,
    rect: Rect,
    first_level: usize,
    n_steps: usize,
    dirichlet: &[f64],
    initial: &[f64],
    source: &Source,
    slab: usize,
) -> Result<SpaceTimeFunction> {
    let form = SlabForm::new(mesh, kappa, rect, first_level, n_steps)?;
    let len = form.len();
    if dirichlet.len() != len || initial.len() != rect.n_nodes() {
        return Err(Error::Dimension(format!(
            "incomplete boundary data: got {} Dirichlet and {} initial values, need {} and {}",
            dirichlet.len(),
            initial.len(),
            len,
            rect.n_nodes()
        )));
    }
    let system = SlabSystem::new(form, "local solve")?;
    let values = system.solve(&LocalData {
        dirichlet: Some(dirichlet.to_vec()),
        initial: Some(initial.to_vec()),
        source: source.nodal(mesh, rect, first_level, n_steps),
    })?;
    SpaceTimeFunction::from_values(slab, rect, first_level, n_steps + 1, values)
}
