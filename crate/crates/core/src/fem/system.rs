use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{Error, Result};
use crate::fem::form::SlabForm;

/// A slab form with Dirichlet conditions on the boundary of its rectangle
/// at every level, eliminated and factorized once for many right-hand sides.
///
/// With a weak initial face the unknowns are the interior nodes at every
/// level, the first level being tied to the incoming state through the jump
/// term. With a strong initial face the whole first level is Dirichlet data
/// and only the later levels are unknown.
/// Width of the right-hand-side blocks in batched solves.
const BATCH: usize = 8;

pub struct SlabSystem {
    pub form: SlabForm,
    /// Unknown index of each node of the rectangle, `None` on its boundary.
    free_index: Vec<Option<usize>>,
    n_free: usize,
    /// First level carrying unknowns: 0 (weak initial face) or 1 (strong).
    first_free_level: usize,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
}

/// Dirichlet and initial data for one local solve.
#[derive(Debug, Clone, Default)]
pub struct LocalData {
    /// Values at every node and level; only boundary entries are read.
    pub dirichlet: Option<Vec<f64>>,
    /// Incoming state at the first level, tested through the jump term.
    pub initial: Option<Vec<f64>>,
    /// Nodal source values per level.
    pub source: Option<Vec<f64>>,
}

impl SlabSystem {
    /// Initial state imposed weakly through the jump term.
    pub fn new(form: SlabForm, context: &str) -> Result<Self> {
        Self::build(form, context, 0)
    }

    /// Values on the whole first level prescribed as Dirichlet data.
    pub fn with_initial_face(form: SlabForm, context: &str) -> Result<Self> {
        Self::build(form, context, 1)
    }

    fn build(form: SlabForm, context: &str, first_free_level: usize) -> Result<Self> {
        let rect = form.rect;
        let mut free_index = vec![None; rect.n_nodes()];
        let mut n_free = 0;
        for (k, (i, j)) in rect.nodes().enumerate() {
            if !rect.on_boundary(i, j) {
                free_index[k] = Some(n_free);
                n_free += 1;
            }
        }
        if n_free == 0 {
            return Err(Error::Dimension(format!("{context}: region has no interior nodes")));
        }
        let nl = form.n_levels();
        let nu = nl - first_free_level;
        let dof = |node: usize, l: usize| {
            if l < first_free_level {
                None
            } else {
                free_index[node].map(|f| f * nu + l - first_free_level)
            }
        };
        let mut trips = Vec::with_capacity(n_free * nl * 27);
        let half = 0.5;
        let tau = form.tau;
        let mass: Vec<_> = form.mass.entries().collect();
        let mut push = |r: Option<usize>, c: Option<usize>, v: f64| {
            if let (Some(r), Some(c)) = (r, c) {
                if v != 0.0 {
                    trips.push(Triplet::new(r, c, v));
                }
            }
        };
        // Duplicate (row, col) triplets are summed on assembly.
        let n_steps = form.n_steps;
        let stiff: Vec<Vec<(usize, usize, f64)>> = form.stiffness.iter().map(|s| s.entries().collect()).collect();
        // Mass part: ∂t term and the jump at the first level.
        for &(r, c, m) in &mass {
            for l in 0..nl {
                // Row level l gets -½M from the step to the right (l, l+1)
                // and +½M from the step to the left (l-1, l) on the diagonal.
                let mut diag = 0.0;
                if l < n_steps {
                    diag -= half * m;
                    push(dof(r, l), dof(c, l + 1), half * m);
                }
                if l > 0 {
                    diag += half * m;
                    push(dof(r, l), dof(c, l - 1), -half * m);
                }
                if l == 0 {
                    diag += m;
                }
                push(dof(r, l), dof(c, l), diag);
            }
        }
        for (s, entries) in stiff.iter().enumerate() {
            for &(r, c, k) in entries {
                push(dof(r, s), dof(c, s), tau / 3.0 * k);
                push(dof(r, s), dof(c, s + 1), tau / 6.0 * k);
                push(dof(r, s + 1), dof(c, s), tau / 6.0 * k);
                push(dof(r, s + 1), dof(c, s + 1), tau / 3.0 * k);
            }
        }
        let n = n_free * nu;
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trips)
            .map_err(|e| Error::Dimension(format!("{context}: sparse assembly failed: {e:?}")))?;
        let lu = mat.sp_lu().map_err(|_| Error::Singular { context: context.to_string() })?;
        Ok(Self { form, free_index, n_free, first_free_level, lu })
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_free * (self.form.n_levels() - self.first_free_level)
    }

    fn gather(&self, full: &[f64], out: &mut [f64]) {
        let (n, nl, l0) = (self.form.n_nodes(), self.form.n_levels(), self.first_free_level);
        for l in l0..nl {
            for node in 0..n {
                if let Some(f) = self.free_index[node] {
                    out[f * (nl - l0) + l - l0] = full[l * n + node];
                }
            }
        }
    }

    fn scatter(&self, x: &[f64], full: &mut [f64]) {
        let (n, nl, l0) = (self.form.n_nodes(), self.form.n_levels(), self.first_free_level);
        for l in l0..nl {
            for node in 0..n {
                if let Some(f) = self.free_index[node] {
                    full[l * n + node] = x[f * (nl - l0) + l - l0];
                }
            }
        }
    }

    /// Full-length vector holding the Dirichlet values on prescribed nodes
    /// and zeros elsewhere.
    fn lift(&self, dirichlet: &[f64]) -> Vec<f64> {
        let n = self.form.n_nodes();
        let mut lift = vec![0.0; self.form.len()];
        for l in 0..self.form.n_levels() {
            for node in 0..n {
                if l < self.first_free_level || self.free_index[node].is_none() {
                    lift[l * n + node] = dirichlet[l * n + node];
                }
            }
        }
        lift
    }

    fn check(&self, data: &LocalData) -> Result<()> {
        let (n, len) = (self.form.n_nodes(), self.form.len());
        if data.dirichlet.as_ref().is_some_and(|d| d.len() != len) {
            return Err(Error::Dimension(format!("Dirichlet data must cover {n} nodes at every level")));
        }
        if data.initial.as_ref().is_some_and(|g| g.len() != n) {
            return Err(Error::Dimension(format!("initial data must cover all {n} nodes")));
        }
        if data.source.as_ref().is_some_and(|f| f.len() != len) {
            return Err(Error::Dimension("source must cover every node and level".into()));
        }
        Ok(())
    }

    /// Solves for several data sets at once; returns full nodal vectors.
    ///
    /// Right-hand sides go through the factorization in fixed-width blocks
    /// aligned to their position, so each result is bitwise independent of
    /// how many data sets are passed.
    pub fn solve_batch(&self, data: &[LocalData]) -> Result<Vec<Vec<f64>>> {
        for d in data {
            self.check(d)?;
        }
        let m = self.n_unknowns();
        let mut out = Vec::with_capacity(data.len());
        let mut buf = vec![0.0; m];
        for chunk in data.chunks(BATCH) {
            let mut rhs = Mat::<f64>::zeros(m, BATCH);
            let mut lifts = Vec::with_capacity(chunk.len());
            for (c, d) in chunk.iter().enumerate() {
                let mut load = self.form.load(d.source.as_deref(), d.initial.as_deref());
                let lift = d.dirichlet.as_deref().map(|dir| self.lift(dir));
                if let Some(lift) = &lift {
                    for (li, ai) in load.iter_mut().zip(self.form.apply(lift)) {
                        *li -= ai;
                    }
                }
                self.gather(&load, &mut buf);
                for (r, v) in buf.iter().enumerate() {
                    rhs[(r, c)] = *v;
                }
                lifts.push(lift);
            }
            self.solve_in_place(&mut rhs);
            for (c, lift) in lifts.into_iter().enumerate() {
                let mut full = lift.unwrap_or_else(|| vec![0.0; self.form.len()]);
                let col: Vec<f64> = (0..m).map(|r| rhs[(r, c)]).collect();
                self.scatter(&col, &mut full);
                out.push(full);
            }
        }
        Ok(out)
    }

    pub fn solve(&self, data: &LocalData) -> Result<Vec<f64>> {
        Ok(self.solve_batch(std::slice::from_ref(data))?.remove(0))
    }

    /// Solves `a(u, v) = ℓ(v)` for all interior test functions with zero
    /// boundary values, where `ℓ` is given as a full-length load vector.
    pub fn solve_load(&self, load: &[f64]) -> Result<Vec<f64>> {
        if load.len() != self.form.len() {
            return Err(Error::Dimension("load vector length mismatch".into()));
        }
        let m = self.n_unknowns();
        let mut buf = vec![0.0; m];
        self.gather(load, &mut buf);
        let mut rhs = Mat::<f64>::from_fn(m, BATCH, |r, c| if c == 0 { buf[r] } else { 0.0 });
        self.solve_in_place(&mut rhs);
        let col: Vec<f64> = (0..m).map(|r| rhs[(r, 0)]).collect();
        let mut full = vec![0.0; self.form.len()];
        self.scatter(&col, &mut full);
        Ok(full)
    }

    fn solve_in_place(&self, rhs: &mut Mat<f64>) {
        self.lu.solve_in_place(rhs.as_mut());
    }

    /// Residual `ℓ − A u` on the interior unknowns, for checking solves.
    pub fn interior_residual(&self, u: &[f64], data: &LocalData) -> Vec<f64> {
        let mut r = self.form.load(data.source.as_deref(), data.initial.as_deref());
        for (ri, ai) in r.iter_mut().zip(self.form.apply(u)) {
            *ri -= ai;
        }
        let mut out = vec![0.0; self.n_unknowns()];
        self.gather(&r, &mut out);
        out
    }
}
