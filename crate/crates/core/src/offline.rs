//! Offline stage: local spectral reduction of snapshot spaces, the
//! `χ`-weighted offline basis and the sequential coarse slab solve.

use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatRef, Side};
use rayon::prelude::*;

use crate::coefficient::{weighted_kappa_tilde, CoefficientField, KappaTilde};
use crate::error::{Error, Result};
use crate::fem::{Problem, SlabForm, SpaceTimeFunction, Stencil9};
use crate::grid::{all_neighborhoods, oversample, Mesh, Neighborhood, Rect};
use crate::pou::{compute_partition, Chi, PartitionOfUnity};
use crate::snapshot::{full_snapshot_count, generate_full, snapshot_ratio, RegionSolver, SnapshotSet};

/// Oversampling and reduction parameters shared by all neighborhoods.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OfflineParams {
    /// Offline basis functions per neighborhood.
    pub l: usize,
    /// Buffer number: extra randomized snapshots beyond `l`.
    pub p_bf: usize,
    /// Fine-cell layers added around each neighborhood.
    pub space_layers: usize,
    /// Fine steps added before each slab.
    pub time_extension: usize,
    pub seed: u64,
}

impl OfflineParams {
    /// Defaults for a mesh: one coarse layer and two fine steps of oversampling.
    pub fn new(mesh: &Mesh, l: usize, p_bf: usize, seed: u64) -> Self {
        Self { l, p_bf, space_layers: mesh.fpc(), time_extension: 2, seed }
    }

    pub fn n_snapshots(&self) -> usize {
        self.l + self.p_bf
    }
}

/// The forms of the local spectral problem on `ω⁺ × (T_{n-1}, T_n)`:
///
/// `A(φ, v) = ½ ∫ φ(T_n) v(T_n) + ½ ∫ φ(T_{n-1}) v(T_{n-1}) + ∫∫ κ ∇φ·∇v`,
/// `S(φ, v) = ∫ φ(T_{n-1}) v(T_{n-1}) + ∫∫ κ̃⁺ φ v`.
pub struct SpectralOperator {
    pub form: SlabForm,
    pub tilde: Vec<Stencil9>,
}

impl SpectralOperator {
    pub fn new(mesh: &Mesh, kappa: &CoefficientField, tilde: &KappaTilde, rect: Rect, slab: usize) -> Result<Self> {
        let p = mesh.time.steps_per_slab();
        let first = mesh.time.slab_first_level(slab);
        let form = SlabForm::new(mesh, kappa, rect, first, p)?;
        let cells = form.cell_indices(mesh);
        let tilde = (0..p)
            .map(|s| {
                let w = tilde.step(first + s);
                Stencil9::assemble(rect, &form.elem.mass, |c| w[cells[c]])
            })
            .collect();
        Ok(Self { form, tilde })
    }

    fn time_weighted(&self, ops: &[Stencil9], u: &[f64], out: &mut [f64]) {
        let n = self.form.n_nodes();
        let tau = self.form.tau;
        for (s, op) in ops.iter().enumerate() {
            let (a, b) = (&u[s * n..(s + 1) * n], &u[(s + 1) * n..(s + 2) * n]);
            let (lo, hi) = out.split_at_mut((s + 1) * n);
            let (ra, rb) = (&mut lo[s * n..], &mut hi[..n]);
            op.apply_add(a, ra, tau / 3.0);
            op.apply_add(b, ra, tau / 6.0);
            op.apply_add(a, rb, tau / 6.0);
            op.apply_add(b, rb, tau / 3.0);
        }
    }

    pub fn apply_a(&self, u: &[f64]) -> Vec<f64> {
        let n = self.form.n_nodes();
        let p = self.form.n_steps;
        let mut out = vec![0.0; self.form.len()];
        self.time_weighted(&self.form.stiffness, u, &mut out);
        self.form.mass.apply_add(&u[..n], &mut out[..n], 0.5);
        self.form.mass.apply_add(&u[p * n..], &mut out[p * n..], 0.5);
        out
    }

    pub fn apply_s(&self, u: &[f64]) -> Vec<f64> {
        let n = self.form.n_nodes();
        let mut out = vec![0.0; self.form.len()];
        self.time_weighted(&self.tilde, u, &mut out);
        self.form.mass.apply_add(&u[..n], &mut out[..n], 1.0);
        out
    }
}

/// Dense symmetric `A` and `S` over a set of functions on the operator's region.
pub fn assemble_spectral_forms(op: &SpectralOperator, functions: &[SpaceTimeFunction]) -> Result<(Mat<f64>, Mat<f64>)> {
    let len = op.form.len();
    if let Some(f) = functions.iter().find(|f| f.values.len() != len) {
        return Err(Error::Dimension(format!("snapshot of length {} for a form of size {len}", f.values.len())));
    }
    let psi = Mat::<f64>::from_fn(len, functions.len(), |r, c| functions[c].values[r]);
    let image = |apply: &dyn Fn(&[f64]) -> Vec<f64>| {
        let cols: Vec<Vec<f64>> = functions.iter().map(|f| apply(&f.values)).collect();
        Mat::<f64>::from_fn(len, functions.len(), |r, c| cols[c][r])
    };
    let a = psi.transpose() * image(&|u| op.apply_a(u));
    let s = psi.transpose() * image(&|u| op.apply_s(u));
    Ok((symmetrize(a.as_ref()), symmetrize(s.as_ref())))
}

fn symmetrize(m: MatRef<'_, f64>) -> Mat<f64> {
    Mat::from_fn(m.nrows(), m.ncols(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
}

/// Generalized eigenpairs `A v = λ S v`, ascending, with `S`-orthonormal vectors.
#[derive(Debug, Clone)]
pub struct SpectralPair {
    pub values: Vec<f64>,
    /// One eigenvector per column.
    pub vectors: Mat<f64>,
}

/// Ridge added to `S` relative to its mean diagonal.
pub const SPECTRAL_RIDGE: f64 = 1e-12;

/// Solves the generalized eigenproblem through a Cholesky factor of the
/// ridge-regularized `S`. `nbhd` and `slab` only label errors.
pub fn solve_spectral(a: MatRef<'_, f64>, s: MatRef<'_, f64>, nbhd: usize, slab: usize) -> Result<SpectralPair> {
    let n = a.nrows();
    if a.ncols() != n || s.nrows() != n || s.ncols() != n {
        return Err(Error::Dimension("spectral forms must be square and of equal size".into()));
    }
    if n == 0 {
        return Ok(SpectralPair { values: Vec::new(), vectors: Mat::zeros(0, 0) });
    }
    let trace: f64 = (0..n).map(|i| s[(i, i)]).sum();
    let ridge = SPECTRAL_RIDGE * trace / n as f64;
    let sr = Mat::<f64>::from_fn(n, n, |i, j| s[(i, j)] + if i == j { ridge } else { 0.0 });
    let singular = || {
        let ev = sr.self_adjoint_eigenvalues(Side::Lower).unwrap_or_default();
        let (lo, hi) = ev.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v.abs())));
        Error::SingularSpectral { nbhd, slab, condition: if lo > 0.0 { hi / lo } else { f64::INFINITY } }
    };
    if !(trace > 0.0) {
        return Err(singular());
    }
    let llt = sr.llt(Side::Lower).map_err(|_| singular())?;
    let l = llt.L();
    // C = L⁻¹ A L⁻ᵀ
    let mut c = a.to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, c.as_mut(), faer::Par::Seq);
    let mut ct = c.transpose().to_owned();
    faer::linalg::triangular_solve::solve_lower_triangular_in_place(l, ct.as_mut(), faer::Par::Seq);
    let c = symmetrize(ct.as_ref());
    let eig = c.self_adjoint_eigen(Side::Lower).map_err(|_| singular())?;
    let values: Vec<f64> = (0..n).map(|i| eig.S()[i]).collect();
    let mut vectors = eig.U().to_owned();
    faer::linalg::triangular_solve::solve_upper_triangular_in_place(l.transpose(), vectors.as_mut(), faer::Par::Seq);
    // Fix the sign so that the largest-magnitude entry of each vector is positive.
    for j in 0..n {
        let (mut big, mut sign) = (0.0, 1.0);
        for i in 0..n {
            if vectors[(i, j)].abs() > big {
                big = vectors[(i, j)].abs();
                sign = vectors[(i, j)].signum();
            }
        }
        if sign < 0.0 {
            for i in 0..n {
                vectors[(i, j)] = -vectors[(i, j)];
            }
        }
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(singular());
    }
    Ok(SpectralPair { values, vectors })
}

/// Offline functions of one neighborhood on one slab.
#[derive(Debug, Clone)]
pub struct NbhdBasis {
    pub nbhd: usize,
    pub center: (usize, usize),
    pub rect: Rect,
    /// All eigenvalues of the local spectral problem, ascending.
    pub eigenvalues: Vec<f64>,
    pub functions: Vec<SpaceTimeFunction>,
}

/// `φ_j = χ · Σ_k V_kj ψ_k|_ω` for the first `l` eigenvectors.
///
/// `snapshots` holds the restrictions of the snapshots to `ω × (T_{n-1}, T_n)`,
/// one per column (level-major nodal order).
pub fn build_offline_basis(
    pair: &SpectralPair,
    snapshots: MatRef<'_, f64>,
    chi: &Chi,
    slab: usize,
    first_level: usize,
    l: usize,
) -> Result<Vec<SpaceTimeFunction>> {
    let n = chi.rect.n_nodes();
    let count = pair.values.len();
    if l > count || snapshots.ncols() < count || snapshots.nrows() % n != 0 {
        return Err(Error::Dimension(format!(
            "{l} basis functions from {count} eigenpairs and {} snapshots",
            snapshots.ncols()
        )));
    }
    let n_levels = snapshots.nrows() / n;
    let combos = snapshots.subcols(0, count) * pair.vectors.subcols(0, l);
    (0..l)
        .map(|j| {
            let values = (0..n_levels * n).map(|r| chi.values[r % n] * combos[(r, j)]).collect();
            SpaceTimeFunction::from_values(slab, chi.rect, first_level, n_levels, values)
        })
        .collect()
}

/// Spectral data of one neighborhood and slab: `A`, `S` over the snapshots
/// on `ω⁺` and the snapshots restricted to `ω × (T_{n-1}, T_n)`.
pub struct LocalSpectralData {
    pub nbhd: usize,
    pub slab: usize,
    pub a: Mat<f64>,
    pub s: Mat<f64>,
    pub restricted: Mat<f64>,
}

impl LocalSpectralData {
    pub fn count(&self) -> usize {
        self.a.nrows()
    }

    /// Eigenpairs using the first `count` snapshots.
    pub fn spectral(&self, count: usize) -> Result<SpectralPair> {
        if count > self.count() {
            return Err(Error::InvalidParameter(format!("{count} snapshots requested, {} available", self.count())));
        }
        solve_spectral(
            self.a.as_ref().submatrix(0, 0, count, count),
            self.s.as_ref().submatrix(0, 0, count, count),
            self.nbhd,
            self.slab,
        )
    }
}

/// Per-slab data shared by all neighborhoods: `χ` and `κ̃⁺`.
pub struct SlabSetup {
    pub pou: PartitionOfUnity,
    pub tilde: KappaTilde,
}

pub fn slab_setup(mesh: &Mesh, kappa: &CoefficientField, slab: usize) -> Result<SlabSetup> {
    let pou = compute_partition(mesh, kappa, slab)?;
    let tilde = weighted_kappa_tilde(mesh, kappa, &pou);
    Ok(SlabSetup { pou, tilde })
}

/// Randomized snapshots of every seed for one neighborhood and slab, sharing
/// one factorization of the oversampled region.
fn local_data_for_seeds(
    mesh: &Mesh,
    kappa: &CoefficientField,
    setup: &SlabSetup,
    nbhd: &Neighborhood,
    slab: usize,
    params: &OfflineParams,
    seeds: &[u64],
    count: usize,
) -> Result<Vec<LocalSpectralData>> {
    let region = oversample(mesh, nbhd, params.space_layers, params.time_extension, slab)?;
    let solver = RegionSolver::new(mesh, kappa, &region)?;
    let op = SpectralOperator::new(mesh, kappa, &setup.tilde, region.rect, slab)?;
    let first = mesh.time.slab_first_level(slab);
    let nl = mesh.time.steps_per_slab() + 1;
    seeds
        .iter()
        .map(|&seed| {
            let set = SnapshotSet {
                nbhd: nbhd.id,
                slab,
                rect: region.rect,
                first_level: region.initial_level,
                n_levels: solver.n_levels(),
                seed,
                generator_id: crate::snapshot::GENERATOR_ID.to_string(),
                functions: solver.randomized(seed, 0..count)?,
            };
            let on_plus = set.restrict(region.rect, first, nl)?;
            let (a, s) = assemble_spectral_forms(&op, &on_plus.functions)?;
            let on_omega = on_plus.restrict(nbhd.rect, first, nl)?;
            let len = nbhd.rect.n_nodes() * nl;
            let restricted = Mat::<f64>::from_fn(len, count, |r, c| on_omega.functions[c].values[r]);
            Ok(LocalSpectralData { nbhd: nbhd.id, slab, a, s, restricted })
        })
        .collect()
}

/// Snapshot data for several seeds and the largest snapshot count of a
/// sweep. Snapshot sets are prefix-nested in the count, so every smaller
/// `(L, p_bf)` reuses the leading blocks.
pub struct SnapshotBank {
    pub params: OfflineParams,
    pub seeds: Vec<u64>,
    pub count: usize,
    pub setups: Vec<SlabSetup>,
    pub neighborhoods: Vec<Neighborhood>,
    /// Indexed `[seed][slab][nbhd]`.
    pub data: Vec<Vec<Vec<LocalSpectralData>>>,
}

impl SnapshotBank {
    /// `params.l` and `params.p_bf` are ignored; `count` snapshots are drawn
    /// for every seed.
    pub fn build(mesh: &Mesh, kappa: &CoefficientField, params: OfflineParams, seeds: &[u64], count: usize) -> Result<Self> {
        if count == 0 || seeds.is_empty() {
            return Err(Error::InvalidParameter("snapshot bank needs a positive count and at least one seed".into()));
        }
        let neighborhoods = all_neighborhoods(mesh);
        let n_slabs = mesh.time.n_slabs();
        let setups: Vec<SlabSetup> = (0..n_slabs).map(|s| slab_setup(mesh, kappa, s)).collect::<Result<_>>()?;
        let tasks: Vec<(usize, usize)> = (0..n_slabs).flat_map(|s| (0..neighborhoods.len()).map(move |i| (s, i))).collect();
        let per_task: Vec<Vec<LocalSpectralData>> = tasks
            .par_iter()
            .map(|&(s, i)| local_data_for_seeds(mesh, kappa, &setups[s], &neighborhoods[i], s, &params, seeds, count))
            .collect::<Result<_>>()?;
        let mut data: Vec<Vec<Vec<LocalSpectralData>>> =
            (0..seeds.len()).map(|_| (0..n_slabs).map(|_| Vec::new()).collect()).collect();
        for ((s, _), task) in tasks.iter().zip(per_task) {
            for (k, d) in task.into_iter().enumerate() {
                data[k][*s].push(d);
            }
        }
        Ok(Self { params, seeds: seeds.to_vec(), count, setups, neighborhoods, data })
    }

    /// Offline basis for seed index `seed_idx` using the first `l + p_bf` snapshots.
    pub fn basis(&self, mesh: &Mesh, seed_idx: usize, l: usize, p_bf: usize) -> Result<OfflineBasis> {
        if l + p_bf > self.count {
            return Err(Error::InvalidParameter(format!(
                "L + p_bf = {} exceeds the {} banked snapshots",
                l + p_bf,
                self.count
            )));
        }
        let slabs = self.data[seed_idx]
            .iter()
            .enumerate()
            .map(|(slab, locals)| {
                locals
                    .par_iter()
                    .map(|d| {
                        let nbhd = &self.neighborhoods[d.nbhd];
                        let pair = d.spectral(l + p_bf)?;
                        let chi = &self.setups[slab].pou.functions[d.nbhd];
                        let first = mesh.time.slab_first_level(slab);
                        let functions = build_offline_basis(&pair, d.restricted.as_ref(), chi, slab, first, l)?;
                        Ok(NbhdBasis {
                            nbhd: d.nbhd,
                            center: nbhd.center,
                            rect: nbhd.rect,
                            eigenvalues: pair.values,
                            functions,
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(OfflineBasis {
            params: OfflineParams { l, p_bf, seed: self.seeds[seed_idx], ..self.params },
            slabs,
        })
    }
}

/// Offline basis for every slab and interior neighborhood.
#[derive(Debug, Clone)]
pub struct OfflineBasis {
    pub params: OfflineParams,
    /// Indexed `[slab][nbhd]`.
    pub slabs: Vec<Vec<NbhdBasis>>,
}

impl OfflineBasis {
    pub fn build(mesh: &Mesh, kappa: &CoefficientField, params: OfflineParams) -> Result<Self> {
        let count = params.n_snapshots();
        if count == 0 {
            return Err(Error::InvalidParameter("L + p_bf must be positive".into()));
        }
        SnapshotBank::build(mesh, kappa, params, &[params.seed], count)?.basis(mesh, 0, params.l, params.p_bf)
    }

    /// Offline basis from the full snapshot space of every `ω_i` without
    /// oversampling, keeping every eigenfunction (`p_bf = 0`). Regions with
    /// more than `cap` snapshots are rejected.
    pub fn from_full_snapshots(mesh: &Mesh, kappa: &CoefficientField, cap: usize) -> Result<Self> {
        let neighborhoods = all_neighborhoods(mesh);
        let n_slabs = mesh.time.n_slabs();
        let mut slabs = Vec::with_capacity(n_slabs);
        let mut count = 0;
        for slab in 0..n_slabs {
            let setup = slab_setup(mesh, kappa, slab)?;
            let first = mesh.time.slab_first_level(slab);
            let bases = neighborhoods
                .par_iter()
                .map(|nb| {
                    let set = generate_full(mesh, kappa, nb, slab, cap)?;
                    let op = SpectralOperator::new(mesh, kappa, &setup.tilde, nb.rect, slab)?;
                    let (a, s) = assemble_spectral_forms(&op, &set.functions)?;
                    let pair = solve_spectral(a.as_ref(), s.as_ref(), nb.id, slab)?;
                    let len = nb.rect.n_nodes() * set.n_levels;
                    let snaps = Mat::<f64>::from_fn(len, set.len(), |r, c| set.functions[c].values[r]);
                    let chi = &setup.pou.functions[nb.id];
                    let functions = build_offline_basis(&pair, snaps.as_ref(), chi, slab, first, set.len())?;
                    Ok(NbhdBasis { nbhd: nb.id, center: nb.center, rect: nb.rect, eigenvalues: pair.values, functions })
                })
                .collect::<Result<Vec<_>>>()?;
            count = count.max(bases.iter().map(|b| b.functions.len()).max().unwrap_or(0));
            slabs.push(bases);
        }
        let params = OfflineParams { l: count, p_bf: 0, space_layers: 0, time_extension: 0, seed: 0 };
        Ok(Self { params, slabs })
    }

    /// `dim(V_off)` on `slab`.
    pub fn dim(&self, slab: usize) -> usize {
        self.slabs[slab].iter().map(|b| b.functions.len()).sum()
    }

    /// `Λ* = min_i λ_{L_i+1}` on `slab`.
    pub fn lambda_star(&self, slab: usize) -> Result<f64> {
        crate::diagnostics::lambda_star(&self.slabs[slab])
    }

    /// Snapshot ratio `(L + p_bf) / full` for an interior neighborhood.
    pub fn snapshot_ratio(&self, mesh: &Mesh) -> Result<f64> {
        let rect = self.slabs[0].first().map(|b| b.rect).ok_or(Error::InvalidGrid("no interior coarse node".into()))?;
        snapshot_ratio(self.params.l, self.params.p_bf, full_snapshot_count(rect, mesh.time.steps_per_slab()))
    }

    pub fn space(&self, problem: &Problem, slab: usize) -> Result<SlabSpace> {
        let form = problem.slab_form(slab)?;
        let mut space = SlabSpace::new(&form, &self.slabs[slab]);
        for b in &self.slabs[slab] {
            for (j, phi) in b.functions.iter().enumerate() {
                space.push(b.nbhd, j, phi.clone())?;
            }
        }
        Ok(space)
    }
}

/// Coarse functions of one neighborhood on one slab together with their
/// images under the slab form.
#[derive(Debug, Clone)]
pub struct NbhdSpace {
    pub nbhd: usize,
    pub center: (usize, usize),
    pub rect: Rect,
    /// Local form on `ω_i`; images of functions vanishing on `∂ω_i` are exact.
    form: SlabForm,
    /// Index within the neighborhood (eigen index for offline functions,
    /// continuing past `L` for online ones).
    pub labels: Vec<usize>,
    pub functions: Vec<SpaceTimeFunction>,
    images: Vec<Vec<f64>>,
}

impl NbhdSpace {
    pub fn form(&self) -> &SlabForm {
        &self.form
    }
}

/// Coarse space of one slab.
#[derive(Debug, Clone)]
pub struct SlabSpace {
    pub slab: usize,
    pub first_level: usize,
    pub n_levels: usize,
    pub nbhds: Vec<NbhdSpace>,
}

impl SlabSpace {
    pub fn new(form: &SlabForm, bases: &[NbhdBasis]) -> Self {
        let nbhds = bases
            .iter()
            .map(|b| NbhdSpace {
                nbhd: b.nbhd,
                center: b.center,
                rect: b.rect,
                form: form.sub_form(b.rect),
                labels: Vec::new(),
                functions: Vec::new(),
                images: Vec::new(),
            })
            .collect();
        let slab = bases.first().map_or(0, |b| b.functions.first().map_or(0, |f| f.slab));
        Self { slab, first_level: form.first_level, n_levels: form.n_levels(), nbhds }
    }

    pub fn dim(&self) -> usize {
        self.nbhds.iter().map(|n| n.functions.len()).sum()
    }

    /// Adds a function supported in `ω_nbhd` (zero on its boundary).
    pub fn push(&mut self, nbhd: usize, label: usize, phi: SpaceTimeFunction) -> Result<()> {
        let ns = &mut self.nbhds[nbhd];
        if phi.rect != ns.rect || phi.first_level != self.first_level || phi.n_levels != self.n_levels {
            return Err(Error::Dimension(format!("function does not live on neighborhood {nbhd} of this slab")));
        }
        let image = ns.form.apply(&phi.values);
        self.slab = phi.slab;
        ns.labels.push(label);
        ns.functions.push(phi);
        ns.images.push(image);
        Ok(())
    }

    pub fn next_label(&self, nbhd: usize) -> usize {
        self.nbhds[nbhd].labels.iter().max().map_or(0, |m| m + 1)
    }
}

/// Galerkin solution on one slab.
#[derive(Debug, Clone)]
pub struct SlabSolution {
    pub slab: usize,
    /// Coefficient of every function, per neighborhood; dropped functions get 0.
    pub coefficients: Vec<Vec<f64>>,
    pub dim: usize,
    /// Functions kept after removing linear dependence.
    pub rank: usize,
    pub u: SpaceTimeFunction,
}

/// Coarse systems up to this size are solved densely with a rank-revealing
/// selection; larger ones use a sparse LU.
pub const DENSE_LIMIT: usize = 1000;

/// Largest system for which a failed sparse solve is retried densely.
const DENSE_FALLBACK_LIMIT: usize = 6000;

fn sparse_solve(trips: &[(usize, usize, f64)], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = rhs.len();
    let t: Vec<Triplet<usize, usize, f64>> = trips.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(m, m, &t)
        .map_err(|e| Error::Dimension(format!("coarse assembly: {e:?}")))?;
    let lu = mat.sp_lu().map_err(|_| Error::Singular { context: "coarse sparse LU".into() })?;
    let mut b = Mat::<f64>::from_fn(m, 1, |i, _| rhs[i]);
    lu.solve_in_place(b.as_mut());
    Ok((0..m).map(|i| b[(i, 0)]).collect())
}

fn residual_ok(trips: &[(usize, usize, f64)], rhs: &[f64], x: &[f64]) -> bool {
    if x.iter().any(|v| !v.is_finite()) {
        return false;
    }
    let mut r = rhs.to_vec();
    for &(i, j, v) in trips {
        r[i] -= v * x[j];
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    norm(&r) <= 1e-8 * norm(rhs).max(f64::MIN_POSITIVE)
}

/// Dense solve on a numerically independent subset of the functions.
/// Returns the kept global indices and their coefficients.
fn dense_solve(trips: &[(usize, usize, f64)], rhs: &[f64]) -> (Vec<usize>, Vec<f64>) {
    let m = rhs.len();
    let mut dense = Mat::<f64>::zeros(m, m);
    for &(r, c, v) in trips {
        dense[(r, c)] += v;
    }
    let sel = independent_columns(&dense);
    let sub = Mat::<f64>::from_fn(sel.len(), sel.len(), |i, j| dense[(sel[i], sel[j])]);
    let mut b = Mat::<f64>::from_fn(sel.len(), 1, |i, _| rhs[sel[i]]);
    sub.partial_piv_lu().solve_in_place(b.as_mut());
    let x = (0..sel.len()).map(|i| b[(i, 0)]).collect();
    (sel, x)
}

/// Relative tolerance for dropping a function during orthogonalization.
const DEPENDENCE_TOL: f64 = 1e-10;

/// Keeps the functions of one neighborhood that are linearly independent
/// (modified Gram–Schmidt in the nodal inner product, in order).
fn independent_within(ns: &NbhdSpace) -> Vec<usize> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::new();
    for (k, f) in ns.functions.iter().enumerate() {
        let norm0 = f.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            continue;
        }
        let mut v = f.values.clone();
        for q in &basis {
            let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > DEPENDENCE_TOL * norm0 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
            keep.push(k);
        }
    }
    keep
}

/// Rows of `f` (level-major on `f.rect`) that fall in `r`, for every level.
fn overlap_rows(rect: Rect, n_levels: usize, r: Rect) -> Vec<usize> {
    let n = rect.n_nodes();
    (0..n_levels)
        .flat_map(|l| r.nodes().map(move |(i, j)| l * n + rect.local(i, j)))
        .collect()
}

/// Coarse matrix in triplet form over the kept functions, and the load.
fn assemble_coarse(space: &SlabSpace, kept: &[Vec<usize>], load: &[f64], domain: Rect) -> (Vec<(usize, usize, f64)>, Vec<f64>) {
    let mut offset = Vec::with_capacity(kept.len());
    let mut dim = 0;
    for k in kept {
        offset.push(dim);
        dim += k.len();
    }
    let nl = space.n_levels;
    let blocks: Vec<Vec<(usize, usize, f64)>> = (0..space.nbhds.len())
        .into_par_iter()
        .map(|a| {
            let na = &space.nbhds[a];
            let mut out = Vec::new();
            if kept[a].is_empty() {
                return out;
            }
            for (b, nb) in space.nbhds.iter().enumerate() {
                if kept[b].is_empty() || !na.rect.interiors_overlap(&nb.rect) {
                    continue;
                }
                let r = na.rect.intersect(&nb.rect).expect("overlapping rectangles");
                let ra = overlap_rows(na.rect, nl, r);
                let rb = overlap_rows(nb.rect, nl, r);
                let pa = Mat::<f64>::from_fn(ra.len(), kept[a].len(), |i, c| na.functions[kept[a][c]].values[ra[i]]);
                let qb = Mat::<f64>::from_fn(rb.len(), kept[b].len(), |i, c| nb.images[kept[b][c]][rb[i]]);
                let block = pa.transpose() * qb;
                for i in 0..kept[a].len() {
                    for j in 0..kept[b].len() {
                        out.push((offset[a] + i, offset[b] + j, block[(i, j)]));
                    }
                }
            }
            out
        })
        .collect();
    let mut rhs = vec![0.0; dim];
    let nd = domain.n_nodes();
    for (a, na) in space.nbhds.iter().enumerate() {
        let n = na.rect.n_nodes();
        for (c, &k) in kept[a].iter().enumerate() {
            let f = &na.functions[k];
            let mut acc = 0.0;
            for l in 0..nl {
                for (idx, (i, j)) in na.rect.nodes().enumerate() {
                    acc += f.values[l * n + idx] * load[l * nd + domain.local(i, j)];
                }
            }
            rhs[offset[a] + c] = acc;
        }
    }
    (blocks.into_iter().flatten().collect(), rhs)
}

/// Greedy pivoted Cholesky of the symmetric part; returns the indices of a
/// numerically independent subset.
fn independent_columns(m: &Mat<f64>) -> Vec<usize> {
    let n = m.nrows();
    let g = Mat::<f64>::from_fn(n, n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]));
    let max_diag = (0..n).map(|i| g[(i, i)]).fold(0.0, f64::max);
    let tol = 1e-13 * max_diag;
    let mut d: Vec<f64> = (0..n).map(|i| g[(i, i)]).collect();
    let mut chosen = Vec::new();
    let mut active: Vec<bool> = vec![true; n];
    // Columns of the partial factor, stored densely.
    let mut factor: Vec<Vec<f64>> = Vec::new();
    loop {
        let Some((p, &dp)) = d
            .iter()
            .enumerate()
            .filter(|(i, _)| active[*i])
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        else {
            break;
        };
        if dp <= tol {
            break;
        }
        let s = dp.sqrt();
        let mut col: Vec<f64> = (0..n).map(|i| g[(i, p)]).collect();
        for f in &factor {
            let c = f[p];
            col.iter_mut().zip(f).for_each(|(v, fi)| *v -= c * fi);
        }
        col.iter_mut().for_each(|v| *v /= s);
        for i in 0..n {
            d[i] -= col[i] * col[i];
        }
        active[p] = false;
        chosen.push(p);
        factor.push(col);
    }
    chosen.sort_unstable();
    chosen
}

/// Solves the slab form projected onto `space` with load vector `load`
/// (full domain, level-major).
pub fn solve_slab(mesh: &Mesh, space: &SlabSpace, load: &[f64]) -> Result<SlabSolution> {
    let domain = mesh.domain_rect();
    if load.len() != domain.n_nodes() * space.n_levels {
        return Err(Error::Dimension("coarse load does not cover the slab".into()));
    }
    let mut kept: Vec<Vec<usize>> = space.nbhds.iter().map(independent_within).collect();
    let dim: usize = space.dim();
    let (trips, rhs) = assemble_coarse(space, &kept, load, domain);
    let m: usize = rhs.len();
    let ctx = || format!("coarse solve, slab {}", space.slab);
    let mut x = if m > DENSE_LIMIT { sparse_solve(&trips, &rhs).ok() } else { None }.unwrap_or_default();
    if x.len() != m || !residual_ok(&trips, &rhs, &x) {
        if m > DENSE_FALLBACK_LIMIT {
            return Err(Error::Singular { context: ctx() });
        }
        let (sel, xs) = dense_solve(&trips, &rhs);
        if sel.len() < m {
            // Translate the kept global indices back to per-neighborhood lists.
            let keep_set: std::collections::BTreeSet<usize> = sel.iter().copied().collect();
            let mut g = 0;
            for k in kept.iter_mut() {
                let mut nk = Vec::new();
                for &f in k.iter() {
                    if keep_set.contains(&g) {
                        nk.push(f);
                    }
                    g += 1;
                }
                *k = nk;
            }
        }
        x = xs;
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular { context: ctx() });
    }
    let mut u = SpaceTimeFunction::zeros(space.slab, domain, space.first_level, space.n_levels);
    let mut coefficients: Vec<Vec<f64>> = space.nbhds.iter().map(|n| vec![0.0; n.functions.len()]).collect();
    let mut g = 0;
    for (a, k) in kept.iter().enumerate() {
        for &f in k {
            coefficients[a][f] = x[g];
            u.add_scaled(x[g], &space.nbhds[a].functions[f]);
            g += 1;
        }
    }
    Ok(SlabSolution { slab: space.slab, coefficients, dim, rank: g, u })
}

/// Slab forms and source loads of a problem, reused across coarse solves.
pub struct SlabOperators {
    pub forms: Vec<SlabForm>,
    pub sources: Vec<Option<Vec<f64>>>,
}

impl SlabOperators {
    pub fn new(problem: &Problem) -> Result<Self> {
        let n = problem.mesh.time.n_slabs();
        Ok(Self {
            forms: (0..n).map(|s| problem.slab_form(s)).collect::<Result<_>>()?,
            sources: (0..n).map(|s| problem.slab_source(s)).collect(),
        })
    }

    /// Load vector of `F(v) = ∫∫ f v + ∫ g v(T_{n-1}⁺)` on `slab`.
    pub fn load(&self, slab: usize, incoming: &[f64]) -> Vec<f64> {
        self.forms[slab].load(self.sources[slab].as_deref(), Some(incoming))
    }
}

/// Multiscale solution over all slabs.
#[derive(Debug, Clone)]
pub struct CoarseSolution {
    pub slabs: Vec<SlabSolution>,
}

impl CoarseSolution {
    pub fn fine(&self) -> Vec<SpaceTimeFunction> {
        self.slabs.iter().map(|s| s.u.clone()).collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.slabs.iter().map(|s| s.dim).collect()
    }

    /// Writes `slab,coarse_node,eig_index,coefficient` rows; `coarse_node`
    /// is the neighborhood id.
    pub fn write_csv<W: Write>(&self, spaces: &[SlabSpace], mut w: W) -> std::io::Result<()> {
        writeln!(w, "slab,coarse_node,eig_index,coefficient")?;
        for (s, space) in self.slabs.iter().zip(spaces) {
            for (ns, coefs) in space.nbhds.iter().zip(&s.coefficients) {
                for (label, c) in ns.labels.iter().zip(coefs) {
                    writeln!(w, "{},{},{},{:e}", s.slab, ns.nbhd, label, c)?;
                }
            }
        }
        Ok(())
    }
}

/// Sequential coarse solve: slab `n` receives slab `n − 1`'s final level.
pub fn solve_coarse(problem: &Problem, ops: &SlabOperators, spaces: &[SlabSpace]) -> Result<CoarseSolution> {
    let mut incoming = problem.initial.clone();
    let mut slabs = Vec::with_capacity(spaces.len());
    for (slab, space) in spaces.iter().enumerate() {
        let sol = solve_slab(&problem.mesh, space, &ops.load(slab, &incoming))?;
        incoming = sol.u.last().to_vec();
        slabs.push(sol);
    }
    Ok(CoarseSolution { slabs })
}

/// Coarse spaces of every slab from an offline basis.
pub fn offline_spaces(problem: &Problem, basis: &OfflineBasis) -> Result<Vec<SlabSpace>> {
    (0..basis.slabs.len()).map(|s| basis.space(problem, s)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pencil() {
        let a = Mat::<f64>::from_fn(2, 2, |i, j| if i == j { [1.0, 4.0][i] } else { 0.0 });
        let s = Mat::<f64>::identity(2, 2);
        let p = solve_spectral(a.as_ref(), s.as_ref(), 0, 0).unwrap();
        assert!((p.values[0] - 1.0).abs() < 1e-10 && (p.values[1] - 4.0).abs() < 1e-10);
        assert!((p.vectors[(0, 0)].abs() - 1.0).abs() < 1e-10);
        assert!(p.vectors[(1, 0)].abs() < 1e-10);
    }

    #[test]
    fn equal_forms_give_unit_eigenvalues() {
        let b = Mat::<f64>::from_fn(4, 4, |i, j| ((i * 7 + j * 3) % 5) as f64 - 2.0);
        let s = b.transpose() * &b + Mat::<f64>::identity(4, 4);
        let p = solve_spectral(s.as_ref(), s.as_ref(), 0, 0).unwrap();
        assert!(p.values.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn pivoted_selection_drops_duplicates() {
        let m = Mat::<f64>::from_fn(3, 3, |i, j| {
            let v = [[2.0, 1.0, 2.0], [1.0, 3.0, 1.0], [2.0, 1.0, 2.0]];
            v[i][j]
        });
        assert_eq!(independent_columns(&m).len(), 2);
    }
}
