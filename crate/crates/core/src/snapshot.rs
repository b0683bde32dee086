//! Local snapshot spaces.
//!
//! A snapshot solves the homogeneous slab problem on a space-time region with
//! prescribed data on the initial face and on the lateral boundary. Randomized
//! snapshots draw that data from i.i.d. standard normals on an oversampled
//! region; full snapshots use one fine-grid delta per data node.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::coefficient::CoefficientField;
use crate::error::{Error, Result};
use crate::fem::{LocalData, SlabForm, SlabSystem, SpaceTimeFunction};
use crate::grid::{Mesh, Neighborhood, OversampledRegion, Rect};

/// Name of the random stream used for snapshot data.
pub const GENERATOR_ID: &str = "chacha8-stream(nbhd,slab,index)+ziggurat-normal";

/// Default cap on the number of full snapshots a region may request.
pub const DEFAULT_FULL_CAP: usize = 20_000;

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    pub nbhd: usize,
    pub slab: usize,
    pub rect: Rect,
    pub first_level: usize,
    pub n_levels: usize,
    pub seed: u64,
    pub generator_id: String,
    pub functions: Vec<SpaceTimeFunction>,
}

impl SnapshotSet {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    /// Every member restricted to `rect × levels first_level .. first_level + n_levels`.
    pub fn restrict(&self, rect: Rect, first_level: usize, n_levels: usize) -> Result<SnapshotSet> {
        let functions = self
            .functions
            .iter()
            .map(|f| restrict(f, rect, first_level, n_levels))
            .collect::<Result<_>>()?;
        Ok(SnapshotSet { rect, first_level, n_levels, functions, generator_id: self.generator_id.clone(), ..*self })
    }

    /// Restriction to `ω × (T_{n-1}, T_n)`.
    pub fn restrict_to_slab(&self, mesh: &Mesh, target: Rect) -> Result<SnapshotSet> {
        let p = mesh.time.steps_per_slab();
        self.restrict(target, mesh.time.slab_first_level(self.slab), p + 1)
    }

    /// Writes a CSV cache with a `#` header recording seed, generator and region.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(std::fs::File::create(path)?);
        writeln!(w, "# seed={}", self.seed)?;
        writeln!(w, "# generator_id={}", self.generator_id)?;
        writeln!(w, "# region={}", region_key(self))?;
        writeln!(w, "snapshot,time_level,node_i,node_j,value")?;
        for (s, f) in self.functions.iter().enumerate() {
            for l in 0..f.n_levels {
                for (k, (i, j)) in f.rect.nodes().enumerate() {
                    writeln!(w, "{},{},{},{},{:?}", s, f.first_level + l, i, j, f.level(l)[k])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a cache written by [`SnapshotSet::write_cache`].
    pub fn read_cache(path: &Path) -> Result<SnapshotSet> {
        let bad = |msg: String| Error::FieldFile { path: path.to_path_buf(), msg };
        let reader = BufReader::new(std::fs::File::open(path)?);
        let mut meta = std::collections::BTreeMap::new();
        let mut rows = Vec::new();
        for line in reader.lines() {
            let line = line?;
            if let Some(h) = line.strip_prefix("# ") {
                if let Some((k, v)) = h.split_once('=') {
                    meta.insert(k.to_string(), v.to_string());
                }
            } else if !line.starts_with("snapshot,") && !line.is_empty() {
                rows.push(line);
            }
        }
        let get = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("missing header `{k}`")));
        let seed: u64 = get("seed")?.parse().map_err(|_| bad("bad seed".into()))?;
        let generator_id = get("generator_id")?;
        let nums: Vec<usize> = get("region")?
            .split(':')
            .map(|s| s.parse().map_err(|_| bad("bad region key".into())))
            .collect::<Result<_>>()?;
        let [nbhd, slab, i0, i1, j0, j1, first_level, n_levels] = nums[..] else {
            return Err(bad("bad region key".into()));
        };
        let rect = Rect::new(i0, i1, j0, j1);
        let per = rect.n_nodes() * n_levels;
        let mut values: Vec<Vec<f64>> = Vec::new();
        for (r, line) in rows.iter().enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("row {}: expected 5 fields", r + 1)));
            }
            let p = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("row {}: bad index", r + 1)));
            let (s, l, i, j) = (p(f[0])?, p(f[1])?, p(f[2])?, p(f[3])?);
            let v: f64 = f[4].parse().map_err(|_| bad(format!("row {}: bad value", r + 1)))?;
            if !rect.contains(i, j) || l < first_level || l >= first_level + n_levels {
                return Err(bad(format!("row {}: outside region", r + 1)));
            }
            while values.len() <= s {
                values.push(vec![f64::NAN; per]);
            }
            values[s][(l - first_level) * rect.n_nodes() + rect.local(i, j)] = v;
        }
        if values.iter().flatten().any(|v| v.is_nan()) {
            return Err(bad("incomplete snapshot data".into()));
        }
        let functions = values
            .into_iter()
            .map(|v| SpaceTimeFunction::from_values(slab, rect, first_level, n_levels, v))
            .collect::<Result<_>>()?;
        Ok(SnapshotSet { nbhd, slab, rect, first_level, n_levels, seed, generator_id, functions })
    }
}

fn region_key(s: &SnapshotSet) -> String {
    let r = s.rect;
    format!("{}:{}:{}:{}:{}:{}:{}:{}", s.nbhd, s.slab, r.i0, r.i1, r.j0, r.j1, s.first_level, s.n_levels)
}

/// Random stream for snapshot `index` of neighborhood `nbhd` on `slab`.
/// Streams are independent of generation order.
pub fn snapshot_rng(seed: u64, nbhd: usize, slab: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((nbhd as u64) << 40) | ((slab as u64) << 24) | index as u64);
    rng
}

/// Factorized homogeneous slab problem on one space-time region.
pub struct RegionSolver {
    pub nbhd: usize,
    pub slab: usize,
    pub system: SlabSystem,
}

impl RegionSolver {
    pub fn new(mesh: &Mesh, kappa: &CoefficientField, region: &OversampledRegion) -> Result<Self> {
        let form = SlabForm::new(mesh, kappa, region.rect, region.initial_level, region.n_steps(mesh))?;
        let ctx = format!("snapshot region of neighborhood {} (slab {})", region.base.id, region.slab);
        Ok(Self { nbhd: region.base.id, slab: region.slab, system: SlabSystem::with_initial_face(form, &ctx)? })
    }

    /// The region `ω × (T_{n-1}, T_n)` without oversampling.
    pub fn plain(mesh: &Mesh, kappa: &CoefficientField, nbhd: &Neighborhood, slab: usize) -> Result<Self> {
        let region = crate::grid::oversample(mesh, nbhd, 0, 0, slab)?;
        Self::new(mesh, kappa, &region)
    }

    pub fn rect(&self) -> Rect {
        self.system.form.rect
    }

    pub fn first_level(&self) -> usize {
        self.system.form.first_level
    }

    pub fn n_levels(&self) -> usize {
        self.system.form.n_levels()
    }

    /// Dirichlet data on the space-time boundary: the whole initial face,
    /// then the lateral boundary at every later level.
    fn data(&self, initial: Vec<f64>, lateral: impl Fn(usize, usize) -> f64) -> LocalData {
        let rect = self.rect();
        let n = rect.n_nodes();
        let bnd = rect.boundary_locals();
        let mut dirichlet = initial;
        dirichlet.resize(n * self.n_levels(), 0.0);
        for l in 1..self.n_levels() {
            for (k, &b) in bnd.iter().enumerate() {
                dirichlet[l * n + b] = lateral(l, k);
            }
        }
        LocalData { dirichlet: Some(dirichlet), initial: None, source: None }
    }

    /// Gaussian data for snapshot `index`: the initial face in node order,
    /// then the lateral boundary level by level.
    pub fn random_data(&self, seed: u64, index: usize) -> LocalData {
        let mut rng = snapshot_rng(seed, self.nbhd, self.slab, index);
        let rect = self.rect();
        let initial: Vec<f64> = (0..rect.n_nodes()).map(|_| rng.sample(StandardNormal)).collect();
        let nb = rect.n_boundary_nodes();
        let lateral: Vec<f64> = (0..nb * (self.n_levels() - 1)).map(|_| rng.sample(StandardNormal)).collect();
        self.data(initial, |l, k| lateral[(l - 1) * nb + k])
    }

    /// Snapshots `indices` for `seed`, on the whole region.
    pub fn randomized(&self, seed: u64, indices: std::ops::Range<usize>) -> Result<Vec<SpaceTimeFunction>> {
        let data: Vec<LocalData> = indices.map(|k| self.random_data(seed, k)).collect();
        self.solve_all(&data)
    }

    fn solve_all(&self, data: &[LocalData]) -> Result<Vec<SpaceTimeFunction>> {
        let (rect, first, nl) = (self.rect(), self.first_level(), self.n_levels());
        self.system
            .solve_batch(data)?
            .into_iter()
            .map(|v| SpaceTimeFunction::from_values(self.slab, rect, first, nl, v))
            .collect()
    }

    /// Residual of `u` for the homogeneous problem at the unknowns (interior
    /// nodes after the initial face).
    pub fn interior_residual(&self, u: &SpaceTimeFunction) -> Vec<f64> {
        self.system.interior_residual(&u.values, &LocalData::default())
    }
}

/// `count` randomized snapshots on `region`, with data drawn from `seed`.
pub fn generate_randomized(
    mesh: &Mesh,
    kappa: &CoefficientField,
    region: &OversampledRegion,
    count: usize,
    seed: u64,
) -> Result<SnapshotSet> {
    if count == 0 {
        return Err(Error::InvalidParameter("snapshot count must be at least 1".into()));
    }
    let solver = RegionSolver::new(mesh, kappa, region)?;
    let functions = solver.randomized(seed, 0..count)?;
    Ok(SnapshotSet {
        nbhd: region.base.id,
        slab: region.slab,
        rect: solver.rect(),
        first_level: solver.first_level(),
        n_levels: solver.n_levels(),
        seed,
        generator_id: GENERATOR_ID.to_string(),
        functions,
    })
}

/// Full snapshots on `ω × (T_{n-1}, T_n)`: one delta at every node of the
/// initial face, then one per lateral boundary node and later level.
pub fn generate_full(
    mesh: &Mesh,
    kappa: &CoefficientField,
    nbhd: &Neighborhood,
    slab: usize,
    cap: usize,
) -> Result<SnapshotSet> {
    let rect = nbhd.rect;
    let p = mesh.time.steps_per_slab();
    let count = rect.n_nodes() + rect.n_boundary_nodes() * p;
    if count > cap {
        return Err(Error::RegionTooLarge { size: count, cap });
    }
    let solver = RegionSolver::plain(mesh, kappa, nbhd, slab)?;
    let n = rect.n_nodes();
    let nb = rect.n_boundary_nodes();
    let mut data: Vec<LocalData> = (0..n)
        .map(|k| {
            let mut g = vec![0.0; n];
            g[k] = 1.0;
            solver.data(g, |_, _| 0.0)
        })
        .collect();
    for l in 1..=p {
        for k in 0..nb {
            data.push(solver.data(vec![0.0; n], |ll, kk| f64::from(u8::from(ll == l && kk == k))));
        }
    }
    Ok(SnapshotSet {
        nbhd: nbhd.id,
        slab,
        rect,
        first_level: solver.first_level(),
        n_levels: solver.n_levels(),
        seed: 0,
        generator_id: "full-delta".to_string(),
        functions: solver.solve_all(&data)?,
    })
}

/// Restriction of a snapshot to a nested space-time region; no re-solve.
pub fn restrict(snapshot: &SpaceTimeFunction, target: Rect, first_level: usize, n_levels: usize) -> Result<SpaceTimeFunction> {
    snapshot.restrict(target, first_level, n_levels)
}

/// Number of full snapshots used as the snapshot-ratio denominator for a
/// neighborhood of `nx × ny` fine nodes and `p` fine steps: the initial face
/// plus `(nx − 1) + (ny − 1)` boundary nodes per later level.
pub fn full_snapshot_count(rect: Rect, p: usize) -> usize {
    rect.n_nodes() + ((rect.width() - 1) + (rect.height() - 1)) * p
}

/// `(L + p_bf) / full`.
pub fn snapshot_ratio(l: usize, p_bf: usize, full: usize) -> Result<f64> {
    if full == 0 || l + p_bf == 0 {
        return Err(Error::InvalidParameter("snapshot ratio needs positive counts".into()));
    }
    Ok((l + p_bf) as f64 / full as f64)
}
