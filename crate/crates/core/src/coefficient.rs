//! Time-dependent high-contrast coefficient fields `κ(x, t)`.
//!
//! A field stores one positive value per fine cell and per fine time step;
//! it is piecewise constant in both. The generators below rasterize a set of
//! rectangular high-conductivity regions at fine-cell centers and move them
//! in time (periodic translation or rotation about the domain center).

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::Mesh;
use crate::pou::PartitionOfUnity;

#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub nx: usize,
    pub ny: usize,
    pub n_steps: usize,
    pub background: f64,
    pub contrast: f64,
    values: Vec<f64>,
}

impl CoefficientField {
    pub fn from_values(nx: usize, ny: usize, n_steps: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != nx * ny * n_steps {
            return Err(Error::Dimension(format!(
                "field has {} values, expected {}x{}x{}",
                values.len(),
                nx,
                ny,
                n_steps
            )));
        }
        if let Some(pos) = values.iter().position(|v| !(*v > 0.0) || !v.is_finite()) {
            let cell = pos % (nx * ny);
            return Err(Error::InvalidField(format!(
                "non-positive value {} at cell ({}, {}), step {}",
                values[pos],
                cell % nx,
                cell / nx,
                pos / (nx * ny)
            )));
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            nx,
            ny,
            n_steps,
            background: lo,
            contrast: hi / lo,
            values,
        })
    }

    pub fn constant(mesh: &Mesh, value: f64) -> Self {
        Self {
            nx: mesh.nx,
            ny: mesh.ny,
            n_steps: mesh.time.n_fine_steps(),
            background: value,
            contrast: 1.0,
            values: vec![value; mesh.n_cells() * mesh.time.n_fine_steps()],
        }
    }

    pub fn at(&self, step: usize, i: usize, j: usize) -> f64 {
        self.values[step * self.nx * self.ny + j * self.nx + i]
    }

    /// Cell values of one fine time step, indexed `j * nx + i`.
    pub fn step(&self, step: usize) -> &[f64] {
        let n = self.nx * self.ny;
        &self.values[step * n..(step + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            background: self.background * c,
            values: self.values.iter().map(|v| v * c).collect(),
            ..self.clone()
        }
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Checks that the field matches the mesh's fine cells and time steps.
    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        if self.nx != mesh.nx || self.ny != mesh.ny || self.n_steps != mesh.time.n_fine_steps() {
            return Err(Error::Dimension(format!(
                "field is {}x{} over {} steps, mesh is {}x{} over {} steps",
                self.nx,
                self.ny,
                self.n_steps,
                mesh.nx,
                mesh.ny,
                mesh.time.n_fine_steps()
            )));
        }
        Ok(())
    }
}

/// Axis-aligned high-conductivity rectangle in physical coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inclusion {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Inclusion {
    fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Static layout of high-conductivity regions at `t = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pattern {
    pub inclusions: Vec<Inclusion>,
}

impl Pattern {
    /// Scattered inclusions and short channels of mixed orientation inside
    /// the box `[x0, x1] × [y0, y1]`.
    ///
    /// Positions come from a fixed-seed generator so the layout is the same
    /// on every run; `count`, the channel width, the maximal length and the
    /// box are in domain-fraction units.
    pub fn scattered(count: usize, width: f64, max_length: f64, bounds: [f64; 4], layout_seed: u64) -> Self {
        let [bx0, bx1, by0, by1] = bounds;
        let mut rng = ChaCha8Rng::seed_from_u64(layout_seed);
        let inclusions = (0..count)
            .map(|_| {
                let len = rng.random_range(width..max_length.max(width * 1.001));
                let (w, h) = if rng.random_bool(0.5) { (len, width) } else { (width, len) };
                let (w, h) = (w.min(bx1 - bx0), h.min(by1 - by0));
                let x0 = bx0 + rng.random_range(0.0..=(bx1 - bx0 - w));
                let y0 = by0 + rng.random_range(0.0..=(by1 - by0 - h));
                Inclusion { x0, x1: x0 + w, y0, y1: y0 + h }
            })
            .collect();
        Self { inclusions }
    }

    /// Default geometry of the translated-inclusion medium.
    ///
    /// The box keeps every inclusion out of the outer ring of width 0.1
    /// for shifts of up to 0.08 in `+x`, which covers [`Motion::DEFAULT`]
    /// on the reference 100 × 100 grid over sixteen steps.
    pub fn default_inclusions() -> Self {
        Self::scattered(40, 0.03, 0.25, [0.11, 0.81, 0.11, 0.89], 17)
    }

    /// Four horizontal channels of the given width at heights 0.2, 0.4, 0.6, 0.8.
    pub fn four_horizontal_channels(width: f64) -> Self {
        let inclusions = [0.2, 0.4, 0.6, 0.8]
            .iter()
            .map(|&yc| Inclusion { x0: 0.1, x1: 0.9, y0: yc - width / 2.0, y1: yc + width / 2.0 })
            .collect();
        Self { inclusions }
    }

    /// Four channels arranged as a pinwheel around the center of the unit
    /// square; the layout is invariant under quarter turns.
    pub fn four_channel_pinwheel(width: f64) -> Self {
        let arm = Inclusion { x0: 0.5 + width, x1: 0.92, y0: 0.3, y1: 0.3 + width };
        let quarter = |r: &Inclusion| Inclusion { x0: 1.0 - r.y1, x1: 1.0 - r.y0, y0: r.x0, y1: r.x1 };
        let mut inclusions = vec![arm];
        for k in 0..3 {
            let next = quarter(&inclusions[k]);
            inclusions.push(next);
        }
        Self { inclusions }
    }

    fn value_at(&self, x: f64, y: f64, background: f64, contrast: f64) -> f64 {
        if self.inclusions.iter().any(|r| r.contains(x, y)) {
            background * contrast
        } else {
            background
        }
    }

    /// Rasterizes the pattern at fine-cell centers of the mesh.
    pub fn rasterize(&self, mesh: &Mesh, background: f64, contrast: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(mesh.n_cells());
        for j in 0..mesh.ny {
            for i in 0..mesh.nx {
                let (x, y) = mesh.cell_center(i, j);
                out.push(self.value_at(x / mesh.spec.domain_x, y / mesh.spec.domain_y, background, contrast));
            }
        }
        out
    }
}

/// Periodic translation by `(dx, dy)` fine cells every `update_period` fine steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Motion {
    pub dx: i64,
    pub dy: i64,
    pub update_period: usize,
}

impl Motion {
    pub const STATIC: Motion = Motion { dx: 0, dy: 0, update_period: 1 };
    /// One fine cell in `+x` every other fine step.
    pub const DEFAULT: Motion = Motion { dx: 1, dy: 0, update_period: 2 };

    /// Cumulative shift at fine step `k`.
    pub fn shift_at(&self, k: usize) -> (i64, i64) {
        let n = (k / self.update_period.max(1)) as i64;
        (self.dx * n, self.dy * n)
    }
}

fn check_contrast(contrast: f64) -> Result<()> {
    if !(contrast > 0.0) || !contrast.is_finite() {
        return Err(Error::InvalidParameter(format!("contrast must be positive, got {contrast}")));
    }
    Ok(())
}

/// Translates a rasterized step-0 pattern with periodic wraparound.
pub fn translated(mesh: &Mesh, base: &[f64], motion: Motion) -> Vec<f64> {
    let (nx, ny) = (mesh.nx as i64, mesh.ny as i64);
    let steps = mesh.time.n_fine_steps();
    let mut values = Vec::with_capacity(base.len() * steps);
    for k in 0..steps {
        let (sx, sy) = motion.shift_at(k);
        for j in 0..ny {
            for i in 0..nx {
                let si = (i - sx).rem_euclid(nx);
                let sj = (j - sy).rem_euclid(ny);
                values.push(base[(sj * nx + si) as usize]);
            }
        }
    }
    values
}

/// Field with a pattern of inclusions translated in time.
pub fn field_translated(mesh: &Mesh, pattern: &Pattern, contrast: f64, motion: Motion) -> Result<CoefficientField> {
    check_contrast(contrast)?;
    let base = pattern.rasterize(mesh, 1.0, contrast);
    let values = translated(mesh, &base, motion);
    Ok(CoefficientField {
        nx: mesh.nx,
        ny: mesh.ny,
        n_steps: mesh.time.n_fine_steps(),
        background: 1.0,
        contrast,
        values,
    })
}

/// High-contrast inclusions translated uniformly in time (default geometry).
pub fn field_translated_inclusions(mesh: &Mesh, contrast: f64, motion: Motion) -> Result<CoefficientField> {
    field_translated(mesh, &Pattern::default_inclusions(), contrast, motion)
}

/// Four horizontal channels translated uniformly in time.
pub fn field_four_channels_translated(mesh: &Mesh, contrast: f64, motion: Motion) -> Result<CoefficientField> {
    field_translated(mesh, &Pattern::four_horizontal_channels(0.03), contrast, motion)
}

/// Rotates `pattern` about the domain center by `degrees_per_step` per fine
/// step (anticlockwise). Each cell samples the step-0 raster at its center
/// mapped back by the inverse rotation; points leaving the domain see the
/// background value.
pub fn field_rotated(mesh: &Mesh, pattern: &Pattern, contrast: f64, degrees_per_step: f64) -> Result<CoefficientField> {
    check_contrast(contrast)?;
    let base = pattern.rasterize(mesh, 1.0, contrast);
    let (cx, cy) = (mesh.spec.domain_x / 2.0, mesh.spec.domain_y / 2.0);
    let steps = mesh.time.n_fine_steps();
    let mut values = Vec::with_capacity(base.len() * steps);
    for k in 0..steps {
        let angle = (degrees_per_step * k as f64).rem_euclid(360.0).to_radians();
        let (s, c) = (-angle).sin_cos();
        for j in 0..mesh.ny {
            for i in 0..mesh.nx {
                let (x, y) = mesh.cell_center(i, j);
                let (dx, dy) = (x - cx, y - cy);
                let xs = cx + c * dx - s * dy;
                let ys = cy + s * dx + c * dy;
                let si = (xs / mesh.hx).floor();
                let sj = (ys / mesh.hy).floor();
                let v = if si >= 0.0 && sj >= 0.0 && (si as usize) < mesh.nx && (sj as usize) < mesh.ny {
                    base[sj as usize * mesh.nx + si as usize]
                } else {
                    1.0
                };
                values.push(v);
            }
        }
    }
    Ok(CoefficientField {
        nx: mesh.nx,
        ny: mesh.ny,
        n_steps: steps,
        background: 1.0,
        contrast,
        values,
    })
}

/// Four-channel pinwheel rotated about the domain center.
pub fn field_four_channels_rotated(mesh: &Mesh, contrast: f64, degrees_per_step: f64) -> Result<CoefficientField> {
    field_rotated(mesh, &Pattern::four_channel_pinwheel(0.04), contrast, degrees_per_step)
}

/// Writes `cell_i,cell_j,time_step,value` rows with round-trip precision.
pub fn write_field<W: std::io::Write>(field: &CoefficientField, w: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["cell_i", "cell_j", "time_step", "value"])?;
    for k in 0..field.n_steps {
        for j in 0..field.ny {
            for i in 0..field.nx {
                w.write_record([i.to_string(), j.to_string(), k.to_string(), format!("{:?}", field.at(k, i, j))])?;
            }
        }
    }
    w.flush()
}

/// [`write_field`] into a new file at `path`.
pub fn save_field(field: &CoefficientField, path: &Path) -> Result<()> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_field(field, file)?;
    Ok(())
}

/// Reads a field written by [`save_field`]; row order is free but every
/// cell and step must appear exactly once.
pub fn load_field(path: &Path) -> Result<CoefficientField> {
    let file_err = |msg: String| Error::FieldFile { path: path.to_path_buf(), msg };
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.iter().map(str::trim).collect::<Vec<_>>() != ["cell_i", "cell_j", "time_step", "value"] {
        return Err(file_err(format!("unexpected header {:?}", header)));
    }
    let mut rows = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != 4 {
            return Err(file_err(format!("row {} has {} fields", line + 1, rec.len())));
        }
        let idx = |k: usize| {
            rec[k]
                .trim()
                .parse::<usize>()
                .map_err(|e| file_err(format!("row {}: bad index {:?}: {e}", line + 1, &rec[k])))
        };
        let (i, j, k) = (idx(0)?, idx(1)?, idx(2)?);
        let v: f64 = rec[3]
            .trim()
            .parse()
            .map_err(|e| file_err(format!("row {}: bad value {:?}: {e}", line + 1, &rec[3])))?;
        if !(v > 0.0) || !v.is_finite() {
            return Err(file_err(format!("non-positive value {v} at cell ({i}, {j}), step {k}")));
        }
        rows.push((i, j, k, v));
    }
    if rows.is_empty() {
        return Err(file_err("no data rows".into()));
    }
    let nx = rows.iter().map(|r| r.0).max().unwrap() + 1;
    let ny = rows.iter().map(|r| r.1).max().unwrap() + 1;
    let nt = rows.iter().map(|r| r.2).max().unwrap() + 1;
    let mut values = vec![f64::NAN; nx * ny * nt];
    for (i, j, k, v) in rows {
        let slot = &mut values[k * nx * ny + j * nx + i];
        if !slot.is_nan() {
            return Err(file_err(format!("duplicate cell ({i}, {j}), step {k}")));
        }
        *slot = v;
    }
    if let Some(pos) = values.iter().position(|v| v.is_nan()) {
        let cell = pos % (nx * ny);
        return Err(file_err(format!(
            "missing cell ({}, {}), step {}",
            cell % nx,
            cell / nx,
            pos / (nx * ny)
        )));
    }
    CoefficientField::from_values(nx, ny, nt, values)
}

/// Sum of `|∇χ_i|²` over all partition functions, per fine cell, with
/// gradients of the bilinear interpolant taken at the cell midpoint.
pub fn chi_gradient_sum(mesh: &Mesh, chis: &PartitionOfUnity) -> Vec<f64> {
    let mut sum = vec![0.0; mesh.n_cells()];
    for chi in &chis.functions {
        let r = chi.rect;
        for (i, j) in r.cells() {
            let u0 = chi.values[r.local(i, j)];
            let u1 = chi.values[r.local(i + 1, j)];
            let u2 = chi.values[r.local(i + 1, j + 1)];
            let u3 = chi.values[r.local(i, j + 1)];
            let gx = ((u1 - u0) + (u2 - u3)) / (2.0 * mesh.hx);
            let gy = ((u3 - u0) + (u2 - u1)) / (2.0 * mesh.hy);
            sum[mesh.cell_index(i, j)] += gx * gx + gy * gy;
        }
    }
    sum
}

/// `κ̃⁺(x, t) = κ(x, t) Σ_i |∇χ_i⁺|²` on every fine cell and step.
///
/// The oversampled partition functions are the zero extensions of the
/// standard ones, so the gradient sum only involves `χ_i` on `ω_i`.
pub fn weighted_kappa_tilde(mesh: &Mesh, kappa: &CoefficientField, chis: &PartitionOfUnity) -> KappaTilde {
    let grad = chi_gradient_sum(mesh, chis);
    let n = mesh.n_cells();
    let mut values = Vec::with_capacity(kappa.values.len());
    for k in 0..kappa.n_steps {
        let step = kappa.step(k);
        values.extend((0..n).map(|c| step[c] * grad[c]));
    }
    KappaTilde {
        nx: kappa.nx,
        ny: kappa.ny,
        n_steps: kappa.n_steps,
        values,
    }
}

/// Nonnegative cellwise weight; unlike [`CoefficientField`] it may vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaTilde {
    pub nx: usize,
    pub ny: usize,
    pub n_steps: usize,
    pub values: Vec<f64>,
}

impl KappaTilde {
    pub fn step(&self, step: usize) -> &[f64] {
        let n = self.nx * self.ny;
        &self.values[step * n..(step + 1) * n]
    }
}
