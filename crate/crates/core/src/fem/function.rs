use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::Rect;

/// Nodal values of a space-time function, bilinear in space on the fine
/// cells of `rect` and continuous piecewise linear in time over the global
/// fine levels `first_level .. first_level + n_levels`.
///
/// Values are stored level by level; each level is a row-major vector over
/// the nodes of `rect`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeFunction {
    pub slab: usize,
    pub rect: Rect,
    pub first_level: usize,
    pub n_levels: usize,
    pub values: Vec<f64>,
}

impl SpaceTimeFunction {
    pub fn zeros(slab: usize, rect: Rect, first_level: usize, n_levels: usize) -> Self {
        Self {
            slab,
            rect,
            first_level,
            n_levels,
            values: vec![0.0; rect.n_nodes() * n_levels],
        }
    }

    pub fn from_values(slab: usize, rect: Rect, first_level: usize, n_levels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rect.n_nodes() * n_levels {
            return Err(Error::Dimension(format!(
                "{} values for {} nodes x {} levels",
                values.len(),
                rect.n_nodes(),
                n_levels
            )));
        }
        Ok(Self { slab, rect, first_level, n_levels, values })
    }

    pub fn n_nodes(&self) -> usize {
        self.rect.n_nodes()
    }

    pub fn level(&self, l: usize) -> &[f64] {
        let n = self.n_nodes();
        &self.values[l * n..(l + 1) * n]
    }

    pub fn level_mut(&mut self, l: usize) -> &mut [f64] {
        let n = self.n_nodes();
        &mut self.values[l * n..(l + 1) * n]
    }

    pub fn first(&self) -> &[f64] {
        self.level(0)
    }

    pub fn last(&self) -> &[f64] {
        self.level(self.n_levels - 1)
    }

    /// Value at global node `(i, j)` and local level `l`; zero outside the rectangle.
    pub fn value(&self, l: usize, i: usize, j: usize) -> f64 {
        if self.rect.contains(i, j) {
            self.values[l * self.n_nodes() + self.rect.local(i, j)]
        } else {
            0.0
        }
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        self.rect == other.rect && self.first_level == other.first_level && self.n_levels == other.n_levels
    }

    pub fn scale(&mut self, a: f64) {
        self.values.iter_mut().for_each(|v| *v *= a);
    }

    /// `self += a * other`, where `other` lives on a sub-rectangle with the same levels.
    pub fn add_scaled(&mut self, a: f64, other: &SpaceTimeFunction) {
        debug_assert!(self.rect.contains_rect(&other.rect));
        debug_assert_eq!(self.first_level, other.first_level);
        debug_assert_eq!(self.n_levels, other.n_levels);
        let (ns, no) = (self.n_nodes(), other.n_nodes());
        let w = other.rect.width();
        for l in 0..self.n_levels {
            for jj in 0..other.rect.height() {
                let src = &other.values[l * no + jj * w..l * no + (jj + 1) * w];
                let start = l * ns + self.rect.local(other.rect.i0, other.rect.j0 + jj);
                for (d, s) in self.values[start..start + w].iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
    }

    /// Restricts to a nested rectangle and window of global levels.
    pub fn restrict(&self, rect: Rect, first_level: usize, n_levels: usize) -> Result<Self> {
        if !self.rect.contains_rect(&rect)
            || first_level < self.first_level
            || first_level + n_levels > self.first_level + self.n_levels
        {
            return Err(Error::NotNested(format!(
                "{:?} levels {}..{} inside {:?} levels {}..{}",
                rect,
                first_level,
                first_level + n_levels,
                self.rect,
                self.first_level,
                self.first_level + self.n_levels
            )));
        }
        let off = first_level - self.first_level;
        let mut values = Vec::with_capacity(rect.n_nodes() * n_levels);
        for l in off..off + n_levels {
            let lvl = self.level(l);
            for (i, j) in rect.nodes() {
                values.push(lvl[self.rect.local(i, j)]);
            }
        }
        Ok(Self { slab: self.slab, rect, first_level, n_levels, values })
    }

    /// Zero extension onto a larger rectangle with the same levels.
    pub fn extend_to(&self, rect: Rect) -> Self {
        let mut out = SpaceTimeFunction::zeros(self.slab, rect, self.first_level, self.n_levels);
        out.add_scaled(1.0, self);
        out
    }

    pub fn dot(&self, other: &Self) -> f64 {
        debug_assert!(self.same_layout(other));
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes `time_level,node_i,node_j,value` rows (global level and node indices).
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "time_level,node_i,node_j,value")?;
        for l in 0..self.n_levels {
            let lvl = self.level(l);
            for (k, (i, j)) in self.rect.nodes().enumerate() {
                writeln!(w, "{},{},{},{:?}", self.first_level + l, i, j, lvl[k])?;
            }
        }
        Ok(())
    }
}
