use crate::grid::Rect;

/// Bilinear element matrices on an `hx × hy` cell, integrated with 2×2
/// Gauss points. Local node order: `(i,j)`, `(i+1,j)`, `(i+1,j+1)`, `(i,j+1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementMatrices {
    pub mass: [[f64; 4]; 4],
    pub stiffness: [[f64; 4]; 4],
}

/// Node offsets within a cell, matching the local order.
pub const CELL_OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 0), (1, 1), (0, 1)];

impl ElementMatrices {
    pub fn new(hx: f64, hy: f64) -> Self {
        let g = 0.5 / 3f64.sqrt();
        let pts = [0.5 - g, 0.5 + g];
        let mut mass = [[0.0; 4]; 4];
        let mut stiffness = [[0.0; 4]; 4];
        for &xi in &pts {
            for &eta in &pts {
                let n = [(1.0 - xi) * (1.0 - eta), xi * (1.0 - eta), xi * eta, (1.0 - xi) * eta];
                let dx = [-(1.0 - eta) / hx, (1.0 - eta) / hx, eta / hx, -eta / hx];
                let dy = [-(1.0 - xi) / hy, -xi / hy, xi / hy, (1.0 - xi) / hy];
                let w = 0.25 * hx * hy;
                for a in 0..4 {
                    for b in 0..4 {
                        mass[a][b] += w * n[a] * n[b];
                        stiffness[a][b] += w * (dx[a] * dx[b] + dy[a] * dy[b]);
                    }
                }
            }
        }
        Self { mass, stiffness }
    }
}

/// Nine-point operator on the nodes of a rectangle, assembled from
/// cellwise-weighted element matrices. `coef[node][(dj+1)*3 + (di+1)]`
/// couples a node to its neighbour at offset `(di, dj)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil9 {
    pub rect: Rect,
    pub coef: Vec<[f64; 9]>,
}

#[inline]
fn slot(di: isize, dj: isize) -> usize {
    ((dj + 1) * 3 + (di + 1)) as usize
}

impl Stencil9 {
    /// Assembles `Σ_cells w(cell) · elem` over the cells of `rect`; `weight`
    /// receives the local cell index `(j - j0) * (width - 1) + (i - i0)`.
    pub fn assemble(rect: Rect, elem: &[[f64; 4]; 4], weight: impl Fn(usize) -> f64) -> Self {
        let w = rect.width();
        let mut coef = vec![[0.0; 9]; rect.n_nodes()];
        for (c, (i, j)) in rect.cells().enumerate() {
            let wc = weight(c);
            if wc == 0.0 {
                continue;
            }
            for (a, &(ai, aj)) in CELL_OFFSETS.iter().enumerate() {
                let row = (j + aj - rect.j0) * w + (i + ai - rect.i0);
                for (b, &(bi, bj)) in CELL_OFFSETS.iter().enumerate() {
                    let s = slot(bi as isize - ai as isize, bj as isize - aj as isize);
                    coef[row][s] += wc * elem[a][b];
                }
            }
        }
        Self { rect, coef }
    }

    /// `out += scale * A u` for node vectors on the rectangle.
    pub fn apply_add(&self, u: &[f64], out: &mut [f64], scale: f64) {
        let w = self.rect.width() as isize;
        let h = self.rect.height() as isize;
        for lj in 0..h {
            for li in 0..w {
                let row = (lj * w + li) as usize;
                let c = &self.coef[row];
                let mut acc = 0.0;
                for dj in -1..=1 {
                    let nj = lj + dj;
                    if nj < 0 || nj >= h {
                        continue;
                    }
                    for di in -1..=1 {
                        let ni = li + di;
                        if ni < 0 || ni >= w {
                            continue;
                        }
                        acc += c[slot(di, dj)] * u[(nj * w + ni) as usize];
                    }
                }
                out[row] += scale * acc;
            }
        }
    }

    /// Nonzero couplings `(row, col, value)` in local node indices.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let w = self.rect.width() as isize;
        let h = self.rect.height() as isize;
        self.coef.iter().enumerate().flat_map(move |(row, c)| {
            let li = row as isize % w;
            let lj = row as isize / w;
            (0..9).filter_map(move |s| {
                let di = (s % 3) as isize - 1;
                let dj = (s / 3) as isize - 1;
                let (ni, nj) = (li + di, lj + dj);
                (ni >= 0 && ni < w && nj >= 0 && nj < h && c[s] != 0.0)
                    .then(|| (row, (nj * w + ni) as usize, c[s]))
            })
        })
    }

    pub fn quadratic(&self, u: &[f64], v: &[f64]) -> f64 {
        let mut tmp = vec![0.0; u.len()];
        self.apply_add(u, &mut tmp, 1.0);
        tmp.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn element_matrices_match_closed_form() {
        let (hx, hy) = (0.3, 0.2);
        let e = ElementMatrices::new(hx, hy);
        let m = hx * hy / 36.0;
        let mass = [[4.0, 2.0, 1.0, 2.0], [2.0, 4.0, 2.0, 1.0], [1.0, 2.0, 4.0, 2.0], [2.0, 1.0, 2.0, 4.0]];
        let (a, b) = (hy / hx, hx / hy);
        // Standard Q1 stiffness for a rectangle.
        let k = [
            [(2.0 * a + 2.0 * b) / 6.0, (-2.0 * a + b) / 6.0, -(a + b) / 6.0, (a - 2.0 * b) / 6.0],
            [(-2.0 * a + b) / 6.0, (2.0 * a + 2.0 * b) / 6.0, (a - 2.0 * b) / 6.0, -(a + b) / 6.0],
            [-(a + b) / 6.0, (a - 2.0 * b) / 6.0, (2.0 * a + 2.0 * b) / 6.0, (-2.0 * a + b) / 6.0],
            [(a - 2.0 * b) / 6.0, -(a + b) / 6.0, (-2.0 * a + b) / 6.0, (2.0 * a + 2.0 * b) / 6.0],
        ];
        for r in 0..4 {
            for c in 0..4 {
                assert!((e.mass[r][c] - m * mass[r][c]).abs() < 1e-15);
                assert!((e.stiffness[r][c] - k[r][c]).abs() < 1e-13, "{r} {c}");
            }
        }
    }

    #[test]
    fn stencil_apply_matches_entries() {
        let rect = Rect::new(2, 6, 1, 4);
        let e = ElementMatrices::new(0.1, 0.1);
        let s = Stencil9::assemble(rect, &e.stiffness, |c| 1.0 + c as f64);
        let n = rect.n_nodes();
        let u: Vec<f64> = (0..n).map(|k| (k as f64 * 0.37).sin()).collect();
        let mut out = vec![0.0; n];
        s.apply_add(&u, &mut out, 1.0);
        let mut dense = vec![0.0; n];
        for (r, c, v) in s.entries() {
            dense[r] += v * u[c];
        }
        for k in 0..n {
            assert!((out[k] - dense[k]).abs() < 1e-12);
        }
        // Constants are in the stiffness kernel.
        let mut k1 = vec![0.0; n];
        s.apply_add(&vec![1.0; n], &mut k1, 1.0);
        assert!(k1.iter().all(|v| v.abs() < 1e-12));
    }
}
