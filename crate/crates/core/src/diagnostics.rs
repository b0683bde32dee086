//! Error measures, slab energy norms and the `1/Λ*` indicator.

use std::io::Write;

use crate::error::{Error, Result};
use crate::fem::{SlabForm, SpaceTimeFunction};
use crate::offline::NbhdBasis;

/// Relative errors of a multiscale solution:
///
/// `e1² = ∫ ‖u_H − u_h‖² dt / ∫ ‖u_h‖² dt`,
/// `e2² = ∫∫ κ|∇(u_H − u_h)|² / ∫∫ κ|∇u_h|²`,
///
/// with consistent mass and stiffness matrices in space and the trapezoid
/// rule over the fine levels of each slab (`κ` of the step on both ends).
pub fn compute_errors(forms: &[SlabForm], u_h: &[SpaceTimeFunction], u_ms: &[SpaceTimeFunction]) -> Result<(f64, f64)> {
    if forms.len() != u_h.len() || u_h.len() != u_ms.len() {
        return Err(Error::Dimension("errors need one reference and one approximation per slab".into()));
    }
    let (mut l2_err, mut l2_ref, mut en_err, mut en_ref) = (0.0, 0.0, 0.0, 0.0);
    for ((form, h), ms) in forms.iter().zip(u_h).zip(u_ms) {
        if !h.same_layout(ms) || h.rect != form.rect || h.n_levels != form.n_levels() {
            return Err(Error::Dimension(format!("slab {} layouts differ", h.slab)));
        }
        let n = form.n_nodes();
        let diff: Vec<f64> = ms.values.iter().zip(&h.values).map(|(a, b)| a - b).collect();
        let half = 0.5 * form.tau;
        for s in 0..form.n_steps {
            for l in [s, s + 1] {
                let (e, r) = (&diff[l * n..(l + 1) * n], &h.values[l * n..(l + 1) * n]);
                l2_err += half * form.mass.quadratic(e, e);
                l2_ref += half * form.mass.quadratic(r, r);
                en_err += half * form.stiffness[s].quadratic(e, e);
                en_ref += half * form.stiffness[s].quadratic(r, r);
            }
        }
    }
    if l2_ref <= 0.0 || en_ref <= 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(((l2_err / l2_ref).max(0.0).sqrt(), (en_err / en_ref).max(0.0).sqrt()))
}

/// `‖u‖²_V = ∫∫ κ|∇u|² + ½ ∫ u(T_n⁻)² + ½ ∫ u(T_{n-1}⁺)²`, with exact time integration.
pub fn v_norm(form: &SlabForm, u: &[f64]) -> Result<f64> {
    if u.len() != form.len() {
        return Err(Error::Dimension("function does not match the slab form".into()));
    }
    let sq = form.gradient_energy(u) + 0.5 * form.level_mass(u, form.n_steps) + 0.5 * form.level_mass(u, 0);
    Ok(sq.max(0.0).sqrt())
}

/// `Λ* = min_i λ_{L_i + 1}` over the neighborhoods of one slab.
pub fn lambda_star(bases: &[NbhdBasis]) -> Result<f64> {
    let mut best = f64::INFINITY;
    for b in bases {
        let l = b.functions.len();
        let lam = b.eigenvalues.get(l).ok_or_else(|| {
            Error::InvalidParameter(format!(
                "neighborhood {} has no eigenvalue beyond its {l} basis functions (buffer number 0)",
                b.nbhd
            ))
        })?;
        best = best.min(*lam);
    }
    if bases.is_empty() {
        return Err(Error::InvalidParameter("no neighborhoods".into()));
    }
    Ok(best)
}

/// Pearson correlation; `NaN` when either sample has zero variance.
pub fn corrcoef(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidParameter("correlation needs two samples of equal length ≥ 2".into()));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(f64::NAN);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// One row of an offline error table.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    pub l: usize,
    pub p_bf: usize,
    pub dim_off: usize,
    pub snapshot_ratio: f64,
    pub e1: f64,
    pub e2: f64,
    /// `min_n Λ*` over slabs; `None` without a buffer.
    pub lambda_star: Option<f64>,
    pub seed: u64,
}

impl ErrorReport {
    pub const HEADER: &'static str = "L,p_bf,dim_off,snapshot_ratio,e1,e2,inv_lambda_star";

    pub fn write_row<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let inv = self.lambda_star.map_or("nan".to_string(), |l| format!("{:.6e}", 1.0 / l));
        writeln!(
            w,
            "{},{},{},{:.4},{:.6e},{:.6e},{}",
            self.l, self.p_bf, self.dim_off, self.snapshot_ratio, self.e1, self.e2, inv
        )
    }
}
