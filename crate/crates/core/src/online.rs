//! Residual-driven online enrichment of the coarse spaces.
//!
//! Each sweep visits the slabs in time order. On a slab, the neighborhood
//! groups are processed one after another: local residual problems are
//! solved on the group's neighborhoods, the resulting functions (all of
//! them, or the θ-adaptive subset) join the space, and the slab is solved
//! again. Later slabs are re-solved after every group so the recorded
//! errors always belong to one consistent multiscale solution.

use std::io::Write;

use rayon::prelude::*;

use crate::diagnostics::{compute_errors, v_norm};
use crate::error::{Error, Result};
use crate::fem::{Problem, SlabSystem, SpaceTimeFunction};
use crate::grid::{nonoverlapping_groups, Rect};
use crate::offline::{solve_slab, SlabOperators, SlabSolution, SlabSpace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OnlineParams {
    /// Number of enrichment sweeps `M`.
    pub sweeps: usize,
    /// Fraction of the total squared residual to capture per group;
    /// `None` adds every neighborhood with a nonzero residual.
    pub theta: Option<f64>,
}

impl OnlineParams {
    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.theta {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::InvalidParameter(format!("theta must lie in (0, 1], got {t}")));
            }
        }
        Ok(())
    }
}

/// Factorized zero-Dirichlet slab forms on every `ω_i`, indexed `[slab][nbhd]`.
pub struct LocalSolvers {
    systems: Vec<Vec<SlabSystem>>,
}

impl LocalSolvers {
    pub fn new(spaces: &[SlabSpace]) -> Result<Self> {
        let systems = spaces
            .iter()
            .map(|space| {
                space
                    .nbhds
                    .par_iter()
                    .map(|ns| SlabSystem::new(ns.form().clone(), &format!("online solve, nbhd {}", ns.nbhd)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { systems })
    }
}

/// Online function of neighborhood `nbhd` for the residual load `residual`
/// (level-major on `domain`), with its norm `r_i = ‖φ_i‖_V`.
pub fn online_basis(
    solvers: &LocalSolvers,
    space: &SlabSpace,
    nbhd: usize,
    residual: &[f64],
    domain: Rect,
) -> Result<(SpaceTimeFunction, f64)> {
    let ns = space
        .nbhds
        .get(nbhd)
        .ok_or_else(|| Error::InvalidParameter(format!("no neighborhood {nbhd}")))?;
    let system = &solvers.systems[space.slab][nbhd];
    let (rect, nl) = (ns.rect, space.n_levels);
    let nd = domain.n_nodes();
    if residual.len() != nd * nl {
        return Err(Error::Dimension("residual does not cover the slab".into()));
    }
    let n = rect.n_nodes();
    let mut local = vec![0.0; n * nl];
    for l in 0..nl {
        for (k, (i, j)) in rect.nodes().enumerate() {
            local[l * n + k] = residual[l * nd + domain.local(i, j)];
        }
    }
    let values = system.solve_load(&local)?;
    let phi = SpaceTimeFunction::from_values(space.slab, rect, space.first_level, nl, values)?;
    let r = v_norm(&system.form, &phi.values)?;
    Ok((phi, r))
}

/// One group step of an enrichment sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub level: usize,
    pub slab: usize,
    pub group: usize,
    /// Coarse dimension summed over slabs after the step.
    pub dof: usize,
    pub selected: usize,
    pub e1: f64,
    pub e2: f64,
}

/// Summary of one slab at the end of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub level: usize,
    pub slab: usize,
    pub dof: usize,
    pub e1: f64,
    pub e2: f64,
    pub max_r: f64,
    pub selected_count: usize,
}

impl HistoryRow {
    pub const HEADER: &'static str = "level,slab,dof,e1,e2,max_r,selected_count";

    pub fn write_row<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "{},{},{},{:.6e},{:.6e},{:.6e},{}",
            self.level, self.slab, self.dof, self.e1, self.e2, self.max_r, self.selected_count
        )
    }
}

/// Enrichment state: coarse spaces, the current multiscale solution and
/// the residual norms `r_i` of the latest sweep, indexed `[slab][nbhd]`.
pub struct OnlineState {
    pub level: usize,
    pub spaces: Vec<SlabSpace>,
    pub solution: Vec<SlabSolution>,
    pub residual_norms: Vec<Vec<f64>>,
}

/// Runs the online stage from the offline spaces.
pub struct OnlineRun<'a> {
    pub problem: &'a Problem,
    pub ops: &'a SlabOperators,
    /// Fine solution, for error reporting.
    pub reference: &'a [SpaceTimeFunction],
    solvers: LocalSolvers,
    groups: Vec<Vec<usize>>,
    pub state: OnlineState,
    pub trace: Vec<TraceEntry>,
    pub history: Vec<HistoryRow>,
}

impl<'a> OnlineRun<'a> {
    pub fn new(
        problem: &'a Problem,
        ops: &'a SlabOperators,
        reference: &'a [SpaceTimeFunction],
        spaces: Vec<SlabSpace>,
    ) -> Result<Self> {
        let n_slabs = problem.mesh.time.n_slabs();
        if spaces.len() != n_slabs || reference.len() != n_slabs {
            return Err(Error::Dimension(format!("{n_slabs} slabs need one space and one reference each")));
        }
        let solvers = LocalSolvers::new(&spaces)?;
        let groups = nonoverlapping_groups(&problem.mesh);
        let mut run = Self {
            problem,
            ops,
            reference,
            solvers,
            groups,
            state: OnlineState { level: 0, spaces, solution: Vec::new(), residual_norms: Vec::new() },
            trace: Vec::new(),
            history: Vec::new(),
        };
        run.state.residual_norms = run.state.spaces.iter().map(|s| vec![f64::NAN; s.nbhds.len()]).collect();
        run.resolve_from(0)?;
        let (e1, e2) = run.errors()?;
        for slab in 0..n_slabs {
            run.history.push(HistoryRow {
                level: 0,
                slab,
                dof: run.state.spaces[slab].dim(),
                e1,
                e2,
                max_r: f64::NAN,
                selected_count: 0,
            });
        }
        Ok(run)
    }

    fn incoming(&self, slab: usize) -> Vec<f64> {
        if slab == 0 {
            self.problem.initial.clone()
        } else {
            self.state.solution[slab - 1].u.last().to_vec()
        }
    }

    /// Re-solves slabs `from..` in order.
    fn resolve_from(&mut self, from: usize) -> Result<()> {
        self.state.solution.truncate(from);
        for slab in from..self.state.spaces.len() {
            let load = self.ops.load(slab, &self.incoming(slab));
            let sol = solve_slab(&self.problem.mesh, &self.state.spaces[slab], &load)?;
            self.state.solution.push(sol);
        }
        Ok(())
    }

    pub fn errors(&self) -> Result<(f64, f64)> {
        let u: Vec<SpaceTimeFunction> = self.state.solution.iter().map(|s| s.u.clone()).collect();
        compute_errors(&self.ops.forms, self.reference, &u)
    }

    pub fn dof(&self) -> usize {
        self.state.spaces.iter().map(SlabSpace::dim).sum()
    }

    /// Residual load `F(v) − a(u_ms, v)` on `slab`.
    fn residual(&self, slab: usize) -> Vec<f64> {
        let load = self.ops.load(slab, &self.incoming(slab));
        let image = self.ops.forms[slab].apply(&self.state.solution[slab].u.values);
        load.iter().zip(image).map(|(a, b)| a - b).collect()
    }

    /// One enrichment sweep over all slabs.
    pub fn sweep(&mut self, params: &OnlineParams) -> Result<()> {
        params.validate()?;
        let level = self.state.level + 1;
        for slab in 0..self.state.spaces.len() {
            let mut max_r: f64 = 0.0;
            let mut selected_count = 0;
            for (g, group) in self.groups.clone().iter().enumerate() {
                let residual = self.residual(slab);
                let space = &self.state.spaces[slab];
                let solvers = &self.solvers;
                let domain = self.problem.mesh.domain_rect();
                let found: Vec<(usize, SpaceTimeFunction, f64)> = group
                    .par_iter()
                    .map(|&i| online_basis(solvers, space, i, &residual, domain).map(|(phi, r)| (i, phi, r)))
                    .collect::<Result<_>>()?;
                for (i, _, r) in &found {
                    self.state.residual_norms[slab][*i] = *r;
                    max_r = max_r.max(*r);
                }
                let norms: Vec<(usize, f64)> = found.iter().map(|(i, _, r)| (*i, *r)).collect();
                let chosen = select(&norms, params.theta);
                selected_count += chosen.len();
                for (i, phi, _) in found {
                    if chosen.contains(&i) {
                        let label = self.state.spaces[slab].next_label(i);
                        self.state.spaces[slab].push(i, label, phi)?;
                    }
                }
                if !chosen.is_empty() {
                    self.resolve_from(slab)?;
                }
                let (e1, e2) = self.errors()?;
                self.trace.push(TraceEntry { level, slab, group: g, dof: self.dof(), selected: chosen.len(), e1, e2 });
            }
            let (e1, e2) = self.errors()?;
            self.history.push(HistoryRow {
                level,
                slab,
                dof: self.state.spaces[slab].dim(),
                e1,
                e2,
                max_r,
                selected_count,
            });
        }
        self.state.level = level;
        Ok(())
    }

    pub fn run(&mut self, params: &OnlineParams) -> Result<()> {
        for _ in 0..params.sweeps {
            self.sweep(params)?;
        }
        Ok(())
    }

    pub fn write_history<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", HistoryRow::HEADER)?;
        for row in &self.history {
            row.write_row(&mut w)?;
        }
        Ok(())
    }
}

/// Neighborhoods to enrich from `(id, r_i)` pairs.
///
/// Without `theta`, every `r_i > 0`. With `theta`, the smallest leading set
/// of the residuals sorted in decreasing order (ties by id) whose squares
/// sum to at least `theta` times the total.
pub fn select(norms: &[(usize, f64)], theta: Option<f64>) -> Vec<usize> {
    let mut positive: Vec<(usize, f64)> = norms.iter().copied().filter(|&(_, r)| r > 0.0).collect();
    let Some(theta) = theta else {
        return positive.into_iter().map(|(i, _)| i).collect();
    };
    positive.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: f64 = positive.iter().map(|(_, r)| r * r).sum();
    let mut acc = 0.0;
    let mut out = Vec::new();
    for (i, r) in positive {
        if theta < 1.0 && acc >= theta * total {
            break;
        }
        acc += r * r;
        out.push(i);
    }
    out
}
