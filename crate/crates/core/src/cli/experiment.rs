//! Experiment drivers behind the subcommands.

use crate::coefficient::{
    field_four_channels_rotated, field_four_channels_translated, field_translated_inclusions, load_field,
    CoefficientField,
};
use crate::diagnostics::{compute_errors, corrcoef, ErrorReport};
use crate::error::{Error, Result};
use crate::fem::{solve_fine, Problem, Source, SpaceTimeFunction};
use crate::grid::{build_mesh, GridSpec, Mesh, TimePartition};
use crate::offline::{
    offline_spaces, solve_coarse, CoarseSolution, OfflineBasis, OfflineParams, SlabOperators, SlabSpace, SnapshotBank,
};
use crate::online::{HistoryRow, OnlineParams, OnlineRun};

use super::config::{ExperimentConfig, FieldKind, SweepKind};

pub fn build_field(cfg: &ExperimentConfig, mesh: &Mesh) -> Result<CoefficientField> {
    match cfg.field {
        FieldKind::Inclusions => field_translated_inclusions(mesh, cfg.contrast, cfg.motion),
        FieldKind::Channels => field_four_channels_translated(mesh, cfg.contrast, cfg.motion),
        FieldKind::RotatingChannels => field_four_channels_rotated(mesh, cfg.contrast, cfg.rotation_deg),
        FieldKind::File => {
            let path = cfg.field_file.as_deref().ok_or_else(|| Error::Config("field_file is not set".into()))?;
            load_field(path)
        }
    }
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let mesh = build_mesh(
        GridSpec::unit_square(cfg.n_coarse, cfg.fine_per_coarse),
        TimePartition::new(cfg.t_end, cfg.n_slabs, cfg.steps_per_slab),
    )?;
    let kappa = build_field(cfg, &mesh)?;
    let source = if cfg.source == 0.0 { Source::Zero } else { Source::Constant(cfg.source) };
    let initial = Problem::sine_initial(&mesh);
    Problem::new(mesh, kappa, source, initial)
}

pub fn offline_params(cfg: &ExperimentConfig, l: usize, p_bf: usize) -> OfflineParams {
    OfflineParams {
        l,
        p_bf,
        space_layers: cfg.space_layers.unwrap_or(cfg.fine_per_coarse),
        time_extension: cfg.time_extension,
        seed: cfg.seed,
    }
}

/// Problem, slab operators and fine reference solution.
pub struct Setup {
    pub problem: Problem,
    pub ops: SlabOperators,
    pub fine: Vec<SpaceTimeFunction>,
}

impl Setup {
    pub fn new(problem: Problem) -> Result<Self> {
        let ops = SlabOperators::new(&problem)?;
        let fine = solve_fine(&problem)?;
        Ok(Self { problem, ops, fine })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.problem.mesh
    }

    /// Coarse solve in the offline spaces of `basis` and its error report.
    pub fn evaluate(&self, basis: &OfflineBasis) -> Result<(ErrorReport, CoarseSolution, Vec<SlabSpace>)> {
        let spaces = offline_spaces(&self.problem, basis)?;
        let coarse = solve_coarse(&self.problem, &self.ops, &spaces)?;
        let (e1, e2) = compute_errors(&self.ops.forms, &self.fine, &coarse.fine())?;
        let lambda_star = if basis.params.p_bf > 0 {
            let per_slab = (0..basis.slabs.len()).map(|s| basis.lambda_star(s)).collect::<Result<Vec<_>>>()?;
            Some(per_slab.into_iter().fold(f64::INFINITY, f64::min))
        } else {
            None
        };
        let report = ErrorReport {
            l: basis.params.l,
            p_bf: basis.params.p_bf,
            dim_off: basis.dim(0),
            snapshot_ratio: basis.snapshot_ratio(self.mesh())?,
            e1,
            e2,
            lambda_star,
            seed: basis.params.seed,
        };
        Ok((report, coarse, spaces))
    }

    fn bank(&self, cfg: &ExperimentConfig, count: usize) -> Result<SnapshotBank> {
        let params = offline_params(cfg, 0, 0);
        SnapshotBank::build(self.mesh(), &self.problem.kappa, params, &[cfg.seed], count)
    }

    /// One report per `(L, p_bf)` pair, all from one snapshot bank.
    pub fn offline_reports(&self, cfg: &ExperimentConfig, pairs: &[(usize, usize)]) -> Result<Vec<ErrorReport>> {
        let Some(count) = pairs.iter().map(|(l, p)| l + p).max() else {
            return Ok(Vec::new());
        };
        let bank = self.bank(cfg, count)?;
        pairs
            .iter()
            .map(|&(l, p)| Ok(self.evaluate(&bank.basis(self.mesh(), 0, l, p)?)?.0))
            .collect()
    }

    pub fn offline_table(&self, cfg: &ExperimentConfig) -> Result<Vec<ErrorReport>> {
        let pairs: Vec<(usize, usize)> = cfg
            .sweep_values
            .iter()
            .map(|&v| match cfg.sweep {
                SweepKind::L => (v, cfg.p_bf),
                SweepKind::PBf => (cfg.l, v),
            })
            .collect();
        self.offline_reports(cfg, &pairs)
    }

    /// Online history from the offline spaces of `basis`.
    pub fn online(&self, basis: &OfflineBasis, params: &OnlineParams) -> Result<Vec<HistoryRow>> {
        let spaces = offline_spaces(&self.problem, basis)?;
        let mut run = OnlineRun::new(&self.problem, &self.ops, &self.fine, spaces)?;
        run.run(params)?;
        Ok(run.history)
    }

    /// Non-adaptive histories for every `L` in `cfg.l_list`, and adaptive
    /// ones when `cfg.theta` is set.
    pub fn online_table(&self, cfg: &ExperimentConfig) -> Result<OnlineTable> {
        let mut table = OnlineTable { runs: Vec::new() };
        let Some(max_l) = cfg.l_list.iter().max() else {
            return Ok(table);
        };
        let bank = self.bank(cfg, max_l + cfg.p_bf)?;
        for &l in &cfg.l_list {
            let basis = bank.basis(self.mesh(), 0, l, cfg.p_bf)?;
            let plain = self.online(&basis, &OnlineParams { sweeps: cfg.sweeps, theta: None })?;
            let adaptive = match cfg.theta {
                Some(theta) => Some(self.online(&basis, &OnlineParams { sweeps: cfg.sweeps, theta: Some(theta) })?),
                None => None,
            };
            table.runs.push(OnlineTableRun { l, plain, adaptive });
        }
        Ok(table)
    }

    pub fn correlation_study(&self, cfg: &ExperimentConfig) -> Result<CorrelationStudy> {
        if cfg.p_bf == 0 {
            return Err(Error::Config("the correlation study needs p_bf ≥ 1".into()));
        }
        let pairs: Vec<(usize, usize)> = cfg.l_list.iter().map(|&l| (l, cfg.p_bf)).collect();
        let reports = self.offline_reports(cfg, &pairs)?;
        CorrelationStudy::from_reports(reports)
    }
}

pub struct OnlineTableRun {
    pub l: usize,
    pub plain: Vec<HistoryRow>,
    pub adaptive: Option<Vec<HistoryRow>>,
}

pub struct OnlineTable {
    pub runs: Vec<OnlineTableRun>,
}

/// Errors after each completed sweep (last slab row of every level).
pub fn sweep_errors(history: &[HistoryRow]) -> Vec<(usize, f64, f64)> {
    let n_slabs = history.iter().map(|r| r.slab + 1).max().unwrap_or(0);
    let dof_at = |level: usize| history.iter().filter(|r| r.level == level).map(|r| r.dof).sum::<usize>() / n_slabs;
    history
        .iter()
        .filter(|r| r.slab + 1 == n_slabs)
        .map(|r| (dof_at(r.level), r.e1, r.e2))
        .collect()
}

impl OnlineTable {
    /// Rows keyed by functions per neighborhood `k = L + level`: the mean
    /// per-slab dimension and `e1` (or `e2`) of every `L` that reaches `k`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W, use_e2: bool) -> std::io::Result<()> {
        let header: Vec<String> = self.runs.iter().map(|r| format!("L{}", r.l)).collect();
        writeln!(w, "basis,dof{}", header.iter().map(|h| format!(",{h}")).collect::<String>())?;
        let rows: Vec<(usize, Vec<(usize, f64, f64)>)> =
            self.runs.iter().map(|r| (r.l, sweep_errors(&r.plain))).collect();
        let (Some(lo), Some(hi)) = (
            rows.iter().map(|(l, _)| *l).min(),
            rows.iter().map(|(l, s)| l + s.len().saturating_sub(1)).max(),
        ) else {
            return Ok(());
        };
        for k in lo..=hi {
            let cells: Vec<Option<(usize, f64)>> = rows
                .iter()
                .map(|(l, s)| k.checked_sub(*l).and_then(|lv| s.get(lv)).map(|&(d, e1, e2)| (d, if use_e2 { e2 } else { e1 })))
                .collect();
            let dof = cells.iter().flatten().map(|c| c.0).next().unwrap_or(0);
            write!(w, "{k},{dof}")?;
            for c in cells {
                match c {
                    Some((_, e)) => write!(w, ",{e:.6e}")?,
                    None => write!(w, ",")?,
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub struct CorrelationStudy {
    pub reports: Vec<ErrorReport>,
    /// `corrcoef(1/Λ*, e2²)`; `NaN` when either sample is constant.
    pub correlation: f64,
}

impl CorrelationStudy {
    pub const HEADER: &'static str = "L,inv_lambda_star,e1_sq,e2_sq";

    pub fn from_reports(reports: Vec<ErrorReport>) -> Result<Self> {
        let inv: Vec<f64> = reports
            .iter()
            .map(|r| r.lambda_star.map(|l| 1.0 / l).ok_or_else(|| Error::Config("Λ* needs p_bf ≥ 1".into())))
            .collect::<Result<_>>()?;
        let e2sq: Vec<f64> = reports.iter().map(|r| r.e2 * r.e2).collect();
        let correlation = if reports.len() >= 2 { corrcoef(&inv, &e2sq)? } else { f64::NAN };
        Ok(Self { reports, correlation })
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::HEADER)?;
        for r in &self.reports {
            let inv = r.lambda_star.map_or(f64::NAN, |l| 1.0 / l);
            writeln!(w, "{},{:.6e},{:.6e},{:.6e}", r.l, inv, r.e1 * r.e1, r.e2 * r.e2)?;
        }
        writeln!(w, "# corrcoef={:.6}", self.correlation)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(level: usize, slab: usize, dof: usize, e1: f64) -> HistoryRow {
        HistoryRow { level, slab, dof, e1, e2: 2.0 * e1, max_r: 0.0, selected_count: 0 }
    }

    #[test]
    fn sweep_errors_take_the_last_slab() {
        let h = [row(0, 0, 9, 0.5), row(0, 1, 9, 0.5), row(1, 0, 18, 0.3), row(1, 1, 18, 0.1)];
        assert_eq!(sweep_errors(&h), vec![(9, 0.5, 1.0), (18, 0.1, 0.2)]);
    }

    #[test]
    fn online_table_layout() {
        let run = |l, n| OnlineTableRun {
            l,
            plain: (0..n).flat_map(|lv| [row(lv, 0, 9 * (l + lv), 0.1), row(lv, 1, 9 * (l + lv), 0.1)]).collect(),
            adaptive: None,
        };
        let table = OnlineTable { runs: vec![run(1, 3), run(2, 3)] };
        let mut out = Vec::new();
        table.write_csv(&mut out, false).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "basis,dof,L1,L2");
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("1,9,1.0") && lines[1].ends_with(','));
        assert!(lines[4].starts_with("4,36,,"));
    }

    #[test]
    fn two_point_correlation_is_exact() {
        let rep = |l, lam: f64, e2| ErrorReport {
            l,
            p_bf: 8,
            dim_off: 0,
            snapshot_ratio: 0.0,
            e1: 0.0,
            e2,
            lambda_star: Some(lam),
            seed: 0,
        };
        let study = CorrelationStudy::from_reports(vec![rep(6, 10.0, 0.5), rep(10, 20.0, 0.3)]).unwrap();
        assert!((study.correlation.abs() - 1.0).abs() < 1e-12);
        let flat = CorrelationStudy::from_reports(vec![rep(6, 10.0, 0.5), rep(10, 20.0, 0.5)]).unwrap();
        assert!(flat.correlation.is_nan());
    }
}
