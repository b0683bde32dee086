//! Residual-driven online enrichment, uniform and θ-adaptive.
use stgms::cli::{build_problem, offline_params, ExperimentConfig, Setup};
use stgms::offline::OfflineBasis;
use stgms::online::{HistoryRow, OnlineParams};

fn main() -> stgms::Result<()> {
    let cfg: ExperimentConfig = "n_coarse = 6\nfine_per_coarse = 6\ncontrast = 100\nL = 2\np_bf = 4".parse()?;
    let setup = Setup::new(build_problem(&cfg)?)?;
    let basis = OfflineBasis::build(setup.mesh(), &setup.problem.kappa, offline_params(&cfg, cfg.l, cfg.p_bf))?;
    for theta in [None, Some(0.7)] {
        println!("theta = {theta:?}\n{}", HistoryRow::HEADER);
        for row in setup.online(&basis, &OnlineParams { sweeps: 3, theta })? {
            row.write_row(std::io::stdout())?;
        }
    }
    Ok(())
}
