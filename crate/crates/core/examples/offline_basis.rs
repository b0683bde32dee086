//! Offline multiscale errors against the number of basis functions.
use stgms::cli::{build_problem, offline_params, ExperimentConfig, Setup};
use stgms::diagnostics::ErrorReport;
use stgms::offline::SnapshotBank;

fn main() -> stgms::Result<()> {
    let cfg: ExperimentConfig = "n_coarse = 6\nfine_per_coarse = 6\ncontrast = 1e4\np_bf = 4".parse()?;
    let setup = Setup::new(build_problem(&cfg)?)?;
    let ls = [1, 2, 4, 8, 12];
    let bank = SnapshotBank::build(
        setup.mesh(),
        &setup.problem.kappa,
        offline_params(&cfg, 0, 0),
        &[cfg.seed],
        ls.iter().max().unwrap() + cfg.p_bf,
    )?;
    println!("{}", ErrorReport::HEADER);
    for l in ls {
        let (report, _, _) = setup.evaluate(&bank.basis(setup.mesh(), 0, l, cfg.p_bf)?)?;
        report.write_row(std::io::stdout())?;
    }
    Ok(())
}
