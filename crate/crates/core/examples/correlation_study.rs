//! Links the indicator 1/Λ* to the squared energy error.
use stgms::cli::{build_problem, ExperimentConfig, Setup};

fn main() -> stgms::Result<()> {
    let cfg: ExperimentConfig = "n_coarse = 6\nfine_per_coarse = 6\ncontrast = 1e4\np_bf = 4\nL_list = 2,4,6,8,12".parse()?;
    let setup = Setup::new(build_problem(&cfg)?)?;
    let study = setup.correlation_study(&cfg)?;
    study.write_csv(std::io::stdout())?;
    Ok(())
}
