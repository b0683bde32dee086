//! Fine space-time reference solve on the default moving-inclusion field.
use stgms::coefficient::{field_translated_inclusions, Motion};
use stgms::diagnostics::v_norm;
use stgms::fem::{solve_fine, Problem, Source};
use stgms::grid::{build_mesh, GridSpec, TimePartition};

fn main() -> stgms::Result<()> {
    let mesh = build_mesh(GridSpec::unit_square(10, 5), TimePartition::new(1.6, 2, 8))?;
    let kappa = field_translated_inclusions(&mesh, 1e4, Motion::DEFAULT)?;
    let initial = Problem::sine_initial(&mesh);
    let problem = Problem::new(mesh, kappa, Source::Constant(1.0), initial)?;
    let u = solve_fine(&problem)?;
    for (slab, f) in u.iter().enumerate() {
        let form = problem.slab_form(slab)?;
        println!(
            "slab {slab}: max |u| = {:.4}, |u(T_n)|_max = {:.4}, V-norm = {:.4}",
            f.max_abs(),
            f.last().iter().fold(0.0f64, |m, v| m.max(v.abs())),
            v_norm(&form, &f.values)?
        );
    }
    Ok(())
}
