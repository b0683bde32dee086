//! Full and randomized snapshot spaces of one neighborhood.
use stgms::coefficient::{field_translated_inclusions, Motion};
use stgms::grid::{build_mesh, oversample, GridSpec, TimePartition};
use stgms::snapshot::{full_snapshot_count, generate_full, generate_randomized, snapshot_ratio, DEFAULT_FULL_CAP};

fn main() -> stgms::Result<()> {
    let mesh = build_mesh(GridSpec::unit_square(10, 10), TimePartition::new(1.6, 2, 8))?;
    let kappa = field_translated_inclusions(&mesh, 1e6, Motion::DEFAULT)?;
    let nbhd = mesh.neighborhood(5, 5)?;
    let p = mesh.time.steps_per_slab();
    let full = full_snapshot_count(nbhd.rect, p);
    println!("neighborhood {}: {} fine nodes, full snapshot count {full}", nbhd.id, nbhd.rect.n_nodes());
    for (l, p_bf) in [(11, 1), (11, 8), (2, 8)] {
        println!("  ratio L={l:>2} p_bf={p_bf}: {:.4}", snapshot_ratio(l, p_bf, full)?);
    }

    let region = oversample(&mesh, &nbhd, mesh.fpc(), 2, 1)?;
    let set = generate_randomized(&mesh, &kappa, &region, 12, 7)?;
    println!(
        "randomized: {} snapshots on {}x{} nodes, {} levels from level {}",
        set.len(),
        set.rect.width() + 1,
        set.rect.height() + 1,
        set.n_levels,
        set.first_level
    );

    let small = build_mesh(GridSpec::unit_square(4, 4), TimePartition::new(1.6, 2, 4))?;
    let small_kappa = field_translated_inclusions(&small, 1e6, Motion::DEFAULT)?;
    let full_set = generate_full(&small, &small_kappa, &small.neighborhood(2, 2)?, 0, DEFAULT_FULL_CAP)?;
    println!("full snapshots on the 4x4 toy mesh: {}", full_set.len());
    Ok(())
}
