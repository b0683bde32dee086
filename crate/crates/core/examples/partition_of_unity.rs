//! Partition of unity at high contrast: the sum is one away from the boundary ring.
use stgms::coefficient::{field_translated_inclusions, Motion};
use stgms::grid::{build_mesh, GridSpec, TimePartition};
use stgms::pou::compute_partition;

fn main() -> stgms::Result<()> {
    let mesh = build_mesh(GridSpec::unit_square(10, 10), TimePartition::new(1.6, 2, 8))?;
    let kappa = field_translated_inclusions(&mesh, 1e6, Motion::DEFAULT)?;
    let pou = compute_partition(&mesh, &kappa, 0)?;
    let sum = pou.sum(&mesh);
    let fpc = mesh.fpc();
    let (mut inner, mut ring) = (0.0f64, f64::INFINITY);
    for (i, j) in mesh.domain_rect().nodes() {
        let s = sum[mesh.node_index(i, j)];
        let away = (fpc..=mesh.nx - fpc).contains(&i) && (fpc..=mesh.ny - fpc).contains(&j);
        if away {
            inner = inner.max((s - 1.0).abs());
        } else if !mesh.is_boundary_node(i, j) {
            ring = ring.min(s);
        }
    }
    println!("{} functions; max |Σχ − 1| inside = {inner:.2e}; min Σχ in the boundary ring = {ring:.3}", pou.functions.len());
    Ok(())
}
