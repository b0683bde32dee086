use stgms::coefficient::{field_translated_inclusions, CoefficientField, Motion};
use stgms::diagnostics::compute_errors;
use stgms::fem::{solve_fine, Problem, Source, SpaceTimeFunction};
use stgms::grid::{build_mesh, GridSpec, Mesh, TimePartition};
use stgms::offline::{offline_spaces, solve_coarse, OfflineBasis, OfflineParams, SlabOperators, SlabSpace};
use stgms::pou::compute_partition;

fn toy_mesh() -> Mesh {
    build_mesh(GridSpec::unit_square(4, 4), TimePartition::new(1.6, 2, 4)).unwrap()
}

/// Adds a fine hat at every level for each interior fine node in the coarse
/// ring along `∂Ω`, attached to the nearest neighborhood.
fn add_ring_hats(mesh: &Mesh, spaces: &mut [SlabSpace]) {
    let fpc = mesh.fpc();
    let nc = mesh.nx / fpc;
    for sp in spaces.iter_mut() {
        for (i, j) in mesh.domain_rect().nodes() {
            let inner = i >= fpc && j >= fpc && i <= mesh.nx - fpc && j <= mesh.ny - fpc;
            if mesh.is_boundary_node(i, j) || inner {
                continue;
            }
            let center = (((i + fpc / 2) / fpc).clamp(1, nc - 1), ((j + fpc / 2) / fpc).clamp(1, nc - 1));
            let id = sp.nbhds.iter().position(|n| n.center == center).unwrap();
            let rect = sp.nbhds[id].rect;
            for l in 0..sp.n_levels {
                let mut f = SpaceTimeFunction::zeros(sp.slab, rect, sp.first_level, sp.n_levels);
                f.level_mut(l)[rect.local(i, j)] = 1.0;
                let label = sp.next_label(id);
                sp.push(id, label, f).unwrap();
            }
        }
    }
}

fn full_snapshot_errors(kappa: &CoefficientField, source: Source, ring: bool) -> (f64, f64) {
    let mesh = toy_mesh();
    let problem = Problem::new(mesh.clone(), kappa.clone(), source, Problem::sine_initial(&mesh)).unwrap();
    let uh = solve_fine(&problem).unwrap();
    let ops = SlabOperators::new(&problem).unwrap();
    let basis = OfflineBasis::from_full_snapshots(&mesh, kappa, 20_000).unwrap();
    let mut spaces = offline_spaces(&problem, &basis).unwrap();
    if ring {
        add_ring_hats(&mesh, &mut spaces);
    }
    let ms = solve_coarse(&problem, &ops, &spaces).unwrap().fine();
    compute_errors(&ops.forms, &uh, &ms).unwrap()
}

#[test]
fn full_snapshots_with_resolved_ring_reproduce_fine_solution() {
    let mesh = toy_mesh();
    let kappa = CoefficientField::constant(&mesh, 1.0);
    let (e1, e2) = full_snapshot_errors(&kappa, Source::Constant(1.0), true);
    assert!(e1 < 1e-6 && e2 < 1e-6, "e1 {e1:e} e2 {e2:e}");
}

#[test]
fn full_snapshot_floor_comes_from_boundary_ring() {
    let mesh = toy_mesh();
    let kappa = field_translated_inclusions(&mesh, 1e6, Motion::DEFAULT).unwrap();
    let (_, floor) = full_snapshot_errors(&kappa, Source::Constant(1.0), false);
    let (_, resolved) = full_snapshot_errors(&kappa, Source::Constant(1.0), true);
    assert!(floor > 0.1, "floor {floor:e}");
    assert!(resolved < 1e-3, "ring-resolved e2 {resolved:e}");
}

#[test]
fn partition_sum_is_one_away_from_boundary() {
    let mesh = toy_mesh();
    let kappa = field_translated_inclusions(&mesh, 1e6, Motion::DEFAULT).unwrap();
    let fpc = mesh.fpc();
    for slab in 0..2 {
        let sum = compute_partition(&mesh, &kappa, slab).unwrap().sum(&mesh);
        for (i, j) in mesh.domain_rect().nodes() {
            let s = sum[mesh.node_index(i, j)];
            if i >= fpc && j >= fpc && i <= mesh.nx - fpc && j <= mesh.ny - fpc {
                assert!((s - 1.0).abs() < 1e-10, "sum {s} at ({i}, {j})");
            } else {
                assert!((-1e-12..=1.0 + 1e-12).contains(&s));
            }
        }
    }
}

#[test]
fn offline_dimension_is_l_per_neighborhood() {
    let mesh = toy_mesh();
    let kappa = field_translated_inclusions(&mesh, 1e4, Motion::DEFAULT).unwrap();
    let basis = OfflineBasis::build(&mesh, &kappa, OfflineParams::new(&mesh, 3, 2, 7)).unwrap();
    for slab in 0..2 {
        assert_eq!(basis.dim(slab), 9 * 3);
        let ls = basis.lambda_star(slab).unwrap();
        assert!(ls > 0.0 && ls.is_finite());
        for b in &basis.slabs[slab] {
            assert!(b.eigenvalues.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
