use faer::Mat;
use nalgebra::DMatrix;
use stgms::coefficient::{field_translated_inclusions, Motion};
use stgms::fem::SpaceTimeFunction;
use stgms::grid::{build_mesh, neighborhood, oversample, GridSpec, Mesh, TimePartition};
use stgms::offline::{assemble_spectral_forms, slab_setup, solve_spectral, SpectralOperator};
use stgms::snapshot::RegionSolver;

fn to_na(m: &Mat<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)])
}

fn setting() -> (Mesh, SpectralOperator, Vec<SpaceTimeFunction>) {
    let mesh = build_mesh(GridSpec::unit_square(4, 4), TimePartition::new(1.0, 2, 3)).unwrap();
    let kappa = field_translated_inclusions(&mesh, 1e4, Motion::DEFAULT).unwrap();
    let slab = 1;
    let setup = slab_setup(&mesh, &kappa, slab).unwrap();
    let nb = neighborhood(&mesh, 2, 2).unwrap();
    let region = oversample(&mesh, &nb, 4, 0, slab).unwrap();
    let solver = RegionSolver::new(&mesh, &kappa, &region).unwrap();
    let snaps = solver.randomized(5, 0..12).unwrap();
    let op = SpectralOperator::new(&mesh, &kappa, &setup.tilde, region.rect, slab).unwrap();
    (mesh, op, snaps)
}

#[test]
fn stiffness_form_matches_slab_energy() {
    let (_, op, snaps) = setting();
    let (a, s) = assemble_spectral_forms(&op, &snaps).unwrap();
    let last = op.form.n_levels() - 1;
    for (k, psi) in snaps.iter().enumerate() {
        let u = &psi.values;
        let energy = op.form.gradient_energy(u) + 0.5 * op.form.level_mass(u, last) + 0.5 * op.form.level_mass(u, 0);
        assert!((a[(k, k)] - energy).abs() <= 1e-10 * energy);
        let via_form = op.form.eval(u, u).unwrap();
        assert!((a[(k, k)] - via_form).abs() <= 1e-10 * energy);
        assert!(s[(k, k)] >= op.form.level_mass(u, 0) * (1.0 - 1e-12));
    }
}

#[test]
fn eigenpairs_match_dense_oracle() {
    let (_, op, snaps) = setting();
    let (a, s) = assemble_spectral_forms(&op, &snaps).unwrap();
    let pair = solve_spectral(a.as_ref(), s.as_ref(), 0, 1).unwrap();
    let (an, sn) = (to_na(&a), to_na(&s));
    let l = sn.clone().cholesky().expect("S is positive definite").l();
    let linv = l.clone().try_inverse().unwrap();
    let c = &linv * &an * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let mut oracle: Vec<f64> = c.symmetric_eigen().eigenvalues.iter().copied().collect();
    oracle.sort_by(f64::total_cmp);
    let n = oracle.len();
    assert_eq!(pair.values.len(), n);
    for (x, y) in pair.values.iter().zip(&oracle) {
        assert!((x - y).abs() <= 1e-7 * y.abs().max(1e-6), "{x} vs {y}");
    }
    assert!(pair.values.windows(2).all(|w| w[0] <= w[1]));
    assert!(pair.values[0] >= -1e-10);
    let v = to_na(&pair.vectors);
    let gram = v.transpose() * &sn * &v;
    let av = v.transpose() * &an * &v;
    for i in 0..n {
        for j in 0..n {
            let id = if i == j { 1.0 } else { 0.0 };
            assert!((gram[(i, j)] - id).abs() < 1e-8, "S-gram ({i}, {j}) = {}", gram[(i, j)]);
            let lam = if i == j { pair.values[i] } else { 0.0 };
            assert!((av[(i, j)] - lam).abs() < 1e-7 * pair.values[n - 1]);
        }
    }
}

#[test]
fn duplicated_snapshot_adds_one_null_mode() {
    let (_, op, mut snaps) = setting();
    let (a, s) = assemble_spectral_forms(&op, &snaps).unwrap();
    let base = solve_spectral(a.as_ref(), s.as_ref(), 0, 1).unwrap();
    snaps.push(snaps[3].clone());
    let (a, s) = assemble_spectral_forms(&op, &snaps).unwrap();
    let dup = solve_spectral(a.as_ref(), s.as_ref(), 0, 1).unwrap();
    assert!(dup.values.iter().all(|v| v.is_finite()));
    // The difference of the two copies is a null direction of both forms.
    assert!(dup.values[0].abs() < 1e-8 * base.values[0]);
    for (x, y) in dup.values[1..].iter().zip(&base.values) {
        assert!((x - y).abs() <= 1e-6 * y.abs().max(1e-6), "{x} vs {y}");
    }
}
