use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stgms::coefficient::CoefficientField;
use stgms::diagnostics::{compute_errors, v_norm};
use stgms::fem::{solve_fine, Problem, SlabForm, Source, SpaceTimeFunction};
use stgms::grid::{build_mesh, GridSpec, Mesh, TimePartition};

/// Q1 mass and stiffness on an `h × h` cell by 2×2 Gauss quadrature,
/// vertices ordered (0,0), (1,0), (1,1), (0,1).
fn q1_matrices(h: f64) -> ([[f64; 4]; 4], [[f64; 4]; 4]) {
    let corners = [(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0)];
    let g = 0.5 / 3f64.sqrt();
    let pts = [0.5 - g, 0.5 + g];
    let mut m = [[0.0; 4]; 4];
    let mut k = [[0.0; 4]; 4];
    for &x in &pts {
        for &y in &pts {
            let val = |c: (f64, f64)| (if c.0 == 0.0 { 1.0 - x } else { x }) * (if c.1 == 0.0 { 1.0 - y } else { y });
            let grad = |c: (f64, f64)| {
                let sx = if c.0 == 0.0 { -1.0 } else { 1.0 };
                let sy = if c.1 == 0.0 { -1.0 } else { 1.0 };
                let fy = if c.1 == 0.0 { 1.0 - y } else { y };
                let fx = if c.0 == 0.0 { 1.0 - x } else { x };
                (sx * fy / h, sy * fx / h)
            };
            for a in 0..4 {
                for b in 0..4 {
                    m[a][b] += 0.25 * h * h * val(corners[a]) * val(corners[b]);
                    let (ga, gb) = (grad(corners[a]), grad(corners[b]));
                    k[a][b] += 0.25 * h * h * (ga.0 * gb.0 + ga.1 * gb.1);
                }
            }
        }
    }
    (m, k)
}

/// Dense space-time system over all slabs at once, with the incoming state
/// of each slab coupled to the previous slab's final level.
fn monolithic(mesh: &Mesh, kappa: &CoefficientField, f: f64, beta: &[f64]) -> Vec<Vec<f64>> {
    let (nx, ny) = (mesh.nx, mesh.ny);
    let p = mesh.time.steps_per_slab();
    let n_slabs = mesh.time.n_slabs();
    let tau = mesh.time.tau();
    let (me, ke) = q1_matrices(mesh.hx);
    let node = |i: usize, j: usize| j * (nx + 1) + i;
    let nn = (nx + 1) * (ny + 1);
    let mut mass = DMatrix::<f64>::zeros(nn, nn);
    let mut stiff: Vec<DMatrix<f64>> = vec![DMatrix::zeros(nn, nn); mesh.time.n_fine_steps()];
    let offs = [(0, 0), (1, 0), (1, 1), (0, 1)];
    for j in 0..ny {
        for i in 0..nx {
            for a in 0..4 {
                for b in 0..4 {
                    let (ra, rb) = (node(i + offs[a].0, j + offs[a].1), node(i + offs[b].0, j + offs[b].1));
                    mass[(ra, rb)] += me[a][b];
                    for (s, k) in stiff.iter_mut().enumerate() {
                        k[(ra, rb)] += kappa.at(s, i, j) * ke[a][b];
                    }
                }
            }
        }
    }
    let interior: Vec<usize> = (1..ny).flat_map(|j| (1..nx).map(move |i| node(i, j))).collect();
    let ni = interior.len();
    let nl = p + 1;
    let idx = |slab: usize, l: usize, k: usize| (slab * nl + l) * ni + k;
    let size = n_slabs * nl * ni;
    let mut a = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    // Time factors of one step: (∫ φ_u' φ_v, ∫ φ_u φ_v) for local levels u, v ∈ {0, 1}.
    let dt = |lu: usize, lv: usize| (if lu == 1 { 0.5 } else { -0.5 }, if lu == lv { tau / 3.0 } else { tau / 6.0 });
    for slab in 0..n_slabs {
        for s in 0..p {
            let k = &stiff[slab * p + s];
            for lv in 0..2 {
                for lu in 0..2 {
                    let (d, w) = dt(lu, lv);
                    for (kv, &rv) in interior.iter().enumerate() {
                        for (ku, &ru) in interior.iter().enumerate() {
                            a[(idx(slab, s + lv, kv), idx(slab, s + lu, ku))] += d * mass[(rv, ru)] + w * k[(rv, ru)];
                        }
                        let load: f64 = (0..nn).map(|c| mass[(rv, c)]).sum::<f64>() * f * w;
                        rhs[idx(slab, s + lv, kv)] += load;
                    }
                }
            }
        }
        for (kv, &rv) in interior.iter().enumerate() {
            for (ku, &ru) in interior.iter().enumerate() {
                a[(idx(slab, 0, kv), idx(slab, 0, ku))] += mass[(rv, ru)];
                if slab > 0 {
                    a[(idx(slab, 0, kv), idx(slab - 1, p, ku))] -= mass[(rv, ru)];
                }
            }
            if slab == 0 {
                rhs[idx(0, 0, kv)] += (0..nn).map(|c| mass[(rv, c)] * beta[c]).sum::<f64>();
            }
        }
    }
    let sol = a.lu().solve(&rhs).expect("monolithic system is regular");
    (0..n_slabs)
        .map(|slab| {
            let mut out = vec![0.0; nl * nn];
            for l in 0..nl {
                for (k, &r) in interior.iter().enumerate() {
                    out[l * nn + r] = sol[idx(slab, l, k)];
                }
            }
            out
        })
        .collect()
}

#[test]
fn fine_solver_matches_monolithic_dense_system() {
    let mesh = build_mesh(GridSpec::unit_square(2, 3), TimePartition::new(0.6, 2, 3)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let values: Vec<f64> = (0..mesh.n_cells() * 6).map(|_| 10f64.powf(rng.random_range(0.0..3.0))).collect();
    let kappa = CoefficientField::from_values(mesh.nx, mesh.ny, 6, values).unwrap();
    let beta = Problem::sine_initial(&mesh);
    let problem = Problem::new(mesh.clone(), kappa.clone(), Source::Constant(1.0), beta.clone()).unwrap();
    let ours = solve_fine(&problem).unwrap();
    let oracle = monolithic(&mesh, &kappa, 1.0, &beta);
    for (u, v) in ours.iter().zip(&oracle) {
        let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let diff = u.values.iter().zip(v).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        assert!(diff < 1e-10 * scale, "max difference {diff:e} at scale {scale:e}");
    }
}

fn manufactured_error(n: usize) -> f64 {
    let pi = std::f64::consts::PI;
    let mesh = build_mesh(GridSpec::unit_square(n / 5, 5), TimePartition::new(1.0, 2, n / 4)).unwrap();
    let kappa = CoefficientField::constant(&mesh, 1.0);
    let exact = |x: f64, y: f64, t: f64| (1.0 - (-t).exp()) * (pi * x).sin() * (pi * y).sin();
    let source = Source::function(move |x, y, t| {
        let s = (pi * x).sin() * (pi * y).sin();
        (-t).exp() * s + 2.0 * pi * pi * (1.0 - (-t).exp()) * s
    });
    let problem = Problem::new(mesh.clone(), kappa, source, vec![0.0; mesh.n_nodes()]).unwrap();
    let u = solve_fine(&problem).unwrap();
    let reference: Vec<SpaceTimeFunction> = u
        .iter()
        .map(|f| {
            let mut r = f.clone();
            for l in 0..f.n_levels {
                let t = mesh.time.level_time(f.first_level + l);
                for (k, (i, j)) in f.rect.nodes().enumerate() {
                    let (x, y) = mesh.node_coords(i, j);
                    r.level_mut(l)[k] = exact(x, y, t);
                }
            }
            r
        })
        .collect();
    let forms: Vec<SlabForm> = (0..2).map(|s| problem.slab_form(s).unwrap()).collect();
    compute_errors(&forms, &reference, &u).unwrap().0
}

#[test]
fn second_order_convergence() {
    let errors: Vec<f64> = [10, 20, 40].into_iter().map(manufactured_error).collect();
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((3.2..=4.8).contains(&ratio), "errors {errors:?}");
    }
}

#[test]
fn energy_identity_for_random_functions() {
    let mesh = build_mesh(GridSpec::unit_square(4, 5), TimePartition::new(1.0, 2, 4)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let values: Vec<f64> = (0..mesh.n_cells() * 8).map(|_| rng.random_range(0.5..50.0)).collect();
    let kappa = CoefficientField::from_values(mesh.nx, mesh.ny, 8, values).unwrap();
    let form = SlabForm::for_slab(&mesh, &kappa, 1).unwrap();
    for _ in 0..20 {
        let u: Vec<f64> = (0..form.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let a = form.eval(&u, &u).unwrap();
        let v = v_norm(&form, &u).unwrap();
        assert!((a - v * v).abs() <= 1e-10 * a);
    }
}

#[test]
fn constant_function_has_domain_norm() {
    let mesh = build_mesh(GridSpec::unit_square(3, 3), TimePartition::new(1.0, 1, 3)).unwrap();
    let kappa = CoefficientField::constant(&mesh, 7.0);
    let form = SlabForm::for_slab(&mesh, &kappa, 0).unwrap();
    let v = v_norm(&form, &vec![1.0; form.len()]).unwrap();
    assert!((v * v - 1.0).abs() < 1e-12);
}
