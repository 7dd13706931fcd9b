use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_3, FRAC_PI_4};

use kirigami::material::rotation;
use kirigami::postprocess::LeastSquares;
use kirigami::*;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn presets() -> [MaterialModel; 3] {
    [
        MaterialModel::new(-0.9, 0.9, -FRAC_PI_4, FRAC_PI_3).unwrap(),
        MaterialModel::new(-0.9, 0.0, -FRAC_PI_4, FRAC_PI_3).unwrap(),
        MaterialModel::new(-1.6, 0.4, 0.0, FRAC_PI_3).unwrap(),
    ]
}

fn random_field(n: usize, rng: &mut ChaCha8Rng, scale: f64) -> ComplexField {
    ComplexField {
        values: (0..n)
            .map(|_| {
                Complex64::new(
                    scale * rng.gen_range(-1.0..1.0),
                    scale * rng.gen_range(-1.0..1.0),
                )
            })
            .collect(),
    }
}

fn quad(z: &[Complex64], a: &SparseComplexMatrix) -> Complex64 {
    let az = a.mul_vec(z);
    z.iter().zip(&az).map(|(x, y)| x.conj() * y).sum()
}

fn real_quad(z: &[Complex64], s: &CsrMatrix<f64>) -> f64 {
    let re: Vec<f64> = z.iter().map(|c| c.re).collect();
    let im: Vec<f64> = z.iter().map(|c| c.im).collect();
    let dot = |v: &[f64]| v.iter().zip(s.mul_vec(v)).map(|(a, b)| a * b).sum::<f64>();
    dot(&re) + dot(&im)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn crossed_mesh_counts_area_and_edges(nx in 1usize..12, ny in 1usize..12, length in 0.1f64..5.0) {
        let mesh = generate_crossed_mesh(nx, ny, length).unwrap();
        prop_assert_eq!(mesh.vertex_count(), (nx + 1) * (ny + 1) + nx * ny);
        prop_assert_eq!(mesh.triangle_count(), 4 * nx * ny);
        let area: f64 = (0..mesh.triangle_count()).map(|t| mesh.signed_area(t)).sum();
        prop_assert!((area - length * length).abs() <= 1e-12 * length * length);

        let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in mesh.triangles() {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                *edges.entry((a.min(b), a.max(b))).or_default() += 1;
            }
        }
        let hull: Vec<(usize, usize)> = edges.iter().filter(|(_, &c)| c == 1).map(|(&e, _)| e).collect();
        prop_assert!(edges.values().all(|&c| c == 1 || c == 2));
        let mut tagged: Vec<(usize, usize)> = mesh
            .boundary_edges()
            .iter()
            .map(|e| (e.vertices[0].min(e.vertices[1]), e.vertices[0].max(e.vertices[1])))
            .collect();
        tagged.sort_unstable();
        let mut hull_sorted = hull.clone();
        hull_sorted.sort_unstable();
        prop_assert_eq!(tagged, hull_sorted);
        prop_assert_eq!(hull.len(), 2 * (nx + ny));
    }

    #[test]
    fn clamp_is_idempotent_and_bounded(xi in -10.0f64..10.0, which in 0usize..3) {
        let m = presets()[which];
        let c = m.clamp(xi);
        prop_assert_eq!(m.clamp(c), c);
        prop_assert_eq!(m.b_hat(xi), m.b_hat(c));
        let b = m.b_hat(xi);
        prop_assert!(b.d11.abs().max(b.d22.abs()) <= m.bound());
    }

    #[test]
    fn coefficient_is_lipschitz(x1 in -2.0f64..2.0, x2 in -2.0f64..2.0, which in 0usize..3) {
        let m = presets()[which];
        let (b1, b2) = (m.b_hat(x1), m.b_hat(x2));
        let k = m.lipschitz();
        prop_assert!((b1.d11 - b2.d11).abs() <= k * (x1 - x2).abs() + 1e-15);
        prop_assert!((b1.d22 - b2.d22).abs() <= k * (x1 - x2).abs() + 1e-15);
    }

    #[test]
    fn derivative_matches_central_differences(t in 0.02f64..0.98, which in 0usize..3) {
        let m = presets()[which];
        let xi = m.xi_minus() + t * (m.xi_plus() - m.xi_minus());
        let h = 1e-6;
        let d = m.db_hat_dxi(xi);
        let (p, q) = (m.b_hat(xi + h), m.b_hat(xi - h));
        for (exact, fd) in [(d.d11, (p.d11 - q.d11) / (2.0 * h)), (d.d22, (p.d22 - q.d22) / (2.0 * h))] {
            prop_assert!((exact - fd).abs() <= 1e-5 * exact.abs().max(1.0), "{} vs {}", exact, fd);
        }
    }

    #[test]
    fn rotation_is_special_orthogonal(gamma in -10.0f64..10.0) {
        let r = rotation(gamma);
        let det = r[0][0] * r[1][1] - r[0][1] * r[1][0];
        prop_assert!((det - 1.0).abs() <= 1e-14);
        for i in 0..2 {
            for j in 0..2 {
                let dot = r[0][i] * r[0][j] + r[1][i] * r[1][j];
                let expected = if i == j { 1.0 } else { 0.0 };
                prop_assert!((dot - expected).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn symmetric_pattern_has_antisymmetric_gammas(xi in -0.7f64..1.0, beta in 0.0f64..0.95) {
        let m = MaterialModel::new(-beta, beta, -FRAC_PI_4, FRAC_PI_3).unwrap();
        prop_assert!((m.mu1(xi) - m.mu2(xi)).abs() <= 1e-15);
        let (g12, g21) = (m.gamma12(xi).unwrap(), m.gamma21(xi).unwrap());
        prop_assert!((g12 + g21).abs() <= 1e-14 * g12.abs().max(1.0));
    }

    #[test]
    fn operator_is_complex_symmetric_and_dissipative(seed in 0u64..1000, which in 0usize..3, eps in 0.01f64..2.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = generate_crossed_mesh(5, 4, 1.5).unwrap();
        let m = presets()[which];
        let spec = ProblemSpec::with_material(&mesh, m).epsilon(eps);
        let asm = Assembler::new(&spec).unwrap();
        let xi = random_field(mesh.vertex_count(), &mut rng, 1.0);
        let a = asm.operator(&xi).unwrap();
        let dense = a.to_dense();
        let scale = a.max_abs();
        for i in 0..dense.len() {
            for j in 0..i {
                prop_assert!((dense[i][j] - dense[j][i]).norm() <= 1e-13 * scale);
            }
        }

        let s = asm.stiffness();
        let mut z = random_field(mesh.vertex_count(), &mut rng, 1.0);
        for (zi, &d) in z.values.iter_mut().zip(asm.dirichlet_mask()) {
            if d {
                *zi = Complex64::new(0.0, 0.0);
            }
        }
        let q = quad(&z.values, &a);
        let grad_sq = real_quad(&z.values, &s);
        prop_assert!((q.im - eps * grad_sq).abs() <= 1e-12 * eps * grad_sq);
        prop_assert!(q.re >= -m.bound() * grad_sq * (1.0 + 1e-12));
    }

    #[test]
    fn linear_fields_pass_the_patch_test(a in 0.2f64..3.0, b in 0.2f64..3.0, c0 in -1.0f64..1.0, cx in -1.0f64..1.0) {
        // xi = c0 + cx x solves div(diag(a, b) grad xi) = 0 with zero flux on
        // the horizontal sides
        let mesh = generate_crossed_mesh(6, 5, 1.0).unwrap();
        let spec = ProblemSpec::new(&mesh, Coefficient::Constant(DiagTensor2::new(a, b)))
            .dirichlet(move |x, _| c0 + cx * x);
        let (xi, report) = newton_solve(&spec, &NonlinearSettings::default()).unwrap();
        prop_assert!(report.iterations <= 1);
        for (z, p) in xi.values.iter().zip(mesh.vertices()) {
            prop_assert!((z.re - (c0 + cx * p[0])).abs() <= 1e-12);
            prop_assert!(z.im.abs() <= 1e-12);
        }
        let r = assemble_residual(&spec, &ComplexField::from_real(
            &mesh.vertices().iter().map(|p| c0 + cx * p[0]).collect::<Vec<_>>(),
        )).unwrap();
        prop_assert!(r.iter().all(|v| v.norm() <= 1e-12));
    }

    #[test]
    fn least_squares_gauge_and_optimality(seed in 0u64..1000, anchor2 in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = generate_crossed_mesh(4, 4, 1.5).unwrap();
        let m = presets()[2];
        let xi = ComplexField::from_real(&(0..mesh.vertex_count()).map(|_| rng.gen_range(0.0..1.0)).collect::<Vec<_>>());
        let g0 = reconstruct_gamma(&mesh, &m, &xi, 0).unwrap();
        let g1 = reconstruct_gamma(&mesh, &m, &xi, anchor2).unwrap();
        let shift: Vec<f64> = g0.values.iter().zip(&g1.values).map(|(a, b)| a - b).collect();
        let spread = shift.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - shift.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(spread <= 1e-10);
        prop_assert!(kirigami::postprocess::gamma_normal_residual(&mesh, &m, &xi, &g0, 0).unwrap() <= 1e-10);

        let y0 = reconstruct_yeff(&mesh, &m, &xi, &g0, 0).unwrap();
        let y1 = reconstruct_yeff(&mesh, &m, &xi, &g0, anchor2).unwrap();
        for k in 0..2 {
            let d: Vec<f64> = y0.values.iter().zip(&y1.values).map(|(a, b)| a[k] - b[k]).collect();
            let spread = d.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - d.iter().cloned().fold(f64::INFINITY, f64::min);
            prop_assert!(spread <= 1e-10);
        }
    }

    #[test]
    fn compatible_targets_are_recovered(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = generate_crossed_mesh(5, 3, 1.5).unwrap();
        let p: Vec<f64> = (0..mesh.vertex_count()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let ls = LeastSquares::new(&mesh, 3).unwrap();
        let tris = mesh.triangles();
        let target = |t: usize, _: &[f64; 3]| ls.element(t).gradient(tris[t].map(|i| p[i]));
        let rec = ls.solve(target).unwrap();
        for (r, v) in rec.values.iter().zip(&p) {
            prop_assert!((r - (v - p[3])).abs() <= 1e-9);
        }
    }
}

#[test]
fn assembly_is_independent_of_thread_count() {
    let mesh = generate_crossed_mesh(12, 12, 1.5).unwrap();
    let spec = ProblemSpec::with_material(&mesh, presets()[2]).epsilon(0.071);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xi = random_field(mesh.vertex_count(), &mut rng, 0.6);
    let assemble = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            let asm = Assembler::new(&spec).unwrap();
            (asm.operator(&xi).unwrap(), asm.jacobian(&xi).unwrap())
        })
    };
    let (a1, j1) = assemble(1);
    let (a4, j4) = assemble(4);
    assert_eq!(a1.values(), a4.values());
    assert_eq!(j1.values(), j4.values());
}
