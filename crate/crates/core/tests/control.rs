use ndarray::{array, Array1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use whf_core::control::{
    action, constraint_residual, duality_gap, feasible_path, gamma_study, solve, solve_special, stationarity_residual,
    ControlProblem, Variant,
};
use whf_core::graph::{Density, Graph};
use whf_core::noise::{sample_wiener, WongZakaiPath};

fn wz(seed: u64, delta: f64, dt: f64) -> WongZakaiPath {
    WongZakaiPath::new(sample_wiener(seed, 1.0, dt).unwrap(), delta).unwrap()
}

fn density(v: Array1<f64>) -> Density {
    Density::new(v).unwrap()
}

/// Objective of the 3-path additive problem written over interior densities
/// only: on a tree the transfer flux is determined by the density path.
fn reduced_objective(p: &ControlProblem, sigma: &[f64], x: &[f64]) -> f64 {
    let m_int = p.intervals();
    let h = p.h();
    let rho = |k: usize| -> [f64; 3] {
        if k == 0 {
            let r = p.rho_a();
            [r[0], r[1], r[2]]
        } else if k == m_int {
            let r = p.rho_b();
            [r[0], r[1], r[2]]
        } else {
            let (a, b) = (x[2 * (k - 1)], x[2 * (k - 1) + 1]);
            [a, b, 1.0 - a - b]
        }
    };
    let mut total = 0.0;
    for k in 0..m_int {
        let (r0, r1) = (rho(k), rho(k + 1));
        if r1.iter().any(|&v| v <= 0.0) {
            return f64::INFINITY;
        }
        // Edge (0,1) carries node 0's loss, edge (1,2) carries node 2's gain.
        let f01 = -(r1[0] - r0[0]) / h;
        let f12 = (r1[2] - r0[2]) / h;
        let a01 = 0.25 * (r0[0] + r0[1] + r1[0] + r1[1]);
        let a12 = 0.25 * (r0[1] + r0[2] + r1[1] + r1[2]);
        let s = p.slopes()[k];
        let m01 = f01 - (sigma[1] - sigma[0]) * s * a01;
        let m12 = f12 - (sigma[2] - sigma[1]) * s * a12;
        total += h * 0.5 * (m01 * m01 / a01 + m12 * m12 / a12);
    }
    total
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        a.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Damped Newton with finite-difference derivatives on the reduced problem.
fn newton_oracle(p: &ControlProblem, sigma: &[f64]) -> f64 {
    let n = 2 * (p.intervals() - 1);
    let mut x: Vec<f64> = (1..p.intervals())
        .flat_map(|k| {
            let lam = k as f64 / p.intervals() as f64;
            let r = p.rho_a() * (1.0 - lam) + p.rho_b() * lam;
            [r[0], r[1]]
        })
        .collect();
    let f = |x: &[f64]| reduced_objective(p, sigma, x);
    let grad = |x: &[f64], eps: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
                xp[i] += eps;
                xm[i] -= eps;
                (f(&xp) - f(&xm)) / (2.0 * eps)
            })
            .collect()
    };
    for _ in 0..60 {
        let g = grad(&x, 1e-7);
        let eps = 1e-5;
        let hess: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[i] += eps;
                xm[i] -= eps;
                let (gp, gm) = (grad(&xp, 1e-7), grad(&xm, 1e-7));
                (0..n).map(|j| (gp[j] - gm[j]) / (2.0 * eps)).collect()
            })
            .collect();
        let dir = solve_dense(hess, g.iter().map(|v| -v).collect());
        let f0 = f(&x);
        let mut t = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            if f(&trial) <= f0 {
                x = trial;
                break;
            }
            t *= 0.5;
            if t < 1e-12 {
                return f0;
            }
        }
        if g.iter().map(|v| v.abs()).fold(0.0, f64::max) < 1e-9 {
            break;
        }
    }
    f(&x)
}

#[test]
fn additive_three_path_matches_second_solver() {
    let sigma = vec![1.0, 0.0, 0.0];
    let p = ControlProblem::new(
        Graph::path(3).unwrap(),
        &density(array![0.5, 0.3, 0.2]),
        &density(array![0.2, 0.3, 0.5]),
        Variant::Additive { sigma: sigma.clone() },
        wz(17, 0.05, 1.0 / 160.0),
        20,
    )
    .unwrap();
    let sol = solve(&p).unwrap();
    let oracle = newton_oracle(&p, &sigma);
    assert!((sol.action - oracle).abs() <= 1e-4 * oracle, "solver {} oracle {}", sol.action, oracle);
}

#[test]
fn special_variant_stays_on_the_boundary() {
    let p = ControlProblem::new(
        Graph::path(3).unwrap(),
        &density(array![0.0, 0.0, 1.0]),
        &density(array![0.0, 0.5, 0.5]),
        Variant::Special { epsilon: 0.1 },
        wz(5, 0.05, 1.0 / 160.0),
        40,
    )
    .unwrap();
    let sol = solve_special(&p).unwrap();
    let max_rho1 = sol.rho.iter().map(|r| r[0]).fold(0.0, f64::max);
    assert!(max_rho1 <= 1e-6, "max rho_1 = {max_rho1}");
    assert!(sol.residual <= 1e-8);
    // No flux crosses an edge whose mean vanishes.
    for k in 0..p.intervals() {
        let mid = (&sol.rho[k] + &sol.rho[k + 1]) * 0.5;
        for (e, edge) in p.graph().edges().iter().enumerate() {
            if mid[edge.i] + mid[edge.j] == 0.0 {
                assert_eq!(sol.m[k][e], 0.0);
            }
        }
    }
}

fn random_density(rng: &mut ChaCha8Rng, n: usize, boundary: bool) -> Array1<f64> {
    let mut v = Array1::from_iter((0..n).map(|_| rng.random_range(0.05..1.0)));
    if boundary {
        let zeros = rng.random_range(1..n);
        for _ in 0..zeros {
            let i = rng.random_range(0..n);
            v[i] = 0.0;
        }
        if v.sum() == 0.0 {
            v[0] = 1.0;
        }
    }
    let s = v.sum();
    v / s
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> Graph {
    let mut edges = Vec::new();
    for j in 1..n {
        let i = rng.random_range(0..j);
        edges.push((i, j, rng.random_range(0.5..2.0), 1.0));
    }
    for i in 0..n {
        for j in i + 1..n {
            if !edges.iter().any(|e| e.0 == i && e.1 == j) && rng.random_bool(0.3) {
                edges.push((i, j, rng.random_range(0.5..2.0), 1.0));
            }
        }
    }
    Graph::new(n, &edges).unwrap()
}

#[test]
fn feasible_paths_for_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for case in 0..50 {
        let n = rng.random_range(2..=6);
        let g = random_graph(&mut rng, n);
        let a = random_density(&mut rng, n, case % 2 == 0);
        let b = random_density(&mut rng, n, case % 3 == 0);
        let variant = if case % 4 == 3 {
            Variant::Special { epsilon: 0.05 }
        } else {
            Variant::Additive { sigma: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect() }
        };
        let p = ControlProblem::new(g, &density(a), &density(b), variant, wz(case, 0.125, 1.0 / 64.0), 32).unwrap();
        let (rho, m) = feasible_path(&p).unwrap();
        assert!(constraint_residual(&p, &rho, &m).unwrap() <= 1e-12, "case {case}");
        assert!(action(&p, &rho, &m).unwrap().is_finite(), "case {case}");
    }
}

#[test]
fn random_additive_instances_are_certified() {
    let mut rng = ChaCha8Rng::seed_from_u64(29);
    for case in 0..20u64 {
        let n = rng.random_range(3..=5);
        let g = random_graph(&mut rng, n);
        let a = random_density(&mut rng, n, false);
        let b = random_density(&mut rng, n, false);
        let sigma: Vec<f64> = (0..n).map(|_| rng.random_range(-0.3..0.3)).collect();
        let p = ControlProblem::new(
            g,
            &density(a),
            &density(b),
            Variant::Additive { sigma },
            wz(100 + case, 0.0625, 1.0 / 256.0),
            32,
        )
        .unwrap();
        let sol = solve(&p).unwrap();
        assert!(sol.gap <= 1e-3 * sol.action, "case {case}: gap {} action {}", sol.gap, sol.action);
        assert!(sol.dual_value <= sol.action + 1e-8);
        assert!(sol.residual <= 1e-8);
        assert_eq!(action(&p, &sol.rho, &sol.m).unwrap(), sol.action);
        assert!((duality_gap(&p, &sol).unwrap() - sol.gap).abs() <= 1e-12);
        for r in &sol.rho {
            assert!((r.sum() - 1.0).abs() <= 1e-10);
        }
        if let Some(res) = stationarity_residual(&p, &sol, 1e-6) {
            assert!(res <= 1e-3, "case {case}: stationarity {res}");
        }
    }
}

#[test]
fn gamma_study_on_two_nodes() {
    let p = ControlProblem::new(
        Graph::path(2).unwrap(),
        &density(array![0.3, 0.7]),
        &density(array![0.7, 0.3]),
        Variant::Special { epsilon: 0.0 },
        wz(1, 0.05, 1.0 / 160.0),
        40,
    )
    .unwrap();
    // A positive terminal value keeps 2 eps W(1) + eps^2 mean(s^2) away from zero.
    assert!(p.noise().wiener().values().last().unwrap() > &0.0);
    let study = gamma_study(&p, &[0.2, 0.1, 0.05]).unwrap();
    assert!((study.reference_action - 0.16).abs() <= 1e-4);
    assert!(study.monotone, "{study:?}");
    let zero = gamma_study(&p, &[0.0]).unwrap();
    assert_eq!(zero.rows[0].deviation, 0.0);
}

#[test]
fn gamma_study_on_three_nodes() {
    let p = ControlProblem::new(
        Graph::path(3).unwrap(),
        &density(array![0.6, 0.3, 0.1]),
        &density(array![0.1, 0.3, 0.6]),
        Variant::Special { epsilon: 0.0 },
        wz(1, 0.05, 1.0 / 160.0),
        40,
    )
    .unwrap();
    let study = gamma_study(&p, &[0.2, 0.1, 0.05]).unwrap();
    assert!(study.monotone, "{study:?}");
}
