use padmm::bounds::{
    convex_bound, grid_search, reference_r_star, running_average, strong_constants, BoundsConfig,
    StrongBoundReport,
};
use padmm::engine::{run, EngineConfig, Mode};
use padmm::linalg::axpy;
use padmm::objective::{LocalObjective, QuadraticTarget};
use padmm::privacy::NoiseSchedule;
use padmm::topology::{SpectralData, Topology, TopologyKind};

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

fn check(report: &StrongBoundReport, expected: &[(&str, f64)], tol: f64) {
    for &(name, want) in expected {
        let got = match name {
            "kappa1" => report.kappa1,
            "zeta" => report.zeta,
            "h1" => report.h1,
            "h2" => report.h2,
            "theta" => report.theta,
            "kappa3" => report.kappa3,
            "eta" => report.eta_prescribed,
            "p" => report.p,
            "s2" => report.s2,
            "w" => report.w,
            "s3" => report.s3,
            _ => unreachable!(),
        };
        assert!(rel_close(got, want, tol), "{name}: {got} vs {want}");
    }
}

// Reference values: 40-digit evaluation of the displayed formulas, with
// spectra from an independent dense eigensolver.
#[test]
fn constants_match_independent_evaluation_two_agents() {
    let s = Topology::generate(&TopologyKind::Complete, 2, 1).unwrap().spectral().unwrap();
    let cfg = BoundsConfig {
        kappa2: 10.0,
        kappa4: 2.0,
        b: 0.1,
        theta: None,
    };
    let r = strong_constants(&s, 0.5, 1.0, &cfg).unwrap();
    check(
        &r,
        &[
            ("kappa1", 2.0),
            ("zeta", 0.81818181818181818),
            ("h1", 0.021645021645021646),
            ("h2", 0.083732057416267942),
            ("theta", 0.010822510822510823),
            ("kappa3", 10.612491872558332),
            ("eta", 0.70937038739128995),
            ("p", 8.4864573225892593),
            ("s2", 0.95850622406639004),
            ("w", 0.65311653116531166),
            ("s3", 37.522781765200275),
        ],
        1e-12,
    );
    assert!(r.feasible);
}

#[test]
fn constants_match_independent_evaluation_three_agents() {
    let s = Topology::generate(&TopologyKind::Complete, 3, 1).unwrap().spectral().unwrap();
    let cfg = BoundsConfig {
        kappa2: 5.0,
        kappa4: 3.0,
        b: 0.2,
        theta: Some(0.01),
    };
    let r = strong_constants(&s, 0.3, 2.0, &cfg).unwrap();
    check(
        &r,
        &[
            ("kappa1", 3.4),
            ("zeta", 0.12162162162162157),
            ("h1", 0.0023174000446727689),
            ("h2", -0.22474259974259976),
            ("kappa3", 11.0),
            ("eta", 3.2098333762097875),
            ("p", 71.842751842751919),
            ("s2", 0.24038461538461554),
            ("w", 19.230384807596216),
            ("s3", 1269.4945008178125),
        ],
        1e-12,
    );
    assert!(!r.feasible);
    assert!(r.violation.as_deref().unwrap().contains("phi_max^2(L+)"));
}

#[test]
fn feasibility_flag_is_consistent_across_the_grid() {
    for n in 2..=6 {
        for kind in [TopologyKind::Complete, TopologyKind::Ring] {
            let s = Topology::generate(&kind, n, 1).unwrap().spectral().unwrap();
            for mu in [0.1, 0.5, 1.0] {
                for &kappa2 in &[1.1, 2.0, 10.0] {
                    for &b in &[0.1, 0.5, 0.9] {
                        let cfg = BoundsConfig {
                            kappa2,
                            kappa4: 2.0,
                            b,
                            theta: None,
                        };
                        let r = strong_constants(&s, mu, 1.0, &cfg).unwrap();
                        let direct = (1.0 - b) * (1.0 + r.zeta) * s.phi_min_lplus.powi(2) > s.phi_max_lplus.powi(2)
                            && r.theta > 0.0
                            && r.theta < r.h1
                            && r.theta < r.h2
                            && r.w > 0.0
                            && r.w < 1.0;
                        assert_eq!(r.feasible, direct, "{kind} n={n} mu={mu} k2={kappa2} b={b}");
                    }
                }
            }
            let g = grid_search(&s, 0.5, 1.0, 2.0).unwrap();
            if g.certificate.is_some() {
                assert!(g.best.is_none(), "certificate contradicts a feasible candidate");
            }
        }
    }
}

fn quadratic_fixture(n: usize) -> (Topology, Vec<QuadraticTarget>, Vec<f64>) {
    let topo = Topology::generate(&TopologyKind::Complete, n, 2).unwrap();
    let objs: Vec<QuadraticTarget> = (0..n)
        .map(|i| QuadraticTarget {
            target: vec![i as f64, 1.0 - i as f64 * i as f64],
        })
        .collect();
    let mut mean = vec![0.0; 2];
    for o in &objs {
        axpy(1.0 / n as f64, &o.target, &mut mean);
    }
    (topo, objs, mean)
}

/// The accumulated r* agrees with the dual-optimality identity
/// `r* - r0 = -(1/(2 eta)) Q^+ grad f(x*)`.
#[test]
fn accumulated_r_star_matches_dual_identity() {
    for n in [2, 4] {
        let (topo, objs, x_star) = quadratic_fixture(n);
        let s = topo.spectral().unwrap();
        let eta = 0.6;
        let reference = run(&topo, &objs, &EngineConfig::new(eta, 3000, Mode::NonPrivate)).unwrap();
        let rs = reference_r_star(&s, &reference, 1e-10).unwrap();
        let grads: Vec<Vec<f64>> = objs.iter().map(|o| o.gradient(&x_star)).collect();
        let closed = SpectralData::apply(&s.q_pseudo_inverse().scale(-1.0 / (2.0 * eta)), &grads);
        for i in 0..n {
            for j in 0..2 {
                let gap = rs.r_star[i][j] - rs.r0[i][j];
                assert!((gap - closed[i][j]).abs() < 1e-8, "n={n} agent {i}: {gap} vs {}", closed[i][j]);
            }
        }
    }
}

#[test]
fn convex_bound_terms_match_direct_evaluation() {
    let topo = Topology::generate(&TopologyKind::Ring, 3, 2).unwrap();
    let s = topo.spectral().unwrap();
    let x0 = vec![vec![1.0, 0.0], vec![0.0, 2.0], vec![-1.0, 1.0]];
    let xs = vec![vec![0.5, 0.5]; 3];
    let sched = NoiseSchedule::new(vec![0.1, 0.2, 0.3], 0.9, 50).unwrap();
    let rep = convex_bound(&s, 0.5, &x0, &xs, Some(&sched), &[10, 100, 1000]).unwrap();
    // Ring of three is the triangle: L- eigenvalues {0, 3, 3}; L+ {4, 1, 1}.
    // ||Q x0||^2 = <x0, (L-/2) x0> = 0.5 * sum over edges ||x_a - x_b||^2.
    let edge_sq = (1.0 + 4.0) + (4.0 + 1.0) + (1.0 + 1.0);
    let q = 0.5 * 0.5 * edge_sq;
    let noise = 0.5 * 2.0 * 16.0 * 0.6 / (2.0 * 3.0 * 0.1);
    // <z, (L+/2) z> = 0.5 * sum over edges ||z_a + z_b||^2 with z = x0 - x*.
    let z: [[f64; 2]; 3] = [[0.5, -0.5], [-0.5, 1.5], [-1.5, 0.5]];
    let plus = |a: usize, b: usize| (z[a][0] + z[b][0]).powi(2) + (z[a][1] + z[b][1]).powi(2);
    let lplus = 0.5 * 0.5 * (plus(0, 1) + plus(0, 2) + plus(1, 2));
    for p in &rep.points {
        let k = p.k as f64;
        assert!(rel_close(p.q_term, q / k, 1e-12));
        assert!(rel_close(p.lplus_term, lplus / k, 1e-12));
        assert!(rel_close(p.noise_term, noise / k, 1e-12));
        assert!(p.q_term >= 0.0 && p.lplus_term >= 0.0 && p.noise_term >= 0.0);
    }
    for k in [10usize, 20, 50, 100, 200, 500, 1000] {
        let a = convex_bound(&s, 0.5, &x0, &xs, Some(&sched), &[k, 2 * k]).unwrap();
        assert!(rel_close(a.points[1].total() * 2.0, a.points[0].total(), 1e-12));
    }
}

#[test]
fn running_average_matches_brute_force() {
    let (topo, objs, _) = quadratic_fixture(3);
    let t = run(&topo, &objs, &EngineConfig::new(0.3, 40, Mode::NonPrivate)).unwrap();
    let avg = running_average(&t);
    for (k, a) in avg.iter().enumerate() {
        for i in 0..3 {
            for j in 0..2 {
                let brute: f64 = (1..=k + 1).map(|s| t.snapshots[s].x[i][j]).sum::<f64>() / (k + 1) as f64;
                assert!((a[i][j] - brute).abs() < 1e-12);
            }
        }
    }
}
