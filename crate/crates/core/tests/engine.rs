use padmm::dataset::{partition, synthesize, SyntheticData, SyntheticKind};
use padmm::engine::{
    agent_rng, centralized_reference, perturb, run, x_update, EngineConfig, EngineError, Init, InnerSolver, Mode,
    XUpdateRule,
};
use padmm::exec::Execution;
use padmm::objective::{LocalObjective, LogisticShard, ObjectiveSpec, QuadraticTarget};
use padmm::privacy::{calibrate, sensitivity, NoiseSchedule};
use padmm::topology::{Topology, TopologyKind};

fn quadratics(n: usize) -> Vec<QuadraticTarget> {
    (0..n).map(|i| QuadraticTarget { target: vec![i as f64, -(i as f64) * 0.5] }).collect()
}

fn logistic(n_agents: usize, lambda: f64) -> (Topology, Vec<LogisticShard>) {
    let SyntheticData::Design(data) = synthesize(&SyntheticKind::LogisticBlobs {
        n: 240,
        dim: 4,
        separation: 1.0,
        seed: 2,
    })
    .unwrap() else {
        unreachable!()
    };
    let shards = partition(data.len(), n_agents, 1).unwrap();
    let spec = ObjectiveSpec::logistic(lambda, n_agents, 1.0).unwrap();
    let objs = shards
        .indices
        .iter()
        .map(|idx| LogisticShard::new(spec.clone(), data.subset(idx)))
        .collect();
    (Topology::generate(&TopologyKind::Ring, n_agents, 4).unwrap(), objs)
}

fn private_config(topo: &Topology, eta: f64, k: usize, eps: f64) -> EngineConfig {
    let sens: Vec<f64> = topo.degrees().iter().map(|&d| sensitivity(1.0, eta, d).unwrap()).collect();
    let schedule = calibrate(eps, 1e-4, 0.98, k, &sens).unwrap();
    EngineConfig::new(
        eta,
        k,
        Mode::Private {
            schedule,
            sensitivities: sens,
        },
    )
}

#[test]
fn trajectories_do_not_depend_on_execution_mode() {
    let (topo, objs) = logistic(4, 0.1);
    let mut cfg = private_config(&topo, 0.5, 30, 5.0);
    cfg.noise_seed = 17;
    cfg.execution = Execution::Sequential;
    let a = run(&topo, &objs, &cfg).unwrap();
    cfg.execution = Execution::Parallel;
    let b = run(&topo, &objs, &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_noise_schedule_reproduces_non_private_run() {
    let topo = Topology::generate(&TopologyKind::Complete, 5, 2).unwrap();
    let objs = quadratics(5);
    let plain = EngineConfig::new(1.0, 100, Mode::NonPrivate);
    let zero = EngineConfig::new(
        1.0,
        100,
        Mode::Private {
            schedule: NoiseSchedule::zero(5, 0.995, 100).unwrap(),
            sensitivities: vec![0.25; 5],
        },
    );
    let a = run(&topo, &objs, &plain).unwrap();
    let b = run(&topo, &objs, &zero).unwrap();
    for (sa, sb) in a.snapshots.iter().zip(&b.snapshots) {
        assert_eq!(sa.x, sb.x);
        assert_eq!(sa.x_tilde, sb.x_tilde);
        assert_eq!(sa.alpha, sb.alpha);
        assert_eq!(sa.loss_global_avg.to_bits(), sb.loss_global_avg.to_bits());
    }
}

#[test]
fn recorded_variances_decay_by_exact_multiplication() {
    let topo = Topology::generate(&TopologyKind::Complete, 3, 2).unwrap();
    let schedule = NoiseSchedule::new(vec![0.3, 0.2, 0.1], 0.97, 40).unwrap();
    let cfg = EngineConfig::new(
        1.0,
        40,
        Mode::Private {
            schedule,
            sensitivities: vec![0.5; 3],
        },
    );
    let t = run(&topo, &quadratics(3), &cfg).unwrap();
    assert_eq!(t.snapshots[1].sigma2, vec![0.3, 0.2, 0.1]);
    for w in t.snapshots[1..].windows(2) {
        for a in 0..3 {
            assert_eq!(w[1].sigma2[a], w[0].sigma2[a] * 0.97);
        }
    }
    // Each step adds Delta^2 / (2 sigma2) to the running rho.
    let s1 = &t.snapshots[1];
    assert!((s1.rho_cumulative[0] - 0.25 / (2.0 * 0.3)).abs() < 1e-15);
}

#[test]
fn noise_has_requested_variance() {
    let mut rng = agent_rng(5, 0);
    let draws = perturb(&vec![0.0; 100_000], 4.0, &mut rng);
    let mean = draws.iter().sum::<f64>() / draws.len() as f64;
    let var = draws.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / draws.len() as f64;
    assert!((var - 4.0).abs() < 0.1, "sample variance {var}");
    let again = perturb(&vec![0.0; 10], 4.0, &mut agent_rng(5, 0));
    assert_eq!(&draws[..10], &again[..]);
}

#[test]
fn complete_graphs_reach_consensus_at_the_minimizer() {
    for n in 2..=5 {
        let topo = Topology::generate(&TopologyKind::Complete, n, 2).unwrap();
        let objs = quadratics(n);
        let t = run(&topo, &objs, &EngineConfig::new(1.0, 500, Mode::NonPrivate)).unwrap();
        let mean = (n - 1) as f64 / 2.0;
        for x in &t.last().x {
            assert!((x[0] - mean).abs() < 1e-6 && (x[1] + mean * 0.5).abs() < 1e-6, "n={n}: {x:?}");
        }
    }
}

#[test]
fn dual_sum_stays_constant_along_a_run() {
    let (topo, objs) = logistic(5, 0.05);
    let t = run(&topo, &objs, &private_config(&topo, 0.5, 50, 1.0)).unwrap();
    for s in &t.snapshots {
        for j in 0..4 {
            let total: f64 = s.alpha.iter().map(|a| a[j]).sum();
            assert!(total.abs() < 1e-10, "k={} sum={total:e}", s.iteration);
        }
    }
}

#[test]
fn x_update_solves_the_optimality_equation() {
    let (topo, objs) = logistic(3, 0.2);
    let inner = InnerSolver::default();
    let alpha = [0.1, -0.2, 0.05, 0.0];
    let own = [0.3, 0.1, -0.4, 0.2];
    let nb = [0.5, -0.5, 0.2, 0.1];
    let (x, _) = x_update(&objs[0], &alpha, &own, &nb, topo.degree(0), 0.7, &[0.0; 4], &inner).unwrap();
    let n = topo.degree(0) as f64;
    let g = objs[0].update_gradient(&x);
    let residual: f64 = (0..4)
        .map(|j| g[j] + alpha[j] + 2.0 * 0.7 * n * x[j] - 0.7 * (n * own[j] + nb[j]))
        .map(|r| r * r)
        .sum::<f64>()
        .sqrt();
    assert!(residual < inner.tolerance);
}

#[test]
fn exhausted_inner_budget_is_reported() {
    let (topo, objs) = logistic(3, 0.2);
    let mut cfg = EngineConfig::new(0.01, 3, Mode::NonPrivate);
    cfg.inner = InnerSolver {
        max_iters: 1,
        tolerance: 1e-14,
    };
    assert!(matches!(run(&topo, &objs, &cfg), Err(EngineError::InnerSolverDiverged { .. })));
}

#[test]
fn literal_rule_matches_default_without_noise() {
    let topo = Topology::generate(&TopologyKind::Ring, 4, 2).unwrap();
    let objs = quadratics(4);
    let mut cfg = EngineConfig::new(0.8, 60, Mode::NonPrivate);
    let a = run(&topo, &objs, &cfg).unwrap();
    cfg.rule = XUpdateRule::Literal;
    let b = run(&topo, &objs, &cfg).unwrap();
    assert_eq!(a, b);
    // With noise the two variants diverge.
    let mut noisy = private_config(&topo, 0.8, 60, 2.0);
    let c = run(&topo, &objs, &noisy).unwrap();
    noisy.rule = XUpdateRule::Literal;
    let d = run(&topo, &objs, &noisy).unwrap();
    assert_ne!(c.last().x, d.last().x);
}

#[test]
fn consensus_residual_and_initialization() {
    let topo = Topology::generate(&TopologyKind::Complete, 3, 2).unwrap();
    let mut cfg = EngineConfig::new(1.0, 1, Mode::NonPrivate);
    cfg.init = Init::Uniform {
        lo: -0.1,
        hi: 0.1,
        seed: 4,
    };
    let t = run(&topo, &quadratics(3), &cfg).unwrap();
    let x0 = &t.snapshots[0].x;
    assert!(x0.iter().flatten().all(|v| (-0.1..0.1).contains(v)));
    let brute = topo
        .edges()
        .iter()
        .map(|&(a, b)| ((x0[a][0] - x0[b][0]).powi(2) + (x0[a][1] - x0[b][1]).powi(2)).sqrt())
        .fold(0.0, f64::max);
    assert_eq!(t.snapshots[0].consensus_residual, brute);
    assert_eq!(t.snapshots[0].x, t.snapshots[0].x_tilde);
    assert!(t.snapshots[0].rho_cumulative.iter().all(|r| r.is_infinite()));
}

#[test]
fn centralized_reference_reaches_tolerance() {
    let (_, objs) = logistic(3, 0.1);
    let x = centralized_reference(&objs, 1e-10, 100_000).unwrap();
    let mut g = vec![0.0; 4];
    for o in &objs {
        for (gj, v) in g.iter_mut().zip(o.gradient(&x)) {
            *gj += v;
        }
    }
    assert!(g.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-10);
}

#[test]
fn exhausted_reference_budget_is_reported() {
    // Separable data with no regularizer: the minimizer is at infinity and the
    // gradient only decays like exp(-x).
    use padmm::dataset::DesignMatrix;
    let data = DesignMatrix::new(vec![vec![1.0], vec![-1.0]], vec![1.0, -1.0]);
    let spec = ObjectiveSpec::logistic(0.0, 1, 1.0).unwrap();
    let objs = vec![LogisticShard::new(spec, data)];
    assert!(matches!(
        centralized_reference(&objs, 1e-12, 10),
        Err(EngineError::NotConverged { .. })
    ));
}
