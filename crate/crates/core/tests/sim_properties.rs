use cifusion::ci::CostFunction;
use cifusion::linalg::loewner_compare;
use cifusion::sim::{
    init_network, run_schedule, EventOutcome, NoiseSpec, Observations, Schedule, Topology,
};

fn ring_report(seed: u64, cost: CostFunction) -> cifusion::sim::SimReport {
    let (mut net, mut truth) = init_network(2, 5, seed, &NoiseSpec::default()).unwrap();
    let schedule = Schedule::generate(Topology::Ring, 5, 20, cost).unwrap();
    run_schedule(&mut net, &mut truth, &schedule).unwrap()
}

#[test]
fn ring_stays_conservative() {
    for seed in 0..10 {
        for cost in [CostFunction::Det, CostFunction::Trace] {
            let report = ring_report(seed, cost);
            assert_eq!(report.violations(), 0, "seed {seed}\n{}", report.to_text());
            assert_eq!(report.fused(), 20);
        }
    }
}

#[test]
fn reports_are_bit_identical() {
    for seed in [3, 7] {
        assert_eq!(
            ring_report(seed, CostFunction::Det).to_text(),
            ring_report(seed, CostFunction::Det).to_text()
        );
    }
    assert_ne!(
        ring_report(3, CostFunction::Det).to_text(),
        ring_report(4, CostFunction::Det).to_text()
    );
}

#[test]
fn determinant_never_grows_for_full_state_nodes() {
    let mut checked = 0;
    for seed in 0..10 {
        for e in ring_report(seed, CostFunction::Det).events {
            if let EventOutcome::Fused {
                det_change: Some((before, after)),
                ..
            } = e.outcome
            {
                assert!(
                    after <= before * (1.0 + 1e-9),
                    "event {}: {before} -> {after}",
                    e.index
                );
                checked += 1;
            }
        }
    }
    assert!(checked > 50);
}

#[test]
fn exact_truth_matches_the_reported_margin() {
    let (mut net, mut truth) = init_network(3, 4, 11, &NoiseSpec::default()).unwrap();
    let schedule = Schedule::generate(Topology::Chain, 4, 9, CostFunction::Trace).unwrap();
    let report = run_schedule(&mut net, &mut truth, &schedule).unwrap();
    assert!(truth.joint().min_eigenvalue() >= -1e-9 * truth.joint().max_eigenvalue());
    for node in &net.nodes {
        let p_true = truth.node_covariance(node.id);
        assert!(loewner_compare(node.p_hat.as_sym(), &p_true, 1e-8)
            .unwrap()
            .is_ge());
    }
    assert_eq!(report.violations(), 0);
}

#[test]
fn random_layouts_and_topologies() {
    for seed in 0..10 {
        let n = 3 + (seed as usize % 2);
        let noise = NoiseSpec {
            observations: Observations::Random,
            ..NoiseSpec::default()
        };
        let (mut net, mut truth) = match init_network(n, 6, seed, &noise) {
            Ok(v) => v,
            Err(cifusion::error::Error::Unreachable(_)) => continue,
            Err(e) => panic!("{e}"),
        };
        let schedule =
            Schedule::generate(Topology::Random { seed }, 6, 30, CostFunction::Det).unwrap();
        let report = run_schedule(&mut net, &mut truth, &schedule).unwrap();
        assert_eq!(report.violations(), 0);
        for node in net.nodes.iter().filter(|n| !n.lineage.is_empty()) {
            assert!(node.p_hat.is_strict());
            let p_true = truth.node_covariance(node.id);
            assert!(loewner_compare(node.p_hat.as_sym(), &p_true, 1e-8)
                .unwrap()
                .is_ge());
        }
    }
}
