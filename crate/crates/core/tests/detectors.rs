use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use running_consensus::detectors::{
    fss_decide, fss_threshold, run_change_detection, ChangeScenario, ConsensusPage, Decision, PageBank, PageDetector,
    PageModes, SeqDecision, SequentialDetector,
};
use running_consensus::montecarlo::{estimate_stopping, Engine, SequentialExperiment};
use running_consensus::network::GossipMatrix;
use running_consensus::runner::sequential_point;
use running_consensus::scenario::StatisticName;
use running_consensus::stats::{moments, Density, HypothesisModel, Nonlinearity};
use running_consensus::{NetworkTopology, TopologyKind};

fn change_scenario(m: usize, modes: PageModes) -> ChangeScenario {
    ChangeScenario {
        topology: NetworkTopology::build(TopologyKind::FullRing, m).unwrap(),
        exchanges: 5,
        pre: Density::GaussianVarChange { variance: 1.0 },
        post: Density::GaussianVarChange { variance: 4.0 },
        change_time: Some(20),
        gamma: 3.0,
        consensus_offset: 0.0,
        gamma_single: 3.0,
        node: 0,
        max_n: 10_000,
        modes,
    }
}

proptest! {
    #[test]
    fn cusum_never_negative(incs in prop::collection::vec(-5.0f64..5.0, 1..200)) {
        let mut d = PageDetector::new(1e9);
        for l in incs {
            d.step(l);
            prop_assert!(d.cusum >= 0.0);
        }
    }

    #[test]
    fn consensus_cusum_never_negative(seed in any::<u64>(), incs in prop::collection::vec(-2.0f64..1.0, 12..60)) {
        let topo = NetworkTopology::build(TopologyKind::FullRing, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ConsensusPage::new(1e9, 4);
        for chunk in incs.chunks_exact(4) {
            let pairs = topo.sample_pairs(2, &mut rng).unwrap();
            p.step(&pairs, chunk);
            prop_assert!(p.cusum.iter().all(|&c| c >= 0.0));
        }
    }

    /// Shifting data and the null mean by the same amount leaves the
    /// decision unchanged.
    #[test]
    fn fss_decision_is_translation_invariant(
        xs in prop::collection::vec(-3.0f64..3.0, 10),
        shift in -10.0f64..10.0,
    ) {
        let decide = |mean: f64, data: &[f64]| {
            let model = HypothesisModel::gaussian_shift(1.0, mean, 0.1).unwrap();
            let m0 = moments(&model, &Nonlinearity::Identity, mean, 1).unwrap();
            let thr = fss_threshold(0.05, data.len() as u64, &m0, 1).unwrap();
            fss_decide(data.iter().sum(), thr)
        };
        let moved: Vec<f64> = xs.iter().map(|x| x + shift).collect();
        let a = decide(0.0, &xs);
        let b = decide(shift, &moved);
        let stat: f64 = xs.iter().sum();
        let margin = (stat - 10f64.sqrt() * 1.6448536269514722).abs();
        prop_assume!(margin > 1e-9);
        prop_assert_eq!(a, b);
    }
}

#[test]
fn single_node_consensus_matches_centralized() {
    let sc = change_scenario(1, PageModes { centralized: true, consensus: true, ..PageModes::default() });
    for trial in 0..50 {
        let mut data = ChaCha8Rng::seed_from_u64(trial);
        let mut gossip = ChaCha8Rng::seed_from_u64(trial + 1000);
        let o = run_change_detection(&sc, &mut data, &mut gossip).unwrap();
        assert_eq!(o.centralized, o.consensus);
    }
}

#[test]
fn full_averaging_consensus_page_equals_centralized() {
    let m = 6;
    let w = GossipMatrix::full_averaging(m);
    let mut cons = ConsensusPage::new(5.0, m);
    let mut central = PageDetector::new(5.0);
    let llr = [[0.3, -0.1, 0.2, 0.5, -0.4, 0.1], [-2.0, -1.0, 0.0, 0.0, 0.1, 0.2], [1.0, 1.0, 1.0, -0.5, 0.0, 0.0]];
    for l in llr {
        cons.step(&w, &l);
        central.step(l.iter().sum());
        for c in &cons.cusum {
            assert!((c - central.cusum).abs() < 1e-12);
        }
    }
}

#[test]
fn bank_alarms_when_any_member_does() {
    let mut bank = PageBank::new(1.0, 3);
    assert!(!bank.step(&[0.5, 0.2, 0.0]));
    assert!(bank.step(&[0.0, 0.0, 1.5]));
}

#[test]
fn disabled_modes_do_not_change_other_outcomes() {
    let all = change_scenario(5, PageModes::all());
    let only = change_scenario(5, PageModes { bank: true, ..PageModes::default() });
    for trial in 0..20 {
        let run = |sc: &ChangeScenario| {
            let mut d = ChaCha8Rng::seed_from_u64(trial);
            let mut g = ChaCha8Rng::seed_from_u64(trial + 99);
            run_change_detection(sc, &mut d, &mut g).unwrap()
        };
        assert_eq!(run(&all).bank, run(&only).bank);
    }
}

#[test]
fn sequential_detector_thresholds() {
    let det = SequentialDetector { r: 1.0, eta: 0.5, a: -2.0, b: 2.0, nodes: 2 };
    assert_eq!(det.check(1, 2.5), None);
    assert_eq!(det.check(1, 3.0), Some(SeqDecision::H1));
    assert_eq!(det.check(2, 0.0), Some(SeqDecision::H0));
    assert_eq!(fss_decide(1.0, 1.0), Decision::H1);
}

/// At -30 dB with five sensors and nominal `p_e = 0.01` the node stopping
/// times cluster tightly around each other.
#[test]
fn node_stopping_times_cluster() {
    let null = Density::Gaussian { mean: 0.0, variance: 1.0 };
    let pt = sequential_point(null, StatisticName::Identity, 5, 0.01, -30.0, 100.0).unwrap();
    let exp = SequentialExperiment {
        topology: NetworkTopology::build(TopologyKind::FullRing, 5).unwrap(),
        exchanges: 1,
        null_dist: null,
        theta0: 0.0,
        theta_alt: pt.theta,
        nonlinearity: pt.nonlinearity,
        detector: pt.detector,
        max_n: pt.max_n,
    };
    let e = estimate_stopping(&exp, &Engine::new(6, 100)).unwrap();
    let ratio = e.median_relative_spread();
    assert!(ratio < 0.05, "median spread ratio {ratio}");
}
