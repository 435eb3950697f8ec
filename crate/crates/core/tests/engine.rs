mod common;

use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use ipsim_core::engine::{
    deterministic_initial, proposal_rate, run_trajectory, run_trajectory_with, sample_product_initial, simulate_final,
    EventKind, InitialDistribution,
};
use ipsim_core::measure::{EmpiricalMeasure, TypeValue};
use ipsim_core::model::{fleming_viot_model, info_percolation_model, opinion_model, otc_model, two_state_model, Model};
use ipsim_core::rng::{stream, Purpose};

fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn two_state_fraction_follows_scalar_ode() {
    let (a, b) = (1.0, 0.5);
    let model = two_state_model(a, b, 0.0).unwrap();
    let law = InitialDistribution::Discrete { weights: vec![0.8, 0.2] };
    let n = 1000;
    let t = 1.5;
    let fractions: Vec<f64> = (0..200)
        .map(|r| {
            let init = sample_product_initial(Model::space(&model), &law, n, &mut stream(5, r, Purpose::Initial)).unwrap();
            let m = simulate_final(&model, &init, t, stream(5, r, Purpose::Dynamics)).unwrap();
            m.label_count(1) as f64 / n as f64
        })
        .collect();
    // p' = a(1 − p) − b p
    let eq = a / (a + b);
    let exact = eq + (0.2 - eq) * (-(a + b) * t).exp();
    let (m, se) = mean_se(&fractions);
    assert!((m - exact).abs() <= 3.0 * se, "{m} vs {exact} (se {se})");
}

#[test]
fn product_initial_frequencies_fit_the_law() {
    let space = Model::space(&opinion_model(1.0, 1.0, common::opinion_p(), common::opinion_q(), 1).unwrap()).clone();
    let w = [0.5, 0.3, 0.2];
    let n = 100_000;
    let c = sample_product_initial(&space, &InitialDistribution::Discrete { weights: w.to_vec() }, n, &mut stream(8, 0, Purpose::Initial))
        .unwrap();
    let m = EmpiricalMeasure::from_config(&space, &c);
    let stat: f64 = (0..3)
        .map(|i| {
            let e = n as f64 * w[i];
            (m.label_count(i) as f64 - e).powi(2) / e
        })
        .sum();
    assert!(ChiSquared::new(2.0).unwrap().sf(stat) > 1e-3);
}

#[test]
fn event_count_matches_thinning_rate() {
    // every agent flips at rate 1 regardless of the population: R·T candidates,
    // all accepted
    let model = two_state_model(1.0, 1.0, 0.0).unwrap();
    let init = deterministic_initial(Model::space(&model), &[20, 30]).unwrap();
    let t = 2.0;
    let rate = proposal_rate(&model, 50);
    let counts: Vec<f64> = (0..400)
        .map(|r| {
            let traj = run_trajectory_with(&model, &init, t, stream(3, r, Purpose::Dynamics)).unwrap();
            assert!(traj.events().len() as u64 <= traj.candidate_count());
            traj.events().len() as f64
        })
        .collect();
    let (m, se) = mean_se(&counts);
    assert!((m - 50.0 * t).abs() <= 3.0 * se, "{m} vs {}", 50.0 * t);
    assert!(m <= rate * t + 3.0 * se);

    // pair interactions are thinned; accepted events stay under the bound
    let otc = otc_model(1.0, 1.0, 1.0, 1.0).unwrap();
    let init = deterministic_initial(Model::space(&otc), &[25, 25, 25, 25]).unwrap();
    let r = proposal_rate(&otc, 100);
    let cands: Vec<f64> = (0..400)
        .map(|s| run_trajectory_with(&otc, &init, t, stream(4, s, Purpose::Dynamics)).unwrap().candidate_count() as f64)
        .collect();
    let (m, se) = mean_se(&cands);
    assert!((m - r * t).abs() <= 3.0 * se, "{m} vs {}", r * t);
}

fn replay_is_consistent(model: &dyn Model, init_types: &[TypeValue], seed: u64, t: f64) -> Result<(), TestCaseError> {
    let space = model.space();
    let init = ipsim_core::measure::AgentConfiguration::new(space, init_types.to_vec()).unwrap();
    let traj = run_trajectory(model, &init, t, seed).unwrap();
    let mut types = init_types.to_vec();
    let mut last = 0.0;
    for ev in traj.events() {
        prop_assert!(ev.time > last && ev.time <= t);
        last = ev.time;
        prop_assert!(!ev.moves.is_empty() && ev.moves.len() <= 2);
        for mv in &ev.moves {
            prop_assert_eq!(&types[mv.agent], &mv.before);
            types[mv.agent] = mv.after.clone();
        }
    }
    let replayed = EmpiricalMeasure::from_types(space, &types);
    prop_assert_eq!(replayed, traj.final_measure());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn same_seed_same_trajectory(seed in any::<u64>()) {
        let m = otc_model(1.0, 0.5, 1.0, 1.0).unwrap();
        let init = deterministic_initial(Model::space(&m), &[10, 10, 10, 10]).unwrap();
        let a = run_trajectory(&m, &init, 1.0, seed).unwrap();
        let b = run_trajectory(&m, &init, 1.0, seed).unwrap();
        prop_assert_eq!(a.event_rows(), b.event_rows());
        prop_assert_eq!(a.candidate_count(), b.candidate_count());
    }

    #[test]
    fn events_replay_to_the_recorded_measure(seed in any::<u64>(), counts in prop::collection::vec(0usize..15, 4)) {
        prop_assume!(counts.iter().sum::<usize>() > 1);
        let m = otc_model(1.0, 1.0, 1.0, 1.0).unwrap();
        let init = deterministic_initial(Model::space(&m), &counts).unwrap();
        replay_is_consistent(&m, init.types(), seed, 1.0)?;
        let op = opinion_model(1.0, 1.0, common::opinion_p(), common::opinion_q(), 1).unwrap();
        let init = deterministic_initial(Model::space(&op), &counts[..3]).unwrap();
        replay_is_consistent(&op, init.types(), seed, 1.0)?;
    }

    #[test]
    fn gamma_only_events_move_one_agent_and_pair_only_events_move_two(seed in any::<u64>()) {
        let op = opinion_model(1.0, 1.0, common::opinion_p(), common::opinion_q(), 1).unwrap();
        let init = deterministic_initial(Model::space(&op), &[10, 10, 10]).unwrap();
        let traj = run_trajectory(&op, &init, 1.0, seed).unwrap();
        prop_assert!(!traj.events().is_empty());
        for ev in traj.events() {
            let is_single = matches!(ev.kind, EventKind::TypeChange { .. });
            prop_assert!(is_single);
            prop_assert_eq!(ev.moves.len(), 1);
        }

        let perc = info_percolation_model(1.0).unwrap();
        let law = InitialDistribution::Normal { mean: 0.5, sd: 1.0 };
        let init = sample_product_initial(Model::space(&perc), &law, 20, &mut stream(seed, 0, Purpose::Initial)).unwrap();
        let traj = run_trajectory(&perc, &init, 1.0, seed).unwrap();
        for ev in traj.events() {
            let is_pair = matches!(ev.kind, EventKind::PairInteraction { .. });
            prop_assert!(is_pair);
            prop_assert_eq!(ev.moves.len(), 2);
            prop_assert_eq!(&ev.moves[0].after, &ev.moves[1].after);
        }
    }

    #[test]
    fn fleming_viot_stays_on_the_sites(seed in any::<u64>()) {
        let fv = fleming_viot_model(common::fv_q(), 10.0).unwrap();
        let init = deterministic_initial(Model::space(&fv), &[5, 3, 2]).unwrap();
        let traj = run_trajectory(&fv, &init, 5.0, seed).unwrap();
        let mut ok = true;
        traj.for_each_state(|_, m, _| ok &= (0..3).map(|i| m.label_count(i)).sum::<u64>() == 10);
        prop_assert!(ok);
    }
}
