use proptest::prelude::*;
use salience_lab::features::*;
use salience_lab::telemetry::*;

fn population(seed: u64) -> PopulationSpec {
    PopulationSpec {
        games: (0..3)
            .map(|g| GameSpec {
                game_id: format!("game{g}"),
                base_quality: 0.45 + 0.2 * g as f64,
                quality_drift: -0.01,
                completion_sessions: (g == 1).then_some(15),
                noise_sd: 0.1,
            })
            .collect(),
        players_per_game: 12,
        calendar_start: 26_000_000,
        horizon_days: 40,
        regions: vec!["eu".into(), "na".into(), "jp".into()],
        join_fraction: 0.9,
        initial_salience: (0.4, 0.9),
        learning_rate: (0.05, 0.3),
        env_susceptibility: (0.0, 0.4),
        churn_threshold: (0.1, 0.3),
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn survival_targets_decrease_to_zero(seed in 0u64..10_000) {
        let spec = population(seed);
        let traces = simulate_population(&spec).unwrap();
        let split = split_dataset(&traces, 0.8, seed, spec.observation_end() as f64).unwrap();
        let p = &split.preprocessor;
        for t in split.train.iter().chain(&split.test) {
            let raw: Vec<[f64; 4]> = t.targets.iter().map(|y| p.unscale_targets(y)).collect();
            let ch = raw[0][0];
            prop_assert!([0.0, 0.5, 1.0].contains(&ch));
            prop_assert!(raw.iter().all(|y| y[0] == ch));
            for w in raw.windows(2) {
                prop_assert!(w[1][1] < w[0][1]);
                prop_assert!(w[1][2] < w[0][2]);
            }
            let last = raw.last().unwrap();
            prop_assert!(last[1].abs() < 1e-9 && last[2].abs() < 1e-9);
            prop_assert!(!t.ab_mask.last().unwrap());
        }
    }

    #[test]
    fn statistics_ignore_the_test_users(seed in 0u64..10_000) {
        let spec = population(seed);
        let traces = simulate_population(&spec).unwrap();
        let end = spec.observation_end() as f64;
        let split = split_dataset(&traces, 0.75, seed, end).unwrap();
        let train_users: std::collections::HashSet<&str> = split.train.iter().map(|t| t.user_id.as_str()).collect();
        let train_only: Vec<PlayerTrace> = traces.iter().filter(|t| train_users.contains(t.user_id.as_str())).cloned().collect();
        let alone = Preprocessor::fit(&train_only, end).unwrap();
        prop_assert_eq!(&alone, &split.preprocessor);
        prop_assert_eq!(alone.behavior_scaler.min.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            split.preprocessor.behavior_scaler.min.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
