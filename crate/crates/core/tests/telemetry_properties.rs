use proptest::prelude::*;
use salience_lab::analysis::spearman;
use salience_lab::telemetry::*;

fn population(seed: u64, players: usize, completion: Option<u32>) -> PopulationSpec {
    PopulationSpec {
        games: vec![
            GameSpec {
                game_id: "g0".into(),
                base_quality: 0.3,
                quality_drift: -0.005,
                completion_sessions: None,
                noise_sd: 0.15,
            },
            GameSpec {
                game_id: "g1".into(),
                base_quality: 0.8,
                quality_drift: -0.005,
                completion_sessions: completion,
                noise_sd: 0.15,
            },
        ],
        players_per_game: players,
        calendar_start: 25_000_000,
        horizon_days: 30,
        regions: vec!["eu".into(), "na".into()],
        join_fraction: 0.5,
        initial_salience: (0.4, 0.9),
        learning_rate: (0.05, 0.3),
        env_susceptibility: (0.0, 0.4),
        churn_threshold: (0.1, 0.3),
        seed,
    }
}

proptest! {
    #[test]
    fn env_stamp_fields_stay_in_range(minute in 0i64..=1_000_000_000) {
        let e = env_stamp(minute, "eu");
        prop_assert!(e.hour_of_day <= 23);
        prop_assert!(e.day_of_week <= 6);
        prop_assert!((1..=366).contains(&e.day_of_year));
        let (y, _, _) = civil_from_days(minute.div_euclid(MINUTES_PER_DAY));
        if !is_leap_year(y) {
            prop_assert!(e.day_of_year <= 365);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn csv_round_trip_recovers_sessions(seed in 0u64..10_000, completion in prop::option::of(1u32..30)) {
        let traces = simulate_population(&population(seed, 6, completion)).unwrap();
        let mut buf = Vec::new();
        write_telemetry_csv(&traces, &mut buf).unwrap();
        let back = read_traces(buf.as_slice(), std::path::Path::new("mem.csv")).unwrap();
        prop_assert_eq!(back.len(), traces.len());
        for (a, b) in traces.iter().zip(&back) {
            prop_assert_eq!(&a.user_id, &b.user_id);
            prop_assert_eq!(&a.sessions, &b.sessions);
            prop_assert_eq!(a.total_sessions, b.total_sessions);
            prop_assert_eq!(a.total_play_time, b.total_play_time);
            prop_assert!(b.latent_trace.is_none());
        }
    }

    #[test]
    fn generated_traces_satisfy_invariants(seed in 0u64..10_000) {
        for t in simulate_population(&population(seed, 5, Some(12))).unwrap() {
            t.validate().unwrap();
            prop_assert_eq!(t.sessions[0].delta_session, 0.0);
            let latent = t.latent_trace.as_ref().unwrap();
            prop_assert_eq!(latent.len(), t.len());
            prop_assert!(latent.iter().all(|s| s.salience >= 0.0 && (0.0..=1.0).contains(&s.reward)));
            for s in &t.sessions {
                prop_assert!(s.play_time <= s.session_time);
                prop_assert!(s.activity_diversity <= s.activity_index);
                prop_assert!(s.delta_session >= 0.0);
            }
        }
    }
}

#[test]
fn better_games_get_more_sessions() {
    let mut spec = population(11, 1, None);
    spec.games.clear();
    for g in 0..250 {
        spec.games.push(GameSpec {
            game_id: format!("g{g}"),
            base_quality: g as f64 / 249.0,
            quality_drift: -0.003,
            completion_sessions: None,
            noise_sd: 0.1,
        });
    }
    let traces = simulate_population(&spec).unwrap();
    let quality: Vec<f64> = spec.games.iter().map(|g| g.base_quality).collect();
    let sessions: Vec<f64> = traces.iter().map(|t| t.total_sessions as f64).collect();
    let rho = spearman(&quality, &sessions).unwrap();
    assert!(rho > 0.3, "spearman {rho}");
}
