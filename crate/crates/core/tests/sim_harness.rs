use proptest::prelude::*;
use tdoa_denoise::channel::ChannelConfig;
use tdoa_denoise::filters::{apply_filter, double_exp_smooth, DesOutput, FilterKind, FilterSpec};
use tdoa_denoise::localization::position_error;
use tdoa_denoise::measurement::raw_latest;
use tdoa_denoise::sim::*;

fn plan(k_values: Vec<usize>, runs: usize, filters: Vec<FilterSpec>) -> McPlan {
    McPlan {
        k_values,
        runs_per_point: runs,
        seed: 1,
        filters,
    }
}

fn h20_v90() -> ScenarioConfig {
    ScenarioConfig::new("h20_v90", 20.0, 90.0)
}

fn h30_v90() -> ScenarioConfig {
    ScenarioConfig::new("h30_v90", 30.0, 90.0)
}

#[test]
fn raw_and_filtered_errors_share_one_window() {
    let settings = SimSettings::default();
    let filters = FilterSpec::default_set();
    let scenario = h30_v90();
    for run in 0..20 {
        let seed = run_seed(7, 4, run);
        let rec = evaluate_run(&scenario, &filters, &settings, 4, seed).unwrap();
        let setup = setup_run(&scenario, &settings, 4, seed).unwrap();
        assert_eq!(rec.window_checksum, setup.window.checksum());

        let truth = setup.truth();
        let err_of = |ranges: &[f64]| {
            let sol = locate(&setup, ranges, &scenario, &settings).unwrap();
            sol.converged.then(|| position_error(&sol.position, &truth))
        };
        assert_eq!(rec.raw_error, err_of(&raw_latest(&setup.window)));
        for (spec, got) in filters.iter().zip(&rec.filtered_errors) {
            assert_eq!(*got, err_of(&apply_filter(spec, &setup.window).unwrap()), "{}", spec.label());
        }
    }
}

#[test]
fn none_filter_normalizes_to_one() {
    let p = plan((2..=12).collect(), 50, vec![FilterSpec::for_kind(FilterKind::None)]);
    let res = run_monte_carlo(&h20_v90(), &p, &ChannelConfig::default(), &Default::default()).unwrap();
    assert_eq!(res.rows.len(), 11);
    for row in &res.rows {
        assert_eq!(row.normalized_error, Some(1.0));
        assert_eq!(row.stderr, Some(0.0));
    }
}

#[test]
fn noiseless_static_runs_flag_degenerate_normalization() {
    let chan = ChannelConfig {
        kappa: 1e-30,
        ..ChannelConfig::default()
    };
    let scenario = ScenarioConfig {
        speed_kmh: 0.0,
        ..h30_v90()
    };
    let res = run_monte_carlo(&scenario, &plan(vec![2, 5], 30, FilterSpec::default_set()), &chan, &Default::default()).unwrap();
    for row in &res.rows {
        assert!(row.mean_raw_error_m < DEGENERATE_ERROR_M, "{row:?}");
        assert!(row.mean_filtered_error_m < DEGENERATE_ERROR_M, "{row:?}");
        assert!(row.is_degenerate());
        assert_eq!(row.stderr, None);
    }
}

#[test]
fn no_filter_blows_up_with_one_past_sample() {
    // The verbatim trend output is the one exception: with b1 = x2 - x1 it
    // returns 2*x2 - x1 at K = 2, a sqrt(5) noise gain by construction.
    let mut filters: Vec<FilterSpec> = FilterSpec::default_set()
        .into_iter()
        .filter(|f| f.kind != FilterKind::DoubleExp)
        .collect();
    filters.push(FilterSpec {
        label: Some("double_exp_level".into()),
        des_output: DesOutput::LevelOnly,
        ..FilterSpec::for_kind(FilterKind::DoubleExp)
    });
    for scenario in [h20_v90(), h30_v90()] {
        let res = run_monte_carlo(&scenario, &plan(vec![2], 1000, filters.clone()), &ChannelConfig::default(), &Default::default())
            .unwrap();
        for row in &res.rows {
            let v = row.normalized_error.unwrap();
            assert!(v <= 1.05, "{} {}: {v}", scenario.id, row.filter);
        }
    }
    assert_eq!(double_exp_smooth(&[3.0, 5.0], 0.5, 0.3, DesOutput::LevelPlusTrend).unwrap(), 7.0);
}

#[test]
fn stderr_shrinks_with_more_runs() {
    let filters = vec![FilterSpec::for_kind(FilterKind::Ages), FilterSpec::for_kind(FilterKind::Median)];
    let small = run_monte_carlo(&h30_v90(), &plan(vec![4], 100, filters.clone()), &ChannelConfig::default(), &Default::default()).unwrap();
    let large = run_monte_carlo(&h30_v90(), &plan(vec![4], 1000, filters), &ChannelConfig::default(), &Default::default()).unwrap();
    for (a, b) in small.rows.iter().zip(&large.rows) {
        assert!(b.stderr.unwrap() < a.stderr.unwrap(), "{}: {:?} vs {:?}", a.filter, a.stderr, b.stderr);
    }
}

#[test]
fn ages_short_window_at_low_altitude() {
    let res = run_monte_carlo(&h20_v90(), &plan(vec![4], 1000, vec![FilterSpec::for_kind(FilterKind::Ages)]), &ChannelConfig::default(), &Default::default())
        .unwrap();
    let v = res.rows[0].normalized_error.unwrap();
    assert!((0.55..=0.80).contains(&v), "AGES K=4 at 20 m: {v}");
}

#[test]
fn default_noise_level_gives_metre_scale_errors() {
    let raw = mean_raw_error(&h30_v90(), &SimSettings::default(), 3, 300, 1).unwrap();
    assert!((1.0..=5.0).contains(&raw), "mean raw error {raw} m");
}

#[test]
fn nonconvergence_is_rare() {
    let res = run_monte_carlo(&h20_v90(), &plan(vec![3, 8], 500, FilterSpec::default_set()), &ChannelConfig::default(), &Default::default())
        .unwrap();
    assert!(res.nonconvergence_rate() < 0.01, "{}", res.nonconvergence_rate());
}

#[test]
fn thread_count_does_not_change_results() {
    let p = plan(vec![2, 4, 7], 200, FilterSpec::default_set());
    let run_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_monte_carlo(&h30_v90(), &p, &ChannelConfig::default(), &Default::default()).unwrap())
            .to_csv_string()
            .unwrap()
    };
    let one = run_with(1);
    assert_eq!(one, run_with(4));
    assert_eq!(one, run_with(4));
}

fn opt_f64() -> impl Strategy<Value = Option<f64>> {
    prop_oneof![Just(None), any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Some)]
}

proptest! {
    #[test]
    fn csv_round_trips_losslessly(
        rows in prop::collection::vec(
            ("[a-z_]{1,12}", 2usize..64, "[a-z0-9]{1,8}", 0.0f64..1e6, 0.0f64..1e6, opt_f64(), opt_f64(), 0usize..2000),
            1..20,
        )
    ) {
        let rows: Vec<McRow> = rows
            .into_iter()
            .map(|(filter, k, scenario, raw, filt, norm, se, nc)| McRow {
                filter,
                k,
                scenario,
                mean_raw_error_m: raw,
                mean_filtered_error_m: filt,
                normalized_error: norm,
                stderr: se,
                nonconverged: nc,
            })
            .collect();
        let res = McResult { rows: rows.clone(), runs_per_point: 1 };
        let text = res.to_csv_string().unwrap();
        prop_assert!(text.starts_with("filter,k,scenario,mean_raw_error_m,mean_filtered_error_m,normalized_error,stderr,nonconverged\n"));
        let back = McResult::read_csv(text.as_bytes()).unwrap();
        prop_assert_eq!(back, rows);
    }
}
