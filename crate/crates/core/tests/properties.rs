use std::collections::BTreeMap;
use std::sync::Arc;

use proptest::prelude::*;
use sdidml::crossfit::ResidualPanel;
use sdidml::didcore::CellEffect;
use sdidml::{
    aggregate, assign_folds, crossfit_nuisance, estimate_group_time, ControlRule, Estimator, GroupTimeEffects,
    LearnerSpec, PanelDataset, PanelObservation,
};

/// A balanced panel: each unit gets an adoption period in `1..=t_max`
/// (or never), random outcomes and two covariates.
fn panel_strategy() -> impl Strategy<Value = PanelDataset> {
    (3usize..12, 3i64..7).prop_flat_map(|(n_units, t_max)| {
        let adoption = prop::collection::vec(prop::option::of(2..=t_max), n_units);
        let values = prop::collection::vec(-5.0f64..5.0, n_units * t_max as usize * 3);
        (Just(t_max), adoption, values).prop_map(|(t_max, adoption, values)| {
            let mut obs = Vec::new();
            let mut k = 0;
            for (u, g) in adoption.iter().enumerate() {
                for t in 1..=t_max {
                    obs.push(PanelObservation {
                        unit_id: format!("u{u:02}"),
                        time: t,
                        outcome: values[k],
                        treatment: g.is_some_and(|g| t >= g) as u8,
                        covariates: vec![values[k + 1], values[k + 2]],
                    });
                    k += 3;
                }
            }
            // Guarantee a never-treated unit so the panel always has controls.
            let last = obs.len() - t_max as usize;
            for o in &mut obs[last..] {
                o.treatment = 0;
            }
            PanelDataset::from_observations(obs, vec!["a".into(), "b".into()]).unwrap()
        })
    })
}

fn effects_strategy() -> impl Strategy<Value = GroupTimeEffects> {
    prop::collection::btree_map((2i64..6, 1i64..8), (-10.0f64..10.0, 1usize..50), 1..20).prop_map(|raw| {
        let cells: BTreeMap<(i64, i64), CellEffect> = raw
            .into_iter()
            .map(|((g, t), (tau, n))| ((g, t), CellEffect { tau, n_treated: n, n_control: 5, event_time: t - g }))
            .collect();
        GroupTimeEffects {
            cells,
            control_rule: ControlRule::NeverTreated,
            anticipation: 0,
            estimator: Estimator::Contrast,
            omitted: vec![],
            warnings: vec![],
        }
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn cohorts_do_not_depend_on_row_order(panel in panel_strategy(), seed in any::<u64>()) {
        let mut rows = panel.observations().to_vec();
        let mut rng = sdidml::rng::SeededRng::new(seed, sdidml::rng::streams::PERMUTATION);
        rng.shuffle(&mut rows);
        let shuffled = PanelDataset::from_observations(rows, panel.covariate_names().to_vec()).unwrap();
        prop_assert_eq!(shuffled.cohort_map(), panel.cohort_map());
        prop_assert_eq!(shuffled.observations(), panel.observations());
    }

    #[test]
    fn csv_round_trip_is_lossless(panel in panel_strategy()) {
        let mut buf = Vec::new();
        panel.write_csv(&mut buf).unwrap();
        let back = PanelDataset::read_csv_from(buf.as_slice()).unwrap();
        prop_assert_eq!(back.observations(), panel.observations());
        prop_assert_eq!(back.covariate_names(), panel.covariate_names());
    }

    #[test]
    fn event_time_advances_one_per_period(panel in panel_strategy()) {
        let periods = panel.periods().to_vec();
        for unit in panel.units() {
            for w in periods.windows(2) {
                let a = panel.event_time(unit, w[0]).unwrap();
                let b = panel.event_time(unit, w[1]).unwrap();
                match (a, b) {
                    (Some(a), Some(b)) => prop_assert_eq!(b - a, w[1] - w[0]),
                    (None, None) => {}
                    _ => prop_assert!(false, "event time defined for only part of a unit"),
                }
            }
        }
    }

    #[test]
    fn aggregation_weights_are_convex(effects in effects_strategy()) {
        let Ok(agg) = aggregate(&effects, 0.95) else {
            // Only an effects table without any post-treatment cell may fail.
            prop_assert!(effects.cells.values().all(|c| c.event_time < 0));
            return Ok(());
        };
        for w in agg.all_weight_sets() {
            prop_assert!(w.values().all(|&x| x >= 0.0));
            prop_assert!((w.values().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        let post: Vec<f64> = effects.cells.values().filter(|c| c.event_time >= 0).map(|c| c.tau).collect();
        let lo = post.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let att = agg.overall_att();
        prop_assert!(att >= lo - 1e-9 && att <= hi + 1e-9, "{} outside [{}, {}]", att, lo, hi);
    }

    #[test]
    fn contrasts_ignore_a_constant_shift(panel in panel_strategy(), c in -100.0f64..100.0) {
        let panel = Arc::new(panel);
        let base = ResidualPanel::unadjusted(panel.clone());
        let shifted = ResidualPanel { y_tilde: base.y_tilde.iter().map(|y| y + c).collect(), ..base.clone() };
        match (estimate_group_time(&base, ControlRule::NeverTreated, 0), estimate_group_time(&shifted, ControlRule::NeverTreated, 0)) {
            (Ok(a), Ok(b)) => {
                prop_assert_eq!(a.cells.keys().collect::<Vec<_>>(), b.cells.keys().collect::<Vec<_>>());
                for (k, cell) in &a.cells {
                    prop_assert!((cell.tau - b.cells[k].tau).abs() < 1e-10 * (1.0 + c.abs()));
                }
            }
            (Err(_), Err(_)) => {}
            _ => prop_assert!(false, "shift changed estimability"),
        }
    }

    #[test]
    fn wider_clipping_clips_more(panel in panel_strategy(), lo in 0.0f64..0.2, extra in 0.0f64..0.2) {
        let folds = assign_folds(&panel, 1, 0).unwrap();
        let ridge = LearnerSpec::ridge(0.5);
        let narrow = crossfit_nuisance(&panel, &ridge, &ridge, &folds, lo, 0).unwrap();
        let eps = lo + extra;
        let wide = crossfit_nuisance(&panel, &ridge, &ridge, &folds, eps, 0).unwrap();
        prop_assert!(wide.n_clipped >= narrow.n_clipped);
        for m in &wide.m_hat {
            prop_assert!(*m >= eps && *m <= 1.0 - eps);
        }
    }
}
