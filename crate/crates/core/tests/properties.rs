use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use segsel::eval::mae;
use segsel::features::{assemble_state, FeatureRow, SelectionState};
use segsel::ingest::{
    cumulative_distance, parse_trajectories, GeoPoint, GpsFix, Journey, LandmarkSpec, RouteDescription,
};
use segsel::interp::{interpolate_journey, is_non_decreasing, ArrivalMatrix};
use segsel::lrm::estimate_moments;
use segsel::policy::{apply_actions, compute_bounds};
use segsel::training::{reward_atr, reward_ier};

fn csv_of(trip: &str, fixes: &[(f64, f64, f64)]) -> String {
    let mut s = String::from("trip_id,lat,lon,timestamp\n");
    for (lat, lon, t) in fixes {
        s.push_str(&format!("{trip},{lat},{lon},{t}\n"));
    }
    s
}

/// Strictly increasing timestamps from positive gaps.
fn timeline(gaps: &[f64]) -> Vec<f64> {
    let mut t = 1_700_000_000.0;
    let mut out = vec![t];
    for g in gaps {
        t += g;
        out.push(t);
    }
    out
}

fn route(length: f64, landmarks: &[f64]) -> RouteDescription {
    let spec = |d: f64| LandmarkSpec {
        cum_distance: d,
        lat: 0.0,
        lon: d / 111_195.0,
        line_count: None,
    };
    RouteDescription {
        route_id: "p".into(),
        route_length: length,
        spacing: 100.0,
        default_line_count: 2,
        stops: landmarks.iter().map(|&d| spec(d)).collect(),
        intersections: vec![],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn journey_split_partitions_fixes(gaps in prop::collection::vec(1.0f64..900.0, 1..30), tau in 60.0f64..600.0) {
        let times = timeline(&gaps);
        let fixes: Vec<(f64, f64, f64)> = times.iter().enumerate().map(|(k, &t)| (0.0, k as f64 * 1e-3, t)).collect();
        let journeys = parse_trajectories(csv_of("bus", &fixes).as_bytes(), tau).unwrap();
        let mut stamps: Vec<f64> = journeys.iter().flat_map(|j| j.fixes.iter().map(|f| f.timestamp)).collect();
        stamps.sort_by(f64::total_cmp);
        prop_assert_eq!(stamps, times);
        for j in &journeys {
            prop_assert!(j.fixes.windows(2).all(|w| w[1].timestamp - w[0].timestamp <= tau));
        }
    }

    #[test]
    fn cumulative_distance_ignores_time_shift(
        steps in prop::collection::vec((0.0f64..1e-3, 1.0f64..60.0), 1..20),
        shift in -1e6f64..1e6,
    ) {
        let mut lon = 0.0;
        let mut t = 1_000_000.0;
        let mut fixes = vec![GpsFix { point: GeoPoint::new(10.0, lon), timestamp: t }];
        for (dl, dt) in &steps {
            lon += dl;
            t += dt;
            fixes.push(GpsFix { point: GeoPoint::new(10.0, lon), timestamp: t });
        }
        let j = Journey { trip_id: "a".into(), fixes: fixes.clone(), tau: 300.0 };
        let shifted = Journey {
            fixes: fixes.iter().map(|f| GpsFix { timestamp: f.timestamp + shift, ..*f }).collect(),
            ..j.clone()
        };
        let a: Vec<f64> = cumulative_distance(&j).into_iter().map(|p| p.0).collect();
        let b: Vec<f64> = cumulative_distance(&shifted).into_iter().map(|p| p.0).collect();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn grid_rebuilds_from_its_landmarks(
        length in 300.0f64..3000.0,
        marks in prop::collection::btree_set(0u32..1000, 1..6),
    ) {
        let landmarks: Vec<f64> = marks.iter().map(|&m| (m as f64 / 1000.0 * length).round()).collect();
        let mut landmarks = landmarks;
        landmarks.dedup();
        let grid = route(length, &landmarks).grid().unwrap();
        let rebuilt = grid.landmark_description(2).grid().unwrap();
        prop_assert_eq!(rebuilt, grid);
    }

    #[test]
    fn interpolated_rows_are_monotone(
        speeds in prop::collection::vec(2.0f64..15.0, 8..40),
        interval in 10.0f64..40.0,
    ) {
        // A bus moving east along the equator with piecewise-constant speed.
        let length = 2000.0;
        let grid = route(length, &[0.0, length]).grid().unwrap();
        let mut fixes = Vec::new();
        let (mut d, mut t) = (0.0, 0.0);
        let mut k = 0;
        while d < length {
            fixes.push(GpsFix { point: GeoPoint::new(0.0, d / 111_195.0), timestamp: t });
            d = (d + speeds[k % speeds.len()] * interval).min(length);
            t += interval;
            k += 1;
        }
        fixes.push(GpsFix { point: GeoPoint::new(0.0, length / 111_195.0), timestamp: t });
        let j = Journey { trip_id: "m".into(), fixes, tau: f64::INFINITY };
        let row: Vec<f64> = interpolate_journey(&j, &grid).unwrap();
        prop_assert_eq!(row.len(), grid.len());
        prop_assert!(is_non_decreasing(&row));
    }

    #[test]
    fn moments_ignore_trip_order(
        rows in prop::collection::vec(prop::collection::vec(0.0f64..1e3, 4), 3..12),
        seed in any::<u64>(),
    ) {
        let ids: Vec<String> = (0..rows.len()).map(|v| format!("t{v}")).collect();
        let dist = vec![0.0, 1.0, 2.0, 3.0];
        let a = ArrivalMatrix::new(ids.clone(), vec![0.0; rows.len()], dist.clone(), rows.clone()).unwrap();
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let b = a.select_trips(&order).unwrap();
        let ma = estimate_moments(&a, &[0, 1, 2, 3]).unwrap();
        let mb = estimate_moments(&b, &[0, 1, 2, 3]).unwrap();
        prop_assert_eq!(ma.mu.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), mb.mu.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        prop_assert_eq!(ma.sigma.iter().map(|x| x.to_bits()).collect::<Vec<_>>(), mb.sigma.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        let obs = &rows[0][..2];
        prop_assert_eq!(ma.predict_eta(obs, 3).unwrap().to_bits(), mb.predict_eta(obs, 3).unwrap().to_bits());
    }

    #[test]
    fn state_has_n_plus_selected_rows(mask in prop::collection::vec(any::<bool>(), 1..30)) {
        prop_assume!(mask.iter().any(|&b| b));
        let interp: Vec<usize> = (0..mask.len()).collect();
        let indices: Vec<usize> = interp.iter().copied().filter(|&i| mask[i]).collect();
        let features: Vec<FeatureRow<f64>> = (0..mask.len()).map(|i| [i as f64; 8]).collect();
        let sel = SelectionState::from_indices(&interp, indices.clone()).unwrap();
        let state = assemble_state(&features, &sel).unwrap();
        prop_assert_eq!(state.sa.len(), mask.len() + indices.len());
        prop_assert_eq!(state.selected_rows(), indices.len());
    }

    #[test]
    fn action_cycles_keep_selection_valid(
        landmarks in prop::collection::btree_set(1usize..39, 0..6),
        picks in prop::collection::vec(any::<bool>(), 39),
        moves in prop::collection::vec(prop::collection::vec(0usize..2, 40), 1..20),
    ) {
        let last = 40;
        let mut blocked: Vec<usize> = landmarks.into_iter().collect();
        blocked.insert(0, 0);
        blocked.push(last);
        let mut sel: Vec<usize> = (1..last).filter(|i| picks[i - 1] && blocked.binary_search(i).is_err()).collect();
        prop_assume!(!sel.is_empty());
        let m = sel.len();
        for actions in moves {
            let bounds = compute_bounds(&sel, last);
            let next = apply_actions(&sel, &actions[..m], &bounds, &blocked);
            prop_assert_eq!(next.len(), m);
            prop_assert!(next.windows(2).all(|w| w[0] < w[1]));
            for (i, (&a, &b)) in sel.iter().zip(&next).enumerate() {
                prop_assert!(a.abs_diff(b) <= 1);
                prop_assert!(bounds.lower[i] <= b && b <= bounds.upper[i]);
                prop_assert!(blocked.binary_search(&b).is_err());
            }
            sel = next;
        }
    }

    #[test]
    fn rewards_ignore_order_and_prefer_smaller_errors(
        errors in prop::collection::vec(0.0f64..10.0, 1..40),
        shrink in prop::collection::vec(0.0f64..1.0, 40),
        seed in any::<u64>(),
    ) {
        let mut shuffled = errors.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!((reward_atr(&errors) - reward_atr(&shuffled)).abs() < 1e-12);
        prop_assert!((reward_ier(&errors, 0.1) - reward_ier(&shuffled, 0.1)).abs() < 1e-9);
        let smaller: Vec<f64> = errors.iter().zip(&shrink).map(|(e, s)| e * s).collect();
        prop_assert!(reward_atr(&smaller) >= reward_atr(&errors));
        prop_assert!(reward_ier(&smaller, 0.1) >= reward_ier(&errors, 0.1));
    }

    #[test]
    fn mae_is_a_symmetric_nonnegative_distance(
        pairs in prop::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 1..40),
    ) {
        let (p, t): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let d = mae(&p, &t).unwrap();
        prop_assert!(d >= 0.0);
        prop_assert_eq!(d, mae(&t, &p).unwrap());
        prop_assert_eq!(mae(&p, &p).unwrap(), 0.0);
        prop_assert_eq!(d == 0.0, p == t);
    }
}
