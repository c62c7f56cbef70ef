use proptest::prelude::*;
use stjpda::metrics::{accuracy, correct_points, fp_fn, match_lanes};

fn lanes(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 0..max)
}

/// Greedy matching: repeatedly take the pair with the most correct points.
fn greedy_matches(p: &[Vec<f64>], t: &[Vec<f64>], thr: f64, mf: f64) -> usize {
    let mut used_p = vec![false; p.len()];
    let mut used_t = vec![false; t.len()];
    let mut k = 0;
    loop {
        let mut best: Option<(usize, usize, usize)> = None;
        for i in (0..p.len()).filter(|&i| !used_p[i]) {
            for j in (0..t.len()).filter(|&j| !used_t[j]) {
                let c = correct_points(&p[i], &t[j], thr);
                if best.is_none_or(|b| c > b.2) {
                    best = Some((i, j, c));
                }
            }
        }
        let Some((i, j, c)) = best else { break };
        used_p[i] = true;
        used_t[j] = true;
        if c as f64 >= mf * t[j].len() as f64 {
            k += 1;
        }
    }
    k
}

proptest! {
    #[test]
    fn matching_is_invariant_to_prediction_order(preds in lanes(5), truths in lanes(5), rot in 0usize..5) {
        let mut shuffled = preds.clone();
        if !shuffled.is_empty() {
            let r = rot % shuffled.len();
            shuffled.rotate_left(r);
        }
        prop_assert_eq!(fp_fn(&preds, &truths, 0.5, 0.5), fp_fn(&shuffled, &truths, 0.5, 0.5));
        let a = match_lanes(&preds, &truths, 0.5, 0.5);
        let b = match_lanes(&shuffled, &truths, 0.5, 0.5);
        let total = |m: &stjpda::metrics::LaneMatching| m.pairs.iter().map(|p| p.2).sum::<usize>();
        prop_assert_eq!(total(&a), total(&b));
    }

    #[test]
    fn optimal_matching_beats_greedy(preds in lanes(5), truths in lanes(5)) {
        let opt = match_lanes(&preds, &truths, 0.8, 0.5).matched.len();
        prop_assert!(opt >= greedy_matches(&preds, &truths, 0.8, 0.5));
    }

    #[test]
    fn accuracy_grows_with_threshold(preds in lanes(4), truths in lanes(4).prop_filter("non-empty", |t| !t.is_empty())) {
        let frames = vec![(preds, truths)];
        let mut last = 0.0;
        for thr in [0.1, 0.3, 1.0, 3.0, 10.0] {
            let a = accuracy(&frames, thr, 0.5).unwrap();
            prop_assert!(a >= last - 1e-15);
            prop_assert!((0.0..=1.0).contains(&a));
            last = a;
        }
    }

    #[test]
    fn perfect_predictions_score_one(truths in lanes(5).prop_filter("non-empty", |t| !t.is_empty())) {
        prop_assert_eq!(accuracy(&[(truths.clone(), truths.clone())], 0.1, 0.5).unwrap(), 1.0);
        prop_assert_eq!(fp_fn(&truths, &truths, 0.1, 0.5), (0.0, 0.0));
    }
}
