use std::collections::{BTreeMap, BTreeSet};

use mdi::corpus::{Gazetteer, GazetteerEntry, Level};
use mdi::evalkit::{
    classification_metrics, cohen_kappa, geo_metrics, haversine_km, user_level_aggregate, AggregationSpec, TweetPrediction,
    EARTH_RADIUS_KM,
};
use mdi::synthetic::{generate, SynthConfig};
use proptest::prelude::*;

fn kappa_oracle(a: &[String], b: &[String]) -> Option<f64> {
    let labels: Vec<&String> = a.iter().chain(b).collect::<BTreeSet<_>>().into_iter().collect();
    let k = labels.len();
    let idx = |l: &String| labels.iter().position(|x| *x == l).unwrap();
    let mut m = vec![vec![0.0; k]; k];
    for (x, y) in a.iter().zip(b) {
        m[idx(x)][idx(y)] += 1.0;
    }
    let n = a.len() as f64;
    let po: f64 = (0..k).map(|i| m[i][i]).sum::<f64>() / n;
    let pe: f64 = (0..k)
        .map(|i| {
            let row: f64 = m[i].iter().sum();
            let col: f64 = m.iter().map(|r| r[i]).sum();
            (row / n) * (col / n)
        })
        .sum();
    (pe < 1.0).then(|| (po - pe) / (1.0 - pe))
}

fn macro_f1_oracle(gold: &[String], pred: &[String], labels: &[String]) -> f64 {
    let mut total = 0.0;
    for c in labels {
        let tp = gold.iter().zip(pred).filter(|(g, p)| *g == c && *p == c).count() as f64;
        let fp = gold.iter().zip(pred).filter(|(g, p)| *g != c && *p == c).count() as f64;
        let fne = gold.iter().zip(pred).filter(|(g, p)| *g == c && *p != c).count() as f64;
        let precision = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
        let recall = if tp + fne > 0.0 { tp / (tp + fne) } else { 0.0 };
        total += if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
    }
    total / labels.len() as f64
}

fn label_pairs() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    (1usize..60).prop_flat_map(|n| {
        let lab = prop::sample::select(vec!["a", "b", "c", "d", "e"]).prop_map(str::to_string);
        (prop::collection::vec(lab.clone(), n), prop::collection::vec(lab, n))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kappa_matches_contingency_oracle((a, b) in label_pairs()) {
        match (cohen_kappa(&a, &b), kappa_oracle(&a, &b)) {
            (Ok(k), Some(o)) => prop_assert!((k - o).abs() < 1e-9, "{} vs {}", k, o),
            (Ok(k), None) => prop_assert_eq!(k, 1.0),
            (Err(_), None) => {}
            (Err(e), Some(o)) => prop_assert!(false, "error {} but oracle {}", e, o),
        }
    }

    #[test]
    fn macro_f1_matches_precision_recall_oracle((gold, pred) in label_pairs()) {
        let labels: Vec<String> = ["a", "b", "c", "d", "e"].iter().map(|s| s.to_string()).collect();
        let r = classification_metrics(&gold, &pred, &labels).unwrap();
        prop_assert!((r.macro_f1 - macro_f1_oracle(&gold, &pred, &labels)).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&r.macro_f1) && (0.0..=1.0).contains(&r.accuracy));
        let perfect = gold == pred && labels.iter().all(|l| gold.contains(l));
        prop_assert_eq!(perfect, r.macro_f1 == 1.0);
    }

    #[test]
    fn geo_accuracies_are_monotone(picks in prop::collection::vec((0usize..12, 0usize..12), 1..80)) {
        let c = generate(&SynthConfig::default());
        let names: Vec<String> = c.gazetteer.entries().iter().map(|e| e.city.clone()).collect();
        let pred: Vec<&str> = picks.iter().map(|p| names[p.0].as_str()).collect();
        let gold: Vec<&str> = picks.iter().map(|p| names[p.1].as_str()).collect();
        let r = geo_metrics(&pred, &gold, &c.gazetteer).unwrap();
        prop_assert!(r.acc <= r.acc_at_80_5 && r.acc_at_80_5 <= r.acc_at_161);
    }

    #[test]
    fn projected_accuracy_chain(picks in prop::collection::vec((0usize..12, 0usize..12), 1..80)) {
        let c = generate(&SynthConfig::default());
        let h = c.gazetteer.hierarchy().unwrap();
        let names: Vec<String> = c.gazetteer.entries().iter().map(|e| e.city.clone()).collect();
        let acc = |level: Level| {
            picks
                .iter()
                .filter(|(p, g)| h.project(&names[*p], level).unwrap() == h.project(&names[*g], level).unwrap())
                .count()
        };
        prop_assert!(acc(Level::Country) >= acc(Level::State));
        prop_assert!(acc(Level::State) >= acc(Level::City));
    }
}

#[test]
fn haversine_closed_form_arcs() {
    let per_degree = EARTH_RADIUS_KM * std::f64::consts::PI / 180.0;
    assert!((per_degree - 111.195).abs() < 1e-3);
    for k in 1..=100 {
        let d = k as f64 * 0.9;
        let equator = haversine_km((0.0, -80.0), (0.0, -80.0 + d)).unwrap();
        let meridian = haversine_km((-60.0, 33.0), (-60.0 + d, 33.0)).unwrap();
        assert!((equator - d * per_degree).abs() < 1e-3, "equator {d}");
        assert!((meridian - d * per_degree).abs() < 1e-3, "meridian {d}");
    }
}

#[test]
fn planted_150_km_error() {
    let lat_step = 150.0 / (EARTH_RADIUS_KM * std::f64::consts::PI / 180.0);
    let entry = |city: &str, lat: f64| GazetteerEntry {
        city: city.into(),
        state: "s".into(),
        country: "k".into(),
        lat,
        lon: 0.0,
        aliases: vec![],
    };
    let gaz = Gazetteer::new(vec![entry("a", 10.0), entry("b", 10.0 + lat_step), entry("c", 40.0)]).unwrap();
    let gold = ["a", "a", "c", "c", "a", "c", "a"];
    let mut pred = gold;
    pred[2] = "c";
    pred[4] = "b";
    let r = geo_metrics(&pred, &gold, &gaz).unwrap();
    // Both rates are exact fractions of 7, so the gap is exactly one record.
    assert_eq!((r.acc_at_80_5 * 7.0, r.acc_at_161 * 7.0), (6.0, 7.0));
    assert_eq!(r.acc, 6.0 / 7.0);
}

/// Literal restatement of the aggregation rule for two labels.
fn aggregate_oracle(tweets: &[(char, f64)], tau: f64) -> char {
    let confident = tweets.iter().filter(|t| t.1 >= tau).count();
    let voters: Vec<&(char, f64)> = tweets.iter().filter(|t| confident == 0 || t.1 >= tau).collect();
    let count = |l: char| voters.iter().filter(|t| t.0 == l).count();
    let mass = |l: char| voters.iter().filter(|t| t.0 == l).map(|t| t.1).sum::<f64>();
    if count('A') != count('B') {
        return if count('A') > count('B') { 'A' } else { 'B' };
    }
    if mass('A') != mass('B') {
        return if mass('A') > mass('B') { 'A' } else { 'B' };
    }
    'A'
}

#[test]
fn aggregation_truth_table() {
    let confidences = [0.1, 0.34, 0.35, 0.5, 0.9];
    let mut users = BTreeMap::new();
    let mut expected = BTreeMap::new();
    let mut cases = 0;
    for mask in 0..8u32 {
        for c0 in confidences {
            for c1 in confidences {
                for c2 in confidences {
                    let tweets: Vec<(char, f64)> = [c0, c1, c2]
                        .iter()
                        .enumerate()
                        .map(|(i, &c)| (if mask >> i & 1 == 1 { 'B' } else { 'A' }, c))
                        .collect();
                    let user = format!("u{cases:04}");
                    users.insert(
                        user.clone(),
                        tweets.iter().map(|t| TweetPrediction::new(t.0.to_string(), t.1)).collect::<Vec<_>>(),
                    );
                    expected.insert(user, aggregate_oracle(&tweets, 0.35).to_string());
                    cases += 1;
                }
            }
        }
    }
    assert_eq!(cases, 8 * 125);
    assert_eq!(user_level_aggregate(&users, &AggregationSpec { tau: 0.35 }).unwrap(), expected);
}
