mod common;

use std::collections::{BTreeMap, BTreeSet};

use mdi::corpus::TweetRecord;
use mdi::splits::{split, verify_disjoint, RunId, Setting, SplitName, SplitSpec};
use proptest::prelude::*;

/// City `i` has `users[i]` users with 1-3 tweets each.
fn corpus(users: &[usize]) -> Vec<TweetRecord> {
    let mut out = Vec::new();
    for (c, &n) in users.iter().enumerate() {
        for u in 0..n {
            for t in 0..1 + (u + c) % 3 {
                out.push(common::record(
                    &format!("c{c}u{u}t{t}"),
                    &format!("c{c}u{u}"),
                    "x",
                    &format!("city{c}"),
                    &format!("state{}", c / 2),
                    "k",
                ));
            }
        }
    }
    out
}

fn city_users(records: &[TweetRecord], ids: &[String]) -> BTreeMap<String, BTreeSet<String>> {
    let by_id: BTreeMap<&str, &TweetRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for id in ids {
        let r = by_id[id.as_str()];
        out.entry(r.labels.as_ref().unwrap().city.clone()).or_default().insert(r.user_id.clone());
    }
    out
}

#[test]
fn hundred_seeds_three_settings() {
    let sizes = [1, 2, 3, 12, 13, 15, 16, 17, 25, 40];
    let records = corpus(&sizes);
    for seed in 0..100 {
        for setting in [Setting::Narrow, Setting::Medium, Setting::Wide] {
            let result = split(&records, &SplitSpec::user_disjoint(setting, RunId::A, seed)).unwrap();
            let report = verify_disjoint(&result);
            assert!(report.disjoint && report.shared_users.is_empty(), "{seed} {setting}");
            let train: BTreeSet<&String> = result.part(SplitName::Train).user_ids.iter().collect();
            assert!(result.part(SplitName::Test).user_ids.iter().all(|u| !train.contains(u)));

            let test = city_users(&records, &result.part(SplitName::Test).record_ids);
            let all = city_users(&records, &result.part(SplitName::Train).record_ids);
            for (c, &n) in sizes.iter().enumerate() {
                let city = format!("city{c}");
                let eligible = n >= 2 && n >= setting.min_users();
                assert_eq!(test.contains_key(&city), eligible, "{setting} {city}");
                assert_eq!(all.contains_key(&city), eligible && n > setting.test_users());
                if eligible {
                    assert_eq!(test[&city].len(), setting.test_users());
                }
            }
            if setting == Setting::Narrow {
                assert!(test.keys().chain(all.keys()).all(|c| sizes[c[4..].parse::<usize>().unwrap()] >= 16));
            }
        }
    }
}

#[test]
fn runs_differ_and_repeat() {
    let records = corpus(&[20, 20, 20, 20]);
    let spec = SplitSpec::user_disjoint(Setting::Narrow, RunId::A, 5);
    assert_eq!(split(&records, &spec).unwrap(), split(&records, &spec).unwrap());
    let a = split(&records, &spec).unwrap();
    let b = split(&records, &SplitSpec::user_disjoint(Setting::Narrow, RunId::B, 5)).unwrap();
    assert_ne!(a.part(SplitName::Test).user_ids, b.part(SplitName::Test).user_ids);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_split_partitions_records(n in 1usize..300, seed in 0u64..1000) {
        let records = corpus(&[n]);
        let result = split(&records, &SplitSpec::random(seed)).unwrap();
        let mut ids: Vec<String> = result.splits.values().flat_map(|p| p.record_ids.clone()).collect();
        ids.sort();
        let mut expected: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        expected.sort();
        prop_assert_eq!(ids, expected);
        prop_assert!(verify_disjoint(&result).disjoint);
    }

    #[test]
    fn disjoint_split_never_shares_users(
        sizes in prop::collection::vec(1usize..30, 1..8),
        seed in 0u64..1000,
    ) {
        let records = corpus(&sizes);
        if let Ok(result) = split(&records, &SplitSpec::user_disjoint(Setting::Wide, RunId::C, seed)) {
            prop_assert!(verify_disjoint(&result).shared_users.is_empty());
        }
    }
}
