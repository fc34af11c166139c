mod common;

use mvpa_core::bouts::{scan_bouts, BoutConfig};
use proptest::prelude::*;

fn detected(mets: &[f64]) -> Vec<(usize, usize, f64)> {
    scan_bouts(mets, &BoutConfig::default())
        .into_iter()
        .map(|b| (b.start, b.end, b.met_minutes))
        .collect()
}

#[test]
fn scan_agrees_with_brute_force_across_densities() {
    let mut rng = common::rng(2024);
    for k in 0..2000 {
        let density = 0.05 + 0.85 * (k % 18) as f64 / 17.0;
        let mets = common::random_day(density, &mut rng);
        assert_eq!(detected(&mets), common::brute_force_bouts(&mets), "sequence {k}, density {density}");
    }
}

#[test]
fn third_inactive_example_matches_oracle() {
    let mut mets = vec![1.0; 1440];
    for m in &mut mets[100..=120] {
        *m = 4.0;
    }
    for i in [105, 108, 111] {
        mets[i] = 1.0;
    }
    let got = detected(&mets);
    assert_eq!(got, common::brute_force_bouts(&mets));
    assert_eq!(got.len(), 1);
    assert!(got[0].1 < 111);
}

fn minute() -> impl Strategy<Value = f64> {
    prop_oneof![1 => 0.9..2.99f64, 2 => 3.0..8.0f64]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn emitted_bouts_satisfy_invariants(mets in prop::collection::vec(minute(), 10..400)) {
        let bouts = scan_bouts(&mets, &BoutConfig::default());
        let mut last_end = None;
        for b in &bouts {
            prop_assert!(b.len() >= 10);
            prop_assert!(mets[b.end] >= 3.0 && mets[b.end - 1] >= 3.0);
            for k in b.start..=b.end + 1 - 10 {
                prop_assert!(mets[k..k + 10].iter().filter(|&&m| m < 3.0).count() <= 2);
            }
            if let Some(e) = last_end {
                prop_assert!(b.start > e);
            }
            last_end = Some(b.end);
        }
        prop_assert_eq!(detected(&mets), common::brute_force_bouts(&mets));
    }

    #[test]
    fn padding_with_sedentary_minutes_keeps_count(
        mets in prop::collection::vec(minute(), 10..300),
        left in 0usize..30,
        right in 0usize..30,
    ) {
        let mut padded = vec![1.5; left];
        padded.extend(&mets);
        padded.extend(std::iter::repeat_n(1.5, right));
        prop_assert_eq!(
            scan_bouts(&mets, &BoutConfig::default()).len(),
            scan_bouts(&padded, &BoutConfig::default()).len()
        );
    }
}
