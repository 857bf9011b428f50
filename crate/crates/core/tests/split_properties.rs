use proptest::prelude::*;
use ssnll_core::split::{cleaner_quota, labelwise_split};

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<usize>, usize, f64, f64)> {
    (1usize..6, 1usize..60).prop_flat_map(|(k, n)| {
        (
            prop::collection::vec(prop_oneof![0.0f64..5.0, Just(1.0)], n),
            prop::collection::vec(0..k, n),
            Just(k),
            0.01f64..=1.0,
            0.01f64..=1.0,
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn labelwise_split_properties((losses, labels, k, r1, r2) in instance()) {
        let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
        let s = labelwise_split(&losses, &labels, k, lo).unwrap();
        let t = labelwise_split(&losses, &labels, k, hi).unwrap();

        // partition
        let mut all: Vec<usize> = s.cleaner.iter().chain(&s.noisier).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..losses.len()).collect::<Vec<_>>());

        let member = s.membership();
        for c in 0..k {
            let class: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
            let count = class.iter().filter(|&&i| member[i]).count();
            let expected = ((lo * class.len() as f64) - 1e-9 * (lo * class.len() as f64).max(1.0)).ceil().max(if class.is_empty() { 0.0 } else { 1.0 }) as usize;
            prop_assert_eq!(count, expected.min(class.len()));
            prop_assert_eq!(count, cleaner_quota(class.len(), lo));
            if !class.is_empty() {
                prop_assert!(count >= 1);
            }
            // dominance within a class
            for &a in class.iter().filter(|&&i| member[i]) {
                for &b in class.iter().filter(|&&i| !member[i]) {
                    prop_assert!(losses[a] < losses[b] || (losses[a] == losses[b] && a < b));
                }
            }
        }

        // monotone in r
        let bigger = t.membership();
        for i in 0..losses.len() {
            prop_assert!(!member[i] || bigger[i]);
        }
    }
}
