use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{invalid, Result};

/// Endless stream of class-balanced index batches.
///
/// Each batch holds `quota / C` full rounds over the `C` non-empty classes
/// (class order reshuffled every round) plus `quota % C` extra draws taken
/// from a class cycle that persists across batches. Within a batch class
/// counts differ by at most one, and every group of `C` consecutive batches
/// (counted from the first) draws each class exactly `quota` times. Inside a
/// class, samples are taken from a shuffled permutation that is reshuffled
/// when exhausted.
#[derive(Debug, Clone)]
pub struct BalancedBatches<R> {
    classes: Vec<ClassPool>,
    quota: usize,
    extra_cycle: Vec<usize>,
    extra_pos: usize,
    rng: R,
}

#[derive(Debug, Clone)]
struct ClassPool {
    order: Vec<usize>,
    pos: usize,
}

impl<R: Rng> BalancedBatches<R> {
    pub fn new(indices_by_class: Vec<Vec<usize>>, quota: usize, mut rng: R) -> Result<Self> {
        if quota == 0 {
            return Err(invalid("batch quota must be positive"));
        }
        let classes: Vec<ClassPool> = indices_by_class
            .into_iter()
            .filter(|c| !c.is_empty())
            .map(|mut order| {
                order.shuffle(&mut rng);
                ClassPool { order, pos: 0 }
            })
            .collect();
        if classes.is_empty() {
            return Err(invalid("every class is empty"));
        }
        Ok(Self {
            classes,
            quota,
            extra_cycle: Vec::new(),
            extra_pos: 0,
            rng,
        })
    }

    /// Number of non-empty classes being balanced.
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    fn draw(&mut self, class: usize) -> usize {
        let pool = &mut self.classes[class];
        if pool.pos == pool.order.len() {
            pool.order.shuffle(&mut self.rng);
            pool.pos = 0;
        }
        pool.pos += 1;
        pool.order[pool.pos - 1]
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let c = self.classes.len();
        let mut batch = Vec::with_capacity(self.quota);
        let mut order: Vec<usize> = (0..c).collect();
        for _ in 0..self.quota / c {
            order.shuffle(&mut self.rng);
            for &class in &order {
                batch.push(self.draw(class));
            }
        }
        let mut used = vec![false; c];
        for _ in 0..self.quota % c {
            if self.extra_pos == self.extra_cycle.len() {
                self.extra_cycle = (0..c).collect();
                self.extra_cycle.shuffle(&mut self.rng);
                // classes already topped up in this batch go to the back
                self.extra_cycle.sort_by_key(|&k| used[k]);
                self.extra_pos = 0;
            }
            let class = self.extra_cycle[self.extra_pos];
            self.extra_pos += 1;
            used[class] = true;
            batch.push(self.draw(class));
        }
        batch
    }
}

impl<R: Rng> Iterator for BalancedBatches<R> {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn class_of(classes: &[Vec<usize>], idx: usize) -> usize {
        classes.iter().position(|c| c.contains(&idx)).unwrap()
    }

    fn counts(classes: &[Vec<usize>], batch: &[usize]) -> Vec<usize> {
        let mut out = vec![0; classes.len()];
        for &i in batch {
            out[class_of(classes, i)] += 1;
        }
        out
    }

    #[test]
    fn two_classes_quota_four() {
        let classes = vec![vec![0, 1, 2, 3, 4], vec![10, 11, 12]];
        let sampler = BalancedBatches::new(classes.clone(), 4, ChaCha8Rng::seed_from_u64(0)).unwrap();
        for batch in sampler.take(20) {
            assert_eq!(counts(&classes, &batch), vec![2, 2]);
        }
    }

    #[test]
    fn three_classes_quota_four() {
        let classes = vec![vec![0, 1], vec![2, 3, 4], vec![5, 6, 7, 8]];
        let sampler = BalancedBatches::new(classes.clone(), 4, ChaCha8Rng::seed_from_u64(1)).unwrap();
        for batch in sampler.take(50) {
            let c = counts(&classes, &batch);
            assert!(c.iter().max().unwrap() - c.iter().min().unwrap() <= 1, "{c:?}");
        }
    }

    #[test]
    fn singleton_class_repeats() {
        let classes = vec![vec![0], vec![1, 2, 3, 4, 5, 6], vec![7, 8, 9, 10]];
        let sampler = BalancedBatches::new(classes.clone(), 8, ChaCha8Rng::seed_from_u64(2)).unwrap();
        let batches: Vec<_> = sampler.take(3).collect();
        for b in &batches {
            assert!(b.contains(&0));
        }
        assert!(batches.iter().flatten().filter(|&&i| i == 0).count() >= 6);
    }

    #[test]
    fn empty_classes() {
        assert!(BalancedBatches::new(vec![vec![], vec![]], 4, ChaCha8Rng::seed_from_u64(0)).is_err());
        let s = BalancedBatches::new(vec![vec![], vec![3]], 4, ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.num_classes(), 1);
    }

    proptest! {
        #[test]
        fn balance_and_coverage(sizes in proptest::collection::vec(0usize..6, 1..6),
                                quota in 1usize..12, seed in 0u64..1000) {
            let mut next = 0;
            let classes: Vec<Vec<usize>> = sizes.iter().map(|&s| {
                let c: Vec<usize> = (next..next + s).collect();
                next += s;
                c
            }).collect();
            let nonempty: Vec<Vec<usize>> = classes.iter().filter(|c| !c.is_empty()).cloned().collect();
            prop_assume!(!nonempty.is_empty());
            let c = nonempty.len();
            let n: usize = sizes.iter().sum();
            let num_batches = (n * c).div_ceil(quota) + c;
            let batches: Vec<Vec<usize>> =
                BalancedBatches::new(classes.clone(), quota, ChaCha8Rng::seed_from_u64(seed)).unwrap()
                    .take(num_batches).collect();
            for b in &batches {
                prop_assert_eq!(b.len(), quota);
                prop_assert!(b.iter().all(|&i| i < n));
                let k = counts(&nonempty, b);
                prop_assert!(k.iter().max().unwrap() - k.iter().min().unwrap() <= 1);
            }
            for group in batches.chunks_exact(c) {
                let flat: Vec<usize> = group.concat();
                prop_assert!(counts(&nonempty, &flat).iter().all(|&k| k == quota));
            }
            let seen: std::collections::HashSet<usize> = batches.iter().flatten().copied().collect();
            prop_assert_eq!(seen.len(), n);
        }
    }
}
