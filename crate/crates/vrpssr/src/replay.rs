//! Proportional prioritized experience replay over a sum tree.
//!
//! Leaves hold priorities already raised to alpha, so sampling is a plain
//! prefix-sum descent. Side min/max trees give the max-weight normalizer and
//! the new-transition priority without scanning.

use std::sync::Arc;

use rand::Rng;

use crate::error::{Error, Result};
use crate::obs::Observation;

/// One replay record. Observations are shared `Arc`s: the next observation of
/// one step is the current observation of the following one.
#[derive(Debug, Clone)]
pub struct Transition {
    pub obs: Arc<Observation>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Arc<Observation>,
    pub terminal: bool,
}

/// Complete binary tree over `capacity` leaves (padded to a power of two so
/// leaf order matches slot order). Internal nodes hold children sums; the
/// min/max arrays track the same leaves for weight normalization.
#[derive(Debug, Clone)]
pub struct SumTree {
    leaves: usize,
    sum: Vec<f64>,
    min: Vec<f64>,
    max: Vec<f64>,
}

impl SumTree {
    pub fn new(capacity: usize) -> SumTree {
        let leaves = capacity.next_power_of_two();
        SumTree {
            leaves,
            sum: vec![0.0; 2 * leaves],
            min: vec![f64::INFINITY; 2 * leaves],
            max: vec![0.0; 2 * leaves],
        }
    }

    pub fn set(&mut self, leaf: usize, value: f64) {
        assert!(leaf < self.leaves);
        let mut i = self.leaves + leaf;
        self.sum[i] = value;
        self.min[i] = if value > 0.0 { value } else { f64::INFINITY };
        self.max[i] = value;
        while i > 1 {
            i /= 2;
            self.sum[i] = self.sum[2 * i] + self.sum[2 * i + 1];
            self.min[i] = self.min[2 * i].min(self.min[2 * i + 1]);
            self.max[i] = self.max[2 * i].max(self.max[2 * i + 1]);
        }
    }

    pub fn get(&self, leaf: usize) -> f64 {
        self.sum[self.leaves + leaf]
    }

    pub fn total(&self) -> f64 {
        self.sum[1]
    }

    /// Smallest positive leaf value (infinity if all leaves are empty).
    pub fn min_positive(&self) -> f64 {
        self.min[1]
    }

    pub fn max_value(&self) -> f64 {
        self.max[1]
    }

    /// Descends to the unique leaf whose cumulative interval contains `v`
    /// (0 <= v < total).
    pub fn prefix_query(&self, v: f64) -> usize {
        let mut v = v;
        let mut i = 1usize;
        while i < self.leaves {
            let left = 2 * i;
            if v < self.sum[left] {
                i = left;
            } else {
                v -= self.sum[left];
                i = left + 1;
            }
        }
        i - self.leaves
    }
}

/// A sampled slot plus the generation it was observed at, so priority updates
/// for since-overwritten slots can be detected and skipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayIndex {
    pub slot: usize,
    pub generation: u64,
}

#[derive(Debug)]
pub struct PrioritizedReplay {
    tree: SumTree,
    data: Vec<Option<Transition>>,
    generation: Vec<u64>,
    capacity: usize,
    next_slot: usize,
    len: usize,
    pushes: u64,
    pub alpha: f64,
    /// Additive priority floor so zero-TD-error transitions stay sampleable.
    pub epsilon: f64,
}

pub const DEFAULT_PRIORITY_EPSILON: f64 = 1e-2;

impl PrioritizedReplay {
    pub fn new(capacity: usize, alpha: f64) -> PrioritizedReplay {
        assert!(capacity > 0);
        PrioritizedReplay {
            tree: SumTree::new(capacity),
            data: (0..capacity).map(|_| None).collect(),
            generation: vec![0; capacity],
            capacity,
            next_slot: 0,
            len: 0,
            pushes: 0,
            alpha,
            epsilon: DEFAULT_PRIORITY_EPSILON,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stores with the current max leaf priority (1.0 when empty), ring-buffer
    /// overwriting the oldest slot at capacity.
    pub fn push(&mut self, transition: Transition) {
        let priority = if self.len == 0 {
            1.0
        } else {
            self.tree.max_value()
        };
        let slot = self.next_slot;
        self.data[slot] = Some(transition);
        self.pushes += 1;
        self.generation[slot] = self.pushes;
        self.tree.set(slot, priority);
        self.next_slot = (self.next_slot + 1) % self.capacity;
        self.len = (self.len + 1).min(self.capacity);
    }

    pub fn slot_priority(&self, slot: usize) -> f64 {
        self.tree.get(slot)
    }

    /// Stratified proportional sampling: the total mass is split into
    /// `batch_size` equal segments with one uniform prefix query each.
    /// Importance weights are (N * P(i))^-beta, normalized so the maximum
    /// possible weight over the buffer is 1.
    pub fn sample(
        &self,
        batch_size: usize,
        beta: f64,
        rng: &mut impl Rng,
    ) -> Result<(Vec<&Transition>, Vec<ReplayIndex>, Vec<f64>)> {
        if self.len < batch_size {
            return Err(Error::BufferTooSmall {
                have: self.len,
                need: batch_size,
            });
        }
        let total = self.tree.total();
        let min_leaf = self.tree.min_positive();
        let segment = total / batch_size as f64;
        let mut transitions = Vec::with_capacity(batch_size);
        let mut indices = Vec::with_capacity(batch_size);
        let mut weights = Vec::with_capacity(batch_size);
        for k in 0..batch_size {
            let v = (k as f64 + rng.random::<f64>()) * segment;
            let slot = self.tree.prefix_query(v.min(total * (1.0 - 1e-12)));
            let leaf = self.tree.get(slot);
            // w_i = (N p_i / total)^-beta normalized by the max weight, which
            // belongs to the smallest leaf; the N and total factors cancel.
            let weight = if beta == 0.0 {
                1.0
            } else {
                (leaf / min_leaf).powf(-beta)
            };
            transitions.push(
                self.data[slot]
                    .as_ref()
                    .expect("sampled slot is populated"),
            );
            indices.push(ReplayIndex {
                slot,
                generation: self.generation[slot],
            });
            weights.push(weight);
        }
        Ok((transitions, indices, weights))
    }

    /// Read access for persistence: the stored transition, its leaf value,
    /// and the push generation of a slot.
    pub fn entry(&self, slot: usize) -> Option<(&Transition, f64, u64)> {
        self.data[slot]
            .as_ref()
            .map(|t| (t, self.tree.get(slot), self.generation[slot]))
    }

    pub fn next_slot(&self) -> usize {
        self.next_slot
    }

    pub fn pushes(&self) -> u64 {
        self.pushes
    }

    /// Rebuilds a buffer from persisted state. `entries` holds
    /// (slot, transition, leaf value, generation) for every occupied slot.
    pub fn restore(
        capacity: usize,
        alpha: f64,
        epsilon: f64,
        next_slot: usize,
        pushes: u64,
        entries: Vec<(usize, Transition, f64, u64)>,
    ) -> Result<PrioritizedReplay> {
        if capacity == 0 || next_slot >= capacity || entries.len() > capacity {
            return Err(Error::ShapeMismatch(format!(
                "replay restore: capacity {capacity}, next_slot {next_slot}, {} entries",
                entries.len()
            )));
        }
        let mut buf = PrioritizedReplay::new(capacity, alpha);
        buf.epsilon = epsilon;
        buf.next_slot = next_slot;
        buf.pushes = pushes;
        buf.len = entries.len();
        for (slot, transition, leaf, generation) in entries {
            if slot >= capacity || buf.data[slot].is_some() {
                return Err(Error::ShapeMismatch(format!(
                    "replay restore: bad or duplicate slot {slot}"
                )));
            }
            buf.data[slot] = Some(transition);
            buf.generation[slot] = generation;
            buf.tree.set(slot, leaf);
        }
        Ok(buf)
    }

    /// Sets leaf priorities to (|delta| + epsilon)^alpha. Indices whose slot
    /// was overwritten since sampling are skipped.
    pub fn update_priorities(&mut self, indices: &[ReplayIndex], td_errors: &[f64]) {
        for (idx, delta) in indices.iter().zip(td_errors) {
            if self.generation[idx.slot] != idx.generation {
                continue; // stale: slot has been overwritten
            }
            let p = (delta.abs() + self.epsilon).powf(self.alpha);
            self.tree.set(idx.slot, p);
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn dummy_obs() -> Arc<Observation> {
        Arc::new(Observation {
            width: 2,
            height: 2,
            planes: [vec![1, 0, 0, 0], vec![0; 4], vec![0; 4]],
            time_left: 1.0,
        })
    }

    fn dummy_transition(action: usize) -> Transition {
        Transition {
            obs: dummy_obs(),
            action,
            reward: 0.0,
            next_obs: dummy_obs(),
            terminal: false,
        }
    }

    #[test]
    fn push_to_empty_gets_priority_one() {
        let mut buf = PrioritizedReplay::new(8, 0.6);
        buf.push(dummy_transition(0));
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.slot_priority(0), 1.0);
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = PrioritizedReplay::new(4, 0.6);
        for a in 0..5 {
            buf.push(dummy_transition(a));
        }
        assert_eq!(buf.len(), 4);
        // Slot 0 now holds the fifth push.
        assert_eq!(buf.data[0].as_ref().unwrap().action, 4);
        assert_eq!(buf.data[1].as_ref().unwrap().action, 1);
    }

    #[test]
    fn push_inherits_raised_max_priority() {
        let mut buf = PrioritizedReplay::new(8, 1.0);
        buf.push(dummy_transition(0));
        buf.push(dummy_transition(1));
        let idx = ReplayIndex {
            slot: 1,
            generation: buf.generation[1],
        };
        // alpha=1, epsilon=1e-2: priority = 9 needs |delta| = 9 - 0.01.
        buf.update_priorities(&[idx], &[9.0 - buf.epsilon]);
        assert!((buf.slot_priority(1) - 9.0).abs() < 1e-12);
        buf.push(dummy_transition(2));
        assert!((buf.slot_priority(2) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_priorities_give_unit_weights() {
        let mut buf = PrioritizedReplay::new(16, 0.6);
        for a in 0..10 {
            buf.push(dummy_transition(a));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, _, weights) = buf.sample(4, 0.7, &mut rng).unwrap();
        assert!(weights.iter().all(|w| (*w - 1.0).abs() < 1e-12));
    }

    #[test]
    fn beta_zero_gives_unit_weights_even_when_skewed() {
        let mut buf = PrioritizedReplay::new(8, 1.0);
        for a in 0..4 {
            buf.push(dummy_transition(a));
        }
        let gens: Vec<ReplayIndex> = (0..4)
            .map(|slot| ReplayIndex {
                slot,
                generation: buf.generation[slot],
            })
            .collect();
        buf.update_priorities(&gens, &[0.0, 5.0, 20.0, 80.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (_, _, weights) = buf.sample(4, 0.0, &mut rng).unwrap();
        assert!(weights.iter().all(|w| *w == 1.0));
    }

    #[test]
    fn sampling_frequency_tracks_priority_ratio() {
        // Two items with leaf values 3:1 -> 75/25 sampling split.
        let mut buf = PrioritizedReplay::new(2, 1.0);
        buf.push(dummy_transition(0));
        buf.push(dummy_transition(1));
        let gens: Vec<ReplayIndex> = (0..2)
            .map(|slot| ReplayIndex {
                slot,
                generation: buf.generation[slot],
            })
            .collect();
        buf.update_priorities(&gens, &[3.0 - buf.epsilon, 1.0 - buf.epsilon]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mut count0 = 0usize;
        for _ in 0..draws {
            let (_, idx, _) = buf.sample(1, 0.4, &mut rng).unwrap();
            if idx[0].slot == 0 {
                count0 += 1;
            }
        }
        let f0 = count0 as f64 / draws as f64;
        assert!((f0 - 0.75).abs() < 0.01, "frequency {f0}");
    }

    #[test]
    fn dominant_priority_dominates_sampling() {
        let mut buf = PrioritizedReplay::new(16, 1.0);
        for a in 0..10 {
            buf.push(dummy_transition(a));
        }
        let gens: Vec<ReplayIndex> = (0..10)
            .map(|slot| ReplayIndex {
                slot,
                generation: buf.generation[slot],
            })
            .collect();
        let mut deltas = vec![1.0 - buf.epsilon; 10];
        deltas[3] = 1000.0 - buf.epsilon;
        buf.update_priorities(&gens, &deltas);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 10_000;
        let mut hits = 0usize;
        for _ in 0..draws {
            let (_, idx, _) = buf.sample(1, 0.4, &mut rng).unwrap();
            if idx[0].slot == 3 {
                hits += 1;
            }
        }
        assert!(hits as f64 >= 0.98 * draws as f64, "hits {hits}");
    }

    #[test]
    fn zero_td_error_keeps_positive_priority() {
        let mut buf = PrioritizedReplay::new(4, 0.6);
        buf.push(dummy_transition(0));
        let idx = ReplayIndex {
            slot: 0,
            generation: buf.generation[0],
        };
        buf.update_priorities(&[idx], &[0.0]);
        let expect = DEFAULT_PRIORITY_EPSILON.powf(0.6);
        assert!((buf.slot_priority(0) - expect).abs() < 1e-15);
        assert!(buf.slot_priority(0) > 0.0);
    }

    #[test]
    fn stale_index_is_skipped() {
        let mut buf = PrioritizedReplay::new(2, 1.0);
        buf.push(dummy_transition(0));
        buf.push(dummy_transition(1));
        let stale = ReplayIndex {
            slot: 0,
            generation: buf.generation[0],
        };
        buf.push(dummy_transition(2)); // overwrites slot 0
        let before = buf.slot_priority(0);
        buf.update_priorities(&[stale], &[50.0]);
        assert_eq!(buf.slot_priority(0), before);
    }

    #[test]
    fn sample_from_short_buffer_errors() {
        let mut buf = PrioritizedReplay::new(8, 0.6);
        buf.push(dummy_transition(0));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = buf.sample(2, 0.4, &mut rng).unwrap_err();
        assert!(matches!(err, Error::BufferTooSmall { have: 1, need: 2 }));
    }

    #[test]
    fn root_total_equals_leaf_sum_after_random_ops() {
        let mut buf = PrioritizedReplay::new(64, 0.6);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for i in 0..10_000 {
            match rng.random_range(0..3) {
                0 => buf.push(dummy_transition(i % 5)),
                1 if buf.len() >= 4 => {
                    let (_, idx, _) = buf.sample(4, 0.4, &mut rng).unwrap();
                    let deltas: Vec<f64> =
                        (0..4).map(|_| rng.random::<f64>() * 10.0).collect();
                    buf.update_priorities(&idx, &deltas);
                }
                _ => {}
            }
            let leaf_sum: f64 = (0..buf.capacity()).map(|s| buf.tree.get(s)).sum();
            let rel = (buf.tree.total() - leaf_sum).abs() / leaf_sum.max(1e-12);
            assert!(rel < 1e-6);
        }
    }

    #[test]
    fn prefix_query_matches_linear_scan() {
        let mut tree = SumTree::new(48); // pads to 64 leaves
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for leaf in 0..48 {
            if rng.random::<f64>() < 0.7 {
                tree.set(leaf, rng.random::<f64>() * 5.0);
            }
        }
        let total = tree.total();
        for probe in 0..5_000 {
            let v = (probe as f64 + 0.5) / 5_000.0 * total;
            let got = tree.prefix_query(v);
            // Linear scan oracle.
            let mut acc = 0.0;
            let mut expect = None;
            for leaf in 0..64 {
                let p = tree.get(leaf);
                if v < acc + p {
                    expect = Some(leaf);
                    break;
                }
                acc += p;
            }
            assert_eq!(Some(got), expect, "v={v}");
        }
    }
}
