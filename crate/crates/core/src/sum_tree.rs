//! Binary sum tree over slot priorities.
//!
//! Supports O(log n) priority writes and O(log n) proportional sampling via
//! prefix search, which is what keeps priority-based replay cheap at large
//! buffer sizes. Leaves are padded up to the next power of two; padding
//! leaves stay at zero mass and are unreachable by sampling.

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SumTree {
    capacity: usize,
    /// First leaf index. `nodes[0]` is unused so that parent/child arithmetic
    /// is just `i/2`, `2i`, `2i+1`; the root lives at `nodes[1]`.
    leaf_base: usize,
    nodes: Vec<f64>,
}

impl SumTree {
    /// Tree with `capacity` addressable leaves, all at priority zero.
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("sum tree capacity must be >= 1".into()));
        }
        let leaf_base = capacity.next_power_of_two();
        Ok(Self { capacity, leaf_base, nodes: vec![0.0; 2 * leaf_base] })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total mass, i.e. the sum of all leaf priorities.
    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, index: usize) -> Result<f64> {
        self.check_index(index)?;
        Ok(self.nodes[self.leaf_base + index])
    }

    /// Writes `priority` at `index` and refreshes the path to the root.
    ///
    /// Interior nodes are recomputed from their children rather than nudged
    /// by a delta, so repeated updates cannot accumulate floating-point
    /// drift: every parent is exactly the sum of its two children at all
    /// times, and `total()` is exactly the tree-order sum of the leaves.
    pub fn set(&mut self, index: usize, priority: f64) -> Result<()> {
        self.check_index(index)?;
        if !priority.is_finite() || priority < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "priority must be finite and >= 0, got {priority}"
            )));
        }
        let mut node = self.leaf_base + index;
        self.nodes[node] = priority;
        while node > 1 {
            node /= 2;
            self.nodes[node] = self.nodes[2 * node] + self.nodes[2 * node + 1];
        }
        Ok(())
    }

    /// Finds the leaf whose cumulative-priority interval contains `u`.
    ///
    /// Leaves partition `[0, total)` into half-open spans ordered by index;
    /// the returned index is the unique leaf with
    /// `sum(p[..i]) <= u < sum(p[..=i])`. A boundary value of `u` therefore
    /// selects the right-hand leaf, and zero-priority leaves (empty spans)
    /// can never be selected.
    pub fn sample_prefix(&self, u: f64) -> Result<usize> {
        let total = self.total();
        if total <= 0.0 {
            return Err(Error::EmptyTree);
        }
        if !(u >= 0.0 && u < total) {
            return Err(Error::InvalidArgument(format!(
                "prefix value {u} outside [0, {total})"
            )));
        }
        let mut node = 1;
        let mut rest = u;
        while node < self.leaf_base {
            let left = 2 * node;
            if rest < self.nodes[left] {
                node = left;
            } else {
                rest -= self.nodes[left];
                node = left + 1;
            }
        }
        Ok(node - self.leaf_base)
    }

    fn check_index(&self, index: usize) -> Result<()> {
        if index >= self.capacity {
            return Err(Error::OutOfBounds { index, len: self.capacity });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tree_with(priorities: &[f64]) -> SumTree {
        let mut t = SumTree::new(priorities.len()).unwrap();
        for (i, &p) in priorities.iter().enumerate() {
            t.set(i, p).unwrap();
        }
        t
    }

    /// Reference semantics for `sample_prefix`: walk the leaves, subtracting.
    fn linear_scan(priorities: &[f64], mut u: f64) -> usize {
        for (i, &p) in priorities.iter().enumerate() {
            if u < p {
                return i;
            }
            u -= p;
        }
        unreachable!("u must lie below the total");
    }

    #[test]
    fn fresh_tree_has_zero_total() {
        assert_eq!(SumTree::new(4).unwrap().total(), 0.0);
    }

    #[test]
    fn capacity_one_roundtrip() {
        let mut t = SumTree::new(1).unwrap();
        t.set(0, 5.0).unwrap();
        assert_eq!(t.total(), 5.0);
        assert_eq!(t.get(0).unwrap(), 5.0);
        assert_eq!(t.sample_prefix(4.999).unwrap(), 0);
    }

    #[test]
    fn total_tracks_overwrites() {
        let mut t = tree_with(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(t.total(), 10.0);
        t.set(0, 11.0).unwrap();
        assert_eq!(t.total(), 20.0);
        assert_eq!(t.get(0).unwrap(), 11.0);
        assert_eq!(t.get(3).unwrap(), 4.0);
    }

    #[test]
    fn prefix_search_hits_documented_spans() {
        let t = tree_with(&[1.0, 2.0, 3.0, 4.0]);
        // Spans: [0,1) [1,3) [3,6) [6,10).
        assert_eq!(t.sample_prefix(0.0).unwrap(), 0);
        assert_eq!(t.sample_prefix(0.5).unwrap(), 0);
        assert_eq!(t.sample_prefix(1.0).unwrap(), 1); // boundary goes right
        assert_eq!(t.sample_prefix(2.999).unwrap(), 1);
        assert_eq!(t.sample_prefix(3.0).unwrap(), 2);
        assert_eq!(t.sample_prefix(9.999).unwrap(), 3);
    }

    #[test]
    fn zero_mass_leaves_are_skipped() {
        let t = tree_with(&[0.0, 0.0, 7.0, 0.0]);
        for u in [0.0, 3.5, 6.999] {
            assert_eq!(t.sample_prefix(u).unwrap(), 2);
        }
    }

    #[test]
    fn padding_to_power_of_two_is_invisible() {
        // Capacity 5 pads to 8 internal leaves; indices 5..8 must not leak.
        let mut t = SumTree::new(5).unwrap();
        for i in 0..5 {
            t.set(i, 1.0).unwrap();
        }
        assert_eq!(t.total(), 5.0);
        assert_eq!(t.sample_prefix(4.999).unwrap(), 4);
        assert!(matches!(t.set(5, 1.0), Err(Error::OutOfBounds { index: 5, len: 5 })));
        assert!(matches!(t.get(7), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn rejects_bad_construction_and_writes() {
        assert!(matches!(SumTree::new(0), Err(Error::InvalidArgument(_))));
        let mut t = SumTree::new(2).unwrap();
        assert!(matches!(t.set(0, -1.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(t.set(0, f64::NAN), Err(Error::InvalidArgument(_))));
        assert!(matches!(t.set(0, f64::INFINITY), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn rejects_bad_prefix_queries() {
        let t = SumTree::new(3).unwrap();
        assert!(matches!(t.sample_prefix(0.0), Err(Error::EmptyTree)));
        let t = tree_with(&[1.0, 1.0]);
        assert!(matches!(t.sample_prefix(-0.1), Err(Error::InvalidArgument(_))));
        assert!(matches!(t.sample_prefix(2.0), Err(Error::InvalidArgument(_))));
        assert!(matches!(t.sample_prefix(f64::NAN), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn update_path_length_is_logarithmic() {
        // One leaf write touches the leaf plus its ancestors: depth+1 nodes.
        for capacity in [1usize, 2, 3, 5, 8, 100, 1 << 17] {
            let t = SumTree::new(capacity).unwrap();
            let writes = t.leaf_base.trailing_zeros() as usize + 1;
            let bound = if capacity == 1 { 1 } else { (capacity - 1).ilog2() as usize + 2 };
            assert!(writes <= bound, "capacity {capacity}: {writes} writes > {bound}");
        }
    }

    #[test]
    fn zero_priority_slot_never_sampled_in_bulk_draw() {
        use rand::{Rng, SeedableRng};
        let mut t = tree_with(&[2.0, 0.0, 1.0, 0.5]);
        t.set(1, 0.0).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let u = rng.random_range(0.0..t.total());
            assert_ne!(t.sample_prefix(u).unwrap(), 1);
        }
    }

    proptest! {
        /// Tree-descent sampling agrees exactly with a linear scan when both
        /// see representable arithmetic: integer-valued priorities and
        /// integer-and-halves query points keep every partial sum exact.
        #[test]
        fn prefix_search_matches_linear_scan(
            raw in proptest::collection::vec(0u16..64, 1..64),
            numer in 0u32..1 << 16,
        ) {
            let priorities: Vec<f64> = raw.iter().map(|&p| f64::from(p)).collect();
            let total: f64 = priorities.iter().sum();
            prop_assume!(total > 0.0);
            let t = tree_with(&priorities);
            prop_assert_eq!(t.total(), total);
            let u = (f64::from(numer) / f64::from(1u32 << 16)) * total;
            // u is total * k/2^16 with total an integer: exactly representable
            // and strictly below total whenever numer < 2^16.
            prop_assert_eq!(t.sample_prefix(u).unwrap(), linear_scan(&priorities, u));
        }

        #[test]
        fn total_always_equals_leaf_sum(
            writes in proptest::collection::vec((0usize..32, 0u16..1000), 1..200),
        ) {
            let mut t = SumTree::new(32).unwrap();
            let mut shadow = [0.0f64; 32];
            for (i, p) in writes {
                let p = f64::from(p) / 8.0; // exact dyadic values
                t.set(i, p).unwrap();
                shadow[i] = p;
            }
            prop_assert_eq!(t.total(), shadow.iter().sum::<f64>());
            for (i, &p) in shadow.iter().enumerate() {
                prop_assert_eq!(t.get(i).unwrap(), p);
            }
        }
    }
}
