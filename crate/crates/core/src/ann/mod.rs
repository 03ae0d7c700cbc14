//! Instance-retrieval backend.
//!
//! Squared Euclidean distance throughout. Vectors are stored as `f32`;
//! lookup tables and reported distances are `f64`.

mod flat;
mod io;
mod ivf;
mod kmeans;
mod pq;

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicU64, Ordering as AtomicOrdering};

use serde::{Deserialize, Serialize};

pub use flat::exhaustive_search;
pub use io::{deserialize_index, read_index, serialize_index, write_index, INDEX_MAGIC, INDEX_VERSION};
pub use ivf::{BuildReport, InvertedList, IvfParams, IvfPqIndex};
pub use kmeans::{kmeans_fit, KMeansModel};
pub use pq::{adc_distance, pq_train, subspace_seed, AdcTables, PqCodebook};

static TRAINING_RUNS: AtomicU64 = AtomicU64::new(0);

/// Number of k-means fits run by this process. Building an index bumps it;
/// adding to or searching an index never does.
pub fn training_runs() -> u64 {
    TRAINING_RUNS.load(AtomicOrdering::Relaxed)
}

fn record_training_run() {
    TRAINING_RUNS.fetch_add(1, AtomicOrdering::Relaxed);
}

#[inline]
pub fn l2_sq(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            let d = x[i] - y[i];
            acc[i] += d * d;
        }
    }
    let mut sum: f32 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        let d = x - y;
        sum += d * d;
    }
    sum
}

/// Exact squared distance accumulated in `f64`.
#[inline]
pub fn l2_sq_f64(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub id: u64,
    pub distance: f64,
}

impl Neighbor {
    fn rank(&self, other: &Self) -> Ordering {
        self.distance
            .total_cmp(&other.distance)
            .then(self.id.cmp(&other.id))
    }
}

impl Eq for Neighbor {}

impl PartialOrd for Neighbor {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Neighbor {
    fn cmp(&self, other: &Self) -> Ordering {
        self.rank(other)
    }
}

/// Neighbours by ascending distance, ties by ascending id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub neighbors: Vec<Neighbor>,
}

impl SearchResult {
    pub fn ids(&self) -> Vec<u64> {
        self.neighbors.iter().map(|n| n.id).collect()
    }

    pub fn top(&self) -> Option<&Neighbor> {
        self.neighbors.first()
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

/// Bounded max-heap keeping the `k` best neighbours seen so far.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Neighbor>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        Self {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, id: u64, distance: f64) {
        if self.k == 0 {
            return;
        }
        let candidate = Neighbor { id, distance };
        if self.heap.len() < self.k {
            self.heap.push(candidate);
        } else if let Some(worst) = self.heap.peek() {
            if candidate < *worst {
                self.heap.pop();
                self.heap.push(candidate);
            }
        }
    }

    pub(crate) fn into_result(self) -> SearchResult {
        SearchResult {
            neighbors: self.heap.into_sorted_vec(),
        }
    }
}

/// SplitMix64 step, used to derive independent seeds for sub-problems.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
