use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ImageRecord;

/// Samples up to `per_category` images for every logo id, in ascending logo
/// order. An image already taken for an earlier logo is not taken twice.
/// Images without instances are never selected.
pub fn balanced_test_split(
    records: &[ImageRecord],
    per_category: usize,
    seed: u64,
) -> Vec<ImageRecord> {
    let per_category = per_category.max(1);
    let mut by_logo: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        let mut logos: Vec<u32> = rec.annotations.iter().map(|a| a.label.logo_id).collect();
        logos.sort_unstable();
        logos.dedup();
        for logo in logos {
            by_logo.entry(logo).or_default().push(i);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut taken = HashSet::new();
    let mut out = Vec::new();
    for (_, mut images) in by_logo {
        images.shuffle(&mut rng);
        let mut count = 0;
        for i in images {
            if count == per_category {
                break;
            }
            if taken.insert(i) {
                out.push(records[i].clone());
                count += 1;
            }
        }
    }
    out
}
