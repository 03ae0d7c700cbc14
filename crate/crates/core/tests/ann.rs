use std::collections::HashSet;

use logoscope::ann::{
    adc_distance, deserialize_index, pq_train, read_index, serialize_index, write_index, IvfParams, IvfPqIndex,
    INDEX_MAGIC,
};
use logoscope::Error;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(n: usize, dim: usize, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn small_index(seed: u64) -> (IvfPqIndex, Vec<f32>) {
    let data = points(600, 16, seed);
    let params = IvfParams {
        nlist: 8,
        m: 4,
        ksub: 32,
        max_iters: 10,
        seed,
    };
    (IvfPqIndex::build(&data, 16, &params).unwrap().0, data)
}

fn list_total(index: &IvfPqIndex) -> usize {
    index.lists().iter().map(|l| l.ids.len()).sum()
}

#[test]
fn finer_codebooks_never_distort_more() {
    let data = points(2000, 16, 3);
    let coarse = pq_train(&data, 16, 4, 16, 15, 7).unwrap();
    let fine = pq_train(&data, 16, 4, 256, 15, 7).unwrap();
    let (c, f) = (coarse.distortion(&data).unwrap(), fine.distortion(&data).unwrap());
    assert!(f <= c, "ksub=256 distortion {f} above ksub=16 distortion {c}");
}

#[test]
fn header_fields_sit_at_their_offsets() {
    let (index, _) = small_index(1);
    let bytes = serialize_index(&index).unwrap();
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
    assert_eq!(bytes[..4], INDEX_MAGIC);
    assert_eq!(word(4), 1);
    assert_eq!(word(8), 16);
    assert_eq!(word(12), 4);
    assert_eq!(word(16), 32);
    assert_eq!(word(20), 8);
    assert_eq!(word(24), 600);
}

#[test]
fn file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.obix");
    let (index, data) = small_index(2);
    write_index(&index, &path).unwrap();
    let back = read_index(&path).unwrap();
    assert_eq!(serialize_index(&back).unwrap(), serialize_index(&index).unwrap());
    let q = &data[..16];
    assert_eq!(back.search(q, 5, 8).unwrap(), index.search(q, 5, 8).unwrap());

    let mut bytes = std::fs::read(&path).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(deserialize_index(&bytes), Err(Error::Checksum { .. })));
    assert!(deserialize_index(&bytes[..10]).is_err());
}

#[test]
fn add_appends_without_touching_the_quantizers() {
    let (mut index, _) = small_index(4);
    let before = serialize_index(&index).unwrap();
    let extra = points(50, 16, 5);
    for (i, v) in extra.chunks_exact(16).enumerate() {
        index.add(10_000 + i as u64, v).unwrap();
    }
    assert_eq!(index.len(), 650);
    assert_eq!(list_total(&index), 650);
    assert!(index.add(10_000, &extra[..16]).is_err());
    let after = serialize_index(&index).unwrap();
    let quantizers = 28 + 4 * (8 * 16 + 4 * 32 * 4);
    assert_eq!(before[28..quantizers], after[28..quantizers]);
    let hit = index.search(&extra[..16], 1, 8).unwrap();
    assert_eq!(hit.top().map(|n| n.id), Some(10_000));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn adc_matches_decoded_distance(seed in 0u64..1000, qseed in any::<u64>()) {
        let data = points(300, 12, seed);
        let cb = pq_train(&data, 12, 3, 16, 8, seed).unwrap();
        let q = points(1, 12, qseed);
        let tables = cb.adc_tables(&q).unwrap();
        for x in data.chunks_exact(12).take(40) {
            let code = cb.encode(x).unwrap();
            let rec = cb.decode(&code).unwrap();
            let direct: f64 = q.iter().zip(&rec).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
            prop_assert!((adc_distance(&tables, &code) - direct).abs() <= 1e-6);
        }
    }

    #[test]
    fn every_id_lives_in_exactly_one_list(seed in 0u64..1000) {
        let (index, _) = small_index(seed);
        prop_assert_eq!(list_total(&index), index.len());
        let mut seen = HashSet::new();
        for list in index.lists() {
            prop_assert_eq!(list.codes.len(), list.ids.len() * 4);
            for id in &list.ids {
                prop_assert!(seen.insert(*id));
            }
        }
    }

    #[test]
    fn search_distances_are_sorted(seed in 0u64..1000, k in 1usize..30, nprobe in 1usize..9) {
        let (index, data) = small_index(seed % 7);
        let q = &data[(seed as usize % 600) * 16..][..16];
        let res = index.search(q, k, nprobe).unwrap();
        prop_assert!(res.len() <= k);
        for w in res.neighbors.windows(2) {
            prop_assert!(w[0].distance <= w[1].distance);
        }
    }
}
