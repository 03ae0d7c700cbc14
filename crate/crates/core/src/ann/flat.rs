use super::{l2_sq_f64, SearchResult, TopK};
use crate::error::{Error, Result};

/// Exact k nearest neighbours by brute force. Ids are row indices.
pub fn exhaustive_search(vectors: &[f32], dim: usize, query: &[f32], k: usize) -> Result<SearchResult> {
    if dim == 0 || vectors.len() % dim != 0 {
        return Err(Error::invalid(format!(
            "vector buffer of length {} is not a multiple of dim {dim}",
            vectors.len()
        )));
    }
    if query.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: query.len(),
        });
    }
    let mut top = TopK::new(k);
    for (i, v) in vectors.chunks_exact(dim).enumerate() {
        top.push(i as u64, l2_sq_f64(query, v));
    }
    Ok(top.into_result())
}
