//! Inverted file over a coarse quantizer with product-quantized residuals.

use std::collections::HashSet;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::kmeans::{kmeans_fit, nearest};
use super::pq::{pq_train, PqCodebook};
use super::{derive_seed, l2_sq_f64, SearchResult, TopK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IvfParams {
    pub nlist: usize,
    pub m: usize,
    pub ksub: usize,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for IvfParams {
    fn default() -> Self {
        Self {
            nlist: 256,
            m: 16,
            ksub: 256,
            max_iters: 25,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvertedList {
    pub ids: Vec<u64>,
    /// `ids.len() x m` bytes.
    pub codes: Vec<u8>,
}

impl InvertedList {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub coarse_distortion: f64,
    pub pq_distortion: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IvfPqIndex {
    dim: usize,
    coarse: Vec<f32>,
    codebook: PqCodebook,
    lists: Vec<InvertedList>,
    ids: HashSet<u64>,
}

impl IvfPqIndex {
    /// Trains the coarse quantizer and residual codebooks on `vectors` and
    /// adds them with ids `0..n`.
    pub fn build(vectors: &[f32], dim: usize, params: &IvfParams) -> Result<(Self, BuildReport)> {
        let n = if dim == 0 { 0 } else { vectors.len() / dim };
        let ids: Vec<u64> = (0..n as u64).collect();
        Self::build_with_ids(vectors, &ids, dim, params)
    }

    pub fn build_with_ids(
        vectors: &[f32],
        ids: &[u64],
        dim: usize,
        params: &IvfParams,
    ) -> Result<(Self, BuildReport)> {
        if dim == 0 || vectors.len() % dim != 0 {
            return Err(Error::invalid(format!(
                "vector buffer of length {} is not a multiple of dim {dim}",
                vectors.len()
            )));
        }
        let n = vectors.len() / dim;
        if ids.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: ids.len(),
            });
        }
        if params.nlist == 0 {
            return Err(Error::invalid("nlist must be at least 1"));
        }
        let required = params.nlist.max(params.ksub);
        if n < required {
            return Err(Error::NotEnoughData { required, got: n });
        }
        let coarse_model = kmeans_fit(vectors, dim, params.nlist, params.max_iters, derive_seed(params.seed, 0))?;
        let coarse = coarse_model.centroids;

        let assignment: Vec<usize> = vectors
            .par_chunks_exact(dim)
            .map(|v| nearest(&coarse, dim, v).0)
            .collect();
        let mut residuals = Vec::with_capacity(vectors.len());
        for (v, &list) in vectors.chunks_exact(dim).zip(&assignment) {
            let c = &coarse[list * dim..(list + 1) * dim];
            residuals.extend(v.iter().zip(c).map(|(a, b)| a - b));
        }
        let codebook = pq_train(
            &residuals,
            dim,
            params.m,
            params.ksub,
            params.max_iters,
            derive_seed(params.seed, 1),
        )?;
        let pq_distortion = codebook.distortion(&residuals)?;

        let mut index = Self {
            dim,
            coarse,
            codebook,
            lists: vec![InvertedList::default(); params.nlist],
            ids: HashSet::with_capacity(n),
        };
        for (i, v) in vectors.chunks_exact(dim).enumerate() {
            index.add(ids[i], v)?;
        }
        debug!(
            "built index: n={n} nlist={} m={} ksub={} coarse={:.4} pq={:.4}",
            params.nlist, params.m, params.ksub, coarse_model.distortion, pq_distortion
        );
        Ok((
            index,
            BuildReport {
                coarse_distortion: coarse_model.distortion,
                pq_distortion,
            },
        ))
    }

    /// Reassembles an index from stored parts, checking consistency.
    pub fn from_parts(dim: usize, coarse: Vec<f32>, codebook: PqCodebook, lists: Vec<InvertedList>) -> Result<Self> {
        if dim == 0 || codebook.dim != dim || coarse.len() != lists.len() * dim || lists.is_empty() {
            return Err(Error::Format("index parts have inconsistent shapes".into()));
        }
        let mut ids = HashSet::new();
        for list in &lists {
            if list.codes.len() != list.ids.len() * codebook.m {
                return Err(Error::Format("inverted list code length mismatch".into()));
            }
            if list.codes.iter().any(|&c| c as usize >= codebook.ksub) {
                return Err(Error::Format("code entry exceeds ksub".into()));
            }
            for &id in &list.ids {
                if !ids.insert(id) {
                    return Err(Error::Format(format!("duplicate id {id} in index")));
                }
            }
        }
        Ok(Self {
            dim,
            coarse,
            codebook,
            lists,
            ids,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nlist(&self) -> usize {
        self.lists.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.ids.contains(&id)
    }

    pub fn coarse_centroids(&self) -> &[f32] {
        &self.coarse
    }

    pub fn coarse_centroid(&self, list: usize) -> &[f32] {
        &self.coarse[list * self.dim..(list + 1) * self.dim]
    }

    pub fn codebook(&self) -> &PqCodebook {
        &self.codebook
    }

    pub fn lists(&self) -> &[InvertedList] {
        &self.lists
    }

    /// Coarse list a vector falls into.
    pub fn assign(&self, vector: &[f32]) -> Result<usize> {
        self.check_dim(vector.len())?;
        Ok(nearest(&self.coarse, self.dim, vector).0)
    }

    fn check_dim(&self, len: usize) -> Result<()> {
        if len != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: len,
            });
        }
        Ok(())
    }

    /// Encodes `vector` with the frozen quantizers and appends it. No
    /// training happens here.
    pub fn add(&mut self, id: u64, vector: &[f32]) -> Result<()> {
        self.check_dim(vector.len())?;
        if self.ids.contains(&id) {
            return Err(Error::invalid(format!("id {id} is already in the index")));
        }
        let list = nearest(&self.coarse, self.dim, vector).0;
        let residual: Vec<f32> = vector
            .iter()
            .zip(self.coarse_centroid(list))
            .map(|(a, b)| a - b)
            .collect();
        let m = self.codebook.m;
        let target = &mut self.lists[list];
        let start = target.codes.len();
        target.codes.resize(start + m, 0);
        self.codebook.encode_into(&residual, &mut target.codes[start..]);
        target.ids.push(id);
        self.ids.insert(id);
        Ok(())
    }

    /// The `nprobe` lists nearest to `query`, ties to the lower list index.
    pub fn probe_lists(&self, query: &[f32], nprobe: usize) -> Result<Vec<usize>> {
        self.check_dim(query.len())?;
        if nprobe == 0 || nprobe > self.nlist() {
            return Err(Error::invalid(format!(
                "nprobe must lie in 1..={}, got {nprobe}",
                self.nlist()
            )));
        }
        let mut order: Vec<(f64, usize)> = self
            .coarse
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(i, c)| (l2_sq_f64(query, c), i))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        Ok(order.into_iter().take(nprobe).map(|(_, i)| i).collect())
    }

    /// Approximate k nearest neighbours, scanning the `nprobe` closest lists.
    pub fn search(&self, query: &[f32], k: usize, nprobe: usize) -> Result<SearchResult> {
        let probes = self.probe_lists(query, nprobe)?;
        let m = self.codebook.m;
        let mut top = TopK::new(k);
        let mut residual = vec![0f64; self.dim];
        for list in probes {
            let inv = &self.lists[list];
            if inv.is_empty() {
                continue;
            }
            for ((r, &q), &c) in residual.iter_mut().zip(query).zip(self.coarse_centroid(list)) {
                *r = q as f64 - c as f64;
            }
            let tables = self.codebook.adc_tables_f64(&residual);
            for (&id, code) in inv.ids.iter().zip(inv.codes.chunks_exact(m)) {
                top.push(id, tables.distance(code));
            }
        }
        Ok(top.into_result())
    }

    pub fn search_many(&self, queries: &[f32], k: usize, nprobe: usize) -> Result<Vec<SearchResult>> {
        if queries.len() % self.dim != 0 {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: queries.len() % self.dim,
            });
        }
        queries
            .par_chunks_exact(self.dim)
            .map(|q| self.search(q, k, nprobe))
            .collect()
    }
}
