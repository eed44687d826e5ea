//! Exact flat search and an IVF (inverted file) approximate index.
//!
//! Both return [`RankedHits`]: descending score, ties broken by ascending
//! [`DocId`]. The IVF index clusters a deterministic sample of the corpus with
//! spherical k-means and scans only the `n_probe` buckets whose centroids are
//! closest to the query.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, HashSet};
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::embedding::{check_dim, dot, DocId, Embedding, SimScore, UNIT_NORM_TOL};
use crate::error::{HasError, Result};
use crate::rng::RngStream;

/// Lloyd iterations used by [`IvfIndex::build`].
pub const KMEANS_ITERATIONS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hit {
    pub doc_id: DocId,
    pub score: SimScore,
}

impl Hit {
    /// `Less` means `self` ranks ahead of `other`.
    pub fn rank_cmp(&self, other: &Hit) -> Ordering {
        other
            .score
            .total_cmp(&self.score)
            .then_with(|| self.doc_id.cmp(&other.doc_id))
    }
}

/// Ranked result list; at most `k` hits, best first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedHits {
    hits: Vec<Hit>,
}

impl RankedHits {
    pub fn empty() -> Self {
        RankedHits { hits: Vec::new() }
    }

    /// Sorts arbitrary hits into rank order and truncates to `k`.
    /// Duplicate ids are kept; callers dedupe first when needed.
    pub fn from_unsorted(mut hits: Vec<Hit>, k: usize) -> Self {
        hits.sort_by(Hit::rank_cmp);
        hits.truncate(k);
        RankedHits { hits }
    }

    pub fn len(&self) -> usize {
        self.hits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hits.is_empty()
    }

    pub fn hits(&self) -> &[Hit] {
        &self.hits
    }

    pub fn iter(&self) -> impl Iterator<Item = &Hit> {
        self.hits.iter()
    }

    pub fn doc_ids(&self) -> Vec<DocId> {
        self.hits.iter().map(|h| h.doc_id).collect()
    }

    pub fn contains(&self, id: DocId) -> bool {
        self.hits.iter().any(|h| h.doc_id == id)
    }
}

// Heap entry ordered so that the worst-ranked hit is the maximum.
struct Worst(Hit);

impl PartialEq for Worst {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Worst {}
impl PartialOrd for Worst {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Worst {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.rank_cmp(&other.0)
    }
}

/// Bounded top-k collector.
pub(crate) struct TopK {
    k: usize,
    heap: BinaryHeap<Worst>,
}

impl TopK {
    pub(crate) fn new(k: usize) -> Self {
        TopK {
            k,
            heap: BinaryHeap::with_capacity(k + 1),
        }
    }

    #[inline]
    pub(crate) fn push(&mut self, doc_id: DocId, score: f32) {
        if self.k == 0 {
            return;
        }
        let hit = Hit {
            doc_id,
            score: SimScore(score),
        };
        if self.heap.len() < self.k {
            self.heap.push(Worst(hit));
        } else if let Some(worst) = self.heap.peek() {
            if hit.rank_cmp(&worst.0) == Ordering::Less {
                self.heap.pop();
                self.heap.push(Worst(hit));
            }
        }
    }

    pub(crate) fn finish(self) -> RankedHits {
        let mut hits: Vec<Hit> = self.heap.into_iter().map(|w| w.0).collect();
        hits.sort_by(Hit::rank_cmp);
        RankedHits { hits }
    }
}

/// Cost counters reported alongside a search, used by the latency model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Document vectors scored.
    pub vectors_scanned: usize,
    /// Centroid vectors scored (IVF only).
    pub centroids_scanned: usize,
}

impl SearchStats {
    pub fn total_vectors(&self) -> usize {
        self.vectors_scanned + self.centroids_scanned
    }
}

fn check_query(dim: usize, q: &Embedding) -> Result<()> {
    check_dim(dim, q)?;
    if !q.is_normalized() && (q.norm() - 1.0).abs() > UNIT_NORM_TOL {
        return Err(HasError::Data("query embedding is not normalized".into()));
    }
    Ok(())
}

fn check_doc(dim: usize, e: &Embedding) -> Result<()> {
    check_dim(dim, e)?;
    if !e.is_normalized() && (e.norm() - 1.0).abs() > UNIT_NORM_TOL {
        return Err(HasError::Data(
            "document embedding is not normalized".into(),
        ));
    }
    Ok(())
}

/// Read access to document vectors by id.
pub trait DocStore {
    fn doc_vector(&self, id: DocId) -> Option<&[f32]>;
}

/// Exhaustive inner-product index over a fixed document list.
#[derive(Debug, Clone)]
pub struct FlatIndex {
    dim: usize,
    ids: Vec<DocId>,
    data: Vec<f32>,
    positions: HashMap<DocId, usize>,
}

impl PartialEq for FlatIndex {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.ids == other.ids && self.data == other.data
    }
}

impl DocStore for FlatIndex {
    fn doc_vector(&self, id: DocId) -> Option<&[f32]> {
        self.positions.get(&id).map(|&p| self.vector(p))
    }
}

fn positions_of(ids: &[DocId]) -> HashMap<DocId, usize> {
    ids.iter().enumerate().map(|(p, id)| (*id, p)).collect()
}

impl FlatIndex {
    pub fn new(dim: usize, docs: &[(DocId, Embedding)]) -> Result<Self> {
        if dim == 0 {
            return Err(HasError::Data("index dim must be positive".into()));
        }
        let mut positions = HashMap::with_capacity(docs.len());
        let mut ids = Vec::with_capacity(docs.len());
        let mut data = Vec::with_capacity(docs.len() * dim);
        for (pos, (id, e)) in docs.iter().enumerate() {
            check_doc(dim, e)?;
            if positions.insert(*id, pos).is_some() {
                return Err(HasError::Data(format!("duplicate doc id {id}")));
            }
            ids.push(*id);
            data.extend_from_slice(e.values());
        }
        Ok(FlatIndex {
            dim,
            ids,
            data,
            positions,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[DocId] {
        &self.ids
    }

    pub fn vector(&self, pos: usize) -> &[f32] {
        &self.data[pos * self.dim..(pos + 1) * self.dim]
    }

    /// Embedding of the document at position `pos`.
    pub fn embedding(&self, pos: usize) -> Embedding {
        Embedding::new_normalized(self.vector(pos).to_vec())
            .expect("index vectors are normalized on insertion")
    }

    pub fn topk(&self, q: &Embedding, k: usize) -> Result<RankedHits> {
        self.topk_with_stats(q, k).map(|(h, _)| h)
    }

    pub fn topk_with_stats(&self, q: &Embedding, k: usize) -> Result<(RankedHits, SearchStats)> {
        check_query(self.dim, q)?;
        let qv = q.values();
        let mut top = TopK::new(k);
        for (pos, id) in self.ids.iter().enumerate() {
            top.push(*id, dot(qv, self.vector(pos)));
        }
        let stats = SearchStats {
            vectors_scanned: self.ids.len(),
            centroids_scanned: 0,
        };
        Ok((top.finish(), stats))
    }
}

/// Free-function form of [`FlatIndex::topk`].
pub fn flat_topk(index: &FlatIndex, q: &Embedding, k: usize) -> Result<RankedHits> {
    index.topk(q, k)
}

/// IVF index: `n_buckets` centroids, each owning a posting list of documents.
#[derive(Debug, Clone, PartialEq)]
pub struct IvfIndex {
    dim: usize,
    n_buckets: usize,
    build_seed: u64,
    subset_fraction: f64,
    centroids: Vec<f32>,
    buckets: Vec<Bucket>,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct Bucket {
    ids: Vec<DocId>,
    data: Vec<f32>,
}

/// Index of the centroid with the highest inner product; ties go to the lower index.
fn nearest(centroids: &[f32], dim: usize, v: &[f32]) -> usize {
    let mut best = 0;
    let mut best_score = f32::NEG_INFINITY;
    for (c, cv) in centroids.chunks_exact(dim).enumerate() {
        let s = dot(v, cv);
        if s > best_score {
            best_score = s;
            best = c;
        }
    }
    best
}

fn normalize_in_place(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= crate::embedding::MIN_NORM {
        return false;
    }
    for x in v.iter_mut() {
        *x /= norm;
    }
    true
}

impl IvfIndex {
    /// Clusters a seeded sample of `docs` into `n_buckets` buckets.
    ///
    /// The sample is the first `ceil(subset_fraction * n)` ids of a seeded
    /// shuffle of the id-sorted corpus. Centroids come from k-means++ seeding
    /// followed by [`KMEANS_ITERATIONS`] Lloyd rounds on the unit sphere.
    pub fn build(
        dim: usize,
        docs: &[(DocId, Embedding)],
        n_buckets: usize,
        subset_fraction: f64,
        seed: u64,
    ) -> Result<Self> {
        if n_buckets == 0 {
            return Err(HasError::Build("n_buckets must be >= 1".into()));
        }
        if !(subset_fraction > 0.0 && subset_fraction <= 1.0) {
            return Err(HasError::Build(format!(
                "subset_fraction {subset_fraction} outside (0, 1]"
            )));
        }
        let mut seen = HashSet::with_capacity(docs.len());
        for (id, e) in docs {
            check_doc(dim, e)?;
            if !seen.insert(*id) {
                return Err(HasError::Data(format!("duplicate doc id {id}")));
            }
        }

        let mut order: Vec<usize> = (0..docs.len()).collect();
        order.sort_by_key(|&i| docs[i].0);
        let mut rng = RngStream::new(seed);
        order.shuffle(&mut rng);
        let n_load = (subset_fraction * docs.len() as f64).ceil() as usize;
        order.truncate(n_load.min(docs.len()));
        // Keep loaded docs in id order so bucket contents do not depend on the shuffle.
        order.sort_by_key(|&i| docs[i].0);

        if n_buckets > order.len() {
            return Err(HasError::Build(format!(
                "n_buckets {n_buckets} exceeds loaded docs {}",
                order.len()
            )));
        }

        let vecs: Vec<&[f32]> = order.iter().map(|&i| docs[i].1.values()).collect();
        let mut centroids = kmeans_pp_seed(&vecs, dim, n_buckets, &mut rng);

        let mut assign = vec![0usize; vecs.len()];
        for _ in 0..KMEANS_ITERATIONS {
            for (a, v) in assign.iter_mut().zip(&vecs) {
                *a = nearest(&centroids, dim, v);
            }
            let mut sums = vec![0.0f64; n_buckets * dim];
            for (a, v) in assign.iter().zip(&vecs) {
                let s = &mut sums[a * dim..(a + 1) * dim];
                for (acc, x) in s.iter_mut().zip(v.iter()) {
                    *acc += f64::from(*x);
                }
            }
            for (c, s) in sums.chunks_exact_mut(dim).enumerate() {
                // Empty or degenerate clusters keep their previous centroid.
                if normalize_in_place(s) {
                    for (dst, x) in centroids[c * dim..(c + 1) * dim].iter_mut().zip(s.iter()) {
                        *dst = *x as f32;
                    }
                }
            }
        }

        let mut buckets = vec![Bucket::default(); n_buckets];
        for (&i, v) in order.iter().zip(&vecs) {
            let b = &mut buckets[nearest(&centroids, dim, v)];
            b.ids.push(docs[i].0);
            b.data.extend_from_slice(v);
        }

        Ok(IvfIndex {
            dim,
            n_buckets,
            build_seed: seed,
            subset_fraction,
            centroids,
            buckets,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_buckets(&self) -> usize {
        self.n_buckets
    }

    pub fn build_seed(&self) -> u64 {
        self.build_seed
    }

    pub fn subset_fraction(&self) -> f64 {
        self.subset_fraction
    }

    pub fn centroid(&self, bucket: usize) -> &[f32] {
        &self.centroids[bucket * self.dim..(bucket + 1) * self.dim]
    }

    pub fn bucket_ids(&self, bucket: usize) -> &[DocId] {
        &self.buckets[bucket].ids
    }

    /// Total number of documents held across all buckets.
    pub fn len(&self) -> usize {
        self.buckets.iter().map(|b| b.ids.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Buckets to probe for `q`, nearest centroid first (ties: lower bucket).
    pub fn probe_order(&self, q: &Embedding, n_probe: usize) -> Result<Vec<usize>> {
        check_query(self.dim, q)?;
        if n_probe == 0 || n_probe > self.n_buckets {
            return Err(HasError::Config(format!(
                "n_probe {n_probe} outside [1, {}]",
                self.n_buckets
            )));
        }
        let qv = q.values();
        let mut scored: Vec<(f32, usize)> = self
            .centroids
            .chunks_exact(self.dim)
            .enumerate()
            .map(|(c, cv)| (dot(qv, cv), c))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        Ok(scored.into_iter().take(n_probe).map(|(_, c)| c).collect())
    }

    pub fn topk(&self, q: &Embedding, k: usize, n_probe: usize) -> Result<RankedHits> {
        self.topk_with_stats(q, k, n_probe).map(|(h, _)| h)
    }

    pub fn topk_with_stats(
        &self,
        q: &Embedding,
        k: usize,
        n_probe: usize,
    ) -> Result<(RankedHits, SearchStats)> {
        let probes = self.probe_order(q, n_probe)?;
        let qv = q.values();
        let mut top = TopK::new(k);
        let mut scanned = 0;
        for b in probes {
            let bucket = &self.buckets[b];
            for (id, v) in bucket.ids.iter().zip(bucket.data.chunks_exact(self.dim)) {
                top.push(*id, dot(qv, v));
            }
            scanned += bucket.ids.len();
        }
        let stats = SearchStats {
            vectors_scanned: scanned,
            centroids_scanned: self.n_buckets,
        };
        Ok((top.finish(), stats))
    }
}

/// Free-function form of [`IvfIndex::build`].
pub fn ivf_build(
    dim: usize,
    docs: &[(DocId, Embedding)],
    n_buckets: usize,
    subset_fraction: f64,
    seed: u64,
) -> Result<IvfIndex> {
    IvfIndex::build(dim, docs, n_buckets, subset_fraction, seed)
}

/// Free-function form of [`IvfIndex::topk`].
pub fn ivf_topk(index: &IvfIndex, q: &Embedding, k: usize, n_probe: usize) -> Result<RankedHits> {
    index.topk(q, k, n_probe)
}

// k-means++ on the sphere: squared chord distance 2 - 2<x, c>.
fn kmeans_pp_seed(vecs: &[&[f32]], dim: usize, n: usize, rng: &mut RngStream) -> Vec<f32> {
    let mut centroids = Vec::with_capacity(n * dim);
    let first = (rng.next_f64() * vecs.len() as f64) as usize;
    centroids.extend_from_slice(vecs[first.min(vecs.len() - 1)]);
    let mut d2: Vec<f64> = vecs
        .iter()
        .map(|v| (2.0 - 2.0 * f64::from(dot(v, &centroids[..dim]))).max(0.0))
        .collect();
    while centroids.len() < n * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = vecs.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All points coincide with existing centroids.
            ((rng.next_f64() * vecs.len() as f64) as usize).min(vecs.len() - 1)
        };
        let start = centroids.len();
        centroids.extend_from_slice(vecs[pick]);
        let c = &centroids[start..start + dim];
        for (d, v) in d2.iter_mut().zip(vecs) {
            let nd = (2.0 - 2.0 * f64::from(dot(v, c))).max(0.0);
            if nd < *d {
                *d = nd;
            }
        }
    }
    centroids
}

// ---------------------------------------------------------------------------
// HSIX snapshots: "HSIX", u32 version, u8 kind, then fields in declaration order.

pub const HSIX_MAGIC: &[u8; 4] = b"HSIX";
pub const HSIX_VERSION: u32 = 1;
pub const HSIX_KIND_FLAT: u8 = 1;
pub const HSIX_KIND_IVF: u8 = 2;

fn write_header<W: Write>(w: &mut W, kind: u8) -> Result<()> {
    w.write_all(HSIX_MAGIC)?;
    w.write_u32::<LittleEndian>(HSIX_VERSION)?;
    w.write_u8(kind)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, kind: u8) -> Result<()> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != HSIX_MAGIC {
        return Err(HasError::Data("bad HSIX magic".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != HSIX_VERSION {
        return Err(HasError::Data(format!(
            "unsupported HSIX version {version}"
        )));
    }
    let got = r.read_u8()?;
    if got != kind {
        return Err(HasError::Data(format!("HSIX kind {got}, expected {kind}")));
    }
    Ok(())
}

fn write_posting<W: Write>(w: &mut W, ids: &[DocId], data: &[f32]) -> Result<()> {
    w.write_u64::<LittleEndian>(ids.len() as u64)?;
    for id in ids {
        w.write_u64::<LittleEndian>(id.0)?;
    }
    for &v in data {
        w.write_f32::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_posting<R: Read>(r: &mut R, dim: usize) -> Result<(Vec<DocId>, Vec<f32>)> {
    let n = r.read_u64::<LittleEndian>()? as usize;
    let mut ids = Vec::with_capacity(n.min(1 << 24));
    for _ in 0..n {
        ids.push(DocId(r.read_u64::<LittleEndian>()?));
    }
    let mut data = vec![0f32; n * dim];
    r.read_f32_into::<LittleEndian>(&mut data)?;
    if let Some(p) = data.iter().position(|v| !v.is_finite()) {
        return Err(HasError::NonFinite(p));
    }
    Ok((ids, data))
}

impl FlatIndex {
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, HSIX_KIND_FLAT)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        write_posting(&mut w, &self.ids, &self.data)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        read_header(&mut r, HSIX_KIND_FLAT)?;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        if dim == 0 {
            return Err(HasError::Data("snapshot dim is zero".into()));
        }
        let (ids, data) = read_posting(&mut r, dim)?;
        let positions = positions_of(&ids);
        if positions.len() != ids.len() {
            return Err(HasError::Data("duplicate doc id in snapshot".into()));
        }
        Ok(FlatIndex {
            dim,
            ids,
            data,
            positions,
        })
    }
}

impl IvfIndex {
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<()> {
        write_header(&mut w, HSIX_KIND_IVF)?;
        w.write_u32::<LittleEndian>(self.dim as u32)?;
        w.write_u32::<LittleEndian>(self.n_buckets as u32)?;
        w.write_u64::<LittleEndian>(self.build_seed)?;
        w.write_f64::<LittleEndian>(self.subset_fraction)?;
        for &v in &self.centroids {
            w.write_f32::<LittleEndian>(v)?;
        }
        for b in &self.buckets {
            write_posting(&mut w, &b.ids, &b.data)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_snapshot<R: Read>(mut r: R) -> Result<Self> {
        read_header(&mut r, HSIX_KIND_IVF)?;
        let dim = r.read_u32::<LittleEndian>()? as usize;
        let n_buckets = r.read_u32::<LittleEndian>()? as usize;
        if dim == 0 || n_buckets == 0 {
            return Err(HasError::Data(
                "snapshot dim or bucket count is zero".into(),
            ));
        }
        let build_seed = r.read_u64::<LittleEndian>()?;
        let subset_fraction = r.read_f64::<LittleEndian>()?;
        let mut centroids = vec![0f32; n_buckets * dim];
        r.read_f32_into::<LittleEndian>(&mut centroids)?;
        let mut buckets = Vec::with_capacity(n_buckets);
        for _ in 0..n_buckets {
            let (ids, data) = read_posting(&mut r, dim)?;
            buckets.push(Bucket { ids, data });
        }
        Ok(IvfIndex {
            dim,
            n_buckets,
            build_seed,
            subset_fraction,
            centroids,
            buckets,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::normalize;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn unit(rng: &mut RngStream, dim: usize) -> Embedding {
        let v: Vec<f32> = (0..dim)
            .map(|_| rng.sample::<f32, _>(StandardNormal))
            .collect();
        normalize(&Embedding::new(v).unwrap()).unwrap()
    }

    fn corpus(n: usize, dim: usize, seed: u64) -> Vec<(DocId, Embedding)> {
        let mut rng = RngStream::new(seed);
        (0..n)
            .map(|i| (DocId(i as u64), unit(&mut rng, dim)))
            .collect()
    }

    // Two tight clusters around +e0 and -e0.
    fn two_clusters(per: usize, dim: usize) -> Vec<(DocId, Embedding)> {
        let mut rng = RngStream::new(99);
        let mut out = Vec::new();
        for c in 0..2 {
            for i in 0..per {
                let mut v: Vec<f32> = (0..dim)
                    .map(|_| 0.05 * rng.sample::<f32, _>(StandardNormal))
                    .collect();
                v[0] += if c == 0 { 1.0 } else { -1.0 };
                let e = normalize(&Embedding::new(v).unwrap()).unwrap();
                out.push((DocId((c * per + i) as u64), e));
            }
        }
        out
    }

    fn sort_all_oracle(docs: &[(DocId, Embedding)], q: &Embedding, k: usize) -> Vec<DocId> {
        let mut all: Vec<(f32, DocId)> = docs
            .iter()
            .map(|(id, e)| (crate::embedding::inner_product(q, e).unwrap().value(), *id))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        all.into_iter().take(k).map(|(_, id)| id).collect()
    }

    #[test]
    fn single_doc_corpus() {
        let docs = corpus(1, 8, 1);
        let idx = FlatIndex::new(8, &docs).unwrap();
        let q = unit(&mut RngStream::new(5), 8);
        assert_eq!(idx.topk(&q, 10).unwrap().doc_ids(), vec![DocId(0)]);
    }

    #[test]
    fn query_equal_to_doc_ranks_first() {
        let docs = corpus(50, 16, 2);
        let idx = FlatIndex::new(16, &docs).unwrap();
        let hits = idx.topk(&docs[17].1, 5).unwrap();
        assert_eq!(hits.hits()[0].doc_id, DocId(17));
        assert!((hits.hits()[0].score.value() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn flat_matches_sort_oracle() {
        let docs = corpus(500, 24, 3);
        let idx = FlatIndex::new(24, &docs).unwrap();
        let mut rng = RngStream::new(33);
        for _ in 0..20 {
            let q = unit(&mut rng, 24);
            assert_eq!(
                idx.topk(&q, 10).unwrap().doc_ids(),
                sort_all_oracle(&docs, &q, 10)
            );
        }
    }

    #[test]
    fn ties_break_by_ascending_id() {
        let e = Embedding::new_normalized(vec![1.0, 0.0]).unwrap();
        let docs = vec![
            (DocId(9), e.clone()),
            (DocId(3), e.clone()),
            (DocId(5), e.clone()),
        ];
        let idx = FlatIndex::new(2, &docs).unwrap();
        assert_eq!(idx.topk(&e, 2).unwrap().doc_ids(), vec![DocId(3), DocId(5)]);
    }

    #[test]
    fn empty_index_returns_empty_hits() {
        let idx = FlatIndex::new(4, &[]).unwrap();
        let q = Embedding::new_normalized(vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(idx.topk(&q, 3).unwrap().is_empty());
        let bad = Embedding::new_normalized(vec![1.0, 0.0]).unwrap();
        assert!(matches!(idx.topk(&bad, 3), Err(HasError::Dim { .. })));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let docs = corpus(2, 4, 1);
        let dup = vec![docs[0].clone(), (DocId(0), docs[1].1.clone())];
        assert!(FlatIndex::new(4, &dup).is_err());
    }

    #[test]
    fn one_bucket_centroid_is_normalized_mean() {
        let docs = corpus(40, 8, 4);
        let ivf = IvfIndex::build(8, &docs, 1, 1.0, 7).unwrap();
        assert_eq!(ivf.bucket_ids(0).len(), 40);
        let mut mean = vec![0.0f64; 8];
        for (_, e) in &docs {
            for (m, v) in mean.iter_mut().zip(e.values()) {
                *m += f64::from(*v);
            }
        }
        let n = mean.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (c, m) in ivf.centroid(0).iter().zip(&mean) {
            assert!((f64::from(*c) - m / n).abs() < 1e-5);
        }
    }

    #[test]
    fn separable_clusters_land_in_separate_buckets() {
        let docs = two_clusters(30, 8);
        let ivf = IvfIndex::build(8, &docs, 2, 1.0, 1).unwrap();
        let mut groups: Vec<Vec<u64>> = (0..2)
            .map(|b| ivf.bucket_ids(b).iter().map(|d| d.0).collect())
            .collect();
        groups.sort();
        assert_eq!(groups[0], (0..30).collect::<Vec<_>>());
        assert_eq!(groups[1], (30..60).collect::<Vec<_>>());
    }

    #[test]
    fn probe_one_stays_in_nearest_cluster() {
        let docs = two_clusters(30, 8);
        let ivf = IvfIndex::build(8, &docs, 2, 1.0, 1).unwrap();
        let mut v = vec![0.0; 8];
        v[0] = -1.0;
        let q = Embedding::new_normalized(v).unwrap();
        let hits = ivf.topk(&q, 50, 1).unwrap();
        assert_eq!(hits.len(), 30);
        assert!(hits.iter().all(|h| h.doc_id.0 >= 30));
    }

    #[test]
    fn subset_fraction_loads_ceil_share() {
        let docs = corpus(1000, 8, 5);
        let ivf = IvfIndex::build(8, &docs, 4, 0.01, 2).unwrap();
        assert_eq!(ivf.len(), 10);
        let ivf = IvfIndex::build(8, &docs, 4, 0.333, 2).unwrap();
        assert_eq!(ivf.len(), 333);
    }

    #[test]
    fn every_loaded_doc_in_exactly_one_nearest_bucket() {
        let docs = corpus(300, 12, 6);
        let ivf = IvfIndex::build(12, &docs, 16, 0.5, 3).unwrap();
        let mut seen = HashSet::new();
        for b in 0..16 {
            for id in ivf.bucket_ids(b) {
                assert!(seen.insert(*id));
                let v = docs[id.0 as usize].1.values();
                assert_eq!(nearest(&ivf.centroids, 12, v), b);
            }
        }
        assert_eq!(seen.len(), 150);
    }

    #[test]
    fn build_errors() {
        let docs = corpus(10, 4, 1);
        assert!(matches!(
            IvfIndex::build(4, &docs, 11, 1.0, 0),
            Err(HasError::Build(_))
        ));
        assert!(matches!(
            IvfIndex::build(4, &docs, 2, 0.0, 0),
            Err(HasError::Build(_))
        ));
        assert!(matches!(
            IvfIndex::build(4, &docs, 0, 1.0, 0),
            Err(HasError::Build(_))
        ));
        let ivf = IvfIndex::build(4, &docs, 2, 1.0, 0).unwrap();
        let q = docs[0].1.clone();
        assert!(ivf.topk(&q, 3, 0).is_err());
        assert!(ivf.topk(&q, 3, 3).is_err());
    }

    #[test]
    fn exhaustive_probe_equals_flat() {
        let docs = corpus(400, 16, 8);
        let flat = FlatIndex::new(16, &docs).unwrap();
        let ivf = IvfIndex::build(16, &docs, 20, 1.0, 8).unwrap();
        let mut rng = RngStream::new(80);
        for _ in 0..50 {
            let q = unit(&mut rng, 16);
            assert_eq!(ivf.topk(&q, 10, 20).unwrap(), flat.topk(&q, 10).unwrap());
        }
    }

    #[test]
    fn recall_non_decreasing_in_probe() {
        let docs = corpus(600, 16, 10);
        let flat = FlatIndex::new(16, &docs).unwrap();
        let ivf = IvfIndex::build(16, &docs, 32, 1.0, 10).unwrap();
        let mut rng = RngStream::new(100);
        let queries: Vec<Embedding> = (0..100).map(|_| unit(&mut rng, 16)).collect();
        let mut last = 0usize;
        for n_probe in [1, 2, 4, 8, 16, 32] {
            let mut found = 0;
            for q in &queries {
                let truth = flat.topk(q, 10).unwrap();
                let got = ivf.topk(q, 10, n_probe).unwrap();
                found += got.iter().filter(|h| truth.contains(h.doc_id)).count();
                // candidate pool grows with n_probe
                let small: HashSet<usize> =
                    ivf.probe_order(q, n_probe).unwrap().into_iter().collect();
                let big: HashSet<usize> = ivf.probe_order(q, 32).unwrap().into_iter().collect();
                assert!(small.is_subset(&big));
            }
            assert!(found >= last, "recall dropped at n_probe={n_probe}");
            last = found;
        }
        assert_eq!(last, 1000);
    }

    #[test]
    fn build_is_deterministic_and_snapshot_round_trips() {
        let docs = corpus(200, 8, 12);
        let a = IvfIndex::build(8, &docs, 8, 0.7, 4).unwrap();
        let b = IvfIndex::build(8, &docs, 8, 0.7, 4).unwrap();
        assert_eq!(a, b);
        let mut buf = Vec::new();
        a.write_snapshot(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"HSIX");
        assert_eq!(buf[8], HSIX_KIND_IVF);
        assert_eq!(IvfIndex::read_snapshot(&buf[..]).unwrap(), a);
        assert!(FlatIndex::read_snapshot(&buf[..]).is_err());

        let flat = FlatIndex::new(8, &docs).unwrap();
        let mut buf = Vec::new();
        flat.write_snapshot(&mut buf).unwrap();
        assert_eq!(FlatIndex::read_snapshot(&buf[..]).unwrap(), flat);
    }
}
