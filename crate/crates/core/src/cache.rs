//! Query cache with FIFO eviction.
//!
//! Each entry pairs a historical query with the full-database result it
//! received. The cache also maintains
//!
//! * the *cache channel*: the deduplicated pool of every document referenced
//!   by at least one entry, with a reference count per document, and
//! * the *inverted index*: document id to the entries whose result lists
//!   contain that document.
//!
//! Both structures are updated eagerly on every insert and eviction, so the
//! invariants hold after each call.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::mem::size_of;

use crate::embedding::{check_dim, dot, DocId, Embedding, QueryId};
use crate::error::{HasError, Result};
use crate::index::{DocStore, RankedHits, SearchStats, TopK};

/// Default capacity, in cached queries.
pub const DEFAULT_H_MAX: usize = 5000;

#[derive(Debug, Clone, PartialEq)]
pub struct CacheEntry {
    pub query_id: QueryId,
    pub query_embedding: Embedding,
    /// Full-database result for `query_id`, in rank order.
    pub doc_ids: Vec<DocId>,
    /// Monotone insertion counter, unique per entry.
    pub insert_seq: u64,
}

#[derive(Debug, Clone)]
struct PoolSlot {
    doc_id: DocId,
    refcount: u32,
}

/// FIFO query cache plus its derived document pool and inverted index.
#[derive(Debug, Clone)]
pub struct QueryCache {
    dim: usize,
    h_max: usize,
    next_seq: u64,
    entries: VecDeque<CacheEntry>,
    // Cache channel storage: slots with contiguous vectors and a free list.
    slots: Vec<Option<PoolSlot>>,
    slot_data: Vec<f32>,
    free_slots: Vec<usize>,
    slot_of: HashMap<DocId, usize>,
    // Postings keyed by insert_seq so re-used query ids stay distinct.
    inverted: HashMap<DocId, BTreeSet<u64>>,
    query_of_seq: HashMap<u64, QueryId>,
    // Running totals for memory_footprint.
    posting_count: usize,
    entry_doc_count: usize,
}

impl QueryCache {
    pub fn new(dim: usize, h_max: usize) -> Result<Self> {
        if dim == 0 {
            return Err(HasError::Config("cache dim must be positive".into()));
        }
        if h_max == 0 {
            return Err(HasError::Config("h_max must be >= 1".into()));
        }
        Ok(QueryCache {
            dim,
            h_max,
            next_seq: 0,
            entries: VecDeque::new(),
            slots: Vec::new(),
            slot_data: Vec::new(),
            free_slots: Vec::new(),
            slot_of: HashMap::new(),
            inverted: HashMap::new(),
            query_of_seq: HashMap::new(),
            posting_count: 0,
            entry_doc_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h_max(&self) -> usize {
        self.h_max
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries, oldest first.
    pub fn entries(&self) -> impl Iterator<Item = &CacheEntry> {
        self.entries.iter()
    }

    /// Number of distinct documents in the cache channel.
    pub fn pool_len(&self) -> usize {
        self.slot_of.len()
    }

    pub fn pool_contains(&self, d: DocId) -> bool {
        self.slot_of.contains_key(&d)
    }

    pub fn refcount(&self, d: DocId) -> u32 {
        self.slot_of
            .get(&d)
            .and_then(|&s| self.slots[s].as_ref())
            .map_or(0, |s| s.refcount)
    }

    /// Pool document ids in ascending order.
    pub fn pool_ids(&self) -> Vec<DocId> {
        let mut ids: Vec<DocId> = self.slot_of.keys().copied().collect();
        ids.sort_unstable();
        ids
    }

    pub fn pool_vector(&self, d: DocId) -> Option<&[f32]> {
        self.slot_of.get(&d).map(|&s| self.slot_vector(s))
    }

    fn slot_vector(&self, s: usize) -> &[f32] {
        &self.slot_data[s * self.dim..(s + 1) * self.dim]
    }

    /// Appends `(query, docs)` and evicts the oldest entries beyond `h_max`.
    ///
    /// Document vectors are copied from `store` into the pool the first time
    /// a document is referenced. Returns the query ids evicted, oldest first.
    pub fn insert(
        &mut self,
        query_id: QueryId,
        query_embedding: &Embedding,
        docs: &RankedHits,
        store: &dyn DocStore,
    ) -> Result<Vec<QueryId>> {
        check_dim(self.dim, query_embedding)?;
        if docs.is_empty() {
            return Err(HasError::Data(
                "cache_insert requires a nonempty result".into(),
            ));
        }
        let doc_ids = docs.doc_ids();
        let mut distinct = HashSet::with_capacity(doc_ids.len());
        for d in &doc_ids {
            if !distinct.insert(*d) {
                return Err(HasError::Data(format!(
                    "duplicate doc {d} in cached result"
                )));
            }
            match store.doc_vector(*d) {
                Some(v) if v.len() == self.dim => {}
                Some(v) => {
                    return Err(HasError::Dim {
                        expected: self.dim,
                        actual: v.len(),
                    })
                }
                None => return Err(HasError::Data(format!("unknown doc {d}"))),
            }
        }

        let seq = self.next_seq;
        self.next_seq += 1;
        for d in &doc_ids {
            self.retain_doc(*d, store.doc_vector(*d).expect("checked above"));
            self.inverted.entry(*d).or_default().insert(seq);
        }
        self.posting_count += doc_ids.len();
        self.entry_doc_count += doc_ids.len();
        self.query_of_seq.insert(seq, query_id);
        self.entries.push_back(CacheEntry {
            query_id,
            query_embedding: query_embedding.clone(),
            doc_ids,
            insert_seq: seq,
        });

        let mut evicted = Vec::new();
        while self.entries.len() > self.h_max {
            let old = self.entries.pop_front().expect("len > h_max >= 1");
            for d in &old.doc_ids {
                if let Some(p) = self.inverted.get_mut(d) {
                    p.remove(&old.insert_seq);
                    if p.is_empty() {
                        self.inverted.remove(d);
                    }
                }
                self.release_doc(*d);
            }
            self.posting_count -= old.doc_ids.len();
            self.entry_doc_count -= old.doc_ids.len();
            self.query_of_seq.remove(&old.insert_seq);
            evicted.push(old.query_id);
        }
        Ok(evicted)
    }

    fn retain_doc(&mut self, d: DocId, v: &[f32]) {
        if let Some(&s) = self.slot_of.get(&d) {
            if let Some(slot) = self.slots[s].as_mut() {
                slot.refcount += 1;
            }
            return;
        }
        let s = match self.free_slots.pop() {
            Some(s) => {
                self.slot_data[s * self.dim..(s + 1) * self.dim].copy_from_slice(v);
                s
            }
            None => {
                self.slots.push(None);
                self.slot_data.extend_from_slice(v);
                self.slots.len() - 1
            }
        };
        self.slots[s] = Some(PoolSlot {
            doc_id: d,
            refcount: 1,
        });
        self.slot_of.insert(d, s);
    }

    fn release_doc(&mut self, d: DocId) {
        let Some(&s) = self.slot_of.get(&d) else {
            return;
        };
        let drop_it = match self.slots[s].as_mut() {
            Some(slot) => {
                slot.refcount -= 1;
                slot.refcount == 0
            }
            None => false,
        };
        if drop_it {
            self.slots[s] = None;
            self.free_slots.push(s);
            self.slot_of.remove(&d);
        }
    }

    /// Cached query ids whose results contain `d`; empty for unknown docs.
    pub fn inverted_lookup(&self, d: DocId) -> BTreeSet<QueryId> {
        self.postings(d).map(|(_, q)| q).collect()
    }

    /// `(insert_seq, query_id)` pairs of the entries containing `d`, by seq.
    pub fn postings(&self, d: DocId) -> impl Iterator<Item = (u64, QueryId)> + '_ {
        self.inverted
            .get(&d)
            .into_iter()
            .flat_map(|set| set.iter())
            .map(|seq| (*seq, self.query_of_seq[seq]))
    }

    /// Entry with the given insertion sequence number, if still cached.
    pub fn entry_by_seq(&self, seq: u64) -> Option<&CacheEntry> {
        let front = self.entries.front()?.insert_seq;
        let idx = seq.checked_sub(front)? as usize;
        self.entries.get(idx).filter(|e| e.insert_seq == seq)
    }

    /// Exact top-k over the cache channel.
    pub fn channel_topk(&self, q: &Embedding, k: usize) -> Result<RankedHits> {
        self.channel_topk_with_stats(q, k).map(|(h, _)| h)
    }

    pub fn channel_topk_with_stats(
        &self,
        q: &Embedding,
        k: usize,
    ) -> Result<(RankedHits, SearchStats)> {
        check_dim(self.dim, q)?;
        let qv = q.values();
        let mut top = TopK::new(k);
        for (s, slot) in self.slots.iter().enumerate() {
            if let Some(slot) = slot {
                top.push(slot.doc_id, dot(qv, self.slot_vector(s)));
            }
        }
        let stats = SearchStats {
            vectors_scanned: self.slot_of.len(),
            centroids_scanned: 0,
        };
        Ok((top.finish(), stats))
    }

    /// Deterministic byte accounting of cached state.
    ///
    /// Counts query and pool vectors at 4 bytes per component, ids at 8
    /// bytes, refcounts at 4, and each posting at 8 bytes plus a per-key
    /// overhead for the posting list itself.
    pub fn memory_footprint(&self) -> usize {
        const POSTING_KEY_OVERHEAD: usize = 8 + size_of::<BTreeSet<u64>>();
        let vec_bytes = self.dim * size_of::<f32>();
        let entry_bytes = self.entries.len() * (size_of::<CacheEntry>() + vec_bytes)
            + self.entry_doc_count * size_of::<DocId>();
        let pool_bytes = self.slot_of.len() * (vec_bytes + size_of::<DocId>() + size_of::<u32>());
        let posting_bytes =
            self.inverted.len() * POSTING_KEY_OVERHEAD + self.posting_count * size_of::<u64>();
        size_of::<QueryCache>() + entry_bytes + pool_bytes + posting_bytes
    }

    /// Line-oriented dump: `query_id<TAB>insert_seq<TAB>doc,doc,...`, oldest first.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let docs: Vec<String> = e.doc_ids.iter().map(|d| d.0.to_string()).collect();
            let _ = writeln!(out, "{}\t{}\t{}", e.query_id, e.insert_seq, docs.join(","));
        }
        out
    }
}

/// Parses a [`QueryCache::dump`] back into `(query_id, insert_seq, doc_ids)` rows.
pub fn parse_dump(text: &str) -> Result<Vec<(QueryId, u64, Vec<DocId>)>> {
    let bad = |line: &str| HasError::Data(format!("malformed cache dump line: {line:?}"));
    let mut rows = Vec::new();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let mut parts = line.split('\t');
        let (Some(q), Some(seq), Some(docs), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad(line));
        };
        let q = q.parse().map_err(|_| bad(line))?;
        let seq = seq.parse().map_err(|_| bad(line))?;
        let docs = docs
            .split(',')
            .map(|d| d.parse().map(DocId))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad(line))?;
        rows.push((QueryId(q), seq, docs));
    }
    Ok(rows)
}
