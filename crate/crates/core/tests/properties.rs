use std::collections::{BTreeMap, BTreeSet, VecDeque};

use has_core::engine::{merge_channels, score_homology, validate, Decision, ScoringMode};
use has_core::index::Hit;
use has_core::{DocId, Embedding, FlatIndex, QueryCache, QueryId, RankedHits, SimScore};
use proptest::prelude::*;

const DIM: usize = 4;
const N_DOCS: u64 = 40;

fn store() -> FlatIndex {
    let docs: Vec<_> = (0..N_DOCS)
        .map(|i| {
            let a = i as f32 * 0.37;
            let v = vec![a.cos(), a.sin(), (a * 0.5).cos(), (a * 0.5).sin()];
            let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            let v = v.into_iter().map(|x| x / n).collect();
            (DocId(i), Embedding::new_normalized(v).unwrap())
        })
        .collect();
    FlatIndex::new(DIM, &docs).unwrap()
}

fn ranked(ids: &BTreeSet<u64>) -> RankedHits {
    let hits = ids
        .iter()
        .map(|i| Hit {
            doc_id: DocId(*i),
            score: SimScore(-(*i as f32)),
        })
        .collect();
    RankedHits::from_unsorted(hits, ids.len())
}

fn query_vec() -> Embedding {
    Embedding::new_normalized(vec![1.0, 0.0, 0.0, 0.0]).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cache_state_matches_recomputation(
        h_max in 1usize..12,
        ops in prop::collection::vec((0u64..20, prop::collection::btree_set(0..N_DOCS, 1..8)), 1..60),
    ) {
        let store = store();
        let mut cache = QueryCache::new(DIM, h_max).unwrap();
        let mut fifo: VecDeque<(QueryId, Vec<DocId>)> = VecDeque::new();
        for (qid, docs) in &ops {
            let r = ranked(docs);
            let evicted = cache.insert(QueryId(*qid), &query_vec(), &r, &store).unwrap();
            fifo.push_back((QueryId(*qid), r.doc_ids()));
            let mut expect_evicted = Vec::new();
            while fifo.len() > h_max {
                expect_evicted.push(fifo.pop_front().unwrap().0);
            }
            prop_assert_eq!(evicted, expect_evicted);
            prop_assert!(cache.len() <= h_max);

            let live: Vec<(QueryId, Vec<DocId>)> =
                cache.entries().map(|e| (e.query_id, e.doc_ids.clone())).collect();
            prop_assert_eq!(&live, &Vec::from(fifo.clone()));

            let mut refs: BTreeMap<DocId, u32> = BTreeMap::new();
            let mut posts: BTreeMap<DocId, BTreeSet<QueryId>> = BTreeMap::new();
            for (q, ds) in &fifo {
                for d in ds {
                    *refs.entry(*d).or_default() += 1;
                    posts.entry(*d).or_default().insert(*q);
                }
            }
            prop_assert_eq!(cache.pool_len(), refs.len());
            for d in 0..N_DOCS {
                let d = DocId(d);
                prop_assert_eq!(cache.refcount(d), refs.get(&d).copied().unwrap_or(0));
                prop_assert_eq!(cache.inverted_lookup(d), posts.get(&d).cloned().unwrap_or_default());
                prop_assert_eq!(cache.pool_contains(d), refs.contains_key(&d));
                prop_assert_eq!(cache.postings(d).count() as u32, refs.get(&d).copied().unwrap_or(0));
            }
        }
    }

    #[test]
    fn scores_are_overlap_fractions(
        entries in prop::collection::vec(prop::collection::btree_set(0..N_DOCS, 1..11), 0..20),
        draft in prop::collection::btree_set(0..N_DOCS, 0..11),
        tau in 0.0f64..=1.0,
    ) {
        let k = 10;
        let store = store();
        let mut cache = QueryCache::new(DIM, 50).unwrap();
        for (i, docs) in entries.iter().enumerate() {
            cache.insert(QueryId(i as u64), &query_vec(), &ranked(docs), &store).unwrap();
        }
        let ids: Vec<DocId> = draft.iter().map(|d| DocId(*d)).collect();
        let table = score_homology(&ids, &cache, k, tau, ScoringMode::Full);
        let mut best: Option<(usize, u64)> = None;
        for (i, docs) in entries.iter().enumerate() {
            let f = docs.intersection(&draft).count();
            let row = table.get(QueryId(i as u64));
            if f == 0 {
                prop_assert!(row.is_none());
                continue;
            }
            let row = row.unwrap();
            prop_assert_eq!(row.frequency as usize, f);
            prop_assert_eq!(row.score, f as f64 / k as f64);
            if best.is_none_or(|(bf, _)| f > bf) {
                best = Some((f, i as u64));
            }
        }
        let decision = validate(table, tau).decision;
        match best {
            Some((f, q)) if f as f64 / k as f64 > tau => {
                let accepted = matches!(decision, Decision::Accept { matched_query, .. } if matched_query == QueryId(q));
                prop_assert!(accepted);
            }
            _ => prop_assert_eq!(decision, Decision::Reject),
        }
    }

    #[test]
    fn merged_drafts_are_ranked_and_distinct(
        a in prop::collection::btree_map(0..N_DOCS, -100i32..100, 0..15),
        b in prop::collection::btree_map(0..N_DOCS, -100i32..100, 0..15),
        k in 1usize..12,
    ) {
        // Same doc must carry the same score in both channels.
        let score = |d: u64, s: i32| SimScore(a.get(&d).copied().unwrap_or(s) as f32 / 100.0);
        let hits = |m: &BTreeMap<u64, i32>| {
            RankedHits::from_unsorted(
                m.iter().map(|(d, s)| Hit { doc_id: DocId(*d), score: score(*d, *s) }).collect(),
                k,
            )
        };
        let (ha, hb) = (hits(&a), hits(&b));
        let draft = merge_channels(&ha, &hb, k);
        let ids = draft.doc_ids();
        let uniq: BTreeSet<DocId> = ids.iter().copied().collect();
        prop_assert_eq!(uniq.len(), ids.len());
        prop_assert!(ids.len() <= k);
        prop_assert_eq!(draft.provenance.len(), ids.len());
        for w in draft.hits.hits().windows(2) {
            prop_assert!(w[0].rank_cmp(&w[1]).is_lt());
        }
        let mut pool: Vec<Hit> = ha.iter().chain(hb.iter()).copied().collect();
        pool.sort_by(|x, y| x.rank_cmp(y));
        pool.dedup_by_key(|h| h.doc_id);
        pool.truncate(k);
        prop_assert_eq!(draft.hits.hits(), &pool[..]);
    }
}
