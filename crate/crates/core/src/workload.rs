//! Synthetic entity/attribute corpora and query streams with ground truth.
//!
//! Every entity has a random unit base vector and a handful of attribute
//! types drawn from a shared vocabulary; each attribute type has its own
//! random unit vector. Documents describe one entity and cover several of its
//! attributes; queries ask for one attribute of one entity. Embeddings are
//! additive mixtures of the entity signal, the attribute signal and isotropic
//! Gaussian noise with per-coordinate standard deviation `noise`, then
//! normalized.
//!
//! Entity popularity follows a rank Zipf law with exponent `zipf_s`.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::KeyValues;
use crate::embedding::{normalize, AttrId, DocId, Embedding, EntityId, QueryId};
use crate::error::{HasError, Result};
use crate::index::FlatIndex;
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    pub n_entities: usize,
    pub attrs_per_entity: usize,
    /// Size of the shared attribute vocabulary.
    pub n_attr_types: usize,
    pub docs_per_entity: usize,
    pub attrs_per_doc: usize,
    pub dim: usize,
    pub entity_signal: f64,
    pub attr_signal: f64,
    pub noise: f64,
    pub zipf_s: f64,
    pub n_queries: usize,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_entities: 500,
            attrs_per_entity: 8,
            n_attr_types: 32,
            docs_per_entity: 20,
            attrs_per_doc: 2,
            dim: 64,
            entity_signal: 1.0,
            attr_signal: 0.7,
            noise: 0.14,
            zipf_s: 1.0,
            n_queries: 10_000,
            seed: 42,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(HasError::Config(m.to_string()));
        if self.n_entities == 0
            || self.attrs_per_entity == 0
            || self.docs_per_entity == 0
            || self.attrs_per_doc == 0
            || self.dim == 0
            || self.n_queries == 0
        {
            return err("counts must be positive");
        }
        if self.attrs_per_entity > self.n_attr_types {
            return err("attrs_per_entity exceeds n_attr_types");
        }
        if self.attrs_per_doc > self.attrs_per_entity {
            return err("attrs_per_doc exceeds attrs_per_entity");
        }
        let (e, a, s) = (self.entity_signal, self.attr_signal, self.noise);
        if !(e.is_finite() && a.is_finite() && s.is_finite()) || s < 0.0 || !(e > a && a >= s) {
            return err("need entity_signal > attr_signal >= noise >= 0");
        }
        if !(self.zipf_s >= 0.0 && self.zipf_s.is_finite()) {
            return err("zipf_s must be >= 0");
        }
        Ok(())
    }

    /// Parses `key=value` text. Unknown keys are rejected; missing keys keep defaults.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text)?;
        let d = GenConfig::default();
        let cfg = GenConfig {
            n_entities: kv.take_or("n_entities", d.n_entities)?,
            attrs_per_entity: kv.take_or("attrs_per_entity", d.attrs_per_entity)?,
            n_attr_types: kv.take_or("n_attr_types", d.n_attr_types)?,
            docs_per_entity: kv.take_or("docs_per_entity", d.docs_per_entity)?,
            attrs_per_doc: kv.take_or("attrs_per_doc", d.attrs_per_doc)?,
            dim: kv.take_or("dim", d.dim)?,
            entity_signal: kv.take_or("entity_signal", d.entity_signal)?,
            attr_signal: kv.take_or("attr_signal", d.attr_signal)?,
            noise: kv.take_or("noise", d.noise)?,
            zipf_s: kv.take_or("zipf_s", d.zipf_s)?,
            n_queries: kv.take_or("n_queries", d.n_queries)?,
            seed: kv.take_or("seed", d.seed)?,
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "n_entities={}", self.n_entities);
        let _ = writeln!(s, "attrs_per_entity={}", self.attrs_per_entity);
        let _ = writeln!(s, "n_attr_types={}", self.n_attr_types);
        let _ = writeln!(s, "docs_per_entity={}", self.docs_per_entity);
        let _ = writeln!(s, "attrs_per_doc={}", self.attrs_per_doc);
        let _ = writeln!(s, "dim={}", self.dim);
        let _ = writeln!(s, "entity_signal={}", self.entity_signal);
        let _ = writeln!(s, "attr_signal={}", self.attr_signal);
        let _ = writeln!(s, "noise={}", self.noise);
        let _ = writeln!(s, "zipf_s={}", self.zipf_s);
        let _ = writeln!(s, "n_queries={}", self.n_queries);
        let _ = writeln!(s, "seed={}", self.seed);
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntityProfile {
    pub entity_id: EntityId,
    pub base_vec: Embedding,
    pub attrs: Vec<AttrId>,
    pub popularity_weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDoc {
    pub doc_id: DocId,
    pub embedding: Embedding,
    pub entity_id: EntityId,
    pub covered_attrs: BTreeSet<AttrId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledQuery {
    pub query_id: QueryId,
    pub embedding: Embedding,
    pub entity_id: EntityId,
    pub attr_id: AttrId,
}

/// Output of [`gen_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedCorpus {
    pub docs: Vec<LabeledDoc>,
    pub profiles: Vec<EntityProfile>,
    /// Indexed by `AttrId`.
    pub attr_vectors: Vec<Embedding>,
}

impl GeneratedCorpus {
    pub fn id_embeddings(&self) -> Vec<(DocId, Embedding)> {
        self.docs
            .iter()
            .map(|d| (d.doc_id, d.embedding.clone()))
            .collect()
    }
}

fn random_unit(rng: &mut RngStream, dim: usize) -> Result<Embedding> {
    let v: Vec<f32> = (0..dim)
        .map(|_| rng.sample::<f32, _>(StandardNormal))
        .collect();
    normalize(&Embedding::new(v)?)
}

/// `normalize(a_e * base + a_a * attr + noise * n)`, `n ~ N(0, I / dim)`.
fn mix(rng: &mut RngStream, cfg: &GenConfig, base: &Embedding, attr: &[f64]) -> Result<Embedding> {
    let v: Vec<f32> = base
        .values()
        .iter()
        .zip(attr)
        .map(|(b, a)| {
            let n: f64 = rng.sample(StandardNormal);
            (cfg.entity_signal * f64::from(*b) + cfg.attr_signal * a + cfg.noise * n) as f32
        })
        .collect();
    normalize(&Embedding::new(v)?)
}

/// Generates entities, attribute vectors and documents.
pub fn gen_corpus(cfg: &GenConfig) -> Result<GeneratedCorpus> {
    cfg.validate()?;
    let mut rng = RngStream::substream(cfg.seed, 0);
    let attr_vectors = (0..cfg.n_attr_types)
        .map(|_| random_unit(&mut rng, cfg.dim))
        .collect::<Result<Vec<_>>>()?;

    let mut profiles = Vec::with_capacity(cfg.n_entities);
    for e in 0..cfg.n_entities {
        let base_vec = random_unit(&mut rng, cfg.dim)?;
        let mut attrs: Vec<AttrId> = sample(&mut rng, cfg.n_attr_types, cfg.attrs_per_entity)
            .into_iter()
            .map(|a| AttrId(a as u64))
            .collect();
        attrs.sort();
        profiles.push(EntityProfile {
            entity_id: EntityId(e as u64),
            base_vec,
            attrs,
            popularity_weight: 1.0 / ((e + 1) as f64).powf(cfg.zipf_s),
        });
    }

    let docs = gen_docs(cfg, &profiles, &attr_vectors, &mut rng)?;
    Ok(GeneratedCorpus {
        docs,
        profiles,
        attr_vectors,
    })
}

/// Documents for the given entities: `docs_per_entity` each, ids assigned
/// entity-major from zero.
pub fn gen_docs(
    cfg: &GenConfig,
    profiles: &[EntityProfile],
    attr_vectors: &[Embedding],
    rng: &mut RngStream,
) -> Result<Vec<LabeledDoc>> {
    let mut docs = Vec::with_capacity(profiles.len() * cfg.docs_per_entity);
    for p in profiles {
        for _ in 0..cfg.docs_per_entity {
            let covered: BTreeSet<AttrId> = sample(rng, cfg.attrs_per_entity, cfg.attrs_per_doc)
                .into_iter()
                .map(|i| p.attrs[i])
                .collect();
            let mut attr_mean = vec![0.0f64; cfg.dim];
            for a in &covered {
                for (m, v) in attr_mean
                    .iter_mut()
                    .zip(attr_vectors[a.0 as usize].values())
                {
                    *m += f64::from(*v) / covered.len() as f64;
                }
            }
            let embedding = mix(rng, cfg, &p.base_vec, &attr_mean)?;
            docs.push(LabeledDoc {
                doc_id: DocId(docs.len() as u64),
                embedding,
                entity_id: p.entity_id,
                covered_attrs: covered,
            });
        }
    }
    Ok(docs)
}

/// Generates the query stream: entity by popularity, attribute uniform.
pub fn gen_queries(cfg: &GenConfig, corpus: &GeneratedCorpus) -> Result<Vec<LabeledQuery>> {
    cfg.validate()?;
    if corpus.profiles.is_empty() {
        return Err(HasError::Config("no entity profiles".into()));
    }
    let mut rng = RngStream::substream(cfg.seed, 1);
    let weights: Vec<f64> = corpus
        .profiles
        .iter()
        .map(|p| p.popularity_weight)
        .collect();
    let pick = WeightedIndex::new(&weights)
        .map_err(|e| HasError::Config(format!("popularity weights: {e}")))?;
    let mut out = Vec::with_capacity(cfg.n_queries);
    for i in 0..cfg.n_queries {
        let p = &corpus.profiles[pick.sample(&mut rng)];
        let attr = p.attrs[rng.random_range(0..p.attrs.len())];
        let attr_vec: Vec<f64> = corpus.attr_vectors[attr.0 as usize]
            .values()
            .iter()
            .map(|v| f64::from(*v))
            .collect();
        let embedding = mix(&mut rng, cfg, &p.base_vec, &attr_vec)?;
        out.push(LabeledQuery {
            query_id: QueryId(i as u64),
            embedding,
            entity_id: p.entity_id,
            attr_id: attr,
        });
    }
    Ok(out)
}

/// Golden-document indicator.
pub fn is_golden(d: &LabeledDoc, q: &LabeledQuery) -> bool {
    d.entity_id == q.entity_id && d.covered_attrs.contains(&q.attr_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Homology {
    /// Same entity and same attribute.
    Full,
    /// Same entity, different attribute.
    Homologous,
    None,
}

pub fn homology_relation(q1: &LabeledQuery, q2: &LabeledQuery) -> Homology {
    homology_of(q1.entity_id, q1.attr_id, q2.entity_id, q2.attr_id)
}

pub fn homology_of(e1: EntityId, a1: AttrId, e2: EntityId, a2: AttrId) -> Homology {
    match (e1 == e2, a1 == a2) {
        (true, true) => Homology::Full,
        (true, false) => Homology::Homologous,
        _ => Homology::None,
    }
}

/// True iff some document is golden for both queries.
pub fn is_quasi_homologous(q1: &LabeledQuery, q2: &LabeledQuery, docs: &[LabeledDoc]) -> bool {
    docs.iter().any(|d| is_golden(d, q1) && is_golden(d, q2))
}

/// Fraction of queries whose entity occurs at least twice in the stream.
pub fn homologous_prevalence(queries: &[LabeledQuery]) -> f64 {
    if queries.is_empty() {
        return 0.0;
    }
    let mut counts: HashMap<EntityId, usize> = HashMap::new();
    for q in queries {
        *counts.entry(q.entity_id).or_default() += 1;
    }
    let shared = queries.iter().filter(|q| counts[&q.entity_id] >= 2).count();
    shared as f64 / queries.len() as f64
}

/// Mean number of documents among each query's exact top-`k` that belong to
/// the query's entity.
pub fn mean_entity_aligned(
    index: &FlatIndex,
    docs: &[LabeledDoc],
    queries: &[LabeledQuery],
    k: usize,
) -> Result<f64> {
    let entity_of: HashMap<DocId, EntityId> =
        docs.iter().map(|d| (d.doc_id, d.entity_id)).collect();
    let mut total = 0usize;
    for q in queries {
        let hits = index.topk(&q.embedding, k)?;
        total += hits
            .iter()
            .filter(|h| entity_of.get(&h.doc_id) == Some(&q.entity_id))
            .count();
    }
    Ok(total as f64 / queries.len().max(1) as f64)
}

// ---------------------------------------------------------------------------
// Metadata sidecar: one `id<TAB>entity_id<TAB>attr,attr,...` line per record.

/// Label row from a metadata sidecar.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaRecord {
    pub id: u64,
    pub entity_id: EntityId,
    pub attrs: Vec<AttrId>,
}

fn join_attrs<'a>(attrs: impl Iterator<Item = &'a AttrId>) -> String {
    attrs.map(|a| a.0.to_string()).collect::<Vec<_>>().join(",")
}

pub fn write_doc_meta<W: Write>(mut w: W, docs: &[LabeledDoc]) -> Result<()> {
    for d in docs {
        writeln!(
            w,
            "{}\t{}\t{}",
            d.doc_id,
            d.entity_id,
            join_attrs(d.covered_attrs.iter())
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_query_meta<W: Write>(mut w: W, queries: &[LabeledQuery]) -> Result<()> {
    for q in queries {
        writeln!(w, "{}\t{}\t{}", q.query_id, q.entity_id, q.attr_id)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_meta<R: BufRead>(r: R) -> Result<Vec<MetaRecord>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let bad = || HasError::Data(format!("metadata line {}: {line:?}", n + 1));
        let mut parts = line.split('\t');
        let (Some(id), Some(ent), Some(attrs), None) =
            (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(bad());
        };
        let attrs = attrs
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|a| a.parse().map(AttrId))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| bad())?;
        if attrs.is_empty() {
            return Err(bad());
        }
        out.push(MetaRecord {
            id: id.parse().map_err(|_| bad())?,
            entity_id: EntityId(ent.parse().map_err(|_| bad())?),
            attrs,
        });
    }
    Ok(out)
}

/// Joins embeddings with doc metadata rows (matched by position).
pub fn docs_from_parts(
    embeddings: Vec<Embedding>,
    meta: Vec<MetaRecord>,
) -> Result<Vec<LabeledDoc>> {
    if embeddings.len() != meta.len() {
        return Err(HasError::Data(format!(
            "{} embeddings but {} metadata rows",
            embeddings.len(),
            meta.len()
        )));
    }
    embeddings
        .into_iter()
        .zip(meta)
        .map(|(e, m)| {
            Ok(LabeledDoc {
                doc_id: DocId(m.id),
                embedding: e.ensure_normalized()?,
                entity_id: m.entity_id,
                covered_attrs: m.attrs.into_iter().collect(),
            })
        })
        .collect()
}

/// Joins embeddings with query metadata rows (exactly one attribute each).
pub fn queries_from_parts(
    embeddings: Vec<Embedding>,
    meta: Vec<MetaRecord>,
) -> Result<Vec<LabeledQuery>> {
    if embeddings.len() != meta.len() {
        return Err(HasError::Data(format!(
            "{} embeddings but {} metadata rows",
            embeddings.len(),
            meta.len()
        )));
    }
    embeddings
        .into_iter()
        .zip(meta)
        .map(|(e, m)| {
            if m.attrs.len() != 1 {
                return Err(HasError::Data(format!(
                    "query {} must have one attribute",
                    m.id
                )));
            }
            Ok(LabeledQuery {
                query_id: QueryId(m.id),
                embedding: e.ensure_normalized()?,
                entity_id: m.entity_id,
                attr_id: m.attrs[0],
            })
        })
        .collect()
}
