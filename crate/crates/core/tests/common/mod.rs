#![allow(dead_code)]

use std::sync::Arc;

use has_core::bench::{run_benchmark, GroundTruth, MetricsReport};
use has_core::engine::{Engine, EngineConfig};
use has_core::workload::LabeledQuery;
use has_core::workload::{gen_corpus, gen_queries, GenConfig, GeneratedCorpus};
use has_core::{FlatIndex, IvfIndex, LatencyModel};

/// Reference workload: 500 entities, 10k queries, seed 42.
pub struct Reference {
    pub gen: GenConfig,
    pub corpus: GeneratedCorpus,
    pub queries: Vec<LabeledQuery>,
    pub truth: GroundTruth,
    pub full: Arc<FlatIndex>,
    pub ivf: Arc<IvfIndex>,
}

impl Reference {
    pub fn build(gen: GenConfig) -> Reference {
        let corpus = gen_corpus(&gen).unwrap();
        let queries = gen_queries(&gen, &corpus).unwrap();
        let truth = GroundTruth::new(&corpus.docs, &queries);
        let docs = corpus.id_embeddings();
        let full = Arc::new(FlatIndex::new(gen.dim, &docs).unwrap());
        let d = EngineConfig::default();
        let ivf = Arc::new(IvfIndex::build(gen.dim, &docs, d.n_buckets, 1.0, gen.seed).unwrap());
        Reference {
            gen,
            corpus,
            queries,
            truth,
            full,
            ivf,
        }
    }

    pub fn ivf_subset(&self, fraction: f64) -> Arc<IvfIndex> {
        let docs = self.corpus.id_embeddings();
        Arc::new(
            IvfIndex::build(
                self.gen.dim,
                &docs,
                self.ivf.n_buckets(),
                fraction,
                self.gen.seed,
            )
            .unwrap(),
        )
    }

    pub fn engine(&self, cfg: EngineConfig) -> Engine {
        let ivf = if cfg.subset_fraction == 1.0 {
            self.ivf.clone()
        } else {
            self.ivf_subset(cfg.subset_fraction)
        };
        Engine::new(cfg, self.full.clone(), ivf, LatencyModel::default()).unwrap()
    }

    pub fn run_has(&self, cfg: EngineConfig, keep_trace: bool) -> MetricsReport {
        let e = self.engine(cfg);
        run_benchmark("has", &e, &self.queries, &self.truth, keep_trace).unwrap()
    }
}

/// Small workload for quick integration tests.
pub fn small_gen() -> GenConfig {
    GenConfig {
        n_entities: 60,
        docs_per_entity: 10,
        n_queries: 800,
        ..GenConfig::default()
    }
}

pub fn small_engine_cfg() -> EngineConfig {
    EngineConfig {
        n_buckets: 16,
        n_probe: 2,
        h_max: 200,
        ..EngineConfig::default()
    }
}

pub fn build_small() -> Reference {
    let gen = small_gen();
    let corpus = gen_corpus(&gen).unwrap();
    let queries = gen_queries(&gen, &corpus).unwrap();
    let truth = GroundTruth::new(&corpus.docs, &queries);
    let docs = corpus.id_embeddings();
    let full = Arc::new(FlatIndex::new(gen.dim, &docs).unwrap());
    let ivf = Arc::new(IvfIndex::build(gen.dim, &docs, 16, 1.0, gen.seed).unwrap());
    Reference {
        gen,
        corpus,
        queries,
        truth,
        full,
        ivf,
    }
}
