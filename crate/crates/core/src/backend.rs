//! Full-database retrieval and the virtual-clock cloud/edge latency model.
//!
//! Latencies are accumulated as numbers, never slept (unless
//! [`LatencyModel::real_sleep`] is set). Network delay is a uniform draw per
//! stage; compute cost is either an analytic per-component charge or the
//! measured wall time of the search call.

use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::embedding::Embedding;
use crate::error::{HasError, Result};
use crate::index::{FlatIndex, RankedHits, SearchStats};
use crate::rng::RngStream;

/// Edge network delay range in seconds.
pub const DEFAULT_EDGE_NET: (f64, f64) = (0.01, 0.05);
/// Cloud network delay range in seconds.
pub const DEFAULT_CLOUD_NET: (f64, f64) = (0.1, 0.2);
/// Analytic compute charge per multiply-add, in seconds.
pub const DEFAULT_SECS_PER_COMPONENT: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Edge,
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ComputeCost {
    /// `vectors * dim * secs_per_component`; deterministic.
    Analytic { secs_per_component: f64 },
    /// Wall time of the search call; not reproducible across runs.
    Measured,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub edge_net: (f64, f64),
    pub cloud_net: (f64, f64),
    pub compute: ComputeCost,
    pub seed: u64,
    pub real_sleep: bool,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            edge_net: DEFAULT_EDGE_NET,
            cloud_net: DEFAULT_CLOUD_NET,
            compute: ComputeCost::Analytic {
                secs_per_component: DEFAULT_SECS_PER_COMPONENT,
            },
            seed: 42,
            real_sleep: false,
        }
    }
}

impl LatencyModel {
    pub fn with_seed(seed: u64) -> Self {
        LatencyModel {
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("edge_net", self.edge_net), ("cloud_net", self.cloud_net)] {
            if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
                return Err(HasError::Config(format!(
                    "{name} range [{lo}, {hi}] is invalid"
                )));
            }
        }
        if let ComputeCost::Analytic { secs_per_component } = self.compute {
            if !(secs_per_component >= 0.0 && secs_per_component.is_finite()) {
                return Err(HasError::Config("secs_per_component must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Clock for one query; its draws depend only on `(seed, ordinal)`.
    pub fn query_clock(&self, ordinal: u64) -> QueryClock {
        QueryClock {
            rng: RngStream::substream(self.seed, ordinal),
            edge_draws: 0,
            cloud_draws: 0,
        }
    }

    pub fn range(&self, stage: Stage) -> (f64, f64) {
        match stage {
            Stage::Edge => self.edge_net,
            Stage::Cloud => self.cloud_net,
        }
    }

    pub fn compute_cost(&self, stats: &SearchStats, dim: usize, measured: Duration) -> f64 {
        match self.compute {
            ComputeCost::Analytic { secs_per_component } => {
                (stats.total_vectors() * dim) as f64 * secs_per_component
            }
            ComputeCost::Measured => measured.as_secs_f64(),
        }
    }

    /// Uniform network draw for `stage` plus `compute_secs`. Consumes one draw.
    pub fn sample_stage_latency(
        &self,
        clock: &mut QueryClock,
        stage: Stage,
        compute_secs: f64,
    ) -> f64 {
        let (lo, hi) = self.range(stage);
        let u = clock.rng.next_f64();
        match stage {
            Stage::Edge => clock.edge_draws += 1,
            Stage::Cloud => clock.cloud_draws += 1,
        }
        let secs = lo + (hi - lo) * u + compute_secs;
        if self.real_sleep {
            thread::sleep(Duration::from_secs_f64(secs));
        }
        secs
    }
}

/// Per-query random stream with per-stage draw counters.
#[derive(Debug, Clone)]
pub struct QueryClock {
    rng: RngStream,
    edge_draws: u32,
    cloud_draws: u32,
}

impl QueryClock {
    pub fn draws(&self, stage: Stage) -> u32 {
        match stage {
            Stage::Edge => self.edge_draws,
            Stage::Cloud => self.cloud_draws,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown {
    pub edge_seconds: f64,
    pub cloud_seconds: f64,
    pub total_seconds: f64,
}

impl LatencyBreakdown {
    pub fn new(edge_seconds: f64, cloud_seconds: f64) -> Self {
        LatencyBreakdown {
            edge_seconds,
            cloud_seconds,
            total_seconds: edge_seconds + cloud_seconds,
        }
    }
}

/// Exact retrieval over the full corpus, hosted in the cloud.
#[derive(Debug, Clone, Default)]
pub struct FullBackend {
    index: Option<Arc<FlatIndex>>,
}

impl FullBackend {
    pub fn new(index: Arc<FlatIndex>) -> Self {
        FullBackend { index: Some(index) }
    }

    pub fn unloaded() -> Self {
        FullBackend { index: None }
    }

    pub fn index(&self) -> Result<&Arc<FlatIndex>> {
        self.index
            .as_ref()
            .ok_or_else(|| HasError::NotReady("full corpus not loaded".into()))
    }

    /// Exact top-k plus the cloud-stage latency charged for it.
    pub fn full_retrieve(
        &self,
        q: &Embedding,
        k: usize,
        model: &LatencyModel,
        clock: &mut QueryClock,
    ) -> Result<(RankedHits, f64)> {
        let index = self.index()?;
        let started = std::time::Instant::now();
        let (hits, stats) = index.topk_with_stats(q, k)?;
        let compute = model.compute_cost(&stats, index.dim(), started.elapsed());
        let secs = model.sample_stage_latency(clock, Stage::Cloud, compute);
        Ok((hits, secs))
    }
}
