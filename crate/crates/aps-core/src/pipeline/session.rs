//! A resolved run: corpus loaded (or simulated), backend and embedding
//! provider constructed, fingerprint chain computable.

use std::path::{Path, PathBuf};

use super::config::{AppConfig, BackendKind};
use crate::cluster::clustering_text;
use crate::domain::{load_corpus, CorpusFormat, QAExample, Split};
use crate::embed::{
    CachedEmbedder, EmbeddingProvider, MockEmbedder, RemoteEmbedder, SharedEmbeddingCache,
};
use crate::error::{ApsError, Result};
use crate::evaluator::FEATURE_RECIPE;
use crate::forge::META_TEMPLATE_VERSION;
use crate::gateway::{build_sim_world, LlmGateway, RemoteGateway, SimGateway};
use crate::hashing::fingerprint;

pub struct Session {
    pub config: AppConfig,
    pub artifacts_dir: PathBuf,
    pub dataset_name: String,
    pub train: Vec<QAExample>,
    pub test: Vec<QAExample>,
    pub gateway: Box<dyn LlmGateway>,
    pub provider: Box<dyn EmbeddingProvider>,
}

/// Fingerprints of every stage under the current configuration. A
/// stored artifact whose fingerprint differs is stale; a missing one
/// means the stage has not run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chain {
    pub corpus: String,
    pub cluster: String,
    pub database: String,
    pub synth: String,
    pub checkpoint: String,
}

impl Session {
    pub fn new(config: AppConfig) -> Result<Self> {
        Self::with_shared_cache(config, None)
    }

    /// Build a session, optionally reusing an embedding cache from a
    /// previous session over the same provider and corpus.
    pub fn with_shared_cache(
        config: AppConfig,
        cache: Option<SharedEmbeddingCache>,
    ) -> Result<Self> {
        config.validate()?;
        let artifacts_dir = PathBuf::from(&config.artifacts_dir);

        let (dataset_name, train, test, gateway): (
            String,
            Vec<QAExample>,
            Vec<QAExample>,
            Box<dyn LlmGateway>,
        ) = match config.backend {
            BackendKind::Sim => {
                let (train, test, world) = build_sim_world(&config.sim)?;
                let name = format!("sim-{}t", config.sim.topics);
                (name, train, test, Box::new(SimGateway::new(world)))
            }
            BackendKind::Remote => {
                let corpus = config.corpus.as_ref().expect("validated");
                let format = CorpusFormat::parse(&corpus.format)?;
                let train = load_corpus(Path::new(&corpus.train_path), format, Split::Train)?;
                let test = load_corpus(Path::new(&corpus.test_path), format, Split::Test)?;
                let mut endpoint = config.endpoint.clone().expect("validated");
                if endpoint.api_key.is_none() {
                    endpoint.api_key = std::env::var("APS_API_KEY").ok();
                }
                if endpoint.base_url.is_empty() {
                    endpoint.base_url = std::env::var("APS_BASE_URL").map_err(|_| {
                        ApsError::Config(
                            "endpoint base_url is empty and APS_BASE_URL is unset".into(),
                        )
                    })?;
                }
                let gateway = RemoteGateway::new(endpoint)?;
                (corpus.format.to_lowercase(), train, test, Box::new(gateway))
            }
        };

        if train.is_empty() {
            return Err(ApsError::Config("training split is empty".into()));
        }
        if config.pipeline.c > train.len() {
            return Err(ApsError::Config(format!(
                "c = {} exceeds the training split size {}",
                config.pipeline.c,
                train.len()
            )));
        }

        let inner: Box<dyn EmbeddingProvider> = match config.embedding.provider.as_str() {
            "mock" => Box::new(MockEmbedder::new(config.embedding.dim, config.embedding.seed)),
            "remote" => {
                let remote_cfg = config.embedding.remote.clone().expect("validated");
                Box::new(RemoteEmbedder::new(remote_cfg)?)
            }
            _ => unreachable!("validated"),
        };
        let cache = cache.unwrap_or_default();
        let provider: Box<dyn EmbeddingProvider> =
            Box::new(CachedEmbedder::new(inner, cache));

        Ok(Session {
            config,
            artifacts_dir,
            dataset_name,
            train,
            test,
            gateway,
            provider,
        })
    }

    /// Content fingerprint of the corpus (both splits, in order).
    pub fn corpus_fingerprint(&self) -> String {
        let mut parts: Vec<String> = vec![format!("corpus:{}", self.dataset_name)];
        for example in self.train.iter().chain(&self.test) {
            parts.push(serde_json::to_string(example).unwrap_or_default());
        }
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        fingerprint(&refs)
    }

    pub fn recipe_id(&self) -> String {
        format!("{FEATURE_RECIPE}|{}", self.provider.id())
    }

    pub fn chain(&self) -> Chain {
        let p = &self.config.pipeline;
        let corpus = self.corpus_fingerprint();
        let cluster = fingerprint(&[
            "cluster",
            &corpus,
            &p.c.to_string(),
            &p.seed.to_string(),
            &self.provider.id(),
        ]);
        let database = fingerprint(&[
            "forge",
            &cluster,
            &p.c.to_string(),
            &p.n_p.to_string(),
            &p.demo_count.to_string(),
            &p.seed.to_string(),
            &self.gateway.model_id(),
            &p.clustering.to_string(),
            META_TEMPLATE_VERSION,
        ]);
        let synth = fingerprint(&[
            "synth",
            &database,
            &p.m.to_string(),
            &p.pairs.to_string(),
            &self.gateway.model_id(),
        ]);
        let checkpoint = fingerprint(&[
            "train",
            &synth,
            &self.config.resolved_train().canonical(),
            &p.seed.to_string(),
            &self.recipe_id(),
        ]);
        Chain {
            corpus,
            cluster,
            database,
            synth,
            checkpoint,
        }
    }

    /// Texts fed to the embedding provider for clustering, in corpus order.
    pub fn clustering_texts(&self) -> Vec<String> {
        self.train.iter().map(clustering_text).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::PairsMode;

    fn sim_config() -> AppConfig {
        let mut config = AppConfig::default();
        config.sim.topics = 3;
        config.sim.train = 30;
        config.sim.test = 6;
        config.pipeline.c = 3;
        config.pipeline.n_p = 2;
        config.pipeline.k = 2;
        config.pipeline.m = 4;
        config
    }

    #[test]
    fn sim_session_builds_and_fingers_are_stable() {
        let a = Session::new(sim_config()).unwrap();
        let b = Session::new(sim_config()).unwrap();
        assert_eq!(a.chain(), b.chain());
        assert_eq!(a.train.len(), 30);
        assert_eq!(a.test.len(), 6);
    }

    #[test]
    fn chain_reacts_to_config_changes() {
        let base = Session::new(sim_config()).unwrap().chain();

        let mut seeded = sim_config();
        seeded.pipeline.seed = 99;
        let seeded_chain = Session::new(seeded).unwrap().chain();
        assert_eq!(base.corpus, seeded_chain.corpus);
        assert_ne!(base.cluster, seeded_chain.cluster);

        let mut paired = sim_config();
        paired.pipeline.pairs = PairsMode::WithinCluster;
        let paired_chain = Session::new(paired).unwrap().chain();
        assert_eq!(base.database, paired_chain.database);
        assert_ne!(base.synth, paired_chain.synth);
        assert_ne!(base.checkpoint, paired_chain.checkpoint);

        let mut np = sim_config();
        np.pipeline.n_p = 3;
        let np_chain = Session::new(np).unwrap().chain();
        assert_ne!(base.database, np_chain.database);
    }

    #[test]
    fn oversized_c_is_rejected() {
        let mut config = sim_config();
        config.pipeline.c = 31;
        config.pipeline.k = 1;
        assert!(Session::new(config).is_err());
    }
}
