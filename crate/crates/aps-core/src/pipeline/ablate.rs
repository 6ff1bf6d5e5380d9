//! Configuration sweeps: the clustering/voting toggle grid and the
//! (c, n_p) size grid. Each configuration runs the full chain in its
//! own artifact directory; failures isolate to their row.

use serde::{Deserialize, Serialize};

use super::config::AppConfig;
use super::eval::{run_all, EvalReport};
use super::session::Session;
use crate::embed::SharedEmbeddingCache;
use crate::error::{ApsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub label: String,
    pub c: usize,
    pub n_p: usize,
    pub clustering: bool,
    /// Voting size; 1 disables the vote.
    pub k: usize,
}

/// The four clustering x voting toggle combinations.
pub fn toggles_grid(base: &AppConfig) -> Vec<AblationConfig> {
    let p = &base.pipeline;
    [(false, 1), (false, p.k.max(2)), (true, 1), (true, p.k.max(2))]
        .into_iter()
        .map(|(clustering, k)| AblationConfig {
            label: format!(
                "cluster={} vote={}",
                if clustering { "on" } else { "off" },
                if k > 1 { "on" } else { "off" }
            ),
            c: p.c,
            n_p: p.n_p,
            clustering,
            k,
        })
        .collect()
}

/// Cross product of cluster counts and prompts-per-cluster.
pub fn sizes_grid(base: &AppConfig, cs: &[usize], n_ps: &[usize]) -> Vec<AblationConfig> {
    let mut grid = Vec::with_capacity(cs.len() * n_ps.len());
    for &c in cs {
        for &n_p in n_ps {
            grid.push(AblationConfig {
                label: format!("c={c} n_p={n_p}"),
                c,
                n_p,
                clustering: base.pipeline.clustering,
                k: base.pipeline.k.min(c * n_p),
            });
        }
    }
    grid
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub report: Option<EvalReport>,
    pub error: Option<String>,
}

/// Run the full pipeline once per configuration. Embeddings are shared
/// across rows through one provider cache (the corpus and provider do
/// not change within a sweep).
pub fn ablation_sweep(base: &AppConfig, configs: &[AblationConfig]) -> Result<Vec<AblationRow>> {
    if configs.is_empty() {
        return Err(ApsError::Precondition("no sweep configurations given".into()));
    }
    let cache: SharedEmbeddingCache = Default::default();
    let mut rows = Vec::with_capacity(configs.len());
    for entry in configs {
        let mut config = base.clone();
        config.pipeline.c = entry.c;
        config.pipeline.n_p = entry.n_p;
        config.pipeline.clustering = entry.clustering;
        config.pipeline.k = entry.k;
        config.eval.mode = Some(if entry.k > 1 {
            format!("aps-vote-{}", entry.k)
        } else {
            "aps-novote".to_string()
        });
        let slug: String = entry
            .label
            .chars()
            .map(|ch| if ch.is_alphanumeric() { ch } else { '-' })
            .collect();
        config.artifacts_dir = format!("{}/ablate/{slug}", base.artifacts_dir);

        let outcome = Session::with_shared_cache(config, Some(cache.clone()))
            .and_then(|session| run_all(&session));
        rows.push(match outcome {
            Ok((report, _)) => AblationRow {
                label: entry.label.clone(),
                report: Some(report),
                error: None,
            },
            Err(e) => AblationRow {
                label: entry.label.clone(),
                report: None,
                error: Some(e.to_string()),
            },
        });
    }
    Ok(rows)
}

/// Render the sweep as an aligned text table.
pub fn format_rows(rows: &[AblationRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>9} {:>7} {:>9}  {}\n",
        "config", "accuracy", "n", "correct", "notes"
    ));
    for row in rows {
        match (&row.report, &row.error) {
            (Some(r), _) => out.push_str(&format!(
                "{:<24} {:>9.4} {:>7} {:>9}  {}\n",
                row.label,
                r.accuracy,
                r.n_evaluated,
                r.n_correct,
                if r.incomplete { "incomplete" } else { "" }
            )),
            (None, Some(e)) => {
                out.push_str(&format!("{:<24} {:>9} {:>7} {:>9}  {}\n", row.label, "-", "-", "-", e))
            }
            (None, None) => out.push_str(&format!("{:<24} (empty row)\n", row.label)),
        }
    }
    out
}
