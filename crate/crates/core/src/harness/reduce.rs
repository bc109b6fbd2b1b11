use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::dataset::{balanced_sample, load_image, preprocess, DatasetManifest, MODEL_SIDE};
use crate::dimred::{pca_encode, pca_fit, tsne_run, PcaConfig, TsneConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceAlgo {
    Pca,
    Tsne,
}

impl FromStr for ReduceAlgo {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pca" => Ok(ReduceAlgo::Pca),
            "tsne" => Ok(ReduceAlgo::Tsne),
            other => Err(HarnessError::InvalidConfig(format!(
                "unknown algorithm `{other}` (expected pca or tsne)"
            ))),
        }
    }
}

/// 2-D embedding of raw pixels from a seeded balanced pool.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReduceConfig {
    pub algo: ReduceAlgo,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub balance_count: Option<usize>,
    /// 3 embeds RGB pixels, 1 embeds luma.
    pub channels: usize,
}

impl Default for ReduceConfig {
    fn default() -> Self {
        Self {
            algo: ReduceAlgo::Tsne,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            seed: 0,
            balance_count: None,
            channels: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Reduction {
    pub algo: ReduceAlgo,
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    /// KL divergence before and after optimisation (t-SNE only).
    pub initial_kl: Option<f64>,
    pub kl: Option<f64>,
}

pub fn reduce(manifest: &DatasetManifest, cfg: &ReduceConfig) -> Result<Reduction, HarnessError> {
    if cfg.channels != 1 && cfg.channels != 3 {
        return Err(HarnessError::InvalidConfig(
            "channels must be 1 or 3".into(),
        ));
    }
    let pool = balanced_sample(manifest, cfg.seed, cfg.balance_count)?;
    let mut x = Vec::with_capacity(pool.len());
    for e in &pool.entries {
        let (rgb, gray) = preprocess(&load_image(&manifest.resolve(e))?);
        debug_assert_eq!(rgb.width(), MODEL_SIDE);
        x.push(if cfg.channels == 3 {
            rgb.flatten(1.0 / 255.0)
        } else {
            gray.pixels().iter().map(|v| v / 255.0).collect()
        });
    }
    let labels: Vec<usize> = pool.entries.iter().map(|e| e.label.id()).collect();
    match cfg.algo {
        ReduceAlgo::Pca => {
            let model = pca_fit(&x, &PcaConfig::new(2))?;
            let points = x
                .iter()
                .map(|r| pca_encode(&model, r))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(Reduction {
                algo: cfg.algo,
                points,
                labels,
                initial_kl: None,
                kl: None,
            })
        }
        ReduceAlgo::Tsne => {
            let tcfg = TsneConfig {
                perplexity: cfg.perplexity,
                iterations: cfg.iterations,
                learning_rate: cfg.learning_rate,
                seed: cfg.seed,
                ..TsneConfig::default()
            };
            let emb = tsne_run(&x, &tcfg)?;
            Ok(Reduction {
                algo: cfg.algo,
                points: emb.points,
                labels,
                initial_kl: Some(emb.initial_kl),
                kl: Some(emb.kl),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{scan_dataset, synthetic};

    #[test]
    fn both_algorithms_embed_the_balanced_pool() {
        let dir = tempfile::tempdir().unwrap();
        synthetic::write_bundled(dir.path()).unwrap();
        let m = scan_dataset(dir.path()).unwrap();
        let pca = reduce(
            &m,
            &ReduceConfig {
                algo: ReduceAlgo::Pca,
                seed: 4,
                ..ReduceConfig::default()
            },
        )
        .unwrap();
        assert_eq!(pca.points.len(), 18);
        assert!(pca.points.iter().all(|p| p.len() == 2));
        let cfg = ReduceConfig {
            algo: ReduceAlgo::Tsne,
            perplexity: 5.0,
            iterations: 300,
            learning_rate: 10.0,
            seed: 4,
            channels: 1,
            ..ReduceConfig::default()
        };
        let a = reduce(&m, &cfg).unwrap();
        assert_eq!(a.labels, pca.labels);
        assert!(
            a.kl.unwrap() < a.initial_kl.unwrap(),
            "{:?} {:?}",
            a.kl,
            a.initial_kl
        );
        assert_eq!(a, reduce(&m, &cfg).unwrap());
    }

    #[test]
    fn algorithm_names() {
        assert_eq!("pca".parse::<ReduceAlgo>().unwrap(), ReduceAlgo::Pca);
        assert!("umap".parse::<ReduceAlgo>().is_err());
    }
}
