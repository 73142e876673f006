//! Bagged ensemble of independently trained classifiers combined by majority
//! vote.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Pipeline;
use crate::error::{Error, Result};
use crate::nn::{self, argmax_prefer_failure, Classifier, ModelConfig, Sample, TrainConfig};
use crate::seed::{self, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleModel {
    pub master_seed: u64,
    /// Training seed of each member, `derive(master_seed, i)`.
    pub member_seeds: Vec<u64>,
    pub config: ModelConfig,
    pub members: Vec<Classifier>,
    pub pipeline: Option<Pipeline>,
}

/// Outcome of one ensemble vote.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vote {
    pub class: usize,
    /// Members voting for each class; sums to the member count.
    pub counts: Vec<usize>,
}

impl Vote {
    pub fn members(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Vote share per class.
    pub fn proportions(&self) -> Vec<f64> {
        let k = self.members() as f64;
        self.counts.iter().map(|c| *c as f64 / k).collect()
    }

    /// Plurality class; ties go to the highest class index (failure).
    pub fn from_counts(counts: Vec<usize>) -> Self {
        let as_f64: Vec<f64> = counts.iter().map(|c| *c as f64).collect();
        Self {
            class: argmax_prefer_failure(&as_f64),
            counts,
        }
    }
}

/// Seeds for member `index`: `(training seed, bootstrap seed)`.
pub fn member_seeds(master_seed: u64, index: usize) -> (u64, u64) {
    let member = seed::derive(master_seed, index as u64);
    (member, seed::derive(member, stream::BOOTSTRAP))
}

/// Same-size resample with replacement.
pub fn bootstrap(samples: &[Sample], seed: u64) -> Vec<Sample> {
    let mut rng = seed::rng(seed);
    (0..samples.len())
        .map(|_| samples[rng.gen_range(0..samples.len())].clone())
        .collect()
}

/// Trains `k` members, each on its own bootstrap resample with its own
/// initialization seed. Members are fitted in parallel on the current rayon
/// pool; the result does not depend on scheduling.
pub fn fit_ensemble(
    k: usize,
    model_config: ModelConfig,
    train_config: &TrainConfig,
    samples: &[Sample],
    master_seed: u64,
) -> Result<EnsembleModel> {
    if k == 0 {
        return Err(Error::invalid("k", "ensemble needs at least one member"));
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput("ensemble training set"));
    }
    let members = (0..k)
        .into_par_iter()
        .map(|i| {
            let (train_seed, boot_seed) = member_seeds(master_seed, i);
            let resample = bootstrap(samples, boot_seed);
            let cfg = TrainConfig {
                seed: train_seed,
                ..*train_config
            };
            nn::train(model_config, &cfg, &resample).map_err(|e| Error::Member {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleModel {
        master_seed,
        member_seeds: (0..k).map(|i| member_seeds(master_seed, i).0).collect(),
        config: model_config,
        members,
        pipeline: None,
    })
}

impl EnsembleModel {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn vote_predict(&self, input: &[f64]) -> Result<Vote> {
        let mut counts = vec![0usize; self.config.classes];
        for m in &self.members {
            counts[m.predict(input)?.0] += 1;
        }
        Ok(Vote::from_counts(counts))
    }

    pub fn accuracy(&self, samples: &[Sample]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::EmptyInput("accuracy batch"));
        }
        let mut hits = 0usize;
        for s in samples {
            hits += usize::from(self.vote_predict(&s.input)?.class == s.label);
        }
        Ok(hits as f64 / samples.len() as f64)
    }

    /// Writes `manifest.json` and one `member_NNN.model` per member into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let manifest = EnsembleManifest {
            format_version: ENSEMBLE_FORMAT_VERSION,
            k: self.len(),
            master_seed: self.master_seed,
            member_seeds: self.member_seeds.clone(),
            config: self.config,
            pipeline: self.pipeline.clone(),
            members: (0..self.len()).map(member_file).collect(),
        };
        let mut w = BufWriter::new(File::create(dir.join(MANIFEST))?);
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.flush()?;
        for (m, name) in self.members.iter().zip(&manifest.members) {
            nn::save(m, &dir.join(name))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: EnsembleManifest =
            serde_json::from_reader(BufReader::new(File::open(dir.join(MANIFEST))?))?;
        if manifest.format_version != ENSEMBLE_FORMAT_VERSION {
            return Err(Error::Version {
                what: "ensemble",
                found: manifest.format_version,
                expected: ENSEMBLE_FORMAT_VERSION,
            });
        }
        if manifest.members.len() != manifest.k || manifest.member_seeds.len() != manifest.k {
            return Err(Error::ModelFormat(
                "ensemble manifest member count mismatch".into(),
            ));
        }
        let members = manifest
            .members
            .iter()
            .map(|name| nn::load(&dir.join(name)))
            .collect::<Result<Vec<_>>>()?;
        if let Some(bad) = members.iter().position(|m| *m.config() != manifest.config) {
            return Err(Error::ModelFormat(format!(
                "member {bad} config differs from manifest"
            )));
        }
        Ok(Self {
            master_seed: manifest.master_seed,
            member_seeds: manifest.member_seeds,
            config: manifest.config,
            members,
            pipeline: manifest.pipeline,
        })
    }
}

pub const ENSEMBLE_FORMAT_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

fn member_file(i: usize) -> String {
    format!("member_{i:03}.model")
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    format_version: u32,
    k: usize,
    master_seed: u64,
    member_seeds: Vec<u64>,
    config: ModelConfig,
    pipeline: Option<Pipeline>,
    members: Vec<String>,
}
