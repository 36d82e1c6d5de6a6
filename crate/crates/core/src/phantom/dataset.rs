use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::volio::{read_volume, write_volume};
use super::{generate_phantom, render_sample, Dims, DomainSpec, PhantomParams, TissueVolume, VolumeSample};
use crate::error::{ensure, Error, Result};
use crate::rng::derive_seed;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub dims: Dims,
    pub source_train: usize,
    pub target_adapt: usize,
    pub target_test: usize,
    pub source: DomainSpec,
    pub target: DomainSpec,
    pub phantom: PhantomParams,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            dims: Dims::cube(32),
            source_train: 12,
            target_adapt: 8,
            target_test: 6,
            source: DomainSpec::source(),
            target: DomainSpec::target(),
            phantom: PhantomParams::default(),
        }
    }
}

/// A target-domain case whose output modality is withheld by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct UnpairedSample {
    pub case_id: String,
    pub domain_id: String,
    pub inputs: Tensor,
    pub tissue_seed: u64,
    dims: Dims,
}

impl UnpairedSample {
    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Always fails: adaptation data carries no ground truth.
    pub fn target(&self) -> Result<&Tensor> {
        Err(Error::Withheld(self.case_id.clone()))
    }

    pub fn input_batch(&self) -> Tensor {
        let mut s = vec![1];
        s.extend_from_slice(self.inputs.shape());
        Tensor::from_parts(s, self.inputs.data().to_vec())
    }
}

/// Source-train pairs, target-adapt inputs and target-test pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetSplit {
    pub source_train: Vec<VolumeSample>,
    pub target_adapt: Vec<UnpairedSample>,
    pub target_test: Vec<VolumeSample>,
}

impl DatasetSplit {
    /// Case ids of every sample that may be used for training or adaptation.
    pub fn training_ids(&self) -> HashSet<&str> {
        self.source_train
            .iter()
            .map(|s| s.case_id.as_str())
            .chain(self.target_adapt.iter().map(|s| s.case_id.as_str()))
            .collect()
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        let ids = self
            .source_train
            .iter()
            .map(|s| &s.case_id)
            .chain(self.target_adapt.iter().map(|s| &s.case_id))
            .chain(self.target_test.iter().map(|s| &s.case_id));
        for id in ids {
            ensure!(seen.insert(id.as_str()), "case id {id} appears in more than one split");
        }
        Ok(())
    }

    /// First `count` target-adapt samples.
    pub fn adapt_subset(&self, count: usize) -> Result<Vec<UnpairedSample>> {
        ensure!(
            count >= 1 && count <= self.target_adapt.len(),
            "adapt count {count} outside 1..={}",
            self.target_adapt.len()
        );
        Ok(self.target_adapt[..count].to_vec())
    }
}

/// Data that sits outside the UDA setting: a source-domain test set for the
/// no-shift control and paired renderings of the adaptation anatomies for the
/// supervised upper bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlSets {
    pub source_test: Vec<VolumeSample>,
    pub target_labeled: Vec<VolumeSample>,
}

fn case(split: &str, i: usize) -> String {
    format!("{split}-{i:03}")
}

fn tissue_for(cfg: &DatasetConfig, master: u64, group: &str, i: usize) -> Result<TissueVolume> {
    generate_phantom(derive_seed(master, &format!("tissue/{group}"), i as u64), cfg.dims, &cfg.phantom)
}

fn noise_seed(master: u64, group: &str, i: usize) -> u64 {
    derive_seed(master, &format!("noise/{group}"), i as u64)
}

fn paired(cfg: &DatasetConfig, master: u64, group: &str, domain: &DomainSpec, n: usize) -> Result<Vec<VolumeSample>> {
    (0..n)
        .map(|i| {
            let t = tissue_for(cfg, master, group, i)?;
            render_sample(&t, domain, noise_seed(master, group, i), case(group, i))
        })
        .collect()
}

pub fn make_dataset(cfg: &DatasetConfig, master_seed: u64) -> Result<DatasetSplit> {
    ensure!(
        cfg.source_train >= 1 && cfg.target_adapt >= 1 && cfg.target_test >= 1,
        "every split needs at least one case"
    );
    let source_train = paired(cfg, master_seed, "src-train", &cfg.source, cfg.source_train)?;
    let target_adapt = paired(cfg, master_seed, "tgt-adapt", &cfg.target, cfg.target_adapt)?
        .into_iter()
        .map(|s| UnpairedSample {
            dims: s.dims(),
            tissue_seed: s.labels.seed,
            case_id: s.case_id,
            domain_id: s.domain_id,
            inputs: s.inputs,
        })
        .collect();
    let target_test = paired(cfg, master_seed, "tgt-test", &cfg.target, cfg.target_test)?;
    let split = DatasetSplit { source_train, target_adapt, target_test };
    split.check_disjoint()?;
    Ok(split)
}

pub fn make_control_sets(cfg: &DatasetConfig, master_seed: u64) -> Result<ControlSets> {
    let source_test = paired(cfg, master_seed, "src-test", &cfg.source, cfg.target_test)?;
    let target_labeled = (0..cfg.target_adapt)
        .map(|i| {
            let t = tissue_for(cfg, master_seed, "tgt-adapt", i)?;
            render_sample(&t, &cfg.target, noise_seed(master_seed, "tgt-adapt", i), case("tgt-sup", i))
        })
        .collect::<Result<_>>()?;
    Ok(ControlSets { source_test, target_labeled })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestCase {
    pub split: String,
    pub case_id: String,
    pub domain_id: String,
    pub tissue_seed: u64,
    pub inputs: PathBuf,
    pub target: Option<PathBuf>,
    pub labels: Option<PathBuf>,
}

/// `manifest.json` written next to the case directories.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub master_seed: u64,
    pub config: DatasetConfig,
    pub cases: Vec<ManifestCase>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetSplit {
    /// Writes one directory per case plus `manifest.json` under `dir`.
    /// Target-adapt directories contain the inputs only.
    pub fn write(&self, cfg: &DatasetConfig, master_seed: u64, dir: &Path) -> Result<Manifest> {
        let mut cases = Vec::new();
        let mut put = |split: &str, s: &VolumeSample| -> Result<()> {
            let rel = PathBuf::from("cases").join(&s.case_id);
            write_volume(&dir.join(&rel).join("inputs.vol"), &s.inputs)?;
            write_volume(&dir.join(&rel).join("target.vol"), &s.target)?;
            write_volume(&dir.join(&rel).join("labels.vol"), &s.labels.to_tensor())?;
            cases.push(ManifestCase {
                split: split.into(),
                case_id: s.case_id.clone(),
                domain_id: s.domain_id.clone(),
                tissue_seed: s.labels.seed,
                inputs: rel.join("inputs.vol"),
                target: Some(rel.join("target.vol")),
                labels: Some(rel.join("labels.vol")),
            });
            Ok(())
        };
        for s in &self.source_train {
            put("source-train", s)?;
        }
        for s in &self.target_test {
            put("target-test", s)?;
        }
        for s in &self.target_adapt {
            let rel = PathBuf::from("cases").join(&s.case_id);
            write_volume(&dir.join(&rel).join("inputs.vol"), &s.inputs)?;
            cases.push(ManifestCase {
                split: "target-adapt".into(),
                case_id: s.case_id.clone(),
                domain_id: s.domain_id.clone(),
                tissue_seed: s.tissue_seed,
                inputs: rel.join("inputs.vol"),
                target: None,
                labels: None,
            });
        }
        let manifest = Manifest { master_seed, config: cfg.clone(), cases };
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }

    /// Loads a dataset previously written with [`DatasetSplit::write`].
    pub fn read(dir: &Path) -> Result<(DatasetSplit, Manifest)> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Json { path: path.clone(), source: e })?;
        let mut split = DatasetSplit { source_train: Vec::new(), target_adapt: Vec::new(), target_test: Vec::new() };
        for c in &manifest.cases {
            let inputs = read_volume(&dir.join(&c.inputs))?;
            ensure!(inputs.rank() == 4 && inputs.shape()[0] == 2, "case {}: inputs must be [2, D, H, W]", c.case_id);
            let s = inputs.shape();
            let dims = Dims { d: s[1], h: s[2], w: s[3] };
            match c.split.as_str() {
                "target-adapt" => split.target_adapt.push(UnpairedSample {
                    case_id: c.case_id.clone(),
                    domain_id: c.domain_id.clone(),
                    inputs,
                    tissue_seed: c.tissue_seed,
                    dims,
                }),
                "source-train" | "target-test" => {
                    let (Some(t), Some(l)) = (&c.target, &c.labels) else {
                        return Err(Error::contract(format!("case {} lacks target or labels", c.case_id)));
                    };
                    let target = read_volume(&dir.join(t))?;
                    let labels = TissueVolume::from_tensor(&read_volume(&dir.join(l))?, c.tissue_seed)?;
                    ensure!(labels.dims == dims, "case {}: label dims differ from inputs", c.case_id);
                    let sample = VolumeSample {
                        case_id: c.case_id.clone(),
                        domain_id: c.domain_id.clone(),
                        inputs,
                        target,
                        labels,
                    };
                    if c.split == "source-train" {
                        split.source_train.push(sample);
                    } else {
                        split.target_test.push(sample);
                    }
                }
                other => return Err(Error::contract(format!("unknown split {other}"))),
            }
        }
        split.check_disjoint()?;
        Ok((split, manifest))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DatasetConfig {
        DatasetConfig { dims: Dims::cube(8), source_train: 3, target_adapt: 2, target_test: 2, ..Default::default() }
    }

    #[test]
    fn default_counts_and_disjoint_ids() {
        let cfg = DatasetConfig { dims: Dims::cube(8), ..Default::default() };
        let d = make_dataset(&cfg, 0).unwrap();
        assert_eq!((d.source_train.len(), d.target_adapt.len(), d.target_test.len()), (12, 8, 6));
        d.check_disjoint().unwrap();
    }

    #[test]
    fn deterministic_per_seed() {
        let a = make_dataset(&small(), 5).unwrap();
        let b = make_dataset(&small(), 5).unwrap();
        assert_eq!(a, b);
        let c = make_dataset(&small(), 6).unwrap();
        assert_ne!(a.source_train[0].inputs, c.source_train[0].inputs);
    }

    #[test]
    fn adapt_targets_are_withheld() {
        let d = make_dataset(&small(), 1).unwrap();
        for s in &d.target_adapt {
            assert!(matches!(s.target(), Err(Error::Withheld(_))));
        }
    }

    #[test]
    fn zero_counts_rejected() {
        let cfg = DatasetConfig { target_adapt: 0, ..small() };
        assert!(make_dataset(&cfg, 0).is_err());
    }

    #[test]
    fn controls_share_adapt_anatomy() {
        let cfg = small();
        let d = make_dataset(&cfg, 3).unwrap();
        let c = make_control_sets(&cfg, 3).unwrap();
        assert_eq!(c.target_labeled.len(), 2);
        assert_eq!(c.target_labeled[0].inputs, d.target_adapt[0].inputs);
        let train_ids = d.training_ids();
        assert!(c.source_test.iter().all(|s| !train_ids.contains(s.case_id.as_str())));
    }

    #[test]
    fn write_read_round_trip() {
        let cfg = small();
        let d = make_dataset(&cfg, 2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let m = d.write(&cfg, 2, dir.path()).unwrap();
        assert_eq!(m.cases.len(), 7);
        let (back, m2) = DatasetSplit::read(dir.path()).unwrap();
        assert_eq!(m, m2);
        assert_eq!(back.source_train, d.source_train);
        assert_eq!(back.target_adapt, d.target_adapt);
        assert_eq!(back.target_test, d.target_test);
        assert!(!dir.path().join("cases/tgt-adapt-000/target.vol").exists());
    }
}
