//! Content-addressed artifact store: `<out_dir>/<config hash>/<stage>/`.
//!
//! Every stage writes its files and then a `manifest.json` listing their
//! SHA-256 digests. A stage counts as complete once its manifest exists.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gram_core::pipeline::PipelineConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("stage `{stage}` requires the `{required}` artifacts, which are missing under {dir}; run `gram {required}` first")]
    MissingDependency {
        stage: Stage,
        required: Stage,
        dir: PathBuf,
    },
    #[error("artifact {path} is corrupt: {reason}")]
    Corrupt { path: PathBuf, reason: String },
    #[error("unknown stage `{0}`")]
    UnknownStage(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type StoreResult<T> = std::result::Result<T, StoreError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    GenData,
    TrainSft,
    Augment,
    Align,
    BuildIndex,
    TrainWeights,
    Eval,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::GenData,
        Stage::TrainSft,
        Stage::Augment,
        Stage::Align,
        Stage::BuildIndex,
        Stage::TrainWeights,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::GenData => "gen-data",
            Stage::TrainSft => "train-sft",
            Stage::Augment => "augment",
            Stage::Align => "align",
            Stage::BuildIndex => "build-index",
            Stage::TrainWeights => "train-weights",
            Stage::Eval => "eval",
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn requires(self) -> &'static [Stage] {
        match self {
            Stage::GenData => &[],
            Stage::TrainSft => &[Stage::GenData],
            Stage::Augment => &[Stage::GenData, Stage::TrainSft],
            Stage::Align => &[Stage::GenData, Stage::Augment],
            Stage::BuildIndex => &[Stage::GenData, Stage::Align],
            Stage::TrainWeights => &[Stage::GenData, Stage::Align, Stage::BuildIndex],
            Stage::Eval => &[
                Stage::GenData,
                Stage::TrainSft,
                Stage::Augment,
                Stage::Align,
                Stage::BuildIndex,
                Stage::TrainWeights,
            ],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = StoreError;

    fn from_str(s: &str) -> StoreResult<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| StoreError::UnknownStage(s.to_string()))
    }
}

/// Parses a comma-separated stage list into pipeline order.
pub fn parse_stages(s: &str) -> StoreResult<Vec<Stage>> {
    let mut v: Vec<Stage> = s
        .split(',')
        .map(str::trim)
        .filter(|x| !x.is_empty())
        .map(Stage::from_str)
        .collect::<StoreResult<_>>()?;
    v.sort();
    v.dedup();
    Ok(v)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub config_hash: String,
    /// File name to hex SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub const MANIFEST: &str = "manifest.json";

/// The run directory of one configuration.
#[derive(Debug, Clone)]
pub struct Store {
    root: PathBuf,
    hash: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl Store {
    pub fn for_config(cfg: &PipelineConfig) -> Self {
        let hash = cfg.hash();
        Self {
            root: cfg.out_dir.join(&hash),
            hash,
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    pub fn path(&self, stage: Stage, file: &str) -> PathBuf {
        self.dir(stage).join(file)
    }

    pub fn is_complete(&self, stage: Stage) -> bool {
        self.path(stage, MANIFEST).is_file()
    }

    /// Fails unless every stage `stage` depends on, directly or not, has
    /// completed; the error names the earliest missing one.
    pub fn check_dependencies(&self, stage: Stage) -> StoreResult<()> {
        let mut needed: Vec<Stage> = stage.requires().to_vec();
        let mut i = 0;
        while i < needed.len() {
            for r in needed[i].requires() {
                if !needed.contains(r) {
                    needed.push(*r);
                }
            }
            i += 1;
        }
        needed.sort();
        match needed.into_iter().find(|r| !self.is_complete(*r)) {
            Some(required) => Err(StoreError::MissingDependency {
                stage,
                required,
                dir: self.dir(required),
            }),
            None => Ok(()),
        }
    }

    pub fn manifest(&self, stage: Stage) -> StoreResult<Manifest> {
        let p = self.path(stage, MANIFEST);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        serde_json::from_slice(&bytes).map_err(|e| StoreError::Corrupt {
            path: p,
            reason: e.to_string(),
        })
    }

    /// Reads a file of a completed stage and checks it against the manifest.
    pub fn read(&self, stage: Stage, file: &str) -> StoreResult<Vec<u8>> {
        let manifest = self.manifest(stage)?;
        let p = self.path(stage, file);
        let bytes = fs::read(&p).map_err(io_err(&p))?;
        match manifest.files.get(file) {
            Some(h) if *h == sha256_hex(&bytes) => Ok(bytes),
            Some(_) => Err(StoreError::Corrupt {
                path: p,
                reason: "digest differs from manifest".into(),
            }),
            None => Err(StoreError::Corrupt {
                path: p,
                reason: "not listed in manifest".into(),
            }),
        }
    }

    /// Replaces the stage directory with `files` and a fresh manifest.
    pub fn write_stage(&self, stage: Stage, files: &[(String, Vec<u8>)]) -> StoreResult<Manifest> {
        let dir = self.dir(stage);
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(io_err(&dir))?;
        }
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let mut manifest = Manifest {
            stage: stage.name().to_string(),
            config_hash: self.hash.clone(),
            files: BTreeMap::new(),
        };
        for (name, bytes) in files {
            let p = dir.join(name);
            fs::write(&p, bytes).map_err(io_err(&p))?;
            manifest.files.insert(name.clone(), sha256_hex(bytes));
        }
        let p = dir.join(MANIFEST);
        let body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        fs::write(&p, body).map_err(io_err(&p))?;
        Ok(manifest)
    }

    pub fn write_config(&self, cfg: &PipelineConfig) -> StoreResult<()> {
        fs::create_dir_all(&self.root).map_err(io_err(&self.root))?;
        let p = self.root.join("config.json");
        let body = serde_json::to_vec_pretty(cfg).expect("config serializes");
        fs::write(&p, body).map_err(io_err(&p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
        assert!("nope".parse::<Stage>().is_err());
    }

    #[test]
    fn stage_lists_are_ordered_and_deduplicated() {
        let v = parse_stages("eval, gen-data,align,gen-data").unwrap();
        assert_eq!(v, vec![Stage::GenData, Stage::Align, Stage::Eval]);
        assert!(parse_stages("gen-data,bogus").is_err());
    }

    #[test]
    fn dependencies_precede_their_stage() {
        for s in Stage::ALL {
            assert!(s.requires().iter().all(|r| *r < s));
        }
    }

    #[test]
    fn read_checks_the_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let store = Store::for_config(&cfg);
        let err = store.check_dependencies(Stage::TrainSft).unwrap_err();
        assert!(err.to_string().contains("`gen-data`"), "{err}");
        store
            .write_stage(Stage::GenData, &[("a.txt".into(), b"hello".to_vec())])
            .unwrap();
        store.check_dependencies(Stage::TrainSft).unwrap();
        let err = store.check_dependencies(Stage::Align).unwrap_err();
        assert!(matches!(err, StoreError::MissingDependency { required: Stage::TrainSft, .. }));
        assert_eq!(store.read(Stage::GenData, "a.txt").unwrap(), b"hello");
        fs::write(store.path(Stage::GenData, "a.txt"), b"tampered").unwrap();
        assert!(matches!(store.read(Stage::GenData, "a.txt"), Err(StoreError::Corrupt { .. })));
    }
}
