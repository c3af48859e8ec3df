use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{GramError, Result};

/// Shape hyperparameters of the decoder-only sequence model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    /// Maximum prompt + target length in tokens.
    pub max_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    /// Standard deviation of the initial weights.
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: 0,
            max_len: 32,
            d_model: 64,
            n_heads: 4,
            n_layers: 2,
            d_ff: 128,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 || self.max_len < 2 || self.d_model == 0 || self.n_layers == 0 || self.d_ff == 0 {
            return Err(GramError::Config(format!("degenerate model shape {self:?}")));
        }
        if self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(GramError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(GramError::Config("init_std must be positive".into()));
        }
        Ok(())
    }
}

/// Position of a named tensor inside the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    #[serde(skip)]
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type ParamId = usize;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub w_qkv: ParamId,
    pub b_qkv: ParamId,
    pub w_o: ParamId,
    pub b_o: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w_ff1: ParamId,
    pub b_ff1: ParamId,
    pub w_ff2: ParamId,
    pub b_ff2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamIds {
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub layers: Vec<LayerIds>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
    pub w_out: ParamId,
    pub b_out: ParamId,
}

#[derive(Clone, Copy, PartialEq)]
enum Init {
    Normal(f64),
    Ones,
    Zeros,
}

fn layout(cfg: &ModelConfig) -> (ParamIds, Vec<TensorSpec>, Vec<Init>) {
    let mut specs = Vec::new();
    let mut inits = Vec::new();
    let mut offset = 0;
    let mut add = |name: String, rows: usize, cols: usize, init: Init| {
        specs.push(TensorSpec {
            name,
            rows,
            cols,
            offset,
        });
        inits.push(init);
        offset += rows * cols;
        specs.len() - 1
    };
    let (d, v, ff) = (cfg.d_model, cfg.vocab_size, cfg.d_ff);
    let std = cfg.init_std;
    // Residual-branch output projections are scaled down with depth.
    let resid_std = std / (2.0 * cfg.n_layers as f64).sqrt();
    let tok_emb = add("tok_emb".into(), v, d, Init::Normal(std));
    let pos_emb = add("pos_emb".into(), cfg.max_len, d, Init::Normal(std));
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for l in 0..cfg.n_layers {
        let p = |s: &str| format!("layer{l}.{s}");
        layers.push(LayerIds {
            ln1_g: add(p("ln1_g"), 1, d, Init::Ones),
            ln1_b: add(p("ln1_b"), 1, d, Init::Zeros),
            w_qkv: add(p("w_qkv"), d, 3 * d, Init::Normal(std)),
            b_qkv: add(p("b_qkv"), 1, 3 * d, Init::Zeros),
            w_o: add(p("w_o"), d, d, Init::Normal(resid_std)),
            b_o: add(p("b_o"), 1, d, Init::Zeros),
            ln2_g: add(p("ln2_g"), 1, d, Init::Ones),
            ln2_b: add(p("ln2_b"), 1, d, Init::Zeros),
            w_ff1: add(p("w_ff1"), d, ff, Init::Normal(std)),
            b_ff1: add(p("b_ff1"), 1, ff, Init::Zeros),
            w_ff2: add(p("w_ff2"), ff, d, Init::Normal(resid_std)),
            b_ff2: add(p("b_ff2"), 1, d, Init::Zeros),
        });
    }
    let lnf_g = add("lnf_g".into(), 1, d, Init::Ones);
    let lnf_b = add("lnf_b".into(), 1, d, Init::Zeros);
    let w_out = add("w_out".into(), d, v, Init::Normal(std));
    let b_out = add("b_out".into(), 1, v, Init::Zeros);
    (
        ParamIds {
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
            w_out,
            b_out,
        },
        specs,
        inits,
    )
}

/// All model weights, stored as one flat vector with a named tensor layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: Vec<TensorSpec>,
    pub(crate) ids: ParamIds,
    data: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "gram-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointTensor {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<CheckpointTensor>,
}

impl ModelParams {
    /// Randomly initialised parameters, deterministic in `seed`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (ids, tensors, inits) = layout(&config);
        let total = tensors.iter().map(TensorSpec::len).sum();
        let mut data = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (spec, init) in tensors.iter().zip(&inits) {
            let slice = &mut data[spec.offset..spec.offset + spec.len()];
            match *init {
                Init::Ones => slice.fill(1.0),
                Init::Zeros => slice.fill(0.0),
                Init::Normal(std) => {
                    let dist = Normal::new(0.0, std).expect("positive std");
                    for x in slice {
                        *x = dist.sample(&mut rng);
                    }
                }
            }
        }
        Ok(Self {
            config,
            tensors,
            ids,
            data,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.tensors
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub(crate) fn tensor(&self, id: ParamId) -> &[f64] {
        let s = &self.tensors[id];
        &self.data[s.offset..s.offset + s.len()]
    }

    pub(crate) fn spec(&self, id: ParamId) -> &TensorSpec {
        &self.tensors[id]
    }

    /// Name of the tensor holding flat coordinate `index`.
    pub fn coordinate_name(&self, index: usize) -> String {
        let spec = self
            .tensors
            .iter()
            .find(|s| index >= s.offset && index < s.offset + s.len())
            .expect("index in range");
        let local = index - spec.offset;
        format!("{}[{},{}]", spec.name, local / spec.cols, local % spec.cols)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn to_json_bytes(&self) -> Vec<u8> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|s| CheckpointTensor {
                    name: s.name.clone(),
                    shape: [s.rows, s.cols],
                    data: self.data[s.offset..s.offset + s.len()].to_vec(),
                })
                .collect(),
        };
        serde_json::to_vec(&ck).expect("checkpoint serializes")
    }

    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_slice(bytes)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(GramError::Data(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut params = Self::init(ck.config, 0)?;
        if ck.tensors.len() != params.tensors.len() {
            return Err(GramError::Shape(format!(
                "checkpoint has {} tensors, expected {}",
                ck.tensors.len(),
                params.tensors.len()
            )));
        }
        for (t, spec) in ck.tensors.iter().zip(&params.tensors) {
            if t.name != spec.name || t.shape != [spec.rows, spec.cols] || t.data.len() != spec.len() {
                return Err(GramError::Shape(format!(
                    "tensor {} {:?} does not match expected {} [{}, {}]",
                    t.name, t.shape, spec.name, spec.rows, spec.cols
                )));
            }
        }
        for (t, spec) in ck.tensors.into_iter().zip(params.tensors.clone()) {
            params.data[spec.offset..spec.offset + spec.len()].copy_from_slice(&t.data);
        }
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json_bytes(&std::fs::read(path)?)
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn fingerprint(&self) -> String {
        hex::encode(Sha256::digest(self.to_json_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 10,
            max_len: 8,
            d_model: 8,
            n_heads: 2,
            n_layers: 1,
            d_ff: 16,
            init_std: 0.1,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = ModelParams::init(cfg(), 3).unwrap();
        let b = ModelParams::init(cfg(), 3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, ModelParams::init(cfg(), 4).unwrap());
        assert!(a.is_finite());
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let a = ModelParams::init(cfg(), 3).unwrap();
        let b = ModelParams::from_json_bytes(&a.to_json_bytes()).unwrap();
        assert_eq!(a.data(), b.data());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn checkpoint_shape_mismatch_rejected() {
        let a = ModelParams::init(cfg(), 3).unwrap();
        let mut v: serde_json::Value = serde_json::from_slice(&a.to_json_bytes()).unwrap();
        v["tensors"][0]["shape"] = serde_json::json!([3, 3]);
        assert!(ModelParams::from_json_bytes(&serde_json::to_vec(&v).unwrap()).is_err());
    }

    #[test]
    fn rejects_bad_heads() {
        let mut c = cfg();
        c.n_heads = 3;
        assert!(ModelParams::init(c, 0).is_err());
    }

    #[test]
    fn layout_shapes() {
        let p = ModelParams::init(cfg(), 0).unwrap();
        let expected = 10 * 8 + 8 * 8 + (8 + 8 + 8 * 24 + 24 + 64 + 8 + 8 + 8 + 8 * 16 + 16 + 16 * 8 + 8) + 8 + 8 + 8 * 10 + 10;
        assert_eq!(p.len(), expected);
        assert_eq!(p.coordinate_name(0), "tok_emb[0,0]");
    }
}
