//! Model container and checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "TIOCKPT1"
//! version u32      1
//! d       u32      embedding dimensionality
//! d_hidden u32     FFN hidden width
//! c       u32      class count
//! flags   u32      bit0: projection present, bit1: nearest-keyword policy
//! blocks           named parameter blocks, fixed order
//! ```
//!
//! Each block is `name_len: u32`, `name: UTF-8`, `count: u64`, then
//! `count` little-endian f64 values. Block order:
//! `gat.sigma_kernel`, `temporal.sigma_time`, `gat.projection` (only when
//! flags bit0 is set), `temporal.ffn.w1`, `temporal.ffn.b1`,
//! `temporal.ffn.w2`, `temporal.ffn.b2`, `temporal.ln1.gain`,
//! `temporal.ln1.bias`, `temporal.ln2.gain`, `temporal.ln2.bias`,
//! `classifier.weight`, `classifier.bias`. Matrices are row-major.

use std::fs;
use std::io::Read;
use std::path::Path;

use ndarray::{Array1, Array2};
use thiserror::Error;

use crate::gat::GatLayer;
use crate::graph::RelationPolicy;
use crate::heads::Classifier;
use crate::scalar::{real, Real};
use crate::temporal::TemporalEncoder;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TIOCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad checkpoint: {0}")]
    Format(String),
}

/// Construction parameters for a fresh model.
#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub dim: usize,
    /// FFN hidden width; defaults to 2 * dim.
    pub d_hidden: Option<usize>,
    pub num_classes: usize,
    pub sigma_kernel: f64,
    pub sigma_time: f64,
    /// Enable the learnable distance projection (training mode).
    pub use_projection: bool,
    pub relation_policy: RelationPolicy,
}

impl ModelConfig {
    pub fn new(dim: usize, num_classes: usize) -> Self {
        ModelConfig {
            dim,
            d_hidden: None,
            num_classes,
            sigma_kernel: 0.25,
            sigma_time: 3.0,
            use_projection: true,
            relation_policy: RelationPolicy::All,
        }
    }
}

/// The trainable system: distance-kernel attention layer, temporal
/// encoder, and classifier head.
#[derive(Debug, Clone)]
pub struct Model<T> {
    pub gat: GatLayer<T>,
    pub temporal: TemporalEncoder<T>,
    pub classifier: Classifier<T>,
    pub relation_policy: RelationPolicy,
}

impl<T: Real> Model<T> {
    /// Fresh model: identity projection (when enabled), seeded FFN, unit
    /// layer norms, zero classifier.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let d_hidden = cfg.d_hidden.unwrap_or(2 * cfg.dim);
        let gat = if cfg.use_projection {
            GatLayer::trainable(real(cfg.sigma_kernel), cfg.dim)
        } else {
            GatLayer::new(real(cfg.sigma_kernel))
        };
        Model {
            gat,
            temporal: TemporalEncoder::seeded(cfg.dim, d_hidden, real(cfg.sigma_time), seed),
            classifier: Classifier::zeros(cfg.num_classes, cfg.dim),
            relation_policy: cfg.relation_policy,
        }
    }

    pub fn dim(&self) -> usize {
        self.temporal.dim()
    }

    pub fn d_hidden(&self) -> usize {
        self.temporal.d_hidden()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// Trainable parameter blocks in checkpoint order.
    pub fn param_blocks(&self) -> Vec<(&'static str, &[T])> {
        let mut blocks: Vec<(&'static str, &[T])> = Vec::new();
        if let Some(p) = &self.gat.projection {
            blocks.push(("gat.projection", p.as_slice().expect("standard layout")));
        }
        blocks.push(("temporal.ffn.w1", self.temporal.w1.as_slice().unwrap()));
        blocks.push(("temporal.ffn.b1", self.temporal.b1.as_slice().unwrap()));
        blocks.push(("temporal.ffn.w2", self.temporal.w2.as_slice().unwrap()));
        blocks.push(("temporal.ffn.b2", self.temporal.b2.as_slice().unwrap()));
        blocks.push(("temporal.ln1.gain", self.temporal.ln1.gain.as_slice().unwrap()));
        blocks.push(("temporal.ln1.bias", self.temporal.ln1.bias.as_slice().unwrap()));
        blocks.push(("temporal.ln2.gain", self.temporal.ln2.gain.as_slice().unwrap()));
        blocks.push(("temporal.ln2.bias", self.temporal.ln2.bias.as_slice().unwrap()));
        blocks.push(("classifier.weight", self.classifier.weights.as_slice().unwrap()));
        blocks.push(("classifier.bias", self.classifier.bias.as_slice().unwrap()));
        blocks
    }

    /// Mutable view of the trainable blocks, same order as `param_blocks`.
    pub fn param_blocks_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        let mut blocks: Vec<(&'static str, &mut [T])> = Vec::new();
        if let Some(p) = &mut self.gat.projection {
            blocks.push(("gat.projection", p.as_slice_mut().expect("standard layout")));
        }
        blocks.push(("temporal.ffn.w1", self.temporal.w1.as_slice_mut().unwrap()));
        blocks.push(("temporal.ffn.b1", self.temporal.b1.as_slice_mut().unwrap()));
        blocks.push(("temporal.ffn.w2", self.temporal.w2.as_slice_mut().unwrap()));
        blocks.push(("temporal.ffn.b2", self.temporal.b2.as_slice_mut().unwrap()));
        blocks.push(("temporal.ln1.gain", self.temporal.ln1.gain.as_slice_mut().unwrap()));
        blocks.push(("temporal.ln1.bias", self.temporal.ln1.bias.as_slice_mut().unwrap()));
        blocks.push(("temporal.ln2.gain", self.temporal.ln2.gain.as_slice_mut().unwrap()));
        blocks.push(("temporal.ln2.bias", self.temporal.ln2.bias.as_slice_mut().unwrap()));
        blocks.push(("classifier.weight", self.classifier.weights.as_slice_mut().unwrap()));
        blocks.push(("classifier.bias", self.classifier.bias.as_slice_mut().unwrap()));
        blocks
    }
}

/// Gradient (or optimizer-state) holder shaped like the trainable blocks.
#[derive(Debug, Clone)]
pub struct ModelGrads<T> {
    pub projection: Option<Array2<T>>,
    pub w1: Array2<T>,
    pub b1: Array1<T>,
    pub w2: Array2<T>,
    pub b2: Array1<T>,
    pub ln1_gain: Array1<T>,
    pub ln1_bias: Array1<T>,
    pub ln2_gain: Array1<T>,
    pub ln2_bias: Array1<T>,
    pub clf_w: Array2<T>,
    pub clf_b: Array1<T>,
}

impl<T: Real> ModelGrads<T> {
    pub fn zeros_like(model: &Model<T>) -> Self {
        let d = model.dim();
        let h = model.d_hidden();
        let c = model.num_classes();
        ModelGrads {
            projection: model.gat.projection.as_ref().map(|_| Array2::zeros((d, d))),
            w1: Array2::zeros((d, h)),
            b1: Array1::zeros(h),
            w2: Array2::zeros((h, d)),
            b2: Array1::zeros(d),
            ln1_gain: Array1::zeros(d),
            ln1_bias: Array1::zeros(d),
            ln2_gain: Array1::zeros(d),
            ln2_bias: Array1::zeros(d),
            clf_w: Array2::zeros((c, d)),
            clf_b: Array1::zeros(c),
        }
    }

    pub fn blocks(&self) -> Vec<(&'static str, &[T])> {
        let mut blocks: Vec<(&'static str, &[T])> = Vec::new();
        if let Some(p) = &self.projection {
            blocks.push(("gat.projection", p.as_slice().unwrap()));
        }
        blocks.push(("temporal.ffn.w1", self.w1.as_slice().unwrap()));
        blocks.push(("temporal.ffn.b1", self.b1.as_slice().unwrap()));
        blocks.push(("temporal.ffn.w2", self.w2.as_slice().unwrap()));
        blocks.push(("temporal.ffn.b2", self.b2.as_slice().unwrap()));
        blocks.push(("temporal.ln1.gain", self.ln1_gain.as_slice().unwrap()));
        blocks.push(("temporal.ln1.bias", self.ln1_bias.as_slice().unwrap()));
        blocks.push(("temporal.ln2.gain", self.ln2_gain.as_slice().unwrap()));
        blocks.push(("temporal.ln2.bias", self.ln2_bias.as_slice().unwrap()));
        blocks.push(("classifier.weight", self.clf_w.as_slice().unwrap()));
        blocks.push(("classifier.bias", self.clf_b.as_slice().unwrap()));
        blocks
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [T])> {
        let mut blocks: Vec<(&'static str, &mut [T])> = Vec::new();
        if let Some(p) = &mut self.projection {
            blocks.push(("gat.projection", p.as_slice_mut().unwrap()));
        }
        blocks.push(("temporal.ffn.w1", self.w1.as_slice_mut().unwrap()));
        blocks.push(("temporal.ffn.b1", self.b1.as_slice_mut().unwrap()));
        blocks.push(("temporal.ffn.w2", self.w2.as_slice_mut().unwrap()));
        blocks.push(("temporal.ffn.b2", self.b2.as_slice_mut().unwrap()));
        blocks.push(("temporal.ln1.gain", self.ln1_gain.as_slice_mut().unwrap()));
        blocks.push(("temporal.ln1.bias", self.ln1_bias.as_slice_mut().unwrap()));
        blocks.push(("temporal.ln2.gain", self.ln2_gain.as_slice_mut().unwrap()));
        blocks.push(("temporal.ln2.bias", self.ln2_bias.as_slice_mut().unwrap()));
        blocks.push(("classifier.weight", self.clf_w.as_slice_mut().unwrap()));
        blocks.push(("classifier.bias", self.clf_b.as_slice_mut().unwrap()));
        blocks
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }
}

// --- checkpoint io (f64 on disk) ---

impl Model<f64> {
    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        out.extend_from_slice(&(self.d_hidden() as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_classes() as u32).to_le_bytes());
        let mut flags = 0u32;
        if self.gat.projection.is_some() {
            flags |= 1;
        }
        if self.relation_policy == RelationPolicy::NearestKeyword {
            flags |= 2;
        }
        out.extend_from_slice(&flags.to_le_bytes());

        let mut write_block = |name: &str, values: &[f64]| {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        write_block("gat.sigma_kernel", &[self.gat.sigma_kernel]);
        write_block("temporal.sigma_time", &[self.temporal.sigma_time]);
        for (name, values) in self.param_blocks() {
            write_block(name, values);
        }
        fs::write(path, out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = 0usize;
        let take = |cursor: &mut usize, n: usize| -> Result<&[u8], CheckpointError> {
            if *cursor + n > bytes.len() {
                return Err(CheckpointError::Format("truncated checkpoint".into()));
            }
            let s = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(s)
        };
        if take(&mut cursor, 8)? != CHECKPOINT_MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let read_u32 = |cursor: &mut usize| -> Result<u32, CheckpointError> {
            let b = take(cursor, 4)?;
            Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        };
        let version = read_u32(&mut cursor)?;
        if version != CHECKPOINT_VERSION {
            return Err(CheckpointError::Format(format!(
                "unsupported version {version}"
            )));
        }
        let d = read_u32(&mut cursor)? as usize;
        let d_hidden = read_u32(&mut cursor)? as usize;
        let c = read_u32(&mut cursor)? as usize;
        let flags = read_u32(&mut cursor)?;

        let read_block = |cursor: &mut usize,
                              expect_name: &str,
                              expect_len: usize|
         -> Result<Vec<f64>, CheckpointError> {
            let name_len = read_u32(cursor)? as usize;
            let name = String::from_utf8(take(cursor, name_len)?.to_vec())
                .map_err(|_| CheckpointError::Format("block name is not UTF-8".into()))?;
            if name != expect_name {
                return Err(CheckpointError::Format(format!(
                    "expected block {expect_name:?}, found {name:?}"
                )));
            }
            let b = take(cursor, 8)?;
            let count = u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]) as usize;
            if count != expect_len {
                return Err(CheckpointError::Format(format!(
                    "block {expect_name:?} holds {count} values, expected {expect_len}"
                )));
            }
            let raw = take(cursor, count * 8)?;
            Ok(raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect())
        };

        let sigma_kernel = read_block(&mut cursor, "gat.sigma_kernel", 1)?[0];
        let sigma_time = read_block(&mut cursor, "temporal.sigma_time", 1)?[0];
        let projection = if flags & 1 != 0 {
            let values = read_block(&mut cursor, "gat.projection", d * d)?;
            Some(Array2::from_shape_vec((d, d), values).expect("shape checked"))
        } else {
            None
        };
        let w1 = read_block(&mut cursor, "temporal.ffn.w1", d * d_hidden)?;
        let b1 = read_block(&mut cursor, "temporal.ffn.b1", d_hidden)?;
        let w2 = read_block(&mut cursor, "temporal.ffn.w2", d_hidden * d)?;
        let b2 = read_block(&mut cursor, "temporal.ffn.b2", d)?;
        let ln1_gain = read_block(&mut cursor, "temporal.ln1.gain", d)?;
        let ln1_bias = read_block(&mut cursor, "temporal.ln1.bias", d)?;
        let ln2_gain = read_block(&mut cursor, "temporal.ln2.gain", d)?;
        let ln2_bias = read_block(&mut cursor, "temporal.ln2.bias", d)?;
        let clf_w = read_block(&mut cursor, "classifier.weight", c * d)?;
        let clf_b = read_block(&mut cursor, "classifier.bias", c)?;
        if cursor != bytes.len() {
            return Err(CheckpointError::Format("trailing bytes".into()));
        }

        let mut gat = GatLayer::new(sigma_kernel);
        gat.projection = projection;
        let mut temporal = TemporalEncoder::seeded(d, d_hidden, sigma_time, 0);
        temporal.w1 = Array2::from_shape_vec((d, d_hidden), w1).unwrap();
        temporal.b1 = Array1::from_vec(b1);
        temporal.w2 = Array2::from_shape_vec((d_hidden, d), w2).unwrap();
        temporal.b2 = Array1::from_vec(b2);
        temporal.ln1.gain = Array1::from_vec(ln1_gain);
        temporal.ln1.bias = Array1::from_vec(ln1_bias);
        temporal.ln2.gain = Array1::from_vec(ln2_gain);
        temporal.ln2.bias = Array1::from_vec(ln2_bias);
        let classifier = Classifier {
            weights: Array2::from_shape_vec((c, d), clf_w).unwrap(),
            bias: Array1::from_vec(clf_b),
        };
        Ok(Model {
            gat,
            temporal,
            classifier,
            relation_policy: if flags & 2 != 0 {
                RelationPolicy::NearestKeyword
            } else {
                RelationPolicy::All
            },
        })
    }
}
