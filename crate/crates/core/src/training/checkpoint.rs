//! Binary checkpoint file.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"GAITCKPT"            magic
//! u32                    format version
//! u64 + bytes            header JSON (configs, shapes, landmark subset)
//! f64 * n                encoder parameters in EncoderParams::slices() order
//!                        head weights, head bias
//!                        mean shape, row-major k x d
//!                        normalization means, then stds
//!                        per-epoch loss history
//! u32                    CRC-32 of every preceding byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NormalizationStats, SiameseModelParams, TrainConfig, TrainError};
use crate::model::LandmarkSubset;
use crate::network::{EncoderConfig, EncoderParams, HeadParams, SiameseModel};
use crate::pipeline::Preprocessing;
use crate::procrustes::{MeanShape, ShapeConfig};
use crate::segmentation::SegmentationConfig;

const MAGIC: &[u8; 8] = b"GAITCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: SiameseModelParams,
    pub config: TrainConfig,
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    train: TrainConfig,
    encoder: EncoderConfig,
    margin: f64,
    subset: LandmarkSubset,
    dims: usize,
    allow_scale: bool,
    segmentation: SegmentationConfig,
    mean_shape_k: usize,
    feature_dim: usize,
    epochs_recorded: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let model = &self.params.model;
        let pre = &self.params.preprocessing;
        let header = Header {
            train: self.config.clone(),
            encoder: model.encoder.config,
            margin: model.margin,
            subset: pre.subset.clone(),
            dims: pre.dims,
            allow_scale: pre.allow_scale,
            segmentation: pre.segmentation.clone(),
            mean_shape_k: pre.mean_shape.k(),
            feature_dim: pre.norm.feature_dim(),
            epochs_recorded: self.loss_history.len(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut put = |vals: &[f64]| {
            for v in vals {
                out.extend_from_slice(&v.to_le_bytes());
            }
        };
        for s in model.encoder.slices() {
            put(s);
        }
        put(&model.head.weight);
        put(&[model.head.bias]);
        for row in pre.mean_shape.shape().to_rows() {
            put(&row);
        }
        put(&pre.norm.mean);
        put(&pre.norm.std);
        put(&self.loss_history);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let corrupt = |m: &str| TrainError::Corrupt(m.to_string());
        if bytes.len() < MAGIC.len() + 4 + 4 {
            return Err(corrupt("file too short"));
        }
        if &bytes[..8] != MAGIC {
            return Err(corrupt("bad magic bytes"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(TrainError::Version {
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let json_len = r.u64()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(json_len)?).map_err(|e| corrupt(&format!("header: {e}")))?;

        let mut encoder = EncoderParams::zeros(header.encoder);
        for s in encoder.slices_mut() {
            r.fill(s)?;
        }
        let mut head = HeadParams::zeros(header.encoder.embedding_dim());
        r.fill(&mut head.weight)?;
        head.bias = r.f64()?;
        let rows = (0..header.mean_shape_k)
            .map(|_| {
                let mut row = vec![0.0; header.dims];
                r.fill(&mut row).map(|_| row)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mean_shape = ShapeConfig::from_rows(&rows)
            .and_then(MeanShape::try_from)
            .map_err(|e| corrupt(&format!("mean shape: {e}")))?;
        let mut norm = NormalizationStats {
            mean: vec![0.0; header.feature_dim],
            std: vec![0.0; header.feature_dim],
        };
        r.fill(&mut norm.mean)?;
        r.fill(&mut norm.std)?;
        let mut loss_history = vec![0.0; header.epochs_recorded];
        r.fill(&mut loss_history)?;
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes"));
        }

        let model = SiameseModel {
            encoder,
            head,
            margin: header.margin,
        };
        model.validate().map_err(|e| corrupt(&e.to_string()))?;
        if header.subset.feature_dim() != header.feature_dim || header.subset.len() != header.mean_shape_k {
            return Err(corrupt("subset does not match stored shapes"));
        }
        if header.encoder.input_dim != header.feature_dim {
            return Err(corrupt("encoder input width does not match features"));
        }
        if norm.std.iter().any(|s| !(*s > 0.0)) {
            return Err(corrupt("non-positive std"));
        }
        Ok(Checkpoint {
            params: SiameseModelParams {
                model,
                preprocessing: Preprocessing {
                    subset: header.subset,
                    dims: header.dims,
                    allow_scale: header.allow_scale,
                    segmentation: header.segmentation,
                    mean_shape,
                    norm,
                },
            },
            config: header.train,
            loss_history,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| TrainError::Corrupt("unexpected end of data".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, TrainError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fill(&mut self, dst: &mut [f64]) -> Result<(), TrainError> {
        for v in dst {
            *v = self.f64()?;
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    std::fs::write(path, ckpt.to_bytes()).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = std::fs::read(path).map_err(|source| TrainError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}
