//! File formats: JSON-lines labels, detection JSON and tensor JSON.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::{Detection, HeadConfig, PredictionTensor};
use crate::synth::LabeledScene;

/// Reads one [`LabeledScene`] per non-blank line.
pub fn read_labels(r: impl BufRead) -> Result<Vec<LabeledScene>> {
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let scene: LabeledScene = serde_json::from_str(&line)
            .map_err(|e| Error::Parse(format!("labels line {}: {e}", n + 1)))?;
        for o in &scene.objects {
            if !o.bbox.is_canonical() {
                return Err(Error::Parse(format!(
                    "labels line {}: box {:?} is not canonical",
                    n + 1,
                    o.bbox
                )));
            }
        }
        out.push(scene);
    }
    Ok(out)
}

pub fn write_labels(mut w: impl Write, scenes: &[LabeledScene]) -> Result<()> {
    for s in scenes {
        serde_json::to_writer(&mut w, s)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Detections for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDetections {
    pub image_id: u64,
    pub detections: Vec<Detection>,
}

pub fn read_detections(s: &str) -> Result<Vec<ImageDetections>> {
    let v: Vec<ImageDetections> = serde_json::from_str(s)?;
    for im in &v {
        for d in &im.detections {
            if !d.bbox.is_canonical() || !(0.0..=1.0).contains(&d.confidence) {
                return Err(Error::Parse(format!(
                    "image {}: invalid detection {d:?}",
                    im.image_id
                )));
            }
        }
    }
    Ok(v)
}

pub fn write_detections(w: impl Write, dets: &[ImageDetections]) -> Result<()> {
    serde_json::to_writer_pretty(w, dets)?;
    Ok(())
}

pub const TENSOR_FORMAT: &str = "rotdet-tensor/1";

/// Raw head output for every scale. Channels per cell are
/// `[tx, ty, tw, th, objectness, class logits.., angle logits..]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorFile {
    pub format: String,
    pub n_classes: usize,
    pub angle_granularity: u32,
    pub tensors: Vec<PredictionTensor>,
}

impl TensorFile {
    pub fn new(cfg: &HeadConfig, tensors: Vec<PredictionTensor>) -> Self {
        Self {
            format: TENSOR_FORMAT.to_string(),
            n_classes: cfg.n_classes,
            angle_granularity: cfg.angle_granularity,
            tensors,
        }
    }

    /// Parses and checks the header and every shape against `cfg`.
    pub fn parse(s: &str, cfg: &HeadConfig) -> Result<Self> {
        let f: TensorFile = serde_json::from_str(s)?;
        if f.format != TENSOR_FORMAT {
            return Err(Error::Parse(format!("unknown tensor format {:?}", f.format)));
        }
        if f.n_classes != cfg.n_classes || f.angle_granularity != cfg.angle_granularity {
            return Err(Error::Shape(format!(
                "tensor file has {} classes / {} angle bins, config has {} / {}",
                f.n_classes, f.angle_granularity, cfg.n_classes, cfg.angle_granularity
            )));
        }
        let mut checked = Vec::with_capacity(f.tensors.len());
        for t in f.tensors {
            let t = PredictionTensor::from_vec(t.scale, t.shape, t.data)?;
            t.check_shape(cfg)?;
            checked.push(t);
        }
        Ok(Self { tensors: checked, ..f })
    }
}
