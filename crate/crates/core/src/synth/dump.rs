//! Binary split dump: `"SYNTH1"`, then `K, H, W, count` as little-endian
//! `u32`, then per sample `3*H*W` little-endian `f32` pixels followed by
//! `H*W` `u8` labels.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::synth::dataset::SynthSample;

pub const MAGIC: &[u8; 6] = b"SYNTH1";

/// A split read back from disk (geometry is not stored).
#[derive(Debug, Clone)]
pub struct DumpedSplit {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub images: Vec<Vec<f32>>,
    pub labels: Vec<Vec<u8>>,
}

pub fn encode_split(num_classes: usize, samples: &[SynthSample]) -> Result<Vec<u8>> {
    let (h, w) = match samples.first().map(|s| s.image.shape()) {
        Some(&[3, h, w]) => (h, w),
        Some(s) => {
            return Err(Error::Shape(format!(
                "expected [3, H, W] images, got {s:?}"
            )))
        }
        None => (0, 0),
    };
    let mut out = Vec::with_capacity(22 + samples.len() * h * w * 13);
    out.extend_from_slice(MAGIC);
    for v in [num_classes, h, w, samples.len()] {
        let v = u32::try_from(v).map_err(|_| Error::Dataset(format!("{v} does not fit in u32")))?;
        out.extend_from_slice(&v.to_le_bytes());
    }
    for s in samples {
        if s.image.shape() != [3, h, w] || s.labels.len() != h * w {
            return Err(Error::Shape("mixed sample sizes in split".into()));
        }
        for &v in s.image.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out.extend_from_slice(&s.labels);
    }
    Ok(out)
}

pub fn decode_split(bytes: &[u8]) -> Result<DumpedSplit> {
    let bad = |m: &str| Error::Dataset(format!("malformed split dump: {m}"));
    if bytes.len() < 22 || &bytes[..6] != MAGIC {
        return Err(bad("missing SYNTH1 header"));
    }
    let word =
        |i: usize| u32::from_le_bytes(bytes[6 + 4 * i..10 + 4 * i].try_into().unwrap()) as usize;
    let (k, h, w, count) = (word(0), word(1), word(2), word(3));
    let per_sample = 3 * h * w * 4 + h * w;
    if bytes.len() != 22 + count * per_sample {
        return Err(bad("length does not match header"));
    }
    let mut images = Vec::with_capacity(count);
    let mut labels = Vec::with_capacity(count);
    for chunk in bytes[22..].chunks_exact(per_sample.max(1)).take(count) {
        let (pix, lab) = chunk.split_at(3 * h * w * 4);
        images.push(
            pix.chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect(),
        );
        labels.push(lab.to_vec());
    }
    Ok(DumpedSplit {
        num_classes: k,
        height: h,
        width: w,
        images,
        labels,
    })
}

pub fn write_split(path: &Path, num_classes: usize, samples: &[SynthSample]) -> Result<()> {
    write_atomic(path, &encode_split(num_classes, samples)?)
}

pub fn read_split(path: &Path) -> Result<DumpedSplit> {
    decode_split(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

impl DumpedSplit {
    /// Image `i` widened back to an `f64` tensor.
    pub fn image_tensor(&self, i: usize) -> Result<Tensor> {
        Tensor::new(
            self.images[i].iter().map(|&v| v as f64).collect(),
            &[3, self.height, self.width],
        )
    }
}
