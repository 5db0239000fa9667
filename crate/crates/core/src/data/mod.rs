//! Clips, synthetic corpora, degradations, selection filters and file formats.

mod degrade;
mod filter;
mod io;
mod synth;

pub use degrade::{degrade, dct8_quant_table, DegradationSpec};
pub use filter::{
    filter_interp_triplet, filter_septuplet, flow_histogram, shot_detect, FilterDecision, FilterReason, FlowHistogram,
    HISTOGRAM_BIN, KEEP_RANGE, LINEARITY_LIMIT, MIN_MOTION_FRACTION, MOTION_THRESHOLD, RESIDUAL_LIMIT,
};
pub use io::{
    hash_dir, load_png, read_clip, read_corpus, read_flo, read_flo_file, save_png, write_clip, write_corpus, write_flo,
    write_flo_file, FLO_MAGIC,
};
pub use synth::{
    gen_boxnoise_toy, gen_flow_clips, gen_texture_clips, gen_triangle_toy, Background, BoxNoiseParams, FlowClipParams, NoiseTexture,
    Texture, TextureClipParams, TriangleParams, SPRITE_COLOR,
};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masknet::OcclusionMask;
use crate::tensor::Tensor;
use crate::warp::FlowField;

/// Provenance stored alongside each clip.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipMeta {
    pub generator: String,
    pub seed: u64,
    pub index: usize,
    /// Per-frame displacement of the moving content, in pixels.
    pub velocity: Option<(f64, f64)>,
    pub background_velocity: Option<(f64, f64)>,
    pub degradation: Option<DegradationSpec>,
}

/// Ordered frames with a reference index and optional ground truth.
#[derive(Debug, Clone)]
pub struct VideoClip {
    pub id: String,
    pub frames: Vec<Tensor<f32>>,
    pub reference: usize,
    /// Flow from the reference frame to each frame; zero at the reference.
    pub flows: Option<Vec<FlowField>>,
    /// Validity of each frame once warped onto the reference.
    pub masks: Option<Vec<OcclusionMask>>,
    /// Undegraded frames, possibly at a higher resolution.
    pub clean: Option<Vec<Tensor<f32>>>,
    pub meta: ClipMeta,
}

impl VideoClip {
    pub fn new(id: impl Into<String>, frames: Vec<Tensor<f32>>, meta: ClipMeta) -> Result<Self> {
        let clip = VideoClip {
            id: id.into(),
            reference: frames.len() / 2,
            frames,
            flows: None,
            masks: None,
            clean: None,
            meta,
        };
        clip.validate()?;
        Ok(clip)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.frames.len();
        if n == 0 || n % 2 == 0 {
            return Err(Error::Data(format!("clip {} has {n} frames; need an odd count", self.id)));
        }
        if self.reference != n / 2 {
            return Err(Error::Data(format!("clip {} reference {} is not the middle frame", self.id, self.reference)));
        }
        let shape = self.frames[0].shape().to_vec();
        for (i, f) in self.frames.iter().enumerate() {
            f.chw()?;
            if f.shape() != shape.as_slice() {
                return Err(Error::Data(format!("clip {} frame {i} has shape {:?}, expected {shape:?}", self.id, f.shape())));
            }
            if f.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Data(format!("clip {} frame {i} leaves [0, 1]", self.id)));
            }
        }
        if let Some(c) = &self.clean {
            if c.len() != n {
                return Err(Error::Data(format!("clip {} has {} clean frames for {n} frames", self.id, c.len())));
            }
        }
        if let Some(fl) = &self.flows {
            if fl.len() != n {
                return Err(Error::Data(format!("clip {} has {} flows for {n} frames", self.id, fl.len())));
            }
        }
        if let Some(m) = &self.masks {
            if m.len() != n {
                return Err(Error::Data(format!("clip {} has {} masks for {n} frames", self.id, m.len())));
            }
        }
        Ok(())
    }

    /// Frame the task should recover: the clean reference if present,
    /// otherwise the reference itself.
    pub fn target(&self) -> &Tensor<f32> {
        match &self.clean {
            Some(c) => &c[self.reference],
            None => &self.frames[self.reference],
        }
    }

    /// Ground truth frames at the flows' resolution.
    pub fn ground_truth_frames(&self) -> &[Tensor<f32>] {
        self.clean.as_deref().unwrap_or(&self.frames)
    }

    pub fn flow(&self, frame: usize) -> Option<&FlowField> {
        self.flows.as_ref().map(|f| &f[frame])
    }
}

/// Independent random stream for item `index` of a corpus seeded with `seed`.
pub fn item_rng(seed: u64, index: usize, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    r.set_stream(index as u64);
    r
}
