//! Videos, clips, the synthetic state-change task, clip sampling, and the
//! on-disk dataset format.
//!
//! Pixel layout everywhere is `H × W × C × F` row-major, i.e. the frame index
//! varies fastest.

mod io;
mod sampling;
mod synthetic;

use std::fmt;
use std::str::FromStr;

pub use io::{read_dataset, write_dataset, DATASET_MAGIC, FORMAT_DOC};
pub use sampling::{resize, resize_video, sample_inference_clips, sample_training_clip, CropMode};
pub use synthetic::{generate, SyntheticSpec, Task, CLASS_NAMES};

pub(crate) use sampling::center_clip;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Model input: `H × W × 3 × F` pixels in `[0, 1]` and a class label.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    pub pixels: Tensor,
    pub label: usize,
    /// Id of the video this clip was cut from.
    pub source: usize,
}

impl VideoClip {
    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn frames(&self) -> usize {
        self.pixels.shape()[3]
    }
}

/// A stored video, kept in single precision like the dataset file.
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub id: usize,
    pub label: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub frames: usize,
    pub pixels: Vec<f32>,
}

impl Video {
    pub fn new(
        id: usize,
        label: usize,
        [height, width, channels, frames]: [usize; 4],
        pixels: Vec<f32>,
    ) -> Result<Self> {
        if pixels.len() != height * width * channels * frames {
            return Err(Error::Data(format!(
                "video {id}: {} values for {height}x{width}x{channels}x{frames}",
                pixels.len()
            )));
        }
        Ok(Self {
            id,
            label,
            height,
            width,
            channels,
            frames,
            pixels,
        })
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize, t: usize) -> f32 {
        self.pixels[((y * self.width + x) * self.channels + c) * self.frames + t]
    }

    /// Sum of all pixel values of frame `t`.
    pub fn frame_sum(&self, t: usize) -> f64 {
        self.pixels
            .iter()
            .skip(t)
            .step_by(self.frames)
            .map(|&v| v as f64)
            .sum()
    }

    /// The whole video as a clip, without cropping.
    pub fn to_clip(&self) -> VideoClip {
        let pixels = Tensor::new(
            [self.height, self.width, self.channels, self.frames],
            self.pixels.iter().map(|&v| v as f64).collect(),
        )
        .expect("video dimensions checked on construction");
        VideoClip {
            pixels,
            label: self.label,
            source: self.id,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Data(format!("unknown split {other:?}"))),
        }
    }
}

/// One row of the dataset item table.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: usize,
    /// Byte offset of the item's payload, relative to the start of the payload section.
    pub offset: u64,
    pub label: usize,
    pub split: Split,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DatasetManifest {
    pub class_names: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        for pair in self.entries.windows(2) {
            if pair[1].offset <= pair[0].offset {
                return Err(Error::Data(format!(
                    "item offsets not strictly increasing at item {}",
                    pair[1].id
                )));
            }
        }
        let mut seen = std::collections::HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id) {
                return Err(Error::Data(format!("item {} listed twice", e.id)));
            }
            if e.label >= self.class_names.len() {
                return Err(Error::Data(format!(
                    "item {} has label {} but only {} classes",
                    e.id,
                    e.label,
                    self.class_names.len()
                )));
            }
        }
        Ok(())
    }
}

/// Videos plus their manifest, in matching order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub videos: Vec<Video>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.manifest.class_names.len()
    }

    /// Videos of one split, in dataset order.
    pub fn split(&self, split: Split) -> Vec<&Video> {
        self.manifest
            .entries
            .iter()
            .zip(&self.videos)
            .filter(|(e, _)| e.split == split)
            .map(|(_, v)| v)
            .collect()
    }
}
