use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// One of the four augmentation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AugmentKind {
    ContrastLow,
    ContrastHigh,
    FlipHorizontal,
    FlipVertical,
}

impl AugmentKind {
    pub const ALL: [AugmentKind; 4] = [
        AugmentKind::ContrastLow,
        AugmentKind::ContrastHigh,
        AugmentKind::FlipHorizontal,
        AugmentKind::FlipVertical,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            AugmentKind::ContrastLow => "contrast0.9",
            AugmentKind::ContrastHigh => "contrast1.1",
            AugmentKind::FlipHorizontal => "hflip",
            AugmentKind::FlipVertical => "vflip",
        }
    }
}

/// Where a sample came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Provenance {
    Original,
    Augmented(AugmentKind),
}

impl Provenance {
    pub fn is_original(&self) -> bool {
        matches!(self, Provenance::Original)
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Original => f.write_str("original"),
            Provenance::Augmented(k) => f.write_str(k.as_str()),
        }
    }
}

impl FromStr for Provenance {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "original" {
            return Ok(Provenance::Original);
        }
        AugmentKind::ALL
            .iter()
            .find(|k| k.as_str() == s)
            .map(|&k| Provenance::Augmented(k))
            .ok_or_else(|| Error::Dataset(format!("unknown provenance '{s}'")))
    }
}

/// Files a sample was read from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSource {
    pub image: PathBuf,
    pub masks: Vec<PathBuf>,
}

/// An image/mask pair.
///
/// `image` is `1×3×H×W` with values in `[0, 1]`; `mask` is `1×1×H×W` with
/// values exactly 0 or 1.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub mask: Tensor<f32>,
    pub provenance: Provenance,
    pub source: Option<SampleSource>,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor<f32>, mask: Tensor<f32>) -> Result<Self> {
        let (is, ms) = (image.shape(), mask.shape());
        if is.n != 1 || is.c != 3 || ms != Shape::new(1, 1, is.h, is.w) {
            return Err(Error::Shape(format!(
                "sample image {is} and mask {ms} are incompatible"
            )));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Dataset("mask is not binary".into()));
        }
        Ok(Sample {
            id: id.into(),
            image,
            mask,
            provenance: Provenance::Original,
            source: None,
        })
    }

    pub fn height(&self) -> usize {
        self.image.shape().h
    }

    pub fn width(&self) -> usize {
        self.image.shape().w
    }
}
