//! Reading datasets from disk and writing PNGs.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

use super::manifest::DatasetManifest;
use super::resize::resize_sample;
use super::sample::{Sample, SampleSource};

/// Pixel values strictly above this (8-bit scale) are foreground.
pub const MASK_THRESHOLD: u8 = 127;

/// Directory layouts understood by [`load_dataset`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `name.png` next to `name_mask.png`, `name_mask_1.png`, … anywhere below the root.
    Busi,
    /// `image/` + `mask/` (or `images/`, `p_image/` …) with equal stems.
    Ddti,
    /// `CXR_png/` with `ManualMask/leftMask/` and `ManualMask/rightMask/`.
    Mc,
    /// `images/` + `masks/` with equal stems.
    Generic,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Busi => "busi",
            Layout::Ddti => "ddti",
            Layout::Mc => "mc",
            Layout::Generic => "generic",
        })
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "busi" => Ok(Layout::Busi),
            "ddti" => Ok(Layout::Ddti),
            "mc" => Ok(Layout::Mc),
            "generic" => Ok(Layout::Generic),
            _ => Err(Error::Usage(format!(
                "unknown layout '{s}' (expected busi, ddti, mc or generic)"
            ))),
        }
    }
}

/// An image file and the mask files that belong to it.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairSpec {
    pub id: String,
    pub image: PathBuf,
    pub masks: Vec<PathBuf>,
}

fn is_png(p: &Path) -> bool {
    p.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_png(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn walk_pngs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            walk_pngs(&path, out)?;
        } else if is_png(&path) {
            out.push(path);
        }
    }
    Ok(())
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Splits `name_mask` / `name_mask_3` into `name`.
fn busi_mask_base(stem: &str) -> Option<&str> {
    if let Some(base) = stem.strip_suffix("_mask") {
        return Some(base);
    }
    let (head, tail) = stem.rsplit_once('_')?;
    if tail.is_empty() || !tail.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    head.strip_suffix("_mask")
}

fn busi_pairs(root: &Path) -> Result<(Vec<PairSpec>, Vec<String>)> {
    let mut files = Vec::new();
    walk_pngs(root, &mut files)?;
    let mut images: BTreeMap<PathBuf, PairSpec> = BTreeMap::new();
    let mut masks: BTreeMap<PathBuf, Vec<PathBuf>> = BTreeMap::new();
    for f in files {
        let s = stem(&f);
        match busi_mask_base(&s) {
            Some(base) => masks
                .entry(f.with_file_name(format!("{base}.png")))
                .or_default()
                .push(f),
            None => {
                images.insert(
                    f.clone(),
                    PairSpec {
                        id: relative_id(root, &f),
                        image: f,
                        masks: Vec::new(),
                    },
                );
            }
        }
    }
    let mut missing = Vec::new();
    let mut pairs = Vec::new();
    for (path, mut spec) in images {
        match masks.remove(&path) {
            Some(mut m) => {
                m.sort();
                spec.masks = m;
                pairs.push(spec);
            }
            None => missing.push(spec.image.display().to_string()),
        }
    }
    Ok((pairs, missing))
}

fn stem_pairs(image_dir: &Path, mask_dirs: &[PathBuf]) -> Result<(Vec<PairSpec>, Vec<String>)> {
    let mut by_stem: Vec<BTreeMap<String, PathBuf>> = Vec::new();
    for d in mask_dirs {
        let mut map = BTreeMap::new();
        for p in list_pngs(d)? {
            map.insert(stem(&p), p);
        }
        by_stem.push(map);
    }
    let mut pairs = Vec::new();
    let mut missing = Vec::new();
    for image in list_pngs(image_dir)? {
        let s = stem(&image);
        let found: Vec<Option<&PathBuf>> = by_stem.iter().map(|m| m.get(&s)).collect();
        if found.iter().all(Option::is_some) {
            pairs.push(PairSpec {
                id: s,
                masks: found.into_iter().flatten().cloned().collect(),
                image,
            });
        } else {
            missing.push(image.display().to_string());
        }
    }
    Ok((pairs, missing))
}

fn first_existing_dir(root: &Path, names: &[&str]) -> Option<PathBuf> {
    names.iter().map(|n| root.join(n)).find(|p| p.is_dir())
}

/// Finds image/mask pairs under `root` according to `layout`.
/// Returns the pairs and the images for which no mask was found.
pub fn discover(root: &Path, layout: Layout) -> Result<(Vec<PairSpec>, Vec<String>)> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let missing_dirs = |what: &str| {
        Error::Dataset(format!(
            "{} has no {what} directory for layout {layout}",
            root.display()
        ))
    };
    match layout {
        Layout::Busi => busi_pairs(root),
        Layout::Generic => {
            let images = first_existing_dir(root, &["images"]);
            let masks = first_existing_dir(root, &["masks"]);
            match (images, masks) {
                (Some(i), Some(m)) => stem_pairs(&i, &[m]),
                (None, _) if list_pngs(root)?.is_empty() => Ok((Vec::new(), Vec::new())),
                (None, _) => Err(missing_dirs("images/")),
                (_, None) => Err(missing_dirs("masks/")),
            }
        }
        Layout::Ddti => {
            let images = first_existing_dir(root, &["image", "images", "p_image"]);
            let masks = first_existing_dir(root, &["mask", "masks", "p_mask"]);
            match (images, masks) {
                (Some(i), Some(m)) => stem_pairs(&i, &[m]),
                (None, _) if list_pngs(root)?.is_empty() => Ok((Vec::new(), Vec::new())),
                (None, _) => Err(missing_dirs("image/")),
                (_, None) => Err(missing_dirs("mask/")),
            }
        }
        Layout::Mc => {
            let images = first_existing_dir(root, &["CXR_png", "images"]);
            let left = first_existing_dir(root, &["ManualMask/leftMask"]);
            let right = first_existing_dir(root, &["ManualMask/rightMask"]);
            match (images, left, right) {
                (Some(i), Some(l), Some(r)) => stem_pairs(&i, &[l, r]),
                (None, _, _) if list_pngs(root)?.is_empty() => Ok((Vec::new(), Vec::new())),
                (None, _, _) => Err(missing_dirs("CXR_png/")),
                _ => Err(missing_dirs("ManualMask/{leftMask,rightMask}/")),
            }
        }
    }
}

fn image_error(path: &Path, e: image::ImageError) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads a PNG as a `1×3×H×W` tensor scaled to `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn(Shape::new(1, 3, h, w), |_, c, y, x| {
        raw[(y * w + x) * 3 + c] as f32 / 255.0
    }))
}

/// Reads a PNG as a binary `1×1×H×W` mask (gray value above 127 is foreground).
pub fn read_mask(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path).map_err(|e| image_error(path, e))?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .as_raw()
        .iter()
        .map(|&v| if v > MASK_THRESHOLD { 1.0 } else { 0.0 })
        .collect();
    Tensor::from_vec(Shape::new(1, 1, h, w), data)
}

/// Reads every mask of a pair and merges them with pixelwise OR.
pub fn read_merged_mask(paths: &[PathBuf]) -> Result<Tensor<f32>> {
    let (first, rest) = paths
        .split_first()
        .ok_or_else(|| Error::Dataset("no mask files given".into()))?;
    let mut merged = read_mask(first)?;
    for p in rest {
        let m = read_mask(p)?;
        if m.shape() != merged.shape() {
            return Err(Error::Dataset(format!(
                "{} is {}, other masks of the same image are {}",
                p.display(),
                m.shape(),
                merged.shape()
            )));
        }
        for (a, b) in merged.data_mut().iter_mut().zip(m.data()) {
            *a = a.max(*b);
        }
    }
    Ok(merged)
}

/// Loads one pair, optionally resizing to `target` (height, width).
pub fn load_pair(pair: &PairSpec, target: Option<(usize, usize)>) -> Result<Sample> {
    let image = read_image(&pair.image)?;
    let mask = read_merged_mask(&pair.masks)?;
    let (is, ms) = (image.shape(), mask.shape());
    if (is.h, is.w) != (ms.h, ms.w) {
        return Err(Error::Dataset(format!(
            "{}: image is {}×{} but its mask is {}×{}",
            pair.image.display(),
            is.h,
            is.w,
            ms.h,
            ms.w
        )));
    }
    let mut sample = Sample::new(pair.id.clone(), image, mask)?;
    sample.source = Some(SampleSource {
        image: pair.image.clone(),
        masks: pair.masks.clone(),
    });
    match target {
        Some((h, w)) => resize_sample(&sample, h, w),
        None => Ok(sample),
    }
}

/// Loads every pair found under `root`. Samples are resized while loading
/// when `target` is given, so native-resolution copies are never all held
/// in memory at once.
pub fn load_dataset(root: &Path, layout: Layout, target: Option<(usize, usize)>) -> Result<DatasetManifest> {
    let (pairs, missing) = discover(root, layout)?;
    if !missing.is_empty() {
        return Err(Error::MissingMasks(missing));
    }
    if pairs.is_empty() {
        return Err(Error::Dataset(format!(
            "no images found under {} (layout {layout})",
            root.display()
        )));
    }
    let samples = pairs.iter().map(|p| load_pair(p, target)).collect::<Result<Vec<_>>>()?;
    Ok(DatasetManifest::from_samples(samples))
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

/// Writes item `n` of an `N×3×H×W` (or `N×1×H×W`) tensor as an RGB PNG.
pub fn write_rgb_png(path: &Path, x: &Tensor<f32>, n: usize) -> Result<()> {
    let s = x.shape();
    let img: RgbImage = ImageBuffer::from_fn(s.w as u32, s.h as u32, |c, r| {
        let px = |ch: usize| to_u8(x.at(n, ch.min(s.c - 1), r as usize, c as usize));
        Rgb([px(0), px(1), px(2)])
    });
    ensure_parent(path)?;
    img.save(path).map_err(|e| image_error(path, e))
}

/// Writes channel 0 of item `n` as an 8-bit grayscale PNG.
pub fn write_gray_png(path: &Path, x: &Tensor<f32>, n: usize) -> Result<()> {
    let s = x.shape();
    let img: GrayImage = ImageBuffer::from_fn(s.w as u32, s.h as u32, |c, r| {
        Luma([to_u8(x.at(n, 0, r as usize, c as usize))])
    });
    ensure_parent(path)?;
    img.save(path).map_err(|e| image_error(path, e))
}
