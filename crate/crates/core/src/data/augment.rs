//! The five-fold augmentation: original, contrast ×0.9, contrast ×1.1,
//! horizontal flip, vertical flip.

use crate::tensor::Tensor;

use super::sample::{AugmentKind, Provenance, Sample};

pub const CONTRAST_LOW: f32 = 0.9;
pub const CONTRAST_HIGH: f32 = 1.1;

/// `v' = clamp(μ + f·(v − μ), 0, 1)` with `μ` the mean over the whole image.
pub fn adjust_contrast(image: &Tensor<f32>, factor: f32) -> Tensor<f32> {
    let mean = (image.data().iter().map(|&v| v as f64).sum::<f64>() / image.len() as f64) as f32;
    image.map(|v| (mean + factor * (v - mean)).clamp(0.0, 1.0))
}

/// Mirrors every plane left to right.
pub fn flip_horizontal(x: &Tensor<f32>) -> Tensor<f32> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, h, w| x.at(n, c, h, s.w - 1 - w))
}

/// Mirrors every plane top to bottom.
pub fn flip_vertical(x: &Tensor<f32>) -> Tensor<f32> {
    let s = x.shape();
    Tensor::from_fn(s, |n, c, h, w| x.at(n, c, s.h - 1 - h, w))
}

/// Derives one augmented variant. Flips move image and mask together;
/// contrast leaves the mask untouched.
pub fn apply_augmentation(s: &Sample, kind: AugmentKind) -> Sample {
    let (image, mask) = match kind {
        AugmentKind::ContrastLow => (adjust_contrast(&s.image, CONTRAST_LOW), s.mask.clone()),
        AugmentKind::ContrastHigh => (adjust_contrast(&s.image, CONTRAST_HIGH), s.mask.clone()),
        AugmentKind::FlipHorizontal => (flip_horizontal(&s.image), flip_horizontal(&s.mask)),
        AugmentKind::FlipVertical => (flip_vertical(&s.image), flip_vertical(&s.mask)),
    };
    Sample {
        id: augmented_id(&s.id, kind),
        image,
        mask,
        provenance: Provenance::Augmented(kind),
        source: s.source.clone(),
    }
}

pub fn augmented_id(origin: &str, kind: AugmentKind) -> String {
    format!("{origin}#{}", kind.as_str())
}

/// `[original, contrast×0.9, contrast×1.1, hflip, vflip]`.
pub fn augment(s: &Sample) -> Vec<Sample> {
    let mut out = Vec::with_capacity(5);
    out.push(s.clone());
    out.extend(AugmentKind::ALL.iter().map(|&k| apply_augmentation(s, k)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn sample() -> Sample {
        let image = Tensor::from_fn(Shape::new(1, 3, 4, 5), |_, c, h, w| ((c + h * 5 + w) % 7) as f32 / 7.0);
        let mask = Tensor::from_fn(Shape::new(1, 1, 4, 5), |_, _, h, w| ((h + w) % 2) as f32);
        Sample::new("s", image, mask).unwrap()
    }

    #[test]
    fn five_variants_in_order() {
        let v = augment(&sample());
        assert_eq!(v.len(), 5);
        assert_eq!(v[0].provenance, Provenance::Original);
        assert_eq!(v[3].provenance, Provenance::Augmented(AugmentKind::FlipHorizontal));
        assert_eq!(v[1].mask, v[0].mask);
        assert_eq!(v[4].id, "s#vflip");
    }

    #[test]
    fn contrast_keeps_constant_image() {
        let x = Tensor::full(Shape::new(1, 3, 3, 3), 0.4f32);
        assert_eq!(adjust_contrast(&x, 1.1), x);
    }

    #[test]
    fn contrast_stays_in_unit_range() {
        let x = Tensor::from_fn(Shape::new(1, 3, 8, 8), |_, _, h, _| if h < 4 { 0.0 } else { 1.0 });
        let y = adjust_contrast(&x, 1.1);
        assert!(y.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn flips_are_involutions() {
        let s = sample();
        assert_eq!(flip_horizontal(&flip_horizontal(&s.image)), s.image);
        assert_eq!(flip_vertical(&flip_vertical(&s.mask)), s.mask);
    }
}
