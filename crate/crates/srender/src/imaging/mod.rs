//! Image representation and geometric preprocessing.
//!
//! Images are dense `(channels, height, width)` grids of f64 intensities in
//! `[0, 1]`, tagged with the domain they belong to (photo, sketch, or
//! line-drawing). All operations here are pure: same inputs produce
//! bit-identical outputs, so they are safe to call concurrently.

mod io;

pub use io::{read_landmarks, read_png, write_png};

use ndarray::{Array3, ArrayView3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Which domain an image belongs to. The tag is fixed at construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    Photo,
    Sketch,
    LineDrawing,
}

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("landmarks coincide: both eyes at ({0}, {1})")]
    CoincidentLandmarks(f64, f64),
    #[error("landmark ({row}, {col}) lies outside image bounds {height}x{width}")]
    OutOfBounds {
        row: f64,
        col: f64,
        height: usize,
        width: usize,
    },
    #[error("bad augment config: crop_to {crop_to} exceeds resize_to {resize_to}")]
    BadConfig { resize_to: usize, crop_to: usize },
    #[error("dimensions {0}x{1} must be even for 2x downsampling")]
    OddDimensions(usize, usize),
    #[error("invalid image: {0}")]
    InvalidImage(String),
    #[error("image I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("PNG codec: {0}")]
    Codec(String),
    #[error("landmark file: {0}")]
    LandmarkFormat(String),
}

/// A single- or three-channel pixel grid with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pixels: Array3<f64>,
    domain: DomainTag,
}

impl Image {
    /// Builds an image from a `(channels, height, width)` grid, validating the
    /// channel count, minimum size, and intensity range.
    pub fn new(pixels: Array3<f64>, domain: DomainTag) -> Result<Self, ImagingError> {
        let (c, h, w) = pixels.dim();
        if c != 1 && c != 3 {
            return Err(ImagingError::InvalidImage(format!(
                "channels must be 1 or 3, got {c}"
            )));
        }
        if h < 8 || w < 8 {
            return Err(ImagingError::InvalidImage(format!(
                "minimum size is 8x8, got {h}x{w}"
            )));
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(ImagingError::InvalidImage(
                "intensity outside [0, 1]".into(),
            ));
        }
        Ok(Self { pixels, domain })
    }

    /// Constant-intensity image.
    pub fn constant(
        value: f64,
        channels: usize,
        height: usize,
        width: usize,
        domain: DomainTag,
    ) -> Result<Self, ImagingError> {
        Self::new(Array3::from_elem((channels, height, width), value), domain)
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn channels(&self) -> usize {
        self.pixels.dim().0
    }

    pub fn height(&self) -> usize {
        self.pixels.dim().1
    }

    pub fn width(&self) -> usize {
        self.pixels.dim().2
    }

    pub fn pixels(&self) -> ArrayView3<'_, f64> {
        self.pixels.view()
    }

    /// Consumes the image, handing back the raw grid.
    pub fn into_pixels(self) -> Array3<f64> {
        self.pixels
    }

    /// Same pixels under a different domain tag (the tag of `self` is not
    /// mutated; a new image is produced).
    /// Adds a leading batch axis: `(C, H, W)` becomes `(1, C, H, W)`.
    pub fn to_batch(&self) -> ndarray::Array4<f64> {
        self.pixels.clone().insert_axis(ndarray::Axis(0))
    }

    /// Takes sample 0 of a batch tensor back into an image, clamping tiny
    /// numerical excursions outside `[0, 1]`.
    pub fn from_batch(
        batch: &ndarray::Array4<f64>,
        domain: DomainTag,
    ) -> Result<Self, ImagingError> {
        let pixels = batch
            .index_axis(ndarray::Axis(0), 0)
            .mapv(|v| v.clamp(0.0, 1.0));
        Image::new(pixels, domain)
    }

    pub fn retagged(&self, domain: DomainTag) -> Self {
        Self {
            pixels: self.pixels.clone(),
            domain,
        }
    }

    /// Luminance view: single channel, Rec.601 weights for RGB inputs.
    pub fn to_luma(&self) -> Image {
        if self.channels() == 1 {
            return self.clone();
        }
        let (_, h, w) = self.pixels.dim();
        let mut out = Array3::zeros((1, h, w));
        for y in 0..h {
            for x in 0..w {
                out[[0, y, x]] = 0.299 * self.pixels[[0, y, x]]
                    + 0.587 * self.pixels[[1, y, x]]
                    + 0.114 * self.pixels[[2, y, x]];
            }
        }
        Image {
            pixels: out,
            domain: self.domain,
        }
    }

    /// Mean intensity over all channels and pixels.
    pub fn mean(&self) -> f64 {
        self.pixels.mean().unwrap_or(0.0)
    }
}

/// Eye-center annotations in pixel units, `(row, col)` each.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Landmarks {
    pub left_eye: (f64, f64),
    pub right_eye: (f64, f64),
}

impl Landmarks {
    fn validate(&self, image: &Image) -> Result<(), ImagingError> {
        let (h, w) = (image.height() as f64, image.width() as f64);
        for &(r, c) in [&self.left_eye, &self.right_eye] {
            if !(0.0..h).contains(&r) || !(0.0..w).contains(&c) {
                return Err(ImagingError::OutOfBounds {
                    row: r,
                    col: c,
                    height: image.height(),
                    width: image.width(),
                });
            }
        }
        if self.left_eye == self.right_eye {
            return Err(ImagingError::CoincidentLandmarks(
                self.left_eye.0,
                self.left_eye.1,
            ));
        }
        Ok(())
    }
}

/// Where the eye centers land after alignment, as fractions of the output
/// side. The defaults keep hair and chin in frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CanonicalEyes {
    pub row_frac: f64,
    pub left_col_frac: f64,
    pub right_col_frac: f64,
}

impl Default for CanonicalEyes {
    fn default() -> Self {
        Self {
            row_frac: 0.4,
            left_col_frac: 0.3,
            right_col_frac: 0.7,
        }
    }
}

/// The similarity transform (rotation + uniform scale + translation) that
/// carries the two eye centers onto their canonical positions.
///
/// Points are treated as complex numbers over `(col, row)`; two point
/// correspondences determine the transform exactly.
#[derive(Debug, Clone, Copy)]
pub struct Similarity {
    // p' = f * p + t over complex (x=col, y=row)
    f_re: f64,
    f_im: f64,
    t_re: f64,
    t_im: f64,
}

impl Similarity {
    /// Transform mapping `src` eye points to `dst` eye points.
    pub fn from_eye_pairs(src: &Landmarks, dst: &Landmarks) -> Self {
        let (ur, ui) = (
            src.right_eye.1 - src.left_eye.1,
            src.right_eye.0 - src.left_eye.0,
        );
        let (vr, vi) = (
            dst.right_eye.1 - dst.left_eye.1,
            dst.right_eye.0 - dst.left_eye.0,
        );
        // f = v / u
        let den = ur * ur + ui * ui;
        let f_re = (vr * ur + vi * ui) / den;
        let f_im = (vi * ur - vr * ui) / den;
        // t = dst_left - f * src_left
        let (pr, pi) = (src.left_eye.1, src.left_eye.0);
        let t_re = dst.left_eye.1 - (f_re * pr - f_im * pi);
        let t_im = dst.left_eye.0 - (f_re * pi + f_im * pr);
        Self {
            f_re,
            f_im,
            t_re,
            t_im,
        }
    }

    /// Forward map of a `(row, col)` point.
    pub fn apply(&self, point: (f64, f64)) -> (f64, f64) {
        let (pi, pr) = point; // row, col
        let x = self.f_re * pr - self.f_im * pi + self.t_re;
        let y = self.f_re * pi + self.f_im * pr + self.t_im;
        (y, x)
    }

    /// Inverse map of a `(row, col)` point.
    pub fn apply_inverse(&self, point: (f64, f64)) -> (f64, f64) {
        let (qi, qr) = point;
        let (dr, di) = (qr - self.t_re, qi - self.t_im);
        let den = self.f_re * self.f_re + self.f_im * self.f_im;
        let x = (dr * self.f_re + di * self.f_im) / den;
        let y = (di * self.f_re - dr * self.f_im) / den;
        (y, x)
    }
}

/// Bilinear sample at a continuous `(row, col)` position; positions outside
/// the grid read as white (intensity 1), the sketch paper background.
fn sample_bilinear_white(pixels: &ArrayView3<'_, f64>, ch: usize, row: f64, col: f64) -> f64 {
    let (_, h, w) = pixels.dim();
    if row < 0.0 || col < 0.0 || row > (h - 1) as f64 || col > (w - 1) as f64 {
        return 1.0;
    }
    let r0 = row.floor();
    let c0 = col.floor();
    let dr = row - r0;
    let dc = col - c0;
    let (r0, c0) = (r0 as usize, c0 as usize);
    let r1 = (r0 + 1).min(h - 1);
    let c1 = (c0 + 1).min(w - 1);
    let v00 = pixels[[ch, r0, c0]];
    let v01 = pixels[[ch, r0, c1]];
    let v10 = pixels[[ch, r1, c0]];
    let v11 = pixels[[ch, r1, c1]];
    v00 * (1.0 - dr) * (1.0 - dc) + v01 * (1.0 - dr) * dc + v10 * dr * (1.0 - dc) + v11 * dr * dc
}

/// Aligns a face by the similarity transform that maps the two eye centers to
/// the given canonical positions; out-of-frame samples read as white.
pub fn align_face_with(
    image: &Image,
    lm: &Landmarks,
    out_size: usize,
    canon: CanonicalEyes,
) -> Result<Image, ImagingError> {
    lm.validate(image)?;
    if out_size < 8 {
        return Err(ImagingError::InvalidImage(format!(
            "out_size must be >= 8, got {out_size}"
        )));
    }
    let s = out_size as f64;
    let dst = Landmarks {
        left_eye: (canon.row_frac * s, canon.left_col_frac * s),
        right_eye: (canon.row_frac * s, canon.right_col_frac * s),
    };
    let xform = Similarity::from_eye_pairs(lm, &dst);
    let src = image.pixels();
    let c = image.channels();
    let mut out = Array3::zeros((c, out_size, out_size));
    for ch in 0..c {
        for y in 0..out_size {
            for x in 0..out_size {
                let (sr, sc) = xform.apply_inverse((y as f64, x as f64));
                out[[ch, y, x]] = sample_bilinear_white(&src, ch, sr, sc);
            }
        }
    }
    Ok(Image {
        pixels: out,
        domain: image.domain(),
    })
}

/// [`align_face_with`] under the default canonical eye placement.
pub fn align_face(image: &Image, lm: &Landmarks, out_size: usize) -> Result<Image, ImagingError> {
    align_face_with(image, lm, out_size, CanonicalEyes::default())
}

/// Training-time augmentation recipe: rescale, random crop, random mirror.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub resize_to: usize,
    pub crop_to: usize,
    pub hflip_prob: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            resize_to: 542,
            crop_to: 512,
            hflip_prob: 0.5,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<(), ImagingError> {
        if self.crop_to > self.resize_to || self.crop_to == 0 {
            return Err(ImagingError::BadConfig {
                resize_to: self.resize_to,
                crop_to: self.crop_to,
            });
        }
        Ok(())
    }
}

/// One concrete draw of augmentation randomness, so the same crop and flip
/// can be applied to both halves of a training pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSample {
    pub offset: (usize, usize),
    pub flip: bool,
}

impl AugmentSample {
    /// Draws offsets uniformly over the valid window and the flip with the
    /// configured probability.
    pub fn draw<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let span = cfg.resize_to - cfg.crop_to;
        let offset = (rng.gen_range(0..=span), rng.gen_range(0..=span));
        let flip = rng.gen_bool(cfg.hflip_prob.clamp(0.0, 1.0));
        Self { offset, flip }
    }
}

/// Bilinear rescale to a square `side` x `side` grid (half-pixel centers, so
/// `side == input side` is the identity).
pub fn resize_bilinear(image: &Image, side: usize) -> Image {
    let (c, h, w) = image.pixels.dim();
    if h == side && w == side {
        return image.clone();
    }
    let src = image.pixels();
    let sy = h as f64 / side as f64;
    let sx = w as f64 / side as f64;
    let mut out = Array3::zeros((c, side, side));
    for ch in 0..c {
        for y in 0..side {
            for x in 0..side {
                let sr = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
                let sc = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
                out[[ch, y, x]] = sample_bilinear_white(&src, ch, sr, sc);
            }
        }
    }
    Image {
        pixels: out,
        domain: image.domain,
    }
}

/// Mirrors an image left-to-right. Applying it twice restores the input
/// bit-exactly.
pub fn hflip(image: &Image) -> Image {
    let (c, h, w) = image.pixels.dim();
    let mut out = Array3::zeros((c, h, w));
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                out[[ch, y, x]] = image.pixels[[ch, y, w - 1 - x]];
            }
        }
    }
    Image {
        pixels: out,
        domain: image.domain,
    }
}

/// Applies an already-drawn augmentation: rescale to `resize_to`, crop
/// `crop_to` at the sample's offset, mirror if the sample says so.
pub fn apply_augment(
    image: &Image,
    cfg: &AugmentConfig,
    sample: AugmentSample,
) -> Result<Image, ImagingError> {
    cfg.validate()?;
    let resized = resize_bilinear(image, cfg.resize_to);
    let (oy, ox) = sample.offset;
    let k = cfg.crop_to;
    let cropped = resized
        .pixels
        .slice(ndarray::s![.., oy..oy + k, ox..ox + k])
        .to_owned();
    let img = Image {
        pixels: cropped,
        domain: image.domain,
    };
    Ok(if sample.flip { hflip(&img) } else { img })
}

/// Rescale, random-crop, random-mirror. Deterministic given the rng state.
pub fn augment<R: Rng>(
    image: &Image,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> Result<Image, ImagingError> {
    cfg.validate()?;
    let sample = AugmentSample::draw(cfg, rng);
    apply_augment(image, cfg, sample)
}

/// Halves both dimensions by averaging each 2x2 block. Mean pooling is
/// mean-preserving, so the global mean intensity is unchanged.
pub fn downsample2x(image: &Image) -> Result<Image, ImagingError> {
    let (c, h, w) = image.pixels.dim();
    if h % 2 != 0 || w % 2 != 0 {
        return Err(ImagingError::OddDimensions(h, w));
    }
    let mut out = Array3::zeros((c, h / 2, w / 2));
    for ch in 0..c {
        for y in 0..h / 2 {
            for x in 0..w / 2 {
                out[[ch, y, x]] = 0.25
                    * (image.pixels[[ch, 2 * y, 2 * x]]
                        + image.pixels[[ch, 2 * y, 2 * x + 1]]
                        + image.pixels[[ch, 2 * y + 1, 2 * x]]
                        + image.pixels[[ch, 2 * y + 1, 2 * x + 1]]);
            }
        }
    }
    Ok(Image {
        pixels: out,
        domain: image.domain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient_image(h: usize, w: usize) -> Image {
        let pixels = Array3::from_shape_fn((1, h, w), |(_, y, x)| {
            ((y * 7 + x * 13) % 97) as f64 / 96.0
        });
        Image::new(pixels, DomainTag::Sketch).unwrap()
    }

    #[test]
    fn align_identity_when_eyes_already_canonical() {
        let size = 32;
        let img = gradient_image(size, size);
        let s = size as f64;
        let lm = Landmarks {
            left_eye: (0.4 * s, 0.3 * s),
            right_eye: (0.4 * s, 0.7 * s),
        };
        let out = align_face(&img, &lm, size).unwrap();
        for ((c, y, x), v) in out.pixels().indexed_iter() {
            assert!(
                (v - img.pixels()[[c, y, x]]).abs() < 1e-12,
                "pixel ({y},{x}) changed"
            );
        }
    }

    #[test]
    fn align_maps_rotated_landmarks_to_canonical() {
        // Eyes on a vertical line: the face is rotated 90 degrees.
        let img = gradient_image(64, 64);
        let lm = Landmarks {
            left_eye: (16.0, 32.0),
            right_eye: (48.0, 32.0),
        };
        let out_size = 40;
        let s = out_size as f64;
        let dst = Landmarks {
            left_eye: (0.4 * s, 0.3 * s),
            right_eye: (0.4 * s, 0.7 * s),
        };
        let xform = Similarity::from_eye_pairs(&lm, &dst);
        for (src, want) in [(lm.left_eye, dst.left_eye), (lm.right_eye, dst.right_eye)] {
            let got = xform.apply(src);
            let dist = ((got.0 - want.0).powi(2) + (got.1 - want.1).powi(2)).sqrt();
            assert!(dist < 0.5, "landmark mapped {dist} px away from canonical");
        }
        // And the full image op agrees in shape.
        let aligned = align_face(&img, &lm, out_size).unwrap();
        assert_eq!((aligned.height(), aligned.width()), (out_size, out_size));
    }

    #[test]
    fn align_rejects_coincident_landmarks() {
        let img = gradient_image(32, 32);
        let lm = Landmarks {
            left_eye: (10.0, 10.0),
            right_eye: (10.0, 10.0),
        };
        assert!(matches!(
            align_face(&img, &lm, 32),
            Err(ImagingError::CoincidentLandmarks(_, _))
        ));
    }

    #[test]
    fn align_rejects_out_of_bounds_landmark() {
        let img = gradient_image(32, 32);
        let lm = Landmarks {
            left_eye: (10.0, 40.0),
            right_eye: (10.0, 20.0),
        };
        assert!(matches!(
            align_face(&img, &lm, 32),
            Err(ImagingError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn augment_pinned_draw_is_top_left_crop() {
        let img = gradient_image(32, 32);
        let cfg = AugmentConfig {
            resize_to: 36,
            crop_to: 32,
            hflip_prob: 0.5,
            seed: 0,
        };
        let sample = AugmentSample {
            offset: (0, 0),
            flip: false,
        };
        let out = apply_augment(&img, &cfg, sample).unwrap();
        let resized = resize_bilinear(&img, 36);
        for y in 0..32 {
            for x in 0..32 {
                assert_eq!(out.pixels()[[0, y, x]], resized.pixels()[[0, y, x]]);
            }
        }
    }

    #[test]
    fn augment_output_shape_and_range() {
        let img = gradient_image(40, 40);
        let cfg = AugmentConfig {
            resize_to: 44,
            crop_to: 40,
            hflip_prob: 0.5,
            seed: 7,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..8 {
            let out = augment(&img, &cfg, &mut rng).unwrap();
            assert_eq!((out.height(), out.width()), (40, 40));
            assert!(out.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn hflip_is_an_involution() {
        let img = gradient_image(16, 24);
        let twice = hflip(&hflip(&img));
        assert_eq!(twice.pixels(), img.pixels());
    }

    #[test]
    fn augment_rejects_crop_larger_than_resize() {
        let img = gradient_image(32, 32);
        let cfg = AugmentConfig {
            resize_to: 16,
            crop_to: 32,
            hflip_prob: 0.0,
            seed: 0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            augment(&img, &cfg, &mut rng),
            Err(ImagingError::BadConfig { .. })
        ));
    }

    #[test]
    fn downsample_halves_dimensions() {
        let img = gradient_image(512, 512);
        let out = downsample2x(&img).unwrap();
        assert_eq!((out.height(), out.width()), (256, 256));
    }

    #[test]
    fn downsample_constant_stays_constant() {
        let img = Image::constant(0.37, 1, 16, 16, DomainTag::Photo).unwrap();
        let out = downsample2x(&img).unwrap();
        assert!(out.pixels().iter().all(|&v| (v - 0.37).abs() < 1e-15));
    }

    #[test]
    fn downsample_two_by_two_block_mean() {
        // Hand-computed: mean {0, 0.2, 0.4, 1.0} = 0.4. Embedded in an 8x8
        // grid since images are at least 8x8; the other blocks are zero.
        let mut pixels = Array3::zeros((1, 8, 8));
        pixels[[0, 0, 0]] = 0.0;
        pixels[[0, 0, 1]] = 0.2;
        pixels[[0, 1, 0]] = 0.4;
        pixels[[0, 1, 1]] = 1.0;
        let img = Image::new(pixels, DomainTag::Photo).unwrap();
        let out = downsample2x(&img).unwrap();
        assert!((out.pixels()[[0, 0, 0]] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn downsample_rejects_odd_dimensions() {
        let img = gradient_image(9, 8);
        assert!(matches!(
            downsample2x(&img),
            Err(ImagingError::OddDimensions(9, 8))
        ));
    }

    #[test]
    fn downsample_preserves_global_mean() {
        let img = gradient_image(32, 32);
        let out = downsample2x(&img).unwrap();
        assert!((img.mean() - out.mean()).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn align_reproduces_canonical_positions(
            lr in 1.0f64..30.0, lc in 1.0f64..30.0,
            dr in -12.0f64..12.0, dc in 0.5f64..12.0,
        ) {
            let img = gradient_image(32, 32);
            let left = (lr, lc);
            let right = ((lr + dr).clamp(0.0, 31.0), (lc + dc).clamp(0.0, 31.0));
            prop_assume!(left != right);
            let lm = Landmarks { left_eye: left, right_eye: right };
            let out_size = 24usize;
            let s = out_size as f64;
            let xform = Similarity::from_eye_pairs(&lm, &Landmarks {
                left_eye: (0.4 * s, 0.3 * s),
                right_eye: (0.4 * s, 0.7 * s),
            });
            for (src, want) in [
                (lm.left_eye, (0.4 * s, 0.3 * s)),
                (lm.right_eye, (0.4 * s, 0.7 * s)),
            ] {
                let got = xform.apply(src);
                let dist = ((got.0 - want.0).powi(2) + (got.1 - want.1).powi(2)).sqrt();
                prop_assert!(dist < 0.5);
            }
            // Full op stays within range.
            let aligned = align_face(&img, &lm, out_size).unwrap();
            prop_assert!(aligned.pixels().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
