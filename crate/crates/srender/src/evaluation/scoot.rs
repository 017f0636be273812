//! Block-wise structure and texture co-occurrence similarity for sketch
//! pairs. Each image is cut into a 4x4 grid; a block contributes the product
//! of a tone match, a contrast match, and a gradient-orientation histogram
//! intersection, and the score is the mean block product. Identical images
//! score exactly 1.

use ndarray::ArrayView2;

use super::EvalError;
use crate::imaging::Image;

const GRID: usize = 4;
const BINS: usize = 8;
/// Contrast gaps at or above this count as a full mismatch. Half the
/// intensity range is the largest standard deviation a [0,1] image can have.
const STD_SCALE: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
struct BlockStats {
    tone: f64,
    std: f64,
    /// Magnitude-weighted orientation histogram, unnormalized; `mass` is its
    /// total. Kept raw so the identical-input intersection is exactly 1.
    hist: [f64; BINS],
    mass: f64,
}

/// Similarity in [0, 1] between two equally sized sketches; 1 exactly for
/// identical inputs. Color inputs are reduced to luma first.
pub fn scoot(a: &Image, b: &Image) -> Result<f64, EvalError> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(EvalError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    if a.height() < GRID || a.width() < GRID {
        return Err(EvalError::ShapeMismatch(format!(
            "images must cover a {GRID}x{GRID} block grid, got {}x{}",
            a.height(),
            a.width()
        )));
    }
    let la = a.to_luma();
    let lb = b.to_luma();
    let pa = la.pixels();
    let pb = lb.pixels();
    let plane_a = pa.index_axis(ndarray::Axis(0), 0);
    let plane_b = pb.index_axis(ndarray::Axis(0), 0);
    let (h, w) = (a.height(), a.width());

    let mut total = 0.0;
    for by in 0..GRID {
        for bx in 0..GRID {
            let ys = by * h / GRID..(by + 1) * h / GRID;
            let xs = bx * w / GRID..(bx + 1) * w / GRID;
            let sa = block_stats(&plane_a, ys.clone(), xs.clone());
            let sb = block_stats(&plane_b, ys, xs);
            total += block_similarity(&sa, &sb);
        }
    }
    Ok(total / (GRID * GRID) as f64)
}

fn block_stats(
    plane: &ArrayView2<'_, f64>,
    ys: std::ops::Range<usize>,
    xs: std::ops::Range<usize>,
) -> BlockStats {
    let n = (ys.len() * xs.len()) as f64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for y in ys.clone() {
        for x in xs.clone() {
            let v = plane[[y, x]];
            sum += v;
            sum_sq += v * v;
        }
    }
    let tone = sum / n;
    let var = (sum_sq / n - tone * tone).max(0.0);

    // Magnitude-weighted orientation histogram over forward differences
    // inside the block.
    let mut hist = [0.0; BINS];
    for y in ys.start..ys.end - 1 {
        for x in xs.start..xs.end - 1 {
            let gy = plane[[y + 1, x]] - plane[[y, x]];
            let gx = plane[[y, x + 1]] - plane[[y, x]];
            let m = (gx * gx + gy * gy).sqrt();
            if m > 0.0 {
                let theta = gy.atan2(gx).rem_euclid(std::f64::consts::TAU);
                let bin = ((theta / std::f64::consts::TAU * BINS as f64) as usize).min(BINS - 1);
                hist[bin] += m;
            }
        }
    }
    // The mass is summed bin-wise, in the same order the intersection walks,
    // so identical histograms divide out to exactly 1.
    let mass: f64 = hist.iter().sum();
    BlockStats {
        tone,
        std: var.sqrt(),
        hist,
        mass,
    }
}

fn block_similarity(a: &BlockStats, b: &BlockStats) -> f64 {
    let tone = 1.0 - (a.tone - b.tone).abs().min(1.0);
    let contrast = 1.0 - ((a.std - b.std).abs() / STD_SCALE).min(1.0);
    // Normalized histogram intersection. Two flat blocks agree; a flat block
    // against a textured one does not.
    let orient = if a.mass == 0.0 && b.mass == 0.0 {
        1.0
    } else {
        a.hist
            .iter()
            .zip(b.hist.iter())
            .map(|(x, y)| x.min(*y))
            .sum::<f64>()
            / a.mass.max(b.mass)
    };
    tone * contrast * orient
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::DomainTag;
    use ndarray::Array3;

    fn gray(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::new(
            Array3::from_shape_fn((1, h, w), |(_, y, x)| f(y, x).clamp(0.0, 1.0)),
            DomainTag::Sketch,
        )
        .unwrap()
    }

    #[test]
    fn identical_images_score_exactly_one() {
        let a = gray(32, 32, |y, x| ((y * 31 + x * 17) % 23) as f64 / 23.0);
        assert_eq!(scoot(&a, &a).unwrap(), 1.0);
        let flat = gray(16, 16, |_, _| 0.4);
        assert_eq!(scoot(&flat, &flat).unwrap(), 1.0);
    }

    #[test]
    fn white_versus_black_scores_low() {
        let white = gray(32, 32, |_, _| 1.0);
        let black = gray(32, 32, |_, _| 0.0);
        let s = scoot(&white, &black).unwrap();
        assert!(s < 0.5, "got {s}");
    }

    #[test]
    fn stays_in_the_unit_interval_and_is_symmetric() {
        let a = gray(20, 20, |y, x| ((y + 2 * x) % 7) as f64 / 7.0);
        let b = gray(20, 20, |y, x| ((3 * y + x) % 5) as f64 / 5.0);
        let ab = scoot(&a, &b).unwrap();
        let ba = scoot(&b, &a).unwrap();
        assert!((0.0..=1.0).contains(&ab));
        assert_eq!(ab, ba);
    }

    #[test]
    fn orientation_differences_lower_the_score() {
        // Same tone and contrast, strokes rotated 90 degrees.
        let horiz = gray(32, 32, |y, _| if y % 4 == 0 { 0.0 } else { 1.0 });
        let vert = gray(32, 32, |_, x| if x % 4 == 0 { 0.0 } else { 1.0 });
        let cross = scoot(&horiz, &vert).unwrap();
        assert!(cross < scoot(&horiz, &horiz).unwrap());
        assert!(cross < 0.9);
    }

    #[test]
    fn small_tone_shifts_degrade_gracefully() {
        let a = gray(16, 16, |y, x| ((y + x) % 6) as f64 / 6.0);
        let near = gray(16, 16, |y, x| (((y + x) % 6) as f64 / 6.0 + 0.05).min(1.0));
        let far = gray(16, 16, |y, x| (((y + x) % 6) as f64 / 6.0 + 0.5).min(1.0));
        let s_near = scoot(&a, &near).unwrap();
        let s_far = scoot(&a, &far).unwrap();
        assert!(s_near > s_far);
        assert!(s_near > 0.7, "got {s_near}");
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let a = gray(16, 16, |_, _| 0.5);
        let b = gray(16, 20, |_, _| 0.5);
        assert!(matches!(scoot(&a, &b), Err(EvalError::ShapeMismatch(_))));
    }
}
