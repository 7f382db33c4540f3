//! Procedural handwritten-style digits.
//!
//! Each class is a fixed stroke skeleton. Every instance bends the skeleton
//! with a smooth wobble, nudges each stroke, applies a random rotation,
//! shear and stretch, picks a pen width and renders with anti-aliasing into
//! a 28×28 frame. The glyph is fitted into a 20×20 box and shifted so its
//! intensity centroid sits at the frame centre.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::raster::Plane;

pub const DIGIT_SIZE: usize = 28;
const FIT_BOX: f64 = 20.0;

/// One labelled 28×28 digit image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Digit {
    pub label: u8,
    pub image: Plane,
}

type Stroke = Vec<[f64; 2]>;

fn arc(cx: f64, cy: f64, rx: f64, ry: f64, a0: f64, a1: f64) -> Stroke {
    let n = (((a1 - a0).abs() / 15.0).ceil() as usize).max(2);
    (0..=n)
        .map(|i| {
            let a = (a0 + (a1 - a0) * i as f64 / n as f64) * PI / 180.0;
            [cx + rx * a.cos(), cy + ry * a.sin()]
        })
        .collect()
}

fn line(points: &[[f64; 2]]) -> Stroke {
    points.to_vec()
}

fn chain(mut a: Stroke, b: Stroke) -> Stroke {
    a.extend(b);
    a
}

/// Stroke skeleton of a class in a unit box, y pointing down.
fn skeleton(label: u8) -> Vec<Stroke> {
    match label {
        0 => vec![arc(0.5, 0.5, 0.34, 0.5, 0.0, 360.0)],
        1 => vec![line(&[[0.3, 0.18], [0.55, 0.0], [0.55, 1.0]])],
        2 => vec![chain(
            arc(0.5, 0.3, 0.36, 0.3, -180.0, 25.0),
            line(&[[0.1, 1.0], [0.92, 1.0]]),
        )],
        3 => vec![
            arc(0.48, 0.27, 0.32, 0.26, -160.0, 90.0),
            arc(0.48, 0.73, 0.36, 0.27, -90.0, 160.0),
        ],
        4 => vec![line(&[[0.72, 1.0], [0.72, 0.0], [0.08, 0.68], [0.95, 0.68]])],
        5 => vec![chain(
            line(&[[0.88, 0.0], [0.25, 0.0], [0.18, 0.45]]),
            arc(0.5, 0.68, 0.36, 0.31, -140.0, 150.0),
        )],
        6 => vec![
            line(&[[0.78, 0.0], [0.42, 0.22], [0.22, 0.5], [0.18, 0.72]]),
            arc(0.5, 0.72, 0.32, 0.28, 0.0, 360.0),
        ],
        7 => vec![line(&[[0.08, 0.0], [0.92, 0.0], [0.38, 1.0]])],
        8 => vec![
            arc(0.5, 0.25, 0.25, 0.24, 0.0, 360.0),
            arc(0.5, 0.73, 0.31, 0.27, 0.0, 360.0),
        ],
        _ => vec![
            arc(0.5, 0.3, 0.31, 0.29, 0.0, 360.0),
            line(&[[0.81, 0.3], [0.72, 1.0]]),
        ],
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qx, qy) = (a[0] + t * dx - p[0], a[1] + t * dy - p[1]);
    (qx * qx + qy * qy).sqrt()
}

/// Draws one instance of `label`.
pub fn render_digit<R: Rng>(label: u8, rng: &mut R) -> Digit {
    let jitter = Normal::new(0.0, 0.025).expect("valid std");
    let rot = rng.random_range(-0.22..0.22f64);
    let shear = rng.random_range(-0.3..0.3f64);
    let stretch = rng.random_range(0.8..1.2f64);
    let pen = rng.random_range(1.7..3.0f64);
    let (c, s) = (rot.cos(), rot.sin());

    // Smooth low-frequency wobble plus a small offset per stroke.
    let (ax, ay) = (rng.random_range(-0.05..0.05f64), rng.random_range(-0.05..0.05f64));
    let (px, py) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
    let strokes: Vec<Stroke> = skeleton(label % 10)
        .into_iter()
        .map(|st| {
            let (ox, oy) = (jitter.sample(rng), jitter.sample(rng));
            st.into_iter()
                .map(|[x, y]| {
                    let wx = ax * (PI * 1.5 * y + px).sin();
                    let wy = ay * (PI * 1.5 * x + py).sin();
                    let (x, y) = (x + wx + ox - 0.5, y + wy + oy - 0.5);
                    let x = (x + shear * y) * stretch;
                    [c * x - s * y, s * x + c * y]
                })
                .collect()
        })
        .collect();

    let pts = strokes.iter().flatten();
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in pts {
        x0 = x0.min(p[0]);
        y0 = y0.min(p[1]);
        x1 = x1.max(p[0]);
        y1 = y1.max(p[1]);
    }
    // Fit the skeleton, pen included, into the 20-pixel box.
    let scale = (FIT_BOX - pen) / (x1 - x0).max(y1 - y0).max(1e-6);
    let mid = DIGIT_SIZE as f64 / 2.0;
    let (mx, my) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let strokes: Vec<Stroke> = strokes
        .into_iter()
        .map(|st| {
            st.into_iter()
                .map(|[x, y]| [(x - mx) * scale + mid, (y - my) * scale + mid])
                .collect()
        })
        .collect();

    let mut img = Plane::zeros(DIGIT_SIZE, DIGIT_SIZE);
    for i in 0..DIGIT_SIZE {
        for j in 0..DIGIT_SIZE {
            let p = [j as f64 + 0.5, i as f64 + 0.5];
            let d = strokes
                .iter()
                .flat_map(|st| st.windows(2).map(move |w| segment_distance(p, w[0], w[1])))
                .fold(f64::MAX, f64::min);
            img.set(i, j, (pen / 2.0 + 0.5 - d).clamp(0.0, 1.0) as f32);
        }
    }
    Digit {
        label: label % 10,
        image: center_of_mass_shift(&img),
    }
}

/// Shifts by whole pixels so the intensity centroid lands on the centre.
fn center_of_mass_shift(img: &Plane) -> Plane {
    let (mut m, mut sy, mut sx) = (0.0f64, 0.0, 0.0);
    for i in 0..img.h {
        for j in 0..img.w {
            let v = img.get(i, j) as f64;
            m += v;
            sy += v * (i as f64 + 0.5);
            sx += v * (j as f64 + 0.5);
        }
    }
    if m == 0.0 {
        return img.clone();
    }
    let dy = (img.h as f64 / 2.0 - sy / m).round() as i64;
    let dx = (img.w as f64 / 2.0 - sx / m).round() as i64;
    let mut out = Plane::zeros(img.h, img.w);
    for i in 0..img.h as i64 {
        for j in 0..img.w as i64 {
            let (si, sj) = (i - dy, j - dx);
            if si >= 0 && sj >= 0 && (si as usize) < img.h && (sj as usize) < img.w {
                out.set(i as usize, j as usize, img.get(si as usize, sj as usize));
            }
        }
    }
    out
}

/// `n` digits with uniformly random labels.
pub fn generate_digits<R: Rng>(n: usize, rng: &mut R) -> Vec<Digit> {
    (0..n)
        .map(|_| {
            let label = rng.random_range(0..10u8);
            render_digit(label, rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_class_renders_a_centred_visible_glyph() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for label in 0..10 {
            let d = render_digit(label, &mut rng);
            let mask = d.image.to_mask(0.5);
            assert!(mask.count() > 30, "class {label} too faint");
            let (xmin, ymin, xmax, ymax) = mask.bbox().unwrap();
            assert!(xmax - xmin <= 24 && ymax - ymin <= 24);
            let (r, c) = mask.centroid().unwrap();
            assert!((r - 14.0).abs() < 2.5 && (c - 14.0).abs() < 2.5);
        }
    }

    #[test]
    fn same_seed_gives_the_same_digits() {
        let a = generate_digits(5, &mut ChaCha8Rng::seed_from_u64(9));
        let b = generate_digits(5, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }
}
