//! Multi-digit canvases for localization and registration experiments.

use std::ops::RangeInclusive;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::locnet::BBox;
use crate::mask::Mask;
use crate::raster::{Plane, Region};

use super::digits::Digit;

pub const CANVAS: usize = 112;
const PLACEMENT_ATTEMPTS: usize = 100;
const LAYOUT_RESTARTS: usize = 20;

/// A moving canvas with one digit and a fixed canvas holding another
/// instance of the same class among distractors of other classes.
#[derive(Clone, Debug, PartialEq)]
pub struct Composite {
    pub label: u8,
    pub moving: Plane,
    pub moving_mask: Mask,
    pub fixed: Plane,
    /// Mask of the target digit only.
    pub fixed_mask: Mask,
    /// Tight box of the target digit in the fixed canvas, normalized.
    pub gt: Region,
    /// Pixel boxes `(xmin, ymin, xmax, ymax)` of every digit's ink in the
    /// fixed canvas, target first.
    pub placed: Vec<(usize, usize, usize, usize)>,
}

impl Composite {
    pub fn gt_box(&self) -> BBox {
        BBox::from_corners(&self.gt)
    }
}

/// Ink extent of a digit: bbox of every nonzero pixel.
fn ink_box(d: &Plane) -> Option<(usize, usize, usize, usize)> {
    Mask::from_fn(d.h, d.w, |i, j| d.get(i, j) > 0.0).bbox()
}

fn overlaps(a: (usize, usize, usize, usize), b: (usize, usize, usize, usize)) -> bool {
    a.0 < b.2 && b.0 < a.2 && a.1 < b.3 && b.1 < a.3
}

fn paste(canvas: &mut Plane, d: &Plane, top: usize, left: usize) {
    for i in 0..d.h {
        for j in 0..d.w {
            let v = canvas.get(top + i, left + j).max(d.get(i, j));
            canvas.set(top + i, left + j, v);
        }
    }
}

/// Places digit patches at random positions with pairwise-disjoint ink
/// boxes. Returns each patch's top-left corner.
fn layout<R: Rng>(patches: &[&Plane], canvas: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let inks: Vec<(usize, usize, usize, usize)> = patches
        .iter()
        .map(|p| ink_box(p).ok_or_else(|| Error::param("cannot place an empty digit")))
        .collect::<Result<_>>()?;
    for _ in 0..LAYOUT_RESTARTS {
        let mut spots: Vec<(usize, usize)> = Vec::new();
        let mut boxes = Vec::new();
        for (p, ink) in patches.iter().zip(&inks) {
            if p.h > canvas || p.w > canvas {
                return Err(Error::param(format!("digit {}x{} exceeds canvas {canvas}", p.h, p.w)));
            }
            let mut placed = false;
            for _ in 0..PLACEMENT_ATTEMPTS {
                let top = rng.random_range(0..=canvas - p.h);
                let left = rng.random_range(0..=canvas - p.w);
                let b = (ink.0 + left, ink.1 + top, ink.2 + left, ink.3 + top);
                if boxes.iter().all(|&o| !overlaps(o, b)) {
                    spots.push((top, left));
                    boxes.push(b);
                    placed = true;
                    break;
                }
            }
            if !placed {
                break;
            }
        }
        if spots.len() == patches.len() {
            return Ok(spots);
        }
    }
    Err(Error::param(format!(
        "could not place {} digits without overlap on a {canvas}px canvas",
        patches.len()
    )))
}

/// Builds `n` composite pairs from `digits`. Each pair draws its own RNG
/// stream from `seed` and its index, so output does not depend on how the
/// work is split.
pub fn gen_composites(
    digits: &[Digit],
    n: usize,
    canvas: usize,
    distractors: RangeInclusive<usize>,
    seed: u64,
) -> Result<Vec<Composite>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); 10];
    for (i, d) in digits.iter().enumerate() {
        by_class[(d.label % 10) as usize].push(i);
    }
    let usable: Vec<u8> = (0..10u8).filter(|&c| by_class[c as usize].len() >= 2).collect();
    if usable.is_empty() {
        return Err(Error::param("need at least two digits of some class"));
    }
    if *distractors.end() > 9 {
        return Err(Error::param("at most 9 distractor classes exist"));
    }
    crate::par::map_range(n, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (s as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let label = *usable.choose(&mut rng).expect("non-empty");
        let pool = &by_class[label as usize];
        let mi = *pool.choose(&mut rng).expect("non-empty");
        let ti = loop {
            let t = *pool.choose(&mut rng).expect("non-empty");
            if t != mi {
                break t;
            }
        };
        let nd = rng.random_range(distractors.clone());
        let mut others: Vec<u8> = (0..10u8)
            .filter(|&c| c != label && !by_class[c as usize].is_empty())
            .collect();
        let mut patches = vec![&digits[ti].image];
        for _ in 0..nd.min(others.len()) {
            let k = rng.random_range(0..others.len());
            let c = others.swap_remove(k);
            let di = *by_class[c as usize].choose(&mut rng).expect("non-empty");
            patches.push(&digits[di].image);
        }

        let spots = layout(&patches, canvas, &mut rng)?;
        let mut fixed = Plane::zeros(canvas, canvas);
        let mut placed = Vec::new();
        for (p, &(top, left)) in patches.iter().zip(&spots) {
            paste(&mut fixed, p, top, left);
            let ink = ink_box(p).expect("checked by layout");
            placed.push((ink.0 + left, ink.1 + top, ink.2 + left, ink.3 + top));
        }
        let mut target = Plane::zeros(canvas, canvas);
        paste(&mut target, patches[0], spots[0].0, spots[0].1);
        let fixed_mask = target.to_mask(0.5);
        let gt_px = fixed_mask
            .bbox()
            .ok_or_else(|| Error::param("target digit has no pixels at or above 0.5"))?;

        let moving_digit = &digits[mi].image;
        let m_spot = layout(&[moving_digit], canvas, &mut rng)?[0];
        let mut moving = Plane::zeros(canvas, canvas);
        paste(&mut moving, moving_digit, m_spot.0, m_spot.1);
        let moving_mask = moving.to_mask(0.5);
        if moving_mask.count() == 0 {
            return Err(Error::param("moving digit has no pixels at or above 0.5"));
        }
        Ok(Composite {
            label,
            moving,
            moving_mask,
            fixed,
            fixed_mask,
            gt: Region::from_pixels(gt_px, canvas, canvas),
            placed,
        })
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_digits;

    fn digits() -> Vec<Digit> {
        generate_digits(60, &mut ChaCha8Rng::seed_from_u64(3))
    }

    #[test]
    fn zero_distractors_leave_one_digit() {
        let c = gen_composites(&digits(), 5, CANVAS, 0..=0, 1).unwrap();
        for s in &c {
            assert_eq!(s.placed.len(), 1);
            assert_eq!(s.fixed.to_mask(0.5), s.fixed_mask);
        }
    }

    #[test]
    fn distractor_boxes_are_disjoint_from_the_target() {
        let c = gen_composites(&digits(), 20, CANVAS, 3..=3, 2).unwrap();
        for s in &c {
            assert_eq!(s.placed.len(), 4);
            for &d in &s.placed[1..] {
                assert!(!overlaps(s.placed[0], d));
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let d = digits();
        assert_eq!(
            gen_composites(&d, 4, CANVAS, 0..=3, 8).unwrap(),
            gen_composites(&d, 4, CANVAS, 0..=3, 8).unwrap()
        );
    }
}
