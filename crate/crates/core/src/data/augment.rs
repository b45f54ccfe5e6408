use rand::Rng;

use super::Standardizer;
use crate::net::InputShape;

/// Reflection padding before the random crop.
pub const PAD: usize = 4;
pub const CUTOUT_SIDE: usize = 8;

/// Training-time augmentation. Standardization always runs; the flags add
/// random crop, horizontal flip, and cutout.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Augment {
    pub crop: bool,
    pub flip: bool,
    pub cutout: bool,
}

/// Index `i` mirrored into `0..n` without repeating the edge pixel.
pub(crate) fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

impl Augment {
    pub fn none() -> Self {
        Augment::default()
    }

    /// Augments one channel-major image. Cutout is skipped on images smaller
    /// than the cutout block.
    pub fn apply(
        &self,
        image: &[f64],
        shape: InputShape,
        standardizer: &Standardizer,
        rng: &mut impl Rng,
    ) -> Vec<f64> {
        let (c, h, w) = (shape.channels, shape.height, shape.width);
        let mut out = image.to_vec();
        if self.crop {
            let dy = rng.random_range(0..=2 * PAD) as isize - PAD as isize;
            let dx = rng.random_range(0..=2 * PAD) as isize - PAD as isize;
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        let sy = reflect(y as isize + dy, h);
                        let sx = reflect(x as isize + dx, w);
                        out[(ch * h + y) * w + x] = image[(ch * h + sy) * w + sx];
                    }
                }
            }
        }
        if self.flip && rng.random_bool(0.5) {
            for ch in 0..c {
                for y in 0..h {
                    out[(ch * h + y) * w..(ch * h + y + 1) * w].reverse();
                }
            }
        }
        standardizer.apply_in_place(&mut out, shape);
        if self.cutout && h >= CUTOUT_SIDE && w >= CUTOUT_SIDE {
            let y0 = rng.random_range(0..=h - CUTOUT_SIDE);
            let x0 = rng.random_range(0..=w - CUTOUT_SIDE);
            for ch in 0..c {
                for y in y0..y0 + CUTOUT_SIDE {
                    for x in x0..x0 + CUTOUT_SIDE {
                        out[(ch * h + y) * w + x] = 0.0;
                    }
                }
            }
        }
        out
    }
}
