//! Stitched pair construction, flip/swap variants, and cropping.

use rand::Rng;

use super::image::{resize_bilinear, ImageKey, PersonImage};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Which of the 8 flip/swap variants a stitched pair is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Variant {
    pub flip_left: bool,
    pub flip_right: bool,
    pub swapped: bool,
}

impl Variant {
    pub const CANONICAL: Variant = Variant {
        flip_left: false,
        flip_right: false,
        swapped: false,
    };

    /// All 8 variants in lexicographic `(flip_left, flip_right, swapped)` order.
    pub fn all() -> [Variant; 8] {
        std::array::from_fn(|i| Variant {
            flip_left: i & 4 != 0,
            flip_right: i & 2 != 0,
            swapped: i & 1 != 0,
        })
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Variant {
        Variant {
            flip_left: rng.random_bool(0.5),
            flip_right: rng.random_bool(0.5),
            swapped: rng.random_bool(0.5),
        }
    }
}

/// A square network input made of two resized person images side by side.
#[derive(Debug, Clone, PartialEq)]
pub struct StitchedPair {
    /// `[3, S, S]`
    pub image: Tensor<f32>,
    pub left: ImageKey,
    pub right: ImageKey,
    pub variant: Variant,
}

impl StitchedPair {
    pub fn side(&self) -> usize {
        self.image.shape()[1]
    }
}

pub fn check_side(side: usize) -> Result<()> {
    if side < 16 || side % 2 != 0 {
        return Err(Error::invalid(format!(
            "stitch side must be even and at least 16, got {side}"
        )));
    }
    Ok(())
}

/// Resizes a person image to the `side × side/2` half it occupies in a pair.
pub fn resize_half(img: &PersonImage, side: usize) -> Result<Tensor<f32>> {
    check_side(side)?;
    resize_bilinear(&img.pixels, side, side / 2)
}

/// Concatenates two `[3, S, S/2]` halves into `[3, S, S]`.
pub(crate) fn join_halves(left: &Tensor<f32>, right: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = left.shape();
    if s != right.shape() || s.len() != 3 || s[1] != 2 * s[2] {
        return Err(Error::shape(
            "stitch",
            format!("halves {:?} and {:?} are not both [3, S, S/2]", s, right.shape()),
        ));
    }
    let (c, side, half) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(c * side * side);
    for (lrow, rrow) in left.data().chunks(half).zip(right.data().chunks(half)) {
        out.extend_from_slice(lrow);
        out.extend_from_slice(rrow);
    }
    Tensor::from_vec(&[c, side, side], out)
}

/// Resizes both images to `side × side/2` and places `a` left, `b` right.
pub fn stitch(a: &PersonImage, b: &PersonImage, side: usize) -> Result<StitchedPair> {
    let image = join_halves(&resize_half(a, side)?, &resize_half(b, side)?)?;
    Ok(StitchedPair {
        image,
        left: a.key.clone(),
        right: b.key.clone(),
        variant: Variant::CANONICAL,
    })
}

/// Mirrors each half around its own vertical axis as requested, then exchanges
/// the halves if `swap`. Expects a canonical pair.
pub fn augment_variant(p: &StitchedPair, flip_left: bool, flip_right: bool, swap: bool) -> Result<StitchedPair> {
    if p.variant != Variant::CANONICAL {
        return Err(Error::invalid("augment_variant expects a canonical-order pair"));
    }
    let image = apply_variant(
        &p.image,
        Variant {
            flip_left,
            flip_right,
            swapped: swap,
        },
    );
    let (left, right) = if swap {
        (p.right.clone(), p.left.clone())
    } else {
        (p.left.clone(), p.right.clone())
    };
    Ok(StitchedPair {
        image,
        left,
        right,
        variant: Variant {
            flip_left,
            flip_right,
            swapped: swap,
        },
    })
}

/// Pixel transform of a variant on a `[C, S, S]` canonical stitched image.
pub(crate) fn apply_variant(image: &Tensor<f32>, v: Variant) -> Tensor<f32> {
    if v == Variant::CANONICAL {
        return image.clone();
    }
    let s = image.shape();
    let (c, side) = (s[0], s[1]);
    let half = side / 2;
    let src = image.data();
    let mut out = vec![0.0f32; src.len()];
    for row in 0..c * side {
        let sr = &src[row * side..(row + 1) * side];
        let dr = &mut out[row * side..(row + 1) * side];
        // Source half that lands in each destination half.
        let (dl_src, dl_flip, dr_src, dr_flip) = if v.swapped {
            (half, v.flip_right, 0, v.flip_left)
        } else {
            (0, v.flip_left, half, v.flip_right)
        };
        for (dst_off, src_off, flip) in [(0, dl_src, dl_flip), (half, dr_src, dr_flip)] {
            let s_half = &sr[src_off..src_off + half];
            let d_half = &mut dr[dst_off..dst_off + half];
            if flip {
                d_half.iter_mut().zip(s_half.iter().rev()).for_each(|(d, &x)| *d = x);
            } else {
                d_half.copy_from_slice(s_half);
            }
        }
    }
    Tensor::from_vec(s, out).expect("same shape")
}

fn crop_at(image: &Tensor<f32>, crop: usize, top: usize, left: usize) -> Tensor<f32> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut out = Vec::with_capacity(c * crop * crop);
    for ch in 0..c {
        for y in top..top + crop {
            let start = (ch * h + y) * w + left;
            out.extend_from_slice(&image.data()[start..start + crop]);
        }
    }
    Tensor::from_vec(&[c, crop, crop], out).expect("crop shape")
}

fn check_crop(image: &Tensor<f32>, crop: usize) -> Result<(usize, usize)> {
    let s = image.shape();
    if s.len() != 3 || crop == 0 || crop > s[1] || crop > s[2] {
        return Err(Error::invalid(format!("cannot take a {crop}x{crop} crop of {s:?}")));
    }
    Ok((s[1] - crop, s[2] - crop))
}

/// Crop at an offset drawn uniformly from `[0, S − C]²`.
pub fn random_crop<R: Rng + ?Sized>(image: &Tensor<f32>, crop: usize, rng: &mut R) -> Result<Tensor<f32>> {
    let (max_y, max_x) = check_crop(image, crop)?;
    let top = rng.random_range(0..=max_y);
    let left = rng.random_range(0..=max_x);
    Ok(crop_at(image, crop, top, left))
}

/// Crop at offset `floor((S − C)/2)`.
pub fn central_crop(image: &Tensor<f32>, crop: usize) -> Result<Tensor<f32>> {
    let (max_y, max_x) = check_crop(image, crop)?;
    Ok(crop_at(image, crop, max_y / 2, max_x / 2))
}

/// The 8 flip/swap variants of `stitch(a, b, side)`, each centrally cropped to
/// `crop`, in [`Variant::all`] order.
pub fn test_time_inputs(a: &PersonImage, b: &PersonImage, side: usize, crop: usize) -> Result<Vec<Tensor<f32>>> {
    let pair = stitch(a, b, side)?;
    tta_from_canonical(&pair.image, crop)
}

pub(crate) fn tta_from_canonical(image: &Tensor<f32>, crop: usize) -> Result<Vec<Tensor<f32>>> {
    Variant::all()
        .iter()
        .map(|&v| central_crop(&apply_variant(image, v), crop))
        .collect()
}
