use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `(identity, camera, index)`, unique within a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ImageKey {
    pub identity: u32,
    pub camera: String,
    pub index: u32,
}

impl ImageKey {
    pub fn new(identity: u32, camera: impl Into<String>, index: u32) -> Self {
        ImageKey {
            identity,
            camera: camera.into(),
            index,
        }
    }
}

/// `identity/camera/index`, e.g. `0012/a/01`.
impl fmt::Display for ImageKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}/{}/{:02}", self.identity, self.camera, self.index)
    }
}

impl std::str::FromStr for ImageKey {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("image label `{s}` is not identity/camera/index"));
        let mut parts = s.trim().split('/');
        let (Some(id), Some(cam), Some(idx), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(bad());
        };
        if cam.is_empty() {
            return Err(bad());
        }
        Ok(ImageKey {
            identity: id.parse().map_err(|_| bad())?,
            camera: cam.to_string(),
            index: idx.parse().map_err(|_| bad())?,
        })
    }
}

/// One person image: `[3, h, w]` RGB pixels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PersonImage {
    pub key: ImageKey,
    pub pixels: Tensor<f32>,
}

pub const MIN_EXTENT: usize = 8;

impl PersonImage {
    pub fn new(key: ImageKey, pixels: Tensor<f32>) -> Result<Self> {
        let s = pixels.shape();
        if s.len() != 3 || s[0] != 3 || s[1] < MIN_EXTENT || s[2] < MIN_EXTENT {
            return Err(Error::invalid(format!(
                "person image {key} must be [3, h, w] with h, w >= {MIN_EXTENT}, got {s:?}"
            )));
        }
        if key.camera.is_empty() {
            return Err(Error::invalid("camera label must be non-empty"));
        }
        Ok(PersonImage { key, pixels })
    }

    pub fn identity(&self) -> u32 {
        self.key.identity
    }

    pub fn camera(&self) -> &str {
        &self.key.camera
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[2]
    }
}

/// Bilinear resize of a `[C, H, W]` image with half-pixel centers. A resize to
/// the same extents is the identity.
pub fn resize_bilinear(image: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let s = image.shape();
    if s.len() != 3 || s[1] == 0 || s[2] == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::shape(
            "resize",
            format!("cannot resize {s:?} to {out_h}x{out_w}"),
        ));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    if (h, w) == (out_h, out_w) {
        return Ok(image.clone());
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let x = image.data();
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, wy) in &ys {
            for &(x0, x1, wx) in &xs {
                let top = plane[y0 * w + x0] * (1.0 - wx) + plane[y0 * w + x1] * wx;
                let bottom = plane[y1 * w + x0] * (1.0 - wx) + plane[y1 * w + x1] * wx;
                out.push(top * (1.0 - wy) + bottom * wy);
            }
        }
    }
    Tensor::from_vec(&[c, out_h, out_w], out)
}

/// Mean of each RGB channel over a set of images.
pub fn channel_mean(images: &[PersonImage]) -> [f64; 3] {
    let mut sum = [0.0f64; 3];
    let mut count = 0usize;
    for img in images {
        let plane = img.height() * img.width();
        for (c, chunk) in img.pixels.data().chunks(plane).enumerate() {
            sum[c] += chunk.iter().map(|&v| v as f64).sum::<f64>();
        }
        count += plane;
    }
    if count == 0 {
        return [0.0; 3];
    }
    sum.map(|s| s / count as f64)
}
