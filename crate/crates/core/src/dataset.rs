//! Dataset ingestion, identity-disjoint splits and a synthetic cross-view generator.
//!
//! On-disk layout: `<root>/cam_<label>/<identity:04>_<index:02>.png`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::image::{ImageKey, PersonImage};
use crate::error::{Error, Result};
use crate::seed;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    File(PathBuf),
    Memory(Tensor<f32>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetEntry {
    pub key: ImageKey,
    pub source: ImageSource,
}

/// Entries sorted by key; pixels are decoded on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetIndex {
    pub name: String,
    entries: Vec<DatasetEntry>,
    cameras: Vec<String>,
}

impl DatasetIndex {
    pub fn new(name: impl Into<String>, mut entries: Vec<DatasetEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Dataset("dataset has no images".into()));
        }
        entries.sort_by(|a, b| a.key.cmp(&b.key));
        if let Some(w) = entries.windows(2).find(|w| w[0].key == w[1].key) {
            return Err(Error::Dataset(format!("duplicate image {}", w[0].key)));
        }
        let cameras: BTreeSet<String> = entries.iter().map(|e| e.key.camera.clone()).collect();
        Ok(DatasetIndex {
            name: name.into(),
            entries,
            cameras: cameras.into_iter().collect(),
        })
    }

    pub fn entries(&self) -> &[DatasetEntry] {
        &self.entries
    }

    pub fn cameras(&self) -> &[String] {
        &self.cameras
    }

    /// Sorted, distinct identities.
    pub fn identities(&self) -> Vec<u32> {
        let ids: BTreeSet<u32> = self.entries.iter().map(|e| e.key.identity).collect();
        ids.into_iter().collect()
    }

    /// Entries restricted to the given identities.
    pub fn subset(&self, identities: &[u32]) -> Result<DatasetIndex> {
        let keep: BTreeSet<u32> = identities.iter().copied().collect();
        let entries = self
            .entries
            .iter()
            .filter(|e| keep.contains(&e.key.identity))
            .cloned()
            .collect();
        DatasetIndex::new(self.name.clone(), entries)
    }

    pub fn load_all(&self) -> Result<Vec<PersonImage>> {
        self.entries.iter().map(load_image).collect()
    }

    /// Writes every image under the standard layout.
    pub fn export(&self, root: impl AsRef<Path>) -> Result<()> {
        let root = root.as_ref();
        for entry in &self.entries {
            let img = load_image(entry)?;
            let dir = root.join(format!("cam_{}", entry.key.camera));
            fs::create_dir_all(&dir)?;
            let path = dir.join(file_name(&entry.key));
            save_png(&img.pixels, &path)?;
        }
        Ok(())
    }
}

fn file_name(key: &ImageKey) -> String {
    format!("{:04}_{:02}.png", key.identity, key.index)
}

/// Indexes `<root>/cam_<label>/<identity>_<index>.png`. Other entries in the
/// root are ignored; inside a camera directory every non-hidden file must
/// match the pattern.
pub fn ingest(root: impl AsRef<Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    let mut entries = Vec::new();
    for dir in sorted_dir(root)? {
        let Some(camera) = dir
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("cam_"))
            .map(str::to_string)
        else {
            continue;
        };
        if !dir.is_dir() || camera.is_empty() {
            continue;
        }
        for path in sorted_dir(&dir)? {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            if name.starts_with('.') {
                continue;
            }
            let (identity, index) = parse_file_name(name)
                .ok_or_else(|| Error::Dataset(format!("malformed image file name {}", path.display())))?;
            entries.push(DatasetEntry {
                key: ImageKey::new(identity, camera.clone(), index),
                source: ImageSource::File(path),
            });
        }
    }
    let name = root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    DatasetIndex::new(name, entries).map_err(|e| match e {
        Error::Dataset(msg) => Error::Dataset(format!("{}: {msg}", root.display())),
        other => other,
    })
}

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths = fs::read_dir(dir)
        .map_err(|e| Error::Dataset(format!("cannot read {}: {e}", dir.display())))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    paths.sort();
    Ok(paths)
}

fn parse_file_name(name: &str) -> Option<(u32, u32)> {
    let stem = name.strip_suffix(".png")?;
    let (id, idx) = stem.split_once('_')?;
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if !digits(id) || !digits(idx) {
        return None;
    }
    Some((id.parse().ok()?, idx.parse().ok()?))
}

/// Decodes an entry to RGB pixels in `[0, 1]`.
pub fn load_image(entry: &DatasetEntry) -> Result<PersonImage> {
    let pixels = match &entry.source {
        ImageSource::Memory(t) => t.clone(),
        ImageSource::File(path) => {
            let decoded = image::open(path).map_err(|source| Error::Image {
                path: path.clone(),
                source,
            })?;
            let rgb = decoded.to_rgb8();
            let (w, h) = (rgb.width() as usize, rgb.height() as usize);
            let raw = rgb.as_raw();
            Tensor::from_fn(&[3, h, w], |i| {
                let (c, p) = (i / (h * w), i % (h * w));
                raw[p * 3 + c] as f32 / 255.0
            })
        }
    };
    PersonImage::new(entry.key.clone(), pixels)
}

fn save_png(pixels: &Tensor<f32>, path: &Path) -> Result<()> {
    let s = pixels.shape();
    let (h, w) = (s[1], s[2]);
    let d = pixels.data();
    let mut buf = Vec::with_capacity(h * w * 3);
    for p in 0..h * w {
        for c in 0..3 {
            buf.push((d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let img = image::RgbImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::shape("save_png", format!("buffer does not fit {h}x{w}")))?;
    img.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Identity-disjoint train/test partition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub train: Vec<u32>,
    pub test: Vec<u32>,
    pub seed: u64,
}

const SPLIT_STREAM: u64 = 0x7370_6c69;

/// Shuffles identities by seed and puts `round(fraction · n)` of them (at
/// least one, at most `n − 1`) in the training part.
pub fn split(index: &DatasetIndex, fraction: f64, seed: u64) -> Result<SplitSpec> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::invalid(format!("split fraction must be in (0, 1), got {fraction}")));
    }
    let mut ids = index.identities();
    if ids.len() < 2 {
        return Err(Error::Dataset(format!("cannot split {} identities", ids.len())));
    }
    ids.shuffle(&mut seed::rng(seed, &[SPLIT_STREAM]));
    let n_train = ((fraction * ids.len() as f64).round() as usize).clamp(1, ids.len() - 1);
    let mut train = ids[..n_train].to_vec();
    let mut test = ids[n_train..].to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok(SplitSpec { train, test, seed })
}

/// Knobs of the synthetic generator. Cameras are `a` (plain rendering) and
/// `b` (shifted, jittered, noisy rendering).
#[derive(Debug, Clone, PartialEq)]
pub struct SynthParams {
    pub n_identities: usize,
    pub images_per_view: usize,
    pub height: usize,
    pub width: usize,
    /// Camera-b brightness factor drawn from `1 ± brightness_shift`.
    pub brightness_shift: f32,
    /// Camera-b hue rotation drawn from `± hue_shift` turns.
    pub hue_shift: f32,
    /// Camera-b figure displacement in pixels, per axis.
    pub jitter: usize,
    /// Standard deviation of camera-b pixel noise.
    pub noise: f32,
    /// Number of random background rectangles per image. With zero clutter
    /// the background is a flat gray shared by both cameras.
    pub clutter: usize,
    /// First identity label; lets two generated domains stay label-disjoint.
    pub first_identity: u32,
    pub seed: u64,
}

impl SynthParams {
    /// The desk benchmark: 64 identities, 2 images per camera, 64×32 pixels.
    pub fn desk() -> Self {
        SynthParams {
            n_identities: 64,
            images_per_view: 2,
            height: 64,
            width: 32,
            brightness_shift: 0.1,
            hue_shift: 0.02,
            jitter: 6,
            noise: 0.02,
            clutter: 2,
            first_identity: 1,
            seed: 1,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.height < 16 || self.width < 8 {
            return Err(Error::invalid(format!(
                "synthetic images must be at least 16x8, got {}x{}",
                self.height, self.width
            )));
        }
        if self.n_identities == 0 || self.images_per_view == 0 {
            return Err(Error::invalid("synthetic dataset needs identities and images"));
        }
        let ranges = [self.brightness_shift, self.hue_shift, self.noise];
        if ranges.iter().any(|v| !v.is_finite() || *v < 0.0) || self.brightness_shift >= 1.0 {
            return Err(Error::invalid("synthetic shift and noise ranges must be finite, non-negative, brightness < 1"));
        }
        Ok(())
    }
}

type Rgb = [f32; 3];

/// The latent appearance of one synthetic person.
#[derive(Debug, Clone, PartialEq)]
struct Appearance {
    skin: Rgb,
    hair: Rgb,
    torso: Rgb,
    /// Horizontal stripes across the torso in this color.
    stripes: Option<Rgb>,
    legs: Rgb,
    sleeves: Rgb,
    shoes: Rgb,
    /// Color and side (`true` = right) of a carried bag.
    bag: Option<(Rgb, bool)>,
    /// Figure width as a fraction of the image width.
    build: f32,
    /// Row fraction where the torso ends and the legs begin.
    waist: f32,
}

fn hsv(h: f32, s: f32, v: f32) -> Rgb {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h6 % 2.0) - 1.0).abs());
    let (r, g, b) = match h6 as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Muted scene color for background clutter, kept away from the clothing palette.
fn random_color<R: Rng>(rng: &mut R) -> Rgb {
    hsv(rng.random(), rng.random_range(0.0..0.25), rng.random_range(0.2..0.9))
}

/// Clothing colors, near the corners of the RGB cube. Each identity wears its
/// own (torso, legs) pair of them, with sleeves in color `(torso + legs) mod 8`,
/// so any two people differ in at least two of the three garments.
const PALETTE: [Rgb; 8] = [
    [0.85, 0.1, 0.1],
    [0.9, 0.85, 0.15],
    [0.15, 0.7, 0.15],
    [0.1, 0.75, 0.8],
    [0.15, 0.25, 0.85],
    [0.8, 0.2, 0.8],
    [0.92, 0.92, 0.92],
    [0.08, 0.08, 0.08],
];

fn jittered(base: Rgb, rng: &mut impl Rng) -> Rgb {
    base.map(|v| (v + rng.random_range(-0.04..0.04)).clamp(0.0, 1.0))
}

fn palette_color<R: Rng>(rng: &mut R) -> Rgb {
    jittered(PALETTE[rng.random_range(0..PALETTE.len())], rng)
}

impl Appearance {
    /// `outfit` indexes the (torso, legs) palette pair.
    fn sample<R: Rng>(rng: &mut R, outfit: usize) -> Self {
        let tone = rng.random_range(0.35..0.9);
        Appearance {
            skin: [tone, tone * 0.8, tone * 0.65],
            hair: hsv(rng.random_range(0.0..0.12), rng.random_range(0.2..0.8), rng.random_range(0.05..0.6)),
            torso: jittered(PALETTE[outfit / PALETTE.len()], rng),
            stripes: rng.random_bool(0.3).then(|| palette_color(rng)),
            legs: jittered(PALETTE[outfit % PALETTE.len()], rng),
            sleeves: jittered(PALETTE[(outfit / PALETTE.len() + outfit) % PALETTE.len()], rng),
            shoes: hsv(0.0, 0.0, rng.random_range(0.05..0.5)),
            bag: rng.random_bool(0.4).then(|| (palette_color(rng), rng.random_bool(0.5))),
            build: rng.random_range(0.45..0.65),
            waist: rng.random_range(0.5..0.6),
        }
    }
}

/// Small per-image pose differences shared by both cameras.
struct Pose {
    dx: f32,
    dy: f32,
    stride: f32,
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<Rgb>,
}

impl Canvas {
    fn new(h: usize, w: usize, fill: Rgb) -> Self {
        Canvas {
            h,
            w,
            px: vec![fill; h * w],
        }
    }

    /// Fills the half-open box `[y0, y1) × [x0, x1)` given in pixels.
    fn rect(&mut self, y0: f32, y1: f32, x0: f32, x1: f32, c: Rgb) {
        let clampy = |v: f32| v.round().clamp(0.0, self.h as f32) as usize;
        let clampx = |v: f32| v.round().clamp(0.0, self.w as f32) as usize;
        for y in clampy(y0)..clampy(y1) {
            for x in clampx(x0)..clampx(x1) {
                self.px[y * self.w + x] = c;
            }
        }
    }

    fn ellipse(&mut self, cy: f32, cx: f32, ry: f32, rx: f32, c: Rgb) {
        for y in 0..self.h {
            for x in 0..self.w {
                let (u, v) = ((y as f32 + 0.5 - cy) / ry, (x as f32 + 0.5 - cx) / rx);
                if u * u + v * v <= 1.0 {
                    self.px[y * self.w + x] = c;
                }
            }
        }
    }

    fn into_tensor(self) -> Tensor<f32> {
        let plane = self.h * self.w;
        let px = self.px;
        Tensor::from_fn(&[3, self.h, self.w], |i| px[i % plane][i / plane].clamp(0.0, 1.0))
    }
}

fn render(app: &Appearance, pose: &Pose, background: &Canvas, offset: (f32, f32)) -> Canvas {
    let (h, w) = (background.h as f32, background.w as f32);
    let mut c = Canvas {
        h: background.h,
        w: background.w,
        px: background.px.clone(),
    };
    let cx = w / 2.0 + pose.dx + offset.1;
    let top = h * 0.04 + pose.dy + offset.0;
    let fig_h = h * 0.92;
    let half = w * app.build / 2.0;

    let head_r = fig_h * 0.08;
    let head_cy = top + head_r;
    c.ellipse(head_cy, cx, head_r, head_r * 0.8, app.skin);
    c.rect(top - 1.0, top + head_r * 0.7, cx - head_r * 0.8, cx + head_r * 0.8, app.hair);

    let torso_top = top + 2.0 * head_r;
    let waist = top + fig_h * app.waist;
    c.rect(torso_top, waist, cx - half, cx + half, app.torso);
    if let Some(s) = app.stripes {
        let band = ((waist - torso_top) / 6.0).max(1.0);
        let mut y = torso_top + band;
        while y + band <= waist {
            c.rect(y, y + band, cx - half, cx + half, s);
            y += 2.0 * band;
        }
    }
    let arm = (w * 0.08).max(1.0);
    c.rect(torso_top + 1.0, waist - 1.0, cx - half - arm, cx - half, app.sleeves);
    c.rect(torso_top + 1.0, waist - 1.0, cx + half, cx + half + arm, app.sleeves);

    let feet = top + fig_h;
    let leg_w = half * 0.8;
    let gap = (half * 0.2).max(1.0) * pose.stride;
    c.rect(waist, feet - 2.0, cx - gap / 2.0 - leg_w, cx - gap / 2.0, app.legs);
    c.rect(waist, feet - 2.0, cx + gap / 2.0, cx + gap / 2.0 + leg_w, app.legs);
    c.rect(feet - 2.0, feet, cx - gap / 2.0 - leg_w, cx + gap / 2.0 + leg_w, app.shoes);

    if let Some((color, right)) = app.bag {
        let bw = w * 0.18;
        let (y0, y1) = (waist - fig_h * 0.12, waist + fig_h * 0.08);
        if right {
            c.rect(y0, y1, cx + half + arm, cx + half + arm + bw, color);
        } else {
            c.rect(y0, y1, cx - half - arm - bw, cx - half - arm, color);
        }
    }
    c
}

fn background<R: Rng>(h: usize, w: usize, clutter: usize, rng: &mut R) -> Canvas {
    if clutter == 0 {
        return Canvas::new(h, w, [0.5; 3]);
    }
    let g = rng.random_range(0.2..0.8);
    let mut c = Canvas::new(h, w, [g, g, g]);
    for _ in 0..clutter {
        let (bh, bw) = (rng.random_range(2..=h / 3), rng.random_range(2..=w / 2));
        let y = rng.random_range(0..h - bh) as f32;
        let x = rng.random_range(0..w - bw) as f32;
        c.rect(y, y + bh as f32, x, x + bw as f32, random_color(rng));
    }
    c
}

/// Rotates colors around the gray axis by `turns` of a full hue circle.
fn hue_rotate(c: Rgb, turns: f32) -> Rgb {
    let (s, co) = (turns * std::f32::consts::TAU).sin_cos();
    let k = 1.0 / 3.0f32;
    let sq = k.sqrt();
    let a = co + (1.0 - co) * k;
    let b = k * (1.0 - co) - sq * s;
    let d = k * (1.0 - co) + sq * s;
    [
        a * c[0] + b * c[1] + d * c[2],
        d * c[0] + a * c[1] + b * c[2],
        b * c[0] + d * c[1] + a * c[2],
    ]
}

const SYNTH_APPEARANCE: u64 = 1;
const SYNTH_POSE: u64 = 2;
const SYNTH_BACKGROUND: u64 = 3;
const SYNTH_CAMERA: u64 = 4;
const SYNTH_OUTFIT: u64 = 5;

/// Renders a synthetic two-camera dataset in memory. A pure function of `p`.
pub fn synth_generate(p: &SynthParams) -> Result<DatasetIndex> {
    p.validate()?;
    let (h, w) = (p.height, p.width);
    let mut entries = Vec::with_capacity(p.n_identities * p.images_per_view * 2);
    // Outfits are dealt without replacement, reshuffling after every full deck.
    let deck = PALETTE.len() * PALETTE.len();
    let mut outfits = Vec::with_capacity(p.n_identities);
    for round in 0..p.n_identities.div_ceil(deck) {
        let mut o: Vec<usize> = (0..deck).collect();
        o.shuffle(&mut seed::rng(p.seed, &[SYNTH_OUTFIT, round as u64]));
        outfits.extend(o);
    }
    for i in 0..p.n_identities {
        let id = p.first_identity + i as u32;
        let app = Appearance::sample(&mut seed::rng(p.seed, &[SYNTH_APPEARANCE, id as u64]), outfits[i]);
        for k in 0..p.images_per_view {
            let path = |stream: u64, cam: u64| [stream, id as u64, k as u64, cam];
            let mut prng = seed::rng(p.seed, &path(SYNTH_POSE, 0));
            let pose = Pose {
                dx: prng.random_range(-1.0..=1.0),
                dy: prng.random_range(-1.0..=1.0),
                stride: prng.random_range(0.6..1.6),
            };
            // With clutter 0 both cameras share the flat background.
            let bg_a = background(h, w, p.clutter, &mut seed::rng(p.seed, &path(SYNTH_BACKGROUND, 0)));
            let bg_b = background(h, w, p.clutter, &mut seed::rng(p.seed, &path(SYNTH_BACKGROUND, 1)));

            let a = render(&app, &pose, &bg_a, (0.0, 0.0)).into_tensor();
            entries.push(DatasetEntry {
                key: ImageKey::new(id, "a", k as u32),
                source: ImageSource::Memory(a),
            });

            let mut crng = seed::rng(p.seed, &path(SYNTH_CAMERA, 1));
            let j = p.jitter as i64;
            let offset = (
                crng.random_range(-j..=j) as f32,
                crng.random_range(-j..=j) as f32,
            );
            let gain = 1.0 + p.brightness_shift * crng.random_range(-1.0f32..=1.0);
            let turns = p.hue_shift * crng.random_range(-1.0f32..=1.0);
            let mut b = render(&app, &pose, &bg_b, offset);
            if p.brightness_shift > 0.0 || p.hue_shift > 0.0 {
                for px in &mut b.px {
                    *px = hue_rotate(*px, turns).map(|v| v * gain);
                }
            }
            if p.noise > 0.0 {
                let normal = Normal::new(0.0f32, p.noise).map_err(|e| Error::invalid(e.to_string()))?;
                for px in &mut b.px {
                    for v in px.iter_mut() {
                        *v += normal.sample(&mut crng);
                    }
                }
            }
            entries.push(DatasetEntry {
                key: ImageKey::new(id, "b", k as u32),
                source: ImageSource::Memory(b.into_tensor()),
            });
        }
    }
    DatasetIndex::new(format!("synth-{}", p.seed), entries)
}
