//! Explicit visual attractiveness features.
//!
//! Seven interpretable measurements computed from a decoded 8-bit RGB image:
//! brightness, saturation, sharpness, entropy, RGB contrast, colorfulness and
//! naturalness. Every kernel is either a per-pixel statistic or uses a
//! symmetric window, so all features are invariant under image flips.

use std::path::Path;

use crate::error::{Error, Result};

/// Rec.601 luma weights.
const LUMA_R: f64 = 0.299;
const LUMA_G: f64 = 0.587;
const LUMA_B: f64 = 0.114;

const SHARPNESS_EPS: f64 = 1e-6;

pub const EVF_DIM: usize = 7;

pub const EVF_NAMES: [&str; EVF_DIM] = [
    "brightness",
    "saturation",
    "sharpness",
    "entropy",
    "rgb_contrast",
    "colorfulness",
    "naturalness",
];

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    pixels: Vec<Rgb>,
}

impl RgbImage {
    /// `pixels` is row-major and must hold exactly `width * height` entries.
    pub fn new(width: u32, height: u32, pixels: Vec<Rgb>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!("{width}x{height} image")));
        }
        if pixels.len() != width as usize * height as usize {
            return Err(Error::InvalidImage(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        Ok(RgbImage {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: u32, height: u32, pixel: Rgb) -> Result<Self> {
        Self::new(width, height, vec![pixel; width as usize * height as usize])
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Rgb) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, pixels)
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> Rgb {
        self.pixels[y as usize * self.width as usize + x as usize]
    }

    pub fn flip_horizontal(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.pixel(self.width - 1 - x, y)
        })
        .expect("same dimensions")
    }

    pub fn flip_vertical(&self) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            self.pixel(x, self.height - 1 - y)
        })
        .expect("same dimensions")
    }
}

/// Decodes a PNG or JPEG file; alpha is composited over white.
pub fn decode_image(path: &Path) -> Result<RgbImage> {
    let decoded = image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::InvalidImage(format!("{}: {e}", path.display())))?;
    let rgba = decoded.to_rgba8();
    let (width, height) = rgba.dimensions();
    let pixels = rgba
        .pixels()
        .map(|p| {
            let [r, g, b, a] = p.0;
            let over_white = |c: u8| -> u8 {
                let a = a as u32;
                ((c as u32 * a + 255 * (255 - a) + 127) / 255) as u8
            };
            [over_white(r), over_white(g), over_white(b)]
        })
        .collect();
    RgbImage::new(width, height, pixels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvfVector {
    pub brightness: f64,
    pub saturation: f64,
    pub sharpness: f64,
    pub entropy: f64,
    pub rgb_contrast: f64,
    pub colorfulness: f64,
    pub naturalness: f64,
}

impl EvfVector {
    pub fn to_array(&self) -> [f64; EVF_DIM] {
        [
            self.brightness,
            self.saturation,
            self.sharpness,
            self.entropy,
            self.rgb_contrast,
            self.colorfulness,
            self.naturalness,
        ]
    }
}

pub fn luma(pixel: Rgb) -> f64 {
    let [r, g, b] = pixel;
    (LUMA_R * r as f64 + LUMA_G * g as f64 + LUMA_B * b as f64) / 255.0
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in values {
        sum += v;
        n += 1;
    }
    sum / n as f64
}

/// Population mean and standard deviation of integer samples, from exact
/// integer moments (no rounding until the final division).
fn int_mean_std(values: impl Iterator<Item = i64>) -> (f64, f64) {
    let (mut n, mut sum, mut sq) = (0i128, 0i128, 0i128);
    for v in values {
        let v = v as i128;
        n += 1;
        sum += v;
        sq += v * v;
    }
    let nf = n as f64;
    let var = (n * sq - sum * sum) as f64 / (nf * nf);
    (sum as f64 / nf, var.sqrt())
}

pub fn brightness(img: &RgbImage) -> f64 {
    mean(img.pixels.iter().map(|&p| luma(p)))
}

/// HSV saturation of one pixel, in [0, 1].
fn pixel_saturation(pixel: Rgb) -> f64 {
    let max = *pixel.iter().max().unwrap();
    let min = *pixel.iter().min().unwrap();
    if max == 0 {
        0.0
    } else {
        (max - min) as f64 / max as f64
    }
}

pub fn saturation(img: &RgbImage) -> f64 {
    mean(img.pixels.iter().map(|&p| pixel_saturation(p)))
}

/// Mean luma-normalized absolute 4-neighbour Laplacian over interior pixels.
pub fn sharpness(img: &RgbImage) -> Result<f64> {
    let (w, h) = (img.width as usize, img.height as usize);
    if w < 3 || h < 3 {
        return Err(Error::ImageTooSmall {
            width: img.width,
            height: img.height,
        });
    }
    let y: Vec<f64> = img.pixels.iter().map(|&p| luma(p)).collect();
    let at = |x: usize, r: usize| y[r * w + x];
    let mut sum = 0.0;
    for r in 1..h - 1 {
        for x in 1..w - 1 {
            let centre = at(x, r);
            // Pair opposite neighbours so either flip gives the same rounding.
            let vertical = at(x, r - 1) + at(x, r + 1);
            let horizontal = at(x - 1, r) + at(x + 1, r);
            let laplacian = vertical + horizontal - 4.0 * centre;
            let mut window = 0.0;
            for dr in [r - 1, r + 1] {
                window += at(x - 1, dr) + at(x + 1, dr);
            }
            window += vertical + horizontal + centre;
            let mu = window / 9.0;
            sum += laplacian.abs() / mu.max(SHARPNESS_EPS);
        }
    }
    Ok(sum / ((w - 2) * (h - 2)) as f64)
}

/// Shannon entropy of the 256-bin luma histogram, normalized by 8 bits.
pub fn entropy(img: &RgbImage) -> f64 {
    let mut hist = [0usize; 256];
    for &p in &img.pixels {
        let level = (luma(p) * 255.0).round().clamp(0.0, 255.0) as usize;
        hist[level] += 1;
    }
    let n = img.pixels.len() as f64;
    let bits: f64 = hist
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum();
    // -0.0 for single-bin histograms
    (bits / 8.0).abs()
}

/// Pooled standard deviation of every channel value, scaled to [0, 1].
pub fn rgb_contrast(img: &RgbImage) -> f64 {
    let channels = img.pixels.iter().flat_map(|p| p.iter().map(|&c| c as i64));
    int_mean_std(channels).1 / 255.0
}

/// Hasler–Süsstrunk opponent-channel colorfulness, scaled by 1/255.
pub fn colorfulness(img: &RgbImage) -> f64 {
    let rg = img.pixels.iter().map(|&[r, g, _]| r as i64 - g as i64);
    // yb doubled to stay integral
    let yb2 = img
        .pixels
        .iter()
        .map(|&[r, g, b]| r as i64 + g as i64 - 2 * b as i64);
    let (mu_rg, sd_rg) = int_mean_std(rg);
    let (mu_yb, sd_yb) = int_mean_std(yb2);
    let (mu_yb, sd_yb) = (mu_yb / 2.0, sd_yb / 2.0);
    ((sd_rg * sd_rg + sd_yb * sd_yb).sqrt() + 0.3 * (mu_rg * mu_rg + mu_yb * mu_yb).sqrt()) / 255.0
}

/// Hue in degrees on [0, 360), saturation and value of one pixel.
pub fn rgb_to_hsv(pixel: Rgb) -> (f64, f64, f64) {
    let [r, g, b] = pixel.map(|c| c as f64);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let chroma = max - min;
    let value = max / 255.0;
    let sat = if max == 0.0 { 0.0 } else { chroma / max };
    if chroma == 0.0 {
        return (0.0, sat, value);
    }
    let hue = if max == r {
        60.0 * ((g - b) / chroma)
    } else if max == g {
        60.0 * ((b - r) / chroma) + 120.0
    } else {
        60.0 * ((r - g) / chroma) + 240.0
    };
    let hue = if hue < 0.0 { hue + 360.0 } else { hue };
    (hue, sat, value)
}

/// Hue bands of the colour naturalness index.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaturalGroup {
    Skin,
    Grass,
    Sky,
}

impl NaturalGroup {
    const ALL: [NaturalGroup; 3] = [NaturalGroup::Skin, NaturalGroup::Grass, NaturalGroup::Sky];

    /// Half-open hue range in degrees.
    fn hue_range(self) -> (f64, f64) {
        match self {
            NaturalGroup::Skin => (25.0, 70.0),
            NaturalGroup::Grass => (95.0, 135.0),
            NaturalGroup::Sky => (185.0, 260.0),
        }
    }

    /// (optimal mean saturation, spread)
    fn optimum(self) -> (f64, f64) {
        match self {
            NaturalGroup::Skin => (0.76, 0.52),
            NaturalGroup::Grass => (0.81, 0.53),
            NaturalGroup::Sky => (0.43, 0.22),
        }
    }

    fn classify(hue: f64) -> Option<NaturalGroup> {
        Self::ALL.into_iter().find(|g| {
            let (lo, hi) = g.hue_range();
            hue >= lo && hue < hi
        })
    }

    /// Naturalness of a group whose qualifying pixels have mean saturation `mean_sat`.
    pub fn score(self, mean_sat: f64) -> f64 {
        let (opt, spread) = self.optimum();
        let z = (mean_sat - opt) / spread;
        (-0.5 * z * z).exp()
    }
}

pub fn naturalness(img: &RgbImage) -> f64 {
    let mut counts = [0usize; 3];
    let mut sat_sums = [0.0f64; 3];
    for &p in &img.pixels {
        let (hue, sat, value) = rgb_to_hsv(p);
        if !(0.2..=0.8).contains(&value) || sat <= 0.1 {
            continue;
        }
        if let Some(group) = NaturalGroup::classify(hue) {
            let g = group as usize;
            counts[g] += 1;
            sat_sums[g] += sat;
        }
    }
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let weighted: f64 = NaturalGroup::ALL
        .iter()
        .filter(|g| counts[**g as usize] > 0)
        .map(|&g| {
            let n = counts[g as usize] as f64;
            n * g.score(sat_sums[g as usize] / n)
        })
        .sum();
    weighted / total as f64
}

pub fn extract_evf(img: &RgbImage) -> Result<EvfVector> {
    let sharpness = sharpness(img)?;
    Ok(EvfVector {
        brightness: brightness(img),
        saturation: saturation(img),
        sharpness,
        entropy: entropy(img),
        rgb_contrast: rgb_contrast(img),
        colorfulness: colorfulness(img),
        naturalness: naturalness(img),
    })
}
