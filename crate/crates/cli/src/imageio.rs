//! Grayscale images as matrices with values in `[0, 1]` (row = image row).

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};
use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};

use sdwsn_core::{textio, Mat};

/// Reads a PGM (`P2`/`P5`, any maxval) or a delimited-text matrix. PGM samples
/// are divided by their maxval (to 8-bit precision when maxval < 255); text
/// values are kept when already in `[0, 1]` and min–max rescaled otherwise.
pub fn read_image(path: &Path) -> Result<Mat> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        let img = image::load_from_memory_with_format(&bytes, ImageFormat::Pnm)
            .with_context(|| format!("decoding {}", path.display()))?
            .into_luma16();
        let (w, h) = img.dimensions();
        return Ok(Mat::from_fn(h as usize, w as usize, |r, c| {
            f64::from(img.get_pixel(c as u32, r as u32).0[0]) / 65535.0
        }));
    }
    let text = String::from_utf8(bytes).with_context(|| format!("{} is neither PGM nor text", path.display()))?;
    let m = textio::parse_matrix(&text).with_context(|| format!("parsing {}", path.display()))?;
    ensure!(m.nrows() > 0 && m.ncols() > 0, "{} holds an empty matrix", path.display());
    Ok(normalize(m))
}

fn normalize(m: Mat) -> Mat {
    let (lo, hi) = (m.min(), m.max());
    if lo >= 0.0 && hi <= 1.0 {
        m
    } else if hi > lo {
        m.map(|v| (v - lo) / (hi - lo))
    } else {
        Mat::zeros(m.nrows(), m.ncols())
    }
}

/// Binary 8-bit PGM; values are clamped to `[0, 1]`.
pub fn write_pgm(path: &Path, m: &Mat) -> Result<()> {
    let (h, w) = m.shape();
    let mut buf = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            buf.push((m[(r, c)].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&buf, w as u32, h as u32, ExtendedColorType::L8)?;
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Deterministic `size × size` test scene: lit background, a disc, a bar, a
/// textured patch and a soft diagonal edge.
pub fn synthetic(size: usize) -> Mat {
    let n = size.max(1) as f64;
    Mat::from_fn(size, size, |r, c| {
        let (y, x) = ((r as f64 + 0.5) / n, (c as f64 + 0.5) / n);
        let mut v = 0.25 + 0.35 * x + 0.15 * (1.0 - y);
        let d = ((x - 0.35).powi(2) + (y - 0.4).powi(2)).sqrt();
        v += 0.45 * (1.0 / (1.0 + ((d - 0.18) * 60.0).exp()));
        if (0.65..0.8).contains(&x) && (0.2..0.85).contains(&y) {
            v -= 0.35;
        }
        if x < 0.3 && y > 0.7 {
            v += 0.12 * (2.0 * PI * 9.0 * x).sin() * (2.0 * PI * 7.0 * y).cos();
        }
        v -= 0.2 / (1.0 + ((x + y - 1.6) * -40.0).exp());
        v.clamp(0.0, 1.0)
    })
}
