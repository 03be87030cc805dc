//! Light fields on disk: a directory of PNG sub-aperture images named
//! `view_RR_TT.png` (0-based `ρ`, `τ`, zero-padded) plus `manifest.json`.

use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::lf::{ColorSpace, Image, LightField4D, ViewIndex};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Angular {
    pub rho: usize,
    pub tau: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub width: usize,
    pub height: usize,
    pub angular: Angular,
    pub bit_depth: u8,
    pub color_space: ColorSpace,
    /// Free-form provenance (generator parameters, degradation spec, config echo).
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Manifest {
    pub fn for_lf(lf: &LightField4D, bit_depth: u8) -> Self {
        Self {
            width: lf.width(),
            height: lf.height(),
            angular: Angular {
                rho: lf.a_rho(),
                tau: lf.a_tau(),
            },
            bit_depth,
            color_space: lf.color_space(),
            extra: Map::new(),
        }
    }
}

pub fn view_file_name(rho: usize, tau: usize) -> String {
    format!("view_{rho:02}_{tau:02}.png")
}

/// Round-half-up quantization of a `[0, 1]` value to `bits` bits.
pub fn quantize(v: f32, bits: u8) -> u16 {
    let max = ((1u32 << bits) - 1) as f64;
    ((v.clamp(0.0, 1.0) as f64) * max + 0.5).floor() as u16
}

fn fmt_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn encode_view(img: &Image, bits: u8) -> Result<DynamicImage> {
    let (w, h) = (img.width as u32, img.height as u32);
    let q: Vec<u16> = img.data.iter().map(|&v| quantize(v, bits)).collect();
    let dynimg = match (img.channels, bits) {
        (1, 8) => DynamicImage::ImageLuma8(
            ImageBuffer::<Luma<u8>, _>::from_raw(w, h, q.iter().map(|&v| v as u8).collect()).expect("size"),
        ),
        (1, 16) => DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, q).expect("size")),
        (3, 8) => DynamicImage::ImageRgb8(
            ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, q.iter().map(|&v| v as u8).collect()).expect("size"),
        ),
        (3, 16) => DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, q).expect("size")),
        (c, b) => {
            return Err(Error::Contract(format!(
                "cannot encode {c}-channel view at {b} bits"
            )))
        }
    };
    Ok(dynimg)
}

/// Writes `lf` (values clipped to `[0, 1]` and quantized) to `dir`.
pub fn save_lf(dir: &Path, lf: &LightField4D, bit_depth: u8, extra: Map<String, Value>) -> Result<Manifest> {
    if bit_depth != 8 && bit_depth != 16 {
        return Err(Error::Contract(format!("bit depth must be 8 or 16, got {bit_depth}")));
    }
    std::fs::create_dir_all(dir)?;
    for r in 0..lf.a_rho() {
        for t in 0..lf.a_tau() {
            let view = lf.extract_sai(ViewIndex::new(r, t))?;
            encode_view(&view, bit_depth)?.save(dir.join(view_file_name(r, t)))?;
        }
    }
    let mut manifest = Manifest::for_lf(lf, bit_depth);
    manifest.extra = extra;
    std::fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let bytes = std::fs::read(&path)?;
    serde_json::from_slice(&bytes).map_err(|e| fmt_err(&path, e.to_string()))
}

/// Loads a light-field directory, validating that the full `Aρ × Aτ` grid of
/// views is present and consistent with the manifest.
pub fn load_lf(dir: &Path) -> Result<(LightField4D, Manifest)> {
    let manifest = read_manifest(dir)?;
    let Manifest {
        width,
        height,
        angular: Angular { rho, tau },
        bit_depth,
        color_space,
        ..
    } = manifest;
    if bit_depth != 8 && bit_depth != 16 {
        return Err(fmt_err(&dir.join(MANIFEST), format!("unsupported bit depth {bit_depth}")));
    }
    let missing: Vec<PathBuf> = (0..rho)
        .flat_map(|r| (0..tau).map(move |t| dir.join(view_file_name(r, t))))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        return Err(fmt_err(
            dir,
            format!("{} of {} views missing, first {:?}", missing.len(), rho * tau, missing[0]),
        ));
    }
    let channels = color_space.channels();
    let mut views = Vec::with_capacity(rho * tau);
    for r in 0..rho {
        for t in 0..tau {
            let path = dir.join(view_file_name(r, t));
            let img = image::open(&path)?;
            if (img.width() as usize, img.height() as usize) != (width, height) {
                return Err(fmt_err(
                    &path,
                    format!("view is {}×{}, manifest says {width}×{height}", img.width(), img.height()),
                ));
            }
            let max = ((1u32 << bit_depth) - 1) as f32;
            let data: Vec<f32> = match channels {
                1 => img.to_luma16().into_raw().into_iter().map(|v| scale_back(v, bit_depth, max)).collect(),
                _ => img.to_rgb16().into_raw().into_iter().map(|v| scale_back(v, bit_depth, max)).collect(),
            };
            views.push(Image::new(height, width, channels, data)?);
        }
    }
    let lf = LightField4D::from_sais(&views, rho, tau, color_space)?;
    Ok((lf, manifest))
}

fn scale_back(v16: u16, bits: u8, max: f32) -> f32 {
    // `image` widens 8-bit samples to 16 bits by replication (v * 257).
    let v = if bits == 8 { v16 / 257 } else { v16 };
    v as f32 / max
}
