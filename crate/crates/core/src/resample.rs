//! Degradation and preliminary spatial up-sampling: bicubic resizing, light
//! field down-sampling, angular decimation and training-patch extraction.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::lf::{EpiVolume, Image, LightField4D, ViewIndex};
use crate::tensor::{read_container, write_container, Container, Tensor};

/// Keys' cubic convolution kernel with `a = -0.5`.
pub fn keys_cubic(x: f64) -> f64 {
    const A: f64 = -0.5;
    let t = x.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// Per-output-sample taps `(input index, weight)` for resampling one axis.
///
/// Half-pixel centers: output `u` samples input coordinate `(u + ½)/s − ½`.
/// When shrinking with antialiasing the kernel is stretched by `1/s`.
/// Out-of-range taps are clamped to the edge.
fn axis_taps(in_len: usize, out_len: usize, antialias: bool) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    let (stretch, width) = if scale < 1.0 && antialias {
        (scale, 4.0 / scale)
    } else {
        (1.0, 4.0)
    };
    let taps_per = width.ceil() as i64 + 2;
    (0..out_len)
        .map(|u| {
            let x = (u as f64 + 0.5) / scale - 0.5;
            let left = (x - width / 2.0).floor() as i64;
            let mut taps: Vec<(usize, f64)> = (0..taps_per)
                .map(|k| {
                    let idx = left + k;
                    let w = stretch * keys_cubic(stretch * (x - idx as f64));
                    (idx.clamp(0, in_len as i64 - 1) as usize, w)
                })
                .filter(|&(_, w)| w != 0.0)
                .collect();
            let sum: f64 = taps.iter().map(|t| t.1).sum();
            taps.iter_mut().for_each(|t| t.1 /= sum);
            taps
        })
        .collect()
}

/// Bicubic resize to `out_h × out_w`, output clipped to `[0, 1]`.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize, antialias: bool) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        contract!("resize target must be non-empty, got {out_h}×{out_w}");
    }
    let (h, w, ch) = (img.height, img.width, img.channels);
    let tx = axis_taps(w, out_w, antialias);
    let ty = axis_taps(h, out_h, antialias);

    let mut rows = vec![0.0f64; h * out_w * ch];
    for y in 0..h {
        for (u, taps) in tx.iter().enumerate() {
            for c in 0..ch {
                rows[(y * out_w + u) * ch + c] = taps
                    .iter()
                    .map(|&(i, wt)| wt * img.data[(y * w + i) * ch + c] as f64)
                    .sum();
            }
        }
    }
    let mut out = vec![0.0f32; out_h * out_w * ch];
    for (v, taps) in ty.iter().enumerate() {
        for u in 0..out_w {
            for c in 0..ch {
                let s: f64 = taps
                    .iter()
                    .map(|&(j, wt)| wt * rows[(j * out_w + u) * ch + c])
                    .sum();
                out[(v * out_w + u) * ch + c] = s.clamp(0.0, 1.0) as f32;
            }
        }
    }
    Image::new(out_h, out_w, ch, out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DegradeSpec {
    pub spatial_factor: usize,
    pub angular_decimate: bool,
    #[serde(default = "yes")]
    pub antialias: bool,
}

fn yes() -> bool {
    true
}

impl DegradeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.spatial_factor == 0 {
            contract!("spatial factor must be at least 1");
        }
        Ok(())
    }
}

/// Bicubic down-sampling of every view by `factor`.
pub fn lf_spatial_downsample(lf: &LightField4D, factor: usize, antialias: bool) -> Result<LightField4D> {
    if factor == 0 || lf.height() % factor != 0 || lf.width() % factor != 0 {
        contract!(
            "{}×{} views are not divisible by factor {factor}",
            lf.height(),
            lf.width()
        );
    }
    let (oh, ow) = (lf.height() / factor, lf.width() / factor);
    lf.map_views(|v| bicubic_resize(v, oh, ow, antialias))
}

/// Bicubic up-sampling of every view by `factor`.
pub fn lf_spatial_upsample(lf: &LightField4D, factor: usize) -> Result<LightField4D> {
    if factor == 0 {
        contract!("spatial factor must be at least 1");
    }
    let (oh, ow) = (lf.height() * factor, lf.width() * factor);
    lf.map_views(|v| bicubic_resize(v, oh, ow, false))
}

/// Indices kept by angular decimation of an odd extent: the even ones.
pub fn decimated_indices(extent: usize) -> Result<Vec<usize>> {
    if extent % 2 == 0 {
        contract!("angular decimation needs an odd extent, got {extent}");
    }
    Ok((0..extent).step_by(2).collect())
}

/// Drops every view with an odd `ρ` or `τ` (9×9 → 5×5).
pub fn angular_decimate(lf: &LightField4D) -> Result<LightField4D> {
    let rhos = decimated_indices(lf.a_rho())?;
    let taus = decimated_indices(lf.a_tau())?;
    lf.select_views(&rhos, &taus)
}

pub fn degrade(lf: &LightField4D, spec: &DegradeSpec) -> Result<LightField4D> {
    spec.validate()?;
    let mut out = if spec.spatial_factor > 1 {
        lf_spatial_downsample(lf, spec.spatial_factor, spec.antialias)?
    } else {
        lf.clone()
    };
    if spec.angular_decimate {
        out = angular_decimate(&out)?;
    }
    Ok(out)
}

/// Where the preliminary spatial up-sampling of a volume comes from.
#[derive(Clone, Copy, Debug)]
pub enum PssrMethod<'a> {
    Bicubic,
    /// A volume already up-sampled elsewhere (e.g. by an external SISR model).
    External(&'a EpiVolume),
}

/// Up-samples each angular view of `vol` spatially by `factor`.
pub fn pssr_volume(vol: &EpiVolume, factor: usize, method: PssrMethod<'_>) -> Result<EpiVolume> {
    if factor == 0 {
        contract!("spatial factor must be at least 1");
    }
    let [s1, a, s2] = vol.dims();
    let target = [s1 * factor, a, s2 * factor];
    match method {
        PssrMethod::External(ext) => {
            if ext.dims() != target || ext.orientation != vol.orientation {
                contract!(
                    "external volume is {:?} {:?}, expected {:?} {:?}",
                    ext.orientation,
                    ext.dims(),
                    vol.orientation,
                    target
                );
            }
            Ok(ext.clone())
        }
        PssrMethod::Bicubic if factor == 1 => Ok(vol.clone()),
        PssrMethod::Bicubic => {
            let (h, w) = vol.view_dims();
            let views = (0..a)
                .map(|j| bicubic_resize(&vol.view(j)?, h * factor, w * factor, false))
                .collect::<Result<Vec<_>>>()?;
            EpiVolume::from_views(&views, vol.orientation, vol.fixed_index)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchSpec {
    pub size: usize,
    pub stride: usize,
    /// Patches whose central view has a luma standard deviation below this are skipped.
    pub plain_reject_threshold: f32,
}

impl Default for PatchSpec {
    fn default() -> Self {
        Self {
            size: 48,
            stride: 16,
            plain_reject_threshold: 0.02,
        }
    }
}

/// A 4D training patch and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub scene: String,
    pub y: usize,
    pub x: usize,
    pub lf: LightField4D,
}

/// Window origins `0, stride, 2·stride, …` that fit a window of `size`.
pub fn window_positions(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    if extent < size {
        return Vec::new();
    }
    (0..=extent - size).step_by(stride).collect()
}

fn std_dev(values: &[f32]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().map(|&v| v as f64).sum::<f64>() / n;
    (values.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Slides a `size × size` spatial window with `stride` over a single-channel
/// light field, skipping plain (texture-less) windows.
pub fn extract_training_patches(lf: &LightField4D, spec: &PatchSpec, scene: &str) -> Result<Vec<Patch>> {
    if lf.channels() != 1 {
        contract!("training patches are cut from the Y channel only");
    }
    if spec.stride == 0 || spec.size < spec.stride {
        contract!("patch spec needs size ≥ stride > 0, got {spec:?}");
    }
    let centre = ViewIndex::new(lf.a_rho() / 2, lf.a_tau() / 2);
    let mut patches = Vec::new();
    for y in window_positions(lf.height(), spec.size, spec.stride) {
        for x in window_positions(lf.width(), spec.size, spec.stride) {
            let p = lf.crop_spatial(y, x, spec.size, spec.size)?;
            let c = p.extract_sai(centre)?;
            if std_dev(&c.data) < spec.plain_reject_threshold as f64 {
                continue;
            }
            patches.push(Patch {
                scene: scene.to_string(),
                y,
                x,
                lf: p,
            });
        }
    }
    Ok(patches)
}

#[derive(Serialize, Deserialize)]
struct PatchIndexEntry {
    file: String,
    scene: String,
    y: usize,
    x: usize,
}

/// Writes each patch as a tensor container `patch_NNNNN.lfvw` holding a
/// `(Aρ, Aτ, H, W)` tensor, plus `index.json` with scene ids and offsets.
pub fn save_patch_set(dir: &Path, patches: &[Patch]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut index = Vec::with_capacity(patches.len());
    for (i, p) in patches.iter().enumerate() {
        if p.lf.channels() != 1 {
            contract!("patch sets hold single-channel patches");
        }
        let file = format!("patch_{i:05}.lfvw");
        let t = Tensor::new(
            vec![p.lf.a_rho(), p.lf.a_tau(), p.lf.height(), p.lf.width()],
            p.lf.data().to_vec(),
        )?;
        let mut c = Container::new();
        c.push_tensor("patch", &t);
        write_container(&dir.join(&file), &c)?;
        index.push(PatchIndexEntry {
            file,
            scene: p.scene.clone(),
            y: p.y,
            x: p.x,
        });
    }
    std::fs::write(dir.join("index.json"), serde_json::to_vec_pretty(&index)?)?;
    Ok(())
}

pub fn load_patch_set(dir: &Path) -> Result<Vec<Patch>> {
    let index_path = dir.join("index.json");
    let index: Vec<PatchIndexEntry> = serde_json::from_slice(&std::fs::read(&index_path)?)?;
    index
        .into_iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let t = read_container(&path)?.tensor("patch")?;
            let [ar, at, h, w] = *t.shape() else {
                return Err(Error::Format {
                    path,
                    msg: format!("patch tensor has shape {:?}", t.shape()),
                });
            };
            let lf = LightField4D::new(h, w, ar, at, crate::lf::ColorSpace::Y, t.into_data())?;
            Ok(Patch {
                scene: e.scene,
                y: e.y,
                x: e.x,
                lf,
            })
        })
        .collect()
}
