//! Volume-based super-resolution of whole light fields.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::evrn::EvrnWeights;
use crate::lf::{rgb_to_ycbcr, ycbcr_to_rgb, AngularAxis, ColorSpace, EpiVolume, LightField4D};
use crate::nvs::{pasr_volume, NvsWeights, PasrMethod};
use crate::resample::{pssr_volume, PssrMethod};

/// A volume-to-volume transformation applied by [`vsr`].
pub type VolumeSrFn<'a> = dyn Fn(&EpiVolume) -> Result<EpiVolume> + Sync + 'a;

/// Slices `lf` along `axis`, maps every volume through `f` and merges the
/// results back. Emits one JSON log line per volume.
pub fn vsr(lf: &LightField4D, axis: AngularAxis, f: &VolumeSrFn<'_>) -> Result<LightField4D> {
    let volumes = lf.slice(axis)?;
    let out: Vec<EpiVolume> = volumes
        .par_iter()
        .map(|v| {
            let t = Instant::now();
            let r = f(v)?;
            log::info!(
                "{}",
                serde_json::json!({
                    "event": "volume",
                    "axis": axis,
                    "index": v.fixed_index,
                    "in": v.dims(),
                    "out": r.dims(),
                    "ms": t.elapsed().as_secs_f64() * 1e3,
                })
            );
            Ok(r)
        })
        .collect::<Result<_>>()?;
    if out.iter().any(|v| v.dims() != out[0].dims()) {
        contract!("volume function produced inconsistent shapes along {axis:?}");
    }
    LightField4D::merge(&out, axis)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SrMode {
    Ssr,
    Asr,
    Assr,
}

impl std::str::FromStr for SrMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ssr" => Ok(SrMode::Ssr),
            "asr" => Ok(SrMode::Asr),
            "assr" => Ok(SrMode::Assr),
            other => Err(format!("unknown mode {other:?}")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PssrKind {
    Bicubic,
    /// Spatially up-sampled light field supplied by the caller.
    External,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PasrKind {
    Mean,
    Cnn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SrTask {
    pub mode: SrMode,
    #[serde(default = "one")]
    pub spatial_factor: usize,
    /// Angular up-sampling `A → 2A − 1`.
    #[serde(default)]
    pub angular: bool,
    #[serde(default = "bicubic")]
    pub pssr: PssrKind,
    #[serde(default = "mean")]
    pub pasr: PasrKind,
}

fn one() -> usize {
    1
}
fn bicubic() -> PssrKind {
    PssrKind::Bicubic
}
fn mean() -> PasrKind {
    PasrKind::Mean
}

impl SrTask {
    pub fn ssr(factor: usize) -> Self {
        Self {
            mode: SrMode::Ssr,
            spatial_factor: factor,
            angular: false,
            pssr: PssrKind::Bicubic,
            pasr: PasrKind::Mean,
        }
    }

    pub fn asr(pasr: PasrKind) -> Self {
        Self {
            mode: SrMode::Asr,
            spatial_factor: 1,
            angular: true,
            pssr: PssrKind::Bicubic,
            pasr,
        }
    }

    pub fn assr(factor: usize, pasr: PasrKind) -> Self {
        Self {
            mode: SrMode::Assr,
            spatial_factor: factor,
            angular: true,
            pssr: PssrKind::Bicubic,
            pasr,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.spatial_factor, 1 | 2 | 4) {
            contract!("spatial factor must be 1, 2 or 4, got {}", self.spatial_factor);
        }
        let ok = match self.mode {
            SrMode::Ssr => self.spatial_factor > 1 && !self.angular,
            SrMode::Asr => self.spatial_factor == 1 && self.angular,
            SrMode::Assr => self.spatial_factor > 1 && self.angular,
        };
        if !ok {
            contract!(
                "{:?} is inconsistent with spatial factor {} and angular = {}",
                self.mode,
                self.spatial_factor,
                self.angular
            );
        }
        Ok(())
    }

    /// Output shape `(H, W, Aρ, Aτ)` for an input of the given shape.
    pub fn output_dims(&self, h: usize, w: usize, a_rho: usize, a_tau: usize) -> [usize; 4] {
        let s = self.spatial_factor;
        if self.angular {
            [h * s, w * s, 2 * a_rho - 1, 2 * a_tau - 1]
        } else {
            [h * s, w * s, a_rho, a_tau]
        }
    }
}

/// Networks and external inputs a task may draw on. A missing refiner runs
/// the preliminary stage only.
#[derive(Clone, Copy, Debug, Default)]
pub struct SrModels<'a> {
    pub evrn: Option<&'a EvrnWeights>,
    pub nvs: Option<&'a NvsWeights>,
    /// Spatially up-sampled input for [`PssrKind::External`], same color
    /// space as the input.
    pub external: Option<&'a LightField4D>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SrReport {
    pub task: SrTask,
    pub input_dims: [usize; 5],
    pub output_dims: [usize; 5],
    pub refined: bool,
    pub seconds: f64,
}

fn refine<'a>(evrn: Option<&'a EvrnWeights>) -> impl Fn(EpiVolume) -> Result<EpiVolume> + Sync + 'a {
    move |v| match evrn {
        Some(w) => w.refine(&v),
        None => Ok(v),
    }
}

/// Runs the task on one single-channel plane. `external` is the matching
/// plane of the caller's up-sampled light field, if any.
pub fn super_resolve_plane(
    lf: &LightField4D,
    task: &SrTask,
    models: &SrModels<'_>,
    external: Option<&LightField4D>,
) -> Result<LightField4D> {
    task.validate()?;
    let s = task.spatial_factor;
    let ext_vols = |axis: AngularAxis| -> Result<Option<Vec<EpiVolume>>> {
        match (task.pssr, external) {
            (PssrKind::External, Some(e)) => Ok(Some(e.slice(axis)?)),
            (PssrKind::External, None) => contract!("external up-sampling selected but no up-sampled light field given"),
            (PssrKind::Bicubic, _) => Ok(None),
        }
    };
    let pssr = |v: &EpiVolume, ext: &Option<Vec<EpiVolume>>| -> Result<EpiVolume> {
        match ext {
            Some(e) => pssr_volume(v, s, PssrMethod::External(&e[v.fixed_index])),
            None => pssr_volume(v, s, PssrMethod::Bicubic),
        }
    };
    let pasr_method = match (task.pasr, models.nvs) {
        (PasrKind::Mean, _) => PasrMethod::Mean,
        (PasrKind::Cnn, Some(w)) => PasrMethod::Cnn(w),
        (PasrKind::Cnn, None) => contract!("cnn view synthesis selected but no NVS weights given"),
    };
    let fine = refine(models.evrn);
    let angular = |lf: &LightField4D, axis: AngularAxis| {
        vsr(lf, axis, &|v: &EpiVolume| fine(pasr_volume(v, pasr_method)?))
    };

    match task.mode {
        SrMode::Ssr => {
            let mut branches = Vec::with_capacity(2);
            for axis in [AngularAxis::Tau, AngularAxis::Rho] {
                let ext = ext_vols(axis)?;
                branches.push(vsr(lf, axis, &|v: &EpiVolume| fine(pssr(v, &ext)?))?);
            }
            branches[0].blend(0.5, &branches[1], 0.5)
        }
        SrMode::Asr => {
            let l = angular(lf, AngularAxis::Tau)?;
            angular(&l, AngularAxis::Rho)
        }
        SrMode::Assr => {
            let ext = ext_vols(AngularAxis::Tau)?;
            let l = vsr(lf, AngularAxis::Tau, &|v: &EpiVolume| pssr(v, &ext))?;
            let l = angular(&l, AngularAxis::Tau)?;
            angular(&l, AngularAxis::Rho)
        }
    }
}

/// Super-resolves every color channel independently (RGB via YCbCr) and
/// clips the merged result to `[0, 1]`.
pub fn super_resolve(lf: &LightField4D, task: &SrTask, models: &SrModels<'_>) -> Result<(LightField4D, SrReport)> {
    task.validate()?;
    let start = Instant::now();
    let color = lf.color_space();
    let to_working = |l: &LightField4D| -> Result<LightField4D> {
        match l.color_space() {
            ColorSpace::Rgb => rgb_to_ycbcr(l),
            _ => Ok(l.clone()),
        }
    };
    let work = to_working(lf)?;
    let ext_planes = match models.external {
        Some(e) => {
            if e.color_space() != color {
                contract!("external light field is {:?}, input is {color:?}", e.color_space());
            }
            Some(to_working(e)?.split_channels())
        }
        None => None,
    };
    let planes: Vec<LightField4D> = work
        .split_channels()
        .iter()
        .enumerate()
        .map(|(c, p)| super_resolve_plane(p, task, models, ext_planes.as_ref().map(|e| &e[c])))
        .collect::<Result<_>>()?;
    let joined = LightField4D::join_channels(&planes, work.color_space())?;
    let out = match color {
        ColorSpace::Rgb => ycbcr_to_rgb(&joined)?,
        _ => joined,
    }
    .clip_unit();
    let report = SrReport {
        task: task.clone(),
        input_dims: lf.dims(),
        output_dims: out.dims(),
        refined: models.evrn.is_some(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((out, report))
}
