//! PSNR / SSIM and the per-view evaluation protocols.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::lf::{luma, Image, LightField4D, ViewIndex};

/// `10·log10(peak² / MSE)`; identical inputs give `+∞`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !a.same_shape(b) {
        contract!(
            "psnr shape mismatch: {}×{}×{} vs {}×{}×{}",
            a.height,
            a.width,
            a.channels,
            b.height,
            b.width,
            b.channels
        );
    }
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub(crate) fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Valid-region separable filtering with the normalized 1D Gaussian `g`.
fn filter_valid(src: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let k = g.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            tmp[y * ow + x] = (0..k).map(|i| g[i] * src[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..k).map(|i| g[i] * tmp[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid 11×11 Gaussian windows (σ = 1.5, K1 = 0.01,
/// K2 = 0.03, peak 1).
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    if !a.same_shape(b) {
        contract!("ssim shape mismatch");
    }
    if a.channels != 1 {
        contract!("ssim takes single-channel images, got {} channels", a.channels);
    }
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        contract!(
            "ssim needs at least {SSIM_WINDOW}×{SSIM_WINDOW} pixels, got {}×{}",
            a.height,
            a.width
        );
    }
    let (h, w) = (a.height, a.width);
    let g = gaussian_window();
    let x: Vec<f64> = a.data.iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.data.iter().map(|&v| v as f64).collect();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<f64>>();
    let mu_x = filter_valid(&x, h, w, &g);
    let mu_y = filter_valid(&y, h, w, &g);
    let xx = filter_valid(&prod(&x, &x), h, w, &g);
    let yy = filter_valid(&prod(&y, &y), h, w, &g);
    let xy = filter_valid(&prod(&x, &y), h, w, &g);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    /// Central 7×7 views of a 9×9 light field.
    Ssr,
    /// The views absent from the decimated (both-even) input grid.
    Asr,
    /// Every view.
    All,
}

impl std::str::FromStr for Protocol {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "ssr" | "assr" => Ok(Protocol::Ssr),
            "asr" => Ok(Protocol::Asr),
            "all" => Ok(Protocol::All),
            other => Err(format!("unknown protocol {other:?}")),
        }
    }
}

mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Str(s) => Err(serde::de::Error::custom(format!("bad metric value {s:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewMetric {
    #[serde(with = "inf_as_string")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Means {
    #[serde(with = "inf_as_string")]
    pub psnr: f64,
    pub ssim: f64,
    pub views: usize,
}

/// Per-view metrics on an `Aρ × Aτ` grid (indexed `[ρ][τ]`) and their means
/// over the masked views.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub protocol: Protocol,
    pub channel: String,
    pub grid: Vec<Vec<Option<ViewMetric>>>,
    pub mask: Vec<Vec<bool>>,
    pub means: Means,
}

impl MetricReport {
    pub fn masked_count(&self) -> usize {
        self.mask.iter().flatten().filter(|&&m| m).count()
    }

    /// Recomputes the means from the grid.
    pub fn recompute_means(&self) -> Means {
        let vals: Vec<ViewMetric> = self.grid.iter().flatten().filter_map(|m| *m).collect();
        let n = vals.len().max(1) as f64;
        Means {
            psnr: vals.iter().map(|v| v.psnr).sum::<f64>() / n,
            ssim: vals.iter().map(|v| v.ssim).sum::<f64>() / n,
            views: vals.len(),
        }
    }

    pub fn csv_header() -> &'static str {
        "method,scene,protocol,psnr,ssim,views"
    }

    /// One table row: `method,scene,protocol,psnr,ssim,views`.
    pub fn csv_row(&self, method: &str, scene: &str) -> String {
        let p = if self.means.psnr.is_infinite() {
            "inf".to_string()
        } else {
            format!("{:.4}", self.means.psnr)
        };
        format!(
            "{method},{scene},{},{p},{:.6},{}",
            serde_json::to_value(self.protocol)
                .ok()
                .and_then(|v| v.as_str().map(str::to_string))
                .unwrap_or_default(),
            self.means.ssim,
            self.means.views
        )
    }

    /// Per-view grid as CSV lines `rho,tau,psnr,ssim` for masked views.
    pub fn grid_csv(&self) -> String {
        let mut s = String::from("rho,tau,psnr,ssim\n");
        for (r, row) in self.grid.iter().enumerate() {
            for (t, m) in row.iter().enumerate() {
                if let Some(m) = m {
                    s.push_str(&format!("{r},{t},{},{:.6}\n", m.psnr, m.ssim));
                }
            }
        }
        s
    }
}

/// Views scored by the spatial protocol: the central 7×7 block.
pub fn ssr_mask(a_rho: usize, a_tau: usize) -> Result<Vec<Vec<bool>>> {
    const CORE: usize = 7;
    if a_rho < CORE || a_tau < CORE || (a_rho - CORE) % 2 != 0 || (a_tau - CORE) % 2 != 0 {
        contract!("central {CORE}×{CORE} protocol needs odd extents ≥ {CORE}, got {a_rho}×{a_tau}");
    }
    let (r0, t0) = ((a_rho - CORE) / 2, (a_tau - CORE) / 2);
    Ok((0..a_rho)
        .map(|r| {
            (0..a_tau)
                .map(|t| (r0..r0 + CORE).contains(&r) && (t0..t0 + CORE).contains(&t))
                .collect()
        })
        .collect())
}

/// Views scored by the angular protocol: those with an odd `ρ` or `τ`.
pub fn asr_mask(a_rho: usize, a_tau: usize) -> Result<Vec<Vec<bool>>> {
    if a_rho % 2 == 0 || a_tau % 2 == 0 {
        contract!("angular protocol needs odd extents, got {a_rho}×{a_tau}");
    }
    Ok((0..a_rho)
        .map(|r| (0..a_tau).map(|t| r % 2 == 1 || t % 2 == 1).collect())
        .collect())
}

/// Scores `pred` against `gt` on the luma channel (clipped to `[0, 1]`)
/// for every view selected by `mask`.
pub fn evaluate_masked(
    pred: &LightField4D,
    gt: &LightField4D,
    mask: Vec<Vec<bool>>,
    protocol: Protocol,
) -> Result<MetricReport> {
    if pred.dims()[..4] != gt.dims()[..4] || pred.color_space() != gt.color_space() {
        contract!("prediction {:?} and ground truth {:?} differ in shape", pred.dims(), gt.dims());
    }
    let py = luma(pred)?.clip_unit();
    let gy = luma(gt)?.clip_unit();
    let mut grid = vec![vec![None; pred.a_tau()]; pred.a_rho()];
    for (r, row) in mask.iter().enumerate() {
        for (t, &m) in row.iter().enumerate() {
            if !m {
                continue;
            }
            let v = ViewIndex::new(r, t);
            let (a, b) = (py.extract_sai(v)?, gy.extract_sai(v)?);
            grid[r][t] = Some(ViewMetric {
                psnr: psnr(&a, &b, 1.0)?,
                ssim: ssim(&a, &b)?,
            });
        }
    }
    let mut report = MetricReport {
        protocol,
        channel: "Y".into(),
        grid,
        mask,
        means: Means {
            psnr: 0.0,
            ssim: 0.0,
            views: 0,
        },
    };
    report.means = report.recompute_means();
    Ok(report)
}

pub fn eval_ssr(pred: &LightField4D, gt: &LightField4D) -> Result<MetricReport> {
    let mask = ssr_mask(gt.a_rho(), gt.a_tau())?;
    evaluate_masked(pred, gt, mask, Protocol::Ssr)
}

pub fn eval_asr(pred: &LightField4D, gt: &LightField4D) -> Result<MetricReport> {
    let mask = asr_mask(gt.a_rho(), gt.a_tau())?;
    evaluate_masked(pred, gt, mask, Protocol::Asr)
}

pub fn eval_all(pred: &LightField4D, gt: &LightField4D) -> Result<MetricReport> {
    let mask = vec![vec![true; gt.a_tau()]; gt.a_rho()];
    evaluate_masked(pred, gt, mask, Protocol::All)
}

pub fn evaluate(pred: &LightField4D, gt: &LightField4D, protocol: Protocol) -> Result<MetricReport> {
    match protocol {
        Protocol::Ssr => eval_ssr(pred, gt),
        Protocol::Asr => eval_asr(pred, gt),
        Protocol::All => eval_all(pred, gt),
    }
}
