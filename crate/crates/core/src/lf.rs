//! The 4D light-field data model and its 2D/3D slices.
//!
//! A light field `L(x, y, ρ, τ, c)` is stored view-major: all pixels of the
//! sub-aperture image at `(ρ, τ)` are contiguous. `ρ` is the horizontal
//! angular index (it pairs with `x` in horizontal EPI volumes) and `τ` the
//! vertical one.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{contract, ensure_index, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColorSpace {
    #[serde(rename = "RGB")]
    Rgb,
    #[serde(rename = "YCbCr")]
    YCbCr,
    Y,
}

impl ColorSpace {
    pub fn channels(self) -> usize {
        match self {
            ColorSpace::Y => 1,
            _ => 3,
        }
    }
}

/// Angular axis held fixed when slicing EPI volumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngularAxis {
    /// Fixing `ρ` yields vertical volumes `(y, τ, x)`.
    Rho,
    /// Fixing `τ` yields horizontal volumes `(x, ρ, y)`.
    Tau,
}

impl AngularAxis {
    pub fn orientation(self) -> Orientation {
        match self {
            AngularAxis::Tau => Orientation::Horizontal,
            AngularAxis::Rho => Orientation::Vertical,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    /// Axes `(x, ρ, y)`, one volume per fixed `τ`.
    Horizontal,
    /// Axes `(y, τ, x)`, one volume per fixed `ρ`.
    Vertical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ViewIndex {
    pub rho: usize,
    pub tau: usize,
}

impl ViewIndex {
    pub fn new(rho: usize, tau: usize) -> Self {
        Self { rho, tau }
    }
}

/// A plain `(y, x, c)` image of real values.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            contract!("image extents must be positive, got {height}×{width}×{channels}");
        }
        if data.len() != height * width * channels {
            contract!(
                "{height}×{width}×{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            );
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        Self::new(height, width, channels, vec![value; height * width * channels])
            .expect("positive extents")
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Self::new(height, width, 1, data).expect("positive extents")
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    /// One channel as its own single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        let data = self.data.iter().skip(c).step_by(self.channels).copied().collect();
        Image::new(self.height, self.width, 1, data).expect("valid extents")
    }

    /// `(h, w, c)` tensor view used by the networks.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, self.channels], self.data.clone())
            .expect("valid extents")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        match *t.shape() {
            [h, w, c] => Image::new(h, w, c, t.data().to_vec()),
            [h, w] => Image::new(h, w, 1, t.data().to_vec()),
            _ => contract!("expected an (h, w[, c]) tensor, got {:?}", t.shape()),
        }
    }
}

/// A single-channel 3D EPI volume with axes `(s1, a, s2)`.
///
/// Horizontal: `s1 = x`, `a = ρ`, `s2 = y`. Vertical: `s1 = y`, `a = τ`, `s2 = x`.
#[derive(Clone, Debug, PartialEq)]
pub struct EpiVolume {
    dims: [usize; 3],
    data: Vec<f32>,
    pub orientation: Orientation,
    /// The `τ` (horizontal) or `ρ` (vertical) index held fixed.
    pub fixed_index: usize,
}

impl EpiVolume {
    pub fn new(
        dims: [usize; 3],
        data: Vec<f32>,
        orientation: Orientation,
        fixed_index: usize,
    ) -> Result<Self> {
        if dims.iter().any(|&e| e == 0) {
            contract!("volume extents must be positive, got {dims:?}");
        }
        if data.len() != dims.iter().product::<usize>() {
            contract!("volume {dims:?} needs {} values, got {}", dims.iter().product::<usize>(), data.len());
        }
        if data.iter().any(|v| !v.is_finite()) {
            contract!("volume contains non-finite values");
        }
        Ok(Self {
            dims,
            data,
            orientation,
            fixed_index,
        })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn angular_extent(&self) -> usize {
        self.dims[1]
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, s1: usize, a: usize, s2: usize) -> f32 {
        self.data[(s1 * self.dims[1] + a) * self.dims[2] + s2]
    }

    /// `(s1, a, s2, 1)` tensor view for the networks.
    pub fn to_tensor(&self) -> Tensor {
        let [s1, a, s2] = self.dims;
        Tensor::new(vec![s1, a, s2, 1], self.data.clone()).expect("valid extents")
    }

    pub fn from_tensor(t: &Tensor, orientation: Orientation, fixed_index: usize) -> Result<Self> {
        match *t.shape() {
            [s1, a, s2, 1] | [s1, a, s2] => {
                Self::new([s1, a, s2], t.data().to_vec(), orientation, fixed_index)
            }
            _ => contract!("expected an (s1, a, s2[, 1]) tensor, got {:?}", t.shape()),
        }
    }

    /// Height and width of the view image at one angular index.
    pub fn view_dims(&self) -> (usize, usize) {
        match self.orientation {
            Orientation::Horizontal => (self.dims[2], self.dims[0]),
            Orientation::Vertical => (self.dims[0], self.dims[2]),
        }
    }

    /// The 2D view at angular index `a`, laid out like a sub-aperture image (rows = y).
    pub fn view(&self, a: usize) -> Result<Image> {
        ensure_index("volume angular index", a, self.dims[1])?;
        let (h, w) = self.view_dims();
        let img = match self.orientation {
            Orientation::Horizontal => Image::from_fn(h, w, |y, x| self.get(x, a, y)),
            Orientation::Vertical => Image::from_fn(h, w, |y, x| self.get(y, a, x)),
        };
        Ok(img)
    }

    /// Builds a volume from per-angular-index view images (rows = y).
    pub fn from_views(views: &[Image], orientation: Orientation, fixed_index: usize) -> Result<Self> {
        let Some(first) = views.first() else {
            contract!("volume needs at least one view");
        };
        if views.iter().any(|v| !v.same_shape(first) || v.channels != 1) {
            contract!("views must be single-channel and share one shape");
        }
        let (h, w, na) = (first.height, first.width, views.len());
        let dims = match orientation {
            Orientation::Horizontal => [w, na, h],
            Orientation::Vertical => [h, na, w],
        };
        let mut data = vec![0.0; dims.iter().product()];
        for (a, v) in views.iter().enumerate() {
            for y in 0..h {
                for x in 0..w {
                    let (s1, s2) = match orientation {
                        Orientation::Horizontal => (x, y),
                        Orientation::Vertical => (y, x),
                    };
                    data[(s1 * na + a) * dims[2] + s2] = v.get(y, x, 0);
                }
            }
        }
        Self::new(dims, data, orientation, fixed_index)
    }
}

/// A 4D light field with `c` color channels.
#[derive(Clone, Debug, PartialEq)]
pub struct LightField4D {
    height: usize,
    width: usize,
    a_rho: usize,
    a_tau: usize,
    color: ColorSpace,
    /// Layout `(ρ, τ, y, x, c)`.
    data: Vec<f32>,
}

impl LightField4D {
    /// Values must be finite. Range `[0, 1]` is enforced at I/O boundaries
    /// (see [`LightField4D::check_unit_range`]); pipeline intermediates may
    /// overshoot slightly before the final clip.
    pub fn new(
        height: usize,
        width: usize,
        a_rho: usize,
        a_tau: usize,
        color: ColorSpace,
        data: Vec<f32>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || a_rho == 0 || a_tau == 0 {
            contract!("light field extents must be positive");
        }
        let n = height * width * a_rho * a_tau * color.channels();
        if data.len() != n {
            contract!("light field needs {n} values, got {}", data.len());
        }
        if data.iter().any(|v| !v.is_finite()) {
            contract!("light field contains non-finite values");
        }
        Ok(Self {
            height,
            width,
            a_rho,
            a_tau,
            color,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, a_rho: usize, a_tau: usize, color: ColorSpace, value: f32) -> Self {
        let n = height * width * a_rho * a_tau * color.channels();
        Self::new(height, width, a_rho, a_tau, color, vec![value; n]).expect("valid constant light field")
    }

    /// Single-channel light field from `f(y, x, ρ, τ)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        a_rho: usize,
        a_tau: usize,
        f: impl Fn(usize, usize, usize, usize) -> f32,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * a_rho * a_tau);
        for r in 0..a_rho {
            for t in 0..a_tau {
                for y in 0..height {
                    for x in 0..width {
                        data.push(f(y, x, r, t));
                    }
                }
            }
        }
        Self::new(height, width, a_rho, a_tau, ColorSpace::Y, data).expect("valid light field")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn a_rho(&self) -> usize {
        self.a_rho
    }

    pub fn a_tau(&self) -> usize {
        self.a_tau
    }

    pub fn channels(&self) -> usize {
        self.color.channels()
    }

    pub fn color_space(&self) -> ColorSpace {
        self.color
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// `(H, W, Aρ, Aτ, C)`.
    pub fn dims(&self) -> [usize; 5] {
        [self.height, self.width, self.a_rho, self.a_tau, self.channels()]
    }

    fn view_len(&self) -> usize {
        self.height * self.width * self.channels()
    }

    fn view_offset(&self, rho: usize, tau: usize) -> usize {
        (rho * self.a_tau + tau) * self.view_len()
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, rho: usize, tau: usize, c: usize) -> f32 {
        let ch = self.channels();
        self.data[self.view_offset(rho, tau) + (y * self.width + x) * ch + c]
    }

    pub fn check_unit_range(&self) -> Result<()> {
        if let Some(v) = self.data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            contract!("light field value {v} outside [0, 1]");
        }
        Ok(())
    }

    pub fn clip_unit(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Sub-aperture image at `v`, shape `H×W×C`.
    pub fn extract_sai(&self, v: ViewIndex) -> Result<Image> {
        ensure_index("ρ", v.rho, self.a_rho)?;
        ensure_index("τ", v.tau, self.a_tau)?;
        let o = self.view_offset(v.rho, v.tau);
        Image::new(
            self.height,
            self.width,
            self.channels(),
            self.data[o..o + self.view_len()].to_vec(),
        )
    }

    /// Angular patch image at spatial location `(y, x)`: rows are `τ`, columns `ρ`.
    pub fn extract_api(&self, y: usize, x: usize) -> Result<Image> {
        ensure_index("y", y, self.height)?;
        ensure_index("x", x, self.width)?;
        let ch = self.channels();
        let mut data = Vec::with_capacity(self.a_rho * self.a_tau * ch);
        for t in 0..self.a_tau {
            for r in 0..self.a_rho {
                for c in 0..ch {
                    data.push(self.get(y, x, r, t, c));
                }
            }
        }
        Image::new(self.a_tau, self.a_rho, ch, data)
    }

    /// Assembles a light field from its sub-aperture images, indexed `[ρ][τ]`
    /// flattened as `ρ·Aτ + τ`.
    pub fn from_sais(views: &[Image], a_rho: usize, a_tau: usize, color: ColorSpace) -> Result<Self> {
        if views.len() != a_rho * a_tau {
            contract!("expected {} views, got {}", a_rho * a_tau, views.len());
        }
        let first = &views[0];
        if first.channels != color.channels() {
            contract!("{color:?} needs {} channels, views have {}", color.channels(), first.channels);
        }
        if views.iter().any(|v| !v.same_shape(first)) {
            contract!("all views must share one shape");
        }
        let data = views.iter().flat_map(|v| v.data.iter().copied()).collect();
        Self::new(first.height, first.width, a_rho, a_tau, color, data)
    }

    /// Splits into single-channel planes (tagged `Y`).
    pub fn split_channels(&self) -> Vec<LightField4D> {
        let ch = self.channels();
        (0..ch)
            .map(|c| {
                let data = self.data.iter().skip(c).step_by(ch).copied().collect();
                LightField4D::new(self.height, self.width, self.a_rho, self.a_tau, ColorSpace::Y, data)
                    .expect("valid plane")
            })
            .collect()
    }

    pub fn join_channels(planes: &[LightField4D], color: ColorSpace) -> Result<Self> {
        if planes.len() != color.channels() {
            contract!("{color:?} needs {} planes, got {}", color.channels(), planes.len());
        }
        let first = &planes[0];
        if planes.iter().any(|p| p.channels() != 1 || p.dims() != first.dims()) {
            contract!("planes must be single-channel with identical shapes");
        }
        let n = first.data.len();
        let mut data = Vec::with_capacity(n * planes.len());
        for i in 0..n {
            data.extend(planes.iter().map(|p| p.data[i]));
        }
        Self::new(first.height, first.width, first.a_rho, first.a_tau, color, data)
    }

    /// All EPI volumes along `axis`: horizontal `V_τ(x, ρ, y)` for `axis = τ`,
    /// vertical `V_ρ(y, τ, x)` for `axis = ρ`.
    pub fn slice(&self, axis: AngularAxis) -> Result<Vec<EpiVolume>> {
        if self.channels() != 1 {
            contract!("slice needs a single-channel light field; split channels first");
        }
        let (h, w, ar, at) = (self.height, self.width, self.a_rho, self.a_tau);
        let count = match axis {
            AngularAxis::Tau => at,
            AngularAxis::Rho => ar,
        };
        (0..count)
            .into_par_iter()
            .map(|i| match axis {
                AngularAxis::Tau => {
                    let mut data = vec![0.0; w * ar * h];
                    for x in 0..w {
                        for r in 0..ar {
                            let base = (x * ar + r) * h;
                            let view = self.view_offset(r, i);
                            for y in 0..h {
                                data[base + y] = self.data[view + y * w + x];
                            }
                        }
                    }
                    EpiVolume::new([w, ar, h], data, Orientation::Horizontal, i)
                }
                AngularAxis::Rho => {
                    let mut data = vec![0.0; h * at * w];
                    for y in 0..h {
                        for t in 0..at {
                            let base = (y * at + t) * w;
                            let view = self.view_offset(i, t) + y * w;
                            data[base..base + w].copy_from_slice(&self.data[view..view + w]);
                        }
                    }
                    EpiVolume::new([h, at, w], data, Orientation::Vertical, i)
                }
            })
            .collect()
    }

    /// Inverse of [`LightField4D::slice`]: the list position is the fixed index.
    pub fn merge(volumes: &[EpiVolume], axis: AngularAxis) -> Result<Self> {
        let Some(first) = volumes.first() else {
            contract!("merge needs at least one volume");
        };
        let orientation = axis.orientation();
        if volumes
            .iter()
            .any(|v| v.dims != first.dims || v.orientation != orientation)
        {
            contract!(
                "merge along {axis:?} needs {orientation:?} volumes of one shape"
            );
        }
        let [s1, na, s2] = first.dims;
        let n = volumes.len();
        let (h, w, ar, at) = match axis {
            AngularAxis::Tau => (s2, s1, na, n),
            AngularAxis::Rho => (s1, s2, n, na),
        };
        let view_len = h * w;
        let mut data = vec![0.0f32; view_len * ar * at];
        // Each (ρ, τ) view is a disjoint chunk, so views fill in parallel.
        data.par_chunks_mut(view_len)
            .enumerate()
            .for_each(|(vi, chunk)| {
                let (r, t) = (vi / at, vi % at);
                match axis {
                    AngularAxis::Tau => {
                        let v = &volumes[t];
                        for y in 0..h {
                            for x in 0..w {
                                chunk[y * w + x] = v.data[(x * na + r) * s2 + y];
                            }
                        }
                    }
                    AngularAxis::Rho => {
                        let v = &volumes[r];
                        for y in 0..h {
                            let src = (y * na + t) * s2;
                            chunk[y * w..(y + 1) * w].copy_from_slice(&v.data[src..src + w]);
                        }
                    }
                }
            });
        Self::new(h, w, ar, at, ColorSpace::Y, data)
    }

    /// Keeps the central `target × target` block of views.
    pub fn crop_central_views(&self, target: usize) -> Result<Self> {
        if target == 0 || target > self.a_rho || target > self.a_tau {
            contract!(
                "cannot crop {}×{} views to {target}×{target}",
                self.a_rho,
                self.a_tau
            );
        }
        if (self.a_rho - target) % 2 != 0 || (self.a_tau - target) % 2 != 0 {
            contract!(
                "{}×{} views have no centered {target}×{target} window",
                self.a_rho,
                self.a_tau
            );
        }
        let r0 = (self.a_rho - target) / 2;
        let t0 = (self.a_tau - target) / 2;
        self.select_views(&(r0..r0 + target).collect::<Vec<_>>(), &(t0..t0 + target).collect::<Vec<_>>())
    }

    /// Sub-grid of views at the given `ρ` and `τ` indices (in the given order).
    pub fn select_views(&self, rhos: &[usize], taus: &[usize]) -> Result<Self> {
        if rhos.is_empty() || taus.is_empty() {
            contract!("view selection must be non-empty");
        }
        let mut data = Vec::with_capacity(rhos.len() * taus.len() * self.view_len());
        for &r in rhos {
            ensure_index("ρ", r, self.a_rho)?;
            for &t in taus {
                ensure_index("τ", t, self.a_tau)?;
                let o = self.view_offset(r, t);
                data.extend_from_slice(&self.data[o..o + self.view_len()]);
            }
        }
        Self::new(self.height, self.width, rhos.len(), taus.len(), self.color, data)
    }

    /// Spatial crop `[y0, y0+h) × [x0, x0+w)` of every view.
    pub fn crop_spatial(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        if h == 0 || w == 0 || y0 + h > self.height || x0 + w > self.width {
            contract!(
                "spatial crop {h}×{w} at ({y0}, {x0}) exceeds {}×{}",
                self.height,
                self.width
            );
        }
        let ch = self.channels();
        let mut data = Vec::with_capacity(h * w * ch * self.a_rho * self.a_tau);
        for r in 0..self.a_rho {
            for t in 0..self.a_tau {
                let o = self.view_offset(r, t);
                for y in y0..y0 + h {
                    let row = o + (y * self.width + x0) * ch;
                    data.extend_from_slice(&self.data[row..row + w * ch]);
                }
            }
        }
        Self::new(h, w, self.a_rho, self.a_tau, self.color, data)
    }

    /// Applies `f` to every view, which must keep one common output shape.
    pub fn map_views(&self, f: impl Fn(&Image) -> Result<Image> + Sync) -> Result<Self> {
        let views: Vec<Image> = (0..self.a_rho * self.a_tau)
            .into_par_iter()
            .map(|i| {
                let v = self.extract_sai(ViewIndex::new(i / self.a_tau, i % self.a_tau))?;
                f(&v)
            })
            .collect::<Result<_>>()?;
        Self::from_sais(&views, self.a_rho, self.a_tau, self.color)
    }

    /// Swaps the roles of `(x, ρ)` and `(y, τ)`: `L'(x, y, ρ, τ) = L(y, x, τ, ρ)`.
    pub fn transpose(&self) -> Self {
        let ch = self.channels();
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.a_tau {
            for t in 0..self.a_rho {
                for y in 0..self.width {
                    for x in 0..self.height {
                        for c in 0..ch {
                            data.push(self.get(x, y, t, r, c));
                        }
                    }
                }
            }
        }
        Self::new(self.width, self.height, self.a_tau, self.a_rho, self.color, data)
            .expect("transpose keeps validity")
    }

    /// `a·self + b·other`, elementwise.
    pub fn blend(&self, a: f32, other: &Self, b: f32) -> Result<Self> {
        if self.dims() != other.dims() {
            contract!("cannot blend {:?} with {:?}", self.dims(), other.dims());
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&p, &q)| a * p + b * q)
            .collect();
        Self::new(self.height, self.width, self.a_rho, self.a_tau, self.color, data)
    }

    pub fn with_color_space(mut self, color: ColorSpace) -> Result<Self> {
        if color.channels() != self.channels() {
            contract!("cannot retag {:?} as {color:?}", self.color);
        }
        self.color = color;
        Ok(self)
    }
}

const KR: f64 = 0.299;
const KB: f64 = 0.114;
const KG: f64 = 1.0 - KR - KB;
const CB_SCALE: f64 = 2.0 * (1.0 - KB);
const CR_SCALE: f64 = 2.0 * (1.0 - KR);

/// BT.601 full-range RGB → YCbCr for one pixel (chroma offset 0.5).
pub fn rgb_to_ycbcr_pixel(rgb: [f32; 3]) -> [f32; 3] {
    let [r, g, b] = rgb.map(f64::from);
    let y = KR * r + KG * g + KB * b;
    [
        y as f32,
        (0.5 + (b - y) / CB_SCALE) as f32,
        (0.5 + (r - y) / CR_SCALE) as f32,
    ]
}

pub fn ycbcr_to_rgb_pixel(ycc: [f32; 3]) -> [f32; 3] {
    let [y, cb, cr] = ycc.map(f64::from);
    let r = y + CR_SCALE * (cr - 0.5);
    let b = y + CB_SCALE * (cb - 0.5);
    let g = (y - KR * r - KB * b) / KG;
    [r as f32, g as f32, b as f32]
}

fn convert_pixels(lf: &LightField4D, to: ColorSpace, f: fn([f32; 3]) -> [f32; 3]) -> Result<LightField4D> {
    let mut data = lf.data.clone();
    for px in data.chunks_exact_mut(3) {
        let out = f([px[0], px[1], px[2]]);
        px.copy_from_slice(&out);
    }
    LightField4D::new(lf.height, lf.width, lf.a_rho, lf.a_tau, to, data)
}

pub fn rgb_to_ycbcr(lf: &LightField4D) -> Result<LightField4D> {
    if lf.color != ColorSpace::Rgb {
        contract!("rgb_to_ycbcr needs an RGB light field, got {:?}", lf.color);
    }
    convert_pixels(lf, ColorSpace::YCbCr, rgb_to_ycbcr_pixel)
}

pub fn ycbcr_to_rgb(lf: &LightField4D) -> Result<LightField4D> {
    if lf.color != ColorSpace::YCbCr {
        contract!("ycbcr_to_rgb needs a YCbCr light field, got {:?}", lf.color);
    }
    convert_pixels(lf, ColorSpace::Rgb, ycbcr_to_rgb_pixel)
}

/// Luma plane of an RGB or YCbCr light field; a `Y` light field is returned as is.
pub fn luma(lf: &LightField4D) -> Result<LightField4D> {
    match lf.color {
        ColorSpace::Y => Ok(lf.clone()),
        ColorSpace::YCbCr => Ok(lf.split_channels().swap_remove(0)),
        ColorSpace::Rgb => Ok(rgb_to_ycbcr(lf)?.split_channels().swap_remove(0)),
    }
}
