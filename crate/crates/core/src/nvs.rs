//! Novel-view synthesis between neighbouring views and the angular
//! up-sampling of EPI volumes built on it.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::error::{contract, Result};
use crate::lf::{EpiVolume, Image};
use crate::model_io;
use crate::tensor::{glorot_uniform_init, Graph, ParamStore, Tensor, Var};

pub const KIND: &str = "nvs";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NvsConfig {
    pub blocks: usize,
    pub channels: usize,
}

impl Default for NvsConfig {
    fn default() -> Self {
        Self {
            blocks: 7,
            channels: 64,
        }
    }
}

impl NvsConfig {
    pub fn desk() -> Self {
        Self {
            blocks: 2,
            channels: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 || self.channels == 0 {
            contract!("NVS needs at least one block and one channel");
        }
        Ok(())
    }

    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>, bool)>> {
        self.validate()?;
        let c = self.channels;
        let mut out = Vec::new();
        let conv = |out: &mut Vec<(String, Vec<usize>, bool)>, name: &str, k: usize, cin: usize, cout: usize| {
            out.push((format!("{name}.weight"), vec![k, k, cin, cout], true));
            out.push((format!("{name}.bias"), vec![cout], false));
        };
        conv(&mut out, "sfe", 3, 2, c);
        out.push(("sfe.slope".into(), vec![c], false));
        for i in 1..=self.blocks {
            let b = format!("block{i}");
            conv(&mut out, &format!("{b}.bottleneck"), 1, c, c);
            out.push((format!("{b}.bottleneck.slope"), vec![c], false));
            conv(&mut out, &format!("{b}.conv1"), 3, c, c);
            out.push((format!("{b}.slope"), vec![c], false));
            conv(&mut out, &format!("{b}.conv2"), 3, c, c);
        }
        conv(&mut out, "tail", 3, c, 1);
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NvsWeights {
    pub config: NvsConfig,
    pub params: ParamStore,
}

impl NvsWeights {
    pub fn zeros(config: &NvsConfig) -> Result<Self> {
        let mut params = ParamStore::new();
        for (name, shape, decay) in config.param_shapes()? {
            params.insert(&name, Tensor::zeros(&shape), decay)?;
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    pub fn init(config: &NvsConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        for (name, shape, decay) in config.param_shapes()? {
            let t = if name.ends_with(".weight") {
                glorot_uniform_init(&shape, &mut rng)
            } else {
                Tensor::zeros(&shape)
            };
            params.insert(&name, t, decay)?;
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    /// Records the network on two `(h, w, 1)` inputs; output is `(h, w, 1)`.
    pub fn forward(&self, g: &mut Graph, a: Var, b: Var) -> Result<Var> {
        nvs_cnn_forward(g, &self.params, &self.config, a, b)
    }

    pub fn synthesize(&self, a: &Image, b: &Image) -> Result<Image> {
        if !a.same_shape(b) || a.channels != 1 {
            contract!("view synthesis needs two single-channel images of one shape");
        }
        let mut g = Graph::new();
        let va = g.input(a.to_tensor());
        let vb = g.input(b.to_tensor());
        let y = self.forward(&mut g, va, vb)?;
        Image::from_tensor(g.value(y))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        model_io::save_model(path, KIND, &self.config, &self.params, Map::new())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, container) = model_io::load_model::<NvsConfig>(path, KIND)?;
        let mut w = Self::zeros(&config)?;
        container.load_params(&mut w.params)?;
        Ok(w)
    }
}

fn conv_prelu(g: &mut Graph, p: &ParamStore, name: &str, x: Var, slope: &str) -> Result<Var> {
    let y = conv(g, p, name, x)?;
    let s = g.param(p, &format!("{slope}.slope"))?;
    g.prelu(y, s)
}

fn conv(g: &mut Graph, p: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{name}.weight"))?;
    let b = g.param(p, &format!("{name}.bias"))?;
    g.conv2d(x, w, b)
}

pub fn nvs_cnn_forward(g: &mut Graph, p: &ParamStore, cfg: &NvsConfig, a: Var, b: Var) -> Result<Var> {
    if g.shape(a) != g.shape(b) || g.shape(a).len() != 3 || g.shape(a)[2] != 1 {
        contract!("NVS inputs must be two (h, w, 1) images, got {:?} and {:?}", g.shape(a), g.shape(b));
    }
    let x = g.concat(&[a, b], 2)?;
    let f0 = conv_prelu(g, p, "sfe", x, "sfe")?;
    let mut f = f0;
    for i in 1..=cfg.blocks {
        let blk = format!("block{i}");
        let h = conv_prelu(g, p, &format!("{blk}.bottleneck"), f, &format!("{blk}.bottleneck"))?;
        let h = conv_prelu(g, p, &format!("{blk}.conv1"), h, &blk)?;
        let h = conv(g, p, &format!("{blk}.conv2"), h)?;
        f = g.add(f, h)?;
    }
    let f = g.add(f, f0)?;
    conv(g, p, "tail", f)
}

/// Elementwise average of two views.
pub fn nvs_mean(a: &Image, b: &Image) -> Result<Image> {
    if !a.same_shape(b) {
        contract!("view averaging needs equal shapes");
    }
    let data = a.data.iter().zip(&b.data).map(|(&p, &q)| 0.5 * (p + q)).collect();
    Image::new(a.height, a.width, a.channels, data)
}

#[derive(Clone, Copy, Debug)]
pub enum PasrMethod<'a> {
    Mean,
    Cnn(&'a NvsWeights),
}

impl PasrMethod<'_> {
    pub fn synthesize(&self, a: &Image, b: &Image) -> Result<Image> {
        match self {
            PasrMethod::Mean => nvs_mean(a, b),
            PasrMethod::Cnn(w) => w.synthesize(a, b),
        }
    }
}

/// Inserts one synthesized view between each consecutive pair: `A → 2A − 1`
/// views, input views kept at the even indices.
pub fn pasr_volume(vol: &EpiVolume, method: PasrMethod<'_>) -> Result<EpiVolume> {
    let a = vol.angular_extent();
    if a < 2 {
        contract!("angular up-sampling needs at least 2 views, got {a}");
    }
    let views: Vec<Image> = (0..a).map(|i| vol.view(i)).collect::<Result<_>>()?;
    let novel: Vec<Image> = (0..a - 1)
        .into_par_iter()
        .map(|i| method.synthesize(&views[i], &views[i + 1]))
        .collect::<Result<_>>()?;
    let mut all = Vec::with_capacity(2 * a - 1);
    for (i, v) in views.into_iter().enumerate() {
        all.push(v);
        if let Some(n) = novel.get(i) {
            all.push(n.clone());
        }
    }
    EpiVolume::from_views(&all, vol.orientation, vol.fixed_index)
}
