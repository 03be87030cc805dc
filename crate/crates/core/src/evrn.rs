//! EPI volume refinement network.
//!
//! Shallow 3×3×3 feature extraction, densely connected residual blocks with
//! channel attention, two reconstruction paths (one scaled by spatial
//! attention, one by angular attention) and a tail convolution whose output
//! is added to the input volume.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Map;

use crate::error::{contract, Result};
use crate::lf::EpiVolume;
use crate::model_io;
use crate::tensor::{glorot_uniform_init, Graph, ParamStore, PoolMode, Tensor, Var};

pub const KIND: &str = "evrn";

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvrnConfig {
    /// Number of residual blocks.
    pub blocks: usize,
    /// Feature channels.
    pub channels: usize,
    /// Channel-attention reduction ratio.
    pub reduction: usize,
    pub use_caw: bool,
    pub use_saw: bool,
    pub use_aaw: bool,
    /// ReLU between the two channel-attention projections.
    pub caw_mid_activation: bool,
    /// Angular extent of the volumes the network refines (fixes the size of
    /// the angular attention layer).
    pub angular: usize,
}

impl Default for EvrnConfig {
    fn default() -> Self {
        Self {
            blocks: 7,
            channels: 64,
            reduction: 16,
            use_caw: true,
            use_saw: true,
            use_aaw: true,
            caw_mid_activation: true,
            angular: 9,
        }
    }
}

impl EvrnConfig {
    /// Small configuration used for desk-scale training.
    pub fn desk() -> Self {
        Self {
            blocks: 2,
            channels: 16,
            reduction: 4,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            contract!("EVRN needs at least one residual block");
        }
        if self.channels == 0 || self.reduction == 0 || self.channels % self.reduction != 0 {
            contract!(
                "channels ({}) must be a positive multiple of the reduction ratio ({})",
                self.channels,
                self.reduction
            );
        }
        if self.angular == 0 {
            contract!("angular extent must be positive");
        }
        Ok(())
    }

    /// All eight on/off combinations of the three attention modules.
    pub fn attention_wirings(&self) -> Vec<EvrnConfig> {
        (0..8)
            .map(|m| EvrnConfig {
                use_caw: m & 1 != 0,
                use_saw: m & 2 != 0,
                use_aaw: m & 4 != 0,
                ..self.clone()
            })
            .collect()
    }

    /// Parameter names, shapes and weight-decay flags in creation order.
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>, bool)>> {
        self.validate()?;
        let c = self.channels;
        let mut out = Vec::new();
        let conv = |out: &mut Vec<(String, Vec<usize>, bool)>, name: &str, k: [usize; 3], cin: usize, cout: usize| {
            out.push((format!("{name}.weight"), vec![k[0], k[1], k[2], cin, cout], true));
            out.push((format!("{name}.bias"), vec![cout], false));
        };
        let slope = |out: &mut Vec<(String, Vec<usize>, bool)>, name: &str, n: usize| {
            out.push((format!("{name}.slope"), vec![n], false));
        };
        conv(&mut out, "sfe0", [3, 3, 3], 1, c);
        slope(&mut out, "sfe0", c);
        for i in 1..=self.blocks {
            let b = format!("block{i}");
            conv(&mut out, &format!("{b}.fbn"), [1, 1, 1], i * c, c);
            slope(&mut out, &format!("{b}.fbn"), c);
            conv(&mut out, &format!("{b}.conv1"), [3, 3, 3], c, c);
            slope(&mut out, &b, c);
            conv(&mut out, &format!("{b}.conv2"), [3, 3, 3], c, c);
            if self.use_caw {
                let m = c / self.reduction;
                out.push((format!("{b}.caw_down.weight"), vec![c, m], true));
                out.push((format!("{b}.caw_down.bias"), vec![m], false));
                out.push((format!("{b}.caw_up.weight"), vec![m, c], true));
                out.push((format!("{b}.caw_up.bias"), vec![c], false));
            }
        }
        for path in ["spatial", "angular"] {
            conv(&mut out, &format!("{path}.fbn"), [1, 1, 1], (self.blocks + 1) * c, c);
            slope(&mut out, &format!("{path}.fbn"), c);
            for s in ["sfe1", "sfe2"] {
                conv(&mut out, &format!("{path}.{s}"), [3, 3, 3], c, c);
                slope(&mut out, &format!("{path}.{s}"), c);
            }
        }
        if self.use_saw {
            out.push(("spatial.saw.weight".into(), vec![5, 5, 2, 1], true));
            out.push(("spatial.saw.bias".into(), vec![1], false));
        }
        if self.use_aaw {
            let a = self.angular;
            out.push(("angular.aaw.weight".into(), vec![2 * a, a], true));
            out.push(("angular.aaw.bias".into(), vec![a], false));
        }
        conv(&mut out, "tail", [3, 3, 3], 2 * c, 1);
        Ok(out)
    }
}

/// A network instance: its config and parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct EvrnWeights {
    pub config: EvrnConfig,
    pub params: ParamStore,
}

impl EvrnWeights {
    /// All parameters zero: the network is the identity.
    pub fn zeros(config: &EvrnConfig) -> Result<Self> {
        let mut params = ParamStore::new();
        for (name, shape, decay) in config.param_shapes()? {
            params.insert(&name, Tensor::zeros(&shape), decay)?;
        }
        Ok(Self {
            config: config.clone(),
            params,
        })
    }

    /// Glorot-uniform kernels; zero biases and PReLU slopes.
    pub fn init(config: &EvrnConfig, seed: u64) -> Result<Self> {
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

    /// Records the network applied to `x` of shape `(s1, a, s2, 1)`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        evrn_forward(g, &self.params, &self.config, x)
    }

    pub fn refine(&self, vol: &EpiVolume) -> Result<EpiVolume> {
        let mut g = Graph::new();
        let x = g.input(vol.to_tensor());
        let y = self.forward(&mut g, x)?;
        EpiVolume::from_tensor(g.value(y), vol.orientation, vol.fixed_index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        model_io::save_model(path, KIND, &self.config, &self.params, Map::new())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (config, container) = model_io::load_model::<EvrnConfig>(path, KIND)?;
        let mut w = Self::zeros(&config)?;
        container.load_params(&mut w.params)?;
        Ok(w)
    }
}

fn conv3d(g: &mut Graph, p: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{name}.weight"))?;
    let b = g.param(p, &format!("{name}.bias"))?;
    g.conv3d(x, w, b)
}

fn prelu(g: &mut Graph, p: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let s = g.param(p, &format!("{name}.slope"))?;
    g.prelu(x, s)
}

fn conv3d_prelu(g: &mut Graph, p: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let y = conv3d(g, p, name, x)?;
    prelu(g, p, name, y)
}

fn dense(g: &mut Graph, p: &ParamStore, name: &str, x: Var) -> Result<Var> {
    let w = g.param(p, &format!("{name}.weight"))?;
    let b = g.param(p, &format!("{name}.bias"))?;
    g.dense(x, w, b)
}

/// Channel attention weights `(1, 1, 1, C)` for a feature map `(s1, a, s2, C)`.
pub fn caw_weights(g: &mut Graph, p: &ParamStore, prefix: &str, f: Var, mid_activation: bool) -> Result<Var> {
    let c = *g.shape(f).last().expect("4D feature map");
    let pooled = g.pool(f, &[0, 1, 2], PoolMode::Avg)?;
    let v = g.reshape(pooled, &[c])?;
    let mut h = dense(g, p, &format!("{prefix}.caw_down"), v)?;
    if mid_activation {
        h = g.relu(h);
    }
    let u = dense(g, p, &format!("{prefix}.caw_up"), h)?;
    let s = g.sigmoid(u);
    g.reshape(s, &[1, 1, 1, c])
}

/// Spatial attention weights `(s1, 1, s2, 1)`: average and max over `(a, c)`,
/// a 5×5 convolution and a sigmoid.
pub fn saw_weights(g: &mut Graph, p: &ParamStore, prefix: &str, f: Var) -> Result<Var> {
    let (s1, s2) = (g.shape(f)[0], g.shape(f)[2]);
    let avg = g.pool(f, &[1, 3], PoolMode::Avg)?;
    let max = g.pool(f, &[1, 3], PoolMode::Max)?;
    let both = g.concat(&[avg, max], 3)?;
    let img = g.reshape(both, &[s1, s2, 2])?;
    let w = g.param(p, &format!("{prefix}.saw.weight"))?;
    let b = g.param(p, &format!("{prefix}.saw.bias"))?;
    let y = g.conv2d(img, w, b)?;
    let s = g.sigmoid(y);
    g.reshape(s, &[s1, 1, s2, 1])
}

/// Angular attention weights `(1, A, 1, 1)`: average and max over
/// `(s1, s2, c)`, a dense `2A → A` layer and a sigmoid.
pub fn aaw_weights(g: &mut Graph, p: &ParamStore, prefix: &str, f: Var) -> Result<Var> {
    let a = g.shape(f)[1];
    let avg = g.pool(f, &[0, 2, 3], PoolMode::Avg)?;
    let max = g.pool(f, &[0, 2, 3], PoolMode::Max)?;
    let both = g.concat(&[avg, max], 1)?;
    let v = g.reshape(both, &[2 * a])?;
    let w = g.param(p, &format!("{prefix}.aaw.weight"))?;
    if g.shape(w)[0] != 2 * a {
        contract!(
            "angular attention built for A = {}, volume has A = {a}",
            g.shape(w)[1]
        );
    }
    let b = g.param(p, &format!("{prefix}.aaw.bias"))?;
    let y = g.dense(v, w, b)?;
    let s = g.sigmoid(y);
    g.reshape(s, &[1, a, 1, 1])
}

/// `F + CAW(B) ⊙ B` with `B = conv2(prelu(conv1(F)))`; without channel
/// attention the multiplication is dropped.
pub fn car_block(g: &mut Graph, p: &ParamStore, prefix: &str, f: Var, cfg: &EvrnConfig) -> Result<Var> {
    let h = conv3d(g, p, &format!("{prefix}.conv1"), f)?;
    let h = prelu(g, p, prefix, h)?;
    let mut b = conv3d(g, p, &format!("{prefix}.conv2"), h)?;
    if cfg.use_caw {
        let w = caw_weights(g, p, prefix, b, cfg.caw_mid_activation)?;
        b = g.broadcast_mul(b, w)?;
    }
    g.add(f, b)
}

pub fn evrn_forward(g: &mut Graph, p: &ParamStore, cfg: &EvrnConfig, x: Var) -> Result<Var> {
    match *g.shape(x) {
        [_, a, _, 1] if !cfg.use_aaw || a == cfg.angular => {}
        [_, a, _, 1] => contract!("EVRN configured for A = {}, got a volume with A = {a}", cfg.angular),
        ref s => contract!("EVRN input must be (s1, a, s2, 1), got {s:?}"),
    }
    let f0 = conv3d_prelu(g, p, "sfe0", x)?;
    let mut feats = vec![f0];
    for i in 1..=cfg.blocks {
        let b = format!("block{i}");
        let cat = if feats.len() == 1 { feats[0] } else { g.concat(&feats, 3)? };
        let h = conv3d_prelu(g, p, &format!("{b}.fbn"), cat)?;
        feats.push(car_block(g, p, &b, h, cfg)?);
    }
    let dense_feats = g.concat(&feats, 3)?;

    let mut paths = Vec::with_capacity(2);
    for (path, enabled) in [("spatial", cfg.use_saw), ("angular", cfg.use_aaw)] {
        let h = conv3d_prelu(g, p, &format!("{path}.fbn"), dense_feats)?;
        let mut h = conv3d_prelu(g, p, &format!("{path}.sfe1"), h)?;
        if enabled {
            let w = if path == "spatial" {
                saw_weights(g, p, path, h)?
            } else {
                aaw_weights(g, p, path, h)?
            };
            h = g.broadcast_mul(h, w)?;
        }
        paths.push(conv3d_prelu(g, p, &format!("{path}.sfe2"), h)?);
    }
    let joined = g.concat(&paths, 3)?;
    let residual = conv3d(g, p, "tail", joined)?;
    g.add(x, residual)
}
