//! Training-pair construction and the mini-batch training loop.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{contract, Error, Result};
use crate::evrn::{self, EvrnConfig, EvrnWeights};
use crate::lf::{AngularAxis, EpiVolume, Image, LightField4D, Orientation};
use crate::model_io::config_hash;
use crate::nvs::{self, pasr_volume, NvsConfig, NvsWeights, PasrMethod};
use crate::pipeline::{vsr, SrMode};
use crate::resample::{angular_decimate, lf_spatial_downsample, lf_spatial_upsample, Patch};
use crate::tensor::{read_container, write_container, AdamW, AdamWConfig, AdamWState, Container, Gradients, Graph, ParamStore};

/// Where a training volume came from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub scene: String,
    pub y: usize,
    pub x: usize,
    pub axis: AngularAxis,
    pub fixed_index: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VolumePair {
    pub input: EpiVolume,
    pub target: EpiVolume,
    pub provenance: Provenance,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPairSet {
    pub task: SrMode,
    pub spatial_factor: usize,
    pub pairs: Vec<VolumePair>,
}

/// Stage-1 input light field for one ground-truth patch:
/// SSR bicubic down/up; ASR decimation then view synthesis along `τ`
/// volumes and `ρ` volumes; ASSR both.
pub fn preliminary_input(
    hr: &LightField4D,
    task: SrMode,
    factor: usize,
    pasr: PasrMethod<'_>,
) -> Result<LightField4D> {
    let spatial = |lf: &LightField4D| -> Result<LightField4D> {
        let low = lf_spatial_downsample(lf, factor, true)?;
        lf_spatial_upsample(&low, factor)
    };
    let angular = |lf: &LightField4D| -> Result<LightField4D> {
        let l = vsr(lf, AngularAxis::Tau, &|v: &EpiVolume| pasr_volume(v, pasr))?;
        vsr(&l, AngularAxis::Rho, &|v: &EpiVolume| pasr_volume(v, pasr))
    };
    match task {
        SrMode::Ssr => spatial(hr),
        SrMode::Asr => angular(&angular_decimate(hr)?),
        SrMode::Assr => angular(&spatial(&angular_decimate(hr)?)?),
    }
}

/// Volume pairs (stage-1 input, ground truth) from both slicing axes of every
/// patch: `2A` pairs per `A × A` patch.
pub fn build_evrn_pairs(
    patches: &[Patch],
    task: SrMode,
    factor: usize,
    pasr: PasrMethod<'_>,
) -> Result<TrainingPairSet> {
    let factor = if task == SrMode::Asr { 1 } else { factor };
    if task != SrMode::Asr && factor < 2 {
        contract!("{task:?} pairs need a spatial factor of at least 2");
    }
    let per_patch: Vec<Vec<VolumePair>> = patches
        .par_iter()
        .map(|p| {
            let hr = &p.lf;
            if hr.channels() != 1 || hr.a_rho() != hr.a_tau() || hr.a_rho() % 2 == 0 || hr.a_rho() < 3 {
                contract!(
                    "patches must be single-channel with an odd square angular grid, got {:?}",
                    hr.dims()
                );
            }
            let input = preliminary_input(hr, task, factor, pasr)?;
            let mut out = Vec::with_capacity(2 * hr.a_rho());
            for axis in [AngularAxis::Tau, AngularAxis::Rho] {
                for (i, t) in input.slice(axis)?.into_iter().zip(hr.slice(axis)?) {
                    out.push(VolumePair {
                        provenance: Provenance {
                            scene: p.scene.clone(),
                            y: p.y,
                            x: p.x,
                            axis,
                            fixed_index: t.fixed_index,
                        },
                        input: i,
                        target: t,
                    });
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(TrainingPairSet {
        task,
        spatial_factor: factor,
        pairs: per_patch.into_iter().flatten().collect(),
    })
}

/// One view-synthesis example: the views on either side of `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct NvsPair {
    pub left: Image,
    pub right: Image,
    pub target: Image,
    pub target_index: usize,
    pub provenance: Provenance,
}

/// Angular indices used as synthesis targets in a volume of extent `a`: the
/// interior odd ones, each flanked by two views at distance 1.
pub fn nvs_target_indices(a: usize) -> Result<Vec<usize>> {
    if a < 3 {
        contract!("view-synthesis pairs need an angular extent of at least 3, got {a}");
    }
    Ok((1..a - 1).step_by(2).collect())
}

pub fn build_nvs_pairs(patches: &[Patch]) -> Result<Vec<NvsPair>> {
    let mut out = Vec::new();
    for p in patches {
        for axis in [AngularAxis::Tau, AngularAxis::Rho] {
            for vol in p.lf.slice(axis)? {
                out.extend(nvs_pairs_from_volume(&vol, &p.scene, p.y, p.x)?);
            }
        }
    }
    Ok(out)
}

pub fn nvs_pairs_from_volume(vol: &EpiVolume, scene: &str, y: usize, x: usize) -> Result<Vec<NvsPair>> {
    let axis = match vol.orientation {
        Orientation::Horizontal => AngularAxis::Tau,
        Orientation::Vertical => AngularAxis::Rho,
    };
    nvs_target_indices(vol.angular_extent())?
        .into_iter()
        .map(|t| {
            Ok(NvsPair {
                left: vol.view(t - 1)?,
                right: vol.view(t + 1)?,
                target: vol.view(t)?,
                target_index: t,
                provenance: Provenance {
                    scene: scene.to_string(),
                    y,
                    x,
                    axis,
                    fixed_index: vol.fixed_index,
                },
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub initial_lr: f64,
    pub halve_every: usize,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Random spatial crop `(s1, s2)` applied to every sample at every step.
    #[serde(default)]
    pub crop: Option<[usize; 2]>,
    /// Stops after this many optimizer steps in total.
    #[serde(default)]
    pub max_steps: Option<usize>,
}

impl TrainSchedule {
    pub fn evrn() -> Self {
        Self {
            initial_lr: 2e-4,
            halve_every: 10,
            weight_decay: 1e-4,
            epochs: 1,
            batch_size: 8,
            seed: 0,
            crop: None,
            max_steps: None,
        }
    }

    /// Adam (no weight decay) for the view-synthesis network.
    pub fn nvs() -> Self {
        Self {
            weight_decay: 0.0,
            ..Self::evrn()
        }
    }

    /// Learning rate during 0-based `epoch`: halved every `halve_every` epochs.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let halvings = epoch.checked_div(self.halve_every).unwrap_or(0);
        self.initial_lr * 0.5f64.powi(halvings as i32)
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.initial_lr > 0.0) || self.batch_size == 0 {
            contract!("schedule needs lr > 0 and batch size ≥ 1");
        }
        if matches!(self.crop, Some([a, b]) if a == 0 || b == 0) {
            contract!("crop extents must be positive");
        }
        Ok(())
    }
}

/// A training example that can be spatially cropped.
pub trait Sample: Clone + Send + Sync {
    fn spatial_dims(&self) -> (usize, usize);
    fn crop(&self, o1: usize, o2: usize, n1: usize, n2: usize) -> Result<Self>;
}

fn crop_volume(v: &EpiVolume, o1: usize, o2: usize, n1: usize, n2: usize) -> Result<EpiVolume> {
    let [_, a, s2] = v.dims();
    let mut data = Vec::with_capacity(n1 * a * n2);
    for i in o1..o1 + n1 {
        for j in 0..a {
            let base = (i * a + j) * s2;
            data.extend_from_slice(&v.data()[base + o2..base + o2 + n2]);
        }
    }
    EpiVolume::new([n1, a, n2], data, v.orientation, v.fixed_index)
}

fn crop_image(img: &Image, o1: usize, o2: usize, n1: usize, n2: usize) -> Result<Image> {
    let data = (o1..o1 + n1)
        .flat_map(|y| (o2..o2 + n2).map(move |x| img.get(y, x, 0)))
        .collect();
    Image::new(n1, n2, 1, data)
}

impl Sample for VolumePair {
    fn spatial_dims(&self) -> (usize, usize) {
        let [s1, _, s2] = self.target.dims();
        (s1, s2)
    }

    fn crop(&self, o1: usize, o2: usize, n1: usize, n2: usize) -> Result<Self> {
        Ok(Self {
            input: crop_volume(&self.input, o1, o2, n1, n2)?,
            target: crop_volume(&self.target, o1, o2, n1, n2)?,
            provenance: self.provenance.clone(),
        })
    }
}

impl Sample for NvsPair {
    fn spatial_dims(&self) -> (usize, usize) {
        (self.target.height, self.target.width)
    }

    fn crop(&self, o1: usize, o2: usize, n1: usize, n2: usize) -> Result<Self> {
        Ok(Self {
            left: crop_image(&self.left, o1, o2, n1, n2)?,
            right: crop_image(&self.right, o1, o2, n1, n2)?,
            target: crop_image(&self.target, o1, o2, n1, n2)?,
            target_index: self.target_index,
            provenance: self.provenance.clone(),
        })
    }
}

/// A network trainable with the ℓ1 loop.
pub trait Trainable: Sync {
    type Sample: Sample;
    const KIND: &'static str;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn config_json(&self) -> Result<Value>;
    fn config_hash(&self) -> Result<String>;
    /// ℓ1 loss on one sample and its parameter gradient.
    fn loss_and_grad(&self, sample: &Self::Sample) -> Result<(f64, Gradients)>;
}

impl Trainable for EvrnWeights {
    type Sample = VolumePair;
    const KIND: &'static str = evrn::KIND;

    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
    fn config_json(&self) -> Result<Value> {
        Ok(serde_json::to_value(&self.config)?)
    }
    fn config_hash(&self) -> Result<String> {
        config_hash(evrn::KIND, &self.config)
    }

    fn loss_and_grad(&self, s: &VolumePair) -> Result<(f64, Gradients)> {
        let mut g = Graph::new();
        let x = g.input(s.input.to_tensor());
        let t = g.input(s.target.to_tensor());
        let y = self.forward(&mut g, x)?;
        let loss = g.l1_loss(y, t)?;
        let l = crate::tensor::ops::l1_loss(g.value(y), g.value(t))?;
        Ok((l, g.backward(loss, &self.params)?))
    }
}

impl Trainable for NvsWeights {
    type Sample = NvsPair;
    const KIND: &'static str = nvs::KIND;

    fn params(&self) -> &ParamStore {
        &self.params
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }
    fn config_json(&self) -> Result<Value> {
        Ok(serde_json::to_value(&self.config)?)
    }
    fn config_hash(&self) -> Result<String> {
        config_hash(nvs::KIND, &self.config)
    }

    fn loss_and_grad(&self, s: &NvsPair) -> Result<(f64, Gradients)> {
        let mut g = Graph::new();
        let a = g.input(s.left.to_tensor());
        let b = g.input(s.right.to_tensor());
        let t = g.input(s.target.to_tensor());
        let y = self.forward(&mut g, a, b)?;
        let loss = g.l1_loss(y, t)?;
        let l = crate::tensor::ops::l1_loss(g.value(y), g.value(t))?;
        Ok((l, g.backward(loss, &self.params)?))
    }
}

/// Mean ℓ1 loss of the model over `samples` (no cropping).
pub fn evaluate_loss<M: Trainable>(model: &M, samples: &[M::Sample]) -> Result<f64> {
    if samples.is_empty() {
        contract!("no samples to evaluate");
    }
    let losses: Vec<f64> = samples
        .par_iter()
        .map(|s| model.loss_and_grad(s).map(|(l, _)| l))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub mean_loss: f64,
    pub steps: usize,
}

/// Mini-batch AdamW training state. Shuffling and crops for epoch `e` come
/// from a ChaCha8 stream keyed by `(seed, e)`, so resuming at an epoch
/// boundary reproduces an uninterrupted run bit for bit.
pub struct Trainer<M: Trainable> {
    pub model: M,
    pub schedule: TrainSchedule,
    pub optimizer: AdamW,
    pub epoch: usize,
    pub step: usize,
    pub history: Vec<EpochStats>,
    pub step_losses: Vec<f64>,
}

impl<M: Trainable> Trainer<M> {
    pub fn new(model: M, schedule: TrainSchedule) -> Result<Self> {
        schedule.validate()?;
        let optimizer = AdamW::new(schedule.optimizer(), model.params());
        Ok(Self {
            model,
            schedule,
            optimizer,
            epoch: 0,
            step: 0,
            history: Vec::new(),
            step_losses: Vec::new(),
        })
    }

    fn budget_left(&self) -> bool {
        self.schedule.max_steps.is_none_or(|m| self.step < m)
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.schedule.epochs || !self.budget_left()
    }

    /// One optimizer step on `batch`; returns the batch mean loss.
    pub fn train_step(&mut self, batch: &[M::Sample], lr: f64) -> Result<f64> {
        let model = &self.model;
        let results: Vec<(f64, Gradients)> = batch
            .par_iter()
            .map(|s| model.loss_and_grad(s))
            .collect::<Result<_>>()?;
        let mut grads = Gradients::zeros_like(self.model.params());
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l;
            grads.accumulate(g);
        }
        let n = results.len() as f64;
        loss /= n;
        grads.scale((1.0 / n) as f32);
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Diverged {
                epoch: self.epoch,
                step: self.step,
                loss,
            });
        }
        self.optimizer.step(self.model.params_mut(), &grads, lr)?;
        self.step += 1;
        self.step_losses.push(loss);
        Ok(loss)
    }

    pub fn run_epoch(&mut self, samples: &[M::Sample]) -> Result<EpochStats> {
        if samples.is_empty() {
            contract!("training needs at least one sample");
        }
        let epoch = self.epoch;
        let lr = self.schedule.lr_at(epoch);
        let mut rng = ChaCha8Rng::seed_from_u64(self.schedule.seed);
        rng.set_stream(epoch as u64);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);

        let mut total = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.schedule.batch_size) {
            if !self.budget_left() {
                break;
            }
            let batch: Vec<M::Sample> = chunk
                .iter()
                .map(|&i| match self.schedule.crop {
                    Some([n1, n2]) => {
                        let (d1, d2) = samples[i].spatial_dims();
                        let (n1, n2) = (n1.min(d1), n2.min(d2));
                        let o1 = rng.random_range(0..=d1 - n1);
                        let o2 = rng.random_range(0..=d2 - n2);
                        samples[i].crop(o1, o2, n1, n2)
                    }
                    None => Ok(samples[i].clone()),
                })
                .collect::<Result<_>>()?;
            total += self.train_step(&batch, lr)?;
            steps += 1;
        }
        let stats = EpochStats {
            epoch,
            lr,
            mean_loss: total / steps.max(1) as f64,
            steps,
        };
        log::info!("{}", serde_json::json!({"event": "epoch", "stats": &stats, "step": self.step}));
        self.epoch += 1;
        self.history.push(stats.clone());
        Ok(stats)
    }

    /// Runs the remaining epochs of the schedule.
    pub fn run(&mut self, samples: &[M::Sample]) -> Result<&[EpochStats]> {
        while !self.finished() {
            self.run_epoch(samples)?;
        }
        Ok(&self.history)
    }

    pub fn checkpoint(&self) -> Result<Container> {
        let mut c = Container::from_params(self.model.params());
        let params = self.model.params();
        for (i, name) in params.names().enumerate() {
            let shape = params.get(name).expect("listed").shape().to_vec();
            c.push_f64(&format!("adam.m.{name}"), shape.clone(), self.optimizer.state.m[i].clone());
            c.push_f64(&format!("adam.v.{name}"), shape, self.optimizer.state.v[i].clone());
        }
        let mut meta = Map::new();
        meta.insert("kind".into(), M::KIND.into());
        meta.insert("config".into(), self.model.config_json()?);
        meta.insert("config_hash".into(), self.model.config_hash()?.into());
        meta.insert("schedule".into(), serde_json::to_value(&self.schedule)?);
        meta.insert("epoch".into(), self.epoch.into());
        meta.insert("step".into(), self.step.into());
        meta.insert("optimizer_step".into(), self.optimizer.state.step.into());
        meta.insert(
            "rng".into(),
            serde_json::json!({"algorithm": "chacha8", "seed": self.schedule.seed, "next_stream": self.epoch}),
        );
        meta.insert("history".into(), serde_json::to_value(&self.history)?);
        meta.insert("step_losses".into(), serde_json::to_value(&self.step_losses)?);
        c.metadata = meta;
        Ok(c)
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        write_container(path, &self.checkpoint()?)
    }

    /// Restores a checkpoint into `model`, whose config must hash identically.
    pub fn resume(mut model: M, c: &Container) -> Result<Self> {
        let meta = &c.metadata;
        let field = |k: &str| meta.get(k).ok_or_else(|| Error::Contract(format!("checkpoint lacks {k:?}")));
        if field("kind")?.as_str() != Some(M::KIND) {
            contract!("checkpoint is not a {} checkpoint", M::KIND);
        }
        if field("config_hash")?.as_str() != Some(model.config_hash()?.as_str()) {
            contract!("checkpoint config hash does not match the model config");
        }
        c.load_params(model.params_mut())?;
        let schedule: TrainSchedule = serde_json::from_value(field("schedule")?.clone())?;
        let params = model.params();
        let mut state = AdamWState::new(params);
        for (i, name) in params.names().enumerate() {
            state.m[i] = c.f64_values(&format!("adam.m.{name}"))?.to_vec();
            state.v[i] = c.f64_values(&format!("adam.v.{name}"))?.to_vec();
        }
        state.step = field("optimizer_step")?.as_u64().unwrap_or(0);
        let optimizer = AdamW::with_state(schedule.optimizer(), state, params)?;
        let as_usize = |k: &str| -> Result<usize> { Ok(field(k)?.as_u64().unwrap_or(0) as usize) };
        Ok(Self {
            epoch: as_usize("epoch")?,
            step: as_usize("step")?,
            history: serde_json::from_value(field("history")?.clone())?,
            step_losses: serde_json::from_value(field("step_losses")?.clone())?,
            model,
            schedule,
            optimizer,
        })
    }
}

pub fn load_evrn_checkpoint(path: &Path) -> Result<Trainer<EvrnWeights>> {
    let c = read_container(path)?;
    let cfg: EvrnConfig = serde_json::from_value(
        c.metadata.get("config").cloned().ok_or_else(|| Error::Contract("checkpoint lacks config".into()))?,
    )?;
    Trainer::resume(EvrnWeights::zeros(&cfg)?, &c)
}

pub fn load_nvs_checkpoint(path: &Path) -> Result<Trainer<NvsWeights>> {
    let c = read_container(path)?;
    let cfg: NvsConfig = serde_json::from_value(
        c.metadata.get("config").cloned().ok_or_else(|| Error::Contract("checkpoint lacks config".into()))?,
    )?;
    Trainer::resume(NvsWeights::zeros(&cfg)?, &c)
}
