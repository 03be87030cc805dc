mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use epivsr::lf::luma;
use epivsr::lf_io::{load_lf, read_manifest, save_lf};
use epivsr::metrics::evaluate;
use epivsr::model_io::config_hash;
use epivsr::nvs::PasrMethod;
use epivsr::pipeline::{PasrKind, PssrKind};
use epivsr::resample::{degrade, extract_training_patches, load_patch_set, Patch};
use epivsr::synthetic::generate;
use epivsr::tensor::{read_container, write_container, Container, EntryData};
use epivsr::trainer::{build_evrn_pairs, build_nvs_pairs, Trainable, Trainer};
use epivsr::{AngularAxis, EvrnWeights, LightField4D, MetricReport, NvsWeights, Protocol, SrModels, SrMode};
use serde_json::{json, Map, Value};

use config::{Loaded, ModelKind, Overrides};

#[derive(Parser)]
#[command(name = "epivsr", version, about = "Light-field super-resolution over EPI volumes")]
struct Cli {
    /// Caps the worker threads used for internal parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Runs everything on a single thread.
    #[arg(long, global = true)]
    deterministic: bool,
    /// Prints the resolved configuration as JSON instead of running.
    #[arg(long, global = true)]
    print_config: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML or JSON run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Overrides a configuration key, e.g. `--set evrn.blocks=1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Renders a synthetic light field with constant disparity.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        disparity: Option<f64>,
        #[arg(long)]
        width: Option<usize>,
        #[arg(long)]
        height: Option<usize>,
        #[arg(long)]
        angular: Option<usize>,
        #[arg(long)]
        max_freq: Option<f64>,
        #[arg(long)]
        symmetric: bool,
        #[arg(long)]
        bit_depth: Option<u8>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Bicubic spatial down-sampling and/or 9×9 → 5×5 angular decimation.
    Degrade {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        factor: Option<usize>,
        #[arg(long)]
        angular: bool,
        #[arg(long)]
        no_antialias: bool,
    },
    /// Super-resolves a light field.
    Sr {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        input: Option<PathBuf>,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// ssr, asr or assr.
        #[arg(long)]
        mode: Option<SrMode>,
        #[arg(long)]
        factor: Option<usize>,
        /// mean or cnn view synthesis.
        #[arg(long)]
        pasr: Option<String>,
        #[arg(long)]
        evrn: Option<PathBuf>,
        #[arg(long)]
        nvs: Option<PathBuf>,
        /// Pre-up-sampled light field used instead of bicubic.
        #[arg(long)]
        external: Option<PathBuf>,
        /// Refines with an all-zero EVRN, giving the preliminary stage alone.
        #[arg(long)]
        zero_evrn: bool,
    },
    /// Trains EVRN or the view-synthesis network.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, short)]
        out: Option<PathBuf>,
        /// Continues from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Scores a prediction against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        protocol: Option<Protocol>,
        /// JSON report path.
        #[arg(long, short)]
        out: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        grid_csv: Option<PathBuf>,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        scene: Option<String>,
    },
    /// Prints metadata of a light field, weight file, checkpoint or patch set.
    Inspect { path: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let threads = if cli.deterministic { Some(1) } else { cli.threads };
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli.command, cli.print_config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for contract violations, 3 for divergence, 1 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<epivsr::Error>()) {
        Some(epivsr::Error::Contract(_) | epivsr::Error::Range { .. }) => 2,
        Some(epivsr::Error::Diverged { .. }) => 3,
        _ => 1,
    }
}

fn required(p: &Option<PathBuf>, what: &str) -> Result<PathBuf> {
    p.clone().ok_or_else(|| anyhow!("no {what} given (flag or paths section)"))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, serde_json::to_vec_pretty(v)?).with_context(|| format!("writing {path:?}"))
}

fn extra(pairs: Vec<(&str, Value)>) -> Map<String, Value> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

fn run(cmd: Command, print_config: bool) -> Result<()> {
    let load = |common: &Common, o: Overrides| -> Result<Option<Loaded>> {
        let l = config::load(common.config.as_deref(), &common.sets, o.into_vec())?;
        if print_config {
            println!("{}", serde_json::to_string_pretty(&l.echo())?);
            return Ok(None);
        }
        Ok(Some(l))
    };
    match cmd {
        Command::GenSynthetic { common, seed, disparity, width, height, angular, max_freq, symmetric, bit_depth, out } => {
            let mut o = Overrides::default();
            o.add("synthetic.seed", seed)
                .add("synthetic.disparity", disparity)
                .add("synthetic.width", width)
                .add("synthetic.height", height)
                .add("synthetic.angular", angular)
                .add("synthetic.max_freq", max_freq)
                .flag("synthetic.symmetric", symmetric)
                .add("bit_depth", bit_depth)
                .add("paths.output", out);
            load(&common, o)?.map_or(Ok(()), |l| gen_synthetic(&l))
        }
        Command::Degrade { common, input, out, factor, angular, no_antialias } => {
            let mut o = Overrides::default();
            o.add("paths.input", input)
                .add("paths.output", out)
                .add("degrade.spatial_factor", factor)
                .flag("degrade.angular_decimate", angular)
                .add("degrade.antialias", no_antialias.then_some(false));
            load(&common, o)?.map_or(Ok(()), |l| cmd_degrade(&l))
        }
        Command::Sr { common, input, out, mode, factor, pasr, evrn, nvs, external, zero_evrn } => {
            let mut o = Overrides::default();
            o.add("paths.input", input)
                .add("paths.output", out)
                .add("task.mode", mode)
                .add("task.spatial_factor", factor)
                .add("task.pasr", pasr)
                .add("paths.evrn_weights", evrn)
                .add("paths.nvs_weights", nvs)
                .add("paths.external", external.clone())
                .add("task.pssr", external.map(|_| PssrKind::External));
            if let Some(m) = mode {
                o.add("task.angular", Some(m != SrMode::Ssr));
                if m == SrMode::Asr && factor.is_none() {
                    o.add("task.spatial_factor", Some(1));
                }
            }
            load(&common, o)?.map_or(Ok(()), |l| cmd_sr(&l, zero_evrn))
        }
        Command::Train { common, out, resume, epochs } => {
            let mut o = Overrides::default();
            o.add("paths.output", out).add("paths.resume", resume).add("schedule.epochs", epochs);
            load(&common, o)?.map_or(Ok(()), |l| cmd_train(&l))
        }
        Command::Eval { common, pred, gt, protocol, out, csv, grid_csv, method, scene } => {
            let mut o = Overrides::default();
            o.add("paths.input", pred)
                .add("paths.gt", gt)
                .add("eval.protocol", protocol)
                .add("paths.report", out)
                .add("paths.csv", csv)
                .add("paths.grid_csv", grid_csv)
                .add("eval.method", method)
                .add("eval.scene", scene);
            load(&common, o)?.map_or(Ok(()), |l| cmd_eval(&l))
        }
        Command::Inspect { path } => {
            println!("{}", serde_json::to_string_pretty(&inspect(&path)?)?);
            Ok(())
        }
    }
}

fn gen_synthetic(l: &Loaded) -> Result<()> {
    let c = &l.config;
    let out = required(&c.paths.output, "output directory")?;
    let lf = generate(&c.synthetic)?;
    save_lf(
        &out,
        &lf,
        c.bit_depth,
        extra(vec![("generator", serde_json::to_value(&c.synthetic)?), ("config", l.echo())]),
    )?;
    log::info!("wrote {:?} light field to {out:?}", lf.dims());
    Ok(())
}

fn cmd_degrade(l: &Loaded) -> Result<()> {
    let c = &l.config;
    let input = required(&c.paths.input, "input light field")?;
    let out = required(&c.paths.output, "output directory")?;
    let (lf, manifest) = load_lf(&input)?;
    let mut history = match manifest.extra.get("degradation") {
        Some(Value::Array(h)) => h.clone(),
        _ => Vec::new(),
    };
    if !history.is_empty() {
        log::warn!(
            "{input:?} was already degraded ({}); degrading again compounds the loss",
            serde_json::to_string(&history)?
        );
    }
    let low = degrade(&lf, &c.degrade)?;
    history.push(json!({"spec": c.degrade, "source": input, "source_dims": lf.dims()}));
    save_lf(
        &out,
        &low,
        manifest.bit_depth,
        extra(vec![("degradation", Value::Array(history)), ("config", l.echo())]),
    )?;
    log::info!("{:?} → {:?} written to {out:?}", lf.dims(), low.dims());
    Ok(())
}

fn load_evrn(l: &Loaded, path: &Path) -> Result<EvrnWeights> {
    let w = EvrnWeights::load(path).with_context(|| format!("loading EVRN weights {path:?}"))?;
    if l.user_set("evrn") && w.config != l.config.evrn {
        return Err(epivsr::Error::Contract(format!(
            "EVRN weights {path:?} have config hash {}, the run config asks for {}",
            config_hash(epivsr::evrn::KIND, &w.config)?,
            config_hash(epivsr::evrn::KIND, &l.config.evrn)?
        ))
        .into());
    }
    Ok(w)
}

fn load_nvs(l: &Loaded, path: &Path) -> Result<NvsWeights> {
    let w = NvsWeights::load(path).with_context(|| format!("loading NVS weights {path:?}"))?;
    if l.user_set("nvs") && w.config != l.config.nvs {
        return Err(epivsr::Error::Contract(format!(
            "NVS weights {path:?} have config hash {}, the run config asks for {}",
            config_hash(epivsr::nvs::KIND, &w.config)?,
            config_hash(epivsr::nvs::KIND, &l.config.nvs)?
        ))
        .into());
    }
    Ok(w)
}

fn cmd_sr(l: &Loaded, zero_evrn: bool) -> Result<()> {
    let c = &l.config;
    let input = required(&c.paths.input, "input light field")?;
    let out = required(&c.paths.output, "output directory")?;
    c.task.validate()?;
    let t0 = Instant::now();
    let (lf, _) = load_lf(&input)?;
    let external = match &c.paths.external {
        Some(p) => Some(load_lf(p)?.0),
        None => None,
    };
    let mut evrn = match &c.paths.evrn_weights {
        Some(p) => Some(load_evrn(l, p)?),
        None => None,
    };
    if zero_evrn {
        let cfg = evrn.as_ref().map_or_else(
            || {
                let [_, _, ar, _] = c.task.output_dims(lf.height(), lf.width(), lf.a_rho(), lf.a_tau());
                epivsr::EvrnConfig { angular: ar, ..c.evrn.clone() }
            },
            |w| w.config.clone(),
        );
        evrn = Some(EvrnWeights::zeros(&cfg)?);
    }
    if evrn.is_none() {
        log::warn!("no EVRN weights given; the output is the preliminary up-sampling alone");
    }
    let nvs = match (&c.paths.nvs_weights, c.task.pasr) {
        (Some(p), _) => Some(load_nvs(l, p)?),
        (None, PasrKind::Cnn) => bail!("cnn view synthesis needs NVS weights (--nvs)"),
        (None, PasrKind::Mean) => None,
    };
    let load_s = t0.elapsed().as_secs_f64();
    let models = SrModels { evrn: evrn.as_ref(), nvs: nvs.as_ref(), external: external.as_ref() };
    let (sr, report) = epivsr::super_resolve(&lf, &c.task, &models)?;
    let t1 = Instant::now();
    let hash = |p: &Option<PathBuf>, kind: &str| -> Result<Value> {
        Ok(match p {
            Some(p) => read_container(p)?.metadata.get("config_hash").cloned().unwrap_or(Value::Null),
            None if kind == "evrn" && zero_evrn => "zero".into(),
            None => Value::Null,
        })
    };
    let echo = json!({
        "config": l.echo(),
        "report": report,
        "zero_evrn": zero_evrn,
        "weights": {"evrn": hash(&c.paths.evrn_weights, "evrn")?, "nvs": hash(&c.paths.nvs_weights, "nvs")?},
    });
    save_lf(&out, &sr, c.bit_depth, extra(vec![("sr", echo.clone())]))?;
    let mut timing = echo;
    timing["timing"] = json!({"load_s": load_s, "sr_s": report.seconds, "save_s": t1.elapsed().as_secs_f64()});
    let report_path = c.paths.report.clone().unwrap_or_else(|| out.join("sr_report.json"));
    write_json(&report_path, &timing)?;
    log::info!("{:?} → {:?} in {:.2} s", report.input_dims, report.output_dims, report.seconds);
    Ok(())
}

fn training_patches(l: &Loaded) -> Result<Vec<Patch>> {
    let t = &l.config.train;
    let mut lfs: Vec<(String, LightField4D)> = Vec::new();
    for s in &t.scenes {
        lfs.push((format!("synthetic-{}-d{}", s.seed, s.disparity), generate(s)?));
    }
    for dir in &t.lf_dirs {
        if dir.join("index.json").is_file() {
            return Err(anyhow!("{dir:?} is a patch set; list light-field directories only"));
        }
        let (lf, _) = load_lf(dir)?;
        lfs.push((dir.display().to_string(), luma(&lf)?));
    }
    let mut patches = Vec::new();
    for (scene, lf) in lfs {
        match &t.patch {
            Some(spec) => patches.extend(extract_training_patches(&lf, spec, &scene)?),
            None => patches.push(Patch { scene, y: 0, x: 0, lf }),
        }
    }
    if patches.is_empty() {
        bail!("no training data: set train.scenes or train.lf_dirs");
    }
    Ok(patches)
}

fn train_loop<M: Trainable>(
    l: &Loaded,
    model: M,
    samples: &[M::Sample],
    out: &Path,
    save: impl Fn(&M, &Path) -> epivsr::Result<()>,
) -> Result<()> {
    let c = &l.config;
    let mut trainer = match &c.paths.resume {
        Some(p) => {
            let mut t = Trainer::resume(model, &read_container(p)?).with_context(|| format!("resuming from {p:?}"))?;
            if t.schedule.epochs != c.schedule.epochs {
                log::info!("extending schedule from {} to {} epochs", t.schedule.epochs, c.schedule.epochs);
            }
            t.schedule.epochs = c.schedule.epochs;
            log::info!("resumed at epoch {} (step {})", t.epoch, t.step);
            t
        }
        None => Trainer::new(model, c.schedule.clone())?,
    };
    std::fs::create_dir_all(out)?;
    let ckpt = out.join("checkpoint.lfvw");
    log::info!("{} training samples", samples.len());
    let write_ckpt = |t: &Trainer<M>| -> Result<()> {
        let mut container = t.checkpoint()?;
        container.metadata.insert("run_config".into(), l.echo());
        write_container(&ckpt, &container)?;
        Ok(())
    };
    while !trainer.finished() {
        trainer.run_epoch(samples)?;
        write_ckpt(&trainer)?;
    }
    write_ckpt(&trainer)?;
    let weights = out.join(format!("{}.lfvw", M::KIND));
    save(&trainer.model, &weights)?;
    write_json(
        &out.join("train_log.json"),
        &json!({
            "config": l.echo(),
            "kind": M::KIND,
            "config_hash": trainer.model.config_hash()?,
            "epochs": trainer.epoch,
            "steps": trainer.step,
            "history": trainer.history,
            "step_losses": trainer.step_losses,
        }),
    )?;
    log::info!("weights written to {weights:?}");
    Ok(())
}

fn cmd_train(l: &Loaded) -> Result<()> {
    let c = &l.config;
    let out = required(&c.paths.output, "output directory")?;
    let patches = training_patches(l)?;
    match c.train.model {
        ModelKind::Evrn => {
            let nvs = match (&c.paths.nvs_weights, c.task.pasr) {
                (Some(p), PasrKind::Cnn) => Some(load_nvs(l, p)?),
                (None, PasrKind::Cnn) if c.task.mode != SrMode::Ssr => {
                    bail!("cnn view synthesis needs NVS weights (paths.nvs_weights)")
                }
                _ => None,
            };
            let pasr = nvs.as_ref().map_or(PasrMethod::Mean, PasrMethod::Cnn);
            let set = build_evrn_pairs(&patches, c.task.mode, c.task.spatial_factor, pasr)?;
            let model = match &c.paths.resume {
                Some(_) => EvrnWeights::zeros(&c.evrn)?,
                None => EvrnWeights::init(&c.evrn, c.seed)?,
            };
            train_loop(l, model, &set.pairs, &out, EvrnWeights::save)
        }
        ModelKind::Nvs => {
            let pairs = build_nvs_pairs(&patches)?;
            let model = match &c.paths.resume {
                Some(_) => NvsWeights::zeros(&c.nvs)?,
                None => NvsWeights::init(&c.nvs, c.seed)?,
            };
            train_loop(l, model, &pairs, &out, NvsWeights::save)
        }
    }
}

fn cmd_eval(l: &Loaded) -> Result<()> {
    let c = &l.config;
    let pred_dir = required(&c.paths.input, "prediction (--pred)")?;
    let gt_dir = required(&c.paths.gt, "ground truth (--gt)")?;
    let (pred, _) = load_lf(&pred_dir)?;
    let (gt, _) = load_lf(&gt_dir)?;
    let report = evaluate(&pred, &gt, c.eval.protocol)?;
    println!("{}", MetricReport::csv_header());
    println!("{}", report.csv_row(&c.eval.method, &c.eval.scene));
    if let Some(p) = &c.paths.report {
        let mut v = serde_json::to_value(&report)?;
        v["config"] = l.echo();
        v["pred"] = json!(pred_dir);
        v["gt"] = json!(gt_dir);
        write_json(p, &v)?;
    }
    if let Some(p) = &c.paths.csv {
        let row = report.csv_row(&c.eval.method, &c.eval.scene);
        let text = if p.is_file() {
            format!("{}{row}\n", std::fs::read_to_string(p)?)
        } else {
            format!("{}\n{row}\n", MetricReport::csv_header())
        };
        std::fs::write(p, text)?;
    }
    if let Some(p) = &c.paths.grid_csv {
        std::fs::write(p, report.grid_csv())?;
    }
    Ok(())
}

fn inspect(path: &Path) -> Result<Value> {
    if path.is_dir() {
        if path.join("index.json").is_file() {
            let patches = load_patch_set(path)?;
            return Ok(json!({
                "type": "patch_set",
                "patches": patches.len(),
                "dims": patches.first().map(|p| p.lf.dims()),
            }));
        }
        let manifest = read_manifest(path)?;
        let (lf, _) = load_lf(path)?;
        let y = luma(&lf)?;
        let volumes = |axis: AngularAxis| -> Result<Value> {
            let v = y.slice(axis)?;
            Ok(json!({"count": v.len(), "dims": v.first().map(|v| v.dims()), "orientation": v.first().map(|v| v.orientation)}))
        };
        let (lo, hi) = lf.data().iter().fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        return Ok(json!({
            "type": "light_field",
            "dims": {"height": lf.height(), "width": lf.width(), "a_rho": lf.a_rho(), "a_tau": lf.a_tau(), "channels": lf.channels()},
            "range": [lo, hi],
            "volumes": {"tau": volumes(AngularAxis::Tau)?, "rho": volumes(AngularAxis::Rho)?},
            "manifest": manifest,
        }));
    }
    let c: Container = read_container(path)?;
    let entries: Vec<Value> = c
        .entries
        .iter()
        .map(|e| {
            let dtype = match e.data {
                EntryData::F32(_) => "f32",
                EntryData::F64(_) => "f64",
            };
            json!({"name": e.name, "shape": e.shape, "dtype": dtype})
        })
        .collect();
    let mut meta = c.metadata.clone();
    if let Some(Value::Array(l)) = meta.get("step_losses") {
        let n = l.len();
        meta.insert("step_losses".into(), json!(format!("{n} values")));
    }
    let kind = if meta.contains_key("schedule") { "checkpoint" } else { "weights" };
    Ok(json!({"type": kind, "metadata": meta, "entries": entries}))
}
