//! Acceptance suite: one PASS/FAIL line per criterion on stdout
//! (`cargo test --test acceptance -- --nocapture`).

mod common;

use std::sync::{Mutex, MutexGuard};
use std::time::{Duration, Instant};

use common::*;
use epivsr::evrn::{aaw_weights, caw_weights, saw_weights};
use epivsr::lf::{AngularAxis, ColorSpace, EpiVolume, Image, LightField4D, Orientation};
use epivsr::metrics::{asr_mask, evaluate, ssr_mask, Protocol};
use epivsr::nvs::{pasr_volume, PasrMethod};
use epivsr::pipeline::{PasrKind, SrMode, SrModels, SrTask};
use epivsr::resample::{angular_decimate, decimated_indices, lf_spatial_downsample, Patch};
use epivsr::synthetic::{generate, SceneSpec};
use epivsr::tensor::ops::{self, PoolMode};
use epivsr::tensor::{AdamW, AdamWConfig, Gradients, Graph, ParamStore, Tensor, Var};
use epivsr::trainer::{
    build_evrn_pairs, evaluate_loss, nvs_pairs_from_volume, TrainSchedule, Trainer,
};
use epivsr::{super_resolve, EvrnConfig, EvrnWeights, NvsConfig, NvsWeights};
use rand::seq::SliceRandom;
use rand::Rng;

fn verdict(name: &str, pass: bool, detail: &str) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

/// Runs criteria one at a time so their timings are not inflated by each other.
fn exclusive() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn random_lf(r: &mut rand_chacha::ChaCha8Rng, max_hw: usize, max_a: usize) -> LightField4D {
    let (h, w) = (r.random_range(1..=max_hw), r.random_range(1..=max_hw));
    let (ar, at) = (r.random_range(1..=max_a), r.random_range(1..=max_a));
    let data = (0..h * w * ar * at).map(|_| r.random::<f32>()).collect();
    LightField4D::new(h, w, ar, at, ColorSpace::Y, data).unwrap()
}

#[test]
fn slice_merge_round_trip() {
    let _serial = exclusive();
    let mut r = rng(1);
    let start = Instant::now();
    let mut failures = 0;
    for _ in 0..50 {
        let lf = random_lf(&mut r, 16, 5);
        for axis in [AngularAxis::Tau, AngularAxis::Rho] {
            let back = LightField4D::merge(&lf.slice(axis).unwrap(), axis).unwrap();
            if back != lf {
                failures += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    verdict(
        "slice/merge round trip",
        failures == 0 && secs < 5.0,
        &format!("50 light fields x 2 axes, {failures} mismatches, {secs:.3} s (limit 5 s)"),
    );
}

#[test]
fn epi_line_property() {
    let _serial = exclusive();
    let mut violations = 0;
    let mut checked = 0;
    for d in [0usize, 1, 2] {
        let lf = generate(&SceneSpec::new(7 + d as u64, d as f64, 40, 36, 9)).unwrap();
        for axis in [AngularAxis::Tau, AngularAxis::Rho] {
            for v in lf.slice(axis).unwrap() {
                let [s1, a, s2] = v.dims();
                for i in d..s1 {
                    for j in 0..a - 1 {
                        for k in 0..s2 {
                            checked += 1;
                            if v.get(i, j + 1, k).to_bits() != v.get(i - d, j, k).to_bits() {
                                violations += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    verdict(
        "EPI line property",
        violations == 0 && checked > 0,
        &format!("d in {{0,1,2}}, both orientations, {checked} samples, {violations} violations"),
    );
}

fn odd_kernel(r: &mut rand_chacha::ChaCha8Rng) -> usize {
    [1, 3, 5][r.random_range(0..3)]
}

#[test]
fn operator_oracles() {
    let _serial = exclusive();
    const CASES: usize = 100;
    const TOL: f64 = 1e-5;
    let mut r = rng(2);
    let mut worst: Vec<(&str, f64)> = Vec::new();

    let mut e = 0.0f64;
    for _ in 0..CASES {
        let dims: Vec<usize> = (0..3).map(|_| r.random_range(1..=7)).collect();
        let (cin, cout) = (r.random_range(1..=4), r.random_range(1..=4));
        let k = [odd_kernel(&mut r), odd_kernel(&mut r), odd_kernel(&mut r)];
        let x = random_tensor(&[dims[0], dims[1], dims[2], cin], &mut r, -1.0, 1.0);
        let w = random_tensor(&[k[0], k[1], k[2], cin, cout], &mut r, -1.0, 1.0);
        let b = random_tensor(&[cout], &mut r, -1.0, 1.0);
        let y = ops::conv3d_same(&x, &w, &b).unwrap();
        let o = conv3d(&Arr::from_tensor(&x), &Arr::from_tensor(&w), &Arr::from_tensor(&b));
        e = e.max(max_rel(&Arr::from_tensor(&y), &o));
    }
    worst.push(("conv3d", e));

    let mut e = 0.0f64;
    for _ in 0..CASES {
        let (h, w_) = (r.random_range(1..=9), r.random_range(1..=9));
        let (cin, cout) = (r.random_range(1..=4), r.random_range(1..=4));
        let (kh, kw) = (odd_kernel(&mut r), odd_kernel(&mut r));
        let x = random_tensor(&[h, w_, cin], &mut r, -1.0, 1.0);
        let w = random_tensor(&[kh, kw, cin, cout], &mut r, -1.0, 1.0);
        let b = random_tensor(&[cout], &mut r, -1.0, 1.0);
        let y = ops::conv2d_same(&x, &w, &b).unwrap();
        let o = conv2d(&Arr::from_tensor(&x), &Arr::from_tensor(&w), &Arr::from_tensor(&b));
        e = e.max(max_rel(&Arr::from_tensor(&y), &o));
    }
    worst.push(("conv2d", e));

    let mut e = 0.0f64;
    for i in 0..CASES {
        let shape: Vec<usize> = (0..4).map(|_| r.random_range(1..=5)).collect();
        let mut axes: Vec<usize> = (0..4).filter(|_| r.random_bool(0.5)).collect();
        if axes.is_empty() {
            axes.push(r.random_range(0..4));
        }
        let mode = if i % 2 == 0 { PoolMode::Avg } else { PoolMode::Max };
        let x = random_tensor(&shape, &mut r, -1.0, 1.0);
        let y = ops::pool_over_axes(&x, &axes, mode).unwrap();
        let o = pool(&Arr::from_tensor(&x), &axes, mode == PoolMode::Max);
        e = e.max(max_rel(&Arr::from_tensor(&y), &o));
    }
    worst.push(("pool", e));

    let mut e = 0.0f64;
    for _ in 0..CASES {
        let (n, m) = (r.random_range(1..=40), r.random_range(1..=40));
        let x = random_tensor(&[n], &mut r, -1.0, 1.0);
        let w = random_tensor(&[n, m], &mut r, -1.0, 1.0);
        let b = random_tensor(&[m], &mut r, -1.0, 1.0);
        let y = ops::dense(&x, &w, &b).unwrap();
        let o = dense(&Arr::from_tensor(&x), &Arr::from_tensor(&w), &Arr::from_tensor(&b));
        e = e.max(max_rel(&Arr::from_tensor(&y), &o));
    }
    worst.push(("dense", e));

    let mut e = 0.0f64;
    for _ in 0..CASES {
        let base: Vec<usize> = (0..4).map(|_| r.random_range(1..=4)).collect();
        let axis = r.random_range(0..4);
        let parts: Vec<Tensor> = (0..r.random_range(1..=3))
            .map(|_| {
                let mut s = base.clone();
                s[axis] = r.random_range(1..=4);
                random_tensor(&s, &mut r, -1.0, 1.0)
            })
            .collect();
        let refs: Vec<&Tensor> = parts.iter().collect();
        let y = ops::concat(&refs, axis).unwrap();
        let arrs: Vec<Arr> = parts.iter().map(Arr::from_tensor).collect();
        let arefs: Vec<&Arr> = arrs.iter().collect();
        e = e.max(max_rel(&Arr::from_tensor(&y), &concat(&arefs, axis)));
    }
    worst.push(("concat", e));

    let mut e = 0.0f64;
    for _ in 0..CASES {
        let shape: Vec<usize> = (0..4).map(|_| r.random_range(1..=5)).collect();
        let wshape: Vec<usize> = shape.iter().map(|&s| if r.random_bool(0.5) { 1 } else { s }).collect();
        let x = random_tensor(&shape, &mut r, -1.0, 1.0);
        let w = random_tensor(&wshape, &mut r, -1.0, 1.0);
        let y = ops::broadcast_mul(&x, &w).unwrap();
        let o = broadcast_mul(&Arr::from_tensor(&x), &Arr::from_tensor(&w));
        e = e.max(max_rel(&Arr::from_tensor(&y), &o));
    }
    worst.push(("broadcast", e));

    let pass = worst.iter().all(|&(_, e)| e <= TOL);
    let detail: Vec<String> = worst.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    verdict(
        "operator oracles",
        pass,
        &format!("{CASES} cases each, max relative error: {} (limit {TOL:.0e})", detail.join(", ")),
    );
}

fn store(entries: Vec<(&str, Tensor)>) -> ParamStore {
    let mut s = ParamStore::new();
    for (n, t) in entries {
        s.insert(n, t, true).unwrap();
    }
    s
}

/// Distinct values on a grid of spacing `1/n`, shuffled, so max pooling has
/// no near-ties.
fn distinct(shape: &[usize], r: &mut rand_chacha::ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f32> = (0..n).map(|i| i as f32 / n as f32 - 0.5).collect();
    v.shuffle(r);
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn randomize_non_weights(s: &mut ParamStore, r: &mut rand_chacha::ChaCha8Rng) {
    let names: Vec<String> = s.names().map(str::to_string).collect();
    for n in names {
        let shape = s.get(&n).unwrap().shape().to_vec();
        if n.ends_with(".slope") {
            s.set(&n, random_tensor(&shape, r, 0.05, 0.3)).unwrap();
        } else if !n.ends_with(".weight") {
            s.set(&n, random_tensor(&shape, r, -0.2, 0.2)).unwrap();
        }
    }
}

type Build = Box<dyn Fn(&mut Graph, &ParamStore) -> Var>;

#[test]
fn gradient_checks() {
    let _serial = exclusive();
    const H: f32 = 1e-3;
    let mut r = rng(3);
    let start = Instant::now();
    let mut cases: Vec<(&str, ParamStore, Build)> = Vec::new();

    let p = |g: &mut Graph, s: &ParamStore, n: &str| g.param(s, n).unwrap();
    cases.push((
        "conv3d",
        store(vec![
            ("x", random_tensor(&[5, 4, 6, 2], &mut r, -1.0, 1.0)),
            ("w", random_tensor(&[3, 1, 5, 2, 3], &mut r, -1.0, 1.0)),
            ("b", random_tensor(&[3], &mut r, -1.0, 1.0)),
        ]),
        Box::new(move |g, s| {
            let (x, w, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
            g.conv3d(x, w, b).unwrap()
        }),
    ));
    cases.push((
        "conv2d",
        store(vec![
            ("x", random_tensor(&[6, 7, 2], &mut r, -1.0, 1.0)),
            ("w", random_tensor(&[5, 3, 2, 3], &mut r, -1.0, 1.0)),
            ("b", random_tensor(&[3], &mut r, -1.0, 1.0)),
        ]),
        Box::new(move |g, s| {
            let (x, w, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
            g.conv2d(x, w, b).unwrap()
        }),
    ));
    cases.push((
        "prelu",
        store(vec![
            ("x", away_from_zero(&[4, 3, 5, 3], &mut r, 0.05)),
            ("s", random_tensor(&[3], &mut r, 0.05, 0.5)),
        ]),
        Box::new(move |g, s| {
            let (x, sl) = (p(g, s, "x"), p(g, s, "s"));
            g.prelu(x, sl).unwrap()
        }),
    ));
    cases.push((
        "sigmoid",
        store(vec![("x", random_tensor(&[4, 6], &mut r, -3.0, 3.0))]),
        Box::new(move |g, s| {
            let x = p(g, s, "x");
            g.sigmoid(x)
        }),
    ));
    cases.push((
        "relu",
        store(vec![("x", away_from_zero(&[4, 6], &mut r, 0.05))]),
        Box::new(move |g, s| {
            let x = p(g, s, "x");
            g.relu(x)
        }),
    ));
    for (name, mode, axes) in [
        ("pool avg (a, c)", PoolMode::Avg, vec![1, 3]),
        ("pool avg (s1, a, s2)", PoolMode::Avg, vec![0, 1, 2]),
        ("pool max (a, c)", PoolMode::Max, vec![1, 3]),
        ("pool max (s1, s2, c)", PoolMode::Max, vec![0, 2, 3]),
    ] {
        cases.push((
            name,
            store(vec![("x", distinct(&[4, 3, 5, 2], &mut r))]),
            Box::new(move |g, s| {
                let x = p(g, s, "x");
                g.pool(x, &axes, mode).unwrap()
            }),
        ));
    }
    cases.push((
        "dense",
        store(vec![
            ("x", random_tensor(&[6], &mut r, -1.0, 1.0)),
            ("w", random_tensor(&[6, 4], &mut r, -1.0, 1.0)),
            ("b", random_tensor(&[4], &mut r, -1.0, 1.0)),
        ]),
        Box::new(move |g, s| {
            let (x, w, b) = (p(g, s, "x"), p(g, s, "w"), p(g, s, "b"));
            g.dense(x, w, b).unwrap()
        }),
    ));
    cases.push((
        "concat",
        store(vec![
            ("a", random_tensor(&[3, 2, 4], &mut r, -1.0, 1.0)),
            ("b", random_tensor(&[3, 5, 4], &mut r, -1.0, 1.0)),
        ]),
        Box::new(move |g, s| {
            let (a, b) = (p(g, s, "a"), p(g, s, "b"));
            g.concat(&[a, b], 1).unwrap()
        }),
    ));
    for (name, wshape) in [
        ("broadcast_mul (1, a, 1, 1)", [1, 3, 1, 1]),
        ("broadcast_mul (s1, 1, s2, 1)", [4, 1, 5, 1]),
        ("broadcast_mul (1, 1, 1, c)", [1, 1, 1, 2]),
    ] {
        cases.push((
            name,
            store(vec![
                ("x", random_tensor(&[4, 3, 5, 2], &mut r, -1.0, 1.0)),
                ("w", random_tensor(&wshape, &mut r, 0.0, 1.0)),
            ]),
            Box::new(move |g, s| {
                let (x, w) = (p(g, s, "x"), p(g, s, "w"));
                g.broadcast_mul(x, w).unwrap()
            }),
        ));
    }
    cases.push((
        "add",
        store(vec![
            ("x", random_tensor(&[3, 4], &mut r, -1.0, 1.0)),
            ("y", random_tensor(&[3, 4], &mut r, -1.0, 1.0)),
        ]),
        Box::new(move |g, s| {
            let (x, y) = (p(g, s, "x"), p(g, s, "y"));
            g.add(x, y).unwrap()
        }),
    ));
    cases.push((
        "reshape",
        store(vec![("x", random_tensor(&[4, 6], &mut r, -1.0, 1.0))]),
        Box::new(move |g, s| {
            let x = p(g, s, "x");
            g.reshape(x, &[2, 12]).unwrap()
        }),
    ));
    cases.push((
        "sum",
        store(vec![("x", random_tensor(&[4, 6], &mut r, -1.0, 1.0))]),
        Box::new(move |g, s| {
            let x = p(g, s, "x");
            g.sum(x)
        }),
    ));
    let target = random_tensor(&[5, 3, 4, 1], &mut r, 0.0, 1.0);
    let gap = away_from_zero(&[5, 3, 4, 1], &mut r, 0.05);
    let pred = Tensor::new(
        target.shape().to_vec(),
        target.data().iter().zip(gap.data()).map(|(t, d)| t + 0.3 * d).collect(),
    )
    .unwrap();
    cases.push((
        "l1_loss",
        store(vec![("pred", pred)]),
        Box::new(move |g, s| {
            let x = p(g, s, "pred");
            let t = g.input(target.clone());
            g.l1_loss(x, t).unwrap()
        }),
    ));

    type Oracle = Box<dyn Fn(&Params) -> Arr>;
    let mut nets: Vec<(&str, ParamStore, Build, Oracle)> = Vec::new();
    let ecfg = EvrnConfig {
        blocks: 1,
        channels: 4,
        reduction: 2,
        angular: 3,
        ..EvrnConfig::default()
    };
    let mut ew = EvrnWeights::init(&ecfg, 11).unwrap();
    randomize_non_weights(&mut ew.params, &mut r);
    let ex = random_tensor(&[6, 3, 5, 1], &mut r, 0.0, 1.0);
    let exa = Arr::from_tensor(&ex);
    let (c1, c2) = (ecfg.clone(), ecfg.clone());
    nets.push((
        "EVRN (R=1, C=4, r=2)",
        ew.params.clone(),
        Box::new(move |g, s| {
            let x = g.input(ex.clone());
            epivsr::evrn::evrn_forward(g, s, &c1, x).unwrap()
        }),
        Box::new(move |ps| evrn(ps, &c2, &exa)),
    ));
    let ncfg = NvsConfig { blocks: 1, channels: 4 };
    let mut nw = NvsWeights::init(&ncfg, 12).unwrap();
    randomize_non_weights(&mut nw.params, &mut r);
    let (na, nb) = (
        random_tensor(&[7, 6, 1], &mut r, 0.0, 1.0),
        random_tensor(&[7, 6, 1], &mut r, 0.0, 1.0),
    );
    let (naa, nba) = (Arr::from_tensor(&na), Arr::from_tensor(&nb));
    let n2 = ncfg.clone();
    nets.push((
        "NVS-CNN (R'=1, C'=4)",
        nw.params.clone(),
        Box::new(move |g, s| {
            let (a, b) = (g.input(na.clone()), g.input(nb.clone()));
            epivsr::nvs::nvs_cnn_forward(g, s, &ncfg, a, b).unwrap()
        }),
        Box::new(move |ps| nvs(ps, &n2, &naa, &nba)),
    ));

    let chain_store = store(vec![
        ("x", random_tensor(&[4, 3, 5, 2], &mut r, -1.0, 1.0)),
        ("k", random_tensor(&[3, 3, 3, 2, 3], &mut r, -0.5, 0.5)),
        ("kb", random_tensor(&[3], &mut r, -0.2, 0.2)),
        ("s", random_tensor(&[3], &mut r, 0.05, 0.5)),
        ("w", random_tensor(&[3, 2], &mut r, -1.0, 1.0)),
        ("b", random_tensor(&[2], &mut r, -1.0, 1.0)),
    ]);
    nets.push((
        "conv3d -> prelu -> pool -> dense",
        chain_store,
        Box::new(move |g, s| {
            let (x, k, kb, sl) = (p(g, s, "x"), p(g, s, "k"), p(g, s, "kb"), p(g, s, "s"));
            let y = g.conv3d(x, k, kb).unwrap();
            let y = g.prelu(y, sl).unwrap();
            let y = g.pool(y, &[0, 1, 2], PoolMode::Avg).unwrap();
            let y = g.reshape(y, &[3]).unwrap();
            let (w, b) = (p(g, s, "w"), p(g, s, "b"));
            g.dense(y, w, b).unwrap()
        }),
        Box::new(|ps| {
            let y = common::conv3d(&ps["x"], &ps["k"], &ps["kb"]);
            let y = common::prelu(&y, &ps["s"]);
            let y = common::pool(&y, &[0, 1, 2], false);
            let y = common::reshape(&y, &[3]);
            common::dense(&y, &ps["w"], &ps["b"])
        }),
    ));

    let mut all_ok = true;
    let mut lines = Vec::new();
    let mut total = 0;
    let mut skipped = 0;
    let mut report = |name: &str, c: GradCheck| {
        let ok = c.max_rel < 1e-2 && c.median_rel < 1e-3;
        all_ok &= ok;
        total += c.checked;
        skipped += c.skipped;
        println!(
            "  {name}: {} coords ({} straddling a kink skipped), max {:.2e}, median {:.2e}{}",
            c.checked,
            c.skipped,
            c.max_rel,
            c.median_rel,
            if ok { String::new() } else { format!(" worst {}", c.worst) }
        );
        lines.push((c.max_rel, c.median_rel));
    };
    for (i, (name, s, build)) in cases.iter().enumerate() {
        report(name, grad_check(s, build.as_ref(), 100 + i as u64, H));
    }
    for (i, (name, s, build, oracle)) in nets.iter().enumerate() {
        report(name, grad_check_l1_oracle(s, build.as_ref(), oracle.as_ref(), 200 + i as u64, H));
    }
    let secs = start.elapsed().as_secs_f64();
    let worst_max = lines.iter().map(|l| l.0).fold(0.0, f64::max);
    let worst_med = lines.iter().map(|l| l.1).fold(0.0, f64::max);
    verdict(
        "gradient checks",
        all_ok && secs < 120.0,
        &format!(
            "{} graphs, {total} coordinates ({skipped} at kinks skipped), worst max {worst_max:.2e} (limit 1e-2), worst median {worst_med:.2e} (limit 1e-3), {secs:.1} s (limit 120 s)",
            lines.len()
        ),
    );
}

#[test]
fn residual_identities() {
    let _serial = exclusive();
    let mut r = rng(4);
    let base = EvrnConfig {
        blocks: 2,
        channels: 4,
        reduction: 2,
        angular: 5,
        ..EvrnConfig::default()
    };
    let mut evrn_ok = true;
    for cfg in base.attention_wirings() {
        let w = EvrnWeights::zeros(&cfg).unwrap();
        let data: Vec<f32> = (0..7 * 5 * 6).map(|_| r.random()).collect();
        let v = EpiVolume::new([7, 5, 6], data, Orientation::Horizontal, 0).unwrap();
        evrn_ok &= w.refine(&v).unwrap() == v;
    }
    let nw = NvsWeights::zeros(&NvsConfig::desk()).unwrap();
    let a = Image::from_fn(9, 8, |y, x| ((y * 8 + x) % 7) as f32 / 6.0);
    let b = Image::from_fn(9, 8, |y, x| ((y + 3 * x) % 5) as f32 / 4.0);
    let nvs_ok = nw.synthesize(&a, &b).unwrap() == Image::filled(9, 8, 1, 0.0);
    let trained = NvsWeights::init(&NvsConfig::desk(), 5).unwrap();
    let mut pasr_ok = true;
    for orientation in [Orientation::Horizontal, Orientation::Vertical] {
        let data: Vec<f32> = (0..8 * 5 * 7).map(|_| r.random()).collect();
        let v = EpiVolume::new([8, 5, 7], data, orientation, 1).unwrap();
        for m in [PasrMethod::Mean, PasrMethod::Cnn(&trained)] {
            let up = pasr_volume(&v, m).unwrap();
            pasr_ok &= (0..5).all(|i| up.view(2 * i).unwrap() == v.view(i).unwrap());
        }
    }
    verdict(
        "residual identities",
        evrn_ok && nvs_ok && pasr_ok,
        &format!("zero EVRN = identity on 8 wirings: {evrn_ok}; zero NVS-CNN = 0: {nvs_ok}; PASR keeps input slices: {pasr_ok}"),
    );
}

#[test]
fn attention_ranges() {
    let _serial = exclusive();
    let mut r = rng(5);
    let cfg = EvrnConfig {
        blocks: 1,
        channels: 8,
        reduction: 2,
        angular: 5,
        ..EvrnConfig::default()
    };
    let run = |params: &ParamStore, f: &Tensor| -> Vec<Tensor> {
        let mut g = Graph::new();
        let x = g.input(f.clone());
        let c = caw_weights(&mut g, params, "block1", x, true).unwrap();
        let s = saw_weights(&mut g, params, "spatial", x).unwrap();
        let a = aaw_weights(&mut g, params, "angular", x).unwrap();
        vec![g.value(c).clone(), g.value(s).clone(), g.value(a).clone()]
    };
    let mut in_range = true;
    for seed in 0..20 {
        let mut w = EvrnWeights::init(&cfg, seed).unwrap();
        randomize_non_weights(&mut w.params, &mut r);
        let f = random_tensor(&[6, 5, 7, 8], &mut r, -2.0, 2.0);
        for t in run(&w.params, &f) {
            in_range &= t.data().iter().all(|&v| v > 0.0 && v < 1.0);
        }
    }
    let zero = EvrnWeights::zeros(&cfg).unwrap();
    let f = random_tensor(&[6, 5, 7, 8], &mut r, -2.0, 2.0);
    let half = run(&zero.params, &f)
        .iter()
        .all(|t| t.data().iter().all(|&v| v == 0.5));
    let mut wirings = 0;
    let vol = EpiVolume::new(
        [6, 5, 7],
        (0..6 * 5 * 7).map(|_| r.random()).collect(),
        Orientation::Vertical,
        0,
    )
    .unwrap();
    for w in cfg.attention_wirings() {
        let net = EvrnWeights::init(&w, 3).unwrap();
        let out = net.refine(&vol).unwrap();
        if out.dims() == vol.dims() && out.data().iter().all(|v| v.is_finite()) {
            wirings += 1;
        }
    }
    verdict(
        "attention ranges",
        in_range && half && wirings == 8,
        &format!("CAW/SAW/AAW in (0,1) on 20 random draws: {in_range}; zero params give 0.5: {half}; wirings run: {wirings}/8"),
    );
}

/// Textbook Adam on single-precision parameters with double-precision moments.
fn reference_adam(theta: &mut [f32], m: &mut [f64], v: &mut [f64], g: &[f32], t: i32, lr: f64) {
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8f64);
    for k in 0..theta.len() {
        let gk = g[k] as f64;
        m[k] = b1 * m[k] + (1.0 - b1) * gk;
        v[k] = b2 * v[k] + (1.0 - b2) * gk * gk;
        let mh = m[k] / (1.0 - b1.powi(t));
        let vh = v[k] / (1.0 - b2.powi(t));
        theta[k] = (theta[k] as f64 - lr * mh / (vh.sqrt() + eps)) as f32;
    }
}

#[test]
fn adamw_and_schedule() {
    let _serial = exclusive();
    // θ' = θ − lr·(m̂/(√v̂ + ε) + λθ); after one step m̂ = g and v̂ = g².
    let mut s = ParamStore::new();
    s.insert("a.weight", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap(), true).unwrap();
    s.insert("a.bias", Tensor::new(vec![1], vec![0.5]).unwrap(), false).unwrap();
    let mut g = Gradients::zeros_like(&s);
    g.set(&s, "a.weight", Tensor::new(vec![2], vec![0.5, -3.0]).unwrap()).unwrap();
    g.set(&s, "a.bias", Tensor::new(vec![1], vec![0.2]).unwrap()).unwrap();
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.01, ..AdamWConfig::default() }, &s);
    let mut s1 = s.clone();
    opt.step(&mut s1, &g, 0.1).unwrap();
    // 1 − 0.1·(0.5/(0.5+1e-8) + 0.01), −2 − 0.1·(−3/(3+1e-8) − 0.02), 0.5 − 0.1·0.2/(0.2+1e-8)
    let expect = [0.898_999_998_0, -1.898_000_000_333, 0.400_000_005];
    let got = [
        s1.get("a.weight").unwrap().data()[0] as f64,
        s1.get("a.weight").unwrap().data()[1] as f64,
        s1.get("a.bias").unwrap().data()[0] as f64,
    ];
    let mut opt2 = AdamW::new(AdamWConfig { weight_decay: 0.1, ..AdamWConfig::default() }, &s);
    let mut s2 = s.clone();
    opt2.step(&mut s2, &g, 1e-3).unwrap();
    // −2 − 1e-3·(−3/(3+1e-8) + 0.1·(−2))
    let got2 = s2.get("a.weight").unwrap().data()[1] as f64;
    let hand_err = expect
        .iter()
        .zip(got)
        .map(|(e, g)| (e - g).abs())
        .fold((got2 - -1.998_800_000_003f64).abs(), f64::max);

    let mut r = rng(6);
    let n = 50;
    let curv: Vec<f32> = (0..n).map(|_| r.random_range(0.1..3.0)).collect();
    let centre: Vec<f32> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let mut ps = ParamStore::new();
    ps.insert("q.weight", random_tensor(&[n], &mut r, -1.0, 1.0), true).unwrap();
    let mut theta = ps.get("q.weight").unwrap().data().to_vec();
    let (mut m, mut v) = (vec![0.0; n], vec![0.0; n]);
    let mut opt = AdamW::new(AdamWConfig { weight_decay: 0.0, ..AdamWConfig::default() }, &ps);
    let grad_of = |th: &[f32]| -> Vec<f32> { (0..n).map(|i| curv[i] * (th[i] - centre[i])).collect() };
    let mut adam_diff = 0.0f64;
    for t in 1..=10 {
        let gd = grad_of(ps.get("q.weight").unwrap().data());
        let mut gr = Gradients::zeros_like(&ps);
        gr.set(&ps, "q.weight", Tensor::new(vec![n], gd).unwrap()).unwrap();
        opt.step(&mut ps, &gr, 0.05).unwrap();
        let gd = grad_of(&theta);
        reference_adam(&mut theta, &mut m, &mut v, &gd, t, 0.05);
        for (a, b) in ps.get("q.weight").unwrap().data().iter().zip(&theta) {
            adam_diff = adam_diff.max((a - b).abs() as f64);
        }
    }

    let sched = TrainSchedule::evrn();
    let lrs = [9, 10, 19, 20].map(|e| sched.lr_at(e));
    let lr_ok = lrs == [2e-4, 1e-4, 1e-4, 5e-5];
    verdict(
        "AdamW/Adam",
        hand_err <= 1e-7 && adam_diff == 0.0 && lr_ok,
        &format!(
            "hand single steps max error {hand_err:.1e} (limit 1e-7); λ=0 vs Adam over 10 steps max diff {adam_diff:.1e}; lr at epochs 9/10/19/20 = {lrs:?}"
        ),
    );
}

const OVERFIT_STEPS: usize = 200;
const OVERFIT_BUDGET: Duration = Duration::from_secs(300);

#[test]
fn learning_sanity_evrn() {
    let _serial = exclusive();
    let (ratio, secs) = single_thread(|| {
        let mut patches = Vec::new();
        for (i, d) in [0.0, 1.0, 2.0, 1.0].into_iter().enumerate() {
            let mut spec = SceneSpec::new(i as u64, d, 40, 40, 9);
            spec.max_freq = 0.15;
            let lf = generate(&spec).unwrap();
            patches.push(Patch { scene: format!("s{i}"), y: 0, x: 0, lf });
        }
        let set = build_evrn_pairs(&patches, SrMode::Ssr, 2, PasrMethod::Mean).unwrap();
        let pairs: Vec<_> = set.pairs.iter().step_by(5).take(4).cloned().collect();
        let cfg = EvrnConfig {
            blocks: 1,
            channels: 8,
            reduction: 2,
            angular: 9,
            ..EvrnConfig::default()
        };
        let w = EvrnWeights::init(&cfg, 1).unwrap();
        let init = evaluate_loss(&w, &pairs).unwrap();
        let schedule = TrainSchedule {
            initial_lr: 5e-3,
            epochs: OVERFIT_STEPS,
            batch_size: 4,
            halve_every: 1000,
            ..TrainSchedule::evrn()
        };
        let mut t = Trainer::new(w, schedule).unwrap();
        let start = Instant::now();
        t.run(&pairs).unwrap();
        let secs = start.elapsed().as_secs_f64();
        (evaluate_loss(&t.model, &pairs).unwrap() / init, secs)
    });
    verdict(
        "learning sanity (EVRN)",
        ratio <= 0.1 && secs < OVERFIT_BUDGET.as_secs_f64(),
        &format!("4 SSR x2 pairs, {OVERFIT_STEPS} steps: final/initial l1 = {ratio:.3} (limit 0.1), {secs:.0} s single thread (limit 300 s)"),
    );
}

#[test]
fn learning_sanity_nvs() {
    let _serial = exclusive();
    let (ratio, secs) = single_thread(|| {
        let mut pairs = Vec::new();
        for i in 0..4u64 {
            let lf = generate(&SceneSpec::new(i, 2.0, 32, 32, 5)).unwrap();
            let vols = lf.slice(AngularAxis::Rho).unwrap();
            pairs.push(nvs_pairs_from_volume(&vols[2], "s", 0, 0).unwrap()[0].clone());
        }
        let w = NvsWeights::init(&NvsConfig { blocks: 1, channels: 4 }, 1).unwrap();
        let init = evaluate_loss(&w, &pairs).unwrap();
        let schedule = TrainSchedule {
            initial_lr: 5e-3,
            epochs: OVERFIT_STEPS,
            batch_size: 4,
            halve_every: 1000,
            ..TrainSchedule::nvs()
        };
        let mut t = Trainer::new(w, schedule).unwrap();
        let start = Instant::now();
        t.run(&pairs).unwrap();
        let secs = start.elapsed().as_secs_f64();
        (evaluate_loss(&t.model, &pairs).unwrap() / init, secs)
    });
    verdict(
        "learning sanity (NVS-CNN)",
        ratio <= 0.1 && secs < OVERFIT_BUDGET.as_secs_f64(),
        &format!("4 even-disparity pairs, {OVERFIT_STEPS} steps: final/initial l1 = {ratio:.3} (limit 0.1), {secs:.0} s single thread (limit 300 s)"),
    );
}

/// Desk-scale training recipe per task: scene disparities, learning rate
/// and epochs.
fn desk_recipe(task: SrMode) -> (&'static [f64], f64, usize) {
    match task {
        SrMode::Ssr => (&[0.0, 1.0, 2.0], 5e-3, 12),
        _ => (&[1.0, 2.0], 1e-3, 40),
    }
}

fn train_desk_evrn(task: SrMode) -> EvrnWeights {
    let (ds, lr, epochs) = desk_recipe(task);
    let patches: Vec<Patch> = (0..6)
        .map(|i| Patch {
            scene: format!("train{i}"),
            y: 0,
            x: 0,
            lf: generate(&SceneSpec::new(100 + i as u64, ds[i % ds.len()], 36, 36, 9)).unwrap(),
        })
        .collect();
    let set = build_evrn_pairs(&patches, task, 2, PasrMethod::Mean).unwrap();
    let cfg = EvrnConfig {
        blocks: 1,
        channels: 8,
        reduction: 2,
        angular: 9,
        ..EvrnConfig::default()
    };
    let schedule = TrainSchedule {
        initial_lr: lr,
        epochs,
        halve_every: epochs.div_ceil(3),
        batch_size: 8,
        crop: Some([16, 16]),
        ..TrainSchedule::evrn()
    };
    let mut t = Trainer::new(EvrnWeights::init(&cfg, 1).unwrap(), schedule).unwrap();
    t.run(&set.pairs).unwrap();
    t.model
}

/// Mean PSNR over held-out scenes without and with the trained refinement.
fn held_out_gain(task: SrMode) -> (f64, f64) {
    let model = train_desk_evrn(task);
    let (ds, _, _) = desk_recipe(task);
    let (mut base, mut refined) = (0.0, 0.0);
    for (k, d) in ds.iter().enumerate() {
        let hr = generate(&SceneSpec::new(900 + k as u64, *d, 36, 36, 9)).unwrap();
        let (sr, input, protocol) = match task {
            SrMode::Ssr => (SrTask::ssr(2), lf_spatial_downsample(&hr, 2, true).unwrap(), Protocol::Ssr),
            _ => (SrTask::asr(PasrKind::Mean), angular_decimate(&hr).unwrap(), Protocol::Asr),
        };
        let plain = SrModels { evrn: None, nvs: None, external: None };
        let with = SrModels { evrn: Some(&model), nvs: None, external: None };
        let (b, _) = super_resolve(&input, &sr, &plain).unwrap();
        let (o, _) = super_resolve(&input, &sr, &with).unwrap();
        let (pb, po) = (
            evaluate(&b, &hr, protocol).unwrap().means.psnr,
            evaluate(&o, &hr, protocol).unwrap().means.psnr,
        );
        println!("  {task:?} held-out d={d}: without {pb:.2} dB, with EVRN {po:.2} dB");
        base += pb / ds.len() as f64;
        refined += po / ds.len() as f64;
    }
    (base, refined)
}

#[test]
fn end_to_end_quality_ordering() {
    let _serial = exclusive();
    let (sb, so) = held_out_gain(SrMode::Ssr);
    let (ab, ao) = held_out_gain(SrMode::Asr);
    verdict(
        "end-to-end quality ordering",
        so - sb >= 0.5 && ao - ab >= 0.5,
        &format!(
            "SSR x2 (d 0,1,2): bicubic {sb:.2} dB, trained EVRN {so:.2} dB (gain {:.2}); ASR 5x5->9x9 on 56 novel views (d 1,2): nvs-mean {ab:.2} dB, with EVRN {ao:.2} dB (gain {:.2}); limit 0.5 dB each",
            so - sb,
            ao - ab
        ),
    );
}

#[test]
fn protocol_fidelity() {
    let _serial = exclusive();
    let count = |m: &[Vec<bool>]| m.iter().flatten().filter(|&&b| b).count();
    let ssr = ssr_mask(9, 9).unwrap();
    let asr = asr_mask(9, 9).unwrap();
    let central = (0..9).all(|r| (0..9).all(|t| ssr[r][t] == ((1..8).contains(&r) && (1..8).contains(&t))));
    let novel = (0..9).all(|r| (0..9).all(|t| asr[r][t] == (r % 2 == 1 || t % 2 == 1)));
    let lf = LightField4D::from_fn(4, 5, 9, 9, |y, x, r, t| ((y * 5 + x) * 81 + r * 9 + t) as f32 / 1620.0);
    let dec = angular_decimate(&lf).unwrap();
    let kept = decimated_indices(9).unwrap();
    let both_even = dec.a_rho() * dec.a_tau() == 25
        && kept == [0, 2, 4, 6, 8]
        && (0..5).all(|i| {
            (0..5).all(|j| {
                dec.extract_sai(epivsr::ViewIndex::new(i, j)).unwrap()
                    == lf.extract_sai(epivsr::ViewIndex::new(2 * i, 2 * j)).unwrap()
            })
        });
    let gt = generate(&SceneSpec::new(3, 1.0, 20, 20, 9)).unwrap();
    let r_ssr = evaluate(&gt, &gt, Protocol::Ssr).unwrap();
    let r_asr = evaluate(&gt, &gt, Protocol::Asr).unwrap();
    let (n_ssr, n_asr) = (count(&ssr), count(&asr));
    verdict(
        "protocol fidelity",
        n_ssr == 49
            && n_asr == 56
            && central
            && novel
            && both_even
            && r_ssr.masked_count() == 49
            && r_asr.masked_count() == 56,
        &format!(
            "eval_ssr views {n_ssr} (central: {central}), eval_asr views {n_asr} (novel only: {novel}), decimation keeps {} both-even views: {both_even}",
            dec.a_rho() * dec.a_tau()
        ),
    );
}

#[test]
fn determinism() {
    let _serial = exclusive();
    let patches: Vec<Patch> = (0..2)
        .map(|i| Patch {
            scene: format!("s{i}"),
            y: 0,
            x: 0,
            lf: generate(&SceneSpec::new(40 + i, i as f64, 20, 20, 5)).unwrap(),
        })
        .collect();
    let set = build_evrn_pairs(&patches, SrMode::Ssr, 2, PasrMethod::Mean).unwrap();
    let cfg = EvrnConfig {
        blocks: 1,
        channels: 4,
        reduction: 2,
        angular: 5,
        ..EvrnConfig::default()
    };
    let schedule = TrainSchedule {
        initial_lr: 1e-3,
        epochs: 2,
        batch_size: 3,
        crop: Some([12, 12]),
        seed: 9,
        ..TrainSchedule::evrn()
    };
    let train = |threads: usize, epochs: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let mut t = Trainer::new(
                    EvrnWeights::init(&cfg, 2).unwrap(),
                    TrainSchedule { epochs, ..schedule.clone() },
                )
                .unwrap();
                t.run(&set.pairs).unwrap();
                t
            })
    };
    let bytes = |t: &Trainer<EvrnWeights>| t.checkpoint().unwrap().to_bytes().unwrap();
    let a = train(1, 2);
    let b = train(1, 2);
    let c = train(3, 2);
    let checkpoints_equal = bytes(&a) == bytes(&b) && bytes(&a) == bytes(&c);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.ckpt");
    train(1, 1).save_checkpoint(&path).unwrap();
    let mut resumed = epivsr::trainer::load_evrn_checkpoint(&path).unwrap();
    resumed.schedule.epochs = 2;
    resumed.run(&set.pairs).unwrap();
    let resume_equal = resumed.model.params == a.model.params
        && resumed.optimizer.state == a.optimizer.state
        && resumed.step_losses == a.step_losses;

    let lr = lf_spatial_downsample(&patches[1].lf, 2, true).unwrap();
    let sr = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| {
                let models = SrModels { evrn: Some(&a.model), nvs: None, external: None };
                super_resolve(&lr, &SrTask::ssr(2), &models).unwrap().0
            })
    };
    let outputs_equal = sr(1) == sr(1) && sr(1) == sr(3);
    verdict(
        "determinism",
        checkpoints_equal && resume_equal && outputs_equal,
        &format!("identical checkpoints (1, 1, 3 threads): {checkpoints_equal}; resumed run bit-exact: {resume_equal}; identical SR outputs: {outputs_equal}"),
    );
}
