//! Independent reference implementations used as test oracles: plain nested
//! loops in double precision, no shared code with the library kernels.

#![allow(dead_code)]

use std::cell::Cell;
use std::collections::HashMap;

use epivsr::tensor::{Graph, ParamStore, Tensor, Var};
use epivsr::{EvrnConfig, NvsConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Arr {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Arr {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Self {
        Self {
            shape: t.shape().to_vec(),
            data: t.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn idx(&self, i: &[usize]) -> usize {
        let mut o = 0;
        for (k, &e) in self.shape.iter().enumerate() {
            o = o * e + i[k];
        }
        o
    }

    pub fn at(&self, i: &[usize]) -> f64 {
        self.data[self.idx(i)]
    }

    pub fn put(&mut self, i: &[usize], v: f64) {
        let o = self.idx(i);
        self.data[o] = v;
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(shape: &[usize], r: &mut ChaCha8Rng, lo: f32, hi: f32) -> Tensor {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Values in `±[gap, 1]`, keeping every entry away from zero.
pub fn away_from_zero(shape: &[usize], r: &mut ChaCha8Rng, gap: f32) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(gap..1.0);
        if r.random_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Relative difference `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn max_rel(a: &Arr, b: &Arr) -> f64 {
    assert_eq!(a.shape, b.shape);
    a.data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| rel_err(x, y, 1.0))
        .fold(0.0, f64::max)
}

// ---- loop oracles ------------------------------------------------------

thread_local! {
    /// Running hash of every branch taken by the non-smooth oracles (ReLU and
    /// PReLU signs, max-pool winners) since the last [`take_branches`].
    static BRANCHES: Cell<u64> = const { Cell::new(0) };
}

fn branch(v: u64) {
    BRANCHES.with(|b| b.set(b.get().wrapping_mul(0x100000001b3).wrapping_add(v + 1)));
}

pub fn take_branches() -> u64 {
    BRANCHES.with(|b| b.replace(0))
}

pub fn conv3d(x: &Arr, k: &Arr, b: &Arr) -> Arr {
    let [s1, a, s2, cin] = x.shape[..] else { panic!() };
    let [k1, k2, k3, _, cout] = k.shape[..] else { panic!() };
    let (p1, p2, p3) = ((k1 / 2) as isize, (k2 / 2) as isize, (k3 / 2) as isize);
    let mut y = Arr::zeros(&[s1, a, s2, cout]);
    for i in 0..s1 {
        for j in 0..a {
            for l in 0..s2 {
                for co in 0..cout {
                    let mut acc = b.data[co];
                    for d1 in 0..k1 {
                        for d2 in 0..k2 {
                            for d3 in 0..k3 {
                                let (u, v, w) = (
                                    i as isize + d1 as isize - p1,
                                    j as isize + d2 as isize - p2,
                                    l as isize + d3 as isize - p3,
                                );
                                if u < 0 || v < 0 || w < 0 || u >= s1 as isize || v >= a as isize || w >= s2 as isize {
                                    continue;
                                }
                                for ci in 0..cin {
                                    acc += x.at(&[u as usize, v as usize, w as usize, ci]) * k.at(&[d1, d2, d3, ci, co]);
                                }
                            }
                        }
                    }
                    y.put(&[i, j, l, co], acc);
                }
            }
        }
    }
    y
}

pub fn conv2d(x: &Arr, k: &Arr, b: &Arr) -> Arr {
    let [h, w, cin] = x.shape[..] else { panic!() };
    let [kh, kw, _, cout] = k.shape[..] else { panic!() };
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let mut y = Arr::zeros(&[h, w, cout]);
    for i in 0..h {
        for j in 0..w {
            for co in 0..cout {
                let mut acc = b.data[co];
                for di in 0..kh {
                    for dj in 0..kw {
                        let (u, v) = (i as isize + di as isize - ph, j as isize + dj as isize - pw);
                        if u < 0 || v < 0 || u >= h as isize || v >= w as isize {
                            continue;
                        }
                        for ci in 0..cin {
                            acc += x.at(&[u as usize, v as usize, ci]) * k.at(&[di, dj, ci, co]);
                        }
                    }
                }
                y.put(&[i, j, co], acc);
            }
        }
    }
    y
}

fn unravel(mut o: usize, shape: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; shape.len()];
    for k in (0..shape.len()).rev() {
        idx[k] = o % shape[k];
        o /= shape[k];
    }
    idx
}

/// Reduction over `axes` (kept with extent 1): mean or max.
pub fn pool(x: &Arr, axes: &[usize], max: bool) -> Arr {
    let out_shape: Vec<usize> = x
        .shape
        .iter()
        .enumerate()
        .map(|(k, &e)| if axes.contains(&k) { 1 } else { e })
        .collect();
    let mut y = Arr::zeros(&out_shape);
    let mut count = vec![0usize; y.data.len()];
    let mut first = vec![true; y.data.len()];
    for o in 0..x.data.len() {
        let mut idx = unravel(o, &x.shape);
        for &a in axes {
            idx[a] = 0;
        }
        let t = y.idx(&idx);
        let v = x.data[o];
        if max {
            if first[t] || v > y.data[t] {
                y.data[t] = v;
            }
            first[t] = false;
        } else {
            y.data[t] += v;
            count[t] += 1;
        }
    }
    if !max {
        for (v, c) in y.data.iter_mut().zip(count) {
            *v /= c as f64;
        }
    } else {
        let mut winner = vec![0u64; y.data.len()];
        for o in 0..x.data.len() {
            let mut idx = unravel(o, &x.shape);
            for &a in axes {
                idx[a] = 0;
            }
            let t = y.idx(&idx);
            if x.data[o] == y.data[t] {
                winner[t] = o as u64;
            }
        }
        winner.into_iter().for_each(branch);
    }
    y
}

pub fn dense(x: &Arr, w: &Arr, b: &Arr) -> Arr {
    let [n, m] = w.shape[..] else { panic!() };
    let mut y = Arr::zeros(&[m]);
    for j in 0..m {
        let mut acc = b.data[j];
        for i in 0..n {
            acc += x.data[i] * w.at(&[i, j]);
        }
        y.data[j] = acc;
    }
    y
}

pub fn concat(xs: &[&Arr], axis: usize) -> Arr {
    let mut shape = xs[0].shape.clone();
    shape[axis] = xs.iter().map(|x| x.shape[axis]).sum();
    let mut y = Arr::zeros(&shape);
    for o in 0..y.data.len() {
        let mut idx = unravel(o, &shape);
        let mut k = 0;
        while idx[axis] >= xs[k].shape[axis] {
            idx[axis] -= xs[k].shape[axis];
            k += 1;
        }
        y.data[o] = xs[k].at(&idx);
    }
    y
}

pub fn broadcast_mul(x: &Arr, w: &Arr) -> Arr {
    let mut y = x.clone();
    for o in 0..x.data.len() {
        let idx = unravel(o, &x.shape);
        let widx: Vec<usize> = idx.iter().zip(&w.shape).map(|(&i, &e)| if e == 1 { 0 } else { i }).collect();
        y.data[o] *= w.at(&widx);
    }
    y
}

pub fn add(x: &Arr, y: &Arr) -> Arr {
    Arr {
        shape: x.shape.clone(),
        data: x.data.iter().zip(&y.data).map(|(a, b)| a + b).collect(),
    }
}

/// PReLU with the slope indexed by the last axis.
pub fn prelu(x: &Arr, s: &Arr) -> Arr {
    let c = *x.shape.last().unwrap();
    Arr {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                branch((v >= 0.0) as u64);
                if v >= 0.0 {
                    v
                } else {
                    s.data[i % c] * v
                }
            })
            .collect(),
    }
}

pub fn sigmoid(x: &Arr) -> Arr {
    Arr {
        shape: x.shape.clone(),
        data: x.data.iter().map(|&v| 1.0 / (1.0 + (-v).exp())).collect(),
    }
}

pub fn relu(x: &Arr) -> Arr {
    Arr {
        shape: x.shape.clone(),
        data: x
            .data
            .iter()
            .map(|&v| {
                branch((v > 0.0) as u64);
                v.max(0.0)
            })
            .collect(),
    }
}

pub fn reshape(x: &Arr, shape: &[usize]) -> Arr {
    Arr {
        shape: shape.to_vec(),
        data: x.data.clone(),
    }
}

// ---- straight-line network evaluations ------------------------------------

pub type Params = HashMap<String, Arr>;

pub fn params_of(store: &ParamStore) -> Params {
    store.iter().map(|(n, t)| (n.to_string(), Arr::from_tensor(t))).collect()
}

fn p<'a>(ps: &'a Params, name: &str) -> &'a Arr {
    ps.get(name).unwrap_or_else(|| panic!("missing {name}"))
}

fn sfe3(ps: &Params, name: &str, x: &Arr) -> Arr {
    let y = conv3d(x, p(ps, &format!("{name}.weight")), p(ps, &format!("{name}.bias")));
    prelu(&y, p(ps, &format!("{name}.slope")))
}

pub fn caw(ps: &Params, blk: &str, f: &Arr, mid_relu: bool) -> Arr {
    let c = f.shape[3];
    let v = reshape(&pool(f, &[0, 1, 2], false), &[c]);
    let mut h = dense(&v, p(ps, &format!("{blk}.caw_down.weight")), p(ps, &format!("{blk}.caw_down.bias")));
    if mid_relu {
        h = relu(&h);
    }
    let u = dense(&h, p(ps, &format!("{blk}.caw_up.weight")), p(ps, &format!("{blk}.caw_up.bias")));
    reshape(&sigmoid(&u), &[1, 1, 1, c])
}

pub fn saw(ps: &Params, f: &Arr) -> Arr {
    let (s1, s2) = (f.shape[0], f.shape[2]);
    let m = concat(&[&pool(f, &[1, 3], false), &pool(f, &[1, 3], true)], 3);
    let img = reshape(&m, &[s1, s2, 2]);
    let y = conv2d(&img, p(ps, "spatial.saw.weight"), p(ps, "spatial.saw.bias"));
    reshape(&sigmoid(&y), &[s1, 1, s2, 1])
}

pub fn aaw(ps: &Params, f: &Arr) -> Arr {
    let a = f.shape[1];
    let m = concat(&[&pool(f, &[0, 2, 3], false), &pool(f, &[0, 2, 3], true)], 1);
    let v = reshape(&m, &[2 * a]);
    let y = dense(&v, p(ps, "angular.aaw.weight"), p(ps, "angular.aaw.bias"));
    reshape(&sigmoid(&y), &[1, a, 1, 1])
}

pub fn evrn(ps: &Params, cfg: &EvrnConfig, x: &Arr) -> Arr {
    let f0 = sfe3(ps, "sfe0", x);
    let mut feats = vec![f0];
    for i in 1..=cfg.blocks {
        let blk = format!("block{i}");
        let refs: Vec<&Arr> = feats.iter().collect();
        let h = sfe3(ps, &format!("{blk}.fbn"), &concat(&refs, 3));
        let t = conv3d(&h, p(ps, &format!("{blk}.conv1.weight")), p(ps, &format!("{blk}.conv1.bias")));
        let t = prelu(&t, p(ps, &format!("{blk}.slope")));
        let mut b = conv3d(&t, p(ps, &format!("{blk}.conv2.weight")), p(ps, &format!("{blk}.conv2.bias")));
        if cfg.use_caw {
            b = broadcast_mul(&b, &caw(ps, &blk, &b, cfg.caw_mid_activation));
        }
        feats.push(add(&h, &b));
    }
    let refs: Vec<&Arr> = feats.iter().collect();
    let d = concat(&refs, 3);
    let mut outs = Vec::new();
    for path in ["spatial", "angular"] {
        let h = sfe3(ps, &format!("{path}.fbn"), &d);
        let mut h = sfe3(ps, &format!("{path}.sfe1"), &h);
        if path == "spatial" && cfg.use_saw {
            h = broadcast_mul(&h, &saw(ps, &h));
        }
        if path == "angular" && cfg.use_aaw {
            h = broadcast_mul(&h, &aaw(ps, &h));
        }
        outs.push(sfe3(ps, &format!("{path}.sfe2"), &h));
    }
    let r = conv3d(&concat(&[&outs[0], &outs[1]], 3), p(ps, "tail.weight"), p(ps, "tail.bias"));
    add(x, &r)
}

fn conv2(ps: &Params, name: &str, x: &Arr) -> Arr {
    conv2d(x, p(ps, &format!("{name}.weight")), p(ps, &format!("{name}.bias")))
}

pub fn nvs(ps: &Params, cfg: &NvsConfig, a: &Arr, b: &Arr) -> Arr {
    let x = concat(&[a, b], 2);
    let f0 = prelu(&conv2(ps, "sfe", &x), p(ps, "sfe.slope"));
    let mut f = f0.clone();
    for i in 1..=cfg.blocks {
        let blk = format!("block{i}");
        let h = prelu(&conv2(ps, &format!("{blk}.bottleneck"), &f), p(ps, &format!("{blk}.bottleneck.slope")));
        let h = prelu(&conv2(ps, &format!("{blk}.conv1"), &h), p(ps, &format!("{blk}.slope")));
        let h = conv2(ps, &format!("{blk}.conv2"), &h);
        f = add(&f, &h);
    }
    conv2(ps, "tail", &add(&f, &f0))
}

// ---- finite differences ---------------------------------------------------

#[derive(Debug)]
pub struct GradCheck {
    pub checked: usize,
    /// Coordinates whose `±h` evaluations took different branches of a
    /// non-smooth op than the unperturbed point.
    pub skipped: usize,
    pub max_rel: f64,
    pub median_rel: f64,
    pub worst: String,
}

/// Central-difference check of every parameter in `store` for the scalar
/// `Σ wᵢ·yᵢ` (double accumulation) of the output of `build`.
///
/// The relative error of a coordinate is `|a − n| / max(|a|, |n|, f)` where
/// `f` is 1 % of the largest analytic gradient magnitude of the same
/// parameter tensor; the difference quotient uses the perturbation actually
/// representable in single precision.
pub fn grad_check(
    store: &ParamStore,
    build: &dyn Fn(&mut Graph, &ParamStore) -> Var,
    weights_seed: u64,
    h: f32,
) -> GradCheck {
    let mut g = Graph::new();
    let y = build(&mut g, store);
    let mut r = rng(weights_seed);
    let w = random_tensor(g.shape(y), &mut r, -1.0, 1.0);
    let wv = g.input(w.clone());
    let prod = g.broadcast_mul(y, wv).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss, store).unwrap();

    let eval = |s: &ParamStore| -> f64 {
        let mut g = Graph::new();
        let y = build(&mut g, s);
        g.value(y).data().iter().zip(w.data()).map(|(&a, &b)| a as f64 * b as f64).sum()
    };

    let mut rels = Vec::new();
    let skipped = 0;
    let mut worst = (0.0, String::new());
    let mut probe = store.clone();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let base = store.get(&name).unwrap().clone();
        let an = grads.get(store, &name).unwrap().clone();
        let floor = 1e-2 * an.data().iter().fold(0.0f32, |m, v| m.max(v.abs())) as f64;
        let floor = floor.max(1e-6);
        for j in 0..base.len() {
            let mut plus = base.clone();
            let mut minus = base.clone();
            plus.data_mut()[j] += h;
            minus.data_mut()[j] -= h;
            let step = plus.data()[j] as f64 - minus.data()[j] as f64;
            probe.set(&name, plus).unwrap();
            let lp = eval(&probe);
            probe.set(&name, minus).unwrap();
            let lm = eval(&probe);
            let num = (lp - lm) / step;
            let a = an.data()[j] as f64;
            let e = rel_err(a, num, floor);
            if e > worst.0 {
                worst = (e, format!("{name}[{j}] analytic {a:.6e} numeric {num:.6e}"));
            }
            rels.push(e);
        }
        probe.set(&name, base).unwrap();
    }
    rels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    GradCheck {
        checked: rels.len(),
        skipped,
        max_rel: *rels.last().unwrap_or(&0.0),
        median_rel: rels.get(rels.len() / 2).copied().unwrap_or(0.0),
        worst: worst.1,
    }
}

/// Checks the ℓ1 loss against a fixed target through `build` (analytic,
/// single precision) with central differences of the same loss evaluated by
/// the double-precision `oracle`. Perturbations are applied to the
/// single-precision parameter values. Coordinates are scored as in
/// [`grad_check`] except that the floor is 1% of the largest gradient in the
/// whole graph, since a tensor can have an exactly zero gradient. Coordinates
/// whose difference straddles a non-smooth point are counted in `skipped`.
pub fn grad_check_l1_oracle(
    store: &ParamStore,
    build: &dyn Fn(&mut Graph, &ParamStore) -> Var,
    oracle: &dyn Fn(&Params) -> Arr,
    target_seed: u64,
    h: f32,
) -> GradCheck {
    let mut g = Graph::new();
    let y = build(&mut g, store);
    let mut r = rng(target_seed);
    let offset = away_from_zero(g.shape(y), &mut r, 0.1);
    let target = Tensor::new(
        g.shape(y).to_vec(),
        g.value(y).data().iter().zip(offset.data()).map(|(v, o)| v + 0.3 * o).collect(),
    )
    .unwrap();
    let t = g.input(target.clone());
    let loss = g.l1_loss(y, t).unwrap();
    let grads = g.backward(loss, store).unwrap();

    let tgt = Arr::from_tensor(&target);
    let eval = |ps: &Params| -> (f64, u64) {
        take_branches();
        let out = oracle(ps);
        let loss = out.data.iter().zip(&tgt.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / out.data.len() as f64;
        let sign = out.data.iter().zip(&tgt.data).fold(0u64, |h, (a, b)| h.wrapping_mul(3).wrapping_add((a > b) as u64));
        (loss, take_branches() ^ sign)
    };

    let mut probe = params_of(store);
    let (_, reference) = eval(&probe);
    let mut rels = Vec::new();
    let mut skipped = 0;
    let mut worst = (0.0, String::new());
    let names: Vec<String> = store.names().map(str::to_string).collect();
    let scale = names
        .iter()
        .flat_map(|n| grads.get(store, n).unwrap().data().to_vec())
        .fold(0.0f32, |m, v| m.max(v.abs()));
    let floor = (1e-2 * scale as f64).max(1e-6);
    for name in names {
        let base = store.get(&name).unwrap().clone();
        let an = grads.get(store, &name).unwrap().clone();
        for j in 0..base.len() {
            let plus = base.data()[j] + h;
            let minus = base.data()[j] - h;
            probe.get_mut(&name).unwrap().data[j] = plus as f64;
            let (lp, bp) = eval(&probe);
            probe.get_mut(&name).unwrap().data[j] = minus as f64;
            let (lm, bm) = eval(&probe);
            probe.get_mut(&name).unwrap().data[j] = base.data()[j] as f64;
            if bp != reference || bm != reference {
                skipped += 1;
                continue;
            }
            let num = (lp - lm) / (plus as f64 - minus as f64);
            let a = an.data()[j] as f64;
            let e = rel_err(a, num, floor);
            if e > worst.0 {
                worst = (e, format!("{name}[{j}] analytic {a:.6e} numeric {num:.6e}"));
            }
            rels.push(e);
        }
    }
    rels.sort_by(|a, b| a.partial_cmp(b).unwrap());
    GradCheck {
        checked: rels.len(),
        skipped,
        max_rel: *rels.last().unwrap_or(&0.0),
        median_rel: rels.get(rels.len() / 2).copied().unwrap_or(0.0),
        worst: worst.1,
    }
}
