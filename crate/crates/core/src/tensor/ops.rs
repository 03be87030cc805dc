//! Forward kernels and their vector-Jacobian products.
//!
//! Feature maps are channel-last. Convolutions are cross-correlations with
//! zero padding that preserves every non-channel extent.

use rayon::prelude::*;

use super::{strides, Tensor};
use crate::error::{contract, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    Avg,
    Max,
}

/// Geometry of a same-padded 3D convolution laid out on a padded grid.
///
/// The padded input is stored flat with `cin` values per grid row. For a
/// kernel tap at offset `(d1, d2, d3)` every output position reads the padded
/// row `r + shift(d)` where `r` is its own padded-grid row. Gathering all taps
/// of a block of consecutive grid rows side by side turns the convolution into
/// one matrix product per block. Grid rows that do not correspond to an output
/// position are computed and discarded.
struct ConvGeometry {
    dims: [usize; 3],
    k: [usize; 3],
    pad: [usize; 3],
    padded: [usize; 3],
    cin: usize,
    cout: usize,
    rows: usize,
}

impl ConvGeometry {
    fn new(input: &[usize], kernel: &[usize]) -> Result<Self> {
        if input.len() != 4 {
            contract!("conv3d input must be (s1, a, s2, c), got {input:?}");
        }
        if kernel.len() != 5 {
            contract!("conv3d kernel must be (k1, k2, k3, cin, cout), got {kernel:?}");
        }
        if kernel[3] != input[3] {
            contract!(
                "conv3d channel mismatch: input has {}, kernel expects {}",
                input[3],
                kernel[3]
            );
        }
        let k = [kernel[0], kernel[1], kernel[2]];
        if k.iter().any(|e| e % 2 == 0) {
            contract!("conv kernel extents must be odd, got {k:?}");
        }
        let dims = [input[0], input[1], input[2]];
        let pad = [(k[0] - 1) / 2, (k[1] - 1) / 2, (k[2] - 1) / 2];
        let padded = [
            dims[0] + 2 * pad[0],
            dims[1] + 2 * pad[1],
            dims[2] + 2 * pad[2],
        ];
        let total = padded[0] * padded[1] * padded[2];
        let rows = total - ((k[0] - 1) * padded[1] * padded[2] + (k[1] - 1) * padded[2] + (k[2] - 1));
        Ok(Self {
            dims,
            k,
            pad,
            padded,
            cin: input[3],
            cout: kernel[4],
            rows,
        })
    }

    fn total_rows(&self) -> usize {
        self.padded[0] * self.padded[1] * self.padded[2]
    }

    fn grid_row(&self, i: usize, j: usize, l: usize) -> usize {
        (i * self.padded[1] + j) * self.padded[2] + l
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let [k1, k2, k3] = self.k;
        let [_, p2, p3] = self.padded;
        (0..k1).flat_map(move |d1| {
            (0..k2).flat_map(move |d2| {
                (0..k3).map(move |d3| ((d1 * k2 + d2) * k3 + d3, (d1 * p2 + d2) * p3 + d3))
            })
        })
    }

    fn pad_input(&self, input: &[f32]) -> Vec<f32> {
        let c = self.cin;
        let mut out = vec![0.0f32; self.total_rows() * c];
        let [s1, a, s2] = self.dims;
        for i in 0..s1 {
            for j in 0..a {
                let src = ((i * a + j) * s2) * c;
                let dst = self.grid_row(i + self.pad[0], j + self.pad[1], self.pad[2]) * c;
                out[dst..dst + s2 * c].copy_from_slice(&input[src..src + s2 * c]);
            }
        }
        out
    }

    /// Output position `(i, j, l)` lives at grid row `grid_row(i, j, l)` of the
    /// unpadded-origin grid, i.e. without the padding offset.
    fn for_each_output(&self, mut f: impl FnMut(usize, usize)) {
        let [s1, a, s2] = self.dims;
        let mut o = 0;
        for i in 0..s1 {
            for j in 0..a {
                for l in 0..s2 {
                    f(o, self.grid_row(i, j, l));
                    o += 1;
                }
            }
        }
    }
}

/// `c (m×n) = beta·c + a (m×k) · b (k×n)` with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    beta: f32,
    c: &mut [f32],
    rsc: isize,
    csc: isize,
) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: isize, cs: isize| {
        (rows as isize - 1) * rs + (cols as isize - 1) * cs
    };
    assert!((last(m, k, rsa, csa) as usize) < a.len());
    assert!((last(k, n, rsb, csb) as usize) < b.len());
    assert!((last(m, n, rsc, csc) as usize) < c.len());
    // SAFETY: the asserts above bound every element the strided views touch,
    // and all strides are non-negative.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

/// Grid rows gathered per block, keeping the gathered matrix cache-sized.
fn block_rows(g: &ConvGeometry) -> usize {
    let kk = g.k.iter().product::<usize>() * g.cin;
    ((64 << 10) / kk.max(1)).max(32)
}

/// Gathers grid rows `r0..r0 + nb` into an `nb × (taps·cin)` matrix whose
/// column `tap·cin + ci` holds padded row `r + shift(tap)`, channel `ci`.
fn gather_block(g: &ConvGeometry, shifts: &[usize], padded: &[f32], r0: usize, nb: usize, out: &mut [f32]) {
    let cin = g.cin;
    let kk = shifts.len() * cin;
    if cin == 1 {
        for (t, &shift) in shifts.iter().enumerate() {
            let src = &padded[r0 + shift..r0 + shift + nb];
            for (r, &v) in src.iter().enumerate() {
                out[r * kk + t] = v;
            }
        }
        return;
    }
    for r in 0..nb {
        let row = &mut out[r * kk..(r + 1) * kk];
        for (t, &shift) in shifts.iter().enumerate() {
            let src = (r0 + r + shift) * cin;
            for (d, &v) in row[t * cin..(t + 1) * cin].iter_mut().zip(&padded[src..src + cin]) {
                *d = v;
            }
        }
    }
}

/// Same-padded 3D cross-correlation of an `(s1, a, s2, cin)` input with a
/// `(k1, k2, k3, cin, cout)` kernel plus a per-output-channel bias.
pub fn conv3d_same(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let g = ConvGeometry::new(input.shape(), kernel.shape())?;
    if bias.shape() != [g.cout] {
        contract!("conv bias must have shape [{}], got {:?}", g.cout, bias.shape());
    }
    let padded = g.pad_input(input.data());
    let cout = g.cout;
    let shifts: Vec<usize> = g.taps().map(|(_, s)| s).collect();
    let kk = shifts.len() * g.cin;
    let block = block_rows(&g);
    let mut grid = vec![0.0f32; g.rows * cout];
    let kd = kernel.data();
    grid.par_chunks_mut(block * cout)
        .enumerate()
        .for_each_init(
            || vec![0.0f32; block * kk],
            |x, (bi, out)| {
                let nb = out.len() / cout;
                gather_block(&g, &shifts, &padded, bi * block, nb, x);
                gemm(nb, kk, cout, x, kk as isize, 1, kd, cout as isize, 1, 0.0, out, cout as isize, 1);
            },
        );
    let [s1, a, s2] = g.dims;
    let mut out = vec![0.0f32; s1 * a * s2 * cout];
    let b = bias.data();
    g.for_each_output(|o, r| {
        let dst = &mut out[o * cout..(o + 1) * cout];
        let src = &grid[r * cout..(r + 1) * cout];
        for c in 0..cout {
            dst[c] = src[c] + b[c];
        }
    });
    Tensor::new(vec![s1, a, s2, cout], out)
}

/// Gradients of [`conv3d_same`] with respect to input, kernel and bias.
pub fn conv3d_same_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let g = ConvGeometry::new(input.shape(), kernel.shape())?;
    let (cin, cout) = (g.cin, g.cout);
    let padded = g.pad_input(input.data());
    let dy = grad_out.data();

    let mut dgrid = vec![0.0f32; g.rows * cout];
    let mut dbias = vec![0.0f32; cout];
    g.for_each_output(|o, r| {
        let src = &dy[o * cout..(o + 1) * cout];
        dgrid[r * cout..(r + 1) * cout].copy_from_slice(src);
        for c in 0..cout {
            dbias[c] += src[c];
        }
    });

    let kd = kernel.data();
    let shifts: Vec<usize> = g.taps().map(|(_, s)| s).collect();
    let kk = shifts.len() * cin;
    let block = block_rows(&g);
    let mut dkernel = vec![0.0f32; kd.len()];
    let mut dpadded = vec![0.0f32; g.total_rows() * cin];
    let mut x = vec![0.0f32; block.min(g.rows) * kk];
    let mut dx = vec![0.0f32; block.min(g.rows) * kk];
    let mut r0 = 0;
    while r0 < g.rows {
        let nb = block.min(g.rows - r0);
        let dg = &dgrid[r0 * cout..(r0 + nb) * cout];
        gather_block(&g, &shifts, &padded, r0, nb, &mut x);
        // dK += X^T · dGrid
        gemm(kk, nb, cout, &x, 1, kk as isize, dg, cout as isize, 1, 1.0, &mut dkernel, cout as isize, 1);
        // dX = dGrid · K^T, scattered back onto the padded rows
        gemm(nb, cout, kk, dg, cout as isize, 1, kd, 1, cout as isize, 0.0, &mut dx, kk as isize, 1);
        for r in 0..nb {
            let row = &dx[r * kk..(r + 1) * kk];
            for (t, &shift) in shifts.iter().enumerate() {
                let dst = (r0 + r + shift) * cin;
                for (d, &v) in dpadded[dst..dst + cin].iter_mut().zip(&row[t * cin..(t + 1) * cin]) {
                    *d += v;
                }
            }
        }
        r0 += nb;
    }

    let [s1, a, s2] = g.dims;
    let mut dinput = vec![0.0f32; s1 * a * s2 * cin];
    for i in 0..s1 {
        for j in 0..a {
            let dst = ((i * a + j) * s2) * cin;
            let src = g.grid_row(i + g.pad[0], j + g.pad[1], g.pad[2]) * cin;
            dinput[dst..dst + s2 * cin].copy_from_slice(&dpadded[src..src + s2 * cin]);
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dinput)?,
        Tensor::new(kernel.shape().to_vec(), dkernel)?,
        Tensor::new(vec![cout], dbias)?,
    ))
}

fn conv2d_as_3d(input: &Tensor, kernel: &Tensor) -> Result<(Tensor, Tensor)> {
    let (is, ks) = (input.shape(), kernel.shape());
    if is.len() != 3 {
        contract!("conv2d input must be (h, w, c), got {is:?}");
    }
    if ks.len() != 4 {
        contract!("conv2d kernel must be (kh, kw, cin, cout), got {ks:?}");
    }
    Ok((
        input.clone().reshape(&[is[0], 1, is[1], is[2]])?,
        kernel.clone().reshape(&[ks[0], 1, ks[1], ks[2], ks[3]])?,
    ))
}

/// Same-padded 2D cross-correlation of an `(h, w, cin)` input with a
/// `(kh, kw, cin, cout)` kernel.
pub fn conv2d_same(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (x, k) = conv2d_as_3d(input, kernel)?;
    let y = conv3d_same(&x, &k, bias)?;
    let s = y.shape().to_vec();
    y.reshape(&[s[0], s[2], s[3]])
}

pub fn conv2d_same_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (x, k) = conv2d_as_3d(input, kernel)?;
    let gs = grad_out.shape();
    if gs.len() != 3 {
        contract!("conv2d gradient must be (h, w, c), got {gs:?}");
    }
    let dy = grad_out.clone().reshape(&[gs[0], 1, gs[1], gs[2]])?;
    let (dx, dk, db) = conv3d_same_backward(&x, &k, &dy)?;
    Ok((
        dx.reshape(input.shape())?,
        dk.reshape(kernel.shape())?,
        db,
    ))
}

fn channels(x: &Tensor) -> usize {
    x.shape().last().copied().unwrap_or(1)
}

/// Per-channel parametric ReLU over the last axis.
pub fn prelu(x: &Tensor, slope: &Tensor) -> Result<Tensor> {
    let c = channels(x);
    if slope.shape() != [c] {
        contract!("prelu slope must have shape [{c}], got {:?}", slope.shape());
    }
    let s = slope.data();
    let mut out = x.clone();
    for (i, v) in out.data_mut().iter_mut().enumerate() {
        if *v < 0.0 {
            *v *= s[i % c];
        }
    }
    Ok(out)
}

pub fn prelu_backward(x: &Tensor, slope: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    let c = channels(x);
    let s = slope.data();
    let mut dx = grad_out.clone();
    let mut ds = vec![0.0f32; c];
    for (i, (g, &v)) in dx.data_mut().iter_mut().zip(x.data()).enumerate() {
        if v < 0.0 {
            ds[i % c] += *g * v;
            *g *= s[i % c];
        }
    }
    (dx, Tensor::new(vec![c], ds).expect("slope shape"))
}

#[inline]
pub fn sigmoid_scalar(v: f32) -> f32 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    x.map(sigmoid_scalar)
}

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

fn validate_axes(shape: &[usize], axes: &[usize]) -> Result<()> {
    if axes.is_empty() {
        contract!("pooling needs at least one axis");
    }
    for (i, &a) in axes.iter().enumerate() {
        if a >= shape.len() {
            contract!("pool axis {a} out of range for shape {shape:?}");
        }
        if axes[..i].contains(&a) {
            contract!("pool axis {a} listed twice");
        }
    }
    Ok(())
}

fn reduced_shape(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    shape
        .iter()
        .enumerate()
        .map(|(i, &e)| if axes.contains(&i) { 1 } else { e })
        .collect()
}

/// For every input element, the flat index of the output element it reduces into.
fn reduction_targets(shape: &[usize], axes: &[usize]) -> Vec<usize> {
    let out_shape = reduced_shape(shape, axes);
    let out_strides = strides(&out_shape);
    let eff: Vec<usize> = (0..shape.len())
        .map(|i| if axes.contains(&i) { 0 } else { out_strides[i] })
        .collect();
    let n: usize = shape.iter().product();
    let mut targets = Vec::with_capacity(n);
    let mut idx = vec![0usize; shape.len()];
    let mut cur = 0usize;
    for _ in 0..n {
        targets.push(cur);
        for ax in (0..shape.len()).rev() {
            idx[ax] += 1;
            cur += eff[ax];
            if idx[ax] < shape[ax] {
                break;
            }
            cur -= eff[ax] * idx[ax];
            idx[ax] = 0;
        }
    }
    targets
}

/// Average or max pooling that collapses `axes` to extent 1 (other axes kept).
///
/// Also returns, for max pooling, the flat input index selected for each
/// output (first occurrence on ties).
pub fn pool_over_axes_with_argmax(
    x: &Tensor,
    axes: &[usize],
    mode: PoolMode,
) -> Result<(Tensor, Vec<usize>)> {
    validate_axes(x.shape(), axes)?;
    let out_shape = reduced_shape(x.shape(), axes);
    let n_out: usize = out_shape.iter().product();
    let targets = reduction_targets(x.shape(), axes);
    match mode {
        PoolMode::Avg => {
            let count = (x.len() / n_out) as f64;
            let mut acc = vec![0.0f64; n_out];
            for (&t, &v) in targets.iter().zip(x.data()) {
                acc[t] += v as f64;
            }
            let out = acc.into_iter().map(|s| (s / count) as f32).collect();
            Ok((Tensor::new(out_shape, out)?, Vec::new()))
        }
        PoolMode::Max => {
            let mut best = vec![f32::NEG_INFINITY; n_out];
            let mut arg = vec![usize::MAX; n_out];
            for (i, (&t, &v)) in targets.iter().zip(x.data()).enumerate() {
                if arg[t] == usize::MAX || v > best[t] {
                    best[t] = v;
                    arg[t] = i;
                }
            }
            Ok((Tensor::new(out_shape, best)?, arg))
        }
    }
}

pub fn pool_over_axes(x: &Tensor, axes: &[usize], mode: PoolMode) -> Result<Tensor> {
    pool_over_axes_with_argmax(x, axes, mode).map(|(t, _)| t)
}

pub fn pool_backward(
    x: &Tensor,
    axes: &[usize],
    mode: PoolMode,
    argmax: &[usize],
    grad_out: &Tensor,
) -> Tensor {
    let mut dx = Tensor::zeros(x.shape());
    let g = grad_out.data();
    match mode {
        PoolMode::Avg => {
            let count = (x.len() / grad_out.len()) as f32;
            let targets = reduction_targets(x.shape(), axes);
            for (d, &t) in dx.data_mut().iter_mut().zip(&targets) {
                *d = g[t] / count;
            }
        }
        PoolMode::Max => {
            for (o, &i) in argmax.iter().enumerate() {
                dx.data_mut()[i] += g[o];
            }
        }
    }
    dx
}

/// `y = Wᵀx + b` for `x: (n)`, `W: (n, m)`, `b: (m)`.
pub fn dense(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let ws = w.shape();
    if x.ndim() != 1 || ws.len() != 2 || ws[0] != x.len() || b.shape() != [ws[1]] {
        contract!(
            "dense shapes disagree: x {:?}, W {:?}, b {:?}",
            x.shape(),
            ws,
            b.shape()
        );
    }
    let (n, m) = (ws[0], ws[1]);
    let mut y = b.data().to_vec();
    let (xd, wd) = (x.data(), w.data());
    for i in 0..n {
        let xi = xd[i];
        let row = &wd[i * m..(i + 1) * m];
        for (yj, &wij) in y.iter_mut().zip(row) {
            *yj += wij * xi;
        }
    }
    Tensor::new(vec![m], y)
}

pub fn dense_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (n, m) = (w.shape()[0], w.shape()[1]);
    let (xd, wd, g) = (x.data(), w.data(), grad_out.data());
    let mut dx = vec![0.0f32; n];
    let mut dw = vec![0.0f32; n * m];
    for i in 0..n {
        let mut acc = 0.0f32;
        for j in 0..m {
            acc += wd[i * m + j] * g[j];
            dw[i * m + j] = xd[i] * g[j];
        }
        dx[i] = acc;
    }
    (
        Tensor::new(vec![n], dx).expect("dx"),
        Tensor::new(vec![n, m], dw).expect("dw"),
        grad_out.clone(),
    )
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
    let Some(first) = tensors.first() else {
        contract!("concat of zero tensors");
    };
    let nd = first.ndim();
    if axis >= nd {
        contract!("concat axis {axis} out of range for rank {nd}");
    }
    for t in tensors {
        let s = t.shape();
        if s.len() != nd
            || s.iter()
                .zip(first.shape())
                .enumerate()
                .any(|(i, (a, b))| i != axis && a != b)
        {
            contract!(
                "concat shape mismatch on axis {axis}: {:?} vs {:?}",
                first.shape(),
                s
            );
        }
    }
    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    let total_axis: usize = tensors.iter().map(|t| t.shape()[axis]).sum();
    let mut out = Vec::with_capacity(outer * total_axis * inner);
    for o in 0..outer {
        for t in tensors {
            let block = t.shape()[axis] * inner;
            out.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = total_axis;
    Tensor::new(shape, out)
}

/// Splits a concatenation gradient back into per-input pieces.
pub fn concat_backward(shapes: &[Vec<usize>], axis: usize, grad_out: &Tensor) -> Vec<Tensor> {
    let outer: usize = grad_out.shape()[..axis].iter().product();
    let inner: usize = grad_out.shape()[axis + 1..].iter().product();
    let total_block = grad_out.shape()[axis] * inner;
    let g = grad_out.data();
    let mut start = 0;
    shapes
        .iter()
        .map(|s| {
            let block = s[axis] * inner;
            let mut d = Vec::with_capacity(outer * block);
            for o in 0..outer {
                let base = o * total_block + start;
                d.extend_from_slice(&g[base..base + block]);
            }
            start += block;
            Tensor::new(s.clone(), d).expect("concat piece")
        })
        .collect()
}

fn broadcast_check(x: &[usize], w: &[usize]) -> Result<()> {
    if x.len() != w.len() || x.iter().zip(w).any(|(&a, &b)| b != 1 && b != a) {
        contract!("cannot broadcast {w:?} over {x:?}");
    }
    Ok(())
}

/// Flat index into `w` for every element of `x` under broadcasting.
fn broadcast_index(x: &[usize], w: &[usize]) -> Vec<usize> {
    let axes: Vec<usize> = (0..x.len()).filter(|&i| w[i] == 1 && x[i] != 1).collect();
    if axes.is_empty() {
        return (0..x.iter().product()).collect();
    }
    reduction_targets(x, &axes)
}

/// `x ⊙ w` where every extent of `w` is 1 or equal to that of `x`.
pub fn broadcast_mul(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    broadcast_check(x.shape(), w.shape())?;
    let idx = broadcast_index(x.shape(), w.shape());
    let wd = w.data();
    let data = x
        .data()
        .iter()
        .zip(&idx)
        .map(|(&v, &i)| v * wd[i])
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn broadcast_mul_backward(x: &Tensor, w: &Tensor, grad_out: &Tensor) -> (Tensor, Tensor) {
    let idx = broadcast_index(x.shape(), w.shape());
    let (xd, wd, g) = (x.data(), w.data(), grad_out.data());
    let mut dx = vec![0.0f32; x.len()];
    let mut dw = vec![0.0f64; w.len()];
    for (k, &i) in idx.iter().enumerate() {
        dx[k] = g[k] * wd[i];
        dw[i] += (g[k] * xd[k]) as f64;
    }
    (
        Tensor::new(x.shape().to_vec(), dx).expect("dx"),
        Tensor::new(w.shape().to_vec(), dw.into_iter().map(|v| v as f32).collect()).expect("dw"),
    )
}

pub fn add(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape() != y.shape() {
        contract!("add shape mismatch: {:?} vs {:?}", x.shape(), y.shape());
    }
    let data = x.data().iter().zip(y.data()).map(|(a, b)| a + b).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Mean absolute error, accumulated in double precision.
pub fn l1_loss(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape() != target.shape() {
        contract!(
            "l1 loss shape mismatch: {:?} vs {:?}",
            pred.shape(),
            target.shape()
        );
    }
    let s: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p as f64 - t as f64).abs())
        .sum();
    Ok(s / pred.len() as f64)
}

pub fn l1_loss_backward(pred: &Tensor, target: &Tensor, grad_out: f32) -> Tensor {
    let scale = grad_out / pred.len() as f32;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            if p > t {
                scale
            } else if p < t {
                -scale
            } else {
                0.0
            }
        })
        .collect();
    Tensor::new(pred.shape().to_vec(), data).expect("l1 grad")
}
