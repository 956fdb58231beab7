//! Layer primitives with hand-written backward passes.

use super::tensor::Tensor4;
use crate::error::{Error, Result};

/// Upper bound on im2col buffer entries; larger images are processed in
/// horizontal strips.
const COL_BUDGET: usize = 1 << 22;

/// 3x3 convolution, stride 1, zero padding 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out x in x 3 x 3`, row-major.
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize) -> Self {
        ConvLayer {
            in_channels,
            out_channels,
            kernels: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn kernel_index(&self, o: usize, i: usize, ky: usize, kx: usize) -> usize {
        ((o * self.in_channels + i) * 3 + ky) * 3 + kx
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * 9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub kernels: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Fills `col` (`in_ch*9` rows, `(y1-y0)*w` columns) with the padded 3x3
/// neighbourhoods of output rows `y0..y1`.
fn im2col(x: &[f64], ch: usize, h: usize, w: usize, y0: usize, y1: usize, col: &mut [f64]) {
    let ncol = (y1 - y0) * w;
    for c in 0..ch {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((c * 3 + ky) * 3 + kx) * ncol..][..ncol];
                for y in y0..y1 {
                    let out = &mut row[(y - y0) * w..(y - y0 + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => {
                            out[0] = 0.0;
                            out[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => out.copy_from_slice(src),
                        _ => {
                            out[..w - 1].copy_from_slice(&src[1..]);
                            out[w - 1] = 0.0;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds `col` back onto the image it was gathered from.
fn col2im(col: &[f64], ch: usize, h: usize, w: usize, y0: usize, y1: usize, x: &mut [f64]) {
    let ncol = (y1 - y0) * w;
    for c in 0..ch {
        let plane = &mut x[c * h * w..(c + 1) * h * w];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((c * 3 + ky) * 3 + kx) * ncol..][..ncol];
                for y in y0..y1 {
                    let g = &row[(y - y0) * w..(y - y0 + 1) * w];
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * w..(sy as usize + 1) * w];
                    match kx {
                        0 => dst[..w - 1].iter_mut().zip(&g[1..]).for_each(|(d, v)| *d += v),
                        1 => dst.iter_mut().zip(g).for_each(|(d, v)| *d += v),
                        _ => dst[1..].iter_mut().zip(&g[..w - 1]).for_each(|(d, v)| *d += v),
                    }
                }
            }
        }
    }
}

/// Strided matrix view for [`gemm`].
#[derive(Clone, Copy)]
struct Mat<'a> {
    data: &'a [f64],
    rs: isize,
    cs: isize,
}

/// `c = alpha * a(m x k) * b(k x n) + beta * c`, with `c` strided by `rsc`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: Mat, b: Mat, beta: f64, c: &mut [f64], rsc: usize) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= (m - 1) * rsc + n);
    // SAFETY: every index touched is bounded by the slice lengths checked by
    // the callers: a spans (m-1)*rs+(k-1)*cs, b likewise, c by the assert.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            a.rs,
            a.cs,
            b.data.as_ptr(),
            b.rs,
            b.cs,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn strip_rows(in_channels: usize, h: usize, w: usize) -> usize {
    (COL_BUDGET / (in_channels * 9 * w).max(1)).clamp(1, h)
}

fn check_conv_input(x: &Tensor4, layer: &ConvLayer) -> Result<()> {
    if x.channels() != layer.in_channels {
        return Err(Error::Dimension(format!(
            "convolution expects {} input channels, got {}",
            layer.in_channels,
            x.channels()
        )));
    }
    if layer.kernels.len() != layer.out_channels * layer.in_channels * 9
        || layer.bias.len() != layer.out_channels
    {
        return Err(Error::Dimension("convolution parameters have the wrong length".into()));
    }
    Ok(())
}

/// Cross-correlation with zero padding 1 plus bias; output has the input's
/// spatial size.
pub fn conv2d_forward(x: &Tensor4, layer: &ConvLayer) -> Result<Tensor4> {
    check_conv_input(x, layer)?;
    let [nb, cin, h, w] = x.shape();
    let cout = layer.out_channels;
    let hw = h * w;
    let mut out = Tensor4::zeros(nb, cout, h, w);
    let rows = strip_rows(cin, h, w);
    let mut col = vec![0.0; cin * 9 * rows * w];
    let k = Mat {
        data: &layer.kernels,
        rs: (cin * 9) as isize,
        cs: 1,
    };
    for n in 0..nb {
        let xs = x.sample(n);
        let os = out.sample_mut(n);
        for (o, &b) in layer.bias.iter().enumerate() {
            os[o * hw..(o + 1) * hw].fill(b);
        }
        let mut y0 = 0;
        while y0 < h {
            let y1 = (y0 + rows).min(h);
            let ncol = (y1 - y0) * w;
            im2col(xs, cin, h, w, y0, y1, &mut col);
            let b = Mat {
                data: &col,
                rs: ncol as isize,
                cs: 1,
            };
            gemm(cout, cin * 9, ncol, k, b, 1.0, &mut os[y0 * w..], hw);
            y0 = y1;
        }
    }
    Ok(out)
}

/// Exact gradients of [`conv2d_forward`] given the upstream gradient.
pub fn conv2d_backward(
    x: &Tensor4,
    layer: &ConvLayer,
    grad_out: &Tensor4,
) -> Result<(Tensor4, ConvGrads)> {
    check_conv_input(x, layer)?;
    let [nb, cin, h, w] = x.shape();
    let cout = layer.out_channels;
    if grad_out.shape() != [nb, cout, h, w] {
        return Err(Error::Dimension(format!(
            "upstream gradient {:?} does not match convolution output {:?}",
            grad_out.shape(),
            [nb, cout, h, w]
        )));
    }
    let hw = h * w;
    let mut gx = Tensor4::zeros(nb, cin, h, w);
    let mut grads = ConvGrads {
        kernels: vec![0.0; layer.kernels.len()],
        bias: vec![0.0; cout],
    };
    let rows = strip_rows(cin, h, w);
    let mut col = vec![0.0; cin * 9 * rows * w];
    let mut gcol = vec![0.0; cin * 9 * rows * w];
    for n in 0..nb {
        let xs = x.sample(n);
        let gs = grad_out.sample(n);
        for (o, gb) in grads.bias.iter_mut().enumerate() {
            *gb += gs[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        let mut y0 = 0;
        while y0 < h {
            let y1 = (y0 + rows).min(h);
            let ncol = (y1 - y0) * w;
            im2col(xs, cin, h, w, y0, y1, &mut col);
            let g = Mat {
                data: &gs[y0 * w..],
                rs: hw as isize,
                cs: 1,
            };
            // dK += G * col^T
            let col_t = Mat {
                data: &col,
                rs: 1,
                cs: ncol as isize,
            };
            gemm(cout, ncol, cin * 9, g, col_t, 1.0, &mut grads.kernels, cin * 9);
            // dcol = K^T * G
            let k_t = Mat {
                data: &layer.kernels,
                rs: 1,
                cs: (cin * 9) as isize,
            };
            gemm(cin * 9, cout, ncol, k_t, g, 0.0, &mut gcol, ncol);
            col2im(&gcol, cin, h, w, y0, y1, gx.sample_mut(n));
            y0 = y1;
        }
    }
    Ok((gx, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are not consulted.
    Train,
    /// Running statistics.
    Infer,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub epsilon: f64,
    /// Weight of the old running value in each update.
    pub momentum: f64,
}

impl BatchNormLayer {
    pub fn new(channels: usize) -> Self {
        BatchNormLayer {
            scale: vec![1.0; channels],
            shift: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    /// Folds the batch statistics of a train-mode forward pass into the
    /// running averages.
    pub fn update_running_stats(&mut self, cache: &BnCache) -> Result<()> {
        if cache.mode != Mode::Train {
            return Err(Error::State("running statistics need a train-mode cache".into()));
        }
        let m = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * cache.batch_mean[c];
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * cache.batch_var[c];
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct BnCache {
    mode: Mode,
    x_hat: Tensor4,
    inv_std: Vec<f64>,
    scale: Vec<f64>,
    batch_mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    batch_var: Vec<f64>,
}

impl BnCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_mean(&self) -> &[f64] {
        &self.batch_mean
    }

    pub fn batch_var(&self) -> &[f64] {
        &self.batch_var
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnGrads {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

/// Per-channel normalization. Does not touch the running statistics; see
/// [`BatchNormLayer::update_running_stats`].
pub fn batchnorm_forward(x: &Tensor4, layer: &BatchNormLayer, mode: Mode) -> Result<(Tensor4, BnCache)> {
    let [nb, ch, _, _] = x.shape();
    if ch != layer.channels() {
        return Err(Error::Dimension(format!(
            "batch norm expects {} channels, got {ch}",
            layer.channels()
        )));
    }
    let p = x.plane_len();
    let count = nb * p;
    let (mean, var) = match mode {
        Mode::Train => {
            if count < 2 {
                return Err(Error::Statistics(
                    "train-mode batch norm needs at least two values per channel".into(),
                ));
            }
            let mut mean = vec![0.0; ch];
            let mut var = vec![0.0; ch];
            for c in 0..ch {
                let s: f64 = (0..nb).map(|n| x.plane(n, c).iter().sum::<f64>()).sum();
                let mu = s / count as f64;
                let ss: f64 = (0..nb)
                    .map(|n| x.plane(n, c).iter().map(|v| (v - mu) * (v - mu)).sum::<f64>())
                    .sum();
                mean[c] = mu;
                var[c] = ss / count as f64;
            }
            (mean, var)
        }
        Mode::Infer => (layer.running_mean.clone(), layer.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + layer.epsilon).sqrt()).collect();
    let mut x_hat = x.clone();
    let mut y = x.clone();
    for n in 0..nb {
        for c in 0..ch {
            let (mu, is, g, b) = (mean[c], inv_std[c], layer.scale[c], layer.shift[c]);
            let xh = x_hat.plane_mut(n, c);
            for v in xh.iter_mut() {
                *v = (*v - mu) * is;
            }
            for (o, &h) in y.plane_mut(n, c).iter_mut().zip(x_hat.plane(n, c)) {
                *o = g * h + b;
            }
        }
    }
    Ok((
        y,
        BnCache {
            mode,
            x_hat: if mode == Mode::Train { x_hat } else { Tensor4::zeros(0, 0, 0, 0) },
            inv_std,
            scale: layer.scale.clone(),
            batch_mean: if mode == Mode::Train { mean } else { Vec::new() },
            batch_var: if mode == Mode::Train { var } else { Vec::new() },
        },
    ))
}

/// Exact gradient of the train-mode forward pass, including the
/// dependence of the batch statistics on the input.
pub fn batchnorm_backward(cache: &BnCache, grad_out: &Tensor4) -> Result<(Tensor4, BnGrads)> {
    if cache.mode != Mode::Train {
        return Err(Error::State("batch norm backward needs a train-mode cache".into()));
    }
    cache.x_hat.same_shape(grad_out)?;
    let [nb, ch, _, _] = grad_out.shape();
    let m = (nb * grad_out.plane_len()) as f64;
    let mut gx = Tensor4::zeros(nb, ch, grad_out.height(), grad_out.width());
    let mut grads = BnGrads {
        scale: vec![0.0; ch],
        shift: vec![0.0; ch],
    };
    for c in 0..ch {
        let mut sum_g = 0.0;
        let mut sum_gx = 0.0;
        for n in 0..nb {
            for (&g, &h) in grad_out.plane(n, c).iter().zip(cache.x_hat.plane(n, c)) {
                sum_g += g;
                sum_gx += g * h;
            }
        }
        grads.shift[c] = sum_g;
        grads.scale[c] = sum_gx;
        let k = cache.scale[c] * cache.inv_std[c];
        let (mean_g, mean_gx) = (sum_g / m, sum_gx / m);
        for n in 0..nb {
            let out = gx.plane_mut(n, c);
            for ((o, &g), &h) in out
                .iter_mut()
                .zip(grad_out.plane(n, c))
                .zip(cache.x_hat.plane(n, c))
            {
                *o = k * (g - mean_g - h * mean_gx);
            }
        }
    }
    Ok((gx, grads))
}

pub fn relu_forward(x: &Tensor4) -> Tensor4 {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Passes the gradient where `x > 0`; the subgradient at 0 is 0.
pub fn relu_backward(x: &Tensor4, grad_out: &Tensor4) -> Result<Tensor4> {
    x.same_shape(grad_out)?;
    let mut g = grad_out.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(x.data()) {
        if xv <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Stacks inputs along the channel axis, in order.
pub fn concat_forward(inputs: &[&Tensor4]) -> Result<Tensor4> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Dimension("nothing to concatenate".into()))?;
    let [nb, _, h, w] = first.shape();
    for t in inputs {
        if t.batch() != nb || t.height() != h || t.width() != w {
            return Err(Error::Dimension(format!(
                "cannot concatenate {:?} with {:?}",
                t.shape(),
                first.shape()
            )));
        }
    }
    let total: usize = inputs.iter().map(|t| t.channels()).sum();
    let mut out = Tensor4::zeros(nb, total, h, w);
    for n in 0..nb {
        let dst = out.sample_mut(n);
        let mut off = 0;
        for t in inputs {
            let src = t.sample(n);
            dst[off..off + src.len()].copy_from_slice(src);
            off += src.len();
        }
    }
    Ok(out)
}

/// Splits a channel-stacked gradient into blocks of `sizes` channels.
pub fn concat_backward(grad_out: &Tensor4, sizes: &[usize]) -> Result<Vec<Tensor4>> {
    let [nb, ch, h, w] = grad_out.shape();
    if sizes.iter().sum::<usize>() != ch {
        return Err(Error::Dimension(format!(
            "split sizes {sizes:?} do not add up to {ch} channels"
        )));
    }
    let p = h * w;
    let mut parts: Vec<Tensor4> = sizes.iter().map(|&c| Tensor4::zeros(nb, c, h, w)).collect();
    for n in 0..nb {
        let src = grad_out.sample(n);
        let mut off = 0;
        for (part, &c) in parts.iter_mut().zip(sizes) {
            part.sample_mut(n).copy_from_slice(&src[off..off + c * p]);
            off += c * p;
        }
    }
    Ok(parts)
}
