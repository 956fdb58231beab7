//! The WavResNet topology: an initial conv+BN+ReLU, residual modules of
//! conv+BN+ReLU units joined to their input by addition and ReLU, a
//! concatenation of the initial features with every module output, a
//! post-concatenation stack, and a final plain convolution.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::layers::*;
use super::tensor::Tensor4;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub in_channels: usize,
    pub width: usize,
    pub modules: usize,
    pub convs_per_module: usize,
    pub post_convs: usize,
    pub out_channels: usize,
}

impl Default for Topology {
    fn default() -> Self {
        Topology {
            in_channels: 15,
            width: 128,
            modules: 6,
            convs_per_module: 3,
            post_convs: 4,
            out_channels: 15,
        }
    }
}

/// Only join rule implemented: element-wise addition, then ReLU.
const BYPASS: &str = "add_relu";

impl Topology {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("in_channels", self.in_channels),
            ("width", self.width),
            ("convs_per_module", self.convs_per_module),
            ("post_convs", self.post_convs),
            ("out_channels", self.out_channels),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(Error::Config(format!("net.{name} must be positive")));
            }
        }
        Ok(())
    }

    pub fn conv_count(&self) -> usize {
        2 + self.modules * self.convs_per_module + self.post_convs
    }

    /// Channels entering the post-concatenation stack.
    pub fn concat_channels(&self) -> usize {
        (self.modules + 1) * self.width
    }

    /// `(in, out, batch-normed)` for every conv in declaration order.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, bool)> {
        let w = self.width;
        let mut v = vec![(self.in_channels, w, true)];
        v.extend(std::iter::repeat_n((w, w, true), self.modules * self.convs_per_module));
        v.push((self.concat_channels(), w, true));
        v.extend(std::iter::repeat_n((w, w, true), self.post_convs - 1));
        v.push((w, self.out_channels, false));
        v
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_shapes()
            .iter()
            .map(|&(i, o, bn)| o * i * 9 + o + if bn { 2 * o } else { 0 })
            .sum()
    }

    pub fn from_config(cfg: &Config) -> Result<Self> {
        let d = Topology::default();
        if let Some(b) = cfg.get_str("net.bypass") {
            if b != BYPASS {
                return Err(Error::Config(format!("net.bypass `{b}` is not supported; use {BYPASS}")));
            }
        }
        let t = Topology {
            in_channels: cfg.get_or("net.in_channels", d.in_channels)?,
            width: cfg.get_or("net.width", d.width)?,
            modules: cfg.get_or("net.modules", d.modules)?,
            convs_per_module: cfg.get_or("net.convs_per_module", d.convs_per_module)?,
            post_convs: cfg.get_or("net.post_convs", d.post_convs)?,
            out_channels: cfg.get_or("net.out_channels", d.out_channels)?,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn to_config(&self) -> Config {
        let mut c = Config::new();
        c.set("net.in_channels", self.in_channels);
        c.set("net.width", self.width);
        c.set("net.modules", self.modules);
        c.set("net.convs_per_module", self.convs_per_module);
        c.set("net.post_convs", self.post_convs);
        c.set("net.out_channels", self.out_channels);
        c.set("net.bypass", BYPASS);
        c
    }
}

/// One convolution, optionally followed by batch norm and ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub conv: ConvLayer,
    pub bn: Option<BatchNormLayer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitGrads {
    pub conv: ConvGrads,
    pub bn: Option<BnGrads>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub topology: Topology,
    /// Declaration order: initial, module units, post-concatenation, final.
    pub units: Vec<Unit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub units: Vec<UnitGrads>,
}

impl NetworkParams {
    /// All-zero convolutions with identity batch norms.
    pub fn zeros(topology: &Topology) -> Result<Self> {
        topology.validate()?;
        let units = topology
            .layer_shapes()
            .into_iter()
            .map(|(i, o, bn)| Unit {
                conv: ConvLayer::zeros(i, o),
                bn: bn.then(|| BatchNormLayer::new(o)),
            })
            .collect();
        Ok(NetworkParams {
            topology: topology.clone(),
            units,
        })
    }

    /// He initialization: kernels ~ N(0, 2/fan_in), zero biases, unit
    /// scales, zero shifts.
    pub fn he_init(topology: &Topology, seed: u64) -> Result<Self> {
        let mut p = NetworkParams::zeros(topology)?;
        let mut r = rng::stream(seed, 0x6e6574);
        for u in &mut p.units {
            let normal = Normal::new(0.0, (2.0 / u.conv.fan_in() as f64).sqrt())
                .expect("positive standard deviation");
            for k in &mut u.conv.kernels {
                *k = normal.sample(&mut r);
            }
        }
        Ok(p)
    }

    pub fn parameter_count(&self) -> usize {
        self.learnable().iter().map(|s| s.len()).sum()
    }

    /// Learnable arrays in declaration order (kernel, bias, then BN scale
    /// and shift where present).
    pub fn learnable(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for u in &self.units {
            v.push(&u.conv.kernels);
            v.push(&u.conv.bias);
            if let Some(bn) = &u.bn {
                v.push(&bn.scale);
                v.push(&bn.shift);
            }
        }
        v
    }

    pub fn learnable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for u in &mut self.units {
            v.push(&mut u.conv.kernels);
            v.push(&mut u.conv.bias);
            if let Some(bn) = &mut u.bn {
                v.push(&mut bn.scale);
                v.push(&mut bn.shift);
            }
        }
        v
    }

    /// Folds the batch statistics recorded in `cache` into every batch
    /// norm's running averages.
    pub fn update_running_stats(&mut self, cache: &NetCache) -> Result<()> {
        if cache.units.len() != self.units.len() {
            return Err(Error::State("cache does not belong to this network".into()));
        }
        for (u, c) in self.units.iter_mut().zip(&cache.units) {
            if let (Some(bn), Some(bc)) = (&mut u.bn, &c.bn) {
                bn.update_running_stats(bc)?;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.learnable().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl Gradients {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Gradients {
            units: params
                .units
                .iter()
                .map(|u| UnitGrads {
                    conv: ConvGrads {
                        kernels: vec![0.0; u.conv.kernels.len()],
                        bias: vec![0.0; u.conv.bias.len()],
                    },
                    bn: u.bn.as_ref().map(|bn| BnGrads {
                        scale: vec![0.0; bn.channels()],
                        shift: vec![0.0; bn.channels()],
                    }),
                })
                .collect(),
        }
    }

    /// Same order as [`NetworkParams::learnable`].
    pub fn arrays(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for u in &self.units {
            v.push(&u.conv.kernels);
            v.push(&u.conv.bias);
            if let Some(bn) = &u.bn {
                v.push(&bn.scale);
                v.push(&bn.shift);
            }
        }
        v
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for u in &mut self.units {
            v.push(&mut u.conv.kernels);
            v.push(&mut u.conv.bias);
            if let Some(bn) = &mut u.bn {
                v.push(&mut bn.scale);
                v.push(&mut bn.shift);
            }
        }
        v
    }
}

#[derive(Debug, Clone)]
struct UnitCache {
    input: Tensor4,
    bn: Option<BnCache>,
    /// Post-ReLU output, doubling as the ReLU mask.
    output: Tensor4,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct NetCache {
    mode: Mode,
    units: Vec<UnitCache>,
    /// Post-ReLU outputs of the module joins.
    joins: Vec<Tensor4>,
}

impl NetCache {
    pub fn mode(&self) -> Mode {
        self.mode
    }
}

fn unit_forward(u: &Unit, x: Tensor4, mode: Mode) -> Result<UnitCache> {
    let y = conv2d_forward(&x, &u.conv)?;
    match &u.bn {
        Some(bn) => {
            let (z, bc) = batchnorm_forward(&y, bn, mode)?;
            Ok(UnitCache {
                input: x,
                bn: Some(bc),
                output: relu_forward(&z),
            })
        }
        None => Ok(UnitCache {
            input: x,
            bn: None,
            output: y,
        }),
    }
}

fn unit_backward(u: &Unit, c: &UnitCache, grad_out: &Tensor4) -> Result<(Tensor4, UnitGrads)> {
    let (g, bn) = match &c.bn {
        Some(bc) => {
            let g = relu_backward(&c.output, grad_out)?;
            let (g, bg) = batchnorm_backward(bc, &g)?;
            (g, Some(bg))
        }
        None => (grad_out.clone(), None),
    };
    let (gx, conv) = conv2d_backward(&c.input, &u.conv, &g)?;
    Ok((gx, UnitGrads { conv, bn }))
}

/// Forward pass. In train mode batch norms use batch statistics and the
/// returned cache supports [`wavresnet_backward`]; running statistics are
/// left untouched (see [`NetworkParams::update_running_stats`]).
pub fn wavresnet_forward(params: &NetworkParams, x: &Tensor4, mode: Mode) -> Result<(Tensor4, NetCache)> {
    let t = &params.topology;
    if x.channels() != t.in_channels {
        return Err(Error::Dimension(format!(
            "network expects {} input channels, got {}",
            t.in_channels,
            x.channels()
        )));
    }
    if x.height() < 3 || x.width() < 3 {
        return Err(Error::Dimension(format!(
            "network input must be at least 3x3, got {}x{}",
            x.height(),
            x.width()
        )));
    }
    if params.units.len() != t.conv_count() {
        return Err(Error::State("parameters do not match their topology".into()));
    }
    let mut units = Vec::with_capacity(params.units.len());
    let mut joins = Vec::with_capacity(t.modules);
    let mut it = params.units.iter();

    units.push(unit_forward(it.next().unwrap(), x.clone(), mode)?);
    let mut h = units[0].output.clone();
    for _ in 0..t.modules {
        let module_in = h.clone();
        for _ in 0..t.convs_per_module {
            let c = unit_forward(it.next().unwrap(), h, mode)?;
            h = c.output.clone();
            units.push(c);
        }
        h = relu_forward(&h.add(&module_in)?);
        joins.push(h.clone());
    }
    let mut blocks: Vec<&Tensor4> = vec![&units[0].output];
    blocks.extend(joins.iter());
    h = concat_forward(&blocks)?;
    for _ in 0..t.post_convs {
        let c = unit_forward(it.next().unwrap(), h, mode)?;
        h = c.output.clone();
        units.push(c);
    }
    let c = unit_forward(it.next().unwrap(), h, mode)?;
    let y = c.output.clone();
    units.push(c);
    Ok((y, NetCache { mode, units, joins }))
}

/// Reverse-mode gradients of every learnable parameter, plus the gradient
/// with respect to the network input.
pub fn wavresnet_backward(
    params: &NetworkParams,
    cache: &NetCache,
    grad_out: &Tensor4,
) -> Result<(Gradients, Tensor4)> {
    if cache.mode != Mode::Train {
        return Err(Error::State("backward pass needs a train-mode forward cache".into()));
    }
    let t = &params.topology;
    if cache.units.len() != params.units.len() {
        return Err(Error::State("cache does not belong to this network".into()));
    }
    let n_units = params.units.len();
    let mut grads: Vec<Option<UnitGrads>> = vec![None; n_units];
    let mut idx = n_units - 1;

    let (mut g, ug) = unit_backward(&params.units[idx], &cache.units[idx], grad_out)?;
    grads[idx] = Some(ug);
    for _ in 0..t.post_convs {
        idx -= 1;
        let (gx, ug) = unit_backward(&params.units[idx], &cache.units[idx], &g)?;
        grads[idx] = Some(ug);
        g = gx;
    }
    let sizes = vec![t.width; t.modules + 1];
    let mut parts = concat_backward(&g, &sizes)?.into_iter();
    let mut g_initial = parts.next().unwrap();
    let concat_grads: Vec<Tensor4> = parts.collect();

    // Walk the modules backwards; `carry` is the gradient flowing into the
    // current module's output from the module after it.
    let mut carry: Option<Tensor4> = None;
    for m in (0..t.modules).rev() {
        let mut g_join = concat_grads[m].clone();
        if let Some(c) = carry.take() {
            g_join.add_assign(&c)?;
        }
        let g_sum = relu_backward(&cache.joins[m], &g_join)?;
        let mut g_h = g_sum.clone();
        for _ in 0..t.convs_per_module {
            idx -= 1;
            let (gx, ug) = unit_backward(&params.units[idx], &cache.units[idx], &g_h)?;
            grads[idx] = Some(ug);
            g_h = gx;
        }
        // Gradient reaching the module input through both paths.
        g_h.add_assign(&g_sum)?;
        carry = Some(g_h);
    }
    if let Some(c) = carry {
        g_initial.add_assign(&c)?;
    }
    idx -= 1;
    debug_assert_eq!(idx, 0);
    let (gx, ug) = unit_backward(&params.units[0], &cache.units[0], &g_initial)?;
    grads[0] = Some(ug);
    Ok((
        Gradients {
            units: grads.into_iter().map(|g| g.expect("every unit visited")).collect(),
        },
        gx,
    ))
}

/// Inference-mode convenience wrapper.
pub fn wavresnet_infer(params: &NetworkParams, x: &Tensor4) -> Result<Tensor4> {
    Ok(wavresnet_forward(params, x, Mode::Infer)?.0)
}

/// Picks `n` distinct-ish `(array, offset)` coordinates uniformly over all
/// learnable scalars; used by gradient checks.
pub fn sample_parameter_coords(params: &NetworkParams, n: usize, seed: u64) -> Vec<(usize, usize)> {
    let lens: Vec<usize> = params.learnable().iter().map(|s| s.len()).collect();
    let total: usize = lens.iter().sum();
    let mut r = rng::stream(seed, 0x636f6f7264);
    (0..n)
        .map(|_| {
            let mut k = r.random_range(0..total);
            let mut a = 0;
            while k >= lens[a] {
                k -= lens[a];
                a += 1;
            }
            (a, k)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Topology {
        Topology {
            in_channels: 15,
            width: 3,
            modules: 6,
            convs_per_module: 3,
            post_convs: 4,
            out_channels: 15,
        }
    }

    fn rand_input(shape: [usize; 4], seed: u64) -> Tensor4 {
        let mut r = rng::stream(seed, 61);
        Tensor4::from_fn(shape[0], shape[1], shape[2], shape[3], |_, _, _, _| {
            r.random_range(-1.0..1.0)
        })
    }

    #[test]
    fn default_topology_counts() {
        let t = Topology::default();
        assert_eq!(t.conv_count(), 24);
        assert_eq!(t.concat_channels(), 896);
        let shapes = t.layer_shapes();
        assert_eq!(shapes[0], (15, 128, true));
        assert_eq!(shapes[19], (896, 128, true));
        assert_eq!(shapes[23], (128, 15, false));
        assert_eq!(t.parameter_count(), 4_172_175);
        let p = NetworkParams::zeros(&t).unwrap();
        assert_eq!(p.parameter_count(), 4_172_175);
        assert_eq!(p.units.len(), 24);
    }

    #[test]
    fn topology_config_roundtrip() {
        let t = tiny();
        assert_eq!(Topology::from_config(&t.to_config()).unwrap(), t);
        let mut c = t.to_config();
        c.set("net.bypass", "concat");
        assert!(Topology::from_config(&c).is_err());
        c.set("net.bypass", "add_relu");
        c.set("net.width", 0);
        assert!(Topology::from_config(&c).is_err());
    }

    #[test]
    fn shapes_are_preserved() {
        let p = NetworkParams::he_init(&tiny(), 1).unwrap();
        for (h, w) in [(3, 3), (8, 5), (55, 55)] {
            let y = wavresnet_infer(&p, &rand_input([1, 15, h, w], 2)).unwrap();
            assert_eq!(y.shape(), [1, 15, h, w]);
        }
        assert!(matches!(
            wavresnet_infer(&p, &rand_input([1, 14, 8, 8], 3)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            wavresnet_infer(&p, &rand_input([1, 15, 2, 8], 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn zero_network_gives_zero() {
        let p = NetworkParams::zeros(&tiny()).unwrap();
        let y = wavresnet_forward(&p, &rand_input([2, 15, 6, 6], 4), Mode::Train).unwrap().0;
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = NetworkParams::he_init(&tiny(), 5).unwrap();
        let x = rand_input([2, 15, 5, 5], 6);
        let (_, cache) = wavresnet_forward(&p, &x, Mode::Train).unwrap();
        let (g, gx) = wavresnet_backward(&p, &cache, &Tensor4::zeros(2, 15, 5, 5)).unwrap();
        assert!(g.arrays().iter().all(|a| a.iter().all(|&v| v == 0.0)));
        assert!(gx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn infer_cache_rejected_by_backward() {
        let p = NetworkParams::he_init(&tiny(), 7).unwrap();
        let x = rand_input([1, 15, 4, 4], 8);
        let (y, cache) = wavresnet_forward(&p, &x, Mode::Infer).unwrap();
        assert!(matches!(
            wavresnet_backward(&p, &cache, &y),
            Err(Error::State(_))
        ));
    }

    fn loss(p: &NetworkParams, x: &Tensor4, w: &Tensor4) -> f64 {
        wavresnet_forward(p, x, Mode::Train).unwrap().0.dot(w)
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let p = NetworkParams::he_init(&tiny(), 9).unwrap();
        let x = rand_input([2, 15, 5, 5], 10);
        let w = rand_input([2, 15, 5, 5], 11);
        let (_, cache) = wavresnet_forward(&p, &x, Mode::Train).unwrap();
        let (g, _) = wavresnet_backward(&p, &cache, &w).unwrap();
        let h = 1e-6;
        for (a, k) in sample_parameter_coords(&p, 20, 12) {
            let mut q = p.clone();
            let v = q.learnable()[a][k];
            q.learnable_mut()[a][k] = v + h;
            let up = loss(&q, &x, &w);
            q.learnable_mut()[a][k] = v - h;
            let dn = loss(&q, &x, &w);
            let num = (up - dn) / (2.0 * h);
            let ana = g.arrays()[a][k];
            let rel = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-6);
            assert!(rel < 1e-4, "array {a} offset {k}: {num} vs {ana}");
        }
    }

    #[test]
    fn input_gradient_matches_directional_derivative() {
        let p = NetworkParams::he_init(&tiny(), 13).unwrap();
        let x = rand_input([1, 15, 8, 8], 14);
        let w = rand_input([1, 15, 8, 8], 15);
        let v = rand_input([1, 15, 8, 8], 16);
        // A single sample still gives 64 values per channel for batch norm.
        let (_, cache) = wavresnet_forward(&p, &x, Mode::Train).unwrap();
        let (_, gx) = wavresnet_backward(&p, &cache, &w).unwrap();
        let h = 1e-6;
        let shifted = |s: f64| {
            let mut t = x.clone();
            t.data_mut().iter_mut().zip(v.data()).for_each(|(a, b)| *a += s * b);
            t
        };
        let num = (loss(&p, &shifted(h), &w) - loss(&p, &shifted(-h), &w)) / (2.0 * h);
        let ana = gx.dot(&v);
        assert!((num - ana).abs() / ana.abs() < 1e-4, "{num} vs {ana}");
    }

    #[test]
    fn running_stats_update() {
        let mut p = NetworkParams::he_init(&tiny(), 17).unwrap();
        let x = rand_input([2, 15, 4, 4], 18);
        let (_, cache) = wavresnet_forward(&p, &x, Mode::Train).unwrap();
        p.update_running_stats(&cache).unwrap();
        let bn = p.units[0].bn.as_ref().unwrap();
        assert!(bn.running_mean.iter().any(|&v| v != 0.0));
        let (_, icache) = wavresnet_forward(&p, &x, Mode::Infer).unwrap();
        assert!(p.update_running_stats(&icache).is_err());
    }

    #[test]
    fn he_init_statistics() {
        let t = Topology {
            width: 32,
            ..Topology::default()
        };
        let p = NetworkParams::he_init(&t, 19).unwrap();
        let k = &p.units[19].conv.kernels;
        let var = k.iter().map(|v| v * v).sum::<f64>() / k.len() as f64;
        let expect = 2.0 / (t.concat_channels() * 9) as f64;
        assert!((var / expect - 1.0).abs() < 0.05, "{var} vs {expect}");
        assert!(p.units.iter().all(|u| u.conv.bias.iter().all(|&b| b == 0.0)));
        assert_eq!(NetworkParams::he_init(&t, 19).unwrap(), p);
        assert_ne!(NetworkParams::he_init(&t, 20).unwrap(), p);
    }
}
