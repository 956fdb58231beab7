//! End-to-end acceptance checks. Each test writes one `PASS` / `FAIL` line
//! straight to stderr so the verdicts show up even when output is captured.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavresnet::config::Config;
use wavresnet::ct::{backproject, fbp_reconstruct, forward_project, inject_low_dose_noise, rasterize_phantom, Geometry, Phantom};
use wavresnet::image::{decode_wimg, encode_wimg, load_image, save_image};
use wavresnet::mbir::{admm_tv_reconstruct, TvParams};
use wavresnet::metrics::nrmse;
use wavresnet::net::{
    batchnorm_backward, batchnorm_forward, concat_backward, concat_forward, conv2d_backward, conv2d_forward,
    decode_checkpoint, encode_checkpoint, relu_backward, relu_forward, sample_parameter_coords, wavresnet_backward,
    wavresnet_forward, BatchNormLayer, ConvLayer, Mode, NetworkParams, Tensor4, Topology,
};
use wavresnet::nsct::{nsct_forward, nsct_inverse, DecompositionSpec, FilterBank};
use wavresnet::pipeline::{
    compare_methods, denoise, synth_dataset, train, Comparison, NetworkMethod, SimConfig, TrainOutcome, TrainingConfig,
};
use wavresnet::{Image, MultiImage};

fn verdict(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "acceptance {id:>2} [{tag}] {name}: {detail}");
    assert!(pass, "criterion {id} ({name}) failed: {detail}");
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(h: usize, w: usize, r: &mut ChaCha8Rng) -> Image {
    Image::from_fn(h, w, |_, _| r.random_range(-1.0..1.0))
}

fn random_tensor(shape: [usize; 4], r: &mut ChaCha8Rng) -> Tensor4 {
    Tensor4::from_fn(shape[0], shape[1], shape[2], shape[3], |_, _, _, _| r.random_range(-1.0..1.0))
}

fn desk_config() -> Config {
    Config::load(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.cfg")).expect("sample config")
}

#[test]
fn criterion_01_transform_correctness() {
    let start = Instant::now();
    let bank = FilterBank::maxflat();
    let spec = DecompositionSpec::default();
    let mut r = rng(1);
    let rel = |x: &Image| {
        let y = nsct_inverse(&nsct_forward(x, &spec, &bank).unwrap(), &bank).unwrap();
        y.sub(x).unwrap().norm() / x.norm()
    };
    let mut worst_pr = 0.0f64;
    for _ in 0..100 {
        worst_pr = worst_pr.max(rel(&random_image(64, 64, &mut r)));
    }
    let sl = rasterize_phantom(&Phantom::shepp_logan(1.0), 64).unwrap();
    let sl_pr = rel(&sl);

    let mut worst_shift = 0.0f64;
    let x = random_image(64, 64, &mut r);
    let base = nsct_forward(&x, &spec, &bank).unwrap();
    for _ in 0..20 {
        let (a, b) = (r.random_range(-63..64i64) as isize, r.random_range(-63..64i64) as isize);
        let shifted = nsct_forward(&x.circshift(a, b), &spec, &bank).unwrap();
        for (s, t) in shifted.bands.iter().zip(&base.bands) {
            worst_shift = worst_shift.max(s.sub(&t.circshift(a, b)).unwrap().max_abs());
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_pr < 1e-8 && sl_pr < 1e-8 && worst_shift < 1e-10 && elapsed < Duration::from_secs(60);
    verdict(
        1,
        "transform correctness",
        pass,
        &format!(
            "PR max {worst_pr:.2e} (random), {sl_pr:.2e} (Shepp-Logan); shift max {worst_shift:.2e}; {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_02_vanishing_moments() {
    let bank = FilterBank::maxflat();
    let spec = DecompositionSpec::default();
    let mut worst = 0.0f64;
    let mut bands = 0;
    for value in [1.0, -37.5, 1234.5] {
        let stack = nsct_forward(&Image::filled(64, 64, value), &spec, &bank).unwrap();
        bands = stack.bands.len() - 1;
        for b in &stack.bands[1..] {
            worst = worst.max(b.max_abs());
        }
    }
    verdict(
        2,
        "vanishing-moment annihilation",
        bands == 14 && worst < 1e-10,
        &format!("{bands} non-lowpass bands, max |coeff| {worst:.2e}"),
    );
}

/// Relative error of the central difference `(up - dn) / 2h` against the
/// analytic value, after discounting the rounding error of the quotient
/// itself (exactly vanishing gradients leave only that rounding).
fn fd_rel_err(up: f64, dn: f64, h: f64, ana: f64) -> f64 {
    let num = (up - dn) / (2.0 * h);
    let rounding = 4.0 * f64::EPSILON * (up.abs() + dn.abs()) / (2.0 * h);
    let excess = ((num - ana).abs() - rounding).max(0.0);
    if excess == 0.0 {
        0.0
    } else {
        excess / num.abs().max(ana.abs())
    }
}

/// Largest [`fd_rel_err`] over every coordinate of `p` (step 1e-6) against
/// the analytic gradient `g`.
fn fd_worst(p: &[f64], g: &[f64], f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let h = 1e-6;
    let mut q = p.to_vec();
    let mut worst = 0.0f64;
    for i in 0..p.len() {
        q[i] = p[i] + h;
        let up = f(&q);
        q[i] = p[i] - h;
        let dn = f(&q);
        q[i] = p[i];
        worst = worst.max(fd_rel_err(up, dn, h, g[i]));
    }
    worst
}

fn fd_conv(seed: u64) -> f64 {
    let mut r = rng(seed);
    let shape = [2, 2, 5, 4];
    let x = random_tensor(shape, &mut r);
    let mut l = ConvLayer::zeros(2, 3);
    l.kernels.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
    l.bias.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
    let w = random_tensor([2, 3, 5, 4], &mut r);
    let (gx, g) = conv2d_backward(&x, &l, &w).unwrap();
    let fx = |d: &[f64]| conv2d_forward(&Tensor4::from_vec(2, 2, 5, 4, d.to_vec()).unwrap(), &l).unwrap().dot(&w);
    let fk = |d: &[f64]| {
        let mut m = l.clone();
        m.kernels.copy_from_slice(d);
        conv2d_forward(&x, &m).unwrap().dot(&w)
    };
    let fb = |d: &[f64]| {
        let mut m = l.clone();
        m.bias.copy_from_slice(d);
        conv2d_forward(&x, &m).unwrap().dot(&w)
    };
    fd_worst(x.data(), gx.data(), &fx)
        .max(fd_worst(&l.kernels, &g.kernels, &fk))
        .max(fd_worst(&l.bias, &g.bias, &fb))
}

fn fd_bn(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor([3, 2, 3, 3], &mut r);
    let mut l = BatchNormLayer::new(2);
    l.scale.iter_mut().for_each(|v| *v = r.random_range(0.5..1.5));
    l.shift.iter_mut().for_each(|v| *v = r.random_range(-1.0..1.0));
    let w = random_tensor([3, 2, 3, 3], &mut r);
    let (_, cache) = batchnorm_forward(&x, &l, Mode::Train).unwrap();
    let (gx, g) = batchnorm_backward(&cache, &w).unwrap();
    let run = |x: &Tensor4, l: &BatchNormLayer| batchnorm_forward(x, l, Mode::Train).unwrap().0.dot(&w);
    let fx = |d: &[f64]| run(&Tensor4::from_vec(3, 2, 3, 3, d.to_vec()).unwrap(), &l);
    let fs = |d: &[f64]| {
        let mut m = l.clone();
        m.scale.copy_from_slice(d);
        run(&x, &m)
    };
    let ft = |d: &[f64]| {
        let mut m = l.clone();
        m.shift.copy_from_slice(d);
        run(&x, &m)
    };
    fd_worst(x.data(), gx.data(), &fx)
        .max(fd_worst(&l.scale, &g.scale, &fs))
        .max(fd_worst(&l.shift, &g.shift, &ft))
}

fn fd_relu(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = random_tensor([2, 2, 3, 3], &mut r).map(|v| if v.abs() < 0.05 { 0.5 } else { v });
    let w = random_tensor([2, 2, 3, 3], &mut r);
    let gx = relu_backward(&x, &w).unwrap();
    let fx = |d: &[f64]| relu_forward(&Tensor4::from_vec(2, 2, 3, 3, d.to_vec()).unwrap()).dot(&w);
    fd_worst(x.data(), gx.data(), &fx)
}

fn fd_concat(seed: u64) -> f64 {
    let mut r = rng(seed);
    let a = random_tensor([2, 2, 3, 3], &mut r);
    let b = random_tensor([2, 3, 3, 3], &mut r);
    let w = random_tensor([2, 5, 3, 3], &mut r);
    let parts = concat_backward(&w, &[2, 3]).unwrap();
    let fa = |d: &[f64]| concat_forward(&[&Tensor4::from_vec(2, 2, 3, 3, d.to_vec()).unwrap(), &b]).unwrap().dot(&w);
    let fb = |d: &[f64]| concat_forward(&[&a, &Tensor4::from_vec(2, 3, 3, 3, d.to_vec()).unwrap()]).unwrap().dot(&w);
    fd_worst(a.data(), parts[0].data(), &fa).max(fd_worst(b.data(), parts[1].data(), &fb))
}

fn fd_network(seed: u64) -> (usize, f64) {
    let topo = Topology {
        in_channels: 15,
        width: 3,
        modules: 6,
        convs_per_module: 3,
        post_convs: 4,
        out_channels: 15,
    };
    let mut r = rng(seed);
    let p = NetworkParams::he_init(&topo, seed).unwrap();
    let x = random_tensor([2, 15, 4, 4], &mut r);
    let w = random_tensor([2, 15, 4, 4], &mut r);
    let loss = |p: &NetworkParams, x: &Tensor4| wavresnet_forward(p, x, Mode::Train).unwrap().0.dot(&w);
    let (_, cache) = wavresnet_forward(&p, &x, Mode::Train).unwrap();
    let (g, gx) = wavresnet_backward(&p, &cache, &w).unwrap();
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (a, k) in sample_parameter_coords(&p, 40, seed) {
        let mut q = p.clone();
        let v = q.learnable()[a][k];
        q.learnable_mut()[a][k] = v + h;
        let up = loss(&q, &x);
        q.learnable_mut()[a][k] = v - h;
        let dn = loss(&q, &x);
        worst = worst.max(fd_rel_err(up, dn, h, g.arrays()[a][k]));
    }
    let v = random_tensor([2, 15, 4, 4], &mut r);
    let shifted = |s: f64| {
        let mut t = x.clone();
        t.data_mut().iter_mut().zip(v.data()).for_each(|(a, b)| *a += s * b);
        t
    };
    worst = worst.max(fd_rel_err(loss(&p, &shifted(h)), loss(&p, &shifted(-h)), h, gx.dot(&v)));
    (topo.conv_count(), worst)
}

#[test]
fn criterion_03_gradient_fidelity() {
    let start = Instant::now();
    let seeds = [11u64, 12, 13];
    let mut rows = Vec::new();
    let mut pass = true;
    for (name, f) in [
        ("conv", fd_conv as fn(u64) -> f64),
        ("batchnorm", fd_bn),
        ("relu", fd_relu),
        ("concat", fd_concat),
        ("network", |s| fd_network(s).1),
    ] {
        let worst = seeds.iter().map(|&s| f(s)).fold(0.0f64, f64::max);
        pass &= worst < 1e-4;
        rows.push(format!("{name} {worst:.1e}"));
    }
    let convs = fd_network(14).0;
    let elapsed = start.elapsed();
    pass &= convs == 24 && elapsed < Duration::from_secs(300);
    verdict(
        3,
        "gradient fidelity",
        pass,
        &format!("max rel err: {}; {convs} convs; {:.1}s", rows.join(", "), elapsed.as_secs_f64()),
    );
}

#[test]
fn criterion_04_projector_adjointness() {
    let size = 64;
    let geometries = [Geometry::parallel(size, 90), Geometry::fan(size, 90, 4.0, 8.0)];
    let mut r = rng(4);
    let mut worst = 0.0f64;
    for g in &geometries {
        for _ in 0..20 {
            let x = random_image(size, size, &mut r);
            let mut y = forward_project(&Image::zeros(size, size), g).unwrap();
            y.data = random_image(g.n_views, g.n_detectors, &mut r);
            let lhs = forward_project(&x, g).unwrap().data.dot(&y.data);
            let rhs = x.dot(&backproject(&y, size).unwrap());
            worst = worst.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
        }
    }
    verdict(
        4,
        "projector adjointness",
        worst < 1e-10,
        &format!("max relative gap {worst:.2e} over 20 pairs each, parallel and fan"),
    );
}

/// Reference run: Hann-apodized FBP, 128x128, 360 parallel views.
const FBP_REFERENCE_NRMSE_BITS: u64 = 0x3fd6_3054_3383_6644;
const FBP_NRMSE_THRESHOLD: f64 = 0.35;

#[test]
fn criterion_05_fbp_sanity() {
    let run = || {
        let truth = rasterize_phantom(&Phantom::shepp_logan(1.0), 128).unwrap();
        let sino = forward_project(&truth, &Geometry::parallel(128, 360)).unwrap();
        nrmse(&fbp_reconstruct(&sino, 128).unwrap(), &truth).unwrap()
    };
    let (a, b) = (run(), run());
    let frozen = f64::from_bits(FBP_REFERENCE_NRMSE_BITS);
    let pass = a < FBP_NRMSE_THRESHOLD && a.to_bits() == FBP_REFERENCE_NRMSE_BITS && b.to_bits() == a.to_bits();
    verdict(
        5,
        "FBP sanity",
        pass,
        &format!("NRMSE {a:.6} (frozen {frozen:.6}, bound {FBP_NRMSE_THRESHOLD}); rerun identical: {}", a.to_bits() == b.to_bits()),
    );
}

fn least_squares_oracle(sino: &wavresnet::ct::Sinogram, size: usize) -> Image {
    let g = &sino.geometry;
    let n = size * size;
    let mut a = DMatrix::<f64>::zeros(g.n_views * g.n_detectors, n);
    for j in 0..n {
        let mut e = Image::zeros(size, size);
        e.data_mut()[j] = 1.0;
        let col = forward_project(&e, g).unwrap();
        for (i, &v) in col.data.data().iter().enumerate() {
            a[(i, j)] = v;
        }
    }
    let b = DVector::from_column_slice(sino.data.data());
    let x = (a.transpose() * &a).cholesky().expect("full column rank").solve(&(a.transpose() * b));
    Image::from_vec(size, size, x.as_slice().to_vec()).unwrap()
}

#[test]
fn criterion_06_mbir_descent() {
    let size = 16;
    let g = Geometry::parallel(size, 24);
    let mut r = rng(6);
    let truth = random_image(size, size, &mut r).map(f64::abs);
    let mut sino = forward_project(&truth, &g).unwrap();
    let noise = random_image(g.n_views, g.n_detectors, &mut r).scale(0.01);
    sino.data = sino.data.add(&noise).unwrap();
    let oracle = least_squares_oracle(&sino, size);
    let p = TvParams {
        lambda: 0.0,
        rho: 1e-3,
        outer_iters: 20,
        cg_iters: 256,
        ..TvParams::default()
    };
    let (x, _) = admm_tv_reconstruct(&sino, size, &p, None).unwrap();
    let residual = |img: &Image| forward_project(img, &g).unwrap().data.sub(&sino.data).unwrap().norm();
    let (rx, ro) = (residual(&x), residual(&oracle));
    let res_gap = (rx - ro).abs() / ro;
    let sol_gap = x.sub(&oracle).unwrap().norm() / oracle.norm();

    let mu = rasterize_phantom(&Phantom::shepp_logan(0.2), 128).unwrap();
    let g = Geometry::parallel(128, 180);
    let noisy = inject_low_dose_noise(&forward_project(&mu, &g).unwrap(), 1e4, 7).unwrap();
    let p = TvParams {
        lambda: 0.02,
        rho: 3.0,
        outer_iters: 12,
        ..TvParams::default()
    };
    let (_, log) = admm_tv_reconstruct(&noisy, 128, &p, None).unwrap();
    let worst_rise = log
        .windows(2)
        .filter(|w| w[0].iteration >= 3)
        .map(|w| (w[1].total - w[0].total) / w[0].total.abs())
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = res_gap < 1e-4 && sol_gap < 1e-4 && worst_rise <= 1e-6;
    verdict(
        6,
        "MBIR descent",
        pass,
        &format!(
            "16x16 lambda=0: residual gap {res_gap:.2e}, solution gap {sol_gap:.2e}; 128x128: worst relative rise after it. 3 = {worst_rise:.2e} over {} its",
            log.len() - 1
        ),
    );
}

struct DeskRun {
    _dir: tempfile::TempDir,
    residual: TrainOutcome,
    direct: TrainOutcome,
    comparison: Comparison,
    elapsed: Duration,
}

fn direct_config(base: &Config) -> TrainingConfig {
    let mut c = base.clone();
    c.set("train.target", "direct");
    c.set("train.lowband", "bypass");
    TrainingConfig::from_config(&c).unwrap()
}

/// The full desk-scale experiment, shared by criteria 7 to 9.
fn desk_run() -> &'static DeskRun {
    static RUN: OnceLock<DeskRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let cfg = desk_config();
        let dir = tempfile::tempdir().unwrap();
        let manifest = synth_dataset(&SimConfig::from_config(&cfg).unwrap(), dir.path().join("data")).unwrap();
        let bank = FilterBank::maxflat();
        let res_cfg = TrainingConfig::from_config(&cfg).unwrap();
        let dir_cfg = direct_config(&cfg);
        let residual = train(&res_cfg, &manifest, &bank, Some(&dir.path().join("residual"))).unwrap();
        let direct = train(&dir_cfg, &manifest, &bank, Some(&dir.path().join("direct"))).unwrap();
        let (_, val) = res_cfg.split(manifest.len()).unwrap();
        let nets = [
            NetworkMethod { name: "direct", params: &direct.final_params, config: &dir_cfg },
            NetworkMethod { name: "residual", params: &residual.final_params, config: &res_cfg },
        ];
        let tv = TvParams::from_config(&cfg).unwrap();
        let comparison = compare_methods(&manifest, &val, &nets, &tv, &bank, Some(&dir.path().join("compare"))).unwrap();
        DeskRun {
            _dir: dir,
            residual,
            direct,
            comparison,
            elapsed: start.elapsed(),
        }
    })
}

#[test]
fn criterion_07_denoising_efficacy() {
    let run = desk_run();
    let last = run.residual.log.last().unwrap();
    let (base_psnr, base_nrmse) = run.residual.baseline;
    let gain = last.val_psnr_db - base_psnr;
    let pass = last.iteration == 500 && gain >= 1.0 && last.val_nrmse < base_nrmse;
    verdict(
        7,
        "desk-scale denoising efficacy",
        pass,
        &format!(
            "iteration {}: PSNR {:.3} dB vs noisy {:.3} dB (gain {gain:+.3} dB), NRMSE {:.4} vs {:.4}; shared run {:.0}s",
            last.iteration,
            last.val_psnr_db,
            base_psnr,
            last.val_nrmse,
            base_nrmse,
            run.elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_08_residual_vs_direct() {
    let run = desk_run();
    let (r, d) = (run.residual.log.last().unwrap(), run.direct.log.last().unwrap());
    let pass = r.iteration == 500 && d.iteration == 500 && r.val_nrmse <= d.val_nrmse;
    verdict(
        8,
        "residual vs direct convergence",
        pass,
        &format!(
            "validation NRMSE at iteration 500: residual {:.4}, direct {:.4}",
            r.val_nrmse, d.val_nrmse
        ),
    );
}

#[test]
fn criterion_09_method_table() {
    let run = desk_run();
    let reports = &run.comparison.reports;
    let names: Vec<&str> = reports.iter().map(|r| r.method.as_str()).collect();
    let psnr = |m: &str| reports.iter().find(|r| r.method == m).map(|r| r.average.psnr_db).unwrap_or(f64::NAN);
    let complete = names == ["noisy", "mbir_tv", "direct", "residual"] && reports.iter().all(|r| r.slice_count() > 0);
    let (noisy, tv, direct, residual) = (psnr("noisy"), psnr("mbir_tv"), psnr("direct"), psnr("residual"));
    let pass = complete && residual >= noisy && residual >= direct && tv > noisy;
    verdict(
        9,
        "desk-scale method table",
        pass,
        &format!("mean PSNR: noisy {noisy:.3}, MBIR-TV {tv:.3}, direct {direct:.3}, residual {residual:.3} dB"),
    );
}

fn files_under(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Synthesis, a short training run, denoising and evaluation into `root`.
fn short_pipeline(root: &Path) {
    let mut cfg = desk_config();
    for (k, v) in [("sim.phantoms", "3"), ("train.iterations", "12"), ("train.log_every", "4"), ("mbir.outer_iters", "3")] {
        cfg.set(k, v);
    }
    let manifest = synth_dataset(&SimConfig::from_config(&cfg).unwrap(), root.join("data")).unwrap();
    let bank = FilterBank::maxflat();
    let tc = TrainingConfig::from_config(&cfg).unwrap();
    let outcome = train(&tc, &manifest, &bank, Some(&root.join("run"))).unwrap();
    let (q, _) = manifest.load_pair(2).unwrap();
    save_image(root.join("denoised.wimg"), &denoise(&q, &outcome.final_params, &tc, &bank).unwrap()).unwrap();
    let nets = [NetworkMethod { name: "residual", params: &outcome.final_params, config: &tc }];
    compare_methods(&manifest, &[2], &nets, &TvParams::from_config(&cfg).unwrap(), &bank, Some(&root.join("eval"))).unwrap();
}

#[test]
fn criterion_10_determinism_and_formats() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    short_pipeline(a.path());
    short_pipeline(b.path());
    let files = files_under(a.path());
    let same_listing = files == files_under(b.path());
    let differing: Vec<String> = files
        .iter()
        .filter(|f| std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).unwrap())
        .map(|f| f.display().to_string())
        .collect();
    let kinds = ["wrn1", "csv", "wimg"]
        .iter()
        .all(|ext| files.iter().any(|f| f.extension().is_some_and(|e| e == *ext)));

    let mut r = rng(10);
    let mut values: Vec<f64> = (0..61).map(|_| r.random_range(-1e6..1e6)).collect();
    values.extend([0.0, -0.0, f64::MIN_POSITIVE, -f64::MIN_POSITIVE, 5e-324, f64::MAX, f64::MIN, f64::EPSILON]);
    let img = MultiImage::from_vec(23, 3, 1, values).unwrap();
    let decoded = decode_wimg(&encode_wimg(&img)).unwrap();
    let image_exact = decoded.data().iter().zip(img.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    let path = a.path().join("roundtrip.wimg");
    let single = Image::from_fn(7, 5, |i, j| (i as f64 - 3.0) * 0.1 + j as f64 * -1e-300);
    save_image(&path, &single).unwrap();
    let file_exact = load_image(&path).unwrap() == single;

    let params = wavresnet::net::load_checkpoint(a.path().join("run/final.wrn1")).unwrap();
    let bytes = encode_checkpoint(&params);
    let on_disk = std::fs::read(a.path().join("run/final.wrn1")).unwrap();
    let ckpt_exact = bytes == on_disk
        && decode_checkpoint(&bytes).is_ok_and(|p| encode_checkpoint(&p) == bytes);
    let mut caught = 0;
    let probes: Vec<usize> = (0..200).map(|_| r.random_range(0..bytes.len())).collect();
    for &i in &probes {
        let mut bad = bytes.clone();
        bad[i] ^= 1 << r.random_range(0..8);
        if decode_checkpoint(&bad).is_err() {
            caught += 1;
        }
    }
    let pass = same_listing && differing.is_empty() && kinds && image_exact && file_exact && ckpt_exact && caught == probes.len();
    verdict(
        10,
        "determinism and formats",
        pass,
        &format!(
            "{} files compared, {} differ; WIMG roundtrip exact: {}; checkpoint roundtrip exact: {ckpt_exact}; flipped bytes caught {caught}/{}",
            files.len(),
            differing.len(),
            image_exact && file_exact,
            probes.len()
        ),
    );
}
