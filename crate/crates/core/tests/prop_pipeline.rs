use std::sync::OnceLock;

use proptest::prelude::*;
use tempfile::TempDir;
use wavresnet::config::Config;
use wavresnet::net::NetworkParams;
use wavresnet::nsct::FilterBank;
use wavresnet::pipeline::{
    build_training_set, convergence_to_csv, denoise, synth_dataset, train, training_pair, DatasetManifest, SimConfig,
    TrainingConfig, CONVERGENCE_CSV_HEADER,
};
use wavresnet::Image;

const SIZE: usize = 32;

fn config(seed: u64) -> Config {
    let mut c = Config::new();
    for (k, v) in [
        ("sim.size", SIZE.to_string()),
        ("sim.views", "60".into()),
        ("sim.phantoms", "3".into()),
        ("sim.i0_routine", "2000".into()),
        ("nsct.directions", "4,2".into()),
        ("net.width", "4".into()),
        ("net.modules", "2".into()),
        ("train.iterations", "6".into()),
        ("train.mini_batch", "2".into()),
        ("train.patch_size", "12".into()),
        ("train.patch_stride", "5".into()),
        ("train.log_every", "2".into()),
        ("train.momentum", "0.9".into()),
        ("train.seed", seed.to_string()),
    ] {
        c.set(k, v);
    }
    c
}

fn dataset() -> &'static (TempDir, DatasetManifest) {
    static DATA: OnceLock<(TempDir, DatasetManifest)> = OnceLock::new();
    DATA.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let sim = SimConfig::from_config(&config(1)).unwrap();
        let manifest = synth_dataset(&sim, dir.path()).unwrap();
        (dir, manifest)
    })
}

fn window(stack: &wavresnet::MultiImage, r: usize, c: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; stack.channels() * p * p];
    stack.copy_window(r, c, p, &mut out);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(3))]

    #[test]
    fn training_is_deterministic_and_logs_in_order(seed in 1u64..1000) {
        let (_, manifest) = dataset();
        let cfg = TrainingConfig::from_config(&config(seed)).unwrap();
        let bank = FilterBank::maxflat();
        let a = train(&cfg, manifest, &bank, None).unwrap();
        let b = train(&cfg, manifest, &bank, None).unwrap();
        prop_assert_eq!(&a.final_params, &b.final_params);
        prop_assert_eq!(convergence_to_csv(&a.log), convergence_to_csv(&b.log));

        let csv = convergence_to_csv(&a.log);
        let mut lines = csv.lines();
        prop_assert_eq!(lines.next(), Some(CONVERGENCE_CSV_HEADER));
        let iters: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
        prop_assert!(iters.windows(2).all(|w| w[0] < w[1]), "{iters:?}");
        prop_assert_eq!(iters.last().copied(), Some(cfg.total_iterations));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn patches_align_with_their_labels(pick in any::<prop::sample::Index>()) {
        let (_, manifest) = dataset();
        let cfg = TrainingConfig::from_config(&config(1)).unwrap();
        let bank = FilterBank::maxflat();
        let set = build_training_set(manifest, &[0, 1], &cfg, &bank).unwrap();
        let i = pick.index(set.len());
        let (slice, r, c) = set.positions[i];
        let (routine, quarter) = manifest.load_pair([0, 1][slice]).unwrap();
        let (input, label) = training_pair(&routine, &quarter, &cfg, &bank).unwrap();
        let (x, y) = set.pair(i);
        prop_assert_eq!(x, window(&input, r, c, cfg.patch_size));
        prop_assert_eq!(y, window(&label, r, c, cfg.patch_size));
    }

    #[test]
    fn zero_network_residual_denoising_is_the_identity(values in prop::collection::vec(-1000.0f64..1000.0, SIZE * SIZE)) {
        let cfg = TrainingConfig::from_config(&config(1)).unwrap();
        let params = NetworkParams::zeros(&cfg.topology).unwrap();
        let x = Image::from_vec(SIZE, SIZE, values).unwrap();
        let y = denoise(&x, &params, &cfg, &FilterBank::maxflat()).unwrap();
        prop_assert!(y.sub(&x).unwrap().norm() <= 1e-10 * x.norm());
    }
}
