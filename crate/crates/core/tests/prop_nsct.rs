use proptest::prelude::*;
use wavresnet::nsct::{load_coeffs, nsct_forward, nsct_inverse, save_coeffs, DecompositionSpec, FilterBank};
use wavresnet::Image;

const N: usize = 32;

fn spec() -> DecompositionSpec {
    DecompositionSpec::new(vec![4, 2]).unwrap()
}

fn image() -> impl Strategy<Value = Image> {
    prop::collection::vec(-500.0f64..500.0, N * N).prop_map(|v| Image::from_vec(N, N, v).unwrap())
}

fn rel_err(a: &Image, b: &Image) -> f64 {
    a.sub(b).unwrap().norm() / b.norm().max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn perfect_reconstruction(x in image()) {
        let bank = FilterBank::maxflat();
        let back = nsct_inverse(&nsct_forward(&x, &spec(), &bank).unwrap(), &bank).unwrap();
        prop_assert!(rel_err(&back, &x) < 1e-10);
    }

    #[test]
    fn shift_invariance(x in image(), dr in -32isize..32, dc in -32isize..32) {
        let bank = FilterBank::maxflat();
        let shifted = nsct_forward(&x.circshift(dr, dc), &spec(), &bank).unwrap();
        let plain = nsct_forward(&x, &spec(), &bank).unwrap();
        for (s, p) in shifted.bands.iter().zip(&plain.bands) {
            prop_assert!(s.sub(&p.circshift(dr, dc)).unwrap().max_abs() <= 1e-9 * x.max_abs());
        }
    }

    #[test]
    fn transform_is_linear(x in image(), y in image(), a in -4.0f64..4.0) {
        let bank = FilterBank::maxflat();
        let mut combo = x.scale(a);
        combo.axpy(1.0, &y).unwrap();
        let lhs = nsct_forward(&combo, &spec(), &bank).unwrap();
        let rhs = nsct_forward(&x, &spec(), &bank).unwrap().scale(a)
            .add(&nsct_forward(&y, &spec(), &bank).unwrap()).unwrap();
        for (l, r) in lhs.bands.iter().zip(&rhs.bands) {
            prop_assert!(l.sub(r).unwrap().max_abs() <= 1e-9 * (1.0 + a.abs()) * 500.0);
        }
    }

    #[test]
    fn constants_only_reach_the_lowpass(c in -2000.0f64..2000.0) {
        let bank = FilterBank::maxflat();
        let stack = nsct_forward(&Image::filled(N, N, c), &spec(), &bank).unwrap();
        prop_assert!(stack.lowpass().sub(&Image::filled(N, N, c)).unwrap().max_abs() <= 1e-10 * c.abs().max(1.0));
        for band in &stack.bands[1..] {
            prop_assert!(band.max_abs() <= 1e-10 * c.abs().max(1.0));
        }
    }

    #[test]
    fn coefficient_files_roundtrip(x in image()) {
        let bank = FilterBank::maxflat();
        let stack = nsct_forward(&x, &spec(), &bank).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.wimg");
        save_coeffs(&path, &stack, &bank).unwrap();
        prop_assert_eq!(load_coeffs(&path, &bank).unwrap(), stack);
    }
}

proptest! {
    #[test]
    fn band_order_is_lowpass_then_fine_to_coarse(dirs in prop::collection::vec(prop::sample::select(vec![1usize, 2, 4, 8]), 1..5)) {
        let spec = DecompositionSpec::new(dirs.clone()).unwrap();
        prop_assert_eq!(spec.band_count(), 1 + dirs.iter().sum::<usize>());
        prop_assert_eq!(spec.band_label(0), None);
        let mut expected = Vec::new();
        for (level, &d) in dirs.iter().enumerate() {
            for k in 0..d {
                expected.push(Some((level + 1, k)));
            }
        }
        let labels: Vec<_> = (1..spec.band_count()).map(|i| spec.band_label(i)).collect();
        prop_assert_eq!(labels, expected);
        prop_assert_eq!(spec.band_label(spec.band_count()), None);
    }
}
