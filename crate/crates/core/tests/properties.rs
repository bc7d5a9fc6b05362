//! Property tests for the structural invariants: persistence round-trips,
//! density normalization and symmetry, moment monotonicity, and the
//! norm-non-expansion of the Fejér mean.

use proptest::prelude::*;
use surfmc_core::fejer::{fejer_approximate, GridSamples};
use surfmc_core::measure::moment;
use surfmc_core::{OneDimLaw, ProductLaw, SampleBatch, ShardLayout};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn batch_binary_round_trip(
        m in 1u32..=4,
        dim in 1usize..=5,
        count in 1usize..=400,
        shard in 1usize..=64,
        seed in any::<u64>(),
    ) {
        let weights: Vec<f64> = (1..=dim).map(|h| 1.0 / h as f64).collect();
        let plaw = ProductLaw::new(m, weights).unwrap();
        let batch = plaw.sample(count, seed, ShardLayout::new(shard)).unwrap();
        let mut buf = Vec::new();
        batch.write_binary(&mut buf).unwrap();
        let back = SampleBatch::read_binary(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(&back, &batch);
        let mut buf2 = Vec::new();
        back.write_binary(&mut buf2).unwrap();
        prop_assert_eq!(buf, buf2);
    }

    #[test]
    fn density_is_even_positive_and_normalized(
        m in 1u32..=4,
        mu in 0.1f64..10.0,
        xi in -4.0f64..4.0,
    ) {
        let law = OneDimLaw::new(m, mu).unwrap();
        prop_assert!(law.density(xi) >= 0.0);
        prop_assert_eq!(law.density(xi), law.density(-xi));
        // strict positivity on the law's natural scale (the far tail of the
        // steep laws underflows f64, which is fine)
        let scaled = 0.55 * xi * mu.powf(0.5 / m as f64);
        prop_assert!(law.density(scaled) > 0.0);
        let mass = law.quadrature_moment(0);
        prop_assert!((mass - 1.0).abs() < 1e-10, "mass = {}", mass);
    }

    #[test]
    fn moments_are_monotone_in_the_scale(
        m in 1u32..=3,
        n_mom in 1u32..=3,
        mu in 0.2f64..5.0,
    ) {
        let lo = moment(m, mu, n_mom as f64);
        let hi = moment(m, mu * 1.5, n_mom as f64);
        prop_assert!(hi > lo);
        prop_assert_eq!(moment(m, mu, 0.0), 1.0);
    }

    #[test]
    fn fejer_mean_contracts_coefficients_and_sup_norm(
        c1 in -1.0f64..1.0,
        c3 in -1.0f64..1.0,
        c5 in -1.0f64..1.0,
        n_order in 4usize..40,
    ) {
        let t = 2.0 * std::f64::consts::PI;
        let f = move |x: &[f64]| c1 * x[0].cos() + c3 * (3.0 * x[0]).sin() + c5 * (5.0 * x[0]).cos();
        let samples = GridSamples::from_fn(1, t, 256, f);
        let poly = fejer_approximate(&samples, n_order).unwrap();
        // triangular multiplier never amplifies a coefficient
        for (k, amp) in [(1i32, c1.abs() / 2.0), (3, c3.abs() / 2.0), (5, c5.abs() / 2.0)] {
            let (re, im) = poly.coefficient(&[k]);
            let mag = (re * re + im * im).sqrt();
            prop_assert!(mag <= amp + 1e-9, "k={} mag={} amp={}", k, mag, amp);
        }
        // and never expands the sup norm
        let sup_f = (0..2048)
            .map(|g| f(&[t * g as f64 / 2048.0]).abs())
            .fold(0.0f64, f64::max);
        prop_assert!(poly.sup_norm_on_grid(1024) <= sup_f + 1e-9);
    }
}
