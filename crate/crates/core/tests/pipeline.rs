//! Cross-module pipeline through the public API: draw a batch, certify the
//! level-set field, estimate the surface density both ways, compare against
//! the co-area oracle, and round-trip the batch through its binary format.

use surfmc_core::calculus::{CylFunction, OperatorContext};
use surfmc_core::surface::{self, LevelKind, LevelValues};
use surfmc_core::{oracle, ProductLaw, SampleBatch, ShardLayout};

#[test]
fn certify_estimate_and_cross_check_pipeline() {
    // Gaussian product in three dimensions so every route is available.
    let variances = vec![1.0, 0.6, 0.3];
    let plaw = ProductLaw::new(1, variances.clone()).unwrap();
    let ctx = OperatorContext::new(plaw.clone());
    let batch = plaw.sample(300_000, 2718, ShardLayout::default()).unwrap();

    // Certify the hyperplane field against the adjoint battery.
    let b = vec![1.0, -0.5, 0.25];
    let mut lf = surface::LevelFunction::hyperplane(&ctx, b.clone()).unwrap();
    let checks = lf.validate(&batch, 4.0, 0.05).unwrap();
    assert!(checks.iter().all(|c| c.pass), "{checks:#?}");

    // Density by both estimators at the median level.
    let levels = LevelValues::new(&lf, &batch);
    let r = levels.median();
    let one = CylFunction::constant(3, 1.0);
    let dv = surface::q_divergence(&lf, &one, r, &batch).unwrap();
    let h = levels.auto_bandwidth(r, 500).unwrap();
    let fd = surface::q_smoothed_fd(&lf, &one, r, &batch, h).unwrap();
    let combined = (dv.std_error.powi(2) + fd.std_error.powi(2)).sqrt();
    assert!((dv.value - fd.value).abs() <= 4.0 * combined + 0.05 * h * h);

    // Both agree with the affine co-area value of the Gaussian case.
    let oracle_val =
        oracle::coarea_value(LevelKind::Hyperplane, &variances, 1.0, |_| 1.0, |_| 1.0, Some(&b), r)
            .unwrap();
    assert!(
        (dv.value - oracle_val).abs() <= 4.0 * dv.std_error,
        "{} vs {oracle_val}",
        dv.value
    );

    // Batch persists bit-exactly through the binary container.
    let mut buf = Vec::new();
    batch.write_binary(&mut buf).unwrap();
    let back = SampleBatch::read_binary(&mut buf.as_slice()).unwrap();
    assert_eq!(back, batch);
}
