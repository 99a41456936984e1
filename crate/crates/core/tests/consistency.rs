use lrtnet::beta_model::{bn_cn, fit_restricted, simulate_graph};
use lrtnet::rng::replicate_rng;
use lrtnet::{FitOptions, NullHypothesis};
use rayon::prelude::*;

// Restricted fits under a true specified null stay inside the consistency radius.
#[test]
fn restricted_estimate_error_is_within_radius() {
    let n = 200;
    let beta = vec![0.0; n];
    let null = NullHypothesis::Specified { r: 10, values: vec![0.0; 10] };
    let radius = bn_cn(&beta).consistency_radius;
    let inside: usize = (0..200u64)
        .into_par_iter()
        .map(|rep| {
            let mut rng = replicate_rng(7, rep);
            let g = simulate_graph(&beta, &mut rng).unwrap();
            let fit = fit_restricted(&g, &null, &FitOptions::default()).unwrap();
            assert!(fit.exists);
            let err = fit.beta_hat.iter().fold(0.0f64, |m, b| m.max(b.abs()));
            usize::from(err <= radius)
        })
        .sum();
    assert!(inside >= 196, "{inside} of 200 inside radius {radius}");
}
