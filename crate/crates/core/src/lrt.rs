//! Likelihood-ratio statistics, reference distributions and p-values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use statrs::function::{erf, gamma};

use crate::beta_model::{self, ModelDiagnostics};
use crate::bt_model::{self, PairTotals};
use crate::data::{ComparisonTable, ModelKind, NullHypothesis, UndirectedGraph};
use crate::error::{Error, Result};
use crate::rng::replicate_rng;
use crate::solver::{Fit, FitOptions};

/// Whether the number of constrained parameters is held fixed or grows with `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Fixed,
    Growing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Reference {
    ChiSquare {
        df: u32,
    },
    /// `(2ΔL - r) / sqrt(2r)` against the standard normal upper tail.
    NormalizedGaussian,
    Bootstrap {
        #[serde(rename = "B")]
        b: usize,
    },
    None,
}

/// Which tail probability a growing-regime report leads with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrowingPValue {
    /// Chi-square with as many degrees of freedom as constraints; behaves
    /// better than the normal limit at moderate `n`.
    #[default]
    ChiSquare,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TestOptions {
    pub fit: FitOptions,
    pub growing_p_value: GrowingPValue,
    pub bootstrap_reps: usize,
    pub bootstrap_seed: u64,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            fit: FitOptions::default(),
            growing_p_value: GrowingPValue::default(),
            bootstrap_reps: 999,
            bootstrap_seed: 0,
        }
    }
}

/// Data for one test.
#[derive(Debug, Clone, Copy)]
pub enum Observations<'a> {
    Graph(&'a UndirectedGraph),
    Comparisons(&'a ComparisonTable),
}

impl Observations<'_> {
    pub fn model(&self) -> ModelKind {
        match self {
            Observations::Graph(_) => ModelKind::Beta,
            Observations::Comparisons(_) => ModelKind::BradleyTerry,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Observations::Graph(g) => g.n(),
            Observations::Comparisons(c) => c.n(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestDiagnostics {
    /// Number of free parameters removed by the null.
    pub constraint_count: usize,
    /// `(2ΔL - q) / sqrt(2q)` with `q` the constraint count.
    pub normalized_stat_by_constraints: f64,
    pub p_value_chi_square: Option<f64>,
    pub p_value_normal: Option<f64>,
    pub full_fit: Fit,
    pub null_fit: Fit,
    pub model_at_estimate: ModelDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub model: ModelKind,
    pub null: NullHypothesis,
    pub regime: Regime,
    pub stat: f64,
    pub reference: Reference,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub normalized_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub exists_full: bool,
    pub exists_null: bool,
    pub warnings: Vec<String>,
    pub diagnostics: TestDiagnostics,
}

/// Number of free parameters the null removes.
pub fn constraint_count(model: ModelKind, null: &NullHypothesis) -> usize {
    match (model, null) {
        (ModelKind::Beta, NullHypothesis::Specified { r, .. }) => *r,
        (ModelKind::Beta, NullHypothesis::Homogeneous { r }) => r.saturating_sub(1),
        (ModelKind::BradleyTerry, NullHypothesis::Specified { r, .. }) => r.saturating_sub(1),
        (ModelKind::BradleyTerry, NullHypothesis::Homogeneous { r }) => r.saturating_sub(2),
    }
}

/// `2 (l(full) - l(null))`, with tiny negative values from rounding set to zero.
pub fn lrt_statistic(full: &Fit, restricted: &Fit) -> Result<f64> {
    for (fit, which) in [(full, "full"), (restricted, "restricted")] {
        if !fit.exists {
            return Err(Error::Nonexistent(format!("{which} maximum likelihood estimate does not exist")));
        }
        if !fit.converged {
            return Err(Error::Numerical(format!(
                "{which} fit did not converge (gradient norm {:e})",
                fit.gradient_norm
            )));
        }
    }
    let stat = 2.0 * (full.loglik - restricted.loglik);
    if stat >= 0.0 {
        Ok(stat)
    } else if stat >= -1e-10 * full.loglik.abs().max(1.0) {
        Ok(0.0)
    } else {
        Err(Error::Numerical(format!("restricted fit beats the full fit: 2ΔL = {stat:e}")))
    }
}

/// Reference law for the statistic.
pub fn reference_distribution(model: ModelKind, null: &NullHypothesis, regime: Regime) -> Result<Reference> {
    let r = null.r();
    if r == 0 {
        return Err(Error::invalid("r = 0 leaves nothing to test"));
    }
    Ok(match (model, null, regime) {
        (_, _, Regime::Growing) => Reference::NormalizedGaussian,
        (ModelKind::Beta, NullHypothesis::Specified { .. }, Regime::Fixed) => Reference::ChiSquare { df: r as u32 },
        (ModelKind::Beta, NullHypothesis::Homogeneous { .. }, Regime::Fixed) => {
            if r < 2 {
                return Err(Error::invalid("a homogeneous null needs r >= 2 to constrain anything"));
            }
            Reference::ChiSquare { df: (r - 1) as u32 }
        }
        (ModelKind::BradleyTerry, NullHypothesis::Homogeneous { .. }, Regime::Fixed) => {
            if r <= 2 {
                return Err(Error::invalid("Bradley-Terry homogeneous null in the fixed regime needs r > 2"));
            }
            Reference::ChiSquare { df: (r - 2) as u32 }
        }
        (ModelKind::BradleyTerry, NullHypothesis::Specified { .. }, Regime::Fixed) => Reference::Bootstrap { b: 999 },
    })
}

/// `P(χ²_df <= x)`.
pub fn chi_square_cdf(x: f64, df: u32) -> Result<f64> {
    check_chi_square(x, df)?;
    Ok(if x == 0.0 { 0.0 } else { gamma::gamma_lr(f64::from(df) / 2.0, x / 2.0) })
}

/// `P(χ²_df > x)`, computed directly rather than as `1 - cdf` to keep small tails.
pub fn chi_square_sf(x: f64, df: u32) -> Result<f64> {
    check_chi_square(x, df)?;
    Ok(if x == 0.0 { 1.0 } else { gamma::gamma_ur(f64::from(df) / 2.0, x / 2.0) })
}

fn check_chi_square(x: f64, df: u32) -> Result<()> {
    if df == 0 {
        return Err(Error::invalid("chi-square needs df >= 1"));
    }
    if x.is_nan() || x < 0.0 {
        return Err(Error::invalid(format!("chi-square argument must be nonnegative, got {x}")));
    }
    Ok(())
}

pub fn chi_square_quantile(p: f64, df: u32) -> Result<f64> {
    let dist = ChiSquared::new(f64::from(df)).map_err(|e| Error::invalid(e.to_string()))?;
    Ok(dist.inverse_cdf(p))
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Full and restricted fits with the resulting statistic.
#[derive(Debug, Clone, PartialEq)]
pub struct StatisticOutcome {
    pub stat: f64,
    pub full: Fit,
    pub restricted: Fit,
}

fn fit_pair(data: Observations<'_>, null: &NullHypothesis, opts: &FitOptions) -> Result<(Fit, Fit)> {
    Ok(match data {
        Observations::Graph(g) => (beta_model::fit_mle(g, opts), beta_model::fit_restricted(g, null, opts)?),
        Observations::Comparisons(c) => (bt_model::bt_fit_mle(c, opts), bt_model::bt_fit_restricted(c, null, opts)?),
    })
}

/// Fits both models and forms the statistic, without any reference law.
pub fn compute_statistic(data: Observations<'_>, null: &NullHypothesis, opts: &FitOptions) -> Result<StatisticOutcome> {
    null.validate(data.model(), data.n())?;
    let (full, restricted) = fit_pair(data, null, opts)?;
    let stat = lrt_statistic(&full, &restricted)?;
    Ok(StatisticOutcome { stat, full, restricted })
}

/// Parametric bootstrap p-value for a Bradley–Terry specified null.
///
/// Tables are redrawn from the restricted fit with the observed pair totals.
/// Replicates whose estimates do not exist are dropped; fewer than half
/// surviving is an error.
pub fn bootstrap_pvalue(
    data: &ComparisonTable,
    null: &NullHypothesis,
    reps: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<f64> {
    if !matches!(null, NullHypothesis::Specified { .. }) {
        return Err(Error::invalid("the bootstrap reference is for specified nulls"));
    }
    if reps == 0 {
        return Err(Error::invalid("bootstrap needs at least one replicate"));
    }
    let observed = compute_statistic(Observations::Comparisons(data), null, opts)?;
    bootstrap_from(data, null, &observed, reps, seed, opts)
}

fn bootstrap_from(
    data: &ComparisonTable,
    null: &NullHypothesis,
    observed: &StatisticOutcome,
    reps: usize,
    seed: u64,
    opts: &FitOptions,
) -> Result<f64> {
    let totals = PairTotals::Matrix(data.totals());
    let beta0 = &observed.restricted.beta_hat;
    let stats: Vec<Option<f64>> = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = replicate_rng(seed, b as u64);
            let table = bt_model::simulate_comparisons(beta0, &totals, &mut rng).ok()?;
            compute_statistic(Observations::Comparisons(&table), null, opts).ok().map(|o| o.stat)
        })
        .collect();
    let used: Vec<f64> = stats.into_iter().flatten().collect();
    if used.len() * 2 < reps {
        return Err(Error::Nonexistent(format!(
            "only {} of {reps} bootstrap replicates had existing estimates",
            used.len()
        )));
    }
    let at_least = used.iter().filter(|&&s| s >= observed.stat).count();
    Ok((1 + at_least) as f64 / (used.len() + 1) as f64)
}

/// Fits, forms the statistic and attaches the reference law and p-value.
pub fn run_test(
    data: Observations<'_>,
    null: &NullHypothesis,
    regime: Regime,
    opts: &TestOptions,
) -> Result<TestReport> {
    let model = data.model();
    let n = data.n();
    null.validate(model, n)?;
    let mut reference = reference_distribution(model, null, regime)?;
    let outcome = compute_statistic(data, null, &opts.fit)?;
    let stat = outcome.stat;
    let r = null.r();
    let q = constraint_count(model, null);
    let mut warnings = Vec::new();

    let normalized = (stat - r as f64) / (2.0 * r as f64).sqrt();
    let by_constraints = if q > 0 { (stat - q as f64) / (2.0 * q as f64).sqrt() } else { f64::NAN };
    let p_chi = if q > 0 { Some(chi_square_sf(stat, q as u32)?) } else { None };
    let mut p_normal = None;
    let mut normalized_stat = None;

    let p_value = match reference {
        Reference::ChiSquare { df } => Some(chi_square_sf(stat, df)?),
        Reference::NormalizedGaussian => {
            let log_n = (n as f64).ln();
            if (r as f64) < log_n * log_n {
                warnings.push(format!(
                    "r = {r} is below (log n)^2 = {:.1}; the growing-dimension limit may be poor",
                    log_n * log_n
                ));
            }
            normalized_stat = Some(normalized);
            p_normal = Some(1.0 - normal_cdf(normalized));
            match (opts.growing_p_value, q) {
                (GrowingPValue::ChiSquare, q) if q > 0 => {
                    reference = Reference::ChiSquare { df: q as u32 };
                    p_chi
                }
                _ => p_normal,
            }
        }
        Reference::Bootstrap { .. } => {
            warnings.push(
                "no chi-square limit for a fixed-dimension specified Bradley-Terry null; using a parametric bootstrap"
                    .to_string(),
            );
            let Observations::Comparisons(table) = data else {
                unreachable!("bootstrap dispatch is Bradley-Terry only")
            };
            reference = Reference::Bootstrap { b: opts.bootstrap_reps };
            Some(bootstrap_from(table, null, &outcome, opts.bootstrap_reps, opts.bootstrap_seed, &opts.fit)?)
        }
        Reference::None => None,
    };

    let model_at_estimate = match model {
        ModelKind::Beta => beta_model::bn_cn(&outcome.full.beta_hat),
        ModelKind::BradleyTerry => bt_model::bt_bn_cn(&outcome.full.beta_hat),
    };
    Ok(TestReport {
        model,
        null: null.clone(),
        regime,
        stat,
        reference,
        normalized_stat,
        p_value,
        exists_full: outcome.full.exists,
        exists_null: outcome.restricted.exists,
        warnings,
        diagnostics: TestDiagnostics {
            constraint_count: q,
            normalized_stat_by_constraints: by_constraints,
            p_value_chi_square: p_chi,
            p_value_normal: p_normal,
            full_fit: outcome.full,
            null_fit: outcome.restricted,
            model_at_estimate,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bt_model::simulate_comparisons;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn chi_square_closed_forms() {
        assert!((chi_square_cdf(2.0 * 2f64.ln(), 2).unwrap() - 0.5).abs() < 1e-14);
        assert_eq!(chi_square_cdf(0.0, 4).unwrap(), 0.0);
        assert!((chi_square_cdf(3.841459, 1).unwrap() - 0.95).abs() < 1e-6);
        for k in 0..=500 {
            let x = k as f64 * 0.1;
            assert!((chi_square_cdf(x, 2).unwrap() - (1.0 - (-x / 2.0).exp())).abs() < 1e-12);
            let one = 2.0 * normal_cdf(x.sqrt()) - 1.0;
            assert!((chi_square_cdf(x, 1).unwrap() - one).abs() < 1e-10);
        }
        assert!(chi_square_cdf(-1.0, 3).is_err());
        assert!(chi_square_cdf(1.0, 0).is_err());
    }

    #[test]
    fn chi_square_tail_complements_cdf() {
        for df in [1u32, 3, 10, 100, 500] {
            for x in [0.5, 5.0, 50.0, 400.0, 2000.0] {
                let s = chi_square_cdf(x, df).unwrap() + chi_square_sf(x, df).unwrap();
                assert!((s - 1.0).abs() < 1e-10, "df={df} x={x}");
            }
        }
        assert!((chi_square_quantile(0.95, 1).unwrap() - 3.841458820694124).abs() < 1e-8);
    }

    #[test]
    fn normal_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(1.959964) - 0.975).abs() < 1e-6);
        for z in [-5.0, -1.3, 0.2, 2.7, 8.0] {
            assert!((normal_cdf(z) + normal_cdf(-z) - 1.0).abs() < 1e-15);
        }
        assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-9);
    }

    fn spec(r: usize) -> NullHypothesis {
        NullHypothesis::Specified { r, values: vec![0.0; r] }
    }

    #[test]
    fn dispatch_table() {
        use ModelKind::*;
        let homo = |r| NullHypothesis::Homogeneous { r };
        let bt_spec = |r: usize| NullHypothesis::Specified { r, values: vec![0.0; r - 1] };
        let cases = [
            (Beta, spec(3), Regime::Fixed, Reference::ChiSquare { df: 3 }),
            (Beta, homo(4), Regime::Fixed, Reference::ChiSquare { df: 3 }),
            (Beta, spec(50), Regime::Growing, Reference::NormalizedGaussian),
            (Beta, homo(50), Regime::Growing, Reference::NormalizedGaussian),
            (BradleyTerry, homo(5), Regime::Fixed, Reference::ChiSquare { df: 3 }),
            (BradleyTerry, bt_spec(3), Regime::Fixed, Reference::Bootstrap { b: 999 }),
            (BradleyTerry, bt_spec(30), Regime::Growing, Reference::NormalizedGaussian),
            (BradleyTerry, homo(30), Regime::Growing, Reference::NormalizedGaussian),
        ];
        for (model, null, regime, expected) in cases {
            assert_eq!(reference_distribution(model, &null, regime).unwrap(), expected, "{model} {null:?}");
        }
        assert!(reference_distribution(BradleyTerry, &homo(2), Regime::Fixed).is_err());
        assert!(reference_distribution(Beta, &homo(0), Regime::Fixed).is_err());
    }

    #[test]
    fn reference_json_shape() {
        let j = serde_json::to_string(&Reference::ChiSquare { df: 2 }).unwrap();
        assert_eq!(j, r#"{"type":"chi_square","df":2}"#);
        let j = serde_json::to_string(&Reference::Bootstrap { b: 999 }).unwrap();
        assert_eq!(j, r#"{"type":"bootstrap","B":999}"#);
    }

    #[test]
    fn statistic_is_zero_at_the_estimate() {
        let beta: Vec<f64> = (0..20).map(|i| 0.05 * i as f64 - 0.5).collect();
        let g = beta_model::simulate_graph(&beta, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let opts = FitOptions::default();
        let full = beta_model::fit_mle(&g, &opts);
        let null = NullHypothesis::Specified { r: 20, values: full.beta_hat.clone() };
        let out = compute_statistic(Observations::Graph(&g), &null, &opts).unwrap();
        assert!(out.stat.abs() < 1e-10);
    }

    #[test]
    fn nonexistent_fit_is_an_error() {
        let g = UndirectedGraph::from_fn(4, |_, _| true).unwrap();
        let err = compute_statistic(Observations::Graph(&g), &spec(2), &FitOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Nonexistent(_)));
    }

    #[test]
    fn homogeneous_fixed_report() {
        let beta: Vec<f64> = (0..40).map(|i| if i < 3 { 0.0 } else { 0.01 * i as f64 }).collect();
        let g = beta_model::simulate_graph(&beta, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let null = NullHypothesis::Homogeneous { r: 3 };
        let rep = run_test(Observations::Graph(&g), &null, Regime::Fixed, &TestOptions::default()).unwrap();
        assert_eq!(rep.reference, Reference::ChiSquare { df: 2 });
        assert_eq!(rep.p_value.unwrap(), chi_square_sf(rep.stat, 2).unwrap());
        assert!(rep.normalized_stat.is_none());
        let json = serde_json::to_value(&rep).unwrap();
        assert_eq!(json["null"]["kind"], "homogeneous");
        assert_eq!(json["reference"]["df"], 2);
    }

    #[test]
    fn growing_report_carries_both_p_values() {
        let beta = vec![0.0; 60];
        let g = beta_model::simulate_graph(&beta, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let null = spec(60);
        let rep = run_test(Observations::Graph(&g), &null, Regime::Growing, &TestOptions::default()).unwrap();
        assert_eq!(rep.reference, Reference::ChiSquare { df: 60 });
        let z = rep.normalized_stat.unwrap();
        assert!((z - (rep.stat - 60.0) / 120f64.sqrt()).abs() < 1e-12);
        assert_eq!(rep.diagnostics.p_value_normal, Some(1.0 - normal_cdf(z)));

        let opts = TestOptions { growing_p_value: GrowingPValue::Normal, ..TestOptions::default() };
        let rep = run_test(Observations::Graph(&g), &null, Regime::Growing, &opts).unwrap();
        assert_eq!(rep.reference, Reference::NormalizedGaussian);
        assert_eq!(rep.p_value, Some(1.0 - normal_cdf(z)));
        assert!(rep.warnings.is_empty());
    }

    #[test]
    fn small_growing_r_warns() {
        let g = beta_model::simulate_graph(&[0.0; 50], &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let rep = run_test(Observations::Graph(&g), &spec(5), Regime::Growing, &TestOptions::default()).unwrap();
        assert_eq!(rep.warnings.len(), 1);
    }

    #[test]
    fn bootstrap_is_deterministic_and_bounded() {
        let beta: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let t = simulate_comparisons(&beta, &PairTotals::Constant(3), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let null = NullHypothesis::Specified { r: 3, values: vec![0.1, 0.2] };
        let opts = FitOptions::default();
        let a = bootstrap_pvalue(&t, &null, 99, 4, &opts).unwrap();
        let b = bootstrap_pvalue(&t, &null, 99, 4, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a > 0.0 && a <= 1.0);
    }

    #[test]
    fn bootstrap_at_zero_statistic_is_one() {
        let beta: Vec<f64> = (0..8).map(|i| 0.1 * i as f64).collect();
        let t = simulate_comparisons(&beta, &PairTotals::Constant(3), &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
        let opts = FitOptions::default();
        let full = bt_model::bt_fit_mle(&t, &opts);
        let null = NullHypothesis::Specified { r: 3, values: full.beta_hat[1..3].to_vec() };
        assert_eq!(bootstrap_pvalue(&t, &null, 49, 1, &opts).unwrap(), 1.0);
    }
}
