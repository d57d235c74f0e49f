use super::*;
use crate::grid::AxisSpec;
use crate::parametrix::ConvolutionScheme;
use crate::proxy::frozen_density;
use crate::simulate::McConfig;
use crate::test_support::drift_taylor_term;

fn small_scheme() -> ConvolutionScheme {
    ConvolutionScheme {
        time_nodes: 8,
        space_nodes: 5,
        covariance_order: 4,
        ..ConvolutionScheme::default()
    }
}

fn series_config() -> MethodConfig {
    MethodConfig {
        scheme: small_scheme(),
        ..MethodConfig::default()
    }
}

fn small_grid() -> GridSpec {
    GridSpec::new(
        AxisSpec {
            min: -1.0,
            max: 1.0,
            points: 3,
        },
        AxisSpec {
            min: -0.5,
            max: 0.5,
            points: 3,
        },
    )
}

fn origin() -> PhasePoint {
    PhasePoint::scalar(0.0, 0.0)
}

fn unit() -> CoefficientField {
    CoefficientField::constant(vec![0.0], 1.0).unwrap()
}

fn sampling() -> NormSampling {
    NormSampling {
        n_pairs: 2000,
        box_radius: 3.0,
        resolution: 41,
        seed: 1,
    }
}

#[test]
fn zero_perturbation_cancels_exactly() {
    let family = PerturbationFamily::DriftBump {
        amplitude: 1.0,
        center: origin(),
        width: 1.0,
        direction: vec![1.0],
    };
    let base = CoefficientField::constant(vec![0.3], 1.2).unwrap();
    let pair = PerturbationPair::new(base.clone(), family.apply(&base, 0.0).unwrap(), 0.0, QIndex::Infinite).unwrap();
    let g = &density_difference(&pair, 1.0, &origin(), &small_grid(), &series_config()).unwrap()[0];
    assert!(g.diff.iter().all(|v| *v == 0.0));
    assert!(g.base.iter().all(|v| *v > 0.0));
}

#[test]
fn drift_shift_matches_closed_form_difference() {
    // σ = 1: b = 0 is exact at every rank; b = ε truncated at rank 2 is the
    // quadratic Taylor polynomial of the shifted Gaussian in ε.
    let eps = 0.05;
    let base = unit();
    let perturbed = CoefficientField::constant(vec![eps], 1.0).unwrap();
    let pair = PerturbationPair::new(base.clone(), perturbed, eps, QIndex::Infinite).unwrap();
    let grid = small_grid();
    let g = &density_difference(&pair, 1.0, &origin(), &grid, &series_config()).unwrap()[0];
    for (k, to) in grid.points(1).unwrap().iter().enumerate() {
        let p0 = frozen_density(&base, 1.0, &origin(), to).unwrap();
        let p1: f64 = (0..=2).map(|r| drift_taylor_term(eps, 1.0, &origin(), to, r)).sum();
        assert!(
            (g.signed[k] - (p0 - p1)).abs() < 1e-10,
            "{k}: {} vs {}",
            g.signed[k],
            p0 - p1
        );
        let shifted = PhasePoint::scalar(to.x()[0] - eps, to.y()[0] - eps / 2.0);
        let exact = frozen_density(&base, 1.0, &origin(), &shifted).unwrap();
        assert!((g.signed[k] - (p0 - exact)).abs() < 1e-4 * p0);
    }
}

#[test]
fn mixed_methods_are_rejected() {
    let f = unit();
    let points = small_grid().points(1).unwrap();
    let refs = shared_references(&f, &small_scheme(), &points).unwrap();
    let s = series_density_field(&f, 1.0, &origin(), &points, 1, &small_scheme(), refs).unwrap();
    let mc = McConfig {
        n_paths: 200,
        n_steps: 4,
        ..McConfig::default()
    };
    let m = mc_density_field(&f, 1.0, &origin(), &points, &mc, None).unwrap();
    assert!(matches!(difference(&s, &m), Err(Error::MethodMismatch(_))));

    let other = vec![vec![2.0]; points.len()];
    let s2 = series_density_field(&f, 1.0, &origin(), &points, 1, &small_scheme(), other).unwrap();
    assert!(matches!(difference(&s, &s2), Err(Error::MethodMismatch(_))));

    let m2 = mc_density_field(&f, 1.0, &origin(), &points, &mc, None).unwrap();
    assert!(difference(&m, &m2).unwrap().diff.iter().all(|v| *v == 0.0));
}

#[test]
fn monte_carlo_zero_perturbation_has_zero_band() {
    let base = unit();
    let pair = PerturbationPair::new(base.clone(), base, 0.0, QIndex::Infinite).unwrap();
    let config = MethodConfig {
        method: Method::MonteCarlo,
        monte_carlo: McConfig {
            n_paths: 500,
            n_steps: 10,
            ..McConfig::default()
        },
        ..MethodConfig::default()
    };
    let g = &density_difference(&pair, 1.0, &origin(), &small_grid(), &config).unwrap()[0];
    assert!(g.diff.iter().chain(&g.band).all(|v| *v == 0.0));
}

fn inputs(norms: PerturbationNorms, diff: Vec<f64>) -> RatioInputs {
    let n = diff.len();
    RatioInputs {
        t: 1.0,
        from: origin(),
        grid: small_grid(),
        norms,
        differences: vec![DifferenceGrid {
            method: Method::Series,
            base: vec![1.0; n],
            perturbed: vec![1.0; n],
            signed: diff.clone(),
            diff,
            band: vec![0.0; n],
        }],
        c_used: 0.5,
        threshold: DEFAULT_THRESHOLD,
        config: series_config(),
    }
}

#[test]
fn ratio_rejects_zero_norm() {
    let err = stability_ratio(inputs(PerturbationNorms::zero(QIndex::Infinite), vec![0.0; 9]));
    assert!(matches!(
        err,
        Err(Error::InvalidArgument {
            name: "delta_total",
            ..
        })
    ));
}

#[test]
fn c_empirical_is_the_grid_maximum() {
    let diff: Vec<f64> = (0..9).map(|k| 0.01 * (k as f64 + 1.0)).collect();
    let norms = PerturbationNorms::new(0.1, 0.0, 0.0, QIndex::Infinite);
    let r = stability_ratio(inputs(norms, diff.clone())).unwrap();
    let m = &r.results[0];
    let max = m.ratio.iter().flatten().copied().fold(f64::MIN, f64::max);
    assert_eq!(m.c_empirical, max);
    assert_eq!(r.c_empirical, max);
    for (k, to) in small_grid().points(1).unwrap().iter().enumerate() {
        let p = proxy_density_raw(0.5, 1.0, &[0.0], &[0.0], to.x(), to.y());
        assert_eq!(m.ratio[k], Some(diff[k] / (0.1 * p)));
    }
}

#[test]
fn ratio_skips_nodes_below_threshold() {
    let norms = PerturbationNorms::new(0.1, 0.0, 0.0, QIndex::Infinite);
    let mut i = inputs(norms, vec![1.0; 9]);
    i.threshold = 0.1;
    let r = stability_ratio(i).unwrap();
    let m = &r.results[0];
    assert!(m.ratio.iter().any(|v| v.is_none()));
    for (ratio, proxy) in m.ratio.iter().zip(&m.proxy) {
        assert_eq!(ratio.is_some(), *proxy >= 0.1);
    }
}

#[test]
fn swapping_fields_preserves_diff_and_norm() {
    let base = unit();
    let family = PerturbationFamily::SigmaShift { amplitude: 1.0 };
    let pair = PerturbationPair::new(base.clone(), family.apply(&base, 0.1).unwrap(), 0.1, QIndex::Infinite).unwrap();
    let mut config = series_config();
    config.order = 1;
    config.scheme.reference = Some(vec![1.1]);
    let a = &density_difference(&pair, 1.0, &origin(), &small_grid(), &config).unwrap()[0];
    let b = &density_difference(&pair.swapped(), 1.0, &origin(), &small_grid(), &config).unwrap()[0];
    assert_eq!(a.diff, b.diff);
    let na = perturbation_norms(&pair, &sampling()).unwrap();
    let nb = perturbation_norms(&pair.swapped(), &sampling()).unwrap();
    assert_eq!(na.delta_total, nb.delta_total);
}

#[test]
fn slope_of_power_law() {
    let xs = [0.01, 0.02, 0.05, 0.1];
    let ys: Vec<f64> = xs.iter().map(|x| 3.0 * x * x).collect();
    assert!((log_log_slope(&xs, &ys).unwrap() - 2.0).abs() < 1e-12);
    assert_eq!(log_log_slope(&[1.0], &[1.0]), None);
}

#[test]
fn drift_bump_sweep_is_linear() {
    let run = StabilityRun {
        base: unit(),
        family: PerturbationFamily::DriftBump {
            amplitude: 1.0,
            center: origin(),
            width: 1.0,
            direction: vec![1.0],
        },
        epsilon: 0.05,
        q: QIndex::Infinite,
        sweep: vec![0.02, 0.05, 0.1],
        t: 1.0,
        from: origin(),
        grid: small_grid(),
        config: series_config(),
        sampling: sampling(),
        proxy: ProxyChoice::Calibrated,
        threshold: DEFAULT_THRESHOLD,
    };
    let r = run_stability(&run).unwrap();
    assert_eq!(r.epsilon_sweep.len(), 3);
    let cal = r.calibration.as_ref().unwrap();
    assert_eq!(r.c_used, cal.c_used);
    let s = &r.sweep_summary[0];
    assert!((s.slope.unwrap() - 1.0).abs() < 0.1, "{s:?}");
    assert!(s.spread.unwrap() < 0.15, "{s:?}");
    let csv = r.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 10);
    assert!(csv.starts_with("method,x,y,base,perturbed,diff,band,proxy,ratio\n"));
    let back: StabilityReport = serde_json::from_str(&r.to_json().unwrap()).unwrap();
    assert_eq!(back, r);
}

#[test]
fn run_rejects_invalid_q() {
    let run = StabilityRun {
        base: unit(),
        family: PerturbationFamily::SigmaShift { amplitude: 1.0 },
        epsilon: 0.05,
        q: QIndex::Finite(2.0),
        sweep: vec![],
        t: 1.0,
        from: origin(),
        grid: small_grid(),
        config: series_config(),
        sampling: sampling(),
        proxy: ProxyChoice::Fixed { c_used: 0.5 },
        threshold: DEFAULT_THRESHOLD,
    };
    assert!(run_stability(&run).is_err());
}
