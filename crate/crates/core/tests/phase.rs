use scorth::phase::{
    bp_mse_at, bp_mse_routes, find_alpha_c, find_alpha_d, find_alpha_s, find_thresholds, fold_thresholds, maxima_at,
    scan_curve, sweep_csv, sweep_phase_diagram, GridOptions, PhaseOptions,
};
use scorth::{BernoulliGaussianPrior, CouplingSpec, EnsembleKind, Error};

const RHO: f64 = 0.4;

fn opts() -> PhaseOptions {
    PhaseOptions::default()
}

fn template(sigma2: f64) -> CouplingSpec {
    CouplingSpec::uncoupled(1.0, sigma2, BernoulliGaussianPrior::new(RHO).unwrap()).unwrap()
}

fn count(alpha: f64, sigma2: f64, kind: EnsembleKind, o: &PhaseOptions) -> usize {
    maxima_at(RHO, sigma2, alpha, kind, o).unwrap().len()
}

#[test]
fn window_edges_bracket_the_two_maxima_region() {
    for kind in EnsembleKind::ALL {
        let t = find_thresholds(RHO, 1e-4, kind, &opts()).unwrap();
        let (s, c, d) = (t.alpha_s.value, t.alpha_c.value, t.alpha_d.value);
        assert!(s < c && c < d, "{kind}: {s} {c} {d}");
        assert!(t.alpha_d.upper - t.alpha_d.lower <= 1e-5);
        assert_eq!(count(d - 1e-4, 1e-4, kind, &opts()), 2);
        assert_eq!(count(d + 1e-4, 1e-4, kind, &opts()), 1);
        assert_eq!(count(s + 1e-4, 1e-4, kind, &opts()), 2);
        assert_eq!(count(s - 1e-4, 1e-4, kind, &opts()), 1);
        // below the window the single maximum is the high-MSE one
        let low = maxima_at(RHO, 1e-4, s - 1e-3, kind, &opts()).unwrap();
        assert!(low[0].eps > 0.05);
        // the two maxima have equal height at α_c
        let at_c = maxima_at(RHO, 1e-4, c, kind, &opts()).unwrap();
        assert!((at_c[0].value - at_c[1].value).abs() <= 1e-6);
    }
}

#[test]
fn edges_agree_with_the_fold_curve() {
    for kind in EnsembleKind::ALL {
        for sigma2 in [1e-6, 1e-4, 1e-3] {
            let (fs, fd) = fold_thresholds(RHO, sigma2, kind, &GridOptions::default())
                .unwrap()
                .unwrap();
            let t = find_thresholds(RHO, sigma2, kind, &opts()).unwrap();
            assert!(
                (t.alpha_d.value - fd).abs() < 5e-5,
                "{kind} {sigma2}: {} vs {fd}",
                t.alpha_d.value
            );
            assert!(
                (t.alpha_s.value - fs).abs() < 5e-5,
                "{kind} {sigma2}: {} vs {fs}",
                t.alpha_s.value
            );
        }
    }
}

#[test]
fn single_edge_finders_match_the_joint_search() {
    let kind = EnsembleKind::RowOrthogonal;
    let t = find_thresholds(RHO, 1e-4, kind, &opts()).unwrap();
    assert_eq!(find_alpha_d(RHO, 1e-4, kind, &opts()).unwrap(), t.alpha_d.value);
    assert_eq!(find_alpha_s(RHO, 1e-4, kind, &opts()).unwrap(), t.alpha_s.value);
    assert_eq!(find_alpha_c(RHO, 1e-4, kind, &opts()).unwrap(), t.alpha_c.value);
}

#[test]
fn curve_shape_above_and_inside_the_window() {
    for kind in EnsembleKind::ALL {
        let above = scan_curve(&template(1e-4), 0.99, kind, &GridOptions::default(), 1e-10).unwrap();
        assert_eq!(above.maxima.len(), 1);
        let inside = scan_curve(&template(1e-4), 0.5, kind, &GridOptions::default(), 1e-10).unwrap();
        assert_eq!(inside.maxima.len(), 2);
        assert_eq!(inside.minima.len(), 1);
        assert!(inside.maxima[0].eps < inside.minima[0].eps && inside.minima[0].eps < inside.maxima[1].eps);
        assert!(inside.eps_grid.windows(2).all(|w| w[0] < w[1]));
        // every refined maximum dominates the grid samples around it
        for m in &inside.maxima {
            let i = inside.eps_grid.partition_point(|e| *e < m.eps);
            for j in [i.saturating_sub(1), i.min(inside.eps_grid.len() - 1)] {
                assert!(m.value >= inside.values[j] - 1e-12, "{kind}: {m:?} vs grid {j}");
            }
        }
    }
}

#[test]
fn maxima_count_is_stable_under_refinement() {
    let coarse = opts();
    let fine = PhaseOptions {
        grid: GridOptions {
            points: 4000,
            floor: None,
        },
        ..opts()
    };
    for kind in EnsembleKind::ALL {
        for alpha in [0.44, 0.46, 0.48, 0.5, 0.514, 0.515, 0.53, 0.99] {
            assert_eq!(
                count(alpha, 1e-4, kind, &coarse),
                count(alpha, 1e-4, kind, &fine),
                "{kind} α={alpha}"
            );
        }
    }
}

#[test]
fn dense_signal_has_no_transition() {
    for kind in EnsembleKind::ALL {
        assert!(matches!(
            find_alpha_s(1.0, 1e-4, kind, &opts()),
            Err(Error::NoTransition(_))
        ));
    }
}

#[test]
fn bp_mse_routes_agree_and_decrease_with_rate() {
    for kind in EnsembleKind::ALL {
        let mut last = f64::INFINITY;
        for alpha in [0.3, 0.45, 0.5, 0.52, 0.6, 0.8, 0.95] {
            let r = bp_mse_routes(RHO, 1e-4, alpha, kind, &opts()).unwrap();
            assert!((r.curve - r.evolution).abs() <= 1e-8, "{kind} α={alpha}: {r:?}");
            let m = bp_mse_at(RHO, 1e-4, alpha, kind, &opts()).unwrap();
            assert!(m <= last * (1.0 + 1e-12));
            last = m;
        }
    }
}

#[test]
fn bp_mse_far_above_threshold_is_noise_limited() {
    let sigma2 = 1e-6;
    for kind in EnsembleKind::ALL {
        let m = bp_mse_at(RHO, sigma2, 0.9, kind, &opts()).unwrap();
        assert!(m < 10.0 * sigma2 && m > 0.1 * sigma2, "{kind}: {m}");
    }
}

#[test]
fn sweep_records_sharp_and_smooth_points() {
    let grid = [1e-4, 2e-3];
    let g = sweep_phase_diagram(RHO, &grid, EnsembleKind::GaussianIid, &opts()).unwrap();
    let o = sweep_phase_diagram(RHO, &grid, EnsembleKind::RowOrthogonal, &opts()).unwrap();
    assert!(g[0].sharp && o[0].sharp);
    assert!(!g[1].sharp && g[1].alpha_d.is_none() && g[1].status == "no-transition");
    assert!(o[1].sharp);
    for p in g.iter().chain(&o).filter(|p| p.sharp) {
        let (s, c, d) = (p.alpha_s.unwrap(), p.alpha_c.unwrap(), p.alpha_d.unwrap());
        assert!(s <= c && c <= d);
    }
    let csv = sweep_csv(&g);
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.lines().nth(2).unwrap().starts_with("2e-3,,,,false,gaussian"));
}

#[test]
fn low_noise_lines_nearly_coincide() {
    let g = find_thresholds(RHO, 1e-6, EnsembleKind::GaussianIid, &opts()).unwrap();
    let o = find_thresholds(RHO, 1e-6, EnsembleKind::RowOrthogonal, &opts()).unwrap();
    for (a, b) in [
        (g.alpha_d.value, o.alpha_d.value),
        (g.alpha_c.value, o.alpha_c.value),
        (g.alpha_s.value, o.alpha_s.value),
    ] {
        assert!((a - b).abs() <= 0.01 * a, "{a} vs {b}");
    }
}

#[test]
fn orthogonal_equal_height_line_is_lower() {
    for sigma2 in [1e-4, 5e-4, 1e-3] {
        let g = find_alpha_c(RHO, sigma2, EnsembleKind::GaussianIid, &opts()).unwrap();
        let o = find_alpha_c(RHO, sigma2, EnsembleKind::RowOrthogonal, &opts()).unwrap();
        assert!(o < g, "{sigma2}: {o} vs {g}");
    }
}

#[test]
fn zero_density_curve_peaks_at_the_floor() {
    let t = CouplingSpec::uncoupled(1.0, 1e-4, BernoulliGaussianPrior::new(0.0).unwrap()).unwrap();
    let c = scan_curve(
        &t,
        0.5,
        EnsembleKind::RowOrthogonal,
        &GridOptions {
            points: 100,
            floor: None,
        },
        1e-10,
    )
    .unwrap();
    assert_eq!(c.maxima.len(), 1);
    assert_eq!(c.maxima[0].eps, c.eps_grid[0]);
}

#[test]
fn scan_input_errors() {
    let g = GridOptions { points: 2, floor: None };
    assert!(scan_curve(&template(1e-4), 0.5, EnsembleKind::GaussianIid, &g, 1e-10)
        .unwrap_err()
        .is_validation());
    assert!(scan_curve(
        &template(0.0),
        0.5,
        EnsembleKind::GaussianIid,
        &GridOptions::default(),
        1e-10
    )
    .is_err());
}
