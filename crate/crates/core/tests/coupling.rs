use scorth::coupling::{build_seeding_spec, overall_rate, SeedingParams};
use scorth::{run_evolution, BernoulliGaussianPrior, CouplingSpec, EnsembleKind, EvolutionOptions};

fn params(blocks: usize) -> SeedingParams {
    SeedingParams {
        blocks,
        width: 2,
        alpha_seed: 0.7,
        alpha_bulk: 0.49,
        j: 0.5,
        sigma2: 1e-6,
        rho: 0.4,
    }
}

#[test]
fn eight_block_band_pattern() {
    let spec = build_seeding_spec(&SeedingParams { j: 2.5, ..params(8) }).unwrap();
    for q in 0..8 {
        for p in 0..8 {
            let expect = if p <= q && q <= p + 1 {
                1.0
            } else if p == q + 1 {
                2.5
            } else {
                0.0
            };
            assert_eq!(spec.coupling(q, p), expect, "({q},{p})");
            assert_eq!(spec.alpha(q, p), if q == 0 { 0.7 } else { 0.49 });
        }
        assert_eq!(spec.gamma()[q], 0.125);
    }
}

#[test]
fn every_row_and_column_is_connected() {
    for blocks in 1..12 {
        for width in 1..=blocks {
            let spec = build_seeding_spec(&SeedingParams {
                width,
                j: 0.0,
                ..params(blocks)
            })
            .unwrap();
            let m = spec.coupling_matrix();
            assert!(m.column_sums().iter().all(|s| *s > 0.0));
            assert!((0..blocks).all(|q| m.row(q).iter().any(|v| *v > 0.0)));
        }
    }
}

#[test]
fn overall_rate_examples() {
    assert!((overall_rate(&params(10)) - 0.511).abs() < 1e-12);
    let spec = build_seeding_spec(&params(10)).unwrap();
    assert!((spec.overall_rate() - 0.511).abs() < 1e-12);
    let plain = CouplingSpec::uncoupled(0.6, 1e-6, BernoulliGaussianPrior::new(0.4).unwrap()).unwrap();
    assert!((plain.overall_rate() - 0.6).abs() < 1e-15);
}

#[test]
fn overall_rate_falls_to_bulk() {
    let mut last = f64::INFINITY;
    for blocks in 1..60 {
        let p = params(blocks);
        let r = overall_rate(&p);
        let spec = build_seeding_spec(&SeedingParams { width: 1, ..p }).unwrap();
        assert!((spec.overall_rate() - r).abs() < 1e-12);
        assert!(r < last && r > 0.49);
        last = r;
    }
    assert!(last - 0.49 < 0.01);
}

#[test]
fn single_block_matches_uncoupled_evolution() {
    let p = SeedingParams {
        blocks: 1,
        width: 1,
        ..params(1)
    };
    let coupled = build_seeding_spec(&p).unwrap();
    let plain = CouplingSpec::uncoupled(0.7, 1e-6, BernoulliGaussianPrior::new(0.4).unwrap()).unwrap();
    for kind in EnsembleKind::ALL {
        let a = run_evolution(&coupled, kind, &EvolutionOptions::default()).unwrap();
        let b = run_evolution(&plain, kind, &EvolutionOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn invalid_parameters_name_the_field() {
    let err = build_seeding_spec(&SeedingParams { width: 3, ..params(2) }).unwrap_err();
    assert!(err.to_string().contains("width"), "{err}");
    let err = build_seeding_spec(&SeedingParams {
        alpha_bulk: 0.0,
        ..params(3)
    })
    .unwrap_err();
    assert!(err.to_string().contains("alpha_bulk"), "{err}");
}
