use super::*;
use crate::policy::{clip_drift, DriftBasis, FeedbackFrame};
use crate::stats::ks_two_sample;

fn wiener1() -> MeasureSpec {
    MeasureSpec::Wiener { dim: 1 }
}

fn bridge(a: f64) -> MeasureSpec {
    MeasureSpec::Bridge { endpoint: vec![a] }
}

fn single_loop(a: f64) -> MeasureSpec {
    MeasureSpec::Loop { atoms: vec![LoopAtom { point: vec![a], weight: 1.0 }] }
}

fn two_atom_loop() -> MeasureSpec {
    MeasureSpec::Loop {
        atoms: vec![
            LoopAtom { point: vec![1.0], weight: 0.5 },
            LoopAtom { point: vec![-1.0], weight: 0.5 },
        ],
    }
}

fn particles2() -> MeasureSpec {
    MeasureSpec::Particles(ParticlesSpec {
        sigma: 1.0,
        mean_reversion: 0.0,
        constant_drift: 0.0,
        repulsion: 1.0,
        initial: vec![0.0, 1.0],
        scheme: ParticleScheme::default(),
    })
}

fn diffusion_const_sigma() -> MeasureSpec {
    MeasureSpec::Diffusion(DiffusionSpec {
        sigma: Coefficient::Const { value: 0.8 },
        drift: Coefficient::Tanh { amplitude: 0.5, rate: 1.0 },
        start: 0.2,
    })
}

fn diffusion_state_sigma() -> MeasureSpec {
    MeasureSpec::Diffusion(DiffusionSpec {
        sigma: Coefficient::Tanh { amplitude: 1.0, rate: 0.5 },
        drift: Coefficient::Const { value: 0.1 },
        start: 0.0,
    })
}

fn all_families() -> Vec<MeasureSpec> {
    vec![
        wiener1(),
        bridge(0.5),
        single_loop(1.0),
        two_atom_loop(),
        particles2(),
        diffusion_const_sigma(),
        diffusion_state_sigma(),
    ]
}

#[test]
fn wiener_base_couples_beta_to_the_path() {
    let g = TimeGrid::new(16);
    let base = sample_base(&wiener1(), g, RandomSource::new(1)).unwrap();
    assert_eq!(base.w, base.beta);
}

#[test]
fn base_beta_starts_at_zero_everywhere() {
    let g = TimeGrid::new(32);
    for spec in all_families() {
        let base = sample_base(&spec, g, RandomSource::new(4)).unwrap();
        assert!(base.beta.node(0).iter().all(|v| *v == 0.0), "{spec:?}");
        assert_eq!(base.beta.dim(), spec.driving_dim());
        assert_eq!(base.w.dim(), spec.path_dim());
        base.w.ensure_finite().unwrap();
    }
}

#[test]
fn bridge_is_pinned_at_the_endpoint() {
    let g = TimeGrid::new(64);
    for seed in 0..50 {
        let base = sample_base(&bridge(0.0), g, RandomSource::new(seed)).unwrap();
        assert_eq!(base.w.node(64)[0], 0.0);
        let base = sample_base(&bridge(-1.7), g, RandomSource::new(seed)).unwrap();
        assert_eq!(base.w.node(64)[0], -1.7);
    }
}

#[test]
fn bridge_midpoint_variance_matches_the_law() {
    // Var W(1/2) = 1/4 for a pinned path; grid fine enough that the
    // quadrature bias sits well inside the Monte Carlo band
    let g = TimeGrid::new(512);
    let m = 20_000u64;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for i in 0..m {
        let w = sample_base(&bridge(0.0), g, RandomSource::new(7).substream(i)).unwrap().w;
        let x = w.node(256)[0];
        sum += x;
        sum_sq += x * x;
    }
    let mf = m as f64;
    let var = (sum_sq - sum * sum / mf) / (mf - 1.0);
    let se = var * (2.0 / mf).sqrt();
    assert!((var - 0.25).abs() < 3.0 * se, "var {var:.4} vs 0.25 (se {se:.4})");
}

#[test]
fn single_atom_loop_marginals_match_the_bridge() {
    let g = TimeGrid::new(64);
    let m = 4000u64;
    let loop_spec = single_loop(0.7);
    let bridge_spec = bridge(0.7);
    let mut loop_mid = Vec::new();
    let mut bridge_mid = Vec::new();
    for i in 0..m {
        loop_mid.push(
            sample_base(&loop_spec, g, RandomSource::new(8).substream(i)).unwrap().w.node(32)[0],
        );
        bridge_mid.push(
            sample_base(&bridge_spec, g, RandomSource::new(9).substream(i)).unwrap().w.node(32)[0],
        );
    }
    let ks = ks_two_sample(&loop_mid, &bridge_mid);
    assert!(ks.p_value > 0.01, "KS p = {}", ks.p_value);
}

#[test]
fn zero_drift_reproduces_the_base_path_exactly() {
    let g = TimeGrid::new(64);
    for spec in all_families() {
        for seed in [3u64, 99, 4096] {
            let rs = RandomSource::new(seed);
            let base = sample_base(&spec, g, rs).unwrap();
            let u = DriftSpec::zero(g, spec.driving_dim());
            let out = perturb(&spec, &base, &u, rs).unwrap();
            assert_eq!(out.path, base.w, "W^0 != W for {spec:?}");
        }
    }
}

#[test]
fn wiener_perturbation_is_the_additive_shift() {
    let g = TimeGrid::new(32);
    let rs = RandomSource::new(10);
    let base = sample_base(&wiener1(), g, rs).unwrap();
    let u = DriftSpec::constant(g, &[1.0]);
    let out = perturb(&wiener1(), &base, &u, rs).unwrap();
    for k in 0..=32 {
        let expect = base.w.node(k)[0] + g.node(k);
        assert!((out.path.node(k)[0] - expect).abs() < 1e-14);
    }
}

#[test]
fn perturbed_bridge_stays_pinned() {
    let g = TimeGrid::new(48);
    let spec = bridge(1.3);
    for seed in 0..20 {
        let rs = RandomSource::new(seed);
        let base = sample_base(&spec, g, rs).unwrap();
        let u = DriftSpec::constant(g, &[2.5]);
        let out = perturb(&spec, &base, &u, rs).unwrap();
        assert_eq!(out.path.node(48)[0], 1.3);
        let fb = clip_drift(
            DriftSpec::closed_loop(vec![DriftBasis::State], vec![0.5], FeedbackFrame::Controlled),
            2.0,
        );
        let out = perturb(&spec, &base, &fb, rs).unwrap();
        assert_eq!(out.path.node(48)[0], 1.3);
    }
}

#[test]
fn shift_reconstructs_the_controlled_path() {
    // path = W + w^u exactly at the nodes, for every family that offers a shift
    let g = TimeGrid::new(32);
    for spec in all_families() {
        let rs = RandomSource::new(21);
        let base = sample_base(&spec, g, rs).unwrap();
        let u = DriftSpec::constant(g, &vec![0.4; spec.driving_dim()]);
        let out = perturb(&spec, &base, &u, rs).unwrap();
        match (&spec, &out.shift) {
            (MeasureSpec::Diffusion(d), None) => assert!(!d.sigma.is_const()),
            (_, Some(shift)) => {
                let rebuilt = base.w.add(&shift.path()).unwrap();
                let err = rebuilt.sup_distance(&out.path, g.steps()).unwrap();
                assert!(err < 1e-12, "shift residual {err:.2e} for {spec:?}");
            }
            (spec, None) => panic!("missing shift for {spec:?}"),
        }
    }
}

#[test]
fn bridge_shift_density_approaches_the_integral_form() {
    // the exact node-difference shift converges in H to
    // u̇(s) - ∫_0^s u̇(r)/(1-r) dr; the gap's squared norm shrinks like Δt
    // (the final cell's density legitimately deviates O(1) at the pin)
    let formula_gap_norm_sq = |n: usize| {
        let g = TimeGrid::new(n);
        let spec = bridge(0.0);
        let rs = RandomSource::new(3);
        let base = sample_base(&spec, g, rs).unwrap();
        let u = DriftSpec::constant(g, &[1.0]);
        let out = perturb(&spec, &base, &u, rs).unwrap();
        let shift = out.shift.unwrap();
        let mut integral = 0.0;
        let mut gap = CameronMartinDrift::zero(g, 1);
        for k in 0..n {
            gap.cell_mut(k)[0] = shift.cell(k)[0] - (1.0 - integral);
            integral += g.dt() / g.remaining(k);
        }
        gap.norm_sq()
    };
    let coarse = formula_gap_norm_sq(64);
    let fine = formula_gap_norm_sq(128);
    assert!(fine < 0.75 * coarse, "no refinement: {coarse:.2e} -> {fine:.2e}");
    assert!(coarse < 0.1, "coarse gap {coarse:.2e} unexpectedly large");
}

#[test]
fn bridge_functional_recovers_the_driving_noise() {
    let g = TimeGrid::new(64);
    let spec = bridge(0.9);
    for seed in 0..20 {
        let rs = RandomSource::new(seed);
        let base = sample_base(&spec, g, rs).unwrap();
        let recovered = beta_functional(&spec, &base.w).unwrap();
        let err = recovered.sup_distance(&base.beta, 63).unwrap();
        assert!(err < 1e-12, "recovery error {err:.2e}");
    }
}

#[test]
fn wiener_functional_is_the_identity() {
    let g = TimeGrid::new(16);
    let base = sample_base(&wiener1(), g, RandomSource::new(2)).unwrap();
    assert_eq!(beta_functional(&wiener1(), &base.w).unwrap(), base.w);
}

#[test]
fn recovery_identity_residuals_by_family() {
    // β∘W^u = β + u: machine-zero for wiener/bridge/loop/diffusion, O(Δt)
    // for particles where sub-stepping may fire
    let g = TimeGrid::new(128);
    let drifts: Vec<Box<dyn Fn(usize) -> DriftSpec>> = vec![
        Box::new(|d| DriftSpec::constant(TimeGrid::new(128), &vec![0.5; d])),
        Box::new(|d| {
            let _ = d;
            clip_drift(
                DriftSpec::closed_loop(
                    vec![DriftBasis::State],
                    vec![0.5],
                    FeedbackFrame::Controlled,
                ),
                2.0,
            )
        }),
        Box::new(|d| {
            let _ = d;
            crate::policy::retard_drift(
                clip_drift(
                    DriftSpec::closed_loop(vec![DriftBasis::State], vec![0.8], FeedbackFrame::Base),
                    2.0,
                ),
                0.25,
            )
        }),
    ];
    for spec in all_families() {
        for make in &drifts {
            let mut worst: f64 = 0.0;
            for seed in 0..10 {
                let rs = RandomSource::new(400 + seed);
                let base = sample_base(&spec, g, rs).unwrap();
                let u = make(spec.driving_dim());
                worst = worst.max(condition_iv_residual(&spec, &base, &u, rs).unwrap());
            }
            let tol = match spec {
                MeasureSpec::Particles(_) => 0.1,
                _ => 1e-10,
            };
            assert!(worst < tol, "residual {worst:.2e} for {spec:?}");
        }
    }
}

#[test]
fn composition_law_residuals_by_family() {
    let g = TimeGrid::new(64);
    for spec in all_families() {
        let d = spec.driving_dim();
        let u = DriftSpec::constant(g, &vec![0.7; d]);
        let v = DriftSpec::constant(g, &vec![-0.4; d]);
        let mut worst: f64 = 0.0;
        for seed in 0..10 {
            let rs = RandomSource::new(700 + seed);
            let base = sample_base(&spec, g, rs).unwrap();
            worst = worst.max(compose_check(&spec, &u, &v, &base, rs).unwrap());
        }
        let tol = match spec {
            MeasureSpec::Wiener { .. } => 1e-12,
            MeasureSpec::Bridge { .. } | MeasureSpec::Loop { .. } => 1e-10,
            // float associativity can flip a sub-step or ripple through σ(X)
            MeasureSpec::Particles(_) => 1e-6,
            MeasureSpec::Diffusion(_) => 1e-8,
        };
        assert!(worst < tol, "compose residual {worst:.2e} for {spec:?}");
    }
}

#[test]
fn composition_with_feedback_outer_drift() {
    // closed-loop u composed after deterministic v still satisfies the law:
    // the combined drift picks up u realized along W^v
    let g = TimeGrid::new(64);
    for spec in [wiener1(), bridge(0.0), single_loop(0.5)] {
        let u =
            DriftSpec::closed_loop(vec![DriftBasis::State], vec![0.3], FeedbackFrame::Controlled);
        let v = DriftSpec::constant(g, &[0.5]);
        let rs = RandomSource::new(52);
        let base = sample_base(&spec, g, rs).unwrap();
        let resid = compose_check(&spec, &u, &v, &base, rs).unwrap();
        assert!(resid < 1e-10, "residual {resid:.2e} for {spec:?}");
    }
}

#[test]
fn particles_gap_moment_follows_the_ito_law() {
    // for D = Z_2 - Z_1 with b=c=0: E[D²(t)] = D₀² + (4γ + 2σ²) t
    let g = TimeGrid::new(128);
    let spec = particles2();
    let m = 4000u64;
    let mut sum = 0.0;
    for i in 0..m {
        let rs = RandomSource::new(31).substream(i);
        let w = sample_base(&spec, g, rs).unwrap().w;
        let d = w.node(128)[1] - w.node(128)[0];
        sum += d * d;
    }
    let mean = sum / m as f64;
    assert!((mean - 7.0).abs() / 7.0 < 0.1, "E[D²(1)] = {mean:.3}, expected 7");
}

#[test]
fn diffusion_base_satisfies_its_own_euler_recursion() {
    let g = TimeGrid::new(32);
    let spec = diffusion_state_sigma();
    let (sig, dr) = match &spec {
        MeasureSpec::Diffusion(d) => (d.sigma, d.drift),
        _ => unreachable!(),
    };
    let base = sample_base(&spec, g, RandomSource::new(77)).unwrap();
    let dbeta = base.beta.increments();
    let mut x = 0.0f64;
    for k in 0..32 {
        assert!((base.w.node(k)[0] - x).abs() < 1e-14);
        assert!((base.w.node(k)[1] - base.beta.node(k)[0]).abs() < 1e-14);
        x += sig.eval(x) * dbeta.cell(k)[0] + dr.eval(x) * g.dt();
    }
}

#[test]
fn spec_validation_reports_field_paths() {
    let bad = MeasureSpec::Particles(ParticlesSpec {
        sigma: 2.0,
        mean_reversion: 0.0,
        constant_drift: 0.0,
        repulsion: 1.0,
        initial: vec![0.0, 1.0],
        scheme: ParticleScheme::default(),
    });
    match bad.validate() {
        Err(MeasureError::InvalidSpec { field, message }) => {
            assert_eq!(field, "particles.sigma");
            assert!(message.contains("sigma^2 <= 2*gamma"), "{message}");
        }
        other => panic!("expected invalid spec, got {other:?}"),
    }

    let bad = MeasureSpec::Loop {
        atoms: vec![
            LoopAtom { point: vec![1.0], weight: 0.6 },
            LoopAtom { point: vec![-1.0], weight: 0.6 },
        ],
    };
    assert!(
        matches!(bad.validate(), Err(MeasureError::InvalidSpec { field, .. }) if field == "loop.atoms")
    );

    let bad = MeasureSpec::Particles(ParticlesSpec {
        sigma: 1.0,
        mean_reversion: 0.0,
        constant_drift: 0.0,
        repulsion: 1.0,
        initial: vec![1.0, 0.0],
        scheme: ParticleScheme::default(),
    });
    assert!(
        matches!(bad.validate(), Err(MeasureError::InvalidSpec { field, .. }) if field == "particles.z0")
    );
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        // β∘W^u = β + u stays at the rounding floor for the exactly
        // invertible families under arbitrary bounded open-loop densities
        #[test]
        fn recovery_identity_for_arbitrary_open_loop_drifts(
            density in proptest::collection::vec(-3.0f64..3.0, 24),
            seed in 0u64..500,
            family in 0usize..3,
        ) {
            let g = TimeGrid::new(24);
            let spec = match family {
                0 => wiener1(),
                1 => bridge(0.4),
                _ => single_loop(-0.8),
            };
            let rs = RandomSource::new(seed);
            let base = sample_base(&spec, g, rs).unwrap();
            let u = DriftSpec::open_loop(CameronMartinDrift::from_density(g, 1, density));
            let r = condition_iv_residual(&spec, &base, &u, rs).unwrap();
            prop_assert!(r < 1e-11, "residual {r:.2e} for {spec:?}");
        }

        // pinned endpoints survive any drift
        #[test]
        fn bridge_pin_survives_arbitrary_drifts(
            density in proptest::collection::vec(-5.0f64..5.0, 16),
            endpoint in -3.0f64..3.0,
            seed in 0u64..500,
        ) {
            let g = TimeGrid::new(16);
            let spec = bridge(endpoint);
            let rs = RandomSource::new(seed);
            let base = sample_base(&spec, g, rs).unwrap();
            let u = DriftSpec::open_loop(CameronMartinDrift::from_density(g, 1, density));
            let out = perturb(&spec, &base, &u, rs).unwrap();
            prop_assert_eq!(out.path.node(16)[0], endpoint);
        }
    }
}

#[test]
fn loop_mixture_hits_both_atoms() {
    let g = TimeGrid::new(32);
    let spec = two_atom_loop();
    let mut plus = 0usize;
    let m = 400u64;
    for i in 0..m {
        let w = sample_base(&spec, g, RandomSource::new(13).substream(i)).unwrap().w;
        let end = w.node(32)[0];
        assert!((end - 1.0).abs() < 1e-12 || (end + 1.0).abs() < 1e-12);
        if end > 0.0 {
            plus += 1;
        }
    }
    let frac = plus as f64 / m as f64;
    assert!((frac - 0.5).abs() < 0.1, "atom split {frac}");
}
