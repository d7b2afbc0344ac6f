use std::f64::consts::TAU;

use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use starsec::baselines::random_star_coeffs;
use starsec::channel::{sample_realization, EffectiveChannels, ScenarioConfig};
use starsec::graphnn::{
    build_graph, feature_width, loss, BeamHead, FeatureScaling, GnnModel, LossVariant, ModelConfig,
    PhaseHead,
};
use starsec::quantize::{quantize_value, FixedPointFormat};
use starsec::secrecy::{
    check_constraints, evaluate, omega_r, omega_t_an, sinr_bob, sinr_eve, Beamformer,
    StarCoefficients, Strategy as Scheme,
};
use starsec::tensor::ComplexMatrix;

fn scenario(l: usize, k: usize) -> ScenarioConfig {
    let mut s = ScenarioConfig::desk();
    s.l = l;
    s.k = k;
    s
}

fn channels(seed: u64, l: usize, k: usize) -> EffectiveChannels {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_realization(&scenario(l, k), &mut rng)
        .unwrap()
        .effective()
        .unwrap()
}

fn random_w(seed: u64, n: usize, p: f64) -> ComplexMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let v: Vec<Complex64> = (0..n).map(|_| uniform_complex(&mut rng)).collect();
    let w = ComplexMatrix::column(&v);
    let s = (p / w.norm_sqr()).sqrt();
    w.scale(Complex64::new(s, 0.0))
}

fn uniform_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    use rand::Rng;
    Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
}

fn coeffs(seed: u64, l: usize) -> StarCoefficients {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xc0ef);
    let mut c = random_star_coeffs(l, &mut rng).unwrap();
    use rand::Rng;
    c.beta_r = (0..l).map(|_| rng.random_range(0.0..=1.0)).collect();
    c.theta_t_info = Some((0..l).map(|_| rng.random_range(0.0..TAU)).collect());
    c
}

fn scheme() -> impl Strategy<Value = Scheme> {
    prop_oneof![Just(Scheme::An), Just(Scheme::Conv), Just(Scheme::IrsOnly)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn surface_energy_is_conserved(beta in prop::collection::vec(0.0f64..=1.0, 1..12), phase in 0.0f64..TAU) {
        let l = beta.len();
        let c = StarCoefficients {
            beta_r: beta,
            theta_r: vec![phase; l],
            theta_t_an: vec![TAU - phase; l],
            theta_t_info: None,
        };
        let (r, t) = (omega_r(&c).unwrap(), omega_t_an(&c).unwrap());
        for i in 0..l {
            let e = r.get(i, i).norm_sqr() + t.get(i, i).norm_sqr();
            prop_assert!((e - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn full_reflection_an_matches_reflection_only(seed in any::<u64>(), k in 1usize..4) {
        let ch = channels(seed, 5, k);
        let mut c = coeffs(seed, 5);
        c.beta_r = vec![1.0; 5];
        let w = random_w(seed, ch.n(), 0.1);
        for e in 0..k {
            let a = sinr_eve(&ch, &c, &w, e, Scheme::An).unwrap();
            let b = sinr_eve(&ch, &c, &w, e, Scheme::IrsOnly).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn stronger_artificial_noise_lowers_eve_sinr(seed in any::<u64>(), boost in 1.01f64..10.0) {
        let ch = channels(seed, 5, 2);
        let mut c = coeffs(seed, 5);
        c.beta_r = vec![0.3; 5];
        let w = random_w(seed, ch.n(), 0.1);
        let mut louder = ch.clone();
        louder.eves[0].cascaded = ch.eves[0].cascaded.scale(Complex64::new(boost, 0.0));
        let before = sinr_eve(&ch, &c, &w, 0, Scheme::An).unwrap();
        let after = sinr_eve(&louder, &c, &w, 0, Scheme::An).unwrap();
        prop_assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn rate_is_nonnegative_and_eve_order_free(seed in any::<u64>(), k in 1usize..5, s in scheme(), rot in 0usize..4) {
        let ch = channels(seed, 4, k);
        let c = coeffs(seed, 4);
        let w = random_w(seed, ch.n(), 0.1);
        let r = evaluate(&ch, &c, &w, s).unwrap().rate;
        prop_assert!(r >= 0.0);
        let mut perm = ch.clone();
        perm.eves.rotate_left(rot % k);
        perm.sigma2_k.rotate_left(rot % k);
        perm.eves.reverse();
        perm.sigma2_k.reverse();
        let rp = evaluate(&perm, &c, &w, s).unwrap().rate;
        prop_assert!((r - rp).abs() <= 1e-12 * r.max(1.0));
    }

    #[test]
    fn global_phase_of_w_is_irrelevant(seed in any::<u64>(), phi in 0.0f64..TAU, s in scheme()) {
        let ch = channels(seed, 4, 3);
        let c = coeffs(seed, 4);
        let bf = Beamformer::new(random_w(seed, ch.n(), 0.1), 0.1).unwrap();
        let rot = bf.rotated(phi);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        prop_assert!(close(sinr_bob(&ch, &c, &bf.w).unwrap(), sinr_bob(&ch, &c, &rot.w).unwrap()));
        for e in 0..3 {
            prop_assert!(close(sinr_eve(&ch, &c, &bf.w, e, s).unwrap(), sinr_eve(&ch, &c, &rot.w, e, s).unwrap()));
        }
        prop_assert!(close(evaluate(&ch, &c, &bf.w, s).unwrap().rate, evaluate(&ch, &c, &rot.w, s).unwrap().rate));
    }

    #[test]
    fn quantization_error_is_half_lsb_or_saturates(x in -1e4f64..1e4, word in 2u32..=32, frac_seed in any::<u32>()) {
        let frac = 1 + frac_seed % (word - 1);
        let fmt = FixedPointFormat::new(word, frac).unwrap();
        let q = quantize_value(x, fmt);
        let half = fmt.lsb() / 2.0;
        if x >= fmt.min_value() - half && x <= fmt.max_value() + half {
            prop_assert!((q.value - x).abs() <= half);
        } else {
            prop_assert!(q.saturated);
            prop_assert_eq!(q.value, x.clamp(fmt.min_value(), fmt.max_value()));
        }
    }

    #[test]
    fn feature_width_law(n in 1usize..9, l in 1usize..20, k in 1usize..4) {
        prop_assert_eq!(feature_width(n, l), 2 * n + 2 * n * l);
        let mut s = scenario(l, k);
        s.n = n;
        let mut rng = ChaCha8Rng::seed_from_u64(n as u64 * 100 + l as u64);
        let ch = sample_realization(&s, &mut rng).unwrap().effective().unwrap();
        let g = build_graph(&ch, FeatureScaling::unit(), false).unwrap();
        prop_assert_eq!(g.x.cols(), 2 * n + 2 * n * l);
        prop_assert_eq!(g.x.rows(), k + 2);
    }
}

fn any_head() -> impl Strategy<Value = (PhaseHead, BeamHead)> {
    (
        prop_oneof![
            Just(PhaseHead::Faithful),
            Just(PhaseHead::Full),
            Just(PhaseHead::Paired)
        ],
        prop_oneof![Just(BeamHead::Fc), Just(BeamHead::LayerNorm)],
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn forward_outputs_always_feasible(
        seed in any::<u64>(),
        s in scheme(),
        (ph, bh) in any_head(),
        log_scale in -3.0f64..3.0,
    ) {
        let scn = scenario(4, 2);
        let mut cfg = ModelConfig::new(scn.n, scn.l, s, FeatureScaling::for_scenario(&scn).unwrap());
        cfg.hidden = 8;
        cfg.phase_head = ph;
        cfg.beam_head = bh;
        let mut m = GnnModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let mut flat = m.params.flatten();
        flat.iter_mut().for_each(|p| *p *= 10f64.powf(log_scale));
        m.params.unflatten(&flat).unwrap();
        let ch = channels(seed, 4, 2);
        let (bf, c) = m.forward(&m.graph(&ch).unwrap(), scn.p_max).unwrap();
        prop_assert!(check_constraints(&bf, &c).all_pass());
        if bh == BeamHead::Fc {
            prop_assert!((bf.power() - scn.p_max).abs() < 1e-9 * scn.p_max);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn loss_ignores_eve_order(seed in any::<u64>(), s in scheme()) {
        let scn = scenario(4, 3);
        let mut cfg = ModelConfig::new(scn.n, scn.l, s, FeatureScaling::for_scenario(&scn).unwrap());
        cfg.hidden = 8;
        let m = GnnModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let batch: Vec<_> = (0..3).map(|i| channels(seed.wrapping_add(i), 4, 3)).collect();
        let perm: Vec<_> = batch
            .iter()
            .map(|ch| {
                let mut p = ch.clone();
                p.eves.swap(0, 2);
                p.sigma2_k.swap(0, 2);
                p
            })
            .collect();
        for v in [LossVariant::Clamped, LossVariant::Unclamped] {
            let a = loss(&m, &batch, scn.p_max, v).unwrap();
            let b = loss(&m, &perm, scn.p_max, v).unwrap();
            prop_assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
    }
}
