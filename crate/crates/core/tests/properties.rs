mod common;

use common::{energy as oracle_energy, PowerLaw, Walls};
use lpflow::flow::velocity_from_subgradient;
use lpflow::particles::{
    discrete_energy, discrete_energy_ball_form, minimal_selection, weighted_norm, weighted_pairing,
};
use lpflow::transport::{block_density, wasserstein_p, DensityProfile, Measure};
use lpflow::{power_law_model, DomainSpec, EnergyModel, FlowParams, ParticleConfig};
use proptest::prelude::*;

fn law() -> impl Strategy<Value = (f64, f64)> {
    prop_oneof![Just(1.5), Just(2.0), Just(3.0), 1.2f64..4.0]
        .prop_flat_map(|p| (Just(p), (p - 1.0 + 0.2)..(p + 2.0)))
}

fn model(p: f64, gamma: f64) -> EnergyModel {
    power_law_model(FlowParams::new(p, gamma).unwrap()).unwrap()
}

/// Sorted positions with gaps bounded away from zero.
fn positions(max_n: usize) -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(0.05f64..1.0, 1..max_n), -1.0f64..1.0).prop_map(|(gaps, x0)| {
        let mut x = vec![x0];
        for g in gaps {
            x.push(x.last().unwrap() + g);
        }
        x
    })
}

fn domains(x: &[f64]) -> Vec<(DomainSpec, Walls)> {
    let l = x.iter().fold(0.0f64, |m, v| m.max(v.abs())) + 0.3;
    vec![
        (DomainSpec::WholeLine, Walls::Line),
        (DomainSpec::Interval { l, pinned: false }, Walls::Mirror(l)),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn energy_forms_agree((p, gamma) in law(), x in positions(30)) {
        let em = model(p, gamma);
        let law = PowerLaw::new(p, gamma);
        for (dom, walls) in domains(&x) {
            let cfg = ParticleConfig::new(x.clone(), dom).unwrap();
            let e = discrete_energy(&cfg, &em).unwrap();
            let ball = discrete_energy_ball_form(&cfg, &em);
            let oracle = oracle_energy(&x, walls, &law);
            prop_assert!((e - ball).abs() <= 1e-12 * e.abs().max(1.0));
            prop_assert!((e - oracle).abs() <= 1e-12 * e.abs().max(1.0));
        }
    }

    #[test]
    fn energy_is_translation_invariant_and_forces_balance((p, gamma) in law(), x in positions(20), shift in -5.0f64..5.0) {
        let em = model(p, gamma);
        let cfg = ParticleConfig::new(x.clone(), DomainSpec::WholeLine).unwrap();
        let moved = ParticleConfig::new(x.iter().map(|v| v + shift).collect(), DomainSpec::WholeLine).unwrap();
        let (e0, e1) = (discrete_energy(&cfg, &em).unwrap(), discrete_energy(&moved, &em).unwrap());
        prop_assert!((e0 - e1).abs() <= 1e-10 * e0.abs().max(1.0));
        let z = minimal_selection(&cfg, &em).unwrap().z;
        let scale: f64 = z.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
        prop_assert!(z.iter().sum::<f64>().abs() <= 1e-9 * scale);
    }

    #[test]
    fn energy_ignores_input_order((p, gamma) in law(), x in positions(20), seed in any::<u64>()) {
        use rand::{seq::SliceRandom, SeedableRng};
        let mut shuffled = x.clone();
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let em = model(p, gamma);
        let a = ParticleConfig::new(x, DomainSpec::WholeLine).unwrap();
        let b = ParticleConfig::from_unsorted(shuffled, DomainSpec::WholeLine).unwrap();
        prop_assert_eq!(a.positions(), b.positions());
        prop_assert_eq!(discrete_energy(&a, &em).unwrap(), discrete_energy(&b, &em).unwrap());
    }

    #[test]
    fn weighted_holder(v in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..40), p in 1.1f64..5.0) {
        let q = p / (p - 1.0);
        let (a, b): (Vec<f64>, Vec<f64>) = v.into_iter().unzip();
        let lhs = weighted_pairing(&a, &b).abs();
        prop_assert!(lhs <= weighted_norm(&a, p) * weighted_norm(&b, q) * (1.0 + 1e-12) + 1e-15);
    }

    #[test]
    fn duality_map_saturates_young(z in prop::collection::vec(-5.0f64..5.0, 2..30), p in 1.2f64..4.0) {
        // v = -j_q(z) gives (z, -v)_w = ‖v‖_p^p = ‖z‖_q^q.
        let q = p / (p - 1.0);
        let v = velocity_from_subgradient(&z, q);
        let pairing = -weighted_pairing(&z, &v);
        let (vp, zq) = (weighted_norm(&v, p).powf(p), weighted_norm(&z, q).powf(q));
        prop_assert!((pairing - vp).abs() <= 1e-9 * vp.max(1e-12));
        prop_assert!((pairing - zq).abs() <= 1e-9 * zq.max(1e-12));
    }

    #[test]
    fn wasserstein_is_a_metric(
        a in prop::collection::vec(-3.0f64..3.0, 1..12),
        b in prop::collection::vec(-3.0f64..3.0, 1..12),
        c in prop::collection::vec(-3.0f64..3.0, 1..12),
        p in 1.0f64..4.0,
    ) {
        let w = |x: &[f64], y: &[f64]| wasserstein_p(Measure::Atoms(x), Measure::Atoms(y), p).unwrap();
        prop_assert!((w(&a, &b) - w(&b, &a)).abs() <= 1e-12);
        prop_assert!(w(&a, &a) <= 1e-12);
        prop_assert!(w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-12);
    }

    #[test]
    fn block_density_is_within_one_ball(x in positions(15), p in 1.0f64..3.0) {
        for (dom, _) in domains(&x) {
            let cfg = ParticleConfig::new(x.clone(), dom).unwrap();
            let rho = block_density(&cfg).unwrap();
            let widest = cfg.ball_sizes().into_iter().fold(0.0f64, f64::max);
            let w = wasserstein_p(Measure::Particles(&cfg), Measure::Density(&rho), p).unwrap();
            prop_assert!(w <= widest * (1.0 + 1e-9), "W_p = {} > {}", w, widest);
        }
    }

    #[test]
    fn psi_inverts((p, gamma) in law(), x in 1e-2f64..1e2) {
        let em = model(p, gamma);
        let y = em.psi(x);
        let back = em.psi_inverse(y).unwrap();
        prop_assert!((back - x).abs() <= 1e-10 * x);
    }

    #[test]
    fn psi_is_minus_h_prime((p, gamma) in law(), x in 0.1f64..10.0) {
        let em = model(p, gamma);
        let d = 1e-5 * x;
        let fd = -(em.h(x + d) - em.h(x - d)) / (2.0 * d);
        prop_assert!((em.psi(x) - fd).abs() <= 1e-7 * em.psi(x).abs().max(1e-12));
        prop_assert!((em.psi(x) - PowerLaw::new(p, gamma).psi(x)).abs() <= 1e-12 * em.psi(x));
    }

    #[test]
    fn h_second_matches_big_h_second((p, gamma) in law(), x in 0.1f64..10.0) {
        // h(x) = x H(1/x) gives h''(x) = x^{-3} H''(1/x).
        let em = model(p, gamma);
        let lhs = em.h_second(x);
        let rhs = em.big_h_second(1.0 / x) / (x * x * x);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1e-300));
    }

    #[test]
    fn quantile_inverts_cdf(values in prop::collection::vec(0.1f64..2.0, 2..8), s in 0.0f64..1.0) {
        let n = values.len();
        let nodes: Vec<f64> = (0..n).map(|k| -1.0 + 2.0 * k as f64 / (n - 1) as f64).collect();
        let rho = DensityProfile::linear(nodes, values).unwrap();
        let x = rho.quantile(s);
        prop_assert!((rho.cdf(x) - s).abs() <= 1e-10);
    }
}
