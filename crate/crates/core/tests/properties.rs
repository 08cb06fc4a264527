use std::f64::consts::{FRAC_1_SQRT_2, FRAC_2_PI};

use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cnmimo::bussgang::{arcsine_correlation, data_covariance, CovarianceSet, ArcsineMode};
use cnmimo::channel::{orthogonal_pilots, rayleigh_channel};
use cnmimo::estimator::{channel_prior, LraLmmseEstimator};
use cnmimo::harness::{parse_scenario, parse_snr_grid};
use cnmimo::linalg::min_eigenvalue;
use cnmimo::model::{
    build_b, build_b_eff, build_b_prime, complex_to_real_channel, full_alpha, quantize,
    random_network, real_to_complex_channel, ComparatorNetwork, SystemConfig,
};
use cnmimo::netdesign::{greedy_mse_search_traced, total_mse};
use cnmimo::power::{p_comparator_network, p_one_bit, p_traditional, PowerParams};
use cnmimo::rates::sum_rate_for_channel;
use cnmimo::detector::lmmse_detector;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn cfg(nt: usize, nr: usize, sn: f64) -> SystemConfig {
    SystemConfig::new(nt, nr, 1.0, sn, nt).unwrap()
}

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..=3, 2usize..=5)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn arcsine_has_unit_diagonal((nt, nr) in dims(), sn in 0.01f64..10.0, seed in any::<u64>()) {
        let c = cfg(nt, nr, sn);
        let mut r = rng(seed);
        let h = rayleigh_channel(&c, &mut r).h_real;
        let alpha = (seed as usize) % (full_alpha(nr) + 1);
        let b = build_b(&random_network(nr, alpha, &mut r).unwrap());
        let czq = arcsine_correlation(&data_covariance(&h, &b, &c)).unwrap();
        for i in 0..czq.nrows() {
            prop_assert!((czq[(i, i)] - 1.0).abs() < 1e-10);
            for j in 0..czq.ncols() {
                prop_assert!(czq[(i, j)].abs() <= 1.0);
                prop_assert!((czq[(i, j)] - czq[(j, i)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn quantization_noise_diagonal_and_psd((nt, nr) in dims(), sn in 0.01f64..10.0, seed in any::<u64>()) {
        let c = cfg(nt, nr, sn);
        let mut r = rng(seed);
        let h = rayleigh_channel(&c, &mut r).h_real;
        let b = build_b(&random_network(nr, nr, &mut r).unwrap());
        let cov = CovarianceSet::new(data_covariance(&h, &b, &c), ArcsineMode::Exact).unwrap();
        let nq = cov.quantization_noise();
        for i in 0..nq.nrows() {
            prop_assert!((nq[(i, i)] - (1.0 - FRAC_2_PI)).abs() < 1e-10);
        }
        prop_assert!(min_eigenvalue(&nq) > -1e-9);
    }

    #[test]
    fn comparator_matrix_structure(nr in 1usize..=6, seed in any::<u64>()) {
        let alpha = (seed as usize) % (full_alpha(nr) + 1);
        let net = random_network(nr, alpha, &mut rng(seed)).unwrap();
        let bp = build_b_prime(&net);
        prop_assert_eq!(bp.shape(), (alpha, 2 * nr));
        for row in bp.row_iter() {
            let nz: Vec<f64> = row.iter().copied().filter(|v| *v != 0.0).collect();
            prop_assert_eq!(nz.len(), 2);
            prop_assert!((nz[0] - FRAC_1_SQRT_2).abs() < 1e-15);
            prop_assert!((nz[1] + FRAC_1_SQRT_2).abs() < 1e-15);
        }
        let b = build_b(&net);
        let gram = b.transpose() * &b;
        let want = DMatrix::identity(2 * nr, 2 * nr) + bp.transpose() * &bp;
        prop_assert!((gram - want).amax() < 1e-14);
        let tau = 1 + (seed as usize >> 8) % 3;
        prop_assert_eq!(build_b_eff(&net, tau).shape(), (tau * (2 * nr + alpha), tau * 2 * nr));
    }

    #[test]
    fn real_expansion_round_trip(re in prop::collection::vec(-5.0f64..5.0, 6), im in prop::collection::vec(-5.0f64..5.0, 6)) {
        let h = DMatrix::from_iterator(3, 2, re.iter().zip(&im).map(|(a, b)| Complex64::new(*a, *b)));
        let hr = complex_to_real_channel(&h).unwrap();
        prop_assert_eq!(real_to_complex_channel(&hr).unwrap(), h);
    }

    #[test]
    fn quantizer_outputs_signs(v in prop::collection::vec(-3.0f64..3.0, 1..20)) {
        let q = quantize(&nalgebra::DVector::from_vec(v.clone())).unwrap();
        for (x, s) in v.iter().zip(q.values().iter()) {
            prop_assert_eq!(*s, if *x >= 0.0 { 1.0 } else { -1.0 });
        }
    }

    #[test]
    fn power_model_properties(nr in 0usize..200, alpha in 0usize..500) {
        let p = PowerParams::default();
        prop_assert_eq!(p_comparator_network(nr, 0, &p), p_one_bit(nr, &p));
        prop_assert!(p_comparator_network(nr, alpha, &p) >= p_one_bit(nr, &p));
        let t: Vec<f64> = (1..=8).map(|q| p_traditional(nr, q, &p).unwrap()).collect();
        if nr > 0 {
            prop_assert!(t.windows(2).all(|w| w[1] > w[0]));
        }
    }

    #[test]
    fn greedy_never_increases_mse((nt, nr) in (1usize..=2, 2usize..=4), alpha in 1usize..=6, sn in 0.05f64..2.0, seed in any::<u64>()) {
        let c = cfg(nt, nr, sn);
        let h = rayleigh_channel(&c, &mut rng(seed)).h_real;
        let alpha = alpha.min(full_alpha(nr));
        let tr = greedy_mse_search_traced(&h, alpha, &c).unwrap();
        let mut prev = tr.initial_mse;
        for &m in &tr.accepted {
            prop_assert!(m < prev);
            prev = m;
        }
        prop_assert!(tr.final_mse() <= tr.initial_mse);
        let direct = total_mse(&h, &tr.network, &c).unwrap();
        prop_assert!((direct - tr.final_mse()).abs() < 1e-9 * direct.max(1.0));
    }

    #[test]
    fn perfect_csi_rate_nonnegative((nt, nr) in dims(), sn in 0.01f64..10.0, seed in any::<u64>()) {
        let c = cfg(nt, nr, sn);
        let mut r = rng(seed);
        let h = rayleigh_channel(&c, &mut r).h_real;
        let b = build_b(&random_network(nr, nr, &mut r).unwrap());
        let g = lmmse_detector(&h, &b, &c).unwrap().g;
        prop_assert!(sum_rate_for_channel(&h, &h, &g, &b, &c).unwrap() >= 0.0);
    }

    #[test]
    fn snr_range_is_inclusive(a in -30i32..30, n in 0usize..20, step in 1i32..6) {
        let b = a + n as i32 * step;
        let g = parse_snr_grid(&format!("{a}:{b}:{step}")).unwrap();
        prop_assert_eq!(g.len(), n + 1);
        prop_assert_eq!(g[0], a as f64);
        prop_assert_eq!(g[n], b as f64);
    }

    #[test]
    fn scenario_text_round_trip(
        nt in 1usize..5,
        extra_nr in 0usize..8,
        net_kind in 0usize..5,
        csi_kind in 0usize..3,
        lam in 0.05f64..0.95,
        seed in any::<u64>(),
        snr in prop::collection::vec(-20.0f64..40.0, 1..5),
    ) {
        let nr = nt + extra_nr;
        let a = 1 + seed as usize % full_alpha(nr).max(1);
        let a = a.min(full_alpha(nr));
        let net = ["none".to_string(), format!("random:{a}"), format!("greedy:{a}"), format!("seqsinr:{a}"), "full".to_string()][net_kind].clone();
        let csi = match csi_kind {
            0 => "perfect".to_string(),
            1 if net_kind != 2 && net_kind != 3 => format!("estimated:{}", nt + 1),
            _ => format!("outdated:{lam}"),
        };
        let grid: Vec<String> = snr.iter().map(|s| s.to_string()).collect();
        let text = format!(
            "n_users = {nt}\nn_antennas = {nr}\nnetwork = {net}\ncsi = {csi}\nmetric = ber\nsnr_db = {}\nseed = {seed}\n",
            grid.join(",")
        );
        let s = parse_scenario(&text).unwrap();
        let back = parse_scenario(&s.to_text()).unwrap();
        prop_assert_eq!(back.hash(), s.hash());
        prop_assert_eq!(back, s);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn nested_networks_reduce_estimation_mse(nr in 2usize..=4, sn in 0.01f64..1.0, seed in any::<u64>()) {
        let c = cfg(2, nr, sn);
        let pilots = orthogonal_pilots(&c).unwrap();
        let prior = channel_prior(nr, &[1.0, 1.0]);
        let full = random_network(nr, full_alpha(nr), &mut rng(seed)).unwrap();
        let mut mses = Vec::new();
        for k in 0..=full_alpha(nr) {
            let net = ComparatorNetwork::new(nr, full.pairs()[..k].to_vec()).unwrap();
            let est = LraLmmseEstimator::new(&c, &pilots, &build_b_eff(&net, 2), &prior, sn).unwrap();
            mses.push(est.analytic_mse);
        }
        for w in mses.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9), "{:?}", mses);
        }
    }
}
