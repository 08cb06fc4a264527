//! Monte Carlo checks against published curve values at desk scale.

use cnmimo::channel::ChannelModel;
use cnmimo::estimator::kappa;
use cnmimo::harness::{run_sweep, CsiMode, DetectorMode, Metric, Scenario};
use cnmimo::model::{full_alpha, SystemConfig};
use cnmimo::netdesign::NetworkDesign;
use cnmimo::channel::sigma_n2_for_snr;
use cnmimo::rates::{
    analytic_mf_rate, analytic_mf_rate_perfect_csi, sum_rate_monte_carlo, RateReceiver,
    SumRateSetup,
};

fn setup(nt: usize, nr: usize, network: NetworkDesign, estimated: bool, snr_db: f64) -> SumRateSetup {
    SumRateSetup {
        cfg: SystemConfig::new(nt, nr, 1.0, 1.0, nt).unwrap(),
        channel: ChannelModel::Rayleigh,
        network,
        estimated_csi: estimated,
        receiver: RateReceiver::Lmmse,
        snr_db,
    }
}

fn within(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want
}

#[test]
fn perfect_csi_sum_rate_3x8() {
    for (net, want) in [(NetworkDesign::None, 6.2223), (NetworkDesign::Full, 9.6594)] {
        let r = sum_rate_monte_carlo(&setup(3, 8, net, false, 30.0), 300, 50, 11).unwrap();
        assert!(within(r.mean, want, 0.05), "{net:?}: {} vs {want}", r.mean);
        assert!(r.ci95.0 < r.mean && r.mean < r.ci95.1);
    }
}

#[test]
fn perfect_csi_sum_rate_saturates() {
    let s = setup(3, 8, NetworkDesign::None, false, 25.0);
    let a = sum_rate_monte_carlo(&s, 300, 50, 5).unwrap().mean;
    let b = sum_rate_monte_carlo(&SumRateSetup { snr_db: 30.0, ..s }, 300, 50, 5).unwrap().mean;
    assert!(((b - a) / a).abs() < 0.01, "{a} -> {b}");
}

#[test]
fn imperfect_csi_sum_rate_3x16() {
    // N_r = 16 family of the imperfect-CSI curves (no network 5.9830, full 9.9725).
    for (net, want) in [(NetworkDesign::None, 5.9830), (NetworkDesign::Full, 9.9725)] {
        let n = if net == NetworkDesign::Full { 100 } else { 300 };
        let r = sum_rate_monte_carlo(&setup(3, 16, net, true, 30.0), n, 50, 12).unwrap();
        assert!(within(r.mean, want, 0.07), "{net:?}: {} vs {want}", r.mean);
    }
}

#[test]
fn matched_filter_closed_form_tracks_monte_carlo() {
    let nr = 16;
    for alpha_net in [NetworkDesign::None, NetworkDesign::Full] {
        for estimated in [true, false] {
            let s = SumRateSetup {
                receiver: RateReceiver::MatchedFilter,
                ..setup(3, nr, alpha_net, estimated, 0.0)
            };
            let mc = sum_rate_monte_carlo(&s, 200, 1, 13).unwrap().mean;
            let c = s.cfg.with_sigma_n2(sigma_n2_for_snr(&s.cfg, 0.0, (3 * nr) as f64));
            let alpha = alpha_net.alpha(nr);
            let per_stream = if estimated {
                analytic_mf_rate(&c, alpha, kappa(&c, alpha))
            } else {
                analytic_mf_rate_perfect_csi(&c, alpha)
            };
            let closed = 2.0 * 3.0 * per_stream;
            assert!(within(closed, mc, 0.25), "{alpha_net:?} est={estimated}: {closed} vs {mc}");
        }
    }
    assert_eq!(full_alpha(nr), 496);
}

#[test]
fn ber_floor_without_network_4x16() {
    let s = Scenario {
        cfg: SystemConfig::new(4, 16, 1.0, 1.0, 4).unwrap(),
        channel: ChannelModel::Rayleigh,
        network: NetworkDesign::None,
        csi: CsiMode::Perfect,
        detector: DetectorMode::Lmmse,
        metric: Metric::Ber,
        snr_grid_db: vec![30.0, 60.0],
        n_channels: 300,
        n_noise: 100,
        master_seed: 21,
        paper_n_channels: None,
        paper_n_noise: None,
    };
    let r = run_sweep(&s).unwrap();
    for row in &r.rows {
        // published floor 0.0051
        assert!(row.value > 0.0025 && row.value < 0.0102, "{row:?}");
    }
}

#[test]
fn analytic_mse_4x16() {
    let mut s = Scenario {
        cfg: SystemConfig::new(4, 16, 1.0, 1.0, 4).unwrap(),
        channel: ChannelModel::Rayleigh,
        network: NetworkDesign::None,
        csi: CsiMode::Estimated(4),
        detector: DetectorMode::Lmmse,
        metric: Metric::MseAnalytic,
        snr_grid_db: vec![30.0],
        n_channels: 1,
        n_noise: 1,
        master_seed: 0,
        paper_n_channels: None,
        paper_n_noise: None,
    };
    let v = run_sweep(&s).unwrap().rows[0].value;
    assert!(within(v, 23.27, 0.02), "{v}");
    s.network = NetworkDesign::Random(32);
    s.n_channels = 50;
    let v = run_sweep(&s).unwrap().rows[0].value;
    assert!(within(v, 17.5, 0.05), "{v}");
}
