use std::path::Path;

use hhsim::bath::{sample_bath_indexed, BathRealization, BathSpec};
use hhsim::experiments::{
    initial_state, run_experiment, run_hh_frequency_sweep, simulate_realization, Execution, ExperimentConfig, Propagator,
    Protocol, SignalTrace, Sweep,
};
use hhsim::pulse::{build_spin_lock, compile, frames_for, parse_sequence, print_sequence, RfSpec};
use hhsim::spin_models::{NvParams, P1Params, SpinSystem};

fn bundled(name: &str) -> ExperimentConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name);
    ExperimentConfig::from_json(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const BUNDLED: [(&str, &str); 5] = [
    ("fig2b_deer_spectrum.json", "rf_frequency_mhz"),
    ("fig2c_deer_rabi.json", "rf_width_us"),
    ("fig3_spinlock.json", "lock_us"),
    ("fig4a_hh_frequency.json", "rf_frequency_mhz"),
    ("fig4b_hh_power.json", "rf_omega_mhz"),
];

#[test]
fn bundled_configs_round_trip_and_run_small() {
    for (name, parameter) in BUNDLED {
        let cfg = bundled(name);
        assert_eq!(cfg.sweep.parameter, parameter, "{name}");
        assert_eq!(ExperimentConfig::from_json(&cfg.to_json().unwrap()).unwrap(), cfg);

        let mut small = cfg.clone();
        small.n_realizations = 2;
        let points = cfg.sweep.points().unwrap();
        small.sweep = Sweep::list(parameter, points.iter().step_by(points.len() / 4).copied().collect());
        let traces = run_experiment(&small, Execution::Sequential).unwrap();
        assert_eq!(traces.len(), if cfg.with_rf_off_reference { 2 } else { 1 });
        for (_, t) in &traces {
            assert!(t.mean.iter().all(|v| (-1e-9..=1.0 + 1e-9).contains(v)), "{name}: {:?}", t.mean);
            let back = SignalTrace::from_csv(&t.to_csv(), parameter).unwrap();
            assert_eq!(back.mean, t.mean);
        }
    }
}

#[test]
fn hh_frequency_sweep_dips_on_p1_lines() {
    let mut cfg = bundled("fig4a_hh_frequency.json");
    cfg.n_realizations = 12;
    let center = cfg.p1.gamma_mhz_per_gauss * cfg.b0_gauss;
    cfg.sweep = Sweep::list("rf_frequency_mhz", vec![center - 50.0, center, center + 50.0]);
    let t = run_hh_frequency_sweep(&cfg, Execution::Sequential).unwrap();
    // Driving the central line depolarizes the locked NV; far from any line it does not.
    assert!(t.mean[1] < t.mean[0] - 0.05, "{:?}", t.mean);
    assert!(t.mean[1] < t.mean[2] - 0.05, "{:?}", t.mean);
}

#[test]
fn printed_program_compiles_like_the_builder() {
    let spec = BathSpec { seed: 4, ..Default::default() };
    let bath = sample_bath_indexed(&spec, 3).unwrap();
    let sys = SpinSystem::from_realization(128.0, NvParams::default(), P1Params::default(), &bath).unwrap();
    let built = build_spin_lock(sys.nominal_frequency("nv").unwrap(), 8.0, 7.5, Some(&RfSpec::single(358.4, 8.0))).unwrap();
    let parsed = parse_sequence(&print_sequence(&built)).unwrap();
    assert_eq!(parsed, built);

    let run = |s| {
        let c = compile(s, &sys, &frames_for(s, &sys).unwrap()).unwrap();
        Propagator::new().sweep(&initial_state(&sys).unwrap(), &[c]).unwrap()[0]
    };
    assert_eq!(run(&built), run(&parsed));
}

#[test]
fn saved_bath_reproduces_the_signal() {
    let cfg = bundled("fig3_spinlock.json");
    let bath = sample_bath_indexed(&cfg.bath, 7).unwrap();
    let restored = BathRealization::from_json(&bath.to_json().unwrap()).unwrap();
    assert_eq!(restored, bath);

    let seq = cfg.sequence_at(20.0).unwrap();
    let direct = simulate_realization(&cfg, &[(seq.clone(), 1.0)], 7).unwrap()[0];
    let sys = SpinSystem::from_realization(cfg.b0_gauss, cfg.nv, cfg.p1, &restored).unwrap();
    let compiled = compile(&seq, &sys, &frames_for(&seq, &sys).unwrap()).unwrap();
    let again = Propagator::new().sweep(&initial_state(&sys).unwrap(), &[compiled]).unwrap()[0];
    assert!((direct - again).abs() < 1e-12);
    assert!(matches!(cfg.protocol, Protocol::SpinLock(_)));
}
