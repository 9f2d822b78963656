use relctl::dyson::assemble;
use relctl::kinematics::crossing_time;
use relctl::observables::{delta_angles, purity};
use relctl::SimulationConfig;

#[test]
fn toml_through_assembly() {
    let c = SimulationConfig::from_toml(
        "[probe]\na = 0.5\nT = 1.2\n\n[target]\ntheta = 1.1\nphi = 0.3\n\n[field]\nalpha_re = 0.4\n",
    )
    .unwrap();
    let vc = c.validate().unwrap();
    let r = assemble(&vc).unwrap();
    let m = r.state.matrix();
    assert!((m.trace().re - 1.0).abs() < 1e-12);
    assert!((m - m.adjoint()).norm() < 1e-14);
    assert!(purity(&r.state) <= 1.0 + 1e-12);
    let (dt, dp) = delta_angles(&r.initial, &r.state).unwrap();
    assert!(dt.abs() > 0.0 && dp.abs() > 0.0);
    assert!(dt.abs() < 0.1 && dp.abs() < 0.1);
}

#[test]
fn full_crossing_uses_the_exit_time() {
    let c = SimulationConfig::from_toml("[cavity]\nlength = 1.0\n\n[probe]\na = 2.0\nfull_crossing = true\n").unwrap();
    let vc = c.validate().unwrap();
    assert_eq!(vc.flight_time, crossing_time(2.0, 1.0));
    assert!(assemble(&vc).is_ok());
}

#[test]
fn missing_flight_time_is_rejected() {
    let c = SimulationConfig::from_toml("[probe]\na = 1.0\n").unwrap();
    let e = c.validate().unwrap_err();
    assert!(e.to_string().contains("probe.T"), "{e}");
}
