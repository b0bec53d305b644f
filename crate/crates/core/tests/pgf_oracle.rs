//! Service-time moments from the jets against finite differences of the
//! scalar generating function.

mod support;

#[test]
fn jet_moments_match_finite_differences() {
    let (worst, at) = support::worst_pgf_deviation();
    assert!(worst < 1e-5, "{worst:e} at {at}");
}

#[test]
fn isolated_ac0_oracle() {
    let sc = platoonx::scenario::load_scenario(support::TABLE2).unwrap();
    let (mean, var) = support::pgf_moments(&sc, 0, 0.0, 0.0, 172.5e-6);
    assert!((mean - 172.5e-6).abs() < 1e-12);
    // uniform over 4 slots: (W² − 1)/12 slots²
    assert!((var - 1.25 * 13e-6 * 13e-6).abs() < 1e-15);
}
