//! Analytical 802.11p EDCA model. Service-time generating functions are
//! carried as second-order jets at z = 1, and the per-vehicle transmission
//! probabilities are found by fixed-point iteration.
//!
//! Jets are built with time exponents in microseconds; means and variances
//! are converted back to seconds on the way out.

pub mod jet;

use serde::Serialize;
use thiserror::Error;

pub use jet::Jet2;

use crate::scenario::{AcParams, PhyParams, Scenario, NUM_ACS};

const MICROS: f64 = 1e6;
const MAX_BUSY: f64 = 1.0 - 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EdcaError {
    #[error("channel busy probability {0} leaves no idle slot to count down")]
    DivergentFreeze(f64),
    #[error("fixed point did not converge in {iterations} iterations (rho {previous:?} -> {last:?})")]
    NonConvergence {
        iterations: usize,
        previous: [f64; NUM_ACS],
        last: [f64; NUM_ACS],
    },
}

/// Transmission time of one packet, seconds.
pub fn transmission_time(phy: &PhyParams) -> f64 {
    phy.phy_header_bits / phy.basic_rate + (phy.mac_header_bits + phy.payload_bits) / phy.data_rate + phy.propagation
}

/// Jet of the per-slot countdown time H(z) = (1 − p_b)z^δ / (1 − p_b·z^F),
/// with F the freeze time. Times share one unit.
pub fn jet_h(p_b: f64, slot: f64, freeze: f64) -> Result<Jet2, EdcaError> {
    if !(p_b < 1.0) {
        return Err(EdcaError::DivergentFreeze(p_b));
    }
    let num = Jet2::power_of_z(slot).scale(1.0 - p_b);
    let den = Jet2::ONE + Jet2::power_of_z(freeze).scale(-p_b);
    Ok(num.div(den))
}

/// Jet of the backoff time for a window of `w` slots.
pub fn jet_b(w: u32, h: Jet2) -> Jet2 {
    h.uniform_power_mean(w)
}

/// Jet of the service time. `backoffs[j]` is the backoff jet of the j-th
/// retransmission; AC0 uses only `backoffs[0]`.
pub fn jet_service(m: usize, p_v: f64, backoffs: &[Jet2], t_tr: f64) -> Jet2 {
    let tx = Jet2::power_of_z(t_tr);
    if m == 0 {
        return backoffs[0] * tx;
    }
    let mut cumulative = Jet2::ONE;
    let mut weight = 1.0;
    let mut attempts = Jet2::constant(0.0);
    for b in backoffs {
        cumulative = cumulative * *b;
        attempts = attempts + cumulative.scale(weight);
        weight *= p_v;
    }
    // weight is now p_v^(M^l + 1)
    (tx * attempts).scale(1.0 - p_v) + cumulative.scale(weight)
}

/// Probability that a higher-priority AC of the same vehicle transmits.
pub fn prob_internal_collision(m: usize, w: &[f64; NUM_ACS]) -> f64 {
    1.0 - w[..m].iter().map(|wn| 1.0 - wn).product::<f64>()
}

/// Probability that AC `m` senses the channel busy.
pub fn prob_busy(m: usize, tau: f64, w: &[f64; NUM_ACS], n_c: usize, a_m: u32) -> f64 {
    let others = (1.0 - tau).powi(n_c.saturating_sub(1) as i32);
    let own: f64 = (0..NUM_ACS).filter(|&n| n != m).map(|n| 1.0 - w[n]).product();
    1.0 - (others * own).powi(a_m as i32 + 1)
}

/// Probability that at least one packet arrives within one slot.
pub fn prob_arrival(lambda: f64, slot: f64) -> f64 {
    -(-lambda * slot).exp_m1()
}

/// Σ_{i=0}^{n-1} x^i.
fn geometric(x: f64, n: u32) -> f64 {
    let mut sum = 0.0;
    let mut term = 1.0;
    for _ in 0..n {
        sum += term;
        term *= x;
    }
    sum
}

/// Probability that the backoff counter of AC `m` reaches zero in a slot.
pub fn internal_w(m: usize, p_b: f64, p_v: f64, rho: f64, p_a: f64, ac: &AcParams) -> f64 {
    let w0 = f64::from(ac.cw_min + 1);
    let idle = (1.0 - rho) / p_a;
    if m == 0 {
        return 1.0 / ((w0 + 1.0) / (2.0 * (1.0 - p_b)) + idle);
    }
    let big_m = ac.doubling_limit;
    let limit = ac.retry_limit();
    let attempts = geometric(p_v, limit + 1);
    let doubling = geometric(2.0 * p_v, big_m);
    let tail = 2f64.powi(big_m as i32 - 1) * w0 * p_v.powi(limit as i32 + 1) * geometric(p_v, limit - big_m);
    let bracket =
        attempts + (w0 - 1.0) / (2.0 * (1.0 - p_b)) + w0 * p_v * doubling / (1.0 - p_b) + idle + tail / (1.0 - p_b);
    attempts / bracket
}

/// External transmission probabilities per AC and their sum.
pub fn external_tau(w: &[f64; NUM_ACS]) -> ([f64; NUM_ACS], f64) {
    let mut tau = [0.0; NUM_ACS];
    let mut idle_above = 1.0;
    for m in 0..NUM_ACS {
        tau[m] = w[m] * idle_above;
        idle_above *= 1.0 - w[m];
    }
    (tau, tau.iter().sum())
}

/// Converged quantities of one access category.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AcMoments {
    /// Mean service time, s.
    pub t: f64,
    /// Service-time variance, s².
    pub sigma2: f64,
    /// Squared coefficient of variation.
    pub c2: f64,
    pub rho: f64,
    pub p_b: f64,
    pub p_v: f64,
    pub w: f64,
    pub tau_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ServiceMoments {
    pub acs: [AcMoments; NUM_ACS],
    /// Total transmission probability of the vehicle.
    pub tau: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointConfig {
    pub epsilon: f64,
    pub max_iter: usize,
    /// Weight of the new iterate; 1 is the plain iteration.
    pub damping: f64,
    pub rho_init: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            epsilon: 1e-6,
            max_iter: 500,
            damping: 1.0,
            rho_init: 0.5,
        }
    }
}

/// Scenario constants of the access model, times in microseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct EdcaModel {
    pub acs: [AcParams; NUM_ACS],
    slot_us: f64,
    t_tr_us: f64,
    aifs_us: [f64; NUM_ACS],
    /// A_m = AIFSN_m − AIFSN_0.
    pub extra_slots: [u32; NUM_ACS],
    p_a: [f64; NUM_ACS],
}

impl EdcaModel {
    pub fn new(acs: [AcParams; NUM_ACS], phy: &PhyParams) -> Self {
        EdcaModel {
            acs,
            slot_us: phy.slot * MICROS,
            t_tr_us: transmission_time(phy) * MICROS,
            aifs_us: acs.map(|ac| ac.aifs(phy) * MICROS),
            extra_slots: acs.map(|ac| ac.aifsn.saturating_sub(acs[0].aifsn)),
            p_a: acs.map(|ac| prob_arrival(ac.lambda, phy.slot)),
        }
    }

    pub fn from_scenario(s: &Scenario) -> Self {
        Self::new(s.acs, &s.phy)
    }

    pub fn transmission_time(&self) -> f64 {
        self.t_tr_us / MICROS
    }

    pub fn arrival_probability(&self, m: usize) -> f64 {
        self.p_a[m]
    }

    /// Service-time jet of AC `m` in microseconds.
    pub fn service_jet(&self, m: usize, p_b: f64, p_v: f64) -> Result<Jet2, EdcaError> {
        let h = jet_h(p_b, self.slot_us, self.t_tr_us + self.aifs_us[m])?;
        let ac = &self.acs[m];
        let retries = if m == 0 { 0 } else { ac.retry_limit() };
        let backoffs: Vec<Jet2> = (0..=retries).map(|j| jet_b(ac.window_unchecked(j), h)).collect();
        Ok(jet_service(m, p_v, &backoffs, self.t_tr_us))
    }

    /// Mean (s) and variance (s²) of the service time of AC `m`.
    pub fn service_moments(&self, m: usize, p_b: f64, p_v: f64) -> Result<(f64, f64), EdcaError> {
        let jet = self.service_jet(m, p_b, p_v)?;
        Ok((jet.mean() / MICROS, jet.variance() / (MICROS * MICROS)))
    }

    /// Iterate ρ → (w, p_v, τ, p_b) → T → ρ until the utilizations settle.
    pub fn solve_fixed_point(&self, n_c: usize, cfg: &FixedPointConfig) -> Result<ServiceMoments, EdcaError> {
        let mut rho = [cfg.rho_init; NUM_ACS];
        let mut p_b = [0.0; NUM_ACS];
        let mut p_v = [0.0; NUM_ACS];
        let mut w = [0.0; NUM_ACS];
        let mut t = [0.0; NUM_ACS];
        for iter in 1..=cfg.max_iter {
            for m in 0..NUM_ACS {
                w[m] = internal_w(m, p_b[m], p_v[m], rho[m], self.p_a[m], &self.acs[m]);
            }
            let (_, tau) = external_tau(&w);
            let mut new_p_b = [0.0; NUM_ACS];
            let mut new_p_v = [0.0; NUM_ACS];
            for m in 0..NUM_ACS {
                new_p_v[m] = prob_internal_collision(m, &w);
                // a channel that is never idle makes the countdown diverge
                new_p_b[m] = prob_busy(m, tau, &w, n_c, self.extra_slots[m]).min(MAX_BUSY);
                debug_assert!((0.0..=1.0).contains(&new_p_b[m]) && (0.0..=1.0).contains(&new_p_v[m]));
            }
            let mut new_rho = [0.0; NUM_ACS];
            for m in 0..NUM_ACS {
                t[m] = self.service_jet(m, new_p_b[m], new_p_v[m])?.mean() / MICROS;
                let target = (self.acs[m].lambda * t[m]).min(1.0);
                new_rho[m] = (1.0 - cfg.damping) * rho[m] + cfg.damping * target;
            }
            let change = (0..NUM_ACS)
                .map(|m| {
                    (new_rho[m] - rho[m])
                        .abs()
                        .max((new_p_b[m] - p_b[m]).abs())
                        .max((new_p_v[m] - p_v[m]).abs())
                })
                .fold(0.0, f64::max);
            let previous = rho;
            rho = new_rho;
            p_b = new_p_b;
            p_v = new_p_v;
            if change < cfg.epsilon {
                return self.finish(rho, p_b, p_v, iter);
            }
            if iter == cfg.max_iter {
                return Err(EdcaError::NonConvergence {
                    iterations: iter,
                    previous,
                    last: rho,
                });
            }
        }
        Err(EdcaError::NonConvergence {
            iterations: 0,
            previous: rho,
            last: rho,
        })
    }

    fn finish(
        &self,
        rho: [f64; NUM_ACS],
        p_b: [f64; NUM_ACS],
        p_v: [f64; NUM_ACS],
        iterations: usize,
    ) -> Result<ServiceMoments, EdcaError> {
        let mut w = [0.0; NUM_ACS];
        for m in 0..NUM_ACS {
            w[m] = internal_w(m, p_b[m], p_v[m], rho[m], self.p_a[m], &self.acs[m]);
        }
        let (tau_m, tau) = external_tau(&w);
        let mut acs = [AcMoments {
            t: 0.0,
            sigma2: 0.0,
            c2: 0.0,
            rho: 0.0,
            p_b: 0.0,
            p_v: 0.0,
            w: 0.0,
            tau_m: 0.0,
        }; NUM_ACS];
        for m in 0..NUM_ACS {
            let (t, sigma2) = self.service_moments(m, p_b[m], p_v[m])?;
            acs[m] = AcMoments {
                t,
                sigma2,
                c2: sigma2 / (t * t),
                rho: rho[m],
                p_b: p_b[m],
                p_v: p_v[m],
                w: w[m],
                tau_m: tau_m[m],
            };
        }
        Ok(ServiceMoments { acs, tau, iterations })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::tests::table2;
    use proptest::prelude::*;

    fn model() -> EdcaModel {
        EdcaModel::from_scenario(&table2())
    }

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs().max(1e-300)
    }

    #[test]
    fn transmission_time_examples() {
        let phy = table2().phy;
        assert!((transmission_time(&phy) - 153e-6).abs() < 1e-15);
        let empty = PhyParams {
            propagation: 0.0,
            phy_header_bits: 0.0,
            mac_header_bits: 0.0,
            payload_bits: 0.0,
            ..phy
        };
        assert_eq!(transmission_time(&empty), 0.0);
        let double = PhyParams {
            payload_bits: 2.0 * phy.payload_bits,
            ..phy
        };
        let extra = transmission_time(&double) - transmission_time(&phy);
        assert!((extra - phy.payload_bits / phy.data_rate).abs() < 1e-18);
    }

    #[test]
    fn countdown_jet() {
        let h = jet_h(0.0, 13.0, 211.0).unwrap();
        assert_eq!(h.mean(), 13.0);
        assert!(h.variance().abs() < 1e-9);
        let h = jet_h(0.5, 13.0, 211.0).unwrap();
        assert!((h.mean() - 224.0).abs() < 1e-9);
        assert!((h.value - 1.0).abs() < 1e-12);
        assert!(matches!(jet_h(1.0, 13.0, 211.0), Err(EdcaError::DivergentFreeze(_))));

        // numerical derivative of the scalar function
        let f = |z: f64| 0.5 * z.powf(13.0) / (1.0 - 0.5 * z.powf(211.0));
        let step = 1e-6;
        let numeric = (f(1.0 + step) - f(1.0 - step)) / (2.0 * step);
        assert!(rel(numeric, 224.0) < 1e-6);
    }

    #[test]
    fn backoff_jet() {
        let h = jet_h(0.0, 13.0, 211.0).unwrap();
        assert!((jet_b(4, h).mean() - 19.5).abs() < 1e-12);
        assert_eq!(jet_b(1, h), Jet2::ONE);

        // brute-force average over the four equally likely counter values
        let h = jet_h(0.3, 13.0, 211.0).unwrap();
        let mut second = 0.0;
        let mut mean = 0.0;
        for n in 0..4 {
            let n = n as f64;
            mean += n * h.d1 / 4.0;
            second += (n * (n - 1.0) * h.d1 * h.d1 + n * h.d2) / 4.0;
        }
        let b = jet_b(4, h);
        assert!(rel(b.d1, mean) < 1e-12);
        assert!(rel(b.d2, second) < 1e-12);
    }

    #[test]
    fn service_jet_examples() {
        let m = model();
        let (t, _) = m.service_moments(0, 0.0, 0.0).unwrap();
        assert!((t - 172.5e-6).abs() < 1e-15, "{t}");

        // without internal collisions only the first attempt matters
        for ac in 1..NUM_ACS {
            let h = jet_h(0.2, 13.0, 153.0 + m.aifs_us[ac]).unwrap();
            let single = jet_b(m.acs[ac].cw_min + 1, h) * Jet2::power_of_z(153.0);
            let jet = m.service_jet(ac, 0.2, 0.0).unwrap();
            assert!(rel(jet.d1, single.d1) < 1e-12);
            assert!(rel(jet.d2, single.d2) < 1e-12);
        }

        // nearly certain internal collisions: every attempt is dropped
        let h = jet_h(0.0, 13.0, 1.0).unwrap();
        let b0 = jet_b(4, h);
        let b1 = jet_b(8, h);
        let eps = 1e-6;
        let jet = jet_service(1, 1.0 - eps, &[b0, b1], 153.0);
        assert!(rel(jet.mean(), b0.mean() + b1.mean()) < 1e-3);
    }

    #[test]
    fn service_jets_are_normalized() {
        let m = model();
        for ac in 0..NUM_ACS {
            for pb in [0.0, 0.3, 0.9] {
                for pv in [0.0, 0.5, 0.9] {
                    let pv = if ac == 0 { 0.0 } else { pv };
                    let jet = m.service_jet(ac, pb, pv).unwrap();
                    assert!((jet.value - 1.0).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn probability_examples() {
        assert_eq!(prob_internal_collision(0, &[0.9, 0.9, 0.9, 0.9]), 0.0);
        assert!((prob_internal_collision(1, &[0.4, 0.0, 0.0, 0.0]) - 0.4).abs() < 1e-15);
        assert!((prob_internal_collision(3, &[0.1, 0.1, 0.1, 0.0]) - 0.271).abs() < 1e-12);

        assert_eq!(prob_busy(2, 0.3, &[0.0; 4], 1, 4), 0.0);
        assert!((prob_busy(0, 0.1, &[0.0; 4], 2, 0) - 0.1).abs() < 1e-15);
        assert_eq!(model().extra_slots, [0, 1, 4, 7]);

        let x: f64 = 20.0 * 13e-6;
        assert!((prob_arrival(20.0, 13e-6) - (x - x * x / 2.0 + x * x * x / 6.0)).abs() < 1e-15);
        assert!((prob_arrival(20.0, 13e-6) - 2.59966e-4).abs() < 1e-9);
        assert!(prob_arrival(1e-12, 13e-6) < 1e-15);
        assert!((prob_arrival(1e9, 13e-6) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn internal_w_examples() {
        let s = table2();
        assert!((internal_w(0, 0.0, 0.0, 1.0, 0.01, &s.acs[0]) - 0.4).abs() < 1e-15);
        assert!(internal_w(0, 0.0, 0.0, 0.0, 1e-12, &s.acs[0]) < 1e-11);
        let (pb, rho, pa) = (0.2, 0.3, 1e-3);
        let w1 = f64::from(s.acs[1].cw_min + 1);
        let expect = 1.0 / (1.0 + (w1 - 1.0) / (2.0 * (1.0 - pb)) + (1.0 - rho) / pa);
        assert!(rel(internal_w(1, pb, 0.0, rho, pa, &s.acs[1]), expect) < 1e-14);
    }

    #[test]
    fn internal_w_has_no_pole_at_half() {
        let s = table2();
        let ac = &s.acs[3];
        let at = internal_w(3, 0.1, 0.5, 0.5, 1e-3, ac);
        let near = internal_w(3, 0.1, 0.5 + 1e-9, 0.5, 1e-3, ac);
        assert!(at.is_finite() && rel(at, near) < 1e-6);
    }

    #[test]
    fn tau_examples() {
        assert_eq!(external_tau(&[1.0; 4]), ([1.0, 0.0, 0.0, 0.0], 1.0));
        let (t, total) = external_tau(&[0.0, 0.0, 0.0, 0.3]);
        assert_eq!(t[3], 0.3);
        assert_eq!(total, 0.3);
        let (t, total) = external_tau(&[0.4, 0.4, 0.0, 0.0]);
        assert!((t[1] - 0.24).abs() < 1e-15 && (total - 0.64).abs() < 1e-15);
    }

    #[test]
    fn isolated_vehicle_orders_service_times() {
        let sol = model().solve_fixed_point(1, &FixedPointConfig::default()).unwrap();
        for m in 1..NUM_ACS {
            assert!(sol.acs[m - 1].t < sol.acs[m].t);
        }
        assert_eq!(sol.acs[0].p_v, 0.0);
    }

    #[test]
    fn light_load_reaches_unsaturated_floor() {
        let mut s = table2();
        for ac in &mut s.acs {
            ac.lambda *= 1e-6;
        }
        let model = EdcaModel::from_scenario(&s);
        let sol = model.solve_fixed_point(10, &FixedPointConfig::default()).unwrap();
        for m in 0..NUM_ACS {
            assert!(sol.acs[m].rho < 1e-6);
            let (t, _) = model.service_moments(m, sol.acs[m].p_b, sol.acs[m].p_v).unwrap();
            assert_eq!(t, sol.acs[m].t);
            assert!(sol.acs[m].p_b < 1e-6);
        }
        assert!((sol.acs[0].t - 172.5e-6).abs() < 1e-9);
    }

    #[test]
    fn damping_reaches_same_fixed_point() {
        let m = model();
        let plain = m.solve_fixed_point(72, &FixedPointConfig::default()).unwrap();
        let damped = m
            .solve_fixed_point(
                72,
                &FixedPointConfig {
                    damping: 0.5,
                    ..FixedPointConfig::default()
                },
            )
            .unwrap();
        for ac in 0..NUM_ACS {
            assert!(rel(plain.acs[ac].t, damped.acs[ac].t) < 1e-5);
        }
    }

    #[test]
    fn repeated_solves_identical() {
        let m = model();
        let cfg = FixedPointConfig::default();
        assert_eq!(m.solve_fixed_point(40, &cfg), m.solve_fixed_point(40, &cfg));
    }

    proptest! {
        #[test]
        fn service_time_grows_with_busy_probability(pv in 0.0f64..0.9, ac in 0usize..NUM_ACS) {
            let m = model();
            let pv = if ac == 0 { 0.0 } else { pv };
            let mut last = 0.0;
            for i in 0..10 {
                let pb = i as f64 * 0.099;
                let (t, var) = m.service_moments(ac, pb, pv).unwrap();
                prop_assert!(t >= last);
                prop_assert!(var >= 0.0);
                last = t;
            }
        }

        #[test]
        fn probabilities_stay_in_unit_interval(n_c in 1usize..100, scale in 0.1f64..2.0) {
            let mut s = table2();
            for ac in &mut s.acs {
                ac.lambda *= scale;
            }
            let sol = EdcaModel::from_scenario(&s).solve_fixed_point(n_c, &FixedPointConfig::default()).unwrap();
            prop_assert!(sol.tau <= 1.0);
            for a in &sol.acs {
                for p in [a.rho, a.p_b, a.p_v, a.w, a.tau_m] {
                    prop_assert!((0.0..=1.0).contains(&p));
                }
                prop_assert!(a.t > 0.0);
            }
        }
    }
}
