//! Oracles shared by the integration tests and the acceptance suite.

#![allow(dead_code)]

use std::f64::consts::{FRAC_PI_2, PI};

use platoonx::edca::{transmission_time, EdcaModel};
use platoonx::kinematics::{simulate_movement, LanePath, Regime, Trajectory};
use platoonx::scenario::{load_scenario, AcParams, Lane, Phase, Scenario};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const TABLE2: &str = include_str!("../../../../scenarios/table2.json");

// ---------------------------------------------------------------------------
// Service-time generating function
//
// K(s) = ln P(e^s) has the mean and the variance as its first two
// derivatives at 0. Every factor is carried as f − 1 so that K keeps full
// relative precision for the tiny s used by central differences.
// ---------------------------------------------------------------------------

/// d ↦ (1 + d)^k − 1
fn pow_dev(d: f64, k: f64) -> f64 {
    (k * d.ln_1p()).exp_m1()
}

/// (1 + a)(1 + b) − 1
fn mul_dev(a: f64, b: f64) -> f64 {
    a + b + a * b
}

/// H(e^s) − 1 with H(z) = (1 − p_b) z^δ / (1 − p_b z^F).
fn h_dev(s: f64, p_b: f64, slot: f64, freeze: f64) -> f64 {
    ((1.0 - p_b) * (s * slot).exp_m1() + p_b * (s * freeze).exp_m1()) / (1.0 - p_b * (s * freeze).exp())
}

/// B(e^s) − 1 for a uniform draw from W slots.
fn b_dev(h: f64, w: u32) -> f64 {
    (0..w).map(|k| pow_dev(h, k as f64)).sum::<f64>() / w as f64
}

fn window(ac: &AcParams, j: u32) -> u32 {
    ac.contention_window(j).unwrap()
}

/// P(e^s) − 1 of the service time of AC m, times in seconds.
fn service_dev(s: f64, sc: &Scenario, m: usize, p_b: f64, p_v: f64) -> f64 {
    let ac = &sc.acs[m];
    let t_tr = transmission_time(&sc.phy);
    let h = h_dev(s, p_b, sc.phy.slot, t_tr + sc.aifs(m));
    let tx = (s * t_tr).exp_m1();
    if m == 0 {
        return mul_dev(b_dev(h, window(ac, 0)), tx);
    }
    // (1 − p_v) Σ_j p_v^j z^T_tr Π_{i≤j} B_i + p_v^(L+1) Π_{i≤L} B_i,
    // whose weights sum to one
    let limit = ac.retry_limit();
    let mut backoff = 0.0;
    let mut total = 0.0;
    for j in 0..=limit {
        backoff = mul_dev(backoff, b_dev(h, window(ac, j)));
        total += (1.0 - p_v) * p_v.powi(j as i32) * mul_dev(backoff, tx);
    }
    total + p_v.powi(limit as i32 + 1) * backoff
}

/// Mean and variance from central differences of K, taken in a time unit
/// of `unit` seconds.
pub fn pgf_moments(sc: &Scenario, m: usize, p_b: f64, p_v: f64, unit: f64) -> (f64, f64) {
    let h = 1e-5;
    let k = |x: f64| service_dev(x / unit, sc, m, p_b, p_v).ln_1p();
    let (kp, k0, km) = (k(h), k(0.0), k(-h));
    let mean = (kp - km) / (2.0 * h);
    let var = (kp - 2.0 * k0 + km) / (h * h);
    (mean * unit, var * unit * unit)
}

/// Largest relative deviation between jet and finite-difference moments over
/// every AC and (p_b, p_v) on a 0.1 grid of [0, 0.9]².
pub fn worst_pgf_deviation() -> (f64, String) {
    let sc = load_scenario(TABLE2).unwrap();
    let model = EdcaModel::from_scenario(&sc);
    let grid: Vec<f64> = (0..10).map(|i| i as f64 * 0.1).collect();
    let mut worst = (0.0, String::new());
    for m in 0..4 {
        for &p_b in &grid {
            for &p_v in &grid {
                let (mean, var) = model.service_moments(m, p_b, p_v).unwrap();
                // differences are taken in a unit close to the mean
                let (o_mean, o_var) = pgf_moments(&sc, m, p_b, p_v, mean);
                for (what, e) in [("mean", (mean - o_mean) / o_mean), ("variance", (var - o_var) / o_var)] {
                    if e.abs() > worst.0 {
                        worst = (e.abs(), format!("AC{m} {what} at p_b {p_b:.1}, p_v {p_v:.1}"));
                    }
                }
            }
        }
    }
    worst
}

// ---------------------------------------------------------------------------
// Movement battery
// ---------------------------------------------------------------------------

/// The table2 scenario with the seed, the light split and the offsets drawn from `seed`.
pub fn randomized_scenario(seed: u64) -> Scenario {
    let mut doc: serde_json::Value = serde_json::from_str(TABLE2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    doc["run"]["rng_seed"] = seed.into();
    // offsets lie within the initial phase: 30 s green, 150 s red
    doc["lights"]["phase_offset"] = rng.gen_range(0.0..30.0).into();
    let red = if rng.gen_bool(0.5) {
        ["north", "south"]
    } else {
        ["east", "west"]
    };
    let mut approaches = serde_json::Map::new();
    for a in red {
        approaches.insert(
            a.into(),
            serde_json::json!({"initial_phase": "red", "phase_offset": rng.gen_range(0.0..150.0)}),
        );
    }
    doc["lights"]["approaches"] = approaches.into();
    // the target leader is placed freely too
    doc["platoons"][0].as_object_mut().unwrap().remove("leader");
    load_scenario(&doc.to_string()).unwrap()
}

fn angle_diff(a: f64, b: f64) -> f64 {
    (a - b + PI).rem_euclid(2.0 * PI) - PI
}

#[derive(Debug, Default, Clone, Copy)]
pub struct BatteryTally {
    /// Leaders checked at rest on the stop line.
    pub stopped_leaders: usize,
    /// Turning vehicles checked after leaving their arc.
    pub turn_exits: usize,
    /// Largest exit heading error, rad.
    pub worst_heading: f64,
    /// Largest distance of a red-light leader from the line, m.
    pub worst_stop: f64,
}

fn check(s: &Scenario, tr: &Trajectory, seed: u64, tally: &mut BatteryTally) -> Result<(), String> {
    let last = tr.steps() - 1;
    for (u, meta) in tr.vehicles.iter().enumerate() {
        let label = meta.label();
        for k in 0..last {
            let (a, b) = (&tr.states[k][u], &tr.states[k + 1][u]);
            if !(b.v >= 0.0 && b.v <= s.idm.v_0 + 1e-9) {
                return Err(format!("seed {seed} {label:?}: v = {}", b.v));
            }
            // followers track their leader through the light, so only
            // leaders are bound by it
            if meta.is_leader() && a.s <= 0.0 && b.s > 0.0 && s.light_phase(meta.approach, tr.times[k]).0 == Phase::Red
            {
                return Err(format!("seed {seed} {label:?} crossed on red at t = {}", tr.times[k]));
            }
            if !meta.is_leader() && tr.states[k + 1][u - 1].s - b.s < meta.vehicle_length {
                return Err(format!("seed {seed} {label:?} overtook at t = {}", tr.times[k + 1]));
            }
        }

        if meta.lane != Lane::Straight {
            let path = LanePath::new(meta.approach, meta.lane, &s.geometry);
            let exit = path.middle_length();
            for k in 0..last {
                let (a, b) = (&tr.states[k][u], &tr.states[k + 1][u]);
                if a.s > exit + 0.1 && b.s - a.s > 1e-3 {
                    let heading = (b.y - a.y).atan2(b.x - a.x);
                    let err = angle_diff(heading, path.exit_heading())
                        .abs()
                        .max((b.theta - FRAC_PI_2).abs());
                    tally.worst_heading = tally.worst_heading.max(err);
                    if err >= 1e-3 {
                        return Err(format!("seed {seed} {label:?} leaves its turn {err} rad off"));
                    }
                    tally.turn_exits += 1;
                    break;
                }
            }
        }

        // a leader at the head of a red queue rests on the line
        let end = &tr.states[last][u];
        let red = s.light_phase(meta.approach, tr.times[last]).0 == Phase::Red;
        let first_in_lane = !tr.vehicles.iter().enumerate().any(|(w, o)| {
            let sw = tr.states[last][w].s;
            w != u && o.approach == meta.approach && o.lane == meta.lane && sw > end.s && sw <= 0.0
        });
        if meta.is_leader() && end.regime == Regime::Stopped && red && first_in_lane {
            tally.worst_stop = tally.worst_stop.max(end.s.abs());
            if end.s.abs() >= 0.5 || end.v >= 0.1 {
                return Err(format!(
                    "seed {seed} {label:?} stopped {} m from the line at {} m/s",
                    -end.s, end.v
                ));
            }
            tally.stopped_leaders += 1;
        }
    }
    Ok(())
}

/// Run the movement invariants over `seeds` randomized scenarios.
pub fn movement_battery(seeds: std::ops::Range<u64>) -> Result<BatteryTally, String> {
    let mut tally = BatteryTally::default();
    for seed in seeds {
        let s = randomized_scenario(seed);
        let tr = simulate_movement(&s).map_err(|e| format!("seed {seed}: {e}"))?;
        check(&s, &tr, seed, &mut tally)?;
    }
    Ok(tally)
}
