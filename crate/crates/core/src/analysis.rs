//! Analytical pipeline: hearing network → EDCA fixed point → queue ODE →
//! delay and delivery ratio for the selected vehicles.

use rayon::prelude::*;
use thiserror::Error;

use crate::edca::{EdcaError, EdcaModel, FixedPointConfig, ServiceMoments};
use crate::hearing::{neighbor_count, HearingMatrix};
use crate::kinematics::Trajectory;
use crate::metrics::{ptd_series, Channel, HiddenFormula};
use crate::psffa::{integrate_step, QueueState};
use crate::scenario::{Scenario, NUM_ACS};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("EDCA fixed point for {n_c} vehicles in range: {source}")]
    Edca { n_c: usize, source: EdcaError },
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AnalysisConfig {
    pub fixed_point: FixedPointConfig,
    pub hidden: HiddenFormula,
}

/// Time series of one analysed vehicle, one entry per trajectory sample.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSeries {
    /// Global vehicle index.
    pub vehicle: usize,
    pub n_c: Vec<usize>,
    pub moments: Vec<ServiceMoments>,
    /// Expected queue length per AC.
    pub queue: Vec<[f64; NUM_ACS]>,
    /// Packet transmission delay per AC, s.
    pub ptd: Vec<[f64; NUM_ACS]>,
    pub pdr: Vec<[f64; NUM_ACS]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub times: Vec<f64>,
    pub series: Vec<VehicleSeries>,
    /// Total transmission probability of every vehicle, `[step][vehicle]`.
    pub tau: Vec<Vec<f64>>,
    /// Most fixed-point iterations any solve needed.
    pub max_iterations: usize,
    /// Distinct neighbourhood sizes solved.
    pub solves: usize,
}

/// Fixed-point solutions indexed by N_c. The solution depends on the
/// neighbourhood size alone, so each size is solved once per run.
#[derive(Debug, Clone)]
pub struct MomentTable {
    by_count: Vec<Option<ServiceMoments>>,
}

impl MomentTable {
    pub fn build(model: &EdcaModel, hearings: &[HearingMatrix], cfg: &FixedPointConfig) -> Result<Self, AnalysisError> {
        let n = hearings.first().map_or(0, |h| h.len());
        let mut needed = vec![false; n + 1];
        for h in hearings {
            for u in 0..h.len() {
                needed[neighbor_count(h, u)] = true;
            }
        }
        let counts: Vec<usize> = (1..=n).filter(|&c| needed[c]).collect();
        let solved: Vec<(usize, ServiceMoments)> = counts
            .par_iter()
            .map(|&n_c| {
                model
                    .solve_fixed_point(n_c, cfg)
                    .map(|m| (n_c, m))
                    .map_err(|source| AnalysisError::Edca { n_c, source })
            })
            .collect::<Result<_, _>>()?;
        let mut by_count = vec![None; n + 1];
        for (n_c, m) in solved {
            by_count[n_c] = Some(m);
        }
        Ok(MomentTable { by_count })
    }

    pub fn get(&self, n_c: usize) -> &ServiceMoments {
        self.by_count[n_c]
            .as_ref()
            .expect("every neighbourhood size in the run was solved")
    }

    pub fn solutions(&self) -> impl Iterator<Item = (usize, &ServiceMoments)> {
        self.by_count
            .iter()
            .enumerate()
            .filter_map(|(n, m)| m.as_ref().map(|m| (n, m)))
    }
}

/// Run the analytical model for `targets` (global vehicle indices).
pub fn analyze(
    scenario: &Scenario,
    trajectory: &Trajectory,
    hearings: &[HearingMatrix],
    targets: &[usize],
    cfg: &AnalysisConfig,
) -> Result<Analysis, AnalysisError> {
    let model = EdcaModel::from_scenario(scenario);
    let table = MomentTable::build(&model, hearings, &cfg.fixed_point)?;
    let tau_by_step: Vec<Vec<f64>> = hearings
        .iter()
        .map(|h| (0..h.len()).map(|u| table.get(neighbor_count(h, u)).tau).collect())
        .collect();

    let series = targets
        .par_iter()
        .map(|&u| vehicle_series(scenario, &model, &table, hearings, &tau_by_step, u, cfg.hidden))
        .collect();

    Ok(Analysis {
        times: trajectory.times.clone(),
        series,
        tau: tau_by_step,
        max_iterations: table.solutions().map(|(_, m)| m.iterations).max().unwrap_or(0),
        solves: table.solutions().count(),
    })
}

fn vehicle_series(
    scenario: &Scenario,
    model: &EdcaModel,
    table: &MomentTable,
    hearings: &[HearingMatrix],
    tau_by_step: &[Vec<f64>],
    u: usize,
    hidden: HiddenFormula,
) -> VehicleSeries {
    let dt = scenario.run.dt;
    let steps = hearings.len();
    let mut n_c = Vec::with_capacity(steps);
    let mut moments = Vec::with_capacity(steps);
    let mut queue = Vec::with_capacity(steps);
    let mut pdr = Vec::with_capacity(steps);
    let mut state = [QueueState {
        n: scenario.run.initial_queue,
        t: scenario.run.t0,
    }; NUM_ACS];

    for (h, tau) in hearings.iter().zip(tau_by_step) {
        let count = neighbor_count(h, u);
        let m = *table.get(count);
        let channel = Channel {
            h,
            tau,
            t_tr: model.transmission_time(),
            slot: scenario.phy.slot,
            formula: hidden,
        };
        let mut row = [0.0; NUM_ACS];
        for (ac, out) in row.iter_mut().enumerate() {
            let moments = &m.acs[ac];
            *out = channel.pdr(u, moments.rho / moments.t, scenario.acs[ac].lambda);
        }
        n_c.push(count);
        moments.push(m);
        queue.push(state.map(|q| q.n));
        pdr.push(row);
        for (ac, q) in state.iter_mut().enumerate() {
            let a = &m.acs[ac];
            *q = integrate_step(*q, scenario.acs[ac].lambda, 1.0 / a.t, a.c2, dt);
        }
    }

    let mut ptd = vec![[0.0; NUM_ACS]; steps];
    for ac in 0..NUM_ACS {
        let per_ac: Vec<f64> = queue.iter().map(|q| q[ac]).collect();
        for (row, p) in ptd.iter_mut().zip(ptd_series(&per_ac, scenario.acs[ac].lambda)) {
            row[ac] = p;
        }
    }

    VehicleSeries {
        vehicle: u,
        n_c,
        moments,
        queue,
        ptd,
        pdr,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hearing::hearing_series;
    use crate::kinematics::simulate_movement;
    use crate::scenario::tests::table2;

    #[test]
    fn table2_target_runs() {
        let s = table2();
        let tr = simulate_movement(&s).unwrap();
        let hs = hearing_series(&tr, &s.geometry);
        let a = analyze(&s, &tr, &hs, &[0], &AnalysisConfig::default()).unwrap();
        let v = &a.series[0];
        assert_eq!(v.ptd.len(), tr.steps());
        for row in &v.ptd {
            for p in row {
                assert!(*p >= 0.0 && *p < 0.1);
            }
        }
        for row in &v.pdr {
            for p in row {
                assert!((0.0..=1.0).contains(p));
            }
        }
    }

    #[test]
    fn table_solves_each_size_once() {
        let s = table2();
        let tr = simulate_movement(&s).unwrap();
        let hs = hearing_series(&tr, &s.geometry);
        let model = EdcaModel::from_scenario(&s);
        let table = MomentTable::build(&model, &hs, &FixedPointConfig::default()).unwrap();
        for (n_c, m) in table.solutions() {
            assert_eq!(*m, model.solve_fixed_point(n_c, &FixedPointConfig::default()).unwrap());
        }
    }
}
