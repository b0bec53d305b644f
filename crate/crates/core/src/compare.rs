//! Cross-model agreement between the analytical pipeline and the simulator.

use serde::Serialize;

use crate::analysis::Analysis;
use crate::scenario::NUM_ACS;
use crate::simulator::SimResult;

/// Run-averaged figures of one vehicle and AC under both models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompareRow {
    /// Global vehicle index, `None` for the average over all compared vehicles.
    pub vehicle: Option<usize>,
    pub ac: usize,
    pub t_analytical: f64,
    pub t_simulated: Option<f64>,
    pub pdr_analytical: Option<f64>,
    pub pdr_simulated: Option<f64>,
}

impl CompareRow {
    pub fn service_rel_error(&self) -> Option<f64> {
        self.t_simulated.map(|s| (s - self.t_analytical) / self.t_analytical)
    }

    pub fn pdr_abs_error(&self) -> Option<f64> {
        Some(self.pdr_simulated? - self.pdr_analytical?)
    }
}

/// One row per (vehicle, AC) present in both results, followed by one
/// averaged row per AC.
///
/// The analytical service time is averaged over time. Its PDR is weighted
/// by the number of receivers at each step, which is how the simulator pools
/// receptions.
pub fn compare(analysis: &Analysis, sim: &SimResult, receivers: &[Vec<usize>]) -> Vec<CompareRow> {
    let mut rows = Vec::new();
    for a in &analysis.series {
        let Some(s) = sim.series.iter().find(|s| s.vehicle == a.vehicle) else {
            continue;
        };
        let weights = &receivers[a.vehicle];
        let total: usize = weights.iter().sum();
        for ac in 0..NUM_ACS {
            let n = a.moments.len() as f64;
            let t_analytical = a.moments.iter().map(|m| m.acs[ac].t).sum::<f64>() / n;
            let pdr_analytical = (total > 0)
                .then(|| a.pdr.iter().zip(weights).map(|(p, &w)| p[ac] * w as f64).sum::<f64>() / total as f64);
            rows.push(CompareRow {
                vehicle: Some(a.vehicle),
                ac,
                t_analytical,
                t_simulated: s.service_total[ac].map(|e| e.mean),
                pdr_analytical,
                pdr_simulated: s.pdr_total[ac],
            });
        }
    }

    for ac in 0..NUM_ACS {
        let per_ac: Vec<&CompareRow> = rows.iter().filter(|r| r.ac == ac && r.vehicle.is_some()).collect();
        if per_ac.is_empty() {
            continue;
        }
        let mean = |xs: Vec<f64>| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
        let timed: Vec<_> = per_ac.iter().filter(|r| r.t_simulated.is_some()).collect();
        let paired: Vec<_> = per_ac
            .iter()
            .filter(|r| r.pdr_simulated.is_some() && r.pdr_analytical.is_some())
            .collect();
        rows.push(CompareRow {
            vehicle: None,
            ac,
            t_analytical: mean(timed.iter().map(|r| r.t_analytical).collect()).unwrap_or(f64::NAN),
            t_simulated: mean(timed.iter().filter_map(|r| r.t_simulated).collect()),
            pdr_analytical: mean(paired.iter().filter_map(|r| r.pdr_analytical).collect()),
            pdr_simulated: mean(paired.iter().filter_map(|r| r.pdr_simulated).collect()),
        });
    }
    rows
}

/// Receivers of every vehicle at every step, `[vehicle][step]`.
pub fn receiver_counts(hearings: &[crate::hearing::HearingMatrix]) -> Vec<Vec<usize>> {
    let n = hearings.first().map_or(0, |h| h.len());
    (0..n)
        .map(|u| hearings.iter().map(|h| h.neighbors(u).count()).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{analyze, AnalysisConfig};
    use crate::hearing::hearing_series;
    use crate::kinematics::simulate_movement;
    use crate::scenario::tests::table2;
    use crate::simulator::{run_sim, SimConfig};

    #[test]
    fn rows_cover_every_vehicle_and_ac() {
        let mut s = table2();
        s.run.horizon = 5.0;
        let tr = simulate_movement(&s).unwrap();
        let hs = hearing_series(&tr, &s.geometry);
        let targets = [0, 1, 2];
        let a = analyze(&s, &tr, &hs, &targets, &AnalysisConfig::default()).unwrap();
        let r = run_sim(
            &s,
            &hs,
            &targets,
            &SimConfig {
                replications: 2,
                ..SimConfig::new(1)
            },
        );
        let rows = compare(&a, &r, &receiver_counts(&hs));
        assert_eq!(rows.len(), 3 * NUM_ACS + NUM_ACS);
        for row in rows.iter().filter(|r| r.vehicle.is_none()) {
            assert!(row.service_rel_error().unwrap().is_finite(), "{row:?}");
            for p in [row.pdr_analytical.unwrap(), row.pdr_simulated.unwrap()] {
                assert!((0.0..=1.0).contains(&p), "{row:?}");
            }
        }
    }
}
