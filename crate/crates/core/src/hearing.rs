//! Time-varying hearing network H(t): which vehicle pairs are within
//! communication range of each other.

use rayon::prelude::*;

use crate::kinematics::{Regime, Trajectory, VehicleState};
use crate::scenario::IntersectionGeometry;

/// Symmetric 0/1 connectivity snapshot with a unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct HearingMatrix {
    pub t: f64,
    n: usize,
    h: Vec<bool>,
}

impl HearingMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, u: usize, w: usize) -> bool {
        self.h[u * self.n + w]
    }

    /// Vehicles that hear `u`, excluding `u` itself.
    pub fn neighbors(&self, u: usize) -> impl Iterator<Item = usize> + '_ {
        let row = &self.h[u * self.n..(u + 1) * self.n];
        row.iter()
            .enumerate()
            .filter(move |&(w, &h)| h && w != u)
            .map(|(w, _)| w)
    }
}

/// `h[u][w] = 1` iff the front bumpers are at most `r_c` apart. Vehicles
/// marked inactive only hear themselves.
pub fn build_hearing(t: f64, states: &[VehicleState], active: &[bool], r_c: f64) -> HearingMatrix {
    let n = states.len();
    let mut h = vec![false; n * n];
    for u in 0..n {
        h[u * n + u] = true;
        if !active[u] {
            continue;
        }
        for w in u + 1..n {
            if active[w] && states[u].distance_to(&states[w]) <= r_c {
                h[u * n + w] = true;
                h[w * n + u] = true;
            }
        }
    }
    HearingMatrix { t, n, h }
}

/// Vehicles still in the scenario: departed vehicles leave once they are
/// farther than `d_r` from the intersection centre.
pub fn active_vehicles(states: &[VehicleState], geometry: &IntersectionGeometry) -> Vec<bool> {
    states
        .iter()
        .map(|s| !(s.regime == Regime::Departed && s.x.hypot(s.y) > geometry.d_r))
        .collect()
}

/// N_c: the row sum of H for `u`, which counts `u` itself.
pub fn neighbor_count(h: &HearingMatrix, u: usize) -> usize {
    h.h[u * h.n..(u + 1) * h.n].iter().filter(|&&x| x).count()
}

/// One hearing matrix per trajectory sample.
pub fn hearing_series(trajectory: &Trajectory, geometry: &IntersectionGeometry) -> Vec<HearingMatrix> {
    trajectory
        .states
        .par_iter()
        .zip(trajectory.times.par_iter())
        .map(|(states, &t)| {
            let active = active_vehicles(states, geometry);
            build_hearing(t, states, &active, geometry.r_c)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn at(x: f64, y: f64) -> VehicleState {
        VehicleState {
            x,
            y,
            theta: 0.0,
            v: 0.0,
            a: 0.0,
            regime: Regime::RsuCruise,
            s: 0.0,
        }
    }

    fn hear(points: &[(f64, f64)], r_c: f64) -> HearingMatrix {
        let states: Vec<_> = points.iter().map(|&(x, y)| at(x, y)).collect();
        build_hearing(0.0, &states, &vec![true; states.len()], r_c)
    }

    #[test]
    fn range_is_inclusive() {
        let h = hear(&[(0.0, 0.0), (100.0, 0.0), (0.0, 100.001)], 100.0);
        assert!(h.get(0, 1));
        assert!(h.get(0, 0));
        assert!(!h.get(0, 2));
    }

    #[test]
    fn neighbor_counts() {
        let h = hear(&[(0.0, 0.0)], 100.0);
        assert_eq!(neighbor_count(&h, 0), 1);
        let h = hear(&[(0.0, 0.0), (20.0, 0.0), (40.0, 0.0)], 100.0);
        for u in 0..3 {
            assert_eq!(neighbor_count(&h, u), 3);
        }
        let pts: Vec<_> = (0..72)
            .map(|i| {
                let a = i as f64 * 0.7;
                (16.5 * a.cos(), 16.5 * a.sin())
            })
            .collect();
        let h = hear(&pts, 100.0);
        assert_eq!(neighbor_count(&h, 0), 72);
    }

    #[test]
    fn inactive_vehicles_only_hear_themselves() {
        let states = vec![at(0.0, 0.0), at(10.0, 0.0)];
        let h = build_hearing(0.0, &states, &[true, false], 100.0);
        assert!(!h.get(0, 1) && !h.get(1, 0));
        assert_eq!(neighbor_count(&h, 1), 1);
        assert_eq!(h.neighbors(0).count(), 0);
    }

    proptest! {
        #[test]
        fn symmetric_with_unit_diagonal(pts in proptest::collection::vec((-200.0f64..200.0, -200.0f64..200.0), 1..30)) {
            let h = hear(&pts, 100.0);
            for u in 0..pts.len() {
                prop_assert!(h.get(u, u));
                for w in 0..pts.len() {
                    prop_assert_eq!(h.get(u, w), h.get(w, u));
                    let d = (pts[u].0 - pts[w].0).hypot(pts[u].1 - pts[w].1);
                    prop_assert_eq!(h.get(u, w), d <= 100.0);
                }
            }
        }
    }
}
