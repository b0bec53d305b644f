//! Vehicle trajectories over the horizon: the four-regime leader law, the IDM
//! follower law and uniformly-accelerated stepping along each lane's path.
//!
//! Every lane is a fixed path in the world frame: a straight approach up to
//! the stop line, a straight crossing or a quarter circle through the centre
//! square, then a straight exit. Vehicles are tracked by their arc-length
//! coordinate `s` along that path (`s = 0` at the stop line), which keeps the
//! order of vehicles on a lane explicit.

use std::f64::consts::FRAC_PI_2;

use serde::Serialize;
use thiserror::Error;

use crate::scenario::{Approach, IdmParams, IntersectionGeometry, Lane, Phase, Scenario};

/// Distance to the stop line below which a red-light leader is snapped to rest.
pub const STOP_SNAP_DISTANCE: f64 = 0.05;
/// Speed below which a red-light leader near the line is snapped to rest.
pub const STOP_SNAP_SPEED: f64 = 0.05;
/// Slow leaders farther than this from the line creep forward instead of snapping.
pub const CREEP_DISTANCE: f64 = 0.5;
const SPEED_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MovementError {
    #[error("vehicle ({platoon},{vehicle}) at t = {t:.3} s has gap {gap:.4} m to its predecessor")]
    DegenerateGap {
        platoon: usize,
        vehicle: usize,
        t: f64,
        gap: f64,
    },
}

#[derive(Debug, Error, Clone, Copy, PartialEq)]
#[error("non-positive gap {0} m to the predecessor")]
pub struct GapError(pub f64);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    PreRsu,
    RsuCruise,
    ApproachRed,
    ApproachGreenPass,
    CenterTurnLeft,
    CenterTurnRight,
    CenterStraight,
    Departed,
    Stopped,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::PreRsu => "pre_rsu",
            Regime::RsuCruise => "rsu_cruise",
            Regime::ApproachRed => "approach_red",
            Regime::ApproachGreenPass => "approach_green_pass",
            Regime::CenterTurnLeft => "center_turn_left",
            Regime::CenterTurnRight => "center_turn_right",
            Regime::CenterStraight => "center_straight",
            Regime::Departed => "departed",
            Regime::Stopped => "stopped",
        }
    }

    pub fn in_center(self) -> bool {
        matches!(
            self,
            Regime::CenterTurnLeft | Regime::CenterTurnRight | Regime::CenterStraight
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    /// Accumulated turning angle: 0 before a turn, π/2 once it is complete.
    pub theta: f64,
    pub v: f64,
    pub a: f64,
    pub regime: Regime,
    /// Arc length along the lane path, zero at the stop line.
    pub s: f64,
}

impl VehicleState {
    pub fn distance_to(&self, other: &VehicleState) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Speed interval a step may not leave.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedBounds {
    pub min: f64,
    pub max: f64,
}

impl SpeedBounds {
    pub fn road(idm: &IdmParams) -> Self {
        SpeedBounds { min: 0.0, max: idm.v_0 }
    }
}

/// Uniformly accelerated motion over `dt`. When the speed would leave
/// `bounds` inside the step, the step is split at the crossing instant and
/// the remainder is covered at the bound speed. Returns (distance, end speed).
pub fn integrate_speed(v: f64, a: f64, dt: f64, bounds: SpeedBounds) -> (f64, f64) {
    let v_end = v + a * dt;
    let limit = if a < 0.0 && v_end < bounds.min {
        Some(bounds.min)
    } else if a > 0.0 && v_end > bounds.max {
        Some(bounds.max)
    } else {
        None
    };
    match limit {
        None => (v * dt + 0.5 * a * dt * dt, v_end),
        Some(vb) => {
            let t_cross = ((vb - v) / a).clamp(0.0, dt);
            let d = v * t_cross + 0.5 * a * t_cross * t_cross + vb * (dt - t_cross);
            (d.max(0.0), vb)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Straight-line step along a coordinate axis; `sign` is ±1 for the travel direction.
pub fn step_straight(
    state: &VehicleState,
    a: f64,
    dt: f64,
    axis: Axis,
    sign: f64,
    bounds: SpeedBounds,
) -> VehicleState {
    let (d, v) = integrate_speed(state.v, a, dt, bounds);
    let mut next = *state;
    match axis {
        Axis::X => next.x += sign * d,
        Axis::Y => next.y += sign * d,
    }
    next.v = v;
    next.a = a;
    next.s += d;
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TurnDirection {
    Left,
    Right,
}

impl TurnDirection {
    fn sign(self) -> f64 {
        match self {
            TurnDirection::Left => 1.0,
            TurnDirection::Right => -1.0,
        }
    }
}

/// Point on a quarter-circle turn after turning `theta` from `entry_heading`.
fn arc_point(center: (f64, f64), radius: f64, entry_heading: f64, dir: TurnDirection, theta: f64) -> (f64, f64) {
    let heading = entry_heading + dir.sign() * theta;
    let (sin, cos) = heading.sin_cos();
    match dir {
        TurnDirection::Left => (center.0 + radius * sin, center.1 - radius * cos),
        TurnDirection::Right => (center.0 - radius * sin, center.1 + radius * cos),
    }
}

/// Result of a turning step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TurnStep {
    pub state: VehicleState,
    /// Arc length travelled past the end of the quarter circle, to be carried
    /// onto the target lane.
    pub overshoot: f64,
}

/// Advance along a quarter circle of `radius` about `center`. The angle grows
/// by the travelled arc length over the radius and the position is placed on
/// the circle itself. A turn completes at θ = π/2.
pub fn step_turn(
    state: &VehicleState,
    a: f64,
    dt: f64,
    radius: f64,
    center: (f64, f64),
    entry_heading: f64,
    dir: TurnDirection,
    bounds: SpeedBounds,
) -> TurnStep {
    let (dl, v) = integrate_speed(state.v, a, dt, bounds);
    let mut next = *state;
    next.v = v;
    next.a = a;
    next.s += dl;
    if dl == 0.0 {
        return TurnStep {
            state: next,
            overshoot: 0.0,
        };
    }
    let theta = state.theta + dl / radius;
    let (theta, overshoot) = if theta >= FRAC_PI_2 {
        (FRAC_PI_2, (theta - FRAC_PI_2) * radius)
    } else {
        (theta, 0.0)
    };
    let (x, y) = arc_point(center, radius, entry_heading, dir, theta);
    next.theta = theta;
    next.x = x;
    next.y = y;
    TurnStep { state: next, overshoot }
}

/// Raw IDM acceleration toward the immediate predecessor.
pub fn follower_accel(
    me: &VehicleState,
    pred: &VehicleState,
    vehicle_length: f64,
    idm: &IdmParams,
) -> Result<f64, GapError> {
    let gap = me.distance_to(pred) - vehicle_length;
    idm_accel(me.v, me.v - pred.v, gap, idm)
}

/// IDM law for own speed `v`, approach rate `dv` and bumper gap `gap`.
pub fn idm_accel(v: f64, dv: f64, gap: f64, idm: &IdmParams) -> Result<f64, GapError> {
    if !(gap > 0.0) {
        return Err(GapError(gap));
    }
    let desired = idm.s_0 + v * idm.t_0 + v * dv / (2.0 * (idm.a * idm.b).sqrt());
    Ok(idm.a * (1.0 - (v / idm.v_0).powi(4) - (desired / gap).powi(2)))
}

/// Lower bound applied to IDM accelerations inside the movement loop.
pub fn idm_floor(idm: &IdmParams) -> f64 {
    -3.0 * idm.b
}

/// Time at which a leader cruising at `v_e` from `x0` reaches the border of
/// the intersection area.
pub fn entry_time(t0: f64, x0: f64, geometry: &IntersectionGeometry, v_e: f64) -> f64 {
    t0 - (x0 + geometry.d + geometry.d_s) / v_e
}

/// Whether a leader `distance` metres before the stop line, driving at `v`
/// with the maximum acceleration capped at `v_0`, reaches the line within
/// `green_remaining` seconds. Reaching it exactly counts as passing.
pub fn green_pass_predict(v: f64, distance: f64, green_remaining: f64, idm: &IdmParams) -> bool {
    if green_remaining <= 0.0 {
        return distance <= 0.0;
    }
    let (covered, _) = integrate_speed(v, idm.a, green_remaining, SpeedBounds::road(idm));
    covered >= distance
}

/// Leader acceleration in its current regime; the caller resolves the
/// `Stopped` and `PreRsu` regimes.
pub fn leader_accel(v: f64, s: f64, regime: Regime, idm: &IdmParams) -> f64 {
    match regime {
        Regime::PreRsu | Regime::RsuCruise | Regime::Stopped => 0.0,
        Regime::ApproachRed => {
            // stop-line distance is -s; the required constant deceleration
            v * v / (2.0 * s)
        }
        Regime::ApproachGreenPass => {
            if v < idm.v_0 - SPEED_EPS {
                idm.a
            } else {
                0.0
            }
        }
        Regime::CenterTurnLeft | Regime::CenterTurnRight | Regime::CenterStraight | Regime::Departed => {
            if v > idm.v_e + SPEED_EPS {
                -idm.b
            } else if v < idm.v_e - SPEED_EPS {
                idm.a
            } else {
                0.0
            }
        }
    }
}

/// The fixed path of one lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanePath {
    pub approach: Approach,
    pub lane: Lane,
    offset: f64,
    d_s: f64,
    radius: f64,
}

impl LanePath {
    pub fn new(approach: Approach, lane: Lane, geometry: &IntersectionGeometry) -> Self {
        let radius = match lane {
            Lane::LeftTurn => geometry.r_l,
            Lane::RightTurn => geometry.r_r,
            Lane::Straight => 0.0,
        };
        LanePath {
            approach,
            lane,
            offset: lane.offset(geometry.lane_width),
            d_s: geometry.d_s,
            radius,
        }
    }

    fn turn(&self) -> Option<TurnDirection> {
        match self.lane {
            Lane::LeftTurn => Some(TurnDirection::Left),
            Lane::RightTurn => Some(TurnDirection::Right),
            Lane::Straight => None,
        }
    }

    /// Length of the middle segment (crossing or quarter circle).
    pub fn middle_length(&self) -> f64 {
        match self.turn() {
            Some(_) => FRAC_PI_2 * self.radius,
            None => 2.0 * self.d_s,
        }
    }

    /// Turn centre in the world frame.
    pub fn turn_center(&self) -> Option<(f64, f64)> {
        self.turn().map(|dir| {
            let cy = self.offset + dir.sign() * self.radius;
            self.approach.to_world(-self.d_s, cy)
        })
    }

    /// Heading of travel after the middle segment, world frame.
    pub fn exit_heading(&self) -> f64 {
        let turn = self.turn().map(|d| d.sign() * FRAC_PI_2).unwrap_or(0.0);
        self.approach.heading() + turn
    }

    /// World position, heading and turn angle at arc length `s`.
    pub fn pose(&self, s: f64) -> (f64, f64, f64, f64) {
        let entry = self.approach.heading();
        if s < 0.0 {
            let (x, y) = self.approach.to_world(-self.d_s + s, self.offset);
            return (x, y, entry, 0.0);
        }
        let mid = self.middle_length();
        match self.turn() {
            None => {
                let (x, y) = self.approach.to_world(-self.d_s + s, self.offset);
                (x, y, entry, 0.0)
            }
            Some(dir) => {
                let center = self.turn_center().expect("turning lane");
                if s < mid {
                    let theta = s / self.radius;
                    let (x, y) = arc_point(center, self.radius, entry, dir, theta);
                    (x, y, entry + dir.sign() * theta, theta)
                } else {
                    let (ex, ey) = arc_point(center, self.radius, entry, dir, FRAC_PI_2);
                    let heading = self.exit_heading();
                    let rest = s - mid;
                    (ex + rest * heading.cos(), ey + rest * heading.sin(), heading, FRAC_PI_2)
                }
            }
        }
    }

    /// Whether a world point lies in the centre square.
    pub fn in_center_square(&self, x: f64, y: f64) -> bool {
        let eps = 1e-9;
        x.abs() < self.d_s - eps && y.abs() < self.d_s - eps
    }

    /// Regime implied by position alone (followers, and leaders' area test).
    pub fn area_regime(&self, s: f64, geometry: &IntersectionGeometry) -> Regime {
        if s < 0.0 {
            let (x, y, _, _) = self.pose(s);
            if s < -geometry.d {
                if x.hypot(y) > geometry.d_r {
                    Regime::PreRsu
                } else {
                    Regime::RsuCruise
                }
            } else {
                Regime::ApproachGreenPass
            }
        } else {
            let (x, y, _, _) = self.pose(s);
            let still_inside = s < self.middle_length() || self.in_center_square(x, y);
            if still_inside {
                match self.lane {
                    Lane::LeftTurn => Regime::CenterTurnLeft,
                    Lane::RightTurn => Regime::CenterTurnRight,
                    Lane::Straight => Regime::CenterStraight,
                }
            } else {
                Regime::Departed
            }
        }
    }

    /// Move a state by `dl` metres of arc length, placing it on the path.
    pub fn place(&self, state: &mut VehicleState, s: f64) {
        let (x, y, _, theta) = self.pose(s);
        state.s = s;
        state.x = x;
        state.y = y;
        state.theta = theta;
    }

    /// Advance a state along the path with acceleration `a`. Segment
    /// boundaries are crossed with the overshoot carried onto the next segment.
    pub fn advance(&self, state: &VehicleState, a: f64, dt: f64, bounds: SpeedBounds) -> VehicleState {
        let s0 = state.s;
        let mid = self.middle_length();
        let mut next = match self.turn() {
            Some(dir) if s0 >= 0.0 && s0 < mid => {
                let step = step_turn(
                    state,
                    a,
                    dt,
                    self.radius,
                    self.turn_center().expect("turning lane"),
                    self.approach.heading(),
                    dir,
                    bounds,
                );
                let mut next = step.state;
                if step.overshoot > 0.0 || next.theta >= FRAC_PI_2 {
                    let s = mid + step.overshoot;
                    self.place(&mut next, s);
                }
                next
            }
            _ => {
                let (d, v) = integrate_speed(state.v, a, dt, bounds);
                let mut next = *state;
                next.v = v;
                next.a = a;
                self.place(&mut next, s0 + d);
                next
            }
        };
        // a straight approach step that ends inside the turn is re-placed on the arc
        if s0 < 0.0 && next.s >= 0.0 {
            let s = next.s;
            self.place(&mut next, s);
        }
        next.a = a;
        next
    }
}

/// Static description of one vehicle in the run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VehicleMeta {
    /// Zero-based platoon index.
    pub platoon: usize,
    /// Zero-based position in the platoon; 0 is the leader.
    pub index: usize,
    pub approach: Approach,
    pub lane: Lane,
    pub vehicle_length: f64,
}

impl VehicleMeta {
    pub fn is_leader(&self) -> bool {
        self.index == 0
    }

    /// One-based (platoon, vehicle) label.
    pub fn label(&self) -> (usize, usize) {
        (self.platoon + 1, self.index + 1)
    }
}

/// Sampled trajectories of every vehicle.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub vehicles: Vec<VehicleMeta>,
    pub times: Vec<f64>,
    /// `states[step][vehicle]`.
    pub states: Vec<Vec<VehicleState>>,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.times.len()
    }

    /// Global index of vehicle `(platoon, index)`, both zero-based.
    pub fn vehicle_index(&self, platoon: usize, index: usize) -> Option<usize> {
        self.vehicles
            .iter()
            .position(|m| m.platoon == platoon && m.index == index)
    }

    /// Every vehicle's state at one step.
    pub fn slice(&self, step: usize) -> &[VehicleState] {
        &self.states[step]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StopPlan {
    Undecided,
    Pass,
    Stop,
}

#[derive(Debug, Clone)]
struct LeaderMemory {
    plan: StopPlan,
    stopped: bool,
}

/// Integrate the movement model over the scenario horizon.
pub fn simulate_movement(scenario: &Scenario) -> Result<Trajectory, MovementError> {
    let geometry = &scenario.geometry;
    let idm = &scenario.idm;
    let dt = scenario.run.dt;
    let bounds = SpeedBounds::road(idm);

    let mut vehicles = Vec::new();
    let mut paths = Vec::new();
    let mut states = Vec::new();
    let mut platoon_first = Vec::new();
    for (k, p) in scenario.platoons.iter().enumerate() {
        let path = LanePath::new(p.approach, p.lane, geometry);
        let pitch = crate::scenario::member_pitch(idm, p.vehicle_length);
        // leader x is the approach-frame coordinate, stop line at -d_s
        let s_lead = p.leader.x + geometry.d_s;
        platoon_first.push(vehicles.len());
        for i in 0..p.vehicles {
            let s = s_lead - i as f64 * pitch;
            let (x, y, _, theta) = path.pose(s);
            let regime = path.area_regime(s, geometry);
            vehicles.push(VehicleMeta {
                platoon: k,
                index: i,
                approach: p.approach,
                lane: p.lane,
                vehicle_length: p.vehicle_length,
            });
            paths.push(path);
            let (v, a) = if i == 0 {
                (p.leader.v, p.leader.a)
            } else {
                (p.leader.v, 0.0)
            };
            states.push(VehicleState {
                x,
                y,
                theta,
                v,
                a,
                regime: if i == 0 { leader_initial_regime(regime) } else { regime },
                s,
            });
        }
    }

    // preceding platoon on the same lane, by initial position along the path
    let preceding: Vec<Option<usize>> = scenario
        .platoons
        .iter()
        .enumerate()
        .map(|(k, p)| {
            let s_k = states[platoon_first[k]].s;
            scenario
                .platoons
                .iter()
                .enumerate()
                .filter(|(q, o)| *q != k && o.approach == p.approach && o.lane == p.lane)
                .filter(|(q, _)| states[platoon_first[*q]].s > s_k)
                .min_by(|(q1, _), (q2, _)| states[platoon_first[*q1]].s.total_cmp(&states[platoon_first[*q2]].s))
                .map(|(q, _)| q)
        })
        .collect();
    let tails: Vec<usize> = scenario
        .platoons
        .iter()
        .enumerate()
        .map(|(k, p)| platoon_first[k] + p.vehicles - 1)
        .collect();

    let mut memory: Vec<LeaderMemory> = scenario
        .platoons
        .iter()
        .map(|_| LeaderMemory {
            plan: StopPlan::Undecided,
            stopped: false,
        })
        .collect();

    let steps = scenario.run.steps();
    let mut times = Vec::with_capacity(steps + 1);
    let mut history = Vec::with_capacity(steps + 1);
    times.push(scenario.run.time(0));
    history.push(states.clone());

    for step in 0..steps {
        let t = scenario.run.time(step);
        let prev = history.last().expect("initial states pushed");
        let mut next = Vec::with_capacity(prev.len());
        for (u, meta) in vehicles.iter().enumerate() {
            let me = &prev[u];
            let path = &paths[u];
            let gap_err = |gap: f64| MovementError::DegenerateGap {
                platoon: meta.platoon + 1,
                vehicle: meta.index + 1,
                t,
                gap,
            };
            if !meta.is_leader() {
                let pred = &prev[u - 1];
                let raw = follower_accel(me, pred, meta.vehicle_length, idm).map_err(|e| gap_err(e.0))?;
                let a = raw.max(idm_floor(idm));
                let mut st = path.advance(me, a, dt, bounds);
                st.regime = follower_regime(path.area_regime(st.s, geometry), &st);
                next.push(st);
                continue;
            }

            let k = meta.platoon;
            // inter-platoon spacing toward the tail of the preceding platoon
            let following = preceding[k].and_then(|q| {
                let tail = &prev[tails[q]];
                let gap = me.distance_to(tail) - scenario.platoons[q].vehicle_length;
                (gap < idm.s_e).then_some((tail, gap))
            });
            let follow = match following {
                Some((tail, _)) => {
                    let raw =
                        follower_accel(me, tail, scenario.platoons[k].vehicle_length, idm).map_err(|e| gap_err(e.0))?;
                    Some(raw.max(idm_floor(idm)))
                }
                None => None,
            };
            let st = lead_step(scenario, path, me, &mut memory[k], t, dt, follow)?;
            next.push(st);
        }
        times.push(scenario.run.time(step + 1));
        history.push(next);
    }

    Ok(Trajectory {
        vehicles,
        times,
        states: history,
    })
}

fn leader_initial_regime(area: Regime) -> Regime {
    area
}

fn follower_regime(area: Regime, st: &VehicleState) -> Regime {
    match area {
        Regime::ApproachGreenPass | Regime::ApproachRed if st.v <= SPEED_EPS => Regime::Stopped,
        Regime::ApproachGreenPass => Regime::ApproachGreenPass,
        other => other,
    }
}

/// One step of a platoon leader. `follow` is the car-following acceleration
/// toward the preceding platoon's tail when that tail is closer than `s_e`;
/// the leader then takes the smaller of it and its own law.
fn lead_step(
    scenario: &Scenario,
    path: &LanePath,
    me: &VehicleState,
    mem: &mut LeaderMemory,
    t: f64,
    dt: f64,
    follow: Option<f64>,
) -> Result<VehicleState, MovementError> {
    let cap = |a: f64| follow.map_or(a, |f| a.min(f));
    let geometry = &scenario.geometry;
    let idm = &scenario.idm;
    let bounds = SpeedBounds::road(idm);
    let area = path.area_regime(me.s, geometry);
    let approach = path.approach;

    // a leader held on the stop line sits at s = 0 and is still waiting
    let in_approach = me.s >= -geometry.d && (me.s < 0.0 || mem.stopped);
    if in_approach {
        let distance = -me.s;
        let (phase, remaining) = scenario.light_phase(approach, t);
        match mem.plan {
            StopPlan::Undecided => {
                // decide at the moment of crossing into the intersection area
                let overshoot = me.s + geometry.d;
                // a leader placed inside the area decides at the start of the run
                let t_cross = if me.v > SPEED_EPS { t - overshoot / me.v } else { t };
                let t_cross = t_cross.max(scenario.run.t0);
                let (phase1, rem1) = scenario.light_phase(approach, t_cross);
                mem.plan = match phase1 {
                    Phase::Green if green_pass_predict(me.v, geometry.d, rem1, idm) => StopPlan::Pass,
                    _ => StopPlan::Stop,
                };
            }
            StopPlan::Stop if phase == Phase::Green => {
                if green_pass_predict(me.v, distance, remaining, idm) {
                    mem.plan = StopPlan::Pass;
                    mem.stopped = false;
                }
            }
            _ => {}
        }

        match mem.plan {
            StopPlan::Pass | StopPlan::Undecided => {
                let a = cap(leader_accel(me.v, me.s, Regime::ApproachGreenPass, idm));
                let mut st = path.advance(me, a, dt, bounds);
                st.regime = if st.s >= 0.0 {
                    path.area_regime(st.s, geometry)
                } else if st.v <= SPEED_EPS {
                    Regime::Stopped
                } else {
                    Regime::ApproachGreenPass
                };
                Ok(st)
            }
            StopPlan::Stop => {
                if mem.stopped {
                    let mut st = *me;
                    st.v = 0.0;
                    st.a = 0.0;
                    st.regime = Regime::Stopped;
                    return Ok(st);
                }
                let a = if me.v < STOP_SNAP_SPEED && distance >= CREEP_DISTANCE {
                    // the constant-deceleration law is degenerate at rest; creep
                    // toward the line as if a stationary car stood on it
                    idm_accel(me.v, me.v, distance + idm.s_0, idm)
                        .map(|a| a.max(idm_floor(idm)))
                        .unwrap_or(0.0)
                } else {
                    leader_accel(me.v, me.s, Regime::ApproachRed, idm)
                };
                let mut st = path.advance(me, cap(a), dt, bounds);
                if st.s > 0.0 {
                    path.place(&mut st, 0.0);
                }
                let remaining = -st.s;
                if remaining < STOP_SNAP_DISTANCE || (st.v < STOP_SNAP_SPEED && remaining < CREEP_DISTANCE) {
                    st.v = 0.0;
                    st.a = 0.0;
                    mem.stopped = true;
                    st.regime = Regime::Stopped;
                } else if st.v <= SPEED_EPS {
                    // queued behind the preceding platoon
                    st.regime = Regime::Stopped;
                } else {
                    st.regime = Regime::ApproachRed;
                }
                Ok(st)
            }
        }
    } else {
        let regime = match area {
            Regime::ApproachGreenPass => Regime::ApproachGreenPass,
            other => other,
        };
        let own = leader_accel(me.v, me.s, regime, idm);
        let a = cap(own);
        let bounds = if follow.is_some_and(|f| f < own) {
            bounds
        } else if regime.in_center() || regime == Regime::Departed {
            if a < 0.0 {
                SpeedBounds {
                    min: idm.v_e,
                    max: idm.v_0,
                }
            } else {
                SpeedBounds { min: 0.0, max: idm.v_e }
            }
        } else {
            bounds
        };
        let mut st = path.advance(me, a, dt, bounds);
        if st.s >= -geometry.d && st.s < 0.0 {
            // crossed into the intersection area this step; the decision is
            // taken at the start of the next step
            st.regime = Regime::RsuCruise;
        } else {
            st.regime = path.area_regime(st.s, geometry);
        }
        if st.s >= 0.0 {
            mem.stopped = false;
        }
        Ok(st)
    }
}
