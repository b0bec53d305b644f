//! Run description: intersection geometry, signal plan, platoons and the
//! MAC/PHY parameter sets, loaded from a JSON document and validated once.

use std::collections::BTreeMap;
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Metres per statute mile.
pub const METERS_PER_MILE: f64 = 1609.344;

/// Number of EDCA access categories.
pub const NUM_ACS: usize = 4;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("malformed scenario document: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid scenario: {field}: {reason}")]
    Invalid { field: String, reason: String },
    #[error("cannot place the platoons of the {approach} {lane} lane without overlap")]
    Placement { approach: Approach, lane: Lane },
}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        field: field.into(),
        reason: reason.into(),
    }
}

/// Direction of travel of an approach (an eastbound approach comes from the west).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Approach {
    East,
    West,
    North,
    South,
}

impl Approach {
    pub const ALL: [Approach; 4] = [Approach::East, Approach::West, Approach::North, Approach::South];

    /// Rotation (cos, sin) taking the canonical eastbound frame to this approach.
    pub fn rotation(self) -> (f64, f64) {
        match self {
            Approach::East => (1.0, 0.0),
            Approach::North => (0.0, 1.0),
            Approach::West => (-1.0, 0.0),
            Approach::South => (0.0, -1.0),
        }
    }

    /// Heading of travel in the world frame, radians from the x-axis.
    pub fn heading(self) -> f64 {
        match self {
            Approach::East => 0.0,
            Approach::North => std::f64::consts::FRAC_PI_2,
            Approach::West => std::f64::consts::PI,
            Approach::South => -std::f64::consts::FRAC_PI_2,
        }
    }

    pub fn to_world(self, x: f64, y: f64) -> (f64, f64) {
        let (c, s) = self.rotation();
        (c * x - s * y, s * x + c * y)
    }

    pub fn to_local(self, x: f64, y: f64) -> (f64, f64) {
        let (c, s) = self.rotation();
        (c * x + s * y, -s * x + c * y)
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Approach::East => "eastbound",
            Approach::West => "westbound",
            Approach::North => "northbound",
            Approach::South => "southbound",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lane {
    LeftTurn,
    Straight,
    RightTurn,
}

impl Lane {
    pub const ALL: [Lane; 3] = [Lane::LeftTurn, Lane::Straight, Lane::RightTurn];

    /// Lateral offset of the lane centre from the road centre line, measured to
    /// the left of travel. The left-turn lane is the kerb lane and the
    /// right-turn lane sits next to the centre line, so that both turning arcs
    /// start and end on the corners of the centre square.
    pub fn offset(self, lane_width: f64) -> f64 {
        match self {
            Lane::LeftTurn => 2.5 * lane_width,
            Lane::Straight => 1.5 * lane_width,
            Lane::RightTurn => 0.5 * lane_width,
        }
    }
}

impl fmt::Display for Lane {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Lane::LeftTurn => "left-turn",
            Lane::Straight => "straight",
            Lane::RightTurn => "right-turn",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntersectionGeometry {
    /// Border of the intersection area to the stop line.
    pub d: f64,
    /// Stop line to the centre line (half-width of the centre square).
    pub d_s: f64,
    /// RSU coverage radius.
    pub d_r: f64,
    /// Left-turn radius.
    pub r_l: f64,
    /// Right-turn radius.
    pub r_r: f64,
    /// Vehicle communication range.
    pub r_c: f64,
    #[serde(default = "default_lane_width")]
    pub lane_width: f64,
}

fn default_lane_width() -> f64 {
    3.5
}

impl IntersectionGeometry {
    fn validate(&self) -> Result<(), ScenarioError> {
        for (name, v) in [
            ("d", self.d),
            ("d_s", self.d_s),
            ("d_r", self.d_r),
            ("r_l", self.r_l),
            ("r_r", self.r_r),
            ("r_c", self.r_c),
            ("lane_width", self.lane_width),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("geometry.{name}"), "must be a positive length"));
            }
        }
        if self.d_r <= self.d + self.d_s {
            return Err(invalid(
                "geometry.d_r",
                format!(
                    "RSU coverage {} m must exceed d + d_s = {} m",
                    self.d_r,
                    self.d + self.d_s
                ),
            ));
        }
        Ok(())
    }

    /// Approach-frame coordinate of the intersection-area border.
    pub fn area_entry(&self) -> f64 {
        -(self.d + self.d_s)
    }

    /// Approach-frame coordinate of the stop line.
    pub fn stop_line(&self) -> f64 {
        -self.d_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Green,
    Red,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrafficLightSchedule {
    pub green: f64,
    pub red: f64,
    pub initial_phase: Phase,
    /// Time already spent in the initial phase at t0.
    pub phase_offset: f64,
}

impl TrafficLightSchedule {
    fn validate(&self, field: &str) -> Result<(), ScenarioError> {
        if !(self.green.is_finite() && self.green > 0.0) {
            return Err(invalid(format!("{field}.green"), "green duration must be positive"));
        }
        if !(self.red.is_finite() && self.red > 0.0) {
            return Err(invalid(format!("{field}.red"), "red duration must be positive"));
        }
        let first = match self.initial_phase {
            Phase::Green => self.green,
            Phase::Red => self.red,
        };
        if !(self.phase_offset >= 0.0 && self.phase_offset < first) {
            return Err(invalid(
                format!("{field}.phase_offset"),
                format!("must lie in [0, {first}) for the initial phase"),
            ));
        }
        Ok(())
    }

    pub fn cycle(&self) -> f64 {
        self.green + self.red
    }

    /// Phase and time to the next switch at `elapsed` seconds after t0.
    /// Phases are half-open: the switching instant belongs to the new phase.
    pub fn phase_at(&self, elapsed: f64) -> (Phase, f64) {
        let (first, first_len, second_len) = match self.initial_phase {
            Phase::Green => (Phase::Green, self.green, self.red),
            Phase::Red => (Phase::Red, self.red, self.green),
        };
        let second = match first {
            Phase::Green => Phase::Red,
            Phase::Red => Phase::Green,
        };
        let pos = (self.phase_offset + elapsed).rem_euclid(self.cycle());
        if pos < first_len {
            (first, first_len - pos)
        } else {
            (second, first_len + second_len - pos)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AcParams {
    pub cw_min: u32,
    pub cw_max: u32,
    pub aifsn: u32,
    /// Number of retransmissions over which the window still doubles.
    pub doubling_limit: u32,
    /// Extra retransmissions at the maximum window.
    pub retry_extra: u32,
    /// Packet arrival rate, packets per second.
    pub lambda: f64,
}

#[derive(Debug, Error, PartialEq)]
#[error("retransmission index {j} outside 0..={limit}")]
pub struct RetryOutOfRange {
    pub j: u32,
    pub limit: u32,
}

impl AcParams {
    /// Retransmission limit; a packet is dropped after this many retries.
    pub fn retry_limit(&self) -> u32 {
        self.doubling_limit + self.retry_extra
    }

    pub fn aifs(&self, phy: &PhyParams) -> f64 {
        self.aifsn as f64 * phy.slot + phy.sifs
    }

    /// Contention window size after `j` retransmissions.
    pub fn contention_window(&self, j: u32) -> Result<u32, RetryOutOfRange> {
        if j > self.retry_limit() {
            return Err(RetryOutOfRange {
                j,
                limit: self.retry_limit(),
            });
        }
        Ok(self.window_unchecked(j))
    }

    pub(crate) fn window_unchecked(&self, j: u32) -> u32 {
        if j <= self.doubling_limit {
            (self.cw_min + 1) << j
        } else {
            self.cw_max + 1
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhyParams {
    /// Slot duration, s.
    pub slot: f64,
    pub sifs: f64,
    pub propagation: f64,
    pub phy_header_bits: f64,
    pub mac_header_bits: f64,
    pub payload_bits: f64,
    /// Basic rate, bit/s.
    pub basic_rate: f64,
    /// Data rate, bit/s.
    pub data_rate: f64,
}

impl PhyParams {
    fn validate(&self) -> Result<(), ScenarioError> {
        for (name, v) in [
            ("slot", self.slot),
            ("sifs", self.sifs),
            ("propagation", self.propagation),
            ("phy_header_bits", self.phy_header_bits),
            ("mac_header_bits", self.mac_header_bits),
            ("payload_bits", self.payload_bits),
            ("basic_rate", self.basic_rate),
            ("data_rate", self.data_rate),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("phy.{name}"), "must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeSource {
    /// Equilibrium spacing from the IDM equilibrium condition.
    Equation,
    /// Literal tabulated value from the document.
    Table,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Maximum acceleration, m/s².
    pub a: f64,
    /// Comfortable deceleration, m/s².
    pub b: f64,
    /// Road speed limit, m/s.
    pub v_0: f64,
    /// Platoon cruising speed, m/s.
    pub v_e: f64,
    /// Minimum standstill gap, m.
    pub s_0: f64,
    /// Desired time headway, s.
    pub t_0: f64,
    /// Equilibrium spacing in use, m.
    pub s_e: f64,
    pub s_e_source: SeSource,
    pub s_e_table: Option<f64>,
}

impl IdmParams {
    /// IDM equilibrium gap at cruising speed `v_e`.
    pub fn equilibrium_spacing(&self) -> f64 {
        (self.s_0 + self.v_e * self.t_0) / (1.0 - (self.v_e / self.v_0).powi(4)).sqrt()
    }

    fn resolve_se(&mut self, source: SeSource) -> Result<(), ScenarioError> {
        self.s_e_source = source;
        self.s_e = match source {
            SeSource::Equation => self.equilibrium_spacing(),
            SeSource::Table => self
                .s_e_table
                .ok_or_else(|| invalid("idm.s_e_table", "s_e source 'table' requires a tabulated s_e"))?,
        };
        Ok(())
    }
}

/// Initial kinematic state of a platoon leader in its approach frame; `x` is
/// the along-road coordinate with the stop line at `-d_s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeaderInitial {
    pub x: f64,
    pub v: f64,
    pub a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlatoonSpec {
    pub id: usize,
    pub approach: Approach,
    pub lane: Lane,
    pub vehicles: usize,
    pub vehicle_length: f64,
    pub leader: LeaderInitial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunParams {
    pub t0: f64,
    pub horizon: f64,
    pub dt: f64,
    pub rng_seed: u64,
    /// Expected queue length of every AC at t0.
    pub initial_queue: f64,
}

impl RunParams {
    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.dt
    }
}

/// Immutable, validated run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub geometry: IntersectionGeometry,
    pub lights: BTreeMap<Approach, TrafficLightSchedule>,
    pub idm: IdmParams,
    pub phy: PhyParams,
    pub acs: [AcParams; NUM_ACS],
    pub platoons: Vec<PlatoonSpec>,
    pub run: RunParams,
}

impl Scenario {
    pub fn aifs(&self, m: usize) -> f64 {
        self.acs[m].aifs(&self.phy)
    }

    pub fn contention_window(&self, m: usize, j: u32) -> Result<u32, RetryOutOfRange> {
        self.acs[m].contention_window(j)
    }

    /// Signal state seen by `approach` at absolute time `t`.
    pub fn light_phase(&self, approach: Approach, t: f64) -> (Phase, f64) {
        self.lights[&approach].phase_at(t - self.run.t0)
    }

    pub fn vehicle_count(&self) -> usize {
        self.platoons.iter().map(|p| p.vehicles).sum()
    }

    /// Re-derive the equilibrium spacing from a different source.
    pub fn with_se_source(mut self, source: SeSource) -> Result<Self, ScenarioError> {
        self.idm.resolve_se(source)?;
        Ok(self)
    }
}

// ---------------------------------------------------------------------------
// Document layer
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, Deserialize)]
enum SpeedUnit {
    #[serde(rename = "m/s")]
    MetersPerSecond,
    #[serde(rename = "mile/h")]
    MilesPerHour,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
enum SpeedDoc {
    Plain(f64),
    Tagged { value: f64, unit: SpeedUnit },
}

impl SpeedDoc {
    fn meters_per_second(self) -> f64 {
        match self {
            SpeedDoc::Plain(v) => v,
            SpeedDoc::Tagged {
                value,
                unit: SpeedUnit::MetersPerSecond,
            } => value,
            SpeedDoc::Tagged {
                value,
                unit: SpeedUnit::MilesPerHour,
            } => value * METERS_PER_MILE / 3600.0,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhaseDoc {
    initial_phase: Phase,
    #[serde(default)]
    phase_offset: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LightsDoc {
    green: f64,
    red: f64,
    initial_phase: Phase,
    #[serde(default)]
    phase_offset: f64,
    #[serde(default)]
    approaches: BTreeMap<Approach, PhaseDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct IdmDoc {
    a: f64,
    b: f64,
    v_0: SpeedDoc,
    v_e: SpeedDoc,
    s_0: f64,
    t_0: f64,
    #[serde(default)]
    s_e_table: Option<f64>,
    #[serde(default)]
    s_e_source: Option<SeSource>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AcDoc {
    cw_min: u32,
    cw_max: u32,
    aifsn: u32,
    #[serde(default)]
    doubling_limit: Option<u32>,
    retry_extra: u32,
    lambda: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LeaderDoc {
    x: f64,
    #[serde(default)]
    v: Option<SpeedDoc>,
    #[serde(default)]
    a: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlatoonDoc {
    approach: Approach,
    lane: Lane,
    vehicles: usize,
    vehicle_length: f64,
    #[serde(default)]
    leader: Option<LeaderDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunDoc {
    #[serde(default)]
    t0: f64,
    horizon: f64,
    dt: f64,
    #[serde(default)]
    rng_seed: u64,
    #[serde(default)]
    initial_queue: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    geometry: IntersectionGeometry,
    lights: LightsDoc,
    idm: IdmDoc,
    phy: PhyParams,
    acs: Vec<AcDoc>,
    platoons: Vec<PlatoonDoc>,
    run: RunDoc,
}

/// Parse and validate a scenario document.
pub fn load_scenario(source: &str) -> Result<Scenario, ScenarioError> {
    let doc: ScenarioDoc = serde_json::from_str(source)?;
    build(doc)
}

fn build(doc: ScenarioDoc) -> Result<Scenario, ScenarioError> {
    doc.geometry.validate()?;
    doc.phy.validate()?;

    let mut lights = BTreeMap::new();
    for approach in Approach::ALL {
        let (initial_phase, phase_offset) = match doc.lights.approaches.get(&approach) {
            Some(p) => (p.initial_phase, p.phase_offset),
            None => (doc.lights.initial_phase, doc.lights.phase_offset),
        };
        let sched = TrafficLightSchedule {
            green: doc.lights.green,
            red: doc.lights.red,
            initial_phase,
            phase_offset,
        };
        sched.validate(&format!("lights.{}", approach_key(approach)))?;
        lights.insert(approach, sched);
    }

    let mut idm = IdmParams {
        a: doc.idm.a,
        b: doc.idm.b,
        v_0: doc.idm.v_0.meters_per_second(),
        v_e: doc.idm.v_e.meters_per_second(),
        s_0: doc.idm.s_0,
        t_0: doc.idm.t_0,
        s_e: f64::NAN,
        s_e_source: SeSource::Equation,
        s_e_table: doc.idm.s_e_table,
    };
    for (name, v) in [("a", idm.a), ("b", idm.b), ("s_0", idm.s_0), ("t_0", idm.t_0)] {
        if !(v.is_finite() && v > 0.0) {
            return Err(invalid(format!("idm.{name}"), "must be positive"));
        }
    }
    if !(idm.v_e > 0.0 && idm.v_e < idm.v_0) {
        return Err(invalid("idm.v_e", "requires 0 < v_e < v_0"));
    }
    idm.resolve_se(doc.idm.s_e_source.unwrap_or(SeSource::Equation))?;

    if doc.acs.len() != NUM_ACS {
        return Err(invalid(
            "acs",
            format!("expected {NUM_ACS} access categories, got {}", doc.acs.len()),
        ));
    }
    let mut acs = [AcParams {
        cw_min: 0,
        cw_max: 0,
        aifsn: 0,
        doubling_limit: 0,
        retry_extra: 0,
        lambda: 0.0,
    }; NUM_ACS];
    for (m, ac) in doc.acs.iter().enumerate() {
        acs[m] = validate_ac(m, ac)?;
    }

    let run = RunParams {
        t0: doc.run.t0,
        horizon: doc.run.horizon,
        dt: doc.run.dt,
        rng_seed: doc.run.rng_seed,
        initial_queue: doc.run.initial_queue,
    };
    if !(run.dt.is_finite() && run.dt > 0.0) {
        return Err(invalid("run.dt", "must be positive"));
    }
    if !(run.horizon.is_finite() && run.horizon >= run.dt) {
        return Err(invalid("run.horizon", "must be at least one step long"));
    }
    if !(run.initial_queue.is_finite() && run.initial_queue >= 0.0) {
        return Err(invalid("run.initial_queue", "must be non-negative"));
    }

    if doc.platoons.is_empty() {
        return Err(invalid("platoons", "at least one platoon is required"));
    }
    for (k, p) in doc.platoons.iter().enumerate() {
        if p.vehicles == 0 {
            return Err(invalid(
                format!("platoons[{k}].vehicles"),
                "a platoon needs at least one vehicle",
            ));
        }
        if !(p.vehicle_length.is_finite() && p.vehicle_length > 0.0) {
            return Err(invalid(format!("platoons[{k}].vehicle_length"), "must be positive"));
        }
    }

    let platoons = place_platoons(&doc.platoons, &doc.geometry, &idm, run.rng_seed)?;

    Ok(Scenario {
        geometry: doc.geometry,
        lights,
        idm,
        phy: doc.phy,
        acs,
        platoons,
        run,
    })
}

fn approach_key(a: Approach) -> &'static str {
    match a {
        Approach::East => "east",
        Approach::West => "west",
        Approach::North => "north",
        Approach::South => "south",
    }
}

fn validate_ac(m: usize, ac: &AcDoc) -> Result<AcParams, ScenarioError> {
    let field = |f: &str| format!("acs[{m}].{f}");
    if ac.aifsn < 2 {
        return Err(invalid(field("aifsn"), "AIFSN must be at least 2"));
    }
    if !(ac.lambda.is_finite() && ac.lambda > 0.0) {
        return Err(invalid(field("lambda"), "arrival rate must be positive"));
    }
    if ac.cw_min > ac.cw_max {
        return Err(invalid(field("cw_max"), "cw_max must not be below cw_min"));
    }
    let base = ac.cw_min as u64 + 1;
    let window_bound = |doublings: u32| base.checked_shl(doublings).map(|w| w - 1);
    let doubling_limit = match ac.doubling_limit {
        Some(limit) => {
            if window_bound(limit) != Some(ac.cw_max as u64) {
                return Err(invalid(
                    field("cw_max"),
                    format!(
                        "cw_max = {} violates cw_max = 2^M (cw_min + 1) - 1 with M = {}, cw_min = {}",
                        ac.cw_max, limit, ac.cw_min
                    ),
                ));
            }
            limit
        }
        None => (0..32)
            .find(|&limit| window_bound(limit) == Some(ac.cw_max as u64))
            .ok_or_else(|| {
                invalid(
                    field("cw_max"),
                    format!(
                        "cw_max = {} violates cw_max = 2^M (cw_min + 1) - 1 for every M (cw_min = {})",
                        ac.cw_max, ac.cw_min
                    ),
                )
            })?,
    };
    Ok(AcParams {
        cw_min: ac.cw_min,
        cw_max: ac.cw_max,
        aifsn: ac.aifsn,
        doubling_limit,
        retry_extra: ac.retry_extra,
        lambda: ac.lambda,
    })
}

/// Front-bumper spacing of consecutive platoon members at equilibrium.
pub fn member_pitch(idm: &IdmParams, vehicle_length: f64) -> f64 {
    idm.s_e + vehicle_length
}

const PLACEMENT_ATTEMPTS: usize = 100_000;

/// Resolve every leader position. Platoons without an explicit leader state
/// are drawn uniformly between the RSU coverage boundary and the border of
/// the intersection area, rejecting draws in which two vehicles on the same
/// lane are closer than the member pitch `s_e + L_0`.
fn place_platoons(
    docs: &[PlatoonDoc],
    geometry: &IntersectionGeometry,
    idm: &IdmParams,
    seed: u64,
) -> Result<Vec<PlatoonSpec>, ScenarioError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut resolved: Vec<Option<LeaderInitial>> = docs
        .iter()
        .map(|p| {
            p.leader.as_ref().map(|l| LeaderInitial {
                x: l.x,
                v: l.v.map(SpeedDoc::meters_per_second).unwrap_or(idm.v_e),
                a: l.a,
            })
        })
        .collect();

    for (k, (doc, leader)) in docs.iter().zip(&resolved).enumerate() {
        if let Some(l) = leader {
            if l.x >= geometry.area_entry() {
                return Err(invalid(
                    format!("platoons[{k}].leader.x"),
                    "leader must start outside the intersection area",
                ));
            }
            if !(l.v >= 0.0 && l.v <= idm.v_0) {
                return Err(invalid(format!("platoons[{k}].leader.v"), "must lie in [0, v_0]"));
            }
            let lateral = doc.lane.offset(geometry.lane_width);
            if l.x.hypot(lateral) > geometry.d_r + 1e-9 {
                return Err(invalid(
                    format!("platoons[{k}].leader.x"),
                    "leader must start inside the RSU coverage",
                ));
            }
        }
    }

    for approach in Approach::ALL {
        for lane in Lane::ALL {
            let members: Vec<usize> = (0..docs.len())
                .filter(|&k| docs[k].approach == approach && docs[k].lane == lane)
                .collect();
            let random: Vec<usize> = members.iter().copied().filter(|&k| resolved[k].is_none()).collect();
            let lateral = lane.offset(geometry.lane_width);
            let far = -(geometry.d_r * geometry.d_r - lateral * lateral).sqrt();
            let near = geometry.area_entry();
            // platoons start no closer to each other than their own members
            let min_gap = docs
                .iter()
                .map(|d| member_pitch(idm, d.vehicle_length))
                .fold(0.0, f64::max);

            let mut attempt = 0;
            loop {
                let mut trial = resolved.clone();
                for &k in &random {
                    let x = rng.gen_range(far..near);
                    trial[k] = Some(LeaderInitial { x, v: idm.v_e, a: 0.0 });
                }
                let mut positions = Vec::new();
                for &k in &members {
                    let lead = trial[k].expect("resolved above");
                    let pitch = member_pitch(idm, docs[k].vehicle_length);
                    positions.extend((0..docs[k].vehicles).map(|i| lead.x - i as f64 * pitch));
                }
                positions.sort_by(|a, b| a.total_cmp(b));
                let ok = positions.windows(2).all(|w| w[1] - w[0] >= min_gap - 1e-9);
                if ok {
                    resolved = trial;
                    break;
                }
                if random.is_empty() {
                    return Err(invalid(
                        "platoons",
                        format!("explicit {approach} {lane} platoons overlap"),
                    ));
                }
                attempt += 1;
                if attempt >= PLACEMENT_ATTEMPTS {
                    return Err(ScenarioError::Placement { approach, lane });
                }
            }
        }
    }

    Ok(docs
        .iter()
        .zip(resolved)
        .enumerate()
        .map(|(k, (d, leader))| PlatoonSpec {
            id: k + 1,
            approach: d.approach,
            lane: d.lane,
            vehicles: d.vehicles,
            vehicle_length: d.vehicle_length,
            leader: leader.expect("every platoon placed"),
        })
        .collect())
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) const TABLE2: &str = include_str!("../../../scenarios/table2.json");

    pub(crate) fn minimal_doc() -> String {
        r#"{
          "geometry": {"d": 4, "d_s": 16.5, "d_r": 100, "r_l": 7.75, "r_r": 18.25, "r_c": 100},
          "lights": {"green": 30, "red": 150, "initial_phase": "green"},
          "idm": {"a": 2, "b": 3, "v_0": {"value": 50, "unit": "mile/h"},
                  "v_e": {"value": 25, "unit": "mile/h"}, "s_0": 3, "t_0": 1.5},
          "phy": {"slot": 13e-6, "sifs": 32e-6, "propagation": 1e-6, "phy_header_bits": 48,
                  "mac_header_bits": 112, "payload_bits": 200, "basic_rate": 1e6, "data_rate": 3e6},
          "acs": [
            {"cw_min": 3, "cw_max": 3, "aifsn": 2, "retry_extra": 1, "lambda": 5},
            {"cw_min": 3, "cw_max": 7, "aifsn": 3, "retry_extra": 1, "lambda": 10},
            {"cw_min": 7, "cw_max": 15, "aifsn": 6, "retry_extra": 1, "lambda": 15},
            {"cw_min": 15, "cw_max": 1023, "aifsn": 9, "retry_extra": 1, "lambda": 20}
          ],
          "platoons": [{"approach": "east", "lane": "straight", "vehicles": 1, "vehicle_length": 3,
                        "leader": {"x": -60}}],
          "run": {"horizon": 10, "dt": 0.1, "rng_seed": 1}
        }"#
        .to_string()
    }

    pub(crate) fn table2() -> Scenario {
        load_scenario(TABLE2).expect("table 2 scenario loads")
    }

    #[test]
    fn table2_document_loads() {
        let s = table2();
        assert_eq!(s.phy.slot, 13e-6);
        assert_eq!(s.lights[&Approach::East].green, 30.0);
        assert_eq!(s.platoons.len(), 24);
        assert!(s.platoons.iter().all(|p| p.vehicles == 3));
        assert_eq!(s.vehicle_count(), 72);
        assert!((s.idm.v_e - 11.176).abs() < 1e-9);
        assert!((s.idm.v_0 - 22.352).abs() < 1e-9);
        assert!((s.idm.s_e - 20.4122).abs() < 1e-3, "s_e = {}", s.idm.s_e);
        let limits: Vec<u32> = s.acs.iter().map(|a| a.doubling_limit).collect();
        assert_eq!(limits, vec![0, 1, 1, 6]);
    }

    #[test]
    fn table_se_override() {
        let s = table2().with_se_source(SeSource::Table).unwrap();
        assert_eq!(s.idm.s_e, 4.0);
    }

    #[test]
    fn window_invariant_violation_is_named() {
        let doc = minimal_doc().replace(
            r#"{"cw_min": 3, "cw_max": 7, "aifsn": 3, "retry_extra": 1, "lambda": 10}"#,
            r#"{"cw_min": 3, "cw_max": 7, "aifsn": 3, "doubling_limit": 2, "retry_extra": 1, "lambda": 10}"#,
        );
        let err = load_scenario(&doc).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("acs[1].cw_max"), "{msg}");
        assert!(msg.contains("2^M (cw_min + 1) - 1"), "{msg}");

        let doc = minimal_doc().replace(r#""cw_min": 7, "cw_max": 15"#, r#""cw_min": 7, "cw_max": 20"#);
        assert!(matches!(load_scenario(&doc), Err(ScenarioError::Invalid { .. })));
    }

    #[test]
    fn minimal_document_has_one_vehicle() {
        let s = load_scenario(&minimal_doc()).unwrap();
        assert_eq!(s.vehicle_count(), 1);
        assert_eq!(s.platoons[0].leader.v, s.idm.v_e);
    }

    #[test]
    fn malformed_documents_fail() {
        assert!(matches!(load_scenario("{"), Err(ScenarioError::Parse(_))));
        let doc = minimal_doc().replace(r#""d_r": 100"#, r#""d_r": 10"#);
        assert!(matches!(load_scenario(&doc), Err(ScenarioError::Invalid { field, .. }) if field == "geometry.d_r"));
        let doc = minimal_doc().replace(r#""aifsn": 2"#, r#""aifsn": 1"#);
        assert!(load_scenario(&doc).is_err());
        let doc = minimal_doc().replace(r#""x": -60"#, r#""x": -10"#);
        assert!(load_scenario(&doc).is_err());
        let doc = minimal_doc().replace(r#""vehicles": 1"#, r#""vehicles": 0"#);
        assert!(load_scenario(&doc).is_err());
    }

    #[test]
    fn aifs_values() {
        let s = table2();
        assert!((s.aifs(0) - 58e-6).abs() < 1e-15);
        assert!((s.aifs(3) - 149e-6).abs() < 1e-15);
        let mut ac = s.acs[0];
        ac.aifsn = 0;
        assert_eq!(ac.aifs(&s.phy), s.phy.sifs);
    }

    #[test]
    fn contention_windows() {
        let s = table2();
        assert_eq!(s.contention_window(3, 0), Ok(16));
        assert_eq!(s.contention_window(1, 1), Ok(8));
        assert_eq!(s.contention_window(1, 2), Ok(8));
        for m in 0..NUM_ACS {
            assert_eq!(s.contention_window(m, 0), Ok(s.acs[m].cw_min + 1));
        }
        for j in 0..=s.acs[0].retry_limit() {
            assert_eq!(s.contention_window(0, j), Ok(4));
        }
        assert_eq!(s.contention_window(3, 7), Ok(1024));
        assert_eq!(s.contention_window(3, 8), Err(RetryOutOfRange { j: 8, limit: 7 }));
    }

    #[test]
    fn light_phase_examples() {
        let s = load_scenario(&minimal_doc()).unwrap();
        let (p, rem) = s.light_phase(Approach::East, 29.9);
        assert_eq!(p, Phase::Green);
        assert!((rem - 0.1).abs() < 1e-9);
        assert_eq!(s.light_phase(Approach::East, 30.0), (Phase::Red, 150.0));
        assert_eq!(s.light_phase(Approach::East, 180.0), (Phase::Green, 30.0));
    }

    #[test]
    fn placement_is_deterministic_and_in_coverage() {
        let a = table2();
        let b = table2();
        assert_eq!(a.platoons, b.platoons);
        for p in &a.platoons {
            let lateral = p.lane.offset(a.geometry.lane_width);
            assert!(p.leader.x < a.geometry.area_entry());
            assert!(p.leader.x.hypot(lateral) <= a.geometry.d_r + 1e-9);
        }
    }

    proptest! {
        #[test]
        fn light_is_periodic(t in 0.0f64..2000.0, offset in 0.0f64..29.0, red in prop::bool::ANY) {
            let sched = TrafficLightSchedule {
                green: 30.0,
                red: 150.0,
                initial_phase: if red { Phase::Red } else { Phase::Green },
                phase_offset: offset,
            };
            let (p1, r1) = sched.phase_at(t);
            let (p2, r2) = sched.phase_at(t + sched.cycle());
            // exact-boundary samples may land on either side after the addition
            if (r1 - r2).abs() < 1e-6 {
                prop_assert_eq!(p1, p2);
            }
            prop_assert!(r1 > 0.0 && r1 <= 150.0);
        }

        #[test]
        fn window_monotone(cw_exp in 1u32..6, m in 0u32..7, extra in 0u32..3) {
            let cw_min = (1u32 << cw_exp) - 1;
            let ac = AcParams {
                cw_min,
                cw_max: ((cw_min + 1) << m) - 1,
                aifsn: 2,
                doubling_limit: m,
                retry_extra: extra,
                lambda: 1.0,
            };
            let ws: Vec<u32> = (0..=ac.retry_limit()).map(|j| ac.contention_window(j).unwrap()).collect();
            prop_assert!(ws.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(ws[m as usize..].iter().all(|&w| w == ac.cw_max + 1));
        }
    }
}
