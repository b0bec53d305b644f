//! Slot-level discrete-event simulation of broadcast EDCA over a trajectory's
//! hearing network, used to validate the analytical model.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::Serialize;

use crate::edca::transmission_time;
use crate::hearing::HearingMatrix;
use crate::scenario::{Scenario, NUM_ACS};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub replications: usize,
    /// Master seed; replication r uses stream r of it.
    pub seed: u64,
    /// Width of the output buckets, s.
    pub bucket: f64,
    /// Keep the event log of replication 0.
    pub record_events: bool,
}

impl SimConfig {
    pub fn new(seed: u64) -> Self {
        SimConfig {
            replications: 30,
            seed,
            bucket: 1.0,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrival,
    TxStart,
    TxEnd,
    InternalCollision,
    Drop,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Arrival => "arrival",
            EventKind::TxStart => "tx_start",
            EventKind::TxEnd => "tx_end",
            EventKind::InternalCollision => "internal_collision",
            EventKind::Drop => "drop",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SimEvent {
    pub slot: u64,
    pub vehicle: usize,
    pub ac: usize,
    pub kind: EventKind,
}

/// Packet bookkeeping of one (vehicle, AC) queue.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PacketCounts {
    pub arrivals: u64,
    pub transmitted: u64,
    pub dropped: u64,
    /// Still queued when the horizon is reached.
    pub queued: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
struct Accum {
    n: u64,
    sum: f64,
    sum_sq: f64,
}

impl Accum {
    fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sum_sq += x * x;
    }

    fn merge(&mut self, o: &Accum) {
        self.n += o.n;
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn mean(&self) -> Option<f64> {
        (self.n > 0).then(|| self.sum / self.n as f64)
    }
}

/// Sample mean and variance of a set of observations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Empirical {
    pub count: u64,
    pub mean: f64,
    pub variance: f64,
}

impl Empirical {
    fn from_accum(a: &Accum) -> Option<Self> {
        let mean = a.mean()?;
        let variance = if a.n > 1 {
            ((a.sum_sq - a.n as f64 * mean * mean) / (a.n - 1) as f64).max(0.0)
        } else {
            0.0
        };
        Some(Empirical {
            count: a.n,
            mean,
            variance,
        })
    }

    pub fn standard_error(&self) -> f64 {
        (self.variance / self.count as f64).sqrt()
    }
}

/// Raw tallies of one replication, or of several merged.
#[derive(Debug, Clone, PartialEq)]
struct Tally {
    /// [vehicle][bucket][ac]
    service: Vec<Vec<[Accum; NUM_ACS]>>,
    ptd: Vec<Vec<[Accum; NUM_ACS]>>,
    decoded: Vec<Vec<[u64; NUM_ACS]>>,
    counts: Vec<[PacketCounts; NUM_ACS]>,
    hidden_collisions: u64,
    exposed_collisions: u64,
}

impl Tally {
    fn new(vehicles: usize, buckets: usize) -> Self {
        Tally {
            service: vec![vec![[Accum::default(); NUM_ACS]; buckets]; vehicles],
            ptd: vec![vec![[Accum::default(); NUM_ACS]; buckets]; vehicles],
            decoded: vec![vec![[0; NUM_ACS]; buckets]; vehicles],
            counts: vec![[PacketCounts::default(); NUM_ACS]; vehicles],
            hidden_collisions: 0,
            exposed_collisions: 0,
        }
    }

    fn merge(&mut self, o: &Tally) {
        for (a, b) in self.service.iter_mut().flatten().zip(o.service.iter().flatten()) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        for (a, b) in self.ptd.iter_mut().flatten().zip(o.ptd.iter().flatten()) {
            for (x, y) in a.iter_mut().zip(b) {
                x.merge(y);
            }
        }
        for (a, b) in self.decoded.iter_mut().flatten().zip(o.decoded.iter().flatten()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        for (a, b) in self.counts.iter_mut().zip(&o.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                x.arrivals += y.arrivals;
                x.transmitted += y.transmitted;
                x.dropped += y.dropped;
                x.queued += y.queued;
            }
        }
        self.hidden_collisions += o.hidden_collisions;
        self.exposed_collisions += o.exposed_collisions;
    }
}

/// Per-bucket outputs of one vehicle. `None` marks an empty bucket.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimSeries {
    pub vehicle: usize,
    /// Mean service time per bucket, s.
    pub service: Vec<[Option<f64>; NUM_ACS]>,
    pub ptd: Vec<[Option<f64>; NUM_ACS]>,
    pub pdr: Vec<[Option<f64>; NUM_ACS]>,
    /// Service time over the whole run.
    pub service_total: [Option<Empirical>; NUM_ACS],
    /// Delivered receptions over offered receptions over the whole run.
    pub pdr_total: [Option<f64>; NUM_ACS],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    /// Start time of each bucket.
    pub bucket_times: Vec<f64>,
    pub series: Vec<SimSeries>,
    /// Summed over replications, per vehicle.
    pub counts: Vec<[PacketCounts; NUM_ACS]>,
    /// Receptions destroyed by a transmitter the sender could not hear.
    pub hidden_collisions: u64,
    /// Receptions destroyed by a transmitter the sender could hear.
    pub exposed_collisions: u64,
    pub replications: usize,
    /// Event log of replication 0 when requested.
    pub events: Vec<SimEvent>,
}

/// Slot timing shared by every replication.
#[derive(Debug, Clone)]
struct Timing {
    slot: f64,
    t_tr: f64,
    tx_slots: u64,
    aifs_slots: [u32; NUM_ACS],
    total_slots: u64,
    dt: f64,
    bucket: f64,
    buckets: usize,
}

impl Timing {
    fn new(scenario: &Scenario, bucket: f64) -> Self {
        let slot = scenario.phy.slot;
        let t_tr = transmission_time(&scenario.phy);
        let horizon = scenario.run.horizon;
        Timing {
            slot,
            t_tr,
            tx_slots: (t_tr / slot - 1e-9).ceil().max(1.0) as u64,
            aifs_slots: std::array::from_fn(|m| (scenario.aifs(m) / slot).round() as u32),
            total_slots: (horizon / slot - 1e-9).ceil() as u64,
            dt: scenario.run.dt,
            bucket,
            buckets: (horizon / bucket - 1e-9).ceil().max(1.0) as usize,
        }
    }

    fn time(&self, slot: u64) -> f64 {
        slot as f64 * self.slot
    }

    fn bucket_of(&self, t: f64) -> usize {
        ((t / self.bucket) as usize).min(self.buckets - 1)
    }

    fn step_of(&self, slot: u64, steps: usize) -> usize {
        ((self.time(slot) / self.dt + 1e-9) as usize).min(steps - 1)
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct AcState {
    /// Slot at which the head-of-line packet started contending.
    hol: Option<u64>,
    counter: u32,
    retry: u32,
    aifs_left: u32,
    transmitting: bool,
}

#[derive(Debug, Clone)]
struct Transmission {
    sender: usize,
    ac: usize,
    start: u64,
    end: u64,
    receivers: Vec<usize>,
    corrupted: Vec<bool>,
}

struct Replication<'a> {
    scenario: &'a Scenario,
    hearings: &'a [HearingMatrix],
    timing: &'a Timing,
    rng: ChaCha8Rng,
    queues: Vec<[VecDeque<u64>; NUM_ACS]>,
    acs: Vec<[AcState; NUM_ACS]>,
    /// (vehicle, ac) pairs with a head-of-line packet in contention.
    contending: Vec<(usize, usize)>,
    ongoing: Vec<Transmission>,
    tally: Tally,
    events: Option<Vec<SimEvent>>,
}

impl<'a> Replication<'a> {
    fn log(&mut self, slot: u64, vehicle: usize, ac: usize, kind: EventKind) {
        if let Some(ev) = self.events.as_mut() {
            ev.push(SimEvent {
                slot,
                vehicle,
                ac,
                kind,
            });
        }
    }

    fn draw_backoff(&mut self, m: usize, j: u32) -> u32 {
        let w = self
            .scenario
            .contention_window(m, j)
            .expect("retry index checked before drawing");
        self.rng.gen_range(0..w)
    }

    fn start_contention(&mut self, u: usize, m: usize, slot: u64) {
        let counter = self.draw_backoff(m, 0);
        self.acs[u][m] = AcState {
            hol: Some(slot),
            counter,
            retry: 0,
            aifs_left: 0,
            transmitting: false,
        };
        self.contending.push((u, m));
    }

    /// Is the channel busy for AC `m` of vehicle `u`, counting transmissions
    /// that started before `before` only?
    fn busy(&self, h: &HearingMatrix, u: usize, m: usize, before: u64) -> bool {
        self.ongoing.iter().filter(|tx| tx.start < before).any(|tx| {
            if tx.sender == u {
                tx.ac != m
            } else {
                h.get(u, tx.sender)
            }
        })
    }

    fn finish(&mut self, tx: Transmission) {
        let bucket = self.timing.bucket_of(self.timing.time(tx.start));
        let ok = tx.corrupted.iter().filter(|c| !**c).count() as u64;
        self.tally.decoded[tx.sender][bucket][tx.ac] += ok;
        self.log(tx.end, tx.sender, tx.ac, EventKind::TxEnd);
        self.acs[tx.sender][tx.ac].transmitting = false;
        if !self.queues[tx.sender][tx.ac].is_empty() {
            self.start_contention(tx.sender, tx.ac, tx.end);
        }
    }

    /// Record the service of the head-of-line packet of (u, m), which left
    /// the queue at `slot` after `extra` seconds more.
    fn complete(&mut self, u: usize, m: usize, slot: u64, extra: f64) {
        let arrival = self.queues[u][m].pop_front().expect("head-of-line packet queued");
        let hol = self.acs[u][m].hol.take().expect("head-of-line packet contending");
        let done = self.timing.time(slot) + extra;
        let b = self.timing.bucket_of(done);
        self.tally.service[u][b][m].push(self.timing.time(slot - hol) + extra);
        self.tally.ptd[u][b][m].push(done - self.timing.time(arrival));
    }

    fn transmit(&mut self, u: usize, m: usize, slot: u64, h: &HearingMatrix) {
        self.complete(u, m, slot, self.timing.t_tr);
        self.tally.counts[u][m].transmitted += 1;
        self.acs[u][m].transmitting = true;
        self.log(slot, u, m, EventKind::TxStart);

        let receivers: Vec<usize> = h.neighbors(u).collect();
        let mut tx = Transmission {
            sender: u,
            ac: m,
            start: slot,
            end: slot + self.timing.tx_slots,
            corrupted: vec![false; receivers.len()],
            receivers,
        };
        for other in &mut self.ongoing {
            let mutual = h.get(u, other.sender);
            for (i, &r) in tx.receivers.iter().enumerate() {
                if !tx.corrupted[i] && (r == other.sender || h.get(r, other.sender)) {
                    tx.corrupted[i] = true;
                    if mutual {
                        self.tally.exposed_collisions += 1;
                    } else {
                        self.tally.hidden_collisions += 1;
                    }
                }
            }
            for (i, &r) in other.receivers.iter().enumerate() {
                if !other.corrupted[i] && (r == u || h.get(r, u)) {
                    other.corrupted[i] = true;
                    if mutual {
                        self.tally.exposed_collisions += 1;
                    } else {
                        self.tally.hidden_collisions += 1;
                    }
                }
            }
        }
        self.ongoing.push(tx);
    }

    fn run(mut self) -> (Tally, Vec<SimEvent>) {
        let timing = self.timing;
        let n_veh = self.queues.len();
        let steps = self.hearings.len();
        let exp: Vec<Option<Exp<f64>>> = self.scenario.acs.iter().map(|ac| Exp::new(ac.lambda).ok()).collect();

        // next arrival of every (vehicle, ac), in continuous time
        let mut arrivals = BinaryHeap::new();
        for u in 0..n_veh {
            for (m, e) in exp.iter().enumerate() {
                if let Some(e) = e {
                    let t = e.sample(&mut self.rng);
                    arrivals.push(Reverse((slot_of(t, timing.slot), u, m)));
                }
            }
        }

        let mut n: u64 = 0;
        while n < timing.total_slots {
            // transmissions ending now
            let mut i = 0;
            while i < self.ongoing.len() {
                if self.ongoing[i].end <= n {
                    let tx = self.ongoing.remove(i);
                    self.finish(tx);
                } else {
                    i += 1;
                }
            }

            if self.ongoing.is_empty() && self.contending.is_empty() {
                match arrivals.peek() {
                    Some(Reverse((s, _, _))) if *s < timing.total_slots => n = n.max(*s),
                    _ => break,
                }
            }

            while let Some(&Reverse((s, u, m))) = arrivals.peek() {
                if s > n {
                    break;
                }
                arrivals.pop();
                self.queues[u][m].push_back(n);
                self.tally.counts[u][m].arrivals += 1;
                self.log(n, u, m, EventKind::Arrival);
                let st = self.acs[u][m];
                if st.hol.is_none() && !st.transmitting {
                    self.start_contention(u, m, n);
                }
                let e = exp[m].as_ref().expect("arrivals only for positive rates");
                let t = timing.time(s) + e.sample(&mut self.rng);
                arrivals.push(Reverse((slot_of(t, timing.slot).max(s + 1), u, m)));
            }

            let hearings = self.hearings;
            let h = &hearings[timing.step_of(n, steps)];

            // counters at zero on an idle channel transmit this slot
            self.contending.sort_unstable();
            let mut ready: Vec<(usize, usize)> = self
                .contending
                .iter()
                .copied()
                .filter(|&(u, m)| {
                    let st = &self.acs[u][m];
                    st.counter == 0 && st.aifs_left == 0 && !self.busy(h, u, m, n)
                })
                .collect();
            ready.sort_unstable();
            let mut winners = Vec::new();
            let mut k = 0;
            while k < ready.len() {
                let u = ready[k].0;
                winners.push(ready[k]);
                k += 1;
                while k < ready.len() && ready[k].0 == u {
                    let m = ready[k].1;
                    self.internal_collision(u, m, n);
                    k += 1;
                }
            }
            for &(u, m) in &winners {
                self.transmit(u, m, n, h);
            }
            self.contending.retain(|&(u, m)| self.acs[u][m].hol.is_some());

            // countdown for everyone still contending
            for idx in 0..self.contending.len() {
                let (u, m) = self.contending[idx];
                let busy = self.busy(h, u, m, n + 1);
                let st = &mut self.acs[u][m];
                if busy {
                    st.aifs_left = timing.aifs_slots[m];
                } else if st.aifs_left > 0 {
                    st.aifs_left -= 1;
                } else if st.counter > 0 {
                    st.counter -= 1;
                }
            }
            n += 1;
        }

        for (u, qs) in self.queues.iter().enumerate() {
            for (m, q) in qs.iter().enumerate() {
                self.tally.counts[u][m].queued = q.len() as u64;
            }
        }
        let events = self.events.take().unwrap_or_default();
        (self.tally, events)
    }

    fn internal_collision(&mut self, u: usize, m: usize, slot: u64) {
        self.log(slot, u, m, EventKind::InternalCollision);
        let retry = self.acs[u][m].retry + 1;
        if retry > self.scenario.acs[m].retry_limit() {
            self.log(slot, u, m, EventKind::Drop);
            self.complete(u, m, slot, 0.0);
            self.tally.counts[u][m].dropped += 1;
            if !self.queues[u][m].is_empty() {
                // the next packet contends from the following slot
                let counter = self.draw_backoff(m, 0);
                self.acs[u][m] = AcState {
                    hol: Some(slot + 1),
                    counter,
                    ..AcState::default()
                };
            }
        } else {
            let counter = self.draw_backoff(m, retry);
            let st = &mut self.acs[u][m];
            st.retry = retry;
            st.counter = counter;
        }
    }
}

fn slot_of(t: f64, slot: f64) -> u64 {
    (t / slot).ceil() as u64
}

/// Simulate `cfg.replications` independent runs over the hearing series and
/// report the pooled outputs of the vehicles in `targets`.
pub fn run_sim(scenario: &Scenario, hearings: &[HearingMatrix], targets: &[usize], cfg: &SimConfig) -> SimResult {
    assert!(cfg.replications >= 1, "at least one replication");
    assert!(!hearings.is_empty(), "hearing series covers the horizon");
    let timing = Timing::new(scenario, cfg.bucket);
    let n_veh = hearings[0].len();

    let runs: Vec<(Tally, Vec<SimEvent>)> = (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(r as u64);
            Replication {
                scenario,
                hearings,
                timing: &timing,
                rng,
                queues: vec![Default::default(); n_veh],
                acs: vec![[AcState::default(); NUM_ACS]; n_veh],
                contending: Vec::new(),
                ongoing: Vec::new(),
                tally: Tally::new(n_veh, timing.buckets),
                events: (cfg.record_events && r == 0).then(Vec::new),
            }
            .run()
        })
        .collect();

    let mut events = Vec::new();
    let mut tally = Tally::new(n_veh, timing.buckets);
    for (i, (t, ev)) in runs.into_iter().enumerate() {
        tally.merge(&t);
        if i == 0 {
            events = ev;
        }
    }

    let exposure = receiver_exposure(hearings, &timing);
    let reps = cfg.replications as f64;
    let series = targets
        .iter()
        .map(|&u| {
            let pdr_of = |decoded: u64, m: usize, seconds: f64| {
                let offered = scenario.acs[m].lambda * seconds * reps;
                (offered > 0.0).then(|| decoded as f64 / offered)
            };
            let pdr = (0..timing.buckets)
                .map(|b| std::array::from_fn(|m| pdr_of(tally.decoded[u][b][m], m, exposure[u][b])))
                .collect();
            let service_total = std::array::from_fn(|m| {
                let mut acc = Accum::default();
                for b in &tally.service[u] {
                    acc.merge(&b[m]);
                }
                Empirical::from_accum(&acc)
            });
            let pdr_total = std::array::from_fn(|m| {
                let decoded = tally.decoded[u].iter().map(|b| b[m]).sum();
                pdr_of(decoded, m, exposure[u].iter().sum())
            });
            SimSeries {
                vehicle: u,
                service: tally.service[u].iter().map(|b| b.map(|a| a.mean())).collect(),
                ptd: tally.ptd[u].iter().map(|b| b.map(|a| a.mean())).collect(),
                pdr,
                service_total,
                pdr_total,
            }
        })
        .collect();

    SimResult {
        bucket_times: (0..timing.buckets)
            .map(|b| scenario.run.t0 + b as f64 * cfg.bucket)
            .collect(),
        series,
        counts: tally.counts,
        hidden_collisions: tally.hidden_collisions,
        exposed_collisions: tally.exposed_collisions,
        replications: cfg.replications,
        events,
    }
}

/// Receiver-seconds of every vehicle per bucket: the number of vehicles in
/// range integrated over time.
fn receiver_exposure(hearings: &[HearingMatrix], timing: &Timing) -> Vec<Vec<f64>> {
    let n_veh = hearings[0].len();
    let horizon = timing.time(timing.total_slots);
    let mut out = vec![vec![0.0; timing.buckets]; n_veh];
    for (k, h) in hearings.iter().enumerate() {
        let start = k as f64 * timing.dt;
        if start >= horizon {
            break;
        }
        let len = timing.dt.min(horizon - start);
        let b = timing.bucket_of(start);
        for (u, row) in out.iter_mut().enumerate() {
            row[b] += h.neighbors(u).count() as f64 * len;
        }
    }
    out
}
