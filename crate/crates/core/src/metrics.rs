//! Packet transmission delay and packet delivery ratio.

use serde::{Deserialize, Serialize};

use crate::hearing::HearingMatrix;

/// Which hidden-vehicle set to use for P_hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HiddenFormula {
    /// Vehicles in the receiver's range and outside the sender's range.
    #[default]
    Standard,
    /// Exponent (1 − h_sender,receiver)·h_receiver,r as printed, which
    /// vanishes for every receiver the sender can reach.
    Printed,
}

/// Delay samples from queue lengths: PTD(t0) = N(t0)/λ, then each step adds
/// the change of N over λ.
pub fn ptd_series(queue: &[f64], lambda: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(queue.len());
    let Some(&first) = queue.first() else {
        return out;
    };
    let mut ptd = first / lambda;
    out.push(ptd);
    for pair in queue.windows(2) {
        ptd += (pair[1] - pair[0]) / lambda;
        out.push(ptd);
    }
    out
}

/// Probability that another vehicle the sender hears transmits at the same
/// time. The sender is left out; the receiver is not.
pub fn p_exposed(sender: usize, h: &HearingMatrix, tau: &[f64]) -> f64 {
    1.0 - h.neighbors(sender).map(|r| 1.0 - tau[r]).product::<f64>()
}

/// Probability that a vehicle hidden from the sender corrupts the reception
/// at `receiver` within the vulnerable window of 2·T_tr.
pub fn p_hidden(
    sender: usize,
    receiver: usize,
    h: &HearingMatrix,
    tau: &[f64],
    t_tr: f64,
    slot: f64,
    formula: HiddenFormula,
) -> f64 {
    let window = 2.0 * t_tr / slot;
    let survive: f64 = match formula {
        HiddenFormula::Standard => h
            .neighbors(receiver)
            .filter(|&r| r != sender && !h.get(sender, r))
            .map(|r| (1.0 - tau[r]).powf(window))
            .product(),
        HiddenFormula::Printed => {
            if h.get(sender, receiver) {
                1.0
            } else {
                h.neighbors(receiver).map(|r| (1.0 - tau[r]).powf(window)).product()
            }
        }
    };
    1.0 - survive
}

/// What a delivery computation needs to know about the channel at one instant.
#[derive(Debug, Clone, Copy)]
pub struct Channel<'a> {
    pub h: &'a HearingMatrix,
    /// Total transmission probability of every vehicle.
    pub tau: &'a [f64],
    pub t_tr: f64,
    pub slot: f64,
    pub formula: HiddenFormula,
}

impl Channel<'_> {
    /// Probability that `receiver` decodes a packet from `sender`.
    pub fn p_success(&self, sender: usize, receiver: usize) -> f64 {
        (1.0 - p_exposed(sender, self.h, self.tau))
            * (1.0 - p_hidden(sender, receiver, self.h, self.tau, self.t_tr, self.slot, self.formula))
    }

    /// Delivery ratio of one AC of `sender`: packets decoded by its
    /// receivers over packets offered to them. `throughput` is μρ and
    /// `lambda` the arrival rate. With no receivers the ratio is 1.
    pub fn pdr(&self, sender: usize, throughput: f64, lambda: f64) -> f64 {
        let mut offered = 0.0;
        let mut delivered = 0.0;
        for r in self.h.neighbors(sender) {
            offered += lambda;
            delivered += throughput * self.p_success(sender, r);
        }
        if offered == 0.0 {
            log::debug!("vehicle {sender} has no receivers at t = {}; PDR taken as 1", self.h.t);
            return 1.0;
        }
        (delivered / offered).clamp(0.0, 1.0)
    }
}
