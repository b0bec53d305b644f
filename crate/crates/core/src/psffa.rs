//! Pointwise stationary fluid-flow approximation of each transmission queue:
//! dN/dt = λ − μ·ρ(N), with ρ(N) obtained by inverting the P-K formula.

use log::warn;

/// Largest utilization handed to the drain term.
pub const RHO_MAX: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueState {
    /// Expected number of queued packets.
    pub n: f64,
    pub t: f64,
}

/// Mean M/G/1 queue length for utilization `rho` and squared coefficient of
/// variation `c2` of the service time.
pub fn pk_queue_length(rho: f64, c2: f64) -> f64 {
    rho + rho * rho * (1.0 + c2) / (2.0 * (1.0 - rho))
}

/// Utilization whose P-K queue length is `n`. Written as
/// 2N / (N + 1 + √(N² + 2c²N + 1)), which needs no special case at c² = 1.
pub fn rho_from_n(n: f64, c2: f64) -> f64 {
    let n = n.max(0.0);
    let rho = 2.0 * n / (n + 1.0 + (n * n + 2.0 * c2 * n + 1.0).sqrt());
    if rho > RHO_MAX {
        warn!("utilization {rho} clamped below 1");
        return RHO_MAX;
    }
    rho
}

pub fn psffa_rhs(n: f64, lambda: f64, mu: f64, c2: f64) -> f64 {
    lambda - mu * rho_from_n(n, c2)
}

/// One classical Runge-Kutta step of dy/dt = f(t, y).
pub fn rk4<F: Fn(f64, f64) -> f64>(f: F, t: f64, y: f64, h: f64) -> f64 {
    let k1 = f(t, y);
    let k2 = f(t + h / 2.0, y + h / 2.0 * k1);
    let k3 = f(t + h / 2.0, y + h / 2.0 * k2);
    let k4 = f(t + h, y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Substeps per interval: a tenth of the interval, refined further so that
/// each substep is at most 1/μ. The drain term relaxes at rate ~μ, which
/// for packet service times of ~0.2 ms is far faster than Δt/10.
pub fn default_substeps(mu: f64, dt: f64) -> usize {
    (dt * mu).ceil().max(10.0) as usize
}

/// Advance the queue over `dt` with μ and c² frozen.
pub fn integrate_step(state: QueueState, lambda: f64, mu: f64, c2: f64, dt: f64) -> QueueState {
    integrate_step_with(state, lambda, mu, c2, dt, default_substeps(mu, dt))
}

/// As [`integrate_step`] with an explicit number of substeps.
pub fn integrate_step_with(state: QueueState, lambda: f64, mu: f64, c2: f64, dt: f64, substeps: usize) -> QueueState {
    let h = dt / substeps as f64;
    let mut n = state.n;
    for i in 0..substeps {
        n = rk4(|_, y| psffa_rhs(y, lambda, mu, c2), state.t + i as f64 * h, n, h);
    }
    if n < 0.0 {
        warn!("queue length {n} floored at 0");
        n = 0.0;
    }
    QueueState { n, t: state.t + dt }
}
