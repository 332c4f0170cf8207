//! Staleness-aware weighting on the server and on devices.
//!
//! The server mixes an upload into the global model with weight
//!
//! ```text
//! xi(t, o)    = lambda / (sqrt(t) * (t - o + 1)^sigma) + iota
//! alpha(t, o) = mu_alpha * xi / (1 + mu_alpha * xi)
//! ```
//!
//! and a device blends a fresh global model (version `g`) into its local
//! model (base version `o`) with
//!
//! ```text
//! phi(g, o)  = gamma / sqrt(g) * (1 - upsilon / sqrt(g - o + 1))
//! beta(g, o) = mu_beta * phi / (1 + mu_beta * phi)
//! ```
//!
//! Both sets of control parameters are moved by one gradient step after each
//! use, using the closed-form partial derivatives below.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamVector;

pub const ALPHA_MIN: f64 = 1e-3;
pub const ALPHA_MAX: f64 = 1.0 - 1e-3;
pub const BETA_MAX: f64 = 1.0 - 1e-3;
pub const SIGMA_FLOOR: f64 = 1e-6;

/// Which expression is used for the `sigma` partial derivative.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaMode {
    /// Exact derivative of `xi` in `sigma`: `-lambda * ln(staleness) / (...)`.
    #[default]
    CorrectedLn,
    /// The published expression, which carries `ln(sigma)` instead.
    PaperLiteral,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerControls {
    pub lambda: f64,
    pub sigma: f64,
    pub iota: f64,
    pub eta_lambda: f64,
    pub eta_sigma: f64,
    pub eta_iota: f64,
    pub mu_alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeviceControls {
    pub gamma: f64,
    pub upsilon: f64,
    pub eta_gamma: f64,
    pub eta_upsilon: f64,
    pub mu_beta: f64,
}

fn staleness(t: u64, o: u64) -> f64 {
    debug_assert!(t >= o);
    (t - o + 1) as f64
}

impl ServerControls {
    pub fn xi(&self, t: u64, o: u64) -> f64 {
        self.lambda / ((t as f64).sqrt() * staleness(t, o).powf(self.sigma)) + self.iota
    }

    /// `mu_alpha / (1 + mu_alpha * xi)^2`, the outer factor shared by every partial.
    fn outer(&self, t: u64, o: u64) -> f64 {
        let d = 1.0 + self.mu_alpha * self.xi(t, o);
        self.mu_alpha / (d * d)
    }

    pub fn dalpha_dlambda(&self, t: u64, o: u64) -> f64 {
        self.outer(t, o) / ((t as f64).sqrt() * staleness(t, o).powf(self.sigma))
    }

    pub fn dalpha_diota(&self, t: u64, o: u64) -> f64 {
        self.outer(t, o)
    }

    pub fn dalpha_dsigma(&self, t: u64, o: u64, mode: SigmaMode) -> f64 {
        let s = staleness(t, o);
        let base = (t as f64).sqrt() * s.powf(self.sigma);
        let numer = match mode {
            SigmaMode::CorrectedLn => self.lambda * s.ln(),
            SigmaMode::PaperLiteral => self.sigma.max(SIGMA_FLOOR).ln(),
        };
        -self.outer(t, o) * numer / base
    }
}

impl DeviceControls {
    pub fn phi(&self, g: u64, o: u64) -> f64 {
        self.gamma / (g as f64).sqrt() * (1.0 - self.upsilon / staleness(g, o).sqrt())
    }

    fn outer(&self, g: u64, o: u64) -> f64 {
        let d = 1.0 + self.mu_beta * self.phi(g, o);
        self.mu_beta / (d * d)
    }

    pub fn dbeta_dgamma(&self, g: u64, o: u64) -> f64 {
        self.outer(g, o) / (g as f64).sqrt() * (1.0 - self.upsilon / staleness(g, o).sqrt())
    }

    pub fn dbeta_dupsilon(&self, g: u64, o: u64) -> f64 {
        -self.outer(g, o) * self.gamma / ((g as f64).sqrt() * staleness(g, o).sqrt())
    }
}

/// Server-side mixing weight for an upload based on version `o` arriving at
/// global version `t`, clamped to `[ALPHA_MIN, ALPHA_MAX]`.
pub fn alpha_weight(sc: &ServerControls, t: u64, o: u64) -> f64 {
    let xi = sc.xi(t, o);
    if !(xi > 0.0) || !xi.is_finite() {
        return ALPHA_MIN;
    }
    let a = sc.mu_alpha * xi / (1.0 + sc.mu_alpha * xi);
    if a.is_nan() {
        return ALPHA_MIN;
    }
    a.clamp(ALPHA_MIN, ALPHA_MAX)
}

/// Device-side weight of a fresh global model of version `g`; zero whenever
/// `phi` is not positive.
pub fn beta_weight(dc: &DeviceControls, g: u64, o: u64) -> f64 {
    let phi = dc.phi(g, o);
    if !(phi > 0.0) || !phi.is_finite() {
        return 0.0;
    }
    let b = dc.mu_beta * phi / (1.0 + dc.mu_beta * phi);
    if b.is_nan() {
        return 0.0;
    }
    b.clamp(0.0, BETA_MAX)
}

fn check_weight(w: f64, what: &str) -> Result<()> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::invalid(format!("{what} must lie in [0, 1], got {w}")));
    }
    Ok(())
}

/// `(1 - alpha) * w_t + alpha * w_o_i`.
pub fn server_merge(w_t: &ParamVector, w_o_i: &ParamVector, alpha: f64) -> Result<ParamVector> {
    check_weight(alpha, "alpha")?;
    w_t.lerp(w_o_i, alpha)
}

/// `(1 - beta) * w_local + beta * w_fresh`.
pub fn device_merge(w_local: &ParamVector, w_fresh: &ParamVector, beta: f64) -> Result<ParamVector> {
    check_weight(beta, "beta")?;
    w_local.lerp(w_fresh, beta)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StalenessCheck {
    Keep,
    Discard,
}

/// Uploads whose staleness `t - o + 1` exceeds `tau` are discarded.
pub fn check_staleness(t: u64, o: u64, tau: u64) -> StalenessCheck {
    if t - o + 1 > tau {
        StalenessCheck::Discard
    } else {
        StalenessCheck::Keep
    }
}

/// Inputs for one server control update.
///
/// The device's previous accepted upload `w_o_prime_i` was trained from
/// version `o_prime` and merged into `w_o_minus_1` at global version
/// `prev_t`; in the idealised single-device sequence `prev_t = o - 1`.
#[derive(Clone, Copy, Debug)]
pub struct AggregationContext<'a> {
    pub t: u64,
    pub o: u64,
    pub o_prime: u64,
    pub prev_t: u64,
    pub w_o: &'a ParamVector,
    pub w_o_i: &'a ParamVector,
    pub w_o_prime_i: &'a ParamVector,
    pub w_o_minus_1: &'a ParamVector,
    pub eta_i: f64,
    pub local_epochs: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ControlUpdate<C> {
    Updated(C),
    /// The update was not applicable; controls are unchanged.
    Skipped(SkipReason),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SkipReason {
    BaseVersionTooSmall,
    NoVersionGap,
    NonFinite,
}

impl<C: Copy> ControlUpdate<C> {
    pub fn unwrap_or(self, current: C) -> C {
        match self {
            ControlUpdate::Updated(c) => c,
            ControlUpdate::Skipped(_) => current,
        }
    }
}

/// One gradient step on `(lambda, sigma, iota)`.
///
/// The local gradient at `w_o` is approximated by `(w_o_i - w_o) / (eta_i * L)`.
pub fn update_server_controls(
    sc: &ServerControls,
    ctx: &AggregationContext<'_>,
    mode: SigmaMode,
) -> Result<ControlUpdate<ServerControls>> {
    if ctx.o < 2 {
        return Ok(ControlUpdate::Skipped(SkipReason::BaseVersionTooSmall));
    }
    if ctx.o_prime >= ctx.o || ctx.prev_t < ctx.o_prime {
        return Ok(ControlUpdate::Skipped(SkipReason::NoVersionGap));
    }
    let progress = ctx.w_o_i.sub(ctx.w_o)?;
    let prev_direction = ctx.w_o_prime_i.sub(ctx.w_o_minus_1)?;
    let scale = progress.dot(&prev_direction)? / (ctx.eta_i * ctx.local_epochs as f64);
    let (pt, po) = (ctx.prev_t, ctx.o_prime);

    let grad_lambda = scale * sc.dalpha_dlambda(pt, po);
    let grad_sigma = scale * sc.dalpha_dsigma(pt, po, mode);
    let grad_iota = scale * sc.dalpha_diota(pt, po);

    let mut next = *sc;
    next.lambda -= sc.eta_lambda * grad_lambda;
    next.sigma = (sc.sigma - sc.eta_sigma * grad_sigma).max(SIGMA_FLOOR);
    next.iota -= sc.eta_iota * grad_iota;
    if !(next.lambda.is_finite() && next.sigma.is_finite() && next.iota.is_finite()) {
        return Ok(ControlUpdate::Skipped(SkipReason::NonFinite));
    }
    Ok(ControlUpdate::Updated(next))
}

/// One gradient step on `(gamma, upsilon)` after merging a fresh model.
///
/// `w_local` is the local model the fresh one was blended into and
/// `local_grad` the mini-batch gradient at that model.
pub fn update_device_controls(
    dc: &DeviceControls,
    g: u64,
    o: u64,
    w_fresh: &ParamVector,
    w_local: &ParamVector,
    local_grad: &ParamVector,
) -> Result<ControlUpdate<DeviceControls>> {
    if g < o {
        return Err(Error::invalid("fresh version must not precede the base version"));
    }
    let direction = w_fresh.sub(w_local)?;
    let inner = local_grad.dot(&direction)?;
    let mut next = *dc;
    next.gamma -= dc.eta_gamma * inner * dc.dbeta_dgamma(g, o);
    next.upsilon -= dc.eta_upsilon * inner * dc.dbeta_dupsilon(g, o);
    if !(next.gamma.is_finite() && next.upsilon.is_finite()) {
        return Ok(ControlUpdate::Skipped(SkipReason::NonFinite));
    }
    Ok(ControlUpdate::Updated(next))
}
