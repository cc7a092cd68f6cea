//! Conservative transport of a potential over the graph.
//!
//! # Dynamics
//!
//! The state pairs a potential `u` with an antisymmetric flux `f` and
//! per-edge conductivities `α ≥ 0`. One [`transport_step`] applies the
//! staggered explicit update of the coupled dual PDEs
//!
//! ```text
//! f ← f + dt · (α ⊗ ∇u)
//! u ← u + dt · div_α(f),     div_α(f)_i = −Σ_j w_ij α_ij (f_ij − f_ji)
//! ```
//!
//! (the conductivity weights the divergence edge-wise, which keeps the
//! update expressible as antisymmetric per-edge increments for *any* α).
//! The u-update is literally performed as `u_i += Σ_j f̃_ij` with the applied
//! increments `f̃_ij = −dt · w_ij α_ij (f_ij − f_ji)`, so the discrete
//! conservation identity `u(t+1)_i = u(t)_i + Σ_j f̃_ij(t)` holds by
//! construction and total mass is exactly conserved up to rounding.
//!
//! Eliminating `f` shows the same dynamics in second-order form,
//! `u_tt = Δ_{α²} u` — a wave equation integrated by the leapfrog
//! [`wave_step`] (with `f ≡ 0` corresponding to `u_prev = u`).
//!
//! # Flow recovery
//!
//! [`flownet_train`] fits the wave model to observed trajectories with an
//! adversarial pair: the generator advances the potential one leapfrog step
//! per observation interval through a learned `α` and a monotone elementwise
//! readout, the discriminator synthesizes its own `α`, reconstructs the next
//! state, and scores inputs by reconstruction energy; losses follow the
//! margin form `L_D = D(real) + [ξ − D(fake)]⁺`, `L_G = D(fake)`.
//! [`two_step_baseline`] is the degraded comparison arm: least-squares fit
//! of the first-order model `du/dt = Δ_{α²} u`, then flows from the fitted
//! flux.
//!
//! Throughout, the learners work in per-interval time units (one model step
//! per observation interval), so learned conductivities absorb the physical
//! `dt` of the data.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{self, EdgeField, Graph, NodeField};

/// Fraction of the CFL limit `1/(α_max √λ_max(∇ᵀ∇))` allowed as a transport
/// or wave step.
pub const CFL_SAFETY: f64 = 0.5;

const OPNORM_ITERS: usize = 500;
const OPNORM_TOL: f64 = 1e-12;

fn validate_alpha(g: &Graph, alpha: &EdgeField) -> Result<()> {
    alpha.conforms(g, "conductivity field")?;
    for e in 0..alpha.edge_count() {
        for c in 0..alpha.channels() {
            let a = alpha.slot(2 * e, c);
            let b = alpha.slot(2 * e + 1, c);
            if a != b {
                return Err(Error::InvalidConfig("conductivity field must be symmetric"));
            }
            if !a.is_finite() || a < 0.0 {
                return Err(Error::InvalidParameter {
                    name: "alpha",
                    value: a,
                });
            }
        }
    }
    Ok(())
}

fn alpha_max(alpha: &EdgeField) -> f64 {
    alpha.max_abs()
}

/// Largest stable step for [`transport_step`] / [`wave_step`] with this
/// conductivity (`0.5 / (α_max √λ_max(∇ᵀ∇))`; infinite when frozen).
pub fn max_stable_dt(g: &Graph, alpha: &EdgeField) -> f64 {
    let a = alpha_max(alpha);
    let norm = graph::operator_norm(g, OPNORM_ITERS, OPNORM_TOL);
    if a <= 0.0 || norm <= 0.0 {
        f64::INFINITY
    } else {
        CFL_SAFETY / (a * libm::sqrt(norm))
    }
}

/// Potential/flux/conductivity state of the transport integrator.
#[derive(Debug, Clone)]
pub struct TransportState {
    /// Potential energy per node.
    pub u: NodeField,
    /// Antisymmetric spreading flux.
    pub flux: EdgeField,
    /// Symmetric non-negative per-edge conductivity (single channel,
    /// broadcast across the potential's channels).
    pub alpha: EdgeField,
    /// Completed steps.
    pub t: usize,
}

impl TransportState {
    /// Initial state at rest (`f = 0`).
    pub fn new(g: &Graph, u0: NodeField, alpha: EdgeField) -> Result<Self> {
        u0.conforms(g, "transport potential")?;
        validate_alpha(g, &alpha)?;
        if alpha.channels() != 1 {
            return Err(Error::DimensionMismatch {
                context: "conductivity channels",
                got: alpha.channels(),
                expected: 1,
            });
        }
        let flux = EdgeField::zeros(g, u0.channels());
        Ok(TransportState {
            u: u0,
            flux,
            alpha,
            t: 0,
        })
    }
}

/// Energy flux regulated by the potential field: `q_ij = α_ij w_ij (u_i − u_j)`.
pub fn extract_flux(g: &Graph, alpha: &EdgeField, u: &NodeField) -> Result<EdgeField> {
    validate_alpha(g, alpha)?;
    u.conforms(g, "flux potential")?;
    let m = u.channels();
    let mut out = EdgeField::zeros(g, m);
    for (e, edge) in g.edges().iter().enumerate() {
        let a = alpha.slot(2 * e, 0);
        for c in 0..m {
            let q = a * edge.w * (u.get(edge.i, c) - u.get(edge.j, c));
            out.set_slot(2 * e, c, q);
            out.set_slot(2 * e + 1, c, -q);
        }
    }
    Ok(out)
}

fn step_with_increments(
    g: &Graph,
    s: &TransportState,
    dt: f64,
    dt_max: f64,
) -> Result<(TransportState, EdgeField)> {
    if !dt.is_finite() || dt <= 0.0 || dt > dt_max {
        return Err(Error::UnstableStep { tau: dt, max: dt_max });
    }
    let m = s.u.channels();
    let mut next = s.clone();

    // f ← f + dt (α ⊗ ∇u); antisymmetry is preserved exactly.
    let grad = graph::gradient(g, &s.u)?;
    for (e, _) in g.edges().iter().enumerate() {
        let a = s.alpha.slot(2 * e, 0);
        for c in 0..m {
            let d = dt * a * grad.slot(2 * e, c);
            let fwd = next.flux.slot(2 * e, c) + d;
            next.flux.set_slot(2 * e, c, fwd);
            let rev = next.flux.slot(2 * e + 1, c) - d;
            next.flux.set_slot(2 * e + 1, c, rev);
        }
    }

    // Applied per-edge increments f̃_ij = −dt w α (f_ij − f_ji), then
    // u_i += Σ_j f̃_ij so the conservation identity is structural.
    let mut increments = EdgeField::zeros(g, m);
    for (e, edge) in g.edges().iter().enumerate() {
        let a = s.alpha.slot(2 * e, 0);
        for c in 0..m {
            let v = -dt * edge.w * a * (next.flux.slot(2 * e, c) - next.flux.slot(2 * e + 1, c));
            increments.set_slot(2 * e, c, v);
            increments.set_slot(2 * e + 1, c, -v);
        }
    }
    for (e, edge) in g.edges().iter().enumerate() {
        for c in 0..m {
            let v = increments.slot(2 * e, c);
            let ui = next.u.get(edge.i, c) + v;
            next.u.set(edge.i, c, ui);
            let uj = next.u.get(edge.j, c) - v;
            next.u.set(edge.j, c, uj);
        }
    }
    next.t += 1;
    Ok((next, increments))
}

/// One staggered explicit step (flux update, then potential update).
pub fn transport_step(g: &Graph, s: &TransportState, dt: f64) -> Result<TransportState> {
    s.u.conforms(g, "transport potential")?;
    s.flux.conforms(g, "transport flux")?;
    let (next, _) = step_with_increments(g, s, dt, max_stable_dt(g, &s.alpha))?;
    Ok(next)
}

/// Time-stamped sequence of node observations.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<NodeField>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.times.len() != self.states.len() {
            return Err(Error::DimensionMismatch {
                context: "trajectory times",
                got: self.times.len(),
                expected: self.states.len(),
            });
        }
        if self.states.is_empty() {
            return Err(Error::InvalidConfig("trajectory is empty"));
        }
        for pair in self.times.windows(2) {
            if pair[1] <= pair[0] {
                return Err(Error::InvalidConfig(
                    "trajectory times must be strictly increasing",
                ));
            }
        }
        let m = self.states[0].channels();
        let n = self.states[0].rows();
        for s in &self.states {
            if s.channels() != m || s.rows() != n {
                return Err(Error::InvalidConfig(
                    "trajectory states must share one shape",
                ));
            }
        }
        Ok(())
    }

    /// Number of observation intervals.
    pub fn intervals(&self) -> usize {
        self.states.len().saturating_sub(1)
    }
}

/// Integrates the transport dynamics for `steps` steps, recording each state
/// and the applied per-step flow increments.
///
/// Every recorded increment field `f̃(t)` satisfies
/// `u(t+1)_i = u(t)_i + Σ_j f̃_ij(t)` exactly, and with uniform α the total
/// mass drifts only by accumulated rounding.
pub fn simulate(
    g: &Graph,
    u0: &NodeField,
    alpha: &EdgeField,
    steps: usize,
    dt: f64,
) -> Result<(Trajectory, Vec<EdgeField>)> {
    if steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            value: 0.0,
        });
    }
    let mut state = TransportState::new(g, u0.clone(), alpha.clone())?;
    let dt_max = max_stable_dt(g, alpha);
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut flows = Vec::with_capacity(steps);
    times.push(0.0);
    states.push(state.u.clone());
    for k in 0..steps {
        let (next, increments) = step_with_increments(g, &state, dt, dt_max)?;
        if next.u.has_non_finite() {
            return Err(Error::Diverged {
                context: "transport simulation",
                step: k,
            });
        }
        state = next;
        times.push(dt * (k + 1) as f64);
        states.push(state.u.clone());
        flows.push(increments);
    }
    Ok((Trajectory { times, states }, flows))
}

/// Laplacian with α²-scaled edge weights:
/// `(Δ_{α²} u)_i = −2 Σ_j w_ij² α_ij² (u_i − u_j)`.
fn alpha_sq_laplacian(g: &Graph, u: &NodeField, alpha_per_edge: &[f64]) -> NodeField {
    let m = u.channels();
    let mut out = NodeField::zeros(u.rows(), m);
    for (e, edge) in g.edges().iter().enumerate() {
        let coeff = 2.0 * edge.w * edge.w * alpha_per_edge[e] * alpha_per_edge[e];
        for c in 0..m {
            let d = coeff * (u.get(edge.i, c) - u.get(edge.j, c));
            let vi = out.get(edge.i, c) - d;
            out.set(edge.i, c, vi);
            let vj = out.get(edge.j, c) + d;
            out.set(edge.j, c, vj);
        }
    }
    out
}

/// Leapfrog step of the wave form `u_tt = Δ_{α²} u`:
/// `u_next = 2u − u_prev + dt² Δ_{α²} u`.
pub fn wave_step(
    g: &Graph,
    u: &NodeField,
    u_prev: &NodeField,
    alpha: &EdgeField,
    dt: f64,
) -> Result<NodeField> {
    u.conforms(g, "wave potential")?;
    u_prev.conforms(g, "wave previous potential")?;
    if u.channels() != u_prev.channels() {
        return Err(Error::DimensionMismatch {
            context: "wave potential channels",
            got: u_prev.channels(),
            expected: u.channels(),
        });
    }
    validate_alpha(g, alpha)?;
    let dt_max = max_stable_dt(g, alpha);
    if !dt.is_finite() || dt <= 0.0 || dt > dt_max {
        return Err(Error::UnstableStep { tau: dt, max: dt_max });
    }
    let per_edge: Vec<f64> = (0..g.edge_count()).map(|e| alpha.slot(2 * e, 0)).collect();
    let lap = alpha_sq_laplacian(g, u, &per_edge);
    let mut out = NodeField::zeros(u.rows(), u.channels());
    for i in 0..u.rows() {
        for c in 0..u.channels() {
            out.set(
                i,
                c,
                2.0 * u.get(i, c) - u_prev.get(i, c) + dt * dt * lap.get(i, c),
            );
        }
    }
    Ok(out)
}

/// Margin losses of the energy-based adversarial pair:
/// `l_d = d_real + max(0, ξ − d_fake)`, `l_g = d_fake`.
pub fn gan_losses(d_real: f64, d_fake: f64, xi: f64) -> (f64, f64) {
    debug_assert!(xi > 0.0);
    (d_real + (xi - d_fake).max(0.0), d_fake)
}

fn softplus(x: f64) -> f64 {
    // log(1 + e^x), stable for large |x|.
    if x > 30.0 {
        x
    } else if x < -30.0 {
        libm::exp(x)
    } else {
        libm::log1p(libm::exp(x))
    }
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Raw value whose softplus is 1 (`ln(e − 1)`), used to initialize readout
/// slopes at identity scale.
const RAW_SLOPE_UNIT: f64 = 0.541_324_854_612_918_3;

/// One half of the adversarial pair: per-edge conductivity parameters
/// (`α = softplus(raw)`, shared across the symmetric edge pair) plus a
/// monotone elementwise readout `x = slope·u + bias` with
/// `slope = softplus(raw_slope) > 0`.
#[derive(Debug, Clone)]
pub struct FlowModel {
    pub raw_alpha: Vec<f64>,
    pub raw_slope: f64,
    pub bias: f64,
}

impl FlowModel {
    fn init(edge_count: usize, rng: &mut ChaCha8Rng) -> Self {
        // α starts small (softplus(−1) ≈ 0.31) with a little spread so the
        // per-edge parameters are distinguishable from the first epoch.
        let raw_alpha = (0..edge_count)
            .map(|_| -1.0 + 0.1 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        FlowModel {
            raw_alpha,
            raw_slope: RAW_SLOPE_UNIT,
            bias: 0.0,
        }
    }

    /// Conductivities `softplus(raw_alpha)`, one per canonical edge.
    pub fn alpha(&self) -> Vec<f64> {
        self.raw_alpha.iter().map(|r| softplus(*r)).collect()
    }

    pub fn slope(&self) -> f64 {
        softplus(self.raw_slope)
    }

    fn parameter_count(&self) -> usize {
        self.raw_alpha.len() + 2
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut flat = self.raw_alpha.clone();
        flat.push(self.raw_slope);
        flat.push(self.bias);
        flat
    }

    fn from_flat(&mut self, flat: &[f64]) {
        let e = self.raw_alpha.len();
        self.raw_alpha.copy_from_slice(&flat[..e]);
        self.raw_slope = flat[e];
        self.bias = flat[e + 1];
    }

    /// Potential implied by an observation through the inverse readout.
    fn to_potential(&self, x: &NodeField) -> NodeField {
        let a = self.slope();
        let mut u = x.clone();
        for v in u.values_mut() {
            *v = (*v - self.bias) / a;
        }
        u
    }

    /// One model step of the potential, teacher-forced from observations:
    /// leapfrog when a previous observation exists, from-rest otherwise.
    fn advance(&self, g: &Graph, x_t: &NodeField, x_prev: Option<&NodeField>) -> NodeField {
        let alpha = self.alpha();
        let u_t = self.to_potential(x_t);
        let lap = alpha_sq_laplacian(g, &u_t, &alpha);
        let mut u_next = NodeField::zeros(u_t.rows(), u_t.channels());
        match x_prev {
            Some(xp) => {
                let u_p = self.to_potential(xp);
                for (idx, v) in u_next.values_mut().iter_mut().enumerate() {
                    *v = 2.0 * u_t.values()[idx] - u_p.values()[idx] + lap.values()[idx];
                }
            }
            None => {
                for (idx, v) in u_next.values_mut().iter_mut().enumerate() {
                    *v = u_t.values()[idx] + lap.values()[idx];
                }
            }
        }
        u_next
    }

    /// Readout applied to a potential.
    fn readout(&self, u: &NodeField) -> NodeField {
        let a = self.slope();
        let mut x = u.clone();
        for v in x.values_mut() {
            *v = a * *v + self.bias;
        }
        x
    }

    /// Prediction of the next observation from the current (and previous).
    fn predict(&self, g: &Graph, x_t: &NodeField, x_prev: Option<&NodeField>) -> NodeField {
        self.readout(&self.advance(g, x_t, x_prev))
    }
}

/// Generator/discriminator pair with the positive margin ξ.
#[derive(Debug, Clone)]
pub struct FlowNet {
    pub generator: FlowModel,
    pub discriminator: FlowModel,
    pub margin: f64,
}

/// Training configuration for [`flownet_train`].
#[derive(Debug, Clone)]
pub struct FlownetConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// Positive margin ξ of the discriminator loss.
    pub margin: f64,
    /// Weight of the adversarial term in the generator loss.
    pub gan_weight: f64,
    pub seed: u64,
}

impl Default for FlownetConfig {
    fn default() -> Self {
        FlownetConfig {
            epochs: 500,
            learning_rate: 0.05,
            margin: 1.0,
            gan_weight: 1.0,
            seed: 0,
        }
    }
}

impl FlownetConfig {
    fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                value: self.learning_rate,
            });
        }
        if !self.margin.is_finite() || self.margin <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "margin",
                value: self.margin,
            });
        }
        if !self.gan_weight.is_finite() || self.gan_weight < 0.0 {
            return Err(Error::InvalidParameter {
                name: "gan_weight",
                value: self.gan_weight,
            });
        }
        Ok(())
    }
}

/// Per-epoch telemetry of a [`flownet_train`] run.
#[derive(Debug, Clone, Default)]
pub struct FlownetReport {
    pub generator_loss: Vec<f64>,
    pub discriminator_loss: Vec<f64>,
    pub mse: Vec<f64>,
}

fn mean_sq_diff(a: &NodeField, b: &NodeField) -> f64 {
    let n = a.values().len() as f64;
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n
}

/// Backpropagates `d_out` (gradient w.r.t. the model's predicted
/// observation) into flat parameter gradients. Shared by both halves of the
/// adversarial pair since they use the same architecture.
///
/// `grads` is accumulated in place, laid out as `[raw_alpha…, raw_slope, bias]`.
fn accumulate_model_gradients(
    model: &FlowModel,
    g: &Graph,
    x_t: &NodeField,
    x_prev: Option<&NodeField>,
    d_out: &NodeField,
    grads: &mut [f64],
) {
    let e_count = g.edge_count();
    let a = model.slope();
    let alpha = model.alpha();
    let u_t = model.to_potential(x_t);
    let u_p = x_prev.map(|xp| model.to_potential(xp));
    let u_next = model.advance(g, x_t, x_prev);

    // x̂ = a·û + b
    let mut d_unext = d_out.clone();
    for v in d_unext.values_mut() {
        *v *= a;
    }
    let d_slope_direct: f64 = d_out
        .values()
        .iter()
        .zip(u_next.values())
        .map(|(d, u)| d * u)
        .sum();
    let d_bias_direct: f64 = d_out.values().iter().sum();

    // û = c1·u_t − c2·u_prev + Δ_{α²} u_t
    let (c1, c2) = if x_prev.is_some() { (2.0, 1.0) } else { (1.0, 0.0) };

    // ∂û/∂α²_e hits nodes i and j with opposite signs.
    let m = u_t.channels();
    for (e, edge) in g.edges().iter().enumerate() {
        let mut d_alpha_sq = 0.0;
        for c in 0..m {
            let d = 2.0 * edge.w * edge.w * (u_t.get(edge.i, c) - u_t.get(edge.j, c));
            d_alpha_sq += -d * (d_unext.get(edge.i, c) - d_unext.get(edge.j, c));
        }
        // α² = softplus(r)²  ⇒  d/dr = 2α·σ(r)
        grads[e] += d_alpha_sq * 2.0 * alpha[e] * logistic(model.raw_alpha[e]);
    }

    // Gradient w.r.t. u_t: the linear term plus the (symmetric) Laplacian.
    let lap_back = alpha_sq_laplacian(g, &d_unext, &alpha);
    let mut d_ut = d_unext.clone();
    for (idx, v) in d_ut.values_mut().iter_mut().enumerate() {
        *v = c1 * *v + lap_back.values()[idx];
    }
    // u = (x − b)/a ⇒ ∂u/∂a = −u/a, ∂u/∂b = −1/a.
    let mut d_slope = d_slope_direct;
    let mut d_bias = d_bias_direct;
    d_slope += d_ut
        .values()
        .iter()
        .zip(u_t.values())
        .map(|(d, u)| d * (-u / a))
        .sum::<f64>();
    d_bias += d_ut.values().iter().map(|d| d * (-1.0 / a)).sum::<f64>();
    if let Some(up) = &u_p {
        // d_uprev = −c2·d_unext
        d_slope += d_unext
            .values()
            .iter()
            .zip(up.values())
            .map(|(d, u)| -c2 * d * (-u / a))
            .sum::<f64>();
        d_bias += d_unext
            .values()
            .iter()
            .map(|d| -c2 * d * (-1.0 / a))
            .sum::<f64>();
    }
    grads[e_count] += d_slope * logistic(model.raw_slope);
    grads[e_count + 1] += d_bias;
}

/// Generator objective over the whole trajectory
/// (`Σ_t MSE(x̂_{t+1}, x_{t+1}) + gan_weight · D(x̂_{t+1})`, discriminator
/// frozen) and its analytic gradients, flat as `[raw_alpha…, raw_slope, bias]`.
pub fn generator_loss_and_gradients(
    net: &FlowNet,
    g: &Graph,
    traj: &Trajectory,
    gan_weight: f64,
) -> Result<(f64, Vec<f64>)> {
    traj.validate()?;
    if traj.intervals() == 0 {
        return Err(Error::InvalidConfig("trajectory needs at least 2 points"));
    }
    let mut grads = vec![0.0; net.generator.parameter_count()];
    let mut loss = 0.0;
    let entries = (traj.states[0].rows() * traj.states[0].channels()) as f64;
    for t in 0..traj.intervals() {
        let x_prev = if t > 0 { Some(&traj.states[t - 1]) } else { None };
        let x_hat = net.generator.predict(g, &traj.states[t], x_prev);
        let x_true = &traj.states[t + 1];
        let x_tilde = net.discriminator.predict(g, &traj.states[t], None);
        loss += mean_sq_diff(&x_hat, x_true) + gan_weight * mean_sq_diff(&x_hat, &x_tilde);
        let mut d_out = NodeField::zeros(x_hat.rows(), x_hat.channels());
        for (idx, v) in d_out.values_mut().iter_mut().enumerate() {
            *v = 2.0 / entries * (x_hat.values()[idx] - x_true.values()[idx])
                + gan_weight * 2.0 / entries * (x_hat.values()[idx] - x_tilde.values()[idx]);
        }
        accumulate_model_gradients(&net.generator, g, &traj.states[t], x_prev, &d_out, &mut grads);
    }
    Ok((loss, grads))
}

/// Discriminator objective (`Σ_t D(x_{t+1}) + [ξ − D(x̂_{t+1})]⁺`, generator
/// frozen) and its analytic gradients.
fn discriminator_loss_and_gradients(
    net: &FlowNet,
    g: &Graph,
    traj: &Trajectory,
) -> Result<(f64, Vec<f64>)> {
    let mut grads = vec![0.0; net.discriminator.parameter_count()];
    let mut loss = 0.0;
    let entries = (traj.states[0].rows() * traj.states[0].channels()) as f64;
    for t in 0..traj.intervals() {
        let x_prev = if t > 0 { Some(&traj.states[t - 1]) } else { None };
        let x_hat = net.generator.predict(g, &traj.states[t], x_prev);
        let x_true = &traj.states[t + 1];
        let x_tilde = net.discriminator.predict(g, &traj.states[t], None);
        let d_real = mean_sq_diff(&x_tilde, x_true);
        let d_fake = mean_sq_diff(&x_tilde, &x_hat);
        let (l_d, _) = gan_losses(d_real, d_fake, net.margin);
        loss += l_d;
        let hinge_active = net.margin - d_fake > 0.0;
        let mut d_out = NodeField::zeros(x_tilde.rows(), x_tilde.channels());
        for (idx, v) in d_out.values_mut().iter_mut().enumerate() {
            let mut d = 2.0 / entries * (x_tilde.values()[idx] - x_true.values()[idx]);
            if hinge_active {
                d -= 2.0 / entries * (x_tilde.values()[idx] - x_hat.values()[idx]);
            }
            *v = d;
        }
        accumulate_model_gradients(
            &net.discriminator,
            g,
            &traj.states[t],
            None,
            &d_out,
            &mut grads,
        );
    }
    Ok((loss, grads))
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
    lr: f64,
}

impl Adam {
    fn new(len: usize, lr: f64) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        self.t += 1;
        let bc1 = 1.0 - libm::pow(B1, self.t as f64);
        let bc2 = 1.0 - libm::pow(B2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = B1 * self.m[i] + (1.0 - B1) * grads[i];
            self.v[i] = B2 * self.v[i] + (1.0 - B2) * grads[i] * grads[i];
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (libm::sqrt(vh) + EPS);
        }
    }
}

/// Per-interval flows implied by conductivities `alpha` (per canonical edge)
/// on an observed trajectory, in the increment convention of [`simulate`]:
/// the canonical slot of `f̂(t)` is the mass received by node `i` from `j`
/// over interval `t`. The internal flux teacher-forces on the observations
/// and accumulates across intervals, mirroring the transport integrator.
fn flows_from_alpha(
    g: &Graph,
    states: &[NodeField],
    alpha: &[f64],
    to_potential: impl Fn(&NodeField) -> NodeField,
) -> Vec<EdgeField> {
    let m = states[0].channels();
    let mut acc = vec![0.0; g.edge_count() * m];
    let mut flows = Vec::with_capacity(states.len() - 1);
    for x_t in &states[..states.len() - 1] {
        let u = to_potential(x_t);
        let mut field = EdgeField::zeros(g, m);
        for (e, edge) in g.edges().iter().enumerate() {
            for c in 0..m {
                acc[e * m + c] += alpha[e] * edge.w * (u.get(edge.i, c) - u.get(edge.j, c));
                let inc = -2.0 * edge.w * alpha[e] * acc[e * m + c];
                field.set_slot(2 * e, c, inc);
                field.set_slot(2 * e + 1, c, -inc);
            }
        }
        flows.push(field);
    }
    flows
}

/// Trains the adversarial flow-recovery pair on a trajectory.
///
/// Alternates one Adam update of the generator (MSE to the next observation
/// plus the margin term) with one of the discriminator per epoch. Returns
/// the trained pair, the learned conductivities (symmetric edge field, in
/// per-interval units), the per-interval flow estimates, and per-epoch loss
/// telemetry. Non-finite losses abort with the failing phase and epoch.
pub fn flownet_train(
    g: &Graph,
    traj: &Trajectory,
    cfg: &FlownetConfig,
) -> Result<(FlowNet, EdgeField, Vec<EdgeField>, FlownetReport)> {
    cfg.validate()?;
    traj.validate()?;
    if traj.intervals() == 0 {
        return Err(Error::InvalidConfig("trajectory needs at least 2 points"));
    }
    traj.states[0].conforms(g, "trajectory states")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = FlowNet {
        generator: FlowModel::init(g.edge_count(), &mut rng),
        discriminator: FlowModel::init(g.edge_count(), &mut rng),
        margin: cfg.margin,
    };
    let mut report = FlownetReport::default();
    let mut gen_adam = Adam::new(net.generator.parameter_count(), cfg.learning_rate);
    let mut disc_adam = Adam::new(net.discriminator.parameter_count(), cfg.learning_rate);

    for epoch in 0..cfg.epochs {
        let (l_g, g_grads) = generator_loss_and_gradients(&net, g, traj, cfg.gan_weight)?;
        if !l_g.is_finite() {
            return Err(Error::Diverged {
                context: "flow generator training",
                step: epoch,
            });
        }
        let mut flat = net.generator.to_flat();
        gen_adam.step(&mut flat, &g_grads);
        net.generator.from_flat(&flat);

        let (l_d, d_grads) = discriminator_loss_and_gradients(&net, g, traj)?;
        if !l_d.is_finite() {
            return Err(Error::Diverged {
                context: "flow discriminator training",
                step: epoch,
            });
        }
        let mut flat = net.discriminator.to_flat();
        disc_adam.step(&mut flat, &d_grads);
        net.discriminator.from_flat(&flat);

        // Data-fit component alone, for the report.
        let mut mse = 0.0;
        for t in 0..traj.intervals() {
            let x_prev = if t > 0 { Some(&traj.states[t - 1]) } else { None };
            let x_hat = net.generator.predict(g, &traj.states[t], x_prev);
            mse += mean_sq_diff(&x_hat, &traj.states[t + 1]);
        }
        report.generator_loss.push(l_g);
        report.discriminator_loss.push(l_d);
        report.mse.push(mse);
    }

    let alpha = net.generator.alpha();
    let alpha_field = EdgeField::symmetric(g, 1, &alpha)?;
    let gen = net.generator.clone();
    let flows = flows_from_alpha(g, &traj.states, &alpha, move |x| gen.to_potential(x));
    Ok((net, alpha_field, flows, report))
}

/// Result of the two-step least-squares baseline.
#[derive(Debug, Clone)]
pub struct BaselineFit {
    /// Fitted conductivities (symmetric edge field, per-interval units).
    pub alpha: EdgeField,
    /// Per-interval flows from the fitted flux, increment convention.
    pub flows: Vec<EdgeField>,
    /// True when the normal equations were rank-deficient and a ridge term
    /// was added.
    pub regularized: bool,
    /// Root-mean-square residual of the linear fit.
    pub residual: f64,
}

/// Degraded two-step comparison arm: fit `θ = α²` by least squares on the
/// first-order model `u_{t+1} − u_t = Δ_θ u_t` (one step per observation
/// interval), then read flows off the fitted flux `q = α̂ ⊗ ∇u_t`.
///
/// The wave memory of the true dynamics is deliberately ignored — that is
/// what makes this the degraded arm.
pub fn two_step_baseline(g: &Graph, traj: &Trajectory) -> Result<BaselineFit> {
    traj.validate()?;
    if traj.intervals() == 0 {
        return Err(Error::InvalidConfig("trajectory needs at least 2 points"));
    }
    traj.states[0].conforms(g, "trajectory states")?;
    let e_count = g.edge_count();
    let m = traj.states[0].channels();
    let n = g.node_count();

    // Normal equations M θ = b accumulated row by row; rows are
    // (interval, node, channel), columns are edges.
    let mut mat = vec![0.0f64; e_count * e_count];
    let mut rhs = vec![0.0f64; e_count];
    let mut y_sq = 0.0f64;
    let mut row = vec![0.0f64; e_count];
    let rows_total = traj.intervals() * n * m;
    for t in 0..traj.intervals() {
        let u = &traj.states[t];
        let u_next = &traj.states[t + 1];
        for i in 0..n {
            for c in 0..m {
                for v in row.iter_mut() {
                    *v = 0.0;
                }
                for (e, edge) in g.edges().iter().enumerate() {
                    if edge.i == i {
                        row[e] = -2.0 * edge.w * edge.w * (u.get(edge.i, c) - u.get(edge.j, c));
                    } else if edge.j == i {
                        row[e] = 2.0 * edge.w * edge.w * (u.get(edge.i, c) - u.get(edge.j, c));
                    }
                }
                let y = u_next.get(i, c) - u.get(i, c);
                y_sq += y * y;
                for a in 0..e_count {
                    if row[a] == 0.0 {
                        continue;
                    }
                    rhs[a] += row[a] * y;
                    for b in 0..e_count {
                        mat[a * e_count + b] += row[a] * row[b];
                    }
                }
            }
        }
    }

    let (theta, regularized) = solve_normal_equations(&mat, &rhs, e_count);

    // Fit residual: ‖y − Aθ‖² = y·y − 2θ·b + θᵀMθ (all accumulated above).
    let mut quad = 0.0;
    for a in 0..e_count {
        for b in 0..e_count {
            quad += theta[a] * mat[a * e_count + b] * theta[b];
        }
    }
    let dot: f64 = theta.iter().zip(&rhs).map(|(t, r)| t * r).sum();
    let sse = (y_sq - 2.0 * dot + quad).max(0.0);
    let residual = libm::sqrt(sse / rows_total.max(1) as f64);

    let alpha: Vec<f64> = theta.iter().map(|t| libm::sqrt(t.max(0.0))).collect();
    let alpha_field = EdgeField::symmetric(g, 1, &alpha)?;
    let flows = flows_from_alpha(g, &traj.states, &alpha, |x| x.clone());
    Ok(BaselineFit {
        alpha: alpha_field,
        flows,
        regularized,
        residual,
    })
}

/// Gaussian elimination with partial pivoting on the (symmetric PSD) normal
/// matrix; falls back to a ridge-regularized solve when a pivot collapses.
fn solve_normal_equations(mat: &[f64], rhs: &[f64], dim: usize) -> (Vec<f64>, bool) {
    if dim == 0 {
        return (Vec::new(), false);
    }
    let trace: f64 = (0..dim).map(|i| mat[i * dim + i]).sum();
    let pivot_floor = 1e-12 * (trace / dim as f64).max(1e-300);
    match gaussian_solve(mat.to_vec(), rhs.to_vec(), dim, pivot_floor) {
        Some(theta) => (theta, false),
        None => {
            let ridge = 1e-8 * (trace / dim as f64).max(1e-8);
            let mut damped = mat.to_vec();
            for i in 0..dim {
                damped[i * dim + i] += ridge;
            }
            let theta = gaussian_solve(damped, rhs.to_vec(), dim, 0.0)
                .expect("ridge-damped system is positive definite");
            (theta, true)
        }
    }
}

fn gaussian_solve(
    mut a: Vec<f64>,
    mut b: Vec<f64>,
    dim: usize,
    pivot_floor: f64,
) -> Option<Vec<f64>> {
    for col in 0..dim {
        let mut pivot_row = col;
        let mut best = libm::fabs(a[col * dim + col]);
        for r in col + 1..dim {
            let cand = libm::fabs(a[r * dim + col]);
            if cand > best {
                best = cand;
                pivot_row = r;
            }
        }
        if best <= pivot_floor {
            return None;
        }
        if pivot_row != col {
            for c in 0..dim {
                a.swap(col * dim + c, pivot_row * dim + c);
            }
            b.swap(col, pivot_row);
        }
        let pivot = a[col * dim + col];
        for r in col + 1..dim {
            let factor = a[r * dim + col] / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..dim {
                a[r * dim + c] -= factor * a[col * dim + c];
            }
            b[r] -= factor * b[col];
        }
    }
    let mut x = vec![0.0; dim];
    for col in (0..dim).rev() {
        let mut acc = b[col];
        for c in col + 1..dim {
            acc -= a[col * dim + c] * x[c];
        }
        x[col] = acc / a[col * dim + col];
    }
    Some(x)
}
