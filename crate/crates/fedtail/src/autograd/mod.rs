//! Reverse-mode automatic differentiation over flat parameter vectors,
//! Hessian-vector products, and top-eigenvalue estimation.
//!
//! Losses are expressed as *builders*: closures that record a forward pass
//! onto a [`Tape`] and return the scalar loss node. The same builder can be
//! replayed against perturbed parameter vectors, which is how SAM
//! perturbations and finite-difference Hessian probes are realized.

mod param;
mod tape;

pub use param::{Gradient, Layout, ParamVector};
pub use tape::{NodeId, Tape};

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::stream_rng;

/// Forward pass: returns the loss value.
pub fn evaluate<F>(builder: F, params: &ParamVector) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    let mut tape = Tape::new(params);
    let loss = builder(&mut tape);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            context: "evaluate".to_string(),
            value,
        });
    }
    Ok(value)
}

/// Forward + reverse pass: returns the gradient of the loss.
pub fn gradient<F>(builder: F, params: &ParamVector) -> Result<Gradient>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    value_and_grad(builder, params).map(|(_, g)| g)
}

/// Forward + reverse pass in one shot.
pub fn value_and_grad<F>(builder: F, params: &ParamVector) -> Result<(f64, Gradient)>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    let mut tape = Tape::new(params);
    let loss = builder(&mut tape);
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            context: "value_and_grad".to_string(),
            value,
        });
    }
    let grad = tape.backward(loss)?;
    Ok((value, grad))
}

/// Step size for finite-difference gradient probes: `1e-4 * (1 + ||params||)`.
pub fn default_hvp_step(params: &ParamVector) -> f64 {
    let norm = {
        let mut acc = 0.0;
        for v in params.values() {
            acc += v * v;
        }
        acc.sqrt()
    };
    1e-4 * (1.0 + norm)
}

/// Hessian-vector product by central differences of gradients:
/// `H v ~ (grad(theta + r v_hat) - grad(theta - r v_hat)) / (2r) * ||v||`.
pub fn hvp<F>(builder: F, params: &ParamVector, v: &Gradient, r: f64) -> Result<Gradient>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    let norm = v.norm2();
    if norm <= 0.0 {
        return Err(Error::ZeroDirection);
    }
    assert!(r > 0.0, "hvp step must be positive");
    let unit = v.scaled(1.0 / norm);
    let step = unit.scaled(r);
    let plus = params.perturbed(&step)?;
    let minus = params.perturbed(&step.scaled(-1.0))?;
    let g_plus = gradient(&builder, &plus)?;
    let g_minus = gradient(&builder, &minus)?;
    let mut out = g_plus;
    out.axpy(-1.0, &g_minus)?;
    out.scale(norm / (2.0 * r));
    Ok(out)
}

/// One power-iteration run from a given start vector. Returns the Rayleigh
/// quotient at the final iterate and the final unit vector, for warm starts.
pub fn power_iteration<F>(
    builder: F,
    params: &ParamVector,
    start: &Gradient,
    iters: usize,
) -> Result<(f64, Gradient)>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    assert!(iters >= 1, "power iteration needs at least one step");
    let r = default_hvp_step(params);
    let norm = start.norm2();
    if norm <= 0.0 {
        return Err(Error::ZeroDirection);
    }
    let mut v = start.scaled(1.0 / norm);
    let mut rayleigh = 0.0;
    for i in 0..iters {
        let hv = hvp(&builder, params, &v, r)?;
        let hv_norm = hv.norm2();
        if hv_norm < 1e-12 {
            // Hessian acts as zero along every direction we reached.
            return Ok((if i == 0 { 0.0 } else { rayleigh }, v));
        }
        rayleigh = v.dot(&hv)?;
        v = hv.scaled(1.0 / hv_norm);
    }
    Ok((rayleigh, v))
}

/// Dominant-magnitude eigenvalue estimate for the Hessian of the builder's
/// loss, via power iteration from a seeded random start. Deterministic per
/// seed. Returns 0 when the Hessian action is numerically zero.
pub fn top_eigenvalue<F>(builder: F, params: &ParamVector, iters: usize, seed: u64) -> Result<f64>
where
    F: Fn(&mut Tape<'_>) -> NodeId,
{
    let mut rng = stream_rng(seed, "power-iteration");
    let mut start = Gradient::zeros(params.layout().clone());
    for x in start.values_mut() {
        *x = rng.random::<f64>() * 2.0 - 1.0;
    }
    if start.norm2() <= 0.0 {
        start.values_mut()[0] = 1.0;
    }
    power_iteration(builder, params, &start, iters).map(|(sigma, _)| sigma)
}
