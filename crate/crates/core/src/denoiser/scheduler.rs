//! Deterministic convex scheduler standing in for a multistep solver.
//!
//! `alpha_bar(t) = 1 - t/T`, so `alpha_bar(0) = 1` and the last step returns
//! the prediction unchanged.

use crate::error::{Error, Result};
use crate::hash::mix64;
use crate::latent::{sample_normal, Latent};

pub fn alpha_bar(t: usize, steps: usize) -> f32 {
    1.0 - t as f32 / steps as f32
}

// Interpolation exact at both endpoints: a = 0 gives `from`, a = 1 gives `to`,
// and `from == to` gives `from` for any a.
fn lerp(from: f32, to: f32, a: f32) -> f32 {
    if a < 0.5 {
        from + a * (to - from)
    } else {
        to - (1.0 - a) * (to - from)
    }
}

/// `z_{t-1} = a * prediction + (1 - a) * z_t` with `a = alpha_bar(t - 1)`.
pub fn scheduler_step(z_t: &Latent, prediction: &Latent, t: usize, steps: usize) -> Result<Latent> {
    if t == 0 || t > steps {
        return Err(Error::TimestepOutOfRange { t, max: steps });
    }
    z_t.check_same_shape(prediction)?;
    let a = alpha_bar(t - 1, steps);
    let mut out = z_t.clone();
    for (o, &p) in out.data_mut().iter_mut().zip(prediction.data()) {
        *o = lerp(*o, p, a);
    }
    Ok(out)
}

/// Classifier-free guidance: `uncond + scale * (cond - uncond)`.
pub fn cfg_combine(uncond: &Latent, cond: &Latent, scale: f32) -> Result<Latent> {
    uncond.check_same_shape(cond)?;
    let mut out = uncond.clone();
    for (o, &c) in out.data_mut().iter_mut().zip(cond.data()) {
        let u = *o;
        // Anchored at whichever endpoint is nearer so scale 0 and 1 are exact.
        *o = if scale < 0.5 {
            u + scale * (c - u)
        } else {
            c + (scale - 1.0) * (c - u)
        };
    }
    out.ensure_finite("guided prediction")?;
    Ok(out)
}

/// Re-noises a clean latent to level `t`: `a * z0 + (1 - a) * eps`, with
/// `eps` drawn from a stream keyed by `(key, t)`.
pub fn forward_noise(z0: &Latent, t: usize, steps: usize, key: u64) -> Result<Latent> {
    if t > steps {
        return Err(Error::TimestepOutOfRange { t, max: steps });
    }
    let (c, h, w) = z0.shape();
    let eps = sample_normal(mix64(key, t as u64), c, h, w);
    let a = alpha_bar(t, steps);
    let mut out = eps;
    for (o, &z) in out.data_mut().iter_mut().zip(z0.data()) {
        *o = lerp(*o, z, a);
    }
    Ok(out)
}
