//! Independent oracles shared by the integration tests.
//!
//! Nothing here calls into the engine's flow code: the closed form is written
//! out from t = 0 and the integrator is a plain fixed-step RK4.

#![allow(dead_code)]

use klever_core::engine::ShockEvent;
use klever_core::model::{CapitalState, Component, EffectiveParams, LeverGains, ModelParams, Weights};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Jump-free solution at time `t` from `x0`, evaluated directly (no stepping).
pub fn closed_form(x0: &CapitalState, e: &EffectiveParams, t: f64) -> CapitalState {
    let h_inf = e.alpha_h / e.delta_h;
    let r_inf = e.alpha_r / e.delta_r;
    let eh = (-e.delta_h * t).exp();
    let es = (-e.gamma_s * t).exp();
    // (e^{-delta_h t} - e^{-gamma_s t}) / (gamma_s - delta_h), written to stay exact as the gap closes.
    let gap = e.gamma_s - e.delta_h;
    let transient = if gap == 0.0 { t * eh } else { eh * -(-gap * t).exp_m1() / gap };
    CapitalState {
        h: h_inf + (x0.h - h_inf) * eh,
        s: x0.s * es + e.beta * h_inf * (1.0 - es) / e.gamma_s + e.beta * (x0.h - h_inf) * transient,
        r: r_inf + (x0.r - r_inf) * (-e.delta_r * t).exp(),
    }
}

fn deriv(e: &EffectiveParams, x: [f64; 3]) -> [f64; 3] {
    [
        e.alpha_h - e.delta_h * x[0],
        e.beta * x[0] - e.gamma_s * x[1],
        e.alpha_r - e.delta_r * x[2],
    ]
}

fn rk4_step(e: &EffectiveParams, x: [f64; 3], h: f64) -> [f64; 3] {
    let add = |a: [f64; 3], b: [f64; 3], s: f64| [a[0] + s * b[0], a[1] + s * b[1], a[2] + s * b[2]];
    let k1 = deriv(e, x);
    let k2 = deriv(e, add(x, k1, h / 2.0));
    let k3 = deriv(e, add(x, k2, h / 2.0));
    let k4 = deriv(e, add(x, k3, h));
    [
        x[0] + h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        x[1] + h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        x[2] + h / 6.0 * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
    ]
}

/// Fixed-step RK4 from `t0` to `t1`, shortening the final step to land exactly on `t1`.
pub fn rk4_span(e: &EffectiveParams, x: [f64; 3], t0: f64, t1: f64, h: f64) -> [f64; 3] {
    let mut x = x;
    let mut t = t0;
    while t1 - t > 1e-15 {
        let step = h.min(t1 - t);
        x = rk4_step(e, x, step);
        t += step;
    }
    x
}

/// Integrates the shocked system with RK4 between logged shocks.
pub fn rk4_replay(e: &EffectiveParams, x0: &CapitalState, log: &[ShockEvent], horizon: f64, h: f64) -> CapitalState {
    let mut x = [x0.h, x0.s, x0.r];
    let mut t = 0.0;
    for ev in log {
        x = rk4_span(e, x, t, ev.time, h);
        let i = match ev.component {
            Component::Human => 0,
            Component::Structural => 1,
            Component::Relational => 2,
        };
        x[i] = (x[i] - ev.magnitude).max(0.0);
        t = ev.time;
    }
    x = rk4_span(e, x, t, horizon, h);
    CapitalState {
        h: x[0],
        s: x[1],
        r: x[2],
    }
}

/// Kolmogorov distribution tail `P(K > lambda)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = 2.0 * (-1f64).powi(j - 1) * (-2.0 * jf * jf * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-16 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// One-sample KS test of `samples` against the CDF `cdf`; returns `(D, p-value)`.
pub fn ks_test(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    (d, kolmogorov_q((sqrt_n + 0.12 + 0.11 / sqrt_n) * d))
}

/// Random parameters whose jump-free trajectories stay inside `[0, 100]`, so
/// no clamping ever activates. Every fourth draw sits on the
/// `gamma_s == delta_h` resonance, every fourth-plus-one just inside its band.
pub fn unclamped_params(rng: &mut ChaCha8Rng, i: usize) -> ModelParams {
    let delta_h = rng.random_range(0.02..1.0);
    let gamma_s = match i % 4 {
        0 => delta_h,
        1 => delta_h + 5e-10,
        _ => rng.random_range(0.02..1.0),
    };
    let h0: f64 = rng.random_range(0.0..100.0);
    let h_inf: f64 = rng.random_range(0.0..100.0);
    let r0: f64 = rng.random_range(0.0..100.0);
    let r_inf: f64 = rng.random_range(0.0..100.0);
    let delta_r = rng.random_range(0.02..1.0);
    let h_max = h0.max(h_inf).max(1.0);
    let beta = rng.random_range(0.0..(0.95 * gamma_s * 100.0 / h_max));
    ModelParams {
        alpha_h: h_inf * delta_h,
        delta_h,
        beta,
        gamma_s,
        alpha_r: r_inf * delta_r,
        delta_r,
        nu_h: rng.random_range(0.0..3.0),
        nu_s: rng.random_range(0.0..3.0),
        nu_r: rng.random_range(0.0..3.0),
        j_h: rng.random_range(0.0..30.0),
        j_s: rng.random_range(0.0..30.0),
        j_r: rng.random_range(0.0..30.0),
        gains: LeverGains::default(),
        init: CapitalState {
            h: h0,
            s: rng.random_range(0.0..100.0),
            r: r0,
        },
        weights: Weights::default(),
    }
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn reference_params_path() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../params/reference.json")
}

pub fn reference_params() -> ModelParams {
    klever_core::io::read_params(&reference_params_path()).expect("params/reference.json")
}
