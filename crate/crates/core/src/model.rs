//! Knowledge-capital state, lever modulation and the exact jump-free flow.
//!
//! Between shocks the three capital components follow a linear system:
//!
//! ```text
//! dH/dt = alpha_h - delta_h * H
//! dS/dt = beta * H - gamma_s * S
//! dR/dt = alpha_r - delta_r * R
//! ```
//!
//! which [`flow`] advances in closed form. All states live on a bounded
//! `[0, STATE_MAX]` score scale.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound of every capital score.
pub const STATE_MAX: f64 = 100.0;

/// `|gamma_s - delta_h|` below which the structural flow uses the resonant `t * e^(-delta t)` form.
pub const RESONANCE_EPS: f64 = 1e-9;

/// One of the three capital stocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Component {
    #[serde(rename = "H")]
    Human,
    #[serde(rename = "S")]
    Structural,
    #[serde(rename = "R")]
    Relational,
}

impl Component {
    pub const ALL: [Component; 3] = [Component::Human, Component::Structural, Component::Relational];

    pub fn symbol(self) -> &'static str {
        match self {
            Component::Human => "H",
            Component::Structural => "S",
            Component::Relational => "R",
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// Human, structural and relational capital at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapitalState {
    pub h: f64,
    pub s: f64,
    pub r: f64,
}

impl CapitalState {
    pub fn new(h: f64, s: f64, r: f64) -> Result<Self> {
        let state = CapitalState { h, s, r };
        state.validate("state")?;
        Ok(state)
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        for (name, v) in [("h", self.h), ("s", self.s), ("r", self.r)] {
            if !v.is_finite() || !(0.0..=STATE_MAX).contains(&v) {
                return Err(Error::param(
                    format!("{what}.{name}"),
                    format!("{v} is not within [0, {STATE_MAX}]"),
                ));
            }
        }
        Ok(())
    }

    pub fn get(&self, component: Component) -> f64 {
        match component {
            Component::Human => self.h,
            Component::Structural => self.s,
            Component::Relational => self.r,
        }
    }

    pub fn get_mut(&mut self, component: Component) -> &mut f64 {
        match component {
            Component::Human => &mut self.h,
            Component::Structural => &mut self.s,
            Component::Relational => &mut self.r,
        }
    }

    /// Projects every component into `[0, STATE_MAX]`.
    pub fn clamped(self) -> Self {
        CapitalState {
            h: self.h.clamp(0.0, STATE_MAX),
            s: self.s.clamp(0.0, STATE_MAX),
            r: self.r.clamp(0.0, STATE_MAX),
        }
    }
}

/// Activation levels of the people, memory, process and relational levers.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LeverVector {
    pub lambda_p: f64,
    pub lambda_m: f64,
    pub lambda_pr: f64,
    pub lambda_r: f64,
}

/// Identifies a single lever inside a [`LeverVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lever {
    People,
    Memory,
    Process,
    Relational,
}

impl Lever {
    pub const ALL: [Lever; 4] = [Lever::People, Lever::Memory, Lever::Process, Lever::Relational];
}

impl LeverVector {
    pub fn new(lambda_p: f64, lambda_m: f64, lambda_pr: f64, lambda_r: f64) -> Result<Self> {
        let levers = LeverVector {
            lambda_p,
            lambda_m,
            lambda_pr,
            lambda_r,
        };
        levers.validate()?;
        Ok(levers)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda_p", self.lambda_p),
            ("lambda_m", self.lambda_m),
            ("lambda_pr", self.lambda_pr),
            ("lambda_r", self.lambda_r),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(name, format!("{v} is not within [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn get(&self, lever: Lever) -> f64 {
        match lever {
            Lever::People => self.lambda_p,
            Lever::Memory => self.lambda_m,
            Lever::Process => self.lambda_pr,
            Lever::Relational => self.lambda_r,
        }
    }

    /// Copy with one lever replaced; the result is not validated.
    pub fn with(mut self, lever: Lever, value: f64) -> Self {
        match lever {
            Lever::People => self.lambda_p = value,
            Lever::Memory => self.lambda_m = value,
            Lever::Process => self.lambda_pr = value,
            Lever::Relational => self.lambda_r = value,
        }
        self
    }
}

/// Composite index weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub w_h: f64,
    pub w_s: f64,
    pub w_r: f64,
}

impl Default for Weights {
    fn default() -> Self {
        Weights {
            w_h: 0.40,
            w_s: 0.35,
            w_r: 0.25,
        }
    }
}

impl Weights {
    pub fn new(w_h: f64, w_s: f64, w_r: f64) -> Result<Self> {
        let w = Weights { w_h, w_s, w_r };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_h", self.w_h), ("w_s", self.w_s), ("w_r", self.w_r)] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(format!("weights.{name}"), format!("{v} is negative")));
            }
        }
        let sum = self.w_h + self.w_s + self.w_r;
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::param("weights", format!("sum to {sum}, expected 1")));
        }
        Ok(())
    }
}

/// How strongly each lever boosts a growth channel or cushions a shock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LeverGains {
    /// People lever on `alpha_h`.
    pub g_p: f64,
    /// Memory lever on `beta`.
    pub g_m: f64,
    /// Memory lever cushion on `j_h`.
    pub c_m: f64,
    /// Process lever reduction of `gamma_s`.
    pub g_pr: f64,
    /// Process lever cushion on `j_s`.
    pub c_pr: f64,
    /// Relational lever on `alpha_r`.
    pub g_r: f64,
    /// Relational lever cushion on `j_r`.
    pub c_r: f64,
}

impl Default for LeverGains {
    fn default() -> Self {
        LeverGains {
            g_p: 1.0,
            g_m: 1.0,
            c_m: 1.0,
            g_pr: 1.0,
            c_pr: 1.0,
            g_r: 1.0,
            c_r: 1.0,
        }
    }
}

impl LeverGains {
    pub fn validate(&self) -> Result<()> {
        let boosts = [("g_p", self.g_p), ("g_m", self.g_m), ("g_r", self.g_r)];
        for (name, v) in boosts {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(format!("gains.{name}"), format!("{v} is negative")));
            }
        }
        // Reductions above 1 would flip the sign of gamma_s or a shock at full activation.
        let reductions = [
            ("g_pr", self.g_pr),
            ("c_m", self.c_m),
            ("c_pr", self.c_pr),
            ("c_r", self.c_r),
        ];
        for (name, v) in reductions {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!("gains.{name}"), format!("{v} is not within [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Base rates, shock processes, lever gains, initial state and weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha_h: f64,
    pub delta_h: f64,
    pub beta: f64,
    pub gamma_s: f64,
    pub alpha_r: f64,
    pub delta_r: f64,
    pub nu_h: f64,
    pub nu_s: f64,
    pub nu_r: f64,
    pub j_h: f64,
    pub j_s: f64,
    pub j_r: f64,
    #[serde(default)]
    pub gains: LeverGains,
    pub init: CapitalState,
    #[serde(default)]
    pub weights: Weights,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("alpha_h", self.alpha_h),
            ("beta", self.beta),
            ("alpha_r", self.alpha_r),
            ("nu_h", self.nu_h),
            ("nu_s", self.nu_s),
            ("nu_r", self.nu_r),
            ("j_h", self.j_h),
            ("j_s", self.j_s),
            ("j_r", self.j_r),
        ];
        for (name, v) in nonneg {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(name, format!("{v} must be finite and >= 0")));
            }
        }
        for (name, v) in [("delta_h", self.delta_h), ("gamma_s", self.gamma_s), ("delta_r", self.delta_r)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::param(name, format!("{v} must be finite and > 0")));
            }
        }
        self.gains.validate()?;
        self.init.validate("init")?;
        self.weights.validate()
    }

    /// Shock intensities in `[H, S, R]` order.
    pub fn shock_rates(&self) -> [f64; 3] {
        [self.nu_h, self.nu_s, self.nu_r]
    }
}

/// Rates and magnitudes after lever modulation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    pub alpha_h: f64,
    pub delta_h: f64,
    pub beta: f64,
    pub gamma_s: f64,
    pub alpha_r: f64,
    pub delta_r: f64,
    pub nu_h: f64,
    pub nu_s: f64,
    pub nu_r: f64,
    pub j_h: f64,
    pub j_s: f64,
    pub j_r: f64,
}

impl EffectiveParams {
    pub fn shock_rates(&self) -> [f64; 3] {
        [self.nu_h, self.nu_s, self.nu_r]
    }

    pub fn magnitude(&self, component: Component) -> f64 {
        match component {
            Component::Human => self.j_h,
            Component::Structural => self.j_s,
            Component::Relational => self.j_r,
        }
    }

    /// Jump-free fixed point `(H*, S*, R*)`.
    pub fn steady_state(&self) -> (f64, f64, f64) {
        let h = self.alpha_h / self.delta_h;
        (h, self.beta * h / self.gamma_s, self.alpha_r / self.delta_r)
    }

    fn check(&self) -> Result<()> {
        for (field, v) in [
            ("delta_h", self.delta_h),
            ("gamma_s", self.gamma_s),
            ("delta_r", self.delta_r),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidEffective { field, value: v });
            }
        }
        for (field, v) in [("j_h", self.j_h), ("j_s", self.j_s), ("j_r", self.j_r)] {
            if !(v >= 0.0) {
                return Err(Error::InvalidEffective { field, value: v });
            }
        }
        Ok(())
    }
}

/// Composite knowledge capital `K = w_h*H + w_s*S + w_r*R`.
pub fn composite_index(state: &CapitalState, weights: &Weights) -> f64 {
    weights.w_h * state.h + weights.w_s * state.s + weights.w_r * state.r
}

/// Applies the lever-to-parameter mapping.
///
/// | lever | boosts | cushions |
/// |-------|--------|----------|
/// | `lambda_p` | `alpha_h` | |
/// | `lambda_m` | `beta` | `j_h` |
/// | `lambda_pr` | lowers `gamma_s` | `j_s` |
/// | `lambda_r` | `alpha_r` | `j_r` |
///
/// Decay rates `delta_h`, `delta_r` and all shock intensities pass through.
pub fn effective_params(params: &ModelParams, levers: &LeverVector) -> Result<EffectiveParams> {
    levers.validate()?;
    let g = &params.gains;
    let eff = EffectiveParams {
        alpha_h: params.alpha_h * (1.0 + g.g_p * levers.lambda_p),
        delta_h: params.delta_h,
        beta: params.beta * (1.0 + g.g_m * levers.lambda_m),
        gamma_s: params.gamma_s * (1.0 - g.g_pr * levers.lambda_pr),
        alpha_r: params.alpha_r * (1.0 + g.g_r * levers.lambda_r),
        delta_r: params.delta_r,
        nu_h: params.nu_h,
        nu_s: params.nu_s,
        nu_r: params.nu_r,
        j_h: params.j_h * (1.0 - g.c_m * levers.lambda_m),
        j_s: params.j_s * (1.0 - g.c_pr * levers.lambda_pr),
        j_r: params.j_r * (1.0 - g.c_r * levers.lambda_r),
    };
    eff.check()?;
    Ok(eff)
}

/// The affine map `x -> A x + b` that advances the jump-free system by a fixed `dt`.
///
/// ```text
/// H' = a_h H + b_h
/// S' = c_sh H + a_s S + b_s
/// R' = a_r R + b_r
/// ```
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowMap {
    dt: f64,
    a_h: f64,
    b_h: f64,
    c_sh: f64,
    a_s: f64,
    b_s: f64,
    a_r: f64,
    b_r: f64,
}

impl FlowMap {
    pub fn new(eff: &EffectiveParams, dt: f64) -> Self {
        debug_assert!(dt >= 0.0, "negative flow step {dt}");
        let h_inf = eff.alpha_h / eff.delta_h;
        let r_inf = eff.alpha_r / eff.delta_r;
        // Each gain below is 1 - e^{-rate * dt}, taken from expm1 to keep small steps accurate.
        let gain_h = -(-eff.delta_h * dt).exp_m1();
        let gain_s = -(-eff.gamma_s * dt).exp_m1();
        let gain_r = -(-eff.delta_r * dt).exp_m1();
        let decay_h = 1.0 - gain_h;

        // kernel = integral_0^dt e^{-delta_h u} e^{-gamma_s (dt - u)} du
        let gap = eff.gamma_s - eff.delta_h;
        let kernel = if gap.abs() < RESONANCE_EPS {
            dt * decay_h
        } else {
            decay_h * -(-gap * dt).exp_m1() / gap
        };
        // integral_0^dt e^{-gamma_s u} du
        let s_relax = gain_s / eff.gamma_s;

        FlowMap {
            dt,
            a_h: decay_h,
            b_h: h_inf * gain_h,
            c_sh: eff.beta * kernel,
            a_s: 1.0 - gain_s,
            b_s: eff.beta * h_inf * (s_relax - kernel),
            a_r: 1.0 - gain_r,
            b_r: r_inf * gain_r,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `state` without clamping.
    pub fn apply_unclamped(&self, state: &CapitalState) -> CapitalState {
        CapitalState {
            h: self.a_h * state.h + self.b_h,
            s: self.c_sh * state.h + self.a_s * state.s + self.b_s,
            r: self.a_r * state.r + self.b_r,
        }
    }

    pub fn apply(&self, state: &CapitalState) -> CapitalState {
        self.apply_unclamped(state).clamped()
    }
}

/// Advances `state` by `dt` years along the exact jump-free solution, clamped to `[0, STATE_MAX]`.
pub fn flow(state: &CapitalState, eff: &EffectiveParams, dt: f64) -> CapitalState {
    FlowMap::new(eff, dt).apply(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams {
            alpha_h: 5.0,
            delta_h: 0.1,
            beta: 0.05,
            gamma_s: 0.2,
            alpha_r: 4.0,
            delta_r: 0.08,
            nu_h: 0.5,
            nu_s: 0.3,
            nu_r: 0.2,
            j_h: 10.0,
            j_s: 8.0,
            j_r: 6.0,
            gains: LeverGains::default(),
            init: CapitalState::new(60.0, 50.0, 40.0).unwrap(),
            weights: Weights::default(),
        }
    }

    fn eff_with(alpha_h: f64, delta_h: f64) -> EffectiveParams {
        let mut p = params();
        p.alpha_h = alpha_h;
        p.delta_h = delta_h;
        effective_params(&p, &LeverVector::default()).unwrap()
    }

    #[test]
    fn composite_index_examples() {
        let w = Weights::default();
        let k = |h, s, r| composite_index(&CapitalState::new(h, s, r).unwrap(), &w);
        assert!((k(100.0, 100.0, 100.0) - 100.0).abs() < 1e-12);
        assert!((k(100.0, 0.0, 0.0) - 40.0).abs() < 1e-12);
        assert!((k(60.0, 50.0, 40.0) - 51.5).abs() < 1e-12);
    }

    #[test]
    fn zero_levers_is_identity() {
        let p = params();
        let e = effective_params(&p, &LeverVector::default()).unwrap();
        assert_eq!(
            (e.alpha_h, e.beta, e.gamma_s, e.alpha_r, e.j_h, e.j_s, e.j_r),
            (p.alpha_h, p.beta, p.gamma_s, p.alpha_r, p.j_h, p.j_s, p.j_r)
        );
        assert_eq!((e.delta_h, e.delta_r), (p.delta_h, p.delta_r));
        assert_eq!(e.shock_rates(), p.shock_rates());
    }

    #[test]
    fn lever_formula_examples() {
        let mut p = params();
        p.j_h = 10.0;
        let e = effective_params(&p, &LeverVector::new(0.0, 0.6, 0.0, 0.0).unwrap()).unwrap();
        assert!((e.j_h - 4.0).abs() < 1e-12);
        assert!((e.beta - 0.08).abs() < 1e-12);

        p.alpha_h = 5.0;
        let e = effective_params(&p, &LeverVector::new(0.6, 0.0, 0.0, 0.0).unwrap()).unwrap();
        assert!((e.alpha_h - 8.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_nonpositive_effective_decay() {
        let mut p = params();
        p.gains.g_pr = 1.0;
        let err = effective_params(&p, &LeverVector::new(0.0, 0.0, 1.0, 0.0).unwrap()).unwrap_err();
        assert!(matches!(err, Error::InvalidEffective { field: "gamma_s", .. }));
    }

    #[test]
    fn rejects_out_of_range_levers_and_weights() {
        assert!(LeverVector::new(1.1, 0.0, 0.0, 0.0).is_err());
        assert!(LeverVector::new(0.0, -0.1, 0.0, 0.0).is_err());
        assert!(Weights::new(0.5, 0.5, 0.1).is_err());
        assert!(CapitalState::new(101.0, 0.0, 0.0).is_err());
        assert!(CapitalState::new(f64::NAN, 0.0, 0.0).is_err());
        let mut p = params();
        p.delta_h = 0.0;
        assert!(p.validate().is_err());
        p = params();
        p.gains.c_m = 1.5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn zero_step_is_identity() {
        let e = eff_with(5.0, 0.1);
        let x = CapitalState::new(73.0, 12.5, 88.0).unwrap();
        assert_eq!(flow(&x, &e, 0.0), x);
    }

    #[test]
    fn human_fixed_point_holds() {
        let e = eff_with(5.0, 0.1);
        let x = CapitalState::new(50.0, 20.0, 30.0).unwrap();
        for dt in [0.1, 1.0, 7.3, 50.0] {
            assert!((flow(&x, &e, dt).h - 50.0).abs() < 1e-12);
        }
    }

    #[test]
    fn human_relaxation_example() {
        let e = eff_with(5.0, 0.1);
        let x = CapitalState::new(80.0, 20.0, 30.0).unwrap();
        // 50 + 30 e^{-1}
        assert!((flow(&x, &e, 10.0).h - 61.036_383_235_143_27).abs() < 1e-9);
    }

    #[test]
    fn resonant_branch_matches_near_resonant_formula() {
        let mut p = params();
        p.delta_h = 0.2;
        p.gamma_s = 0.2;
        let res = effective_params(&p, &LeverVector::default()).unwrap();
        p.gamma_s = 0.2 + 1e-7;
        let near = effective_params(&p, &LeverVector::default()).unwrap();
        let x = CapitalState::new(10.0, 5.0, 30.0).unwrap();
        let a = flow(&x, &res, 3.0);
        let b = flow(&x, &near, 3.0);
        assert!((a.s - b.s).abs() < 1e-5, "{} vs {}", a.s, b.s);
    }

    #[test]
    fn converges_to_steady_state() {
        // Slowest rate 0.2: residual e^{-40} is far below 1e-8.
        let mut e = eff_with(10.0, 0.2);
        e.delta_r = 0.25;
        e.gamma_s = 0.3;
        let x = CapitalState::new(10.0, 90.0, 5.0).unwrap();
        let y = FlowMap::new(&e, 200.0).apply_unclamped(&x);
        let (h, s, r) = e.steady_state();
        assert!((y.h - h).abs() < 1e-8);
        assert!((y.s - s).abs() < 1e-8);
        assert!((y.r - r).abs() < 1e-8);
    }

    #[test]
    fn flow_clamps_to_score_range() {
        let mut p = params();
        p.alpha_h = 50.0;
        p.delta_h = 0.1;
        let e = effective_params(&p, &LeverVector::default()).unwrap();
        let y = flow(&CapitalState::new(95.0, 0.0, 0.0).unwrap(), &e, 5.0);
        assert_eq!(y.h, STATE_MAX);
    }

    #[test]
    fn params_json_uses_snake_case_fields() {
        let json = serde_json::to_value(params()).unwrap();
        for key in [
            "alpha_h", "delta_h", "beta", "gamma_s", "alpha_r", "delta_r", "nu_h", "nu_s", "nu_r", "j_h", "j_s",
            "j_r", "gains", "init", "weights",
        ] {
            assert!(json.get(key).is_some(), "missing {key}");
        }
        let back: ModelParams = serde_json::from_value(json).unwrap();
        assert_eq!(back, params());
    }
}
