//! One smart inverter: reactive headroom, fair-utilization ratio, the fixed
//! Volt-Var curve, the local objective gradient, and Var-priority dispatch
//! with active-power curtailment.

use thiserror::Error;

use crate::{num, Scalar};

#[derive(Debug, Error)]
pub enum InverterError {
    #[error("negative input for {0}")]
    NegativeInput(&'static str),
    #[error("inverter rating must be positive")]
    RatingNotPositive,
    #[error("malformed Volt-Var parameters: require v_min < deadband_low <= v_ref <= deadband_high < v_max")]
    MalformedParams,
    #[error("gradient denominator below singularity guard; skip this agent's step")]
    GradientSingularity,
    #[error("voltage must be positive")]
    NonPositiveVoltage,
}

/// Singularity guard on the gradient denominator, in per-unit.
pub const GRADIENT_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct InverterAgent<T> {
    pub id: String,
    pub bus: String,
    /// Inverter apparent power rating S_m in kVA.
    pub rating_s_kva: T,
    /// PV nameplate DC capacity in kW.
    pub dc_capacity_kw: T,
    /// Step size gain, dimensionless and positive.
    pub beta: T,
    /// Current estimate of the fair-utilization ratio, signed.
    pub alpha: T,
}

impl<T: Scalar> InverterAgent<T> {
    pub fn new(
        id: &str,
        bus: &str,
        rating_s_kva: T,
        dc_capacity_kw: T,
        beta: T,
    ) -> Result<Self, InverterError> {
        if rating_s_kva <= T::zero() {
            return Err(InverterError::RatingNotPositive);
        }
        if beta <= T::zero() {
            return Err(InverterError::NegativeInput("beta"));
        }
        if dc_capacity_kw < T::zero() {
            return Err(InverterError::NegativeInput("dc_capacity"));
        }
        Ok(InverterAgent {
            id: id.to_string(),
            bus: bus.to_string(),
            rating_s_kva,
            dc_capacity_kw,
            beta,
            alpha: T::zero(),
        })
    }

    /// DC-side available power for a given irradiance, kW.
    pub fn available_power(&self, ghi_w_m2: T) -> T {
        self.dc_capacity_kw * ghi_w_m2 / num::<T>(1000.0)
    }

    /// Var-priority dispatch: reactive power wins, active power is curtailed
    /// to honor the apparent power rating.
    pub fn dispatch(&self, q_command_kvar: T, p_available_kw: T) -> DispatchResult<T> {
        let s = self.rating_s_kva;
        let q_out = clamp(q_command_kvar, -s, s);
        let p_cap = (s * s - q_out * q_out).max(T::zero()).sqrt();
        let p_out = p_available_kw.max(T::zero()).min(p_cap);
        let curtailed = (p_available_kw - p_out).max(T::zero());
        DispatchResult {
            p_out_kw: p_out,
            q_out_kvar: q_out,
            curtailed_p_kw: curtailed,
            saturated: q_out != q_command_kvar || p_out < p_available_kw.max(T::zero()),
        }
    }

    /// Dispatch without curtailment: reactive output is capped by the
    /// headroom left after active generation.
    pub fn dispatch_headroom_limited(
        &self,
        q_command_kvar: T,
        p_available_kw: T,
    ) -> DispatchResult<T> {
        let s = self.rating_s_kva;
        let p_out = p_available_kw.max(T::zero()).min(s);
        let headroom = (s * s - p_out * p_out).max(T::zero()).sqrt();
        let q_out = clamp(q_command_kvar, -headroom, headroom);
        DispatchResult {
            p_out_kw: p_out,
            q_out_kvar: q_out,
            curtailed_p_kw: (p_available_kw - p_out).max(T::zero()),
            saturated: q_out != q_command_kvar || p_out < p_available_kw.max(T::zero()),
        }
    }

    /// Clamp bound on |alpha|: 1 when Var-priority curtailment is enabled,
    /// otherwise the headroom ratio.
    pub fn alpha_limit(&self, q_available_kvar: T, curtailment_enabled: bool) -> T {
        if curtailment_enabled {
            T::one()
        } else {
            q_available_kvar / self.rating_s_kva
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DispatchResult<T> {
    pub p_out_kw: T,
    /// Signed: positive = injection, negative = absorption.
    pub q_out_kvar: T,
    pub curtailed_p_kw: T,
    pub saturated: bool,
}

/// Maximum reactive power available: sqrt(S^2 - P^2). The active power is
/// clamped to the rating first (inverter saturation on the DC side).
pub fn available_reactive<T: Scalar>(rating_s: T, p_active: T) -> Result<T, InverterError> {
    if rating_s <= T::zero() {
        return Err(InverterError::RatingNotPositive);
    }
    if p_active < T::zero() {
        return Err(InverterError::NegativeInput("p_active"));
    }
    let p = p_active.min(rating_s);
    Ok((rating_s * rating_s - p * p).max(T::zero()).sqrt())
}

/// Fair utilization ratio: dispatched reactive power over rating, signed.
pub fn fair_ratio<T: Scalar>(q_out: T, rating_s: T) -> Result<T, InverterError> {
    if rating_s <= T::zero() {
        return Err(InverterError::RatingNotPositive);
    }
    Ok(q_out / rating_s)
}

/// Fixed Volt-Var curve parameters, all in per-unit voltage.
#[derive(Debug, Clone, Copy)]
pub struct VoltVarParams<T> {
    pub v_ref: T,
    pub deadband_low: T,
    pub deadband_high: T,
    pub v_min: T,
    pub v_max: T,
}

impl<T: Scalar> VoltVarParams<T> {
    pub fn validate(&self) -> Result<(), InverterError> {
        if self.v_min < self.deadband_low
            && self.deadband_low <= self.v_ref
            && self.v_ref <= self.deadband_high
            && self.deadband_high < self.v_max
        {
            Ok(())
        } else {
            Err(InverterError::MalformedParams)
        }
    }
}

impl<T: Scalar> Default for VoltVarParams<T> {
    fn default() -> Self {
        VoltVarParams {
            v_ref: T::one(),
            deadband_low: num(0.98),
            deadband_high: num(1.02),
            v_min: num(0.92),
            v_max: num(1.08),
        }
    }
}

/// Piecewise-linear Volt-Var curve: zero inside the deadband, linear ramps to
/// full available headroom at the saturation breakpoints, continuous
/// everywhere. Injection below the deadband, absorption above it.
pub fn volt_var<T: Scalar>(
    v: T,
    params: &VoltVarParams<T>,
    q_available: T,
) -> Result<T, InverterError> {
    params.validate()?;
    if v <= T::zero() {
        return Err(InverterError::NonPositiveVoltage);
    }
    if q_available < T::zero() {
        return Err(InverterError::NegativeInput("q_available"));
    }
    let q = if v < params.deadband_low {
        let frac = ((params.deadband_low - v) / (params.deadband_low - params.v_min)).min(T::one());
        frac * q_available
    } else if v > params.deadband_high {
        let frac =
            ((v - params.deadband_high) / (params.v_max - params.deadband_high)).min(T::one());
        -frac * q_available
    } else {
        T::zero()
    };
    Ok(q)
}

/// Local gradient of the per-agent voltage-deviation objective with respect
/// to the agent's state. All inputs in per-unit on the system base.
pub fn gradient<T: Scalar>(q_avail: T, v: T, q_out: T, b_mm: T) -> Result<T, InverterError> {
    let denom = q_out - v * v * b_mm;
    if denom.abs() < num(GRADIENT_EPS) {
        return Err(InverterError::GradientSingularity);
    }
    Ok(-q_avail * (T::one() - v) * v / denom)
}

fn clamp<T: Scalar>(x: T, lo: T, hi: T) -> T {
    x.max(lo).min(hi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn headroom_examples() {
        assert_eq!(available_reactive(1500.0, 0.0).unwrap(), 1500.0);
        assert_eq!(available_reactive(1500.0, 1500.0).unwrap(), 0.0);
        // 45-60-75 Pythagorean triple
        assert!((available_reactive(75.0f64, 45.0).unwrap() - 60.0).abs() < 1e-12);
        // DC side above rating clamps to zero headroom
        assert_eq!(available_reactive(75.0, 90.0).unwrap(), 0.0);
        assert!(available_reactive(75.0, -1.0).is_err());
    }

    #[test]
    fn fair_ratio_examples() {
        assert_eq!(fair_ratio(0.0, 75.0).unwrap(), 0.0);
        assert_eq!(fair_ratio(-75.0, 75.0).unwrap(), -1.0);
        assert!((fair_ratio(-25.0f64, 75.0).unwrap() - (-1.0 / 3.0)).abs() < 1e-12);
        assert!(fair_ratio(1.0, 0.0).is_err());
    }

    #[test]
    fn volt_var_examples() {
        let p = VoltVarParams::<f64>::default();
        assert_eq!(volt_var(1.00, &p, 100.0).unwrap(), 0.0);
        assert_eq!(volt_var(1.08, &p, 100.0).unwrap(), -100.0);
        assert_eq!(volt_var(1.20, &p, 100.0).unwrap(), -100.0);
        // (1.05 - 1.02) / (1.08 - 1.02) = 0.5
        assert!((volt_var(1.05, &p, 100.0).unwrap() - (-50.0)).abs() < 1e-12);
        assert!((volt_var(0.95, &p, 100.0).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn volt_var_rejects_malformed_params() {
        let p = VoltVarParams::<f64> {
            v_ref: 1.0,
            deadband_low: 1.03,
            deadband_high: 1.02,
            v_min: 0.92,
            v_max: 1.08,
        };
        assert!(matches!(
            volt_var(1.0, &p, 1.0),
            Err(InverterError::MalformedParams)
        ));
    }

    #[test]
    fn gradient_zero_factors() {
        assert_eq!(gradient(1.0, 1.0, -0.3, -10.0).unwrap(), 0.0);
        assert_eq!(gradient(0.0, 1.05, -0.3, -10.0).unwrap(), 0.0);
    }

    #[test]
    fn gradient_pinned_regression() {
        // -1 * (1 - 1.05) * 1.05 / (-0.5 - 1.05^2 * -10) = 0.0525 / 10.525
        let g = gradient(1.0f64, 1.05, -0.5, -10.0).unwrap();
        assert!((g - 0.004988123515439434).abs() < 1e-15, "g = {g:.18}");
    }

    #[test]
    fn gradient_singularity_guarded() {
        assert!(matches!(
            gradient(1.0, 1.0, 1e-12, 0.0),
            Err(InverterError::GradientSingularity)
        ));
    }

    fn agent(rating: f64) -> InverterAgent<f64> {
        InverterAgent::new("a", "b", rating, rating * 1.2, 0.1).unwrap()
    }

    #[test]
    fn dispatch_examples() {
        let d = agent(1500.0).dispatch(0.0, 1000.0);
        assert_eq!((d.p_out_kw, d.q_out_kvar, d.curtailed_p_kw), (1000.0, 0.0, 0.0));

        // Full Var dispatch on the small inverter: 100% curtailment.
        let d = agent(75.0).dispatch(-75.0, 90.0);
        assert_eq!((d.p_out_kw, d.q_out_kvar, d.curtailed_p_kw), (0.0, -75.0, 90.0));

        // 900-1200-1500 triple
        let d = agent(1500.0).dispatch(-900.0, 1800.0);
        assert!((d.p_out_kw - 1200.0).abs() < 1e-9);
        assert_eq!(d.q_out_kvar, -900.0);
        assert!((d.curtailed_p_kw - 600.0).abs() < 1e-9);
    }

    #[test]
    fn inverter_saturation_without_var_command() {
        // DC above rating, no reactive command: flat output at the rating.
        let d = agent(1500.0).dispatch(0.0, 1800.0);
        assert_eq!(d.p_out_kw, 1500.0);
        assert!(d.saturated);
    }

    #[test]
    fn alpha_limit_modes() {
        let a = agent(100.0);
        assert_eq!(a.alpha_limit(60.0, true), 1.0);
        assert!((a.alpha_limit(60.0, false) - 0.6).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn headroom_pythagorean_identity(s in 1e-3..1e4f64, frac in 0.0..1.0f64) {
            let p = s * frac;
            let q = available_reactive(s, p).unwrap();
            prop_assert!((q * q + p * p - s * s).abs() <= 1e-9 * s * s);
        }

        #[test]
        fn dispatch_apparent_power_cap(
            s in 1.0..2000.0f64,
            q_cmd in -3000.0..3000.0f64,
            p_avail in 0.0..3000.0f64,
        ) {
            let d = agent(s).dispatch(q_cmd, p_avail);
            let s2 = d.p_out_kw * d.p_out_kw + d.q_out_kvar * d.q_out_kvar;
            prop_assert!(s2 <= s * s * (1.0 + 1e-12));
            prop_assert!(d.curtailed_p_kw >= 0.0);
            // Var-priority dominance
            prop_assert!(d.q_out_kvar.abs() + 1e-12 >= q_cmd.abs().min(s));
        }

        #[test]
        fn volt_var_monotone_and_continuous(
            v in 0.85..1.15f64,
            dv in 1e-6..0.01f64,
            q_avail in 0.0..500.0f64,
        ) {
            let p = VoltVarParams::<f64>::default();
            let a = volt_var(v, &p, q_avail).unwrap();
            let b = volt_var(v + dv, &p, q_avail).unwrap();
            prop_assert!(b <= a + 1e-12);
            // Lipschitz bound from the steepest ramp segment implies continuity.
            let slope = q_avail / (p.deadband_low - p.v_min).min(p.v_max - p.deadband_high);
            prop_assert!((a - b).abs() <= slope * dv + 1e-9);
        }

        #[test]
        fn gradient_zero_iff_factors_vanish(
            q_avail in 0.01..1.0f64,
            v in 0.9..1.1f64,
            q in -1.0..1.0f64,
        ) {
            let g = gradient(q_avail, v, q, -10.0).unwrap();
            if (v - 1.0).abs() > 1e-12 {
                prop_assert!(g != 0.0);
            }
        }
    }
}
