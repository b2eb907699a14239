//! Domain parameters and the deterministic building blocks shared by every
//! solver: the saturating quadratic utility, the per-period payoff and the
//! peak-time rebate.
//!
//! Quantities are plain `f64`. Energy is in kWh, prices in $/kWh and the
//! curvature `gamma` in $/kWh².

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Preferences and prices of the representative consumer.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumerParams {
    pub gamma: f64,
    pub retail_price: f64,
    /// Optimal consumption when the load shock is zero.
    pub q_bar: f64,
    /// Utility offset; always `gamma/2 * q_bar² + retail_price * q_bar` so that
    /// the utility of consuming nothing is zero when theta = 0.
    pub k: f64,
    pub q_max: f64,
}

impl ConsumerParams {
    pub fn new(gamma: f64, retail_price: f64, q_bar: f64, q_max: f64) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {gamma}")));
        }
        if !(retail_price.is_finite() && retail_price > 0.0) {
            return Err(Error::InvalidParams(format!(
                "retail_price must be > 0, got {retail_price}"
            )));
        }
        if !(q_bar.is_finite() && q_max.is_finite() && 0.0 < q_bar && q_bar < q_max) {
            return Err(Error::InvalidParams(format!(
                "need 0 < q_bar < q_max, got q_bar={q_bar}, q_max={q_max}"
            )));
        }
        Ok(Self {
            gamma,
            retail_price,
            q_bar,
            k: Self::normalising_k(gamma, retail_price, q_bar),
            q_max,
        })
    }

    /// Like [`ConsumerParams::new`] but with an explicit `k`, which must agree
    /// with the zero-utility normalisation.
    pub fn with_k(gamma: f64, retail_price: f64, q_bar: f64, k: f64, q_max: f64) -> Result<Self> {
        let cp = Self::new(gamma, retail_price, q_bar, q_max)?;
        if !((k - cp.k).abs() <= 1e-9 * cp.k.abs().max(1.0)) {
            return Err(Error::InvalidParams(format!(
                "k={k} inconsistent with G(0)=0 normalisation (expected {})",
                cp.k
            )));
        }
        Ok(cp)
    }

    pub fn normalising_k(gamma: f64, retail_price: f64, q_bar: f64) -> f64 {
        0.5 * gamma * q_bar * q_bar + retail_price * q_bar
    }

    /// Ideal consumption `q* = q_bar + theta` for a realised shock.
    #[inline]
    pub fn ideal(&self, theta: f64) -> f64 {
        self.q_bar + theta
    }

    /// Consumption at which utility saturates for a realised shock.
    #[inline]
    pub fn saturation_point(&self, theta: f64) -> f64 {
        self.q_bar + theta + self.retail_price / self.gamma
    }
}

impl Default for ConsumerParams {
    /// Reference household: p = 0.26 $/kWh, q_bar = 8 kWh, gamma = 0.05, q_max = 20 kWh.
    fn default() -> Self {
        Self::new(0.05, 0.26, 8.0, 20.0).expect("reference parameters are valid")
    }
}

/// Uniform distribution of the additive load shock on `[theta_lo, theta_hi]`.
///
/// The closed-form solvers only accept the symmetric zero-mean case; the
/// oracle and the exact piecewise integrators work on any interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyModel {
    pub theta_lo: f64,
    pub theta_hi: f64,
}

impl UncertaintyModel {
    pub fn symmetric(theta_hi: f64) -> Result<Self> {
        if !(theta_hi.is_finite() && theta_hi > 0.0) {
            return Err(Error::InvalidParams(format!("theta_hi must be > 0, got {theta_hi}")));
        }
        Ok(Self { theta_lo: -theta_hi, theta_hi })
    }

    pub fn new(theta_lo: f64, theta_hi: f64) -> Result<Self> {
        if !(theta_lo.is_finite() && theta_hi.is_finite() && theta_lo < theta_hi) {
            return Err(Error::InvalidParams(format!(
                "need theta_lo < theta_hi, got [{theta_lo}, {theta_hi}]"
            )));
        }
        Ok(Self { theta_lo, theta_hi })
    }

    /// Support of ±`pct`% of `q_bar`.
    pub fn from_percent(pct: f64, q_bar: f64) -> Result<Self> {
        if !(pct > 0.0 && pct <= 100.0) {
            return Err(Error::InvalidParams(format!(
                "uncertainty percent must be in (0, 100], got {pct}"
            )));
        }
        Self::symmetric(pct * q_bar / 100.0)
    }

    #[inline]
    pub fn width(&self) -> f64 {
        self.theta_hi - self.theta_lo
    }

    #[inline]
    pub fn density(&self, theta: f64) -> f64 {
        if theta < self.theta_lo || theta > self.theta_hi {
            0.0
        } else {
            1.0 / self.width()
        }
    }

    pub fn contains(&self, theta: f64) -> bool {
        theta >= self.theta_lo && theta <= self.theta_hi
    }

    pub fn is_symmetric(&self) -> bool {
        (self.theta_lo + self.theta_hi).abs() <= 1e-12 * self.theta_hi.abs().max(1.0)
    }

    pub(crate) fn require_symmetric(&self) -> Result<()> {
        if self.is_symmetric() {
            Ok(())
        } else {
            Err(Error::UnsupportedDistribution { lo: self.theta_lo, hi: self.theta_hi })
        }
    }

    /// The ideal consumption `q_bar + theta` must stay inside `[0, q_max]`
    /// over the whole support.
    pub fn check_against(&self, cp: &ConsumerParams) -> Result<()> {
        if cp.q_bar + self.theta_lo < 0.0 || cp.q_bar + self.theta_hi > cp.q_max {
            return Err(Error::InvalidParams(format!(
                "support [{}, {}] pushes q_bar + theta outside [0, {}]",
                self.theta_lo, self.theta_hi, cp.q_max
            )));
        }
        Ok(())
    }
}

/// Rebate price and the system operator's call signal.
///
/// `call` is either an indicator (0 or 1) or, for the backward-induction
/// engine only, a call probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProgramParams {
    pub p2: f64,
    pub call: f64,
}

impl ProgramParams {
    pub fn new(p2: f64, call: f64) -> Result<Self> {
        if !(p2.is_finite() && p2 >= 0.0) {
            return Err(Error::InvalidParams(format!("p2 must be >= 0, got {p2}")));
        }
        if !(0.0..=1.0).contains(&call) {
            return Err(Error::InvalidParams(format!("call must be in [0, 1], got {call}")));
        }
        Ok(Self { p2, call })
    }

    /// Always-called program with rebate `p2`.
    pub fn called(p2: f64) -> Result<Self> {
        Self::new(p2, 1.0)
    }

    pub fn is_indicator(&self) -> bool {
        self.call == 0.0 || self.call == 1.0
    }

    pub(crate) fn require_called(&self) -> Result<()> {
        if self.call == 1.0 {
            Ok(())
        } else {
            Err(Error::RequiresCall(self.call))
        }
    }

    pub(crate) fn require_indicator(&self) -> Result<()> {
        if self.is_indicator() {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "call must be 0 or 1 here, got {}",
                self.call
            )))
        }
    }
}

/// Response to a peak event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StrategyLabel {
    /// Called, consumes the ideal load and forgoes the rebate.
    A,
    /// Called, cuts to `q* - p2/gamma` and collects the rebate.
    B,
    /// Called, consumes nothing.
    C,
    /// Not called.
    D,
}

impl fmt::Display for StrategyLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            StrategyLabel::A => "A",
            StrategyLabel::B => "B",
            StrategyLabel::C => "C",
            StrategyLabel::D => "D",
        };
        f.write_str(s)
    }
}

/// Utility of consuming `q` under shock `theta`.
///
/// Quadratic up to the saturation point `q_bar + theta + p/gamma` and constant
/// beyond it. The saturation point is written with the explicit `+theta`; it is
/// the same curve as the one centred on `q* = q_bar + theta`.
pub fn utility_g(q: f64, theta: f64, cp: &ConsumerParams) -> Result<f64> {
    if !(q >= 0.0) {
        return Err(Error::Domain(format!("consumption must be >= 0, got {q}")));
    }
    Ok(utility_unchecked(q, theta, cp))
}

#[inline]
pub(crate) fn utility_unchecked(q: f64, theta: f64, cp: &ConsumerParams) -> f64 {
    let p = cp.retail_price;
    if q <= cp.saturation_point(theta) {
        let d = q - cp.ideal(theta);
        -0.5 * cp.gamma * d * d + p * d + cp.k
    } else {
        p * p / (2.0 * cp.gamma) + cp.k
    }
}

/// Rebate for cutting consumption from `baseline` down to `q`; zero when there is no cut.
#[inline]
pub fn rebate(baseline: f64, q: f64, p2: f64) -> f64 {
    if q < baseline {
        p2 * (baseline - q)
    } else {
        0.0
    }
}

/// Payoff of a called-or-not consumer: utility minus energy bill plus the
/// (expected, when `call` is a probability) rebate.
pub fn payoff_u(
    q: f64,
    theta: f64,
    baseline: f64,
    pp: &ProgramParams,
    cp: &ConsumerParams,
) -> Result<f64> {
    if !(baseline >= 0.0) {
        return Err(Error::Domain(format!("baseline must be >= 0, got {baseline}")));
    }
    let g = utility_g(q, theta, cp)?;
    Ok(g - cp.retail_price * q + pp.call * rebate(baseline, q, pp.p2))
}

#[inline]
pub(crate) fn payoff_unchecked(
    q: f64,
    theta: f64,
    baseline: f64,
    p2: f64,
    call: f64,
    cp: &ConsumerParams,
) -> f64 {
    utility_unchecked(q, theta, cp) - cp.retail_price * q + call * rebate(baseline, q, p2)
}

/// Payoff in a period with no rebate on offer.
#[inline]
pub(crate) fn plain_payoff(q: f64, theta: f64, cp: &ConsumerParams) -> f64 {
    utility_unchecked(q, theta, cp) - cp.retail_price * q
}

/// Consumption of a consumer outside any program, clamped to `[0, q_max]`.
pub fn rational_no_program(theta: f64, cp: &ConsumerParams) -> f64 {
    cp.ideal(theta).clamp(0.0, cp.q_max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp() -> ConsumerParams {
        ConsumerParams::default()
    }

    #[test]
    fn reference_k() {
        assert!((cp().k - 3.68).abs() < 1e-12);
    }

    #[test]
    fn utility_examples() {
        let cp = cp();
        assert!((utility_g(8.0, 0.0, &cp).unwrap() - 3.68).abs() < 1e-12);
        assert!(utility_g(0.0, 0.0, &cp).unwrap().abs() < 1e-12);
        assert!((utility_g(15.0, 0.0, &cp).unwrap() - 4.356).abs() < 1e-12);
        assert!(matches!(utility_g(-0.1, 0.0, &cp), Err(Error::Domain(_))));
    }

    #[test]
    fn utility_continuous_at_saturation() {
        let cp = cp();
        for theta in [-2.0, -0.3, 0.0, 1.7] {
            let s = cp.saturation_point(theta);
            let d = s - cp.ideal(theta);
            let quad = -0.5 * cp.gamma * d * d + cp.retail_price * d + cp.k;
            let flat = cp.retail_price.powi(2) / (2.0 * cp.gamma) + cp.k;
            assert!((quad - flat).abs() < 1e-12);
            assert!((utility_g(s, theta, &cp).unwrap() - utility_g(s + 1e-9, theta, &cp).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn utility_shift_identity() {
        let cp = cp();
        for theta in [-2.0, -0.5, 0.7, 2.0] {
            let v = utility_g(cp.q_bar + theta, theta, &cp).unwrap();
            assert!((v - cp.k).abs() < 1e-12);
        }
    }

    #[test]
    fn payoff_examples() {
        let cp = cp();
        let none = ProgramParams::called(0.0).unwrap();
        assert!((payoff_u(8.0, 0.0, 8.0, &none, &cp).unwrap() - 1.60).abs() < 1e-12);
        let pp = ProgramParams::called(0.15).unwrap();
        assert!((payoff_u(5.0, 0.0, 11.0, &pp, &cp).unwrap() - 2.275).abs() < 1e-12);
        let no_rebate = payoff_u(9.0, 0.0, 8.0, &none, &cp).unwrap();
        assert_eq!(payoff_u(9.0, 0.0, 8.0, &pp, &cp).unwrap(), no_rebate);
    }

    #[test]
    fn rebate_examples() {
        assert!((rebate(11.0, 5.0, 0.15) - 0.90).abs() < 1e-12);
        assert_eq!(rebate(8.0, 8.0, 0.45), 0.0);
        assert_eq!(rebate(8.0, 10.0, 0.45), 0.0);
    }

    #[test]
    fn no_program_examples() {
        let cp = cp();
        assert_eq!(rational_no_program(0.0, &cp), 8.0);
        assert_eq!(rational_no_program(1.5, &cp), 9.5);
        assert_eq!(rational_no_program(-2.0, &cp), 6.0);
        assert_eq!(rational_no_program(-9.0, &cp), 0.0);
        assert_eq!(rational_no_program(30.0, &cp), 20.0);
    }

    #[test]
    fn explicit_k_must_match() {
        assert!(ConsumerParams::with_k(0.05, 0.26, 8.0, 3.68, 20.0).is_ok());
        assert!(ConsumerParams::with_k(0.05, 0.26, 8.0, 3.0, 20.0).is_err());
    }

    #[test]
    fn invalid_params_rejected() {
        assert!(ConsumerParams::new(0.0, 0.26, 8.0, 20.0).is_err());
        assert!(ConsumerParams::new(0.05, 0.26, 21.0, 20.0).is_err());
        assert!(UncertaintyModel::from_percent(0.0, 8.0).is_err());
        assert!(UncertaintyModel::from_percent(101.0, 8.0).is_err());
        assert!(ProgramParams::new(-0.1, 1.0).is_err());
        assert!(ProgramParams::new(0.1, 1.5).is_err());
    }
}
