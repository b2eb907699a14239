//! Event-period ("time t") response to a peak time rebate.
//!
//! Given the baseline `q_prev` set in the previous period and the realised
//! shock, the consumer either ignores the rebate (A), cuts to
//! `q* - p2/gamma` (B), or drops to zero (C). Uncalled consumers play D.
//!
//! Expectations over the uniform shock are computed exactly: the support is
//! split wherever the optimal strategy can change, and on every piece the
//! payoff is a quadratic (the load a linear function) of theta, so Simpson's
//! rule integrates it without error.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    payoff_unchecked, plain_payoff, ConsumerParams, ProgramParams, StrategyLabel,
    UncertaintyModel,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageOneDecision {
    pub strategy: StrategyLabel,
    pub q_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CaseId {
    /// Strategy C has zero probability.
    Case1,
    /// Strategy C has positive but not full probability.
    Case2,
    /// Strategy C covers the whole support a priori.
    Case3,
}

impl fmt::Display for CaseId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CaseId::Case1 => "Case1",
            CaseId::Case2 => "Case2",
            CaseId::Case3 => "Case3",
        })
    }
}

/// Which strategies share the shock support for a given baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    A,
    AB,
    B,
    AC,
    ABC,
    BC,
    /// The A/C mix of case 3.
    ACPrime,
    C,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::A => "A",
            Region::AB => "AB",
            Region::B => "B",
            Region::AC => "AC",
            Region::ABC => "ABC",
            Region::BC => "BC",
            Region::ACPrime => "AC'",
            Region::C => "C",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseLabel {
    pub case_id: CaseId,
    pub region: Region,
}

/// A baseline interval and the strategy mix it induces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionInterval {
    pub region: Region,
    pub lo: f64,
    pub hi: f64,
}

/// Expected event-period load.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpectedLoad {
    /// Exact expectation of the pointwise optimal policy.
    pub pointwise: f64,
    /// Coarse classification by incentive level only (`q_bar`, `q_bar - p2/gamma`, `0`).
    pub coarse: f64,
}

/// Exact expectations of the event-period response at one baseline.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageOneMoments {
    pub payoff: f64,
    pub load: f64,
    pub prob_a: f64,
    pub prob_b: f64,
    pub prob_c: f64,
}

impl StageOneMoments {
    pub fn prob_participate(&self) -> f64 {
        self.prob_b + self.prob_c
    }
}

fn check_q_prev(q_prev: f64, cp: &ConsumerParams) -> Result<()> {
    if !(q_prev >= 0.0 && q_prev <= cp.q_max) {
        return Err(Error::Domain(format!(
            "q_prev must be in [0, {}], got {q_prev}",
            cp.q_max
        )));
    }
    Ok(())
}

/// Best response of a called consumer with baseline `b`.
///
/// Candidates are the ideal load (feasible without rebate only if it does not
/// undercut the baseline) and the participating optimum
/// `max(q* - p2/gamma, 0)` (feasible only below the baseline). Ties go to
/// participation.
#[inline]
pub(crate) fn called_response(
    b: f64,
    theta: f64,
    p2: f64,
    cp: &ConsumerParams,
) -> (StrategyLabel, f64) {
    let ideal = cp.ideal(theta).clamp(0.0, cp.q_max);
    let cut = cp.ideal(theta) - p2 / cp.gamma;
    let part_q = cut.clamp(0.0, cp.q_max);
    let part_label = if cut <= 0.0 { StrategyLabel::C } else { StrategyLabel::B };

    let keep = (ideal >= b).then(|| plain_payoff(ideal, theta, cp));
    let part = (part_q < b).then(|| payoff_unchecked(part_q, theta, b, p2, 1.0, cp));
    match (keep, part) {
        (Some(a), Some(r)) if a > r => (StrategyLabel::A, ideal),
        (Some(_), Some(_)) | (None, Some(_)) => (part_label, part_q),
        (Some(_), None) => (StrategyLabel::A, ideal),
        // ideal < b implies part_q <= ideal < b
        (None, None) => unreachable!("participation is feasible whenever the ideal load is"),
    }
}

/// Load and payoff of `label` as functions of theta on a piece where the label is fixed.
#[inline]
fn branch_value(label: StrategyLabel, b: f64, theta: f64, p2: f64, cp: &ConsumerParams) -> (f64, f64) {
    match label {
        StrategyLabel::A | StrategyLabel::D => {
            let q = cp.ideal(theta).clamp(0.0, cp.q_max);
            (q, plain_payoff(q, theta, cp))
        }
        StrategyLabel::B => {
            let q = (cp.ideal(theta) - p2 / cp.gamma).clamp(0.0, cp.q_max);
            (q, payoff_unchecked(q, theta, b, p2, 1.0, cp))
        }
        StrategyLabel::C => (0.0, payoff_unchecked(0.0, theta, b, p2, 1.0, cp)),
    }
}

/// Shock values where the called best response can switch strategy.
pub(crate) fn theta_breakpoints(b: f64, p2: f64, cp: &ConsumerParams, um: &UncertaintyModel) -> Vec<f64> {
    let g = cp.gamma;
    let mut pts = vec![
        b - cp.q_bar + p2 / (2.0 * g),
        p2 / g - cp.q_bar,
        b - cp.q_bar,
        -cp.q_bar,
        cp.q_max - cp.q_bar,
        cp.q_max - cp.q_bar + p2 / g,
    ];
    if p2 > 0.0 && b > 0.0 {
        let r = (2.0 * p2 * b / g).sqrt();
        pts.push(r - cp.q_bar);
        pts.push(-r - cp.q_bar);
    }
    let mut inner: Vec<f64> = pts
        .into_iter()
        .filter(|t| *t > um.theta_lo && *t < um.theta_hi)
        .collect();
    inner.sort_by(f64::total_cmp);
    inner.dedup_by(|a, b| (*a - *b).abs() <= 1e-14);
    let mut out = Vec::with_capacity(inner.len() + 2);
    out.push(um.theta_lo);
    out.extend(inner);
    out.push(um.theta_hi);
    out
}

/// Exact expectations of the event-period response for an indicator call.
pub(crate) fn moments(
    b: f64,
    p2: f64,
    called: bool,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> StageOneMoments {
    let w = um.width();
    let mut m = StageOneMoments { payoff: 0.0, load: 0.0, prob_a: 0.0, prob_b: 0.0, prob_c: 0.0 };
    let pts = if called {
        theta_breakpoints(b, p2, cp, um)
    } else {
        vec![um.theta_lo, -cp.q_bar, cp.q_max - cp.q_bar, um.theta_hi]
            .into_iter()
            .filter(|t| *t >= um.theta_lo && *t <= um.theta_hi)
            .collect()
    };
    for win in pts.windows(2) {
        let (x0, x1) = (win[0], win[1]);
        let h = x1 - x0;
        if h <= 0.0 {
            continue;
        }
        let xm = 0.5 * (x0 + x1);
        let label = if called { called_response(b, xm, p2, cp).0 } else { StrategyLabel::D };
        let (q0, u0) = branch_value(label, b, x0, p2, cp);
        let (qm, um_) = branch_value(label, b, xm, p2, cp);
        let (q1, u1) = branch_value(label, b, x1, p2, cp);
        m.payoff += h / 6.0 * (u0 + 4.0 * um_ + u1);
        m.load += h / 6.0 * (q0 + 4.0 * qm + q1);
        match label {
            StrategyLabel::A | StrategyLabel::D => m.prob_a += h,
            StrategyLabel::B => m.prob_b += h,
            StrategyLabel::C => m.prob_c += h,
        }
    }
    m.payoff /= w;
    m.load /= w;
    m.prob_a /= w;
    m.prob_b /= w;
    m.prob_c /= w;
    m
}

/// Probability that a called consumer with baseline `b` collects a rebate.
///
/// Participation happens exactly for theta below a threshold: the A/B
/// indifference point when `b >= p2/(2 gamma)`, otherwise the A/C
/// indifference point `sqrt(2 p2 b / gamma) - q_bar`.
fn participation_threshold_prob(b: f64, p2: f64, cp: &ConsumerParams, um: &UncertaintyModel) -> f64 {
    if p2 <= 0.0 {
        // no rebate: participating and keeping the ideal load coincide below the baseline
        return ((b - cp.q_bar - um.theta_lo) / um.width()).clamp(0.0, 1.0);
    }
    let g = cp.gamma;
    let tau = if b >= p2 / (2.0 * g) {
        b - cp.q_bar + p2 / (2.0 * g)
    } else {
        (2.0 * p2 * b / g).sqrt() - cp.q_bar
    };
    ((tau - um.theta_lo) / um.width()).clamp(0.0, 1.0)
}

/// Probability that a called consumer collects a rebate at baseline `q_prev`.
pub fn participation_probability(
    q_prev: f64,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<f64> {
    pp.require_indicator()?;
    check_q_prev(q_prev, cp)?;
    um.check_against(cp)?;
    if pp.call == 0.0 {
        return Ok(0.0);
    }
    Ok(participation_threshold_prob(q_prev, pp.p2, cp, um))
}

/// Optimal event-period consumption for a realised shock.
pub fn optimal_q_t(
    q_prev: f64,
    theta_t: f64,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<StageOneDecision> {
    pp.require_indicator()?;
    check_q_prev(q_prev, cp)?;
    if !um.contains(theta_t) {
        return Err(Error::OutsideSupport { theta: theta_t, lo: um.theta_lo, hi: um.theta_hi });
    }
    if pp.call == 0.0 {
        return Ok(StageOneDecision {
            strategy: StrategyLabel::D,
            q_t: cp.ideal(theta_t).clamp(0.0, cp.q_max),
        });
    }
    let (strategy, q_t) = called_response(q_prev, theta_t, pp.p2, cp);
    Ok(StageOneDecision { strategy, q_t })
}

/// Shock at which ignoring the rebate and cutting to `q* - p2/gamma` pay the same.
pub fn indifference_theta(q_prev: f64, pp: &ProgramParams, cp: &ConsumerParams) -> Result<f64> {
    pp.require_called()?;
    Ok(q_prev - cp.q_bar + pp.p2 / (2.0 * cp.gamma))
}

/// Coarse expected load, classified by incentive level alone.
pub fn coarse_expected_q_t(q_prev: f64, pp: &ProgramParams, cp: &ConsumerParams) -> f64 {
    if pp.call == 0.0 {
        return cp.q_bar;
    }
    let g = cp.gamma;
    if pp.p2 <= 2.0 * g * (cp.q_bar - q_prev) {
        cp.q_bar
    } else if pp.p2 <= cp.q_bar * g {
        cp.q_bar - pp.p2 / g
    } else {
        0.0
    }
}

/// Expected event-period load under the uniform shock.
pub fn expected_q_t(
    q_prev: f64,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<ExpectedLoad> {
    pp.require_indicator()?;
    check_q_prev(q_prev, cp)?;
    um.check_against(cp)?;
    let m = moments(q_prev, pp.p2, pp.call == 1.0, cp, um);
    Ok(ExpectedLoad { pointwise: m.load, coarse: coarse_expected_q_t(q_prev, pp, cp) })
}

/// Full set of exact moments at one baseline.
pub fn stage_one_moments(
    q_prev: f64,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<StageOneMoments> {
    pp.require_indicator()?;
    check_q_prev(q_prev, cp)?;
    um.check_against(cp)?;
    Ok(moments(q_prev, pp.p2, pp.call == 1.0, cp, um))
}

/// Which of the three cases applies, from where `p2/gamma - q_bar` falls.
pub fn case_id(pp: &ProgramParams, cp: &ConsumerParams, um: &UncertaintyModel) -> CaseId {
    let s = pp.p2 / cp.gamma - cp.q_bar;
    if um.theta_lo > s {
        CaseId::Case1
    } else if s < um.theta_hi {
        CaseId::Case2
    } else {
        CaseId::Case3
    }
}

/// Baseline intervals of each strategy mix, clipped to `[0, q_max]`, empty ones dropped.
pub fn region_intervals(
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<(CaseId, Vec<RegionInterval>)> {
    pp.require_called()?;
    let half = pp.p2 / (2.0 * cp.gamma);
    let e1 = cp.q_bar + um.theta_lo - half;
    let e2 = cp.q_bar + um.theta_hi - half;
    let case = case_id(pp, cp, um);
    let raw: Vec<(Region, f64, f64)> = match case {
        CaseId::Case1 => vec![(Region::A, 0.0, e1), (Region::AB, e1, e2), (Region::B, e2, cp.q_max)],
        CaseId::Case2 => vec![
            (Region::A, 0.0, e1),
            (Region::AC, e1, half),
            (Region::ABC, half, e2),
            (Region::BC, e2, cp.q_max),
        ],
        CaseId::Case3 => vec![
            (Region::A, 0.0, e1),
            (Region::ACPrime, e1, e2),
            (Region::C, e2, cp.q_max),
        ],
    };
    let out = raw
        .into_iter()
        .filter_map(|(region, lo, hi)| {
            let lo = lo.clamp(0.0, cp.q_max);
            let hi = hi.clamp(0.0, cp.q_max);
            (hi > lo).then_some(RegionInterval { region, lo, hi })
        })
        .collect();
    Ok((case, out))
}

/// Case and strategy-mix region for a baseline. Shared endpoints belong to
/// the higher region.
pub fn classify_case(
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
    q_prev: f64,
) -> Result<CaseLabel> {
    check_q_prev(q_prev, cp)?;
    let (case_id, regions) = region_intervals(pp, cp, um)?;
    let region = regions
        .iter()
        .rev()
        .find(|r| q_prev >= r.lo)
        .or_else(|| regions.first())
        .map(|r| r.region)
        .ok_or_else(|| Error::InvalidParams("no non-empty region".into()))?;
    Ok(CaseLabel { case_id, region })
}

/// Expected event-period payoff of a called consumer with baseline `q_prev`.
pub fn expected_stage_one_payoff(
    q_prev: f64,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<f64> {
    pp.require_called()?;
    um.require_symmetric()?;
    check_q_prev(q_prev, cp)?;
    um.check_against(cp)?;
    Ok(moments(q_prev, pp.p2, true, cp, um).payoff)
}
