//! Baseline-setting period ("time t-1").
//!
//! The consumer picks `q_prev`, knowing it becomes the baseline for the
//! event period. The objective
//!
//! ```text
//! J(b) = U_{t-1}(b, theta_prev) + E[U_t(q_t°, theta_t, b)]
//! ```
//!
//! is concave in its first term and convex in its second (the derivative of
//! the expectation is `p2 * P(participate | b)`, which grows with `b`), so it
//! can have several local maxima. [`local_maxima_by_region`] finds every one
//! of them exactly; [`solve_stage_two_closed`] evaluates the closed-form
//! expected baselines and checks when they apply.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{plain_payoff, ConsumerParams, ProgramParams, UncertaintyModel};
use crate::quadrature;
use crate::stage_one::{self, CaseId, Region};

/// Which closed-form expression produced the expected baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Branch {
    /// `q_bar - p2/(2 gamma) + 2 p2 theta_hi / (2 theta_hi gamma - p2)`, low incentives.
    InteriorLow,
    /// `q_bar + p2/gamma`.
    QBarPlusP2OverGamma,
    /// Consume as much as allowed.
    QMax,
    /// Optimum sits on a region boundary (numeric solutions only).
    Corner,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::InteriorLow => "interior_low",
            Branch::QBarPlusP2OverGamma => "q_bar_plus_p2_over_gamma",
            Branch::QMax => "q_max",
            Branch::Corner => "corner",
        })
    }
}

/// Closed form used, one per case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TheoremId {
    T2,
    T3,
    T4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTwoSolution {
    pub expected_q_prev: f64,
    pub active_branch: Branch,
    pub theorem_id: TheoremId,
    /// False when the closed form's preconditions fail; `expected_q_prev`
    /// is then the exact optimum at the mean shock, the quantity the closed
    /// forms evaluate. [`solve_stage_two_exact`] averages over the shock instead.
    pub applicable: bool,
}

/// Best baseline inside one region interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionMax {
    pub region: Region,
    pub q_prev: f64,
    pub value: f64,
    /// True when the maximiser is a stationary point rather than an interval end.
    pub stationary: bool,
}

/// Expectations over the baseline-period shock of the exact optimum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactStageTwo {
    pub e_q_prev: f64,
    pub e_q_t: f64,
    pub e_profit: f64,
    /// Optimum at `theta_prev = 0`.
    pub at_zero: RegionMax,
    pub branch: Branch,
}

// Quadrature over theta_prev for the exact expectation.
const THETA_PREV_PANELS: usize = 200;
const THETA_PREV_NODES: usize = 3;

fn check(pp: &ProgramParams, cp: &ConsumerParams, um: &UncertaintyModel) -> Result<()> {
    pp.require_called()?;
    um.require_symmetric()?;
    um.check_against(cp)
}

#[inline]
fn objective_unchecked(b: f64, theta_prev: f64, p2: f64, cp: &ConsumerParams, um: &UncertaintyModel) -> f64 {
    plain_payoff(b, theta_prev, cp) + stage_one::moments(b, p2, true, cp, um).payoff
}

/// Total expected payoff of choosing baseline `q_prev` after observing `theta_prev`.
pub fn stage_two_objective(
    q_prev: f64,
    theta_prev: f64,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<f64> {
    check(pp, cp, um)?;
    if !(q_prev >= 0.0 && q_prev <= cp.q_max) {
        return Err(Error::Domain(format!("q_prev must be in [0, {}], got {q_prev}", cp.q_max)));
    }
    Ok(objective_unchecked(q_prev, theta_prev, pp.p2, cp, um))
}

/// Coefficients of `J'(b) = alpha + beta*b + delta*sqrt(b)` valid around `x`.
fn derivative_form(x: f64, theta_prev: f64, p2: f64, cp: &ConsumerParams, um: &UncertaintyModel) -> (f64, f64, f64) {
    let g = cp.gamma;
    let m = cp.q_bar + theta_prev;
    let w = um.width();
    let (mut alpha, mut beta, mut delta) = (0.0, 0.0, 0.0);
    if x < m + cp.retail_price / g {
        alpha += g * m;
        beta -= g;
    } else {
        alpha -= cp.retail_price;
    }
    if p2 > 0.0 {
        let linear = x >= p2 / (2.0 * g);
        let tau = if linear {
            x - cp.q_bar + p2 / (2.0 * g)
        } else {
            (2.0 * p2 * x / g).sqrt() - cp.q_bar
        };
        let raw = (tau - um.theta_lo) / w;
        if raw >= 1.0 {
            alpha += p2;
        } else if raw > 0.0 {
            if linear {
                alpha += p2 * (-cp.q_bar + p2 / (2.0 * g) - um.theta_lo) / w;
                beta += p2 / w;
            } else {
                alpha += p2 * (-cp.q_bar - um.theta_lo) / w;
                delta += p2 * (2.0 * p2 / g).sqrt() / w;
            }
        }
    }
    (alpha, beta, delta)
}

/// Zeros of `alpha + beta*b + delta*sqrt(b)` inside `(lo, hi)`.
fn stationary_points(alpha: f64, beta: f64, delta: f64, lo: f64, hi: f64, out: &mut Vec<f64>) {
    let mut push = |b: f64| {
        if b.is_finite() && b > lo && b < hi {
            out.push(b);
        }
    };
    if delta == 0.0 {
        if beta != 0.0 {
            push(-alpha / beta);
        }
        return;
    }
    // beta u² + delta u + alpha = 0 with u = sqrt(b) >= 0
    if beta == 0.0 {
        let u = -alpha / delta;
        if u >= 0.0 {
            push(u * u);
        }
        return;
    }
    let disc = delta * delta - 4.0 * beta * alpha;
    if disc < 0.0 {
        return;
    }
    let sq = disc.sqrt();
    for u in [(-delta + sq) / (2.0 * beta), (-delta - sq) / (2.0 * beta)] {
        if u >= 0.0 {
            push(u * u);
        }
    }
}

/// Points where the form of `J'` changes.
fn baseline_breakpoints(theta_prev: f64, p2: f64, cp: &ConsumerParams, um: &UncertaintyModel) -> Vec<f64> {
    let g = cp.gamma;
    let half = p2 / (2.0 * g);
    let mut pts = vec![
        0.0,
        cp.q_max,
        cp.q_bar + theta_prev + cp.retail_price / g,
        half,
        cp.q_bar + um.theta_lo - half,
        cp.q_bar + um.theta_hi - half,
    ];
    if p2 > 0.0 {
        for edge in [um.theta_lo, um.theta_hi] {
            let r = cp.q_bar + edge;
            if r >= 0.0 {
                pts.push(g * r * r / (2.0 * p2));
            }
        }
    }
    pts
}

/// Better of two candidates; near-ties go to the larger baseline.
#[inline]
fn prefer(best: Option<RegionMax>, cand: RegionMax) -> Option<RegionMax> {
    match best {
        None => Some(cand),
        Some(b) => {
            let tol = 1e-12 * b.value.abs().max(1.0);
            if cand.value > b.value + tol || (cand.value >= b.value - tol && cand.q_prev > b.q_prev) {
                Some(cand)
            } else {
                Some(b)
            }
        }
    }
}

fn local_maxima_unchecked(
    theta_prev: f64,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<Vec<RegionMax>> {
    let p2 = pp.p2;
    let (_, regions) = stage_one::region_intervals(pp, cp, um)?;
    let breaks = baseline_breakpoints(theta_prev, p2, cp, um);
    let mut out = Vec::with_capacity(regions.len());
    for r in &regions {
        let mut knots: Vec<f64> = breaks.iter().copied().filter(|x| *x > r.lo && *x < r.hi).collect();
        knots.push(r.lo);
        knots.push(r.hi);
        knots.sort_by(f64::total_cmp);
        knots.dedup();
        let mut stationary = Vec::new();
        for win in knots.windows(2) {
            let (alpha, beta, delta) = derivative_form(0.5 * (win[0] + win[1]), theta_prev, p2, cp, um);
            stationary_points(alpha, beta, delta, win[0], win[1], &mut stationary);
        }
        let ends = knots.iter().map(|&b| (b, false));
        let inner = stationary.iter().map(|&b| (b, true));
        let best = ends
            .chain(inner)
            .map(|(b, st)| RegionMax {
                region: r.region,
                q_prev: b,
                value: objective_unchecked(b, theta_prev, p2, cp, um),
                stationary: st,
            })
            .fold(None, prefer);
        if let Some(b) = best {
            out.push(b);
        }
    }
    Ok(out)
}

/// Best baseline in every strategy-mix region for a given `theta_prev`.
pub fn local_maxima_by_region(
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
    theta_prev: f64,
) -> Result<Vec<RegionMax>> {
    check(pp, cp, um)?;
    local_maxima_unchecked(theta_prev, pp, cp, um)
}

/// Global optimum over all regions; near-ties go to the larger baseline.
pub fn global_maximum(
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
    theta_prev: f64,
) -> Result<RegionMax> {
    check(pp, cp, um)?;
    global_unchecked(theta_prev, pp, cp, um)
}

fn global_unchecked(
    theta_prev: f64,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<RegionMax> {
    local_maxima_unchecked(theta_prev, pp, cp, um)?
        .into_iter()
        .fold(None, prefer)
        .ok_or_else(|| Error::InvalidParams("no feasible baseline region".into()))
}

fn classify_branch(opt: &RegionMax, theta_prev: f64, p2: f64, cp: &ConsumerParams) -> Branch {
    let tol = 1e-7 * cp.q_max.max(1.0);
    if (opt.q_prev - cp.q_max).abs() <= tol {
        Branch::QMax
    } else if (opt.q_prev - (cp.q_bar + theta_prev + p2 / cp.gamma)).abs() <= tol {
        Branch::QBarPlusP2OverGamma
    } else if opt.stationary {
        Branch::InteriorLow
    } else {
        Branch::Corner
    }
}

/// Exact optimum averaged over the baseline-period shock.
pub fn solve_stage_two_exact(
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<ExactStageTwo> {
    check(pp, cp, um)?;
    let rule = quadrature::composite(THETA_PREV_PANELS, THETA_PREV_NODES, um.theta_lo, um.theta_hi)?;
    let w = um.width();
    let (mut eq, mut et, mut ep) = (0.0, 0.0, 0.0);
    for &(theta, wt) in &rule {
        let opt = global_unchecked(theta, pp, cp, um)?;
        let load = stage_one::moments(opt.q_prev, pp.p2, true, cp, um).load;
        eq += wt * opt.q_prev;
        et += wt * load;
        ep += wt * opt.value;
    }
    let at_zero = global_unchecked(0.0, pp, cp, um)?;
    Ok(ExactStageTwo {
        e_q_prev: eq / w,
        e_q_t: et / w,
        e_profit: ep / w,
        at_zero,
        branch: classify_branch(&at_zero, 0.0, pp.p2, cp),
    })
}

/// Closed-form expected baseline, one theorem per case.
///
/// At `p2 = p` the consumer is indifferent over a whole interval of
/// baselines; the `q_max` branch is used there.
pub fn solve_stage_two_closed(
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<StageTwoSolution> {
    check(pp, cp, um)?;
    let (g, p, p2) = (cp.gamma, cp.retail_price, pp.p2);
    let (lo, hi) = (um.theta_lo, um.theta_hi);
    let low_cut = 2.0 / 3.0 * hi * g;

    let (theorem_id, branch, in_range) = match stage_one::case_id(pp, cp, um) {
        CaseId::Case1 => {
            let branch = if p2 < low_cut {
                Branch::InteriorLow
            } else if p2 < p {
                Branch::QBarPlusP2OverGamma
            } else {
                Branch::QMax
            };
            (TheoremId::T2, branch, p2 < g * (lo + cp.q_bar))
        }
        CaseId::Case2 => {
            if p2 < low_cut {
                (TheoremId::T3, Branch::InteriorLow, p2 >= g * (lo + cp.q_bar))
            } else if p2 < p {
                (TheoremId::T3, Branch::QBarPlusP2OverGamma, true)
            } else {
                (TheoremId::T3, Branch::QMax, p2 <= g * (hi + cp.q_bar))
            }
        }
        CaseId::Case3 => {
            if p2 < p {
                (TheoremId::T4, Branch::QBarPlusP2OverGamma, p2 >= g * (hi + cp.q_bar))
            } else {
                (TheoremId::T4, Branch::QMax, true)
            }
        }
    };

    let value = match branch {
        Branch::InteriorLow => cp.q_bar - p2 / (2.0 * g) + 2.0 * p2 * hi / (2.0 * hi * g - p2),
        Branch::QBarPlusP2OverGamma => cp.q_bar + p2 / g,
        Branch::QMax | Branch::Corner => cp.q_max,
    };
    // utility must saturate beyond the pure-participation region and before q_max
    let saturation_ok = cp.q_bar + p / g > cp.q_bar + hi - p2 / (2.0 * g) && cp.q_bar + p / g <= cp.q_max;
    let applicable = in_range && saturation_ok && (0.0..=cp.q_max).contains(&value);

    if applicable {
        return Ok(StageTwoSolution { expected_q_prev: value, active_branch: branch, theorem_id, applicable });
    }
    let opt = global_unchecked(0.0, pp, cp, um)?;
    Ok(StageTwoSolution {
        expected_q_prev: opt.q_prev,
        active_branch: classify_branch(&opt, 0.0, p2, cp),
        theorem_id,
        applicable: false,
    })
}
