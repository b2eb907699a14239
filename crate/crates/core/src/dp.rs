//! Backward induction over several baseline-setting periods followed by a
//! possible event.
//!
//! The state carried between periods is a sufficient statistic of the
//! consumption history for the chosen baseline rule: the last consumption for
//! [`BaselineFn::LastValue`] and the running sum for [`BaselineFn::Mean`].
//! Decisions live on the grid `0, q_step, ..., q_max`, so every reachable
//! state is an exact grid index and no interpolation is needed while solving.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{payoff_unchecked, plain_payoff, ConsumerParams, ProgramParams, UncertaintyModel};
use crate::oracle::{grid_len, grid_node};
use crate::quadrature::{composite, gauss_legendre};
use crate::stage_one::theta_breakpoints;

/// Default bound on `states x shock nodes x decisions` summed over stages.
pub const DEFAULT_CELL_LIMIT: u128 = 4_000_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineFn {
    /// Baseline equals the consumption of the period just before the event.
    LastValue,
    /// Baseline is the arithmetic mean of all baseline-setting periods.
    Mean,
}

impl BaselineFn {
    pub fn as_str(self) -> &'static str {
        match self {
            BaselineFn::LastValue => "last",
            BaselineFn::Mean => "mean",
        }
    }

    /// Baseline from an explicit consumption history (oldest first).
    pub fn evaluate(self, history: &[f64]) -> f64 {
        match self {
            BaselineFn::LastValue => history.last().copied().unwrap_or(0.0),
            BaselineFn::Mean => history.iter().sum::<f64>() / history.len().max(1) as f64,
        }
    }
}

impl FromStr for BaselineFn {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "last" | "last-value" | "last_value" => Ok(BaselineFn::LastValue),
            "mean" => Ok(BaselineFn::Mean),
            _ => Err(Error::InvalidParams(format!("unknown baseline function `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonSpec {
    /// Baseline-setting periods before the event period.
    pub n_periods: usize,
    pub baseline_fn: BaselineFn,
    /// Probability that the operator calls an event in the final period.
    pub call_probability: f64,
}

impl Default for HorizonSpec {
    fn default() -> Self {
        Self { n_periods: 1, baseline_fn: BaselineFn::LastValue, call_probability: 1.0 }
    }
}

impl HorizonSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.n_periods) {
            return Err(Error::InvalidParams(format!("n_periods must be in 1..=3, got {}", self.n_periods)));
        }
        if !(0.0..=1.0).contains(&self.call_probability) {
            return Err(Error::InvalidParams(format!(
                "call_probability must be in [0, 1], got {}",
                self.call_probability
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub q_step: f64,
    /// Gauss-Legendre nodes per shock sub-interval.
    pub theta_nodes: usize,
    /// Equal panels used for the shock expectation in baseline-setting periods.
    pub theta_panels: usize,
    pub cell_limit: u128,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { q_step: 0.01, theta_nodes: 5, theta_panels: 8, cell_limit: DEFAULT_CELL_LIMIT }
    }
}

impl GridSpec {
    pub fn validate(&self, cp: &ConsumerParams) -> Result<usize> {
        if !(self.q_step > 0.0 && self.q_step.is_finite()) {
            return Err(Error::InvalidParams(format!("q_step must be positive, got {}", self.q_step)));
        }
        if self.theta_nodes < 3 || self.theta_panels == 0 {
            return Err(Error::InvalidParams("need theta_nodes >= 3 and theta_panels >= 1".into()));
        }
        grid_len(cp.q_max, self.q_step)
    }
}

/// Decision at one quadrature node of one state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub theta: f64,
    /// Quadrature weight; weights of a state sum to one.
    pub weight: f64,
    /// Optimal consumption (in the event period: when the event is called).
    pub q: f64,
    /// Optimal event-period consumption when no event is called; equals `q` elsewhere.
    pub q_no_call: f64,
    /// Immediate payoff plus expected continuation at this node.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTable {
    /// Expected value-to-go per state, before the period's shock is revealed.
    pub value: Vec<f64>,
    /// Row offsets: rows of state `s` are `rows[row_start[s]..row_start[s + 1]]`.
    pub row_start: Vec<usize>,
    pub rows: Vec<PolicyRow>,
}

impl StageTable {
    pub fn n_states(&self) -> usize {
        self.value.len()
    }

    pub fn rows_of(&self, state: usize) -> &[PolicyRow] {
        &self.rows[self.row_start[state]..self.row_start[state + 1]]
    }
}

/// Solved policy: stage `0..n_periods` are baseline-setting periods, stage
/// `n_periods` is the event period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    pub horizon: HorizonSpec,
    pub grid: GridSpec,
    pub cp: ConsumerParams,
    pub pp: ProgramParams,
    pub um: UncertaintyModel,
    pub stages: Vec<StageTable>,
}

/// State-space bookkeeping shared by the solver and rollouts.
#[derive(Debug, Clone, Copy)]
struct Layout {
    n: usize,
    n_q: usize,
    step: f64,
    q_max: f64,
    baseline: BaselineFn,
}

impl Layout {
    fn q(&self, i: usize) -> f64 {
        grid_node(i, self.n_q, self.step, self.q_max)
    }

    fn n_states(&self, stage: usize) -> usize {
        match (self.baseline, stage) {
            (_, 0) => 1,
            (BaselineFn::LastValue, _) => self.n_q,
            (BaselineFn::Mean, s) => s * (self.n_q - 1) + 1,
        }
    }

    fn next(&self, state: usize, qi: usize) -> usize {
        match self.baseline {
            BaselineFn::LastValue => qi,
            BaselineFn::Mean => state + qi,
        }
    }

    fn baseline(&self, state: usize) -> f64 {
        match self.baseline {
            BaselineFn::LastValue => self.q(state),
            BaselineFn::Mean if state == self.n * (self.n_q - 1) => self.q_max,
            BaselineFn::Mean => state as f64 * self.step / self.n as f64,
        }
    }

    /// Grid state for a history statistic; the flag reports whether it had to be snapped.
    fn locate(&self, stage: usize, statistic: f64) -> (usize, bool) {
        let m = self.n_states(stage);
        if m == 1 {
            return (0, false);
        }
        let x = statistic / self.step;
        let idx = (x.round().max(0.0) as usize).min(m - 1);
        (idx, (x - idx as f64).abs() > 1e-6)
    }
}

fn layout(hs: &HorizonSpec, gs: &GridSpec, cp: &ConsumerParams) -> Result<Layout> {
    hs.validate()?;
    let n_q = gs.validate(cp)?;
    Ok(Layout { n: hs.n_periods, n_q, step: gs.q_step, q_max: cp.q_max, baseline: hs.baseline_fn })
}

/// Normalised nodes for the shock expectation, split at the given points.
fn nodes_on(points: &[f64], n: usize, width: f64) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::new();
    for w in points.windows(2) {
        if w[1] > w[0] {
            out.extend(gauss_legendre(n, w[0], w[1])?.into_iter().map(|(x, wt)| (x, wt / width)));
        }
    }
    Ok(out)
}

/// Event-period quadrature for baseline `b`. Without a payable rebate every
/// state shares one node set, so continuation values cannot differ by
/// quadrature placement alone.
fn event_nodes(b: f64, p2: f64, call_p: f64, gs: &GridSpec, cp: &ConsumerParams, um: &UncertaintyModel) -> Result<Vec<(f64, f64)>> {
    let (b, p2) = if call_p > 0.0 && p2 > 0.0 { (b, p2) } else { (0.0, 0.0) };
    nodes_on(&theta_breakpoints(b, p2, cp, um), gs.theta_nodes, um.width())
}

/// Grid argmax of `f`; `prefer_larger` decides near-ties.
#[inline]
fn grid_argmax(n_q: usize, prefer_larger: bool, f: impl Fn(usize) -> f64) -> (usize, f64) {
    let mut best = (0usize, f(0));
    for i in 1..n_q {
        let v = f(i);
        let tol = 1e-12 * best.1.abs().max(1.0);
        if v > best.1 + tol || (prefer_larger && v >= best.1 - tol) {
            best = (i, if v > best.1 { v } else { best.1 });
        }
    }
    best
}

struct EventChoice {
    q_call: usize,
    q_no_call: usize,
    value: f64,
}

fn event_choice(b: f64, theta: f64, call_p: f64, l: &Layout, pp: &ProgramParams, cp: &ConsumerParams) -> EventChoice {
    let (q_no_call, v_plain) = grid_argmax(l.n_q, false, |i| plain_payoff(l.q(i), theta, cp));
    let (q_call, v_call) = if call_p > 0.0 {
        grid_argmax(l.n_q, false, |i| payoff_unchecked(l.q(i), theta, b, pp.p2, 1.0, cp))
    } else {
        (q_no_call, v_plain)
    };
    EventChoice { q_call, q_no_call, value: call_p * v_call + (1.0 - call_p) * v_plain }
}

fn stage_choice(state: usize, theta: f64, l: &Layout, next_value: &[f64], cp: &ConsumerParams) -> (usize, f64) {
    grid_argmax(l.n_q, true, |i| plain_payoff(l.q(i), theta, cp) + next_value[l.next(state, i)])
}

fn effective_call(hs: &HorizonSpec, pp: &ProgramParams) -> f64 {
    hs.call_probability * pp.call
}

fn assemble(per_state: Vec<(f64, Vec<PolicyRow>)>) -> StageTable {
    let mut value = Vec::with_capacity(per_state.len());
    let mut row_start = Vec::with_capacity(per_state.len() + 1);
    let mut rows = Vec::new();
    row_start.push(0);
    for (v, r) in per_state {
        value.push(v);
        rows.extend(r);
        row_start.push(rows.len());
    }
    StageTable { value, row_start, rows }
}

/// Solves the horizon backward from the event period.
///
/// The event is called with probability `hs.call_probability * pp.call`.
pub fn solve_backward(
    hs: &HorizonSpec,
    gs: &GridSpec,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
) -> Result<PolicyTable> {
    let l = layout(hs, gs, cp)?;
    um.check_against(cp)?;
    let call_p = effective_call(hs, pp);

    let early_nodes = composite(gs.theta_panels, gs.theta_nodes, um.theta_lo, um.theta_hi)?
        .into_iter()
        .map(|(x, w)| (x, w / um.width()))
        .collect::<Vec<_>>();
    let event_states = l.n_states(l.n);
    let event_node_sets: Vec<Vec<(f64, f64)>> = (0..event_states)
        .map(|s| event_nodes(l.baseline(s), pp.p2, call_p, gs, cp, um))
        .collect::<Result<_>>()?;

    let n_q = l.n_q as u128;
    let mut cells: u128 = event_node_sets.iter().map(|v| v.len() as u128).sum::<u128>() * n_q * 2;
    for s in 0..l.n {
        cells += l.n_states(s) as u128 * early_nodes.len() as u128 * n_q;
    }
    if cells > gs.cell_limit {
        return Err(Error::ResourceLimit { cells, limit: gs.cell_limit });
    }

    let event: Vec<(f64, Vec<PolicyRow>)> = event_node_sets
        .par_iter()
        .enumerate()
        .map(|(s, nodes)| {
            let b = l.baseline(s);
            let rows: Vec<PolicyRow> = nodes
                .iter()
                .map(|&(theta, weight)| {
                    let c = event_choice(b, theta, call_p, &l, pp, cp);
                    PolicyRow { theta, weight, q: l.q(c.q_call), q_no_call: l.q(c.q_no_call), value: c.value }
                })
                .collect();
            (rows.iter().map(|r| r.weight * r.value).sum(), rows)
        })
        .collect();

    let mut stages = vec![assemble(event)];
    for stage in (0..l.n).rev() {
        let next_value = &stages[0].value;
        let per_state: Vec<(f64, Vec<PolicyRow>)> = (0..l.n_states(stage))
            .into_par_iter()
            .map(|s| {
                let rows: Vec<PolicyRow> = early_nodes
                    .iter()
                    .map(|&(theta, weight)| {
                        let (qi, value) = stage_choice(s, theta, &l, next_value, cp);
                        PolicyRow { theta, weight, q: l.q(qi), q_no_call: l.q(qi), value }
                    })
                    .collect();
                (rows.iter().map(|r| r.weight * r.value).sum(), rows)
            })
            .collect();
        stages.insert(0, assemble(per_state));
    }

    Ok(PolicyTable { horizon: *hs, grid: *gs, cp: *cp, pp: *pp, um: *um, stages })
}

impl PolicyTable {
    fn layout(&self) -> Result<Layout> {
        layout(&self.horizon, &self.grid, &self.cp)
    }

    /// Optimal expected total payoff over all periods.
    pub fn expected_total(&self) -> f64 {
        self.stages[0].value[0]
    }

    /// Expected first-period decision under the quadrature measure.
    pub fn expected_first_decision(&self) -> f64 {
        self.stages[0].rows_of(0).iter().map(|r| r.weight * r.q).sum()
    }

    /// Expected event-period consumption for a state of the event stage.
    pub fn expected_event_load(&self, state: usize) -> f64 {
        let p = effective_call(&self.horizon, &self.pp);
        self.stages[self.horizon.n_periods]
            .rows_of(state)
            .iter()
            .map(|r| r.weight * (p * r.q + (1.0 - p) * r.q_no_call))
            .sum()
    }

    /// State index of a consumption history (oldest first) at the stage that follows it.
    pub fn state_of(&self, history: &[f64]) -> Result<usize> {
        let l = self.layout()?;
        if history.len() > l.n {
            return Err(Error::Domain(format!("history longer than {} periods", l.n)));
        }
        let stat = match l.baseline {
            BaselineFn::LastValue => history.last().copied().unwrap_or(0.0),
            BaselineFn::Mean => history.iter().sum(),
        };
        Ok(l.locate(history.len(), stat).0)
    }

    /// Baseline of an event-stage state.
    pub fn event_baseline(&self, state: usize) -> Result<f64> {
        Ok(self.layout()?.baseline(state))
    }

    /// Serialises to the line-oriented text format read by [`PolicyTable::from_text`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let h = &self.horizon;
        let g = &self.grid;
        let c = &self.cp;
        out.push_str("# ptr-rational policy table v1\n");
        let _ = writeln!(
            out,
            "horizon n_periods={} baseline={} call_probability={}",
            h.n_periods,
            h.baseline_fn.as_str(),
            h.call_probability
        );
        let _ = writeln!(
            out,
            "grid q_step={} theta_nodes={} theta_panels={} cell_limit={}",
            g.q_step, g.theta_nodes, g.theta_panels, g.cell_limit
        );
        let _ = writeln!(
            out,
            "consumer gamma={} retail_price={} q_bar={} k={} q_max={}",
            c.gamma, c.retail_price, c.q_bar, c.k, c.q_max
        );
        let _ = writeln!(out, "program p2={} call={}", self.pp.p2, self.pp.call);
        let _ = writeln!(out, "support theta_lo={} theta_hi={}", self.um.theta_lo, self.um.theta_hi);
        for (i, st) in self.stages.iter().enumerate() {
            let _ = writeln!(out, "stage {i} states={} rows={}", st.n_states(), st.rows.len());
            for s in 0..st.n_states() {
                let _ = writeln!(out, "state {s} value={} rows={}", st.value[s], st.rows_of(s).len());
                for r in st.rows_of(s) {
                    let _ = writeln!(out, "{} {} {} {} {}", r.theta, r.weight, r.q, r.q_no_call, r.value);
                }
            }
        }
        out.push_str("end\n");
        out
    }

    /// Parses the text format, validating structure and value ranges.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut p = Parser::new(text);
        let mut kv = p.keyed("horizon")?;
        let horizon = HorizonSpec {
            n_periods: kv.take("n_periods")?,
            baseline_fn: kv.take("baseline")?,
            call_probability: kv.take("call_probability")?,
        };
        kv.finish()?;
        let mut kv = p.keyed("grid")?;
        let grid = GridSpec {
            q_step: kv.take("q_step")?,
            theta_nodes: kv.take("theta_nodes")?,
            theta_panels: kv.take("theta_panels")?,
            cell_limit: kv.take("cell_limit")?,
        };
        kv.finish()?;
        let mut kv = p.keyed("consumer")?;
        let (gamma, price, q_bar, k, q_max) =
            (kv.take("gamma")?, kv.take("retail_price")?, kv.take("q_bar")?, kv.take("k")?, kv.take("q_max")?);
        kv.finish()?;
        let line = kv.line;
        let cp = ConsumerParams::with_k(gamma, price, q_bar, k, q_max).map_err(|e| p.err_at(line, e))?;
        let mut kv = p.keyed("program")?;
        let (p2, call) = (kv.take("p2")?, kv.take("call")?);
        kv.finish()?;
        let line = kv.line;
        let pp = ProgramParams::new(p2, call).map_err(|e| p.err_at(line, e))?;
        let mut kv = p.keyed("support")?;
        let (lo, hi) = (kv.take("theta_lo")?, kv.take("theta_hi")?);
        kv.finish()?;
        let line = kv.line;
        let um = UncertaintyModel::new(lo, hi).map_err(|e| p.err_at(line, e))?;
        let l = layout(&horizon, &grid, &cp).map_err(|e| p.err_at(line, e))?;

        let mut stages = Vec::with_capacity(l.n + 1);
        for stage in 0..=l.n {
            let mut kv = p.keyed("stage")?;
            let idx: usize = kv.positional()?;
            let n_states: usize = kv.take("states")?;
            let n_rows: usize = kv.take("rows")?;
            kv.finish()?;
            if idx != stage || n_states != l.n_states(stage) {
                return Err(p.err(format!(
                    "expected stage {stage} with {} states, found stage {idx} with {n_states}",
                    l.n_states(stage)
                )));
            }
            let mut per_state = Vec::with_capacity(n_states);
            for s in 0..n_states {
                let mut kv = p.keyed("state")?;
                let sidx: usize = kv.positional()?;
                let value: f64 = kv.take("value")?;
                let m: usize = kv.take("rows")?;
                kv.finish()?;
                if sidx != s {
                    return Err(p.err(format!("expected state {s}, found {sidx}")));
                }
                if m == 0 || m > 10_000 {
                    return Err(p.err(format!("state row count {m} out of range")));
                }
                let mut rows = Vec::with_capacity(m);
                for _ in 0..m {
                    rows.push(p.row(&cp, &um)?);
                }
                per_state.push((value, rows));
            }
            let st = assemble(per_state);
            if st.rows.len() != n_rows {
                return Err(p.err(format!("stage {stage} declares {n_rows} rows, found {}", st.rows.len())));
            }
            stages.push(st);
        }
        let last = p.next_line()?;
        if last.1 != "end" {
            return Err(p.err(format!("expected `end`, found `{}`", last.1)));
        }
        Ok(PolicyTable { horizon, grid, cp, pp, um, stages })
    }
}

struct Parser<'a> {
    lines: std::iter::Peekable<std::iter::Enumerate<std::str::Lines<'a>>>,
    line: usize,
}

struct Keyed<'a> {
    line: usize,
    positional: Vec<&'a str>,
    pairs: Vec<(&'a str, &'a str)>,
}

fn parse_num<T: FromStr>(line: usize, what: &str, raw: &str) -> Result<T> {
    raw.parse()
        .map_err(|_| Error::Parse { line, msg: format!("invalid value `{raw}` for {what}") })
}

impl<'a> Keyed<'a> {
    fn take<T: FromStr>(&mut self, key: &str) -> Result<T> {
        let pos = self.pairs.iter().position(|(k, _)| *k == key).ok_or_else(|| Error::Parse {
            line: self.line,
            msg: format!("missing field `{key}`"),
        })?;
        let (_, raw) = self.pairs.remove(pos);
        parse_num(self.line, key, raw)
    }

    fn positional<T: FromStr>(&mut self) -> Result<T> {
        if self.positional.is_empty() {
            return Err(Error::Parse { line: self.line, msg: "missing index".into() });
        }
        let raw = self.positional.remove(0);
        parse_num(self.line, "index", raw)
    }

    fn finish(&self) -> Result<()> {
        if let Some((k, _)) = self.pairs.first() {
            return Err(Error::Parse { line: self.line, msg: format!("unexpected field `{k}`") });
        }
        if let Some(x) = self.positional.first() {
            return Err(Error::Parse { line: self.line, msg: format!("unexpected token `{x}`") });
        }
        Ok(())
    }
}

impl<'a> Parser<'a> {
    fn new(text: &'a str) -> Self {
        Self { lines: text.lines().enumerate().peekable(), line: 0 }
    }

    fn err(&self, msg: String) -> Error {
        Error::Parse { line: self.line, msg }
    }

    fn err_at(&self, line: usize, e: Error) -> Error {
        Error::Parse { line, msg: e.to_string() }
    }

    /// Next non-blank, non-comment line with its 1-based number.
    fn next_line(&mut self) -> Result<(usize, &'a str)> {
        for (i, raw) in self.lines.by_ref() {
            let t = raw.trim();
            if !t.is_empty() && !t.starts_with('#') {
                self.line = i + 1;
                return Ok((i + 1, t));
            }
        }
        Err(Error::Parse { line: self.line + 1, msg: "unexpected end of input".into() })
    }

    fn keyed(&mut self, keyword: &str) -> Result<Keyed<'a>> {
        let (line, text) = self.next_line()?;
        let mut tokens = text.split_whitespace();
        if tokens.next() != Some(keyword) {
            return Err(Error::Parse { line, msg: format!("expected `{keyword}` line") });
        }
        let mut out = Keyed { line, positional: Vec::new(), pairs: Vec::new() };
        for tok in tokens {
            match tok.split_once('=') {
                Some(kv) => out.pairs.push(kv),
                None => out.positional.push(tok),
            }
        }
        Ok(out)
    }

    fn row(&mut self, cp: &ConsumerParams, um: &UncertaintyModel) -> Result<PolicyRow> {
        let (line, text) = self.next_line()?;
        let vals: Vec<f64> = text
            .split_whitespace()
            .map(|t| parse_num(line, "row", t))
            .collect::<Result<_>>()?;
        if vals.len() != 5 {
            return Err(Error::Parse { line, msg: format!("row needs 5 numbers, found {}", vals.len()) });
        }
        let r = PolicyRow { theta: vals[0], weight: vals[1], q: vals[2], q_no_call: vals[3], value: vals[4] };
        let in_q = |q: f64| (0.0..=cp.q_max).contains(&q);
        if !in_q(r.q) || !in_q(r.q_no_call) {
            return Err(Error::Parse { line, msg: format!("decision outside [0, {}]", cp.q_max) });
        }
        if !um.contains(r.theta) || !(r.weight >= 0.0 && r.weight <= 1.0) || !r.value.is_finite() {
            return Err(Error::Parse { line, msg: "row out of range".into() });
        }
        Ok(r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    pub mean: f64,
    pub stderr: f64,
    pub n_rollouts: usize,
    /// Visited states that were not grid states and had to be snapped to the nearest one.
    pub nearest_lookups: usize,
}

const ROLLOUT_BLOCK: usize = 1024;

/// Monte Carlo rollouts of the table's policy under fresh shocks and call draws.
///
/// Decisions are recomputed greedily at the realised shock against the stored
/// continuation values, which agrees with the stored rows at quadrature nodes.
pub fn evaluate_policy(
    pt: &PolicyTable,
    hs: &HorizonSpec,
    pp: &ProgramParams,
    cp: &ConsumerParams,
    um: &UncertaintyModel,
    n_rollouts: usize,
    seed: u64,
) -> Result<PolicyEvaluation> {
    if n_rollouts == 0 {
        return Err(Error::EmptyEvaluation("n_rollouts must be positive".into()));
    }
    hs.validate()?;
    if hs.n_periods != pt.horizon.n_periods || hs.baseline_fn != pt.horizon.baseline_fn {
        return Err(Error::InvalidParams("horizon does not match the policy table".into()));
    }
    if pt.stages.len() != hs.n_periods + 1 {
        return Err(Error::InvalidParams("policy table has the wrong number of stages".into()));
    }
    let l = pt.layout()?;
    let call_p = effective_call(hs, pp);
    let dist = Uniform::new_inclusive(um.theta_lo, um.theta_hi);
    let blocks = n_rollouts.div_ceil(ROLLOUT_BLOCK);

    let results: Vec<(f64, f64, usize)> = (0..blocks)
        .into_par_iter()
        .map(|blk| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(blk as u64);
            let count = ROLLOUT_BLOCK.min(n_rollouts - blk * ROLLOUT_BLOCK);
            let (mut sum, mut sumsq, mut snaps) = (0.0, 0.0, 0);
            let mut history = Vec::with_capacity(l.n);
            for _ in 0..count {
                history.clear();
                let mut total = 0.0;
                for stage in 0..l.n {
                    let stat = match l.baseline {
                        BaselineFn::LastValue => history.last().copied().unwrap_or(0.0),
                        BaselineFn::Mean => history.iter().sum(),
                    };
                    let (state, snapped) = l.locate(stage, stat);
                    snaps += snapped as usize;
                    let theta = dist.sample(&mut rng);
                    let (qi, _) = stage_choice(state, theta, &l, &pt.stages[stage + 1].value, &pt.cp);
                    let q = l.q(qi);
                    total += plain_payoff(q, theta, cp);
                    history.push(q);
                }
                let stat = match l.baseline {
                    BaselineFn::LastValue => history.last().copied().unwrap_or(0.0),
                    BaselineFn::Mean => history.iter().sum(),
                };
                let (state, snapped) = l.locate(l.n, stat);
                snaps += snapped as usize;
                let b = hs.baseline_fn.evaluate(&history);
                let theta = dist.sample(&mut rng);
                let called = rng.gen::<f64>() < call_p;
                let c = event_choice(l.baseline(state), theta, called as u8 as f64, &l, &pt.pp, &pt.cp);
                let qi = if called { c.q_call } else { c.q_no_call };
                total += payoff_unchecked(l.q(qi), theta, b, pp.p2, called as u8 as f64, cp);
                sum += total;
                sumsq += total * total;
            }
            (sum, sumsq, snaps)
        })
        .collect();

    let n = n_rollouts as f64;
    let sum: f64 = results.iter().map(|r| r.0).sum();
    let sumsq: f64 = results.iter().map(|r| r.1).sum();
    let mean = sum / n;
    let var = if n_rollouts > 1 { ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0) } else { 0.0 };
    Ok(PolicyEvaluation {
        mean,
        stderr: (var / n).sqrt(),
        n_rollouts,
        nearest_lookups: results.iter().map(|r| r.2).sum(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stage_two::global_maximum;

    fn reference(p2: f64) -> (ProgramParams, ConsumerParams, UncertaintyModel) {
        (
            ProgramParams::called(p2).unwrap(),
            ConsumerParams::default(),
            UncertaintyModel::symmetric(2.0).unwrap(),
        )
    }

    fn coarse() -> GridSpec {
        GridSpec { q_step: 0.05, ..GridSpec::default() }
    }

    #[test]
    fn one_period_matches_region_wise_maximum_per_node() {
        for p2 in [0.05, 0.15, 0.3] {
            let (pp, cp, um) = reference(p2);
            let gs = coarse();
            let pt = solve_backward(&HorizonSpec::default(), &gs, &pp, &cp, &um).unwrap();
            for r in pt.stages[0].rows_of(0) {
                let best = global_maximum(&pp, &cp, &um, r.theta).unwrap();
                assert!(r.value <= best.value + 1e-9, "grid beats exact at θ={}", r.theta);
                assert!(best.value - r.value < 5e-3, "p2={p2} θ={}: {} vs {}", r.theta, r.value, best.value);
            }
        }
    }

    #[test]
    fn bellman_consistency() {
        let (pp, cp, um) = reference(0.15);
        let hs = HorizonSpec { n_periods: 2, baseline_fn: BaselineFn::Mean, call_probability: 0.7 };
        let gs = GridSpec { q_step: 0.1, ..GridSpec::default() };
        let pt = solve_backward(&hs, &gs, &pp, &cp, &um).unwrap();
        let l = pt.layout().unwrap();
        for (stage, state) in [(0usize, 0usize), (1, 0), (1, 57), (1, 200)] {
            for r in pt.stages[stage].rows_of(state) {
                let next = &pt.stages[stage + 1].value;
                let best = (0..l.n_q)
                    .map(|i| plain_payoff(l.q(i), r.theta, &cp) + next[l.next(state, i)])
                    .fold(f64::NEG_INFINITY, f64::max);
                assert!((best - r.value).abs() < 1e-9);
            }
        }
        for state in [0usize, 33, 400] {
            let b = l.baseline(state);
            let rows = pt.stages[2].rows_of(state);
            for r in rows {
                let call = (0..l.n_q)
                    .map(|i| payoff_unchecked(l.q(i), r.theta, b, 0.15, 1.0, &cp))
                    .fold(f64::NEG_INFINITY, f64::max);
                let plain = (0..l.n_q).map(|i| plain_payoff(l.q(i), r.theta, &cp)).fold(f64::NEG_INFINITY, f64::max);
                assert!((0.7 * call + 0.3 * plain - r.value).abs() < 1e-9);
            }
            let v: f64 = rows.iter().map(|r| r.weight * r.value).sum();
            assert!((v - pt.stages[2].value[state]).abs() < 1e-12);
        }
    }

    #[test]
    fn no_call_means_no_program() {
        let (pp, cp, um) = reference(0.3);
        let hs = HorizonSpec { call_probability: 0.0, ..HorizonSpec::default() };
        let pt = solve_backward(&hs, &coarse(), &pp, &cp, &um).unwrap();
        for st in &pt.stages {
            for r in &st.rows {
                assert!((r.q - cp.ideal(r.theta)).abs() <= 0.025 + 1e-12);
                assert!((r.q_no_call - cp.ideal(r.theta)).abs() <= 0.025 + 1e-12);
            }
        }
    }

    #[test]
    fn resource_limit_reports_cells() {
        let (pp, cp, um) = reference(0.15);
        let gs = GridSpec { cell_limit: 1000, ..coarse() };
        match solve_backward(&HorizonSpec::default(), &gs, &pp, &cp, &um) {
            Err(Error::ResourceLimit { cells, limit }) => assert!(cells > limit),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let (pp, cp, um) = reference(0.15);
        let bad_h = HorizonSpec { n_periods: 4, ..HorizonSpec::default() };
        assert!(solve_backward(&bad_h, &coarse(), &pp, &cp, &um).is_err());
        let bad_g = GridSpec { theta_nodes: 2, ..coarse() };
        assert!(solve_backward(&HorizonSpec::default(), &bad_g, &pp, &cp, &um).is_err());
    }

    #[test]
    fn text_round_trip() {
        let (pp, cp, um) = reference(0.15);
        let hs = HorizonSpec { n_periods: 2, baseline_fn: BaselineFn::Mean, call_probability: 1.0 };
        let gs = GridSpec { q_step: 0.5, theta_nodes: 3, theta_panels: 2, ..GridSpec::default() };
        let pt = solve_backward(&hs, &gs, &pp, &cp, &um).unwrap();
        let text = pt.to_text();
        assert_eq!(PolicyTable::from_text(&text).unwrap(), pt);
        let broken = text.replacen("stage 1", "stage 7", 1);
        assert!(matches!(PolicyTable::from_text(&broken), Err(Error::Parse { .. })));
        assert!(PolicyTable::from_text("").is_err());
    }

    #[test]
    fn empty_evaluation_rejected() {
        let (pp, cp, um) = reference(0.0);
        let hs = HorizonSpec::default();
        let pt = solve_backward(&hs, &GridSpec { q_step: 0.5, ..coarse() }, &pp, &cp, &um).unwrap();
        assert!(matches!(evaluate_policy(&pt, &hs, &pp, &cp, &um, 0, 1), Err(Error::EmptyEvaluation(_))));
    }
}
