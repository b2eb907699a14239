//! Drivers behind the command-line tool: configuration, the single solve,
//! incentive and uncertainty sweeps, the thermal grid, oracle verification
//! and CSV emission.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::Value;

use crate::dp::{solve_backward, GridSpec, HorizonSpec, PolicyTable};
use crate::error::{Error, Result};
use crate::model::{ConsumerParams, ProgramParams, UncertaintyModel};
use crate::oracle::{oracle_solve, OracleConfig, OracleResult};
use crate::stage_one::{case_id, expected_q_t, CaseId};
use crate::stage_two::{solve_stage_two_closed, stage_two_objective, Branch};

/// First line of every CSV file.
pub const CSV_VERSION_LINE: &str = "# ptr-rational v1";
pub const CSV_COLUMNS: &str = "p2,uncertainty_pct,e_q_prev,e_q_t,net,e_profit,case_id,branch,source";

/// Incentives of the four reference rows.
pub const TABLE1_P2: [f64; 4] = [0.0, 0.15, 0.26, 0.45];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub gamma: f64,
    pub retail_price: f64,
    pub q_bar: f64,
    pub q_max: f64,
    /// Utility offset; the normalising value is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    pub p2: f64,
    pub call: f64,
    /// Half-width of the shock support as a percentage of `q_bar`.
    pub uncertainty_pct: f64,
    pub n_samples: usize,
    pub q_grid_step: f64,
    pub seed: u64,
    pub theta_prev_samples: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let oc = OracleConfig::default();
        Self {
            gamma: 0.05,
            retail_price: 0.26,
            q_bar: 8.0,
            q_max: 20.0,
            k: None,
            p2: 0.0,
            call: 1.0,
            uncertainty_pct: 25.0,
            n_samples: oc.n_samples,
            q_grid_step: oc.q_grid_step,
            seed: oc.seed,
            theta_prev_samples: oc.theta_prev_samples,
            out: None,
        }
    }
}

fn line_of(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.find(&needle).map_or(1, |pos| text[..pos].matches('\n').count() + 1)
}

impl RunConfig {
    /// Parses a flat JSON object; missing keys keep their defaults and `null`
    /// clears the optional `k` and `out`.
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| {
            Error::Config(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        let Value::Object(map) = value else {
            return Err(Error::Config("line 1: top level must be a JSON object".into()));
        };
        let mut cfg = RunConfig::default();
        for (key, v) in &map {
            let at = |msg: &str| Error::Config(format!("line {}: field `{key}`: {msg}", line_of(text, key)));
            let num = || v.as_f64().ok_or_else(|| at("expected a number"));
            let count = || v.as_u64().ok_or_else(|| at("expected a non-negative integer"));
            match key.as_str() {
                "gamma" => cfg.gamma = num()?,
                "retail_price" => cfg.retail_price = num()?,
                "q_bar" => cfg.q_bar = num()?,
                "q_max" => cfg.q_max = num()?,
                "k" => cfg.k = if v.is_null() { None } else { Some(num()?) },
                "p2" => cfg.p2 = num()?,
                "call" => cfg.call = num()?,
                "uncertainty_pct" => cfg.uncertainty_pct = num()?,
                "n_samples" => cfg.n_samples = count()? as usize,
                "q_grid_step" => cfg.q_grid_step = num()?,
                "seed" => cfg.seed = count()?,
                "theta_prev_samples" => cfg.theta_prev_samples = count()? as usize,
                "out" if v.is_null() => cfg.out = None,
                "out" => cfg.out = Some(v.as_str().ok_or_else(|| at("expected a string"))?.to_owned()),
                _ => return Err(at("unknown field")),
            }
        }
        cfg.validate().map_err(|e| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serialises")
    }

    pub fn consumer(&self) -> Result<ConsumerParams> {
        match self.k {
            Some(k) => ConsumerParams::with_k(self.gamma, self.retail_price, self.q_bar, k, self.q_max),
            None => ConsumerParams::new(self.gamma, self.retail_price, self.q_bar, self.q_max),
        }
    }

    pub fn uncertainty(&self) -> Result<UncertaintyModel> {
        UncertaintyModel::from_percent(self.uncertainty_pct, self.q_bar)
    }

    pub fn program(&self) -> Result<ProgramParams> {
        ProgramParams::new(self.p2, self.call)
    }

    pub fn oracle(&self) -> OracleConfig {
        OracleConfig {
            n_samples: self.n_samples,
            q_grid_step: self.q_grid_step,
            seed: self.seed,
            theta_prev_samples: self.theta_prev_samples,
            ..OracleConfig::default()
        }
    }

    pub fn params(&self) -> Result<(ProgramParams, ConsumerParams, UncertaintyModel)> {
        Ok((self.program()?, self.consumer()?, self.uncertainty()?))
    }

    pub fn validate(&self) -> Result<()> {
        let field = |name: &str, e: Error| Error::Config(format!("field `{name}`: {e}"));
        let cp = self.consumer().map_err(|e| field("gamma/retail_price/q_bar/q_max/k", e))?;
        let um = self.uncertainty().map_err(|e| field("uncertainty_pct", e))?;
        um.check_against(&cp).map_err(|e| field("uncertainty_pct", e))?;
        self.program().map_err(|e| field("p2/call", e))?;
        self.oracle().validate(&cp).map_err(|e| field("n_samples/q_grid_step", e))?;
        Ok(())
    }

    pub fn with_p2(&self, p2: f64) -> Self {
        Self { p2, ..self.clone() }
    }

    pub fn with_pct(&self, pct: f64) -> Self {
        Self { uncertainty_pct: pct, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Source {
    Closed,
    Oracle,
    Dp,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Closed => "closed",
            Source::Oracle => "oracle",
            Source::Dp => "dp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub p2: f64,
    pub uncertainty_pct: f64,
    pub e_q_prev: f64,
    pub e_q_t: f64,
    pub net: f64,
    pub e_profit: f64,
    pub case_id: CaseId,
    pub branch: Branch,
    pub source: Source,
}

impl SweepRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.p2,
            self.uncertainty_pct,
            self.e_q_prev,
            self.e_q_t,
            self.net,
            self.e_profit,
            self.case_id,
            self.branch,
            self.source
        )
    }
}

pub fn to_csv(records: &[SweepRecord]) -> String {
    let mut out = format!("{CSV_VERSION_LINE}\n{CSV_COLUMNS}\n");
    for r in records {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

fn record(cfg: &RunConfig, e_q_prev: f64, e_q_t: f64, e_profit: f64, case_id: CaseId, branch: Branch, source: Source) -> SweepRecord {
    SweepRecord {
        p2: cfg.p2,
        uncertainty_pct: cfg.uncertainty_pct,
        e_q_prev,
        e_q_t,
        net: e_q_prev + e_q_t,
        e_profit,
        case_id,
        branch,
        source,
    }
}

/// Expected event load and profit of a solved one-period table.
fn dp_summary(pt: &PolicyTable) -> Result<(f64, f64)> {
    let mut e_q_t = 0.0;
    for r in pt.stages[0].rows_of(0) {
        e_q_t += r.weight * pt.expected_event_load(pt.state_of(&[r.q])?);
    }
    Ok((pt.expected_first_decision(), e_q_t))
}

/// One-period backward induction at the config's parameters.
pub fn solve_dp(cfg: &RunConfig, hs: &HorizonSpec, gs: &GridSpec) -> Result<(PolicyTable, SweepRecord)> {
    let (pp, cp, um) = cfg.params()?;
    let pt = solve_backward(hs, gs, &pp, &cp, &um)?;
    let closed = solve_stage_two_closed(&pp, &cp, &um)?;
    let (e_q_prev, e_q_t) = if hs.n_periods == 1 {
        dp_summary(&pt)?
    } else {
        (pt.expected_first_decision(), f64::NAN)
    };
    let rec = record(cfg, e_q_prev, e_q_t, pt.expected_total(), case_id(&pp, &cp, &um), closed.active_branch, Source::Dp);
    Ok((pt, rec))
}

/// Expected decisions and profit for one configuration.
///
/// The closed path reports the optimal baseline at the mean baseline-period
/// shock (the closed form where it applies, the exact region-wise optimum
/// otherwise), the exact expected event load at that baseline and the
/// two-period objective there. The oracle and dp paths average over the shock.
pub fn cmd_solve(cfg: &RunConfig, source: Source) -> Result<SweepRecord> {
    let (pp, cp, um) = cfg.params()?;
    let case = case_id(&pp, &cp, &um);
    let closed = solve_stage_two_closed(&pp, &cp, &um)?;
    match source {
        Source::Closed => {
            let b = closed.expected_q_prev;
            let e_q_t = expected_q_t(b, &pp, &cp, &um)?.pointwise;
            let e_profit = stage_two_objective(b, 0.0, &pp, &cp, &um)?;
            Ok(record(cfg, b, e_q_t, e_profit, case, closed.active_branch, source))
        }
        Source::Oracle => {
            let r = oracle_solve(&pp, &cp, &um, &cfg.oracle())?;
            Ok(record(cfg, r.e_q_prev, r.e_q_t, r.e_profit, case, closed.active_branch, source))
        }
        Source::Dp => {
            let gs = GridSpec { q_step: cfg.q_grid_step, ..GridSpec::default() };
            Ok(solve_dp(cfg, &HorizonSpec::default(), &gs)?.1)
        }
    }
}

/// `steps` evenly spaced values from `from` to `to` inclusive.
pub fn linspace(from: f64, to: f64, steps: usize) -> Result<Vec<f64>> {
    if steps < 2 {
        return Err(Error::InvalidParams(format!("steps must be >= 2, got {steps}")));
    }
    if !(from < to) || !from.is_finite() || !to.is_finite() {
        return Err(Error::InvalidParams(format!("need p2_from < p2_to, got {from} and {to}")));
    }
    let h = (to - from) / (steps - 1) as f64;
    Ok((0..steps).map(|i| if i + 1 == steps { to } else { from + i as f64 * h }).collect())
}

/// Centres of `cells` equal cells covering `[from, to]`.
pub fn cell_centres(from: f64, to: f64, cells: usize) -> Result<Vec<f64>> {
    if cells == 0 || !(from < to) {
        return Err(Error::InvalidParams("need at least one cell and from < to".into()));
    }
    let h = (to - from) / cells as f64;
    Ok((0..cells).map(|i| from + (i as f64 + 0.5) * h).collect())
}

fn solve_many(cfgs: Vec<RunConfig>, source: Source) -> Result<Vec<SweepRecord>> {
    cfgs.par_iter().map(|c| cmd_solve(c, source)).collect()
}

/// One record per incentive on an evenly spaced grid.
pub fn cmd_sweep(cfg: &RunConfig, p2_from: f64, p2_to: f64, steps: usize, source: Source) -> Result<Vec<SweepRecord>> {
    let grid = linspace(p2_from, p2_to, steps)?;
    solve_many(grid.into_iter().map(|p2| cfg.with_p2(p2)).collect(), source)
}

/// Fails on the first adjacent pair (same uncertainty) whose expected profit decreases.
pub fn check_profit_monotone(records: &[SweepRecord]) -> Result<()> {
    for w in records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.uncertainty_pct == b.uncertainty_pct && b.p2 > a.p2 && b.e_profit < a.e_profit - 1e-12 * a.e_profit.abs().max(1.0) {
            return Err(Error::Verification(format!(
                "expected profit decreases from p2={} ({}) to p2={} ({}) at {}% uncertainty",
                a.p2, a.e_profit, b.p2, b.e_profit, a.uncertainty_pct
            )));
        }
    }
    Ok(())
}

/// One incentive sweep per uncertainty level, concatenated in the given order.
pub fn cmd_uncertainty(
    cfg: &RunConfig,
    pcts: &[f64],
    p2_from: f64,
    p2_to: f64,
    steps: usize,
    source: Source,
) -> Result<Vec<SweepRecord>> {
    if pcts.is_empty() {
        return Err(Error::InvalidParams("empty uncertainty list".into()));
    }
    let grid = linspace(p2_from, p2_to, steps)?;
    let cfgs = pcts
        .iter()
        .flat_map(|&pct| grid.iter().map(move |&p2| cfg.with_pct(pct).with_p2(p2)))
        .collect::<Vec<_>>();
    for c in &cfgs {
        c.validate()?;
    }
    solve_many(cfgs, source)
}

/// Where both levels use the low-incentive interior branch at the same
/// positive incentive, the more uncertain consumer must set a lower baseline.
pub fn check_uncertainty_monotone(records: &[SweepRecord]) -> Result<()> {
    let low: Vec<&SweepRecord> = records
        .iter()
        .filter(|r| r.branch == Branch::InteriorLow && r.p2 > 0.0)
        .collect();
    for a in &low {
        for b in &low {
            if a.p2 == b.p2 && a.uncertainty_pct < b.uncertainty_pct && !(b.e_q_prev < a.e_q_prev) {
                return Err(Error::Verification(format!(
                    "at p2={} the baseline at {}% ({}) is not below the one at {}% ({})",
                    a.p2, b.uncertainty_pct, b.e_q_prev, a.uncertainty_pct, a.e_q_prev
                )));
            }
        }
    }
    Ok(())
}

/// Net consumption over an incentive x uncertainty grid, uncertainty-major.
pub fn cmd_thermal(cfg: &RunConfig, p2s: &[f64], pcts: &[f64], source: Source) -> Result<Vec<SweepRecord>> {
    if p2s.is_empty() || pcts.is_empty() {
        return Err(Error::InvalidParams("thermal grids must be non-empty".into()));
    }
    let cfgs = pcts
        .iter()
        .flat_map(|&pct| p2s.iter().map(move |&p2| cfg.with_pct(pct).with_p2(p2)))
        .collect::<Vec<_>>();
    for c in &cfgs {
        c.validate()?;
    }
    solve_many(cfgs, source)
}

/// Parses `10,30,50` or ranges `from:to:step`, or a mix; every value must lie in (0, 100].
pub fn parse_pct_list(text: &str) -> Result<Vec<f64>> {
    const MAX_ITEMS: usize = 10_000;
    let bad = |msg: String| Error::InvalidParams(format!("uncertainty list: {msg}"));
    let mut out = Vec::new();
    for item in text.split(',') {
        let item = item.trim();
        if item.is_empty() {
            return Err(bad("empty item".into()));
        }
        let nums: Vec<f64> = item
            .split(':')
            .map(|t| t.trim().parse::<f64>().map_err(|_| bad(format!("`{t}` is not a number"))))
            .collect::<Result<_>>()?;
        match nums[..] {
            [x] => out.push(x),
            [a, b, step] => {
                if !(step > 0.0) || !(a <= b) || !a.is_finite() || !b.is_finite() {
                    return Err(bad(format!("invalid range `{item}`")));
                }
                let n = ((b - a) / step + 1e-9).floor();
                if n + 1.0 > (MAX_ITEMS - out.len()) as f64 {
                    return Err(bad("too many values".into()));
                }
                out.extend((0..=n as usize).map(|i| a + i as f64 * step));
            }
            _ => return Err(bad(format!("`{item}` is neither a value nor from:to:step"))),
        }
        if out.len() > MAX_ITEMS {
            return Err(bad("too many values".into()));
        }
    }
    if let Some(x) = out.iter().find(|x| !(**x > 0.0 && **x <= 100.0)) {
        return Err(bad(format!("{x} is outside (0, 100]")));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyCase {
    pub label: String,
    pub config: RunConfig,
    pub closed: SweepRecord,
    pub oracle: OracleResult,
    /// |closed - oracle| for the expected baseline.
    pub deviation: f64,
    pub tolerance: f64,
    pub pass: bool,
    /// Extra failures on load or profit (reference rows only).
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyReport {
    pub cases: Vec<VerifyCase>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.cases.iter().all(|c| c.pass)
    }

    pub fn max_deviation(&self) -> f64 {
        self.cases.iter().map(|c| c.deviation).fold(0.0, f64::max)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.cases {
            let _ = writeln!(
                out,
                "{} {} p2={} pct={} closed={} oracle={}±{} dev={} tol={}{}",
                if c.pass { "PASS" } else { "FAIL" },
                c.label,
                c.config.p2,
                c.config.uncertainty_pct,
                c.closed.e_q_prev,
                c.oracle.e_q_prev,
                c.oracle.stderr_q_prev,
                c.deviation,
                c.tolerance,
                c.notes.iter().map(|n| format!(" [{n}]")).collect::<String>()
            );
            if !c.pass {
                let _ = writeln!(out, "  repro: ptr-rational solve --source oracle --config <(echo '{}')", c.config.to_json());
            }
        }
        let _ = writeln!(
            out,
            "{} cases, max baseline deviation {}, {}",
            self.cases.len(),
            self.max_deviation(),
            if self.passed() { "all pass" } else { "FAILED" }
        );
        out
    }
}

fn verify_case(label: String, cfg: RunConfig, reference_row: bool) -> Result<VerifyCase> {
    let (pp, cp, um) = cfg.params()?;
    let closed = cmd_solve(&cfg, Source::Closed)?;
    let oracle = oracle_solve(&pp, &cp, &um, &cfg.oracle())?;
    let deviation = (closed.e_q_prev - oracle.e_q_prev).abs();
    let mut notes = Vec::new();
    let tolerance = if reference_row {
        let within = |name: &str, a: f64, b: f64, se: f64, notes: &mut Vec<String>| {
            if (a - b).abs() > 4.0 * se + 1e-9 {
                notes.push(format!("{name}: closed {a} vs oracle {b}±{se}"));
            }
        };
        within("e_q_t", closed.e_q_t, oracle.e_q_t, oracle.stderr_q_t, &mut notes);
        within("e_profit", closed.e_profit, oracle.e_profit, oracle.stderr_profit, &mut notes);
        4.0 * oracle.stderr_q_prev + 1e-9
    } else {
        cfg.q_grid_step + 3.0 * oracle.stderr_q_prev + 1e-9
    };
    let pass = deviation <= tolerance && notes.is_empty();
    Ok(VerifyCase { label, config: cfg, closed, oracle, deviation, tolerance, pass, notes })
}

/// Random parameter set whose closed form applies, drawn around the reference household.
fn random_case(base: &RunConfig, rng: &mut ChaCha8Rng) -> Result<RunConfig> {
    for _ in 0..10_000 {
        let gamma = rng.gen_range(0.03..0.08);
        let retail_price = rng.gen_range(0.15..0.35);
        let q_bar = rng.gen_range(5.0..10.0);
        let pct: f64 = rng.gen_range(5.0..50.0);
        let p2 = rng.gen_range(0.0..0.6);
        let theta_hi = pct * q_bar / 100.0;
        let q_max = (q_bar + retail_price / gamma + theta_hi).ceil() + rng.gen_range(0..5) as f64;
        let cfg = RunConfig { gamma, retail_price, q_bar, q_max, k: None, p2, uncertainty_pct: pct, ..base.clone() };
        if cfg.validate().is_err() {
            continue;
        }
        let (pp, cp, um) = cfg.params()?;
        if solve_stage_two_closed(&pp, &cp, &um)?.applicable {
            return Ok(cfg);
        }
    }
    Err(Error::InvalidParams("could not sample an applicable parameter set".into()))
}

/// Closed form against the oracle on the reference rows plus `n_cases` random sets.
pub fn cmd_verify(cfg: &RunConfig, n_cases: usize, seed: u64) -> Result<VerifyReport> {
    if n_cases == 0 {
        return Err(Error::InvalidParams("n_cases must be >= 1".into()));
    }
    let reference = RunConfig {
        n_samples: cfg.n_samples,
        q_grid_step: cfg.q_grid_step,
        seed: cfg.seed,
        theta_prev_samples: cfg.theta_prev_samples,
        ..RunConfig::default()
    };
    let mut cases = Vec::with_capacity(n_cases + TABLE1_P2.len());
    for p2 in TABLE1_P2 {
        cases.push(verify_case(format!("reference(p2={p2})"), reference.with_p2(p2), true)?);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..n_cases {
        let mut c = random_case(cfg, &mut rng)?;
        c.seed = cfg.seed.wrapping_add(i as u64 + 1);
        cases.push(verify_case(format!("random#{i}"), c, false)?);
    }
    Ok(VerifyReport { cases })
}

impl FromStr for Source {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" => Ok(Source::Closed),
            "oracle" => Ok(Source::Oracle),
            "dp" => Ok(Source::Dp),
            _ => Err(Error::InvalidParams(format!("unknown source `{s}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_diagnostics() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        let cfg = RunConfig::from_json("{\"p2\": 0.15, \"uncertainty_pct\": 10}").unwrap();
        assert_eq!((cfg.p2, cfg.uncertainty_pct), (0.15, 10.0));

        let err = RunConfig::from_json("{\n  \"p2\": 0.1,\n  \"gama\": 0.05\n}").unwrap_err();
        assert!(err.to_string().contains("line 3") && err.to_string().contains("gama"), "{err}");
        let err = RunConfig::from_json("{\n\"gamma\": \"x\"}").unwrap_err();
        assert!(err.to_string().contains("line 2") && err.to_string().contains("gamma"), "{err}");
        let err = RunConfig::from_json("{\"p2\": 0.1,,}").unwrap_err();
        assert!(err.to_string().contains("line 1 column"), "{err}");
        assert!(RunConfig::from_json("{\"uncertainty_pct\": 0}").is_err());
        assert!(RunConfig::from_json("[1]").is_err());
    }

    #[test]
    fn solve_examples() {
        let base = RunConfig::default();
        let r = cmd_solve(&base.with_p2(0.26), Source::Closed).unwrap();
        assert!((r.e_q_prev - 20.0).abs() < 1e-12);
        assert!((r.e_q_t - 2.8).abs() < 1e-9 && (r.net - 22.8).abs() < 1e-9);
        assert!((r.e_profit - 4.552).abs() < 1e-9);
        let r = cmd_solve(&base, Source::Closed).unwrap();
        assert!((r.net - 16.0).abs() < 1e-9 && (r.e_profit - 3.2).abs() < 1e-9);
        let r = cmd_solve(&base.with_p2(0.15), Source::Closed).unwrap();
        assert!((r.e_q_prev - 11.0).abs() < 1e-12 && (r.e_q_t - 5.0).abs() < 1e-9);
        assert!((r.e_profit - 3.65).abs() < 1e-9);
    }

    #[test]
    fn csv_shape() {
        let r = cmd_solve(&RunConfig::default().with_p2(0.15), Source::Closed).unwrap();
        let csv = to_csv(&[r]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_VERSION_LINE);
        assert_eq!(lines[1], CSV_COLUMNS);
        let expected = format!("0.15,25,11,{},{},{},Case1,q_bar_plus_p2_over_gamma,closed", r.e_q_t, r.net, r.e_profit);
        assert_eq!(lines[2], expected);
    }

    #[test]
    fn sweep_grid_rules() {
        let base = RunConfig::default();
        assert!(cmd_sweep(&base, 0.0, 0.6, 1, Source::Closed).is_err());
        assert!(cmd_sweep(&base, 0.3, 0.1, 5, Source::Closed).is_err());
        let recs = cmd_sweep(&base, 0.0, 0.05, 2, Source::Closed).unwrap();
        assert!(recs.iter().all(|r| r.branch == Branch::InteriorLow));
        assert_eq!(recs[1].p2, 0.05);
    }

    #[test]
    fn pct_lists() {
        assert_eq!(parse_pct_list("10,30, 50,90").unwrap(), vec![10.0, 30.0, 50.0, 90.0]);
        assert_eq!(parse_pct_list("5:20:5").unwrap(), vec![5.0, 10.0, 15.0, 20.0]);
        assert_eq!(parse_pct_list("5:95:5").unwrap().len(), 19);
        for bad in ["", "0", "101", "a", "1,,2", "5:1:1", "1:2:0", "1:2", "nan", "0:1e9:1e-9"] {
            assert!(parse_pct_list(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn verify_rejects_zero_cases() {
        assert!(matches!(cmd_verify(&RunConfig::default(), 0, 1), Err(Error::InvalidParams(_))));
    }

    #[test]
    fn monotone_checks_report_offending_pair() {
        let base = cmd_solve(&RunConfig::default().with_p2(0.1), Source::Closed).unwrap();
        let worse = SweepRecord { p2: 0.2, e_profit: base.e_profit - 1.0, ..base };
        let err = check_profit_monotone(&[base, worse]).unwrap_err();
        assert!(err.to_string().contains("p2=0.1") && err.to_string().contains("p2=0.2"));
        assert_eq!(err.exit_code(), 2);
    }
}
