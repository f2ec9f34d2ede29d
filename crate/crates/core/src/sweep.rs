//! Power-allocation grids, and the thresholds and curves computed over them.
//!
//! A grid allocation holds `n` malicious miners (sorted by power) plus one
//! honest collective with the remainder. Powers are kept as integer
//! multiples of the grid step so that grouping never depends on floating
//! point rounding.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{
    all_selfish_profit, epsilon_pe, equilibrium_multi_sm_profit, hm_preference_filter,
    multi_sm_ranges, EquilibriumSet, GameError, GameTable, MinerType, MultiSmPoint, Payoff,
    PowerInterval, StrategyProfile,
};
use crate::sim::{Instance, InstanceRunner, PowerAllocation};

/// Slack below which a reward counts as equal to the power it is compared
/// against; absorbs rounding in proportional payoff splits.
pub const REWARD_TIE_TOLERANCE: f64 = 1e-9;

const STEP_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SweepError {
    #[error("grid step {0} does not divide 1")]
    InvalidStep(f64),
    #[error("need at least one malicious miner")]
    NoMaliciousMiners,
    #[error("results missing for allocations {0:?}")]
    Incomplete(Vec<usize>),
    #[error("self-audit failed: {0}")]
    AuditFailed(String),
    #[error(transparent)]
    Game(#[from] GameError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Model {
    Fixed,
    Dynamic,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Fixed => "fixed",
            Model::Dynamic => "dynamic",
        })
    }
}

impl FromStr for Model {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "fixed" => Ok(Model::Fixed),
            "dynamic" => Ok(Model::Dynamic),
            other => Err(format!("unknown model `{other}` (expected fixed or dynamic)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Every sorted malicious power vector on the grid.
    Full,
    /// Only allocations where all malicious miners hold the same power.
    Equal,
}

impl fmt::Display for Layout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Layout::Full => "full",
            Layout::Equal => "equal",
        })
    }
}

impl FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "full" => Ok(Layout::Full),
            "equal" => Ok(Layout::Equal),
            other => Err(format!("unknown layout `{other}` (expected full or equal)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_malicious: usize,
    pub step: f64,
    pub model: Model,
    pub layout: Layout,
}

impl GridSpec {
    /// Grid with the default step for this many malicious miners.
    pub fn new(n_malicious: usize, model: Model) -> Self {
        GridSpec {
            n_malicious,
            step: default_step(n_malicious),
            model,
            layout: Layout::Full,
        }
    }

    pub fn with_step(self, step: f64) -> Self {
        GridSpec { step, ..self }
    }

    pub fn with_layout(self, layout: Layout) -> Self {
        GridSpec { layout, ..self }
    }

    /// Number of grid steps in the whole power budget.
    pub fn units(&self) -> Result<u32, SweepError> {
        if !(self.step > 0.0 && self.step <= 1.0) {
            return Err(SweepError::InvalidStep(self.step));
        }
        let m = (1.0 / self.step).round();
        if (m * self.step - 1.0).abs() > STEP_TOLERANCE {
            return Err(SweepError::InvalidStep(self.step));
        }
        Ok(m as u32)
    }

    /// Miner types in grid order: malicious miners then the honest collective.
    pub fn types(&self) -> Vec<MinerType> {
        let mut t = vec![MinerType::Strategic; self.n_malicious];
        t.push(MinerType::Honest);
        t
    }

    /// Profiles simulated per allocation: all of them in the dynamic model,
    /// only the all-selfish one in the fixed model.
    pub fn profiles(&self) -> Vec<StrategyProfile> {
        match self.model {
            Model::Dynamic => crate::game::admissible_profiles(&self.types()),
            Model::Fixed => vec![self.all_selfish()],
        }
    }

    pub fn all_selfish(&self) -> StrategyProfile {
        StrategyProfile::from_bits((1u64 << self.n_malicious) - 1, self.n_malicious + 1)
    }
}

/// Default step by number of malicious miners: 1-3 → 0.01, 4 → 0.02,
/// 5-7 → 0.04, 8 and above → 0.05.
pub fn default_step(n_malicious: usize) -> f64 {
    match n_malicious {
        0..=3 => 0.01,
        4 => 0.02,
        5..=7 => 0.04,
        _ => 0.05,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridAllocation {
    pub id: usize,
    /// Malicious powers in grid units, non-decreasing.
    pub malicious: Vec<u32>,
    /// Honest collective power in grid units.
    pub honest: u32,
    /// Grid units in the whole budget.
    pub units: u32,
}

impl GridAllocation {
    pub fn to_power(&self, u: u32) -> f64 {
        f64::from(u) / f64::from(self.units)
    }

    pub fn malicious_power(&self, i: usize) -> f64 {
        self.to_power(self.malicious[i])
    }

    pub fn honest_power(&self) -> f64 {
        self.to_power(self.honest)
    }

    pub fn n_malicious(&self) -> usize {
        self.malicious.len()
    }

    /// Powers in grid order: malicious miners first, honest collective last.
    pub fn allocation(&self) -> PowerAllocation {
        let mut powers: Vec<f64> = self.malicious.iter().map(|&u| self.to_power(u)).collect();
        powers.push(self.honest_power());
        PowerAllocation::new(powers).expect("grid allocations sum to one")
    }

    pub fn instance(&self, profile: &StrategyProfile) -> Instance {
        Instance {
            allocation: self.allocation(),
            strategies: profile.choices.clone(),
        }
    }
}

/// All canonical grid allocations, in lexicographic order of malicious
/// powers.
pub fn enumerate_allocations(spec: &GridSpec) -> Result<Vec<GridAllocation>, SweepError> {
    if spec.n_malicious == 0 {
        return Err(SweepError::NoMaliciousMiners);
    }
    let m = spec.units()?;
    let n = spec.n_malicious;
    let mut vectors = Vec::new();
    match spec.layout {
        Layout::Equal => {
            for u in 0..=m / n as u32 {
                vectors.push(vec![u; n]);
            }
        }
        Layout::Full => {
            fn rec(n: usize, min: u32, budget: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
                if cur.len() == n {
                    out.push(cur.clone());
                    return;
                }
                let left = (n - cur.len()) as u32;
                // every remaining miner needs at least `u` units
                let mut u = min;
                while u * left <= budget {
                    cur.push(u);
                    rec(n, u, budget - u, cur, out);
                    cur.pop();
                    u += 1;
                }
            }
            rec(n, 0, m, &mut Vec::new(), &mut vectors);
        }
    }
    Ok(vectors
        .into_iter()
        .enumerate()
        .map(|(id, malicious)| {
            let honest = m - malicious.iter().sum::<u32>();
            GridAllocation {
                id,
                malicious,
                honest,
                units: m,
            }
        })
        .collect())
}

/// Result of a boundary search over the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Boundary {
    Found(f64),
    NotFound,
}

impl Boundary {
    pub fn value(&self) -> Option<f64> {
        match self {
            Boundary::Found(v) => Some(*v),
            Boundary::NotFound => None,
        }
    }
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Found(v) => write!(f, "{v}"),
            Boundary::NotFound => f.write_str("NOT_FOUND"),
        }
    }
}

impl FromStr for Boundary {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "NOT_FOUND" {
            return Ok(Boundary::NotFound);
        }
        s.parse::<f64>()
            .map(Boundary::Found)
            .map_err(|e| format!("bad boundary `{s}`: {e}"))
    }
}

/// Rewards that decide thresholds at one allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationOutcome {
    /// Per malicious miner; `None` when no equilibrium exists to read it from.
    pub malicious_rewards: Option<Vec<f64>>,
}

pub type OutcomeMap = BTreeMap<usize, AllocationOutcome>;

fn profits(reward: f64, power: f64) -> bool {
    reward > power + REWARD_TIE_TOLERANCE
}

fn check_complete(outcomes: &OutcomeMap, grid: &[GridAllocation]) -> Result<(), SweepError> {
    let missing: Vec<usize> = grid
        .iter()
        .filter(|a| !outcomes.contains_key(&a.id))
        .map(|a| a.id)
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(SweepError::Incomplete(missing))
    }
}

/// Least grid value `v` among `present` such that no violation occurs at
/// any present value `>= v`. Returns the boundary and the allocation that
/// blocks any lower value.
fn least_clean_value(
    present: &BTreeMap<u32, Option<usize>>,
    units: u32,
) -> (Boundary, Option<usize>) {
    let mut boundary = Boundary::NotFound;
    for (&v, &violation) in present.iter().rev() {
        if let Some(witness) = violation {
            return (boundary, Some(witness));
        }
        boundary = Boundary::Found(f64::from(v) / f64::from(units));
    }
    (boundary, None)
}

/// Least malicious power that earns more than itself at every allocation
/// where some malicious miner holds it, and likewise for every larger power.
///
/// A miner holding the whole budget cannot out-earn its power and is left
/// out of the comparison.
pub fn power_threshold(
    outcomes: &OutcomeMap,
    grid: &[GridAllocation],
) -> Result<(Boundary, Option<usize>), SweepError> {
    check_complete(outcomes, grid)?;
    let units = grid.first().map_or(1, |a| a.units);
    let mut present: BTreeMap<u32, Option<usize>> = BTreeMap::new();
    for a in grid {
        let outcome = &outcomes[&a.id];
        for (i, &u) in a.malicious.iter().enumerate() {
            if u == a.units {
                continue;
            }
            let ok = outcome
                .malicious_rewards
                .as_ref()
                .is_some_and(|r| profits(r[i], a.to_power(u)));
            let slot = present.entry(u).or_insert(None);
            if !ok && slot.is_none() {
                *slot = Some(a.id);
            }
        }
    }
    let (b, w) = least_clean_value(&present, units);
    audit_threshold(outcomes, grid, b)?;
    Ok((b, w))
}

fn audit_threshold(outcomes: &OutcomeMap, grid: &[GridAllocation], b: Boundary) -> Result<(), SweepError> {
    let Boundary::Found(beta) = b else { return Ok(()) };
    for a in grid {
        for (i, &u) in a.malicious.iter().enumerate() {
            let p = a.to_power(u);
            if u == a.units || p < beta - STEP_TOLERANCE {
                continue;
            }
            let ok = outcomes[&a.id]
                .malicious_rewards
                .as_ref()
                .is_some_and(|r| profits(r[i], p));
            if !ok {
                return Err(SweepError::AuditFailed(format!(
                    "threshold {beta}: allocation {} miner {i} at {p} does not profit",
                    a.id
                )));
            }
        }
    }
    Ok(())
}

/// Least honest-collective power at which no malicious miner earns more
/// than its power, at that and every larger collective power.
pub fn safety_level(
    outcomes: &OutcomeMap,
    grid: &[GridAllocation],
) -> Result<(Boundary, Option<usize>), SweepError> {
    check_complete(outcomes, grid)?;
    let units = grid.first().map_or(1, |a| a.units);
    let mut present: BTreeMap<u32, Option<usize>> = BTreeMap::new();
    for a in grid {
        let safe = safe_at(&outcomes[&a.id], a);
        let slot = present.entry(a.honest).or_insert(None);
        if !safe && slot.is_none() {
            *slot = Some(a.id);
        }
    }
    let (b, w) = least_clean_value(&present, units);
    if let Boundary::Found(gamma) = b {
        for a in grid {
            if a.honest_power() >= gamma - STEP_TOLERANCE && !safe_at(&outcomes[&a.id], a) {
                return Err(SweepError::AuditFailed(format!(
                    "safety level {gamma}: allocation {} is not safe",
                    a.id
                )));
            }
        }
    }
    Ok((b, w))
}

fn safe_at(outcome: &AllocationOutcome, a: &GridAllocation) -> bool {
    outcome.malicious_rewards.as_ref().is_some_and(|r| {
        a.malicious
            .iter()
            .enumerate()
            .all(|(i, &u)| !profits(r[i], a.to_power(u)))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdReport {
    pub n_malicious: usize,
    pub power_threshold: Boundary,
    pub safety_level: Boundary,
    /// Allocation that rules out any lower threshold.
    pub threshold_witness: Option<usize>,
    /// Allocation that rules out any lower safety level.
    pub safety_witness: Option<usize>,
}

pub fn threshold_report(
    n_malicious: usize,
    outcomes: &OutcomeMap,
    grid: &[GridAllocation],
) -> Result<ThresholdReport, SweepError> {
    let (power_threshold, threshold_witness) = power_threshold(outcomes, grid)?;
    let (safety_level, safety_witness) = safety_level(outcomes, grid)?;
    Ok(ThresholdReport {
        n_malicious,
        power_threshold,
        safety_level,
        threshold_witness,
        safety_witness,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub power: f64,
    pub mean_reward: f64,
    pub sem: f64,
    pub n_samples: usize,
}

/// Mean and SEM of rewards grouped by power in grid units.
pub fn reward_curves(samples: impl IntoIterator<Item = (u32, f64)>, units: u32) -> Vec<CurvePoint> {
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for (u, r) in samples {
        groups.entry(u).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|(u, rs)| {
            let n = rs.len() as f64;
            let mean = rs.iter().sum::<f64>() / n;
            let sem = if rs.len() > 1 {
                let var = rs.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            } else {
                0.0
            };
            CurvePoint {
                power: f64::from(u) / f64::from(units),
                mean_reward: mean,
                sem,
                n_samples: rs.len(),
            }
        })
        .collect()
}

/// How a malicious miner's reward is read when several equilibria survive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EqAggregate {
    #[default]
    Max,
    Min,
    Mean,
}

impl FromStr for EqAggregate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "max" => Ok(EqAggregate::Max),
            "min" => Ok(EqAggregate::Min),
            "mean" => Ok(EqAggregate::Mean),
            other => Err(format!("unknown aggregate `{other}` (expected max, min or mean)")),
        }
    }
}

impl fmt::Display for EqAggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EqAggregate::Max => "max",
            EqAggregate::Min => "min",
            EqAggregate::Mean => "mean",
        })
    }
}

/// Simulated payoffs for one grid, keyed by (allocation id, profile bits).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepData {
    pub spec: GridSpec,
    pub grid: Vec<GridAllocation>,
    pub payoffs: BTreeMap<(usize, u64), Payoff>,
}

impl SweepData {
    pub fn new(spec: GridSpec) -> Result<Self, SweepError> {
        Ok(SweepData {
            spec,
            grid: enumerate_allocations(&spec)?,
            payoffs: BTreeMap::new(),
        })
    }

    /// Every (allocation id, profile bits) pair the grid needs.
    pub fn tasks(&self) -> Vec<(usize, u64)> {
        let profiles = self.spec.profiles();
        self.grid
            .iter()
            .flat_map(|a| profiles.iter().map(move |p| (a.id, p.bits())))
            .collect()
    }

    pub fn missing(&self) -> Vec<(usize, u64)> {
        self.tasks()
            .into_iter()
            .filter(|k| !self.payoffs.contains_key(k))
            .collect()
    }

    pub fn game(&self, alloc: &GridAllocation) -> Result<GameTable, SweepError> {
        let mut table = GameTable::new(alloc.allocation(), self.spec.types())?;
        for p in self.spec.profiles() {
            if let Some(pay) = self.payoffs.get(&(alloc.id, p.bits())) {
                table.insert(&p, pay.clone())?;
            }
        }
        Ok(table)
    }
}

/// Simulates one task.
pub fn simulate_task(
    alloc: &GridAllocation,
    profile: &StrategyProfile,
    runner: &InstanceRunner,
) -> Payoff {
    Payoff::from(&runner.run(&alloc.instance(profile)))
}

/// Simulates every missing task of `data` in parallel on the current
/// rayon pool.
pub fn fill(data: &mut SweepData, runner: &InstanceRunner) {
    let n = data.spec.n_malicious + 1;
    let by_id: BTreeMap<usize, &GridAllocation> = data.grid.iter().map(|a| (a.id, a)).collect();
    let results: Vec<((usize, u64), Payoff)> = data
        .missing()
        .into_par_iter()
        .map(|(id, bits)| {
            let profile = StrategyProfile::from_bits(bits, n);
            ((id, bits), simulate_task(by_id[&id], &profile, runner))
        })
        .collect();
    data.payoffs.extend(results);
}

/// Equilibria of one allocation's game, before and after HM preference.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationEquilibria {
    pub allocation_id: usize,
    pub all: EquilibriumSet,
    pub preferred: EquilibriumSet,
}

/// Which reward rows a threshold or curve was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    Fixed,
    /// Dynamic model with HM preference applied.
    Dynamic,
    /// Dynamic model without HM preference.
    DynamicNoPref,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Fixed => "fixed",
            Variant::Dynamic => "dynamic",
            Variant::DynamicNoPref => "dynamic-nopref",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fixed" => Ok(Variant::Fixed),
            "dynamic" => Ok(Variant::Dynamic),
            "dynamic-nopref" => Ok(Variant::DynamicNoPref),
            other => Err(format!("unknown variant `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveGroup {
    Malicious,
    Hm,
}

impl fmt::Display for CurveGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurveGroup::Malicious => "malicious",
            CurveGroup::Hm => "hm",
        })
    }
}

/// Everything derived from one complete grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAnalysis {
    pub spec: GridSpec,
    pub equilibria: Vec<AllocationEquilibria>,
    /// Full-layout grids only.
    pub thresholds: Vec<(Variant, ThresholdReport)>,
    pub curves: Vec<(Variant, CurveGroup, Vec<CurvePoint>)>,
    /// Equal-layout grids only.
    pub ranges: Vec<(Variant, usize, PowerInterval)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalysisOptions {
    pub epsilon: f64,
    pub aggregate: EqAggregate,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            epsilon: 1e-4,
            aggregate: EqAggregate::Max,
        }
    }
}

fn aggregate(values: &[f64], how: EqAggregate) -> f64 {
    match how {
        EqAggregate::Max => values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        EqAggregate::Min => values.iter().copied().fold(f64::INFINITY, f64::min),
        EqAggregate::Mean => values.iter().sum::<f64>() / values.len() as f64,
    }
}

/// Reads malicious rewards out of a set of surviving equilibria.
pub fn equilibrium_outcome(
    game: &GameTable,
    eqs: &EquilibriumSet,
    n_malicious: usize,
    how: EqAggregate,
) -> AllocationOutcome {
    if eqs.equilibria.is_empty() {
        return AllocationOutcome {
            malicious_rewards: None,
        };
    }
    let rewards = (0..n_malicious)
        .map(|i| {
            let vals: Vec<f64> = eqs
                .equilibria
                .iter()
                .map(|e| game.payoff(e).expect("equilibrium from this game").mean[i])
                .collect();
            aggregate(&vals, how)
        })
        .collect();
    AllocationOutcome {
        malicious_rewards: Some(rewards),
    }
}

pub fn analyze(data: &SweepData, opts: AnalysisOptions) -> Result<SweepAnalysis, SweepError> {
    let spec = data.spec;
    let missing = data.missing();
    if !missing.is_empty() {
        let mut ids: Vec<usize> = missing.iter().map(|&(id, _)| id).collect();
        ids.dedup();
        return Err(SweepError::Incomplete(ids));
    }
    let n = spec.n_malicious;
    let units = data.grid.first().map_or(1, |a| a.units);
    let malicious: Vec<usize> = (0..n).collect();
    let mut analysis = SweepAnalysis {
        spec,
        equilibria: Vec::new(),
        thresholds: Vec::new(),
        curves: Vec::new(),
        ranges: Vec::new(),
    };

    match spec.model {
        Model::Fixed => {
            let bits = spec.all_selfish().bits();
            let mut outcomes = OutcomeMap::new();
            let mut mal_samples = Vec::new();
            let mut hm_samples = Vec::new();
            let mut points = Vec::new();
            for a in &data.grid {
                let pay = &data.payoffs[&(a.id, bits)];
                outcomes.insert(
                    a.id,
                    AllocationOutcome {
                        malicious_rewards: Some(pay.mean[..n].to_vec()),
                    },
                );
                for (i, &u) in a.malicious.iter().enumerate() {
                    mal_samples.push((u, pay.mean[i]));
                }
                hm_samples.push((a.honest, pay.mean[n]));
                if spec.layout == Layout::Equal {
                    let result = crate::sim::SimResult {
                        mean_rewards: pay.mean.clone(),
                        sem: pay.sem.clone(),
                        converged_fraction: 0.0,
                        steps_used: Vec::new(),
                    };
                    let p = a.malicious_power(0);
                    points.push(MultiSmPoint {
                        k: n,
                        power: p,
                        profitable: all_selfish_profit(&result, &malicious, p + REWARD_TIE_TOLERANCE),
                    });
                }
            }
            analysis.curves.push((Variant::Fixed, CurveGroup::Malicious, reward_curves(mal_samples, units)));
            analysis.curves.push((Variant::Fixed, CurveGroup::Hm, reward_curves(hm_samples, units)));
            match spec.layout {
                Layout::Full => {
                    analysis
                        .thresholds
                        .push((Variant::Fixed, threshold_report(n, &outcomes, &data.grid)?));
                }
                Layout::Equal => {
                    for (k, iv) in multi_sm_ranges(&points) {
                        analysis.ranges.push((Variant::Fixed, k, iv));
                    }
                }
            }
        }
        Model::Dynamic => {
            let mut pref_outcomes = OutcomeMap::new();
            let mut all_outcomes = OutcomeMap::new();
            let mut samples: BTreeMap<(Variant, CurveGroup), Vec<(u32, f64)>> = BTreeMap::new();
            let mut points = Vec::new();
            for a in &data.grid {
                let game = data.game(a)?;
                let all = epsilon_pe(&game, opts.epsilon);
                let preferred = hm_preference_filter(&all, &game);
                for (variant, eqs) in [(Variant::Dynamic, &preferred), (Variant::DynamicNoPref, &all)] {
                    for e in &eqs.equilibria {
                        let pay = game.payoff(e).expect("equilibrium from this game");
                        let mal = samples.entry((variant, CurveGroup::Malicious)).or_default();
                        for (i, &u) in a.malicious.iter().enumerate() {
                            mal.push((u, pay.mean[i]));
                        }
                        samples
                            .entry((variant, CurveGroup::Hm))
                            .or_default()
                            .push((a.honest, pay.mean[n]));
                    }
                }
                pref_outcomes.insert(a.id, equilibrium_outcome(&game, &preferred, n, opts.aggregate));
                all_outcomes.insert(a.id, equilibrium_outcome(&game, &all, n, opts.aggregate));
                if spec.layout == Layout::Equal {
                    let p = a.malicious_power(0);
                    points.push(MultiSmPoint {
                        k: n,
                        power: p,
                        profitable: equilibrium_multi_sm_profit(
                            &game,
                            &preferred,
                            &malicious,
                            p + REWARD_TIE_TOLERANCE,
                        ),
                    });
                }
                analysis.equilibria.push(AllocationEquilibria {
                    allocation_id: a.id,
                    all,
                    preferred,
                });
            }
            for ((variant, group), s) in samples {
                analysis.curves.push((variant, group, reward_curves(s, units)));
            }
            match spec.layout {
                Layout::Full => {
                    analysis
                        .thresholds
                        .push((Variant::Dynamic, threshold_report(n, &pref_outcomes, &data.grid)?));
                    analysis
                        .thresholds
                        .push((Variant::DynamicNoPref, threshold_report(n, &all_outcomes, &data.grid)?));
                }
                Layout::Equal => {
                    for (k, iv) in multi_sm_ranges(&points) {
                        analysis.ranges.push((Variant::Dynamic, k, iv));
                    }
                }
            }
        }
    }
    Ok(analysis)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, step: f64) -> GridSpec {
        GridSpec::new(n, Model::Fixed).with_step(step)
    }

    #[test]
    fn default_steps() {
        assert_eq!(default_step(1), 0.01);
        assert_eq!(default_step(3), 0.01);
        assert_eq!(default_step(4), 0.02);
        assert_eq!(default_step(7), 0.04);
        assert_eq!(default_step(9), 0.05);
    }

    #[test]
    fn enumerate_small_grids() {
        let g = enumerate_allocations(&spec(1, 0.5)).unwrap();
        let mal: Vec<Vec<u32>> = g.iter().map(|a| a.malicious.clone()).collect();
        assert_eq!(mal, vec![vec![0], vec![1], vec![2]]);

        let g = enumerate_allocations(&spec(2, 0.5)).unwrap();
        let mal: Vec<Vec<u32>> = g.iter().map(|a| a.malicious.clone()).collect();
        assert_eq!(mal, vec![vec![0, 0], vec![0, 1], vec![0, 2], vec![1, 1]]);
        assert_eq!(g[3].honest, 0);

        assert_eq!(enumerate_allocations(&spec(1, 0.01)).unwrap().len(), 101);
        assert_eq!(enumerate_allocations(&spec(2, 0.05)).unwrap().len(), 121);
    }

    #[test]
    fn enumerate_equal_layout() {
        let g = enumerate_allocations(&spec(3, 0.05).with_layout(Layout::Equal)).unwrap();
        assert_eq!(g.len(), 7);
        assert_eq!(g[6].malicious, vec![6, 6, 6]);
        assert_eq!(g[6].honest, 2);
    }

    #[test]
    fn rejects_bad_step() {
        assert_eq!(enumerate_allocations(&spec(1, 0.3)), Err(SweepError::InvalidStep(0.3)));
        assert_eq!(enumerate_allocations(&spec(1, 0.0)), Err(SweepError::InvalidStep(0.0)));
        assert_eq!(
            enumerate_allocations(&GridSpec::new(0, Model::Fixed)),
            Err(SweepError::NoMaliciousMiners)
        );
    }

    /// Outcomes for a one-miner grid from a reward function of power.
    fn one_miner(step: f64, reward: impl Fn(f64) -> f64) -> (Vec<GridAllocation>, OutcomeMap) {
        let grid = enumerate_allocations(&spec(1, step)).unwrap();
        let outcomes = grid
            .iter()
            .map(|a| {
                let p = a.malicious_power(0);
                (a.id, AllocationOutcome { malicious_rewards: Some(vec![reward(p)]) })
            })
            .collect();
        (grid, outcomes)
    }

    #[test]
    fn threshold_on_constructed_table() {
        let (grid, out) = one_miner(0.01, |p| if p >= 0.35 - 1e-12 { (p + 0.01).min(1.0) } else { p - 0.01 });
        let (b, w) = power_threshold(&out, &grid).unwrap();
        assert_eq!(b, Boundary::Found(0.35));
        assert_eq!(grid[w.unwrap()].malicious, vec![34]);
    }

    #[test]
    fn threshold_sits_above_last_violation() {
        let (grid, out) = one_miner(0.01, |p| {
            if (p - 0.9).abs() < 1e-9 {
                0.5
            } else if p >= 0.35 - 1e-12 {
                (p + 0.005).min(1.0)
            } else {
                0.0
            }
        });
        let (b, _) = power_threshold(&out, &grid).unwrap();
        assert_eq!(b, Boundary::Found(0.91));
    }

    #[test]
    fn threshold_not_found_when_top_fails() {
        let (grid, out) = one_miner(0.1, |p| if (p - 0.9).abs() < 1e-9 { 0.2 } else { 1.0 });
        assert_eq!(power_threshold(&out, &grid).unwrap().0, Boundary::NotFound);
    }

    #[test]
    fn safety_on_constructed_table() {
        // malicious profits above 1/3
        let (grid, out) = one_miner(0.01, |p| if p > 0.335 { (p + 0.01).min(1.0) } else { p * 0.9 });
        let (b, w) = safety_level(&out, &grid).unwrap();
        assert_eq!(b, Boundary::Found(0.67));
        assert_eq!(grid[w.unwrap()].honest, 66);
    }

    #[test]
    fn safety_without_honest_rows() {
        // only allocations with the whole budget malicious
        let grid: Vec<GridAllocation> = enumerate_allocations(&spec(2, 0.25))
            .unwrap()
            .into_iter()
            .filter(|a| a.honest == 0)
            .collect();
        let winner_takes_all: OutcomeMap = grid
            .iter()
            .map(|a| {
                let r = if a.malicious[0] == a.malicious[1] { vec![0.4, 0.6] } else { vec![0.0, 1.0] };
                (a.id, AllocationOutcome { malicious_rewards: Some(r) })
            })
            .collect();
        assert_eq!(safety_level(&winner_takes_all, &grid).unwrap().0, Boundary::NotFound);

        let fair: OutcomeMap = grid
            .iter()
            .map(|a| (a.id, AllocationOutcome { malicious_rewards: Some(vec![a.malicious_power(0), a.malicious_power(1)]) }))
            .collect();
        assert_eq!(safety_level(&fair, &grid).unwrap().0, Boundary::Found(0.0));
    }

    #[test]
    fn incomplete_results_are_rejected() {
        let (grid, mut out) = one_miner(0.25, |p| p);
        out.remove(&2);
        assert_eq!(power_threshold(&out, &grid), Err(SweepError::Incomplete(vec![2])));
        assert_eq!(safety_level(&out, &grid), Err(SweepError::Incomplete(vec![2])));
    }

    #[test]
    fn missing_equilibrium_counts_as_violation() {
        let (grid, mut out) = one_miner(0.25, |p| (p + 0.1).min(1.0));
        out.get_mut(&3).unwrap().malicious_rewards = None;
        let (b, w) = power_threshold(&out, &grid).unwrap();
        assert_eq!(b, Boundary::NotFound);
        assert_eq!(w, Some(3));
    }

    #[test]
    fn removing_a_violation_never_raises_boundaries() {
        let (grid, out) = one_miner(0.05, |p| if (p - 0.6).abs() < 1e-9 { 0.1 } else if p > 0.3 { (p + 0.05).min(1.0) } else { 0.0 });
        let (b1, w) = power_threshold(&out, &grid).unwrap();
        let (s1, _) = safety_level(&out, &grid).unwrap();
        let trimmed: Vec<GridAllocation> = grid.iter().filter(|a| Some(a.id) != w).cloned().collect();
        let (b2, _) = power_threshold(&out, &trimmed).unwrap();
        let (s2, _) = safety_level(&out, &trimmed).unwrap();
        assert!(b2.value().unwrap() <= b1.value().unwrap());
        assert!(s2.value().unwrap() <= s1.value().unwrap());
    }

    #[test]
    fn curves_group_by_power() {
        let c = reward_curves([(1, 0.2), (1, 0.4), (3, 0.9)], 10);
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].power, 0.1);
        assert!((c[0].mean_reward - 0.3).abs() < 1e-12);
        assert!((c[0].sem - 0.1).abs() < 1e-12);
        assert_eq!(c[1].sem, 0.0);
        assert_eq!(c[1].n_samples, 1);
    }

    #[test]
    fn boundary_text_roundtrip() {
        assert_eq!("NOT_FOUND".parse::<Boundary>().unwrap(), Boundary::NotFound);
        assert_eq!("0.34".parse::<Boundary>().unwrap(), Boundary::Found(0.34));
        assert_eq!(Boundary::Found(0.34).to_string(), "0.34");
    }
}
