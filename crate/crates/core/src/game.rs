//! Empirical normal-form game over mining strategies.
//!
//! Strategic miners pick HM or SM; honest miners only have HM. Payoffs come
//! from simulating every admissible profile. Profiles are identified by a
//! bit mask where bit `i` set means miner `i` plays SM.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{Instance, InstanceRunner, PowerAllocation, SimError, SimResult};
use crate::strategy::StrategyKind;

/// Tolerance on a payoff vector summing to one.
pub const PAYOFF_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("profile {0:#b} is not admissible for the miner types")]
    Inadmissible(u64),
    #[error("payoff vector for profile {bits:#b} sums to {sum}")]
    PayoffSum { bits: u64, sum: f64 },
    #[error("payoff vector has {got} entries for {expected} miners")]
    PayoffLength { expected: usize, got: usize },
    #[error("too many miners for a bit-mask profile: {0}")]
    TooManyMiners(usize),
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MinerType {
    #[serde(rename = "HM")]
    Honest,
    #[serde(rename = "StrM")]
    Strategic,
}

impl MinerType {
    /// Strategies available to a miner of this type.
    pub fn actions(self) -> &'static [StrategyKind] {
        match self {
            MinerType::Honest => &[StrategyKind::Honest],
            MinerType::Strategic => &[StrategyKind::Honest, StrategyKind::Selfish],
        }
    }
}

impl fmt::Display for MinerType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MinerType::Honest => "HM",
            MinerType::Strategic => "StrM",
        })
    }
}

impl FromStr for MinerType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hm" => Ok(MinerType::Honest),
            "strm" => Ok(MinerType::Strategic),
            other => Err(format!("unknown miner type `{other}` (expected HM or StrM)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrategyProfile {
    pub choices: Vec<StrategyKind>,
}

impl StrategyProfile {
    pub fn from_bits(bits: u64, n: usize) -> Self {
        StrategyProfile {
            choices: (0..n)
                .map(|i| {
                    if bits >> i & 1 == 1 {
                        StrategyKind::Selfish
                    } else {
                        StrategyKind::Honest
                    }
                })
                .collect(),
        }
    }

    pub fn bits(&self) -> u64 {
        self.choices
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == StrategyKind::Selfish)
            .fold(0, |acc, (i, _)| acc | 1 << i)
    }

    pub fn admissible(&self, types: &[MinerType]) -> bool {
        self.choices.len() == types.len()
            && self
                .choices
                .iter()
                .zip(types)
                .all(|(c, t)| t.actions().contains(c))
    }

    /// The same profile with miner `i` switched to `action`.
    pub fn deviate(&self, i: usize, action: StrategyKind) -> Self {
        let mut choices = self.choices.clone();
        choices[i] = action;
        StrategyProfile { choices }
    }

    pub fn plays_selfish(&self, i: usize) -> bool {
        self.choices[i] == StrategyKind::Selfish
    }
}

impl fmt::Display for StrategyProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.choices.iter().map(|c| c.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// Every admissible profile, in increasing bit-mask order.
pub fn admissible_profiles(types: &[MinerType]) -> Vec<StrategyProfile> {
    let free: Vec<usize> = (0..types.len())
        .filter(|&i| types[i] == MinerType::Strategic)
        .collect();
    let mut out: Vec<StrategyProfile> = (0..1u64 << free.len())
        .map(|sub| {
            let bits = free
                .iter()
                .enumerate()
                .filter(|(j, _)| sub >> j & 1 == 1)
                .fold(0u64, |acc, (_, &i)| acc | 1 << i);
            StrategyProfile::from_bits(bits, types.len())
        })
        .collect();
    out.sort_by_key(StrategyProfile::bits);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Payoff {
    pub mean: Vec<f64>,
    pub sem: Vec<f64>,
}

impl From<&SimResult> for Payoff {
    fn from(r: &SimResult) -> Self {
        Payoff {
            mean: r.mean_rewards.clone(),
            sem: r.sem.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameTable {
    pub allocation: PowerAllocation,
    pub types: Vec<MinerType>,
    payoffs: BTreeMap<u64, Payoff>,
}

impl GameTable {
    pub fn new(allocation: PowerAllocation, types: Vec<MinerType>) -> Result<Self, GameError> {
        if types.len() > 63 {
            return Err(GameError::TooManyMiners(types.len()));
        }
        if allocation.len() != types.len() {
            return Err(SimError::LengthMismatch {
                powers: allocation.len(),
                strategies: types.len(),
            }
            .into());
        }
        Ok(GameTable {
            allocation,
            types,
            payoffs: BTreeMap::new(),
        })
    }

    pub fn n_miners(&self) -> usize {
        self.types.len()
    }

    /// Adds a payoff vector; it must sum to one unless every entry is zero.
    pub fn insert(&mut self, profile: &StrategyProfile, payoff: Payoff) -> Result<(), GameError> {
        if !profile.admissible(&self.types) {
            return Err(GameError::Inadmissible(profile.bits()));
        }
        if payoff.mean.len() != self.n_miners() || payoff.sem.len() != self.n_miners() {
            return Err(GameError::PayoffLength {
                expected: self.n_miners(),
                got: payoff.mean.len(),
            });
        }
        let sum: f64 = payoff.mean.iter().sum();
        if (sum - 1.0).abs() > PAYOFF_SUM_TOLERANCE {
            return Err(GameError::PayoffSum {
                bits: profile.bits(),
                sum,
            });
        }
        self.payoffs.insert(profile.bits(), payoff);
        Ok(())
    }

    /// Inserts without the sum check; for synthetic tables.
    pub fn insert_unchecked(&mut self, profile: &StrategyProfile, payoff: Payoff) {
        self.payoffs.insert(profile.bits(), payoff);
    }

    pub fn payoff(&self, profile: &StrategyProfile) -> Option<&Payoff> {
        self.payoffs.get(&profile.bits())
    }

    pub fn profiles(&self) -> Vec<StrategyProfile> {
        admissible_profiles(&self.types)
    }

    pub fn is_complete(&self) -> bool {
        self.profiles().iter().all(|p| self.payoffs.contains_key(&p.bits()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (StrategyProfile, &Payoff)> {
        let n = self.n_miners();
        self.payoffs
            .iter()
            .map(move |(&bits, p)| (StrategyProfile::from_bits(bits, n), p))
    }
}

/// Simulated instance for a profile on an allocation.
pub fn profile_instance(allocation: &PowerAllocation, profile: &StrategyProfile) -> Instance {
    Instance {
        allocation: allocation.clone(),
        strategies: profile.choices.clone(),
    }
}

/// Simulates every admissible profile of the game.
///
/// Miners playing HM in a profile, strategic or not, are merged into one
/// honest collective by the runner.
pub fn build_game(
    allocation: &PowerAllocation,
    types: &[MinerType],
    runner: &InstanceRunner,
) -> Result<GameTable, GameError> {
    let mut table = GameTable::new(allocation.clone(), types.to_vec())?;
    for profile in admissible_profiles(types) {
        let result = runner.run(&profile_instance(allocation, &profile));
        table.insert(&profile, Payoff::from(&result))?;
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumSet {
    pub equilibria: Vec<StrategyProfile>,
    pub epsilon: f64,
    pub hm_preferred: bool,
}

/// Largest gain any single miner could get by deviating from `profile`.
pub fn max_deviation_gain(game: &GameTable, profile: &StrategyProfile) -> f64 {
    let here = game.payoff(profile).expect("complete game table");
    let mut best = f64::NEG_INFINITY;
    for (i, ty) in game.types.iter().enumerate() {
        for &action in ty.actions() {
            if action == profile.choices[i] {
                continue;
            }
            let there = game
                .payoff(&profile.deviate(i, action))
                .expect("complete game table");
            best = best.max(there.mean[i] - here.mean[i]);
        }
    }
    best
}

/// Pure-strategy ε-equilibria: profiles where no miner gains more than
/// `epsilon` by switching its own strategy.
pub fn epsilon_pe(game: &GameTable, epsilon: f64) -> EquilibriumSet {
    let equilibria = game
        .profiles()
        .into_iter()
        .filter(|p| {
            let here = game.payoff(p).expect("complete game table");
            game.types.iter().enumerate().all(|(i, ty)| {
                ty.actions().iter().all(|&a| {
                    let there = game.payoff(&p.deviate(i, a)).expect("complete game table");
                    here.mean[i] >= there.mean[i] - epsilon
                })
            })
        })
        .collect();
    EquilibriumSet {
        equilibria,
        epsilon,
        hm_preferred: false,
    }
}

/// Drops every equilibrium that has a twin differing only in one miner
/// choosing HM instead of SM, until nothing changes.
pub fn hm_preference_filter(eqs: &EquilibriumSet, _game: &GameTable) -> EquilibriumSet {
    let mut current = eqs.equilibria.clone();
    loop {
        let bits: Vec<u64> = current.iter().map(StrategyProfile::bits).collect();
        let keep: Vec<StrategyProfile> = current
            .iter()
            .filter(|p| {
                let b = p.bits();
                !(0..p.choices.len())
                    .any(|i| b >> i & 1 == 1 && bits.contains(&(b & !(1 << i))))
            })
            .cloned()
            .collect();
        if keep.len() == current.len() {
            break;
        }
        current = keep;
    }
    EquilibriumSet {
        equilibria: current,
        epsilon: eqs.epsilon,
        hm_preferred: true,
    }
}

/// One point of an equal-power scan: `k` malicious miners at `power` each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MultiSmPoint {
    pub k: usize,
    pub power: f64,
    /// Every one of the `k` miners plays SM and earns more than `power`.
    pub profitable: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerInterval {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl PowerInterval {
    /// Span covered by the grid points, counting each point as one step.
    pub fn width(&self, step: f64) -> f64 {
        self.points as f64 * step
    }
}

/// Longest contiguous run of profitable grid points for each `k >= 2`.
///
/// Points of one `k` are assumed to be the full equal-power grid; ties
/// between equally long runs go to the lower powers.
pub fn multi_sm_ranges(points: &[MultiSmPoint]) -> Vec<(usize, PowerInterval)> {
    let mut by_k: BTreeMap<usize, Vec<MultiSmPoint>> = BTreeMap::new();
    for p in points.iter().filter(|p| p.k >= 2) {
        by_k.entry(p.k).or_default().push(*p);
    }
    let mut out = Vec::new();
    for (k, mut pts) in by_k {
        pts.sort_by(|a, b| a.power.total_cmp(&b.power));
        let mut best: Option<PowerInterval> = None;
        let mut run: Option<PowerInterval> = None;
        for p in &pts {
            if p.profitable {
                let r = run.get_or_insert(PowerInterval {
                    lo: p.power,
                    hi: p.power,
                    points: 0,
                });
                r.hi = p.power;
                r.points += 1;
                if best.is_none_or(|b| r.points > b.points) {
                    best = Some(*r);
                }
            } else {
                run = None;
            }
        }
        if let Some(b) = best {
            out.push((k, b));
        }
    }
    out
}

/// Fixed-model check: all `k` selfish miners beat their power.
pub fn all_selfish_profit(result: &SimResult, malicious: &[usize], power: f64) -> bool {
    malicious.iter().all(|&i| result.mean_rewards[i] > power)
}

/// Dynamic-model check: some surviving equilibrium has every strategic
/// miner playing SM and beating its power.
pub fn equilibrium_multi_sm_profit(
    game: &GameTable,
    eqs: &EquilibriumSet,
    malicious: &[usize],
    power: f64,
) -> bool {
    eqs.equilibria.iter().any(|e| {
        let pay = game.payoff(e).expect("equilibrium from this game");
        malicious
            .iter()
            .all(|&i| e.plays_selfish(i) && pay.mean[i] > power)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use StrategyKind::{Honest as HM, Selfish as SM};

    fn table(types: &[MinerType], rows: &[(u64, &[f64])]) -> GameTable {
        let n = types.len();
        let alloc = PowerAllocation::new(vec![1.0 / n as f64; n]).unwrap();
        let mut t = GameTable::new(alloc, types.to_vec()).unwrap();
        for (bits, mean) in rows {
            t.insert_unchecked(
                &StrategyProfile::from_bits(*bits, n),
                Payoff {
                    mean: mean.to_vec(),
                    sem: vec![0.0; n],
                },
            );
        }
        t
    }

    const STRM_HM: [MinerType; 2] = [MinerType::Strategic, MinerType::Honest];

    #[test]
    fn profiles_enumerate_only_admissible() {
        let ps = admissible_profiles(&[MinerType::Strategic, MinerType::Honest, MinerType::Strategic]);
        let bits: Vec<u64> = ps.iter().map(|p| p.bits()).collect();
        assert_eq!(bits, vec![0b000, 0b001, 0b100, 0b101]);
        assert!(StrategyProfile::from_bits(0b010, 3).admissible(&[
            MinerType::Strategic,
            MinerType::Strategic,
            MinerType::Honest
        ]));
        assert!(!StrategyProfile { choices: vec![SM] }.admissible(&[MinerType::Honest]));
    }

    #[test]
    fn strict_dominance_keeps_one_profile() {
        let g = table(&STRM_HM, &[(0b0, &[0.40, 0.60]), (0b1, &[0.30, 0.70])]);
        let eq = epsilon_pe(&g, 1e-4);
        assert_eq!(eq.equilibria, vec![StrategyProfile { choices: vec![HM, HM] }]);
    }

    #[test]
    fn near_ties_are_both_equilibria() {
        let g = table(&STRM_HM, &[(0b0, &[0.40, 0.60]), (0b1, &[0.40005, 0.59995])]);
        let eq = epsilon_pe(&g, 1e-4);
        assert_eq!(eq.equilibria.len(), 2);
        let pref = hm_preference_filter(&eq, &g);
        assert_eq!(pref.equilibria, vec![StrategyProfile { choices: vec![HM, HM] }]);
        assert!(pref.hm_preferred);
    }

    #[test]
    fn infinite_and_zero_epsilon() {
        let types = [MinerType::Strategic, MinerType::Strategic];
        // matching pennies on the first miner's payoff: no pure equilibrium
        let g = table(
            &types,
            &[
                (0b00, &[1.0, 0.0]),
                (0b01, &[0.0, 1.0]),
                (0b10, &[0.0, 1.0]),
                (0b11, &[1.0, 0.0]),
            ],
        );
        assert_eq!(epsilon_pe(&g, f64::INFINITY).equilibria.len(), 4);
        assert!(epsilon_pe(&g, 0.0).equilibria.is_empty());
    }

    #[test]
    fn filter_keeps_pairs_differing_in_two_coordinates() {
        let types = [MinerType::Strategic, MinerType::Strategic];
        let eqs = EquilibriumSet {
            equilibria: vec![StrategyProfile::from_bits(0b00, 2), StrategyProfile::from_bits(0b11, 2)],
            epsilon: 1e-4,
            hm_preferred: false,
        };
        let g = table(&types, &[]);
        let out = hm_preference_filter(&eqs, &g);
        assert_eq!(out.equilibria.len(), 2);
    }

    #[test]
    fn filter_removes_whole_chain_of_twins() {
        let types = [MinerType::Strategic, MinerType::Strategic];
        let eqs = EquilibriumSet {
            equilibria: vec![
                StrategyProfile::from_bits(0b00, 2),
                StrategyProfile::from_bits(0b01, 2),
                StrategyProfile::from_bits(0b11, 2),
            ],
            epsilon: 1e-4,
            hm_preferred: false,
        };
        let g = table(&types, &[]);
        let out = hm_preference_filter(&eqs, &g);
        assert_eq!(out.equilibria, vec![StrategyProfile::from_bits(0b00, 2)]);
        assert_eq!(hm_preference_filter(&out, &g).equilibria, out.equilibria);
    }

    #[test]
    fn ranges_pick_longest_run() {
        let pts: Vec<MultiSmPoint> = [
            (0.10, false),
            (0.20, true),
            (0.30, false),
            (0.35, true),
            (0.40, true),
            (0.45, false),
        ]
        .iter()
        .map(|&(power, profitable)| MultiSmPoint { k: 2, power, profitable })
        .collect();
        let r = multi_sm_ranges(&pts);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].0, 2);
        assert_eq!((r[0].1.lo, r[0].1.hi, r[0].1.points), (0.35, 0.40, 2));
    }

    #[test]
    fn ranges_skip_unprofitable_and_single_miner() {
        let pts = [
            MultiSmPoint { k: 1, power: 0.4, profitable: true },
            MultiSmPoint { k: 3, power: 0.1, profitable: false },
        ];
        assert!(multi_sm_ranges(&pts).is_empty());
    }

    #[test]
    fn payoff_sum_is_checked() {
        let alloc = PowerAllocation::new(vec![0.5, 0.5]).unwrap();
        let mut t = GameTable::new(alloc, STRM_HM.to_vec()).unwrap();
        let bad = Payoff { mean: vec![0.5, 0.4], sem: vec![0.0, 0.0] };
        assert!(matches!(
            t.insert(&StrategyProfile::from_bits(0, 2), bad),
            Err(GameError::PayoffSum { .. })
        ));
        let inadmissible = StrategyProfile::from_bits(0b10, 2);
        let ok = Payoff { mean: vec![0.5, 0.5], sem: vec![0.0, 0.0] };
        assert_eq!(t.insert(&inadmissible, ok), Err(GameError::Inadmissible(0b10)));
    }
}
