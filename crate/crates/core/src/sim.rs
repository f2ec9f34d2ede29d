//! Discrete-event driver for the mining model.
//!
//! One timestep creates exactly one block: a miner is drawn with
//! probability equal to its power and mines on its current target. Every
//! broadcast produced during the step goes into a queue that is drained in
//! uniformly random order; a broadcast is delivered to all other miners at
//! once, and any reactive publication joins the same queue.
//!
//! Rewards are measured on the deepest chain of the full block tree, hidden
//! blocks included, and only at steps where that chain is unique.

use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{BlockId, BlockTree, ChainTally, MinerId, RewardVector};
use crate::strategy::{Event, MinerAutomaton, PublishAction, StrategyKind};

/// Tolerance on the power sum of an allocation.
pub const POWER_SUM_TOLERANCE: f64 = 1e-9;

/// Resolution used when powers become hashable keys.
const POWER_KEY_SCALE: f64 = 1e9;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid power allocation: {0}")]
    InvalidAllocation(String),
    #[error("{powers} powers but {strategies} strategies")]
    LengthMismatch { powers: usize, strategies: usize },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),
}

/// Per-miner fractions of the total hash rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation(Vec<f64>);

impl PowerAllocation {
    pub fn new(powers: Vec<f64>) -> Result<Self, SimError> {
        if powers.is_empty() {
            return Err(SimError::InvalidAllocation("no miners".into()));
        }
        if let Some(p) = powers.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(SimError::InvalidAllocation(format!("power {p} outside [0, 1]")));
        }
        let sum: f64 = powers.iter().sum();
        if (sum - 1.0).abs() > POWER_SUM_TOLERANCE {
            return Err(SimError::InvalidAllocation(format!("powers sum to {sum}, not 1")));
        }
        Ok(PowerAllocation(powers))
    }

    pub fn powers(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    /// Convergence tolerance on every miner's reward.
    pub alpha: f64,
    pub step_cap: u64,
    pub repetitions: u32,
    pub seed: u64,
    /// Number of measured steps the convergence check looks back over.
    pub window: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            alpha: 1e-4,
            step_cap: 200_000,
            repetitions: 100,
            seed: 0,
            window: 10_000,
        }
    }
}

impl SimConfig {
    /// Reduced preset for CI and laptop runs.
    pub fn desk_scale() -> Self {
        SimConfig {
            repetitions: 20,
            step_cap: 50_000,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.alpha > 0.0) {
            return Err(SimError::InvalidConfig(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if self.window == 0 || self.step_cap < self.window {
            return Err(SimError::InvalidConfig(format!(
                "need step_cap >= window > 0, got cap {} window {}",
                self.step_cap, self.window
            )));
        }
        if self.repetitions == 0 {
            return Err(SimError::InvalidConfig("repetitions must be >= 1".into()));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        SimConfig { seed, ..self.clone() }
    }
}

/// SplitMix64 finaliser.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a child seed from a parent seed and a path of labels.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(mix64(seed), |acc, &l| mix64(acc ^ mix64(l)))
}

/// RNG for one repetition: the run seed keys the generator, the repetition
/// index selects an independent stream.
pub fn repetition_rng(seed: u64, repetition: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(repetition);
    rng
}

/// A miner set: powers plus the strategy each miner runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub allocation: PowerAllocation,
    pub strategies: Vec<StrategyKind>,
}

/// Order-free identity of an instance: its sorted (strategy, power) pairs.
pub type InstanceKey = Vec<(StrategyKind, u64)>;

pub fn power_key(p: f64) -> u64 {
    (p * POWER_KEY_SCALE).round() as u64
}

impl Instance {
    pub fn new(allocation: PowerAllocation, strategies: Vec<StrategyKind>) -> Result<Self, SimError> {
        if allocation.len() != strategies.len() {
            return Err(SimError::LengthMismatch {
                powers: allocation.len(),
                strategies: strategies.len(),
            });
        }
        Ok(Instance {
            allocation,
            strategies,
        })
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }

    fn pair_key(&self, i: usize) -> (StrategyKind, u64) {
        (self.strategies[i], power_key(self.allocation.powers()[i]))
    }

    /// Canonical ordering: honest before selfish, then by power.
    ///
    /// Returns the reordered instance and `perm` with
    /// `self[j] == canonical[perm[j]]`.
    pub fn canonical(&self) -> (Instance, Vec<usize>) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by_key(|&i| self.pair_key(i));
        let mut perm = vec![0; self.len()];
        for (c, &orig) in order.iter().enumerate() {
            perm[orig] = c;
        }
        let canonical = Instance {
            allocation: PowerAllocation(order.iter().map(|&i| self.allocation.0[i]).collect()),
            strategies: order.iter().map(|&i| self.strategies[i]).collect(),
        };
        (canonical, perm)
    }

    pub fn key(&self) -> InstanceKey {
        let mut k: InstanceKey = (0..self.len()).map(|i| self.pair_key(i)).collect();
        k.sort();
        k
    }

    /// Seed for this instance under a master seed; invariant under
    /// relabelling of miners.
    pub fn seed(&self, master: u64) -> u64 {
        let labels: Vec<u64> = self
            .key()
            .iter()
            .flat_map(|&(s, p)| [s as u64, p])
            .collect();
        derive_seed(master, &labels)
    }
}

/// Sliding-window convergence check over measured rewards.
///
/// Tracks per-miner running min and max of the last `window` samples with
/// monotonic queues.
#[derive(Debug, Clone)]
pub struct ConvergenceWindow {
    window: u64,
    alpha: f64,
    seen: u64,
    mins: Vec<VecDeque<(u64, f64)>>,
    maxs: Vec<VecDeque<(u64, f64)>>,
}

impl ConvergenceWindow {
    pub fn new(n_miners: usize, window: u64, alpha: f64) -> Self {
        ConvergenceWindow {
            window,
            alpha,
            seen: 0,
            mins: vec![VecDeque::new(); n_miners],
            maxs: vec![VecDeque::new(); n_miners],
        }
    }

    /// Records one measurement; true once the last `window` samples of every
    /// miner span at most `alpha`.
    pub fn push(&mut self, values: impl IntoIterator<Item = f64>) -> bool {
        let idx = self.seen;
        self.seen += 1;
        let oldest = (idx + 1).saturating_sub(self.window);
        let mut converged = self.seen >= self.window;
        for (m, v) in values.into_iter().enumerate() {
            let mins = &mut self.mins[m];
            while mins.back().is_some_and(|&(_, x)| x >= v) {
                mins.pop_back();
            }
            mins.push_back((idx, v));
            while mins.front().is_some_and(|&(i, _)| i < oldest) {
                mins.pop_front();
            }
            let maxs = &mut self.maxs[m];
            while maxs.back().is_some_and(|&(_, x)| x <= v) {
                maxs.pop_back();
            }
            maxs.push_back((idx, v));
            while maxs.front().is_some_and(|&(i, _)| i < oldest) {
                maxs.pop_front();
            }
            let span = maxs.front().unwrap().1 - mins.front().unwrap().1;
            converged &= span <= self.alpha;
        }
        converged
    }
}

#[derive(Debug, Clone)]
struct Broadcast {
    sender: MinerId,
    blocks: Vec<BlockId>,
}

/// Full simulation state: block tree plus every miner's automaton.
#[derive(Debug, Clone)]
pub struct Simulation {
    tree: BlockTree,
    miners: Vec<MinerAutomaton>,
    sampler: WeightedIndex<f64>,
    /// Publication order of each block; `u32::MAX` while hidden.
    publish_seq: Vec<u32>,
    next_seq: u32,
    queue: Vec<Broadcast>,
    steps: u64,
    log: Option<Vec<(MinerId, PublishAction)>>,
}

impl Simulation {
    pub fn new(instance: &Instance) -> Self {
        let tree = BlockTree::new();
        let miners = instance
            .strategies
            .iter()
            .map(|&k| MinerAutomaton::new(k, tree.genesis()))
            .collect();
        let sampler = WeightedIndex::new(instance.allocation.powers())
            .expect("validated allocation has positive total weight");
        Simulation {
            tree,
            miners,
            sampler,
            publish_seq: vec![0],
            next_seq: 1,
            queue: Vec::new(),
            steps: 0,
            log: None,
        }
    }

    /// Keep every automaton action for inspection.
    pub fn with_action_log(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn take_action_log(&mut self) -> Vec<(MinerId, PublishAction)> {
        self.log.as_mut().map(std::mem::take).unwrap_or_default()
    }

    pub fn tree(&self) -> &BlockTree {
        &self.tree
    }

    pub fn miners(&self) -> &[MinerAutomaton] {
        &self.miners
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_published(&self, id: BlockId) -> bool {
        self.publish_seq[id.index()] != u32::MAX
    }

    pub fn step<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let miner = self.sampler.sample(rng);
        self.step_as(miner, rng);
    }

    /// Runs one timestep in which `miner` finds the block.
    pub fn step_as<R: Rng + ?Sized>(&mut self, miner: MinerId, rng: &mut R) {
        let target = self.miners[miner].target();
        let block = self
            .tree
            .extend(target, miner)
            .expect("mining target is always in the tree");
        self.publish_seq.push(u32::MAX);
        self.steps += 1;
        let action = self.miners[miner].on_event(&self.tree, Event::Mined(block));
        self.enqueue(miner, action);

        while !self.queue.is_empty() {
            let pick = rng.random_range(0..self.queue.len());
            let Broadcast { sender, blocks } = self.queue.swap_remove(pick);
            let tip = *blocks.last().expect("broadcasts are never empty");
            for receiver in 0..self.miners.len() {
                if receiver == sender {
                    continue;
                }
                let action = self.miners[receiver].on_event(&self.tree, Event::Delivered(tip));
                self.enqueue(receiver, action);
            }
        }
    }

    fn enqueue(&mut self, miner: MinerId, action: PublishAction) {
        if !action.blocks_to_broadcast.is_empty() {
            for &b in &action.blocks_to_broadcast {
                debug_assert!(!self.is_published(b), "block {b} broadcast twice");
                self.publish_seq[b.index()] = self.next_seq;
                self.next_seq += 1;
            }
            self.queue.push(Broadcast {
                sender: miner,
                blocks: action.blocks_to_broadcast.clone(),
            });
        }
        if let Some(log) = self.log.as_mut() {
            log.push((miner, action));
        }
    }

    /// The deepest block if no other block shares its height.
    pub fn unique_longest(&self) -> Option<BlockId> {
        match self.tree.longest_tips() {
            [only] => Some(*only),
            _ => None,
        }
    }

    /// Deepest block, ties broken by earliest publication (hidden blocks
    /// last, then by id).
    pub fn measurement_tip(&self) -> BlockId {
        *self
            .tree
            .longest_tips()
            .iter()
            .min_by_key(|b| (self.publish_seq[b.index()], b.index()))
            .expect("longest tips are never empty")
    }
}

/// Outcome of one repetition.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub reward: RewardVector,
    pub steps: u64,
    pub converged: bool,
}

/// Simulates until every miner's reward has settled within `alpha` over the
/// trailing window, or until the step cap.
pub fn run_once<R: Rng + ?Sized>(instance: &Instance, config: &SimConfig, rng: &mut R) -> RunOutcome {
    let n = instance.len();
    let mut sim = Simulation::new(instance);
    let mut tally = ChainTally::new(n);
    let mut window = ConvergenceWindow::new(n, config.window, config.alpha);
    while sim.steps() < config.step_cap {
        sim.step(rng);
        if let Some(tip) = sim.unique_longest() {
            tally.move_to(sim.tree(), tip);
            if window.push((0..n).map(|i| tally.share(i))) {
                return RunOutcome {
                    reward: tally.reward(),
                    steps: sim.steps(),
                    converged: true,
                };
            }
        }
    }
    tally.move_to(sim.tree(), sim.measurement_tip());
    RunOutcome {
        reward: tally.reward(),
        steps: sim.steps(),
        converged: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub mean_rewards: Vec<f64>,
    /// Standard error of the mean across repetitions.
    pub sem: Vec<f64>,
    pub converged_fraction: f64,
    pub steps_used: Vec<u64>,
}

impl SimResult {
    pub fn from_runs(runs: &[RunOutcome]) -> Self {
        let n_miners = runs.first().map_or(0, |r| r.reward.rewards.len());
        let reps = runs.len() as f64;
        let mut mean_rewards = vec![0.0; n_miners];
        let mut sem = vec![0.0; n_miners];
        for m in 0..n_miners {
            let mean = runs.iter().map(|r| r.reward.rewards[m]).sum::<f64>() / reps;
            mean_rewards[m] = mean;
            if runs.len() > 1 {
                let var = runs
                    .iter()
                    .map(|r| (r.reward.rewards[m] - mean).powi(2))
                    .sum::<f64>()
                    / (reps - 1.0);
                sem[m] = (var / reps).sqrt();
            }
        }
        SimResult {
            mean_rewards,
            sem,
            converged_fraction: runs.iter().filter(|r| r.converged).count() as f64 / reps,
            steps_used: runs.iter().map(|r| r.steps).collect(),
        }
    }

    pub fn n_miners(&self) -> usize {
        self.mean_rewards.len()
    }

    pub fn mean_steps(&self) -> f64 {
        self.steps_used.iter().sum::<u64>() as f64 / self.steps_used.len().max(1) as f64
    }
}

/// Runs `config.repetitions` independent repetitions; repetition `r` uses
/// stream `r` of the generator keyed by `config.seed`.
pub fn run_replicated(instance: &Instance, config: &SimConfig) -> Result<SimResult, SimError> {
    config.validate()?;
    let runs: Vec<RunOutcome> = (0..config.repetitions)
        .into_par_iter()
        .map(|r| {
            let mut rng = repetition_rng(config.seed, u64::from(r));
            run_once(instance, config, &mut rng)
        })
        .collect();
    Ok(SimResult::from_runs(&runs))
}

/// Reorders a canonical result onto an equivalent instance without
/// re-simulating. `perm[j]` is the canonical miner standing in for target
/// miner `j`.
pub fn permute_payoffs(
    canonical_result: &SimResult,
    canonical: &Instance,
    target: &Instance,
    perm: &[usize],
) -> Result<SimResult, SimError> {
    let n = canonical.len();
    if target.len() != n || perm.len() != n || canonical_result.n_miners() != n {
        return Err(SimError::InvalidPermutation(format!(
            "size mismatch: canonical {n}, target {}, permutation {}",
            target.len(),
            perm.len()
        )));
    }
    let mut used = vec![false; n];
    for (j, &c) in perm.iter().enumerate() {
        if c >= n || std::mem::replace(&mut used[c], true) {
            return Err(SimError::InvalidPermutation(format!("{perm:?} is not a bijection")));
        }
        if canonical.pair_key(c) != target.pair_key(j) {
            return Err(SimError::InvalidPermutation(format!(
                "miner {j} ({} {}) mapped onto ({} {})",
                target.strategies[j],
                target.allocation.powers()[j],
                canonical.strategies[c],
                canonical.allocation.powers()[c]
            )));
        }
    }
    Ok(SimResult {
        mean_rewards: perm.iter().map(|&c| canonical_result.mean_rewards[c]).collect(),
        sem: perm.iter().map(|&c| canonical_result.sem[c]).collect(),
        converged_fraction: canonical_result.converged_fraction,
        steps_used: canonical_result.steps_used.clone(),
    })
}

/// Remembers how honest miners were merged so results can be mapped back.
#[derive(Debug, Clone, PartialEq)]
pub struct HmExpansion {
    /// Original index → reduced index.
    pub map: Vec<usize>,
    /// Original indices merged into the collective; empty if none.
    pub collective: Vec<usize>,
    /// Reduced index of the collective, if any.
    pub collective_index: Option<usize>,
    original_powers: Vec<f64>,
}

impl HmExpansion {
    /// Maps a reduced result back onto the original miners. Collective
    /// members split its reward in proportion to their power.
    pub fn expand(&self, reduced: &SimResult) -> SimResult {
        let collective_power: f64 = self.collective.iter().map(|&i| self.original_powers[i]).sum();
        let scale = |i: usize| {
            if Some(self.map[i]) == self.collective_index {
                if collective_power > 0.0 {
                    self.original_powers[i] / collective_power
                } else {
                    0.0
                }
            } else {
                1.0
            }
        };
        let n = self.map.len();
        SimResult {
            mean_rewards: (0..n).map(|i| reduced.mean_rewards[self.map[i]] * scale(i)).collect(),
            sem: (0..n).map(|i| reduced.sem[self.map[i]] * scale(i)).collect(),
            converged_fraction: reduced.converged_fraction,
            steps_used: reduced.steps_used.clone(),
        }
    }
}

/// Merges all honest miners into one with their summed power, placed where
/// the first honest miner was.
pub fn collapse_hm(instance: &Instance) -> (Instance, HmExpansion) {
    let powers = instance.allocation.powers();
    let honest: Vec<usize> = (0..instance.len())
        .filter(|&i| instance.strategies[i] == StrategyKind::Honest)
        .collect();
    let mut reduced_powers = Vec::new();
    let mut reduced_strategies = Vec::new();
    let mut map = vec![0; instance.len()];
    let mut collective_index = None;
    for i in 0..instance.len() {
        if instance.strategies[i] == StrategyKind::Honest {
            let idx = *collective_index.get_or_insert_with(|| {
                reduced_powers.push(0.0);
                reduced_strategies.push(StrategyKind::Honest);
                reduced_powers.len() - 1
            });
            reduced_powers[idx] += powers[i];
            map[i] = idx;
        } else {
            map[i] = reduced_powers.len();
            reduced_powers.push(powers[i]);
            reduced_strategies.push(instance.strategies[i]);
        }
    }
    let reduced = Instance {
        allocation: PowerAllocation(reduced_powers),
        strategies: reduced_strategies,
    };
    let expansion = HmExpansion {
        map,
        collective: honest,
        collective_index,
        original_powers: powers.to_vec(),
    };
    (reduced, expansion)
}

/// Payoffs for arbitrary instances, simulated once per distinct canonical
/// instance.
///
/// Honest miners are merged before simulating and the collective's reward
/// is split back in proportion to power. The seed of each simulation is
/// derived from the master seed and the canonical instance, so results do
/// not depend on which equivalent instance was asked for first or on thread
/// scheduling.
#[derive(Debug)]
pub struct InstanceRunner {
    config: SimConfig,
    cache: Mutex<HashMap<InstanceKey, Arc<SimResult>>>,
}

impl InstanceRunner {
    pub fn new(config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        Ok(InstanceRunner {
            config,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Number of distinct simulations run so far.
    pub fn simulations(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn run(&self, instance: &Instance) -> SimResult {
        let (reduced, expansion) = collapse_hm(instance);
        let (canonical, perm) = reduced.canonical();
        let key = canonical.key();
        let cached = self.cache.lock().expect("cache lock").get(&key).cloned();
        let result = match cached {
            Some(r) => r,
            None => {
                let config = self.config.with_seed(canonical.seed(self.config.seed));
                let r = Arc::new(run_replicated(&canonical, &config).expect("config validated"));
                self.cache
                    .lock()
                    .expect("cache lock")
                    .entry(key)
                    .or_insert(r)
                    .clone()
            }
        };
        let reduced_result =
            permute_payoffs(&result, &canonical, &reduced, &perm).expect("canonical permutation");
        expansion.expand(&reduced_result)
    }
}
