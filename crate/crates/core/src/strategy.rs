//! Honest and selfish mining automata.
//!
//! Each miner reacts to two kinds of event: it mined a block itself, or a
//! broadcast reached it. A broadcast carries a parent-before-child list of
//! blocks; the receiver only needs its last (deepest) block.
//!
//! The selfish automaton is the canonical withholding strategy: hide new
//! blocks, answer an honest block with a block of matching height, release
//! everything when only one ahead, and trickle out the oldest hidden block
//! while further ahead.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::chain::{BlockId, BlockTree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "HM")]
    Honest,
    #[serde(rename = "SM")]
    Selfish,
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StrategyKind::Honest => "HM",
            StrategyKind::Selfish => "SM",
        })
    }
}

impl FromStr for StrategyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "HM" => Ok(StrategyKind::Honest),
            "SM" => Ok(StrategyKind::Selfish),
            other => Err(format!("unknown strategy `{other}` (expected HM or SM)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Event {
    /// The miner found this block on its own mining target.
    Mined(BlockId),
    /// A broadcast whose deepest block is this one arrived.
    Delivered(BlockId),
}

/// What the automaton did, for auditing and tests.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Decision {
    /// Honest miner published its own block.
    Publish,
    /// Switched to a longer public chain.
    Adopt,
    /// Delivered block did not change anything.
    Keep,
    /// Selfish miner withheld its new block.
    Hide,
    /// Released a block of matching height to start a race.
    Match,
    /// Released the whole branch, which is one block longer than the public chain.
    Override,
    /// Released the oldest hidden block while well ahead.
    PublishOne,
    /// Mined during a race and released the branch to win it.
    WinRace,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublishAction {
    /// Parent-before-child order.
    pub blocks_to_broadcast: Vec<BlockId>,
    pub new_mining_target: BlockId,
    pub decision: Decision,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HonestView {
    pub head: BlockId,
}

impl HonestView {
    pub fn new(genesis: BlockId) -> Self {
        HonestView { head: genesis }
    }

    pub fn on_event(&mut self, tree: &BlockTree, event: Event) -> PublishAction {
        let (broadcast, decision) = match event {
            Event::Mined(b) => {
                self.head = b;
                (vec![b], Decision::Publish)
            }
            // equal height keeps the first-received head
            Event::Delivered(d) if tree.height(d) > tree.height(self.head) => {
                self.head = d;
                (Vec::new(), Decision::Adopt)
            }
            Event::Delivered(_) => (Vec::new(), Decision::Keep),
        };
        PublishAction {
            blocks_to_broadcast: broadcast,
            new_mining_target: self.head,
            decision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelfishView {
    pub private_head: BlockId,
    /// Private branch since `fork_point`, oldest first. The first
    /// `published` entries have already been released.
    pub branch: Vec<BlockId>,
    pub published: usize,
    /// Deepest published block this miner knows of.
    pub public_head: BlockId,
    pub fork_point: BlockId,
}

impl SelfishView {
    pub fn new(genesis: BlockId) -> Self {
        SelfishView {
            private_head: genesis,
            branch: Vec::new(),
            published: 0,
            public_head: genesis,
            fork_point: genesis,
        }
    }

    /// Height of the private tip minus height of the deepest public block.
    pub fn lead(&self, tree: &BlockTree) -> i64 {
        i64::from(tree.height(self.private_head)) - i64::from(tree.height(self.public_head))
    }

    pub fn hidden(&self) -> &[BlockId] {
        &self.branch[self.published..]
    }

    pub fn on_self_mined(&mut self, tree: &BlockTree, new_block: BlockId) -> PublishAction {
        debug_assert_eq!(tree.parent(new_block), Some(self.private_head));
        let in_race = self.lead(tree) == 0 && !self.branch.is_empty();
        self.branch.push(new_block);
        self.private_head = new_block;
        if in_race {
            let released = self.release_all();
            self.action(released, Decision::WinRace)
        } else {
            self.action(Vec::new(), Decision::Hide)
        }
    }

    pub fn on_external_block(&mut self, tree: &BlockTree, delivered: BlockId) -> PublishAction {
        if tree.height(delivered) <= tree.height(self.public_head) {
            return self.action(Vec::new(), Decision::Keep);
        }
        self.public_head = delivered;
        let lead = self.lead(tree);
        match lead {
            l if l < 0 => {
                self.branch.clear();
                self.published = 0;
                self.private_head = delivered;
                self.fork_point = delivered;
                self.action(Vec::new(), Decision::Adopt)
            }
            0 => {
                // lead 0 after an extending delivery implies a non-empty branch
                let released = self.branch[self.published..].to_vec();
                self.published = self.branch.len();
                self.action(released, Decision::Match)
            }
            1 => {
                let released = self.release_all();
                self.action(released, Decision::Override)
            }
            _ => {
                let oldest = self.branch[self.published];
                self.published += 1;
                self.action(vec![oldest], Decision::PublishOne)
            }
        }
    }

    fn release_all(&mut self) -> Vec<BlockId> {
        let released = self.branch[self.published..].to_vec();
        self.branch.clear();
        self.published = 0;
        self.public_head = self.private_head;
        self.fork_point = self.private_head;
        released
    }

    fn action(&self, blocks: Vec<BlockId>, decision: Decision) -> PublishAction {
        PublishAction {
            blocks_to_broadcast: blocks,
            new_mining_target: self.private_head,
            decision,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MinerAutomaton {
    Honest(HonestView),
    Selfish(SelfishView),
}

impl MinerAutomaton {
    pub fn new(kind: StrategyKind, genesis: BlockId) -> Self {
        match kind {
            StrategyKind::Honest => MinerAutomaton::Honest(HonestView::new(genesis)),
            StrategyKind::Selfish => MinerAutomaton::Selfish(SelfishView::new(genesis)),
        }
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            MinerAutomaton::Honest(_) => StrategyKind::Honest,
            MinerAutomaton::Selfish(_) => StrategyKind::Selfish,
        }
    }

    /// Block the miner currently extends.
    pub fn target(&self) -> BlockId {
        match self {
            MinerAutomaton::Honest(v) => v.head,
            MinerAutomaton::Selfish(v) => v.private_head,
        }
    }

    pub fn on_event(&mut self, tree: &BlockTree, event: Event) -> PublishAction {
        match (self, event) {
            (MinerAutomaton::Honest(v), e) => v.on_event(tree, e),
            (MinerAutomaton::Selfish(v), Event::Mined(b)) => v.on_self_mined(tree, b),
            (MinerAutomaton::Selfish(v), Event::Delivered(d)) => v.on_external_block(tree, d),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain(tree: &mut BlockTree, from: BlockId, len: usize, owner: usize) -> Vec<BlockId> {
        let mut out = Vec::new();
        let mut tip = from;
        for _ in 0..len {
            tip = tree.extend(tip, owner).unwrap();
            out.push(tip);
        }
        out
    }

    #[test]
    fn honest_mines_and_publishes() {
        let mut tree = BlockTree::new();
        let c = chain(&mut tree, BlockId::GENESIS, 3, 0);
        let mut hm = HonestView { head: c[2] };
        let b = tree.extend(c[2], 0).unwrap();
        let act = hm.on_event(&tree, Event::Mined(b));
        assert_eq!(act.blocks_to_broadcast, vec![b]);
        assert_eq!(act.new_mining_target, b);
        assert_eq!(tree.height(b), 4);
    }

    #[test]
    fn honest_keeps_first_received_on_tie() {
        let mut tree = BlockTree::new();
        let mine = chain(&mut tree, BlockId::GENESIS, 4, 0);
        let theirs = chain(&mut tree, BlockId::GENESIS, 4, 1);
        let mut hm = HonestView { head: mine[3] };
        let act = hm.on_event(&tree, Event::Delivered(theirs[3]));
        assert_eq!(act.decision, Decision::Keep);
        assert_eq!(hm.head, mine[3]);
    }

    #[test]
    fn honest_adopts_longer_segment() {
        let mut tree = BlockTree::new();
        let mine = chain(&mut tree, BlockId::GENESIS, 4, 0);
        let theirs = chain(&mut tree, BlockId::GENESIS, 6, 1);
        let mut hm = HonestView { head: mine[3] };
        hm.on_event(&tree, Event::Delivered(theirs[5]));
        assert_eq!(hm.head, theirs[5]);
    }

    #[test]
    fn selfish_hides_from_lead_zero_and_two() {
        let mut tree = BlockTree::new();
        let mut sm = SelfishView::new(BlockId::GENESIS);
        let b1 = tree.extend(BlockId::GENESIS, 0).unwrap();
        let act = sm.on_self_mined(&tree, b1);
        assert_eq!(act.decision, Decision::Hide);
        assert!(act.blocks_to_broadcast.is_empty());
        assert_eq!(sm.lead(&tree), 1);

        let b2 = tree.extend(b1, 0).unwrap();
        sm.on_self_mined(&tree, b2);
        let b3 = tree.extend(b2, 0).unwrap();
        let act = sm.on_self_mined(&tree, b3);
        assert_eq!(act.decision, Decision::Hide);
        assert_eq!(sm.lead(&tree), 3);
        assert_eq!(sm.hidden(), &[b1, b2, b3]);
    }

    #[test]
    fn selfish_wins_race_by_mining() {
        let mut tree = BlockTree::new();
        let mut sm = SelfishView::new(BlockId::GENESIS);
        let s1 = tree.extend(BlockId::GENESIS, 0).unwrap();
        sm.on_self_mined(&tree, s1);
        let h1 = tree.extend(BlockId::GENESIS, 1).unwrap();
        let act = sm.on_external_block(&tree, h1);
        assert_eq!(act.decision, Decision::Match);
        assert_eq!(act.blocks_to_broadcast, vec![s1]);
        assert_eq!(sm.lead(&tree), 0);

        let s2 = tree.extend(s1, 0).unwrap();
        let act = sm.on_self_mined(&tree, s2);
        assert_eq!(act.decision, Decision::WinRace);
        // s1 already went out with the match; only s2 is new
        assert_eq!(act.blocks_to_broadcast, vec![s2]);
        assert_eq!(sm.public_head, s2);
        assert!(sm.branch.is_empty());
    }

    #[test]
    fn selfish_overrides_at_lead_one() {
        let mut tree = BlockTree::new();
        let mut sm = SelfishView::new(BlockId::GENESIS);
        let s = chain(&mut tree, BlockId::GENESIS, 2, 0);
        for &b in &s {
            sm.on_self_mined(&tree, b);
        }
        let h1 = tree.extend(BlockId::GENESIS, 1).unwrap();
        let act = sm.on_external_block(&tree, h1);
        assert_eq!(act.decision, Decision::Override);
        assert_eq!(act.blocks_to_broadcast, s);
        assert_eq!(sm.public_head, s[1]);
        assert!(sm.hidden().is_empty());
    }

    #[test]
    fn selfish_trickles_when_far_ahead() {
        let mut tree = BlockTree::new();
        let mut sm = SelfishView::new(BlockId::GENESIS);
        let s = chain(&mut tree, BlockId::GENESIS, 4, 0);
        for &b in &s {
            sm.on_self_mined(&tree, b);
        }
        let h1 = tree.extend(BlockId::GENESIS, 1).unwrap();
        let act = sm.on_external_block(&tree, h1);
        assert_eq!(act.decision, Decision::PublishOne);
        assert_eq!(act.blocks_to_broadcast, vec![s[0]]);
        let h2 = tree.extend(h1, 1).unwrap();
        let act = sm.on_external_block(&tree, h2);
        assert_eq!(act.decision, Decision::PublishOne);
        assert_eq!(act.blocks_to_broadcast, vec![s[1]]);
        let h3 = tree.extend(h2, 1).unwrap();
        let act = sm.on_external_block(&tree, h3);
        assert_eq!(act.decision, Decision::Override);
        assert_eq!(act.blocks_to_broadcast, vec![s[2], s[3]]);
    }

    #[test]
    fn selfish_abandons_when_behind() {
        let mut tree = BlockTree::new();
        let mut sm = SelfishView::new(BlockId::GENESIS);
        let h1 = tree.extend(BlockId::GENESIS, 1).unwrap();
        let act = sm.on_external_block(&tree, h1);
        assert_eq!(act.decision, Decision::Adopt);
        assert_eq!(act.new_mining_target, h1);

        // behind by two with a private block: branch is dropped
        let s = tree.extend(h1, 0).unwrap();
        sm.on_self_mined(&tree, s);
        let h = chain(&mut tree, h1, 3, 1);
        let act = sm.on_external_block(&tree, h[2]);
        assert_eq!(act.decision, Decision::Adopt);
        assert!(sm.branch.is_empty());
        assert_eq!(sm.private_head, h[2]);
    }

    #[test]
    fn selfish_ignores_non_extending_delivery() {
        let mut tree = BlockTree::new();
        let mut sm = SelfishView::new(BlockId::GENESIS);
        let s1 = tree.extend(BlockId::GENESIS, 0).unwrap();
        sm.on_self_mined(&tree, s1);
        let h1 = tree.extend(BlockId::GENESIS, 1).unwrap();
        sm.on_external_block(&tree, h1);
        let other = tree.extend(BlockId::GENESIS, 2).unwrap();
        let before = sm.clone();
        let act = sm.on_external_block(&tree, other);
        assert_eq!(act.decision, Decision::Keep);
        assert_eq!(sm, before);
    }

    #[test]
    fn strategy_parse_and_display() {
        assert_eq!("hm".parse::<StrategyKind>().unwrap(), StrategyKind::Honest);
        assert_eq!(" SM ".parse::<StrategyKind>().unwrap(), StrategyKind::Selfish);
        assert!("XM".parse::<StrategyKind>().is_err());
        assert_eq!(StrategyKind::Selfish.to_string(), "SM");
    }
}
