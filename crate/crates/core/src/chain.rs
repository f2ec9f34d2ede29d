//! Block tree state and the chain-share reward.
//!
//! The tree is append-only: every block ever mined stays in it, whether it
//! was published, withheld or later orphaned. A block's reward share is the
//! fraction of non-genesis blocks on the genesis-to-tip path that a miner
//! owns.

use std::fmt;
use std::io::{self, BufRead, Write};

use thiserror::Error;

/// Index of a miner inside one simulated instance.
pub type MinerId = usize;

/// Sequential insertion index of a block; genesis is always `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId(u32);

impl BlockId {
    pub const GENESIS: BlockId = BlockId(0);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ChainError {
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("malformed tree dump at line {line}: {reason}")]
    Dump { line: usize, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Block {
    pub id: BlockId,
    /// `None` only for genesis.
    pub parent: Option<BlockId>,
    /// `None` only for genesis, which no miner owns.
    pub owner: Option<MinerId>,
    pub height: u32,
}

#[derive(Debug, Clone)]
pub struct BlockTree {
    blocks: Vec<Block>,
    children: Vec<u32>,
    /// Blocks at the maximal height, in insertion order.
    deepest: Vec<BlockId>,
}

impl Default for BlockTree {
    fn default() -> Self {
        Self::new()
    }
}

impl BlockTree {
    pub fn new() -> Self {
        let genesis = Block {
            id: BlockId::GENESIS,
            parent: None,
            owner: None,
            height: 0,
        };
        BlockTree {
            blocks: vec![genesis],
            children: vec![0],
            deepest: vec![BlockId::GENESIS],
        }
    }

    pub fn genesis(&self) -> BlockId {
        BlockId::GENESIS
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, id: BlockId) -> bool {
        id.index() < self.blocks.len()
    }

    pub fn get(&self, id: BlockId) -> Result<&Block, ChainError> {
        self.blocks.get(id.index()).ok_or(ChainError::UnknownBlock(id))
    }

    /// Height of a block known to be in the tree.
    ///
    /// Panics on an id this tree never issued.
    pub fn height(&self, id: BlockId) -> u32 {
        self.blocks[id.index()].height
    }

    pub fn parent(&self, id: BlockId) -> Option<BlockId> {
        self.blocks[id.index()].parent
    }

    pub fn owner(&self, id: BlockId) -> Option<MinerId> {
        self.blocks[id.index()].owner
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn max_height(&self) -> u32 {
        self.height(self.deepest[0])
    }

    /// Appends a block mined by `owner` on top of `parent`.
    pub fn extend(&mut self, parent: BlockId, owner: MinerId) -> Result<BlockId, ChainError> {
        let parent_height = self.get(parent)?.height;
        let id = BlockId(u32::try_from(self.blocks.len()).expect("block tree exceeds u32 ids"));
        let height = parent_height + 1;
        self.blocks.push(Block {
            id,
            parent: Some(parent),
            owner: Some(owner),
            height,
        });
        self.children.push(0);
        self.children[parent.index()] += 1;
        match height.cmp(&self.max_height()) {
            std::cmp::Ordering::Greater => {
                self.deepest.clear();
                self.deepest.push(id);
            }
            std::cmp::Ordering::Equal => self.deepest.push(id),
            std::cmp::Ordering::Less => {}
        }
        Ok(id)
    }

    /// Leaf blocks, in id order.
    pub fn tips(&self) -> impl Iterator<Item = BlockId> + '_ {
        self.children
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == 0)
            .map(|(i, _)| self.blocks[i].id)
    }

    /// All tips of maximal height, in insertion order. Never empty.
    pub fn longest_tips(&self) -> &[BlockId] {
        &self.deepest
    }

    /// Genesis-to-`tip` path, genesis first.
    pub fn path_to(&self, tip: BlockId) -> Result<Vec<BlockId>, ChainError> {
        self.get(tip)?;
        let mut path = Vec::with_capacity(self.height(tip) as usize + 1);
        let mut cur = Some(tip);
        while let Some(id) = cur {
            path.push(id);
            cur = self.parent(id);
        }
        path.reverse();
        Ok(path)
    }

    /// Whether `ancestor` lies on the genesis-to-`id` path (inclusive).
    pub fn is_ancestor(&self, ancestor: BlockId, id: BlockId) -> bool {
        let target = self.height(ancestor);
        let mut cur = id;
        while self.height(cur) > target {
            cur = self.parent(cur).expect("non-genesis block has a parent");
        }
        cur == ancestor
    }

    /// Chain-share reward measured on the chain ending at `tip`.
    pub fn reward(&self, tip: BlockId, n_miners: usize) -> Result<RewardVector, ChainError> {
        self.get(tip)?;
        let mut counts = vec![0u64; n_miners];
        let mut cur = tip;
        while let Some(parent) = self.parent(cur) {
            if let Some(owner) = self.owner(cur) {
                counts[owner] += 1;
            }
            cur = parent;
        }
        Ok(RewardVector::from_counts(counts))
    }

    /// Writes `id parent owner height` lines, genesis first; `-` marks the
    /// missing parent and owner of genesis.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for b in &self.blocks {
            let parent = b.parent.map_or_else(|| "-".to_string(), |p| p.to_string());
            let owner = b.owner.map_or_else(|| "-".to_string(), |o| o.to_string());
            writeln!(out, "{} {} {} {}", b.id, parent, owner, b.height)?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<Self, ChainError> {
        let mut tree = BlockTree::new();
        for (idx, line) in input.lines().enumerate() {
            let lineno = idx + 1;
            let bad = |reason: &str| ChainError::Dump {
                line: lineno,
                reason: reason.to_string(),
            };
            let line = line.map_err(|e| bad(&e.to_string()))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(bad("expected 4 fields"));
            }
            let id: u32 = fields[0].parse().map_err(|_| bad("bad id"))?;
            let height: u32 = fields[3].parse().map_err(|_| bad("bad height"))?;
            if idx == 0 {
                if id != 0 || fields[1] != "-" || fields[2] != "-" || height != 0 {
                    return Err(bad("first line must be genesis `0 - - 0`"));
                }
                continue;
            }
            if id as usize != tree.len() {
                return Err(bad("ids must be sequential"));
            }
            let parent: u32 = fields[1].parse().map_err(|_| bad("bad parent"))?;
            let owner: MinerId = fields[2].parse().map_err(|_| bad("bad owner"))?;
            let new = tree
                .extend(BlockId(parent), owner)
                .map_err(|e| bad(&e.to_string()))?;
            if tree.height(new) != height {
                return Err(bad("height disagrees with parent"));
            }
        }
        Ok(tree)
    }
}

/// Per-miner block counts on a measured chain and their shares.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardVector {
    pub rewards: Vec<f64>,
    pub block_counts: Vec<u64>,
}

impl RewardVector {
    /// All-zero shares when no miner owns a block on the chain.
    pub fn from_counts(block_counts: Vec<u64>) -> Self {
        let total: u64 = block_counts.iter().sum();
        let rewards = if total == 0 {
            vec![0.0; block_counts.len()]
        } else {
            block_counts
                .iter()
                .map(|&b| b as f64 / total as f64)
                .collect()
        };
        RewardVector {
            rewards,
            block_counts,
        }
    }

    pub fn total_blocks(&self) -> u64 {
        self.block_counts.iter().sum()
    }
}

/// Per-miner block counts along a moving measured tip.
///
/// Moving the tip walks both chains back to their common ancestor, so the
/// cost is proportional to the reorganisation depth rather than the chain
/// length.
#[derive(Debug, Clone)]
pub struct ChainTally {
    tip: BlockId,
    counts: Vec<u64>,
}

impl ChainTally {
    pub fn new(n_miners: usize) -> Self {
        ChainTally {
            tip: BlockId::GENESIS,
            counts: vec![0; n_miners],
        }
    }

    pub fn tip(&self) -> BlockId {
        self.tip
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn move_to(&mut self, tree: &BlockTree, new_tip: BlockId) {
        let mut old = self.tip;
        let mut new = new_tip;
        while tree.height(old) > tree.height(new) {
            self.retract(tree, old);
            old = tree.parent(old).expect("non-genesis block has a parent");
        }
        while tree.height(new) > tree.height(old) {
            self.advance(tree, new);
            new = tree.parent(new).expect("non-genesis block has a parent");
        }
        while old != new {
            self.retract(tree, old);
            self.advance(tree, new);
            old = tree.parent(old).expect("non-genesis block has a parent");
            new = tree.parent(new).expect("non-genesis block has a parent");
        }
        self.tip = new_tip;
    }

    fn retract(&mut self, tree: &BlockTree, id: BlockId) {
        if let Some(owner) = tree.owner(id) {
            self.counts[owner] -= 1;
        }
    }

    fn advance(&mut self, tree: &BlockTree, id: BlockId) {
        if let Some(owner) = tree.owner(id) {
            self.counts[owner] += 1;
        }
    }

    pub fn reward(&self) -> RewardVector {
        RewardVector::from_counts(self.counts.clone())
    }

    /// Share of miner `i`; zero while the chain is empty.
    pub fn share(&self, i: MinerId) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.counts[i] as f64 / total as f64
        }
    }
}
