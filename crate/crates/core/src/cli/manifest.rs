//! Sweep bookkeeping: the run manifest and the `games.csv` result store.
//!
//! `games.csv` is the source of truth for finished tasks. A task's rows are
//! appended in one write before the manifest marks it done, so after a
//! crash the manifest may lag the CSV but never lead it; [`reconcile`]
//! trims any torn tail and the manifest is rebuilt from what survived.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::io::{encode, read_csv, write_atomic, Provenance, Row, SCHEMA, VERSION};
use crate::game::{Payoff, StrategyProfile};
use crate::sweep::{GridAllocation, GridSpec, Layout, Model};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const GAMES_FILE: &str = "games.csv";

pub const GAMES_HEADER: &[&str] = &[
    "model",
    "n",
    "layout",
    "step",
    "allocation_id",
    "profile_bits",
    "miner",
    "power",
    "strategy",
    "reward",
    "sem",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridKey {
    pub model: Model,
    pub n_malicious: usize,
    pub layout: Layout,
}

impl GridKey {
    pub fn of(spec: &GridSpec) -> Self {
        GridKey {
            model: spec.model,
            n_malicious: spec.n_malicious,
            layout: spec.layout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskKey {
    pub grid: GridKey,
    pub allocation_id: usize,
    pub profile_bits: u64,
}

impl TaskKey {
    pub fn label(&self) -> String {
        format!(
            "{}/{}/{}/{}/{}",
            self.grid.model, self.grid.n_malicious, self.grid.layout, self.allocation_id, self.profile_bits
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub model: Model,
    pub n_malicious: usize,
    pub layout: Layout,
    pub step: f64,
    pub allocations: usize,
    pub tasks: usize,
}

impl GridEntry {
    pub fn spec(&self) -> GridSpec {
        GridSpec {
            n_malicious: self.n_malicious,
            step: self.step,
            model: self.model,
            layout: self.layout,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskStatus {
    Pending,
    Done,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub schema: u32,
    pub seed: u64,
    pub seed_source: String,
    pub config: BTreeMap<String, String>,
    pub config_hash: String,
    pub grids: Vec<GridEntry>,
    pub tasks: BTreeMap<String, TaskStatus>,
}

impl Manifest {
    pub fn new(prov: &Provenance, seed_source: &str, config: BTreeMap<String, String>) -> Self {
        Manifest {
            tool: "sm-arena".into(),
            version: VERSION.into(),
            schema: SCHEMA,
            seed: prov.seed,
            seed_source: seed_source.into(),
            config,
            config_hash: prov.config_hash.clone(),
            grids: Vec::new(),
            tasks: BTreeMap::new(),
        }
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        }
    }

    pub fn load(path: &Path) -> io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    pub fn save(&self, path: &Path) -> io::Result<()> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serialises");
        text.push('\n');
        write_atomic(path, text.as_bytes())
    }

    pub fn grid(&self, key: GridKey) -> Option<&GridEntry> {
        self.grids.iter().find(|g| GridKey::of(&g.spec()) == key)
    }

    pub fn set(&mut self, key: &TaskKey, status: TaskStatus) {
        self.tasks.insert(key.label(), status);
    }

    pub fn pending(&self) -> usize {
        self.tasks.values().filter(|s| **s == TaskStatus::Pending).count()
    }
}

/// Rows of one finished task.
pub fn task_rows(
    spec: &GridSpec,
    alloc: &GridAllocation,
    profile: &StrategyProfile,
    payoff: &Payoff,
) -> Vec<Row> {
    let powers = alloc.allocation();
    (0..profile.choices.len())
        .map(|i| {
            vec![
                spec.model.to_string(),
                spec.n_malicious.to_string(),
                spec.layout.to_string(),
                spec.step.to_string(),
                alloc.id.to_string(),
                profile.bits().to_string(),
                i.to_string(),
                powers.powers()[i].to_string(),
                profile.choices[i].to_string(),
                payoff.mean[i].to_string(),
                payoff.sem[i].to_string(),
            ]
        })
        .collect()
}

pub type GameResults = BTreeMap<TaskKey, Payoff>;

struct ParsedRow {
    task: TaskKey,
    miner: usize,
    reward: f64,
    sem: f64,
}

fn parse_row(row: &Row) -> Result<ParsedRow, String> {
    if row.len() != GAMES_HEADER.len() {
        return Err(format!("expected {} fields, got {}", GAMES_HEADER.len(), row.len()));
    }
    let num = |i: usize| -> Result<f64, String> {
        row[i].parse::<f64>().map_err(|e| format!("{}: {e}", GAMES_HEADER[i]))
    };
    let int = |i: usize| -> Result<u64, String> {
        row[i].parse::<u64>().map_err(|e| format!("{}: {e}", GAMES_HEADER[i]))
    };
    Ok(ParsedRow {
        task: TaskKey {
            grid: GridKey {
                model: row[0].parse()?,
                n_malicious: int(1)? as usize,
                layout: row[2].parse()?,
            },
            allocation_id: int(4)? as usize,
            profile_bits: int(5)?,
        },
        miner: int(6)? as usize,
        reward: num(9)?,
        sem: num(10)?,
    })
}

/// Loads every complete task from `games.csv`. When the file ends in a
/// torn or partial group, the file is rewritten without it.
pub fn reconcile(path: &Path, prov: &Provenance) -> io::Result<GameResults> {
    if !path.exists() {
        return Ok(GameResults::new());
    }
    let bytes = std::fs::read(path)?;
    let torn = !bytes.is_empty() && !bytes.ends_with(b"\n");
    if torn {
        let cut = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |p| p + 1);
        write_atomic(path, &bytes[..cut])?;
    }
    let (_, rows) = read_csv(path)?;
    let mut groups: BTreeMap<TaskKey, Vec<(usize, f64, f64, Row)>> = BTreeMap::new();
    let mut order: Vec<TaskKey> = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        let p = parse_row(row).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{}: row {}: {e}", path.display(), i + 1))
        })?;
        let g = groups.entry(p.task).or_default();
        if g.is_empty() {
            order.push(p.task);
        }
        g.push((p.miner, p.reward, p.sem, row.clone()));
    }
    let mut results = GameResults::new();
    let mut kept: Vec<Row> = Vec::new();
    for key in order {
        let group = &groups[&key];
        let n = key.grid.n_malicious + 1;
        let complete =
            group.len() == n && group.iter().enumerate().all(|(i, (m, ..))| *m == i);
        if complete {
            results.insert(
                key,
                Payoff {
                    mean: group.iter().map(|g| g.1).collect(),
                    sem: group.iter().map(|g| g.2).collect(),
                },
            );
            kept.extend(group.iter().map(|g| g.3.clone()));
        }
    }
    if kept.len() != rows.len() {
        let mut out = prov.comment().into_bytes();
        out.extend(encode(Some(GAMES_HEADER), &kept));
        write_atomic(path, &out)?;
    }
    Ok(results)
}

/// Rewrites `games.csv` in canonical row order.
pub fn sort_games(path: &Path, prov: &Provenance) -> io::Result<()> {
    let (_, mut rows) = read_csv(path)?;
    let key = |r: &Row| {
        let p = parse_row(r).ok();
        p.map(|p| (p.task, p.miner))
    };
    rows.sort_by_cached_key(key);
    let mut out = prov.comment().into_bytes();
    out.extend(encode(Some(GAMES_HEADER), &rows));
    write_atomic(path, &out)
}
