//! Reference models written from the textbook description of selfish
//! mining, independently of the simulator's block tree and automata.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};

/// Closed-form relative revenue of a selfish pool with power `a` and tie
/// share `g` against honest miners.
pub fn revenue_closed_form(a: f64, g: f64) -> f64 {
    let num = a * (1.0 - a).powi(2) * (4.0 * a + g * (1.0 - 2.0 * a)) - a.powi(3);
    let den = 1.0 - a * (1.0 + (2.0 - a) * a);
    num / den
}

/// Relative revenue from the stationary distribution of the selfish-mining
/// Markov chain, truncated at a lead of `max_lead`.
///
/// States: 0 (no lead), 0' (public race), then leads 1..=max_lead.
pub fn revenue_markov(a: f64, g: f64, max_lead: usize) -> f64 {
    assert!(max_lead >= 3);
    let n = max_lead + 2;
    let idx = |lead: usize| lead + 1; // lead >= 1
    const ZERO: usize = 0;
    const RACE: usize = 1;
    let h = 1.0 - a;
    // (from, to, probability, selfish blocks, honest blocks)
    let mut edges: Vec<(usize, usize, f64, f64, f64)> = vec![
        (ZERO, idx(1), a, 0.0, 0.0),
        (ZERO, ZERO, h, 0.0, 1.0),
        (RACE, ZERO, a, 2.0, 0.0),
        (RACE, ZERO, h * g, 1.0, 1.0),
        (RACE, ZERO, h * (1.0 - g), 0.0, 2.0),
        (idx(1), idx(2), a, 0.0, 0.0),
        (idx(1), RACE, h, 0.0, 0.0),
        (idx(2), ZERO, h, 2.0, 0.0),
    ];
    for lead in 2..=max_lead {
        let up = if lead == max_lead { idx(lead) } else { idx(lead + 1) };
        edges.push((idx(lead), up, a, 0.0, 0.0));
        if lead >= 3 {
            edges.push((idx(lead), idx(lead - 1), h, 1.0, 0.0));
        }
    }

    let mut p = DMatrix::<f64>::zeros(n, n);
    for &(from, to, prob, _, _) in &edges {
        p[(from, to)] += prob;
    }
    for i in 0..n {
        let row: f64 = p.row(i).sum();
        assert!((row - 1.0).abs() < 1e-12, "row {i} sums to {row}");
    }
    // pi (P - I) = 0 with sum(pi) = 1: transpose and swap one equation
    let mut m = p.transpose() - DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(n);
    rhs[n - 1] = 1.0;
    let pi = m.lu().solve(&rhs).expect("chain is irreducible");

    let (mut rs, mut rh) = (0.0, 0.0);
    for &(from, _, prob, s, hb) in &edges {
        rs += pi[from] * prob * s;
        rh += pi[from] * prob * hb;
    }
    rs / (rs + rh)
}

/// Decisions the reference model expects, in the order the simulator logs
/// them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    HmPublish,
    HmKeep,
    HmAdopt,
    SmHide,
    SmWinRace,
    SmAdopt,
    SmMatch,
    SmOverride,
    SmPublishOne,
}

/// Two-miner selfish mining with ties always lost by the selfish miner,
/// tracked as a lead counter plus a race flag.
#[derive(Debug, Clone, Default)]
pub struct ReferenceSm {
    pub lead: u32,
    pub race: bool,
    /// Blocks already certain to end up in the main chain.
    pub settled_sm: u64,
    pub settled_hm: u64,
}

impl ReferenceSm {
    pub fn selfish_mines(&mut self) -> Vec<Expect> {
        if self.race {
            self.race = false;
            self.settled_sm += 2;
            vec![Expect::SmWinRace, Expect::HmAdopt]
        } else {
            self.lead += 1;
            vec![Expect::SmHide]
        }
    }

    pub fn honest_mines(&mut self) -> Vec<Expect> {
        let mut out = vec![Expect::HmPublish];
        if self.race {
            self.race = false;
            self.settled_hm += 2;
            out.push(Expect::SmAdopt);
            return out;
        }
        match self.lead {
            0 => {
                self.settled_hm += 1;
                out.push(Expect::SmAdopt);
            }
            1 => {
                self.lead = 0;
                self.race = true;
                out.extend([Expect::SmMatch, Expect::HmKeep]);
            }
            2 => {
                self.lead = 0;
                self.settled_sm += 2;
                out.extend([Expect::SmOverride, Expect::HmAdopt]);
            }
            _ => {
                self.lead -= 1;
                self.settled_sm += 1;
                out.extend([Expect::SmPublishOne, Expect::HmKeep]);
            }
        }
        out
    }

    /// Blocks of each miner on the deepest chain right now, with a public
    /// tie credited to the block published first (the honest one).
    pub fn chain_counts(&self) -> (u64, u64) {
        if self.race {
            (self.settled_sm, self.settled_hm + 1)
        } else {
            (self.settled_sm + u64::from(self.lead), self.settled_hm)
        }
    }
}
