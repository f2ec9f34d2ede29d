//! Games built from simulated payoffs.

use sm_arena::game::{build_game, epsilon_pe, hm_preference_filter, MinerType, StrategyProfile};
use sm_arena::sim::{InstanceRunner, PowerAllocation, SimConfig};
use sm_arena::strategy::StrategyKind;

use MinerType::{Honest as H, Strategic as S};

fn runner() -> InstanceRunner {
    InstanceRunner::new(SimConfig {
        seed: 8,
        ..SimConfig::desk_scale()
    })
    .unwrap()
}

fn preferred(powers: &[f64], types: &[MinerType]) -> Vec<StrategyProfile> {
    let game = build_game(&PowerAllocation::new(powers.to_vec()).unwrap(), types, &runner()).unwrap();
    assert!(game.is_complete());
    let eqs = epsilon_pe(&game, 1e-4);
    assert!(!eqs.equilibria.is_empty());
    hm_preference_filter(&eqs, &game).equilibria
}

#[test]
fn weak_strategic_miner_stays_honest() {
    let eq = preferred(&[0.2, 0.8], &[S, H]);
    assert_eq!(eq.len(), 1);
    assert_eq!(eq[0].choices, vec![StrategyKind::Honest, StrategyKind::Honest]);
}

#[test]
fn strong_strategic_miner_turns_selfish() {
    for p in [0.4, 0.45, 0.6] {
        let eq = preferred(&[p, 1.0 - p], &[S, H]);
        assert_eq!(eq.len(), 1, "power {p}");
        assert!(eq[0].plays_selfish(0), "power {p}");
    }
}

#[test]
fn game_table_rows_sum_to_one() {
    let game = build_game(
        &PowerAllocation::new(vec![0.3, 0.3, 0.4]).unwrap(),
        &[S, S, H],
        &runner(),
    )
    .unwrap();
    assert_eq!(game.profiles().len(), 4);
    for (p, pay) in game.iter() {
        let s: f64 = pay.mean.iter().sum();
        assert!((s - 1.0).abs() < 1e-9, "{p}: {s}");
    }
}
