//! Replays every mining order up to a fixed length through the simulator
//! and through the reference lead/race model, comparing each decision and
//! the final chain.

mod common;

use common::{Expect, ReferenceSm};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sm_arena::sim::{Instance, PowerAllocation, Simulation};
use sm_arena::strategy::Decision;
use sm_arena::strategy::StrategyKind::{Honest, Selfish};

const HM: usize = 0;
const SM: usize = 1;

fn observed(miner: usize, d: Decision) -> Expect {
    match (miner, d) {
        (HM, Decision::Publish) => Expect::HmPublish,
        (HM, Decision::Keep) => Expect::HmKeep,
        (HM, Decision::Adopt) => Expect::HmAdopt,
        (SM, Decision::Hide) => Expect::SmHide,
        (SM, Decision::WinRace) => Expect::SmWinRace,
        (SM, Decision::Adopt) => Expect::SmAdopt,
        (SM, Decision::Match) => Expect::SmMatch,
        (SM, Decision::Override) => Expect::SmOverride,
        (SM, Decision::PublishOne) => Expect::SmPublishOne,
        other => panic!("unexpected action {other:?}"),
    }
}

#[test]
fn every_mining_order_up_to_twelve_blocks() {
    let inst = Instance::new(PowerAllocation::new(vec![0.5, 0.5]).unwrap(), vec![Honest, Selfish]).unwrap();
    let mut checked = 0;
    for len in 1..=12u32 {
        for order in 0..1u32 << len {
            let mut sim = Simulation::new(&inst).with_action_log();
            let mut reference = ReferenceSm::default();
            let mut rng = ChaCha8Rng::seed_from_u64(u64::from(order));
            for t in 0..len {
                let miner = (order >> t & 1) as usize;
                sim.step_as(miner, &mut rng);
                let want = if miner == SM {
                    reference.selfish_mines()
                } else {
                    reference.honest_mines()
                };
                let got: Vec<Expect> = sim
                    .take_action_log()
                    .into_iter()
                    .map(|(m, a)| observed(m, a.decision))
                    .collect();
                assert_eq!(got, want, "order {order:0len$b}, step {t}", len = len as usize);
            }
            let counts = sim.tree().reward(sim.measurement_tip(), 2).unwrap().block_counts;
            let (sm, hm) = reference.chain_counts();
            assert_eq!(counts, vec![hm, sm], "order {order:0len$b}", len = len as usize);
            checked += 1;
        }
    }
    assert_eq!(checked, (1 << 13) - 2);
}
