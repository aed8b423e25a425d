mod common;

use std::collections::BTreeMap;

use common::*;
use mktsim_core::engine::Engine;
use mktsim_core::{ChainState, FundsAttachment, Payload, TradeType, TxId};
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Advertise { english: bool, sale: u64, reserve: Option<u64>, deposit: u64 },
    Bid { ad: usize, who: usize, price: u64, deposit: u64 },
    Wait(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        1 => (any::<bool>(), 1u64..8, proptest::option::of(90u64..160), 0u64..30)
            .prop_map(|(english, sale, reserve, deposit)| Op::Advertise { english, sale, reserve, deposit }),
        4 => (0usize..4, 0usize..4, 60u64..200, 0u64..20)
            .prop_map(|(ad, who, price, deposit)| Op::Bid { ad, who, price, deposit }),
        2 => (1u64..4).prop_map(Op::Wait),
    ]
}

fn play(ops: &[Op], seed: u64) -> (Engine, Vec<TxId>) {
    let mut setup = Setup::standard();
    setup.seed = seed;
    let mut e = setup.build();
    let mut ads = Vec::new();
    let consumers = ["c1", "c2", "c3", "c4"];
    for op in ops {
        match op {
            Op::Advertise { english: true, sale, reserve, deposit } => {
                let mut ad = common::english(*sale);
                ad.reveal_flag = reserve.is_some();
                ad.reveal_duration = reserve.map(|_| 2);
                let funds = FundsAttachment::new(None, Some(*deposit).filter(|d| *d > 0));
                if let Ok(id) = e.advertise(&id("s"), ad, *reserve, funds) {
                    ads.push(id);
                }
            }
            Op::Advertise { english: false, sale, reserve, .. } => {
                let mut ad = common::dutch(*sale + 10);
                ad.bid_window = Some(*sale);
                if let Ok(id) = e.advertise(&id("s"), ad, reserve.map(|r| r / 2), FundsAttachment::NONE) {
                    ads.push(id);
                }
            }
            Op::Bid { ad, who, price, deposit } => {
                if let Some(ad_id) = ads.get(*ad).copied() {
                    let trade = e.state().trade(&ad_id).cloned();
                    // Dutch bids only make sense at the window price
                    let price = match trade.as_ref().map(|t| t.ad.trade_type) {
                        Some(TradeType::DutchAuction) => {
                            let t = trade.unwrap();
                            mktsim_core::policy::dutch_window_price(&t.ad, t.ad_block, e.height() + 1)
                                .unwrap_or(*price)
                        }
                        _ => *price,
                    };
                    let funds = FundsAttachment::new(Some(price), Some(*deposit).filter(|d| *d > 0));
                    let _ = e.bid(&id(consumers[*who]), ad_id, b"b".to_vec(), funds);
                }
            }
            Op::Wait(n) => {
                let target = e.height() + n;
                run_to(&mut e, target);
            }
        }
    }
    let target = e.height() + 40;
    run_to(&mut e, target);
    (e, ads)
}

fn matching_count(state: &ChainState, ad: &TxId) -> Vec<u64> {
    state
        .blocks()
        .flat_map(|b| b.txs().iter().map(move |t| (b.number(), t)))
        .filter(|(_, t)| match t.payload() {
            Payload::Assignment(a) => a.ad_id == *ad,
            Payload::NoAssignment(n) => n.ad_id == *ad,
            _ => false,
        })
        .map(|(n, _)| n)
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ledger_invariants_hold(ops in proptest::collection::vec(op(), 1..30), seed in any::<u64>()) {
        // run_to asserts conservation and replica agreement after every block
        let (e, ads) = play(&ops, seed);
        let st = e.state();

        // digest chain
        let blocks: Vec<_> = st.blocks().collect();
        for w in blocks.windows(2) {
            prop_assert_eq!(w[1].parent(), w[0].digest());
            prop_assert!(w[1].digest_is_valid());
        }

        // replaying the blocks on a fresh genesis reproduces the state
        let genesis: BTreeMap<_, _> = Setup::standard().members.iter().map(|(n, _, b)| (id(n), *b)).collect();
        let mut replay = ChainState::genesis(&e.config().roster, &genesis);
        for b in blocks.iter().skip(1) {
            replay = replay.apply_block(e.config(), b).expect("every proposed block is valid");
        }
        prop_assert_eq!(replay.state_digest(), st.state_digest());

        // exactly one matching tx per ad, after its final deadline
        for ad in &ads {
            let trade = st.trade(ad).expect("ad included");
            let at = matching_count(st, ad);
            prop_assert_eq!(at.len(), 1, "matching txs at {:?}", at);
            if trade.ad.trade_type == TradeType::EnglishAuction {
                prop_assert_eq!(at[0], trade.deadlines.final_deadline() + 1);
            } else {
                prop_assert!(at[0] <= trade.deadlines.sale_end + 1);
            }
        }
        prop_assert!(st.locked().is_empty());
        prop_assert!(e.all_settled());
    }

    #[test]
    fn runs_are_deterministic(ops in proptest::collection::vec(op(), 1..20), seed in any::<u64>()) {
        let (a, _) = play(&ops, seed);
        let (b, _) = play(&ops, seed);
        let da: Vec<_> = a.state().blocks().map(|x| *x.digest()).collect();
        let db: Vec<_> = b.state().blocks().map(|x| *x.digest()).collect();
        prop_assert_eq!(da, db);
        prop_assert_eq!(a.state(), b.state());
    }
}
