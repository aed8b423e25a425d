#![allow(dead_code)]

use std::collections::BTreeMap;

use mktsim_core::engine::{Engine, EngineConfig, NodeOptions, TraceEvent};
use mktsim_core::{
    FundsAttachment, ItemAdvertisement, MarketConfig, Member, NodeId, Payload, Role, RoleSet,
    Roster, TradeType, TxId, TxKind, Units,
};

pub fn id(s: &str) -> NodeId {
    NodeId::new(s)
}

pub fn roles(list: &[Role]) -> RoleSet {
    list.iter().copied().collect()
}

pub struct Setup {
    pub members: Vec<(String, RoleSet, Units)>,
    pub withhold: Vec<String>,
    pub cap: Option<usize>,
    pub seed: u64,
}

impl Setup {
    /// Proposer p, supplier s, consumers c1..c4, escrow e.
    pub fn standard() -> Self {
        let c = roles(&[Role::Consumer]);
        Self {
            members: vec![
                ("p".into(), roles(&[Role::Proposer, Role::Validator]), 0),
                ("s".into(), roles(&[Role::Supplier]), 1_000),
                ("c1".into(), c, 1_000),
                ("c2".into(), c, 1_000),
                ("c3".into(), c, 1_000),
                ("c4".into(), c, 1_000),
                ("e".into(), roles(&[Role::Escrow]), 0),
            ],
            withhold: vec![],
            cap: None,
            seed: 7,
        }
    }

    pub fn build(&self) -> Engine {
        let roster = Roster::new(
            self.members
                .iter()
                .map(|(n, r, _)| Member { id: id(n), roles: *r })
                .collect(),
        )
        .unwrap();
        let mut market = MarketConfig::new(roster);
        market.block_tx_cap = self.cap;
        let genesis: BTreeMap<NodeId, Units> =
            self.members.iter().map(|(n, _, b)| (id(n), *b)).collect();
        let options = self
            .withhold
            .iter()
            .map(|n| (id(n), NodeOptions { withhold_reveal: true }))
            .collect();
        Engine::new(EngineConfig { market, seed: self.seed, genesis, options })
    }
}

pub fn english(sale: u64) -> ItemAdvertisement {
    let mut ad = ItemAdvertisement::new(*b"lamp", TradeType::EnglishAuction, sale);
    ad.start_price = Some(100);
    ad.min_increment = Some(10);
    ad
}

pub fn dutch(sale: u64) -> ItemAdvertisement {
    let mut ad = ItemAdvertisement::new(*b"tulips", TradeType::DutchAuction, sale);
    ad.start_price = Some(100);
    ad.min_increment = Some(10);
    ad.bid_window = Some(5);
    ad
}

pub fn pay(p: Units) -> FundsAttachment {
    FundsAttachment::new(Some(p), None)
}

pub fn pay_dep(p: Units, d: Units) -> FundsAttachment {
    FundsAttachment::new(Some(p), Some(d))
}

/// Steps until the head reaches `block`, asserting the per-block audit.
pub fn run_to(engine: &mut Engine, block: u64) -> Vec<TraceEvent> {
    let mut all = Vec::new();
    while engine.height() < block {
        let events = engine.step();
        for e in &events {
            if let TraceEvent::Audit { conserved, replicas_agree, .. } = e {
                assert!(*conserved && *replicas_agree, "audit failed: {e:?}");
            }
        }
        all.extend(events);
    }
    all
}

/// (block, kind) of every matching transaction for `ad`.
pub fn matching_txs(engine: &Engine, ad: &TxId) -> Vec<(u64, TxKind)> {
    engine
        .state()
        .blocks()
        .flat_map(|b| b.txs().iter().map(move |t| (b.number(), t)))
        .filter(|(_, t)| match t.payload() {
            Payload::Assignment(a) => a.ad_id == *ad,
            Payload::NoAssignment(n) => n.ad_id == *ad,
            _ => false,
        })
        .map(|(n, t)| (n, t.kind()))
        .collect()
}
