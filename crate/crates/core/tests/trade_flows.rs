mod common;

use common::*;
use mktsim_core::engine::TraceEvent;
use mktsim_core::escrow::EscrowState;
use mktsim_core::{
    Block, FundsAttachment, Payload, Role, Rule, TradePhase, TxKind, ValidationFailed,
};

#[test]
fn english_assignment_lands_after_sale_end() {
    let mut e = Setup::standard().build();
    let ad = e.advertise(&id("s"), english(10), None, FundsAttachment::NONE).unwrap();
    run_to(&mut e, 1);
    e.bid(&id("c1"), ad, b"x".to_vec(), pay(100)).unwrap();
    run_to(&mut e, 2);
    e.bid(&id("c2"), ad, b"x".to_vec(), pay(120)).unwrap();
    e.bid(&id("c3"), ad, b"x".to_vec(), pay(120)).unwrap();
    run_to(&mut e, 13);

    assert_eq!(matching_txs(&e, &ad), [(12, TxKind::Assignment)]);
    let st = e.state();
    let trade = st.trade(&ad).unwrap();
    let winner = trade.lifecycle.winning_bid.and_then(|w| trade.bid(&w)).unwrap();
    assert_eq!(winner.price(), 120);
    assert_eq!(trade.lifecycle.phase, TradePhase::Settled);
    assert_eq!(st.balance(&id("s")), 1_120);
    assert_eq!(st.balance(&id("c1")), 1_000);
    assert_eq!(st.balance(&winner.bidder), 880);
    assert!(st.locked().is_empty());
}

#[test]
fn increment_rule_at_admission() {
    let mut e = Setup::standard().build();
    let ad = e.advertise(&id("s"), english(10), None, FundsAttachment::NONE).unwrap();
    run_to(&mut e, 1);
    let err = e.bid(&id("c1"), ad, b"x".to_vec(), pay(99)).unwrap_err();
    assert!(format!("{err}").contains("starting price"));
    e.bid(&id("c1"), ad, b"x".to_vec(), pay(100)).unwrap();
    run_to(&mut e, 2);
    let rejected = e.bid(&id("c2"), ad, b"x".to_vec(), pay(109));
    assert_eq!(
        rejected.unwrap_err(),
        ValidationFailed::platform(Rule::IncrementViolation).into()
    );
}

#[test]
fn insufficient_balance_is_rejected() {
    let mut e = Setup::standard().build();
    let ad = e.advertise(&id("s"), english(10), None, FundsAttachment::NONE).unwrap();
    run_to(&mut e, 1);
    let err = e.bid(&id("c1"), ad, b"x".to_vec(), pay(1_001)).unwrap_err();
    assert_eq!(
        err,
        ValidationFailed::chain(Rule::InsufficientBalance { needed: 1_001, available: 1_000 }).into()
    );
}

#[test]
fn withheld_reveal_forfeits_deposit_to_trigger_proposer() {
    let mut setup = Setup::standard();
    setup.members[0].0 = "p1".into();
    setup.members.push(("p2".into(), roles(&[Role::Proposer]), 0));
    setup.withhold = vec!["s".into()];
    let mut e = setup.build();
    let mut ad = english(10);
    ad.reveal_flag = true;
    ad.reveal_duration = Some(3);
    let funds = FundsAttachment::new(None, Some(50));
    let ad_id = e.advertise(&id("s"), ad, Some(150), funds).unwrap();
    run_to(&mut e, 1);
    e.bid(&id("c1"), ad_id, b"x".to_vec(), pay_dep(200, 10)).unwrap();
    run_to(&mut e, 16);

    // reveal window (11, 14]; expiration fires at 14, proposed by p1
    assert_eq!(matching_txs(&e, &ad_id), [(15, TxKind::NoAssignment)]);
    let st = e.state();
    assert_eq!(st.block(14).unwrap().proposer(), &id("p1"));
    assert_eq!(st.balance(&id("p1")), 50);
    assert_eq!(st.balance(&id("p2")), 0);
    assert_eq!(st.balance(&id("s")), 950);
    assert_eq!(st.balance(&id("c1")), 1_000);
    assert!(st.locked().is_empty());
}

#[test]
fn revealed_reserve_above_best_bid_returns_everything() {
    let mut e = Setup::standard().build();
    let mut ad = english(10);
    ad.reveal_flag = true;
    ad.reveal_duration = Some(3);
    let ad_id = e
        .advertise(&id("s"), ad, Some(150), FundsAttachment::new(None, Some(50)))
        .unwrap();
    run_to(&mut e, 1);
    e.bid(&id("c1"), ad_id, b"x".to_vec(), pay_dep(100, 10)).unwrap();
    run_to(&mut e, 2);
    e.bid(&id("c2"), ad_id, b"x".to_vec(), pay_dep(120, 10)).unwrap();
    run_to(&mut e, 16);

    let st = e.state();
    let trade = st.trade(&ad_id).unwrap();
    let rev = trade.revelation.as_ref().expect("revealed");
    assert_eq!(rev.res_price, 150);
    assert_eq!(rev.inclusion.block, 12);
    assert_eq!(matching_txs(&e, &ad_id), [(15, TxKind::NoAssignment)]);
    for n in ["s", "c1", "c2"] {
        assert_eq!(st.balance(&id(n)), 1_000, "{n}");
    }
    assert!(st.locked().is_empty());
}

#[test]
fn reveal_trade_is_never_matched_before_reveal_end() {
    let mut e = Setup::standard().build();
    let mut ad = english(4);
    ad.reveal_flag = true;
    ad.reveal_duration = Some(6);
    let ad_id = e.advertise(&id("s"), ad, Some(100), FundsAttachment::NONE).unwrap();
    run_to(&mut e, 1);
    e.bid(&id("c1"), ad_id, b"x".to_vec(), pay(130)).unwrap();
    run_to(&mut e, 20);
    // sale end 5, reveal end 11
    assert_eq!(matching_txs(&e, &ad_id), [(12, TxKind::Assignment)]);
}

#[test]
fn dutch_bid_must_match_window_price() {
    let mut e = Setup::standard().build();
    let ad = e.advertise(&id("s"), dutch(30), None, FundsAttachment::NONE).unwrap();
    run_to(&mut e, 11);
    // next block 12: diff 11, two decrements
    let err = e.bid(&id("c1"), ad, b"x".to_vec(), pay(90)).unwrap_err();
    assert_eq!(err, ValidationFailed::platform(Rule::WrongWindowPrice { expected: 80 }).into());
    e.bid(&id("c1"), ad, b"x".to_vec(), pay(80)).unwrap();
    let trace = run_to(&mut e, 17);
    // window [11, 15] closes at 15
    assert_eq!(matching_txs(&e, &ad), [(16, TxKind::Assignment)]);
    assert_eq!(e.state().balance(&id("s")), 1_080);
    let lowered: Vec<_> = trace
        .iter()
        .filter_map(|t| match t {
            TraceEvent::Notified(n) if n.kind.as_str() == "DutchPriceLowered" => Some(n.value),
            _ => None,
        })
        .collect();
    // c1 follows the ad from its bid on; the block 16 boundary is past matching
    assert!(lowered.is_empty(), "{lowered:?}");
}

#[test]
fn dutch_schedule_to_reserve_without_bids_yields_no_assignment() {
    let mut e = Setup::standard().build();
    let ad = e.advertise(&id("s"), dutch(30), Some(75), FundsAttachment::NONE).unwrap();
    run_to(&mut e, 20);
    assert_eq!(matching_txs(&e, &ad), [(16, TxKind::NoAssignment)]);
}

#[test]
fn carry_over_respects_block_cap() {
    let mut setup = Setup::standard();
    setup.cap = Some(2);
    let mut e = setup.build();
    let ad = e.advertise(&id("s"), english(10), None, FundsAttachment::NONE).unwrap();
    run_to(&mut e, 1);
    e.bid(&id("c1"), ad, b"x".to_vec(), pay(100)).unwrap();
    e.bid(&id("c2"), ad, b"x".to_vec(), pay(100)).unwrap();
    run_to(&mut e, 13);
    let kinds = |n| -> Vec<TxKind> {
        e.state().block(n).unwrap().txs().iter().map(|t| t.kind()).collect()
    };
    assert_eq!(kinds(12)[0], TxKind::Assignment);
    assert_eq!(kinds(12).len(), 2);
    assert_eq!(kinds(13).len(), 1);
    assert!(e.state().locked().is_empty());
}

#[test]
fn physical_goods_release_after_safety_window() {
    let mut e = Setup::standard().build();
    let mut ad = english(10);
    ad.physical = true;
    let ad_id = e
        .advertise(&id("s"), ad, None, FundsAttachment::new(None, Some(20)))
        .unwrap();
    run_to(&mut e, 1);
    e.bid(&id("c1"), ad_id, b"x".to_vec(), pay_dep(130, 10)).unwrap();
    run_to(&mut e, 12);

    let st = e.state();
    let case = st.market().escrow_case(&ad_id).expect("case opened");
    assert_eq!(case.opened_at, 12);
    assert_eq!(case.held_payment, 130);
    assert_eq!(case.held_deposits, (20, 10));
    assert_eq!(st.balance(&id("s")), 980);

    run_to(&mut e, 17);
    assert_eq!(e.state().market().escrow_case(&ad_id).unwrap().state, EscrowState::Open);
    run_to(&mut e, 18);
    let st = e.state();
    assert!(st.block(18).unwrap().txs().iter().any(|t| t.kind() == TxKind::EscrowRelease));
    assert_eq!(st.market().escrow_case(&ad_id).unwrap().state, EscrowState::Released);
    assert_eq!(st.balance(&id("s")), 1_130);
    assert_eq!(st.balance(&id("c1")), 870);
    assert_eq!(st.trade(&ad_id).unwrap().lifecycle.phase, TradePhase::Settled);
    assert!(st.locked().is_empty());
}

#[test]
fn dispute_blocks_release_and_resolution_refunds() {
    let mut e = Setup::standard().build();
    let mut ad = english(10);
    ad.physical = true;
    let ad_id = e.advertise(&id("s"), ad, None, FundsAttachment::NONE).unwrap();
    run_to(&mut e, 1);
    e.bid(&id("c1"), ad_id, b"x".to_vec(), pay_dep(130, 10)).unwrap();
    run_to(&mut e, 14);
    assert_eq!(
        e.dispute(&id("c2"), ad_id).unwrap_err(),
        ValidationFailed::platform(Rule::NotAParty).into()
    );
    e.dispute(&id("c1"), ad_id).unwrap();
    run_to(&mut e, 25);
    let st = e.state();
    assert_eq!(st.market().escrow_case(&ad_id).unwrap().state, EscrowState::Disputed);
    assert_eq!(st.trade(&ad_id).unwrap().lifecycle.phase, TradePhase::Disputed);

    assert_eq!(
        e.resolve(&id("s"), ad_id, &id("c1")).unwrap_err(),
        ValidationFailed::platform(Rule::NotEscrow).into()
    );
    e.resolve(&id("e"), ad_id, &id("c1")).unwrap();
    run_to(&mut e, 26);
    let st = e.state();
    assert_eq!(st.market().escrow_case(&ad_id).unwrap().state, EscrowState::Resolved);
    assert_eq!(st.balance(&id("c1")), 1_000);
    assert_eq!(st.balance(&id("s")), 1_000);
    assert!(st.locked().is_empty());
    assert!(
        !st.blocks().any(|b| b.txs().iter().any(|t| t.kind() == TxKind::EscrowRelease)),
        "no auto-release after a dispute"
    );
}

#[test]
fn electronic_trade_opens_no_escrow_case() {
    let mut e = Setup::standard().build();
    let ad = e.advertise(&id("s"), english(3), None, FundsAttachment::NONE).unwrap();
    run_to(&mut e, 1);
    e.bid(&id("c1"), ad, b"x".to_vec(), pay(100)).unwrap();
    run_to(&mut e, 6);
    assert_eq!(e.state().market().escrow_cases().count(), 0);
}

#[test]
fn injected_invalid_block_changes_nothing() {
    let mut e = Setup::standard().build();
    e.advertise(&id("s"), english(10), None, FundsAttachment::NONE).unwrap();
    run_to(&mut e, 3);
    let before = e.replica_digests();
    let head = e.state().head().clone();
    let forged = Block::new(4, *head.digest(), id("p"), vec![]).with_forged_digest(*head.digest());
    let events = e.inject_block(&forged);
    assert!(matches!(events.as_slice(), [TraceEvent::BlockRejected { number: 4, .. }]));
    let wrong_proposer = Block::new(4, *head.digest(), id("s"), vec![]);
    assert!(matches!(e.inject_block(&wrong_proposer)[0], TraceEvent::BlockRejected { .. }));
    assert_eq!(e.replica_digests(), before);
    assert_eq!(e.height(), 3);
}

#[test]
fn block_with_invalid_tx_is_rejected() {
    let mut e = Setup::standard().build();
    run_to(&mut e, 2);
    let head = e.state().head().clone();
    let tx = mktsim_core::TransactionEnvelope::new(
        id("c1"),
        Payload::EscrowRelease { ad_id: *head.digest() },
        FundsAttachment::NONE,
        1,
    );
    let block = Block::new(3, *head.digest(), id("p"), vec![tx]);
    let events = e.inject_block(&block);
    assert!(matches!(events[0], TraceEvent::BlockRejected { number: 3, .. }));
    assert_eq!(e.height(), 2);
}

#[test]
fn proposer_kinds_rejected_from_users() {
    let mut e = Setup::standard().build();
    let ad = e.advertise(&id("s"), english(10), None, FundsAttachment::NONE).unwrap();
    run_to(&mut e, 1);
    let err = e
        .submit_payload(
            &id("c1"),
            Payload::EscrowRelease { ad_id: ad },
            FundsAttachment::NONE,
        )
        .unwrap_err();
    assert_eq!(err, ValidationFailed::chain(Rule::ProposerOnlyKind).into());
}

#[test]
fn consumer_sees_highest_bid_per_block() {
    let mut e = Setup::standard().build();
    let ad = e.advertise(&id("s"), english(10), None, FundsAttachment::NONE).unwrap();
    run_to(&mut e, 1);
    e.add_interest(&id("c4"), ad).unwrap();
    e.bid(&id("c1"), ad, b"x".to_vec(), pay(110)).unwrap();
    e.bid(&id("c2"), ad, b"x".to_vec(), pay(130)).unwrap();
    let trace = run_to(&mut e, 2);
    let seen: Vec<_> = trace
        .iter()
        .filter_map(|t| match t {
            TraceEvent::Notified(n) if n.target == id("c4") => Some((n.kind.as_str(), n.value)),
            _ => None,
        })
        .collect();
    assert_eq!(seen, [("NewHighestBid", Some(130))]);
}
