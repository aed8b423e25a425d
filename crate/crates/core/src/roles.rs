//! Role event handlers: user requests turned into transactions, and the
//! per-block supplier, consumer and proposer reactions, including the money
//! flow that follows a matching decision.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand_core::RngCore;

use crate::chain::{ChainState, MarketConfig};
use crate::encoding::Digest;
use crate::error::Rule;
use crate::escrow::{self, EscrowTerms, HeldPayment};
use crate::market::{MatchOutcome, TradeRecord};
use crate::policy::{self, SeedMaterial};
use crate::types::{
    commit_reserve_price, AssignmentTx, BidPayload, BlockNumber, FundsAttachment,
    ItemAdvertisement, LockPart, LockRef, NoAssignmentTx, NodeId, Payload, RevelationTx,
    TradeType, TransactionEnvelope, TxId, Units, MIN_SALT_LEN,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExpirationKind {
    Sale,
    Reveal,
    Eval,
    /// Last block of a descending-price bid window.
    DutchWindow,
    SafetyWindow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Expiration {
    pub ad_id: TxId,
    pub kind: ExpirationKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Counter {
    kind: ExpirationKind,
    remaining: u64,
    /// Reload value for periodic counters.
    period: Option<u64>,
}

/// Remaining-block counters for every unexpired trade and open escrow case.
/// Each counter loses one per applied block and fires when it reaches zero.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ExpirationTracker {
    trades: BTreeMap<(BlockNumber, TxId), Vec<Counter>>,
    escrows: BTreeMap<TxId, u64>,
}

impl ExpirationTracker {
    /// Registers the counters of a trade advertised in the block just applied.
    /// Returns expirations that are already due (a one-block Dutch window).
    pub fn track_trade(&mut self, trade: &TradeRecord) -> Vec<Expiration> {
        let ad = &trade.ad;
        let mut counters = alloc::vec![Counter { kind: ExpirationKind::Sale, remaining: ad.sale_duration, period: None }];
        if let (true, Some(r)) = (ad.reveal_flag, ad.reveal_duration) {
            counters.push(Counter { kind: ExpirationKind::Reveal, remaining: ad.sale_duration + r, period: None });
        }
        if let (true, Some(e)) = (ad.committee.is_some(), ad.eval_duration) {
            counters.push(Counter { kind: ExpirationKind::Eval, remaining: e, period: None });
        }
        let mut fired = Vec::new();
        if let (TradeType::DutchAuction, Some(w)) = (ad.trade_type, ad.bid_window) {
            if w == 1 {
                fired.push(Expiration { ad_id: trade.ad_id, kind: ExpirationKind::DutchWindow });
            }
            let remaining = if w == 1 { w } else { w - 1 };
            counters.push(Counter { kind: ExpirationKind::DutchWindow, remaining, period: Some(w) });
        }
        self.trades.insert((trade.ad_block, trade.ad_id), counters);
        fired
    }

    pub fn untrack_trade(&mut self, ad_id: &TxId) {
        self.trades.retain(|(_, id), _| id != ad_id);
    }

    /// Starts the safety-window countdown of a case opened in the block being
    /// applied. The tick of that same block is counted, hence the extra one.
    pub fn track_escrow(&mut self, ad_id: TxId, window: u64) {
        self.escrows.insert(ad_id, window + 1);
    }

    pub fn untrack_escrow(&mut self, ad_id: &TxId) {
        self.escrows.remove(ad_id);
    }

    pub fn is_tracked(&self, ad_id: &TxId) -> bool {
        self.trades.keys().any(|(_, id)| id == ad_id) || self.escrows.contains_key(ad_id)
    }

    /// Advances every counter by one block.
    pub fn tick(&mut self) -> Vec<Expiration> {
        let mut fired = Vec::new();
        for ((_, ad_id), counters) in self.trades.iter_mut() {
            counters.retain_mut(|c| {
                c.remaining = c.remaining.saturating_sub(1);
                if c.remaining > 0 {
                    return true;
                }
                fired.push(Expiration { ad_id: *ad_id, kind: c.kind });
                match c.period {
                    Some(p) => {
                        c.remaining = p;
                        true
                    }
                    None => false,
                }
            });
        }
        self.trades.retain(|_, c| !c.is_empty());
        self.escrows.retain(|ad_id, remaining| {
            *remaining = remaining.saturating_sub(1);
            if *remaining == 0 {
                fired.push(Expiration { ad_id: *ad_id, kind: ExpirationKind::SafetyWindow });
                false
            } else {
                true
            }
        });
        fired
    }
}

/// Whether an expiration fired at `block` makes the trade ready for matching.
/// Sale expiration is postponed for trades with a revelation or evaluation
/// phase; a Dutch window closes the trade once it holds bids, or once the
/// next window's price would drop below the floor.
pub fn matching_due(trade: &TradeRecord, kind: ExpirationKind, block: BlockNumber) -> bool {
    if trade.is_matched() || trade.matching_pending {
        return false;
    }
    match kind {
        ExpirationKind::Sale => !trade.ad.reveal_flag && trade.ad.committee.is_none(),
        ExpirationKind::Reveal | ExpirationKind::Eval => true,
        ExpirationKind::DutchWindow => {
            !trade.bids.is_empty()
                || policy::dutch_window_price(&trade.ad, trade.ad_block, block + 1).is_none()
        }
        ExpirationKind::SafetyWindow => false,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NotificationKind {
    ItemAssigned,
    NewHighestBid,
    DutchBidSeen,
    DutchPriceLowered,
    NoAssignment,
    DepositReturned,
    DisputeResolved,
}

impl NotificationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NotificationKind::ItemAssigned => "ItemAssigned",
            NotificationKind::NewHighestBid => "NewHighestBid",
            NotificationKind::DutchBidSeen => "DutchBidSeen",
            NotificationKind::DutchPriceLowered => "DutchPriceLowered",
            NotificationKind::NoAssignment => "NoAssignment",
            NotificationKind::DepositReturned => "DepositReturned",
            NotificationKind::DisputeResolved => "DisputeResolved",
        }
    }
}

/// A user-facing event. Goes to the trace only; never touches chain state.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Notification {
    pub target: NodeId,
    pub kind: NotificationKind,
    pub ad_id: TxId,
    pub value: Option<Units>,
}

/// Reserve price and salt a supplier keeps until revelation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReserveSecret {
    pub res_price: Units,
    pub salt: Vec<u8>,
}

/// Builds an advertisement transaction. With a reveal flag the reserve is
/// committed under a fresh salt from `rng`; the returned secret stays with the
/// supplier. Without the flag a reserve is carried publicly.
pub fn handle_user_advertise(
    supplier: &NodeId,
    mut ad: ItemAdvertisement,
    reserve: Option<Units>,
    funds: FundsAttachment,
    rng: &mut impl RngCore,
    nonce: u64,
) -> Result<(TransactionEnvelope, Option<ReserveSecret>), Rule> {
    let mut secret = None;
    match (ad.reveal_flag, reserve) {
        (true, Some(res_price)) => {
            let mut salt = alloc::vec![0u8; MIN_SALT_LEN];
            rng.fill_bytes(&mut salt);
            ad.reserve_hash = Some(commit_reserve_price(res_price, &salt)?);
            secret = Some(ReserveSecret { res_price, salt });
        }
        (false, Some(res_price)) => ad.public_reserve = Some(res_price),
        (_, None) => {}
    }
    ad.check_invariants().map_err(Rule::InvalidAdvertisement)?;
    let tx = TransactionEnvelope::new(supplier.clone(), Payload::Advertisement(ad), funds, nonce);
    Ok((tx, secret))
}

/// Builds a bid transaction, passing the content through the use-case
/// preprocessor when one is registered.
pub fn handle_user_bid(
    cfg: &MarketConfig,
    state: &ChainState,
    bidder: &NodeId,
    ad_id: TxId,
    content: Vec<u8>,
    funds: FundsAttachment,
    nonce: u64,
) -> Result<TransactionEnvelope, Rule> {
    let trade = state.trade(&ad_id).ok_or(Rule::UnknownAdvertisement)?;
    let content = match cfg.plugins.preprocessor() {
        Some(p) => p.preprocess(&trade.ad, content),
        None => content,
    };
    let payload = Payload::Bid(BidPayload { ad_id, content });
    Ok(TransactionEnvelope::new(bidder.clone(), payload, funds, nonce))
}

/// Supplier reaction to the head block: assignment notices for its own ads,
/// and the reserve revelation once a reveal trade's sale expired.
pub fn process_block_by_supplier(
    state: &ChainState,
    supplier: &NodeId,
    secrets: &BTreeMap<Digest, ReserveSecret>,
    withhold_reveal: bool,
) -> (Vec<Notification>, Vec<Payload>) {
    let head = state.height();
    let mut notes = Vec::new();
    let mut txs = Vec::new();
    for trade in state.market().trades().filter(|t| t.supplier == *supplier) {
        if let Some(m) = trade.outcome.as_ref().filter(|m| m.inclusion.block == head) {
            let kind = match m.outcome {
                MatchOutcome::Assigned { .. } => NotificationKind::ItemAssigned,
                MatchOutcome::NoAssignment => NotificationKind::NoAssignment,
            };
            notes.push(Notification { target: supplier.clone(), kind, ad_id: trade.ad_id, value: None });
        }
    }
    for exp in state.market().fired() {
        if exp.kind != ExpirationKind::Sale || withhold_reveal {
            continue;
        }
        let Some(trade) = state.trade(&exp.ad_id) else { continue };
        if trade.supplier != *supplier || !trade.ad.reveal_flag || trade.revelation.is_some() {
            continue;
        }
        if let Some(s) = trade.ad.reserve_hash.and_then(|h| secrets.get(&h)) {
            txs.push(Payload::Revelation(RevelationTx {
                ad_id: trade.ad_id,
                res_price: s.res_price,
                salt: s.salt.clone(),
            }));
        }
    }
    (notes, txs)
}

/// Consumer reaction to the head block for every advertisement it follows.
pub fn process_block_by_consumer(
    state: &ChainState,
    consumer: &NodeId,
    interest: &BTreeSet<TxId>,
) -> Vec<Notification> {
    let head = state.head();
    let b = head.number();
    let mut notes = Vec::new();
    let note = |kind, ad_id, value| Notification { target: consumer.clone(), kind, ad_id, value };
    for ad_id in interest {
        let Some(trade) = state.trade(ad_id) else { continue };
        if let Some(m) = trade.outcome.as_ref() {
            if m.inclusion.block == b {
                match &m.outcome {
                    MatchOutcome::Assigned { winning_bid, .. } => {
                        let price = trade.bid(winning_bid).and_then(|w| w.payment);
                        notes.push(note(NotificationKind::ItemAssigned, *ad_id, price));
                    }
                    MatchOutcome::NoAssignment => notes.push(note(NotificationKind::NoAssignment, *ad_id, None)),
                }
            }
        } else if b <= trade.deadlines.sale_end {
            let in_block: Vec<_> = trade.bids.iter().filter(|x| x.inclusion.block == b).collect();
            match trade.ad.trade_type {
                TradeType::EnglishAuction => {
                    if let Some(max) = in_block.iter().map(|x| x.price()).max() {
                        notes.push(note(NotificationKind::NewHighestBid, *ad_id, Some(max)));
                    }
                }
                TradeType::DutchAuction => {
                    if let Some(first) = in_block.first() {
                        notes.push(note(NotificationKind::DutchBidSeen, *ad_id, Some(first.price())));
                    } else if let Some(w) = trade.ad.bid_window {
                        let diff = b - trade.ad_block;
                        if diff > 0 && diff.is_multiple_of(w) {
                            if let Some(p) = policy::dutch_window_price(&trade.ad, trade.ad_block, b) {
                                notes.push(note(NotificationKind::DutchPriceLowered, *ad_id, Some(p)));
                            }
                        }
                    }
                }
                _ => {}
            }
        }
        for tx in head.txs() {
            match tx.payload() {
                Payload::FundsUnlock(LockRef { lock, part: LockPart::Deposit }) => {
                    if let Some(bid) = trade.bid(lock).filter(|x| x.bidder == *consumer) {
                        notes.push(note(NotificationKind::DepositReturned, *ad_id, bid.deposit));
                    }
                }
                Payload::DisputeResolution { ad_id: a, .. }
                    if a == ad_id && state.market().escrow_case(a).is_some_and(|c| c.is_party(consumer)) =>
                {
                    notes.push(note(NotificationKind::DisputeResolved, *ad_id, None));
                }
                _ => {}
            }
        }
    }
    notes
}

/// Block-proposer monitoring: for every trade the head block made ready for
/// matching, decide the outcome and emit the assignment (or no-assignment)
/// followed by its money-flow transactions; release escrow cases whose
/// safety window elapsed. Only the proposer of the next block runs this.
pub fn process_block_by_proposer(cfg: &MarketConfig, state: &ChainState) -> Vec<Payload> {
    let head = state.head();
    let mut out = Vec::new();
    let mut done = BTreeSet::new();
    for exp in state.market().fired() {
        if !done.insert(exp.ad_id) {
            continue;
        }
        if exp.kind == ExpirationKind::SafetyWindow {
            if let Some(case) = state.market().escrow_case(&exp.ad_id) {
                if let Ok(p) = escrow::release_after_safety_window(case, head.number() + 1) {
                    out.push(p);
                }
            }
            continue;
        }
        let Some(trade) = state.trade(&exp.ad_id) else { continue };
        if !trade.matching_pending || trade.is_matched() {
            continue;
        }
        out.extend(match_trade(cfg, state, trade));
    }
    out
}

/// Outcome and money flow of one trade whose matching fired at the head block.
pub fn match_trade(cfg: &MarketConfig, state: &ChainState, trade: &TradeRecord) -> Vec<Payload> {
    let head = state.head();
    let seed = SeedMaterial { trigger_block_digest: *head.digest(), ad_id: trade.ad_id };
    let bids = trade.bids_up_to(head.number());
    let plugins = cfg.plugins.plugins_for(trade.ad.trade_type);
    let mut winner = policy::select_winning_bid(trade, bids, &seed, plugins);
    if trade.ad.reveal_flag {
        let reserve_met = match (winner, &trade.revelation) {
            (Some(w), Some(rev)) => w.price() >= rev.res_price,
            _ => false,
        };
        if !reserve_met {
            winner = None;
        }
    }
    let winner_id = winner.map(|w| w.bid_id);
    let escrow_node = match (winner_id, trade.ad.physical) {
        (Some(_), true) => cfg.roster.escrow_node().cloned(),
        _ => None,
    };
    let flow = resolve_money_flow(state, trade, winner_id, head.proposer(), escrow_node.is_some());
    let mut out = Vec::with_capacity(flow.txs.len() + 1);
    match winner_id {
        Some(w) => {
            let escrow = escrow_node.map(|escrow| EscrowTerms {
                escrow,
                safety_window: trade.ad.safety_window.unwrap_or(cfg.default_safety_window),
                held_payments: flow.held_payments,
                held_deposits: flow.held_deposits,
            });
            out.push(Payload::Assignment(AssignmentTx {
                ad_id: trade.ad_id,
                winning_bid: w,
                trigger_block: head.number(),
                escrow,
            }));
        }
        None => out.push(Payload::NoAssignment(NoAssignmentTx { ad_id: trade.ad_id, trigger_block: head.number() })),
    }
    out.extend(flow.txs);
    out
}

/// Fund movements decided at matching time.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MoneyFlow {
    /// Proposer transactions to emit after the matching transaction.
    pub txs: Vec<Payload>,
    /// Parts routed to the escrow instead of moving now.
    pub held_payments: Vec<HeldPayment>,
    pub held_deposits: Vec<LockRef>,
}

/// Settles the advertisement's and every bid's locked funds for a decided
/// outcome. `winning_bid` is `None` for a no-assignment outcome. A supplier
/// that never revealed a committed reserve forfeits its deposit to
/// `trigger_proposer`. With `via_escrow` the winner's payment and both
/// deposits are held for the escrow case instead.
pub fn resolve_money_flow(
    state: &ChainState,
    trade: &TradeRecord,
    winning_bid: Option<TxId>,
    trigger_proposer: &NodeId,
    via_escrow: bool,
) -> MoneyFlow {
    let mut flow = MoneyFlow::default();
    let locked = |lock: TxId, part: LockPart| {
        state.locked().get(&lock).filter(|e| e.part(part) > 0).map(|_| LockRef { lock, part })
    };
    let winner = winning_bid.and_then(|w| trade.bid(&w));

    if let Some(r) = locked(trade.ad_id, LockPart::Payment) {
        match winner {
            Some(w) if via_escrow => flow.held_payments.push(HeldPayment { from: r, payee: w.bidder.clone() }),
            Some(w) => flow.txs.push(Payload::FundsTransfer { from: r, to: w.bidder.clone() }),
            None => flow.txs.push(Payload::FundsUnlock(r)),
        }
    }
    if let Some(r) = locked(trade.ad_id, LockPart::Deposit) {
        if trade.ad.reveal_flag && trade.revelation.is_none() {
            flow.txs.push(Payload::FundsTransfer { from: r, to: trigger_proposer.clone() });
        } else if winner.is_some() && via_escrow {
            flow.held_deposits.push(r);
        } else {
            flow.txs.push(Payload::FundsUnlock(r));
        }
    }
    for bid in &trade.bids {
        let won = Some(bid.bid_id) == winning_bid;
        if let Some(r) = locked(bid.bid_id, LockPart::Payment) {
            match (won, via_escrow) {
                (true, true) => flow.held_payments.push(HeldPayment { from: r, payee: trade.supplier.clone() }),
                (true, false) => flow.txs.push(Payload::FundsTransfer { from: r, to: trade.supplier.clone() }),
                (false, _) => flow.txs.push(Payload::FundsUnlock(r)),
            }
        }
        if let Some(r) = locked(bid.bid_id, LockPart::Deposit) {
            if won && via_escrow {
                flow.held_deposits.push(r);
            } else {
                flow.txs.push(Payload::FundsUnlock(r));
            }
        }
    }
    flow
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::FundsAttachment;

    fn dutch(window: u64) -> TradeRecord {
        let mut ad = ItemAdvertisement::new(*b"x", TradeType::DutchAuction, 20);
        ad.start_price = Some(100);
        ad.bid_window = Some(window);
        ad.min_increment = Some(10);
        TradeRecord::new(Digest::of(b"ad"), "s".into(), ad, 4, FundsAttachment::NONE)
    }

    #[test]
    fn sale_counter_fires_at_sale_end() {
        let mut ad = ItemAdvertisement::new(*b"x", TradeType::EnglishAuction, 3);
        ad.start_price = Some(1);
        ad.min_increment = Some(1);
        let t = TradeRecord::new(Digest::of(b"ad"), "s".into(), ad, 10, FundsAttachment::NONE);
        let mut tr = ExpirationTracker::default();
        assert!(tr.track_trade(&t).is_empty());
        assert!(tr.tick().is_empty()); // block 11
        assert!(tr.tick().is_empty()); // block 12
        let fired = tr.tick(); // block 13 = sale end
        assert_eq!(fired, [Expiration { ad_id: t.ad_id, kind: ExpirationKind::Sale }]);
        assert!(tr.tick().is_empty());
        assert!(!tr.is_tracked(&t.ad_id));
    }

    #[test]
    fn dutch_window_fires_at_last_block_of_each_window() {
        let t = dutch(5);
        let mut tr = ExpirationTracker::default();
        tr.track_trade(&t);
        let mut at = Vec::new();
        for block in 5..=20 {
            if tr.tick().iter().any(|e| e.kind == ExpirationKind::DutchWindow) {
                at.push(block);
            }
        }
        // windows [4,8], [9,13], [14,18]
        assert_eq!(at, [8, 13, 18]);
    }

    #[test]
    fn one_block_dutch_window_fires_immediately() {
        let t = dutch(1);
        let mut tr = ExpirationTracker::default();
        assert_eq!(tr.track_trade(&t).len(), 1);
        assert_eq!(tr.tick().len(), 1);
    }

    #[test]
    fn escrow_counter_counts_the_opening_block() {
        let id = Digest::of(b"ad");
        let mut tr = ExpirationTracker::default();
        tr.track_escrow(id, 2);
        assert!(tr.tick().is_empty()); // opening block
        assert!(tr.tick().is_empty());
        assert_eq!(tr.tick()[0].kind, ExpirationKind::SafetyWindow);
    }

    #[test]
    fn sale_postponed_for_reveal_trades() {
        let mut t = dutch(5);
        assert!(!matching_due(&t, ExpirationKind::DutchWindow, 8));
        t.ad.trade_type = TradeType::EnglishAuction;
        assert!(matching_due(&t, ExpirationKind::Sale, 24));
        t.ad.reveal_flag = true;
        assert!(!matching_due(&t, ExpirationKind::Sale, 24));
        assert!(matching_due(&t, ExpirationKind::Reveal, 27));
    }

    #[test]
    fn empty_dutch_window_closes_at_reserve() {
        let mut t = dutch(5);
        t.ad.public_reserve = Some(80);
        // window 2 (price 80) closes at block 18; next would be 70 < 80
        assert!(!matching_due(&t, ExpirationKind::DutchWindow, 13));
        assert!(matching_due(&t, ExpirationKind::DutchWindow, 18));
    }
}
