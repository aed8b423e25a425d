//! Replicated marketplace index: every trade's advertisement, bids,
//! revelation, evaluations and matching outcome, as folded from the ledger.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use crate::escrow::EscrowCase;
use crate::roles::{Expiration, ExpirationTracker};
use crate::types::{
    BidTx, BlockNumber, Deadlines, EvaluationForm, FundsAttachment, Inclusion, ItemAdvertisement,
    NodeId, TradeLifecycle, TxId, Units,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevealRecord {
    pub tx_id: TxId,
    pub res_price: Units,
    pub inclusion: Inclusion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationRecord {
    pub eval_id: TxId,
    pub evaluator: NodeId,
    pub form: EvaluationForm,
    pub inclusion: Inclusion,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MatchOutcome {
    Assigned { winning_bid: TxId, winner: NodeId },
    NoAssignment,
}

/// The terminal matching transaction of a trade as found in the ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchRecord {
    pub outcome: MatchOutcome,
    pub trigger_block: BlockNumber,
    pub tx_id: TxId,
    pub inclusion: Inclusion,
}

/// Everything the ledger knows about one advertisement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradeRecord {
    pub ad_id: TxId,
    pub supplier: NodeId,
    pub ad: ItemAdvertisement,
    pub ad_block: BlockNumber,
    /// Payment and deposit attached to the advertisement.
    pub funds: FundsAttachment,
    pub deadlines: Deadlines,
    /// Bids in inclusion order.
    pub bids: Vec<BidTx>,
    pub revelation: Option<RevealRecord>,
    pub evaluations: Vec<EvaluationRecord>,
    pub outcome: Option<MatchRecord>,
    pub lifecycle: TradeLifecycle,
    /// Set once an expiration made the trade ready for matching; no further
    /// bids or evaluations are admitted.
    pub matching_pending: bool,
    /// Locked entries (advertisement and bids) still holding funds.
    pub open_locks: u32,
}

impl TradeRecord {
    pub fn new(
        ad_id: TxId,
        supplier: NodeId,
        ad: ItemAdvertisement,
        ad_block: BlockNumber,
        funds: FundsAttachment,
    ) -> Self {
        let deadlines = ad.deadlines(ad_block);
        Self {
            ad_id,
            supplier,
            lifecycle: TradeLifecycle::new(ad_id, deadlines),
            ad,
            ad_block,
            funds,
            deadlines,
            bids: Vec::new(),
            revelation: None,
            evaluations: Vec::new(),
            outcome: None,
            matching_pending: false,
            open_locks: 0,
        }
    }

    pub fn highest_price(&self) -> Option<Units> {
        self.bids.iter().map(BidTx::price).max()
    }

    pub fn bid(&self, bid_id: &TxId) -> Option<&BidTx> {
        self.bids.iter().find(|b| b.bid_id == *bid_id)
    }

    /// Bids included in blocks up to and including `block`.
    pub fn bids_up_to(&self, block: BlockNumber) -> &[BidTx] {
        let n = self.bids.partition_point(|b| b.inclusion.block <= block);
        &self.bids[..n]
    }

    pub fn is_matched(&self) -> bool {
        self.outcome.is_some()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MarketIndex {
    pub(crate) trades: BTreeMap<TxId, TradeRecord>,
    /// Locked entry id -> advertisement id.
    pub(crate) lock_trade: BTreeMap<TxId, TxId>,
    pub(crate) escrows: BTreeMap<TxId, EscrowCase>,
    pub(crate) tracker: ExpirationTracker,
    /// Expirations fired by the head block.
    pub(crate) fired: Vec<Expiration>,
}

impl MarketIndex {
    pub fn trade(&self, ad_id: &TxId) -> Option<&TradeRecord> {
        self.trades.get(ad_id)
    }

    pub fn trades(&self) -> impl Iterator<Item = &TradeRecord> {
        self.trades.values()
    }

    pub fn escrow_case(&self, ad_id: &TxId) -> Option<&EscrowCase> {
        self.escrows.get(ad_id)
    }

    pub fn escrow_cases(&self) -> impl Iterator<Item = &EscrowCase> {
        self.escrows.values()
    }

    pub fn fired(&self) -> &[Expiration] {
        &self.fired
    }

    pub fn tracker(&self) -> &ExpirationTracker {
        &self.tracker
    }

    /// The trade a locked entry belongs to.
    pub fn trade_of_lock(&self, lock: &TxId) -> Option<&TxId> {
        self.lock_trade.get(lock)
    }
}
