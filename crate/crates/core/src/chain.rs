//! Simulated blockchain: roster, blocks, the replicated account ledger with
//! locked funds, the transaction pool and the three-stage validation pipeline.

use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::encoding::{Digest, Encoder};
use crate::error::{InvalidBlock, Rule, Stage, ValidationFailed};
use crate::escrow::{EscrowCase, EscrowState, EscrowTerms, DEFAULT_SAFETY_WINDOW};
use crate::market::{EvaluationRecord, MarketIndex, MatchOutcome, MatchRecord, RevealRecord, TradeRecord};
use crate::policy::{self, PluginRegistry};
use crate::roles::{self, ExpirationKind};
use crate::types::{
    verify_reserve_price, BidTx, BlockNumber, EvaluationForm, Inclusion, LockPart, LockRef,
    NodeId, Payload, Role, RoleSet, TradePhase, TradeType, TransactionEnvelope, TxId, Units,
    MIN_SALT_LEN,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Member {
    pub id: NodeId,
    pub roles: RoleSet,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RosterError {
    #[error("empty node id")]
    EmptyId,
    #[error("duplicate node id {0}")]
    Duplicate(NodeId),
    #[error("roster declares no proposer")]
    NoProposer,
}

/// Declared nodes and their roles, in declaration order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Roster {
    members: Vec<Member>,
    proposers: Vec<NodeId>,
}

impl Roster {
    pub fn new(members: Vec<Member>) -> Result<Self, RosterError> {
        let mut seen = BTreeSet::new();
        for m in &members {
            if m.id.as_str().is_empty() {
                return Err(RosterError::EmptyId);
            }
            if !seen.insert(m.id.clone()) {
                return Err(RosterError::Duplicate(m.id.clone()));
            }
        }
        let proposers: Vec<NodeId> = members
            .iter()
            .filter(|m| m.roles.contains(Role::Proposer))
            .map(|m| m.id.clone())
            .collect();
        if proposers.is_empty() {
            return Err(RosterError::NoProposer);
        }
        Ok(Self { members, proposers })
    }

    pub fn members(&self) -> &[Member] {
        &self.members
    }

    pub fn proposers(&self) -> &[NodeId] {
        &self.proposers
    }

    pub fn roles_of(&self, id: &NodeId) -> Option<RoleSet> {
        self.members.iter().find(|m| m.id == *id).map(|m| m.roles)
    }

    pub fn contains(&self, id: &NodeId) -> bool {
        self.roles_of(id).is_some()
    }

    /// Round-robin proposer of block `number`.
    pub fn proposer_for(&self, number: BlockNumber) -> &NodeId {
        &self.proposers[(number % self.proposers.len() as u64) as usize]
    }

    /// The escrow identity physical-goods trades settle through.
    pub fn escrow_node(&self) -> Option<&NodeId> {
        self.members
            .iter()
            .find(|m| m.roles.contains(Role::Escrow))
            .map(|m| &m.id)
    }
}

/// Static marketplace configuration shared by every node.
#[derive(Debug, Clone)]
pub struct MarketConfig {
    pub roster: Roster,
    pub plugins: PluginRegistry,
    pub default_safety_window: u64,
    pub block_tx_cap: Option<usize>,
}

impl MarketConfig {
    pub fn new(roster: Roster) -> Self {
        Self {
            roster,
            plugins: PluginRegistry::default(),
            default_safety_window: DEFAULT_SAFETY_WINDOW,
            block_tx_cap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    number: BlockNumber,
    parent: Digest,
    digest: Digest,
    proposer: NodeId,
    txs: Vec<TransactionEnvelope>,
}

impl Block {
    pub fn new(
        number: BlockNumber,
        parent: Digest,
        proposer: NodeId,
        txs: Vec<TransactionEnvelope>,
    ) -> Self {
        let digest = Self::compute_digest(number, &parent, &txs);
        Self { number, parent, digest, proposer, txs }
    }

    /// Fixed block 0 with no transactions.
    pub fn genesis(proposer: NodeId) -> Self {
        Self::new(0, Digest::ZERO, proposer, Vec::new())
    }

    /// Digest over (number, parent digest, tx id list).
    pub fn compute_digest(number: BlockNumber, parent: &Digest, txs: &[TransactionEnvelope]) -> Digest {
        let mut enc = Encoder::new();
        enc.u64(number).digest(parent).len(txs.len());
        for tx in txs {
            enc.digest(&tx.id());
        }
        Digest::of(&enc.finish())
    }

    /// Rebuilds a block with an arbitrary stored digest; for fault injection.
    pub fn with_forged_digest(mut self, digest: Digest) -> Self {
        self.digest = digest;
        self
    }

    pub fn number(&self) -> BlockNumber {
        self.number
    }

    pub fn parent(&self) -> &Digest {
        &self.parent
    }

    pub fn digest(&self) -> &Digest {
        &self.digest
    }

    pub fn proposer(&self) -> &NodeId {
        &self.proposer
    }

    pub fn txs(&self) -> &[TransactionEnvelope] {
        &self.txs
    }

    pub fn digest_is_valid(&self) -> bool {
        Self::compute_digest(self.number, &self.parent, &self.txs) == self.digest
    }
}

/// Funds locked by one transaction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LockEntry {
    pub owner: NodeId,
    pub payment: Units,
    pub deposit: Units,
}

impl LockEntry {
    pub fn part(&self, part: LockPart) -> Units {
        match part {
            LockPart::Payment => self.payment,
            LockPart::Deposit => self.deposit,
        }
    }

    fn take(&mut self, part: LockPart) -> Units {
        match part {
            LockPart::Payment => core::mem::take(&mut self.payment),
            LockPart::Deposit => core::mem::take(&mut self.deposit),
        }
    }

    pub fn total(&self) -> u128 {
        self.payment as u128 + self.deposit as u128
    }
}

/// Where a transaction is being validated: the block it would land in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockContext {
    pub number: BlockNumber,
    pub proposer: NodeId,
}

/// Replicated ledger state: a pure fold of [`ChainState::apply_block`] over
/// the blocks from a fixed genesis allocation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainState {
    blocks: Vec<Arc<Block>>,
    balances: BTreeMap<NodeId, Units>,
    locked: BTreeMap<TxId, LockEntry>,
    market: MarketIndex,
    seen: BTreeSet<TxId>,
    genesis_total: u128,
}

impl ChainState {
    /// State after the genesis block. Every roster member gets an account;
    /// members missing from `allocation` start at zero.
    pub fn genesis(roster: &Roster, allocation: &BTreeMap<NodeId, Units>) -> Self {
        let balances: BTreeMap<NodeId, Units> = roster
            .members()
            .iter()
            .map(|m| (m.id.clone(), allocation.get(&m.id).copied().unwrap_or(0)))
            .collect();
        let genesis_total = balances.values().map(|v| *v as u128).sum();
        Self {
            blocks: alloc::vec![Arc::new(Block::genesis(roster.proposer_for(0).clone()))],
            balances,
            locked: BTreeMap::new(),
            market: MarketIndex::default(),
            seen: BTreeSet::new(),
            genesis_total,
        }
    }

    pub fn head(&self) -> &Block {
        self.blocks.last().expect("genesis present")
    }

    pub fn height(&self) -> BlockNumber {
        self.head().number()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &Block> {
        self.blocks.iter().map(|b| b.as_ref())
    }

    pub fn block(&self, number: BlockNumber) -> Option<&Block> {
        self.blocks.get(number as usize).map(|b| b.as_ref())
    }

    pub fn balance(&self, id: &NodeId) -> Units {
        self.balances.get(id).copied().unwrap_or(0)
    }

    pub fn balances(&self) -> &BTreeMap<NodeId, Units> {
        &self.balances
    }

    pub fn locked(&self) -> &BTreeMap<TxId, LockEntry> {
        &self.locked
    }

    pub fn market(&self) -> &MarketIndex {
        &self.market
    }

    pub fn trade(&self, ad_id: &TxId) -> Option<&TradeRecord> {
        self.market.trade(ad_id)
    }

    pub fn contains_tx(&self, id: &TxId) -> bool {
        self.seen.contains(id)
    }

    pub fn genesis_total(&self) -> u128 {
        self.genesis_total
    }

    /// Sum of balances plus every locked amount.
    pub fn total_supply(&self) -> u128 {
        let free: u128 = self.balances.values().map(|v| *v as u128).sum();
        let locked: u128 = self.locked.values().map(LockEntry::total).sum();
        free + locked
    }

    pub fn is_conserved(&self) -> bool {
        self.total_supply() == self.genesis_total
    }

    /// Digest of the replicated state: head, accounts, locks, trade phases and
    /// escrow states. Equal digests on two nodes mean identical ledgers.
    pub fn state_digest(&self) -> Digest {
        let mut enc = Encoder::new();
        enc.digest(self.head().digest()).len(self.balances.len());
        for (id, v) in &self.balances {
            enc.str(id.as_str()).u64(*v);
        }
        enc.len(self.locked.len());
        for (id, l) in &self.locked {
            enc.digest(id).str(l.owner.as_str()).u64(l.payment).u64(l.deposit);
        }
        enc.len(self.market.trades.len());
        for (id, t) in &self.market.trades {
            enc.digest(id).tag(t.lifecycle.phase as u8).len(t.bids.len());
            match &t.outcome {
                None => enc.tag(0),
                Some(m) => enc.tag(1).digest(&m.tx_id),
            };
        }
        enc.len(self.market.escrows.len());
        for (id, c) in &self.market.escrows {
            enc.digest(id).tag(c.state as u8);
        }
        Digest::of(&enc.finish())
    }

    /// Runs the chain, platform and use-case checks for `tx` landing in the
    /// block described by `ctx`, against this state.
    pub fn validate_tx(
        &self,
        cfg: &MarketConfig,
        tx: &TransactionEnvelope,
        ctx: &BlockContext,
    ) -> Result<(), ValidationFailed> {
        self.validate_chain(cfg, tx, ctx).map_err(ValidationFailed::chain)?;
        self.validate_platform(cfg, tx, ctx).map_err(ValidationFailed::platform)?;
        if let Some(cb) = cfg.plugins.validation() {
            cb.check(tx, self).map_err(ValidationFailed::use_case)?;
        }
        Ok(())
    }

    fn validate_chain(&self, cfg: &MarketConfig, tx: &TransactionEnvelope, ctx: &BlockContext) -> Result<(), Rule> {
        let sender = tx.sender();
        let roles = cfg
            .roster
            .roles_of(sender)
            .ok_or_else(|| Rule::UnknownSender(sender.clone()))?;
        let kind = tx.kind();
        if kind.is_proposer_created() && !roles.contains(Role::Proposer) {
            return Err(Rule::ProposerOnlyKind);
        }
        if kind.is_proposer_created() && *sender != ctx.proposer {
            return Err(Rule::NotProposer);
        }
        let required = match tx.payload() {
            Payload::Advertisement(_) => Some(Role::Supplier),
            Payload::Bid(_) => Some(Role::Consumer),
            Payload::Evaluation(_) => Some(Role::Committee),
            _ => None,
        };
        if let Some(role) = required {
            if !roles.contains(role) {
                return Err(Rule::MissingRole(role));
            }
        }
        let funds = tx.funds();
        if !matches!(tx.payload(), Payload::Advertisement(_) | Payload::Bid(_)) && !funds.is_empty() {
            return Err(Rule::UnexpectedFunds);
        }
        if self.seen.contains(&tx.id()) {
            return Err(Rule::DuplicateTx);
        }
        let available = self.balance(sender);
        let needed = funds.total().ok_or(Rule::InsufficientBalance { needed: Units::MAX, available })?;
        if needed > available {
            return Err(Rule::InsufficientBalance { needed, available });
        }
        Ok(())
    }

    fn trade_for(&self, ad_id: &TxId) -> Result<&TradeRecord, Rule> {
        self.market.trades.get(ad_id).ok_or(Rule::UnknownAdvertisement)
    }

    fn escrow_for(&self, ad_id: &TxId) -> Result<&EscrowCase, Rule> {
        self.market.escrows.get(ad_id).ok_or(Rule::NoEscrowCase)
    }

    fn check_lock(&self, r: &LockRef) -> Result<(), Rule> {
        let entry = self.locked.get(&r.lock).ok_or(Rule::UnknownLock)?;
        if entry.part(r.part) == 0 {
            return Err(Rule::LockPartEmpty);
        }
        Ok(())
    }

    fn validate_platform(&self, cfg: &MarketConfig, tx: &TransactionEnvelope, ctx: &BlockContext) -> Result<(), Rule> {
        let sender = tx.sender();
        match tx.payload() {
            Payload::Advertisement(ad) => {
                ad.check_invariants().map_err(Rule::InvalidAdvertisement)?;
                if let Some(com) = &ad.committee {
                    if com.windows(2).any(|w| w[0] >= w[1]) {
                        return Err(Rule::InvalidAdvertisement(crate::error::AdDefect::EmptyCommittee));
                    }
                    if let Some(unknown) = com.iter().find(|c| !cfg.roster.contains(c)) {
                        return Err(Rule::UnknownIdentity(unknown.clone()));
                    }
                }
                if ad.physical && cfg.roster.escrow_node().is_none() {
                    return Err(Rule::NoEscrowConfigured);
                }
                Ok(())
            }
            Payload::Bid(bid) => {
                let trade = self.trade_for(&bid.ad_id)?;
                if trade.matching_pending {
                    return Err(Rule::TradeAlreadyMatched);
                }
                policy::validate_bid_for_trade(tx.funds(), &bid.content, trade, ctx.number)
            }
            Payload::Revelation(rev) => {
                let trade = self.trade_for(&rev.ad_id)?;
                if !trade.ad.reveal_flag || trade.ad.reserve_hash.is_none() {
                    return Err(Rule::NotARevealTrade);
                }
                if *sender != trade.supplier {
                    return Err(Rule::NotSupplier);
                }
                let end = trade.deadlines.reveal_end.unwrap_or(trade.deadlines.sale_end);
                if ctx.number <= trade.deadlines.sale_end || ctx.number > end {
                    return Err(Rule::RevealWindowClosed);
                }
                if trade.revelation.is_some() {
                    return Err(Rule::AlreadyRevealed);
                }
                if rev.salt.len() < MIN_SALT_LEN {
                    return Err(Rule::SaltTooShort);
                }
                if !verify_reserve_price(rev, &trade.ad)? {
                    return Err(Rule::HashMismatch);
                }
                Ok(())
            }
            Payload::Evaluation(ev) => {
                let trade = self.trade_for(&ev.ad_id)?;
                if !trade.ad.trade_type.uses_committee() {
                    return Err(Rule::NotACommitteeTrade);
                }
                if !trade.ad.in_committee(sender) {
                    return Err(Rule::NotInCommittee);
                }
                let end = trade.deadlines.eval_end.unwrap_or(trade.deadlines.sale_end);
                if ctx.number <= trade.ad_block || ctx.number > end {
                    return Err(Rule::EvalWindowClosed);
                }
                if trade.is_matched() || trade.matching_pending {
                    return Err(Rule::TradeAlreadyMatched);
                }
                let (bid_id, is_decision) = match (&ev.form, trade.ad.trade_type) {
                    (EvaluationForm::Decision(b), TradeType::CommitteeEvalAndRanking) => (b, true),
                    (EvaluationForm::Scores { bid, scores }, TradeType::CommitteeEvalCustomRanking) => {
                        let expected = trade.ad.score_dimension();
                        if scores.len() != expected {
                            return Err(Rule::ScoreDimension { expected, got: scores.len() });
                        }
                        (bid, false)
                    }
                    _ => return Err(Rule::WrongEvaluationForm),
                };
                if trade.bid(bid_id).is_none() {
                    return Err(Rule::UnknownBid);
                }
                let duplicate = trade.evaluations.iter().any(|e| {
                    e.evaluator == *sender
                        && match &e.form {
                            EvaluationForm::Decision(_) => is_decision,
                            EvaluationForm::Scores { bid, .. } => !is_decision && bid == bid_id,
                        }
                });
                if duplicate {
                    return Err(Rule::DuplicateEvaluation);
                }
                Ok(())
            }
            Payload::Assignment(a) => {
                let trade = self.trade_for(&a.ad_id)?;
                if trade.is_matched() {
                    return Err(Rule::TradeAlreadyMatched);
                }
                if trade.bid(&a.winning_bid).is_none() {
                    return Err(Rule::ForeignWinningBid);
                }
                if let Some(terms) = &a.escrow {
                    self.check_escrow_terms(cfg, terms)?;
                }
                Ok(())
            }
            Payload::NoAssignment(n) => {
                let trade = self.trade_for(&n.ad_id)?;
                if trade.is_matched() {
                    return Err(Rule::TradeAlreadyMatched);
                }
                Ok(())
            }
            Payload::FundsUnlock(r) => self.check_lock(r),
            Payload::FundsTransfer { from, to } => {
                self.check_lock(from)?;
                if !cfg.roster.contains(to) {
                    return Err(Rule::UnknownIdentity(to.clone()));
                }
                Ok(())
            }
            Payload::ArbitrationRequest { ad_id } => self.escrow_for(ad_id)?.check_dispute(sender),
            Payload::DisputeResolution { ad_id, refundee } => {
                self.escrow_for(ad_id)?.check_resolution(sender, refundee)
            }
            Payload::EscrowRelease { ad_id } => self.escrow_for(ad_id)?.check_release(ctx.number),
            Payload::DeliveryRecord { ad_id } => self.escrow_for(ad_id)?.check_delivery(sender),
        }
    }

    fn check_escrow_terms(&self, cfg: &MarketConfig, terms: &EscrowTerms) -> Result<(), Rule> {
        if !cfg
            .roster
            .roles_of(&terms.escrow)
            .is_some_and(|r| r.contains(Role::Escrow))
        {
            return Err(Rule::NoEscrowConfigured);
        }
        for held in terms.held_payments.iter().map(|p| &p.from).chain(&terms.held_deposits) {
            self.check_lock(held)?;
        }
        Ok(())
    }

    /// Validates `tx` and applies its effects in place.
    pub fn apply_tx(
        &mut self,
        cfg: &MarketConfig,
        tx: &TransactionEnvelope,
        ctx: &BlockContext,
        index: u32,
    ) -> Result<(), ValidationFailed> {
        self.validate_tx(cfg, tx, ctx)?;
        self.apply_validated(cfg, tx, Inclusion { block: ctx.number, index });
        Ok(())
    }

    fn apply_validated(&mut self, cfg: &MarketConfig, tx: &TransactionEnvelope, at: Inclusion) {
        let id = tx.id();
        let sender = tx.sender().clone();
        self.seen.insert(id);

        let funds = *tx.funds();
        if !funds.is_empty() {
            let total = funds.total().expect("checked at validation");
            let bal = self.balances.entry(sender.clone()).or_insert(0);
            *bal -= total;
            self.locked.insert(
                id,
                LockEntry { owner: sender.clone(), payment: funds.payment_amount(), deposit: funds.deposit_amount() },
            );
        }

        match tx.payload() {
            Payload::Advertisement(ad) => {
                let mut trade = TradeRecord::new(id, sender, ad.clone(), at.block, funds);
                if !funds.is_empty() {
                    trade.open_locks += 1;
                    self.market.lock_trade.insert(id, id);
                }
                self.market.trades.insert(id, trade);
            }
            Payload::Bid(bid) => {
                let trade = self.market.trades.get_mut(&bid.ad_id).expect("validated");
                trade.bids.push(BidTx {
                    bid_id: id,
                    ad_id: bid.ad_id,
                    bidder: sender,
                    content: bid.content.clone(),
                    payment: funds.payment,
                    deposit: funds.deposit,
                    inclusion: at,
                });
                if !funds.is_empty() {
                    trade.open_locks += 1;
                    self.market.lock_trade.insert(id, bid.ad_id);
                }
            }
            Payload::Revelation(rev) => {
                let trade = self.market.trades.get_mut(&rev.ad_id).expect("validated");
                trade.revelation = Some(RevealRecord { tx_id: id, res_price: rev.res_price, inclusion: at });
            }
            Payload::Evaluation(ev) => {
                let trade = self.market.trades.get_mut(&ev.ad_id).expect("validated");
                trade.evaluations.push(EvaluationRecord {
                    eval_id: id,
                    evaluator: sender,
                    form: ev.form.clone(),
                    inclusion: at,
                });
            }
            Payload::Assignment(a) => {
                self.market.tracker.untrack_trade(&a.ad_id);
                let trade = self.market.trades.get_mut(&a.ad_id).expect("validated");
                let winner = trade.bid(&a.winning_bid).expect("validated").bidder.clone();
                trade.outcome = Some(MatchRecord {
                    outcome: MatchOutcome::Assigned { winning_bid: a.winning_bid, winner: winner.clone() },
                    trigger_block: a.trigger_block,
                    tx_id: id,
                    inclusion: at,
                });
                trade.lifecycle.winning_bid = Some(a.winning_bid);
                advance(trade, TradePhase::Assigned);
                let supplier = trade.supplier.clone();
                if let Some(terms) = &a.escrow {
                    advance(trade, TradePhase::EscrowOpen);
                    let case = self.open_escrow(a.ad_id, terms.clone(), supplier, winner, at.block);
                    self.market.tracker.track_escrow(a.ad_id, case.safety_window());
                    self.market.escrows.insert(a.ad_id, case);
                }
            }
            Payload::NoAssignment(n) => {
                self.market.tracker.untrack_trade(&n.ad_id);
                let trade = self.market.trades.get_mut(&n.ad_id).expect("validated");
                trade.outcome = Some(MatchRecord {
                    outcome: MatchOutcome::NoAssignment,
                    trigger_block: n.trigger_block,
                    tx_id: id,
                    inclusion: at,
                });
                advance(trade, TradePhase::NoAssignment);
            }
            Payload::FundsUnlock(r) => {
                let owner = self.locked[&r.lock].owner.clone();
                self.move_locked(r, &owner);
            }
            Payload::FundsTransfer { from, to } => {
                self.move_locked(from, to);
            }
            Payload::ArbitrationRequest { ad_id } => {
                self.market.tracker.untrack_escrow(ad_id);
                if let Some(case) = self.market.escrows.get_mut(ad_id) {
                    case.state = EscrowState::Disputed;
                }
                if let Some(trade) = self.market.trades.get_mut(ad_id) {
                    advance(trade, TradePhase::Disputed);
                }
            }
            Payload::DisputeResolution { ad_id, refundee } => {
                self.settle_escrow(ad_id, Some(refundee.clone()), EscrowState::Resolved);
            }
            Payload::EscrowRelease { ad_id } => {
                self.settle_escrow(ad_id, None, EscrowState::Released);
            }
            Payload::DeliveryRecord { ad_id } => {
                if let Some(case) = self.market.escrows.get_mut(ad_id) {
                    case.state = EscrowState::DeliveryRecorded;
                }
            }
        }
        let _ = cfg;
    }

    fn open_escrow(
        &self,
        ad_id: TxId,
        terms: EscrowTerms,
        supplier: NodeId,
        winner: NodeId,
        opened_at: BlockNumber,
    ) -> EscrowCase {
        let amount = |r: &LockRef| self.locked.get(&r.lock).map_or(0, |l| l.part(r.part));
        let held_payment = terms.held_payments.iter().map(|p| amount(&p.from)).sum();
        let mut supplier_dep = 0;
        let mut winner_dep = 0;
        for d in &terms.held_deposits {
            let owner = self.locked.get(&d.lock).map(|l| &l.owner);
            if owner == Some(&supplier) {
                supplier_dep += amount(d);
            } else {
                winner_dep += amount(d);
            }
        }
        EscrowCase {
            ad_id,
            escrow: terms.escrow.clone(),
            supplier,
            winner,
            terms,
            held_payment,
            held_deposits: (supplier_dep, winner_dep),
            state: EscrowState::Open,
            opened_at,
        }
    }

    fn settle_escrow(&mut self, ad_id: &TxId, refundee: Option<NodeId>, end: EscrowState) {
        self.market.tracker.untrack_escrow(ad_id);
        let Some(case) = self.market.escrows.get(ad_id) else { return };
        let terms = case.terms.clone();
        for held in &terms.held_payments {
            let to = refundee.clone().unwrap_or_else(|| held.payee.clone());
            self.move_locked(&held.from, &to);
        }
        for dep in &terms.held_deposits {
            if let Some(owner) = self.locked.get(&dep.lock).map(|l| l.owner.clone()) {
                self.move_locked(dep, &owner);
            }
        }
        if let Some(case) = self.market.escrows.get_mut(ad_id) {
            case.state = end;
        }
        if let Some(trade) = self.market.trades.get_mut(ad_id) {
            advance(trade, TradePhase::Settled);
        }
    }

    /// Moves one part of a locked entry to `to`'s balance, dropping the entry
    /// once it is empty.
    fn move_locked(&mut self, r: &LockRef, to: &NodeId) {
        let Some(entry) = self.locked.get_mut(&r.lock) else { return };
        let amount = entry.take(r.part);
        let emptied = entry.total() == 0;
        *self.balances.entry(to.clone()).or_insert(0) += amount;
        if emptied {
            self.locked.remove(&r.lock);
            if let Some(ad_id) = self.market.lock_trade.remove(&r.lock) {
                if let Some(trade) = self.market.trades.get_mut(&ad_id) {
                    trade.open_locks -= 1;
                }
            }
        }
    }

    /// End-of-block bookkeeping: expiration counters, phase changes, settlement.
    fn finish_block(&mut self, block: Arc<Block>) {
        let number = block.number();
        self.blocks.push(block);

        let mut fired = self.market.tracker.tick();
        let new_ads: Vec<TxId> = self
            .market
            .trades
            .values()
            .filter(|t| t.ad_block == number)
            .map(|t| t.ad_id)
            .collect();
        for ad_id in new_ads {
            let trade = &self.market.trades[&ad_id];
            fired.extend(self.market.tracker.track_trade(trade));
        }

        for exp in &fired {
            let Some(trade) = self.market.trades.get_mut(&exp.ad_id) else { continue };
            if exp.kind == ExpirationKind::Sale && trade.lifecycle.phase == TradePhase::Bidding {
                if trade.ad.reveal_flag {
                    advance(trade, TradePhase::AwaitReveal);
                } else if trade.ad.committee.is_some() {
                    advance(trade, TradePhase::AwaitEval);
                }
            }
            if roles::matching_due(trade, exp.kind, number) {
                trade.matching_pending = true;
                self.market.tracker.untrack_trade(&exp.ad_id);
            }
        }
        self.market.fired = fired;

        for trade in self.market.trades.values_mut() {
            if trade.lifecycle.phase == TradePhase::Assigned && trade.open_locks == 0 {
                advance(trade, TradePhase::Settled);
            }
        }
    }

    /// Validates `block` against this state and returns the successor state.
    /// Transactions are validated in order, each against the state left by
    /// the ones before it.
    pub fn apply_block(&self, cfg: &MarketConfig, block: &Block) -> Result<ChainState, InvalidBlock> {
        self.apply_shared(cfg, Arc::new(block.clone()))
    }

    pub(crate) fn apply_shared(&self, cfg: &MarketConfig, block: Arc<Block>) -> Result<ChainState, InvalidBlock> {
        let head = self.head();
        if block.number() != head.number() + 1 {
            return Err(InvalidBlock::NotNext { head: head.number(), got: block.number() });
        }
        if block.parent() != head.digest() {
            return Err(InvalidBlock::ParentMismatch);
        }
        if !block.digest_is_valid() {
            return Err(InvalidBlock::DigestMismatch);
        }
        let expected = cfg.roster.proposer_for(block.number());
        if block.proposer() != expected {
            return Err(InvalidBlock::WrongProposer { expected: expected.clone(), got: block.proposer().clone() });
        }
        let ctx = BlockContext { number: block.number(), proposer: block.proposer().clone() };
        let mut next = self.clone();
        for (i, tx) in block.txs().iter().enumerate() {
            next.apply_tx(cfg, tx, &ctx, i as u32)
                .map_err(|reason| InvalidBlock::InvalidTx { index: i, reason })?;
        }
        next.finish_block(block);
        Ok(next)
    }

    /// Assembles the next block from `pool` as its round-robin proposer would:
    /// carried-over proposer transactions, this tick's proposer transactions,
    /// then pending user transactions in FIFO order, up to the block cap.
    /// Transactions that no longer validate are dropped from the pool.
    pub fn propose_next_block(&self, cfg: &MarketConfig, pool: &mut TxPool) -> Proposal {
        let number = self.height() + 1;
        let proposer = cfg.roster.proposer_for(number).clone();
        let ctx = BlockContext { number, proposer: proposer.clone() };
        let cap = cfg.block_tx_cap.unwrap_or(usize::MAX);
        let mut working = self.clone();
        let mut txs = Vec::new();
        let mut dropped = Vec::new();
        let mut carried = VecDeque::new();

        let proposer_txs: Vec<TransactionEnvelope> =
            pool.carry_over.drain(..).chain(pool.outstanding.drain(..)).collect();
        for mut tx in proposer_txs {
            if tx.sender() != &proposer {
                // carried over from another proposer's turn
                pool.ids.remove(&tx.id());
                tx = TransactionEnvelope::new(proposer.clone(), tx.payload().clone(), *tx.funds(), tx.nonce());
                pool.ids.insert(tx.id());
            }
            if txs.len() >= cap {
                carried.push_back(tx);
                continue;
            }
            match working.apply_tx(cfg, &tx, &ctx, txs.len() as u32) {
                Ok(()) => {
                    pool.ids.remove(&tx.id());
                    txs.push(tx);
                }
                Err(reason) => {
                    debug_assert!(false, "proposer-created tx rejected: {reason}");
                    pool.ids.remove(&tx.id());
                    dropped.push((tx, reason));
                }
            }
        }
        let carried_ids: Vec<TxId> = carried.iter().map(TransactionEnvelope::id).collect();
        pool.carry_over = carried;

        while txs.len() < cap {
            let Some(tx) = pool.pending.pop_front() else { break };
            pool.ids.remove(&tx.id());
            match working.apply_tx(cfg, &tx, &ctx, txs.len() as u32) {
                Ok(()) => txs.push(tx),
                Err(reason) => dropped.push((tx, reason)),
            }
        }

        let parent = *self.head().digest();
        Proposal { block: Block::new(number, parent, proposer, txs), dropped, carried: carried_ids }
    }
}

fn advance(trade: &mut TradeRecord, to: TradePhase) {
    let res = trade.lifecycle.advance(to);
    debug_assert!(res.is_ok(), "{res:?}");
}

/// Result of assembling a block.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub block: Block,
    pub dropped: Vec<(TransactionEnvelope, ValidationFailed)>,
    pub carried: Vec<TxId>,
}

/// Pending user transactions plus the proposer's outstanding and carried-over
/// transactions.
#[derive(Debug, Clone, Default)]
pub struct TxPool {
    pending: VecDeque<TransactionEnvelope>,
    outstanding: Vec<TransactionEnvelope>,
    carry_over: VecDeque<TransactionEnvelope>,
    ids: BTreeSet<TxId>,
}

impl TxPool {
    pub fn new() -> Self {
        Self::default()
    }

    /// Queues a validated user transaction.
    pub fn admit(&mut self, tx: TransactionEnvelope) -> Result<(), ValidationFailed> {
        if !self.ids.insert(tx.id()) {
            return Err(ValidationFailed { stage: Stage::Chain, rule: Rule::DuplicateTx });
        }
        self.pending.push_back(tx);
        Ok(())
    }

    /// Adds a proposer-created transaction for the next proposed block.
    pub fn add_tx_to_prop_block(&mut self, tx: TransactionEnvelope) {
        debug_assert!(tx.kind().is_proposer_created());
        if self.ids.insert(tx.id()) {
            self.outstanding.push(tx);
        }
    }

    pub fn pending(&self) -> impl Iterator<Item = &TransactionEnvelope> {
        self.pending.iter()
    }

    pub fn carry_over(&self) -> impl Iterator<Item = &TransactionEnvelope> {
        self.carry_over.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty() && self.outstanding.is_empty() && self.carry_over.is_empty()
    }

    pub fn len(&self) -> usize {
        self.pending.len() + self.outstanding.len() + self.carry_over.len()
    }
}
