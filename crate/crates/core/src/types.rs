//! Marketplace records: identities, attached funds, every transaction payload,
//! and the per-trade lifecycle state machine.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::encoding::{Canonical, Digest, Encoder};
use crate::error::{AdDefect, Rule};
use crate::escrow::EscrowTerms;

/// Currency amount in indivisible units.
pub type Units = u64;
pub type BlockNumber = u64;
/// A transaction id is the digest of the transaction's canonical encoding.
pub type TxId = Digest;

/// Fixed-point scale of evaluation scores.
pub const SCORE_SCALE: i64 = 1_000_000;
/// Minimum salt length for reserve commitments.
pub const MIN_SALT_LEN: usize = 16;

/// Simulated node identity.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Debug for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Supplier,
    Consumer,
    Proposer,
    Committee,
    Escrow,
    Validator,
}

impl Role {
    pub const ALL: [Role; 6] = [
        Role::Supplier,
        Role::Consumer,
        Role::Proposer,
        Role::Committee,
        Role::Escrow,
        Role::Validator,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Supplier => "supplier",
            Role::Consumer => "consumer",
            Role::Proposer => "proposer",
            Role::Committee => "committee",
            Role::Escrow => "escrow",
            Role::Validator => "validator",
        }
    }

    pub fn parse(s: &str) -> Option<Role> {
        Role::ALL.into_iter().find(|r| r.as_str() == s)
    }

    fn bit(self) -> u8 {
        1 << (self as u8)
    }
}

/// Set of roles held by one node.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct RoleSet(u8);

impl RoleSet {
    pub fn empty() -> Self {
        RoleSet(0)
    }

    pub fn with(mut self, role: Role) -> Self {
        self.0 |= role.bit();
        self
    }

    pub fn insert(&mut self, role: Role) {
        self.0 |= role.bit();
    }

    pub fn contains(&self, role: Role) -> bool {
        self.0 & role.bit() != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Role> + '_ {
        Role::ALL.into_iter().filter(|r| self.contains(*r))
    }
}

impl FromIterator<Role> for RoleSet {
    fn from_iter<I: IntoIterator<Item = Role>>(iter: I) -> Self {
        let mut set = RoleSet::empty();
        for r in iter {
            set.insert(r);
        }
        set
    }
}

impl fmt::Debug for RoleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

/// Optional payment (`P`) and deposit (`D`) attached to a transaction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct FundsAttachment {
    pub payment: Option<Units>,
    pub deposit: Option<Units>,
}

impl FundsAttachment {
    pub const NONE: FundsAttachment = FundsAttachment { payment: None, deposit: None };

    pub fn new(payment: Option<Units>, deposit: Option<Units>) -> Self {
        Self { payment, deposit }
    }

    pub fn payment_amount(&self) -> Units {
        self.payment.unwrap_or(0)
    }

    pub fn deposit_amount(&self) -> Units {
        self.deposit.unwrap_or(0)
    }

    /// Total units that leave the sender's balance; `None` on overflow.
    pub fn total(&self) -> Option<Units> {
        self.payment_amount().checked_add(self.deposit_amount())
    }

    pub fn is_empty(&self) -> bool {
        self.payment_amount() == 0 && self.deposit_amount() == 0
    }
}

impl Canonical for FundsAttachment {
    fn encode(&self, enc: &mut Encoder) {
        enc.opt_u64(self.payment).opt_u64(self.deposit);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TradeType {
    EnglishAuction,
    DutchAuction,
    CommitteeEvalAndRanking,
    CommitteeEvalCustomRanking,
    CustomObjEvalAndRanking,
}

impl TradeType {
    pub const ALL: [TradeType; 5] = [
        TradeType::EnglishAuction,
        TradeType::DutchAuction,
        TradeType::CommitteeEvalAndRanking,
        TradeType::CommitteeEvalCustomRanking,
        TradeType::CustomObjEvalAndRanking,
    ];

    /// Short scenario-file name.
    pub fn as_str(self) -> &'static str {
        match self {
            TradeType::EnglishAuction => "english",
            TradeType::DutchAuction => "dutch",
            TradeType::CommitteeEvalAndRanking => "committee-rank",
            TradeType::CommitteeEvalCustomRanking => "committee-custom",
            TradeType::CustomObjEvalAndRanking => "custom",
        }
    }

    pub fn parse(s: &str) -> Option<TradeType> {
        TradeType::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn uses_committee(self) -> bool {
        matches!(
            self,
            TradeType::CommitteeEvalAndRanking | TradeType::CommitteeEvalCustomRanking
        )
    }

    fn tag(self) -> u8 {
        self as u8
    }
}

/// Item advertisement payload. The advertisement's payment and deposit travel
/// in the envelope's [`FundsAttachment`]; its id is the envelope's tx id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemAdvertisement {
    /// Opaque item descriptor and metadata.
    pub item: Vec<u8>,
    pub trade_type: TradeType,
    /// Blocks during which bids are accepted.
    pub sale_duration: u64,
    pub reveal_flag: bool,
    pub start_price: Option<Units>,
    /// Blocks per fixed-price window (descending-price trades).
    pub bid_window: Option<u64>,
    pub reveal_duration: Option<u64>,
    /// Blocks after the advertisement within which the committee must evaluate.
    pub eval_duration: Option<u64>,
    pub min_increment: Option<Units>,
    pub reserve_hash: Option<Digest>,
    /// Sorted, de-duplicated committee identities.
    pub committee: Option<Vec<NodeId>>,
    /// Publicly known reserve; descending-price trades only.
    pub public_reserve: Option<Units>,
    /// Physical goods settle through the escrow.
    pub physical: bool,
    pub safety_window: Option<u64>,
    /// Dimension of committee / objective score vectors.
    pub score_dims: Option<u32>,
    /// Ranking weights for the weighted-sum plug-in.
    pub score_weights: Vec<i64>,
    /// Minimum deposit every bid must carry.
    pub bid_deposit: Option<Units>,
}

impl ItemAdvertisement {
    /// Bare advertisement with every optional parameter unset.
    pub fn new(item: impl Into<Vec<u8>>, trade_type: TradeType, sale_duration: u64) -> Self {
        Self {
            item: item.into(),
            trade_type,
            sale_duration,
            reveal_flag: false,
            start_price: None,
            bid_window: None,
            reveal_duration: None,
            eval_duration: None,
            min_increment: None,
            reserve_hash: None,
            committee: None,
            public_reserve: None,
            physical: false,
            safety_window: None,
            score_dims: None,
            score_weights: Vec::new(),
            bid_deposit: None,
        }
    }

    /// Checks the parameter-combination invariants of an advertisement.
    pub fn check_invariants(&self) -> Result<(), AdDefect> {
        use AdDefect::*;
        if self.sale_duration == 0 {
            return Err(ZeroSaleDuration);
        }
        if [self.bid_window, self.reveal_duration, self.eval_duration, self.min_increment].contains(&Some(0)) {
            return Err(ZeroDuration);
        }
        if self.reveal_flag {
            if self.reserve_hash.is_none() {
                return Err(MissingReserveCommitment);
            }
            if self.reveal_duration.is_none() {
                return Err(MissingRevealDuration);
            }
            if self.committee.is_some() {
                return Err(RevealWithCommittee);
            }
        }
        if let Some(com) = &self.committee {
            if com.is_empty() {
                return Err(EmptyCommittee);
            }
        }
        match self.trade_type {
            TradeType::EnglishAuction => {
                if self.start_price.is_none() {
                    return Err(MissingStartPrice);
                }
                if self.min_increment.is_none() {
                    return Err(MissingIncrement);
                }
            }
            TradeType::DutchAuction => {
                if self.start_price.is_none() {
                    return Err(MissingStartPrice);
                }
                if self.bid_window.is_none() {
                    return Err(MissingBidWindow);
                }
                if self.min_increment.is_none() {
                    return Err(MissingIncrement);
                }
                if self.reveal_flag {
                    return Err(RevealOnDutch);
                }
                if let (Some(r), Some(s)) = (self.public_reserve, self.start_price) {
                    if r > s {
                        return Err(ReserveAboveStart);
                    }
                }
            }
            TradeType::CommitteeEvalAndRanking | TradeType::CommitteeEvalCustomRanking => {
                if self.committee.is_none() {
                    return Err(MissingCommittee);
                }
                match self.eval_duration {
                    None => return Err(MissingEvalDuration),
                    Some(e) if e <= self.sale_duration => return Err(EvalNotAfterSale),
                    _ => {}
                }
            }
            TradeType::CustomObjEvalAndRanking => {}
        }
        if self.committee.is_some() && !self.trade_type.uses_committee() {
            return Err(CommitteeNotUsed);
        }
        if self.public_reserve.is_some() && self.trade_type != TradeType::DutchAuction {
            return Err(PublicReserveNotDutch);
        }
        if self.score_dims == Some(0) {
            return Err(ZeroScoreDims);
        }
        if !self.score_weights.is_empty() && self.score_weights.len() != self.score_dimension() {
            return Err(WeightDimension);
        }
        Ok(())
    }

    /// Declared score dimension, defaulting to scalar scores.
    pub fn score_dimension(&self) -> usize {
        self.score_dims.unwrap_or(1) as usize
    }

    pub fn in_committee(&self, who: &NodeId) -> bool {
        self.committee
            .as_ref()
            .is_some_and(|c| c.binary_search(who).is_ok())
    }

    /// Block numbers at which each phase of the trade ends.
    pub fn deadlines(&self, ad_block: BlockNumber) -> Deadlines {
        let sale_end = ad_block + self.sale_duration;
        let reveal_end = if self.reveal_flag {
            self.reveal_duration.map(|d| sale_end + d)
        } else {
            None
        };
        let eval_end = if self.committee.is_some() {
            self.eval_duration.map(|d| ad_block + d)
        } else {
            None
        };
        Deadlines { sale_end, reveal_end, eval_end }
    }
}

impl Canonical for ItemAdvertisement {
    fn encode(&self, enc: &mut Encoder) {
        enc.bytes(&self.item)
            .tag(self.trade_type.tag())
            .u64(self.sale_duration)
            .bool(self.reveal_flag)
            .opt_u64(self.start_price)
            .opt_u64(self.bid_window)
            .opt_u64(self.reveal_duration)
            .opt_u64(self.eval_duration)
            .opt_u64(self.min_increment)
            .opt_digest(self.reserve_hash.as_ref());
        match &self.committee {
            None => {
                enc.tag(0);
            }
            Some(c) => {
                enc.tag(1).len(c.len());
                for id in c {
                    enc.str(id.as_str());
                }
            }
        }
        enc.opt_u64(self.public_reserve)
            .bool(self.physical)
            .opt_u64(self.safety_window)
            .opt_u64(self.score_dims.map(u64::from))
            .len(self.score_weights.len());
        for w in &self.score_weights {
            enc.i64(*w);
        }
        enc.opt_u64(self.bid_deposit);
    }
}

/// Derived phase deadlines of a trade.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deadlines {
    pub sale_end: BlockNumber,
    pub reveal_end: Option<BlockNumber>,
    pub eval_end: Option<BlockNumber>,
}

impl Deadlines {
    /// The deadline after which the trade must be matched.
    pub fn final_deadline(&self) -> BlockNumber {
        self.reveal_end
            .or(self.eval_end)
            .unwrap_or(self.sale_end)
            .max(self.sale_end)
    }
}

/// Commits to a reserve price: `digest(be64(price) || salt)`.
pub fn commit_reserve_price(res_price: Units, salt: &[u8]) -> Result<Digest, Rule> {
    if salt.len() < MIN_SALT_LEN {
        return Err(Rule::SaltTooShort);
    }
    Ok(Digest::of_concat(&[&res_price.to_be_bytes(), salt]))
}

/// Checks a revelation against the advertisement's commitment.
pub fn verify_reserve_price(rev: &RevelationTx, ad: &ItemAdvertisement) -> Result<bool, Rule> {
    let committed = match (&ad.reserve_hash, ad.reveal_flag) {
        (Some(h), true) => h,
        _ => return Err(Rule::NotARevealTrade),
    };
    Ok(commit_reserve_price(rev.res_price, &rev.salt).is_ok_and(|d| d == *committed))
}

/// Position of a transaction in the ledger; totally orders bids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Inclusion {
    pub block: BlockNumber,
    pub index: u32,
}

/// Bid payload as broadcast.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BidPayload {
    pub ad_id: TxId,
    pub content: Vec<u8>,
}

impl Canonical for BidPayload {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.ad_id).bytes(&self.content);
    }
}

/// A bid as recorded in the ledger.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BidTx {
    pub bid_id: TxId,
    pub ad_id: TxId,
    pub bidder: NodeId,
    pub content: Vec<u8>,
    pub payment: Option<Units>,
    pub deposit: Option<Units>,
    pub inclusion: Inclusion,
}

impl BidTx {
    pub fn price(&self) -> Units {
        self.payment.unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RevelationTx {
    pub ad_id: TxId,
    pub res_price: Units,
    pub salt: Vec<u8>,
}

impl Canonical for RevelationTx {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.ad_id).u64(self.res_price).bytes(&self.salt);
    }
}

/// Score vector of fixed-point integers (scale [`SCORE_SCALE`]).
pub type ScoreVector = Vec<i64>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvaluationForm {
    /// Full committee ranking: the chosen bid.
    Decision(TxId),
    /// Scores for one bid.
    Scores { bid: TxId, scores: ScoreVector },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvaluationTx {
    pub ad_id: TxId,
    pub form: EvaluationForm,
}

impl Canonical for EvaluationTx {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.ad_id);
        match &self.form {
            EvaluationForm::Decision(bid) => {
                enc.tag(0).digest(bid);
            }
            EvaluationForm::Scores { bid, scores } => {
                enc.tag(1).digest(bid).len(scores.len());
                for s in scores {
                    enc.i64(*s);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentTx {
    pub ad_id: TxId,
    pub winning_bid: TxId,
    /// Block whose application fired the matching.
    pub trigger_block: BlockNumber,
    /// Present when the trade settles through an escrow.
    pub escrow: Option<EscrowTerms>,
}

impl Canonical for AssignmentTx {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.ad_id).digest(&self.winning_bid).u64(self.trigger_block);
        match &self.escrow {
            None => {
                enc.tag(0);
            }
            Some(terms) => {
                enc.tag(1);
                terms.encode(enc);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NoAssignmentTx {
    pub ad_id: TxId,
    pub trigger_block: BlockNumber,
}

/// Which half of a locked entry a funds transaction moves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum LockPart {
    Payment,
    Deposit,
}

impl LockPart {
    pub fn as_str(self) -> &'static str {
        match self {
            LockPart::Payment => "payment",
            LockPart::Deposit => "deposit",
        }
    }
}

/// Reference to one half of a locked entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LockRef {
    pub lock: TxId,
    pub part: LockPart,
}

impl Canonical for LockRef {
    fn encode(&self, enc: &mut Encoder) {
        enc.digest(&self.lock).tag(self.part as u8);
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Payload {
    Advertisement(ItemAdvertisement),
    Bid(BidPayload),
    Revelation(RevelationTx),
    Evaluation(EvaluationTx),
    Assignment(AssignmentTx),
    NoAssignment(NoAssignmentTx),
    /// Return a locked part to its owner.
    FundsUnlock(LockRef),
    /// Move a locked part to another identity.
    FundsTransfer { from: LockRef, to: NodeId },
    ArbitrationRequest { ad_id: TxId },
    DisputeResolution { ad_id: TxId, refundee: NodeId },
    EscrowRelease { ad_id: TxId },
    DeliveryRecord { ad_id: TxId },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TxKind {
    ItemAdvertisement,
    Bid,
    Revelation,
    Evaluation,
    Assignment,
    NoAssignment,
    FundsUnlock,
    FundsTransfer,
    ArbitrationRequest,
    DisputeResolution,
    EscrowRelease,
    DeliveryRecord,
}

impl TxKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TxKind::ItemAdvertisement => "ItemAdvertisement",
            TxKind::Bid => "Bid",
            TxKind::Revelation => "Revelation",
            TxKind::Evaluation => "Evaluation",
            TxKind::Assignment => "Assignment",
            TxKind::NoAssignment => "NoAssignment",
            TxKind::FundsUnlock => "FundsUnlock",
            TxKind::FundsTransfer => "FundsTransfer",
            TxKind::ArbitrationRequest => "ArbitrationRequest",
            TxKind::DisputeResolution => "DisputeResolution",
            TxKind::EscrowRelease => "EscrowRelease",
            TxKind::DeliveryRecord => "DeliveryRecord",
        }
    }

    /// Kinds only a block proposer may create.
    pub fn is_proposer_created(self) -> bool {
        matches!(
            self,
            TxKind::Assignment
                | TxKind::NoAssignment
                | TxKind::FundsUnlock
                | TxKind::FundsTransfer
                | TxKind::EscrowRelease
        )
    }
}

impl fmt::Display for TxKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Payload {
    pub fn kind(&self) -> TxKind {
        match self {
            Payload::Advertisement(_) => TxKind::ItemAdvertisement,
            Payload::Bid(_) => TxKind::Bid,
            Payload::Revelation(_) => TxKind::Revelation,
            Payload::Evaluation(_) => TxKind::Evaluation,
            Payload::Assignment(_) => TxKind::Assignment,
            Payload::NoAssignment(_) => TxKind::NoAssignment,
            Payload::FundsUnlock(_) => TxKind::FundsUnlock,
            Payload::FundsTransfer { .. } => TxKind::FundsTransfer,
            Payload::ArbitrationRequest { .. } => TxKind::ArbitrationRequest,
            Payload::DisputeResolution { .. } => TxKind::DisputeResolution,
            Payload::EscrowRelease { .. } => TxKind::EscrowRelease,
            Payload::DeliveryRecord { .. } => TxKind::DeliveryRecord,
        }
    }

    /// The trade this payload belongs to, when it names one directly.
    pub fn ad_id(&self) -> Option<TxId> {
        match self {
            Payload::Advertisement(_) | Payload::FundsUnlock(_) | Payload::FundsTransfer { .. } => {
                None
            }
            Payload::Bid(b) => Some(b.ad_id),
            Payload::Revelation(r) => Some(r.ad_id),
            Payload::Evaluation(e) => Some(e.ad_id),
            Payload::Assignment(a) => Some(a.ad_id),
            Payload::NoAssignment(n) => Some(n.ad_id),
            Payload::ArbitrationRequest { ad_id }
            | Payload::DisputeResolution { ad_id, .. }
            | Payload::EscrowRelease { ad_id }
            | Payload::DeliveryRecord { ad_id } => Some(*ad_id),
        }
    }
}

impl Canonical for Payload {
    fn encode(&self, enc: &mut Encoder) {
        match self {
            Payload::Advertisement(ad) => ad.encode(enc),
            Payload::Bid(b) => b.encode(enc),
            Payload::Revelation(r) => r.encode(enc),
            Payload::Evaluation(e) => e.encode(enc),
            Payload::Assignment(a) => a.encode(enc),
            Payload::NoAssignment(n) => {
                enc.digest(&n.ad_id).u64(n.trigger_block);
            }
            Payload::FundsUnlock(r) => r.encode(enc),
            Payload::FundsTransfer { from, to } => {
                from.encode(enc);
                enc.str(to.as_str());
            }
            Payload::DisputeResolution { ad_id, refundee } => {
                enc.digest(ad_id).str(refundee.as_str());
            }
            Payload::ArbitrationRequest { ad_id }
            | Payload::EscrowRelease { ad_id }
            | Payload::DeliveryRecord { ad_id } => {
                enc.digest(ad_id);
            }
        }
    }
}

/// A marketplace action signed (in simulation: attributed) by one identity.
/// Immutable once built; the id commits to every field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransactionEnvelope {
    id: TxId,
    sender: NodeId,
    payload: Payload,
    funds: FundsAttachment,
    nonce: u64,
}

impl TransactionEnvelope {
    pub fn new(sender: NodeId, payload: Payload, funds: FundsAttachment, nonce: u64) -> Self {
        let id = Self::compute_id(&sender, &payload, &funds, nonce);
        Self { id, sender, payload, funds, nonce }
    }

    pub fn compute_id(
        sender: &NodeId,
        payload: &Payload,
        funds: &FundsAttachment,
        nonce: u64,
    ) -> TxId {
        let mut enc = Encoder::new();
        enc.str(sender.as_str()).tag(payload.kind() as u8);
        payload.encode(&mut enc);
        funds.encode(&mut enc);
        enc.u64(nonce);
        Digest::of(&enc.finish())
    }

    pub fn id(&self) -> TxId {
        self.id
    }

    pub fn sender(&self) -> &NodeId {
        &self.sender
    }

    pub fn payload(&self) -> &Payload {
        &self.payload
    }

    pub fn kind(&self) -> TxKind {
        self.payload.kind()
    }

    pub fn funds(&self) -> &FundsAttachment {
        &self.funds
    }

    pub fn nonce(&self) -> u64 {
        self.nonce
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TradePhase {
    Bidding,
    AwaitReveal,
    AwaitEval,
    Assigned,
    NoAssignment,
    EscrowOpen,
    Disputed,
    Settled,
}

impl TradePhase {
    pub fn as_str(self) -> &'static str {
        match self {
            TradePhase::Bidding => "Bidding",
            TradePhase::AwaitReveal => "AwaitReveal",
            TradePhase::AwaitEval => "AwaitEval",
            TradePhase::Assigned => "Assigned",
            TradePhase::NoAssignment => "NoAssignment",
            TradePhase::EscrowOpen => "EscrowOpen",
            TradePhase::Disputed => "Disputed",
            TradePhase::Settled => "Settled",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, TradePhase::NoAssignment | TradePhase::Settled)
    }

    pub fn can_move_to(self, next: TradePhase) -> bool {
        use TradePhase::*;
        matches!(
            (self, next),
            (Bidding, AwaitReveal | AwaitEval | Assigned | NoAssignment)
                | (AwaitReveal | AwaitEval, Assigned | NoAssignment)
                | (Assigned, Settled | EscrowOpen)
                | (EscrowOpen, Settled | Disputed)
                | (Disputed, Settled)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("illegal trade phase transition {from:?} -> {to:?}")]
pub struct IllegalTransition {
    pub from: TradePhase,
    pub to: TradePhase,
}

/// Matching state machine of one advertisement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TradeLifecycle {
    pub ad_id: TxId,
    pub phase: TradePhase,
    pub winning_bid: Option<TxId>,
    pub sale_end: BlockNumber,
    pub reveal_end: Option<BlockNumber>,
    pub eval_end: Option<BlockNumber>,
}

impl TradeLifecycle {
    pub fn new(ad_id: TxId, deadlines: Deadlines) -> Self {
        Self {
            ad_id,
            phase: TradePhase::Bidding,
            winning_bid: None,
            sale_end: deadlines.sale_end,
            reveal_end: deadlines.reveal_end,
            eval_end: deadlines.eval_end,
        }
    }

    pub fn advance(&mut self, to: TradePhase) -> Result<(), IllegalTransition> {
        if !self.phase.can_move_to(to) {
            return Err(IllegalTransition { from: self.phase, to });
        }
        self.phase = to;
        Ok(())
    }
}
