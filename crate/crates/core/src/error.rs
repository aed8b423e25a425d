use alloc::string::String;

use crate::types::{NodeId, Role, Units};

/// Which layer of the three-stage validation pipeline rejected a transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Chain,
    Platform,
    UseCase,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Chain => "chain",
            Stage::Platform => "platform",
            Stage::UseCase => "use-case",
        }
    }
}

/// Advertisement parameter combinations that cannot be admitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum AdDefect {
    #[error("sale duration must be positive")]
    ZeroSaleDuration,
    #[error("a duration parameter is zero")]
    ZeroDuration,
    #[error("reveal flag set without a reserve commitment")]
    MissingReserveCommitment,
    #[error("reveal flag set without a reveal duration")]
    MissingRevealDuration,
    #[error("committee trade without an evaluation committee")]
    MissingCommittee,
    #[error("evaluation committee is empty")]
    EmptyCommittee,
    #[error("committee trade without an evaluation duration")]
    MissingEvalDuration,
    #[error("evaluation duration must exceed the sale duration")]
    EvalNotAfterSale,
    #[error("reveal flag and evaluation committee are mutually exclusive")]
    RevealWithCommittee,
    #[error("evaluation committee on a trade type that does not use one")]
    CommitteeNotUsed,
    #[error("missing starting price")]
    MissingStartPrice,
    #[error("missing minimum increment")]
    MissingIncrement,
    #[error("missing bid window duration")]
    MissingBidWindow,
    #[error("secret reserve is not supported for descending-price trades")]
    RevealOnDutch,
    #[error("a public reserve is only meaningful for descending-price trades")]
    PublicReserveNotDutch,
    #[error("public reserve above the starting price")]
    ReserveAboveStart,
    #[error("score dimension must be positive")]
    ZeroScoreDims,
    #[error("weight vector length differs from the score dimension")]
    WeightDimension,
}

/// The rule a rejected transaction broke.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum Rule {
    // chain level
    #[error("sender {0} is not in the roster")]
    UnknownSender(NodeId),
    #[error("insufficient balance: needs {needed}, has {available}")]
    InsufficientBalance { needed: Units, available: Units },
    #[error("transaction already in the ledger")]
    DuplicateTx,
    #[error("transaction kind is reserved for block proposers")]
    ProposerOnlyKind,
    #[error("sender is not the proposer of this block")]
    NotProposer,
    #[error("sender lacks the {0:?} role")]
    MissingRole(Role),
    #[error("funds may only be attached to advertisements and bids")]
    UnexpectedFunds,
    // platform level: advertisements and bids
    #[error("invalid advertisement: {0}")]
    InvalidAdvertisement(AdDefect),
    #[error("identity {0} is not in the roster")]
    UnknownIdentity(NodeId),
    #[error("physical-goods trade but no escrow node is configured")]
    NoEscrowConfigured,
    #[error("advertisement not found in the ledger")]
    UnknownAdvertisement,
    #[error("sale is closed")]
    SaleClosed,
    #[error("bid violates the minimum increment")]
    IncrementViolation,
    #[error("bid price differs from the current window price {expected}")]
    WrongWindowPrice { expected: Units },
    #[error("bid below the starting price")]
    BelowStartingPrice,
    #[error("bid carries no payment")]
    MissingPayment,
    #[error("bid carries no deposit or too small a deposit")]
    MissingDeposit,
    #[error("bid content is empty")]
    EmptyContent,
    #[error("trade already matched")]
    TradeAlreadyMatched,
    // evaluations
    #[error("sender is not in the evaluation committee")]
    NotInCommittee,
    #[error("trade does not use an evaluation committee")]
    NotACommitteeTrade,
    #[error("evaluation form does not fit the trade type")]
    WrongEvaluationForm,
    #[error("score vector has dimension {got}, expected {expected}")]
    ScoreDimension { expected: usize, got: usize },
    #[error("sender already evaluated this bid")]
    DuplicateEvaluation,
    #[error("bid not found for this advertisement")]
    UnknownBid,
    #[error("evaluation window is closed")]
    EvalWindowClosed,
    // revelations
    #[error("trade has no reserve commitment")]
    NotARevealTrade,
    #[error("sender is not the supplier of this trade")]
    NotSupplier,
    #[error("revelation window is closed")]
    RevealWindowClosed,
    #[error("revealed reserve does not match the commitment")]
    HashMismatch,
    #[error("reserve already revealed")]
    AlreadyRevealed,
    #[error("salt shorter than 16 bytes")]
    SaltTooShort,
    // proposer-created transactions
    #[error("locked funds entry not found")]
    UnknownLock,
    #[error("locked funds part is empty")]
    LockPartEmpty,
    #[error("winning bid does not belong to the advertisement")]
    ForeignWinningBid,
    // escrow
    #[error("no escrow case for this trade")]
    NoEscrowCase,
    #[error("sender is not a party of the trade")]
    NotAParty,
    #[error("escrow case is closed")]
    CaseClosed,
    #[error("sender is not the escrow of this case")]
    NotEscrow,
    #[error("escrow case is not disputed")]
    NotDisputed,
    #[error("safety window has not elapsed")]
    SafetyWindowOpen,
    // use-case level
    #[error("custom validation: {0}")]
    Custom(String),
}

/// A transaction rejection: the stage that caught it and the rule it broke.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{} validation failed: {rule}", stage.as_str())]
pub struct ValidationFailed {
    pub stage: Stage,
    pub rule: Rule,
}

impl ValidationFailed {
    pub fn chain(rule: Rule) -> Self {
        Self { stage: Stage::Chain, rule }
    }

    pub fn platform(rule: Rule) -> Self {
        Self { stage: Stage::Platform, rule }
    }

    pub fn use_case(reason: String) -> Self {
        Self { stage: Stage::UseCase, rule: Rule::Custom(reason) }
    }
}

/// Whole-block rejection.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum InvalidBlock {
    #[error("block number {got} does not extend head {head}")]
    NotNext { head: u64, got: u64 },
    #[error("parent digest does not match the head")]
    ParentMismatch,
    #[error("block digest does not match its contents")]
    DigestMismatch,
    #[error("block proposed by {got}, expected {expected}")]
    WrongProposer { expected: NodeId, got: NodeId },
    #[error("transaction {index} invalid: {reason}")]
    InvalidTx { index: usize, reason: ValidationFailed },
}
