//! Post-assignment settlement of physical-goods trades.
//!
//! An assignment for a physical trade carries [`EscrowTerms`]: the locked
//! parts the escrow holds instead of the direct transfers and unlocks. The
//! case then ends either by safety-window release (payments go to their
//! payees) or by a dispute resolution naming the refundee.

use alloc::vec::Vec;

use crate::encoding::{Canonical, Encoder};
use crate::error::Rule;
use crate::types::{BlockNumber, LockRef, NodeId, Payload, TxId, Units};

pub const DEFAULT_SAFETY_WINDOW: u64 = 5;

/// A locked payment the escrow forwards to `payee` on release.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeldPayment {
    pub from: LockRef,
    pub payee: NodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscrowTerms {
    pub escrow: NodeId,
    pub safety_window: u64,
    pub held_payments: Vec<HeldPayment>,
    pub held_deposits: Vec<LockRef>,
}

impl Canonical for EscrowTerms {
    fn encode(&self, enc: &mut Encoder) {
        enc.str(self.escrow.as_str())
            .u64(self.safety_window)
            .len(self.held_payments.len());
        for p in &self.held_payments {
            p.from.encode(enc);
            enc.str(p.payee.as_str());
        }
        enc.len(self.held_deposits.len());
        for d in &self.held_deposits {
            d.encode(enc);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EscrowState {
    Open,
    DeliveryRecorded,
    Disputed,
    Resolved,
    Released,
}

impl EscrowState {
    pub fn as_str(self) -> &'static str {
        match self {
            EscrowState::Open => "Open",
            EscrowState::DeliveryRecorded => "DeliveryRecorded",
            EscrowState::Disputed => "Disputed",
            EscrowState::Resolved => "Resolved",
            EscrowState::Released => "Released",
        }
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, EscrowState::Resolved | EscrowState::Released)
    }

    fn is_live(self) -> bool {
        matches!(self, EscrowState::Open | EscrowState::DeliveryRecorded)
    }
}

/// Ledger record of one escrow-monitored trade.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EscrowCase {
    pub ad_id: TxId,
    pub escrow: NodeId,
    pub supplier: NodeId,
    pub winner: NodeId,
    pub terms: EscrowTerms,
    /// Total payment units held.
    pub held_payment: Units,
    /// (supplier deposit, winner deposit) held.
    pub held_deposits: (Units, Units),
    pub state: EscrowState,
    pub opened_at: BlockNumber,
}

impl EscrowCase {
    pub fn safety_window(&self) -> u64 {
        self.terms.safety_window
    }

    /// First block at which the automatic release may fire.
    pub fn release_due_at(&self) -> BlockNumber {
        self.opened_at + self.terms.safety_window
    }

    pub fn is_party(&self, who: &NodeId) -> bool {
        *who == self.supplier || *who == self.winner
    }

    pub fn check_dispute(&self, party: &NodeId) -> Result<(), Rule> {
        if !self.is_party(party) {
            return Err(Rule::NotAParty);
        }
        if !self.state.is_live() {
            return Err(Rule::CaseClosed);
        }
        Ok(())
    }

    pub fn check_resolution(&self, sender: &NodeId, refundee: &NodeId) -> Result<(), Rule> {
        if *sender != self.escrow {
            return Err(Rule::NotEscrow);
        }
        if self.state != EscrowState::Disputed {
            return Err(Rule::NotDisputed);
        }
        if !self.is_party(refundee) {
            return Err(Rule::NotAParty);
        }
        Ok(())
    }

    pub fn check_release(&self, current_block: BlockNumber) -> Result<(), Rule> {
        if !self.state.is_live() {
            return Err(Rule::CaseClosed);
        }
        if current_block < self.release_due_at() {
            return Err(Rule::SafetyWindowOpen);
        }
        Ok(())
    }

    pub fn check_delivery(&self, sender: &NodeId) -> Result<(), Rule> {
        if *sender != self.escrow && *sender != self.supplier {
            return Err(Rule::NotAParty);
        }
        if self.state != EscrowState::Open {
            return Err(Rule::CaseClosed);
        }
        Ok(())
    }
}

/// Builds the arbitration request a party raises against a live case.
pub fn raise_arbitration(case: &EscrowCase, party: &NodeId) -> Result<Payload, Rule> {
    case.check_dispute(party)?;
    Ok(Payload::ArbitrationRequest { ad_id: case.ad_id })
}

/// Builds the escrow's resolution of a disputed case.
pub fn resolve_dispute(
    case: &EscrowCase,
    escrow_node: &NodeId,
    refundee: &NodeId,
) -> Result<Payload, Rule> {
    case.check_resolution(escrow_node, refundee)?;
    Ok(Payload::DisputeResolution { ad_id: case.ad_id, refundee: refundee.clone() })
}

/// Builds the proposer's automatic release once the safety window elapsed.
pub fn release_after_safety_window(
    case: &EscrowCase,
    current_block: BlockNumber,
) -> Result<Payload, Rule> {
    case.check_release(current_block)?;
    Ok(Payload::EscrowRelease { ad_id: case.ad_id })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::Digest;
    use crate::types::LockPart;
    use alloc::vec;

    fn case() -> EscrowCase {
        let terms = EscrowTerms {
            escrow: "e".into(),
            safety_window: 5,
            held_payments: vec![HeldPayment {
                from: LockRef { lock: Digest::of(b"bid"), part: LockPart::Payment },
                payee: "s".into(),
            }],
            held_deposits: vec![],
        };
        EscrowCase {
            ad_id: Digest::of(b"ad"),
            escrow: "e".into(),
            supplier: "s".into(),
            winner: "w".into(),
            terms,
            held_payment: 130,
            held_deposits: (10, 0),
            state: EscrowState::Open,
            opened_at: 12,
        }
    }

    #[test]
    fn dispute_rules() {
        let mut c = case();
        assert!(raise_arbitration(&c, &"w".into()).is_ok());
        assert_eq!(raise_arbitration(&c, &"x".into()), Err(Rule::NotAParty));
        c.state = EscrowState::Released;
        assert_eq!(raise_arbitration(&c, &"w".into()), Err(Rule::CaseClosed));
    }

    #[test]
    fn resolution_rules() {
        let mut c = case();
        assert_eq!(resolve_dispute(&c, &"e".into(), &"w".into()), Err(Rule::NotDisputed));
        c.state = EscrowState::Disputed;
        assert_eq!(resolve_dispute(&c, &"s".into(), &"w".into()), Err(Rule::NotEscrow));
        assert_eq!(resolve_dispute(&c, &"e".into(), &"x".into()), Err(Rule::NotAParty));
        assert!(resolve_dispute(&c, &"e".into(), &"s".into()).is_ok());
    }

    #[test]
    fn release_waits_for_window() {
        let mut c = case();
        assert_eq!(release_after_safety_window(&c, 16), Err(Rule::SafetyWindowOpen));
        assert!(release_after_safety_window(&c, 17).is_ok());
        c.state = EscrowState::Disputed;
        assert_eq!(release_after_safety_window(&c, 40), Err(Rule::CaseClosed));
    }
}
