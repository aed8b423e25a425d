//! Deterministic run loop: a roster of nodes, each folding the same block
//! stream into its own ledger replica, and one shared transaction pool.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;
use rand_core::SeedableRng;

use crate::chain::{Block, BlockContext, ChainState, MarketConfig, TxPool};
use crate::encoding::Digest;
use crate::error::{InvalidBlock, Rule, ValidationFailed};
use crate::roles::{self, Notification, ReserveSecret};
use crate::types::{
    BlockNumber, EvaluationForm, EvaluationTx, FundsAttachment, ItemAdvertisement, NodeId,
    Payload, Role, RoleSet, TransactionEnvelope, TxId, TxKind, Units,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("rejected: {0}")]
    Rejected(#[from] ValidationFailed),
}

impl From<Rule> for EngineError {
    fn from(rule: Rule) -> Self {
        EngineError::Rejected(ValidationFailed::platform(rule))
    }
}

/// Per-node behaviour switches.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct NodeOptions {
    /// Never reveal a committed reserve.
    pub withhold_reveal: bool,
}

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub market: MarketConfig,
    pub seed: u64,
    pub genesis: BTreeMap<NodeId, Units>,
    pub options: BTreeMap<NodeId, NodeOptions>,
}

/// One roster member with its own ledger replica and private memory.
#[derive(Debug, Clone)]
pub struct Node {
    id: NodeId,
    roles: RoleSet,
    options: NodeOptions,
    interest: BTreeSet<TxId>,
    state: ChainState,
    rng: ChaCha8Rng,
    secrets: BTreeMap<Digest, ReserveSecret>,
    nonce: u64,
}

impl Node {
    pub fn id(&self) -> &NodeId {
        &self.id
    }

    pub fn roles(&self) -> RoleSet {
        self.roles
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn interest(&self) -> &BTreeSet<TxId> {
        &self.interest
    }

    fn next_nonce(&mut self) -> u64 {
        self.nonce += 1;
        self.nonce
    }
}

/// Everything observable about a run, in emission order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceEvent {
    Admitted { node: NodeId, kind: TxKind, tx_id: TxId },
    Rejected { node: NodeId, kind: TxKind, reason: ValidationFailed },
    /// Pending transaction that no longer validated when the block was built.
    Dropped { kind: TxKind, tx_id: TxId, reason: ValidationFailed },
    Carried { tx_id: TxId },
    BlockProposed { number: BlockNumber, digest: Digest, proposer: NodeId, txs: Vec<(TxKind, TxId)> },
    BlockRejected { number: BlockNumber, reason: InvalidBlock },
    Notified(Notification),
    Audit { block: BlockNumber, conserved: bool, replicas_agree: bool },
}

pub struct Engine {
    cfg: MarketConfig,
    nodes: Vec<Node>,
    pool: TxPool,
    trace: Vec<TraceEvent>,
}

/// Node-private generator seeded from the run seed and the node id.
pub fn node_rng(seed: u64, id: &NodeId) -> ChaCha8Rng {
    let d = Digest::of_concat(&[&seed.to_be_bytes(), id.as_str().as_bytes()]);
    ChaCha8Rng::from_seed(d.0)
}

impl Engine {
    pub fn new(config: EngineConfig) -> Self {
        let EngineConfig { market, seed, genesis, options } = config;
        let state = ChainState::genesis(&market.roster, &genesis);
        let nodes = market
            .roster
            .members()
            .iter()
            .map(|m| Node {
                id: m.id.clone(),
                roles: m.roles,
                options: options.get(&m.id).cloned().unwrap_or_default(),
                interest: BTreeSet::new(),
                state: state.clone(),
                rng: node_rng(seed, &m.id),
                secrets: BTreeMap::new(),
                nonce: 0,
            })
            .collect();
        Self { cfg: market, nodes, pool: TxPool::new(), trace: Vec::new() }
    }

    pub fn config(&self) -> &MarketConfig {
        &self.cfg
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: &NodeId) -> Option<&Node> {
        self.nodes.iter().find(|n| n.id == *id)
    }

    /// The first node's replica; all replicas agree while the audit passes.
    pub fn state(&self) -> &ChainState {
        &self.nodes[0].state
    }

    pub fn height(&self) -> BlockNumber {
        self.state().height()
    }

    pub fn pool(&self) -> &TxPool {
        &self.pool
    }

    pub fn take_trace(&mut self) -> Vec<TraceEvent> {
        core::mem::take(&mut self.trace)
    }

    fn node_index(&self, id: &NodeId) -> Result<usize, EngineError> {
        self.nodes
            .iter()
            .position(|n| n.id == *id)
            .ok_or_else(|| EngineError::UnknownNode(id.clone()))
    }

    fn next_context(&self) -> BlockContext {
        let number = self.height() + 1;
        BlockContext { number, proposer: self.cfg.roster.proposer_for(number).clone() }
    }

    /// Validates `tx` against the sender's replica and queues it.
    fn broadcast(&mut self, idx: usize, tx: TransactionEnvelope) -> Result<TxId, EngineError> {
        let node = self.nodes[idx].id.clone();
        let ctx = self.next_context();
        let res = self.nodes[idx]
            .state
            .validate_tx(&self.cfg, &tx, &ctx)
            .and_then(|()| self.pool.admit(tx.clone()));
        match res {
            Ok(()) => {
                self.trace.push(TraceEvent::Admitted { node, kind: tx.kind(), tx_id: tx.id() });
                Ok(tx.id())
            }
            Err(reason) => {
                self.trace.push(TraceEvent::Rejected { node, kind: tx.kind(), reason: reason.clone() });
                Err(reason.into())
            }
        }
    }

    /// Submits an arbitrary user transaction built by the caller.
    pub fn submit(&mut self, tx: TransactionEnvelope) -> Result<TxId, EngineError> {
        let idx = self.node_index(tx.sender())?;
        self.broadcast(idx, tx)
    }

    /// Builds and submits a transaction from `sender` with its next nonce.
    pub fn submit_payload(
        &mut self,
        sender: &NodeId,
        payload: Payload,
        funds: FundsAttachment,
    ) -> Result<TxId, EngineError> {
        let idx = self.node_index(sender)?;
        let nonce = self.nodes[idx].next_nonce();
        let tx = TransactionEnvelope::new(sender.clone(), payload, funds, nonce);
        self.broadcast(idx, tx)
    }

    pub fn advertise(
        &mut self,
        supplier: &NodeId,
        ad: ItemAdvertisement,
        reserve: Option<Units>,
        funds: FundsAttachment,
    ) -> Result<TxId, EngineError> {
        let idx = self.node_index(supplier)?;
        let node = &mut self.nodes[idx];
        let nonce = node.next_nonce();
        let built = roles::handle_user_advertise(supplier, ad, reserve, funds, &mut node.rng, nonce);
        let (tx, secret) = match built {
            Ok(v) => v,
            Err(rule) => {
                let reason = ValidationFailed::platform(rule);
                self.trace.push(TraceEvent::Rejected {
                    node: supplier.clone(),
                    kind: TxKind::ItemAdvertisement,
                    reason: reason.clone(),
                });
                return Err(reason.into());
            }
        };
        let id = self.broadcast(idx, tx.clone())?;
        if let (Some(s), Payload::Advertisement(ad)) = (secret, tx.payload()) {
            if let Some(h) = ad.reserve_hash {
                self.nodes[idx].secrets.insert(h, s);
            }
        }
        Ok(id)
    }

    pub fn bid(
        &mut self,
        bidder: &NodeId,
        ad_id: TxId,
        content: Vec<u8>,
        funds: FundsAttachment,
    ) -> Result<TxId, EngineError> {
        let idx = self.node_index(bidder)?;
        let node = &mut self.nodes[idx];
        let nonce = node.next_nonce();
        node.interest.insert(ad_id);
        let built = roles::handle_user_bid(&self.cfg, &node.state, bidder, ad_id, content, funds, nonce);
        match built {
            Ok(tx) => self.broadcast(idx, tx),
            Err(rule) => {
                let reason = ValidationFailed::platform(rule);
                self.trace.push(TraceEvent::Rejected { node: bidder.clone(), kind: TxKind::Bid, reason: reason.clone() });
                Err(reason.into())
            }
        }
    }

    pub fn evaluate(&mut self, member: &NodeId, ad_id: TxId, form: EvaluationForm) -> Result<TxId, EngineError> {
        self.submit_payload(member, Payload::Evaluation(EvaluationTx { ad_id, form }), FundsAttachment::NONE)
    }

    pub fn dispute(&mut self, party: &NodeId, ad_id: TxId) -> Result<TxId, EngineError> {
        self.submit_payload(party, Payload::ArbitrationRequest { ad_id }, FundsAttachment::NONE)
    }

    pub fn resolve(&mut self, escrow: &NodeId, ad_id: TxId, refundee: &NodeId) -> Result<TxId, EngineError> {
        let payload = Payload::DisputeResolution { ad_id, refundee: refundee.clone() };
        self.submit_payload(escrow, payload, FundsAttachment::NONE)
    }

    pub fn deliver(&mut self, node: &NodeId, ad_id: TxId) -> Result<TxId, EngineError> {
        self.submit_payload(node, Payload::DeliveryRecord { ad_id }, FundsAttachment::NONE)
    }

    /// Follows an advertisement from `consumer`'s point of view.
    pub fn add_interest(&mut self, consumer: &NodeId, ad_id: TxId) -> Result<(), EngineError> {
        let idx = self.node_index(consumer)?;
        self.nodes[idx].interest.insert(ad_id);
        Ok(())
    }

    /// One tick: the round-robin proposer builds the next block from the pool,
    /// every node applies it, then role handlers react in roster order.
    pub fn step(&mut self) -> Vec<TraceEvent> {
        let ctx = self.next_context();
        let pidx = self.node_index(&ctx.proposer).expect("proposer in roster");
        let proposal = self.nodes[pidx].state.propose_next_block(&self.cfg, &mut self.pool);
        for (tx, reason) in proposal.dropped {
            self.trace.push(TraceEvent::Dropped { kind: tx.kind(), tx_id: tx.id(), reason });
        }
        for tx_id in proposal.carried {
            self.trace.push(TraceEvent::Carried { tx_id });
        }
        let block = proposal.block;
        self.trace.push(TraceEvent::BlockProposed {
            number: block.number(),
            digest: *block.digest(),
            proposer: block.proposer().clone(),
            txs: block.txs().iter().map(|t| (t.kind(), t.id())).collect(),
        });
        self.deliver_block(&block);
        self.take_trace()
    }

    /// Hands a block to every node as if received from the network. Invalid
    /// blocks leave every replica untouched.
    pub fn inject_block(&mut self, block: &Block) -> Vec<TraceEvent> {
        self.deliver_block(block);
        self.take_trace()
    }

    fn deliver_block(&mut self, block: &Block) {
        let shared = alloc::sync::Arc::new(block.clone());
        let mut accepted = true;
        for node in &mut self.nodes {
            match node.state.apply_shared(&self.cfg, shared.clone()) {
                Ok(next) => node.state = next,
                Err(reason) => {
                    accepted = false;
                    if self.trace.iter().all(|e| !matches!(e, TraceEvent::BlockRejected { .. })) {
                        self.trace.push(TraceEvent::BlockRejected { number: block.number(), reason });
                    }
                }
            }
        }
        if !accepted {
            return;
        }
        self.run_handlers();
        let conserved = self.nodes.iter().all(|n| n.state.is_conserved());
        let first = self.nodes[0].state.state_digest();
        let replicas_agree = self.nodes.iter().all(|n| n.state.state_digest() == first);
        self.trace.push(TraceEvent::Audit { block: block.number(), conserved, replicas_agree });
    }

    fn run_handlers(&mut self) {
        let next_proposer = self.cfg.roster.proposer_for(self.height() + 1).clone();
        for idx in 0..self.nodes.len() {
            let roles = self.nodes[idx].roles;
            let id = self.nodes[idx].id.clone();
            if id == next_proposer {
                for payload in roles::process_block_by_proposer(&self.cfg, &self.nodes[idx].state) {
                    let nonce = self.nodes[idx].next_nonce();
                    let tx = TransactionEnvelope::new(id.clone(), payload, FundsAttachment::NONE, nonce);
                    self.pool.add_tx_to_prop_block(tx);
                }
            }
            if roles.contains(Role::Supplier) {
                let node = &self.nodes[idx];
                let (notes, txs) = roles::process_block_by_supplier(
                    &node.state,
                    &id,
                    &node.secrets,
                    node.options.withhold_reveal,
                );
                self.trace.extend(notes.into_iter().map(TraceEvent::Notified));
                for payload in txs {
                    let _ = self.submit_payload(&id, payload, FundsAttachment::NONE);
                }
            }
            if roles.contains(Role::Consumer) {
                let node = &self.nodes[idx];
                let notes = roles::process_block_by_consumer(&node.state, &id, &node.interest);
                self.trace.extend(notes.into_iter().map(TraceEvent::Notified));
            }
        }
    }

    /// No pending work: empty pool and every trade in a terminal phase.
    pub fn all_settled(&self) -> bool {
        self.pool.is_empty()
            && self.state().market().trades().all(|t| t.lifecycle.phase.is_terminal())
    }

    /// Per-node state digests, in roster order.
    pub fn replica_digests(&self) -> Vec<(NodeId, Digest)> {
        self.nodes.iter().map(|n| (n.id.clone(), n.state.state_digest())).collect()
    }
}
