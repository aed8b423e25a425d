//! Scenario run loop, trace lines and ledger dump.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use mktsim_core::engine::{Engine, EngineConfig, EngineError, NodeOptions, TraceEvent};
use mktsim_core::{
    Block, EvaluationForm, MarketConfig, Member, NodeId, Roster, TxId, Units,
};

use crate::audit::{self, AuditReport, PluginNames};
use crate::scenario::{Action, EvalSpec, Scenario};

/// Overrides applied on top of the scenario file.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub max_blocks: Option<u64>,
}

#[derive(Debug, Clone, Default)]
pub struct Labels {
    pub ads: BTreeMap<String, TxId>,
    /// Keyed by `(ad label, bid label)`.
    pub bids: BTreeMap<(String, String), TxId>,
    names: BTreeMap<TxId, String>,
}

impl Labels {
    pub fn name(&self, id: &TxId) -> String {
        self.names.get(id).cloned().unwrap_or_else(|| id.short_hex())
    }

    pub fn ad(&self, label: &str) -> Option<TxId> {
        self.ads.get(label).copied()
    }

    pub fn bid(&self, ad: &str, label: &str) -> Option<TxId> {
        self.bids.get(&(ad.to_string(), label.to_string())).copied()
    }
}

pub struct RunOutput {
    pub engine: Engine,
    pub labels: Labels,
    pub trace: Vec<String>,
    pub audit: AuditReport,
}

impl RunOutput {
    pub fn blocks(&self) -> Vec<Block> {
        self.engine.state().blocks().cloned().collect()
    }

    pub fn ledger_dump(&self) -> String {
        ledger_dump(self.engine.state().blocks())
    }

    pub fn balance(&self, node: &str) -> Units {
        self.engine.state().balance(&NodeId::new(node))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SetupError {
    #[error("roster: {0}")]
    Roster(#[from] mktsim_core::chain::RosterError),
    #[error("plug-in {0}/{1} unknown")]
    Plugin(String, String),
}

pub fn build_engine(s: &Scenario, seed: u64) -> Result<Engine, SetupError> {
    let roster = Roster::new(s.nodes.iter().map(|n| Member { id: n.id.clone(), roles: n.roles }).collect())?;
    let mut market = MarketConfig::new(roster);
    market.block_tx_cap = s.block_tx_cap;
    for p in &s.plugins {
        if !market.plugins.register_builtin(p.trade_type, &p.eval, &p.rank) {
            return Err(SetupError::Plugin(p.eval.clone(), p.rank.clone()));
        }
    }
    let genesis = s.nodes.iter().map(|n| (n.id.clone(), n.balance)).collect();
    let options = s
        .nodes
        .iter()
        .filter(|n| n.withhold_reveal)
        .map(|n| (n.id.clone(), NodeOptions { withhold_reveal: true }))
        .collect();
    Ok(Engine::new(EngineConfig { market, seed, genesis, options }))
}

/// Plug-in names per trade type, as the audit oracle needs them.
pub fn plugin_names(s: &Scenario) -> PluginNames {
    let mut names = PluginNames::default();
    for p in &s.plugins {
        names.set(p.trade_type, &p.eval, &p.rank);
    }
    names
}

/// Runs a scenario: before each block the events scheduled for it are issued,
/// then the proposer builds the block and every node processes it. Stops at
/// the block limit, or once no events remain and every trade is settled.
pub fn run_scenario(s: &Scenario, opts: RunOptions) -> Result<RunOutput, SetupError> {
    run_scenario_observed(s, opts, |_| {})
}

/// As [`run_scenario`], calling `after_block` once each block is applied.
pub fn run_scenario_observed(
    s: &Scenario,
    opts: RunOptions,
    mut after_block: impl FnMut(&Engine),
) -> Result<RunOutput, SetupError> {
    let seed = opts.seed.unwrap_or(s.seed);
    let max_blocks = opts.max_blocks.unwrap_or(s.max_blocks);
    let mut engine = build_engine(s, seed)?;
    let mut labels = Labels::default();
    let mut trace = vec![format!("run seed={seed} max-blocks={max_blocks} nodes={}", s.nodes.len())];
    let mut events = s.events.iter().peekable();
    let mut sweeps = Vec::new();
    let mut record = |next: u64, evs: Vec<TraceEvent>, labels: &Labels, trace: &mut Vec<String>| {
        for e in evs {
            if let TraceEvent::Audit { block, conserved, replicas_agree } = e {
                sweeps.push(audit::BlockSweep { block, conserved, replicas_agree });
            }
            trace.push(trace_line(next, &e, labels));
        }
    };

    while engine.height() < max_blocks {
        let next = engine.height() + 1;
        while let Some(ev) = events.next_if(|e| e.at <= next) {
            if let Err(err @ EngineError::UnknownNode(_)) = issue(&mut engine, &mut labels, s, &ev.action) {
                trace.push(format!("event line={} error=\"{err}\"", ev.line));
            }
            record(next, engine.take_trace(), &labels, &mut trace);
        }
        let evs = engine.step();
        record(next, evs, &labels, &mut trace);
        after_block(&engine);
        if events.peek().is_none() && engine.all_settled() {
            break;
        }
    }
    let audit = audit::audit_run(&engine, sweeps, &plugin_names(s));
    Ok(RunOutput { engine, labels, trace, audit })
}

fn issue(engine: &mut Engine, labels: &mut Labels, s: &Scenario, action: &Action) -> Result<(), EngineError> {
    let missing = || EngineError::Rejected(mktsim_core::ValidationFailed::platform(mktsim_core::Rule::UnknownAdvertisement));
    match action {
        Action::Advertise { supplier, label, ad, reserve, funds } => {
            let id = engine.advertise(supplier, (**ad).clone(), *reserve, *funds)?;
            labels.ads.insert(label.clone(), id);
            labels.names.insert(id, label.clone());
            for n in s.nodes.iter().filter(|n| n.interest.contains(label)) {
                engine.add_interest(&n.id, id)?;
            }
        }
        Action::Bid { bidder, ad, label, content, funds } => {
            let ad_id = labels.ad(ad).ok_or_else(missing)?;
            let id = engine.bid(bidder, ad_id, content.clone(), *funds)?;
            labels.bids.insert((ad.clone(), label.clone()), id);
            labels.names.insert(id, format!("{ad}/{label}"));
        }
        Action::Evaluate { member, ad, spec } => {
            let ad_id = labels.ad(ad).ok_or_else(missing)?;
            let form = match spec {
                EvalSpec::Decision { bid } => EvaluationForm::Decision(labels.bid(ad, bid).unwrap_or(TxId::ZERO)),
                EvalSpec::Scores { bid, scores } => EvaluationForm::Scores {
                    bid: labels.bid(ad, bid).unwrap_or(TxId::ZERO),
                    scores: scores.clone(),
                },
            };
            engine.evaluate(member, ad_id, form)?;
        }
        Action::Dispute { party, ad } => {
            engine.dispute(party, labels.ad(ad).ok_or_else(missing)?)?;
        }
        Action::Resolve { escrow, ad, refundee } => {
            engine.resolve(escrow, labels.ad(ad).ok_or_else(missing)?, refundee)?;
        }
        Action::Deliver { node, ad } => {
            engine.deliver(node, labels.ad(ad).ok_or_else(missing)?)?;
        }
    }
    Ok(())
}

/// One trace line per event; `next` is the block being assembled.
pub fn trace_line(next: u64, e: &TraceEvent, labels: &Labels) -> String {
    match e {
        TraceEvent::Admitted { node, kind, tx_id } => {
            format!("admit block={next} node={node} kind={kind} tx={}", labels.name(tx_id))
        }
        TraceEvent::Rejected { node, kind, reason } => format!(
            "reject block={next} node={node} kind={kind} stage={} reason=\"{}\"",
            reason.stage.as_str(),
            reason.rule
        ),
        TraceEvent::Dropped { kind, tx_id, reason } => format!(
            "drop block={next} kind={kind} tx={} stage={} reason=\"{}\"",
            labels.name(tx_id),
            reason.stage.as_str(),
            reason.rule
        ),
        TraceEvent::Carried { tx_id } => format!("carry block={next} tx={}", labels.name(tx_id)),
        TraceEvent::BlockProposed { number, digest, proposer, txs } => {
            let mut l = format!("block number={number} proposer={proposer} digest={} txs={}", digest.short_hex(), txs.len());
            for (kind, id) in txs {
                let _ = write!(l, " {kind}:{}", labels.name(id));
            }
            l
        }
        TraceEvent::BlockRejected { number, reason } => format!("block-rejected number={number} reason=\"{reason}\""),
        TraceEvent::Notified(n) => {
            let mut l = format!("notify block={} target={} kind={} ad={}", next, n.target, n.kind.as_str(), labels.name(&n.ad_id));
            if let Some(v) = n.value {
                let _ = write!(l, " value={v}");
            }
            l
        }
        TraceEvent::Audit { block, conserved, replicas_agree } => {
            format!("audit block={block} conserved={conserved} replicas={replicas_agree}")
        }
    }
}

/// `B<number> <digest-hex> <Kind>:<txid8> ...`, one line per block.
pub fn ledger_dump<'a>(blocks: impl Iterator<Item = &'a Block>) -> String {
    let mut out = String::new();
    for b in blocks {
        let _ = write!(out, "B{} {}", b.number(), b.digest().to_hex());
        for tx in b.txs() {
            let _ = write!(out, " {}:{}", tx.kind(), tx.id().short_hex());
        }
        out.push('\n');
    }
    out
}
