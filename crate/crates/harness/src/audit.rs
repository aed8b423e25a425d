//! Run audits: per-block conservation and replica sweeps, settlement checks,
//! and a brute-force matching oracle that recomputes every trade's outcome
//! from the raw transaction log without going through the policy module.

use std::collections::BTreeMap;
use std::fmt;

use mktsim_core::engine::Engine;
use mktsim_core::escrow::EscrowState;
use mktsim_core::{
    Block, Digest, EvaluationForm, ItemAdvertisement, NodeId, Payload, TradeType, TxId, Units,
};
use sha2::{Digest as _, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockSweep {
    pub block: u64,
    pub conserved: bool,
    pub replicas_agree: bool,
}

/// Evaluation and ranking plug-in names per trade type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginNames(BTreeMap<TradeType, (String, String)>);

impl Default for PluginNames {
    fn default() -> Self {
        let map = TradeType::ALL
            .iter()
            .map(|tt| {
                let rank = match tt {
                    TradeType::CommitteeEvalCustomRanking => "weighted-sum-max",
                    _ => "max-scalar",
                };
                (*tt, ("content-scores".to_string(), rank.to_string()))
            })
            .collect();
        Self(map)
    }
}

impl PluginNames {
    pub fn set(&mut self, tt: TradeType, eval: &str, rank: &str) {
        self.0.insert(tt, (eval.to_string(), rank.to_string()));
    }

    fn get(&self, tt: TradeType) -> (&str, &str) {
        let (e, r) = &self.0[&tt];
        (e, r)
    }
}

/// What the ledger says, or what the oracle expects, for one trade.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Outcome {
    Assigned { bid: TxId, trigger: u64 },
    NoAssignment { trigger: u64 },
    /// Deadline not reached within the run.
    Pending,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Assigned { bid, trigger } => write!(f, "assigned {} at {trigger}", bid.short_hex()),
            Outcome::NoAssignment { trigger } => write!(f, "no-assignment at {trigger}"),
            Outcome::Pending => f.write_str("pending"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchAudit {
    pub ad_id: TxId,
    pub ledger: Outcome,
    pub oracle: Outcome,
    /// Blocks holding a matching transaction for this ad.
    pub included_at: Vec<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AuditReport {
    pub sweeps: Vec<BlockSweep>,
    pub final_digest: Digest,
    pub matching: Vec<MatchAudit>,
    pub violations: Vec<String>,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn summary(&self) -> String {
        let mut s = format!(
            "audit blocks={} trades={} final-digest={} violations={}\n",
            self.sweeps.len(),
            self.matching.len(),
            self.final_digest.to_hex(),
            self.violations.len()
        );
        for v in &self.violations {
            s.push_str("violation ");
            s.push_str(v);
            s.push('\n');
        }
        s
    }
}

/// Full audit of a finished run.
pub fn audit_run(engine: &Engine, sweeps: Vec<BlockSweep>, plugins: &PluginNames) -> AuditReport {
    let mut violations = Vec::new();
    for s in &sweeps {
        if !s.conserved {
            violations.push(format!("block {}: supply not conserved", s.block));
        }
        if !s.replicas_agree {
            violations.push(format!("block {}: replica states differ", s.block));
        }
    }
    let state = engine.state();
    let blocks: Vec<Block> = state.blocks().cloned().collect();
    let strict = engine.config().block_tx_cap.is_none();
    let matching = oracle_matching(&blocks, plugins);
    violations.extend(matching_violations(&matching, strict));

    for trade in state.market().trades() {
        if !trade.lifecycle.phase.is_terminal() {
            continue;
        }
        let open = state
            .locked()
            .keys()
            .filter(|l| state.market().trade_of_lock(l) == Some(&trade.ad_id))
            .count();
        if open > 0 {
            violations.push(format!(
                "ad {}: {} locked entries left after settlement",
                trade.ad_id.short_hex(),
                open
            ));
        }
    }
    for case in state.market().escrow_cases() {
        if case.state.is_terminal() {
            continue;
        }
        if state.height() > case.release_due_at() && case.state != EscrowState::Disputed {
            violations.push(format!("ad {}: escrow not released after its safety window", case.ad_id.short_hex()));
        }
    }
    AuditReport { sweeps, final_digest: *state.head().digest(), matching, violations }
}

/// Violations in a matching audit. With `strict` timing the matching
/// transaction must sit in the block right after its trigger; otherwise
/// (block cap in force) it may be carried over to a later block.
pub fn matching_violations(matching: &[MatchAudit], strict: bool) -> Vec<String> {
    let mut out = Vec::new();
    for m in matching {
        let ad = m.ad_id.short_hex();
        let expected = match &m.oracle {
            Outcome::Assigned { trigger, .. } | Outcome::NoAssignment { trigger } => Some(*trigger),
            Outcome::Pending => None,
        };
        match (expected, m.included_at.as_slice()) {
            (None, []) => continue,
            (None, at) => out.push(format!("ad {ad}: matching at {at:?} before its deadline")),
            (Some(_), []) => out.push(format!("ad {ad}: no matching transaction")),
            (Some(t), [at]) => {
                if *at <= t {
                    out.push(format!("ad {ad}: matching at {at}, trigger {t}"));
                } else if strict && *at != t + 1 {
                    out.push(format!("ad {ad}: matching at {at}, expected {}", t + 1));
                }
            }
            (Some(_), at) => out.push(format!("ad {ad}: {} matching transactions at {at:?}", at.len())),
        }
        if expected.is_some() && m.ledger != m.oracle {
            out.push(format!("ad {ad}: ledger {} but oracle {}", m.ledger, m.oracle));
        }
    }
    out
}

#[derive(Debug, Clone)]
struct RawBid {
    id: TxId,
    price: Units,
    content: Vec<u8>,
    at: (u64, usize),
}

#[derive(Debug, Clone)]
struct RawTrade {
    id: TxId,
    ad: ItemAdvertisement,
    block: u64,
    bids: Vec<RawBid>,
    reserve: Option<Units>,
    decisions: Vec<(u64, TxId)>,
    scores: Vec<(u64, NodeId, TxId, Vec<i64>)>,
    ledger: Vec<(u64, Outcome)>,
}

/// Recomputes every trade's outcome from `blocks` (index = block number).
pub fn oracle_matching(blocks: &[Block], plugins: &PluginNames) -> Vec<MatchAudit> {
    let mut trades: BTreeMap<TxId, RawTrade> = BTreeMap::new();
    let mut order = Vec::new();
    for b in blocks {
        let n = b.number();
        for (i, tx) in b.txs().iter().enumerate() {
            match tx.payload() {
                Payload::Advertisement(ad) => {
                    order.push(tx.id());
                    trades.insert(
                        tx.id(),
                        RawTrade {
                            id: tx.id(),
                            ad: ad.clone(),
                            block: n,
                            bids: vec![],
                            reserve: None,
                            decisions: vec![],
                            scores: vec![],
                            ledger: vec![],
                        },
                    );
                }
                Payload::Bid(bid) => {
                    if let Some(t) = trades.get_mut(&bid.ad_id) {
                        t.bids.push(RawBid {
                            id: tx.id(),
                            price: tx.funds().payment.unwrap_or(0),
                            content: bid.content.clone(),
                            at: (n, i),
                        });
                    }
                }
                Payload::Revelation(rev) => {
                    if let Some(t) = trades.get_mut(&rev.ad_id) {
                        let mut h = Sha256::new();
                        h.update(rev.res_price.to_be_bytes());
                        h.update(&rev.salt);
                        let d: [u8; 32] = h.finalize().into();
                        let sale_end = t.block + t.ad.sale_duration;
                        let reveal_end = sale_end + t.ad.reveal_duration.unwrap_or(0);
                        let in_window = n > sale_end && n <= reveal_end;
                        if t.reserve.is_none() && in_window && t.ad.reserve_hash.map(|x| x.0) == Some(d) {
                            t.reserve = Some(rev.res_price);
                        }
                    }
                }
                Payload::Evaluation(ev) => {
                    if let Some(t) = trades.get_mut(&ev.ad_id) {
                        match &ev.form {
                            EvaluationForm::Decision(bid) => t.decisions.push((n, *bid)),
                            EvaluationForm::Scores { bid, scores } => {
                                t.scores.push((n, tx.sender().clone(), *bid, scores.clone()))
                            }
                        }
                    }
                }
                Payload::Assignment(a) => {
                    if let Some(t) = trades.get_mut(&a.ad_id) {
                        t.ledger.push((n, Outcome::Assigned { bid: a.winning_bid, trigger: a.trigger_block }));
                    }
                }
                Payload::NoAssignment(na) => {
                    if let Some(t) = trades.get_mut(&na.ad_id) {
                        t.ledger.push((n, Outcome::NoAssignment { trigger: na.trigger_block }));
                    }
                }
                _ => {}
            }
        }
    }
    let head = blocks.last().map_or(0, Block::number);
    order
        .iter()
        .map(|id| {
            let t = &trades[id];
            let oracle = match trigger_block(t) {
                Some(trig) if trig < head => expected_outcome(t, trig, blocks[trig as usize].digest(), plugins),
                _ => Outcome::Pending,
            };
            MatchAudit {
                ad_id: t.id,
                ledger: t.ledger.first().map_or(Outcome::Pending, |(_, o)| o.clone()),
                oracle,
                included_at: t.ledger.iter().map(|(n, _)| *n).collect(),
            }
        })
        .collect()
}

/// Block whose application makes the trade ready for matching.
fn trigger_block(t: &RawTrade) -> Option<u64> {
    let ad = &t.ad;
    let a = t.block;
    let sale_end = a + ad.sale_duration;
    if ad.reveal_flag {
        return Some(sale_end + ad.reveal_duration?);
    }
    if ad.committee.is_some() {
        return Some(a + ad.eval_duration?);
    }
    if ad.trade_type != TradeType::DutchAuction {
        return Some(sale_end);
    }
    let (start, window, dec) = (ad.start_price? as i128, ad.bid_window?, ad.min_increment? as i128);
    let floor = ad.public_reserve.unwrap_or(0) as i128;
    let mut k = 0u64;
    loop {
        let close = a + (k + 1) * window - 1;
        if close >= sale_end {
            return Some(sale_end);
        }
        if t.bids.iter().any(|b| b.at.0 <= close) {
            return Some(close);
        }
        if start - (k as i128 + 1) * dec < floor {
            return Some(close);
        }
        k += 1;
    }
}

fn prf_index(trigger: &Digest, ad: &TxId, n: usize) -> usize {
    let d = Sha256::new().chain_update(trigger.0).chain_update(ad.0).finalize();
    let head: [u8; 8] = d[..8].try_into().expect("digest has 32 bytes");
    (u64::from_be_bytes(head) % n as u64) as usize
}

fn expected_outcome(t: &RawTrade, trigger: u64, digest: &Digest, plugins: &PluginNames) -> Outcome {
    let bids: Vec<&RawBid> = t.bids.iter().filter(|b| b.at.0 <= trigger).collect();
    let pick = |cands: Vec<&RawBid>| -> Option<TxId> {
        if cands.is_empty() {
            None
        } else {
            Some(cands[prf_index(digest, &t.id, cands.len())].id)
        }
    };
    let ad = &t.ad;
    let mut winner = if bids.is_empty() {
        None
    } else {
        match ad.trade_type {
            TradeType::EnglishAuction => {
                let max = bids.iter().map(|b| b.price).max().unwrap_or(0);
                pick(bids.iter().copied().filter(|b| b.price == max).collect())
            }
            TradeType::DutchAuction => pick(bids.clone()),
            TradeType::CommitteeEvalAndRanking => t
                .decisions
                .iter()
                .find(|(n, _)| *n <= trigger)
                .map(|(_, b)| *b)
                .filter(|b| bids.iter().any(|x| x.id == *b)),
            TradeType::CommitteeEvalCustomRanking => {
                let mut per_bid = Vec::new();
                for b in &bids {
                    let evs: Vec<&Vec<i64>> = t
                        .scores
                        .iter()
                        .filter(|(n, _, bid, _)| *n <= trigger && *bid == b.id)
                        .map(|(_, _, _, s)| s)
                        .collect();
                    if evs.is_empty() {
                        per_bid.clear();
                        break;
                    }
                    let dims = evs[0].len();
                    let mean: Vec<i64> = (0..dims)
                        .map(|i| (evs.iter().map(|s| s[i] as i128).sum::<i128>() / evs.len() as i128) as i64)
                        .collect();
                    per_bid.push((*b, mean));
                }
                if per_bid.is_empty() {
                    None
                } else {
                    by_rank(ad, per_bid, plugins.get(ad.trade_type).1, pick)
                }
            }
            TradeType::CustomObjEvalAndRanking => {
                let (eval, rank) = plugins.get(ad.trade_type);
                let per_bid = bids.iter().map(|b| (*b, oracle_eval(ad, b, eval))).collect();
                by_rank(ad, per_bid, rank, pick)
            }
        }
    };
    if ad.reveal_flag {
        let price_of = |id: TxId| bids.iter().find(|b| b.id == id).map_or(0, |b| b.price);
        match (winner, t.reserve) {
            (Some(w), Some(r)) if price_of(w) >= r => {}
            _ => winner = None,
        }
    }
    match winner {
        Some(bid) => Outcome::Assigned { bid, trigger },
        None => Outcome::NoAssignment { trigger },
    }
}

fn by_rank<'a>(
    ad: &ItemAdvertisement,
    per_bid: Vec<(&'a RawBid, Vec<i64>)>,
    rank: &str,
    pick: impl Fn(Vec<&'a RawBid>) -> Option<TxId>,
) -> Option<TxId> {
    let key = |s: &Vec<i64>| -> (i128, Vec<i64>) {
        match rank {
            "weighted-sum-max" => {
                let w = |i: usize| ad.score_weights.get(i).copied().unwrap_or(1) as i128;
                (s.iter().enumerate().map(|(i, v)| *v as i128 * w(i)).sum(), s.clone())
            }
            _ => (0, s.clone()),
        }
    };
    let best = per_bid.iter().map(|(_, s)| key(s)).max()?;
    pick(per_bid.iter().filter(|(_, s)| key(s) == best).map(|(b, _)| *b).collect())
}

fn oracle_eval(ad: &ItemAdvertisement, b: &RawBid, eval: &str) -> Vec<i64> {
    if eval == "bid-price" {
        return vec![b.price as i64];
    }
    let dims = ad.score_dims.unwrap_or(1) as usize;
    let parsed: Option<Vec<i64>> = std::str::from_utf8(&b.content)
        .ok()
        .and_then(|s| s.split(',').map(fixed_point).collect());
    parsed.filter(|v| v.len() == dims).unwrap_or_else(|| vec![0; dims])
}

/// Decimal text to micro-units, at most six fractional digits.
fn fixed_point(s: &str) -> Option<i64> {
    let s = s.trim();
    let (sign, body) = s.strip_prefix('-').map_or((1, s), |r| (-1, r));
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if (int.is_empty() && frac.is_empty()) || frac.len() > 6 {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let padded = format!("{}{:0<6}", if int.is_empty() { "0" } else { int }, frac);
    padded.parse::<i64>().ok().map(|v| sign * v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_point_matches_hand_values() {
        assert_eq!(fixed_point("2.5"), Some(2_500_000));
        assert_eq!(fixed_point("-0.000001"), Some(-1));
        assert_eq!(fixed_point(".5"), Some(500_000));
        assert_eq!(fixed_point("1.2345678"), None);
        assert_eq!(fixed_point("x"), None);
    }

    #[test]
    fn prf_index_in_range() {
        let d = Digest([3; 32]);
        for n in 1..10 {
            assert!(prf_index(&d, &Digest([9; 32]), n) < n);
        }
    }
}
