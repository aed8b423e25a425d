//! Trade-type rules: bid validity, the descending-price schedule, winning-bid
//! selection and the pseudo-random tie-break, plus the use-case plug-in contract.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec::Vec;

use crate::chain::ChainState;
use crate::encoding::Digest;
use crate::error::Rule;
use crate::market::TradeRecord;
use crate::types::{
    BidTx, BlockNumber, EvaluationForm, FundsAttachment, ItemAdvertisement, ScoreVector,
    TradeType, TransactionEnvelope, TxId, Units, SCORE_SCALE,
};

/// Evaluates one bid to a score vector. Must be deterministic.
pub trait ObjectiveEval: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, ad: &ItemAdvertisement, bid: &BidTx) -> ScoreVector;
}

/// Picks the winning score out of a set. The result must be an element of
/// `scores`; `None` only for an empty input.
pub trait ObjectiveRanking: Send + Sync {
    fn name(&self) -> &str;
    fn winning_score(&self, ad: &ItemAdvertisement, scores: &[ScoreVector]) -> Option<ScoreVector>;
}

/// Use-case level validation hook, run after the chain and platform checks.
pub trait CustomValidation: Send + Sync {
    fn check(&self, tx: &TransactionEnvelope, state: &ChainState) -> Result<(), String>;
}

impl<F> CustomValidation for F
where
    F: Fn(&TransactionEnvelope, &ChainState) -> Result<(), String> + Send + Sync,
{
    fn check(&self, tx: &TransactionEnvelope, state: &ChainState) -> Result<(), String> {
        self(tx, state)
    }
}

/// Use-case hook that rewrites bid content before the bid is broadcast.
pub trait BidPreprocessor: Send + Sync {
    fn preprocess(&self, ad: &ItemAdvertisement, content: Vec<u8>) -> Vec<u8>;
}

#[derive(Clone)]
pub struct PolicyPlugins {
    pub eval: Arc<dyn ObjectiveEval>,
    pub ranking: Arc<dyn ObjectiveRanking>,
}

impl core::fmt::Debug for PolicyPlugins {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("PolicyPlugins")
            .field("eval", &self.eval.name())
            .field("ranking", &self.ranking.name())
            .finish()
    }
}

/// Plug-ins bound per trade type at engine construction.
#[derive(Clone)]
pub struct PluginRegistry {
    by_type: BTreeMap<TradeType, PolicyPlugins>,
    validation: Option<Arc<dyn CustomValidation>>,
    preprocessor: Option<Arc<dyn BidPreprocessor>>,
}

impl Default for PluginRegistry {
    fn default() -> Self {
        let scores: Arc<dyn ObjectiveEval> = Arc::new(ContentScores);
        let mut by_type = BTreeMap::new();
        for tt in TradeType::ALL {
            let ranking: Arc<dyn ObjectiveRanking> = match tt {
                TradeType::CommitteeEvalCustomRanking => Arc::new(WeightedSumMax),
                _ => Arc::new(MaxScalar),
            };
            by_type.insert(tt, PolicyPlugins { eval: scores.clone(), ranking });
        }
        Self { by_type, validation: None, preprocessor: None }
    }
}

impl core::fmt::Debug for PluginRegistry {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("PluginRegistry")
            .field("by_type", &self.by_type)
            .field("validation", &self.validation.is_some())
            .finish()
    }
}

impl PluginRegistry {
    pub fn register(
        &mut self,
        trade_type: TradeType,
        eval: Arc<dyn ObjectiveEval>,
        ranking: Arc<dyn ObjectiveRanking>,
    ) {
        self.by_type.insert(trade_type, PolicyPlugins { eval, ranking });
    }

    /// Binds built-in plug-ins by name; returns false for unknown names.
    pub fn register_builtin(&mut self, trade_type: TradeType, eval: &str, ranking: &str) -> bool {
        match (builtin_eval(eval), builtin_ranking(ranking)) {
            (Some(e), Some(r)) => {
                self.register(trade_type, e, r);
                true
            }
            _ => false,
        }
    }

    pub fn plugins_for(&self, trade_type: TradeType) -> &PolicyPlugins {
        &self.by_type[&trade_type]
    }

    pub fn set_validation(&mut self, cb: Arc<dyn CustomValidation>) {
        self.validation = Some(cb);
    }

    pub fn validation(&self) -> Option<&Arc<dyn CustomValidation>> {
        self.validation.as_ref()
    }

    pub fn set_preprocessor(&mut self, p: Arc<dyn BidPreprocessor>) {
        self.preprocessor = Some(p);
    }

    pub fn preprocessor(&self) -> Option<&Arc<dyn BidPreprocessor>> {
        self.preprocessor.as_ref()
    }
}

pub fn builtin_eval(name: &str) -> Option<Arc<dyn ObjectiveEval>> {
    match name {
        "content-scores" => Some(Arc::new(ContentScores)),
        "bid-price" => Some(Arc::new(BidPrice)),
        _ => None,
    }
}

pub fn builtin_ranking(name: &str) -> Option<Arc<dyn ObjectiveRanking>> {
    match name {
        "weighted-sum-max" => Some(Arc::new(WeightedSumMax)),
        "max-scalar" => Some(Arc::new(MaxScalar)),
        _ => None,
    }
}

/// Reads the bid content as comma-separated decimal scores. Content that does
/// not parse, or has the wrong dimension, scores all zeros.
pub struct ContentScores;

impl ObjectiveEval for ContentScores {
    fn name(&self) -> &str {
        "content-scores"
    }

    fn evaluate(&self, ad: &ItemAdvertisement, bid: &BidTx) -> ScoreVector {
        let dims = ad.score_dimension();
        core::str::from_utf8(&bid.content)
            .ok()
            .and_then(parse_score_list)
            .filter(|v| v.len() == dims)
            .unwrap_or_else(|| alloc::vec![0; dims])
    }
}

/// Scores a bid by its payment.
pub struct BidPrice;

impl ObjectiveEval for BidPrice {
    fn name(&self) -> &str {
        "bid-price"
    }

    fn evaluate(&self, _ad: &ItemAdvertisement, bid: &BidTx) -> ScoreVector {
        alloc::vec![bid.price() as i64]
    }
}

/// Lexicographic maximum; plain maximum for scalar scores.
pub struct MaxScalar;

impl ObjectiveRanking for MaxScalar {
    fn name(&self) -> &str {
        "max-scalar"
    }

    fn winning_score(&self, _ad: &ItemAdvertisement, scores: &[ScoreVector]) -> Option<ScoreVector> {
        scores.iter().max().cloned()
    }
}

/// Maximum dot product with the advertisement's weights (all ones when none
/// are declared); equal sums fall back to the lexicographic maximum.
pub struct WeightedSumMax;

impl WeightedSumMax {
    pub fn weighted_sum(weights: &[i64], score: &[i64]) -> i128 {
        score
            .iter()
            .enumerate()
            .map(|(i, s)| *s as i128 * weights.get(i).copied().unwrap_or(1) as i128)
            .sum()
    }
}

impl ObjectiveRanking for WeightedSumMax {
    fn name(&self) -> &str {
        "weighted-sum-max"
    }

    fn winning_score(&self, ad: &ItemAdvertisement, scores: &[ScoreVector]) -> Option<ScoreVector> {
        scores
            .iter()
            .max_by(|a, b| {
                Self::weighted_sum(&ad.score_weights, a)
                    .cmp(&Self::weighted_sum(&ad.score_weights, b))
                    .then_with(|| a.cmp(b))
            })
            .cloned()
    }
}

/// Parses a decimal with at most six fractional digits into fixed-point.
pub fn parse_score(text: &str) -> Option<i64> {
    let text = text.trim();
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    if frac_part.len() > 6
        || !int_part.bytes().all(|b| b.is_ascii_digit())
        || !frac_part.bytes().all(|b| b.is_ascii_digit())
    {
        return None;
    }
    let int: i64 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    let mut frac: i64 = if frac_part.is_empty() { 0 } else { frac_part.parse().ok()? };
    for _ in frac_part.len()..6 {
        frac *= 10;
    }
    let v = int.checked_mul(SCORE_SCALE)?.checked_add(frac)?;
    Some(if neg { -v } else { v })
}

pub fn parse_score_list(text: &str) -> Option<ScoreVector> {
    text.split(',').map(parse_score).collect()
}

/// Ledger content the tie-break is seeded with.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedMaterial {
    pub trigger_block_digest: Digest,
    pub ad_id: TxId,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("no candidates to select from")]
pub struct EmptyCandidates;

/// `be64(digest(trigger || adId)[0..8]) mod n`.
pub fn pseudo_random_index(seed: &SeedMaterial, n: usize) -> Result<usize, EmptyCandidates> {
    if n == 0 {
        return Err(EmptyCandidates);
    }
    let d = Digest::of_concat(&[seed.trigger_block_digest.as_bytes(), seed.ad_id.as_bytes()]);
    let mut head = [0u8; 8];
    head.copy_from_slice(&d.0[..8]);
    Ok((u64::from_be_bytes(head) % n as u64) as usize)
}

/// Picks one candidate; `candidates` must be in inclusion order.
pub fn pseudo_random_select<'a>(
    candidates: &[&'a BidTx],
    seed: &SeedMaterial,
) -> Result<&'a BidTx, EmptyCandidates> {
    debug_assert!(candidates.windows(2).all(|w| w[0].inclusion < w[1].inclusion));
    let i = pseudo_random_index(seed, candidates.len())?;
    Ok(candidates[i])
}

/// Scheduled descending price: `stPrice - floor((block - adBlock) / window) * decrement`.
/// `None` once the schedule would drop below zero, or before the advertisement.
pub fn dutch_price_at(
    ad_block: BlockNumber,
    block: BlockNumber,
    start_price: Units,
    bid_window: u64,
    decrement: Units,
) -> Option<Units> {
    let diff = block.checked_sub(ad_block)?;
    let steps = diff / bid_window;
    start_price.checked_sub(steps.checked_mul(decrement)?)
}

/// Window price of a descending-price trade at `block`, or `None` once the
/// schedule has crossed the public reserve (or zero).
pub fn dutch_window_price(ad: &ItemAdvertisement, ad_block: BlockNumber, block: BlockNumber) -> Option<Units> {
    let price = dutch_price_at(ad_block, block, ad.start_price?, ad.bid_window?, ad.min_increment?)?;
    match ad.public_reserve {
        Some(r) if price < r => None,
        _ => Some(price),
    }
}

/// Platform-level validity of a bid for its trade type. `block` is the number
/// of the block the bid would be included in.
pub fn validate_bid_for_trade(
    funds: &FundsAttachment,
    content: &[u8],
    trade: &TradeRecord,
    block: BlockNumber,
) -> Result<(), Rule> {
    let ad = &trade.ad;
    if trade.outcome.is_some() {
        return Err(Rule::TradeAlreadyMatched);
    }
    if block <= trade.ad_block || block > trade.deadlines.sale_end {
        return Err(Rule::SaleClosed);
    }
    if let Some(min) = ad.bid_deposit {
        if funds.deposit.is_none_or(|d| d < min) {
            return Err(Rule::MissingDeposit);
        }
    }
    match ad.trade_type {
        TradeType::EnglishAuction => {
            let p = funds.payment.ok_or(Rule::MissingPayment)?;
            let start = ad.start_price.unwrap_or(0);
            let inc = ad.min_increment.unwrap_or(0);
            match trade.highest_price() {
                None if p >= start => Ok(()),
                None => Err(Rule::BelowStartingPrice),
                Some(max) if p == max => Ok(()),
                Some(max) if p >= max.saturating_add(inc) => Ok(()),
                Some(_) => Err(Rule::IncrementViolation),
            }
        }
        TradeType::DutchAuction => {
            let p = funds.payment.ok_or(Rule::MissingPayment)?;
            let price = dutch_window_price(ad, trade.ad_block, block).ok_or(Rule::SaleClosed)?;
            if p == price {
                Ok(())
            } else {
                Err(Rule::WrongWindowPrice { expected: price })
            }
        }
        TradeType::CommitteeEvalAndRanking
        | TradeType::CommitteeEvalCustomRanking
        | TradeType::CustomObjEvalAndRanking => {
            if content.is_empty() {
                Err(Rule::EmptyContent)
            } else {
                Ok(())
            }
        }
    }
}

/// Per-bid committee scores: the component-wise integer mean of every score
/// evaluation included up to `eval_end`.
pub fn committee_scores(trade: &TradeRecord, eval_end: BlockNumber) -> BTreeMap<TxId, ScoreVector> {
    let mut sums: BTreeMap<TxId, (Vec<i128>, i128)> = BTreeMap::new();
    for ev in trade.evaluations.iter().filter(|e| e.inclusion.block <= eval_end) {
        if let EvaluationForm::Scores { bid, scores } = &ev.form {
            let entry = sums
                .entry(*bid)
                .or_insert_with(|| (alloc::vec![0; scores.len()], 0));
            for (acc, s) in entry.0.iter_mut().zip(scores) {
                *acc += *s as i128;
            }
            entry.1 += 1;
        }
    }
    sums.into_iter()
        .map(|(bid, (sum, n))| (bid, sum.into_iter().map(|s| (s / n) as i64).collect()))
        .collect()
}

/// Winning bid of a trade among `bids` (all valid bids up to the trigger block,
/// in inclusion order), or `None` when the trade type's policy yields no winner.
pub fn select_winning_bid<'a>(
    trade: &TradeRecord,
    bids: &'a [BidTx],
    seed: &SeedMaterial,
    plugins: &PolicyPlugins,
) -> Option<&'a BidTx> {
    if bids.is_empty() {
        return None;
    }
    let ad = &trade.ad;
    match ad.trade_type {
        TradeType::EnglishAuction => {
            let highest = bids.iter().map(BidTx::price).max()?;
            let candidates: Vec<&BidTx> = bids.iter().filter(|b| b.price() == highest).collect();
            pseudo_random_select(&candidates, seed).ok()
        }
        TradeType::DutchAuction => {
            let candidates: Vec<&BidTx> = bids.iter().collect();
            pseudo_random_select(&candidates, seed).ok()
        }
        TradeType::CommitteeEvalAndRanking => {
            let eval_end = trade.deadlines.eval_end?;
            let decided = trade.evaluations.iter().find_map(|e| match e.form {
                EvaluationForm::Decision(bid) if e.inclusion.block <= eval_end => Some(bid),
                _ => None,
            })?;
            bids.iter().find(|b| b.bid_id == decided)
        }
        TradeType::CommitteeEvalCustomRanking => {
            let eval_end = trade.deadlines.eval_end?;
            let scores = committee_scores(trade, eval_end);
            let mut per_bid = Vec::with_capacity(bids.len());
            for b in bids {
                per_bid.push(scores.get(&b.bid_id)?.clone());
            }
            select_by_score(ad, bids, &per_bid, seed, plugins)
        }
        TradeType::CustomObjEvalAndRanking => {
            let per_bid: Vec<ScoreVector> = bids.iter().map(|b| plugins.eval.evaluate(ad, b)).collect();
            select_by_score(ad, bids, &per_bid, seed, plugins)
        }
    }
}

fn select_by_score<'a>(
    ad: &ItemAdvertisement,
    bids: &'a [BidTx],
    per_bid: &[ScoreVector],
    seed: &SeedMaterial,
    plugins: &PolicyPlugins,
) -> Option<&'a BidTx> {
    let winning = plugins.ranking.winning_score(ad, per_bid)?;
    debug_assert!(per_bid.contains(&winning), "ranking output not among its inputs");
    let candidates: Vec<&BidTx> = bids
        .iter()
        .zip(per_bid)
        .filter(|(_, s)| **s == winning)
        .map(|(b, _)| b)
        .collect();
    pseudo_random_select(&candidates, seed).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::EvaluationRecord;
    use crate::types::{Inclusion, NodeId};
    use alloc::vec;

    fn bid(n: u8, price: Option<Units>, content: &str, block: u64, index: u32) -> BidTx {
        BidTx {
            bid_id: Digest::of(&[n]),
            ad_id: Digest::ZERO,
            bidder: NodeId::new(alloc::format!("c{n}")),
            content: content.as_bytes().to_vec(),
            payment: price,
            deposit: None,
            inclusion: Inclusion { block, index },
        }
    }

    fn trade(ad: ItemAdvertisement, ad_block: u64) -> TradeRecord {
        TradeRecord::new(Digest::of(b"ad"), "s".into(), ad, ad_block, FundsAttachment::NONE)
    }

    fn english(st: Units, inc: Units) -> ItemAdvertisement {
        let mut ad = ItemAdvertisement::new(*b"i", TradeType::EnglishAuction, 10);
        ad.start_price = Some(st);
        ad.min_increment = Some(inc);
        ad
    }

    fn dutch() -> ItemAdvertisement {
        let mut ad = ItemAdvertisement::new(*b"d", TradeType::DutchAuction, 40);
        ad.start_price = Some(100);
        ad.min_increment = Some(10);
        ad.bid_window = Some(5);
        ad
    }

    fn seed(n: u64) -> SeedMaterial {
        SeedMaterial { trigger_block_digest: Digest::of(&n.to_be_bytes()), ad_id: Digest::of(b"ad") }
    }

    fn pay(p: Units) -> FundsAttachment {
        FundsAttachment::new(Some(p), None)
    }

    #[test]
    fn english_opening_bid() {
        let t = trade(english(100, 10), 1);
        assert_eq!(validate_bid_for_trade(&pay(100), b"", &t, 2), Ok(()));
        assert_eq!(validate_bid_for_trade(&pay(99), b"", &t, 2), Err(Rule::BelowStartingPrice));
        assert_eq!(validate_bid_for_trade(&FundsAttachment::NONE, b"", &t, 2), Err(Rule::MissingPayment));
    }

    #[test]
    fn english_increment_rule() {
        let mut t = trade(english(100, 10), 1);
        t.bids.push(bid(1, Some(100), "", 2, 0));
        assert_eq!(validate_bid_for_trade(&pay(109), b"", &t, 3), Err(Rule::IncrementViolation));
        assert_eq!(validate_bid_for_trade(&pay(110), b"", &t, 3), Ok(()));

        t.bids.push(bid(2, Some(120), "", 3, 0));
        assert_eq!(validate_bid_for_trade(&pay(120), b"", &t, 4), Ok(()));
        assert_eq!(validate_bid_for_trade(&pay(125), b"", &t, 4), Err(Rule::IncrementViolation));
        assert_eq!(validate_bid_for_trade(&pay(130), b"", &t, 4), Ok(()));
    }

    #[test]
    fn sale_window_bounds() {
        let t = trade(english(100, 10), 5);
        assert_eq!(validate_bid_for_trade(&pay(100), b"", &t, 5), Err(Rule::SaleClosed));
        assert_eq!(validate_bid_for_trade(&pay(100), b"", &t, 15), Ok(()));
        assert_eq!(validate_bid_for_trade(&pay(100), b"", &t, 16), Err(Rule::SaleClosed));
    }

    #[test]
    fn dutch_schedule_arithmetic() {
        assert_eq!(dutch_price_at(3, 3, 100, 5, 10), Some(100));
        assert_eq!(dutch_price_at(0, 15, 100, 5, 10), Some(70));
        assert_eq!(dutch_price_at(0, 12, 100, 5, 10), Some(80));
        assert_eq!(dutch_price_at(0, 55, 100, 5, 10), None);
        assert_eq!(dutch_price_at(4, 3, 100, 5, 10), None);
    }

    #[test]
    fn dutch_only_window_price_accepted() {
        let t = trade(dutch(), 0);
        for p in [70, 79, 81, 90, 100] {
            assert_eq!(
                validate_bid_for_trade(&pay(p), b"", &t, 12),
                Err(Rule::WrongWindowPrice { expected: 80 })
            );
        }
        assert_eq!(validate_bid_for_trade(&pay(80), b"", &t, 12), Ok(()));
        assert_eq!(validate_bid_for_trade(&pay(80), b"", &t, 10), Ok(()));
    }

    #[test]
    fn dutch_reserve_closes_schedule() {
        let mut ad = dutch();
        ad.public_reserve = Some(75);
        assert_eq!(dutch_window_price(&ad, 0, 14), Some(80));
        assert_eq!(dutch_window_price(&ad, 0, 15), None);
        let t = trade(ad, 0);
        assert_eq!(validate_bid_for_trade(&pay(70), b"", &t, 15), Err(Rule::SaleClosed));
    }

    #[test]
    fn bid_deposit_requirement() {
        let mut ad = english(100, 10);
        ad.bid_deposit = Some(5);
        let t = trade(ad, 1);
        assert_eq!(validate_bid_for_trade(&pay(100), b"", &t, 2), Err(Rule::MissingDeposit));
        let f = FundsAttachment::new(Some(100), Some(5));
        assert_eq!(validate_bid_for_trade(&f, b"", &t, 2), Ok(()));
    }

    #[test]
    fn committee_bids_need_content() {
        let mut ad = ItemAdvertisement::new(*b"j", TradeType::CommitteeEvalAndRanking, 10);
        ad.committee = Some(vec!["j".into()]);
        ad.eval_duration = Some(20);
        let t = trade(ad, 1);
        assert_eq!(validate_bid_for_trade(&FundsAttachment::NONE, b"", &t, 2), Err(Rule::EmptyContent));
        assert_eq!(validate_bid_for_trade(&FundsAttachment::NONE, b"cv", &t, 2), Ok(()));
    }

    #[test]
    fn prf_index_layout() {
        let s = seed(9);
        let d = Digest::of_concat(&[s.trigger_block_digest.as_bytes(), s.ad_id.as_bytes()]);
        let expect = u64::from_be_bytes(d.0[..8].try_into().unwrap()) % 7;
        assert_eq!(pseudo_random_index(&s, 7), Ok(expect as usize));
        assert_eq!(pseudo_random_index(&s, 1), Ok(0));
        assert_eq!(pseudo_random_index(&s, 0), Err(EmptyCandidates));
    }

    #[test]
    fn english_selects_among_max() {
        let t = trade(english(100, 10), 1);
        let bids = vec![
            bid(1, Some(100), "", 2, 0),
            bid(2, Some(120), "", 3, 0),
            bid(3, Some(120), "", 3, 1),
        ];
        let plugins = PluginRegistry::default();
        for n in 0..50 {
            let s = seed(n);
            let w = select_winning_bid(&t, &bids, &s, plugins.plugins_for(TradeType::EnglishAuction)).unwrap();
            let i = pseudo_random_index(&s, 2).unwrap();
            assert_eq!(w.bid_id, bids[1 + i].bid_id);
        }
        assert!(select_winning_bid(&t, &[], &seed(0), plugins.plugins_for(TradeType::EnglishAuction)).is_none());
    }

    #[test]
    fn committee_decision_first_included_wins() {
        let mut ad = ItemAdvertisement::new(*b"j", TradeType::CommitteeEvalAndRanking, 10);
        ad.committee = Some(vec!["j1".into(), "j2".into()]);
        ad.eval_duration = Some(20);
        let mut t = trade(ad, 1);
        let bids = vec![bid(1, None, "a", 2, 0), bid(2, None, "b", 3, 0)];
        let plugins = PluginRegistry::default();
        let p = plugins.plugins_for(TradeType::CommitteeEvalAndRanking);
        assert!(select_winning_bid(&t, &bids, &seed(1), p).is_none());
        t.evaluations.push(EvaluationRecord {
            eval_id: Digest::of(b"e1"),
            evaluator: "j2".into(),
            form: EvaluationForm::Decision(bids[1].bid_id),
            inclusion: Inclusion { block: 12, index: 0 },
        });
        t.evaluations.push(EvaluationRecord {
            eval_id: Digest::of(b"e2"),
            evaluator: "j1".into(),
            form: EvaluationForm::Decision(bids[0].bid_id),
            inclusion: Inclusion { block: 13, index: 0 },
        });
        assert_eq!(select_winning_bid(&t, &bids, &seed(1), p).unwrap().bid_id, bids[1].bid_id);
    }

    #[test]
    fn committee_scores_use_integer_mean() {
        let mut ad = ItemAdvertisement::new(*b"l", TradeType::CommitteeEvalCustomRanking, 10);
        ad.committee = Some(vec!["j1".into(), "j2".into()]);
        ad.eval_duration = Some(20);
        ad.score_dims = Some(2);
        let mut t = trade(ad, 1);
        let bids = vec![bid(1, None, "a", 2, 0), bid(2, None, "b", 2, 1)];
        let ev = |who: &str, b: &BidTx, s: Vec<i64>, block| EvaluationRecord {
            eval_id: Digest::of(who.as_bytes()),
            evaluator: who.into(),
            form: EvaluationForm::Scores { bid: b.bid_id, scores: s },
            inclusion: Inclusion { block, index: 0 },
        };
        t.evaluations.push(ev("j1", &bids[0], vec![3, 4], 12));
        let p = PluginRegistry::default();
        let plugins = p.plugins_for(TradeType::CommitteeEvalCustomRanking);
        // second bid unevaluated
        assert!(select_winning_bid(&t, &bids, &seed(2), plugins).is_none());
        t.evaluations.push(ev("j2", &bids[0], vec![4, 4], 13));
        t.evaluations.push(ev("j1", &bids[1], vec![1, 1], 14));
        let scores = committee_scores(&t, 21);
        assert_eq!(scores[&bids[0].bid_id], vec![3, 4]);
        assert_eq!(select_winning_bid(&t, &bids, &seed(2), plugins).unwrap().bid_id, bids[0].bid_id);
        // evaluations after the window do not count
        let late = committee_scores(&t, 13);
        assert!(!late.contains_key(&bids[1].bid_id));
    }

    #[test]
    fn custom_objective_ties_broken_by_prf() {
        let ad = ItemAdvertisement::new(*b"c", TradeType::CustomObjEvalAndRanking, 10);
        let t = trade(ad, 1);
        let bids = vec![bid(1, None, "3", 2, 0), bid(2, None, "7", 2, 1), bid(3, None, "7", 3, 0)];
        let p = PluginRegistry::default();
        let plugins = p.plugins_for(TradeType::CustomObjEvalAndRanking);
        for n in 0..40 {
            let s = seed(n);
            let w = select_winning_bid(&t, &bids, &s, plugins).unwrap();
            assert_eq!(w.bid_id, bids[1 + pseudo_random_index(&s, 2).unwrap()].bid_id);
        }
    }

    #[test]
    fn weighted_sum_ranking() {
        let mut ad = ItemAdvertisement::new(*b"l", TradeType::CommitteeEvalCustomRanking, 10);
        ad.score_weights = vec![2, 1];
        let scores = vec![vec![5, 0], vec![1, 9], vec![4, 1]];
        // 10, 11, 9
        assert_eq!(WeightedSumMax.winning_score(&ad, &scores), Some(vec![1, 9]));
        assert_eq!(MaxScalar.winning_score(&ad, &scores), Some(vec![5, 0]));
        assert_eq!(MaxScalar.winning_score(&ad, &[]), None);
    }

    #[test]
    fn score_parsing() {
        assert_eq!(parse_score("7"), Some(7_000_000));
        assert_eq!(parse_score("7.25"), Some(7_250_000));
        assert_eq!(parse_score("-0.5"), Some(-500_000));
        assert_eq!(parse_score(".000001"), Some(1));
        assert_eq!(parse_score("1.0000001"), None);
        assert_eq!(parse_score("x"), None);
        assert_eq!(parse_score_list("1,2.5"), Some(vec![1_000_000, 2_500_000]));
    }
}
