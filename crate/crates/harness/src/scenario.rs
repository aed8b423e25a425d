//! Line-oriented scenario files.
//!
//! ```text
//! seed 42
//! max-blocks 30
//! node p roles=proposer balance=0
//! node s roles=supplier balance=1000
//! node c1 roles=consumer balance=500 interest=lamp
//! at 1 advertise s label=lamp type=english dsale=10 stprice=100 inc=10
//! at 3 bid c1 ad=lamp price=120 content="blue one"
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use mktsim_core::error::AdDefect;
use mktsim_core::policy;
use mktsim_core::{
    Digest, FundsAttachment, ItemAdvertisement, NodeId, Role, RoleSet, TradeType, Units,
};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },
    #[error("line {line}: unknown actor {actor}")]
    UnknownActor { line: usize, actor: String },
    #[error("line {line}: bad parameter {param}: {reason}")]
    BadParameter { line: usize, param: String, reason: String },
    #[error("cannot read scenario: {0}")]
    Io(String),
}

impl ParseError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::Syntax { line, .. }
            | ParseError::UnknownActor { line, .. }
            | ParseError::BadParameter { line, .. } => Some(*line),
            ParseError::Io(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeDecl {
    pub id: NodeId,
    pub roles: RoleSet,
    pub balance: Units,
    pub interest: Vec<String>,
    pub withhold_reveal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PluginDecl {
    pub trade_type: TradeType,
    pub eval: String,
    pub rank: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EvalSpec {
    Decision { bid: String },
    Scores { bid: String, scores: Vec<i64> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Advertise {
        supplier: NodeId,
        label: String,
        ad: Box<ItemAdvertisement>,
        reserve: Option<Units>,
        funds: FundsAttachment,
    },
    Bid {
        bidder: NodeId,
        ad: String,
        label: String,
        content: Vec<u8>,
        funds: FundsAttachment,
    },
    Evaluate { member: NodeId, ad: String, spec: EvalSpec },
    Dispute { party: NodeId, ad: String },
    Resolve { escrow: NodeId, ad: String, refundee: NodeId },
    Deliver { node: NodeId, ad: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Event {
    pub at: u64,
    pub line: usize,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub seed: u64,
    pub max_blocks: u64,
    pub block_tx_cap: Option<usize>,
    pub nodes: Vec<NodeDecl>,
    pub plugins: Vec<PluginDecl>,
    /// Sorted by block; file order within a block.
    pub events: Vec<Event>,
}

pub const DEFAULT_MAX_BLOCKS: u64 = 100;

impl Scenario {
    pub fn from_path(path: &Path) -> Result<Scenario, ParseError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ParseError::Io(format!("{}: {e}", path.display())))?;
        parse(&text)
    }

    pub fn node(&self, id: &NodeId) -> Option<&NodeDecl> {
        self.nodes.iter().find(|n| n.id == *id)
    }
}

/// Splits a line into whitespace-separated tokens; double quotes group text
/// (with `\"` and `\\` escapes) and are removed.
fn tokenize(line: &str, lineno: usize) -> Result<Vec<String>, ParseError> {
    let mut out = Vec::new();
    let mut cur = String::new();
    let mut in_token = false;
    let mut chars = line.chars();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                in_token = true;
                loop {
                    match chars.next() {
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(e) => cur.push(e),
                            None => break,
                        },
                        Some(x) => cur.push(x),
                        None => {
                            return Err(ParseError::Syntax { line: lineno, reason: "unterminated quote".into() })
                        }
                    }
                }
            }
            c if c.is_whitespace() => {
                if in_token {
                    out.push(std::mem::take(&mut cur));
                    in_token = false;
                }
            }
            c => {
                in_token = true;
                cur.push(c);
            }
        }
    }
    if in_token {
        out.push(cur);
    }
    Ok(out)
}

fn strip_comment(line: &str) -> &str {
    let mut in_quote = false;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        match c {
            '\\' if in_quote && !escaped => {
                escaped = true;
                continue;
            }
            '"' if !escaped => in_quote = !in_quote,
            '#' if !in_quote => return &line[..i],
            _ => {}
        }
        escaped = false;
    }
    line
}

/// `key=value` parameters plus bare flags of one directive.
struct Params {
    line: usize,
    kv: BTreeMap<String, String>,
    flags: BTreeSet<String>,
}

impl Params {
    fn new(line: usize, tokens: &[String], allowed: &[&str], allowed_flags: &[&str]) -> Result<Self, ParseError> {
        let mut kv = BTreeMap::new();
        let mut flags = BTreeSet::new();
        for t in tokens {
            match t.split_once('=') {
                Some((k, v)) => {
                    if !allowed.contains(&k) {
                        return Err(bad(line, k, "unknown parameter"));
                    }
                    if kv.insert(k.to_string(), v.to_string()).is_some() {
                        return Err(bad(line, k, "given twice"));
                    }
                }
                None => {
                    if !allowed_flags.contains(&t.as_str()) {
                        return Err(ParseError::Syntax { line, reason: format!("unexpected token {t:?}") });
                    }
                    flags.insert(t.clone());
                }
            }
        }
        Ok(Self { line, kv, flags })
    }

    fn flag(&self, name: &str) -> bool {
        self.flags.contains(name)
    }

    fn str(&self, key: &str) -> Option<&str> {
        self.kv.get(key).map(String::as_str)
    }

    fn required(&self, key: &str) -> Result<&str, ParseError> {
        self.str(key).ok_or_else(|| bad(self.line, key, "missing"))
    }

    fn u64(&self, key: &str) -> Result<Option<u64>, ParseError> {
        self.str(key)
            .map(|v| v.parse::<u64>().map_err(|_| bad(self.line, key, &format!("{v:?} is not a non-negative integer"))))
            .transpose()
    }

    fn positive(&self, key: &str) -> Result<Option<u64>, ParseError> {
        match self.u64(key)? {
            Some(0) => Err(bad(self.line, key, "must be positive")),
            v => Ok(v),
        }
    }

    fn list(&self, key: &str) -> Option<Vec<String>> {
        self.str(key)
            .map(|v| v.split(',').filter(|s| !s.is_empty()).map(str::to_string).collect())
    }
}

fn bad(line: usize, param: &str, reason: &str) -> ParseError {
    ParseError::BadParameter { line, param: param.to_string(), reason: reason.to_string() }
}

fn parse_u64(line: usize, what: &str, v: Option<&String>) -> Result<u64, ParseError> {
    let v = v.ok_or_else(|| ParseError::Syntax { line, reason: format!("{what} expects a value") })?;
    v.parse().map_err(|_| bad(line, what, &format!("{v:?} is not a non-negative integer")))
}

fn defect_param(d: AdDefect) -> &'static str {
    use AdDefect::*;
    match d {
        ZeroSaleDuration => "dsale",
        ZeroDuration => "duration",
        MissingReserveCommitment => "reserve",
        MissingRevealDuration => "dreveal",
        MissingCommittee | EmptyCommittee | RevealWithCommittee | CommitteeNotUsed => "committee",
        MissingEvalDuration | EvalNotAfterSale => "deval",
        MissingStartPrice => "stprice",
        MissingIncrement => "inc",
        MissingBidWindow => "dbid",
        RevealOnDutch => "revflag",
        PublicReserveNotDutch | ReserveAboveStart => "reserve",
        ZeroScoreDims => "dims",
        WeightDimension => "weights",
    }
}

struct Parser {
    scenario: Scenario,
    seen_seed: bool,
    ads: BTreeMap<String, (NodeId, TradeType)>,
    bids: BTreeSet<String>,
}

impl Parser {
    fn actor(&self, line: usize, name: &str) -> Result<NodeId, ParseError> {
        let id = NodeId::new(name);
        if self.scenario.node(&id).is_some() {
            Ok(id)
        } else {
            Err(ParseError::UnknownActor { line, actor: name.to_string() })
        }
    }

    fn ad_label(&self, p: &Params) -> Result<String, ParseError> {
        let label = p.required("ad")?;
        if !self.ads.contains_key(label) {
            return Err(bad(p.line, "ad", &format!("no advertisement labelled {label:?} before this line")));
        }
        Ok(label.to_string())
    }

    fn directive(&mut self, line: usize, tokens: Vec<String>) -> Result<(), ParseError> {
        let head = tokens[0].as_str();
        match head {
            "seed" => {
                self.scenario.seed = parse_u64(line, "seed", tokens.get(1))?;
                self.seen_seed = true;
                self.no_extra(line, &tokens, 2)
            }
            "max-blocks" => {
                self.scenario.max_blocks = parse_u64(line, "max-blocks", tokens.get(1))?;
                self.no_extra(line, &tokens, 2)
            }
            "block-tx-cap" => {
                let cap = parse_u64(line, "block-tx-cap", tokens.get(1))?;
                if cap == 0 {
                    return Err(bad(line, "block-tx-cap", "must be positive"));
                }
                self.scenario.block_tx_cap = Some(cap as usize);
                self.no_extra(line, &tokens, 2)
            }
            "node" => self.node(line, &tokens),
            "plugin" => self.plugin(line, &tokens),
            "at" => self.event(line, &tokens),
            other => Err(ParseError::Syntax { line, reason: format!("unknown directive {other:?}") }),
        }
    }

    fn no_extra(&self, line: usize, tokens: &[String], n: usize) -> Result<(), ParseError> {
        match tokens.get(n) {
            Some(t) => Err(ParseError::Syntax { line, reason: format!("unexpected token {t:?}") }),
            None => Ok(()),
        }
    }

    fn node(&mut self, line: usize, tokens: &[String]) -> Result<(), ParseError> {
        let name = tokens
            .get(1)
            .filter(|t| !t.contains('='))
            .ok_or_else(|| ParseError::Syntax { line, reason: "node expects an id".into() })?;
        let p = Params::new(line, &tokens[2..], &["roles", "balance", "interest", "fault"], &[])?;
        let id = NodeId::new(name.as_str());
        if self.scenario.node(&id).is_some() {
            return Err(bad(line, "node", &format!("{name} declared twice")));
        }
        let mut roles = RoleSet::empty();
        for r in p.list("roles").ok_or_else(|| bad(line, "roles", "missing"))? {
            roles.insert(Role::parse(&r).ok_or_else(|| bad(line, "roles", &format!("unknown role {r:?}")))?);
        }
        if roles.is_empty() {
            return Err(bad(line, "roles", "empty"));
        }
        let withhold_reveal = match p.str("fault") {
            None => false,
            Some("withholdReveal") => true,
            Some(f) => return Err(bad(line, "fault", &format!("unknown fault {f:?}"))),
        };
        self.scenario.nodes.push(NodeDecl {
            id,
            roles,
            balance: p.u64("balance")?.unwrap_or(0),
            interest: p.list("interest").unwrap_or_default(),
            withhold_reveal,
        });
        Ok(())
    }

    fn plugin(&mut self, line: usize, tokens: &[String]) -> Result<(), ParseError> {
        let tt_name = tokens
            .get(1)
            .ok_or_else(|| ParseError::Syntax { line, reason: "plugin expects a trade type".into() })?;
        let trade_type =
            TradeType::parse(tt_name).ok_or_else(|| bad(line, "type", &format!("unknown trade type {tt_name:?}")))?;
        let p = Params::new(line, &tokens[2..], &["eval", "rank"], &[])?;
        let eval = p.str("eval").unwrap_or("content-scores").to_string();
        let rank = p.str("rank").unwrap_or("max-scalar").to_string();
        if policy::builtin_eval(&eval).is_none() {
            return Err(bad(line, "eval", &format!("unknown plug-in {eval:?}")));
        }
        if policy::builtin_ranking(&rank).is_none() {
            return Err(bad(line, "rank", &format!("unknown plug-in {rank:?}")));
        }
        self.scenario.plugins.push(PluginDecl { trade_type, eval, rank });
        Ok(())
    }

    fn event(&mut self, line: usize, tokens: &[String]) -> Result<(), ParseError> {
        let at = parse_u64(line, "at", tokens.get(1))?;
        if at == 0 {
            return Err(bad(line, "at", "events start at block 1"));
        }
        let verb = tokens
            .get(2)
            .ok_or_else(|| ParseError::Syntax { line, reason: "missing action".into() })?;
        let actor_name = tokens
            .get(3)
            .filter(|t| !t.contains('='))
            .ok_or_else(|| ParseError::Syntax { line, reason: format!("{verb} expects an actor") })?;
        let actor = self.actor(line, actor_name)?;
        let rest = &tokens[4..];
        let action = match verb.as_str() {
            "advertise" => self.advertise(line, actor, rest)?,
            "bid" => {
                let p = Params::new(line, rest, &["ad", "price", "deposit", "content", "label"], &[])?;
                let ad = self.ad_label(&p)?;
                let label = p.str("label").unwrap_or(actor.as_str()).to_string();
                if !self.bids.insert(format!("{ad}/{label}")) {
                    return Err(bad(line, "label", &format!("bid {label:?} already used for {ad:?}")));
                }
                let content = p.str("content").unwrap_or("").as_bytes().to_vec();
                Action::Bid {
                    bidder: actor,
                    ad,
                    label,
                    content,
                    funds: FundsAttachment::new(p.u64("price")?, p.u64("deposit")?),
                }
            }
            "evaluate" => {
                let p = Params::new(line, rest, &["ad", "decision", "bid", "score"], &[])?;
                let ad = self.ad_label(&p)?;
                let spec = match (p.str("decision"), p.str("bid"), p.str("score")) {
                    (Some(d), None, None) => EvalSpec::Decision { bid: d.to_string() },
                    (None, Some(b), Some(s)) => {
                        let scores = policy::parse_score_list(s)
                            .ok_or_else(|| bad(line, "score", &format!("{s:?} is not a list of decimals")))?;
                        EvalSpec::Scores { bid: b.to_string(), scores }
                    }
                    _ => {
                        return Err(ParseError::Syntax {
                            line,
                            reason: "evaluate takes decision=<bid> or bid=<bid> score=<list>".into(),
                        })
                    }
                };
                Action::Evaluate { member: actor, ad, spec }
            }
            "dispute" => {
                let p = Params::new(line, rest, &["ad"], &[])?;
                Action::Dispute { party: actor, ad: self.ad_label(&p)? }
            }
            "resolve" => {
                let p = Params::new(line, rest, &["ad", "refund"], &[])?;
                let ad = self.ad_label(&p)?;
                let refundee = self.actor(line, p.required("refund")?)?;
                Action::Resolve { escrow: actor, ad, refundee }
            }
            "deliver" => {
                let p = Params::new(line, rest, &["ad"], &[])?;
                Action::Deliver { node: actor, ad: self.ad_label(&p)? }
            }
            other => return Err(ParseError::Syntax { line, reason: format!("unknown action {other:?}") }),
        };
        self.scenario.events.push(Event { at, line, action });
        Ok(())
    }

    fn advertise(&mut self, line: usize, supplier: NodeId, rest: &[String]) -> Result<Action, ParseError> {
        let p = Params::new(
            line,
            rest,
            &[
                "label", "type", "dsale", "reserve", "stprice", "dbid", "dreveal", "deval", "inc",
                "payment", "deposit", "committee", "item", "dims", "weights", "safety", "biddeposit",
            ],
            &["revflag", "physical"],
        )?;
        let label = p.required("label")?.to_string();
        if self.ads.contains_key(&label) {
            return Err(bad(line, "label", &format!("advertisement {label:?} already declared")));
        }
        let tt_name = p.required("type")?;
        let trade_type =
            TradeType::parse(tt_name).ok_or_else(|| bad(line, "type", &format!("unknown trade type {tt_name:?}")))?;
        let sale = p.positive("dsale")?.ok_or_else(|| bad(line, "dsale", "missing"))?;
        let item = p.str("item").unwrap_or(&label).as_bytes().to_vec();
        let mut ad = ItemAdvertisement::new(item, trade_type, sale);
        ad.reveal_flag = p.flag("revflag");
        ad.physical = p.flag("physical");
        ad.start_price = p.u64("stprice")?;
        ad.bid_window = p.positive("dbid")?;
        ad.reveal_duration = p.positive("dreveal")?;
        ad.eval_duration = p.positive("deval")?;
        ad.min_increment = p.positive("inc")?;
        ad.safety_window = p.u64("safety")?;
        ad.bid_deposit = p.u64("biddeposit")?;
        ad.score_dims = p
            .positive("dims")?
            .map(|d| u32::try_from(d).map_err(|_| bad(line, "dims", "too large")))
            .transpose()?;
        if let Some(ws) = p.str("weights") {
            ad.score_weights = ws
                .split(',')
                .map(|w| w.parse::<i64>().map_err(|_| bad(line, "weights", &format!("{w:?} is not an integer"))))
                .collect::<Result<_, _>>()?;
        }
        if let Some(members) = p.list("committee") {
            let mut com = Vec::with_capacity(members.len());
            for m in members {
                com.push(self.actor(line, &m)?);
            }
            com.sort();
            com.dedup();
            ad.committee = Some(com);
        }
        let reserve = p.u64("reserve")?;
        if ad.reveal_flag && reserve.is_none() {
            return Err(bad(line, "reserve", "revflag needs a reserve"));
        }
        // check invariants as the advertisement will be built
        let mut probe = ad.clone();
        if probe.reveal_flag {
            probe.reserve_hash = Some(Digest::ZERO);
        } else {
            probe.public_reserve = reserve;
        }
        probe.check_invariants().map_err(|d| bad(line, defect_param(d), &d.to_string()))?;
        self.ads.insert(label.clone(), (supplier.clone(), trade_type));
        Ok(Action::Advertise {
            supplier,
            label,
            ad: Box::new(ad),
            reserve,
            funds: FundsAttachment::new(p.u64("payment")?, p.u64("deposit")?),
        })
    }
}

/// Parses scenario text.
pub fn parse(text: &str) -> Result<Scenario, ParseError> {
    let mut parser = Parser {
        scenario: Scenario {
            seed: 0,
            max_blocks: DEFAULT_MAX_BLOCKS,
            block_tx_cap: None,
            nodes: Vec::new(),
            plugins: Vec::new(),
            events: Vec::new(),
        },
        seen_seed: false,
        ads: BTreeMap::new(),
        bids: BTreeSet::new(),
    };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let tokens = tokenize(strip_comment(raw), line)?;
        if tokens.is_empty() {
            continue;
        }
        parser.directive(line, tokens)?;
    }
    let Parser { mut scenario, seen_seed, ads, .. } = parser;
    if !seen_seed {
        return Err(ParseError::Syntax { line: text.lines().count().max(1), reason: "missing seed".into() });
    }
    if !scenario.nodes.iter().any(|n| n.roles.contains(Role::Proposer)) {
        return Err(ParseError::Syntax { line: text.lines().count().max(1), reason: "no proposer declared".into() });
    }
    for n in &scenario.nodes {
        if let Some(l) = n.interest.iter().find(|l| !ads.contains_key(*l)) {
            let line = node_line(text, n.id.as_str());
            return Err(bad(line, "interest", &format!("no advertisement labelled {l:?}")));
        }
    }
    scenario.events.sort_by_key(|e| e.at);
    Ok(scenario)
}

fn node_line(text: &str, id: &str) -> usize {
    text.lines()
        .position(|l| {
            let mut t = l.split_whitespace();
            t.next() == Some("node") && t.next() == Some(id)
        })
        .map_or(0, |i| i + 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "seed 1\nnode p roles=proposer\nmax-blocks 3\n";

    #[test]
    fn minimal_file() {
        let s = parse(MINIMAL).unwrap();
        assert_eq!((s.seed, s.max_blocks, s.nodes.len()), (1, 3, 1));
        assert!(s.events.is_empty());
    }

    #[test]
    fn quotes_and_comments() {
        let toks = tokenize(r#"bid c1 content="a # b" x=\"#, 1).unwrap();
        assert_eq!(toks, ["bid", "c1", "content=a # b", "x=\\"]);
        assert_eq!(strip_comment(r#"a content="x # y" # note"#), r#"a content="x # y" "#);
    }

    #[test]
    fn unknown_actor_points_at_line() {
        let text = format!("{MINIMAL}at 1 advertise ghost label=a type=english dsale=3 stprice=1 inc=1\n");
        assert_eq!(parse(&text).unwrap_err(), ParseError::UnknownActor { line: 4, actor: "ghost".into() });
    }

    #[test]
    fn english_without_increment_is_bad_parameter() {
        let text = format!("{MINIMAL}node s roles=supplier\nat 2 advertise s label=a type=english dsale=3 stprice=1\n");
        match parse(&text).unwrap_err() {
            ParseError::BadParameter { line: 5, param, .. } => assert_eq!(param, "inc"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn events_sorted_stably() {
        let text = format!(
            "{MINIMAL}node s roles=supplier\n\
             at 5 advertise s label=b type=custom dsale=3\n\
             at 2 advertise s label=a type=custom dsale=3\n\
             at 5 advertise s label=c type=custom dsale=3\n"
        );
        let s = parse(&text).unwrap();
        let order: Vec<_> = s
            .events
            .iter()
            .map(|e| match &e.action {
                Action::Advertise { label, .. } => label.as_str(),
                _ => "",
            })
            .collect();
        assert_eq!(order, ["a", "b", "c"]);
    }

    #[test]
    fn block_zero_event_rejected() {
        let text = format!("{MINIMAL}node s roles=supplier\nat 0 advertise s label=a type=custom dsale=3\n");
        assert!(matches!(parse(&text), Err(ParseError::BadParameter { line: 5, .. })));
    }

    #[test]
    fn revflag_needs_reserve() {
        let text = format!(
            "{MINIMAL}node s roles=supplier\nat 1 advertise s label=a type=english dsale=3 stprice=1 inc=1 revflag dreveal=2\n"
        );
        match parse(&text).unwrap_err() {
            ParseError::BadParameter { param, .. } => assert_eq!(param, "reserve"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn scores_are_fixed_point() {
        let text = format!(
            "{MINIMAL}node s roles=supplier\nnode j roles=committee\n\
             at 1 advertise s label=a type=committee-custom dsale=3 deval=5 committee=j dims=2\n\
             at 3 evaluate j ad=a bid=x score=1.5,2\n"
        );
        let s = parse(&text).unwrap();
        assert_eq!(
            s.events[1].action,
            Action::Evaluate {
                member: NodeId::new("j"),
                ad: "a".into(),
                spec: EvalSpec::Scores { bid: "x".into(), scores: vec![1_500_000, 2_000_000] }
            }
        );
    }
}
