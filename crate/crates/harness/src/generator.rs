//! Seeded random English-auction scenarios.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Upper bounds for generated scenarios.
#[derive(Debug, Clone, Copy)]
pub struct Limits {
    pub max_bids: usize,
    pub max_blocks: u64,
    pub consumers: usize,
}

impl Default for Limits {
    fn default() -> Self {
        Self { max_bids: 20, max_blocks: 30, consumers: 6 }
    }
}

/// Scenario text for one English auction. Prices come from a short ladder
/// so equal top bids are common; some bids land after the sale closes.
pub fn english_scenario(seed: u64, limits: Limits) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = String::new();
    let _ = writeln!(s, "seed {}", rng.random::<u32>());

    let two_proposers = rng.random_bool(0.5);
    let reveal = rng.random_bool(0.35);
    let withhold = reveal && rng.random_bool(0.3);
    let physical = rng.random_bool(0.25);
    let cap = rng.random_bool(0.2);

    let ad_at = rng.random_range(1..=3u64);
    let dreveal = if reveal { rng.random_range(1..=4u64) } else { 0 };
    // leave room for matching and the escrow window
    let slack = if physical { 8 } else { 3 };
    let max_sale = limits.max_blocks.saturating_sub(ad_at + dreveal + slack).max(1);
    let dsale = rng.random_range(1..=max_sale.min(12));
    let start = [50u64, 100][rng.random_range(0..2)];
    let inc = [5u64, 10][rng.random_range(0..2)];

    let _ = writeln!(s, "max-blocks {}", limits.max_blocks);
    if cap {
        let _ = writeln!(s, "block-tx-cap {}", rng.random_range(2..=4));
    }
    let _ = writeln!(s, "node p1 roles=proposer,validator balance=0");
    if two_proposers {
        let _ = writeln!(s, "node p2 roles=proposer balance=0");
    }
    let fault = if withhold { " fault=withholdReveal" } else { "" };
    let _ = writeln!(s, "node s roles=supplier balance=500{fault}");
    if physical {
        let _ = writeln!(s, "node e roles=escrow balance=0");
    }
    for i in 1..=limits.consumers {
        let _ = writeln!(s, "node c{i} roles=consumer balance=1000");
    }

    let mut ad = format!("at {ad_at} advertise s label=lot type=english dsale={dsale} stprice={start} inc={inc}");
    if reveal {
        let reserve = start + inc * rng.random_range(0..5u64);
        let _ = write!(ad, " revflag reserve={reserve} dreveal={dreveal} deposit={}", rng.random_range(1..=50u64));
    }
    if physical {
        let _ = write!(ad, " physical safety={}", rng.random_range(1..=3u64));
    }
    if rng.random_bool(0.3) {
        let _ = write!(ad, " payment={}", rng.random_range(1..=20u64));
    }
    let _ = writeln!(s, "{ad}");

    let bids = rng.random_range(0..=limits.max_bids);
    for i in 0..bids {
        let at = rng.random_range(ad_at + 1..=ad_at + dsale + 1);
        let who = rng.random_range(1..=limits.consumers);
        let price = start + inc * rng.random_range(0..4u64);
        let mut line = format!("at {at} bid c{who} ad=lot label=b{i} price={price} content=b{i}");
        if rng.random_bool(0.3) {
            let _ = write!(line, " deposit={}", rng.random_range(1..=10u64));
        }
        let _ = writeln!(s, "{line}");
    }
    s
}
