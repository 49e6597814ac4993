//! Synthetic click logs with a shared and a per-user component.
//!
//! Items are grouped into categories and categories into domains; each user
//! lives in one domain. The next click follows the user's private chain over
//! a small set of favorite items with probability `alpha_u`, and otherwise the
//! global item chain. Favorites drift from day to day. Global successors
//! mostly stay inside the current item's domain. Purchases, carts and favorites are sampled as a sparse
//! subset of clicks, with favorite items bought more often.

use std::collections::BTreeSet;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Behavior, DataError, InteractionRecord};

const DAY: u64 = 86_400;
/// Sessions start in even-hour slots so they never overlap or cross midnight.
const SLOT_SECS: u64 = 7_200;
const SLOTS_PER_DAY: u64 = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub users: usize,
    pub items: usize,
    pub category_size: usize,
    pub categories_per_domain: usize,
    /// Mean weight of the private chain; the global chain gets the rest.
    pub alpha: f64,
    /// Per-user weights are drawn uniformly from `alpha +- alpha_jitter`.
    pub alpha_jitter: f64,
    pub favorites_per_user: usize,
    /// Categories of the user's domain that favorites are drawn from.
    pub favorite_categories: usize,
    /// Daily probability that each favorite is swapped for another item of
    /// the user's domain, keeping its place in the private chain.
    pub favorite_drift: f64,
    /// Zipf exponent of global successor popularity inside a domain; 0 is
    /// uniform.
    pub popularity_skew: f64,
    /// Daily probability that an item's global successors are redrawn.
    pub chain_drift: f64,
    /// Probability that a global successor lies in the same domain.
    pub domain_stay: f64,
    pub days: u64,
    pub base_timestamp: u64,
    pub late_user_fraction: f64,
    pub late_start_day: u64,
    pub sessions_per_day: (u32, u32),
    pub session_len: (u32, u32),
    pub click_gap_secs: (u64, u64),
    pub buy_prob: f64,
    pub favorite_buy_prob: f64,
    pub cart_prob: f64,
    pub fav_prob: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 500,
            category_size: 10,
            categories_per_domain: 10,
            alpha: 0.6,
            alpha_jitter: 0.1,
            favorites_per_user: 20,
            favorite_categories: 5,
            favorite_drift: 0.4,
            popularity_skew: 1.0,
            chain_drift: 0.05,
            domain_stay: 0.98,
            days: 9,
            base_timestamp: 1_511_539_200,
            late_user_fraction: 0.1,
            late_start_day: 6,
            sessions_per_day: (1, 3),
            session_len: (4, 12),
            click_gap_secs: (10, 300),
            buy_prob: 0.03,
            favorite_buy_prob: 0.3,
            cart_prob: 0.05,
            fav_prob: 0.03,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::InvalidConfig(m.to_string()));
        if self.users == 0 || self.items == 0 || self.category_size == 0 {
            return bad("users, items and category_size must be positive");
        }
        if self.items % self.category_size != 0 {
            return bad("items must be a multiple of category_size");
        }
        let categories = self.items / self.category_size;
        if self.categories_per_domain == 0 || categories % self.categories_per_domain != 0 {
            return bad("category count must be a multiple of categories_per_domain");
        }
        if self.favorite_categories == 0 || self.favorite_categories > self.categories_per_domain {
            return bad("favorite_categories must lie in 1..=categories_per_domain");
        }
        if self.favorites_per_user == 0
            || self.favorites_per_user > self.category_size * self.favorite_categories
        {
            return bad("favorites_per_user must fit inside the favorite categories");
        }
        for (name, p) in [
            ("alpha", self.alpha),
            ("favorite_drift", self.favorite_drift),
            ("chain_drift", self.chain_drift),
            ("domain_stay", self.domain_stay),
            ("late_user_fraction", self.late_user_fraction),
            ("buy_prob", self.buy_prob),
            ("favorite_buy_prob", self.favorite_buy_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        if self.favorite_buy_prob.max(self.buy_prob) + self.cart_prob + self.fav_prob > 1.0 {
            return bad("transactional probabilities sum above 1");
        }
        if self.sessions_per_day.0 > self.sessions_per_day.1
            || self.sessions_per_day.1 as u64 > SLOTS_PER_DAY
            || self.session_len.0 < 1
            || self.session_len.0 > self.session_len.1
            || self.click_gap_secs.0 > self.click_gap_secs.1
        {
            return bad("invalid session shape ranges");
        }
        if 600 + self.session_len.1 as u64 * self.click_gap_secs.1 >= SLOT_SECS {
            return bad("sessions too long for two-hour slots");
        }
        if !(self.popularity_skew.is_finite() && self.popularity_skew >= 0.0) {
            return bad("popularity_skew must be finite and non-negative");
        }
        if self.late_start_day >= self.days {
            return bad("late_start_day must precede the last day");
        }
        Ok(())
    }

    fn categories(&self) -> usize {
        self.items / self.category_size
    }

    fn domains(&self) -> usize {
        self.categories() / self.categories_per_domain
    }

    /// Start of day `d` of the generated log.
    pub fn day_start(&self, d: u64) -> u64 {
        self.base_timestamp + d * DAY
    }
}

/// Ground truth of a generated dataset, for inspection and tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthWorld {
    /// Per item index: successor item indices with weights, as of day 0.
    pub item_chain: Vec<Vec<(usize, f64)>>,
    pub users: Vec<SynthUser>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUser {
    pub user_id: u64,
    pub domain: usize,
    pub alpha: f64,
    pub first_day: u64,
    /// Favorite item ids on the user's first day; `private_chain[i]` lists
    /// successors of `favorites[i]` as indices into `favorites`.
    pub favorites: Vec<u64>,
    /// Items favorites are drawn from, including drift replacements.
    pub favorite_pool: Vec<u64>,
    pub private_chain: Vec<Vec<(usize, f64)>>,
}

const CHAIN_WEIGHTS: [f64; 3] = [0.8, 0.15, 0.05];
const PRIVATE_WEIGHTS: [f64; 2] = [0.7, 0.3];

fn pick<R: Rng>(rng: &mut R, options: &[(usize, f64)]) -> usize {
    let total: f64 = options.iter().map(|o| o.1).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(v, w) in options {
        if u < w {
            return v;
        }
        u -= w;
    }
    options.last().expect("nonempty options").0
}

struct Generator<'a> {
    cfg: &'a SynthConfig,
    /// Offsets inside a domain, weighted by popularity rank.
    popularity: WeightedIndex<f64>,
}

impl Generator<'_> {
    fn item_id(&self, item: usize) -> u64 {
        item as u64 + 1
    }

    fn category_of(&self, item: usize) -> usize {
        item / self.cfg.category_size
    }

    fn domain_items(&self) -> usize {
        self.cfg.category_size * self.cfg.categories_per_domain
    }

    fn successors<R: Rng>(&self, rng: &mut R, item: usize) -> Vec<(usize, f64)> {
        let domain_items = self.domain_items();
        let d = item / domain_items;
        CHAIN_WEIGHTS
            .iter()
            .map(|&w| {
                let next = if rng.gen::<f64>() < self.cfg.domain_stay {
                    d * domain_items + self.popularity.sample(rng)
                } else {
                    rng.gen_range(0..self.cfg.items)
                };
                (next, w)
            })
            .collect()
    }

    /// The global chain in effect on each day.
    fn daily_chains<R: Rng>(&self, rng: &mut R, initial: &[Vec<(usize, f64)>]) -> Vec<Vec<Vec<(usize, f64)>>> {
        let mut chains = vec![initial.to_vec()];
        for _ in 1..self.cfg.days {
            let mut chain = chains.last().expect("day 0 present").clone();
            if self.cfg.chain_drift > 0.0 {
                for (m, succ) in chain.iter_mut().enumerate() {
                    if rng.gen::<f64>() < self.cfg.chain_drift {
                        *succ = self.successors(rng, m);
                    }
                }
            }
            chains.push(chain);
        }
        chains
    }

    fn world<R: Rng>(&self, rng: &mut R) -> SynthWorld {
        let cfg = self.cfg;
        let item_chain = (0..cfg.items).map(|m| self.successors(rng, m)).collect();
        let late = (cfg.late_user_fraction * cfg.users as f64).round() as usize;
        let mut order: Vec<usize> = (0..cfg.users).collect();
        order.shuffle(rng);
        let late_users: BTreeSet<usize> = order[..late].iter().copied().collect();
        let users = (0..cfg.users)
            .map(|u| {
                let domain = u % cfg.domains();
                let lo = (cfg.alpha - cfg.alpha_jitter).max(0.0);
                let hi = (cfg.alpha + cfg.alpha_jitter).min(1.0);
                let alpha = if hi > lo { rng.gen_range(lo..=hi) } else { lo };
                let first_category = domain * cfg.categories_per_domain;
                let mut favorite_pool: Vec<u64> =
                    rand::seq::index::sample(rng, cfg.categories_per_domain, cfg.favorite_categories)
                        .into_iter()
                        .flat_map(|c| {
                            let start = (first_category + c) * cfg.category_size;
                            (start..start + cfg.category_size).map(|m| self.item_id(m))
                        })
                        .collect();
                favorite_pool.sort_unstable();
                let favorites: Vec<u64> = rand::seq::index::sample(rng, favorite_pool.len(), cfg.favorites_per_user)
                    .into_iter()
                    .map(|i| favorite_pool[i])
                    .collect();
                let n = favorites.len();
                let private_chain = (0..n)
                    .map(|i| {
                        PRIVATE_WEIGHTS
                            .iter()
                            .map(|&w| {
                                let mut j = rng.gen_range(0..n);
                                if n > 1 && j == i {
                                    j = (j + 1) % n;
                                }
                                (j, w)
                            })
                            .collect()
                    })
                    .collect();
                SynthUser {
                    user_id: u as u64 + 1,
                    domain,
                    alpha,
                    first_day: if late_users.contains(&u) { cfg.late_start_day } else { 0 },
                    favorites,
                    favorite_pool,
                    private_chain,
                }
            })
            .collect();
        SynthWorld { item_chain, users }
    }

    fn next_item<R: Rng>(
        &self,
        rng: &mut R,
        chain: &[Vec<(usize, f64)>],
        user: &SynthUser,
        current: Option<usize>,
    ) -> usize {
        let fav_index = |item: usize| user.favorites.iter().position(|&f| f == self.item_id(item));
        if rng.gen::<f64>() >= user.alpha {
            return match current {
                Some(item) => pick(rng, &chain[item]),
                None => user.domain * self.domain_items() + rng.gen_range(0..self.domain_items()),
            };
        }
        let next = match current.and_then(fav_index) {
            Some(i) => pick(rng, &user.private_chain[i]),
            None => rng.gen_range(0..user.favorites.len()),
        };
        (user.favorites[next] - 1) as usize
    }

    fn drift<R: Rng>(&self, rng: &mut R, user: &mut SynthUser) {
        for i in 0..user.favorites.len() {
            if rng.gen::<f64>() < self.cfg.favorite_drift {
                let replacement = loop {
                    let id = user.favorite_pool[rng.gen_range(0..user.favorite_pool.len())];
                    if !user.favorites.contains(&id) {
                        break id;
                    }
                };
                user.favorites[i] = replacement;
            }
        }
    }

    fn transaction<R: Rng>(&self, rng: &mut R, favorite: bool) -> Option<Behavior> {
        let cfg = self.cfg;
        let buy = if favorite { cfg.favorite_buy_prob } else { cfg.buy_prob };
        let u = rng.gen::<f64>();
        if u < buy {
            Some(Behavior::Purchase)
        } else if u < buy + cfg.cart_prob {
            Some(Behavior::Cart)
        } else if u < buy + cfg.cart_prob + cfg.fav_prob {
            Some(Behavior::Favorite)
        } else {
            None
        }
    }
}

/// Generates a dataset and its ground truth. Records are sorted by
/// (timestamp, user, item, behavior) and identical seeds give identical output.
pub fn generate_with_world(cfg: &SynthConfig, seed: u64) -> Result<(Vec<InteractionRecord>, SynthWorld), DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let popularity = (1..=cfg.category_size * cfg.categories_per_domain)
        .map(|r| (r as f64).powf(-cfg.popularity_skew))
        .collect::<Vec<_>>();
    let generator = Generator {
        cfg,
        popularity: WeightedIndex::new(popularity).expect("positive weights"),
    };
    let world = generator.world(&mut rng);
    let chains = generator.daily_chains(&mut rng, &world.item_chain);
    let mut records = Vec::new();
    for initial in &world.users {
        let mut user = initial.clone();
        let user = &mut user;
        for day in user.first_day..cfg.days {
            if day > user.first_day && cfg.favorite_drift > 0.0 && cfg.favorites_per_user < user.favorite_pool.len() {
                generator.drift(&mut rng, user);
            }
            let n = rng.gen_range(cfg.sessions_per_day.0..=cfg.sessions_per_day.1) as usize;
            let mut slots = rand::seq::index::sample(&mut rng, SLOTS_PER_DAY as usize, n).into_vec();
            slots.sort_unstable();
            for slot in slots {
                let mut ts = cfg.day_start(day) + slot as u64 * SLOT_SECS + rng.gen_range(0..600);
                let len = rng.gen_range(cfg.session_len.0..=cfg.session_len.1);
                let mut current = None;
                for _ in 0..len {
                    let item = generator.next_item(&mut rng, &chains[day as usize], user, current);
                    let item_id = generator.item_id(item);
                    let category_id = generator.category_of(item) as u64 + 1;
                    records.push(InteractionRecord::click(user.user_id, item_id, category_id, ts));
                    let favorite = user.favorites.contains(&item_id);
                    if let Some(behavior) = generator.transaction(&mut rng, favorite) {
                        records.push(InteractionRecord {
                            behavior,
                            ..InteractionRecord::click(user.user_id, item_id, category_id, ts + 1)
                        });
                    }
                    current = Some(item);
                    ts += rng.gen_range(cfg.click_gap_secs.0..=cfg.click_gap_secs.1);
                }
            }
        }
    }
    records.sort_by_key(|r| (r.timestamp, r.user_id, r.item_id, r.behavior as u8));
    Ok((records, world))
}

pub fn generate(cfg: &SynthConfig, seed: u64) -> Result<Vec<InteractionRecord>, DataError> {
    generate_with_world(cfg, seed).map(|(r, _)| r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_sensitive() {
        let cfg = SynthConfig {
            users: 20,
            ..SynthConfig::default()
        };
        assert_eq!(generate(&cfg, 1).unwrap(), generate(&cfg, 1).unwrap());
        assert_ne!(generate(&cfg, 1).unwrap(), generate(&cfg, 2).unwrap());
    }

    #[test]
    fn respects_shape() {
        let cfg = SynthConfig::default();
        let (recs, world) = generate_with_world(&cfg, 5).unwrap();
        let users: BTreeSet<u64> = recs.iter().map(|r| r.user_id).collect();
        assert_eq!(users.len(), 200);
        assert!(recs.iter().all(|r| (1..=500).contains(&r.item_id)));
        assert!(recs.iter().all(|r| r.category_id == (r.item_id - 1) / 10 + 1));
        let end = cfg.day_start(cfg.days);
        assert!(recs.iter().all(|r| r.timestamp >= cfg.base_timestamp && r.timestamp < end));
        let late = world.users.iter().filter(|u| u.first_day == cfg.late_start_day).count();
        assert_eq!(late, 20);
        for u in world.users.iter().filter(|u| u.first_day > 0) {
            let first = recs.iter().filter(|r| r.user_id == u.user_id).map(|r| r.timestamp).min().unwrap();
            assert!(first >= cfg.day_start(cfg.late_start_day));
        }
    }

    fn share<F: Fn(&SynthUser, u64) -> bool>(recs: &[InteractionRecord], world: &SynthWorld, inside: F) -> f64 {
        let clicks: Vec<_> = recs.iter().filter(|r| r.behavior == Behavior::Click).collect();
        let n = clicks
            .iter()
            .filter(|r| inside(&world.users[(r.user_id - 1) as usize], r.item_id))
            .count();
        n as f64 / clicks.len() as f64
    }

    #[test]
    fn private_share_tracks_alpha() {
        let still = SynthConfig {
            favorite_drift: 0.0,
            ..SynthConfig::default()
        };
        let (recs, world) = generate_with_world(&still, 9).unwrap();
        // private clicks plus global steps that happen to land on a favorite
        let fav = share(&recs, &world, |u, item| u.favorites.contains(&item));
        assert!(fav > 0.6 && fav < 0.75, "favorite share {fav}");

        let cfg = SynthConfig::default();
        let (recs, world) = generate_with_world(&cfg, 9).unwrap();
        let pool = share(&recs, &world, |u, item| u.favorite_pool.contains(&item));
        assert!(pool > 0.6 && pool < 0.9, "pool share {pool}");
        let day0 = share(&recs, &world, |u, item| u.favorites.contains(&item));
        assert!(day0 < fav - 0.1, "drift leaves day-0 share at {day0}");
        let clicks = recs.iter().filter(|r| r.behavior == Behavior::Click).count() as f64;
        let buys = recs.iter().filter(|r| r.behavior == Behavior::Purchase).count() as f64;
        let rate = buys / clicks;
        assert!(rate > 0.1 && rate < 0.25, "buy rate {rate}");
    }

    #[test]
    fn favorites_stay_in_their_pool() {
        let cfg = SynthConfig::default();
        let (_, world) = generate_with_world(&cfg, 3).unwrap();
        for u in &world.users {
            assert_eq!(u.favorite_pool.len(), cfg.favorite_categories * cfg.category_size);
            assert!(u.favorites.iter().all(|f| u.favorite_pool.contains(f)));
            let domain = (u.favorite_pool[0] - 1) as usize / (cfg.category_size * cfg.categories_per_domain);
            assert_eq!(domain, u.domain);
        }
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            SynthConfig { favorite_categories: 11, ..SynthConfig::default() },
            SynthConfig { favorites_per_user: 51, ..SynthConfig::default() },
            SynthConfig { popularity_skew: -1.0, ..SynthConfig::default() },
            SynthConfig { chain_drift: 1.5, ..SynthConfig::default() },
        ] {
            assert!(generate(&cfg, 1).is_err());
        }
    }
}
