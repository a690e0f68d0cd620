//! Seeded random instances. Every value is a rational with denominator at
//! most 4, and the same seed and parameters always yield the same instance.

use std::fmt;
use std::str::FromStr;

use delayfactor::model::Page;
use delayfactor::{Instance, Mode, PageCatalog, PageId, Rational, RequestSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Profile {
    /// Arrivals uniform on quarter points of `[0, span]`, lengths uniform on
    /// `{1/4, ..., 2}`, slack equal to length plus a uniform extra on
    /// `{0, 1/4, ..., 4}`.
    UnicastRandom,
    /// Pages uniform, arrivals uniform on integers of `[0, span]`, slack
    /// uniform on `{1, ..., max_slack}` integers. Page lengths are 1, or
    /// uniform on `{1, 2, 3}` with `varying`.
    BroadcastRandom,
    /// Bursts of 2 to 4 requests for one page, half a unit apart, starting at
    /// a uniform integer of `[0, span]`. Each requested page gets at least
    /// two requests.
    BurstyPage,
}

impl Profile {
    pub const ALL: [Profile; 3] = [Profile::UnicastRandom, Profile::BroadcastRandom, Profile::BurstyPage];

    pub fn name(self) -> &'static str {
        match self {
            Profile::UnicastRandom => "unicast-random",
            Profile::BroadcastRandom => "broadcast-random",
            Profile::BurstyPage => "bursty-page",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            format!(
                "unknown profile `{}`; valid profiles: {}",
                s,
                Self::ALL.map(|p| p.name()).join(", ")
            )
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenParams {
    pub requests: usize,
    pub pages: usize,
    pub machines: usize,
    /// Latest arrival; defaults to the request count.
    pub span: Option<u32>,
    pub max_slack: u32,
    pub varying: bool,
}

impl Default for GenParams {
    fn default() -> Self {
        GenParams {
            requests: 20,
            pages: 4,
            machines: 1,
            span: None,
            max_slack: 6,
            varying: false,
        }
    }
}

pub fn generate(seed: u64, profile: Profile, params: &GenParams) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.requests;
    let span = params.span.unwrap_or(n as u32);
    let max_slack = params.max_slack.max(1);
    let q = |n: u32, d: i64| Rational::new(n as i64, d);
    match profile {
        Profile::UnicastRandom => {
            let specs = (0..n)
                .map(|i| {
                    let a = q(rng.gen_range(0..=4 * span), 4);
                    let len = q(rng.gen_range(1..=8), 4);
                    let slack = &len + q(rng.gen_range(0..=16), 4);
                    RequestSpec {
                        name: format!("r{}", i),
                        deadline: &a + slack,
                        arrival: a,
                        length: len,
                        page: None,
                    }
                })
                .collect();
            Instance::new(Mode::Unicast, params.machines.max(1), PageCatalog::default(), specs)
        }
        Profile::BroadcastRandom | Profile::BurstyPage => {
            let pages = catalog(&mut rng, params.pages.max(1), params.varying);
            let mut specs = Vec::with_capacity(n);
            let mut push = |rng: &mut ChaCha8Rng, page: usize, a: Rational| {
                let slack = q(rng.gen_range(1..=max_slack), 1);
                let len = pages.length(PageId(page)).clone();
                specs.push(RequestSpec {
                    name: format!("r{}", specs.len()),
                    deadline: &a + slack,
                    arrival: a,
                    length: len,
                    page: Some(PageId(page)),
                });
            };
            if profile == Profile::BroadcastRandom {
                for _ in 0..n {
                    let page = rng.gen_range(0..pages.len());
                    let a = q(rng.gen_range(0..=span), 1);
                    push(&mut rng, page, a);
                }
            } else {
                let mut left = n;
                while left > 0 {
                    let mut size = rng.gen_range(2..=4).min(left);
                    if left - size == 1 {
                        size += 1;
                    }
                    let page = rng.gen_range(0..pages.len());
                    let start = rng.gen_range(0..=span);
                    for k in 0..size {
                        push(&mut rng, page, q(2 * start + k as u32, 2));
                    }
                    left -= size;
                }
            }
            Instance::new(Mode::Broadcast, 1, pages, specs)
        }
    }
}

fn catalog(rng: &mut ChaCha8Rng, count: usize, varying: bool) -> PageCatalog {
    if !varying {
        return PageCatalog::unit(count);
    }
    PageCatalog::new(
        (1..=count)
            .map(|i| Page {
                id: i.to_string(),
                length: Rational::integer(rng.gen_range(1..=3)),
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use delayfactor::model::{instance_to_json, validate};

    #[test]
    fn same_seed_same_bytes() {
        let p = GenParams {
            requests: 10,
            ..GenParams::default()
        };
        for profile in Profile::ALL {
            let a = instance_to_json(&generate(1, profile, &p));
            let b = instance_to_json(&generate(1, profile, &p));
            assert_eq!(a, b);
            assert_ne!(a, instance_to_json(&generate(2, profile, &p)));
        }
    }

    #[test]
    fn generated_instances_validate() {
        let p = GenParams {
            requests: 30,
            varying: true,
            ..GenParams::default()
        };
        for seed in 0..50 {
            for profile in Profile::ALL {
                let inst = generate(seed, profile, &p);
                assert_eq!(inst.len(), 30);
                assert!(validate(&inst).is_ok(), "{} {}", profile, seed);
            }
        }
    }

    #[test]
    fn broadcast_pages_stay_in_catalog() {
        let p = GenParams {
            requests: 40,
            pages: 3,
            ..GenParams::default()
        };
        let inst = generate(7, Profile::BroadcastRandom, &p);
        assert_eq!(inst.pages.len(), 3);
        assert!(inst.requests.iter().all(|r| r.page.unwrap().0 < 3));
    }

    #[test]
    fn unknown_profile_lists_valid_ones() {
        let err = "zipf".parse::<Profile>().unwrap_err();
        assert!(err.contains("bursty-page"));
    }
}
