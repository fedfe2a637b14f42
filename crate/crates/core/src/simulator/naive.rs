//! Reference engine with one exponential clock per host and per spore.
//!
//! Every host draws its own `Exp(rho)` removal time and every spore its own
//! `Exp(beta)` release time when the host is created; the earliest pending
//! clock fires next. Nothing is aggregated, which makes this an independent
//! check on [`super::run_to_extinction`]. Intended for small populations only.

use crate::error::SimError;
use crate::model::ModelParams;
use crate::rng::RandomStream;

use super::PopulationState;

/// Largest initial host count accepted.
pub const MAX_INITIAL_HOSTS: u64 = 10;

struct Host {
    removal_at: f64,
    release_at: Vec<f64>,
}

impl Host {
    fn spawn(now: f64, spores: u32, params: &ModelParams, rng: &mut RandomStream) -> Self {
        let removal_at = if params.rho() > 0.0 {
            now + rng.exponential(params.rho())
        } else {
            f64::INFINITY
        };
        let release_at = (0..spores).map(|_| now + rng.exponential(params.beta())).collect();
        Self { removal_at, release_at }
    }
}

enum Next {
    Removal(usize),
    Release(usize, usize),
}

/// Extinction time of the process started from `init`, using per-individual clocks.
pub fn extinction_time(
    init: &PopulationState,
    params: &ModelParams,
    rng: &mut RandomStream,
    max_events: u64,
) -> Result<f64, SimError> {
    if init.hosts() > MAX_INITIAL_HOSTS {
        return Err(SimError::InvalidInput(format!(
            "naive engine accepts at most {MAX_INITIAL_HOSTS} initial hosts, got {}",
            init.hosts()
        )));
    }
    let mut hosts: Vec<Host> = Vec::new();
    for (&k, &n) in init.counts() {
        for _ in 0..n {
            hosts.push(Host::spawn(0.0, k, params, rng));
        }
    }
    let mut now = 0.0;
    let mut events = 0u64;
    while !hosts.is_empty() {
        if events == max_events {
            return Err(SimError::BudgetExhausted {
                max_events,
                clock: now,
                hosts: hosts.len() as u64,
            });
        }
        let mut best = f64::INFINITY;
        let mut next = Next::Removal(0);
        for (h, host) in hosts.iter().enumerate() {
            if host.removal_at < best {
                best = host.removal_at;
                next = Next::Removal(h);
            }
            for (s, &at) in host.release_at.iter().enumerate() {
                if at < best {
                    best = at;
                    next = Next::Release(h, s);
                }
            }
        }
        now = best;
        events += 1;
        match next {
            Next::Removal(h) => {
                hosts.swap_remove(h);
            }
            Next::Release(h, s) => {
                hosts[h].release_at.swap_remove(s);
                if hosts[h].release_at.is_empty() {
                    hosts.swap_remove(h);
                }
                let offspring = params.offspring().sample(rng);
                if offspring > 0 {
                    hosts.push(Host::spawn(now, offspring, params, rng));
                }
            }
        }
    }
    Ok(now)
}
