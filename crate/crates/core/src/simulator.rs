//! Exact event-driven simulation of the spore/host process.
//!
//! Hosts of equal spore count are exchangeable, so the state is a sparse
//! map from type `k >= 1` to the number of type-`k` hosts. With `N` hosts and
//! `S` spores in total, the next event arrives after `Exp(rho N + beta S)`;
//! it is a removal of a uniformly chosen host with probability
//! `rho N / (rho N + beta S)`, and otherwise the release of a uniformly chosen
//! spore.

use std::collections::BTreeMap;
use std::ops::Range;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::SimError;
use crate::model::ModelParams;
use crate::rng::RandomStream;

pub mod naive;

pub const DEFAULT_MAX_EVENTS: u64 = 1_000_000_000;

/// Host counts per spore count, with cached totals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PopulationState {
    counts: BTreeMap<u32, u64>,
    hosts: u64,
    spores: u64,
    clock: f64,
}

impl PopulationState {
    pub fn empty() -> Self {
        Self::default()
    }

    /// One host carrying `k` spores.
    pub fn single(k: u32) -> Result<Self, SimError> {
        Self::from_counts([(k, 1)])
    }

    /// Build from `(type, count)` pairs; zero counts are skipped, type 0 is rejected.
    pub fn from_counts<I: IntoIterator<Item = (u32, u64)>>(counts: I) -> Result<Self, SimError> {
        let mut state = Self::empty();
        for (k, n) in counts {
            if k == 0 {
                return Err(SimError::ZeroType);
            }
            state.add(k, n);
        }
        Ok(state)
    }

    pub fn counts(&self) -> &BTreeMap<u32, u64> {
        &self.counts
    }

    pub fn count(&self, k: u32) -> u64 {
        self.counts.get(&k).copied().unwrap_or(0)
    }

    /// `N`, the number of hosts.
    pub fn hosts(&self) -> u64 {
        self.hosts
    }

    /// `S`, the number of spores over all hosts.
    pub fn spores(&self) -> u64 {
        self.spores
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn is_extinct(&self) -> bool {
        self.hosts == 0
    }

    pub fn total_rate(&self, params: &ModelParams) -> f64 {
        params.rho() * self.hosts as f64 + params.beta() * self.spores as f64
    }

    /// Cached totals agree with the counts and no zero entries are stored.
    pub fn is_consistent(&self) -> bool {
        let hosts: u64 = self.counts.values().sum();
        let spores: u64 = self.counts.iter().map(|(k, n)| *k as u64 * n).sum();
        hosts == self.hosts
            && spores == self.spores
            && self.counts.iter().all(|(k, n)| *k > 0 && *n > 0)
    }

    fn add(&mut self, k: u32, n: u64) {
        if k == 0 || n == 0 {
            return;
        }
        *self.counts.entry(k).or_insert(0) += n;
        self.hosts += n;
        self.spores += k as u64 * n;
    }

    fn remove_one(&mut self, k: u32) {
        let entry = self.counts.get_mut(&k).expect("removing a host type that is absent");
        *entry -= 1;
        if *entry == 0 {
            self.counts.remove(&k);
        }
        self.hosts -= 1;
        self.spores -= k as u64;
    }

    /// Type of the host at position `index` when hosts are listed by type.
    fn host_type_at(&self, index: u64) -> u32 {
        let mut acc = 0;
        for (&k, &n) in &self.counts {
            acc += n;
            if index < acc {
                return k;
            }
        }
        *self.counts.keys().next_back().expect("nonempty")
    }

    /// Type of the host owning spore number `index` when spores are listed by host type.
    fn spore_owner_at(&self, index: u64) -> u32 {
        let mut acc = 0;
        for (&k, &n) in &self.counts {
            acc += k as u64 * n;
            if index < acc {
                return k;
            }
        }
        *self.counts.keys().next_back().expect("nonempty")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    /// A type-`k` host and all its spores left the population.
    Removal { k: u32 },
    /// A type-`k` host released a spore that founded a type-`offspring` host.
    Release { k: u32, offspring: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EventRecord {
    pub kind: EventKind,
    pub waiting_time: f64,
    pub clock: f64,
}

fn waiting_time(state: &PopulationState, params: &ModelParams, rng: &mut RandomStream) -> f64 {
    rng.exponential(state.total_rate(params))
}

fn apply_event(state: &mut PopulationState, params: &ModelParams, rng: &mut RandomStream) -> EventKind {
    let removal_weight = params.rho() * state.hosts as f64;
    let total = removal_weight + params.beta() * state.spores as f64;
    // One uniform decides both the event class and, conditionally, its target.
    let u = rng.closed_open01() * total;
    if u < removal_weight {
        let index = ((u / params.rho()) as u64).min(state.hosts - 1);
        let k = state.host_type_at(index);
        state.remove_one(k);
        EventKind::Removal { k }
    } else {
        let index = (((u - removal_weight) / params.beta()) as u64).min(state.spores - 1);
        let k = state.spore_owner_at(index);
        state.remove_one(k);
        state.add(k - 1, 1);
        let offspring = params.offspring().sample(rng);
        state.add(offspring, 1);
        EventKind::Release { k, offspring }
    }
}

/// Advance the state by one event.
pub fn step(
    state: &mut PopulationState,
    params: &ModelParams,
    rng: &mut RandomStream,
) -> Result<EventRecord, SimError> {
    if state.is_extinct() {
        return Err(SimError::Extinct);
    }
    let dt = waiting_time(state, params, rng);
    state.clock += dt;
    let kind = apply_event(state, params, rng);
    debug_assert!(state.is_consistent());
    Ok(EventRecord {
        kind,
        waiting_time: dt,
        clock: state.clock,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "status", content = "time", rename_all = "snake_case")]
pub enum ExtinctionTime {
    Extinct(f64),
    /// Still alive at the horizon.
    Censored(f64),
}

impl ExtinctionTime {
    pub fn time(&self) -> f64 {
        match *self {
            ExtinctionTime::Extinct(t) | ExtinctionTime::Censored(t) => t,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, ExtinctionTime::Censored(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimOutcome {
    pub extinction_time: ExtinctionTime,
    pub event_count: u64,
    pub peak_hosts: u64,
}

impl SimOutcome {
    /// Whether the population was alive at the horizon.
    pub fn survived(&self) -> bool {
        self.extinction_time.is_censored()
    }
}

/// Simulate from `init` until extinction, or until the clock passes `horizon`.
pub fn run_to_extinction(
    init: &PopulationState,
    params: &ModelParams,
    rng: &mut RandomStream,
    horizon: Option<f64>,
    max_events: u64,
) -> Result<SimOutcome, SimError> {
    if max_events == 0 {
        return Err(SimError::InvalidInput("max_events must be at least 1".into()));
    }
    let mut state = init.clone();
    let start = state.clock;
    let mut events = 0u64;
    let mut peak = state.hosts;
    loop {
        if state.is_extinct() {
            return Ok(SimOutcome {
                extinction_time: ExtinctionTime::Extinct(state.clock - start),
                event_count: events,
                peak_hosts: peak,
            });
        }
        if events == max_events {
            return Err(SimError::BudgetExhausted {
                max_events,
                clock: state.clock - start,
                hosts: state.hosts,
            });
        }
        let dt = waiting_time(&state, params, rng);
        if let Some(h) = horizon {
            if state.clock - start + dt > h {
                return Ok(SimOutcome {
                    extinction_time: ExtinctionTime::Censored(h),
                    event_count: events,
                    peak_hosts: peak,
                });
            }
        }
        state.clock += dt;
        apply_event(&mut state, params, rng);
        debug_assert!(state.is_consistent());
        events += 1;
        peak = peak.max(state.hosts);
    }
}

/// Whether a population founded by one type-`k` host is alive at time `t`.
pub fn survival_indicator(
    k: u32,
    t: f64,
    params: &ModelParams,
    rng: &mut RandomStream,
    max_events: u64,
) -> Result<bool, SimError> {
    if !(t >= 0.0) {
        return Err(SimError::InvalidInput(format!("horizon must be nonnegative, got {t}")));
    }
    let init = PopulationState::single(k)?;
    Ok(run_to_extinction(&init, params, rng, Some(t), max_events)?.survived())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchOptions {
    pub max_events: u64,
    /// Worker threads; `None` uses the global rayon pool.
    pub threads: Option<usize>,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            max_events: DEFAULT_MAX_EVENTS,
            threads: None,
        }
    }
}

/// Run `replicates` independent copies; replicate `i` draws from stream `i`
/// of `master_seed`, and results come back in replicate order.
pub fn run_batch(
    init: &PopulationState,
    params: &ModelParams,
    master_seed: u64,
    replicates: u64,
    horizon: Option<f64>,
    options: &BatchOptions,
) -> Result<Vec<SimOutcome>, SimError> {
    map_replicates(master_seed, replicates, options, |rng| {
        run_to_extinction(init, params, rng, horizon, options.max_events)
    })
}

/// Evaluate `job` once per replicate on its own stream, in parallel, keeping
/// replicate order. The first failing replicate (by index) is reported.
pub fn map_replicates<T, F>(
    master_seed: u64,
    replicates: u64,
    options: &BatchOptions,
    job: F,
) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(&mut RandomStream) -> Result<T, SimError> + Sync,
{
    map_replicate_range(master_seed, 0..replicates, options, job)
}

/// As [`map_replicates`], over an explicit range of stream indices.
pub fn map_replicate_range<T, F>(
    master_seed: u64,
    streams: Range<u64>,
    options: &BatchOptions,
    job: F,
) -> Result<Vec<T>, SimError>
where
    T: Send,
    F: Fn(&mut RandomStream) -> Result<T, SimError> + Sync,
{
    if streams.is_empty() {
        return Err(SimError::InvalidInput("replicates must be at least 1".into()));
    }
    let work = || {
        streams
            .clone()
            .into_par_iter()
            .map(|i| job(&mut RandomStream::new(master_seed, i)))
            .collect::<Vec<_>>()
    };
    let results = match options.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| SimError::InvalidInput(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    results
        .into_iter()
        .zip(streams)
        .map(|(r, i)| {
            r.map_err(|source| SimError::Replicate {
                replicate: i,
                source: Box::new(source),
            })
        })
        .collect()
}
