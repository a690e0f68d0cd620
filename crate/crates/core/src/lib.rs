//! Online scheduling to minimize the maximum delay factor.
//!
//! Time is exact: every arrival, deadline, speed and finish time is a
//! [`Rational`]. The [`engine`] drives any [`engine::Scheduler`] over a
//! [`engine::RequestSource`] and records a [`trace::ScheduleTrace`], from
//! which [`metrics::delay_factor`] computes
//! `max(1, max_i (f_i - a_i) / (d_i - a_i))`.
//!
//! Unicast schedulers live in [`unicast`], broadcast schedulers in
//! [`broadcast`], offline optima in [`oracles`] and adaptive lower-bound
//! constructions in [`adversaries`].

pub mod adversaries;
pub mod broadcast;
pub mod engine;
pub mod metrics;
pub mod model;
pub mod oracles;
pub mod rational;
pub mod trace;
pub mod unicast;

pub use engine::{simulate, simulate_instance, EngineConfig, EngineError, SimOutcome};
pub use metrics::{current_alpha, delay_factor, DelayFactorReport};
pub use model::{validate, Instance, Mode, PageCatalog, PageId, Request, RequestId, RequestSpec};
pub use rational::{Duration, Rational, TimePoint};
pub use trace::ScheduleTrace;
