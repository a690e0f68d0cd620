use std::fmt;
use std::str::FromStr;

use delayfactor::broadcast::{Fifo, SsfW};
use delayfactor::engine::{simulate_instance, EngineError, Scheduler, SimOutcome};
use delayfactor::metrics::MetricsError;
use delayfactor::oracles::{default_tolerance, optimal_alpha_broadcast_bruteforce, optimal_alpha_unicast, OracleError, OracleReport};
use delayfactor::unicast::{Ssf, SsfId, SsfNonPreemptive};
use delayfactor::{delay_factor, DelayFactorReport, Instance, Mode, Rational};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulerKind {
    Ssf,
    SsfNp,
    SsfId,
    Ssfw,
    SsfwVarying,
    Fifo,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 6] = [
        SchedulerKind::Ssf,
        SchedulerKind::SsfNp,
        SchedulerKind::SsfId,
        SchedulerKind::Ssfw,
        SchedulerKind::SsfwVarying,
        SchedulerKind::Fifo,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Ssf => "ssf",
            SchedulerKind::SsfNp => "ssf-np",
            SchedulerKind::SsfId => "ssf-id",
            SchedulerKind::Ssfw => "ssfw",
            SchedulerKind::SsfwVarying => "ssfw-varying",
            SchedulerKind::Fifo => "fifo",
        }
    }

    pub fn mode(self) -> Mode {
        match self {
            SchedulerKind::Ssf | SchedulerKind::SsfNp | SchedulerKind::SsfId => Mode::Unicast,
            _ => Mode::Broadcast,
        }
    }

    pub fn needs_c(self) -> bool {
        matches!(self, SchedulerKind::Ssfw | SchedulerKind::SsfwVarying)
    }

    /// Speed at which the guarantee starts; the augmentation is the excess.
    pub fn base_speed(self) -> Rational {
        match self {
            SchedulerKind::Ssfw => Rational::integer(2),
            SchedulerKind::SsfwVarying => Rational::integer(4),
            _ => Rational::one(),
        }
    }

    pub fn valid_names() -> String {
        Self::ALL.iter().map(|k| k.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SchedulerKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| ExperimentError::UnknownScheduler(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExperimentError {
    #[error("unknown scheduler `{}`; valid names: {}", .0, SchedulerKind::valid_names())]
    UnknownScheduler(String),
    #[error("scheduler {0} needs --wait-c")]
    MissingC(SchedulerKind),
    #[error("wait constant must lie in (0, 1), got {0}")]
    BadC(Rational),
    #[error("speed must be positive, got {0}")]
    BadSpeed(Rational),
    #[error("machine count must be at least 1")]
    BadMachines,
    #[error("scheduler {scheduler} runs {expected} instances, got {actual}")]
    ModeMismatch { scheduler: SchedulerKind, expected: Mode, actual: Mode },
    #[error("scheduler {0} runs on a single machine")]
    SingleMachine(SchedulerKind),
    #[error("simulation stopped at the horizon with requests outstanding")]
    Truncated,
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// A scheduler with its parameters, a speed and a machine count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExperimentSpec {
    pub scheduler: SchedulerKind,
    pub c: Option<Rational>,
    pub speed: Rational,
    pub machines: Option<usize>,
}

impl ExperimentSpec {
    pub fn new(scheduler: SchedulerKind, speed: Rational) -> Self {
        ExperimentSpec {
            scheduler,
            c: None,
            speed,
            machines: None,
        }
    }

    pub fn with_c(mut self, c: Rational) -> Self {
        self.c = Some(c);
        self
    }

    pub fn with_machines(mut self, machines: usize) -> Self {
        self.machines = Some(machines);
        self
    }

    pub fn validate(&self, instance: &Instance) -> Result<(), ExperimentError> {
        if !self.speed.is_positive() {
            return Err(ExperimentError::BadSpeed(self.speed.clone()));
        }
        if self.scheduler.needs_c() {
            let c = self.c.as_ref().ok_or(ExperimentError::MissingC(self.scheduler))?;
            if !c.is_positive() || *c >= Rational::one() {
                return Err(ExperimentError::BadC(c.clone()));
            }
        }
        if self.scheduler.mode() != instance.mode {
            return Err(ExperimentError::ModeMismatch {
                scheduler: self.scheduler,
                expected: self.scheduler.mode(),
                actual: instance.mode,
            });
        }
        let m = self.machines.unwrap_or(instance.machines);
        if m == 0 {
            return Err(ExperimentError::BadMachines);
        }
        if m > 1 && self.scheduler != SchedulerKind::SsfId {
            return Err(ExperimentError::SingleMachine(self.scheduler));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Box<dyn Scheduler>, ExperimentError> {
        let c = || self.c.clone().ok_or(ExperimentError::MissingC(self.scheduler));
        Ok(match self.scheduler {
            SchedulerKind::Ssf => Box::new(Ssf),
            SchedulerKind::SsfNp => Box::new(SsfNonPreemptive),
            SchedulerKind::SsfId => Box::new(SsfId::new()),
            SchedulerKind::Ssfw => Box::new(SsfW::unit(c()?)),
            SchedulerKind::SsfwVarying => Box::new(SsfW::varying(c()?)),
            SchedulerKind::Fifo => Box::new(Fifo),
        })
    }

    /// Augmentation over the scheduler's base speed.
    pub fn epsilon(&self) -> Rational {
        &self.speed - self.scheduler.base_speed()
    }

    pub fn bound(&self) -> Bound {
        theorem_bound(self.scheduler, &self.speed, self.c.as_ref())
    }
}

/// Competitive bound guaranteed for a scheduler at a speed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Bound {
    Finite(Rational),
    /// The speed or wait constant is outside the guarantee's range.
    Unbounded,
    /// No guarantee is attached to this scheduler.
    None,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bound::Finite(b) => write!(f, "{}", b),
            Bound::Unbounded => f.write_str("unbounded"),
            Bound::None => f.write_str("none"),
        }
    }
}

pub fn theorem_bound(kind: SchedulerKind, speed: &Rational, c: Option<&Rational>) -> Bound {
    let eps = speed - kind.base_speed();
    if kind == SchedulerKind::Fifo {
        return Bound::None;
    }
    if !eps.is_positive() {
        return Bound::Unbounded;
    }
    let two = Rational::integer(2);
    match kind {
        SchedulerKind::Ssf => Bound::Finite(eps.recip()),
        SchedulerKind::SsfNp => Bound::Finite(&two / &eps),
        SchedulerKind::SsfId => Bound::Finite(Rational::integer(16).max(&two / &eps)),
        SchedulerKind::Ssfw | SchedulerKind::SsfwVarying => {
            let Some(c) = c else { return Bound::Unbounded };
            if !c.is_positive() {
                return Bound::Unbounded;
            }
            let den = &eps - c * &eps - c;
            if !den.is_positive() {
                return Bound::Unbounded;
            }
            let waiting = (c * c).recip();
            let busy = if kind == SchedulerKind::Ssfw { den.recip() } else { &two / &den };
            Bound::Finite(waiting.max(busy))
        }
        SchedulerKind::Fifo => Bound::None,
    }
}

/// Runs `spec` on `instance` and measures the result.
pub fn run_experiment(instance: &Instance, spec: &ExperimentSpec) -> Result<(SimOutcome, DelayFactorReport), ExperimentError> {
    spec.validate(instance)?;
    let mut inst = instance.clone();
    if let Some(m) = spec.machines {
        inst.machines = m;
    }
    let mut scheduler = spec.build()?;
    let outcome = simulate_instance(&inst, scheduler.as_mut(), &spec.speed)?;
    if outcome.truncated {
        return Err(ExperimentError::Truncated);
    }
    let report = delay_factor(&inst, &outcome.trace)?;
    Ok((outcome, report))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleSettings {
    pub tolerance: Rational,
    pub slot: Option<Rational>,
}

impl Default for OracleSettings {
    fn default() -> Self {
        OracleSettings {
            tolerance: default_tolerance(),
            slot: None,
        }
    }
}

/// Offline optimum at speed one on the instance's machines.
pub fn oracle(instance: &Instance, machines: usize, settings: &OracleSettings) -> Result<OracleReport, OracleError> {
    match instance.mode {
        Mode::Unicast => optimal_alpha_unicast(instance, &Rational::one(), machines, &settings.tolerance),
        Mode::Broadcast => optimal_alpha_broadcast_bruteforce(instance, &Rational::one(), settings.slot.as_ref()),
    }
}

/// One comparison of an online run with the offline optimum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatioRow {
    pub instance: String,
    pub scheduler: String,
    pub speed: String,
    pub c: String,
    pub machines: usize,
    pub online: String,
    pub online_decimal: String,
    pub oracle_lo: String,
    pub oracle_hi: String,
    pub oracle_method: String,
    pub ratio: String,
    pub ratio_decimal: String,
    pub bound: String,
    pub pass: Option<bool>,
    pub status: String,
}

impl RatioRow {
    pub const COLUMNS: [&'static str; 15] = [
        "instance",
        "scheduler",
        "speed",
        "c",
        "machines",
        "online",
        "online_decimal",
        "oracle_lo",
        "oracle_hi",
        "oracle_method",
        "ratio",
        "ratio_decimal",
        "bound",
        "pass",
        "status",
    ];

    pub fn values(&self) -> Vec<String> {
        vec![
            self.instance.clone(),
            self.scheduler.clone(),
            self.speed.clone(),
            self.c.clone(),
            self.machines.to_string(),
            self.online.clone(),
            self.online_decimal.clone(),
            self.oracle_lo.clone(),
            self.oracle_hi.clone(),
            self.oracle_method.clone(),
            self.ratio.clone(),
            self.ratio_decimal.clone(),
            self.bound.clone(),
            self.pass.map(|p| p.to_string()).unwrap_or_default(),
            self.status.clone(),
        ]
    }

    fn blank(instance: &str, spec: &ExperimentSpec, machines: usize) -> Self {
        RatioRow {
            instance: instance.to_string(),
            scheduler: spec.scheduler.to_string(),
            speed: spec.speed.to_string(),
            c: spec.c.as_ref().map(|c| c.to_string()).unwrap_or_default(),
            machines,
            online: String::new(),
            online_decimal: String::new(),
            oracle_lo: String::new(),
            oracle_hi: String::new(),
            oracle_method: String::new(),
            ratio: String::new(),
            ratio_decimal: String::new(),
            bound: spec.bound().to_string(),
            pass: None,
            status: String::new(),
        }
    }

    pub fn failed(&self) -> bool {
        self.pass == Some(false)
    }
}

/// Online factor, oracle bracket and bound check for one instance. The row
/// passes when `online <= bound * oracle_hi`, which allows for the width of
/// the oracle's bracket.
pub fn compare(instance_id: &str, instance: &Instance, spec: &ExperimentSpec, settings: &OracleSettings) -> RatioRow {
    let machines = spec.machines.unwrap_or(instance.machines);
    let mut row = RatioRow::blank(instance_id, spec, machines);
    let online = match run_experiment(instance, spec) {
        Ok((_, report)) => report.overall,
        Err(e) => {
            row.status = format!("error: {}", e);
            return row;
        }
    };
    row.online = online.to_string();
    row.online_decimal = online.approx(6);
    let mut inst = instance.clone();
    inst.machines = machines;
    let report = match oracle(&inst, machines, settings) {
        Ok(r) => r,
        Err(e) => {
            row.status = format!("oracle-skipped: {}", e);
            return row;
        }
    };
    row.oracle_lo = report.alpha_lo.to_string();
    row.oracle_hi = report.alpha_hi.to_string();
    row.oracle_method = report.method.to_string();
    let ratio = &online / &report.alpha_lo;
    row.ratio = ratio.to_string();
    row.ratio_decimal = ratio.approx(6);
    row.pass = match spec.bound() {
        Bound::Finite(b) => Some(online <= b * &report.alpha_hi),
        Bound::Unbounded => Some(true),
        Bound::None => None,
    };
    row.status = "ok".into();
    row
}
