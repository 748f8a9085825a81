//! Learning-rate schedules evaluated per iteration and rewound at the start
//! of every pruning cycle.
//!
//! Four benchmark schedules are cycle-invariant: after a rewind they replay
//! the same trajectory. The S-shaped cyclical schedule (`SCyc`) replays a
//! warmup whose peak `max_lr` grows logistically with the number of completed
//! pruning cycles `m`:
//!
//! ```text
//! max_lr(m) = eps                                   if m <= q
//!           = delta / (1 + (g / (1 - g))^-beta) + eps   otherwise,
//!   where g = 1 - (1 - p)^(m - q)
//! ```

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

const GAMMA_GUARD: f64 = 1e-12;

/// Up to three iteration marks at which a warmup schedule drops by 10x.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct DropMarks(pub [Option<u64>; 3]);

impl DropMarks {
    pub fn new(marks: [Option<u64>; 3]) -> Self {
        Self(marks)
    }

    pub fn iter(&self) -> impl Iterator<Item = u64> + '_ {
        self.0.iter().flatten().copied()
    }

    fn validate(&self) -> Result<()> {
        let present: Vec<u64> = self.iter().collect();
        if present.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgs(format!(
                "drop marks must be strictly increasing, got {present:?}"
            )));
        }
        Ok(())
    }
}

/// Parameters of the logistic `max_lr` growth law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SCycParams {
    pub epsilon: f64,
    pub delta: f64,
    pub q: u32,
    pub beta: f64,
    pub prune_rate: f64,
}

impl SCycParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0 && self.delta >= 0.0) {
            return Err(Error::InvalidArgs("S-Cyc epsilon and delta must be >= 0".into()));
        }
        if !(self.beta > 0.0) {
            return Err(Error::InvalidArgs(format!("S-Cyc beta must be > 0, got {}", self.beta)));
        }
        if !(self.prune_rate > 0.0 && self.prune_rate < 1.0) {
            return Err(Error::InvalidArgs(format!(
                "S-Cyc pruning rate must be in (0, 1), got {}",
                self.prune_rate
            )));
        }
        Ok(())
    }

    pub fn max_lr(&self, m: u32) -> f64 {
        scyc_max_lr(self.epsilon, self.delta, self.prune_rate, self.q, self.beta, m)
    }
}

/// Peak learning rate of pruning cycle `m`; in `[epsilon, epsilon + delta)`.
pub fn scyc_max_lr(epsilon: f64, delta: f64, prune_rate: f64, q: u32, beta: f64, m: u32) -> f64 {
    if m <= q {
        return epsilon;
    }
    let gamma = 1.0 - (1.0 - prune_rate).powi((m - q) as i32);
    let gamma = gamma.clamp(GAMMA_GUARD, 1.0 - GAMMA_GUARD);
    let odds = gamma / (1.0 - gamma);
    delta / (1.0 + odds.powf(-beta)) + epsilon
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleSpec {
    /// `constant(a)`
    Constant { a: f64 },
    /// `decay(a, b)`: linear from `a` to zero over `b` iterations.
    Decay { a: f64, b: u64 },
    /// `cyclical(a, b, c)`: triangle wave between `a` and `b`, half period `c`.
    Cyclical { a: f64, b: f64, c: u64 },
    /// `warmup(a, b, c, d, e)`: linear ramp to `a` over `b` iterations, 10x
    /// drop at each mark.
    Warmup { a: f64, ramp: u64, drops: DropMarks },
    /// `scyc(eps, delta, q, beta, b, c, d, e)`: warmup whose peak follows
    /// [`scyc_max_lr`].
    SCyc {
        params: SCycParams,
        ramp: u64,
        drops: DropMarks,
    },
}

/// Position inside an iterative pruning run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CycleClock {
    /// Completed pruning cycles.
    pub cycle: u32,
    /// Iterations taken inside the current cycle.
    pub iteration: u64,
}

impl CycleClock {
    pub fn tick(&mut self) {
        self.iteration += 1;
    }
}

impl ScheduleSpec {
    pub fn validate(&self) -> Result<()> {
        let non_negative = |name: &str, v: f64| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgs(format!(
                    "{name} must be a finite rate >= 0, got {v}"
                )))
            }
        };
        match *self {
            Self::Constant { a } => non_negative("a", a),
            Self::Decay { a, b } => {
                non_negative("a", a)?;
                if b == 0 {
                    return Err(Error::InvalidArgs("decay length b must be >= 1".into()));
                }
                Ok(())
            }
            Self::Cyclical { a, b, c } => {
                non_negative("a", a)?;
                non_negative("b", b)?;
                if a > b {
                    return Err(Error::InvalidArgs(format!(
                        "cyclical lower bound {a} exceeds upper {b}"
                    )));
                }
                if c == 0 {
                    return Err(Error::InvalidArgs("cyclical step size c must be >= 1".into()));
                }
                Ok(())
            }
            Self::Warmup { a, drops, .. } => {
                non_negative("a", a)?;
                drops.validate()
            }
            Self::SCyc { params, drops, .. } => {
                params.validate()?;
                drops.validate()
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Constant { .. } => "constant",
            Self::Decay { .. } => "decay",
            Self::Cyclical { .. } => "cyclical",
            Self::Warmup { .. } => "warmup",
            Self::SCyc { .. } => "scyc",
        }
    }

    /// Rewinds to iteration 0 of cycle `m`.
    pub fn on_cycle_start(&self, m: u32) -> CycleClock {
        CycleClock { cycle: m, iteration: 0 }
    }

    /// Peak learning rate the schedule reaches during cycle `m`.
    pub fn max_lr(&self, m: u32) -> f64 {
        match *self {
            Self::Constant { a } | Self::Decay { a, .. } | Self::Warmup { a, .. } => a,
            Self::Cyclical { b, .. } => b,
            Self::SCyc { params, .. } => params.max_lr(m),
        }
    }

    pub fn lr_at(&self, clock: CycleClock) -> f64 {
        let iter = clock.iteration;
        match *self {
            Self::Constant { a } => a,
            Self::Decay { a, b } => a * (1.0 - iter as f64 / b as f64).max(0.0),
            Self::Cyclical { a, b, c } => {
                let pos = iter % (2 * c);
                let frac = if pos <= c {
                    pos as f64 / c as f64
                } else {
                    (2 * c - pos) as f64 / c as f64
                };
                a + (b - a) * frac
            }
            Self::Warmup { a, ramp, drops } => warmup_lr(a, ramp, drops, iter),
            Self::SCyc { params, ramp, drops } => warmup_lr(params.max_lr(clock.cycle), ramp, drops, iter),
        }
    }

    /// Same schedule shape with its peak replaced by `peak`, used by the
    /// oracle grid search. S-Cyc becomes a plain warmup.
    pub fn with_peak(&self, peak: f64) -> Self {
        match *self {
            Self::Constant { .. } => Self::Constant { a: peak },
            Self::Decay { b, .. } => Self::Decay { a: peak, b },
            Self::Cyclical { a, c, .. } => Self::Cyclical {
                a: a.min(peak),
                b: peak,
                c,
            },
            Self::Warmup { ramp, drops, .. } | Self::SCyc { ramp, drops, .. } => Self::Warmup { a: peak, ramp, drops },
        }
    }

    pub fn scyc_params(&self) -> Option<SCycParams> {
        match self {
            Self::SCyc { params, .. } => Some(*params),
            _ => None,
        }
    }

    /// Sets the pruning rate S-Cyc uses in its growth law; other schedules
    /// are returned unchanged.
    pub fn with_prune_rate(mut self, p: f64) -> Self {
        if let Self::SCyc { params, .. } = &mut self {
            params.prune_rate = p;
        }
        self
    }
}

fn warmup_lr(peak: f64, ramp: u64, drops: DropMarks, iter: u64) -> f64 {
    let mut lr = if ramp == 0 || iter >= ramp {
        peak
    } else {
        peak * (iter as f64 / ramp as f64)
    };
    for _ in drops.iter().filter(|&mark| mark <= iter) {
        lr *= 0.1;
    }
    lr
}

impl fmt::Display for ScheduleSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn marks(d: &DropMarks) -> String {
            d.0.iter()
                .map(|m| m.map_or_else(|| "nil".to_string(), |v| v.to_string()))
                .collect::<Vec<_>>()
                .join(", ")
        }
        match self {
            Self::Constant { a } => write!(f, "constant({a:e})"),
            Self::Decay { a, b } => write!(f, "decay({a:e}, {b})"),
            Self::Cyclical { a, b, c } => write!(f, "cyclical({a:e}, {b:e}, {c})"),
            Self::Warmup { a, ramp, drops } => write!(f, "warmup({a:e}, {ramp}, {})", marks(drops)),
            Self::SCyc { params, ramp, drops } => write!(
                f,
                "scyc({:e}, {:e}, {}, {}, {ramp}, {})",
                params.epsilon,
                params.delta,
                params.q,
                params.beta,
                marks(drops)
            ),
        }
    }
}

fn parse_real(field: &str, s: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::InvalidArgs(format!("{field}: expected a number, got `{s}`")))
}

/// Iteration counts accept a `K` suffix (`10K` = 10000).
fn parse_iters(field: &str, s: &str) -> Result<u64> {
    let (digits, scale) = match s.strip_suffix(['K', 'k']) {
        Some(rest) => (rest, 1000.0),
        None => (s, 1.0),
    };
    let v = parse_real(field, digits)? * scale;
    if v < 0.0 || v.fract() != 0.0 || v > u64::MAX as f64 {
        return Err(Error::InvalidArgs(format!(
            "{field}: expected a whole iteration count, got `{s}`"
        )));
    }
    Ok(v as u64)
}

fn parse_mark(field: &str, s: &str) -> Result<Option<u64>> {
    if s.eq_ignore_ascii_case("nil") || s.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse_iters(field, s).map(Some)
    }
}

fn parse_marks(args: &[&str]) -> Result<DropMarks> {
    let mut out = [None; 3];
    for (slot, (name, arg)) in out.iter_mut().zip(["c", "d", "e"].iter().zip(args)) {
        *slot = parse_mark(name, arg)?;
    }
    Ok(DropMarks(out))
}

impl FromStr for ScheduleSpec {
    type Err = Error;

    /// Positional forms: `constant(a)`, `decay(a, b)`, `cyclical(a, b, c)`,
    /// `warmup(a, b[, c[, d[, e]]])`, `scyc(eps, delta, q, beta, b[, c[, d[, e]]])`.
    /// Omitted trailing marks and `nil` mean "no drop". S-Cyc's pruning rate
    /// defaults to 0.2; see [`ScheduleSpec::with_prune_rate`].
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, rest) = s
            .split_once('(')
            .ok_or_else(|| Error::InvalidArgs(format!("schedule `{s}` is missing `(`")))?;
        let body = rest
            .strip_suffix(')')
            .ok_or_else(|| Error::InvalidArgs(format!("schedule `{s}` is missing `)`")))?;
        let args: Vec<&str> = body.split(',').map(str::trim).filter(|a| !a.is_empty()).collect();
        let arity = |lo: usize, hi: usize| {
            if (lo..=hi).contains(&args.len()) {
                Ok(())
            } else {
                Err(Error::InvalidArgs(format!(
                    "{} takes {lo}..={hi} arguments, got {}",
                    name.trim(),
                    args.len()
                )))
            }
        };
        let spec = match name.trim().to_ascii_lowercase().as_str() {
            "constant" => {
                arity(1, 1)?;
                Self::Constant {
                    a: parse_real("a", args[0])?,
                }
            }
            "decay" => {
                arity(2, 2)?;
                Self::Decay {
                    a: parse_real("a", args[0])?,
                    b: parse_iters("b", args[1])?,
                }
            }
            "cyclical" => {
                arity(3, 3)?;
                Self::Cyclical {
                    a: parse_real("a", args[0])?,
                    b: parse_real("b", args[1])?,
                    c: parse_iters("c", args[2])?,
                }
            }
            "warmup" => {
                arity(2, 5)?;
                Self::Warmup {
                    a: parse_real("a", args[0])?,
                    ramp: parse_iters("b", args[1])?,
                    drops: parse_marks(&args[2..])?,
                }
            }
            "scyc" | "s-cyc" => {
                arity(5, 8)?;
                let q = parse_iters("q", args[2])?;
                Self::SCyc {
                    params: SCycParams {
                        epsilon: parse_real("epsilon", args[0])?,
                        delta: parse_real("delta", args[1])?,
                        q: u32::try_from(q).map_err(|_| Error::InvalidArgs(format!("q too large: {q}")))?,
                        beta: parse_real("beta", args[3])?,
                        prune_rate: 0.2,
                    },
                    ramp: parse_iters("b", args[4])?,
                    drops: parse_marks(&args[5..])?,
                }
            }
            other => return Err(Error::InvalidArgs(format!("unknown schedule `{other}`"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}
