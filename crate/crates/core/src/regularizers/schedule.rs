//! Distortion-probability ramps.
//!
//! With `r = step / total_steps`:
//!
//! | kind | ρ(r) / ρ_target |
//! |------|-----------------|
//! | f1   | r |
//! | f2   | r² |
//! | f3   | √r |
//! | f4   | (1 − cos πr) / 2 |
//! | f5   | r²(3 − 2r) |
//! | constant | 1 |
//!
//! All ramps start at 0, end at ρ_target and never decrease; f2 is the
//! lowest of the five at every step.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    F1,
    F2,
    F3,
    F4,
    F5,
    Constant,
}

impl SchedulerKind {
    pub const ALL: [SchedulerKind; 6] = [
        SchedulerKind::F1,
        SchedulerKind::F2,
        SchedulerKind::F3,
        SchedulerKind::F4,
        SchedulerKind::F5,
        SchedulerKind::Constant,
    ];

    /// Ramp shape on `r ∈ [0, 1]`.
    pub fn shape(self, r: f64) -> f64 {
        match self {
            SchedulerKind::F1 => r,
            SchedulerKind::F2 => r * r,
            SchedulerKind::F3 => r.sqrt(),
            SchedulerKind::F4 => (1.0 - (std::f64::consts::PI * r).cos()) / 2.0,
            SchedulerKind::F5 => r * r * (3.0 - 2.0 * r),
            SchedulerKind::Constant => 1.0,
        }
    }
}

impl fmt::Display for SchedulerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SchedulerKind::F1 => "f1",
            SchedulerKind::F2 => "f2",
            SchedulerKind::F3 => "f3",
            SchedulerKind::F4 => "f4",
            SchedulerKind::F5 => "f5",
            SchedulerKind::Constant => "constant",
        };
        f.write_str(s)
    }
}

impl FromStr for SchedulerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "f1" | "linear" => SchedulerKind::F1,
            "f2" => SchedulerKind::F2,
            "f3" => SchedulerKind::F3,
            "f4" => SchedulerKind::F4,
            "f5" => SchedulerKind::F5,
            "constant" => SchedulerKind::Constant,
            other => return Err(format!("unknown scheduler `{other}` (f1..f5 | constant)")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SchedulerState {
    pub step: usize,
    pub total_steps: usize,
    pub kind: SchedulerKind,
    pub rho_target: f64,
}

/// Training position, shared by every regularizer in a network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Progress {
    pub step: usize,
    pub total_steps: usize,
}

impl Progress {
    /// End of training; ramps sit at their target.
    pub fn finished() -> Self {
        Self { step: 1, total_steps: 1 }
    }

    pub fn start() -> Self {
        Self { step: 0, total_steps: 1 }
    }

    pub fn scheduler(self, kind: SchedulerKind, rho_target: f64) -> SchedulerState {
        SchedulerState {
            step: self.step,
            total_steps: self.total_steps,
            kind,
            rho_target,
        }
    }
}

pub fn schedule_rho(s: &SchedulerState) -> Result<f64> {
    if s.total_steps == 0 {
        return Err(Error::Contract("scheduler total_steps must be positive".into()));
    }
    if s.step > s.total_steps {
        return Err(Error::Contract(format!(
            "scheduler step {} beyond total {}",
            s.step, s.total_steps
        )));
    }
    if s.step == s.total_steps {
        return Ok(s.rho_target);
    }
    let r = s.step as f64 / s.total_steps as f64;
    Ok((s.rho_target * s.kind.shape(r)).clamp(0.0, s.rho_target))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(kind: SchedulerKind, step: usize, total: usize) -> f64 {
        schedule_rho(&SchedulerState {
            step,
            total_steps: total,
            kind,
            rho_target: 0.1,
        })
        .unwrap()
    }

    #[test]
    fn endpoints() {
        for kind in SchedulerKind::ALL {
            assert_eq!(at(kind, 1000, 1000), 0.1);
            if kind != SchedulerKind::Constant {
                assert_eq!(at(kind, 0, 1000), 0.0, "{kind}");
            }
        }
        assert!((at(SchedulerKind::F1, 500, 1000) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn f2_is_the_weakest() {
        for step in 0..=1000 {
            let f2 = at(SchedulerKind::F2, step, 1000);
            for kind in [SchedulerKind::F1, SchedulerKind::F3, SchedulerKind::F4, SchedulerKind::F5] {
                assert!(f2 <= at(kind, step, 1000), "{kind} at {step}");
            }
        }
    }

    #[test]
    fn step_past_total_is_an_error() {
        let s = SchedulerState {
            step: 11,
            total_steps: 10,
            kind: SchedulerKind::F1,
            rho_target: 0.1,
        };
        assert!(schedule_rho(&s).is_err());
    }

    #[test]
    fn names_round_trip() {
        for kind in SchedulerKind::ALL {
            assert_eq!(kind.to_string().parse::<SchedulerKind>().unwrap(), kind);
        }
        assert!("f6".parse::<SchedulerKind>().is_err());
    }
}
