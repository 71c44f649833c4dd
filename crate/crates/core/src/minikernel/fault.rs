use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Simulated implementation bugs. Probabilistic kinds decide per test from
/// a hash of `(kind, seed, subject)`, so the affected set does not depend on
/// scheduling. `Nondet` flips its output every `period` invocations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultProfile {
    #[default]
    None,
    WrongCode { p: f64, seed: u64 },
    CompileCrash { p: f64, seed: u64 },
    RuntimeCrash { p: f64, seed: u64 },
    Timeout { p: f64, seed: u64 },
    Nondet { period: u64 },
    ExecDead,
}

/// FNV-1a 64 over the concatenated chunks.
pub fn fnv1a64(chunks: &[&[u8]]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for chunk in chunks {
        for &b in *chunk {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl FaultProfile {
    fn tag(&self) -> u64 {
        match self {
            FaultProfile::None => 0,
            FaultProfile::WrongCode { .. } => 1,
            FaultProfile::CompileCrash { .. } => 2,
            FaultProfile::RuntimeCrash { .. } => 3,
            FaultProfile::Timeout { .. } => 4,
            FaultProfile::Nondet { .. } => 5,
            FaultProfile::ExecDead => 6,
        }
    }

    fn subject_hash(&self, seed: u64, subject: &str) -> u64 {
        splitmix64(fnv1a64(&[
            &self.tag().to_le_bytes(),
            &seed.to_le_bytes(),
            subject.as_bytes(),
        ]))
    }

    /// Whether this profile fires for `subject` (normally a test UID).
    pub fn selects(&self, subject: &str) -> bool {
        match *self {
            FaultProfile::None | FaultProfile::Nondet { .. } => false,
            FaultProfile::ExecDead => true,
            FaultProfile::WrongCode { p, seed }
            | FaultProfile::CompileCrash { p, seed }
            | FaultProfile::RuntimeCrash { p, seed }
            | FaultProfile::Timeout { p, seed } => {
                let u = (self.subject_hash(seed, subject) >> 11) as f64 / (1u64 << 53) as f64;
                u < p
            }
        }
    }

    /// Non-zero mask XORed into a wrong-code checksum.
    pub(crate) fn corruption_mask(&self, subject: &str) -> u32 {
        let seed = match *self {
            FaultProfile::WrongCode { seed, .. } => seed,
            _ => 0,
        };
        (self.subject_hash(seed, subject) >> 32) as u32 | 1
    }

    /// Parses the `--fault` spelling and attaches `seed` to the kinds that
    /// take one: `none`, `wrong-code:P`, `compile-crash:P`,
    /// `runtime-crash:P`, `timeout:P`, `nondet:PERIOD`, `exec-dead`.
    pub fn parse(spec: &str, seed: u64) -> Result<FaultProfile, Error> {
        let bad = || Error::InvalidArgument(format!("bad fault spec {spec:?}"));
        let (kind, arg) = match spec.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (spec, None),
        };
        let prob = || -> Result<f64, Error> {
            let p: f64 = arg.ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if (0.0..=1.0).contains(&p) {
                Ok(p)
            } else {
                Err(bad())
            }
        };
        let profile = match kind {
            "none" if arg.is_none() => FaultProfile::None,
            "exec-dead" if arg.is_none() => FaultProfile::ExecDead,
            "wrong-code" => FaultProfile::WrongCode { p: prob()?, seed },
            "compile-crash" => FaultProfile::CompileCrash { p: prob()?, seed },
            "runtime-crash" => FaultProfile::RuntimeCrash { p: prob()?, seed },
            "timeout" => FaultProfile::Timeout { p: prob()?, seed },
            "nondet" => {
                let period: u64 = arg.ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if period == 0 {
                    return Err(bad());
                }
                FaultProfile::Nondet { period }
            }
            _ => return Err(bad()),
        };
        Ok(profile)
    }

    pub fn seed(&self) -> Option<u64> {
        match *self {
            FaultProfile::WrongCode { seed, .. }
            | FaultProfile::CompileCrash { seed, .. }
            | FaultProfile::RuntimeCrash { seed, .. }
            | FaultProfile::Timeout { seed, .. } => Some(seed),
            _ => None,
        }
    }
}

/// The `--fault` spelling, without the seed.
impl fmt::Display for FaultProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FaultProfile::None => f.write_str("none"),
            FaultProfile::WrongCode { p, .. } => write!(f, "wrong-code:{p}"),
            FaultProfile::CompileCrash { p, .. } => write!(f, "compile-crash:{p}"),
            FaultProfile::RuntimeCrash { p, .. } => write!(f, "runtime-crash:{p}"),
            FaultProfile::Timeout { p, .. } => write!(f, "timeout:{p}"),
            FaultProfile::Nondet { period } => write!(f, "nondet:{period}"),
            FaultProfile::ExecDead => f.write_str("exec-dead"),
        }
    }
}

impl FromStr for FaultProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        FaultProfile::parse(s, 0)
    }
}
