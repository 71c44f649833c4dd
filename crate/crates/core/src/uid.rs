use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Error;

pub const UID_LEN: usize = 16;

/// Repository identifier: exactly 16 lowercase hexadecimal characters.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Uid(String);

impl Uid {
    pub fn parse(s: &str) -> Result<Self, Error> {
        if is_well_formed(s) {
            Ok(Uid(s.to_owned()))
        } else {
            Err(Error::SchemaViolation(format!("malformed uid {s:?}")))
        }
    }

    pub fn from_u64(v: u64) -> Self {
        Uid(format!("{v:016x}"))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

pub fn is_well_formed(s: &str) -> bool {
    s.len() == UID_LEN && s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'))
}

impl fmt::Display for Uid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Uid {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self, Error> {
        Uid::parse(s)
    }
}

impl TryFrom<String> for Uid {
    type Error = Error;
    fn try_from(s: String) -> Result<Self, Error> {
        if is_well_formed(&s) {
            Ok(Uid(s))
        } else {
            Err(Error::SchemaViolation(format!("malformed uid {s:?}")))
        }
    }
}

impl From<Uid> for String {
    fn from(u: Uid) -> String {
        u.0
    }
}

impl AsRef<str> for Uid {
    fn as_ref(&self) -> &str {
        &self.0
    }
}

/// Entropy for fresh UIDs. Seeded sources give reproducible sequences.
pub struct UidSource {
    rng: ChaCha8Rng,
}

impl UidSource {
    pub fn from_entropy() -> Self {
        UidSource {
            rng: ChaCha8Rng::from_os_rng(),
        }
    }

    pub fn seeded(seed: u64) -> Self {
        UidSource {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn draw(&mut self) -> Uid {
        Uid::from_u64(self.rng.next_u64())
    }
}

impl fmt::Debug for UidSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UidSource").finish_non_exhaustive()
    }
}
