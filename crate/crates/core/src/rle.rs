//! Run-length text encoding of presence bitmaps: `"1x200,0x3,1x7"`.
//!
//! Runs alternate in value and have positive counts without leading zeros,
//! so every bitmap has exactly one encoding. The empty bitmap encodes as `""`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RleError {
    #[error("malformed run {0:?}, expected <0|1>x<count>")]
    BadRun(String),
    #[error("run {0:?} repeats the value of the previous run")]
    NotAlternating(String),
    #[error("run {0:?} has a zero or non-canonical count")]
    BadCount(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Rle {
    runs: Vec<(bool, u64)>,
}

impl Rle {
    pub fn from_bits(bits: &[bool]) -> Self {
        let mut runs: Vec<(bool, u64)> = Vec::new();
        for &b in bits {
            match runs.last_mut() {
                Some((v, n)) if *v == b => *n += 1,
                _ => runs.push((b, 1)),
            }
        }
        Rle { runs }
    }

    /// A single run of `n` stored chunks.
    pub fn ones(n: u64) -> Self {
        if n == 0 {
            Rle::default()
        } else {
            Rle {
                runs: vec![(true, n)],
            }
        }
    }

    pub fn runs(&self) -> &[(bool, u64)] {
        &self.runs
    }

    pub fn to_bits(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.len() as usize);
        for &(v, n) in &self.runs {
            out.extend(std::iter::repeat(v).take(n as usize));
        }
        out
    }

    pub fn len(&self) -> u64 {
        self.runs.iter().map(|r| r.1).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn fill(&self) -> u64 {
        self.runs.iter().filter(|r| r.0).map(|r| r.1).sum()
    }

    pub fn playable(&self) -> u64 {
        match self.runs.first() {
            Some(&(true, n)) => n,
            _ => 0,
        }
    }

    /// Index of the last stored position, 0 when nothing is stored.
    pub fn width(&self) -> u64 {
        let mut end = self.len();
        for &(v, n) in self.runs.iter().rev() {
            if v {
                return end - 1;
            }
            end -= n;
        }
        0
    }
}

impl fmt::Display for Rle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, (v, n)) in self.runs.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}x{}", u8::from(*v), n)?;
        }
        Ok(())
    }
}

impl FromStr for Rle {
    type Err = RleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut runs: Vec<(bool, u64)> = Vec::new();
        if s.is_empty() {
            return Ok(Rle { runs });
        }
        for tok in s.split(',') {
            let (v, n) = tok
                .split_once('x')
                .ok_or_else(|| RleError::BadRun(tok.to_owned()))?;
            let v = match v {
                "0" => false,
                "1" => true,
                _ => return Err(RleError::BadRun(tok.to_owned())),
            };
            if n.is_empty() || n.starts_with('0') || !n.bytes().all(|c| c.is_ascii_digit()) {
                return Err(RleError::BadCount(tok.to_owned()));
            }
            let n: u64 = n.parse().map_err(|_| RleError::BadCount(tok.to_owned()))?;
            if runs.last().is_some_and(|r| r.0 == v) {
                return Err(RleError::NotAlternating(tok.to_owned()));
            }
            runs.push((v, n));
        }
        Ok(Rle { runs })
    }
}

impl Serialize for Rle {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Rle {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
