//! Binary sharing profiles `a ∈ {0,1}^n` stored as a bit mask.
//!
//! Bit `i` of the mask is user `i`'s action. The lexicographic order used for
//! deterministic tie-breaking compares the vector `(a_0, a_1, ..., a_{n-1})`
//! with `a_0` most significant, so `011 < 101 < 110`.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest market a profile can describe.
pub const MAX_USERS: usize = 64;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActionProfile {
    n: u8,
    mask: u64,
}

impl ActionProfile {
    pub fn empty(n: usize) -> Self {
        assert!(n <= MAX_USERS, "at most {MAX_USERS} users");
        Self { n: n as u8, mask: 0 }
    }

    pub fn full(n: usize) -> Self {
        assert!(n <= MAX_USERS, "at most {MAX_USERS} users");
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        Self { n: n as u8, mask }
    }

    pub fn from_mask(n: usize, mask: u64) -> Self {
        let full = Self::full(n);
        assert!(mask & !full.mask == 0, "mask has bits beyond user {n}");
        Self { n: n as u8, mask }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        let mut a = Self::empty(bits.len());
        for (i, &b) in bits.iter().enumerate() {
            a = a.with(i, b);
        }
        a
    }

    pub fn from_sharers(n: usize, sharers: impl IntoIterator<Item = usize>) -> Self {
        let mut a = Self::empty(n);
        for i in sharers {
            a = a.with(i, true);
        }
        a
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n as usize
    }

    #[inline]
    pub fn mask(&self) -> u64 {
        self.mask
    }

    #[inline]
    pub fn shares(&self, i: usize) -> bool {
        debug_assert!(i < self.n());
        self.mask >> i & 1 == 1
    }

    /// Copy of the profile with user `i`'s action replaced.
    #[inline]
    #[must_use]
    pub fn with(&self, i: usize, share: bool) -> Self {
        assert!(i < self.n(), "user {i} out of range for {} users", self.n);
        let bit = 1u64 << i;
        let mask = if share { self.mask | bit } else { self.mask & !bit };
        Self { n: self.n, mask }
    }

    pub fn count(&self) -> usize {
        self.mask.count_ones() as usize
    }

    pub fn sharers(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.n()).filter(move |&i| self.shares(i))
    }

    pub fn bits(&self) -> Vec<bool> {
        (0..self.n()).map(|i| self.shares(i)).collect()
    }

    /// Componentwise `self ≤ other`.
    pub fn is_below(&self, other: &ActionProfile) -> bool {
        self.n == other.n && self.mask & !other.mask == 0
    }

    /// Sort key realizing the lexicographic order on the bit vector.
    pub fn lex_key(&self) -> u64 {
        if self.n == 0 {
            0
        } else {
            self.mask.reverse_bits() >> (64 - self.n as u32)
        }
    }

    /// Every profile of `n` users, in mask order.
    pub fn all(n: usize) -> impl Iterator<Item = ActionProfile> {
        assert!(n < MAX_USERS, "cannot enumerate 2^{n} profiles");
        (0..1u64 << n).map(move |mask| ActionProfile { n: n as u8, mask })
    }

    pub(crate) fn check_len(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::DimensionMismatch { expected: n, found: self.n() });
        }
        Ok(())
    }
}

impl Ord for ActionProfile {
    fn cmp(&self, other: &Self) -> Ordering {
        self.n.cmp(&other.n).then_with(|| self.lex_key().cmp(&other.lex_key()))
    }
}

impl PartialOrd for ActionProfile {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for ActionProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.n() {
            f.write_str(if self.shares(i) { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for ActionProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ActionProfile({self})")
    }
}

impl FromStr for ActionProfile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(Error::scenario("profile", format!("unexpected character {c:?} in {s:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        if bits.len() > MAX_USERS {
            return Err(Error::TooManyUsers { n: bits.len(), max: MAX_USERS });
        }
        Ok(Self::from_bits(&bits))
    }
}

impl Serialize for ActionProfile {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ActionProfile {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
