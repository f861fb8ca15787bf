//! Calendar month identifiers.
//!
//! A [`MonthId`] names one calendar month (`YYYY-MM`). Internally it is the
//! count of months since year 0, which makes lag arithmetic and ordering
//! trivial and total. Serialized form is always the `YYYY-MM` string.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// One calendar month, totally ordered.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MonthId {
    /// Months since 0000-01.
    idx: i32,
}

impl MonthId {
    /// Builds a month from calendar year and 1-based month number.
    pub fn new(year: i32, month: u8) -> Result<Self, Error> {
        if !(1..=12).contains(&month) || !(0..=9999).contains(&year) {
            return Err(Error::MonthParse {
                input: format!("{year:04}-{month:02}"),
            });
        }
        Ok(Self {
            idx: year * 12 + i32::from(month) - 1,
        })
    }

    /// Month counted from 0000-01; stable across runs, used for seed
    /// derivation and arithmetic.
    pub fn index(self) -> i32 {
        self.idx
    }

    /// Inverse of [`MonthId::index`].
    pub fn from_index(idx: i32) -> Self {
        Self { idx }
    }

    pub fn year(self) -> i32 {
        self.idx.div_euclid(12)
    }

    /// 1-based month number.
    pub fn month(self) -> u8 {
        (self.idx.rem_euclid(12) + 1) as u8
    }

    /// The month `n` months later.
    pub fn plus(self, n: i32) -> Self {
        Self { idx: self.idx + n }
    }

    /// The month `n` months earlier.
    pub fn minus(self, n: i32) -> Self {
        Self { idx: self.idx - n }
    }

    /// Signed distance in months (`self - other`).
    pub fn diff(self, other: Self) -> i32 {
        self.idx - other.idx
    }

    /// Inclusive range iterator.
    pub fn range_inclusive(self, last: Self) -> impl Iterator<Item = MonthId> {
        (self.idx..=last.idx).map(MonthId::from_index)
    }
}

impl fmt::Display for MonthId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl fmt::Debug for MonthId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MonthId({self})")
    }
}

impl FromStr for MonthId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let err = || Error::MonthParse { input: s.into() };
        let (y, m) = s.split_once('-').ok_or_else(err)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(err());
        }
        let year: i32 = y.parse().map_err(|_| err())?;
        let month: u8 = m.parse().map_err(|_| err())?;
        MonthId::new(year, month).map_err(|_| err())
    }
}

impl Serialize for MonthId {
    fn serialize<S: Serializer>(&self, ser: S) -> Result<S::Ok, S::Error> {
        ser.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MonthId {
    fn deserialize<D: Deserializer<'de>>(de: D) -> Result<Self, D::Error> {
        let s = String::deserialize(de)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_format_round_trip() {
        for s in ["2001-12", "2002-01", "0004-07", "1999-10"] {
            let m: MonthId = s.parse().unwrap();
            assert_eq!(m.to_string(), s);
        }
    }

    #[test]
    fn rejects_malformed_strings() {
        for s in ["2001-13", "2001-00", "200112", "2001-1", "01-2001", "abcd-ef", ""] {
            assert!(s.parse::<MonthId>().is_err(), "accepted {s:?}");
        }
    }

    #[test]
    fn arithmetic_crosses_year_boundaries() {
        let dec: MonthId = "2001-12".parse().unwrap();
        assert_eq!(dec.plus(1).to_string(), "2002-01");
        assert_eq!(dec.minus(12).to_string(), "2000-12");
        assert_eq!(dec.minus(3).to_string(), "2001-09");
        assert_eq!(dec.plus(1).diff(dec), 1);
    }

    #[test]
    fn ordering_follows_time() {
        let a: MonthId = "2001-12".parse().unwrap();
        let b: MonthId = "2002-01".parse().unwrap();
        assert!(a < b);
        assert_eq!(a.plus(1), b);
    }

    #[test]
    fn index_round_trips() {
        let m: MonthId = "2010-06".parse().unwrap();
        assert_eq!(MonthId::from_index(m.index()), m);
    }

    #[test]
    fn serde_uses_string_form() {
        let m: MonthId = "2003-04".parse().unwrap();
        assert_eq!(serde_json::to_string(&m).unwrap(), "\"2003-04\"");
        let back: MonthId = serde_json::from_str("\"2003-04\"").unwrap();
        assert_eq!(back, m);
    }
}
