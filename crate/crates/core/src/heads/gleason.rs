use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 4;

/// Tissue pattern class. The discriminant is the class index used in
/// masks, logits and node labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pattern {
    B = 0,
    G3 = 1,
    G4 = 2,
    G5 = 3,
}

impl Pattern {
    pub const ALL: [Pattern; NUM_CLASSES] = [Pattern::B, Pattern::G3, Pattern::G4, Pattern::G5];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("class index {i} outside 0..{NUM_CLASSES}")))
    }

    /// Numeric Gleason value: 3, 4, 5 for the cancer patterns, 0 for benign.
    pub fn value(self) -> u8 {
        match self {
            Pattern::B => 0,
            Pattern::G3 => 3,
            Pattern::G4 => 4,
            Pattern::G5 => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Pattern::B => "B",
            Pattern::G3 => "G3",
            Pattern::G4 => "G4",
            Pattern::G5 => "G5",
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Pattern {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "B" => Ok(Pattern::B),
            "G3" => Ok(Pattern::G3),
            "G4" => Ok(Pattern::G4),
            "G5" => Ok(Pattern::G5),
            other => Err(Error::InvalidInput(format!(
                "unknown pattern `{other}` (expected B, G3, G4 or G5)"
            ))),
        }
    }
}

/// Image-level (primary, secondary) pattern pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawLabel", into = "RawLabel")]
pub struct GleasonLabel {
    primary: Pattern,
    secondary: Pattern,
}

#[derive(Serialize, Deserialize)]
struct RawLabel {
    primary: Pattern,
    secondary: Pattern,
}

impl TryFrom<RawLabel> for GleasonLabel {
    type Error = Error;

    fn try_from(r: RawLabel) -> Result<Self> {
        GleasonLabel::new(r.primary, r.secondary)
    }
}

impl From<GleasonLabel> for RawLabel {
    fn from(l: GleasonLabel) -> Self {
        RawLabel {
            primary: l.primary,
            secondary: l.secondary,
        }
    }
}

impl GleasonLabel {
    pub const BENIGN: GleasonLabel = GleasonLabel {
        primary: Pattern::B,
        secondary: Pattern::B,
    };

    /// Fails unless the pair is either fully benign or fully malignant.
    pub fn new(primary: Pattern, secondary: Pattern) -> Result<Self> {
        if (primary == Pattern::B) != (secondary == Pattern::B) {
            return Err(Error::InvalidInput(format!(
                "label ({primary}, {secondary}) mixes benign with a cancer pattern"
            )));
        }
        Ok(Self { primary, secondary })
    }

    pub fn parse(primary: &str, secondary: &str) -> Result<Self> {
        Self::new(primary.parse()?, secondary.parse()?)
    }

    /// Builds a valid label from independently predicted patterns. A benign
    /// primary forces a benign secondary; a benign secondary under a cancer
    /// primary is replaced by the primary. The flag reports whether the pair
    /// had to be changed.
    pub fn decode(primary: Pattern, secondary: Pattern) -> (Self, bool) {
        match (primary, secondary) {
            (Pattern::B, Pattern::B) => (Self::BENIGN, false),
            (Pattern::B, _) => (Self::BENIGN, true),
            (p, Pattern::B) => (Self { primary: p, secondary: p }, true),
            (p, s) => (Self { primary: p, secondary: s }, false),
        }
    }

    pub fn primary(&self) -> Pattern {
        self.primary
    }

    pub fn secondary(&self) -> Pattern {
        self.secondary
    }

    pub fn is_benign(&self) -> bool {
        self.primary == Pattern::B
    }

    /// Gleason score `value(P) + value(S)`; `None` for benign.
    pub fn score(&self) -> Option<u8> {
        if self.is_benign() {
            None
        } else {
            Some(self.primary.value() + self.secondary.value())
        }
    }

    /// ISUP grade group 0 to 5.
    pub fn isup(&self) -> u8 {
        match (self.primary, self.secondary) {
            (Pattern::B, _) => 0,
            (Pattern::G3, Pattern::G3) => 1,
            (Pattern::G3, Pattern::G4) => 2,
            (Pattern::G4, Pattern::G3) => 3,
            _ => match self.score().unwrap_or(0) {
                0..=6 => 1,
                7 => 2,
                8 => 4,
                _ => 5,
            },
        }
    }

    /// Composite grade string, `"B"` or e.g. `"3+4"`.
    pub fn grade(&self) -> String {
        if self.is_benign() {
            "B".to_string()
        } else {
            format!("{}+{}", self.primary.value(), self.secondary.value())
        }
    }

    /// All 10 valid labels: benign plus the 9 cancer pairs.
    pub fn all() -> Vec<GleasonLabel> {
        let mut out = vec![Self::BENIGN];
        for p in &Pattern::ALL[1..] {
            for s in &Pattern::ALL[1..] {
                out.push(Self {
                    primary: *p,
                    secondary: *s,
                });
            }
        }
        out
    }
}

impl fmt::Display for GleasonLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.primary, self.secondary)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Pattern::*;

    #[test]
    fn isup_mapping() {
        let cases = [
            ((B, B), 0),
            ((G3, G3), 1),
            ((G3, G4), 2),
            ((G4, G3), 3),
            ((G4, G4), 4),
            ((G3, G5), 4),
            ((G5, G3), 4),
            ((G4, G5), 5),
            ((G5, G4), 5),
            ((G5, G5), 5),
        ];
        for ((p, s), isup) in cases {
            assert_eq!(GleasonLabel::new(p, s).unwrap().isup(), isup, "{p}+{s}");
        }
    }

    #[test]
    fn isup_monotone_in_score_from_six() {
        let mut labels = GleasonLabel::all();
        labels.retain(|l| !l.is_benign());
        for a in &labels {
            for b in &labels {
                if a.score() < b.score() {
                    assert!(a.isup() <= b.isup(), "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn mixed_labels_rejected() {
        assert!(GleasonLabel::new(B, G3).is_err());
        assert!(GleasonLabel::new(G4, B).is_err());
        assert!(GleasonLabel::parse("G4", "G3").is_ok());
        assert!(GleasonLabel::parse("G6", "G3").is_err());
    }

    #[test]
    fn decode_coerces() {
        assert_eq!(GleasonLabel::decode(B, G4), (GleasonLabel::BENIGN, true));
        let (l, c) = GleasonLabel::decode(G4, B);
        assert!(c);
        assert_eq!((l.primary(), l.secondary()), (G4, G4));
        assert!(!GleasonLabel::decode(G3, G5).1);
    }

    #[test]
    fn grade_strings() {
        assert_eq!(GleasonLabel::BENIGN.grade(), "B");
        assert_eq!(GleasonLabel::new(G3, G4).unwrap().grade(), "3+4");
        assert_eq!(GleasonLabel::new(G5, G5).unwrap().score(), Some(10));
    }

    #[test]
    fn serde_validates() {
        let json = serde_json::to_string(&GleasonLabel::new(G4, G3).unwrap()).unwrap();
        assert_eq!(json, r#"{"primary":"G4","secondary":"G3"}"#);
        assert!(serde_json::from_str::<GleasonLabel>(r#"{"primary":"B","secondary":"G3"}"#).is_err());
    }
}
