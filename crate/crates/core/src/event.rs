use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Cue classes of the left/right imagined finger-tapping paradigm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ClassLabel {
    Left,
    Right,
    Relax,
}

impl ClassLabel {
    pub const ALL: [ClassLabel; 3] = [ClassLabel::Left, ClassLabel::Right, ClassLabel::Relax];

    /// Code carried in the per-frame event channel.
    pub fn code(self) -> u8 {
        match self {
            ClassLabel::Left => 1,
            ClassLabel::Right => 2,
            ClassLabel::Relax => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.code() == code)
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::Left => "Left",
            ClassLabel::Right => "Right",
            ClassLabel::Relax => "Relax",
        }
    }

    /// Code -> label table for stream headers.
    pub fn label_table() -> BTreeMap<u8, String> {
        Self::ALL.into_iter().map(|c| (c.code(), c.name().to_string())).collect()
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown class {s:?}"))
    }
}

/// A timestamped event on the sample grid of a stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMarker {
    /// Index on the gap-filled sample grid.
    pub sample: u64,
    pub code: u8,
    pub label: String,
    pub stream_time_ns: u64,
}

impl EventMarker {
    pub fn class(&self) -> Option<ClassLabel> {
        ClassLabel::from_code(self.code)
    }
}
