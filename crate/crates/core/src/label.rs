use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Binary occupancy class of a stall crop. `Occupied` is the positive class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Vacant,
    Occupied,
}

impl Label {
    /// Class index used by the network head: 0 = vacant, 1 = occupied.
    pub fn index(self) -> usize {
        match self {
            Label::Vacant => 0,
            Label::Occupied => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Label> {
        match i {
            0 => Some(Label::Vacant),
            1 => Some(Label::Occupied),
            _ => None,
        }
    }

    /// Decision rule shared by the detector and the registry: a probability
    /// of exactly one half counts as occupied.
    pub fn from_prob(occupied_prob: f32) -> Label {
        if occupied_prob >= 0.5 {
            Label::Occupied
        } else {
            Label::Vacant
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Vacant => "vacant",
            Label::Occupied => "occupied",
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Vacant => Label::Occupied,
            Label::Occupied => Label::Vacant,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vacant" | "empty" => Ok(Label::Vacant),
            "occupied" => Ok(Label::Occupied),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}
