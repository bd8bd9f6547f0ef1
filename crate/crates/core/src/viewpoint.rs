use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Coarse vehicle orientation relative to the camera.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Viewpoint {
    Front,
    Side,
    Rear,
}

impl Viewpoint {
    pub const ALL: [Viewpoint; 3] = [Viewpoint::Front, Viewpoint::Side, Viewpoint::Rear];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Viewpoint::Front => "front",
            Viewpoint::Side => "side",
            Viewpoint::Rear => "rear",
        }
    }
}

impl fmt::Display for Viewpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Viewpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "front" => Ok(Viewpoint::Front),
            "side" => Ok(Viewpoint::Side),
            "rear" => Ok(Viewpoint::Rear),
            other => Err(Error::invalid(format!("unknown viewpoint {other:?}"))),
        }
    }
}
