//! On-disk realization format.

use dimgroup_core::realization::{Flags, RealizationSeq, Stage};
use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

pub const VERSION: &str = "dimgroup-realization/1";

/// Which pipeline produced a file, and with what parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub pipeline: String,
    #[serde(default)]
    pub parameters: serde_json::Value,
}

/// A realization prefix as written to disk. Integers are decimal strings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealizationFile {
    pub version: String,
    pub flags: Flags,
    pub stages: Vec<Stage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub markers: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl RealizationFile {
    pub fn from_seq(seq: &RealizationSeq, provenance: Option<Provenance>) -> Self {
        RealizationFile {
            version: VERSION.to_string(),
            flags: seq.flags,
            stages: seq.stages.clone(),
            markers: seq
                .markers
                .as_ref()
                .map(|ms| ms.iter().map(|h| h.iter().map(|x| x.to_string()).collect()).collect()),
            provenance,
        }
    }

    /// Checks the version tag and chaining, and parses the markers.
    pub fn to_seq(&self) -> Result<RealizationSeq, String> {
        if self.version != VERSION {
            return Err(format!("unsupported version {:?}, expected {VERSION:?}", self.version));
        }
        let markers = self
            .markers
            .as_ref()
            .map(|ms| {
                ms.iter()
                    .map(|h| h.iter().map(|x| x.parse::<BigInt>().map_err(|e| format!("bad marker {x:?}: {e}"))).collect())
                    .collect::<Result<Vec<Vec<BigInt>>, String>>()
            })
            .transpose()?;
        RealizationSeq::new(self.stages.clone(), self.flags, markers).map_err(|e| e.to_string())
    }
}
