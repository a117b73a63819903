use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Labeled(u8),
    Rejected,
}

/// The annotator's verdict on one cluster. On the wire the verdict is split
/// into `"verdict": "labeled" | "rejected"` and an optional `"class"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "DecisionLine", into = "DecisionLine")]
pub struct ClusterDecision {
    pub cluster_id: u64,
    pub verdict: Verdict,
    pub excluded_member_ids: Vec<u64>,
    pub annotator: String,
    pub timestamp: u64,
}

impl ClusterDecision {
    pub fn labeled(cluster_id: u64, class: u8) -> Self {
        Self {
            cluster_id,
            verdict: Verdict::Labeled(class),
            excluded_member_ids: Vec::new(),
            annotator: String::new(),
            timestamp: 0,
        }
    }

    pub fn rejected(cluster_id: u64) -> Self {
        Self {
            verdict: Verdict::Rejected,
            ..Self::labeled(cluster_id, 0)
        }
    }

    pub fn excluding(mut self, ids: impl IntoIterator<Item = u64>) -> Self {
        self.excluded_member_ids.extend(ids);
        self
    }

    pub fn by(mut self, annotator: impl Into<String>, timestamp: u64) -> Self {
        self.annotator = annotator.into();
        self.timestamp = timestamp;
        self
    }

    pub fn class(&self) -> Option<u8> {
        match self.verdict {
            Verdict::Labeled(c) => Some(c),
            Verdict::Rejected => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictKind {
    Labeled,
    Rejected,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DecisionLine {
    cluster_id: u64,
    verdict: VerdictKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class: Option<u8>,
    #[serde(default)]
    excluded_member_ids: Vec<u64>,
    #[serde(default)]
    annotator: String,
    #[serde(default)]
    timestamp: u64,
}

impl TryFrom<DecisionLine> for ClusterDecision {
    type Error = Error;
    fn try_from(l: DecisionLine) -> Result<Self> {
        let verdict = match (l.verdict, l.class) {
            (VerdictKind::Labeled, Some(c)) => Verdict::Labeled(c),
            (VerdictKind::Rejected, None) => Verdict::Rejected,
            (VerdictKind::Labeled, None) => {
                return Err(Error::format("decision", "labeled verdict without class"))
            }
            (VerdictKind::Rejected, Some(_)) => {
                return Err(Error::format("decision", "rejected verdict with a class"))
            }
        };
        Ok(ClusterDecision {
            cluster_id: l.cluster_id,
            verdict,
            excluded_member_ids: l.excluded_member_ids,
            annotator: l.annotator,
            timestamp: l.timestamp,
        })
    }
}

impl From<ClusterDecision> for DecisionLine {
    fn from(d: ClusterDecision) -> Self {
        let (verdict, class) = match d.verdict {
            Verdict::Labeled(c) => (VerdictKind::Labeled, Some(c)),
            Verdict::Rejected => (VerdictKind::Rejected, None),
        };
        DecisionLine {
            cluster_id: d.cluster_id,
            verdict,
            class,
            excluded_member_ids: d.excluded_member_ids,
            annotator: d.annotator,
            timestamp: d.timestamp,
        }
    }
}
