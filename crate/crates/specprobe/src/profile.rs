//! Processor profiles: latency tables, pipeline geometry and per-check
//! timing anchors. A profile decides which fault checks permit speculative
//! forwarding and how many cycles after their anchor they fire, which is
//! what ultimately separates exploitable, non-exploitable and
//! no-speculation outcomes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const PROFILE_SCHEMA_VERSION: u32 = 1;

/// Identity of a fault check. Catalog order breaks ties between checks that
/// fire in the same cycle: segmentation before paging before everything
/// else, mirroring the order checks are evaluated in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckId {
    // Segmentation, data-segment class.
    SegDsNull,
    SegDsLimit,
    SegDsPresent,
    SegCodeAccess,
    SegDsWriteRo,
    // Segmentation, stack-segment class. Stack faults are reported through
    // a different exception vector, so their timing is kept separate.
    SegSsNull,
    SegSsLimit,
    SegSsPresent,
    SegSsWriteRo,
    SegSsDpl,
    // Paging.
    PagePresent,
    PageReserved,
    PageUs,
    PageRw,
    PageSmap,
    PagePkey,
    // Register / feature checks.
    Cr0Ts,
    Cr4Read,
    MsrRead,
    Bound,
}

impl CheckId {
    pub const ALL: [CheckId; 20] = [
        CheckId::SegDsNull,
        CheckId::SegDsLimit,
        CheckId::SegDsPresent,
        CheckId::SegCodeAccess,
        CheckId::SegDsWriteRo,
        CheckId::SegSsNull,
        CheckId::SegSsLimit,
        CheckId::SegSsPresent,
        CheckId::SegSsWriteRo,
        CheckId::SegSsDpl,
        CheckId::PagePresent,
        CheckId::PageReserved,
        CheckId::PageUs,
        CheckId::PageRw,
        CheckId::PageSmap,
        CheckId::PagePkey,
        CheckId::Cr0Ts,
        CheckId::Cr4Read,
        CheckId::MsrRead,
        CheckId::Bound,
    ];
}

/// Pipeline moment a check's latency is anchored to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckAnchor {
    /// Fires `delay` cycles after dispatch; independent of address
    /// translation (segmentation runs on logical addresses).
    PostSegmentation,
    /// Fires `delay` cycles after the translation completes, so TLB state
    /// shifts the check and the data fetch equally.
    PostTranslation,
    /// Fires `delay` cycles after dispatch, no memory involvement.
    AtDispatch,
}

impl CheckAnchor {
    /// Who wins when the check and the data arrive in the same cycle.
    /// Segmentation checks resolve earlier in the access path and beat
    /// same-cycle data; translation- and dispatch-anchored checks lose the
    /// tie and let the fetched value stand.
    pub fn fault_wins_tie(self) -> bool {
        matches!(self, CheckAnchor::PostSegmentation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckTiming {
    pub anchor: CheckAnchor,
    /// Cycles after the anchor before the execution unit learns of the
    /// violation.
    pub delay: u64,
    /// When false, the faulting op forwards nothing at all: dependents
    /// never execute and the covert channel stays silent.
    pub speculation_allowed: bool,
}

/// Memory hierarchy latencies, in cycles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatencyTable {
    pub l1: u64,
    pub l2: u64,
    pub llc: u64,
    pub mem: u64,
    /// Second-level TLB hit.
    pub stlb: u64,
    /// Page walk after an STLB miss (on top of the STLB probe).
    pub walk: u64,
    /// Page walk shortened by a paging-structure-cache hit.
    pub walk_psc: u64,
}

impl LatencyTable {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.l1 < self.l2 && self.l2 < self.llc && self.llc < self.mem) {
            return Err(ProfileError::LatencyOrdering);
        }
        if self.stlb == 0 || self.walk == 0 || self.walk_psc == 0 {
            return Err(ProfileError::LatencyOrdering);
        }
        Ok(())
    }
}

/// Probabilities are exact rationals so seeded runs stay reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrefetchPolicy {
    /// Chance that a fault-terminated fetch leaves the line in L1 rather
    /// than L2.
    pub l1_num: u32,
    pub l1_den: u32,
    /// Chance that a terminal-fault access fills L2 at all.
    pub terminal_l2_num: u32,
    pub terminal_l2_den: u32,
}

/// Hardware/OS capabilities a variant may require; a missing feature makes
/// the variant untestable (NA) on that profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Feature {
    /// Transactional suppression needed to survive terminal faults.
    Tsx,
    Smap,
    /// Memory protection keys.
    Pke,
    /// Lazy FPU context switching (CR0.TS faults on FP use).
    LazyFp,
    /// The probed model-specific register exists.
    Msr0x1a2,
    /// 32-bit segmented mode available for the segmentation variants.
    Mode32,
}

/// Outcome letters of the exploitability matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Exploitability {
    Y,
    N,
    R,
    NA,
}

impl std::fmt::Display for Exploitability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Exploitability::Y => "Y",
            Exploitability::N => "N",
            Exploitability::R => "R",
            Exploitability::NA => "NA",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorProfile {
    pub schema_version: u32,
    pub name: String,
    pub latency: LatencyTable,
    pub rob_size: usize,
    pub issue_width: usize,
    pub retire_width: usize,
    /// Dispatch ports: memory, integer ALU, floating point.
    pub mem_ports: usize,
    pub alu_ports: usize,
    pub fp_ports: usize,
    pub checks: BTreeMap<CheckId, CheckTiming>,
    pub features: BTreeSet<Feature>,
    pub prefetch: PrefetchPolicy,
    /// Expected exploitability letter per variant id; the self-consistency
    /// lint re-derives the matrix and compares against these.
    pub expected: BTreeMap<String, Exploitability>,
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("latency table violates l1 < l2 < llc < mem or has zero translation costs")]
    LatencyOrdering,
    #[error("profile schema version {found} unsupported (expected {PROFILE_SCHEMA_VERSION})")]
    SchemaVersion { found: u32 },
    #[error("no timing entry for check {0:?}")]
    MissingCheck(CheckId),
    #[error("geometry fields must be nonzero")]
    Geometry,
    #[error("failed to read profile: {0}")]
    Io(#[from] std::io::Error),
    #[error("failed to parse profile: {0}")]
    Parse(#[from] serde_json::Error),
    #[error(
        "self-consistency lint failed: variant `{variant}` (check {check:?}) \
         derives {derived} but the profile declares {declared}"
    )]
    Lint {
        variant: String,
        check: CheckId,
        derived: Exploitability,
        declared: Exploitability,
    },
}

impl ProcessorProfile {
    pub fn check(&self, id: CheckId) -> Result<CheckTiming, ProfileError> {
        self.checks
            .get(&id)
            .copied()
            .ok_or(ProfileError::MissingCheck(id))
    }

    pub fn has_feature(&self, f: Feature) -> bool {
        self.features.contains(&f)
    }

    /// Structural validation: schema version, latency ordering, geometry.
    pub fn validate_structure(&self) -> Result<(), ProfileError> {
        if self.schema_version != PROFILE_SCHEMA_VERSION {
            return Err(ProfileError::SchemaVersion {
                found: self.schema_version,
            });
        }
        self.latency.validate()?;
        if self.rob_size == 0
            || self.issue_width == 0
            || self.retire_width == 0
            || self.mem_ports == 0
            || self.alu_ports == 0
            || self.fp_ports == 0
        {
            return Err(ProfileError::Geometry);
        }
        // The access path evaluates every check; profiles must be total.
        for id in CheckId::ALL {
            self.check(id)?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("profile serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ProfileError> {
        let profile: ProcessorProfile = serde_json::from_str(text)?;
        profile.validate_structure()?;
        Ok(profile)
    }
}
