//! Built-in processor profiles and profile loading.
//!
//! Each profile pins the latency table, pipeline geometry and per-check
//! timings, and declares the exploitability letter it expects for every
//! catalog variant. The self-consistency lint re-derives the whole matrix
//! through the harness and refuses profiles whose timings do not reproduce
//! their declared column.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use super::VariantRegistry;
use crate::harness::exploitability;
use crate::profile::{
    CheckAnchor, CheckId, CheckTiming, Exploitability, Feature, LatencyTable, PrefetchPolicy,
    ProcessorProfile, ProfileError, PROFILE_SCHEMA_VERSION,
};

pub struct BuiltinProfiles {
    pub intel_client: ProcessorProfile,
    pub amd_epyc: ProcessorProfile,
}

pub fn builtin_profiles() -> BuiltinProfiles {
    BuiltinProfiles {
        intel_client: intel_client(),
        amd_epyc: amd_epyc(),
    }
}

fn default_latency() -> LatencyTable {
    LatencyTable {
        l1: 4,
        l2: 16,
        llc: 70,
        mem: 200,
        stlb: 8,
        walk: 100,
        walk_psc: 30,
    }
}

fn default_prefetch() -> PrefetchPolicy {
    PrefetchPolicy {
        l1_num: 1,
        l1_den: 1000,
        terminal_l2_num: 0,
        terminal_l2_den: 1,
    }
}

fn timing(anchor: CheckAnchor, delay: u64, allowed: bool) -> CheckTiming {
    CheckTiming {
        anchor,
        delay,
        speculation_allowed: allowed,
    }
}

/// Client-core profile in the spirit of a Kaby Lake part.
///
/// Paging checks resolve right when an L1 hit would deliver data, so data
/// already in L1 squeaks through while anything slower reads back zero.
/// The segment-limit check lands on the same cycle but wins the tie, which
/// is why the over-limit variants stay non-exploitable while still
/// measuring a zero relative phase-one latency at L1. Store forwarding
/// beats permission checks outright, and the bound check fires far too
/// late to matter.
fn intel_client() -> ProcessorProfile {
    use CheckAnchor::*;
    let lat = default_latency();
    let l1 = lat.l1;
    let mut checks = BTreeMap::new();
    checks.insert(CheckId::SegDsNull, timing(PostSegmentation, 0, true));
    checks.insert(CheckId::SegDsLimit, timing(PostSegmentation, l1, true));
    checks.insert(CheckId::SegDsPresent, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegCodeAccess, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegDsWriteRo, timing(PostSegmentation, l1, true));
    checks.insert(CheckId::SegSsNull, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegSsLimit, timing(PostSegmentation, l1, true));
    checks.insert(CheckId::SegSsPresent, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegSsWriteRo, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegSsDpl, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::PagePresent, timing(PostTranslation, l1, true));
    checks.insert(CheckId::PageReserved, timing(PostTranslation, l1, true));
    checks.insert(CheckId::PageUs, timing(PostTranslation, l1, true));
    checks.insert(CheckId::PageRw, timing(PostTranslation, l1, true));
    checks.insert(CheckId::PageSmap, timing(PostTranslation, l1, true));
    checks.insert(CheckId::PagePkey, timing(PostTranslation, l1, true));
    checks.insert(CheckId::Cr0Ts, timing(AtDispatch, 10, true));
    checks.insert(CheckId::Cr4Read, timing(AtDispatch, 1, false));
    checks.insert(CheckId::MsrRead, timing(AtDispatch, 1, false));
    checks.insert(CheckId::Bound, timing(AtDispatch, 100, true));

    ProcessorProfile {
        schema_version: PROFILE_SCHEMA_VERSION,
        name: "intel-client".into(),
        latency: lat,
        rob_size: 224,
        issue_width: 4,
        retire_width: 4,
        mem_ports: 2,
        alu_ports: 2,
        fp_ports: 1,
        checks,
        features: BTreeSet::from([
            Feature::Tsx,
            Feature::Smap,
            Feature::LazyFp,
            Feature::Msr0x1a2,
            Feature::Mode32,
        ]),
        prefetch: default_prefetch(),
        expected: expected_column(&[
            ("pte-present", Exploitability::Y),
            ("pte-reserved", Exploitability::Y),
            ("pte-us", Exploitability::Y),
            ("load-cr4", Exploitability::R),
            ("load-msr", Exploitability::R),
            ("pkey-user", Exploitability::NA),
            ("pkey-kernel", Exploitability::NA),
            ("smap", Exploitability::Y),
            ("pte-rw-write", Exploitability::Y),
            ("load-xmm0-cr0ts", Exploitability::Y),
            ("bound32", Exploitability::Y),
            ("ds-over-limit", Exploitability::N),
            ("ss-over-limit", Exploitability::N),
            ("ds-not-present", Exploitability::R),
            ("ss-not-present", Exploitability::R),
            ("ds-execute-only", Exploitability::R),
            ("cs-execute-only", Exploitability::R),
            ("ds-read-only-write", Exploitability::Y),
            ("ss-read-only", Exploitability::R),
            ("ds-null", Exploitability::N),
            ("ss-null", Exploitability::R),
            ("ss-dpl-neq-cpl", Exploitability::R),
        ]),
    }
}

/// Server-core profile in the spirit of an AMD EPYC part.
///
/// The supervisor-page and write-protection checks forbid speculative
/// forwarding entirely, while the segment-limit check fires late enough
/// that L1 data with a warm TLB gets out. Terminal-fault, MSR, protection
/// key and lazy-FP variants are untestable on this part.
fn amd_epyc() -> ProcessorProfile {
    use CheckAnchor::*;
    let lat = default_latency();
    let l1 = lat.l1;
    let mut checks = BTreeMap::new();
    checks.insert(CheckId::SegDsNull, timing(PostSegmentation, 0, false));
    checks.insert(CheckId::SegDsLimit, timing(PostSegmentation, 2 * l1, true));
    checks.insert(CheckId::SegDsPresent, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegCodeAccess, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegDsWriteRo, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegSsNull, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegSsLimit, timing(PostSegmentation, 2 * l1, true));
    checks.insert(CheckId::SegSsPresent, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegSsWriteRo, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::SegSsDpl, timing(PostSegmentation, l1, false));
    checks.insert(CheckId::PagePresent, timing(PostTranslation, l1, true));
    checks.insert(CheckId::PageReserved, timing(PostTranslation, l1, true));
    checks.insert(CheckId::PageUs, timing(PostTranslation, l1, false));
    checks.insert(CheckId::PageRw, timing(PostTranslation, l1, false));
    checks.insert(CheckId::PageSmap, timing(PostTranslation, l1, true));
    checks.insert(CheckId::PagePkey, timing(PostTranslation, l1, true));
    checks.insert(CheckId::Cr0Ts, timing(AtDispatch, 10, true));
    checks.insert(CheckId::Cr4Read, timing(AtDispatch, 1, false));
    checks.insert(CheckId::MsrRead, timing(AtDispatch, 1, false));
    checks.insert(CheckId::Bound, timing(AtDispatch, 100, true));

    ProcessorProfile {
        schema_version: PROFILE_SCHEMA_VERSION,
        name: "amd-epyc".into(),
        latency: lat,
        rob_size: 224,
        issue_width: 4,
        retire_width: 4,
        mem_ports: 2,
        alu_ports: 2,
        fp_ports: 1,
        checks,
        features: BTreeSet::from([Feature::Smap, Feature::Mode32]),
        prefetch: default_prefetch(),
        expected: expected_column(&[
            ("pte-present", Exploitability::NA),
            ("pte-reserved", Exploitability::NA),
            ("pte-us", Exploitability::R),
            ("load-cr4", Exploitability::R),
            ("load-msr", Exploitability::NA),
            ("pkey-user", Exploitability::NA),
            ("pkey-kernel", Exploitability::NA),
            ("smap", Exploitability::Y),
            ("pte-rw-write", Exploitability::R),
            ("load-xmm0-cr0ts", Exploitability::NA),
            ("bound32", Exploitability::Y),
            ("ds-over-limit", Exploitability::Y),
            ("ss-over-limit", Exploitability::Y),
            ("ds-not-present", Exploitability::R),
            ("ss-not-present", Exploitability::R),
            ("ds-execute-only", Exploitability::R),
            ("cs-execute-only", Exploitability::R),
            ("ds-read-only-write", Exploitability::R),
            ("ss-read-only", Exploitability::R),
            ("ds-null", Exploitability::R),
            ("ss-null", Exploitability::R),
            ("ss-dpl-neq-cpl", Exploitability::R),
        ]),
    }
}

fn expected_column(rows: &[(&str, Exploitability)]) -> BTreeMap<String, Exploitability> {
    rows.iter().map(|(id, e)| (id.to_string(), *e)).collect()
}

/// Re-derive the exploitability letter of every declared variant and
/// compare against the profile's expectations.
pub fn lint_profile(
    profile: &ProcessorProfile,
    registry: &VariantRegistry,
) -> Result<(), ProfileError> {
    for (id, &declared) in &profile.expected {
        let Some(variant) = registry.get(id) else {
            continue; // unknown rows are tolerated: custom catalogs may shrink
        };
        let derived = exploitability(variant.as_ref(), profile);
        if derived != declared {
            return Err(ProfileError::Lint {
                variant: id.clone(),
                check: variant.check(),
                derived,
                declared,
            });
        }
    }
    Ok(())
}

/// Load a profile from disk: schema check, structural validation, then the
/// self-consistency lint against the built-in catalog.
pub fn load_profile(
    path: &Path,
    registry: &VariantRegistry,
) -> Result<ProcessorProfile, ProfileError> {
    let text = std::fs::read_to_string(path)?;
    let profile = ProcessorProfile::from_json(&text)?;
    lint_profile(&profile, registry)?;
    Ok(profile)
}


#[cfg(test)]
mod lint_tests {
    use super::*;
    use crate::profile::CheckTiming;

    #[test]
    fn builtins_pass_the_self_consistency_lint() {
        let registry = VariantRegistry::builtin();
        let p = builtin_profiles();
        lint_profile(&p.intel_client, &registry).unwrap();
        lint_profile(&p.amd_epyc, &registry).unwrap();
    }

    #[test]
    fn lint_names_the_offending_check() {
        let registry = VariantRegistry::builtin();
        let mut p = builtin_profiles().intel_client;
        // Forbid speculation on the limit check: over-limit rows derive R
        // while the profile still declares N.
        p.checks.insert(
            CheckId::SegDsLimit,
            CheckTiming {
                anchor: crate::profile::CheckAnchor::PostSegmentation,
                delay: 4,
                speculation_allowed: false,
            },
        );
        match lint_profile(&p, &registry) {
            Err(ProfileError::Lint {
                variant,
                check,
                derived,
                declared,
            }) => {
                assert_eq!(variant, "ds-over-limit");
                assert_eq!(check, CheckId::SegDsLimit);
                assert_eq!(derived, Exploitability::R);
                assert_eq!(declared, Exploitability::N);
            }
            other => panic!("lint must fail, got {other:?}"),
        }
    }

    #[test]
    fn load_profile_round_trips_through_disk() {
        let registry = VariantRegistry::builtin();
        let p = builtin_profiles().amd_epyc;
        let dir = std::env::temp_dir().join("specprobe-profile-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("amd.json");
        std::fs::write(&path, p.to_json()).unwrap();
        let loaded = load_profile(&path, &registry).unwrap();
        assert_eq!(loaded, p);
    }
}
