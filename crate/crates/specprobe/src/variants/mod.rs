//! Catalog of speculation-primitive variants.
//!
//! Every variant is a strategy behind the [`SpeculationVariant`] trait: it
//! knows which fault check it exercises, which environment corruption
//! provokes that check, and which micro-op shape its primitive takes. The
//! registry holds the built-in catalog in matrix row order and resolves
//! variants by id at runtime.

mod bound;
mod paging;
mod profiles;
mod register;
mod segment;

pub use profiles::{builtin_profiles, lint_profile, load_profile, BuiltinProfiles};

use std::collections::BTreeMap;
use std::sync::Arc;

use crate::harness::layout::{Layout, RegRoles};
use crate::isa::MicroOp;
use crate::mem::{AddrMode, MemEnvironment};
use crate::profile::{CheckId, Feature, ProcessorProfile};

/// Shape of the faulting core of a test.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateKind {
    /// A single load that faults.
    OneInstrLoad,
    /// A faulting store followed by a dependent load of the stored value.
    TwoInstrStoreLoad,
    /// A faulting check op followed by a load consuming the checked index.
    TwoInstrCheckLoad,
    /// A privileged register read.
    RegRead,
    /// A floating-point register read.
    FpRegRead,
    /// A deliberately mispredicted branch (used by the misprediction
    /// experiment, not by any matrix row).
    Branch,
}

/// One speculation-primitive variant: a fault class plus the recipe for
/// provoking it.
pub trait SpeculationVariant: Send + Sync {
    /// Stable kebab-case identifier used on the command line and in
    /// reports.
    fn id(&self) -> &'static str;
    /// Matrix row label.
    fn name(&self) -> &'static str;
    fn template(&self) -> TemplateKind;
    /// The check this variant's fault exercises.
    fn check(&self) -> CheckId;
    fn required_features(&self) -> &'static [Feature];
    fn addr_mode(&self) -> AddrMode {
        AddrMode::Bits64
    }
    /// Translation dies at the page-table entry; no data outside L1.
    fn terminal_fault(&self) -> bool {
        false
    }
    /// Corrupt the environment so the primitive trips exactly this
    /// variant's check.
    fn prepare_env(&self, env: &mut MemEnvironment, layout: &Layout);
    /// Emit the primitive's micro-ops. The last op's destination carries
    /// the value the disclosure gadget transmits.
    fn primitive_ops(&self, layout: &Layout, regs: &RegRoles) -> Vec<MicroOp>;

    fn supported_by(&self, profile: &ProcessorProfile) -> bool {
        self.required_features()
            .iter()
            .all(|f| profile.has_feature(*f))
    }
}

/// Name-keyed registry of variant strategies, ordered as the matrix rows.
pub struct VariantRegistry {
    variants: Vec<Arc<dyn SpeculationVariant>>,
    by_id: BTreeMap<&'static str, usize>,
}

impl VariantRegistry {
    /// The full built-in catalog, in matrix row order.
    pub fn builtin() -> Self {
        let mut reg = VariantRegistry {
            variants: Vec::new(),
            by_id: BTreeMap::new(),
        };
        for v in paging::paging_variants() {
            reg.register(v);
        }
        for v in register::register_variants() {
            reg.register(v);
        }
        reg.register(bound::bound_variant());
        for v in segment::segment_variants() {
            reg.register(v);
        }
        reg.sort_to_matrix_order();
        reg
    }

    fn register(&mut self, v: Arc<dyn SpeculationVariant>) {
        let id = v.id();
        assert!(
            self.by_id.insert(id, self.variants.len()).is_none(),
            "duplicate variant id {id}"
        );
        self.variants.push(v);
    }

    /// Matrix row order is part of the report format.
    const MATRIX_ORDER: [&'static str; 22] = [
        "pte-present",
        "pte-reserved",
        "pte-us",
        "load-cr4",
        "load-msr",
        "pkey-user",
        "pkey-kernel",
        "smap",
        "pte-rw-write",
        "load-xmm0-cr0ts",
        "bound32",
        "ds-over-limit",
        "ss-over-limit",
        "ds-not-present",
        "ss-not-present",
        "ds-execute-only",
        "cs-execute-only",
        "ds-read-only-write",
        "ss-read-only",
        "ds-null",
        "ss-null",
        "ss-dpl-neq-cpl",
    ];

    fn sort_to_matrix_order(&mut self) {
        let order: BTreeMap<&str, usize> = Self::MATRIX_ORDER
            .iter()
            .enumerate()
            .map(|(i, &id)| (id, i))
            .collect();
        self.variants
            .sort_by_key(|v| order.get(v.id()).copied().unwrap_or(usize::MAX));
        self.by_id = self
            .variants
            .iter()
            .enumerate()
            .map(|(i, v)| (v.id(), i))
            .collect();
    }

    pub fn get(&self, id: &str) -> Option<&Arc<dyn SpeculationVariant>> {
        self.by_id.get(id).map(|&i| &self.variants[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<dyn SpeculationVariant>> {
        self.variants.iter()
    }

    pub fn len(&self) -> usize {
        self.variants.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variants.is_empty()
    }

    /// Closest known id by edit distance, for error messages.
    pub fn suggest(&self, unknown: &str) -> Option<&'static str> {
        self.by_id
            .keys()
            .map(|&id| (edit_distance(unknown, id), id))
            .min()
            .filter(|(d, _)| *d <= 5)
            .map(|(_, id)| id)
    }
}

impl Default for VariantRegistry {
    fn default() -> Self {
        Self::builtin()
    }
}

fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &cb) in b.iter().enumerate() {
            let cost = if ca == cb { 0 } else { 1 };
            cur[j + 1] = (prev[j + 1] + 1).min(cur[j] + 1).min(prev[j] + cost);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_has_all_matrix_rows() {
        let reg = VariantRegistry::builtin();
        assert_eq!(reg.len(), 22);
        let ids: Vec<&str> = reg.iter().map(|v| v.id()).collect();
        assert_eq!(ids, VariantRegistry::MATRIX_ORDER.to_vec());
    }

    #[test]
    fn ids_are_unique_and_stable() {
        let reg = VariantRegistry::builtin();
        let mut seen = std::collections::BTreeSet::new();
        for v in reg.iter() {
            assert!(seen.insert(v.id()));
        }
        assert_eq!(reg.get("pte-us").unwrap().name(), "PTE (US)");
    }

    #[test]
    fn template_kinds_match_the_exception_list() {
        let reg = VariantRegistry::builtin();
        assert_eq!(
            reg.get("pte-us").unwrap().template(),
            TemplateKind::OneInstrLoad
        );
        assert_eq!(
            reg.get("ds-read-only-write").unwrap().template(),
            TemplateKind::TwoInstrStoreLoad
        );
        assert_eq!(
            reg.get("bound32").unwrap().template(),
            TemplateKind::TwoInstrCheckLoad
        );
    }

    #[test]
    fn suggestions_find_near_misses() {
        let reg = VariantRegistry::builtin();
        assert_eq!(reg.suggest("pte_us"), Some("pte-us"));
        assert_eq!(reg.suggest("bound"), Some("bound32"));
    }

    #[test]
    fn every_check_has_timing_in_every_builtin_profile() {
        let reg = VariantRegistry::builtin();
        let profiles = builtin_profiles();
        for profile in [&profiles.intel_client, &profiles.amd_epyc] {
            for v in reg.iter() {
                assert!(
                    profile.checks.contains_key(&v.check()),
                    "{} missing timing for {:?}",
                    profile.name,
                    v.check()
                );
            }
        }
    }
}
