//! Misconfiguration detectors.
//!
//! Each detector is a pure function of a [`RuleContext`] (or, for global
//! label collisions, of several bundles) and returns findings plus
//! diagnostics. Rules that need runtime data report themselves as skipped when
//! no snapshots were supplied.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::model::{
    sort_findings, ApplicationBundle, ComputeUnit, Finding, PortRange, RuleId, ServiceSpec,
    ServiceType,
};
use crate::selectors::select_units_in_namespace;
use crate::snapshot::{
    diff_iterations, subtract_host_baseline, IterationDiff, RuntimeSnapshot, SnapshotError,
    UnitPortDiff, UnitRef,
};

mod collisions;
mod policies;
mod ports;
mod services;

pub use collisions::{detect_m4, detect_m4_star};
pub use policies::{detect_m6, detect_m7};
pub use ports::{detect_m1, detect_m2, detect_m3};
pub use services::detect_m5;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct SkippedRule {
    pub rule: RuleId,
    pub reason: String,
}

impl SkippedRule {
    fn needs_runtime(rule: RuleId) -> Self {
        SkippedRule {
            rule,
            reason: "skipped: requires runtime data".to_string(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RuleOutput {
    pub findings: Vec<Finding>,
    pub diagnostics: Vec<String>,
    pub skipped: Vec<SkippedRule>,
}

impl RuleOutput {
    fn skipped(rule: RuleId) -> Self {
        RuleOutput {
            skipped: vec![SkippedRule::needs_runtime(rule)],
            ..Default::default()
        }
    }

    fn extend(&mut self, other: RuleOutput) {
        self.findings.extend(other.findings);
        self.diagnostics.extend(other.diagnostics);
        self.skipped.extend(other.skipped);
    }
}

/// Baseline-subtracted snapshots for one application and their comparison.
#[derive(Debug, Clone)]
pub struct RuntimeData {
    pub first: RuntimeSnapshot,
    pub second: Option<RuntimeSnapshot>,
    pub diff: IterationDiff,
    pub diagnostics: Vec<String>,
}

impl RuntimeData {
    /// Validates the snapshots against `bundle`, removes host-baseline
    /// sockets and compares the two iterations. With a single iteration every
    /// observed socket counts as stable and dynamic-port detection is off.
    pub fn new(
        bundle: &ApplicationBundle,
        first: RuntimeSnapshot,
        second: Option<RuntimeSnapshot>,
    ) -> Result<Self, SnapshotError> {
        first.validate()?;
        if first.application_id != bundle.application_id {
            return Err(SnapshotError::ApplicationMismatch(
                bundle.application_id.clone(),
                first.application_id.clone(),
            ));
        }
        first.check_units(bundle)?;
        let first = subtract_host_baseline(&first, bundle);
        let second = match second {
            Some(s) => {
                s.validate()?;
                if first.iteration != 1 || s.iteration != 2 {
                    return Err(SnapshotError::IterationOrder(first.iteration, s.iteration));
                }
                s.check_units(bundle)?;
                Some(subtract_host_baseline(&s, bundle))
            }
            None => None,
        };
        let diff = diff_iterations(&first, second.as_ref().unwrap_or(&first))?;

        let mut diagnostics = Vec::new();
        for u in &bundle.compute_units {
            if !u.id.kind.is_long_running() {
                continue;
            }
            if !diff.units.contains_key(&UnitRef::from(&u.id)) {
                diagnostics.push(format!(
                    "{}: no runtime observations; runtime rules skip this unit",
                    u.id
                ));
            }
        }
        Ok(RuntimeData {
            first,
            second,
            diff,
            diagnostics,
        })
    }

    pub fn has_both_iterations(&self) -> bool {
        self.second.is_some()
    }
}

pub struct RuleContext<'a> {
    pub bundle: &'a ApplicationBundle,
    pub runtime: Option<&'a RuntimeData>,
    pub ephemeral_range: PortRange,
}

impl<'a> RuleContext<'a> {
    pub fn new(bundle: &'a ApplicationBundle) -> Self {
        RuleContext {
            bundle,
            runtime: None,
            ephemeral_range: PortRange::default(),
        }
    }

    pub fn with_runtime(mut self, runtime: &'a RuntimeData) -> Self {
        self.runtime = Some(runtime);
        self
    }

    pub fn with_ephemeral_range(mut self, range: PortRange) -> Self {
        self.ephemeral_range = range;
        self
    }

    /// Runtime view of a unit, if the unit is subject to runtime rules and was
    /// observed in at least one iteration.
    fn observed(&self, unit: &ComputeUnit) -> Option<&'a UnitPortDiff> {
        if !unit.id.kind.is_long_running() {
            return None;
        }
        self.runtime?.diff.units.get(&UnitRef::from(&unit.id))
    }

    /// Units a service routes to: same namespace, matching pod labels.
    fn service_units(&self, service: &ServiceSpec) -> Vec<&'a ComputeUnit> {
        if service.service_type == ServiceType::ExternalName {
            return Vec::new();
        }
        select_units_in_namespace(
            &service.selector,
            &service.id.namespace,
            &self.bundle.compute_units,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApplicationAnalysis {
    pub application_id: String,
    pub findings: Vec<Finding>,
    pub skipped_rules: Vec<SkippedRule>,
    pub diagnostics: Vec<String>,
    pub unanalyzed_resources: Vec<String>,
}

/// Runs every per-application rule, M1 through M7.
pub fn analyze_application(ctx: &RuleContext<'_>) -> ApplicationAnalysis {
    let mut out = RuleOutput::default();
    if let Some(rt) = ctx.runtime {
        out.diagnostics.extend(rt.diagnostics.iter().cloned());
        out.diagnostics.extend(rt.diff.diagnostics.iter().cloned());
    }
    out.extend(detect_m1(ctx));
    out.extend(detect_m2(ctx));
    out.extend(detect_m3(ctx));
    out.extend(detect_m4(ctx.bundle));
    out.extend(detect_m5(ctx));
    out.extend(detect_m6(ctx.bundle));
    out.extend(detect_m7(ctx.bundle));

    sort_findings(&mut out.findings);
    out.skipped.sort();
    out.skipped.dedup();
    // keep first occurrence order but drop repeats
    let mut seen = BTreeSet::new();
    out.diagnostics.retain(|d| seen.insert(d.clone()));
    ApplicationAnalysis {
        application_id: ctx.bundle.application_id.clone(),
        findings: out.findings,
        skipped_rules: out.skipped,
        diagnostics: out.diagnostics,
        unanalyzed_resources: ctx.bundle.unanalyzed.clone(),
    }
}
