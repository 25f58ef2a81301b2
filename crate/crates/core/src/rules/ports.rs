// M1, M2, M3: declared ports against runtime observations.

use std::collections::{BTreeMap, BTreeSet};

use super::{RuleContext, RuleOutput};
use crate::model::{Evidence, Finding, PortKey, ResourceRef, RuleId};
use crate::snapshot::{BindScope, SocketKey};

/// M1: a stable listening port no container declares.
pub fn detect_m1(ctx: &RuleContext<'_>) -> RuleOutput {
    if ctx.runtime.is_none() {
        return RuleOutput::skipped(RuleId::M1);
    }
    let mut out = RuleOutput::default();
    for unit in &ctx.bundle.compute_units {
        let Some(diff) = ctx.observed(unit) else {
            continue;
        };
        // widest scope per port; loopback-only ports are tracked separately
        let mut reachable: BTreeMap<PortKey, BindScope> = BTreeMap::new();
        let mut loopback_only: BTreeSet<PortKey> = BTreeSet::new();
        for k in &diff.stable {
            if unit.declares(k.protocol, k.port) {
                continue;
            }
            if k.scope.is_loopback() {
                loopback_only.insert(k.port_key());
                continue;
            }
            reachable
                .entry(k.port_key())
                .and_modify(|s| {
                    if k.scope < *s {
                        *s = k.scope.clone();
                    }
                })
                .or_insert_with(|| k.scope.clone());
        }
        for pk in loopback_only.difference(&reachable.keys().copied().collect()) {
            out.diagnostics.push(format!(
                "{}: undeclared port {pk} is bound to loopback only, not reported",
                unit.id
            ));
        }
        for (pk, scope) in reachable {
            let process = diff
                .observed
                .iter()
                .filter(|r| r.port_key() == pk)
                .find_map(|r| r.process_name.clone());
            let message = format!(
                "{} listens on {} ({}) in both runs, but no container declares it",
                unit.id,
                pk,
                scope_text(&scope)
            );
            out.findings.push(Finding::new(
                RuleId::M1,
                vec![ResourceRef::from(&unit.id)],
                Evidence::UndeclaredPort {
                    protocol: pk.protocol,
                    port: pk.port,
                    bind_scope: scope,
                    process,
                },
                message,
            ));
        }
    }
    out
}

fn scope_text(scope: &BindScope) -> String {
    match scope {
        BindScope::AllInterfaces => "all interfaces".to_string(),
        BindScope::Loopback => "loopback".to_string(),
        BindScope::SpecificAddress(ip) => format!("address {ip}"),
    }
}

/// M2: ports that differ between the two runs. Declared ports and ports that
/// are stable under some bind scope are never dynamic.
pub fn detect_m2(ctx: &RuleContext<'_>) -> RuleOutput {
    let Some(rt) = ctx.runtime else {
        return RuleOutput::skipped(RuleId::M2);
    };
    if !rt.has_both_iterations() {
        return RuleOutput {
            skipped: vec![super::SkippedRule {
                rule: RuleId::M2,
                reason: "skipped: requires two runtime iterations".to_string(),
            }],
            ..Default::default()
        };
    }
    let mut out = RuleOutput::default();
    for unit in &ctx.bundle.compute_units {
        let Some(diff) = ctx.observed(unit) else {
            continue;
        };
        let stable: BTreeSet<PortKey> = diff.stable.iter().map(SocketKey::port_key).collect();
        let (first, second) = diff.trusted_unstable();
        let mut keep = |set: BTreeSet<SocketKey>| -> Vec<PortKey> {
            let mut ports = BTreeSet::new();
            for k in set {
                let pk = k.port_key();
                if stable.contains(&pk) {
                    continue;
                }
                if unit.declares(pk.protocol, pk.port) {
                    out.diagnostics.push(format!(
                        "{}: declared port {pk} was open in one run only",
                        unit.id
                    ));
                    continue;
                }
                ports.insert(pk);
            }
            ports.into_iter().collect()
        };
        let first = keep(first);
        let second = keep(second);
        if first.is_empty() && second.is_empty() {
            continue;
        }
        let outside: Vec<PortKey> = first
            .iter()
            .chain(second.iter())
            .filter(|p| !ctx.ephemeral_range.contains(p.port))
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let list = |v: &[PortKey]| {
            if v.is_empty() {
                "none".to_string()
            } else {
                v.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(", ")
            }
        };
        let message = format!(
            "{} opened different ports across runs: run 1 [{}], run 2 [{}]",
            unit.id,
            list(&first),
            list(&second)
        );
        out.findings.push(Finding::new(
            RuleId::M2,
            vec![ResourceRef::from(&unit.id)],
            Evidence::DynamicPorts {
                first_iteration: first,
                second_iteration: second,
                ephemeral_range: ctx.ephemeral_range,
                outside_ephemeral_range: outside,
            },
            message,
        ));
    }
    out
}

/// M3: a declared port never seen open in any run.
pub fn detect_m3(ctx: &RuleContext<'_>) -> RuleOutput {
    if ctx.runtime.is_none() {
        return RuleOutput::skipped(RuleId::M3);
    }
    let mut out = RuleOutput::default();
    for unit in &ctx.bundle.compute_units {
        let Some(diff) = ctx.observed(unit) else {
            continue;
        };
        let observed = diff.observed_ports();
        let mut reported = BTreeSet::new();
        for decl in unit.declared_ports() {
            let pk = PortKey {
                protocol: decl.protocol,
                port: decl.number,
            };
            if observed.contains(&pk) || !reported.insert(pk) {
                continue;
            }
            let label = decl
                .name
                .as_ref()
                .map(|n| format!(" (`{n}`)"))
                .unwrap_or_default();
            out.findings.push(Finding::new(
                RuleId::M3,
                vec![ResourceRef::from(&unit.id)],
                Evidence::UnopenedPort {
                    protocol: decl.protocol,
                    port: decl.number,
                    name: decl.name.clone(),
                },
                format!("{} declares port {pk}{label} but never opened it", unit.id),
            ));
        }
    }
    out
}
