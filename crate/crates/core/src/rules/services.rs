// M5A-M5D: service ports against the units they route to.

use super::{RuleContext, RuleOutput, SkippedRule};
use crate::model::{
    resolve_target_port, Evidence, Finding, PortKey, ResolvedPort, ResourceRef, RuleId,
    ServiceType,
};

/// One finding per (service, unit, service port). A target that is not
/// declared is M5B; a declared target not open at runtime is M5C for headless
/// services and M5A otherwise.
pub fn detect_m5(ctx: &RuleContext<'_>) -> RuleOutput {
    let mut out = RuleOutput::default();
    if ctx.runtime.is_none() {
        for rule in [RuleId::M5A, RuleId::M5C] {
            out.skipped.push(SkippedRule::needs_runtime(rule));
        }
    }
    for svc in &ctx.bundle.services {
        if svc.service_type == ServiceType::ExternalName {
            continue;
        }
        let units = ctx.service_units(svc);
        if units.is_empty() {
            let why = if svc.selector.is_present() {
                "its selector matches no pod template"
            } else {
                "it has no selector"
            };
            out.findings.push(Finding::new(
                RuleId::M5D,
                vec![ResourceRef::service(&svc.id)],
                Evidence::NoTarget {
                    selector: svc.selector.clone(),
                },
                format!("service {} has no target: {why}", svc.id),
            ));
            continue;
        }
        for unit in units {
            for sp in &svc.ports {
                let resolved = resolve_target_port(sp, unit);
                let rule = match resolved {
                    ResolvedPort::Unresolved => RuleId::M5B,
                    ResolvedPort::Port(n) if !unit.declares(sp.protocol, n) => RuleId::M5B,
                    ResolvedPort::Port(n) => {
                        let Some(diff) = ctx.observed(unit) else {
                            continue;
                        };
                        let key = PortKey {
                            protocol: sp.protocol,
                            port: n,
                        };
                        if diff.observed_ports().contains(&key) {
                            continue;
                        }
                        if svc.headless {
                            RuleId::M5C
                        } else {
                            RuleId::M5A
                        }
                    }
                };
                let resolved_port = match resolved {
                    ResolvedPort::Port(n) => Some(n),
                    ResolvedPort::Unresolved => None,
                };
                let detail = match (rule, resolved_port) {
                    (RuleId::M5B, None) => format!(
                        "named target `{}` matches no declared port",
                        sp.target
                    ),
                    (RuleId::M5B, Some(n)) => format!("target port {n}/{} is not declared", sp.protocol),
                    (_, Some(n)) => format!("target port {n}/{} is never open", sp.protocol),
                    (_, None) => unreachable!("only M5B can be unresolved"),
                };
                out.findings.push(Finding::new(
                    rule,
                    vec![ResourceRef::service(&svc.id), ResourceRef::from(&unit.id)],
                    Evidence::ServiceTarget {
                        service_port: sp.port,
                        protocol: sp.protocol,
                        target: sp.target.clone(),
                        resolved_port,
                        unit: unit.id.clone(),
                    },
                    format!(
                        "service {} port {} routes to {}: {detail}",
                        svc.id, sp.port, unit.id
                    ),
                ));
            }
        }
    }
    out
}
