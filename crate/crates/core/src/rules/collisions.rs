// M4A, M4B, M4C and the cross-application M4*.

use std::collections::BTreeMap;

use super::RuleOutput;
use crate::model::{
    ApplicationBundle, ComputeUnit, Evidence, Finding, ObjectId, ResourceRef, RuleId,
    ServiceSpec, ServiceType, UnitId, UnitLabels,
};
use crate::selectors::select_units_in_namespace;

fn routed_units<'a>(service: &ServiceSpec, units: &'a [ComputeUnit]) -> Vec<&'a ComputeUnit> {
    if service.service_type == ServiceType::ExternalName {
        return Vec::new();
    }
    select_units_in_namespace(&service.selector, &service.id.namespace, units)
}

/// Label collisions inside one application.
pub fn detect_m4(bundle: &ApplicationBundle) -> RuleOutput {
    let mut out = RuleOutput::default();
    let units = &bundle.compute_units;

    // M4A: distinct units, identical pod labels
    for (i, a) in units.iter().enumerate() {
        for b in &units[i + 1..] {
            if a.pod_labels == b.pod_labels {
                out.findings.push(Finding::new(
                    RuleId::M4A,
                    vec![ResourceRef::from(&a.id), ResourceRef::from(&b.id)],
                    Evidence::EqualPodLabels {
                        labels: a.pod_labels.clone(),
                    },
                    format!(
                        "{} and {} carry identical pod labels {}",
                        a.id, b.id, a.pod_labels
                    ),
                ));
            }
        }
    }

    let mut services_of: BTreeMap<&UnitId, Vec<&ServiceSpec>> = BTreeMap::new();
    for svc in &bundle.services {
        let selected = routed_units(svc, units);
        for u in &selected {
            services_of.entry(&u.id).or_default().push(svc);
        }
        // M4C: one service routes to several units
        if selected.len() >= 2 {
            let mut subjects = vec![ResourceRef::service(&svc.id)];
            subjects.extend(selected.iter().map(|u| ResourceRef::from(&u.id)));
            let names: Vec<String> = selected.iter().map(|u| u.id.to_string()).collect();
            out.findings.push(Finding::new(
                RuleId::M4C,
                subjects,
                Evidence::SubsetCollision {
                    selector: svc.selector.clone(),
                    units: selected
                        .iter()
                        .map(|u| UnitLabels {
                            unit: u.id.clone(),
                            labels: u.pod_labels.clone(),
                        })
                        .collect(),
                },
                format!(
                    "service {} selects {} compute units: {}",
                    svc.id,
                    selected.len(),
                    names.join(", ")
                ),
            ));
        }
    }

    // M4B: one unit behind several services
    for (unit, services) in services_of {
        if services.len() < 2 {
            continue;
        }
        let headless = services.iter().any(|s| s.headless);
        let ids: Vec<ObjectId> = services.iter().map(|s| s.id.clone()).collect();
        let mut subjects = vec![ResourceRef::from(unit)];
        subjects.extend(ids.iter().map(ResourceRef::service));
        let mut message = format!(
            "{} is selected by {} services: {}",
            unit,
            ids.len(),
            ids.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
        );
        if headless {
            message.push_str("; a headless service is involved, which is often deliberate");
        }
        out.findings.push(Finding::new(
            RuleId::M4B,
            subjects,
            Evidence::SharedTarget {
                services: ids,
                headless_involved: headless,
            },
            message,
        ));
    }
    out
}

/// Collisions between applications co-deployed in one cluster: equal pod
/// labels across applications, and services selecting another application's
/// pods in the same namespace.
pub fn detect_m4_star(bundles: &[&ApplicationBundle]) -> Vec<Finding> {
    let mut sorted: Vec<&ApplicationBundle> = bundles.to_vec();
    sorted.sort_by(|a, b| a.application_id.cmp(&b.application_id));
    let mut findings = Vec::new();
    for (i, a) in sorted.iter().enumerate() {
        for b in &sorted[i + 1..] {
            if a.application_id == b.application_id {
                continue;
            }
            let apps = vec![a.application_id.clone(), b.application_id.clone()];
            for ua in &a.compute_units {
                for ub in &b.compute_units {
                    if ua.pod_labels == ub.pod_labels {
                        findings.push(Finding::new(
                            RuleId::M4Star,
                            vec![ResourceRef::from(&ua.id), ResourceRef::from(&ub.id)],
                            Evidence::GlobalEqualLabels {
                                applications: apps.clone(),
                                labels: ua.pod_labels.clone(),
                            },
                            format!(
                                "{} and {} belong to different applications but carry identical pod labels {}",
                                ua.id, ub.id, ua.pod_labels
                            ),
                        ));
                    }
                }
            }
            cross_selection(a, b, &apps, &mut findings);
            cross_selection(b, a, &apps, &mut findings);
        }
    }
    crate::model::sort_findings(&mut findings);
    findings
}

fn cross_selection(
    owner: &ApplicationBundle,
    other: &ApplicationBundle,
    apps: &[String],
    findings: &mut Vec<Finding>,
) {
    for svc in &owner.services {
        for unit in routed_units(svc, &other.compute_units) {
            findings.push(Finding::new(
                RuleId::M4Star,
                vec![ResourceRef::service(&svc.id), ResourceRef::from(&unit.id)],
                Evidence::GlobalCrossSelection {
                    applications: apps.to_vec(),
                    service: svc.id.clone(),
                    selector: svc.selector.clone(),
                    unit: unit.id.clone(),
                },
                format!(
                    "service {} of application {} also selects {} of application {}",
                    svc.id, owner.application_id, unit.id, other.application_id
                ),
            ));
        }
    }
}
