// M6 and M7.

use super::RuleOutput;
use crate::model::{
    ApplicationBundle, Evidence, Finding, ObjectId, PolicyStatus, ResourceRef, RuleId,
};
use crate::selectors::{matches, select_units_in_namespace};

/// M6: no policies at all, or policies that select no pod.
pub fn detect_m6(bundle: &ApplicationBundle) -> RuleOutput {
    let mut out = RuleOutput::default();
    if bundle.policies.is_empty() {
        let status = if bundle.policy_templates_present_but_disabled {
            PolicyStatus::AvailableButDisabled
        } else {
            PolicyStatus::NoneDefined
        };
        let message = match status {
            PolicyStatus::AvailableButDisabled => format!(
                "application {} ships network policies but they are disabled by default",
                bundle.application_id
            ),
            PolicyStatus::NoneDefined => format!(
                "application {} defines no network policies",
                bundle.application_id
            ),
        };
        out.findings.push(Finding::new(
            RuleId::M6,
            vec![ResourceRef::application(
                &bundle.application_id,
                &bundle.namespace,
            )],
            Evidence::NoPolicies { status },
            message,
        ));
        return out;
    }
    for p in &bundle.policies {
        let selected =
            select_units_in_namespace(&p.pod_selector, &p.id.namespace, &bundle.compute_units);
        if selected.is_empty() {
            out.findings.push(Finding::new(
                RuleId::M6,
                vec![ResourceRef::network_policy(&p.id)],
                Evidence::PolicySelectsNoPods {
                    policy: p.id.clone(),
                    pod_selector: p.pod_selector.clone(),
                },
                format!("network policy {} selects no pod of the application", p.id),
            ));
        }
    }
    out
}

/// M7: pods sharing the node's network namespace, where policies do not
/// apply.
pub fn detect_m7(bundle: &ApplicationBundle) -> RuleOutput {
    let mut out = RuleOutput::default();
    for unit in bundle.compute_units.iter().filter(|u| u.host_network) {
        let selecting: Vec<ObjectId> = bundle
            .policies
            .iter()
            .filter(|p| p.id.namespace == unit.id.namespace && matches(&p.pod_selector, &unit.pod_labels))
            .map(|p| p.id.clone())
            .collect();
        let mut message = format!("{} runs in the host network namespace", unit.id);
        if !selecting.is_empty() {
            message.push_str(&format!(
                "; {} network polic{} selecting it ha{} no effect",
                selecting.len(),
                if selecting.len() == 1 { "y" } else { "ies" },
                if selecting.len() == 1 { "s" } else { "ve" }
            ));
        }
        out.findings.push(Finding::new(
            RuleId::M7,
            vec![ResourceRef::from(&unit.id)],
            Evidence::HostNetwork {
                policies_ineffective: !selecting.is_empty(),
                selecting_policies: selecting,
            },
            message,
        ));
    }
    out
}
