//! Label-selector matching.

use crate::model::{
    ApplicationBundle, ComputeUnit, LabelRequirement, LabelSelector, LabelSet, SelectorOperator,
};

/// Kubernetes selector semantics. An absent selector matches nothing; a
/// present selector without terms matches everything.
pub fn matches(selector: &LabelSelector, labels: &LabelSet) -> bool {
    match selector {
        LabelSelector::Absent => false,
        LabelSelector::Present {
            match_labels,
            match_expressions,
        } => {
            match_labels.iter().all(|(k, v)| labels.get(k) == Some(v))
                && match_expressions
                    .iter()
                    .all(|req| requirement_holds(req, labels))
        }
    }
}

fn requirement_holds(req: &LabelRequirement, labels: &LabelSet) -> bool {
    let value = labels.get(req.key());
    match req.operator() {
        SelectorOperator::In => value.is_some_and(|v| req.values().contains(v)),
        SelectorOperator::NotIn => value.map_or(true, |v| !req.values().contains(v)),
        SelectorOperator::Exists => value.is_some(),
        SelectorOperator::DoesNotExist => value.is_none(),
    }
}

/// Units of `bundle` whose pod-template labels match, ordered by unit id.
pub fn select_units<'a>(
    selector: &LabelSelector,
    bundle: &'a ApplicationBundle,
) -> Vec<&'a ComputeUnit> {
    let mut units: Vec<&ComputeUnit> = bundle
        .compute_units
        .iter()
        .filter(|u| matches(selector, &u.pod_labels))
        .collect();
    units.sort_by(|a, b| a.id.cmp(&b.id));
    units
}

/// Like [`select_units`], restricted to one namespace. Services and policies
/// only ever select pods in their own namespace.
pub fn select_units_in_namespace<'a>(
    selector: &LabelSelector,
    namespace: &str,
    units: impl IntoIterator<Item = &'a ComputeUnit>,
) -> Vec<&'a ComputeUnit> {
    let mut selected: Vec<&ComputeUnit> = units
        .into_iter()
        .filter(|u| u.namespace() == namespace && matches(selector, &u.pod_labels))
        .collect();
    selected.sort_by(|a, b| a.id.cmp(&b.id));
    selected
}

pub fn label_set_equal(a: &LabelSet, b: &LabelSet) -> bool {
    a == b
}
