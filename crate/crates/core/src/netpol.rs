//! NetworkPolicy evaluation.
//!
//! Traffic to a pod is allowed when no ingress policy selects the pod, or
//! when at least one rule of a selecting policy admits the source and port.
//! Egress is evaluated symmetrically. Pods on the host network are outside
//! policy enforcement. `ipBlock` peers are treated as admitting any in-cluster
//! source, and decisions relying on them are flagged as approximate.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    namespace_labels, resolve_target_port, ApplicationBundle, ComputeUnit, Finding, LabelSet,
    NetworkPolicySpec, ObjectId, PolicyPeer, PolicyPort, PolicyPortValue, PolicyRule, PolicyType,
    PortKey, Protocol, ResolvedPort, UnitId, WorkloadKind,
};
use crate::rules::RuntimeData;
use crate::selectors::matches;

#[derive(Debug, Error)]
pub enum NetpolError {
    #[error("residual exposure needs runtime snapshots for application `{0}`")]
    RuntimeRequired(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    /// Destination (or source, for egress) uses the host network.
    HostNetwork,
    /// No policy of this direction selects the pod.
    NotIsolated,
    AllowedBy(ObjectId),
    Denied,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Decision {
    pub allowed: bool,
    pub reason: DecisionReason,
    pub approximated: bool,
}

impl Decision {
    fn open(reason: DecisionReason) -> Self {
        Decision {
            allowed: true,
            reason,
            approximated: false,
        }
    }
}

/// Policies of `direction` that select `unit`.
pub fn effective_policies<'a>(
    unit: &ComputeUnit,
    direction: PolicyType,
    policies: &'a [NetworkPolicySpec],
) -> Vec<&'a NetworkPolicySpec> {
    policies
        .iter()
        .filter(|p| {
            p.governs(direction)
                && p.id.namespace == unit.id.namespace
                && matches(&p.pod_selector, &unit.pod_labels)
        })
        .collect()
}

pub fn effective_ingress_policies<'a>(
    dst: &ComputeUnit,
    bundle: &'a ApplicationBundle,
) -> Vec<&'a NetworkPolicySpec> {
    effective_policies(dst, PolicyType::Ingress, &bundle.policies)
}

/// Whether `peer`, written in a policy of `policy_namespace`, matches `unit`.
/// Returns (matched, approximated).
fn peer_matches(peer: &PolicyPeer, policy_namespace: &str, unit: &ComputeUnit) -> (bool, bool) {
    match peer {
        PolicyPeer::IpBlock { .. } => (true, true),
        PolicyPeer::Pods {
            pod_selector,
            namespace_selector,
        } => {
            let ns_ok = match namespace_selector {
                None => unit.id.namespace == policy_namespace,
                Some(sel) => matches(sel, &namespace_labels(&unit.id.namespace)),
            };
            let pod_ok = pod_selector
                .as_ref()
                .map_or(true, |sel| matches(sel, &unit.pod_labels));
            (ns_ok && pod_ok, false)
        }
    }
}

/// Named ports resolve against the destination pod's containers.
fn port_matches(pp: &PolicyPort, dst: &ComputeUnit, protocol: Protocol, port: u16) -> bool {
    if pp.protocol != protocol {
        return false;
    }
    match &pp.port {
        None => true,
        Some(PolicyPortValue::Number(n)) => match pp.end_port {
            Some(end) => (*n..=end).contains(&port),
            None => *n == port,
        },
        Some(PolicyPortValue::Name(name)) => dst
            .declared_ports()
            .any(|d| d.name.as_deref() == Some(name) && d.number == port && d.protocol == protocol),
    }
}

enum Admit {
    No,
    Exact,
    Approximate,
}

/// Evaluates one rule: `peer` is the remote side, `dst` the pod receiving
/// the traffic.
fn rule_admits(
    rule: &PolicyRule,
    policy_namespace: &str,
    peer: &ComputeUnit,
    dst: &ComputeUnit,
    protocol: Protocol,
    port: u16,
) -> Admit {
    let ports_ok =
        rule.ports.is_empty() || rule.ports.iter().any(|pp| port_matches(pp, dst, protocol, port));
    if !ports_ok {
        return Admit::No;
    }
    if rule.peers.is_empty() {
        return Admit::Exact;
    }
    let mut exact = false;
    let mut approx = false;
    for p in &rule.peers {
        match peer_matches(p, policy_namespace, peer) {
            (true, false) => exact = true,
            (true, true) => approx = true,
            _ => {}
        }
    }
    if exact {
        Admit::Exact
    } else if approx {
        Admit::Approximate
    } else {
        Admit::No
    }
}

fn decide<'a>(
    policies: impl IntoIterator<Item = &'a NetworkPolicySpec>,
    rules_of: impl Fn(&'a NetworkPolicySpec) -> &'a [PolicyRule],
    peer: &ComputeUnit,
    dst: &ComputeUnit,
    protocol: Protocol,
    port: u16,
) -> Decision {
    let mut approx_hit: Option<ObjectId> = None;
    let mut any = false;
    for p in policies {
        any = true;
        for r in rules_of(p) {
            match rule_admits(r, &p.id.namespace, peer, dst, protocol, port) {
                Admit::Exact => {
                    return Decision {
                        allowed: true,
                        reason: DecisionReason::AllowedBy(p.id.clone()),
                        approximated: false,
                    }
                }
                Admit::Approximate if approx_hit.is_none() => approx_hit = Some(p.id.clone()),
                _ => {}
            }
        }
    }
    if !any {
        return Decision::open(DecisionReason::NotIsolated);
    }
    match approx_hit {
        Some(id) => Decision {
            allowed: true,
            reason: DecisionReason::AllowedBy(id),
            approximated: true,
        },
        None => Decision {
            allowed: false,
            reason: DecisionReason::Denied,
            approximated: false,
        },
    }
}

/// Ingress decision for traffic from `src` to `dst` on `protocol`/`port`.
pub fn evaluate_ingress(
    src: &ComputeUnit,
    dst: &ComputeUnit,
    protocol: Protocol,
    port: u16,
    policies: &[NetworkPolicySpec],
) -> Decision {
    if dst.host_network {
        return Decision::open(DecisionReason::HostNetwork);
    }
    decide(
        effective_policies(dst, PolicyType::Ingress, policies),
        |p| &p.ingress_rules,
        src,
        dst,
        protocol,
        port,
    )
}

/// Egress decision for traffic leaving `src` towards `dst`.
pub fn evaluate_egress(
    src: &ComputeUnit,
    dst: &ComputeUnit,
    protocol: Protocol,
    port: u16,
    policies: &[NetworkPolicySpec],
) -> Decision {
    if src.host_network {
        return Decision::open(DecisionReason::HostNetwork);
    }
    decide(
        effective_policies(src, PolicyType::Egress, policies),
        |p| &p.egress_rules,
        dst,
        dst,
        protocol,
        port,
    )
}

pub fn is_ingress_allowed(
    src: &ComputeUnit,
    dst: &ComputeUnit,
    protocol: Protocol,
    port: u16,
    bundle: &ApplicationBundle,
) -> bool {
    evaluate_ingress(src, dst, protocol, port, &bundle.policies).allowed
}

pub fn is_egress_allowed(
    src: &ComputeUnit,
    dst: &ComputeUnit,
    protocol: Protocol,
    port: u16,
    bundle: &ApplicationBundle,
) -> bool {
    evaluate_egress(src, dst, protocol, port, &bundle.policies).allowed
}

/// A connection needs both the source's egress and the destination's ingress.
pub fn is_flow_allowed(
    src: &ComputeUnit,
    dst: &ComputeUnit,
    protocol: Protocol,
    port: u16,
    policies: &[NetworkPolicySpec],
) -> bool {
    evaluate_egress(src, dst, protocol, port, policies).allowed
        && evaluate_ingress(src, dst, protocol, port, policies).allowed
}

/// Where the assumed attacker pod runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttackerPlacement {
    pub namespace: Option<String>,
    pub labels: LabelSet,
}

impl Default for AttackerPlacement {
    /// A label-less pod in the application's namespace.
    fn default() -> Self {
        AttackerPlacement {
            namespace: None,
            labels: LabelSet::new(),
        }
    }
}

impl AttackerPlacement {
    pub fn unit(&self, bundle: &ApplicationBundle, namespace: &str) -> ComputeUnit {
        let namespace = self.namespace.clone().unwrap_or_else(|| namespace.to_string());
        ComputeUnit {
            id: UnitId {
                application_id: format!("{}-attacker", bundle.application_id),
                kind: WorkloadKind::Pod,
                namespace,
                name: "attacker".to_string(),
            },
            pod_labels: self.labels.clone(),
            containers: Vec::new(),
            host_network: false,
            replicas: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Via {
    DirectPod,
    Service { service: ObjectId },
}

/// An implicated port the attacker can reach.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct Endpoint {
    pub unit_id: UnitId,
    pub protocol: Protocol,
    pub port: u16,
    pub via: Via,
    #[serde(skip_serializing_if = "std::ops::Not::not")]
    pub approximated: bool,
}

/// Ports implicated by port-level findings that remain reachable from an
/// attacker pod despite the application's policies. Exposure through a
/// service is listed separately when a service port targets the same port.
pub fn residual_exposure(
    bundle: &ApplicationBundle,
    findings: &[Finding],
    runtime: Option<&RuntimeData>,
    attacker: &AttackerPlacement,
) -> Result<Vec<Endpoint>, NetpolError> {
    if runtime.is_none() {
        return Err(NetpolError::RuntimeRequired(bundle.application_id.clone()));
    }
    let implicated: BTreeSet<(UnitId, PortKey)> = findings
        .iter()
        .flat_map(Finding::implicated_ports)
        .filter(|(u, _)| u.application_id == bundle.application_id)
        .collect();
    let mut out = BTreeSet::new();
    for (id, pk) in implicated {
        let Some(unit) = bundle.unit(&id) else {
            continue;
        };
        let src = attacker.unit(bundle, &unit.id.namespace);
        let d = evaluate_ingress(&src, unit, pk.protocol, pk.port, &bundle.policies);
        if !d.allowed {
            continue;
        }
        out.insert(Endpoint {
            unit_id: id.clone(),
            protocol: pk.protocol,
            port: pk.port,
            via: Via::DirectPod,
            approximated: d.approximated,
        });
        for svc in &bundle.services {
            if svc.id.namespace != unit.id.namespace || !matches(&svc.selector, &unit.pod_labels) {
                continue;
            }
            let targets = svc.ports.iter().any(|sp| {
                sp.protocol == pk.protocol
                    && resolve_target_port(sp, unit) == ResolvedPort::Port(pk.port)
            });
            if targets {
                out.insert(Endpoint {
                    unit_id: id.clone(),
                    protocol: pk.protocol,
                    port: pk.port,
                    via: Via::Service {
                        service: svc.id.clone(),
                    },
                    approximated: d.approximated,
                });
            }
        }
    }
    Ok(out.into_iter().collect())
}
