//! Typed, normalized view of the cluster resources an application deploys.
//!
//! Everything in here is immutable once built. The ingest module is the only
//! producer; every analysis module consumes these types read-only.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

mod finding;

pub use finding::{
    sort_findings, Evidence, Finding, PolicyStatus, PortKey, ResourceRef, RuleId, Severity,
    UnitLabels,
};

const MAX_LABEL_NAME_LEN: usize = 63;
const MAX_LABEL_PREFIX_LEN: usize = 253;
const MAX_LABEL_VALUE_LEN: usize = 63;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ModelError {
    #[error("label key must not be empty")]
    EmptyLabelKey,
    #[error("label key `{0}` exceeds the allowed length")]
    LabelKeyTooLong(String),
    #[error("label `{key}` has an empty value")]
    EmptyLabelValue { key: String },
    #[error("label `{key}` value exceeds {MAX_LABEL_VALUE_LEN} characters")]
    LabelValueTooLong { key: String },
    #[error("selector requirement on `{key}` with operator {operator} {reason}")]
    InvalidRequirement {
        key: String,
        operator: SelectorOperator,
        reason: &'static str,
    },
    #[error("port {0} is outside 1-65535")]
    PortOutOfRange(i64),
    #[error("unknown protocol `{0}`")]
    UnknownProtocol(String),
    #[error("unknown workload kind `{0}`")]
    UnknownWorkloadKind(String),
    #[error("invalid port range `{0}`")]
    InvalidPortRange(String),
}

/// Validates a port number coming from untyped input.
pub fn port_number(value: i64) -> Result<u16, ModelError> {
    if (1..=65535).contains(&value) {
        Ok(value as u16)
    } else {
        Err(ModelError::PortOutOfRange(value))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Protocol {
    #[serde(rename = "TCP")]
    Tcp,
    #[serde(rename = "UDP")]
    Udp,
    #[serde(rename = "SCTP")]
    Sctp,
}

impl Protocol {
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Tcp => "TCP",
            Protocol::Udp => "UDP",
            Protocol::Sctp => "SCTP",
        }
    }
}

impl Default for Protocol {
    fn default() -> Self {
        Protocol::Tcp
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Protocol {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "TCP" => Ok(Protocol::Tcp),
            "UDP" => Ok(Protocol::Udp),
            "SCTP" => Ok(Protocol::Sctp),
            _ => Err(ModelError::UnknownProtocol(s.to_string())),
        }
    }
}

/// Inclusive port interval, e.g. the host's ephemeral range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PortRange {
    low: u16,
    high: u16,
}

impl PortRange {
    /// Linux default `net.ipv4.ip_local_port_range`.
    pub const LINUX_EPHEMERAL: PortRange = PortRange {
        low: 32768,
        high: 60999,
    };

    pub fn new(low: u16, high: u16) -> Result<Self, ModelError> {
        if low == 0 || low > high {
            return Err(ModelError::InvalidPortRange(format!("{low}-{high}")));
        }
        Ok(PortRange { low, high })
    }

    pub fn low(&self) -> u16 {
        self.low
    }

    pub fn high(&self) -> u16 {
        self.high
    }

    pub fn contains(&self, port: u16) -> bool {
        (self.low..=self.high).contains(&port)
    }
}

impl Default for PortRange {
    fn default() -> Self {
        PortRange::LINUX_EPHEMERAL
    }
}

impl fmt::Display for PortRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.low, self.high)
    }
}

impl FromStr for PortRange {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::InvalidPortRange(s.to_string());
        let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
        let lo: u16 = lo.trim().parse().map_err(|_| bad())?;
        let hi: u16 = hi.trim().parse().map_err(|_| bad())?;
        PortRange::new(lo, hi).map_err(|_| bad())
    }
}

/// Validated label map. Keys and values follow the Kubernetes label syntax
/// limits; ordering is lexicographic by key.
#[derive(Debug, Clone, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct LabelSet(BTreeMap<String, String>);

impl LabelSet {
    pub fn new() -> Self {
        LabelSet::default()
    }

    pub fn from_map(map: BTreeMap<String, String>) -> Result<Self, ModelError> {
        for (k, v) in &map {
            validate_label(k, v)?;
        }
        Ok(LabelSet(map))
    }

    pub fn from_pairs<K, V, I>(pairs: I) -> Result<Self, ModelError>
    where
        K: Into<String>,
        V: Into<String>,
        I: IntoIterator<Item = (K, V)>,
    {
        LabelSet::from_map(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn contains_key(&self, key: &str) -> bool {
        self.0.contains_key(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_map(&self) -> &BTreeMap<String, String> {
        &self.0
    }

    /// Returns a copy with one extra label; fails on invalid syntax.
    pub fn with(&self, key: &str, value: &str) -> Result<Self, ModelError> {
        validate_label(key, value)?;
        let mut map = self.0.clone();
        map.insert(key.to_string(), value.to_string());
        Ok(LabelSet(map))
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let map = BTreeMap::<String, String>::deserialize(d)?;
        LabelSet::from_map(map).map_err(serde::de::Error::custom)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("}")
    }
}

fn validate_label(key: &str, value: &str) -> Result<(), ModelError> {
    if key.is_empty() {
        return Err(ModelError::EmptyLabelKey);
    }
    let (prefix, name) = match key.rsplit_once('/') {
        Some((p, n)) => (Some(p), n),
        None => (None, key),
    };
    if name.is_empty()
        || name.len() > MAX_LABEL_NAME_LEN
        || prefix.is_some_and(|p| p.is_empty() || p.len() > MAX_LABEL_PREFIX_LEN)
    {
        return Err(ModelError::LabelKeyTooLong(key.to_string()));
    }
    if value.is_empty() {
        return Err(ModelError::EmptyLabelValue {
            key: key.to_string(),
        });
    }
    if value.len() > MAX_LABEL_VALUE_LEN {
        return Err(ModelError::LabelValueTooLong {
            key: key.to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SelectorOperator {
    In,
    NotIn,
    Exists,
    DoesNotExist,
}

impl fmt::Display for SelectorOperator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl FromStr for SelectorOperator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "In" => Ok(SelectorOperator::In),
            "NotIn" => Ok(SelectorOperator::NotIn),
            "Exists" => Ok(SelectorOperator::Exists),
            "DoesNotExist" => Ok(SelectorOperator::DoesNotExist),
            other => Err(format!("unknown selector operator `{other}`")),
        }
    }
}

/// One `matchExpressions` entry.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct LabelRequirement {
    key: String,
    operator: SelectorOperator,
    values: BTreeSet<String>,
}

impl LabelRequirement {
    pub fn new<I, S>(key: &str, operator: SelectorOperator, values: I) -> Result<Self, ModelError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let values: BTreeSet<String> = values.into_iter().map(Into::into).collect();
        let invalid = |reason| ModelError::InvalidRequirement {
            key: key.to_string(),
            operator,
            reason,
        };
        if key.is_empty() {
            return Err(ModelError::EmptyLabelKey);
        }
        match operator {
            SelectorOperator::In | SelectorOperator::NotIn if values.is_empty() => {
                Err(invalid("requires at least one value"))
            }
            SelectorOperator::Exists | SelectorOperator::DoesNotExist if !values.is_empty() => {
                Err(invalid("must not carry values"))
            }
            _ => Ok(LabelRequirement {
                key: key.to_string(),
                operator,
                values,
            }),
        }
    }

    pub fn key(&self) -> &str {
        &self.key
    }

    pub fn operator(&self) -> SelectorOperator {
        self.operator
    }

    pub fn values(&self) -> &BTreeSet<String> {
        &self.values
    }
}

/// A label selector that keeps "absent" and "present but empty" apart.
///
/// An absent selector selects nothing (a Service without `selector`), while an
/// empty present selector selects everything (`podSelector: {}`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum LabelSelector {
    Absent,
    Present {
        match_labels: LabelSet,
        match_expressions: Vec<LabelRequirement>,
    },
}

impl LabelSelector {
    pub fn absent() -> Self {
        LabelSelector::Absent
    }

    /// Present selector with no terms: matches every label set.
    pub fn everything() -> Self {
        LabelSelector::Present {
            match_labels: LabelSet::new(),
            match_expressions: Vec::new(),
        }
    }

    pub fn equality(labels: LabelSet) -> Self {
        LabelSelector::Present {
            match_labels: labels,
            match_expressions: Vec::new(),
        }
    }

    pub fn with_expressions(labels: LabelSet, mut expressions: Vec<LabelRequirement>) -> Self {
        expressions.sort();
        expressions.dedup();
        LabelSelector::Present {
            match_labels: labels,
            match_expressions: expressions,
        }
    }

    pub fn is_present(&self) -> bool {
        matches!(self, LabelSelector::Present { .. })
    }

    pub fn is_equality_only(&self) -> bool {
        match self {
            LabelSelector::Absent => true,
            LabelSelector::Present {
                match_expressions, ..
            } => match_expressions.is_empty(),
        }
    }
}

impl fmt::Display for LabelSelector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelSelector::Absent => f.write_str("<none>"),
            LabelSelector::Present {
                match_labels,
                match_expressions,
            } => {
                let mut parts: Vec<String> =
                    match_labels.iter().map(|(k, v)| format!("{k}={v}")).collect();
                for e in match_expressions {
                    let vals: Vec<&str> = e.values.iter().map(String::as_str).collect();
                    parts.push(match e.operator {
                        SelectorOperator::In => format!("{} in ({})", e.key, vals.join(",")),
                        SelectorOperator::NotIn => format!("{} notin ({})", e.key, vals.join(",")),
                        SelectorOperator::Exists => e.key.clone(),
                        SelectorOperator::DoesNotExist => format!("!{}", e.key),
                    });
                }
                write!(f, "{{{}}}", parts.join(", "))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortDecl {
    pub number: u16,
    pub protocol: Protocol,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ContainerSpec {
    pub name: String,
    pub image: String,
    pub declared_ports: Vec<PortDecl>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WorkloadKind {
    Pod,
    Deployment,
    StatefulSet,
    DaemonSet,
    ReplicaSet,
    Job,
    CronJob,
}

impl WorkloadKind {
    pub const ALL: [WorkloadKind; 7] = [
        WorkloadKind::Pod,
        WorkloadKind::Deployment,
        WorkloadKind::StatefulSet,
        WorkloadKind::DaemonSet,
        WorkloadKind::ReplicaSet,
        WorkloadKind::Job,
        WorkloadKind::CronJob,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WorkloadKind::Pod => "Pod",
            WorkloadKind::Deployment => "Deployment",
            WorkloadKind::StatefulSet => "StatefulSet",
            WorkloadKind::DaemonSet => "DaemonSet",
            WorkloadKind::ReplicaSet => "ReplicaSet",
            WorkloadKind::Job => "Job",
            WorkloadKind::CronJob => "CronJob",
        }
    }

    /// Whether the kind runs continuously enough to be observed in a snapshot.
    pub fn is_long_running(self) -> bool {
        !matches!(self, WorkloadKind::CronJob)
    }
}

impl fmt::Display for WorkloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WorkloadKind {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WorkloadKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| ModelError::UnknownWorkloadKind(s.to_string()))
    }
}

/// Identity of a compute unit. Field order gives the canonical sort order
/// (kind, namespace, name) within one application.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct UnitId {
    pub application_id: String,
    pub kind: WorkloadKind,
    pub namespace: String,
    pub name: String,
}

impl fmt::Display for UnitId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.application_id, self.namespace, self.kind, self.name
        )
    }
}

/// Identity of a namespaced, non-workload object (Service, NetworkPolicy).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectId {
    pub application_id: String,
    pub namespace: String,
    pub name: String,
}

impl ObjectId {
    pub fn new(application_id: &str, namespace: &str, name: &str) -> Self {
        ObjectId {
            application_id: application_id.to_string(),
            namespace: namespace.to_string(),
            name: name.to_string(),
        }
    }
}

impl fmt::Display for ObjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.application_id, self.namespace, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ComputeUnit {
    pub id: UnitId,
    /// Labels of the pod template, not of the workload object.
    pub pod_labels: LabelSet,
    pub containers: Vec<ContainerSpec>,
    pub host_network: bool,
    pub replicas: u32,
}

impl ComputeUnit {
    pub fn declared_ports(&self) -> impl Iterator<Item = &PortDecl> {
        self.containers.iter().flat_map(|c| c.declared_ports.iter())
    }

    pub fn declares(&self, protocol: Protocol, port: u16) -> bool {
        self.declared_ports()
            .any(|p| p.protocol == protocol && p.number == port)
    }

    pub fn port_named(&self, name: &str) -> Option<&PortDecl> {
        self.declared_ports()
            .find(|p| p.name.as_deref() == Some(name))
    }

    pub fn namespace(&self) -> &str {
        &self.id.namespace
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TargetPort {
    Number(u16),
    Name(String),
}

impl fmt::Display for TargetPort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetPort::Number(n) => write!(f, "{n}"),
            TargetPort::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServicePort {
    pub port: u16,
    pub target: TargetPort,
    pub protocol: Protocol,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ServiceType {
    ClusterIP,
    NodePort,
    LoadBalancer,
    ExternalName,
}

impl FromStr for ServiceType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ClusterIP" => Ok(ServiceType::ClusterIP),
            "NodePort" => Ok(ServiceType::NodePort),
            "LoadBalancer" => Ok(ServiceType::LoadBalancer),
            "ExternalName" => Ok(ServiceType::ExternalName),
            other => Err(format!("unknown service type `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ServiceSpec {
    pub id: ObjectId,
    pub selector: LabelSelector,
    pub ports: Vec<ServicePort>,
    pub headless: bool,
    pub service_type: ServiceType,
}

/// Outcome of resolving a service `targetPort` against one selected unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResolvedPort {
    Port(u16),
    Unresolved,
}

/// Resolves numeric or named `targetPort` values against a unit's containers.
pub fn resolve_target_port(service_port: &ServicePort, unit: &ComputeUnit) -> ResolvedPort {
    match &service_port.target {
        TargetPort::Number(n) => ResolvedPort::Port(*n),
        TargetPort::Name(name) => unit
            .port_named(name)
            .map_or(ResolvedPort::Unresolved, |p| ResolvedPort::Port(p.number)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum PolicyType {
    Ingress,
    Egress,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PolicyPeer {
    /// `podSelector` and/or `namespaceSelector`. At least one is set.
    Pods {
        pod_selector: Option<LabelSelector>,
        namespace_selector: Option<LabelSelector>,
    },
    IpBlock {
        cidr: String,
        except: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(untagged)]
pub enum PolicyPortValue {
    Number(u16),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PolicyPort {
    pub protocol: Protocol,
    /// `None` means every port of `protocol`.
    pub port: Option<PolicyPortValue>,
    /// Inclusive upper bound; only valid with a numeric `port`.
    pub end_port: Option<u16>,
}

/// An ingress or egress rule. Empty `peers` admits every peer; empty `ports`
/// admits every port.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct PolicyRule {
    pub peers: Vec<PolicyPeer>,
    pub ports: Vec<PolicyPort>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct NetworkPolicySpec {
    pub id: ObjectId,
    pub pod_selector: LabelSelector,
    pub policy_types: BTreeSet<PolicyType>,
    pub ingress_rules: Vec<PolicyRule>,
    pub egress_rules: Vec<PolicyRule>,
}

impl NetworkPolicySpec {
    pub fn governs(&self, policy_type: PolicyType) -> bool {
        self.policy_types.contains(&policy_type)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApplicationBundle {
    pub application_id: String,
    pub namespace: String,
    pub compute_units: Vec<ComputeUnit>,
    pub services: Vec<ServiceSpec>,
    pub policies: Vec<NetworkPolicySpec>,
    pub policy_templates_present_but_disabled: bool,
    /// `Kind/name` of documents that were parsed but not analyzed.
    pub unanalyzed: Vec<String>,
}

impl ApplicationBundle {
    pub fn unit(&self, id: &UnitId) -> Option<&ComputeUnit> {
        self.compute_units.iter().find(|u| &u.id == id)
    }

    /// Sets the disabled-policy flag from a render made with the chart's
    /// network-policy switch turned on.
    pub fn with_policy_probe(mut self, probe_policy_count: usize) -> Self {
        self.policy_templates_present_but_disabled =
            self.policies.is_empty() && probe_policy_count > 0;
        self
    }
}

/// Well-known label every namespace carries.
pub const NAMESPACE_NAME_LABEL: &str = "kubernetes.io/metadata.name";

/// Labels assumed for a namespace: only the automatic name label is known
/// without a live cluster.
pub fn namespace_labels(namespace: &str) -> LabelSet {
    LabelSet(BTreeMap::from([(
        NAMESPACE_NAME_LABEL.to_string(),
        namespace.to_string(),
    )]))
}
