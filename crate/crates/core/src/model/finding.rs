//! Findings: the analyzer's unit of output.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LabelSelector, LabelSet, ObjectId, PortRange, Protocol, TargetPort, UnitId};
use crate::snapshot::BindScope;

/// Misconfiguration classes, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleId {
    M1,
    M2,
    M3,
    M4A,
    M4B,
    M4C,
    M4Star,
    M5A,
    M5B,
    M5C,
    M5D,
    M6,
    M7,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Low,
    Medium,
    High,
}

impl RuleId {
    pub const ALL: [RuleId; 13] = [
        RuleId::M1,
        RuleId::M2,
        RuleId::M3,
        RuleId::M4A,
        RuleId::M4B,
        RuleId::M4C,
        RuleId::M4Star,
        RuleId::M5A,
        RuleId::M5B,
        RuleId::M5C,
        RuleId::M5D,
        RuleId::M6,
        RuleId::M7,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RuleId::M1 => "M1",
            RuleId::M2 => "M2",
            RuleId::M3 => "M3",
            RuleId::M4A => "M4A",
            RuleId::M4B => "M4B",
            RuleId::M4C => "M4C",
            RuleId::M4Star => "M4*",
            RuleId::M5A => "M5A",
            RuleId::M5B => "M5B",
            RuleId::M5C => "M5C",
            RuleId::M5D => "M5D",
            RuleId::M6 => "M6",
            RuleId::M7 => "M7",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            RuleId::M1 => "Port open on container is not declared",
            RuleId::M2 => "Container allocates dynamic ports",
            RuleId::M3 => "Port declared on container is not open",
            RuleId::M4A => "Compute unit collision",
            RuleId::M4B => "Service label collision",
            RuleId::M4C => "Compute unit subset collision",
            RuleId::M4Star => "Global label collision",
            RuleId::M5A => "Service targets unopened port",
            RuleId::M5B => "Service targets undeclared port",
            RuleId::M5C => "Headless service port is not available",
            RuleId::M5D => "Service without target",
            RuleId::M6 => "Lack of network policies",
            RuleId::M7 => "Container binds to host network",
        }
    }

    pub fn issue(self) -> &'static str {
        match self {
            RuleId::M1 => "Listening on all interfaces by default",
            RuleId::M2 => "Dynamic ports cannot be controlled",
            RuleId::M3 => "Missing checks on declared ports",
            RuleId::M4A | RuleId::M4B | RuleId::M4C | RuleId::M4Star => {
                "Missing checks on label collision"
            }
            RuleId::M5A | RuleId::M5B | RuleId::M5C | RuleId::M5D => {
                "Missing checks on declared ports and on existence of target label"
            }
            RuleId::M6 => "No isolation between containers",
            RuleId::M7 => "Network policies do not apply to host",
        }
    }

    pub fn possible_attacks(self) -> &'static [&'static str] {
        match self {
            RuleId::M1 => &["Command and control", "Sensitive port information"],
            RuleId::M2 => &["Loosened security policies"],
            RuleId::M3 => &["Data interception/spoofing", "Data exfiltration"],
            RuleId::M4A | RuleId::M4B | RuleId::M4C | RuleId::M4Star => {
                &["Man in the middle", "Server impersonation"]
            }
            RuleId::M5A => &["Data interception"],
            RuleId::M5B => &["Data spoofing"],
            RuleId::M5C => &["Denial of service"],
            RuleId::M5D => &["Bypassing security checks"],
            RuleId::M6 => &["Data interception/spoofing", "Privilege escalation"],
            RuleId::M7 => &["Bypassing network controls"],
        }
    }

    pub fn mitigation(self) -> &'static str {
        match self {
            RuleId::M1 | RuleId::M3 | RuleId::M5A | RuleId::M5B => {
                "Declare every port the container actually opens and bind services only to \
                 declared ports. In charts, check ports that only open when optional features \
                 are switched on by values."
            }
            RuleId::M2 => {
                "Configure the application to use fixed ports instead of OS-assigned ones. If \
                 the application cannot do that, document the dynamic ports for chart users so \
                 traffic-derived policies are not generated for them."
            }
            RuleId::M4A | RuleId::M4B | RuleId::M4C | RuleId::M4Star => {
                "Give each component unique labels, after working out why the components \
                 currently share them."
            }
            RuleId::M5C => {
                "Drop the port settings from the headless service; headless services do not \
                 remap ports."
            }
            RuleId::M5D => {
                "Give the service a selector that matches the pod labels of a compute unit \
                 (`kubectl get pods -l <selector>` should return pods)."
            }
            RuleId::M6 => {
                "Define or enable network policies in the chart, check that every policy selects \
                 at least one pod, and allow only the connections the application needs."
            }
            RuleId::M7 => {
                "Set hostNetwork to false once it is confirmed that nothing breaks or slows \
                 down. If the host network is truly required, audit the pod in depth."
            }
        }
    }

    /// Advisory ranking: collisions highest, unopened declared ports lowest.
    pub fn severity(self) -> Severity {
        match self {
            RuleId::M4A | RuleId::M4B | RuleId::M4C | RuleId::M4Star => Severity::High,
            RuleId::M3 => Severity::Low,
            _ => Severity::Medium,
        }
    }

    /// Rules that need runtime snapshots.
    pub fn is_runtime(self) -> bool {
        matches!(
            self,
            RuleId::M1 | RuleId::M2 | RuleId::M3 | RuleId::M5A | RuleId::M5C
        )
    }
}

impl fmt::Display for RuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_uppercase();
        RuleId::ALL
            .into_iter()
            .find(|r| r.as_str() == wanted || (wanted == "M4STAR" && *r == RuleId::M4Star))
            .ok_or_else(|| format!("unknown rule id `{s}`"))
    }
}

impl Serialize for RuleId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for RuleId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Any resource a finding can point at.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ResourceRef {
    pub application_id: String,
    pub kind: String,
    pub namespace: String,
    pub name: String,
}

impl ResourceRef {
    pub fn service(id: &ObjectId) -> Self {
        Self::object("Service", id)
    }

    pub fn network_policy(id: &ObjectId) -> Self {
        Self::object("NetworkPolicy", id)
    }

    pub fn application(application_id: &str, namespace: &str) -> Self {
        ResourceRef {
            application_id: application_id.to_string(),
            kind: "Application".to_string(),
            namespace: namespace.to_string(),
            name: application_id.to_string(),
        }
    }

    fn object(kind: &str, id: &ObjectId) -> Self {
        ResourceRef {
            application_id: id.application_id.clone(),
            kind: kind.to_string(),
            namespace: id.namespace.clone(),
            name: id.name.clone(),
        }
    }
}

impl From<&UnitId> for ResourceRef {
    fn from(id: &UnitId) -> Self {
        ResourceRef {
            application_id: id.application_id.clone(),
            kind: id.kind.to_string(),
            namespace: id.namespace.clone(),
            name: id.name.clone(),
        }
    }
}

impl fmt::Display for ResourceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}/{}/{}",
            self.application_id, self.namespace, self.kind, self.name
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PortKey {
    pub protocol: Protocol,
    pub port: u16,
}

impl fmt::Display for PortKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.port, self.protocol)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnitLabels {
    pub unit: UnitId,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyStatus {
    NoneDefined,
    AvailableButDisabled,
}

/// Rule-specific payload. Each rule always emits the same variant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    /// M1
    UndeclaredPort {
        protocol: Protocol,
        port: u16,
        bind_scope: BindScope,
        #[serde(skip_serializing_if = "Option::is_none")]
        process: Option<String>,
    },
    /// M2
    DynamicPorts {
        first_iteration: Vec<PortKey>,
        second_iteration: Vec<PortKey>,
        ephemeral_range: PortRange,
        outside_ephemeral_range: Vec<PortKey>,
    },
    /// M3
    UnopenedPort {
        protocol: Protocol,
        port: u16,
        #[serde(skip_serializing_if = "Option::is_none")]
        name: Option<String>,
    },
    /// M4A
    EqualPodLabels { labels: LabelSet },
    /// M4B
    SharedTarget {
        services: Vec<ObjectId>,
        headless_involved: bool,
    },
    /// M4C
    SubsetCollision {
        selector: LabelSelector,
        units: Vec<UnitLabels>,
    },
    /// M4*, equal pod labels across applications
    GlobalEqualLabels {
        applications: Vec<String>,
        labels: LabelSet,
    },
    /// M4*, a service selecting another application's unit
    GlobalCrossSelection {
        applications: Vec<String>,
        service: ObjectId,
        selector: LabelSelector,
        unit: UnitId,
    },
    /// M5A, M5B, M5C
    ServiceTarget {
        service_port: u16,
        protocol: Protocol,
        target: TargetPort,
        #[serde(skip_serializing_if = "Option::is_none")]
        resolved_port: Option<u16>,
        unit: UnitId,
    },
    /// M5D
    NoTarget { selector: LabelSelector },
    /// M6, application-wide
    NoPolicies { status: PolicyStatus },
    /// M6, a policy selecting nothing
    PolicySelectsNoPods {
        policy: ObjectId,
        pod_selector: LabelSelector,
    },
    /// M7
    HostNetwork {
        selecting_policies: Vec<ObjectId>,
        policies_ineffective: bool,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub rule: RuleId,
    pub severity: Severity,
    pub subjects: Vec<ResourceRef>,
    pub evidence: Evidence,
    pub message: String,
    pub mitigation_hint: String,
    pub possible_attacks: Vec<String>,
}

impl Finding {
    /// # Panics
    /// If `subjects` is empty.
    pub fn new(
        rule: RuleId,
        subjects: Vec<ResourceRef>,
        evidence: Evidence,
        message: impl Into<String>,
    ) -> Self {
        assert!(!subjects.is_empty(), "finding {rule} without subjects");
        Finding {
            rule,
            severity: rule.severity(),
            subjects,
            evidence,
            message: message.into(),
            mitigation_hint: rule.mitigation().to_string(),
            possible_attacks: rule.possible_attacks().iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Total order used for deterministic output.
    pub fn sort_key(&self) -> (RuleId, &[ResourceRef], String) {
        let evidence = serde_json::to_string(&self.evidence).unwrap_or_default();
        (self.rule, &self.subjects, evidence)
    }

    /// Ports this finding implicates on a unit, if any.
    pub fn implicated_ports(&self) -> Vec<(UnitId, PortKey)> {
        let unit = || -> Option<UnitId> {
            let s = self.subjects.first()?;
            Some(UnitId {
                application_id: s.application_id.clone(),
                kind: s.kind.parse().ok()?,
                namespace: s.namespace.clone(),
                name: s.name.clone(),
            })
        };
        match &self.evidence {
            Evidence::UndeclaredPort { protocol, port, .. }
            | Evidence::UnopenedPort { protocol, port, .. } => unit()
                .map(|u| vec![(u, PortKey { protocol: *protocol, port: *port })])
                .unwrap_or_default(),
            Evidence::DynamicPorts {
                first_iteration,
                second_iteration,
                ..
            } => match unit() {
                Some(u) => first_iteration
                    .iter()
                    .chain(second_iteration)
                    .map(|k| (u.clone(), *k))
                    .collect(),
                None => Vec::new(),
            },
            Evidence::ServiceTarget {
                protocol,
                resolved_port: Some(port),
                unit,
                ..
            } => vec![(unit.clone(), PortKey { protocol: *protocol, port: *port })],
            _ => Vec::new(),
        }
    }
}

pub fn sort_findings(findings: &mut [Finding]) {
    findings.sort_by_cached_key(|f| {
        let (r, s, e) = f.sort_key();
        (r, s.to_vec(), e)
    });
}
