// Wire-level subset of the Kubernetes object schema. Only the fields the
// analyzer reads are modeled; everything else is ignored by serde.

use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer};

use crate::model::{port_number, LabelSet, PolicyType, Protocol};

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct Header {
    pub api_version: Option<String>,
    pub kind: Option<String>,
    pub metadata: Option<Metadata>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct Metadata {
    pub name: Option<String>,
    pub namespace: Option<String>,
    pub labels: Option<LabelSet>,
}

/// Port number accepting integers and numeric strings, range-checked.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PortNum(pub u16);

impl<'de> Deserialize<'de> for PortNum {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match IntOrString::deserialize(d)? {
            IntOrString::Int(n) => port_number(n).map(PortNum).map_err(serde::de::Error::custom),
            IntOrString::Str(s) => s
                .trim()
                .parse::<i64>()
                .map_err(|_| serde::de::Error::custom(format!("`{s}` is not a port number")))
                .and_then(|n| port_number(n).map_err(serde::de::Error::custom))
                .map(PortNum),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub(crate) enum IntOrString {
    Int(i64),
    Str(String),
}

#[derive(Debug, Deserialize)]
pub(crate) struct PodDoc {
    pub spec: PodSpec,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct PodSpec {
    pub containers: Vec<Container>,
    #[serde(default)]
    pub host_network: Option<bool>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct Container {
    pub name: String,
    #[serde(default)]
    pub image: Option<String>,
    #[serde(default)]
    pub ports: Option<Vec<ContainerPort>>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct ContainerPort {
    pub container_port: PortNum,
    #[serde(default)]
    pub protocol: Option<Protocol>,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct PodTemplate {
    #[serde(default)]
    pub metadata: Option<TemplateMetadata>,
    pub spec: PodSpec,
}

#[derive(Debug, Deserialize)]
pub(crate) struct TemplateMetadata {
    #[serde(default)]
    pub labels: Option<LabelSet>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct WorkloadDoc {
    pub spec: WorkloadSpec,
}

#[derive(Debug, Deserialize)]
pub(crate) struct WorkloadSpec {
    #[serde(default)]
    pub replicas: Option<i64>,
    pub template: PodTemplate,
}

#[derive(Debug, Deserialize)]
pub(crate) struct CronJobDoc {
    pub spec: CronJobSpec,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct CronJobSpec {
    pub job_template: JobTemplate,
}

#[derive(Debug, Deserialize)]
pub(crate) struct JobTemplate {
    pub spec: WorkloadSpec,
}

#[derive(Debug, Deserialize)]
pub(crate) struct ServiceDoc {
    pub spec: ServiceSpec,
}

#[derive(Debug, Deserialize)]
pub(crate) struct ServiceSpec {
    #[serde(default)]
    pub selector: Option<serde_yaml::Value>,
    #[serde(default)]
    pub ports: Option<Vec<ServicePort>>,
    #[serde(default, rename = "clusterIP")]
    pub cluster_ip: Option<String>,
    #[serde(default, rename = "type")]
    pub service_type: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct ServicePort {
    pub port: PortNum,
    #[serde(default)]
    pub target_port: Option<IntOrString>,
    #[serde(default)]
    pub protocol: Option<Protocol>,
    #[serde(default)]
    pub name: Option<String>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct NetworkPolicyDoc {
    pub spec: NetworkPolicySpec,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct NetworkPolicySpec {
    #[serde(default)]
    pub pod_selector: Option<Selector>,
    #[serde(default)]
    pub policy_types: Option<Vec<PolicyType>>,
    #[serde(default)]
    pub ingress: Option<Vec<IngressRule>>,
    #[serde(default)]
    pub egress: Option<Vec<EgressRule>>,
}

#[derive(Debug, Default, Deserialize)]
pub(crate) struct IngressRule {
    #[serde(default)]
    pub from: Option<Vec<Peer>>,
    #[serde(default)]
    pub ports: Option<Vec<PolicyPort>>,
}

#[derive(Debug, Default, Deserialize)]
pub(crate) struct EgressRule {
    #[serde(default)]
    pub to: Option<Vec<Peer>>,
    #[serde(default)]
    pub ports: Option<Vec<PolicyPort>>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct Peer {
    #[serde(default)]
    pub pod_selector: Option<Selector>,
    #[serde(default)]
    pub namespace_selector: Option<Selector>,
    #[serde(default)]
    pub ip_block: Option<IpBlock>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct IpBlock {
    pub cidr: String,
    #[serde(default)]
    pub except: Option<Vec<String>>,
}

#[derive(Debug, Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct PolicyPort {
    #[serde(default)]
    pub protocol: Option<Protocol>,
    #[serde(default)]
    pub port: Option<IntOrString>,
    #[serde(default)]
    pub end_port: Option<PortNum>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(rename_all = "camelCase")]
pub(crate) struct Selector {
    #[serde(default)]
    pub match_labels: Option<LabelSet>,
    #[serde(default)]
    pub match_expressions: Option<Vec<Requirement>>,
}

#[derive(Debug, Deserialize)]
pub(crate) struct Requirement {
    pub key: String,
    pub operator: String,
    #[serde(default)]
    pub values: Option<Vec<String>>,
}

/// Service selectors are a plain string map.
pub(crate) type ServiceSelector = BTreeMap<String, String>;
