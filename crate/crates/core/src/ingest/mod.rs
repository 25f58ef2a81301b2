//! Manifest ingestion: multi-document YAML parsing, typed validation of the
//! analyzed kinds, chart rendering, and normalization into
//! [`ApplicationBundle`]s.

use std::collections::{BTreeMap, BTreeSet};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_yaml::Value;
use thiserror::Error;

use crate::model::{
    ApplicationBundle, ComputeUnit, ContainerSpec, LabelRequirement, LabelSelector, LabelSet,
    ModelError, NetworkPolicySpec, ObjectId, PolicyPeer, PolicyPort, PolicyPortValue, PolicyRule,
    PolicyType, PortDecl, ServicePort, ServiceSpec, ServiceType, TargetPort, UnitId, WorkloadKind,
};

mod k8s;
mod render;
mod write;

pub use render::{parse_override, ChartRenderer, RenderError, DEFAULT_NETPOL_ENABLE_KEY};
pub use write::{bundle_to_resources, serialize_manifests};

pub const DEFAULT_NAMESPACE: &str = "default";

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("document {document}: YAML syntax error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Syntax {
        document: usize,
        line: Option<usize>,
        message: String,
    },
    #[error("document {document} ({kind} `{name}`): invalid `{path}`: {message}")]
    Validation {
        document: usize,
        kind: String,
        name: String,
        path: String,
        message: String,
    },
    #[error("duplicate {kind} `{namespace}/{name}` in application `{application_id}`")]
    DuplicateResource {
        application_id: String,
        kind: String,
        namespace: String,
        name: String,
    },
    #[error(transparent)]
    Render(#[from] RenderError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectMeta {
    pub name: String,
    pub namespace: Option<String>,
    pub labels: LabelSet,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkloadContent {
    pub kind: WorkloadKind,
    pub pod_labels: LabelSet,
    pub containers: Vec<ContainerSpec>,
    pub host_network: bool,
    pub replicas: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceContent {
    pub selector: LabelSelector,
    pub ports: Vec<ServicePort>,
    pub headless: bool,
    pub service_type: ServiceType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyContent {
    pub pod_selector: LabelSelector,
    pub policy_types: BTreeSet<PolicyType>,
    pub ingress_rules: Vec<PolicyRule>,
    pub egress_rules: Vec<PolicyRule>,
}

/// Typed view of the fields the analyzer consumes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ResourceContent {
    Workload(WorkloadContent),
    Service(ServiceContent),
    NetworkPolicy(PolicyContent),
    /// Kinds the analyzer does not look at (ConfigMap, CRDs, ...).
    Unanalyzed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawResource {
    pub api_version: String,
    pub kind: String,
    pub metadata: ObjectMeta,
    pub content: ResourceContent,
    /// The whole document as parsed.
    pub body: Value,
    /// 1-based position in the stream it came from.
    pub document_index: usize,
}

impl RawResource {
    pub fn is_analyzed(&self) -> bool {
        !matches!(self.content, ResourceContent::Unanalyzed)
    }

    pub fn namespace_or_default(&self) -> &str {
        self.metadata.namespace.as_deref().unwrap_or(DEFAULT_NAMESPACE)
    }
}

/// Parses a multi-document manifest stream. Fails on the first malformed
/// document; empty documents (e.g. comment-only Helm sources) are skipped.
pub fn parse_manifests(text: &str) -> Result<Vec<RawResource>, IngestError> {
    let mut out = Vec::new();
    for (i, doc) in serde_yaml::Deserializer::from_str(text).enumerate() {
        let document = i + 1;
        let value = Value::deserialize(doc).map_err(|e| IngestError::Syntax {
            document,
            line: e.location().map(|l| l.line()),
            message: e.to_string(),
        })?;
        if value.is_null() {
            continue;
        }
        out.push(parse_document(value, document)?);
    }
    Ok(out)
}

struct DocCtx<'a> {
    document: usize,
    kind: &'a str,
    name: &'a str,
}

impl DocCtx<'_> {
    fn invalid(&self, path: impl Into<String>, message: impl Into<String>) -> IngestError {
        IngestError::Validation {
            document: self.document,
            kind: self.kind.to_string(),
            name: self.name.to_string(),
            path: path.into(),
            message: message.into(),
        }
    }

    fn decode<T: DeserializeOwned>(&self, value: &Value) -> Result<T, IngestError> {
        serde_path_to_error::deserialize(value.clone()).map_err(|err| {
            let mut path = err.path().to_string();
            let message = err.inner().to_string();
            // serde reports missing fields on the parent; name the field itself
            if let Some(field) = message
                .strip_prefix("missing field `")
                .and_then(|rest| rest.split('`').next())
            {
                path = if path == "." {
                    field.to_string()
                } else {
                    format!("{path}.{field}")
                };
            }
            self.invalid(path, strip_location(&message))
        })
    }
}

fn strip_location(message: &str) -> String {
    match message.find(" at line ") {
        Some(idx) => message[..idx].to_string(),
        None => message.to_string(),
    }
}

fn parse_document(body: Value, document: usize) -> Result<RawResource, IngestError> {
    let header_ctx = DocCtx {
        document,
        kind: "<unknown>",
        name: "<unknown>",
    };
    if !body.is_mapping() {
        return Err(header_ctx.invalid(".", "document is not a mapping"));
    }
    let header: k8s::Header = header_ctx.decode(&body)?;
    let kind = header
        .kind
        .filter(|k| !k.is_empty())
        .ok_or_else(|| header_ctx.invalid("kind", "missing or empty"))?;
    let meta = header.metadata;
    let name = meta
        .as_ref()
        .and_then(|m| m.name.clone())
        .filter(|n| !n.is_empty())
        .ok_or_else(|| DocCtx { kind: &kind, ..header_ctx }.invalid("metadata.name", "missing or empty"))?;
    let metadata = ObjectMeta {
        name,
        namespace: meta
            .as_ref()
            .and_then(|m| m.namespace.clone())
            .filter(|n| !n.is_empty()),
        labels: meta.and_then(|m| m.labels).unwrap_or_default(),
    };
    let ctx = DocCtx {
        document,
        kind: &kind,
        name: &metadata.name,
    };
    let content = match kind.as_str() {
        "Pod" => {
            let doc: k8s::PodDoc = ctx.decode(&body)?;
            ResourceContent::Workload(workload_content(
                &ctx,
                WorkloadKind::Pod,
                metadata.labels.clone(),
                doc.spec,
                1,
            )?)
        }
        "Deployment" | "StatefulSet" | "DaemonSet" | "ReplicaSet" | "Job" => {
            let wk: WorkloadKind = kind.parse().expect("listed kinds parse");
            let doc: k8s::WorkloadDoc = ctx.decode(&body)?;
            ResourceContent::Workload(template_content(&ctx, wk, doc.spec)?)
        }
        "CronJob" => {
            let doc: k8s::CronJobDoc = ctx.decode(&body)?;
            ResourceContent::Workload(template_content(
                &ctx,
                WorkloadKind::CronJob,
                doc.spec.job_template.spec,
            )?)
        }
        "Service" => ResourceContent::Service(service_content(&ctx, &body)?),
        "NetworkPolicy" => ResourceContent::NetworkPolicy(policy_content(&ctx, &body)?),
        _ => ResourceContent::Unanalyzed,
    };
    Ok(RawResource {
        api_version: header.api_version.unwrap_or_default(),
        kind: kind.clone(),
        metadata,
        content,
        body,
        document_index: document,
    })
}

fn template_content(
    ctx: &DocCtx<'_>,
    kind: WorkloadKind,
    spec: k8s::WorkloadSpec,
) -> Result<WorkloadContent, IngestError> {
    let replicas = match (kind, spec.replicas) {
        (_, Some(n)) if n < 0 => return Err(ctx.invalid("spec.replicas", "must not be negative")),
        (WorkloadKind::Deployment | WorkloadKind::StatefulSet | WorkloadKind::ReplicaSet, Some(n)) => {
            u32::try_from(n).map_err(|_| ctx.invalid("spec.replicas", "too large"))?
        }
        _ => 1,
    };
    let labels = spec
        .template
        .metadata
        .and_then(|m| m.labels)
        .unwrap_or_default();
    workload_content(ctx, kind, labels, spec.template.spec, replicas)
}

fn workload_content(
    ctx: &DocCtx<'_>,
    kind: WorkloadKind,
    pod_labels: LabelSet,
    spec: k8s::PodSpec,
    replicas: u32,
) -> Result<WorkloadContent, IngestError> {
    let mut containers = Vec::with_capacity(spec.containers.len());
    let mut container_names = BTreeSet::new();
    for (ci, c) in spec.containers.into_iter().enumerate() {
        if !container_names.insert(c.name.clone()) {
            return Err(ctx.invalid(
                format!("spec.containers[{ci}].name"),
                format!("duplicate container name `{}`", c.name),
            ));
        }
        let mut port_names = BTreeSet::new();
        let mut declared_ports = Vec::new();
        for (pi, p) in c.ports.unwrap_or_default().into_iter().enumerate() {
            if let Some(n) = &p.name {
                if !port_names.insert(n.clone()) {
                    return Err(ctx.invalid(
                        format!("spec.containers[{ci}].ports[{pi}].name"),
                        format!("duplicate port name `{n}`"),
                    ));
                }
            }
            declared_ports.push(PortDecl {
                number: p.container_port.0,
                protocol: p.protocol.unwrap_or_default(),
                name: p.name,
            });
        }
        containers.push(ContainerSpec {
            name: c.name,
            image: c.image.unwrap_or_default(),
            declared_ports,
        });
    }
    Ok(WorkloadContent {
        kind,
        pod_labels,
        containers,
        host_network: spec.host_network.unwrap_or(false),
        replicas,
    })
}

fn service_content(ctx: &DocCtx<'_>, body: &Value) -> Result<ServiceContent, IngestError> {
    let doc: k8s::ServiceDoc = ctx.decode(body)?;
    let spec = doc.spec;
    let service_type: ServiceType = match &spec.service_type {
        Some(t) => t.parse().map_err(|e: String| ctx.invalid("spec.type", e))?,
        None => ServiceType::ClusterIP,
    };
    let selector = match spec.selector {
        None | Some(Value::Null) => LabelSelector::Absent,
        Some(Value::Mapping(m))
            if m.contains_key("matchExpressions") || m.contains_key("matchLabels") =>
        {
            return Err(ctx.invalid(
                "spec.selector",
                "services only support equality-based selectors",
            ))
        }
        Some(v) => {
            let map: k8s::ServiceSelector = serde_yaml::from_value(v)
                .map_err(|e| ctx.invalid("spec.selector", strip_location(&e.to_string())))?;
            let labels =
                LabelSet::from_map(map).map_err(|e| ctx.invalid("spec.selector", e.to_string()))?;
            // Kubernetes treats an empty service selector as no selector.
            if labels.is_empty() {
                LabelSelector::Absent
            } else {
                LabelSelector::equality(labels)
            }
        }
    };
    let raw_ports = spec.ports.unwrap_or_default();
    if raw_ports.is_empty() && service_type != ServiceType::ExternalName {
        return Err(ctx.invalid("spec.ports", "a service needs at least one port"));
    }
    let mut ports = Vec::with_capacity(raw_ports.len());
    for (i, p) in raw_ports.into_iter().enumerate() {
        let target = match p.target_port {
            None => TargetPort::Number(p.port.0),
            Some(t) => int_or_name(t)
                .map_err(|e| ctx.invalid(format!("spec.ports[{i}].targetPort"), e.to_string()))?
                .into_target(),
        };
        ports.push(ServicePort {
            port: p.port.0,
            target,
            protocol: p.protocol.unwrap_or_default(),
            name: p.name,
        });
    }
    let headless = spec.cluster_ip.as_deref() == Some("None");
    if headless && service_type != ServiceType::ClusterIP {
        return Err(ctx.invalid(
            "spec.clusterIP",
            "headless services must be of type ClusterIP",
        ));
    }
    Ok(ServiceContent {
        selector,
        ports,
        headless,
        service_type,
    })
}

enum IntOrName {
    Int(u16),
    Name(String),
}

impl IntOrName {
    fn into_target(self) -> TargetPort {
        match self {
            IntOrName::Int(n) => TargetPort::Number(n),
            IntOrName::Name(s) => TargetPort::Name(s),
        }
    }

    fn into_policy(self) -> PolicyPortValue {
        match self {
            IntOrName::Int(n) => PolicyPortValue::Number(n),
            IntOrName::Name(s) => PolicyPortValue::Name(s),
        }
    }
}

/// Numeric strings are read as numbers, anything else as a port name.
fn int_or_name(value: k8s::IntOrString) -> Result<IntOrName, ModelError> {
    match value {
        k8s::IntOrString::Int(n) => crate::model::port_number(n).map(IntOrName::Int),
        k8s::IntOrString::Str(s) => match s.trim().parse::<i64>() {
            Ok(n) => crate::model::port_number(n).map(IntOrName::Int),
            Err(_) => Ok(IntOrName::Name(s)),
        },
    }
}

fn policy_content(ctx: &DocCtx<'_>, body: &Value) -> Result<PolicyContent, IngestError> {
    let has_selector = body
        .get("spec")
        .and_then(Value::as_mapping)
        .is_some_and(|m| m.contains_key("podSelector"));
    if !has_selector {
        return Err(ctx.invalid("spec.podSelector", "required field is missing"));
    }
    let doc: k8s::NetworkPolicyDoc = ctx.decode(body)?;
    let spec = doc.spec;
    let pod_selector = selector(ctx, "spec.podSelector", spec.pod_selector.unwrap_or_default())?;

    let mut ingress_rules = Vec::new();
    for (i, r) in spec.ingress.iter().flatten().enumerate() {
        ingress_rules.push(policy_rule(
            ctx,
            &format!("spec.ingress[{i}]"),
            "from",
            r.from.as_deref(),
            r.ports.as_deref(),
        )?);
    }
    let mut egress_rules = Vec::new();
    for (i, r) in spec.egress.iter().flatten().enumerate() {
        egress_rules.push(policy_rule(
            ctx,
            &format!("spec.egress[{i}]"),
            "to",
            r.to.as_deref(),
            r.ports.as_deref(),
        )?);
    }
    let policy_types: BTreeSet<PolicyType> = match spec.policy_types {
        Some(types) if !types.is_empty() => types.into_iter().collect(),
        _ => {
            let mut t = BTreeSet::from([PolicyType::Ingress]);
            if spec.egress.is_some() {
                t.insert(PolicyType::Egress);
            }
            t
        }
    };
    Ok(PolicyContent {
        pod_selector,
        policy_types,
        ingress_rules,
        egress_rules,
    })
}

fn policy_rule(
    ctx: &DocCtx<'_>,
    path: &str,
    peer_field: &str,
    peers: Option<&[k8s::Peer]>,
    ports: Option<&[k8s::PolicyPort]>,
) -> Result<PolicyRule, IngestError> {
    let mut rule = PolicyRule::default();
    for (i, p) in peers.unwrap_or_default().iter().enumerate() {
        let ppath = format!("{path}.{peer_field}[{i}]");
        let peer = match (&p.ip_block, &p.pod_selector, &p.namespace_selector) {
            (Some(block), None, None) => PolicyPeer::IpBlock {
                cidr: block.cidr.clone(),
                except: block.except.clone().unwrap_or_default(),
            },
            (Some(_), _, _) => {
                return Err(ctx.invalid(ppath, "ipBlock cannot be combined with selectors"))
            }
            (None, None, None) => {
                return Err(ctx.invalid(ppath, "peer needs podSelector, namespaceSelector or ipBlock"))
            }
            (None, pod, ns) => PolicyPeer::Pods {
                pod_selector: pod
                    .as_ref()
                    .map(|s| selector_ref(ctx, &format!("{ppath}.podSelector"), s))
                    .transpose()?,
                namespace_selector: ns
                    .as_ref()
                    .map(|s| selector_ref(ctx, &format!("{ppath}.namespaceSelector"), s))
                    .transpose()?,
            },
        };
        rule.peers.push(peer);
    }
    for (i, p) in ports.unwrap_or_default().iter().enumerate() {
        let ppath = format!("{path}.ports[{i}]");
        let port = p
            .port
            .clone()
            .map(int_or_name)
            .transpose()
            .map_err(|e| ctx.invalid(format!("{ppath}.port"), e.to_string()))?
            .map(IntOrName::into_policy);
        let end_port = p.end_port.map(|e| e.0);
        if let Some(end) = end_port {
            match port {
                Some(PolicyPortValue::Number(start)) if start <= end => {}
                _ => {
                    return Err(ctx.invalid(
                        format!("{ppath}.endPort"),
                        "endPort needs a numeric port not greater than itself",
                    ))
                }
            }
        }
        rule.ports.push(PolicyPort {
            protocol: p.protocol.unwrap_or_default(),
            port,
            end_port,
        });
    }
    Ok(rule)
}

fn selector_ref(
    ctx: &DocCtx<'_>,
    path: &str,
    raw: &k8s::Selector,
) -> Result<LabelSelector, IngestError> {
    let labels = raw.match_labels.clone().unwrap_or_default();
    let mut reqs = Vec::new();
    for (i, r) in raw.match_expressions.iter().flatten().enumerate() {
        let rpath = format!("{path}.matchExpressions[{i}]");
        let op = r
            .operator
            .parse()
            .map_err(|e: String| ctx.invalid(format!("{rpath}.operator"), e))?;
        let req = LabelRequirement::new(&r.key, op, r.values.clone().unwrap_or_default())
            .map_err(|e| ctx.invalid(rpath, e.to_string()))?;
        reqs.push(req);
    }
    Ok(LabelSelector::with_expressions(labels, reqs))
}

fn selector(ctx: &DocCtx<'_>, path: &str, raw: k8s::Selector) -> Result<LabelSelector, IngestError> {
    selector_ref(ctx, path, &raw)
}

/// Builds the typed bundle for one application.
///
/// Resources without a namespace land in `default`. Output collections are
/// sorted by id so input order never matters.
pub fn normalize(
    resources: &[RawResource],
    application_id: &str,
) -> Result<ApplicationBundle, IngestError> {
    let mut units: BTreeMap<UnitId, ComputeUnit> = BTreeMap::new();
    let mut services: BTreeMap<ObjectId, ServiceSpec> = BTreeMap::new();
    let mut policies: BTreeMap<ObjectId, NetworkPolicySpec> = BTreeMap::new();
    let mut unanalyzed = Vec::new();
    let mut namespace_counts: BTreeMap<&str, usize> = BTreeMap::new();

    let duplicate = |kind: &str, namespace: &str, name: &str| IngestError::DuplicateResource {
        application_id: application_id.to_string(),
        kind: kind.to_string(),
        namespace: namespace.to_string(),
        name: name.to_string(),
    };

    for r in resources {
        let namespace = r.namespace_or_default();
        let name = r.metadata.name.as_str();
        if r.is_analyzed() {
            *namespace_counts.entry(namespace).or_default() += 1;
        }
        match &r.content {
            ResourceContent::Workload(w) => {
                let id = UnitId {
                    application_id: application_id.to_string(),
                    kind: w.kind,
                    namespace: namespace.to_string(),
                    name: name.to_string(),
                };
                if units.contains_key(&id) {
                    return Err(duplicate(w.kind.as_str(), namespace, name));
                }
                units.insert(
                    id.clone(),
                    ComputeUnit {
                        id,
                        pod_labels: w.pod_labels.clone(),
                        containers: w.containers.clone(),
                        host_network: w.host_network,
                        replicas: w.replicas,
                    },
                );
            }
            ResourceContent::Service(s) => {
                let id = ObjectId::new(application_id, namespace, name);
                if services.contains_key(&id) {
                    return Err(duplicate("Service", namespace, name));
                }
                services.insert(
                    id.clone(),
                    ServiceSpec {
                        id,
                        selector: s.selector.clone(),
                        ports: s.ports.clone(),
                        headless: s.headless,
                        service_type: s.service_type,
                    },
                );
            }
            ResourceContent::NetworkPolicy(p) => {
                let id = ObjectId::new(application_id, namespace, name);
                if policies.contains_key(&id) {
                    return Err(duplicate("NetworkPolicy", namespace, name));
                }
                policies.insert(
                    id.clone(),
                    NetworkPolicySpec {
                        id,
                        pod_selector: p.pod_selector.clone(),
                        policy_types: p.policy_types.clone(),
                        ingress_rules: p.ingress_rules.clone(),
                        egress_rules: p.egress_rules.clone(),
                    },
                );
            }
            ResourceContent::Unanalyzed => {
                unanalyzed.push(format!("{}/{}/{}", r.kind, namespace, name));
            }
        }
    }
    unanalyzed.sort();

    // Most common namespace wins; ties go to the lexicographically first.
    let namespace = namespace_counts
        .iter()
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        .map(|(ns, _)| ns.to_string())
        .unwrap_or_else(|| DEFAULT_NAMESPACE.to_string());

    Ok(ApplicationBundle {
        application_id: application_id.to_string(),
        namespace,
        compute_units: units.into_values().collect(),
        services: services.into_values().collect(),
        policies: policies.into_values().collect(),
        policy_templates_present_but_disabled: false,
        unanalyzed,
    })
}

/// Number of NetworkPolicy documents in a stream of parsed resources.
pub fn count_policies(resources: &[RawResource]) -> usize {
    resources
        .iter()
        .filter(|r| matches!(r.content, ResourceContent::NetworkPolicy(_)))
        .count()
}
