// Canonical manifest writer for the analyzed field subset.

use serde_json::{json, Map, Value as Json};
use serde_yaml::Value;

use super::{
    ObjectMeta, PolicyContent, RawResource, ResourceContent, ServiceContent, WorkloadContent,
};
use crate::model::{
    ApplicationBundle, LabelSelector, LabelSet, PolicyPeer, PolicyPortValue, PolicyRule,
    PolicyType, ServiceType, TargetPort, WorkloadKind,
};

/// Writes resources back as a multi-document stream. Analyzed kinds are
/// emitted canonically from their typed content; other kinds verbatim.
pub fn serialize_manifests(resources: &[RawResource]) -> String {
    let mut out = String::new();
    for r in resources {
        out.push_str("---\n");
        let value = match &r.content {
            ResourceContent::Unanalyzed => r.body.clone(),
            _ => serde_yaml::to_value(resource_json(r)).expect("JSON converts to YAML"),
        };
        out.push_str(&serde_yaml::to_string(&value).expect("YAML value serializes"));
    }
    out
}

/// Inverse of `normalize` on the analyzed subset.
pub fn bundle_to_resources(bundle: &ApplicationBundle) -> Vec<RawResource> {
    let mut out = Vec::new();
    let meta = |name: &str, namespace: &str| ObjectMeta {
        name: name.to_string(),
        namespace: Some(namespace.to_string()),
        labels: LabelSet::new(),
    };
    for u in &bundle.compute_units {
        out.push(RawResource {
            api_version: api_version(u.id.kind).to_string(),
            kind: u.id.kind.to_string(),
            metadata: ObjectMeta {
                // a bare Pod carries its selectable labels on the object itself
                labels: if u.id.kind == WorkloadKind::Pod {
                    u.pod_labels.clone()
                } else {
                    LabelSet::new()
                },
                ..meta(&u.id.name, &u.id.namespace)
            },
            content: ResourceContent::Workload(WorkloadContent {
                kind: u.id.kind,
                pod_labels: u.pod_labels.clone(),
                containers: u.containers.clone(),
                host_network: u.host_network,
                replicas: u.replicas,
            }),
            body: Value::Null,
            document_index: 0,
        });
    }
    for s in &bundle.services {
        out.push(RawResource {
            api_version: "v1".into(),
            kind: "Service".into(),
            metadata: meta(&s.id.name, &s.id.namespace),
            content: ResourceContent::Service(ServiceContent {
                selector: s.selector.clone(),
                ports: s.ports.clone(),
                headless: s.headless,
                service_type: s.service_type,
            }),
            body: Value::Null,
            document_index: 0,
        });
    }
    for p in &bundle.policies {
        out.push(RawResource {
            api_version: "networking.k8s.io/v1".into(),
            kind: "NetworkPolicy".into(),
            metadata: meta(&p.id.name, &p.id.namespace),
            content: ResourceContent::NetworkPolicy(PolicyContent {
                pod_selector: p.pod_selector.clone(),
                policy_types: p.policy_types.clone(),
                ingress_rules: p.ingress_rules.clone(),
                egress_rules: p.egress_rules.clone(),
            }),
            body: Value::Null,
            document_index: 0,
        });
    }
    for (i, entry) in bundle.unanalyzed.iter().enumerate() {
        let mut parts = entry.splitn(3, '/');
        let (kind, ns, name) = (
            parts.next().unwrap_or("Unknown"),
            parts.next().unwrap_or("default"),
            parts.next().unwrap_or("unnamed"),
        );
        let body = json!({"apiVersion": "v1", "kind": kind, "metadata": {"name": name, "namespace": ns}});
        out.push(RawResource {
            api_version: "v1".into(),
            kind: kind.to_string(),
            metadata: meta(name, ns),
            content: ResourceContent::Unanalyzed,
            body: serde_yaml::to_value(body).expect("JSON converts to YAML"),
            document_index: i,
        });
    }
    out
}

fn api_version(kind: WorkloadKind) -> &'static str {
    match kind {
        WorkloadKind::Pod => "v1",
        WorkloadKind::Job | WorkloadKind::CronJob => "batch/v1",
        _ => "apps/v1",
    }
}

fn labels_json(labels: &LabelSet) -> Json {
    Json::Object(
        labels
            .iter()
            .map(|(k, v)| (k.to_string(), Json::String(v.to_string())))
            .collect(),
    )
}

fn selector_json(sel: &LabelSelector) -> Json {
    match sel {
        LabelSelector::Absent => Json::Null,
        LabelSelector::Present {
            match_labels,
            match_expressions,
        } => {
            let mut m = Map::new();
            if !match_labels.is_empty() {
                m.insert("matchLabels".into(), labels_json(match_labels));
            }
            if !match_expressions.is_empty() {
                let exprs: Vec<Json> = match_expressions
                    .iter()
                    .map(|e| {
                        let mut o = Map::new();
                        o.insert("key".into(), json!(e.key()));
                        o.insert("operator".into(), json!(e.operator().to_string()));
                        if !e.values().is_empty() {
                            o.insert("values".into(), json!(e.values()));
                        }
                        Json::Object(o)
                    })
                    .collect();
                m.insert("matchExpressions".into(), Json::Array(exprs));
            }
            Json::Object(m)
        }
    }
}

fn metadata_json(meta: &ObjectMeta) -> Json {
    let mut m = Map::new();
    m.insert("name".into(), json!(meta.name));
    if let Some(ns) = &meta.namespace {
        m.insert("namespace".into(), json!(ns));
    }
    if !meta.labels.is_empty() {
        m.insert("labels".into(), labels_json(&meta.labels));
    }
    Json::Object(m)
}

fn resource_json(r: &RawResource) -> Json {
    let spec = match &r.content {
        ResourceContent::Workload(w) => workload_json(w),
        ResourceContent::Service(s) => service_json(s),
        ResourceContent::NetworkPolicy(p) => policy_json(p),
        ResourceContent::Unanalyzed => Json::Null,
    };
    json!({
        "apiVersion": r.api_version,
        "kind": r.kind,
        "metadata": metadata_json(&r.metadata),
        "spec": spec,
    })
}

fn pod_spec_json(w: &WorkloadContent) -> Json {
    let containers: Vec<Json> = w
        .containers
        .iter()
        .map(|c| {
            let ports: Vec<Json> = c
                .declared_ports
                .iter()
                .map(|p| {
                    let mut o = Map::new();
                    o.insert("containerPort".into(), json!(p.number));
                    o.insert("protocol".into(), json!(p.protocol.as_str()));
                    if let Some(n) = &p.name {
                        o.insert("name".into(), json!(n));
                    }
                    Json::Object(o)
                })
                .collect();
            json!({"name": c.name, "image": c.image, "ports": ports})
        })
        .collect();
    json!({"hostNetwork": w.host_network, "containers": containers})
}

fn workload_json(w: &WorkloadContent) -> Json {
    let template = json!({
        "metadata": {"labels": labels_json(&w.pod_labels)},
        "spec": pod_spec_json(w),
    });
    match w.kind {
        WorkloadKind::Pod => pod_spec_json(w),
        WorkloadKind::CronJob => json!({
            "schedule": "@hourly",
            "jobTemplate": {"spec": {"template": template}},
        }),
        WorkloadKind::Deployment | WorkloadKind::StatefulSet | WorkloadKind::ReplicaSet => {
            json!({"replicas": w.replicas, "template": template})
        }
        WorkloadKind::DaemonSet | WorkloadKind::Job => json!({"template": template}),
    }
}

fn service_json(s: &ServiceContent) -> Json {
    let ports: Vec<Json> = s
        .ports
        .iter()
        .map(|p| {
            let mut o = Map::new();
            o.insert("port".into(), json!(p.port));
            o.insert(
                "targetPort".into(),
                match &p.target {
                    TargetPort::Number(n) => json!(n),
                    TargetPort::Name(n) => json!(n),
                },
            );
            o.insert("protocol".into(), json!(p.protocol.as_str()));
            if let Some(n) = &p.name {
                o.insert("name".into(), json!(n));
            }
            Json::Object(o)
        })
        .collect();
    let mut spec = Map::new();
    spec.insert("type".into(), json!(service_type(s.service_type)));
    if s.headless {
        spec.insert("clusterIP".into(), json!("None"));
    }
    if let LabelSelector::Present { match_labels, .. } = &s.selector {
        spec.insert("selector".into(), labels_json(match_labels));
    }
    spec.insert("ports".into(), Json::Array(ports));
    Json::Object(spec)
}

fn service_type(t: ServiceType) -> &'static str {
    match t {
        ServiceType::ClusterIP => "ClusterIP",
        ServiceType::NodePort => "NodePort",
        ServiceType::LoadBalancer => "LoadBalancer",
        ServiceType::ExternalName => "ExternalName",
    }
}

fn rule_json(rule: &PolicyRule, peer_field: &str) -> Json {
    let peers: Vec<Json> = rule
        .peers
        .iter()
        .map(|p| match p {
            PolicyPeer::Pods {
                pod_selector,
                namespace_selector,
            } => {
                let mut o = Map::new();
                if let Some(s) = pod_selector {
                    o.insert("podSelector".into(), selector_json(s));
                }
                if let Some(s) = namespace_selector {
                    o.insert("namespaceSelector".into(), selector_json(s));
                }
                Json::Object(o)
            }
            PolicyPeer::IpBlock { cidr, except } => {
                json!({"ipBlock": {"cidr": cidr, "except": except}})
            }
        })
        .collect();
    let ports: Vec<Json> = rule
        .ports
        .iter()
        .map(|p| {
            let mut o = Map::new();
            o.insert("protocol".into(), json!(p.protocol.as_str()));
            match &p.port {
                Some(PolicyPortValue::Number(n)) => {
                    o.insert("port".into(), json!(n));
                }
                Some(PolicyPortValue::Name(n)) => {
                    o.insert("port".into(), json!(n));
                }
                None => {}
            }
            if let Some(e) = p.end_port {
                o.insert("endPort".into(), json!(e));
            }
            Json::Object(o)
        })
        .collect();
    let mut o = Map::new();
    o.insert(peer_field.into(), Json::Array(peers));
    o.insert("ports".into(), Json::Array(ports));
    Json::Object(o)
}

fn policy_json(p: &PolicyContent) -> Json {
    let types: Vec<&str> = p
        .policy_types
        .iter()
        .map(|t| match t {
            PolicyType::Ingress => "Ingress",
            PolicyType::Egress => "Egress",
        })
        .collect();
    json!({
        "podSelector": selector_json(&p.pod_selector),
        "policyTypes": types,
        "ingress": p.ingress_rules.iter().map(|r| rule_json(r, "from")).collect::<Vec<_>>(),
        "egress": p.egress_rules.iter().map(|r| rule_json(r, "to")).collect::<Vec<_>>(),
    })
}
