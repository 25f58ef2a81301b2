//! Seeded synthetic applications and snapshots.

use std::collections::BTreeSet;

use netmisconf::model::{
    ApplicationBundle, ComputeUnit, ContainerSpec, LabelRequirement, LabelSelector, LabelSet,
    NetworkPolicySpec, ObjectId, PolicyPeer, PolicyPort, PolicyPortValue, PolicyRule, PolicyType,
    PortDecl, Protocol, SelectorOperator, ServicePort, ServiceSpec, ServiceType, TargetPort,
    UnitId, WorkloadKind,
};
use netmisconf::snapshot::{BindScope, PodObservation, RuntimeSnapshot, SocketRecord, UnitRef};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PORT_POOL: [u16; 8] = [80, 443, 5432, 6379, 8080, 8443, 9000, 9090];

pub struct Shape {
    pub units: usize,
    pub services: usize,
    pub policies: usize,
}

impl Default for Shape {
    fn default() -> Self {
        Shape {
            units: 5,
            services: 3,
            policies: 1,
        }
    }
}

fn labels(pairs: &[(&str, &str)]) -> LabelSet {
    LabelSet::from_pairs(pairs.iter().copied()).unwrap()
}

pub fn application(seed: u64, app: &str, shape: &Shape) -> ApplicationBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ns = app.to_string();
    let kinds = [
        WorkloadKind::Deployment,
        WorkloadKind::Deployment,
        WorkloadKind::StatefulSet,
        WorkloadKind::DaemonSet,
        WorkloadKind::Pod,
        WorkloadKind::Job,
        WorkloadKind::CronJob,
        WorkloadKind::ReplicaSet,
    ];
    let mut units = Vec::new();
    for i in 0..shape.units {
        let kind = *kinds.choose(&mut rng).unwrap();
        let component = format!("c{i}");
        // an occasional shared component label plants collisions
        let component = if rng.gen_bool(0.1) { "shared".to_string() } else { component };
        let mut l = vec![("app", app), ("component", component.as_str())];
        if rng.gen_bool(0.3) {
            l.push(("tier", if rng.gen_bool(0.5) { "front" } else { "back" }));
        }
        let n_ports = rng.gen_range(0..=3);
        let mut ports: Vec<u16> = PORT_POOL.choose_multiple(&mut rng, n_ports).copied().collect();
        ports.sort();
        let declared_ports = ports
            .iter()
            .map(|p| PortDecl {
                number: *p,
                protocol: if rng.gen_bool(0.1) { Protocol::Udp } else { Protocol::Tcp },
                name: rng.gen_bool(0.7).then(|| format!("p{p}")),
            })
            .collect();
        let replicas = match kind {
            WorkloadKind::Deployment | WorkloadKind::StatefulSet | WorkloadKind::ReplicaSet => {
                rng.gen_range(0..=3)
            }
            _ => 1,
        };
        units.push(ComputeUnit {
            id: UnitId {
                application_id: app.into(),
                kind,
                namespace: ns.clone(),
                name: format!("{app}-u{i}"),
            },
            pod_labels: labels(&l),
            containers: vec![ContainerSpec {
                name: "main".into(),
                image: format!("example/{app}:{i}"),
                declared_ports,
            }],
            host_network: rng.gen_bool(0.1),
            replicas,
        });
    }
    units.sort_by(|a, b| a.id.cmp(&b.id));

    let mut services = Vec::new();
    for i in 0..shape.services {
        let selector = if units.is_empty() || rng.gen_bool(0.1) {
            if rng.gen_bool(0.5) {
                LabelSelector::absent()
            } else {
                LabelSelector::equality(labels(&[("app", "ghost")]))
            }
        } else {
            let u = units.choose(&mut rng).unwrap();
            let component = u.pod_labels.get("component").unwrap().to_string();
            LabelSelector::equality(labels(&[("app", app), ("component", component.as_str())]))
        };
        let n_ports = rng.gen_range(1..=2);
        let mut ports = Vec::new();
        for j in 0..n_ports {
            let target_port = *PORT_POOL.choose(&mut rng).unwrap();
            let target = if rng.gen_bool(0.4) {
                TargetPort::Name(format!("p{target_port}"))
            } else {
                TargetPort::Number(target_port)
            };
            ports.push(ServicePort {
                port: 1000 + j as u16,
                target,
                protocol: Protocol::Tcp,
                name: Some(format!("s{j}")),
            });
        }
        services.push(ServiceSpec {
            id: ObjectId::new(app, &ns, &format!("{app}-svc{i}")),
            selector,
            ports,
            headless: rng.gen_bool(0.2),
            service_type: ServiceType::ClusterIP,
        });
    }

    let mut policies = Vec::new();
    for i in 0..shape.policies {
        let pod_selector = match rng.gen_range(0..3) {
            0 => LabelSelector::everything(),
            1 => LabelSelector::equality(labels(&[("app", app)])),
            _ => LabelSelector::with_expressions(
                LabelSet::new(),
                vec![LabelRequirement::new(
                    "component",
                    SelectorOperator::In,
                    ["c0", "c1", "shared"],
                )
                .unwrap()],
            ),
        };
        let rule = PolicyRule {
            peers: vec![PolicyPeer::Pods {
                pod_selector: Some(LabelSelector::equality(labels(&[("app", app)]))),
                namespace_selector: None,
            }],
            ports: vec![PolicyPort {
                protocol: Protocol::Tcp,
                port: Some(PolicyPortValue::Number(*PORT_POOL.choose(&mut rng).unwrap())),
                end_port: None,
            }],
        };
        let mut types = BTreeSet::from([PolicyType::Ingress]);
        let egress = if rng.gen_bool(0.3) {
            types.insert(PolicyType::Egress);
            vec![PolicyRule::default()]
        } else {
            vec![]
        };
        policies.push(NetworkPolicySpec {
            id: ObjectId::new(app, &ns, &format!("{app}-np{i}")),
            pod_selector,
            policy_types: types,
            ingress_rules: vec![rule],
            egress_rules: egress,
        });
    }

    ApplicationBundle {
        application_id: app.into(),
        namespace: ns,
        compute_units: units,
        services,
        policies,
        policy_templates_present_but_disabled: false,
        unanalyzed: Vec::new(),
    }
}

/// Two iterations: most declared ports open, some extra stable ports and a
/// fresh ephemeral port per iteration on some units.
pub fn snapshots(seed: u64, bundle: &ApplicationBundle) -> (RuntimeSnapshot, RuntimeSnapshot) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut first = RuntimeSnapshot::new(&bundle.application_id, 1);
    let mut second = RuntimeSnapshot::new(&bundle.application_id, 2);
    let baseline = vec![SocketRecord::new(Protocol::Tcp, 22, BindScope::AllInterfaces)];
    first.host_baseline = baseline.clone();
    second.host_baseline = baseline;
    for u in bundle.compute_units.iter().filter(|u| u.id.kind.is_long_running()) {
        let mut stable: Vec<SocketRecord> = u
            .declared_ports()
            .filter(|_| rng.gen_bool(0.85))
            .map(|p| SocketRecord::new(p.protocol, p.number, BindScope::AllInterfaces))
            .collect();
        if rng.gen_bool(0.2) {
            stable.push(SocketRecord::new(Protocol::Tcp, 7070, BindScope::AllInterfaces));
        }
        if rng.gen_bool(0.1) {
            stable.push(SocketRecord::new(Protocol::Tcp, 7071, BindScope::Loopback));
        }
        if u.host_network {
            stable.push(SocketRecord::new(Protocol::Tcp, 22, BindScope::AllInterfaces));
        }
        for (snap, it) in [(&mut first, 1u32), (&mut second, 2u32)] {
            let mut sockets = stable.clone();
            if rng.gen_bool(0.2) {
                sockets.push(SocketRecord::new(
                    Protocol::Tcp,
                    rng.gen_range(32768..=60999),
                    BindScope::AllInterfaces,
                ));
            }
            if rng.gen_bool(0.1) {
                sockets.push(SocketRecord::new(Protocol::Udp, 5353, BindScope::AllInterfaces));
            }
            let replicas = u.replicas.max(1);
            for r in 0..replicas {
                snap.observations.push(PodObservation {
                    pod_name: format!("{}-{it}-{r}", u.id.name),
                    owner: UnitRef::from(&u.id),
                    sockets: sockets.clone(),
                });
            }
        }
    }
    (first, second)
}
