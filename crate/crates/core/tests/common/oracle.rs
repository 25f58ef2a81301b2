//! Independent evaluators for selectors and ingress decisions, written from
//! the operator and clause definitions without touching the library logic.

use std::collections::{BTreeMap, BTreeSet};

use netmisconf::model::{
    ApplicationBundle, ComputeUnit, ContainerSpec, LabelRequirement, LabelSelector, LabelSet,
    NetworkPolicySpec, ObjectId, PolicyPeer, PolicyPort, PolicyPortValue, PolicyRule, PolicyType,
    PortDecl, Protocol, SelectorOperator, UnitId, WorkloadKind, NAMESPACE_NAME_LABEL,
};
use rand::seq::SliceRandom;
use rand::Rng;

pub const KEYS: [&str; 4] = ["app", "tier", "example.com/role", "version"];
pub const VALUES: [&str; 3] = ["a", "b", "c"];

#[derive(Debug, Clone)]
pub enum Op {
    In(Vec<&'static str>),
    NotIn(Vec<&'static str>),
    Exists,
    DoesNotExist,
}

#[derive(Debug, Clone)]
pub struct RawSelector {
    pub absent: bool,
    pub equals: BTreeMap<&'static str, &'static str>,
    pub exprs: Vec<(&'static str, Op)>,
}

pub fn selector_oracle(sel: &RawSelector, labels: &BTreeMap<&str, &str>) -> bool {
    if sel.absent {
        return false;
    }
    for (k, v) in &sel.equals {
        if labels.get(k) != Some(v) {
            return false;
        }
    }
    for (k, op) in &sel.exprs {
        let present = labels.get(k);
        let ok = match op {
            Op::In(vs) => match present {
                Some(v) => vs.contains(v),
                None => false,
            },
            Op::NotIn(vs) => match present {
                Some(v) => !vs.contains(v),
                None => true,
            },
            Op::Exists => present.is_some(),
            Op::DoesNotExist => present.is_none(),
        };
        if !ok {
            return false;
        }
    }
    true
}

pub fn to_selector(sel: &RawSelector) -> LabelSelector {
    if sel.absent {
        return LabelSelector::absent();
    }
    let labels = LabelSet::from_pairs(sel.equals.iter().map(|(k, v)| (*k, *v))).unwrap();
    let exprs = sel
        .exprs
        .iter()
        .map(|(k, op)| {
            let (o, vs): (SelectorOperator, Vec<&str>) = match op {
                Op::In(v) => (SelectorOperator::In, v.clone()),
                Op::NotIn(v) => (SelectorOperator::NotIn, v.clone()),
                Op::Exists => (SelectorOperator::Exists, vec![]),
                Op::DoesNotExist => (SelectorOperator::DoesNotExist, vec![]),
            };
            LabelRequirement::new(k, o, vs).unwrap()
        })
        .collect();
    LabelSelector::with_expressions(labels, exprs)
}

fn random_values(rng: &mut impl Rng) -> Vec<&'static str> {
    let n = rng.gen_range(1..=3);
    (0..n).map(|_| *VALUES.choose(rng).unwrap()).collect()
}

pub fn random_label_map(rng: &mut impl Rng, max: usize) -> BTreeMap<&'static str, &'static str> {
    let n = rng.gen_range(0..=max);
    (0..n)
        .map(|_| (*KEYS.choose(rng).unwrap(), *VALUES.choose(rng).unwrap()))
        .collect()
}

pub fn random_selector(rng: &mut impl Rng) -> RawSelector {
    let absent = rng.gen_bool(0.05);
    let equals = random_label_map(rng, 2);
    let n = rng.gen_range(0..=3);
    let exprs = (0..n)
        .map(|_| {
            let op = match rng.gen_range(0..4) {
                0 => Op::In(random_values(rng)),
                1 => Op::NotIn(random_values(rng)),
                2 => Op::Exists,
                _ => Op::DoesNotExist,
            };
            (*KEYS.choose(rng).unwrap(), op)
        })
        .collect();
    RawSelector {
        absent,
        equals,
        exprs,
    }
}

// Reachability instances.

pub const PORTS: [(u16, &str); 4] = [(80, "http"), (443, "https"), (8080, "alt"), (9000, "metrics")];
pub const NAMESPACES: [&str; 2] = ["front", "back"];
pub const POLICY_PORT_NUMBERS: [u16; 5] = [80, 443, 8080, 9000, 81];
pub const PORT_NAMES: [&str; 5] = ["http", "https", "alt", "metrics", "nope"];

pub type Labels = BTreeMap<&'static str, &'static str>;

#[derive(Debug, Clone)]
pub struct TUnit {
    pub ns: &'static str,
    pub labels: Labels,
    pub ports: BTreeSet<usize>,
    pub host: bool,
}

#[derive(Debug, Clone)]
pub enum TPort {
    Any,
    Number(u16),
    Range(u16, u16),
    Name(&'static str),
}

#[derive(Debug, Clone)]
pub enum TPeer {
    Block,
    Pods {
        pods: Option<Labels>,
        ns: Option<&'static str>,
    },
}

#[derive(Debug, Clone)]
pub struct TRule {
    pub peers: Vec<TPeer>,
    pub ports: Vec<(Protocol, TPort)>,
}

#[derive(Debug, Clone)]
pub struct TPolicy {
    pub ns: &'static str,
    pub selector: Labels,
    pub ingress: bool,
    pub rules: Vec<TRule>,
}

fn subset(want: &Labels, have: &Labels) -> bool {
    want.iter().all(|(k, v)| have.get(k) == Some(v))
}

/// TCP ingress from `src` to `dst` on `port`.
pub fn ingress_oracle(policies: &[TPolicy], src: &TUnit, dst: &TUnit, port: u16) -> bool {
    if dst.host {
        return true;
    }
    let applicable: Vec<&TPolicy> = policies
        .iter()
        .filter(|p| p.ingress && p.ns == dst.ns && subset(&p.selector, &dst.labels))
        .collect();
    if applicable.is_empty() {
        return true;
    }
    applicable.iter().any(|p| {
        p.rules.iter().any(|r| {
            let port_ok = r.ports.is_empty()
                || r.ports.iter().any(|(proto, tp)| {
                    *proto == Protocol::Tcp
                        && match tp {
                            TPort::Any => true,
                            TPort::Number(n) => *n == port,
                            TPort::Range(lo, hi) => *lo <= port && port <= *hi,
                            TPort::Name(name) => dst
                                .ports
                                .iter()
                                .any(|i| PORTS[*i].1 == *name && PORTS[*i].0 == port),
                        }
                });
            let peer_ok = r.peers.is_empty()
                || r.peers.iter().any(|peer| match peer {
                    TPeer::Block => true,
                    TPeer::Pods { pods, ns } => {
                        let ns_ok = match ns {
                            None => src.ns == p.ns,
                            Some(n) => src.ns == *n,
                        };
                        let pod_ok = pods.as_ref().map_or(true, |l| subset(l, &src.labels));
                        ns_ok && pod_ok
                    }
                });
            port_ok && peer_ok
        })
    })
}

fn label_set(l: &Labels) -> LabelSet {
    LabelSet::from_pairs(l.iter().map(|(k, v)| (*k, *v))).unwrap()
}

pub fn to_bundle(units: &[TUnit], policies: &[TPolicy]) -> ApplicationBundle {
    let compute_units = units
        .iter()
        .enumerate()
        .map(|(i, u)| ComputeUnit {
            id: UnitId {
                application_id: "app".into(),
                kind: WorkloadKind::Deployment,
                namespace: u.ns.into(),
                name: format!("u{i}"),
            },
            pod_labels: label_set(&u.labels),
            containers: vec![ContainerSpec {
                name: "c".into(),
                image: "img".into(),
                declared_ports: u
                    .ports
                    .iter()
                    .map(|i| PortDecl {
                        number: PORTS[*i].0,
                        protocol: Protocol::Tcp,
                        name: Some(PORTS[*i].1.into()),
                    })
                    .collect(),
            }],
            host_network: u.host,
            replicas: 1,
        })
        .collect();
    let policies = policies
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let rules: Vec<PolicyRule> = p.rules.iter().map(to_rule).collect();
            let (ingress_rules, egress_rules, kind) = if p.ingress {
                (rules, Vec::new(), PolicyType::Ingress)
            } else {
                (Vec::new(), rules, PolicyType::Egress)
            };
            NetworkPolicySpec {
                id: ObjectId::new("app", p.ns, &format!("p{i}")),
                pod_selector: LabelSelector::equality(label_set(&p.selector)),
                policy_types: BTreeSet::from([kind]),
                ingress_rules,
                egress_rules,
            }
        })
        .collect();
    ApplicationBundle {
        application_id: "app".into(),
        namespace: "front".into(),
        compute_units,
        services: Vec::new(),
        policies,
        policy_templates_present_but_disabled: false,
        unanalyzed: Vec::new(),
    }
}

fn to_rule(r: &TRule) -> PolicyRule {
    PolicyRule {
        peers: r
            .peers
            .iter()
            .map(|p| match p {
                TPeer::Block => PolicyPeer::IpBlock {
                    cidr: "10.0.0.0/8".into(),
                    except: vec![],
                },
                TPeer::Pods { pods, ns } => PolicyPeer::Pods {
                    pod_selector: pods.as_ref().map(|l| LabelSelector::equality(label_set(l))),
                    namespace_selector: ns.map(|n| {
                        LabelSelector::equality(
                            LabelSet::from_pairs([(NAMESPACE_NAME_LABEL, n)]).unwrap(),
                        )
                    }),
                },
            })
            .collect(),
        ports: r
            .ports
            .iter()
            .map(|(proto, tp)| {
                let (port, end_port) = match tp {
                    TPort::Any => (None, None),
                    TPort::Number(n) => (Some(PolicyPortValue::Number(*n)), None),
                    TPort::Range(lo, hi) => (Some(PolicyPortValue::Number(*lo)), Some(*hi)),
                    TPort::Name(n) => (Some(PolicyPortValue::Name(n.to_string())), None),
                };
                PolicyPort {
                    protocol: *proto,
                    port,
                    end_port,
                }
            })
            .collect(),
    }
}

fn random_small_labels(rng: &mut impl Rng) -> Labels {
    let n = rng.gen_range(0..=2);
    (0..n)
        .map(|_| (*["app", "tier"].choose(rng).unwrap(), *["x", "y"].choose(rng).unwrap()))
        .collect()
}

pub fn random_unit(rng: &mut impl Rng) -> TUnit {
    let n = rng.gen_range(0..=3);
    TUnit {
        ns: *NAMESPACES.choose(rng).unwrap(),
        labels: random_small_labels(rng),
        ports: (0..n).map(|_| rng.gen_range(0..PORTS.len())).collect(),
        host: rng.gen_bool(0.15),
    }
}

fn random_tport(rng: &mut impl Rng) -> TPort {
    match rng.gen_range(0..4) {
        0 => TPort::Any,
        1 => TPort::Number(*POLICY_PORT_NUMBERS.choose(rng).unwrap()),
        2 => {
            let a = *POLICY_PORT_NUMBERS.choose(rng).unwrap();
            let b = *POLICY_PORT_NUMBERS.choose(rng).unwrap();
            TPort::Range(a.min(b), a.max(b))
        }
        _ => TPort::Name(PORT_NAMES.choose(rng).unwrap()),
    }
}

pub fn random_policy(rng: &mut impl Rng) -> TPolicy {
    let n_rules = rng.gen_range(0..=2);
    let rules = (0..n_rules)
        .map(|_| {
            let n_peers = rng.gen_range(0..=2);
            let peers = (0..n_peers)
                .map(|_| {
                    if rng.gen_bool(1.0 / 7.0) {
                        TPeer::Block
                    } else {
                        TPeer::Pods {
                            pods: rng.gen_bool(0.5).then(|| random_small_labels(rng)),
                            ns: rng.gen_bool(0.5).then(|| *NAMESPACES.choose(rng).unwrap()),
                        }
                    }
                })
                .collect();
            let n_ports = rng.gen_range(0..=2);
            let ports = (0..n_ports)
                .map(|_| {
                    let proto = if rng.gen_bool(0.2) { Protocol::Udp } else { Protocol::Tcp };
                    (proto, random_tport(rng))
                })
                .collect();
            TRule { peers, ports }
        })
        .collect();
    TPolicy {
        ns: *NAMESPACES.choose(rng).unwrap(),
        selector: random_small_labels(rng),
        ingress: rng.gen_bool(0.85),
        rules,
    }
}
