//! Runtime port snapshots.
//!
//! A snapshot lists the sockets each pod was listening on during one run of
//! the application, plus the sockets already open on the node before the
//! application was installed. Two runs are compared to tell stable ports from
//! OS-assigned ones.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::IpAddr;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ApplicationBundle, PortKey, Protocol, UnitId, WorkloadKind};

mod listing;

pub use listing::{parse_socket_listing, ListingFormat};

pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("line {line}: unrecognized socket listing line `{text}`")]
    UnrecognizedLine { line: usize, text: String },
    #[error("line {line}: bad local address `{address}`")]
    BadAddress { line: usize, address: String },
    #[error("invalid snapshot document: {0}")]
    Document(String),
    #[error("unsupported snapshot version {0}, expected {SNAPSHOT_VERSION}")]
    Version(u32),
    #[error("iteration must be 1 or 2, got {0}")]
    Iteration(u32),
    #[error("duplicate pod `{0}` in snapshot")]
    DuplicatePod(String),
    #[error("snapshots belong to different applications (`{0}` vs `{1}`)")]
    ApplicationMismatch(String, String),
    #[error("expected iterations 1 and 2, got {0} and {1}")]
    IterationOrder(u32, u32),
    #[error("pod `{pod}` refers to unknown compute unit {unit}")]
    UnknownUnit { pod: String, unit: String },
    #[error("{0}")]
    Unsupported(String),
}

/// Which addresses a socket is bound to.
///
/// Variant order is the display preference when one port is bound on several
/// scopes: the widest scope is reported.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BindScope {
    AllInterfaces,
    SpecificAddress(IpAddr),
    Loopback,
}

impl BindScope {
    pub fn from_host(host: &str) -> Option<BindScope> {
        let host = host.trim_start_matches('[').trim_end_matches(']');
        // ss appends %iface to scoped binds
        let host = host.split('%').next().unwrap_or(host);
        if host == "*" || host.is_empty() {
            return Some(BindScope::AllInterfaces);
        }
        let ip: IpAddr = host.parse().ok()?;
        Some(BindScope::from_ip(ip))
    }

    pub fn from_ip(ip: IpAddr) -> BindScope {
        let ip = match ip {
            IpAddr::V6(v6) => v6.to_ipv4_mapped().map(IpAddr::V4).unwrap_or(ip),
            v4 => v4,
        };
        if ip.is_unspecified() {
            BindScope::AllInterfaces
        } else if ip.is_loopback() {
            BindScope::Loopback
        } else {
            BindScope::SpecificAddress(ip)
        }
    }

    pub fn is_loopback(&self) -> bool {
        matches!(self, BindScope::Loopback)
    }
}

impl fmt::Display for BindScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BindScope::AllInterfaces => f.write_str("all_interfaces"),
            BindScope::Loopback => f.write_str("loopback"),
            BindScope::SpecificAddress(ip) => write!(f, "{ip}"),
        }
    }
}

impl FromStr for BindScope {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all_interfaces" => Ok(BindScope::AllInterfaces),
            "loopback" => Ok(BindScope::Loopback),
            other => other
                .parse::<IpAddr>()
                .map(BindScope::SpecificAddress)
                .map_err(|_| format!("bad bind scope `{other}`")),
        }
    }
}

impl Serialize for BindScope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BindScope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SocketRecord {
    #[serde(rename = "proto", deserialize_with = "socket_protocol")]
    pub protocol: Protocol,
    #[serde(deserialize_with = "nonzero_port")]
    pub port: u16,
    pub scope: BindScope,
    #[serde(
        rename = "process",
        default,
        skip_serializing_if = "Option::is_none"
    )]
    pub process_name: Option<String>,
}

impl SocketRecord {
    pub fn new(protocol: Protocol, port: u16, scope: BindScope) -> Self {
        SocketRecord {
            protocol,
            port,
            scope,
            process_name: None,
        }
    }

    pub fn port_key(&self) -> PortKey {
        PortKey {
            protocol: self.protocol,
            port: self.port,
        }
    }

    pub fn socket_key(&self) -> SocketKey {
        SocketKey {
            protocol: self.protocol,
            port: self.port,
            scope: self.scope.clone(),
        }
    }
}

fn socket_protocol<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Protocol, D::Error> {
    match Protocol::deserialize(d)? {
        Protocol::Sctp => Err(serde::de::Error::custom(
            "socket records are TCP or UDP",
        )),
        p => Ok(p),
    }
}

fn nonzero_port<'de, D: serde::Deserializer<'de>>(d: D) -> Result<u16, D::Error> {
    match u16::deserialize(d)? {
        0 => Err(serde::de::Error::custom("port 0 is not a listening port")),
        p => Ok(p),
    }
}

/// Identity of a listening socket for comparison across runs.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SocketKey {
    pub protocol: Protocol,
    pub port: u16,
    pub scope: BindScope,
}

impl SocketKey {
    pub fn port_key(&self) -> PortKey {
        PortKey {
            protocol: self.protocol,
            port: self.port,
        }
    }
}

/// `unit` reference inside a snapshot document.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitRef {
    pub kind: WorkloadKind,
    pub name: String,
    pub namespace: String,
}

impl UnitRef {
    pub fn unit_id(&self, application_id: &str) -> UnitId {
        UnitId {
            application_id: application_id.to_string(),
            kind: self.kind,
            namespace: self.namespace.clone(),
            name: self.name.clone(),
        }
    }
}

impl From<&UnitId> for UnitRef {
    fn from(id: &UnitId) -> Self {
        UnitRef {
            kind: id.kind,
            name: id.name.clone(),
            namespace: id.namespace.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PodObservation {
    #[serde(rename = "pod")]
    pub pod_name: String,
    #[serde(rename = "unit")]
    pub owner: UnitRef,
    pub sockets: Vec<SocketRecord>,
}

/// One run's worth of runtime observations. Field names match the on-disk
/// document (version 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuntimeSnapshot {
    pub version: u32,
    pub application_id: String,
    pub iteration: u32,
    #[serde(default)]
    pub host_baseline: Vec<SocketRecord>,
    #[serde(default)]
    pub observations: Vec<PodObservation>,
}

impl RuntimeSnapshot {
    pub fn new(application_id: &str, iteration: u32) -> Self {
        RuntimeSnapshot {
            version: SNAPSHOT_VERSION,
            application_id: application_id.to_string(),
            iteration,
            host_baseline: Vec::new(),
            observations: Vec::new(),
        }
    }

    /// Parses and validates a snapshot document (JSON or YAML).
    pub fn from_document(text: &str) -> Result<Self, SnapshotError> {
        let snap: RuntimeSnapshot =
            serde_yaml::from_str(text).map_err(|e| SnapshotError::Document(e.to_string()))?;
        snap.validate()?;
        Ok(snap)
    }

    pub fn to_document(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("snapshot serializes");
        s.push('\n');
        s
    }

    pub fn validate(&self) -> Result<(), SnapshotError> {
        if self.version != SNAPSHOT_VERSION {
            return Err(SnapshotError::Version(self.version));
        }
        if !(1..=2).contains(&self.iteration) {
            return Err(SnapshotError::Iteration(self.iteration));
        }
        let mut pods = BTreeSet::new();
        for o in &self.observations {
            if !pods.insert(&o.pod_name) {
                return Err(SnapshotError::DuplicatePod(o.pod_name.clone()));
            }
        }
        Ok(())
    }

    /// Every observation must point at a compute unit of `bundle`.
    pub fn check_units(&self, bundle: &ApplicationBundle) -> Result<(), SnapshotError> {
        for o in &self.observations {
            let id = o.owner.unit_id(&bundle.application_id);
            if bundle.unit(&id).is_none() {
                return Err(SnapshotError::UnknownUnit {
                    pod: o.pod_name.clone(),
                    unit: id.to_string(),
                });
            }
        }
        Ok(())
    }

    /// Sockets per owning unit, merged over that unit's pods.
    pub fn sockets_by_unit(&self) -> BTreeMap<&UnitRef, BTreeSet<&SocketRecord>> {
        let mut out: BTreeMap<&UnitRef, BTreeSet<&SocketRecord>> = BTreeMap::new();
        for o in &self.observations {
            out.entry(&o.owner).or_default().extend(o.sockets.iter());
        }
        out
    }
}

/// Removes host-baseline ports from pods that share the node's network
/// namespace. Other pods are left untouched.
pub fn subtract_host_baseline(
    snapshot: &RuntimeSnapshot,
    bundle: &ApplicationBundle,
) -> RuntimeSnapshot {
    let baseline: BTreeSet<PortKey> = snapshot.host_baseline.iter().map(|s| s.port_key()).collect();
    let mut out = snapshot.clone();
    if baseline.is_empty() {
        return out;
    }
    for o in &mut out.observations {
        let id = o.owner.unit_id(&bundle.application_id);
        if bundle.unit(&id).is_some_and(|u| u.host_network) {
            o.sockets.retain(|s| !baseline.contains(&s.port_key()));
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct UnitPortDiff {
    /// Present in both iterations.
    pub stable: BTreeSet<SocketKey>,
    /// Present only in iteration 1.
    pub only_first: BTreeSet<SocketKey>,
    /// Present only in iteration 2.
    pub only_second: BTreeSet<SocketKey>,
    /// Every socket seen in either iteration, with process names.
    pub observed: BTreeSet<SocketRecord>,
}

impl UnitPortDiff {
    pub fn unstable(&self) -> BTreeSet<SocketKey> {
        self.only_first.union(&self.only_second).cloned().collect()
    }

    /// (protocol, port) pairs seen in either iteration, any scope.
    pub fn observed_ports(&self) -> BTreeSet<PortKey> {
        self.observed.iter().map(|s| s.port_key()).collect()
    }

    /// Unstable sockets trusted as dynamic ports. UDP sockets seen in only one
    /// run are too noisy to report and are dropped.
    pub fn trusted_unstable(&self) -> (BTreeSet<SocketKey>, BTreeSet<SocketKey>) {
        let keep = |set: &BTreeSet<SocketKey>| {
            set.iter()
                .filter(|k| k.protocol != Protocol::Udp)
                .cloned()
                .collect()
        };
        (keep(&self.only_first), keep(&self.only_second))
    }

    pub fn dropped_udp(&self) -> BTreeSet<SocketKey> {
        self.unstable()
            .into_iter()
            .filter(|k| k.protocol == Protocol::Udp)
            .collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct IterationDiff {
    pub units: BTreeMap<UnitRef, UnitPortDiff>,
    pub diagnostics: Vec<String>,
}

/// Compares two runs per compute unit. Pod names are ignored since restarts
/// rename pods.
pub fn diff_iterations(
    first: &RuntimeSnapshot,
    second: &RuntimeSnapshot,
) -> Result<IterationDiff, SnapshotError> {
    if first.application_id != second.application_id {
        return Err(SnapshotError::ApplicationMismatch(
            first.application_id.clone(),
            second.application_id.clone(),
        ));
    }
    let a = first.sockets_by_unit();
    let b = second.sockets_by_unit();
    let mut diff = IterationDiff::default();
    let units: BTreeSet<&UnitRef> = a.keys().chain(b.keys()).copied().collect();
    let empty = BTreeSet::new();
    for unit in units {
        let ra = a.get(unit).unwrap_or(&empty);
        let rb = b.get(unit).unwrap_or(&empty);
        match (a.contains_key(unit), b.contains_key(unit)) {
            (true, false) => diff.diagnostics.push(format!(
                "{}/{}/{} observed in iteration {} only; all its ports count as unstable",
                unit.namespace, unit.kind, unit.name, first.iteration
            )),
            (false, true) => diff.diagnostics.push(format!(
                "{}/{}/{} observed in iteration {} only; all its ports count as unstable",
                unit.namespace, unit.kind, unit.name, second.iteration
            )),
            _ => {}
        }
        let ka: BTreeSet<SocketKey> = ra.iter().map(|s| s.socket_key()).collect();
        let kb: BTreeSet<SocketKey> = rb.iter().map(|s| s.socket_key()).collect();
        let entry = UnitPortDiff {
            stable: ka.intersection(&kb).cloned().collect(),
            only_first: ka.difference(&kb).cloned().collect(),
            only_second: kb.difference(&ka).cloned().collect(),
            observed: ra.iter().chain(rb.iter()).map(|s| (*s).clone()).collect(),
        };
        for k in entry.dropped_udp() {
            diff.diagnostics.push(format!(
                "{}/{}/{}: UDP port {} seen in one iteration only, ignored",
                unit.namespace, unit.kind, unit.name, k.port
            ));
        }
        diff.units.insert(unit.clone(), entry);
    }
    Ok(diff)
}
