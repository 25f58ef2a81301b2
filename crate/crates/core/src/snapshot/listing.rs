//! Parsers for `netstat -tulpn` and `ss -tulpn` output.

use std::str::FromStr;

use super::{BindScope, SnapshotError, SocketRecord};
use crate::model::Protocol;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ListingFormat {
    Netstat,
    Ss,
}

impl FromStr for ListingFormat {
    type Err = SnapshotError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "netstat" => Ok(ListingFormat::Netstat),
            "ss" => Ok(ListingFormat::Ss),
            other => Err(SnapshotError::Unsupported(format!(
                "unknown listing format `{other}` (expected netstat or ss)"
            ))),
        }
    }
}

/// One record per listening TCP socket or bound UDP socket. Connected
/// sockets are skipped; anything unparseable is an error.
pub fn parse_socket_listing(
    text: &str,
    format: ListingFormat,
) -> Result<Vec<SocketRecord>, SnapshotError> {
    match format {
        ListingFormat::Netstat => parse_netstat(text),
        ListingFormat::Ss => parse_ss(text),
    }
}

fn protocol_of(netid: &str) -> Option<Protocol> {
    match netid {
        "tcp" | "tcp6" | "tcp4" => Some(Protocol::Tcp),
        "udp" | "udp6" | "udp4" | "udpl" => Some(Protocol::Udp),
        _ => None,
    }
}

fn split_address(addr: &str) -> Option<(BindScope, u16)> {
    let (host, port) = addr.rsplit_once(':')?;
    let port: u16 = port.parse().ok().filter(|p| *p != 0)?;
    Some((BindScope::from_host(host)?, port))
}

fn unrecognized(line: usize, text: &str) -> SnapshotError {
    SnapshotError::UnrecognizedLine {
        line,
        text: text.to_string(),
    }
}

fn parse_netstat(text: &str) -> Result<Vec<SocketRecord>, SnapshotError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with("Active Internet") || line.starts_with("Proto ") {
            continue;
        }
        // unix sockets and anything after them are not network listeners
        if line.starts_with("Active UNIX") || line.starts_with("Active Bluetooth") {
            break;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let protocol = cols
            .first()
            .and_then(|c| protocol_of(c))
            .ok_or_else(|| unrecognized(lineno, raw))?;
        if cols.len() < 5 {
            return Err(unrecognized(lineno, raw));
        }
        let local = cols[3];
        let state = cols.get(5).copied();
        let process_col = match protocol {
            Protocol::Tcp => {
                if state != Some("LISTEN") {
                    continue;
                }
                cols.get(6)
            }
            _ => {
                // UDP has no state column unless the socket is connected
                match state {
                    Some("ESTABLISHED") => continue,
                    Some(s) if s.contains('/') || s == "-" => Some(&cols[5]),
                    _ => cols.get(6),
                }
            }
        };
        let (scope, port) = split_address(local).ok_or_else(|| SnapshotError::BadAddress {
            line: lineno,
            address: local.to_string(),
        })?;
        let process_name = process_col
            .and_then(|p| p.split_once('/'))
            .map(|(_, name)| name.to_string())
            .filter(|n| !n.is_empty());
        out.push(SocketRecord {
            protocol,
            port,
            scope,
            process_name,
        });
    }
    Ok(out)
}

fn parse_ss(text: &str) -> Result<Vec<SocketRecord>, SnapshotError> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with("Netid") {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let protocol = cols
            .first()
            .and_then(|c| protocol_of(c))
            .ok_or_else(|| unrecognized(lineno, raw))?;
        if cols.len() < 6 {
            return Err(unrecognized(lineno, raw));
        }
        let state = cols[1];
        let listening = match protocol {
            Protocol::Tcp => state == "LISTEN",
            _ => state == "UNCONN",
        };
        if !listening {
            continue;
        }
        let local = cols[4];
        let (scope, port) = split_address(local).ok_or_else(|| SnapshotError::BadAddress {
            line: lineno,
            address: local.to_string(),
        })?;
        let process_name = cols
            .get(6..)
            .map(|rest| rest.join(" "))
            .and_then(|p| ss_process_name(&p));
        out.push(SocketRecord {
            protocol,
            port,
            scope,
            process_name,
        });
    }
    Ok(out)
}

/// `users:(("java",pid=1,fd=3))` -> `java`
fn ss_process_name(column: &str) -> Option<String> {
    let start = column.find("((\"")? + 3;
    let end = column[start..].find('"')? + start;
    Some(column[start..end].to_string())
}
