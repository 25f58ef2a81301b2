//! Aggregation, suppression and rendering of findings.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use globset::{Glob, GlobMatcher};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{sort_findings, Evidence, Finding, RuleId};
use crate::netpol::{Endpoint, Via};
use crate::rules::{ApplicationAnalysis, SkippedRule};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("suppression file is not valid YAML: {0}")]
    SuppressionSyntax(String),
    #[error("suppression entry {index}: {message}")]
    InvalidSuppression { index: usize, message: String },
    #[error("unknown output format `{0}` (expected json or text)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SuppressedFinding {
    pub finding: Finding,
    pub justifications: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ApplicationReport {
    pub application_id: String,
    pub findings: Vec<Finding>,
    pub suppressed: Vec<SuppressedFinding>,
    pub skipped_rules: Vec<SkippedRule>,
    pub diagnostics: Vec<String>,
    pub unanalyzed_resources: Vec<String>,
}

impl From<ApplicationAnalysis> for ApplicationReport {
    fn from(a: ApplicationAnalysis) -> Self {
        ApplicationReport {
            application_id: a.application_id,
            findings: a.findings,
            suppressed: Vec::new(),
            skipped_rules: a.skipped_rules,
            diagnostics: a.diagnostics,
            unanalyzed_resources: a.unanalyzed_resources,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SummaryRow {
    pub application_id: String,
    pub counts: BTreeMap<RuleId, usize>,
    pub total: usize,
}

/// Application x rule matrix of visible findings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Summary {
    pub rows: Vec<SummaryRow>,
    pub totals: BTreeMap<RuleId, usize>,
    pub total_findings: usize,
    pub affected_applications: usize,
    pub total_applications: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Report {
    pub schema_version: u32,
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated_at: Option<String>,
    pub applications: Vec<ApplicationReport>,
    pub cluster_findings: Vec<Finding>,
    pub suppressed_cluster_findings: Vec<SuppressedFinding>,
    pub exposure: Option<Vec<Endpoint>>,
    pub stale_suppressions: Vec<Suppression>,
    pub summary: Summary,
}

impl Report {
    pub fn new(
        analyses: Vec<ApplicationAnalysis>,
        mut cluster_findings: Vec<Finding>,
        exposure: Option<Vec<Endpoint>>,
    ) -> Self {
        let mut applications: Vec<ApplicationReport> =
            analyses.into_iter().map(ApplicationReport::from).collect();
        applications.sort_by(|a, b| a.application_id.cmp(&b.application_id));
        for a in &mut applications {
            sort_findings(&mut a.findings);
        }
        sort_findings(&mut cluster_findings);
        let summary = aggregate(&applications, &cluster_findings);
        Report {
            schema_version: REPORT_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            generated_at: None,
            applications,
            cluster_findings,
            suppressed_cluster_findings: Vec::new(),
            exposure,
            stale_suppressions: Vec::new(),
            summary,
        }
    }

    /// Every visible finding, per application then cluster-wide.
    pub fn findings(&self) -> impl Iterator<Item = &Finding> {
        self.applications
            .iter()
            .flat_map(|a| a.findings.iter())
            .chain(self.cluster_findings.iter())
    }

    pub fn exit_code(&self) -> i32 {
        i32::from(self.findings().next().is_some())
    }
}

/// Builds the summary matrix. Cluster findings count towards every
/// application they name.
pub fn aggregate(applications: &[ApplicationReport], cluster_findings: &[Finding]) -> Summary {
    let mut rows: BTreeMap<String, BTreeMap<RuleId, usize>> = applications
        .iter()
        .map(|a| (a.application_id.clone(), BTreeMap::new()))
        .collect();
    for a in applications {
        let row = rows.get_mut(&a.application_id).expect("row exists");
        for f in &a.findings {
            *row.entry(f.rule).or_default() += 1;
        }
    }
    for f in cluster_findings {
        let apps: BTreeSet<&str> = f.subjects.iter().map(|s| s.application_id.as_str()).collect();
        for app in apps {
            *rows
                .entry(app.to_string())
                .or_default()
                .entry(f.rule)
                .or_default() += 1;
        }
    }
    let mut totals: BTreeMap<RuleId, usize> = BTreeMap::new();
    let mut out_rows = Vec::new();
    let mut affected = 0;
    for (app, counts) in rows {
        let total: usize = counts.values().sum();
        if total > 0 {
            affected += 1;
        }
        for (r, n) in &counts {
            *totals.entry(*r).or_default() += n;
        }
        out_rows.push(SummaryRow {
            application_id: app,
            counts,
            total,
        });
    }
    let total_findings = applications.iter().map(|a| a.findings.len()).sum::<usize>()
        + cluster_findings.len();
    Summary {
        total_applications: out_rows.len(),
        rows: out_rows,
        totals,
        total_findings,
        affected_applications: affected,
    }
}

/// A reviewed false positive. `subject` is a glob over subject strings of
/// the form `app/namespace/Kind/name`; `*` also matches `/`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suppression {
    pub rule: RuleId,
    pub subject: String,
    pub justification: String,
}

impl Suppression {
    fn matcher(&self) -> Result<GlobMatcher, globset::Error> {
        Ok(Glob::new(&self.subject)?.compile_matcher())
    }

    pub fn matches(&self, finding: &Finding) -> bool {
        finding.rule == self.rule
            && self.matcher().is_ok_and(|m| {
                finding.subjects.iter().any(|s| m.is_match(s.to_string()))
            })
    }
}

/// Parses a YAML (or JSON) list of suppressions.
pub fn load_suppressions(text: &str) -> Result<Vec<Suppression>, ReportError> {
    let entries: Vec<Suppression> = match serde_yaml::from_str::<Option<Vec<Suppression>>>(text) {
        Ok(v) => v.unwrap_or_default(),
        Err(e) => return Err(ReportError::SuppressionSyntax(e.to_string())),
    };
    for (i, s) in entries.iter().enumerate() {
        let index = i + 1;
        if s.justification.trim().is_empty() {
            return Err(ReportError::InvalidSuppression {
                index,
                message: "justification must not be empty".into(),
            });
        }
        if let Err(e) = s.matcher() {
            return Err(ReportError::InvalidSuppression {
                index,
                message: format!("bad subject pattern: {e}"),
            });
        }
    }
    Ok(entries)
}

/// Moves matching findings to the suppressed lists, records suppressions
/// that matched nothing as stale and recomputes the summary.
pub fn apply_suppressions(mut report: Report, suppressions: &[Suppression]) -> Report {
    let mut used = vec![false; suppressions.len()];
    let mut split = |findings: Vec<Finding>, suppressed: &mut Vec<SuppressedFinding>| {
        let mut visible = Vec::new();
        for f in findings {
            let mut reasons = Vec::new();
            for (i, s) in suppressions.iter().enumerate() {
                if s.matches(&f) {
                    used[i] = true;
                    reasons.push(s.justification.clone());
                }
            }
            if reasons.is_empty() {
                visible.push(f);
            } else {
                reasons.dedup();
                suppressed.push(SuppressedFinding {
                    finding: f,
                    justifications: reasons,
                });
            }
        }
        visible
    };
    for a in &mut report.applications {
        let findings = std::mem::take(&mut a.findings);
        a.findings = split(findings, &mut a.suppressed);
    }
    let cluster = std::mem::take(&mut report.cluster_findings);
    report.cluster_findings = split(cluster, &mut report.suppressed_cluster_findings);
    report.stale_suppressions.extend(
        suppressions
            .iter()
            .zip(&used)
            .filter(|(_, u)| !**u)
            .map(|(s, _)| s.clone()),
    );
    report.summary = aggregate(&report.applications, &report.cluster_findings);
    report
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Json,
    Text,
}

impl FromStr for Format {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(Format::Json),
            "text" => Ok(Format::Text),
            other => Err(ReportError::UnknownFormat(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rendered {
    pub bytes: Vec<u8>,
    pub exit_code: i32,
}

/// Renders the report. JSON objects have sorted keys, so identical inputs
/// give identical bytes.
pub fn render(report: &Report, format: Format) -> Rendered {
    let text = match format {
        Format::Json => {
            let value = serde_json::to_value(report).expect("report serializes");
            let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
            s.push('\n');
            s
        }
        Format::Text => render_text(report),
    };
    Rendered {
        bytes: text.into_bytes(),
        exit_code: report.exit_code(),
    }
}

fn render_text(report: &Report) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "netmisconf {} report", report.tool_version);
    if let Some(ts) = &report.generated_at {
        let _ = writeln!(s, "generated at {ts}");
    }
    s.push('\n');
    summary_table(&mut s, &report.summary);

    for app in &report.applications {
        let _ = writeln!(s, "\n== {} ==", app.application_id);
        if app.findings.is_empty() {
            s.push_str("no findings\n");
        }
        for f in &app.findings {
            finding_text(&mut s, f);
        }
        rollup_undeclared(&mut s, &app.findings);
        for sf in &app.suppressed {
            let _ = writeln!(
                s,
                "suppressed [{}] {}: {}",
                sf.finding.rule,
                subjects_text(&sf.finding),
                sf.justifications.join("; ")
            );
        }
        for sk in &app.skipped_rules {
            let _ = writeln!(s, "{} {}", sk.rule, sk.reason);
        }
        for d in &app.diagnostics {
            let _ = writeln!(s, "note: {d}");
        }
        if !app.unanalyzed_resources.is_empty() {
            let _ = writeln!(
                s,
                "not analyzed: {}",
                app.unanalyzed_resources.join(", ")
            );
        }
    }

    if !report.cluster_findings.is_empty() || !report.suppressed_cluster_findings.is_empty() {
        s.push_str("\n== cluster ==\n");
        for f in &report.cluster_findings {
            finding_text(&mut s, f);
        }
        for sf in &report.suppressed_cluster_findings {
            let _ = writeln!(
                s,
                "suppressed [{}] {}: {}",
                sf.finding.rule,
                subjects_text(&sf.finding),
                sf.justifications.join("; ")
            );
        }
    }

    if let Some(exposure) = &report.exposure {
        s.push_str("\n== residual exposure ==\n");
        if exposure.is_empty() {
            s.push_str("no implicated port is reachable\n");
        }
        for e in exposure {
            let via = match &e.via {
                Via::DirectPod => "pod".to_string(),
                Via::Service { service } => format!("service {service}"),
            };
            let _ = writeln!(
                s,
                "{} {}/{} via {via}{}",
                e.unit_id,
                e.port,
                e.protocol,
                if e.approximated { " (approximate: ipBlock)" } else { "" }
            );
        }
    }

    for st in &report.stale_suppressions {
        let _ = writeln!(
            s,
            "warning: suppression {} {} matched no finding",
            st.rule, st.subject
        );
    }
    s
}

fn subjects_text(f: &Finding) -> String {
    f.subjects
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}

fn finding_text(s: &mut String, f: &Finding) {
    let severity = match f.severity {
        crate::model::Severity::Low => "low",
        crate::model::Severity::Medium => "medium",
        crate::model::Severity::High => "high",
    };
    let _ = writeln!(s, "[{}] {} ({severity}): {}", f.rule, f.rule.title(), subjects_text(f));
    let _ = writeln!(s, "    {}", f.message);
    let _ = writeln!(s, "    attacks: {}", f.possible_attacks.join(", "));
    let _ = writeln!(s, "    fix: {}", f.mitigation_hint);
}

/// One line per unit listing all its undeclared ports.
fn rollup_undeclared(s: &mut String, findings: &[Finding]) {
    let mut per_unit: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for f in findings {
        if let Evidence::UndeclaredPort { protocol, port, .. } = &f.evidence {
            per_unit
                .entry(f.subjects[0].to_string())
                .or_default()
                .push(format!("{port}/{protocol}"));
        }
    }
    for (unit, ports) in per_unit {
        let _ = writeln!(s, "undeclared ports on {unit}: {}", ports.join(", "));
    }
}

fn summary_table(s: &mut String, summary: &Summary) {
    let width = summary
        .rows
        .iter()
        .map(|r| r.application_id.len())
        .chain(["application".len()])
        .max()
        .unwrap_or(11);
    let _ = write!(s, "{:<width$}", "application");
    for r in RuleId::ALL {
        let _ = write!(s, " {:>4}", r.as_str());
    }
    s.push_str(" total\n");
    for row in &summary.rows {
        let _ = write!(s, "{:<width$}", row.application_id);
        for r in RuleId::ALL {
            let _ = write!(s, " {:>4}", row.counts.get(&r).copied().unwrap_or(0));
        }
        let _ = writeln!(s, " {:>5}", row.total);
    }
    let _ = write!(s, "{:<width$}", "total");
    for r in RuleId::ALL {
        let _ = write!(s, " {:>4}", summary.totals.get(&r).copied().unwrap_or(0));
    }
    let _ = writeln!(s, " {:>5}", summary.total_findings);
    let _ = writeln!(
        s,
        "affected applications: {}/{}",
        summary.affected_applications, summary.total_applications
    );
}
