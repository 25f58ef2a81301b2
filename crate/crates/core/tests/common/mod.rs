#![allow(dead_code)]

pub mod oracle;
pub mod synth;

use std::path::{Path, PathBuf};

use netmisconf::ingest::{normalize, parse_manifests};
use netmisconf::model::{ApplicationBundle, Finding, RuleId};
use netmisconf::rules::{analyze_application, ApplicationAnalysis, RuleContext, RuntimeData};
use netmisconf::snapshot::RuntimeSnapshot;

pub fn fixture(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(rel)
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn load_bundle(dir: &Path, app: &str) -> ApplicationBundle {
    let resources = parse_manifests(&read(&dir.join("manifest.yaml"))).expect("manifest parses");
    normalize(&resources, app).expect("manifest normalizes")
}

pub fn load_runtime(dir: &Path, bundle: &ApplicationBundle) -> Option<RuntimeData> {
    let first = dir.join("run-1.json");
    if !first.exists() {
        return None;
    }
    let s1 = RuntimeSnapshot::from_document(&read(&first)).expect("run 1 parses");
    let second = dir.join("run-2.json");
    let s2 = second
        .exists()
        .then(|| RuntimeSnapshot::from_document(&read(&second)).expect("run 2 parses"));
    Some(RuntimeData::new(bundle, s1, s2).expect("snapshots match bundle"))
}

pub fn analyze_dir(dir: &Path, app: &str) -> (ApplicationBundle, ApplicationAnalysis) {
    let bundle = load_bundle(dir, app);
    let runtime = load_runtime(dir, &bundle);
    let mut ctx = RuleContext::new(&bundle);
    if let Some(rt) = runtime.as_ref() {
        ctx = ctx.with_runtime(rt);
    }
    let analysis = analyze_application(&ctx);
    (bundle, analysis)
}

/// Sorted rule ids, one entry per finding.
pub fn rule_multiset(findings: &[Finding]) -> Vec<RuleId> {
    let mut v: Vec<RuleId> = findings.iter().map(|f| f.rule).collect();
    v.sort();
    v
}
