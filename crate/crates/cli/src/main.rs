use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use netmisconf::ingest::{
    count_policies, normalize, parse_manifests, parse_override, ChartRenderer, RawResource,
    DEFAULT_NETPOL_ENABLE_KEY,
};
use netmisconf::model::{ApplicationBundle, LabelSet, PortRange, WorkloadKind};
use netmisconf::netpol::{residual_exposure, AttackerPlacement};
use netmisconf::report::{apply_suppressions, load_suppressions, render, Format, Report};
use netmisconf::rules::{
    analyze_application, detect_m4_star, ApplicationAnalysis, RuleContext, RuntimeData,
};
use netmisconf::snapshot::{
    parse_socket_listing, ListingFormat, PodObservation, RuntimeSnapshot, UnitRef,
};

#[derive(Parser)]
#[command(name = "netmisconf", version, about = "Find network misconfigurations in Kubernetes applications")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analyze one application.
    Analyze(AnalyzeArgs),
    /// Analyze several co-deployed applications, including cross-application collisions.
    Cluster(ClusterArgs),
    /// List misconfigured ports still reachable from an in-cluster pod.
    Reachability(ReachabilityArgs),
    /// Snapshot helpers.
    #[command(subcommand)]
    Snapshot(SnapshotCommand),
}

#[derive(Args)]
struct RenderOpts {
    /// Chart renderer binary.
    #[arg(long, default_value = "helm")]
    renderer: String,
    /// Release name passed to the renderer.
    #[arg(long, default_value = "netmisconf")]
    release_name: String,
    /// Value override for chart rendering (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Value that switches the chart's network policies on, used to tell
    /// missing policies from disabled ones.
    #[arg(long, default_value = DEFAULT_NETPOL_ENABLE_KEY)]
    netpol_enable_key: String,
}

#[derive(Args)]
struct OutputOpts {
    /// Report format
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    format: OutputFormat,
    /// Suppression file: a list of {rule, subject, justification}.
    #[arg(long)]
    suppress: Option<PathBuf>,
    /// Write the report here instead of standard output.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Include the generation time (makes output non-reproducible).
    #[arg(long)]
    timestamps: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum OutputFormat {
    Json,
    Text,
}

#[derive(Args)]
struct Source {
    /// Rendered manifest files or directories of them.
    #[arg(long, num_args = 1.., required_unless_present = "chart", conflicts_with = "chart")]
    manifests: Vec<PathBuf>,
    /// Chart directory, rendered with the configured renderer.
    #[arg(long)]
    chart: Option<PathBuf>,
    /// Application id; defaults to the chart or first manifest name.
    #[arg(long)]
    app_id: Option<String>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    source: Source,
    /// Snapshot of the first runtime iteration
    #[arg(long)]
    snapshot1: Option<PathBuf>,
    /// Snapshot of the second iteration, taken after a reinstall
    #[arg(long, requires = "snapshot1")]
    snapshot2: Option<PathBuf>,
    /// OS ephemeral port range, e.g. 32768-60999.
    #[arg(long, default_value = "32768-60999")]
    ephemeral_range: PortRange,
    #[command(flatten)]
    render: RenderOpts,
    #[command(flatten)]
    out: OutputOpts,
}

#[derive(Args)]
struct ClusterArgs {
    /// Application as ID=PATH, where PATH is a manifest file, a directory of
    /// manifests or a chart directory (repeatable).
    #[arg(long = "app", value_name = "ID=PATH", required = true)]
    apps: Vec<String>,
    /// Directory holding <id>-1.json and <id>-2.json snapshots.
    #[arg(long)]
    snapshots: Option<PathBuf>,
    /// OS ephemeral port range
    #[arg(long, default_value = "32768-60999")]
    ephemeral_range: PortRange,
    #[command(flatten)]
    render: RenderOpts,
    #[command(flatten)]
    out: OutputOpts,
}

#[derive(Args)]
struct ReachabilityArgs {
    #[command(flatten)]
    source: Source,
    /// Snapshot of the first runtime iteration (required)
    #[arg(long)]
    snapshot1: PathBuf,
    /// Snapshot of the second iteration
    #[arg(long)]
    snapshot2: Option<PathBuf>,
    /// Namespace of the assumed attacker pod; defaults to the target's.
    #[arg(long)]
    attacker_namespace: Option<String>,
    /// OS ephemeral port range
    #[arg(long, default_value = "32768-60999")]
    ephemeral_range: PortRange,
    #[command(flatten)]
    render: RenderOpts,
    #[command(flatten)]
    out: OutputOpts,
}

#[derive(Subcommand)]
enum SnapshotCommand {
    /// Convert a `netstat -tulpn` or `ss -tulpn` listing into a snapshot document.
    Parse(SnapshotParseArgs),
}

#[derive(Args)]
struct SnapshotParseArgs {
    /// Listing format: netstat or ss
    #[arg(long, value_parser = parse_listing_format)]
    format: ListingFormat,
    /// Listing captured inside the pod.
    file: PathBuf,
    /// Application the snapshot belongs to
    #[arg(long)]
    app_id: String,
    /// Iteration number, 1 or 2
    #[arg(long, default_value_t = 1)]
    iteration: u32,
    /// Pod name the listing was taken from.
    #[arg(long)]
    pod: String,
    /// Owning compute unit as Kind/namespace/name.
    #[arg(long, value_parser = parse_unit_ref)]
    unit: UnitRef,
    /// Listing taken on the node before installation (host baseline).
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Existing snapshot document to add this pod to.
    #[arg(long)]
    into: Option<PathBuf>,
    /// Write the document here instead of standard output
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn parse_listing_format(s: &str) -> Result<ListingFormat, String> {
    s.parse().map_err(|e: netmisconf::snapshot::SnapshotError| e.to_string())
}

fn parse_unit_ref(s: &str) -> Result<UnitRef, String> {
    let parts: Vec<&str> = s.split('/').collect();
    let [kind, namespace, name] = parts[..] else {
        return Err(format!("expected Kind/namespace/name, got `{s}`"));
    };
    let kind: WorkloadKind = kind.parse().map_err(|e| format!("{e}"))?;
    Ok(UnitRef {
        kind,
        name: name.to_string(),
        namespace: namespace.to_string(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Analyze(a) => analyze(a),
        Command::Cluster(c) => cluster(c),
        Command::Reachability(r) => reachability(r),
        Command::Snapshot(SnapshotCommand::Parse(p)) => snapshot_parse(p),
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn manifest_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files = Vec::new();
    for entry in fs::read_dir(path).with_context(|| format!("listing {}", path.display()))? {
        let p = entry?.path();
        if p.is_dir() {
            files.extend(manifest_files(&p)?);
        } else if matches!(p.extension().and_then(|e| e.to_str()), Some("yaml" | "yml")) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .or_else(|| path.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "app".to_string())
}

fn renderer(opts: &RenderOpts) -> Result<(ChartRenderer, Vec<(String, String)>)> {
    let overrides = opts
        .set
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        ChartRenderer {
            binary: opts.renderer.clone(),
            release_name: opts.release_name.clone(),
        },
        overrides,
    ))
}

fn load_manifests(paths: &[PathBuf]) -> Result<Vec<RawResource>> {
    let mut out = Vec::new();
    for p in paths {
        for f in manifest_files(p)? {
            let parsed = parse_manifests(&read(&f)?).with_context(|| format!("in {}", f.display()))?;
            out.extend(parsed);
        }
    }
    Ok(out)
}

fn load_chart(chart: &Path, app_id: &str, opts: &RenderOpts) -> Result<ApplicationBundle> {
    let (r, overrides) = renderer(opts)?;
    let text = r.render(chart, &overrides)?;
    let resources = parse_manifests(&text).context("in rendered chart")?;
    let bundle = normalize(&resources, app_id)?;
    let probe_count = if count_policies(&resources) == 0 {
        let probe = r.render_with_policies_enabled(chart, &overrides, &opts.netpol_enable_key)?;
        count_policies(&parse_manifests(&probe).context("in probe render")?)
    } else {
        0
    };
    Ok(bundle.with_policy_probe(probe_count))
}

fn load_source(source: &Source, opts: &RenderOpts) -> Result<ApplicationBundle> {
    if let Some(chart) = &source.chart {
        let app_id = source.app_id.clone().unwrap_or_else(|| stem(chart));
        return load_chart(chart, &app_id, opts);
    }
    let app_id = source
        .app_id
        .clone()
        .unwrap_or_else(|| stem(&source.manifests[0]));
    Ok(normalize(&load_manifests(&source.manifests)?, &app_id)?)
}

fn load_snapshot(path: &Path) -> Result<RuntimeSnapshot> {
    RuntimeSnapshot::from_document(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn runtime(
    bundle: &ApplicationBundle,
    first: Option<&Path>,
    second: Option<&Path>,
) -> Result<Option<RuntimeData>> {
    let Some(first) = first else {
        return Ok(None);
    };
    let s1 = load_snapshot(first)?;
    let s2 = second.map(load_snapshot).transpose()?;
    Ok(Some(RuntimeData::new(bundle, s1, s2)?))
}

fn analysis(bundle: &ApplicationBundle, rt: Option<&RuntimeData>, range: PortRange) -> ApplicationAnalysis {
    let mut ctx = RuleContext::new(bundle).with_ephemeral_range(range);
    if let Some(rt) = rt {
        ctx = ctx.with_runtime(rt);
    }
    analyze_application(&ctx)
}

fn emit(report: Report, out: &OutputOpts) -> Result<u8> {
    let mut report = report;
    if let Some(path) = &out.suppress {
        let sups = load_suppressions(&read(path)?).with_context(|| format!("in {}", path.display()))?;
        report = apply_suppressions(report, &sups);
    }
    if out.timestamps {
        report.generated_at = Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    }
    let format = match out.format {
        OutputFormat::Json => Format::Json,
        OutputFormat::Text => Format::Text,
    };
    let rendered = render(&report, format);
    match &out.output {
        Some(p) => fs::write(p, &rendered.bytes).with_context(|| format!("writing {}", p.display()))?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&rendered.bytes)?;
        }
    }
    Ok(u8::try_from(rendered.exit_code).unwrap_or(2))
}

fn analyze(a: AnalyzeArgs) -> Result<u8> {
    let bundle = load_source(&a.source, &a.render)?;
    let rt = runtime(&bundle, a.snapshot1.as_deref(), a.snapshot2.as_deref())?;
    let result = analysis(&bundle, rt.as_ref(), a.ephemeral_range);
    emit(Report::new(vec![result], Vec::new(), None), &a.out)
}

fn cluster(c: ClusterArgs) -> Result<u8> {
    let mut apps: BTreeMap<String, PathBuf> = BTreeMap::new();
    for spec in &c.apps {
        let (id, path) = spec
            .split_once('=')
            .ok_or_else(|| anyhow!("--app expects ID=PATH, got `{spec}`"))?;
        if apps.insert(id.to_string(), PathBuf::from(path)).is_some() {
            bail!("application `{id}` given twice");
        }
    }
    let mut bundles = Vec::new();
    for (id, path) in &apps {
        let bundle = if path.join("Chart.yaml").exists() {
            load_chart(path, id, &c.render)?
        } else {
            normalize(&load_manifests(std::slice::from_ref(path))?, id)?
        };
        bundles.push(bundle);
    }
    let mut analyses = Vec::new();
    for bundle in &bundles {
        let (first, second) = match &c.snapshots {
            Some(dir) => {
                let f = dir.join(format!("{}-1.json", bundle.application_id));
                let s = dir.join(format!("{}-2.json", bundle.application_id));
                (f.exists().then_some(f), s.exists().then_some(s))
            }
            None => (None, None),
        };
        let rt = runtime(bundle, first.as_deref(), second.as_deref())?;
        analyses.push(analysis(bundle, rt.as_ref(), c.ephemeral_range));
    }
    let refs: Vec<&ApplicationBundle> = bundles.iter().collect();
    let global = detect_m4_star(&refs);
    emit(Report::new(analyses, global, None), &c.out)
}

fn reachability(r: ReachabilityArgs) -> Result<u8> {
    let bundle = load_source(&r.source, &r.render)?;
    let rt = runtime(&bundle, Some(&r.snapshot1), r.snapshot2.as_deref())?
        .expect("first snapshot is required");
    let result = analysis(&bundle, Some(&rt), r.ephemeral_range);
    let attacker = AttackerPlacement {
        namespace: r.attacker_namespace.clone(),
        labels: LabelSet::new(),
    };
    let exposure = residual_exposure(&bundle, &result.findings, Some(&rt), &attacker)?;
    emit(Report::new(vec![result], Vec::new(), Some(exposure)), &r.out)
}

fn snapshot_parse(p: SnapshotParseArgs) -> Result<u8> {
    let sockets = parse_socket_listing(&read(&p.file)?, p.format)
        .with_context(|| format!("in {}", p.file.display()))?;
    let mut snap = match &p.into {
        Some(path) if path.exists() => load_snapshot(path)?,
        _ => RuntimeSnapshot::new(&p.app_id, p.iteration),
    };
    if snap.application_id != p.app_id || snap.iteration != p.iteration {
        bail!(
            "existing snapshot is for {} iteration {}, not {} iteration {}",
            snap.application_id,
            snap.iteration,
            p.app_id,
            p.iteration
        );
    }
    if let Some(b) = &p.baseline {
        snap.host_baseline = parse_socket_listing(&read(b)?, p.format)
            .with_context(|| format!("in {}", b.display()))?;
        snap.host_baseline.sort();
        snap.host_baseline.dedup();
    }
    snap.observations.retain(|o| o.pod_name != p.pod);
    let mut sockets = sockets;
    sockets.sort();
    sockets.dedup();
    snap.observations.push(PodObservation {
        pod_name: p.pod.clone(),
        owner: p.unit.clone(),
        sockets,
    });
    snap.observations.sort_by(|a, b| a.pod_name.cmp(&b.pod_name));
    snap.validate()?;
    let doc = snap.to_document();
    match p.output.as_ref().or(p.into.as_ref()) {
        Some(path) => fs::write(path, doc).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{doc}"),
    }
    Ok(0)
}
