//! `bletrack`: calibrate, simulate, plan and run the detection pipeline.

mod config;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use bletrack_core::power::{self, BatteryModel};
use bletrack_core::preset::Preset;
use bletrack_core::protocol::{
    self, BeaconRegistry, DetectionRecord, DetectionStore, ProtocolError, ReceiverId,
};
use bletrack_core::rf_model::{self, RfError};
use bletrack_core::roadplan::{self, PlanError, Road, SitingConfig};
use bletrack_core::sim::{self, Mount, SearchGrid, TargetMatrix, TrialMatrixSpec};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use config::{pick, RunConfig};

#[derive(Parser)]
#[command(name = "bletrack", version, about = "Roadside BLE beacon tracking toolkit")]
struct Cli {
    /// Run configuration (TOML); flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for simulation and calibration.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the path-loss exponent to RSSI samples and the scan duty to the field-test bands; write a preset.
    Calibrate(CalibrateArgs),
    /// Simulate a speed x interval trial matrix.
    Matrix(MatrixArgs),
    /// Site beacons along a road and write the plan as GeoJSON.
    Plan(PlanArgs),
    /// Print the speed-to-interval guide, published or derived.
    Guide(GuideArgs),
    /// Decode received SMS segments into the detection store.
    Ingest(IngestArgs),
    /// Encode detection records as SMS segments.
    Encode(EncodeArgs),
    /// Decode SMS segments into detection records.
    Decode(DecodeArgs),
    /// Export the detection store as GeoJSON.
    Export(ExportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum MountArg {
    WheelArch,
    Bonnet,
}

impl From<MountArg> for Mount {
    fn from(m: MountArg) -> Mount {
        match m {
            MountArg::WheelArch => Mount::WheelArch,
            MountArg::Bonnet => Mount::Bonnet,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Csv,
}

#[derive(Args)]
struct CalibrateArgs {
    /// RSSI samples: distance_m,rssi_dbm[,materials]
    #[arg(long)]
    rssi: Option<PathBuf>,
    /// Starting preset (name or file).
    #[arg(long)]
    preset: Option<String>,
    /// Name written into the output preset.
    #[arg(long)]
    name: Option<String>,
    /// Wheel-arch band targets (CSV); defaults to the bundled field test.
    #[arg(long)]
    wheel_arch_targets: Option<PathBuf>,
    /// Bonnet band targets (CSV); defaults to the bundled field test.
    #[arg(long)]
    bonnet_targets: Option<PathBuf>,
    /// Output preset file.
    #[arg(long, short)]
    out: PathBuf,
    /// Residual report; stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MatrixArgs {
    #[arg(long, value_enum, default_value = "wheel-arch")]
    mount: MountArg,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<u32>,
    /// Comma-separated speeds in mph.
    #[arg(long, value_delimiter = ',')]
    speeds: Option<Vec<f64>>,
    /// Comma-separated intervals in ms.
    #[arg(long, value_delimiter = ',')]
    intervals: Option<Vec<f64>>,
    /// Also write the cells as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PlanArgs {
    /// Road as a GeoJSON LineString.
    #[arg(long)]
    road: Option<PathBuf>,
    #[arg(long)]
    budget: usize,
    #[arg(long, default_value_t = roadplan::DEFAULT_MAX_SPACING_M)]
    spacing: f64,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum, default_value = "wheel-arch")]
    mount: MountArg,
    /// Tolerated lateral acceleration, m/s^2.
    #[arg(long, default_value_t = roadplan::DEFAULT_LATERAL_ACCEL)]
    a_lat: f64,
    #[arg(long, default_value_t = bletrack_core::preset::DEFAULT_LATERAL_OFFSET_M)]
    offset: f64,
    /// Plan GeoJSON output.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write a beacon registry CSV.
    #[arg(long)]
    registry: Option<PathBuf>,
}

#[derive(Args)]
struct GuideArgs {
    /// Derive the guide from the detection model at this reliability instead
    /// of printing the published one.
    #[arg(long)]
    reliability: Option<f64>,
    #[arg(long)]
    preset: Option<String>,
    #[arg(long, value_enum, default_value = "wheel-arch")]
    mount: MountArg,
    #[arg(long, value_delimiter = ',')]
    speeds: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IngestArgs {
    /// Raw segments, one per line; stdin when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long)]
    store: Option<PathBuf>,
    /// Arrival time for lines without a `<unix>\t` prefix (RFC 3339 or unix seconds).
    #[arg(long)]
    received_at: Option<String>,
    /// Write the whole store as GeoJSON after merging.
    #[arg(long)]
    geojson: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    #[arg(long)]
    receiver: String,
    /// Records: beacon_id,count,first_seen; stdin when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Segments, one per line; stdin when omitted.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    store: Option<PathBuf>,
    /// Re-resolve quarantined beacons against this registry first.
    #[arg(long)]
    registry: Option<PathBuf>,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

/// Exit 2 for bad input or configuration, 1 when the model cannot deliver.
enum Failure {
    Usage(anyhow::Error),
    Model(anyhow::Error),
}

trait Classify<T> {
    fn usage(self) -> Result<T, Failure>;
    fn model(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Classify<T> for Result<T, E> {
    fn usage(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Usage(e.into()))
    }
    fn model(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Model(e.into()))
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Model(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("usage error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Outcome {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).usage()?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.threads.or(cfg.run.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().usage()?;
    }
    match cli.command {
        Command::Calibrate(a) => calibrate(&cfg, a),
        Command::Matrix(a) => matrix(&cfg, a),
        Command::Plan(a) => plan(&cfg, a),
        Command::Guide(a) => guide(&cfg, a),
        Command::Ingest(a) => ingest(&cfg, a),
        Command::Encode(a) => encode(&cfg, a),
        Command::Decode(a) => decode(&cfg, a),
        Command::Export(a) => export(&cfg, a),
    }
}

fn emit(cfg: &RunConfig, path: Option<&Path>, content: &str) -> Outcome {
    match path {
        Some(p) => {
            let p = cfg.output(p);
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).usage()?;
            }
            std::fs::write(&p, content).with_context(|| format!("writing {}", p.display())).usage()
        }
        None => {
            print!("{content}");
            Ok(())
        }
    }
}

fn read_input(path: Option<&Path>) -> Result<String, Failure> {
    let mut text = String::new();
    match path {
        Some(p) => text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())).usage()?,
        None => {
            std::io::stdin().read_to_string(&mut text).context("reading stdin").usage()?;
        }
    }
    Ok(text)
}

fn load_preset(name: &str) -> Result<Preset, Failure> {
    Preset::resolve(name).with_context(|| format!("preset `{name}`")).usage()
}

fn calibrate(cfg: &RunConfig, a: CalibrateArgs) -> Outcome {
    let rssi = pick(a.rssi, &cfg.paths.rssi, "RSSI sample file").usage()?;
    let base = load_preset(&cfg.preset(a.preset))?;
    let file = std::fs::File::open(&rssi).with_context(|| format!("opening {}", rssi.display())).usage()?;
    let samples = rf_model::read_samples_csv(file).usage()?;
    if samples.is_empty() {
        return Err(Failure::Usage(anyhow!("{} has no samples", rssi.display())));
    }
    let pl = &base.path_loss;
    let fit = match rf_model::fit_exponent_with(&samples, pl.rssi_ref, pl.reliability_threshold, pl.attenuation) {
        Err(e @ RfError::SingularFit) => return Err(Failure::Model(e.into())),
        other => other.usage()?,
    };
    let mut preset = base.clone();
    preset.path_loss = fit.model;
    if let Some(name) = a.name {
        preset.name = name;
    }

    let targets = vec![
        match &a.wheel_arch_targets {
            Some(p) => TargetMatrix::parse(Mount::WheelArch, &read_input(Some(p))?).usage()?,
            None => TargetMatrix::wheel_arch(),
        },
        match &a.bonnet_targets {
            Some(p) => TargetMatrix::parse(Mount::Bonnet, &read_input(Some(p))?).usage()?,
            None => TargetMatrix::bonnet(),
        },
    ];
    let result = sim::calibrate(&preset, &targets, &SearchGrid::default(), &cfg.bands()).model()?;
    let tuned = result.apply(&preset);
    emit(cfg, Some(&a.out), &tuned.to_toml().usage()?)?;

    let mut report = format!(
        "# calibrate preset={} samples={}\nexponent = {:.6}\nexponent_stderr = {:.6}\nrms_residual_db = {:.4}\n",
        base.name,
        samples.len(),
        tuned.path_loss.exponent,
        fit.stderr,
        fit.rms_residual
    );
    report.push_str(&result.report());
    emit(cfg, a.report.as_deref(), &report)
}

fn matrix(cfg: &RunConfig, a: MatrixArgs) -> Outcome {
    let preset = load_preset(&cfg.preset(a.preset))?;
    let seed = cfg.seed(a.seed);
    let mut spec = match Mount::from(a.mount) {
        Mount::WheelArch => TrialMatrixSpec::wheel_arch(seed),
        Mount::Bonnet => TrialMatrixSpec::bonnet(seed),
    };
    if let Some(s) = a.speeds {
        spec.speeds_mph = s;
    }
    if let Some(i) = a.intervals {
        spec.intervals_ms = i;
    }
    if let Some(t) = a.trials {
        spec.trials_per_cell = t;
    }
    let result = sim::run_matrix(&spec, &preset).usage()?;
    let text = format!(
        "# matrix mount={} preset={} seed={} trials_per_cell={}\n{}",
        spec.mount,
        preset.name,
        seed,
        spec.trials_per_cell,
        result.to_text()
    );
    if let Some(p) = &a.csv {
        emit(cfg, Some(p), &result.to_csv())?;
    }
    emit(cfg, a.out.as_deref(), &text)
}

fn plan(cfg: &RunConfig, a: PlanArgs) -> Outcome {
    let road_path = pick(a.road, &cfg.paths.road, "road").usage()?;
    let road = Road::from_geojson(&read_input(Some(&road_path))?).usage()?;
    let mut siting = SitingConfig::new(a.spacing, a.budget);
    siting.a_lat_max = a.a_lat;
    siting.offset_m = a.offset;
    siting.preset_name = cfg.preset(a.preset);
    let plan = match roadplan::plan_deployment(&road, &siting, a.mount.into()) {
        Ok(p) => p,
        Err(e @ (PlanError::Power(_) | PlanError::Sim(_))) => return Err(Failure::Model(e.into())),
        Err(e) => return Err(Failure::Usage(e.into())),
    };
    emit(cfg, Some(&a.out), &plan.to_geojson())?;
    if let Some(r) = &a.registry {
        emit(cfg, Some(r), &plan.registry_csv())?;
    }
    emit(cfg, None, &plan.summary())
}

fn guide(cfg: &RunConfig, a: GuideArgs) -> Outcome {
    let (rows, header) = match a.reliability {
        None => (power::field_guide(), "# guide source=published".to_string()),
        Some(r) => {
            let preset = load_preset(&cfg.preset(a.preset))?;
            let speeds = a.speeds.unwrap_or_else(|| power::FIELD_GUIDE.iter().map(|&(s, _)| f64::from(s)).collect());
            let rows = match power::derive_guide(r, &speeds, &preset, a.mount.into(), &BatteryModel::default()) {
                Err(e @ (power::PowerError::BadTarget(_) | power::PowerError::NonPositiveSpeed(_))) => {
                    return Err(Failure::Usage(e.into()))
                }
                other => other.model()?,
            };
            let mount: Mount = a.mount.into();
            (rows, format!("# guide source=derived reliability={r} mount={mount} preset={}", preset.name))
        }
    };
    let body = match a.format {
        Format::Csv => power::guide_csv(&rows),
        Format::Text => format!("{header}\n{}", power::guide_text(&rows)),
    };
    emit(cfg, a.out.as_deref(), &body)?;
    let infeasible: Vec<String> = rows.iter().filter(|r| !r.feasible).map(|r| r.max_speed_mph.to_string()).collect();
    if !infeasible.is_empty() {
        return Err(Failure::Model(anyhow!("no interval meets the target at {} mph", infeasible.join(", "))));
    }
    Ok(())
}

fn parse_time(s: &str) -> anyhow::Result<DateTime<Utc>> {
    if let Ok(unix) = s.trim().parse::<i64>() {
        return DateTime::from_timestamp(unix, 0).ok_or_else(|| anyhow!("timestamp {unix} out of range"));
    }
    Ok(DateTime::parse_from_rfc3339(s.trim()).with_context(|| format!("bad timestamp `{s}`"))?.with_timezone(&Utc))
}

/// Segments of one message, collected until every index has arrived.
#[derive(Default)]
struct Pending {
    segments: Vec<String>,
    indices: BTreeMap<u32, String>,
    total: u32,
    latest: Option<DateTime<Utc>>,
}

fn segment_position(seg: &str) -> Option<(String, u32, u32, String)> {
    let mut f = seg.splitn(4, '|');
    let (_, rx, pos, body) = (f.next()?, f.next()?, f.next()?, f.next()?);
    let (i, t) = pos.split_once('/')?;
    Some((rx.to_string(), i.parse().ok()?, t.parse().ok()?, body.to_string()))
}

fn ingest(cfg: &RunConfig, a: IngestArgs) -> Outcome {
    let registry_path = pick(a.registry, &cfg.paths.registry, "registry").usage()?;
    let store_path = cfg.output(&pick(a.store, &cfg.paths.store, "store").usage()?);
    let registry = BeaconRegistry::load(&registry_path).with_context(|| format!("registry {}", registry_path.display())).usage()?;
    let default_time = a.received_at.as_deref().map(parse_time).transpose().usage()?;
    let mut store = DetectionStore::load(&store_path).usage()?;

    let text = read_input(a.input.as_deref())?;
    let mut pending: BTreeMap<String, Pending> = BTreeMap::new();
    let mut done: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut messages: Vec<(Vec<String>, DateTime<Utc>)> = Vec::new();
    for (n, line) in BufReader::new(text.as_bytes()).lines().enumerate() {
        let line = line.usage()?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let (at, seg) = match line.split_once('\t') {
            Some((t, s)) => (parse_time(t).with_context(|| format!("line {}", n + 1)).usage()?, s),
            None => match default_time {
                Some(t) => (t, line),
                None => {
                    return Err(Failure::Usage(anyhow!("line {}: no arrival time; prefix `<unix>\\t` or pass --received-at", n + 1)))
                }
            },
        };
        let Some((rx, idx, total, body)) = segment_position(seg) else {
            eprintln!("line {}: skipped malformed segment", n + 1);
            continue;
        };
        if done.get(&rx).is_some_and(|prev| prev.iter().any(|s| s == seg)) {
            continue;
        }
        let entry = pending.entry(rx.clone()).or_default();
        let clash = entry.total != 0 && (entry.total != total || entry.indices.get(&idx).is_some_and(|b| *b != body));
        if clash {
            let old = std::mem::take(entry);
            messages.push((old.segments, old.latest.expect("pending has a time")));
        }
        if let std::collections::btree_map::Entry::Vacant(slot) = entry.indices.entry(idx) {
            slot.insert(body);
            entry.segments.push(seg.to_string());
        }
        entry.total = total;
        entry.latest = Some(entry.latest.map_or(at, |l| l.max(at)));
        if entry.indices.len() as u32 == total {
            let full = pending.remove(&rx).expect("entry exists");
            done.insert(rx, full.segments.clone());
            messages.push((full.segments, full.latest.expect("pending has a time")));
        }
    }
    messages.extend(pending.into_values().map(|p| (p.segments, p.latest.expect("pending has a time"))));

    let mut added = Vec::new();
    for (segments, at) in messages {
        let msg = match protocol::decode_sms(&segments) {
            Ok(m) => m,
            Err(e) => {
                eprintln!("skipped message: {e}");
                continue;
            }
        };
        for d in &msg.diagnostics {
            eprintln!("{}: {d}", msg.receiver_id);
        }
        if !msg.missing.is_empty() {
            eprintln!("{}: partial message, missing segments {:?}", msg.receiver_id, msg.missing);
        }
        added.extend(protocol::merge_detections(&mut store, &msg.receiver_id, &msg.records, &registry, at).added);
    }
    DetectionStore::append(&store_path, &added).usage()?;
    if let Some(g) = &a.geojson {
        emit(cfg, Some(g), &store.to_geojson())?;
    }
    emit(cfg, None, &format!("merged {} new events\n{}", added.len(), store.summary()))
}

#[derive(Deserialize)]
struct RecordRow {
    beacon_id: String,
    count: u32,
    first_seen: u32,
}

fn encode(cfg: &RunConfig, a: EncodeArgs) -> Outcome {
    let rx = ReceiverId::new(&a.receiver).usage()?;
    let text = read_input(a.input.as_deref())?;
    let mut records = Vec::new();
    for row in csv::Reader::from_reader(text.as_bytes()).deserialize::<RecordRow>() {
        let row = row.usage()?;
        if row.count == 0 {
            return Err(Failure::Usage(anyhow!("{}: count must be at least 1", row.beacon_id)));
        }
        records.push(DetectionRecord { beacon: row.beacon_id.parse().usage()?, first_seen: row.first_seen, count: row.count });
    }
    let segments = match protocol::encode_sms_wire(&rx, &records) {
        Err(e @ ProtocolError::EmptyPayload) => return Err(Failure::Usage(e.into())),
        other => other.model()?,
    };
    emit(cfg, a.out.as_deref(), &(segments.join("\n") + "\n"))
}

fn decode(cfg: &RunConfig, a: DecodeArgs) -> Outcome {
    let text = read_input(a.input.as_deref())?;
    let segments: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    let msg = protocol::decode_sms(&segments).model()?;
    for d in &msg.diagnostics {
        eprintln!("{d}");
    }
    let mut out = format!("# receiver={} complete={}\n", msg.receiver_id, msg.is_complete());
    if !msg.missing.is_empty() {
        let missing: Vec<String> = msg.missing.iter().map(u32::to_string).collect();
        out.push_str(&format!("# missing={}\n", missing.join(",")));
    }
    out.push_str("beacon_id,count,first_seen\n");
    for r in &msg.records {
        out.push_str(&format!("{},{},{}\n", r.beacon, r.count, r.first_seen));
    }
    emit(cfg, a.out.as_deref(), &out)
}

fn export(cfg: &RunConfig, a: ExportArgs) -> Outcome {
    let store_path = cfg.output(&pick(a.store, &cfg.paths.store, "store").usage()?);
    if !store_path.exists() {
        return Err(Failure::Usage(anyhow!("store {} does not exist", store_path.display())));
    }
    let mut store = DetectionStore::load(&store_path).usage()?;
    if let Some(r) = a.registry.or_else(|| cfg.paths.registry.clone()) {
        let registry = BeaconRegistry::load(&r).usage()?;
        let released = store.release_quarantine(&registry);
        if !released.is_empty() {
            eprintln!("resolved {} quarantined events", released.len());
        }
    }
    emit(cfg, a.out.as_deref(), &store.to_geojson())
}
