//! The `roadscope` command line.
//!
//! Every subcommand works inside a workspace directory with the fixed
//! layout of [`Workspace`]. Settings come from built-in defaults, then an
//! optional JSON config file (`--config`), then flags. The resolved config
//! is echoed to `config.resolved.json` and its SHA-256 digest is stamped
//! into manifests, tiles, masks, models and reports. Each invocation
//! appends to `logs/run.jsonl`.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::dataset_builder::{read_manifest, Manifest, Split, MANIFEST_SCHEMA_VERSION};
use crate::diagnostics::{
    cam, cam_locality, compute_metrics, emit_report, evaluate_dataset, render_report, resize_mask,
    run_masking_experiment, run_transfer_experiment, upsample_bilinear, MetricsRow, ReportFormat, ReportMeta, Run,
};
use crate::error::{Error, Result};
use crate::imageio::{read_png, write_png, PixelFormat};
use crate::maskgen::{read_mask_png, MaskMode};
use crate::nn::embed::{run_echo_backend, EchoFaults, EmbedBackend, PROTOCOL};
use crate::nn::io::{load_model, save_model, MODEL_SCHEMA_VERSION};
use crate::nn::train::fit_with;
use crate::nn::{Dataset, Model, ModelSpec, TrainConfig};
use crate::osm_ingest::{parse_roads_with, read_road_table, write_road_table, RoadClass, RoadRecord, TagTable};
use crate::pipeline::{
    build_dataset, build_synth_corpus, read_tile, sample_roads, split_indices, tile_to_input, write_masks,
    BuildConfig, Provenance, Workspace,
};
use crate::raster_store::{open_scene_dir, SCENE_METADATA};
use crate::sampler::SamplePoint;
use crate::synth::{SignalLocation, SynthConfig};

pub const RUN_LOG_VERSION: u32 = 1;
pub const ROAD_TABLE_VERSION: u32 = 1;
pub const REPORT_VERSION: u32 = 1;
pub const SCENE_CONTAINER_VERSION: u32 = 1;

const SAMPLES_FILE: &str = "samples.jsonl";
/// Saved metric rows that `report` re-renders.
const RESULTS_SUFFIX: &str = ".results.json";

/// Everything a run can be configured with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; copied into `train.seed` and `synth.seed` on resolve.
    pub seed: u64,
    /// Worker threads for data stages; 0 picks the machine's core count.
    pub threads: usize,
    pub build: BuildConfig,
    pub train: TrainConfig,
    pub tag_table: TagTable,
    pub synth: SynthConfig,
    /// Hidden width of the head trained on external embeddings.
    pub embed_hidden: usize,
    /// Seconds to wait for each external embedding.
    pub embed_timeout_s: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threads: 0,
            build: BuildConfig::default(),
            train: TrainConfig::default(),
            tag_table: TagTable::default(),
            synth: SynthConfig::default(),
            embed_hidden: 64,
            embed_timeout_s: 30.0,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(Error::io(path))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn resolve(mut self) -> Result<RunConfig> {
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.build.test_ratio) {
            return Err(Error::Config("build.test_ratio must lie in [0, 1)".into()));
        }
        if self.build.tile_size == 0 || !(self.build.spacing_m > 0.0) || !(self.build.min_separation_m >= 0.0) {
            return Err(Error::Config("build.tile_size and build.spacing_m must be positive".into()));
        }
        Ok(self)
    }

    /// Hex SHA-256 of the canonical JSON serialization. `threads` is left
    /// out: it never changes an output byte.
    pub fn digest(&self) -> String {
        let canonical = RunConfig { threads: 0, ..self.clone() };
        hex::encode(Sha256::digest(serde_json::to_vec(&canonical).expect("config serializes")))
    }
}

#[derive(Debug, Parser)]
#[command(name = "roadscope", about = "Road-quality tile pipeline and diagnostics", disable_version_flag = true)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for data stages (1 reproduces parallel output exactly).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Print crate and file-format versions.
    #[arg(long)]
    version: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Args, Clone)]
struct WsArg {
    /// Workspace directory.
    #[arg(long, short = 'w', default_value = "ws")]
    workspace: PathBuf,
}

#[derive(Debug, Args, Clone)]
struct TrainFlags {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    input_size: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Parse GeoJSON roads into road tables under roads/.
    Ingest {
        #[command(flatten)]
        ws: WsArg,
        /// GeoJSON FeatureCollection files.
        #[arg(long, required = true)]
        geojson: Vec<PathBuf>,
    },
    /// Place tile centers along every road.
    Sample {
        #[command(flatten)]
        ws: WsArg,
        #[arg(long)]
        spacing: Option<f64>,
        #[arg(long)]
        min_separation: Option<f64>,
    },
    /// Extract, filter, balance and split tiles into a manifest.
    BuildDataset {
        #[command(flatten)]
        ws: WsArg,
        #[arg(long, default_value = "dataset")]
        name: String,
        #[arg(long)]
        tile_size: Option<usize>,
        #[arg(long)]
        per_class: Option<usize>,
        #[arg(long)]
        test_ratio: Option<f64>,
    },
    /// Write road masks for every manifest entry.
    Mask {
        #[command(flatten)]
        ws: WsArg,
        #[arg(long, default_value = "dataset")]
        name: String,
    },
    /// Train a model on a manifest's train split.
    Train {
        #[command(flatten)]
        ws: WsArg,
        #[arg(long, default_value = "dataset")]
        name: String,
        #[arg(long, default_value = "none")]
        mask_mode: MaskMode,
        #[command(flatten)]
        flags: TrainFlags,
        /// External embedding backend program; trains an embedding head instead.
        #[arg(long)]
        backend: Option<String>,
        /// Arguments passed to the backend.
        #[arg(long, allow_hyphen_values = true)]
        backend_arg: Vec<String>,
        /// Output model file (default models/<name>-<mode>.model).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a model on a manifest's test split.
    Eval {
        #[command(flatten)]
        ws: WsArg,
        #[arg(long, default_value = "dataset")]
        name: String,
        #[arg(long, default_value = "none")]
        mask_mode: MaskMode,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        backend_arg: Vec<String>,
    },
    /// Train and test one model per masking scenario.
    MaskExperiment {
        #[command(flatten)]
        ws: WsArg,
        #[arg(long, default_value = "dataset")]
        name: String,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Train on each of two manifests and test on both.
    Transfer {
        #[command(flatten)]
        ws: WsArg,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Class activation map of one tile.
    Cam {
        #[command(flatten)]
        ws: WsArg,
        #[arg(long)]
        tile: PathBuf,
        #[arg(long)]
        class: RoadClass,
        #[arg(long)]
        out: PathBuf,
        /// Model file (default models/dataset-none.model in the workspace).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Road mask PNG of the tile, for the locality fraction.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Generate a synthetic corpus (scene, roads, tiles, masks, manifest).
    Synth {
        /// Where the class signal is painted: road, context or both.
        #[arg(long)]
        signal: SignalLocation,
        /// Workspace to create.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        style: Option<u32>,
        #[arg(long)]
        country: Option<String>,
        /// Also generate a second country with this code.
        #[arg(long)]
        pair: Option<String>,
        #[arg(long, default_value_t = 1)]
        pair_style: u32,
        #[arg(long)]
        n_roads: Option<usize>,
        #[arg(long)]
        scene_size: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Re-render saved experiment results.
    Report {
        #[command(flatten)]
        ws: WsArg,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
    },
    /// Reference embedding backend speaking the stdin/stdout protocol.
    #[command(hide = true)]
    EmbedEcho {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        short_by: usize,
        #[arg(long)]
        exit_after: Option<usize>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Ingest { .. } => "ingest",
            Command::Sample { .. } => "sample",
            Command::BuildDataset { .. } => "build-dataset",
            Command::Mask { .. } => "mask",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::MaskExperiment { .. } => "mask-experiment",
            Command::Transfer { .. } => "transfer",
            Command::Cam { .. } => "cam",
            Command::Synth { .. } => "synth",
            Command::Report { .. } => "report",
            Command::EmbedEcho { .. } => "embed-echo",
        }
    }

    fn workspace(&self) -> Option<&Path> {
        match self {
            Command::Ingest { ws, .. }
            | Command::Sample { ws, .. }
            | Command::BuildDataset { ws, .. }
            | Command::Mask { ws, .. }
            | Command::Train { ws, .. }
            | Command::Eval { ws, .. }
            | Command::MaskExperiment { ws, .. }
            | Command::Transfer { ws, .. }
            | Command::Cam { ws, .. }
            | Command::Report { ws, .. } => Some(&ws.workspace),
            Command::Synth { out, .. } => Some(out),
            Command::EmbedEcho { .. } => None,
        }
    }
}

pub fn version_text() -> String {
    format!(
        "roadscope {}\nmanifest schema {MANIFEST_SCHEMA_VERSION}\nmodel file schema {MODEL_SCHEMA_VERSION}\n\
         scene container {SCENE_CONTAINER_VERSION} ({SCENE_METADATA} + raw RGB)\nroad table {ROAD_TABLE_VERSION}\n\
         run log {RUN_LOG_VERSION}\nreport {REPORT_VERSION}\nembedding protocol {PROTOCOL}\nrng {}\n",
        env!("CARGO_PKG_VERSION"),
        crate::rng::ALGORITHM
    )
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.version {
        print!("{}", version_text());
        return 0;
    }
    let Some(command) = cli.command.as_ref() else {
        eprintln!("roadscope: a subcommand is required (see --help)");
        return 1;
    };
    if let Command::EmbedEcho { dim, short_by, exit_after } = *command {
        let stdin = std::io::stdin().lock();
        let stdout = std::io::stdout().lock();
        let faults = EchoFaults { short_by, exit_after };
        return match run_echo_backend(stdin, stdout, dim, faults) {
            Ok(()) => 0,
            Err(e) => {
                eprintln!("embed-echo: {e}");
                2
            }
        };
    }

    let start = Instant::now();
    let outcome = resolve_config(&cli).and_then(|cfg| {
        if cfg.threads > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.threads).build_global();
        }
        let ctx = Ctx::new(command, cfg)?;
        let r = dispatch(command, &ctx);
        Ok((ctx, r))
    });
    let (ctx, result) = match outcome {
        Ok((ctx, r)) => (Some(ctx), r),
        Err(e) => (None, Err(e)),
    };
    let code = match &result {
        Ok(()) => 0,
        Err(e @ Error::Config(_)) => {
            eprintln!("roadscope {}: {e}", command.name());
            1
        }
        Err(e) => {
            eprintln!("roadscope {}: {e}", command.name());
            if e.is_data_error() {
                2
            } else {
                3
            }
        }
    };
    if let Some(ctx) = ctx {
        let mut rec = json!({
            "event": "run",
            "command": command.name(),
            "argv": argv.iter().map(|a| a.to_string_lossy()).collect::<Vec<_>>(),
            "config_digest": ctx.prov.config_digest,
            "seed": ctx.prov.seed,
            "exit_code": code,
            "elapsed_s": start.elapsed().as_secs_f64(),
        });
        if let Err(e) = &result {
            rec["error"] = json!(e.to_string());
        }
        ctx.log(rec);
    }
    code
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    match cli.command.as_ref() {
        Some(Command::Sample { spacing, min_separation, .. }) => {
            set(&mut cfg.build.spacing_m, *spacing);
            set(&mut cfg.build.min_separation_m, *min_separation);
        }
        Some(Command::BuildDataset { tile_size, per_class, test_ratio, .. }) => {
            set(&mut cfg.build.tile_size, *tile_size);
            if per_class.is_some() {
                cfg.build.per_class = *per_class;
            }
            set(&mut cfg.build.test_ratio, *test_ratio);
        }
        Some(Command::Train { flags, .. } | Command::MaskExperiment { flags, .. } | Command::Transfer { flags, .. }) => {
            set(&mut cfg.train.epochs, flags.epochs);
            set(&mut cfg.train.lr, flags.lr);
            set(&mut cfg.train.batch_size, flags.batch_size);
            set(&mut cfg.train.input_size, flags.input_size);
        }
        Some(Command::Synth { style, country, n_roads, scene_size, noise, signal, .. }) => {
            cfg.synth.signal_location = *signal;
            set(&mut cfg.synth.country_style, *style);
            set(&mut cfg.synth.country, country.clone());
            set(&mut cfg.synth.n_roads, *n_roads);
            set(&mut cfg.synth.scene_size, *scene_size);
            set(&mut cfg.synth.noise_sigma, *noise);
        }
        _ => {}
    }
    cfg.resolve()
}

fn set<T>(slot: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *slot = v;
    }
}

struct Ctx {
    cfg: RunConfig,
    prov: Provenance,
    ws: Workspace,
    command: &'static str,
}

impl Ctx {
    fn new(command: &Command, cfg: RunConfig) -> Result<Ctx> {
        let ws = Workspace::new(command.workspace().map(Path::to_path_buf).unwrap_or_else(|| "ws".into()));
        fs::create_dir_all(ws.logs()).map_err(Error::io(ws.logs()))?;
        let resolved = ws.root.join("config.resolved.json");
        let text = serde_json::to_string_pretty(&cfg).expect("config serializes");
        fs::write(&resolved, text + "\n").map_err(Error::io(&resolved))?;
        let prov = Provenance { config_digest: cfg.digest(), seed: cfg.seed };
        Ok(Ctx { cfg, prov, ws, command: command.name() })
    }

    /// Appends one record to `logs/run.jsonl`; logging never fails a run.
    fn log(&self, mut rec: serde_json::Value) {
        rec["log_version"] = json!(RUN_LOG_VERSION);
        rec["time_utc"] = json!(chrono::Utc::now().format("%Y-%m-%dT%H:%M:%S%.3fZ").to_string());
        if rec.get("command").is_none() {
            rec["command"] = json!(self.command);
        }
        let path = self.ws.logs().join("run.jsonl");
        if let Ok(mut f) = fs::OpenOptions::new().create(true).append(true).open(path) {
            let _ = writeln!(f, "{rec}");
        }
    }

    /// `p` relative to the workspace root when it lies inside it.
    fn ws_relative(&self, p: &Path) -> PathBuf {
        p.strip_prefix(&self.ws.root).map(Path::to_path_buf).unwrap_or_else(|_| p.to_path_buf())
    }

    /// Provenance for formats without a header: `<file>.prov.json`.
    fn write_sidecar(&self, file: &Path) -> Result<()> {
        let mut name = file.as_os_str().to_owned();
        name.push(".prov.json");
        let path = PathBuf::from(name);
        let rec = json!({"config_digest": self.prov.config_digest, "seed": self.prov.seed, "command": self.command});
        fs::write(&path, serde_json::to_string_pretty(&rec).expect("json") + "\n").map_err(Error::io(&path))
    }

    fn meta(&self, title: &str, notes: Vec<String>) -> ReportMeta {
        ReportMeta {
            title: title.to_string(),
            config_digest: self.prov.config_digest.clone(),
            seed: self.prov.seed,
            notes,
        }
    }

    fn manifest(&self, name: &str) -> Result<Manifest> {
        Ok(read_manifest(&self.ws.manifest(name))?)
    }

    fn roads(&self) -> Result<Vec<RoadRecord>> {
        let dir = self.ws.roads();
        let mut files: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(Error::io(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl") && p.file_name().is_some_and(|n| n != SAMPLES_FILE))
            .collect();
        files.sort();
        let mut roads = Vec::new();
        for f in files {
            let file = fs::File::open(&f).map_err(Error::io(&f))?;
            roads.extend(read_road_table(BufReader::new(file))?);
        }
        Ok(roads)
    }

    fn epoch_logger<'a>(&'a self, label: &'a str) -> impl FnMut(&crate::nn::EpochStats) + 'a {
        move |e| {
            self.log(json!({
                "event": "epoch", "run": label, "epoch": e.epoch, "step": e.step,
                "loss": e.loss, "accuracy": e.accuracy,
            }))
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SavedReport {
    report_version: u32,
    meta: ReportMeta,
    rows: Vec<MetricsRow>,
}

fn save_report(ctx: &Ctx, stem: &str, meta: ReportMeta, rows: &[MetricsRow]) -> Result<()> {
    fs::create_dir_all(ctx.ws.reports()).map_err(Error::io(ctx.ws.reports()))?;
    for f in [ReportFormat::Csv, ReportFormat::Markdown] {
        emit_report(rows, f, &meta, &ctx.ws.reports().join(format!("{stem}.{}", f.extension())))?;
    }
    let saved = SavedReport { report_version: REPORT_VERSION, meta, rows: rows.to_vec() };
    let path = ctx.ws.reports().join(format!("{stem}{RESULTS_SUFFIX}"));
    fs::write(&path, serde_json::to_string_pretty(&saved).expect("report serializes") + "\n").map_err(Error::io(&path))?;
    print!("{}", render_report(rows, ReportFormat::Markdown, &saved.meta)?);
    Ok(())
}

fn write_samples(path: &Path, samples: &[SamplePoint]) -> Result<()> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("sample serializes"));
        out.push('\n');
    }
    fs::write(path, out).map_err(Error::io(path))
}

fn read_samples(path: &Path) -> Result<Vec<SamplePoint>> {
    let text = fs::read_to_string(path).map_err(Error::io(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| {
                Error::Dataset(crate::dataset_builder::DatasetError::Schema {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: e.to_string(),
                })
            })
        })
        .collect()
}

fn default_model(ctx: &Ctx, name: &str, mode: MaskMode) -> PathBuf {
    ctx.ws.models().join(format!("{name}-{}.model", mode.as_str()))
}

fn spawn_backend(ctx: &Ctx, program: &str, args: &[String]) -> Result<EmbedBackend> {
    Ok(EmbedBackend::spawn(program, args, Duration::from_secs_f64(ctx.cfg.embed_timeout_s))?)
}

/// Embeds the given entries through an external backend.
fn embed_entries(backend: &mut EmbedBackend, manifest: &Manifest, idx: &[usize], mode: MaskMode) -> Result<Dataset> {
    let mut d = Dataset::new(backend.dim());
    for &i in idx {
        let (px, size, _) = read_tile(manifest, i, mode)?;
        let v = backend.embed(size, &px)?;
        d.push(&v, manifest.entries[i].class.index());
    }
    Ok(d)
}

fn dispatch(command: &Command, ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    match command {
        Command::Ingest { geojson, .. } => {
            ctx.ws.create()?;
            for path in geojson {
                let text = fs::read_to_string(path).map_err(Error::io(path))?;
                let parsed = parse_roads_with(&text, &cfg.tag_table)?;
                let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "roads".into());
                let out = ctx.ws.roads().join(format!("{stem}.jsonl"));
                let file = fs::File::create(&out).map_err(Error::io(&out))?;
                write_road_table(std::io::BufWriter::new(file), &parsed.records).map_err(Error::io(&out))?;
                ctx.write_sidecar(&out)?;
                println!("{}: {} roads, {} features skipped", path.display(), parsed.records.len(), parsed.stats.skipped_total());
                ctx.log(json!({"event": "ingest", "input": path, "records": parsed.records.len(), "stats": parsed.stats}));
            }
        }
        Command::Sample { .. } => {
            let roads = ctx.roads()?;
            let samples = sample_roads(&roads, cfg.build.spacing_m, cfg.build.min_separation_m);
            let out = ctx.ws.roads().join(SAMPLES_FILE);
            write_samples(&out, &samples)?;
            ctx.write_sidecar(&out)?;
            println!("{} sample points from {} roads", samples.len(), roads.len());
        }
        Command::BuildDataset { name, .. } => {
            let scenes = open_scene_dir(&ctx.ws.scenes())?;
            let samples = read_samples(&ctx.ws.roads().join(SAMPLES_FILE))?;
            let report = build_dataset(&ctx.ws, name, &scenes, &samples, &cfg.build, &ctx.prov)?;
            println!("{}: {} train, {} test ({} per class)", report.manifest.display(), report.train, report.test, report.per_class);
            ctx.log(json!({"event": "build-dataset", "report": report}));
        }
        Command::Mask { name, .. } => {
            let scenes = open_scene_dir(&ctx.ws.scenes())?;
            let roads = ctx.roads()?;
            let m = write_masks(&ctx.ws, &ctx.manifest(name)?, &scenes, &roads, &cfg.build, &ctx.prov)?;
            println!("{} masks written", m.entries.len());
        }
        Command::Train { name, mask_mode, backend, backend_arg, out, .. } => {
            let manifest = ctx.manifest(name)?;
            let idx = split_indices(&manifest, Split::Train);
            let (mut model, data, out) = match backend {
                Some(prog) => {
                    let mut b = spawn_backend(ctx, prog, backend_arg)?;
                    let data = embed_entries(&mut b, &manifest, &idx, *mask_mode)?;
                    let model = Model::new(ModelSpec::embedding_head(b.dim(), cfg.embed_hidden), cfg.seed)?;
                    let out = out.clone().unwrap_or_else(|| ctx.ws.models().join(format!("{name}-{}-head.model", mask_mode.as_str())));
                    (model, data, out)
                }
                None => {
                    let data = crate::pipeline::load_dataset(&manifest, &idx, *mask_mode, cfg.train.input_size)?;
                    let model = Model::new(ModelSpec::tiny_road_net(cfg.train.input_size), cfg.seed)?;
                    (model, data, out.clone().unwrap_or_else(|| default_model(ctx, name, *mask_mode)))
                }
            };
            let log = fit_with(&mut model, &data, &cfg.train, ctx.epoch_logger("train"))?;
            fs::create_dir_all(ctx.ws.models()).map_err(Error::io(ctx.ws.models()))?;
            save_model(&model, &out, Some(&ctx.prov.config_digest))?;
            if let Some(last) = log.epochs.last() {
                println!("{}: epoch {} loss {:.4} train accuracy {:.3}", out.display(), last.epoch, last.loss, last.accuracy);
            }
        }
        Command::Eval { name, mask_mode, model, backend, backend_arg, .. } => {
            let manifest = ctx.manifest(name)?;
            let idx = split_indices(&manifest, Split::Test);
            let (model_path, data) = match backend {
                Some(prog) => {
                    let mut b = spawn_backend(ctx, prog, backend_arg)?;
                    let path = model.clone().unwrap_or_else(|| ctx.ws.models().join(format!("{name}-{}-head.model", mask_mode.as_str())));
                    (path, embed_entries(&mut b, &manifest, &idx, *mask_mode)?)
                }
                None => {
                    let path = model.clone().unwrap_or_else(|| default_model(ctx, name, *mask_mode));
                    let (m, _) = load_model(&path)?;
                    let input = match m.spec.input {
                        crate::nn::InputSpec::Image { size, .. } => size,
                        crate::nn::InputSpec::Vector { .. } => {
                            return Err(Error::Config("embedding heads need --backend for evaluation".into()))
                        }
                    };
                    (path, crate::pipeline::load_dataset(&manifest, &idx, *mask_mode, input)?)
                }
            };
            let (m, _) = load_model(&model_path)?;
            let cm = evaluate_dataset(&m, &data)?;
            let row = compute_metrics(mask_mode.scenario(), &cm)?;
            let meta = ctx.meta(&format!("Evaluation of {}", ctx.ws_relative(&model_path).display()), vec![format!("test tiles masked with mode {}", mask_mode.as_str())]);
            save_report(ctx, &format!("eval-{name}-{}", mask_mode.as_str()), meta, &[row])?;
        }
        Command::MaskExperiment { name, .. } => {
            let manifest = ctx.manifest(name)?;
            fs::create_dir_all(ctx.ws.models()).map_err(Error::io(ctx.ws.models()))?;
            let spec = ModelSpec::tiny_road_net(cfg.train.input_size);
            let runs = run_masking_experiment(&manifest, &spec, &cfg.train, |r| log_run(ctx, r))?;
            for r in &runs {
                save_model(&r.model, &default_model(ctx, name, r.mode), Some(&ctx.prov.config_digest))?;
            }
            let rows: Vec<MetricsRow> = runs.iter().flat_map(|r| r.rows.clone()).collect();
            let notes = vec![
                "\"context occluded\" keeps only road pixels (mode road_only); \"road occluded\" keeps only context pixels (mode context_only).".into(),
                "Each model is tested on tiles masked the same way as its training tiles.".into(),
                format!("All three runs share one initialization (parameter digest {}).", runs[0].init_digest),
            ];
            save_report(ctx, &format!("masking-{name}"), ctx.meta("Masking experiment", notes), &rows)?;
        }
        Command::Transfer { a, b, .. } => {
            let (ma, mb) = (ctx.manifest(a)?, ctx.manifest(b)?);
            let spec = ModelSpec::tiny_road_net(cfg.train.input_size);
            let runs = run_transfer_experiment(&ma, &mb, &spec, &cfg.train, |r| log_run(ctx, r))?;
            let rows: Vec<MetricsRow> = runs.iter().flat_map(|r| r.rows.clone()).collect();
            let notes = vec!["Rows pair an in-domain test with a cross-domain test for each training country.".into()];
            save_report(ctx, &format!("transfer-{a}-{b}"), ctx.meta("Cross-domain experiment", notes), &rows)?;
        }
        Command::Cam { tile, class, out, model, mask, .. } => {
            let path = model.clone().unwrap_or_else(|| default_model(ctx, "dataset", MaskMode::None));
            let (m, _) = load_model(&path)?;
            let img = read_png(tile)?;
            if img.format != PixelFormat::Rgb8 || img.width != img.height {
                return Err(Error::Config(format!("{} is not a square RGB tile", tile.display())));
            }
            let input = match m.spec.input {
                crate::nn::InputSpec::Image { size, .. } => size,
                crate::nn::InputSpec::Vector { .. } => {
                    return Err(crate::diagnostics::DiagnosticsError::ArchitectureUnsupported("embedding head".into()).into())
                }
            };
            let x = tile_to_input(&img.data, img.width, input)?;
            let heat = cam(&m, &x, *class)?;
            let full = upsample_bilinear(&heat.grid, heat.grid_h, heat.grid_w, img.width, img.width);
            let gray: Vec<u8> = full.iter().map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect();
            let text = ctx.prov.text();
            write_png(out, img.width, img.width, PixelFormat::Gray8, &gray, &[(&text[0].0, &text[0].1), (&text[1].0, &text[1].1)])?;
            let predicted = RoadClass::from_index(m.predict(&x, 1)?[0]).expect("three classes");
            let locality = match mask {
                Some(p) => Some(cam_locality(&full, &resize_mask(&read_mask_png(p)?, img.width))?),
                None => None,
            };
            let sidecar = json!({
                "tile": ctx.ws_relative(tile), "model": ctx.ws_relative(&path), "class": class, "predicted_class": predicted,
                "locality": locality, "grid": [heat.grid_h, heat.grid_w],
                "config_digest": ctx.prov.config_digest, "seed": ctx.prov.seed,
            });
            let side = out.with_extension("json");
            fs::write(&side, serde_json::to_string_pretty(&sidecar).expect("json") + "\n").map_err(Error::io(&side))?;
            println!("{}: predicted {predicted}, locality {}", out.display(), locality.map(|l| format!("{l:.3}")).unwrap_or_else(|| "n/a".into()));
        }
        Command::Synth { pair, pair_style, .. } => {
            let mut corpora = vec![(cfg.synth.clone(), if pair.is_some() { cfg.synth.country.clone() } else { "dataset".to_string() })];
            if let Some(code) = pair {
                if *code == cfg.synth.country {
                    return Err(Error::Config("--pair needs a different country code".into()));
                }
                let b = SynthConfig { country: code.clone(), country_style: *pair_style, ..cfg.synth.clone() };
                corpora.push((b, code.clone()));
            }
            for (s, name) in corpora {
                let (m, report) = build_synth_corpus(&ctx.ws, &name, &s, &cfg.build, &ctx.prov)?;
                println!("{}: {} tiles ({} train, {} test)", m.path.display(), m.entries.len(), report.train, report.test);
                ctx.log(json!({"event": "synth", "country": s.country, "report": report}));
            }
        }
        Command::Report { format, .. } => {
            let dir = ctx.ws.reports();
            let mut files: Vec<PathBuf> = fs::read_dir(&dir)
                .map_err(Error::io(&dir))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.to_string_lossy().ends_with(RESULTS_SUFFIX))
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Config(format!("no saved results in {}", dir.display())));
            }
            for f in files {
                let text = fs::read_to_string(&f).map_err(Error::io(&f))?;
                let saved: SavedReport = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", f.display())))?;
                let stem = f.to_string_lossy().trim_end_matches(RESULTS_SUFFIX).to_string();
                let out = PathBuf::from(format!("{stem}.{}", format.extension()));
                emit_report(&saved.rows, *format, &saved.meta, &out)?;
                println!("{}", out.display());
            }
        }
        Command::EmbedEcho { .. } => unreachable!("handled before config resolution"),
    }
    Ok(())
}

fn log_run(ctx: &Ctx, r: &Run) {
    for e in &r.log.epochs {
        ctx.log(json!({"event": "epoch", "run": r.label, "epoch": e.epoch, "step": e.step, "loss": e.loss, "accuracy": e.accuracy}));
    }
    ctx.log(json!({
        "event": "experiment-run", "run": r.label, "init_digest": r.init_digest,
        "final_digest": r.final_digest, "rows": r.rows,
    }));
    eprintln!("{}: {}", r.label, r.rows.iter().map(|x| format!("{} accuracy {:.3}", x.scenario, x.accuracy)).collect::<Vec<_>>().join("; "));
}
