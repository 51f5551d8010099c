use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::net::{IpAddr, Ipv4Addr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use posetraj::conditioning::{self, Stage};
use posetraj::config::{ConfigError, ForgeConfig, CONFIG_ENV};
use posetraj::eval::{self, ObjmcMode, TrackFile};
use posetraj::forge::{self, DatasetManifest, ForgeError};
use posetraj::service::{self, PreviewRequest, ServiceState, DEFAULT_PORT};
use posetraj::trajectory;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_RETRIES: u8 = 4;

#[derive(Parser)]
#[command(
    name = "posetraj",
    version,
    about = "Pose-aware trajectory dataset forge"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// JSON config file; defaults to $POSETRAJ_CONFIG when set.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set camera.fx=600`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Sample scenes for every catalog object and write manifests and images.
    Forge,
    /// Write the per-frame training conditions of one stage as JSON lines.
    Assemble {
        #[arg(long, value_parser = parse_stage)]
        stage: Stage,
        /// Defaults to `<output_dir>/batches/<stage>.jsonl`.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Score generated point tracks against references.
    Eval {
        /// Track file or directory of track files.
        #[arg(long, value_name = "PATH", required_unless_present = "self_check")]
        generated: Option<PathBuf>,
        #[arg(long, value_name = "PATH", required_unless_present = "self_check")]
        reference: Option<PathBuf>,
        #[arg(long, default_value = "position", value_parser = parse_mode)]
        mode: ObjmcMode,
        /// Also write the report as JSON.
        #[arg(long, value_name = "PATH")]
        report: Option<PathBuf>,
        /// Re-derive and check every forged manifest instead.
        #[arg(long, conflicts_with_all = ["generated", "reference"])]
        self_check: bool,
    },
    /// Print the pose track and projections for a preview request.
    Preview {
        /// Request JSON; `-` reads stdin.
        #[arg(long, value_name = "PATH", required_unless_present = "seed")]
        input: Option<PathBuf>,
        /// Preview a sampled trajectory instead.
        #[arg(long, conflicts_with = "input")]
        seed: Option<u64>,
    },
    /// Run the local HTTP service.
    Serve {
        #[arg(long, default_value_t = IpAddr::V4(Ipv4Addr::LOCALHOST))]
        bind: IpAddr,
        #[arg(long, default_value_t = DEFAULT_PORT)]
        port: u16,
    },
}

fn parse_stage(s: &str) -> Result<Stage, String> {
    s.parse()
}

fn parse_mode(s: &str) -> Result<ObjmcMode, String> {
    s.parse()
}

fn stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::StageOneBbox => "one",
        Stage::StageTwoAppearance => "two",
        Stage::FinetuneCamera => "finetune",
    }
}

/// An error carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_CONFIG,
            message: e.to_string(),
        }
    }

    fn io(e: impl std::fmt::Display) -> Self {
        Self {
            code: EXIT_IO,
            message: e.to_string(),
        }
    }
}

impl From<ForgeError> for Failure {
    fn from(e: ForgeError) -> Self {
        match e {
            ForgeError::CameraMiss { .. } => Self {
                code: EXIT_RETRIES,
                message: e.to_string(),
            },
            _ => Self::io(e),
        }
    }
}

fn load_config(global: &GlobalArgs) -> Result<ForgeConfig, ConfigError> {
    let path = global
        .config
        .clone()
        .or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    ForgeConfig::load(path.as_deref(), &global.overrides)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = load_config(&cli.global)
        .map_err(Failure::config)
        .and_then(|cfg| match cli.command {
            Command::Forge => forge_cmd(&cfg),
            Command::Assemble { stage, out } => assemble_cmd(&cfg, stage, out),
            Command::Eval {
                generated,
                reference,
                mode,
                report,
                self_check,
            } => {
                if self_check {
                    self_check_cmd(&cfg)
                } else {
                    eval_cmd(
                        &cfg,
                        generated.as_deref().expect("required by clap"),
                        reference.as_deref().expect("required by clap"),
                        mode,
                        report.as_deref(),
                    )
                }
            }
            Command::Preview { input, seed } => preview_cmd(&cfg, input.as_deref(), seed),
            Command::Serve { bind, port } => serve_cmd(cfg, SocketAddr::new(bind, port)),
        });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("posetraj: error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn pool(cfg: &ForgeConfig) -> Result<rayon::ThreadPool, Failure> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(Failure::config)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)
            .map_err(|e| Failure::io(format!("{}: {e}", parent.display())))?;
    }
    std::fs::write(path, bytes).map_err(|e| Failure::io(format!("{}: {e}", path.display())))
}

fn tracks_path(out: &Path, scene_id: &str) -> PathBuf {
    out.join("tracks").join(format!("{scene_id}.tracks.json"))
}

fn forge_cmd(cfg: &ForgeConfig) -> Result<(), Failure> {
    let catalog = forge::read_catalog(&cfg.object_catalog_path)?;
    let outcomes = forge::forge_dataset(&catalog, cfg);
    let total = outcomes.len();
    let out = &cfg.output_dir;

    let written: Vec<Result<(), Failure>> = pool(cfg)?.install(|| {
        outcomes
            .par_iter()
            .map(|o| match &o.result {
                Ok(m) => {
                    forge::write_scene(m, cfg, out)?;
                    let tracks = TrackFile::from_manifest(m).to_json();
                    write_file(&tracks_path(out, &m.scene_id), tracks.as_bytes())
                }
                Err(_) => Ok(()),
            })
            .collect()
    });

    let mut scenes = 0;
    let mut rejected = 0u64;
    let mut failure: Option<Failure> = None;
    for (i, (o, w)) in outcomes.into_iter().zip(written).enumerate() {
        let object = &catalog[o.plan.object_index].object_id;
        match (o.result, w) {
            (Ok(m), Ok(())) => {
                scenes += 1;
                rejected += u64::from(m.attempt);
                println!(
                    "[{}/{total}] {} object={object} attempts={}",
                    i + 1,
                    m.scene_id,
                    m.attempt + 1
                );
            }
            (Ok(m), Err(e)) => {
                println!(
                    "[{}/{total}] {} write failed: {}",
                    i + 1,
                    m.scene_id,
                    e.message
                );
                failure.get_or_insert(e);
            }
            (Err(e), _) => {
                if let ForgeError::CameraMiss { attempts, .. } = &e {
                    rejected += u64::from(*attempts);
                }
                println!("[{}/{total}] object={object} failed: {e}", i + 1);
                let f = Failure::from(e);
                // retry exhaustion outranks other failures
                if failure
                    .as_ref()
                    .is_none_or(|prev| f.code == EXIT_RETRIES && prev.code != EXIT_RETRIES)
                {
                    failure = Some(f);
                }
            }
        }
    }
    println!("scenes={scenes} rejected={rejected}");
    failure.map_or(Ok(()), Err)
}

fn read_manifests(out: &Path) -> Result<Vec<DatasetManifest>, Failure> {
    let dir = out.join("manifests");
    let entries =
        std::fs::read_dir(&dir).map_err(|e| Failure::io(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(Failure::io)?.path();
        if path.extension().is_some_and(|x| x == "json") {
            paths.push(path);
        }
    }
    paths.sort();
    paths
        .iter()
        .map(|p| DatasetManifest::read(p).map_err(Failure::from))
        .collect()
}

fn assemble_cmd(cfg: &ForgeConfig, stage: Stage, out: Option<PathBuf>) -> Result<(), Failure> {
    let manifests = read_manifests(&cfg.output_dir)?;
    let mut text = String::new();
    let (mut lines, mut camera_rows, mut errors) = (0usize, 0usize, 0usize);
    for m in &manifests {
        match conditioning::assemble_scene(m, stage, cfg.training_frames) {
            Ok(batch) => {
                for line in batch {
                    camera_rows += usize::from(line.camera.is_some());
                    lines += 1;
                    text.push_str(&serde_json::to_string(&line).expect("batch line serializes"));
                    text.push('\n');
                }
            }
            Err(e) => {
                errors += 1;
                eprintln!("{}: {e}", m.scene_id);
            }
        }
    }
    let path = out.unwrap_or_else(|| {
        cfg.output_dir
            .join("batches")
            .join(format!("{}.jsonl", stage_name(stage)))
    });
    write_file(&path, text.as_bytes())?;
    println!(
        "stage={} scenes={} lines={lines} camera_rows={camera_rows} errors={errors}",
        stage_name(stage),
        manifests.len()
    );
    if errors > 0 {
        return Err(Failure::io(format!("{errors} scenes failed to assemble")));
    }
    Ok(())
}

fn read_tracks(path: &Path) -> Result<Vec<TrackFile>, Failure> {
    if !path.is_dir() {
        return Ok(vec![eval::ingest_tracks(path).map_err(Failure::io)?]);
    }
    let mut paths: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| eval::ingest_tracks(p).map_err(|e| Failure::io(format!("{}: {e}", p.display()))))
        .collect()
}

fn eval_cmd(
    cfg: &ForgeConfig,
    generated: &Path,
    reference: &Path,
    mode: ObjmcMode,
    report_path: Option<&Path>,
) -> Result<(), Failure> {
    let generated = read_tracks(generated)?;
    let reference = read_tracks(reference)?;
    let pairs = if generated.len() == 1 && reference.len() == 1 {
        vec![(generated[0].clone(), reference[0].clone())]
    } else {
        let mut by_id: BTreeMap<String, TrackFile> = generated
            .into_iter()
            .map(|t| (t.video_id.clone(), t))
            .collect();
        reference
            .into_iter()
            .map(|r| {
                by_id
                    .remove(&r.video_id)
                    .map(|g| (g, r.clone()))
                    .ok_or_else(|| Failure::io(format!("no generated tracks for `{}`", r.video_id)))
            })
            .collect::<Result<Vec<_>, _>>()?
    };
    let report =
        eval::evaluate(&pairs, mode, Some([cfg.width, cfg.height])).map_err(Failure::io)?;
    print!("{}", report.table());
    if let Some(path) = report_path {
        let mut json = serde_json::to_string_pretty(&report).expect("report serializes");
        json.push('\n');
        write_file(path, json.as_bytes())?;
    }
    Ok(())
}

fn self_check_cmd(cfg: &ForgeConfig) -> Result<(), Failure> {
    let manifests = read_manifests(&cfg.output_dir)?;
    let mut failed = 0;
    for m in &manifests {
        let report = eval::manifest_self_check(m, cfg.max_center_step_px);
        for c in report.checks.iter().filter(|c| !c.passed) {
            println!(
                "{} {} FAILED frames={:?} {}",
                report.scene_id, c.name, c.failing_frames, c.detail
            );
        }
        failed += usize::from(!report.passed());
    }
    println!("manifests={} failed={failed}", manifests.len());
    if failed > 0 {
        return Err(Failure::io(format!(
            "{failed} manifests failed the self-check"
        )));
    }
    Ok(())
}

fn preview_cmd(cfg: &ForgeConfig, input: Option<&Path>, seed: Option<u64>) -> Result<(), Failure> {
    let request = match (input, seed) {
        (_, Some(seed)) => PreviewRequest {
            schema_version: forge::SCHEMA_VERSION,
            spec: Some(
                trajectory::sample_trajectory_spec(seed, Some(&cfg.sampler_bounds()))
                    .map_err(Failure::config)?,
            ),
            polyline: None,
            camera: None,
            box_extents: None,
            keyframes: None,
        },
        (Some(path), None) => {
            let mut text = String::new();
            if path == Path::new("-") {
                std::io::stdin()
                    .read_to_string(&mut text)
                    .map_err(Failure::io)?;
            } else {
                text = std::fs::read_to_string(path)
                    .map_err(|e| Failure::io(format!("{}: {e}", path.display())))?;
            }
            serde_json::from_str(&text).map_err(Failure::io)?
        }
        (None, None) => unreachable!("clap requires --input or --seed"),
    };
    let camera = cfg.camera_model().map_err(Failure::config)?;
    let response = service::preview(&request, &camera, cfg.keyframes)
        .map_err(|e| Failure::io(format!("preview rejected: {e:?}")))?;
    let mut json = serde_json::to_string_pretty(&response).expect("preview serializes");
    json.push('\n');
    std::io::stdout()
        .write_all(json.as_bytes())
        .map_err(Failure::io)
}

fn serve_cmd(cfg: ForgeConfig, addr: SocketAddr) -> Result<(), Failure> {
    let state = ServiceState::new(cfg).map_err(Failure::config)?;
    let runtime = tokio::runtime::Runtime::new().map_err(Failure::io)?;
    eprintln!("listening on http://{addr}");
    runtime
        .block_on(service::serve(addr, state))
        .map_err(|e| Failure::io(format!("{addr}: {e}")))
}
