//! `msight` command line: run the simulated perception pipeline, score
//! logs, measure transport latency, commission cameras from landmark
//! files, train trajectory models, and forward messages over UDP.

use clap::{Args, Parser, Subcommand, ValueEnum};
use msight_core::geo::{
    calibrate_camera, estimate_intrinsics, read_landmark_csv, write_calibration_file, LmOptions,
    RansacOptions, DEFAULT_ERROR_GATE_M,
};
use msight_core::predict::{read_model, train, write_model, EncoderConfig, TrainOptions};
use msight_core::track::{read_track_log, write_track_log};
use msight_core::{CameraId, FisheyeIntrinsics, WorldPoint};
use msight_net::forwarder::{spawn, ForwarderConfig, FrameSlot};
use msight_net::latency::{now_ms, phase2_ms, time_phase1, LatencySummary};
use msight_net::v2x::{decode, encode, PerceptionMessage, WireVehicle};
use msight_sim::pipeline::{run_pipeline, PipelineOptions, PipelineRun};
use msight_sim::report::{build_report, build_report_from_parts, write_trajectory_csv, LatencyBlock};
use msight_sim::rig;
use msight_sim::scenario::{
    generate_scenario, read_scenario_file, read_truth_log, training_windows, write_scenario_file,
    write_truth_log, ScenarioConfig,
};
use serde::Serialize;
use std::error::Error;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::UdpSocket;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "msight", version, about = "Roadside perception pipeline: simulate, score, measure")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario through the full pipeline and write the report.
    Run(RunArgs),
    /// Score a track log against a ground-truth log.
    Eval(EvalArgs),
    /// Measure encode and end-to-end message latency.
    Latency(LatencyArgs),
    /// Commission a camera from a landmark CSV.
    Calib(CalibArgs),
    /// Write a scenario description to edit and re-run.
    Scenario(ScenarioArgs),
    /// Train a trajectory model on scenario trajectories.
    Train(TrainArgs),
    /// Replay pipeline messages through the UDP forwarder.
    Forward(ForwardArgs),
}

fn main() -> ExitCode {
    env_logger::init();
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(command: Command) -> Result<(), Box<dyn Error>> {
    match command {
        Command::Run(args) => cmd_run(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Latency(args) => cmd_latency(args),
        Command::Calib(args) => cmd_calib(args),
        Command::Scenario(args) => cmd_scenario(args),
        Command::Train(args) => cmd_train(args),
        Command::Forward(args) => cmd_forward(args),
    }
}

/// Pretty JSON to a file, or stdout when no path was given.
fn emit_json(value: &impl Serialize, out: Option<&Path>) -> Result<(), Box<dyn Error>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn load_scenario(path: Option<&Path>) -> Result<ScenarioConfig, Box<dyn Error>> {
    Ok(match path {
        Some(p) => read_scenario_file(p)?,
        None => ScenarioConfig::default(),
    })
}

// ---------------------------------------------------------------- run

#[derive(Args)]
struct RunArgs {
    /// Scenario description JSON; the built-in default when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Cameras to simulate, e.g. NE,SW. Omit for the full rig.
    #[arg(long, value_delimiter = ',')]
    cams: Vec<String>,
    /// Trained trajectory model; constant-velocity prediction when omitted.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Report JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional trajectory dump (CSV: kind,id,ts,east_m,north_m).
    #[arg(long)]
    traj: Option<PathBuf>,
    /// Optional ground-truth log (NDJSON).
    #[arg(long)]
    truth_out: Option<PathBuf>,
    /// Optional track log (NDJSON).
    #[arg(long)]
    tracks_out: Option<PathBuf>,
}

fn cmd_run(args: RunArgs) -> Result<(), Box<dyn Error>> {
    let cfg = load_scenario(args.scenario.as_deref())?;
    let cameras = args
        .cams
        .iter()
        .map(|s| s.trim().parse::<CameraId>())
        .collect::<Result<Vec<_>, _>>()?;
    let model = match &args.model {
        Some(path) => Some(read_model(BufReader::new(File::open(path)?))?),
        None => None,
    };
    let setup = if cameras.is_empty() {
        CameraId::ALL.map(|c| c.label()).join("+")
    } else {
        cameras.iter().map(|c| c.label()).collect::<Vec<_>>().join("+")
    };
    let opts = PipelineOptions { cameras, model };
    let run = run_pipeline(&cfg, &opts)?;

    if let Some(path) = &args.truth_out {
        write_truth_log(&run.truth, BufWriter::new(File::create(path)?))?;
    }
    if let Some(path) = &args.tracks_out {
        write_track_log(&run.records, &rig::SCENE_ORIGIN, BufWriter::new(File::create(path)?))?;
    }
    if let Some(path) = &args.traj {
        write_trajectory_csv(&run, BufWriter::new(File::create(path)?))?;
    }

    let report = build_report(&run, cfg.trips.len(), &setup)?;
    emit_json(&report, args.out.as_deref())
}

// ---------------------------------------------------------------- eval

#[derive(Args)]
struct EvalArgs {
    /// Ground-truth log (NDJSON).
    #[arg(long)]
    truth: PathBuf,
    /// Track log (NDJSON).
    #[arg(long)]
    tracks: PathBuf,
    /// Report rows cover truth ids 1..=N; every truth id when omitted.
    #[arg(long)]
    trips: Option<usize>,
    /// Label stamped into the report's setup field.
    #[arg(long, default_value = "eval")]
    setup: String,
    /// Report JSON path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_eval(args: EvalArgs) -> Result<(), Box<dyn Error>> {
    let truth = read_truth_log(BufReader::new(File::open(&args.truth)?))?;
    let records = read_track_log(BufReader::new(File::open(&args.tracks)?), &rig::SCENE_ORIGIN)?;
    let trips = args
        .trips
        .unwrap_or_else(|| truth.iter().map(|t| t.id).max().unwrap_or(0) as usize);
    let report = build_report_from_parts(&truth, &records, &[], None, trips, &args.setup)?;
    emit_json(&report, args.out.as_deref())
}

// ---------------------------------------------------------------- latency

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Transport {
    /// In-process handoff.
    Loopback,
    /// Localhost UDP socket pair.
    Udp,
}

#[derive(Args)]
struct LatencyArgs {
    #[arg(long, value_enum, default_value_t = Transport::Loopback)]
    transport: Transport,
    /// Artificial delay inserted between send and decode, ms.
    #[arg(long, default_value_t = 0)]
    inject_delay_ms: u64,
    /// Messages to time.
    #[arg(long, default_value_t = 50)]
    frames: usize,
}

#[derive(Serialize)]
struct LatencyReport {
    transport: &'static str,
    frames: usize,
    inject_delay_ms: u64,
    /// Encode cost, measured around the codec call alone.
    phase1: LatencyBlock,
    /// Producer-stamp to post-decode wall time.
    phase2: LatencyBlock,
}

fn sample_message(seq: u32) -> PerceptionMessage {
    let vehicle = |id: u32| WireVehicle {
        id,
        class: 1,
        lat_deg: 42.2808,
        lon_deg: -83.7430,
        heading_deg: 90.0,
        speed_mps: 6.5,
        predicted: vec![(42.28081, -83.74297), (42.28082, -83.74294), (42.28083, -83.74291)],
    };
    let stamp = now_ms();
    PerceptionMessage {
        seq,
        producer_ts_ms: stamp,
        frame_ts_ms: stamp,
        vehicles: vec![vehicle(1), vehicle(2)],
    }
}

fn cmd_latency(args: LatencyArgs) -> Result<(), Box<dyn Error>> {
    if args.frames == 0 {
        return Err("need at least one frame".into());
    }
    let sockets = match args.transport {
        Transport::Loopback => None,
        Transport::Udp => {
            let rx = UdpSocket::bind("127.0.0.1:0")?;
            let tx = UdpSocket::bind("127.0.0.1:0")?;
            tx.connect(rx.local_addr()?)?;
            Some((tx, rx))
        }
    };

    let mut phase1 = Vec::with_capacity(args.frames);
    let mut phase2 = Vec::with_capacity(args.frames);
    let mut buf = vec![0u8; 64 * 1024];
    for seq in 0..args.frames {
        let msg = sample_message(seq as u32);
        let (encoded, p1_ms) = time_phase1(|| encode(&msg));
        phase1.push(p1_ms);
        let bytes = encoded?;

        let received = match &sockets {
            None => bytes,
            Some((tx, rx)) => {
                tx.send(&bytes)?;
                let n = rx.recv(&mut buf)?;
                buf[..n].to_vec()
            }
        };
        if args.inject_delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(args.inject_delay_ms));
        }
        let decoded = decode(&received)?;
        phase2.push(phase2_ms(decoded.producer_ts_ms, now_ms())?);
    }

    let report = LatencyReport {
        transport: match args.transport {
            Transport::Loopback => "loopback",
            Transport::Udp => "udp",
        },
        frames: args.frames,
        inject_delay_ms: args.inject_delay_ms,
        phase1: LatencySummary::from_samples(&phase1).into(),
        phase2: LatencySummary::from_samples(&phase2).into(),
    };
    emit_json(&report, None)
}

// ---------------------------------------------------------------- calib

#[derive(Args)]
struct CalibArgs {
    /// Landmark CSV: camera_id,u_px,v_px,lat_deg,lon_deg.
    #[arg(long)]
    landmarks: PathBuf,
    /// Camera to commission (NE/NW/SE/SW); inferred when the file names
    /// exactly one.
    #[arg(long)]
    camera: Option<String>,
    /// Initial principal-point guess, pixels.
    #[arg(long, default_value_t = 640.0)]
    cx: f64,
    #[arg(long, default_value_t = 480.0)]
    cy: f64,
    /// Initial focal-length guess, pixels.
    #[arg(long, default_value_t = 420.0)]
    focal_px: f64,
    /// Half field of view, radians.
    #[arg(long, default_value_t = 1.3)]
    theta_max: f64,
    /// Mean landmark error gate, meters.
    #[arg(long, default_value_t = DEFAULT_ERROR_GATE_M)]
    gate_m: f64,
    /// Calibration artifact output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct CalibSummary {
    camera: &'static str,
    landmarks: usize,
    iterations: usize,
    initial_rms_m: f64,
    final_rms_m: f64,
    converged: bool,
    mean_error_m: f64,
}

fn cmd_calib(args: CalibArgs) -> Result<(), Box<dyn Error>> {
    let all = read_landmark_csv(File::open(&args.landmarks)?)?;
    let camera = match &args.camera {
        Some(s) => s.parse::<CameraId>()?,
        None => {
            let mut ids: Vec<CameraId> = all.iter().map(|lm| lm.camera_id).collect();
            ids.dedup();
            match ids[..] {
                [only] => only,
                _ => return Err("landmark file names several cameras; pass --camera".into()),
            }
        }
    };
    let rows: Vec<_> = all.into_iter().filter(|lm| lm.camera_id == camera).collect();
    if rows.is_empty() {
        return Err(format!("no {} rows in {}", camera.label(), args.landmarks.display()).into());
    }

    let init = FisheyeIntrinsics::equidistant(args.cx, args.cy, args.focal_px, args.theta_max)?;
    let fit = estimate_intrinsics(&rows, &init, &LmOptions::default())?;
    let n = rows.len() as f64;
    let origin = WorldPoint::new(
        rows.iter().map(|lm| lm.world.lat_deg).sum::<f64>() / n,
        rows.iter().map(|lm| lm.world.lon_deg).sum::<f64>() / n,
    );
    let calib = calibrate_camera(
        camera,
        &rows,
        fit.intrinsics,
        origin,
        &RansacOptions::default(),
        args.gate_m,
    )?;
    if let Some(path) = &args.out {
        write_calibration_file(&calib, path)?;
    }
    emit_json(
        &CalibSummary {
            camera: camera.label(),
            landmarks: rows.len(),
            iterations: fit.iterations,
            initial_rms_m: fit.initial_rms_m,
            final_rms_m: fit.final_rms_m,
            converged: fit.converged,
            mean_error_m: calib.mean_error_m,
        },
        None,
    )
}

// ---------------------------------------------------------------- scenario

#[derive(Args)]
struct ScenarioArgs {
    /// Scenario seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn cmd_scenario(args: ScenarioArgs) -> Result<(), Box<dyn Error>> {
    let cfg = ScenarioConfig { seed: args.seed, ..ScenarioConfig::default() };
    match &args.out {
        Some(path) => write_scenario_file(&cfg, path)?,
        None => emit_json(&cfg, None)?,
    }
    Ok(())
}

// ---------------------------------------------------------------- train

#[derive(Args)]
struct TrainArgs {
    /// Scenario whose trajectories feed the training set; the built-in
    /// default when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Model output path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 1)]
    layers: usize,
    #[arg(long, default_value_t = 2)]
    heads: usize,
    /// Sin/cos frequency bands per coordinate scalar.
    #[arg(long, default_value_t = 2)]
    bands: usize,
    /// Future frames per prediction.
    #[arg(long, default_value_t = 3)]
    horizon: usize,
    #[arg(long, default_value_t = 600)]
    steps: usize,
    #[arg(long, default_value_t = 0.2)]
    lr: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Cap on training examples (deterministic stride subsample).
    #[arg(long, default_value_t = 256)]
    max_examples: usize,
}

#[derive(Serialize)]
struct TrainOutcome {
    examples: usize,
    steps: usize,
    initial_loss: f64,
    final_loss: f64,
}

fn cmd_train(args: TrainArgs) -> Result<(), Box<dyn Error>> {
    let cfg = load_scenario(args.scenario.as_deref())?;
    let truth = generate_scenario(&cfg)?;
    let mut dataset = training_windows(&truth, args.horizon);
    if dataset.len() > args.max_examples {
        let stride = dataset.len().div_ceil(args.max_examples);
        dataset = dataset.into_iter().step_by(stride).collect();
    }

    let config = EncoderConfig {
        model_dim: args.dim,
        layers: args.layers,
        heads: args.heads,
        pos_bands: args.bands,
        horizon: args.horizon,
        ..EncoderConfig::default()
    };
    let opts =
        TrainOptions { lr: args.lr, steps: args.steps, seed: args.seed, ..TrainOptions::default() };
    let examples = dataset.len();
    let report = train(&dataset, config, &opts)?;
    write_model(&report.params, BufWriter::new(File::create(&args.out)?))?;
    emit_json(
        &TrainOutcome {
            examples,
            steps: args.steps,
            initial_loss: report.loss_curve[0],
            final_loss: *report.loss_curve.last().expect("loss curve"),
        },
        None,
    )
}

// ---------------------------------------------------------------- forward

#[derive(Args)]
struct ForwardArgs {
    /// Destination UDP endpoint, host:port.
    #[arg(long)]
    endpoint: String,
    /// Rebroadcast period, ms.
    #[arg(long, default_value_t = 100)]
    period_ms: u64,
    /// Age beyond which the held frame is suppressed, ms.
    #[arg(long, default_value_t = 1000)]
    stale_ms: u64,
    /// Scenario replayed through the pipeline; the built-in default when
    /// omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Playback speed multiplier over the 2.5 Hz frame clock.
    #[arg(long, default_value_t = 10.0)]
    speed: f64,
    /// Cap on replayed frames.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Serialize)]
struct ForwardOutcome {
    frames_published: usize,
    sent: u64,
    stale_suppressed: u64,
    send_errors: u64,
}

fn cmd_forward(args: ForwardArgs) -> Result<(), Box<dyn Error>> {
    if !(args.speed > 0.0) {
        return Err("--speed must be positive".into());
    }
    let cfg = load_scenario(args.scenario.as_deref())?;
    let run: PipelineRun = run_pipeline(&cfg, &PipelineOptions::default())?;
    let messages: Vec<&Vec<u8>> = match args.frames {
        Some(n) => run.messages.iter().take(n).collect(),
        None => run.messages.iter().collect(),
    };

    let slot = FrameSlot::new();
    let config = ForwarderConfig {
        endpoint: args.endpoint.clone(),
        period: Duration::from_millis(args.period_ms),
        stale_after: Duration::from_millis(args.stale_ms),
    };
    let handle = spawn(slot.clone(), config)?;
    let frame_gap = Duration::from_secs_f64(0.4 / args.speed);
    for bytes in &messages {
        slot.publish((*bytes).clone());
        std::thread::sleep(frame_gap);
    }
    let stats = handle.stop();
    emit_json(
        &ForwardOutcome {
            frames_published: messages.len(),
            sent: stats.sent(),
            stale_suppressed: stats.stale_suppressed(),
            send_errors: stats.send_errors(),
        },
        None,
    )
}
