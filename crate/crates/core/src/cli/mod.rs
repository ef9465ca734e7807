//! The `flowrnn` command-line tool.

pub mod config;
mod plot;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::conv::Kernel;
use crate::data::{self, FlowDatasetConfig, Manifest, SequenceMeta, SpriteBank, SpriteKind, Split};
use crate::equivariance::{self, max_of};
use crate::error::{Error, Result};
use crate::grid_signal::{Grid, Signal, SpaceTimeSignal};
use crate::group_flow::{FlowGenerator, FlowKind, FlowSet, GroupElement, GroupKind};
use crate::io;
use crate::learn::{self, Model, OptimizerKind, TrainConfig, ValidationSet};
use crate::rnn::{
    rollout, FernnParams, GrnnParams, LiftMode, ModelFamily, ModelSpec, Nonlinearity, RecurrentModel, RolloutMode,
};
use config::Config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_TOLERANCE: i32 = 2;

const TOLERANCE_HELP: &str = "Tolerance defaults: 1e-12 (max abs residual) for exact equivariance claims, \
1e-5 (relative error vs central differences, eps = 1e-5) for gradient checks.\n\
Exit codes: 0 success, 1 configuration or I/O error, 2 tolerance violation.";

#[derive(Parser, Debug)]
#[command(name = "flowrnn", version, about = "Flow-equivariant recurrent networks on cyclic grids")]
#[command(after_help = TOLERANCE_HELP)]
struct Cli {
    /// INI-style configuration file (`[section]` headers, `key = value` lines).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Output directory [general.out].
    #[arg(long, global = true)]
    out: Option<String>,
    /// Global seed [general.seed].
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 1 is the bit-reproducible reference [general.threads].
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Dataset directory [data.dir].
    #[arg(long, global = true)]
    data_dir: Option<String>,
    /// Override any configuration key.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Print every configuration key with its default and exit.
    #[arg(long, global = true)]
    list_keys: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a flowing-sprites dataset directory.
    GenData,
    /// Dual-rollout equivariance (or gradient) checks on random models.
    CheckEquivariance {
        /// Succeed only when the tolerance is violated [check.expect_failure].
        #[arg(long)]
        expect_failure: bool,
    },
    /// Growing bump vs bump train for the hand-built G-RNN.
    Counterexample,
    /// Train a model on a generated dataset.
    Train,
    /// Evaluate a checkpoint: aggregate, per-velocity and length curves.
    Eval,
    /// Roll a checkpoint out on one sequence.
    Rollout,
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I, env: impl IntoIterator<Item = (String, String)>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    if cli.list_keys {
        print!("{}", config::key_help());
        return EXIT_OK;
    }
    let Some(command) = cli.command else {
        eprintln!("no command given; see --help");
        return EXIT_ERROR;
    };
    match prepare(&cli, command, env).and_then(|c| execute(command, &c)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn prepare(cli: &Cli, command: Command, env: impl IntoIterator<Item = (String, String)>) -> Result<Config> {
    let text = match &cli.config {
        Some(p) => Some(std::fs::read_to_string(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?),
        None => None,
    };
    let mut overrides = Vec::new();
    for s in &cli.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects SECTION.KEY=VALUE, got `{s}`")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    let flags = [
        ("general.out", cli.out.clone()),
        ("general.seed", cli.seed.map(|v| v.to_string())),
        ("general.threads", cli.threads.map(|v| v.to_string())),
        ("data.dir", cli.data_dir.clone()),
    ];
    overrides.extend(flags.into_iter().filter_map(|(k, v)| v.map(|v| (k.to_string(), v))));
    if let Command::CheckEquivariance { expect_failure: true } = command {
        overrides.push(("check.expect_failure".into(), "true".into()));
    }
    let c = Config::load(text.as_deref(), env, &overrides)?;
    let threads: usize = c.parse("general.threads")?;
    if threads == 0 {
        return Err(Error::InvalidArgument("general.threads must be at least 1".into()));
    }
    // The global pool can only be built once per process; later calls keep it.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    Ok(c)
}

fn execute(command: Command, c: &Config) -> Result<i32> {
    let out = PathBuf::from(c.str("general.out"));
    std::fs::create_dir_all(&out)?;
    io::write_bytes(&out.join("resolved_config.ini"), c.echo().as_bytes())?;
    match command {
        Command::GenData => cmd_gen_data(c, &out),
        Command::CheckEquivariance { .. } => cmd_check(c, &out),
        Command::Counterexample => cmd_counterexample(c, &out),
        Command::Train => cmd_train(c, &out),
        Command::Eval => cmd_eval(c, &out),
        Command::Rollout => cmd_rollout(c, &out),
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    io::write_bytes(path, s.as_bytes())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::Io(e.to_string());
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.write_record(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn parse_group(s: &str) -> Result<GroupKind> {
    match s {
        "translation" => Ok(GroupKind::Translation),
        "p4" => Ok(GroupKind::RotoTranslation),
        _ => Err(Error::InvalidArgument(format!("unknown group `{s}` (translation | p4)"))),
    }
}

fn parse_split(s: &str) -> Result<Split> {
    Split::ALL
        .into_iter()
        .find(|sp| sp.name() == s)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown split `{s}`")))
}

fn dataset_config(c: &Config) -> Result<FlowDatasetConfig> {
    let cfg = FlowDatasetConfig {
        grid: Grid::square(c.parse("data.grid")?)?,
        steps: c.parse("data.steps")?,
        v_train: c.flow_set("data.v_train")?,
        v_val: c.flow_set("data.v_val")?,
        v_test: c.flow_set("data.v_test")?,
        sprites_per_sequence: c.parse("data.sprites_per_sequence")?,
        train_count: c.parse("data.train_count")?,
        val_count: c.parse("data.val_count")?,
        test_count: c.parse("data.test_count")?,
        sprite_count: c.parse("data.sprite_count")?,
        sprite_size: c.parse("data.sprite_size")?,
        sprite_kind: SpriteKind::parse(c.str("data.sprite_kind"))?,
        seed: c.parse("general.seed")?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_gen_data(c: &Config, out: &Path) -> Result<i32> {
    let cfg = dataset_config(c)?;
    let bank = match c.str("data.images") {
        "" => cfg.sprite_bank()?,
        p => SpriteBank::from_images(io::load_images(Path::new(p))?)?,
    };
    let dir = PathBuf::from(c.str("data.dir"));
    let manifest = data::write_dataset(&dir, &cfg, &bank)?;
    let rows: Vec<Vec<String>> = manifest
        .sequences
        .iter()
        .map(|e| {
            let join = |f: &dyn Fn(&data::SpriteTrack) -> String| {
                e.meta.tracks.iter().map(f).collect::<Vec<_>>().join(" ")
            };
            vec![
                e.split.name().to_string(),
                e.file.clone(),
                join(&|t| t.generator.to_string()),
                join(&|t| t.sprite_id.to_string()),
                join(&|t| format!("({},{})", t.position.0, t.position.1)),
            ]
        })
        .collect();
    write_csv(&out.join("sequences.csv"), &["split", "file", "generators", "sprite_ids", "positions"], &rows)?;
    write_json(
        &out.join("gen_data.json"),
        &json!({
            "command": "gen-data",
            "seed": cfg.seed,
            "dir": dir.display().to_string(),
            "grid": cfg.grid.height,
            "steps": cfg.steps,
            "sprites": bank.len(),
            "counts": {"train": cfg.train_count, "val": cfg.val_count, "test": cfg.test_count},
        }),
    )?;
    println!("wrote {} sequences to {}", manifest.sequences.len(), dir.display());
    Ok(EXIT_OK)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Property {
    FlowEquivariance,
    FlowInvariance,
    Static,
    Gradient,
}

fn parse_property(s: &str) -> Result<Property> {
    match s {
        "flow-equivariance" => Ok(Property::FlowEquivariance),
        "flow-invariance" => Ok(Property::FlowInvariance),
        "static" => Ok(Property::Static),
        "gradient" => Ok(Property::Gradient),
        _ => Err(Error::InvalidArgument(format!("unknown property `{s}`"))),
    }
}

struct CheckSetup {
    family: ModelFamily,
    property: Property,
    kernels: String,
    group: GroupKind,
    v: Arc<FlowSet>,
    grid: Grid,
    steps: usize,
    hidden: usize,
    kernel_size: usize,
    sigma: Nonlinearity,
}

fn random_frames(rng: &mut ChaCha8Rng, grid: Grid, steps: usize) -> SpaceTimeSignal {
    let frames = (0..steps)
        .map(|_| Signal::from_vec(grid, 1, (0..grid.area()).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("sized"))
        .collect();
    SpaceTimeSignal::new(frames).expect("nonempty")
}

fn trial_grnn(s: &CheckSetup, rng: &mut ChaCha8Rng) -> Result<GrnnParams> {
    let nr = s.group.rotations();
    let (u, w) = match s.kernels.as_str() {
        "random" => (
            Kernel::random(rng, s.hidden, 1, 1, s.kernel_size, 0.5)?,
            Kernel::random(rng, s.hidden, s.hidden, nr, s.kernel_size, 0.3 / (s.hidden * nr) as f64)?,
        ),
        "framewise" => (
            Kernel::random(rng, s.hidden, 1, 1, s.kernel_size, 0.5)?,
            Kernel::zeros(s.hidden, s.hidden, nr, s.kernel_size)?,
        ),
        "constant" => {
            let n = s.grid.height;
            if n.is_multiple_of(2) || !s.grid.is_square() {
                return Err(Error::InvalidArgument("constant kernels need an odd square grid".into()));
            }
            let area = s.grid.area() as f64;
            let a = rng.gen_range(0.1..1.0) / area;
            let b = rng.gen_range(0.1..1.0) / (area * (s.hidden * nr) as f64);
            (Kernel::constant(s.hidden, 1, 1, n, a)?, Kernel::constant(s.hidden, s.hidden, nr, n, b)?)
        }
        k => return Err(Error::InvalidArgument(format!("unknown kernel kind `{k}`"))),
    };
    GrnnParams::new(s.group, u, w, s.sigma)
}

fn trial_model(s: &CheckSetup, rng: &mut ChaCha8Rng) -> Result<RecurrentModel> {
    let g = trial_grnn(s, rng)?;
    Ok(match s.family {
        ModelFamily::Grnn => RecurrentModel::Grnn(g),
        ModelFamily::Fernn => RecurrentModel::Fernn(FernnParams::from_grnn(&g, s.v.clone(), LiftMode::Trivial)?),
        ModelFamily::FernnNontrivial => {
            RecurrentModel::Fernn(FernnParams::from_grnn(&g, s.v.clone(), LiftMode::Nontrivial)?)
        }
    })
}

fn pick_generator(rng: &mut ChaCha8Rng, v: &FlowSet, nonzero: bool) -> Result<FlowGenerator> {
    let pool: Vec<FlowGenerator> = v.iter().copied().filter(|g| !nonzero || !g.is_zero()).collect();
    if pool.is_empty() {
        return Err(Error::InvalidArgument("the generator set has no usable (nonzero) generator".into()));
    }
    Ok(pool[rng.gen_range(0..pool.len())])
}

/// One trial: `(label, per-step residuals)`.
fn run_trial(s: &CheckSetup, seed: u64, trial: usize) -> Result<(String, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 + 1);
    let model = trial_model(s, &mut rng)?;
    let f = random_frames(&mut rng, s.grid, s.steps);
    match (s.property, &model) {
        (Property::FlowEquivariance, RecurrentModel::Fernn(p)) => {
            let nu = pick_generator(&mut rng, &s.v, false)?;
            Ok((nu.to_string(), equivariance::fernn_flow_residuals(p, &f, &nu)?))
        }
        (Property::FlowEquivariance, RecurrentModel::Grnn(p)) => {
            let nu = pick_generator(&mut rng, &s.v, true)?;
            Ok((nu.to_string(), equivariance::grnn_flow_residuals(p, &f, &nu)?))
        }
        (Property::FlowInvariance, RecurrentModel::Grnn(p)) => {
            let nu = pick_generator(&mut rng, &s.v, true)?;
            Ok((nu.to_string(), equivariance::grnn_invariance_residuals(p, &f, &nu)?))
        }
        (Property::FlowInvariance, RecurrentModel::Fernn(_)) => {
            Err(Error::InvalidArgument("flow-invariance applies to G-RNNs".into()))
        }
        (Property::Static, _) => {
            let r = if s.group == GroupKind::RotoTranslation { rng.gen_range(0..4) } else { 0 };
            // Rotation flows only commute with rotations about the origin.
            let pinned = matches!(model, RecurrentModel::Fernn(_)) && s.v.kind() == FlowKind::Rotation;
            let (tx, ty) = if pinned {
                (0, 0)
            } else {
                (rng.gen_range(0..s.grid.height as i64), rng.gen_range(0..s.grid.width as i64))
            };
            let g = GroupElement::new(r, tx, ty);
            Ok((format!("r{} t({},{})", g.rotation, g.translation.0, g.translation.1), equivariance::static_residuals(&model, &f, &g)?))
        }
        (Property::Gradient, _) => unreachable!("handled separately"),
    }
}

fn check_setup(c: &Config) -> Result<CheckSetup> {
    let grid = Grid::square(c.parse("check.grid")?)?;
    let kernels = c.str("check.kernels").to_string();
    let kernel_size = if kernels == "constant" { grid.height } else { c.parse("check.kernel_size")? };
    let s = CheckSetup {
        family: ModelFamily::parse(c.str("check.family"))?,
        property: parse_property(c.str("check.property"))?,
        kernels,
        group: parse_group(c.str("check.group"))?,
        v: Arc::new(c.flow_set("check.v")?),
        grid,
        steps: c.parse("check.steps")?,
        hidden: c.parse("check.hidden_channels")?,
        kernel_size,
        sigma: Nonlinearity::parse(c.str("check.nonlinearity"))?,
    };
    if s.steps == 0 {
        return Err(Error::InvalidArgument("check.steps must be at least 1".into()));
    }
    if s.v.kind() == FlowKind::Rotation && s.group != GroupKind::RotoTranslation {
        return Err(Error::InvalidArgument("rotation flows need check.group = p4".into()));
    }
    Ok(s)
}

fn cmd_check(c: &Config, out: &Path) -> Result<i32> {
    let s = check_setup(c)?;
    let seed: u64 = c.parse("general.seed")?;
    let trials: usize = c.parse("check.trials")?;
    let expect_failure: bool = c.parse("check.expect_failure")?;
    let (tolerance, trial_reports, rows, header): (f64, Vec<Value>, Vec<Vec<String>>, Vec<&str>) =
        if s.property == Property::Gradient {
            let tol: f64 = c.parse("check.grad_tolerance")?;
            let taps: usize = c.parse("check.grad_taps")?;
            let spec = ModelSpec {
                family: s.family,
                group: s.group,
                input_channels: 1,
                hidden_channels: s.hidden,
                kernel_size: s.kernel_size,
                decoder_hidden: vec![s.hidden],
                decoder_kernel_size: 3,
                nonlinearity: s.sigma,
                flow_set: Some((*s.v).clone()),
                full_profile: false,
            };
            let (core, dec) = spec.build(seed)?;
            let model = Model::new(core, dec)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 << 32);
            let batch: Vec<_> = (0..2).map(|_| random_frames(&mut rng, s.grid, s.steps)).collect();
            let warmup = s.steps.div_ceil(2);
            let rep = learn::gradient_check(&model, &batch, warmup, s.steps - warmup, taps, 1e-5, seed)?;
            let rows = rep
                .samples
                .iter()
                .map(|p| vec![p.tensor.clone(), p.index.to_string(), num(p.analytic), num(p.numeric), num(p.rel_error)])
                .collect();
            let trial = json!({"trial": 0, "label": "gradient", "max_residual": rep.max_rel_error, "per_step": []});
            (tol, vec![trial], rows, vec!["tensor", "index", "analytic", "numeric", "rel_error"])
        } else {
            let tol: f64 = c.parse("check.tolerance")?;
            let results = (0..trials).map(|t| run_trial(&s, seed, t)).collect::<Result<Vec<_>>>()?;
            let mut rows = Vec::new();
            let mut reports = Vec::new();
            for (t, (label, per_step)) in results.iter().enumerate() {
                for (k, r) in per_step.iter().enumerate() {
                    rows.push(vec![t.to_string(), label.clone(), (k + 1).to_string(), num(*r)]);
                }
                reports.push(json!({"trial": t, "label": label, "max_residual": max_of(per_step), "per_step": per_step}));
            }
            (tol, reports, rows, vec!["trial", "label", "t", "residual"])
        };
    let max_residual =
        trial_reports.iter().map(|r| r["max_residual"].as_f64().unwrap_or(f64::INFINITY)).fold(0.0, f64::max);
    let within = max_residual <= tolerance;
    let code = if within != expect_failure { EXIT_OK } else { EXIT_TOLERANCE };
    write_csv(&out.join("residuals.csv"), &header, &rows)?;
    write_json(
        &out.join("check_equivariance.json"),
        &json!({
            "command": "check-equivariance",
            "seed": seed,
            "family": s.family.name(),
            "property": c.str("check.property"),
            "kernels": s.kernels,
            "group": s.group.name(),
            "flow_set": serde_json::to_value(&*s.v)?,
            "grid": s.grid.height,
            "steps": s.steps,
            "tolerance": tolerance,
            "expect_failure": expect_failure,
            "max_residual": max_residual,
            "within_tolerance": within,
            "exit_code": code,
            "trials": trial_reports,
        }),
    )?;
    println!(
        "{} {} on {}: max residual {max_residual:e} (tolerance {tolerance:e}) -> {}",
        s.family.name(),
        c.str("check.property"),
        c.str("check.v"),
        if within { "within tolerance" } else { "VIOLATED" }
    );
    Ok(code)
}

fn cmd_counterexample(c: &Config, out: &Path) -> Result<i32> {
    let n: usize = c.parse("counterexample.grid")?;
    let steps: usize = c.parse("counterexample.steps")?;
    let nu = c.generator("counterexample.nu")?;
    if nu.is_rotation() {
        return Err(Error::InvalidArgument("the counterexample uses a translation velocity".into()));
    }
    let grid = Grid::square(n)?;
    let grnn = GrnnParams::new(
        GroupKind::Translation,
        Kernel::delta(1, 1, 1)?,
        Kernel::delta(1, 1, 1)?,
        Nonlinearity::Identity,
    )?;
    let still = data::gen_bump_sequence(grid, &FlowGenerator::ZERO, steps, 1.0)?;
    let moving = data::gen_bump_sequence(grid, &nu, steps, 1.0)?;
    let grnn_flow = equivariance::grnn_flow_residuals(&grnn, &still, &nu)?;
    let grnn_static = equivariance::grnn_flow_residuals(&grnn, &still, &FlowGenerator::ZERO)?;
    let v = Arc::new(FlowSet::translation(nu.norm_inf().max(1) as usize));
    let fernn = FernnParams::from_grnn(&grnn, v, LiftMode::Trivial)?;
    let fernn_flow = equivariance::fernn_flow_residuals(&fernn, &still, &nu)?;
    let rows: Vec<Vec<String>> = (0..steps)
        .map(|k| vec![(k + 1).to_string(), num(grnn_flow[k]), num(grnn_static[k]), num(fernn_flow[k])])
        .collect();
    write_csv(&out.join("counterexample.csv"), &["t", "grnn_flow_residual", "grnn_static_residual", "fernn_flow_residual"], &rows)?;

    let model = RecurrentModel::Grnn(grnn);
    let hs = model.hidden_trajectory(&still)?;
    let hm = model.hidden_trajectory(&moving)?;
    let planes: Vec<(String, Vec<f64>)> = hs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(t, h)| (format!("static h{t}"), h.as_group().expect("grnn").values().to_vec()))
        .chain(
            hm.iter()
                .enumerate()
                .skip(1)
                .map(|(t, h)| (format!("moving h{t}"), h.as_group().expect("grnn").values().to_vec())),
        )
        .collect();
    let panels: Vec<plot::Panel> =
        planes.iter().map(|(t, v)| plot::Panel { title: t.clone(), rows: n, cols: n, values: v }).collect();
    io::write_bytes(&out.join("hidden_states.svg"), plot::heatmaps("G-RNN hidden states", &panels, steps).as_bytes())?;
    let pts: Vec<(f64, f64)> = grnn_flow.iter().enumerate().map(|(k, r)| ((k + 1) as f64, *r)).collect();
    let fpts: Vec<(f64, f64)> = fernn_flow.iter().enumerate().map(|(k, r)| ((k + 1) as f64, *r)).collect();
    let chart = plot::line_chart(
        &format!("flow residual, velocity {nu}"),
        "t",
        "max abs residual",
        &[plot::Series { label: "G-RNN".into(), points: &pts }, plot::Series { label: "FERNN".into(), points: &fpts }],
        false,
    );
    io::write_bytes(&out.join("residual.svg"), chart.as_bytes())?;
    write_json(
        &out.join("counterexample.json"),
        &json!({
            "command": "counterexample",
            "grid": n,
            "steps": steps,
            "nu": nu.to_string(),
            "grnn_flow_residual": grnn_flow,
            "grnn_static_residual": grnn_static,
            "fernn_flow_residual": fernn_flow,
        }),
    )?;
    println!("G-RNN flow residual by step: {grnn_flow:?}");
    Ok(EXIT_OK)
}

fn model_spec(c: &Config) -> Result<ModelSpec> {
    Ok(ModelSpec {
        family: ModelFamily::parse(c.str("model.family"))?,
        group: parse_group(c.str("model.group"))?,
        input_channels: 1,
        hidden_channels: c.parse("model.hidden_channels")?,
        kernel_size: c.parse("model.kernel_size")?,
        decoder_hidden: c.usize_list("model.decoder_hidden")?,
        decoder_kernel_size: c.parse("model.decoder_kernel_size")?,
        nonlinearity: Nonlinearity::parse(c.str("model.nonlinearity"))?,
        flow_set: Some(c.flow_set("model.v")?),
        full_profile: c.parse("model.full_profile")?,
    })
}

fn train_config(c: &Config) -> Result<TrainConfig> {
    let clip: f64 = c.parse("train.grad_clip")?;
    Ok(TrainConfig {
        lr: c.parse("train.lr")?,
        steps: c.parse("train.steps")?,
        batch: c.parse("train.batch")?,
        grad_clip: if clip > 0.0 { Some(clip) } else { None },
        seed: c.parse("general.seed")?,
        optimizer: match c.str("train.optimizer") {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            o => return Err(Error::InvalidArgument(format!("unknown optimizer `{o}`"))),
        },
        warmup: c.parse("train.warmup")?,
        horizon: c.parse("train.horizon")?,
        eval_every: c.parse("train.eval_every")?,
    })
}

fn checkpoint_path(c: &Config, key: &str, out: &Path) -> PathBuf {
    match c.str(key) {
        "" => out.join("model.fmdl"),
        p => PathBuf::from(p),
    }
}

fn load_dataset(c: &Config) -> Result<(PathBuf, Manifest)> {
    let dir = PathBuf::from(c.str("data.dir"));
    let m = data::read_manifest(&dir)
        .map_err(|e| Error::Io(format!("dataset manifest in {} unavailable ({e}); run gen-data first", dir.display())))?;
    Ok((dir, m))
}

fn velocity_keys(meta: &SequenceMeta) -> Vec<String> {
    meta.tracks.iter().map(|t| t.generator.to_string()).collect()
}

fn cmd_train(c: &Config, out: &Path) -> Result<i32> {
    let (dir, manifest) = load_dataset(c)?;
    let spec = model_spec(c)?;
    let tc = train_config(c)?;
    let seed: u64 = c.parse("general.seed")?;
    let (core, dec) = spec.build(seed)?;
    let mut model = Model::new(core, dec)?;
    let train: Vec<SpaceTimeSignal> =
        data::load_split(&dir, &manifest, Split::Train)?.into_iter().map(|(s, _)| s).collect();
    let val_pairs = data::load_split(&dir, &manifest, Split::Val)?;
    let val = ValidationSet {
        keys: val_pairs.iter().map(|(_, m)| velocity_keys(m)).collect(),
        seqs: val_pairs.into_iter().map(|(s, _)| s).collect(),
    };
    let outcome = learn::train(&mut model, &train, Some(&val), &tc, |step, r| {
        if (step + 1) % 50 == 0 {
            eprintln!("step {} train mse {:.6e}", step + 1, r.total_mse);
        }
    })?;
    let ckpt = checkpoint_path(c, "train.checkpoint", out);
    io::write_bytes(&ckpt, &io::encode_model(&model)?)?;

    let columns: Vec<String> = manifest.config.v_val.iter().map(|g| g.to_string()).collect();
    let mut header = vec!["step", "split", "total_mse"];
    header.extend(columns.iter().map(String::as_str));
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut vi = outcome.validation.iter().peekable();
    for (k, loss) in outcome.loss_curve.iter().enumerate() {
        let mut row = vec![(k + 1).to_string(), "train".into(), num(*loss)];
        row.extend(columns.iter().map(|_| String::new()));
        rows.push(row);
        while let Some((s, r)) = vi.peek() {
            if *s != k + 1 {
                break;
            }
            let mut row = vec![s.to_string(), "val".into(), num(r.total_mse)];
            let per = r.per_velocity_mse.clone().unwrap_or_default();
            row.extend(columns.iter().map(|col| per.get(col).map(|v| num(*v)).unwrap_or_default()));
            rows.push(row);
            vi.next();
        }
    }
    write_csv(&out.join("loss_curve.csv"), &header, &rows)?;
    let train_pts: Vec<(f64, f64)> = outcome.loss_curve.iter().enumerate().map(|(k, v)| ((k + 1) as f64, *v)).collect();
    let val_pts: Vec<(f64, f64)> = outcome.validation.iter().map(|(s, r)| (*s as f64, r.total_mse)).collect();
    let chart = plot::line_chart(
        &format!("{} training", spec.family.name()),
        "step",
        "MSE",
        &[plot::Series { label: "train".into(), points: &train_pts }, plot::Series { label: "val".into(), points: &val_pts }],
        true,
    );
    io::write_bytes(&out.join("loss_curve.svg"), chart.as_bytes())?;
    write_json(
        &out.join("train.json"),
        &json!({
            "command": "train",
            "seed": seed,
            "family": spec.family.name(),
            "param_count": model.param_count(),
            "steps": tc.steps,
            "checkpoint": ckpt.display().to_string(),
            "final_train_mse": outcome.loss_curve.last().copied(),
            "validation": outcome.validation.iter().map(|(s, r)| json!({"step": s, "report": r})).collect::<Vec<_>>(),
        }),
    )?;
    println!("trained {} for {} steps; checkpoint {}", spec.family.name(), tc.steps, ckpt.display());
    Ok(EXIT_OK)
}

/// Per-step autoregressive MSE out to `horizon`, with ground truth rendered
/// from the stored metadata.
fn length_curve(
    model: &Model,
    bank: &SpriteBank,
    grid: Grid,
    metas: &[SequenceMeta],
    warmup: usize,
    horizon: usize,
) -> Result<Vec<f64>> {
    let seqs = metas
        .iter()
        .map(|m| data::render_sequence(bank, grid, warmup + horizon, m))
        .collect::<Result<Vec<_>>>()?;
    Ok(learn::evaluate(model, &seqs, warmup, horizon, RolloutMode::Autoregressive)?.per_step_mse)
}

fn cmd_eval(c: &Config, out: &Path) -> Result<i32> {
    let (dir, manifest) = load_dataset(c)?;
    let ckpt = checkpoint_path(c, "eval.checkpoint", out);
    let model = io::decode_model(&io::read_bytes(&ckpt)?)?;
    let split = parse_split(c.str("eval.split"))?;
    let warmup: usize = c.parse("train.warmup")?;
    let horizon: usize = c.parse("train.horizon")?;
    let long: usize = c.parse("eval.horizon")?;
    let pairs = data::load_split(&dir, &manifest, split)?;
    let keys: Vec<Vec<String>> = pairs.iter().map(|(_, m)| velocity_keys(m)).collect();
    let metas: Vec<SequenceMeta> = pairs.iter().map(|(_, m)| m.clone()).collect();
    let seqs: Vec<SpaceTimeSignal> = pairs.into_iter().map(|(s, _)| s).collect();
    let report = learn::evaluate_grouped(&model, &seqs, &keys, warmup, horizon, RolloutMode::TeacherForced)?;
    let bank = data::load_sprite_bank(&dir, &manifest)?;
    let curve = length_curve(&model, &bank, manifest.config.grid, &metas, warmup, long)?;

    let set = manifest.config.flow_set(split);
    let per = report.per_velocity_mse.clone().unwrap_or_default();
    let vel_rows: Vec<Vec<String>> =
        set.iter().filter_map(|g| per.get(&g.to_string()).map(|v| vec![g.to_string(), num(*v)])).collect();
    write_csv(&out.join("per_velocity.csv"), &["velocity", "mse"], &vel_rows)?;
    let len_rows: Vec<Vec<String>> = curve.iter().enumerate().map(|(k, v)| vec![(k + 1).to_string(), num(*v)]).collect();
    write_csv(&out.join("length_curve.csv"), &["step", "mse"], &len_rows)?;

    if set.kind() == FlowKind::Translation {
        let r = set.iter().map(|g| g.norm_inf()).max().unwrap_or(0);
        let side = (2 * r + 1) as usize;
        let mut cells = vec![0.0; side * side];
        for g in set.iter() {
            let (vx, vy) = g.velocity();
            cells[(vx + r) as usize * side + (vy + r) as usize] = per.get(&g.to_string()).copied().unwrap_or(0.0);
        }
        let panel = plot::Panel { title: format!("rows vx = -{r}..{r}, cols vy = -{r}..{r}"), rows: side, cols: side, values: &cells };
        io::write_bytes(&out.join("per_velocity.svg"), plot::heatmaps("MSE per velocity", &[panel], 1).as_bytes())?;
    }
    let pts: Vec<(f64, f64)> = curve.iter().enumerate().map(|(k, v)| ((k + 1) as f64, *v)).collect();
    let chart = plot::line_chart("autoregressive MSE by step", "step", "MSE", &[plot::Series { label: "model".into(), points: &pts }], true);
    io::write_bytes(&out.join("length_curve.svg"), chart.as_bytes())?;
    write_json(
        &out.join("eval.json"),
        &json!({
            "command": "eval",
            "checkpoint": ckpt.display().to_string(),
            "split": split.name(),
            "test_mse": report.total_mse,
            "per_step_mse": report.per_step_mse,
            "per_velocity_mse": per,
            "length_curve": curve,
        }),
    )?;
    println!("{} mse {:.6e}", split.name(), report.total_mse);
    Ok(EXIT_OK)
}

fn cmd_rollout(c: &Config, out: &Path) -> Result<i32> {
    let (dir, manifest) = load_dataset(c)?;
    let model = io::decode_model(&io::read_bytes(&checkpoint_path(c, "rollout.checkpoint", out))?)?;
    let split = parse_split(c.str("rollout.split"))?;
    let index: usize = c.parse("rollout.index")?;
    let horizon: usize = c.parse("rollout.horizon")?;
    let warmup: usize = c.parse("train.warmup")?;
    let mode = match c.str("rollout.mode") {
        "autoregressive" => RolloutMode::Autoregressive,
        "teacher-forced" => RolloutMode::TeacherForced,
        m => return Err(Error::InvalidArgument(format!("unknown rollout mode `{m}`"))),
    };
    let entry = manifest
        .sequences
        .iter()
        .filter(|e| e.split == split)
        .nth(index)
        .ok_or_else(|| Error::InvalidArgument(format!("{} has no sequence {index}", split.name())))?;
    let bank = data::load_sprite_bank(&dir, &manifest)?;
    let grid = manifest.config.grid;
    let truth = data::render_sequence(&bank, grid, warmup + horizon, &entry.meta)?;
    let pred = rollout(&model.core, &model.decoder, &truth, warmup, horizon, mode)?;
    let target = SpaceTimeSignal::new(truth.frames()[warmup..].to_vec())?;
    let loss = learn::mse_loss(&pred, &target)?;
    io::write_bytes(&out.join("rollout.fsig"), &io::encode_sequence(&pred)?)?;
    let rows: Vec<Vec<String>> =
        loss.per_step_mse.iter().enumerate().map(|(k, v)| vec![(k + 1).to_string(), num(*v)]).collect();
    write_csv(&out.join("rollout.csv"), &["step", "mse"], &rows)?;
    let n = grid.height;
    let mut panels = Vec::new();
    for (k, f) in target.frames().iter().enumerate() {
        panels.push(plot::Panel { title: format!("truth {}", warmup + k), rows: n, cols: n, values: f.values() });
    }
    for (k, f) in pred.frames().iter().enumerate() {
        panels.push(plot::Panel { title: format!("pred {}", warmup + k), rows: n, cols: n, values: f.values() });
    }
    io::write_bytes(&out.join("rollout.svg"), plot::heatmaps("rollout", &panels, horizon).as_bytes())?;
    write_json(
        &out.join("rollout.json"),
        &json!({
            "command": "rollout",
            "split": split.name(),
            "index": index,
            "velocities": velocity_keys(&entry.meta),
            "total_mse": loss.total_mse,
            "per_step_mse": loss.per_step_mse,
        }),
    )?;
    println!("rollout mse {:.6e}", loss.total_mse);
    Ok(EXIT_OK)
}
