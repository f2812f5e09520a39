use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand, ValueEnum};
use load_core::agent::{check_compatible, init_params, AttentionPolicy, AuxMode, NetConfig, Switch};
use load_core::config::{Config, ConfigError};
use load_core::probe::{self, Encoder, ProbeConfig, PROBE_HEADER};
use load_core::report::{build_report, load_run, method_name, ReportError};
use load_core::tensor::{read_checkpoint, ParamGroup};
use load_core::train::{evaluate_policy, final_checkpoint, Precision, TrainError, Trainer};
use load_core::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "load", version, about = "Attentive object-centric DQN in a toy kitchen")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one agent, or a task x method x seed matrix as separate processes.
    Train(TrainArgs),
    /// Evaluate a checkpoint.
    Eval(EvalArgs),
    /// Linear probes on frozen encoders.
    Probe(ProbeArgs),
    /// Generate an interaction dataset.
    Dataset(DatasetArgs),
    /// Learning curves, %AUC bars and a combined CSV from run directories.
    Report(ReportArgs),
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    budget: Option<u64>,
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    aux: Option<AuxMode>,
    #[arg(long = "attention-policy")]
    attention_policy: Option<AttentionPolicy>,
    #[arg(long = "attention-model")]
    attention_model: Option<Switch>,
}

impl Overrides {
    fn resolve(&self) -> Result<Config, CliError> {
        let mut c = match &self.config {
            Some(p) => Config::load(p)?,
            None => Config::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.out {
            c.out_dir = v.clone();
        }
        if let Some(v) = self.budget {
            c.train.budget = v;
        }
        if let Some(v) = &self.task {
            c.task = v.clone();
        }
        if let Some(v) = self.aux {
            c.net.aux = v;
        }
        if let Some(v) = self.attention_policy {
            c.net.attention_policy = v;
        }
        if let Some(v) = self.attention_model {
            c.net.attention_model = v;
        }
        c.validate()?;
        Ok(c)
    }

    /// Command-line form of the overrides, for child processes.
    fn argv(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut push = |k: &str, val: String| {
            v.push(k.to_string());
            v.push(val);
        };
        if let Some(p) = &self.config {
            push("--config", p.display().to_string());
        }
        if let Some(b) = self.budget {
            push("--budget", b.to_string());
        }
        if let Some(a) = self.attention_policy {
            push("--attention-policy", a.name().to_string());
        }
        if let Some(a) = self.attention_model {
            push("--attention-model", if a == Switch::On { "on" } else { "off" }.to_string());
        }
        v
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    o: Overrides,
    /// Matrix mode: comma-separated tasks.
    #[arg(long, value_delimiter = ',')]
    tasks: Vec<String>,
    /// Matrix mode: comma-separated auxiliary modes.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<AuxMode>,
    /// Matrix mode: comma-separated seeds.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Matrix mode: concurrent child processes.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    o: Overrides,
    /// Checkpoint file, or a run directory containing final.bin.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 5000)]
    frames: u64,
    #[arg(long, default_value_t = 0.1)]
    epsilon: f64,
}

#[derive(Args)]
struct ProbeArgs {
    /// JSON-lines dataset.
    #[arg(long)]
    dataset: PathBuf,
    /// Run directory (config.json + final.bin); repeatable.
    #[arg(long = "run")]
    runs: Vec<PathBuf>,
    /// Checkpoint probed with the configuration given by --config.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    probe_seeds: u64,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    /// Skip the oracle-feature and random-encoder control rows.
    #[arg(long)]
    no_controls: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum DatasetKind {
    Programmatic,
    Random,
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long, value_enum)]
    kind: DatasetKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output JSON-lines file.
    #[arg(long)]
    out: PathBuf,
    /// Interaction samples for the random dataset.
    #[arg(long, default_value_t = 4000)]
    count: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories, each with config.json and metrics.csv.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Invalid(String),
    #[error("{0}")]
    NonFinite(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Invalid(_) => 2,
            CliError::NonFinite(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } => CliError::NonFinite(e.to_string()),
            TrainError::Io(_) => CliError::Invalid(e.to_string()),
            other => CliError::Failed(other.to_string()),
        }
    }
}

impl From<ReportError> for CliError {
    fn from(e: ReportError) -> Self {
        CliError::Invalid(e.to_string())
    }
}

fn invalid(e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Probe(a) => cmd_probe(a),
        Cmd::Dataset(a) => cmd_dataset(a),
        Cmd::Report(a) => cmd_report(a),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}

fn cmd_train(a: TrainArgs) -> Result<(), CliError> {
    if !(a.tasks.is_empty() && a.methods.is_empty() && a.seeds.is_empty()) {
        return train_matrix(&a);
    }
    let cfg = a.o.resolve()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| invalid(format!("{}: {e}", cfg.out_dir.display())))?;
    std::fs::write(cfg.out_dir.join("config.json"), cfg.to_json())
        .map_err(|e| invalid(format!("{}: {e}", cfg.out_dir.display())))?;
    match cfg.train.precision {
        Precision::F64 => train_with::<f64>(&cfg),
        Precision::F32 => train_with::<f32>(&cfg),
    }
}

fn train_with<T: Scalar>(cfg: &Config) -> Result<(), CliError> {
    let mut trainer = Trainer::<T>::new(cfg.run_spec()?)?;
    trainer.run(Some(&cfg.out_dir), |r| {
        log::info!(
            "step {} episodes {} eval_sr {:.3} train_sr {:.3} loss_dqn {:.5} loss_model {:.5} eps {:.3}",
            r.step,
            r.episodes,
            r.eval_sr,
            r.train_sr,
            r.loss_dqn,
            r.loss_model,
            r.epsilon
        );
    })?;
    Ok(())
}

/// Runs every task x method x seed combination as its own process under
/// `<out>/<task>/<method>/seed<k>`.
fn train_matrix(a: &TrainArgs) -> Result<(), CliError> {
    let base = a.o.resolve()?;
    let tasks = if a.tasks.is_empty() { vec![base.task.clone()] } else { a.tasks.clone() };
    let methods = if a.methods.is_empty() { vec![base.net.aux] } else { a.methods.clone() };
    let seeds = if a.seeds.is_empty() { vec![base.seed] } else { a.seeds.clone() };
    let exe = std::env::current_exe().map_err(|e| CliError::Failed(e.to_string()))?;
    let mut jobs = Vec::new();
    for t in &tasks {
        load_core::sim::TaskSpec::by_name(t).map_err(invalid)?;
        for m in &methods {
            for s in &seeds {
                let mut c = base.clone();
                c.net.aux = *m;
                let dir = base.out_dir.join(t).join(method_name(&c)).join(format!("seed{s}"));
                let mut args = vec!["train".to_string()];
                args.extend(a.o.argv());
                args.extend([
                    "--task".into(),
                    t.clone(),
                    "--aux".into(),
                    m.name().into(),
                    "--seed".into(),
                    s.to_string(),
                    "--out".into(),
                    dir.display().to_string(),
                ]);
                jobs.push(args);
            }
        }
    }
    let mut failures = Vec::new();
    for chunk in jobs.chunks(a.jobs.max(1)) {
        let children: Vec<_> = chunk
            .iter()
            .map(|args| Command::new(&exe).args(args).spawn().map(|c| (args, c)))
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Failed(e.to_string()))?;
        for (args, mut child) in children {
            let status = child.wait().map_err(|e| CliError::Failed(e.to_string()))?;
            if !status.success() {
                failures.push(format!("{} ({status})", args.join(" ")));
            }
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Failed(format!("failed runs:\n  {}", failures.join("\n  "))))
    }
}

fn load_params(path: &Path, net: &NetConfig) -> Result<ParamGroup<f64>, CliError> {
    let f = File::open(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    let p: ParamGroup<f64> =
        read_checkpoint(BufReader::new(f)).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    check_compatible(&p, net).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
    Ok(p)
}

fn cmd_eval(a: EvalArgs) -> Result<(), CliError> {
    let (ckpt, mut o) = if a.checkpoint.is_dir() {
        let mut o = a.o.clone();
        if o.config.is_none() {
            o.config = Some(a.checkpoint.join("config.json"));
        }
        (final_checkpoint(&a.checkpoint), o)
    } else {
        (a.checkpoint.clone(), a.o.clone())
    };
    if o.out.is_none() {
        o.out = Some(PathBuf::from("."));
    }
    let cfg = o.resolve()?;
    if !(0.0..=1.0).contains(&a.epsilon) || a.frames == 0 {
        return Err(invalid("--epsilon must lie in [0, 1] and --frames be positive"));
    }
    let params = load_params(&ckpt, &cfg.net)?;
    let spec = cfg.run_spec()?;
    let r = evaluate_policy(&params, &cfg.net, &spec.task, a.frames, a.epsilon, cfg.seed)
        .map_err(|e| CliError::Failed(e.to_string()))?;
    println!(
        "task={} success_rate={} episodes={} successes={}",
        cfg.task, r.success_rate, r.episodes, r.successes
    );
    Ok(())
}

fn cmd_probe(a: ProbeArgs) -> Result<(), CliError> {
    let f = File::open(&a.dataset).map_err(|e| invalid(format!("{}: {e}", a.dataset.display())))?;
    let samples = probe::read_dataset(BufReader::new(f)).map_err(invalid)?;
    if samples.is_empty() {
        return Err(invalid("dataset is empty"));
    }
    let mut encoders: Vec<(String, Encoder)> = Vec::new();
    for dir in &a.runs {
        let cfg = Config::load(&dir.join("config.json"))?;
        let params = load_params(&final_checkpoint(dir), &cfg.net)?;
        let name = format!("{}/seed{}", method_name(&cfg), cfg.seed);
        encoders.push((name, Encoder::Network { params, net: cfg.net }));
    }
    if let Some(ck) = &a.checkpoint {
        let cfg = match &a.config {
            Some(p) => Config::load(p)?,
            None => return Err(invalid("--checkpoint needs --config for the network dimensions")),
        };
        let params = load_params(ck, &cfg.net)?;
        encoders.push((method_name(&cfg), Encoder::Network { params, net: cfg.net }));
    }
    if !a.no_controls {
        encoders.push(("oracle_features".into(), Encoder::Oracle));
        let net = NetConfig {
            aux: AuxMode::None,
            ..NetConfig::default()
        };
        let params = init_params(&net, &mut ChaCha8Rng::seed_from_u64(a.seed));
        encoders.push(("random_init".into(), Encoder::Network { params, net }));
    }
    if encoders.is_empty() {
        return Err(invalid("nothing to probe: give --run or --checkpoint, or drop --no-controls"));
    }
    let cfg = ProbeConfig {
        epochs: a.epochs,
        seeds: a.probe_seeds,
        ..ProbeConfig::default()
    };
    std::fs::create_dir_all(&a.out).map_err(|e| invalid(format!("{}: {e}", a.out.display())))?;
    let path = a.out.join("probe.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(|e| invalid(format!("{}: {e}", path.display())))?);
    writeln!(w, "{PROBE_HEADER}").map_err(invalid)?;
    for (name, enc) in &encoders {
        let rows = probe::probe_encoder(name, enc, &samples, &cfg).map_err(|e| CliError::Failed(e.to_string()))?;
        for target in probe::ProbeTarget::ALL {
            let v: Vec<f64> = rows.iter().filter(|r| r.target == target).map(|r| r.map).collect();
            let (m, se) = probe::mean_stderr(&v);
            println!("{name:>24} {:<12} mAP {:.3} ± {:.3}", target.name(), m, se);
        }
        for r in rows {
            writeln!(w, "{}", r.csv()).map_err(invalid)?;
        }
    }
    w.flush().map_err(invalid)?;
    Ok(())
}

fn cmd_dataset(a: DatasetArgs) -> Result<(), CliError> {
    let samples = match a.kind {
        DatasetKind::Programmatic => probe::gen_programmatic(a.seed, load_core::train::eval_threads()),
        DatasetKind::Random => probe::gen_random(a.seed, a.count),
    }
    .map_err(|e| CliError::Failed(e.to_string()))?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| invalid(format!("{}: {e}", parent.display())))?;
    }
    let f = File::create(&a.out).map_err(|e| invalid(format!("{}: {e}", a.out.display())))?;
    probe::write_dataset(&samples, BufWriter::new(f)).map_err(|e| invalid(format!("{}: {e}", a.out.display())))?;
    println!("{} tuples written to {}", samples.len(), a.out.display());
    Ok(())
}

fn cmd_report(a: ReportArgs) -> Result<(), CliError> {
    let runs = a.runs.iter().map(|d| load_run(d)).collect::<Result<Vec<_>, _>>()?;
    let rep = build_report(&runs)?;
    for p in rep.write(&a.out)? {
        println!("wrote {}", p.display());
    }
    Ok(())
}
