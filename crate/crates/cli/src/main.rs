//! `popcast`: train surrogates, run the reference solver, evaluate
//! checkpoints, compare fields and plot results.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use popcast::demography::{Births, Domain, InitialProfile, Problem};
use popcast::networks::Model;
use popcast::plot::{field_svg, loss_svg};
use popcast::solver::{max_abs_difference, relative_l2, solve_upwind, Field, GridSpec};
use popcast::training::{read_loss_csv, save_checkpoint, load_checkpoint, train, write_loss_csv, Checkpoint, LOSS_HEADER};

use config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] popcast::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numeric() => 3,
            CliError::Core(popcast::Error::InvalidArgument(_)) => 2,
            CliError::Core(_) => 4,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "popcast", version, about = "Physics-informed population surrogates")]
struct Cli {
    /// Worker threads for loss evaluation (results do not depend on it).
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a surrogate; writes loss.csv, checkpoint.pfck and manifest.txt.
    Train(TrainArgs),
    /// Solve the reference upwind scheme; writes field.csv.
    Reference(ReferenceArgs),
    /// Evaluate a checkpoint on a lattice; writes field.csv.
    Predict(PredictArgs),
    /// Print rel_l2 and max_abs between a field and a reference field.
    Compare(CompareArgs),
    /// Render a field or loss CSV as plot.svg.
    Plot(PlotArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Flat key = value file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// pinn or lstm-pinn.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    n_interior: Option<String>,
    #[arg(long)]
    m_initial: Option<String>,
    #[arg(long)]
    k_boundary: Option<String>,
    #[arg(long)]
    quadrature_nodes: Option<String>,
    #[arg(long)]
    lambda1: Option<String>,
    #[arg(long)]
    lambda2: Option<String>,
    #[arg(long)]
    lambda3: Option<String>,
    #[arg(long)]
    epsilon0: Option<String>,
    /// Early-stop threshold on the total loss, or "none".
    #[arg(long)]
    threshold: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    /// Comma-separated layer widths of the feed-forward surrogate.
    #[arg(long)]
    widths: Option<String>,
    #[arg(long)]
    lstm_layers: Option<String>,
    #[arg(long)]
    lstm_hidden: Option<String>,
    #[arg(long)]
    physical_aging: bool,
    /// CSV with header age,density replacing the default initial profile.
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl TrainArgs {
    fn flags(&self) -> Vec<(&'static str, String)> {
        let text = [
            ("model", &self.model),
            ("scenario", &self.scenario),
            ("epochs", &self.epochs),
            ("seed", &self.seed),
            ("lr", &self.lr),
            ("n_interior", &self.n_interior),
            ("m_initial", &self.m_initial),
            ("k_boundary", &self.k_boundary),
            ("quadrature_nodes", &self.quadrature_nodes),
            ("lambda1", &self.lambda1),
            ("lambda2", &self.lambda2),
            ("lambda3", &self.lambda3),
            ("epsilon0", &self.epsilon0),
            ("threshold", &self.threshold),
            ("dropout", &self.dropout),
            ("widths", &self.widths),
            ("lstm_layers", &self.lstm_layers),
            ("lstm_hidden", &self.lstm_hidden),
        ];
        let mut flags: Vec<_> = text
            .into_iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k, v.clone())))
            .collect();
        if self.physical_aging {
            flags.push(("physical_aging", "true".into()));
        }
        if let Some(p) = &self.profile {
            flags.push(("profile", p.display().to_string()));
        }
        if let Some(p) = &self.out {
            flags.push(("out", p.display().to_string()));
        }
        flags
    }
}

#[derive(Args, Debug)]
struct ReferenceArgs {
    /// Policy scenario, or "none" for the birth-free problem.
    #[arg(long, default_value = "three-child")]
    scenario: String,
    #[arg(long, default_value_t = 201)]
    na: usize,
    #[arg(long, default_value_t = 601)]
    nt: usize,
    #[arg(long)]
    physical_aging: bool,
    #[arg(long)]
    profile: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 101)]
    na: usize,
    #[arg(long, default_value_t = 31)]
    nt: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Field under test.
    field: PathBuf,
    /// Reference field.
    reference: PathBuf,
}

#[derive(Args, Debug)]
struct PlotArgs {
    /// A field CSV (age,year,density) or a loss CSV (epoch,total,pde,ic,bc).
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    title: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(popcast::Error::Io)?;
    Ok(())
}

fn cmd_train(args: &TrainArgs, threads: usize) -> Result<(), CliError> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &args.config {
        cfg.apply_file(path)?;
    }
    for (key, value) in args.flags() {
        cfg.set(key, &value)?;
    }
    let out = cfg
        .out
        .clone()
        .filter(|p| !p.as_os_str().is_empty())
        .ok_or_else(|| CliError::Usage("missing output directory (use --out)".into()))?;
    let scenario = cfg.scenario()?;
    let problem = cfg.problem()?;
    let config = cfg.train_config(threads);
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let model = Model::init(&cfg.architecture(), cfg.seed).map_err(|e| CliError::Usage(e.to_string()))?;

    create_dir(&out)?;
    std::fs::write(out.join("manifest.txt"), cfg.to_text()).map_err(popcast::Error::Io)?;
    let mut records = Vec::with_capacity(cfg.epochs);
    let result = train(model, &problem, &config, |r| records.push(*r));
    let write_log = |records: &[_]| -> Result<(), CliError> {
        let file = std::fs::File::create(out.join("loss.csv")).map_err(popcast::Error::Io)?;
        write_loss_csv(file, records)?;
        Ok(())
    };
    let checkpoint = |model: Model, epoch: usize| Checkpoint {
        model,
        domain: problem.domain,
        scenario: scenario.name().to_string(),
        seed: cfg.seed,
        epoch,
        dropout: cfg.dropout,
        loss_history: Some("loss.csv".into()),
    };
    match result {
        Ok(outcome) => {
            write_log(&outcome.records)?;
            save_checkpoint(&out.join("checkpoint.pfck"), &checkpoint(outcome.model, outcome.records.len()))?;
            Ok(())
        }
        Err(popcast::Error::Diverged {
            epoch,
            total,
            pde,
            ic,
            bc,
            params,
        }) => {
            write_log(&records)?;
            let model = Model::unflatten(&cfg.architecture(), params.clone())?;
            save_checkpoint(&out.join("diverged.pfck"), &checkpoint(model, epoch - 1))?;
            Err(popcast::Error::Diverged {
                epoch,
                total,
                pde,
                ic,
                bc,
                params,
            }
            .into())
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_reference(args: &ReferenceArgs) -> Result<(), CliError> {
    let births: Births = args.scenario.parse().map_err(|e: popcast::Error| CliError::Usage(e.to_string()))?;
    let mut problem = Problem::new(popcast::demography::PolicyScenario::ThreeChild);
    problem.births = births;
    if args.physical_aging {
        problem.domain = Domain::default().with_physical_aging();
    }
    if let Some(path) = &args.profile {
        problem.profile = InitialProfile::from_csv(path)?;
    }
    let grid = GridSpec::new(args.na, args.nt).map_err(|e| CliError::Usage(e.to_string()))?;
    let field = solve_upwind(&problem, grid)?;
    create_dir(&args.out)?;
    field.write_csv(&args.out.join("field.csv"))?;
    Ok(())
}

fn cmd_predict(args: &PredictArgs) -> Result<(), CliError> {
    let cp = load_checkpoint(&args.checkpoint)?;
    let grid = GridSpec::new(args.na, args.nt).map_err(|e| CliError::Usage(e.to_string()))?;
    let field = Field::from_surrogate(cp.domain, grid, &cp.model);
    if field.values().iter().any(|v| !v.is_finite()) {
        return Err(popcast::Error::NonFinite {
            context: "surrogate prediction".into(),
        }
        .into());
    }
    create_dir(&args.out)?;
    field.write_csv(&args.out.join("field.csv"))?;
    Ok(())
}

fn cmd_compare(args: &CompareArgs) -> Result<String, CliError> {
    let alpha = Domain::default().alpha;
    let field = Field::read_csv(&args.field, alpha)?;
    let reference = Field::read_csv(&args.reference, alpha)?;
    if field.grid() != reference.grid() || field.domain() != reference.domain() {
        return Err(CliError::Usage(format!(
            "lattices differ: {}×{} vs {}×{}",
            field.grid().na,
            field.grid().nt,
            reference.grid().na,
            reference.grid().nt
        )));
    }
    let rel = relative_l2(&field, &reference)?;
    let max_abs = max_abs_difference(&field, &reference)?;
    Ok(format!("rel_l2={rel} max_abs={max_abs}"))
}

fn cmd_plot(args: &PlotArgs) -> Result<(), CliError> {
    let header = std::fs::read_to_string(&args.input)
        .map_err(popcast::Error::Io)?
        .lines()
        .next()
        .map(|l| l.trim().to_string());
    let malformed = |reason: &str| popcast::Error::Malformed {
        path: args.input.clone(),
        reason: reason.into(),
    };
    let svg = match header.as_deref() {
        Some("age,year,density") => {
            let field = Field::read_csv(&args.input, Domain::default().alpha)?;
            field_svg(&field, args.title.as_deref().unwrap_or("Population density"))?
        }
        Some(h) if h == LOSS_HEADER.join(",") => {
            let records = read_loss_csv(&args.input)?;
            if records.is_empty() {
                return Err(malformed("loss log has no rows").into());
            }
            loss_svg(&records, args.title.as_deref().unwrap_or("Training loss"))?
        }
        _ => return Err(malformed("not a field or loss CSV").into()),
    };
    create_dir(&args.out)?;
    std::fs::write(args.out.join("plot.svg"), svg).map_err(popcast::Error::Io)?;
    Ok(())
}

fn run(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Train(a) => cmd_train(a, cli.threads),
        Command::Reference(a) => cmd_reference(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Compare(a) => {
            println!("{}", cmd_compare(a)?);
            Ok(())
        }
        Command::Plot(a) => cmd_plot(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
