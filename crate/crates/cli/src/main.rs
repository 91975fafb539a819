use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use autoreparam::data::{load_dataset, DatasetBundle};
use autoreparam::inference::{HmcConfig, Leapfrog};
use autoreparam::oracle::{crossover_curve, log_grid};
use autoreparam::pipeline::{run_method, Method};
use autoreparam::reparam::reparameterisable_sites;
use autoreparam::vi::ViConfig;
use autoreparam::zoo;
use autoreparam_cli::record::{append_summary, ExperimentSpec, ResultRecord};
use autoreparam_cli::{svg, CliError};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "autoreparam", version, about = "Reparameterised HMC experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one sampler on one model and write a JSON record.
    Run {
        #[command(flatten)]
        run: RunArgs,
        /// Leapfrog steps per transition, or `auto` to sweep 1..128.
        #[arg(long, default_value = "auto")]
        leapfrog: String,
    },
    /// Condition numbers of the conjugate model over a range of data strengths.
    Analytic {
        #[arg(long)]
        sigma_mu: f64,
        #[arg(long)]
        q_min: f64,
        #[arg(long)]
        q_max: f64,
        #[arg(long)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Greyscale map of fitted centring weights from VIP records.
    Heatmap {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every leapfrog count in 1, 2, 4, …, 128 and keep the best.
    SweepLeapfrog {
        #[command(flatten)]
        run: RunArgs,
        /// Also write the sweep table as CSV.
        #[arg(long)]
        table: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Profile {
    Desk,
    Full,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    model: String,
    #[arg(long)]
    method: String,
    /// Dataset CSV; not needed for the funnel.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "desk")]
    profile: Profile,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    adapt: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    vi_steps: Option<usize>,
    #[arg(long)]
    vi_mc: Option<usize>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Append a summary row to this CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

impl RunArgs {
    fn spec(&self, leapfrog: Leapfrog) -> Result<ExperimentSpec, CliError> {
        let method: Method = self.method.parse()?;
        let (mut hmc, mut vi) = match self.profile {
            Profile::Desk => (HmcConfig::desk(self.seed), ViConfig::desk(self.seed)),
            Profile::Full => (HmcConfig::full(self.seed), ViConfig::full(self.seed)),
        };
        hmc.num_leapfrog = leapfrog;
        if let Some(v) = self.chains {
            hmc.chains = v;
        }
        if let Some(v) = self.warmup {
            hmc.warmup_steps = v;
        }
        if let Some(v) = self.adapt {
            hmc.adapt_steps = v;
        }
        if let Some(v) = self.samples {
            hmc.samples = v;
        }
        if let Some(v) = self.vi_steps {
            vi.steps = v;
        }
        if let Some(v) = self.vi_mc {
            vi.n_mc = v;
        }
        hmc.validate()?;
        vi.validate()?;
        Ok(ExperimentSpec {
            model: self.model.clone(),
            data: self.data.as_ref().map(|p| p.display().to_string()),
            method,
            hmc,
            vi,
            out: self.out.display().to_string(),
            seed: self.seed,
        })
    }
}

fn parse_leapfrog(s: &str) -> Result<Leapfrog, CliError> {
    if s == "auto" {
        return Ok(Leapfrog::Auto);
    }
    match s.parse::<usize>() {
        Ok(l) if l > 0 => Ok(Leapfrog::Fixed(l)),
        _ => Err(CliError::Usage(format!(
            "--leapfrog must be `auto` or a positive integer, got `{s}`"
        ))),
    }
}

/// Writes via a sibling temporary file so a failed write leaves nothing
/// behind.
fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let result = fs::File::create(&tmp)
        .and_then(|mut f| f.write_all(contents.as_bytes()).and_then(|_| f.sync_all()))
        .and_then(|_| fs::rename(&tmp, path));
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(CliError::io(path, e));
    }
    Ok(())
}

fn execute(spec: ExperimentSpec, csv: Option<&Path>) -> Result<ResultRecord, CliError> {
    let entry = zoo::entry(&spec.model)?;
    let bundle = match (entry.file, &spec.data) {
        (_, Some(path)) => load_dataset(entry.dataset, Path::new(path))?,
        (None, None) => DatasetBundle::default(),
        (Some(file), None) => {
            return Err(CliError::Usage(format!(
                "model `{}` needs --data (expected a file like {file})",
                spec.model
            )))
        }
    };
    let model = (entry.build)(&bundle)?;
    let run = run_method(&model, spec.method, &spec.vi, &spec.hmc)?;
    let sites = reparameterisable_sites(&model)?;
    let out = PathBuf::from(&spec.out);
    let record = ResultRecord::new(spec, &run, &sites);
    write_atomic(&out, &record.to_json()?)?;
    if let Some(csv) = csv {
        if let Err(e) = append_summary(csv, &record.summary()) {
            let _ = fs::remove_file(&out);
            return Err(e);
        }
    }
    Ok(record)
}

fn cmd_run(args: &RunArgs, leapfrog: &str) -> Result<(), CliError> {
    let spec = args.spec(parse_leapfrog(leapfrog)?)?;
    let record = execute(spec, args.csv.as_deref())?;
    let d = &record.diagnostics;
    println!(
        "{} {}: ESS/1000 grads {:.3} ± {:.3} (L = {}, min ESS {:.1}, {} gradients)",
        record.spec.model,
        record.spec.method,
        d.ess_per_1000_grads,
        record.stderr,
        d.num_leapfrog,
        d.min_ess,
        d.grad_evals
    );
    Ok(())
}

fn cmd_sweep(args: &RunArgs, table: Option<&Path>) -> Result<(), CliError> {
    let spec = args.spec(Leapfrog::Auto)?;
    let record = execute(spec, args.csv.as_deref())?;
    let best = record.diagnostics.num_leapfrog;
    println!("{:>4} {:>20} {:>12} {:>12}", "L", "ess_per_1000_grads", "min_ess", "grad_evals");
    for row in &record.sweep {
        let mark = if row.num_leapfrog == best { " *" } else { "" };
        println!(
            "{:>4} {:>20.4} {:>12.1} {:>12}{mark}",
            row.num_leapfrog, row.ess_per_1000_grads, row.min_ess, row.grad_evals
        );
    }
    if let Some(path) = table {
        let mut w = csv::Writer::from_writer(Vec::new());
        let to_usage = |e: csv::Error| CliError::Usage(format!("{}: {e}", path.display()));
        for row in &record.sweep {
            w.serialize(row).map_err(to_usage)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        if let Err(e) = write_atomic(path, &String::from_utf8_lossy(&bytes)) {
            let _ = fs::remove_file(&record.spec.out);
            return Err(e);
        }
    }
    Ok(())
}

fn cmd_analytic(
    sigma_mu: f64,
    q_min: f64,
    q_max: f64,
    points: usize,
    out: &Path,
    svg_path: Option<&Path>,
) -> Result<(), CliError> {
    if !(q_min > 0.0 && q_min < q_max && q_max.is_finite()) {
        return Err(CliError::Usage(format!(
            "need 0 < q-min < q-max, got [{q_min}, {q_max}]"
        )));
    }
    if points < 2 {
        return Err(CliError::Usage(format!("need at least 2 points, got {points}")));
    }
    if !(sigma_mu > 0.0 && sigma_mu.is_finite()) {
        return Err(CliError::Usage(format!("sigma-mu must be positive, got {sigma_mu}")));
    }
    let rows = crossover_curve(sigma_mu, &log_grid(q_min, q_max, points))?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)
            .map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| CliError::Usage(format!("{}: {e}", out.display())))?;
    write_atomic(out, &String::from_utf8_lossy(&bytes))?;
    if let Some(path) = svg_path {
        if let Err(e) = write_atomic(path, &svg::crossover_plot(&rows, sigma_mu)) {
            let _ = fs::remove_file(out);
            return Err(e);
        }
    }
    Ok(())
}

fn cmd_heatmap(inputs: &[PathBuf], out: &Path) -> Result<(), CliError> {
    let mut rows = Vec::with_capacity(inputs.len());
    for path in inputs {
        let record = ResultRecord::read(path)?;
        let lambda = match (record.spec.method, record.vi.lambda) {
            (Method::Vip, Some(lambda)) => lambda,
            (method, _) => {
                return Err(CliError::Usage(format!(
                    "{}: expected a vip record, found method `{method}`",
                    path.display()
                )))
            }
        };
        rows.push(svg::HeatmapRow {
            label: format!("{} (seed {})", record.spec.model, record.spec.seed),
            lambda,
        });
    }
    write_atomic(out, &svg::heatmap(&rows))
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Run { run, leapfrog } => cmd_run(&run, &leapfrog),
        Command::SweepLeapfrog { run, table } => cmd_sweep(&run, table.as_deref()),
        Command::Analytic {
            sigma_mu,
            q_min,
            q_max,
            points,
            out,
            svg,
        } => cmd_analytic(sigma_mu, q_min, q_max, points, &out, svg.as_deref()),
        Command::Heatmap { inputs, out } => cmd_heatmap(&inputs, &out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
