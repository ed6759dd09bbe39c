use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nlfr_cli::config::{parse_config, CommandKind, Overrides, Provenance};
use nlfr_cli::{commands, CliError};

#[derive(Parser)]
#[command(name = "nlfr", version, about = "Linear and nonlinear Fréchet regression for distributions and SPD matrices")]
struct Cli {
    /// Run configuration (TOML, or JSON when the extension is .json).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Print the normalized configuration and provenance instead of running.
    #[arg(long, global = true)]
    dry_run: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Comma-separated: LFR, NLFR, SNLFR, NLFR-R.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// csv or json.
    #[arg(long)]
    format: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one simulation design and report MSE_Y / MSE_m.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Design: 1.1, 1.2, 1.3 (distributions) or 2.1, 2.2, 2.3 (SPD).
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        p: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Run the benchmark sweep over several designs.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Fit models on a user dataset and write a model document.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// table or life_table.
        #[arg(long)]
        data_format: Option<String>,
        /// wasserstein, spd_frobenius or spd_cholesky.
        #[arg(long)]
        space: Option<String>,
    },
    /// Predict from a model document at new covariates.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        covariates: Option<PathBuf>,
    },
    /// Re-run the configuration embedded in an artifact.
    Replay {
        artifact: PathBuf,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
}

fn path_str(p: PathBuf) -> String {
    p.display().to_string()
}

fn common_overrides(o: &mut Overrides, c: Common) -> Result<(), CliError> {
    if let Some(seed) = c.seed {
        let v = i64::try_from(seed).map_err(|_| CliError::validation("seed", "must fit in a signed 64-bit integer"))?;
        o.set("seed", v);
    }
    o.set_opt("parallelism", c.parallelism.map(|v| v as i64));
    o.set_opt("methods", c.methods.map(|m| toml::Value::Array(m.into_iter().map(toml::Value::String).collect())));
    o.set_opt("output.path", c.output.map(path_str));
    o.set_opt("output.format", c.format);
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut o = Overrides::default();
    let int = |v: Option<usize>| v.map(|x| x as i64);
    let command = match cli.command {
        Cmd::Replay { artifact, output } => {
            let (mut cfg, _) = commands::replay(&artifact)?;
            cfg.output.path = output;
            let prov = Provenance {
                tool: format!("nlfr {}", env!("CARGO_PKG_VERSION")),
                config_path: Some(path_str(artifact)),
                overrides: vec![],
                seed: cfg.seed,
                config_sha256: cfg.sha256(),
            };
            return commands::execute(&cfg, &prov);
        }
        Cmd::Simulate { common, model, n, p, replications } => {
            common_overrides(&mut o, common)?;
            o.set_opt("simulate.model", model).set_opt("simulate.n", int(n)).set_opt("simulate.p", int(p));
            o.set_opt("simulate.replications", int(replications));
            CommandKind::Simulate
        }
        Cmd::Bench { common, n, replications } => {
            common_overrides(&mut o, common)?;
            o.set_opt("bench.n", int(n)).set_opt("bench.replications", int(replications));
            CommandKind::Bench
        }
        Cmd::Fit { common, data, data_format, space } => {
            common_overrides(&mut o, common)?;
            o.set_opt("fit.data", data.map(path_str)).set_opt("fit.format", data_format).set_opt("fit.space", space);
            CommandKind::Fit
        }
        Cmd::Predict { common, model, covariates } => {
            common_overrides(&mut o, common)?;
            o.set_opt("predict.model", model.map(path_str)).set_opt("predict.covariates", covariates.map(path_str));
            CommandKind::Predict
        }
    };
    let (cfg, prov) = parse_config(cli.config.as_deref(), command, &o)?;
    if cli.dry_run {
        #[derive(serde::Serialize)]
        struct Echo<'a> {
            provenance: &'a Provenance,
        }
        let prov_toml = toml::to_string(&Echo { provenance: &prov }).expect("provenance serializes");
        print!("{}\n{}", cfg.to_toml(), prov_toml);
        return Ok(());
    }
    commands::execute(&cfg, &prov)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("nlfr: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
