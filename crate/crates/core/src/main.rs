use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use polopt::cli::{self, Command, RunError, ENV_THREADS};
use polopt::config::{split_list, ConfigError, KeyValues, RunConfig};

#[derive(Parser)]
#[command(
    name = "polopt",
    version,
    about = "Optimal threshold-based policy assignment"
)]
struct Cli {
    #[command(flatten)]
    opts: GlobalOpts,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args)]
struct GlobalOpts {
    /// Run configuration file (`key = value` lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Data file; overrides `data`.
    #[arg(long, global = true)]
    data: Option<String>,
    /// Output directory; overrides `output`.
    #[arg(long = "out", global = true)]
    output: Option<String>,
    /// `avg` or `total`.
    #[arg(long, global = true)]
    objective: Option<String>,
    /// `observed` or `quantile:K`.
    #[arg(long, global = true)]
    grid: Option<String>,
    /// Lower bound on the treated share.
    #[arg(long, global = true)]
    min_share: Option<f64>,
    /// Upper bound on the treated share.
    #[arg(long, global = true)]
    max_share: Option<f64>,
    /// Cap on the number of treated units.
    #[arg(long, global = true)]
    max_treated: Option<usize>,
    /// Evaluate the unscreened rule 1[x >= c] instead of T* · 1[x >= c].
    #[arg(long, global = true)]
    no_star_screen: bool,
    /// Histogram bins for the effect distribution.
    #[arg(long, global = true)]
    bins: Option<usize>,
    /// `comma`, `tab` or `semicolon`.
    #[arg(long, global = true)]
    delimiter: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate τ(X), the RA and DIM average effects, and the τ histograms.
    Estimate,
    /// Welfare of the actual assignment, the optimum and the regret.
    Welfare,
    /// Grid search for the best thresholds on one or two variables.
    Search {
        /// Comma-separated selection variables; defaults to `select`.
        #[arg(long)]
        vars: Option<String>,
    },
    /// Scenario menu: one variable fixed, the other swept over its grid.
    Menu {
        /// `name` (fixed at its own optimum) or `name=threshold`.
        #[arg(long)]
        fixed: Option<String>,
        #[arg(long)]
        varying: Option<String>,
    },
    /// Decision boundary of T* in the plane of two variables.
    Boundary {
        #[arg(long)]
        vars: Option<String>,
        /// Neighbour count; defaults to round(sqrt(n)).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Run the whole protocol end to end.
    All,
    /// Check that a manifest's input file is unchanged.
    Verify {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn load_config(opts: &GlobalOpts, cmd: &Cmd) -> Result<(RunConfig, Option<PathBuf>), RunError> {
    let (mut kv, dir) = match &opts.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| RunError::Io(format!("{}: {e}", path.display())))?;
            (
                KeyValues::parse(&text)?,
                path.parent().map(Path::to_path_buf),
            )
        }
        None => (KeyValues::default(), None),
    };
    let mut set = |key: &str, v: Option<String>| {
        if let Some(v) = v {
            kv.set(key, v);
        }
    };
    set("data", opts.data.clone());
    set("output", opts.output.clone());
    set("objective", opts.objective.clone());
    set("grid", opts.grid.clone());
    set("min_share", opts.min_share.map(|v| v.to_string()));
    set("max_share", opts.max_share.map(|v| v.to_string()));
    set("max_treated", opts.max_treated.map(|v| v.to_string()));
    set("bins", opts.bins.map(|v| v.to_string()));
    set("delimiter", opts.delimiter.clone());
    if opts.no_star_screen {
        set("star_screen", Some("false".into()));
    }
    if let Cmd::Boundary { k, resolution, .. } = cmd {
        set("boundary_k", k.map(|v| v.to_string()));
        set("boundary_resolution", resolution.map(|v| v.to_string()));
    }
    let mut cfg = RunConfig::from_key_values(&kv)?;
    // a relative output directory sits next to the config file
    if let (Some(d), true) = (&dir, cfg.output.is_relative() && opts.output.is_none()) {
        cfg.output = d.join(&cfg.output);
    }
    Ok((cfg, dir))
}

fn two_vars(
    arg: &Option<String>,
    fallback: Option<(String, String)>,
) -> Result<(String, String), RunError> {
    match arg {
        Some(s) => match split_list(s).as_slice() {
            [a, b] => Ok((a.clone(), b.clone())),
            _ => Err(RunError::Config(ConfigError::BadValue {
                key: "vars".into(),
                reason: "expected two variables".into(),
            })),
        },
        None => fallback.ok_or(RunError::Config(ConfigError::Missing("pair"))),
    }
}

fn build_command(cmd: &Cmd, cfg: &RunConfig) -> Result<Command, RunError> {
    Ok(match cmd {
        Cmd::Estimate => Command::Estimate,
        Cmd::Welfare => Command::Welfare,
        Cmd::All => Command::All,
        Cmd::Search { vars } => {
            let vars = match vars {
                Some(v) => split_list(v),
                None if cfg.select.len() == 1 => cfg.select.clone(),
                None => match &cfg.pair {
                    Some((a, b)) if cfg.select.is_empty() => vec![a.clone(), b.clone()],
                    _ => return Err(RunError::Config(ConfigError::Missing("select"))),
                },
            };
            Command::Search { vars }
        }
        Cmd::Menu { fixed, varying } => {
            let (fixed, fixed_threshold) = match fixed {
                Some(f) => match f.split_once('=') {
                    Some((name, c)) => {
                        let c: f64 = c.trim().parse().map_err(|_| {
                            RunError::Config(ConfigError::BadValue {
                                key: "fixed".into(),
                                reason: format!("bad threshold `{c}`"),
                            })
                        })?;
                        (name.trim().to_string(), Some(c))
                    }
                    None => (f.trim().to_string(), None),
                },
                None => cfg
                    .menu_fixed
                    .clone()
                    .ok_or(RunError::Config(ConfigError::Missing("menu_fixed")))?,
            };
            let varying = varying
                .clone()
                .or_else(|| cfg.menu_varying.clone())
                .ok_or(RunError::Config(ConfigError::Missing("menu_varying")))?;
            Command::Menu {
                fixed,
                fixed_threshold,
                varying,
            }
        }
        Cmd::Boundary { vars, .. } => {
            let (x, z) = two_vars(vars, cfg.pair.clone())?;
            Command::Boundary { x, z }
        }
        Cmd::Verify { .. } => unreachable!("handled before config"),
    })
}

fn init_threads() {
    if let Some(n) = std::env::var(ENV_THREADS)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn main() -> ExitCode {
    let args = Cli::parse();
    init_threads();
    let result = (|| -> Result<i32, RunError> {
        if let Cmd::Verify { manifest } = &args.command {
            cli::verify_manifest(manifest, args.opts.config.as_deref().and_then(Path::parent))?;
            println!("verify: input checksum matches");
            return Ok(0);
        }
        let (cfg, dir) = load_config(&args.opts, &args.command)?;
        let cmd = build_command(&args.command, &cfg)?;
        let outcome = cli::run(&cmd, &cfg, dir.as_deref())?;
        for line in &outcome.summary {
            println!("{line}");
        }
        if let Some(e) = &outcome.deferred {
            eprintln!("polopt: {e}");
        }
        Ok(outcome.exit_code())
    })();
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("polopt: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
