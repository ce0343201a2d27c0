use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use etgpssm::baselines::{self, Family};
use etgpssm::config::ConfigText;
use etgpssm::runner;
use etgpssm::systems::{SyntheticSystem, SystemKind};
use etgpssm::Result;

#[derive(Parser)]
#[command(name = "etgpssm", version, about = "Transformed GP state-space models trained with EnKF-aided variational inference")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Overrides {
    /// Experiment config file (`[section]` headers, `key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<String>,
    /// `kink`, `lorenz96` or `csv`.
    #[arg(long)]
    system: Option<String>,
    #[arg(long)]
    dx: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    /// Any config key, e.g. `--set system.r_var=0.08`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default: `$ETGPSSM_OUTPUT_ROOT/<run name>`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train, evaluate and write artifacts for one configuration.
    Run(Overrides),
    /// One run per point of the config's `[sweep]` grid plus an aggregate CSV.
    Sweep(Overrides),
    /// Write a synthetic dataset as CSV.
    Simulate {
        #[arg(long, default_value = "kink")]
        system: SystemKind,
        #[arg(long)]
        dx: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        r_var: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trainable-parameter counts, one CSV row per dimension.
    CountParams {
        #[arg(long, default_value = "etgpssm")]
        variant: Family,
        #[arg(long, value_delimiter = ',', default_value = "1,10,100")]
        dx: Vec<u64>,
        #[arg(long, default_value_t = 100)]
        inducing: u64,
    },
    /// Median wall time of one ensemble transition per dimension.
    TimeTransition {
        #[arg(long, value_delimiter = ',', default_value = "etgpssm,gpssm-independent")]
        variant: Vec<Family>,
        #[arg(long, value_delimiter = ',', default_value = "5,50")]
        dx: Vec<usize>,
        #[arg(long, default_value_t = 100)]
        inducing: usize,
        #[arg(long, default_value_t = 200)]
        members: usize,
        #[arg(long, default_value_t = 31)]
        repetitions: usize,
        /// Also write the rows to this CSV file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn build_config(o: &Overrides) -> Result<ConfigText> {
    let mut cfg = match &o.config {
        Some(p) => ConfigText::load(p)?,
        None => ConfigText::default(),
    };
    if let Some(s) = o.seed {
        cfg.set("run.seed", s.to_string())?;
    }
    if let Some(v) = &o.variant {
        cfg.set("model.variant", v.clone())?;
    }
    if let Some(s) = &o.system {
        cfg.set("system.kind", s.clone())?;
    }
    if let Some(d) = o.dx {
        cfg.set("system.d_x", d.to_string())?;
    }
    if let Some(e) = o.epochs {
        cfg.set("train.epochs", e.to_string())?;
    }
    for kv in &o.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| etgpssm::Error::Config(format!("expected KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn out_dir(o: &Overrides, name: &str) -> PathBuf {
    o.out.clone().unwrap_or_else(|| runner::output_root().join(name))
}

fn execute(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Run(o) => {
            let exp = build_config(&o)?.experiment()?;
            let dir = out_dir(&o, exp.output.as_deref().unwrap_or(&exp.name));
            let r = runner::run(&exp, &dir)?;
            let m = &r.metrics;
            println!(
                "{} on {} seed {}: rmse {:.4} spread {:.4} coverage {:.3} crps {:.4} forecast_rmse {:.4} ({:.1}s)",
                m.variant, m.dataset, m.seed, m.rmse, m.spread, m.coverage, m.crps, m.forecast_rmse, m.wall_time
            );
            println!("artifacts in {}", r.manifest.output_dir);
            Ok(0)
        }
        Command::Sweep(o) => {
            let cfg = build_config(&o)?;
            let name = cfg.experiment()?.name;
            let s = runner::sweep(&cfg, &out_dir(&o, &name))?;
            println!("{} runs, {} failed; aggregate in {}", s.runs, s.failures.len(), s.aggregate_path.display());
            for (label, err) in &s.failures {
                eprintln!("failed {label}: {err}");
            }
            Ok(if s.failures.is_empty() { 0 } else { 1 })
        }
        Command::Simulate {
            system,
            dx,
            steps,
            r_var,
            seed,
            out,
        } => {
            let mut sys = match system {
                SystemKind::Kink => SyntheticSystem::kink(r_var.unwrap_or(0.008)),
                SystemKind::Lorenz96 => SyntheticSystem::lorenz96(dx.unwrap_or(20)),
            };
            if let Some(r) = r_var {
                sys.r_var = r;
            }
            if let Some(t) = steps {
                sys.steps = t;
            }
            sys.seed = seed;
            sys.simulate()?.write_csv(&out)?;
            println!("wrote {} steps to {}", sys.steps, out.display());
            Ok(0)
        }
        Command::CountParams { variant, dx, inducing } => {
            println!("variant,d_x,M,param_count");
            for d in dx {
                println!("{variant},{d},{inducing},{}", baselines::count_parameters(variant, d, inducing));
            }
            Ok(0)
        }
        Command::TimeTransition {
            variant,
            dx,
            inducing,
            members,
            repetitions,
            out,
        } => {
            let rows = baselines::scaling_study(&variant, &dx, inducing, members, repetitions)?;
            println!("variant,d_x,M,param_count,median_seconds");
            for r in &rows {
                println!("{},{},{},{},{:.6}", r.variant, r.d_x, r.inducing, r.param_count, r.median_seconds);
            }
            if let Some(p) = out {
                baselines::write_scaling_csv(&rows, &p)?;
            }
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
