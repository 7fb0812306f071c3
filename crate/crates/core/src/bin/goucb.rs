use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use goucb::config::{build, load_pairs};
use goucb::runner::{calibrate_beta_scale, file_stem, realizable_objective, run_suite};

#[derive(Parser)]
#[command(
    name = "goucb",
    version,
    about = "Global optimization with a parametric surrogate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one method on one objective over several seeds and write CSV results.
    Run(Settings),
    /// Pick the confidence-radius scale on the realizable 2-d task.
    Calibrate {
        #[command(flatten)]
        settings: Settings,
        /// Required fraction of rounds whose ball holds the true parameters.
        #[arg(long, default_value_t = 0.95)]
        target: f64,
    },
}

#[derive(Args)]
struct Settings {
    /// Flat key = value file; flags given here override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// go-ucb, gp-ucb, gp-ei, gp-pi or random.
    #[arg(long)]
    method: Option<String>,
    /// f1, f2 or f3.
    #[arg(long)]
    objective: Option<String>,
    #[arg(long)]
    dim: Option<usize>,
    /// Optimistic-phase rounds.
    #[arg(long = "T")]
    horizon: Option<usize>,
    /// Exploration rounds (default floor(sqrt(T))).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Comma-separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long = "beta-scale")]
    beta_scale: Option<f64>,
    #[arg(long = "lambda-scale")]
    lambda_scale: Option<f64>,
    /// linearized or alternating.
    #[arg(long)]
    acquisition: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write per-seed round diagnostics.
    #[arg(long)]
    diagnostics: bool,
    /// Extra key=value settings (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Settings {
    fn overrides(&self) -> Result<Vec<(String, String)>, String> {
        let mut v = Vec::new();
        let mut push = |k: &str, val: Option<String>| {
            if let Some(val) = val {
                v.push((k.to_string(), val));
            }
        };
        push("method", self.method.clone());
        push("objective", self.objective.clone());
        push("dim", self.dim.map(|x| x.to_string()));
        push("T", self.horizon.map(|x| x.to_string()));
        push("n", self.n.map(|x| x.to_string()));
        push("sigma", self.sigma.map(|x| x.to_string()));
        push("seeds", self.seeds.clone());
        push("beta-scale", self.beta_scale.map(|x| x.to_string()));
        push("lambda-scale", self.lambda_scale.map(|x| x.to_string()));
        push("acquisition", self.acquisition.clone());
        push("out", self.out.as_ref().map(|p| p.display().to_string()));
        if self.diagnostics {
            push("diagnostics", Some("true".into()));
        }
        for kv in &self.set {
            let (k, val) = kv
                .split_once('=')
                .ok_or_else(|| format!("--set expects KEY=VALUE, got {kv:?}"))?;
            v.push((k.trim().to_string(), val.trim().to_string()));
        }
        Ok(v)
    }

    fn resolve(&self) -> Result<goucb::runner::RunConfig, String> {
        let file = match &self.config {
            Some(p) => load_pairs(p).map_err(|e| e.to_string())?,
            None => Vec::new(),
        };
        build(&file, &self.overrides()?).map_err(|e| e.to_string())
    }
}

fn execute(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Run(settings) => {
            let cfg = settings.resolve()?;
            let summary = run_suite(&cfg).map_err(|e| e.to_string())?;
            println!(
                "{}: final R = {:.4} +/- {:.4} over {} seeds (optimistic phase {:.4}) in {:.2}s",
                file_stem(&cfg),
                summary.final_mean(),
                summary.final_half_width(),
                summary.seeds.len(),
                summary.phase2_mean(),
                summary.wall_seconds
            );
            if let Some(dir) = &cfg.out {
                println!("wrote {}", dir.display());
            }
            Ok(())
        }
        Command::Calibrate { settings, target } => {
            let mut cfg = settings.resolve()?;
            cfg.dim = 2;
            cfg.out = None;
            let objective = realizable_objective(2).map_err(|e| e.to_string())?;
            let cal = calibrate_beta_scale(&cfg, &objective, target, target, 1.25)
                .map_err(|e| e.to_string())?;
            println!(
                "beta-scale = {} (coverage {:.4} after {} passes)",
                cal.scale, cal.coverage, cal.iterations
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FAST: [&str; 6] = [
        "--set",
        "outer-starts=2",
        "--set",
        "outer-iters=3",
        "--set",
        "gd-iters=20",
    ];

    fn run(args: &[&str]) -> Result<(), String> {
        let cli = Cli::try_parse_from(std::iter::once("goucb").chain(args.iter().copied()))
            .map_err(|e| e.to_string())?;
        execute(cli)
    }

    #[test]
    fn run_writes_curve_and_summary() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let mut args = vec![
            "run",
            "--method",
            "go-ucb",
            "--objective",
            "f1",
            "--dim",
            "2",
            "--T",
            "10",
            "--n",
            "3",
            "--sigma",
            "0.1",
            "--seeds",
            "1,2",
            "--beta-scale",
            "1.0",
            "--diagnostics",
            "--out",
            out,
        ];
        args.extend(FAST);
        run(&args).unwrap();
        let curve = std::fs::read_to_string(dir.path().join("go-ucb_f1.csv")).unwrap();
        assert_eq!(curve.lines().count(), 14);
        assert!(curve.starts_with("round,mean_R,halfwidth,R_seed1,R_seed2\n"));
        let summary = std::fs::read_to_string(dir.path().join("go-ucb_f1_summary.csv")).unwrap();
        assert!(summary
            .lines()
            .nth(1)
            .unwrap()
            .starts_with("go-ucb,f1,2,10,3,1 2,"));
        assert!(dir.path().join("go-ucb_f1_seed2_diagnostics.csv").exists());
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let conf = dir.path().join("run.conf");
        std::fs::write(
            &conf,
            "# baseline run\nmethod = random\nobjective = f2\ndim = 3\nT = 50\nseeds = 4\n",
        )
        .unwrap();
        let out = dir.path().join("res");
        run(&[
            "run",
            "--config",
            conf.to_str().unwrap(),
            "--T",
            "6",
            "--out",
            out.to_str().unwrap(),
        ])
        .unwrap();
        let curve = std::fs::read_to_string(out.join("random_f2.csv")).unwrap();
        // floor(sqrt(6)) = 2 exploration rounds plus 6 further rounds.
        assert_eq!(curve.lines().count(), 9);
    }

    #[test]
    fn invalid_settings_are_errors() {
        let err = run(&["run", "--method", "bfgs"]).unwrap_err();
        assert!(err.contains("unknown method"));
        assert!(run(&["run", "--set", "T"]).is_err());
        assert!(run(&["run", "--T", "0"]).is_err());
        assert!(run(&["fly"]).is_err());
    }

    #[test]
    fn calibrate_reports_a_scale() {
        let mut args = vec!["calibrate", "--T", "8", "--seeds", "3", "--target", "0.5"];
        args.extend(FAST);
        run(&args).unwrap();
    }
}
