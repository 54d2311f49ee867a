// SPDX-License-Identifier: MIT OR Apache-2.0

//! `red` command-line front end for the experiment harness.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use red_core::harness::{
    self, attention_study, lambda_sweep, report, run_comparison, run_intervention, with_threads,
    ExperimentConfig, OutputFormat,
};
use red_core::oracle::run_oracle_sweep;

#[derive(Parser)]
#[command(name = "red", version, about = "Rationale-enhanced decoding experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Accuracy of each configured policy on channel-split tasks.
    RunComparison(Common),
    /// Original versus swapped-rationale accuracy per policy.
    Intervene(Common),
    /// Accuracy over the configured λ values, with image-only and
    /// rationale-only baselines.
    LambdaSweep(Common),
    /// Attention contribution shares of the tiny transformer per conditioning.
    AttnContrib(Common),
    /// Checks the closed-form optimum and certifies it against perturbations.
    VerifyOracle(Common),
    /// Prints the effective configuration as TOML.
    PrintConfig(Common),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed for task generation and sampling.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `csv` or `csv+svg`.
    #[arg(long)]
    format: Option<OutputFormat>,
    /// Worker threads (0 = all cores).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn load(&self) -> red_core::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(format) = self.format {
            cfg.format = format;
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn write(cfg: &ExperimentConfig, name: &str, text: &str) -> red_core::Result<PathBuf> {
    let path = cfg.out_dir.join(name);
    report::write_file(&path, text)?;
    Ok(path)
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::PrintConfig(c) => {
            print!("{}", c.load()?.to_toml_string()?);
        }
        Command::RunComparison(c) => {
            let cfg = c.load()?;
            let table = with_threads(cfg.threads, || run_comparison(&cfg))??;
            let svg = cfg.format.svg().then(|| report::comparison_svg(&table));
            let csv_path = cfg.out_dir.join("comparison.csv");
            let svg_path = cfg.out_dir.join("comparison.svg");
            harness::emit_results(&table, &csv_path, svg.as_deref().map(|s| (svg_path.as_path(), s)))?;
            for r in &table.rows {
                println!("{:<40} {}", label(&r.policy, r.lambda), r.accuracy);
            }
            println!("wrote {}", csv_path.display());
        }
        Command::Intervene(c) => {
            let cfg = c.load()?;
            let rep = with_threads(cfg.threads, || run_intervention(&cfg))??;
            let svg = cfg.format.svg().then(|| report::intervention_svg(&rep));
            let csv_path = cfg.out_dir.join("intervention.csv");
            let svg_path = cfg.out_dir.join("intervention.svg");
            harness::emit_results(&rep.table, &csv_path, svg.as_deref().map(|s| (svg_path.as_path(), s)))?;
            println!("{:<40} {:>9} {:>9} {:>9}", "policy", "original", "swapped", "delta");
            for s in &rep.summaries {
                println!(
                    "{:<40} {:>9.4} {:>9.4} {:>+9.4}",
                    label(&s.policy, s.lambda),
                    s.original,
                    s.swapped,
                    s.delta()
                );
            }
            println!("wrote {}", csv_path.display());
        }
        Command::LambdaSweep(c) => {
            let cfg = c.load()?;
            let rep = with_threads(cfg.threads, || lambda_sweep(&cfg, &cfg.lambdas))??;
            let svg = cfg.format.svg().then(|| report::sweep_svg(&rep));
            let csv_path = cfg.out_dir.join("lambda_sweep.csv");
            let svg_path = cfg.out_dir.join("lambda_sweep.svg");
            harness::emit_results(&rep.table, &csv_path, svg.as_deref().map(|s| (svg_path.as_path(), s)))?;
            println!("image-only {}  rationale-only {}", rep.image_only, rep.rationale_only);
            for curve in &rep.curves {
                for (i, (l, a)) in curve.lambdas.iter().zip(&curve.accuracies).enumerate() {
                    let mark = if i == curve.best { "  <- best" } else { "" };
                    println!("{} λ={l:<8} {a}{mark}", curve.kind);
                }
            }
            println!("wrote {}", csv_path.display());
        }
        Command::AttnContrib(c) => {
            let cfg = c.load()?;
            let studies = with_threads(cfg.threads, || attention_study(&cfg))??;
            let csv_path = write(&cfg, "attn_contrib.csv", &report::attention_csv(&studies)?)?;
            if cfg.format.svg() {
                write(&cfg, "attn_contrib.svg", &report::attention_svg(&studies))?;
            }
            for s in &studies {
                println!(
                    "{:<9} image {:>7.3}%  rationale {:>7.3}%  query {:>7.3}%",
                    s.configuration.to_string(),
                    s.report.image_pct,
                    s.report.rationale_pct,
                    s.report.query_pct
                );
            }
            println!("wrote {}", csv_path.display());
        }
        Command::VerifyOracle(c) => {
            let cfg = c.load()?;
            let rep = with_threads(cfg.threads, || run_oracle_sweep(&cfg.oracle_config()))??;
            let csv_path = write(&cfg, "oracle.csv", &report::oracle_csv(&rep)?)?;
            println!("instances        {}", rep.instances);
            println!("max difference   {:e}", rep.max_difference);
            println!(
                "certified        {} x {} perturbations",
                rep.certify_instances, rep.perturbations
            );
            println!("worst violation  {:e}", rep.worst_violation);
            println!("violations       {}", rep.violations);
            println!("wrote {}", csv_path.display());
            if rep.violations > 0 {
                anyhow::bail!(red_core::Error::Config(format!(
                    "{} certification violations",
                    rep.violations
                )));
            }
        }
    }
    Ok(())
}

fn label(policy: &str, lambda: Option<f64>) -> String {
    match lambda {
        Some(l) => format!("{policy} λ={l}"),
        None => policy.to_string(),
    }
}

fn error_line(err: &anyhow::Error) -> String {
    let kind = err
        .chain()
        .find_map(|e| e.downcast_ref::<red_core::Error>())
        .map(|e| e.kind())
        .unwrap_or("error");
    let message = err.to_string();
    serde_json::json!({ "error": kind, "message": message }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) if !err.use_stderr() => {
            let _ = err.print();
            return ExitCode::SUCCESS;
        }
        Err(err) => {
            let message = err.kind().to_string();
            let detail = err.render().to_string();
            let first = detail.lines().next().unwrap_or(&message).trim_start_matches("error: ");
            eprintln!("{}", serde_json::json!({ "error": "usage", "message": first }));
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_line(&err));
            ExitCode::FAILURE
        }
    }
}
