mod config;
mod tasks;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use config::{Engine, RunConfig};
use tasks::{model_diagnostics, resolve, run_task, CliError, TaskOutput};

#[derive(Parser)]
#[command(name = "areaflux", version, about = "Stochastic areas of one-dimensional diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the task in a config and write the result document.
    Run {
        config: PathBuf,
        /// Write the JSON result here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write `input,value,std_error` rows here.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the analytic task and its Monte Carlo mirror and compare them.
    Verify {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    /// Override `mc.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override `mc.threads`.
    #[arg(long)]
    threads: Option<usize>,
}

const EXIT_CONFIG: u8 = 1;
const EXIT_NUMERIC: u8 = 2;
const EXIT_VERIFY_FAIL: u8 = 3;

fn load(path: &Path, o: &Overrides) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text).map_err(CliError::Config)?;
    if let Some(s) = o.seed {
        cfg.mc.seed = s;
    }
    if let Some(t) = o.threads {
        cfg.mc.threads = Some(t);
    }
    Ok(cfg)
}

fn emit(doc: &Value, out: Option<&Path>) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(doc).expect("document serializes");
    match out {
        Some(p) => std::fs::write(p, text + "\n").map_err(|e| CliError::Config(format!("cannot write {}: {e}", p.display()))),
        None => {
            use std::io::Write;
            // a closed pipe is not an error worth reporting
            let _ = writeln!(std::io::stdout().lock(), "{text}");
            Ok(())
        }
    }
}

fn write_csv(path: &Path, out: &TaskOutput) -> Result<(), CliError> {
    let mut s = String::from("input,value,std_error\n");
    for r in &out.rows {
        let se = r.std_error.map(|x| x.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{},{}\n", r.input, r.value, se));
    }
    std::fs::write(path, s).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn failure(cfg: Option<&RunConfig>, err: &CliError, out: Option<&Path>) -> ExitCode {
    eprintln!("areaflux: {err}");
    match err {
        CliError::Config(_) => ExitCode::from(EXIT_CONFIG),
        CliError::Numeric(m) => {
            let doc = json!({
                "status": "numeric_failure",
                "message": m,
                "config": cfg.map(|c| c.canonical()),
                "diagnostics": cfg.map(model_diagnostics),
            });
            let _ = emit(&doc, out);
            ExitCode::from(EXIT_NUMERIC)
        }
    }
}

fn run(config: &Path, out: Option<&Path>, csv: Option<&Path>, o: &Overrides) -> ExitCode {
    let start = Instant::now();
    let cfg = match load(config, o) {
        Ok(c) => c,
        Err(e) => return failure(None, &e, out),
    };
    let result = resolve(&cfg).and_then(|(task, engine)| run_task(&cfg, task, engine));
    let res = match result {
        Ok(r) => r,
        Err(e) => return failure(Some(&cfg), &e, out),
    };
    let mut doc = json!({
        "status": "ok",
        "config": cfg.canonical(),
        "task": res.task,
        "engine": res.engine,
        "input": res.input,
        "sweep": res.sweep,
        "result": res.rows.first(),
        "results": res.rows,
        "diagnostics": { "model": model_diagnostics(&cfg) },
    });
    doc["wall_time_seconds"] = json!(start.elapsed().as_secs_f64());
    if let Some(p) = csv {
        if let Err(e) = write_csv(p, &res) {
            return failure(Some(&cfg), &e, out);
        }
    }
    match emit(&doc, out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => failure(Some(&cfg), &e, None),
    }
}

fn verify(config: &Path, out: Option<&Path>, o: &Overrides) -> ExitCode {
    let start = Instant::now();
    let cfg = match load(config, o) {
        Ok(c) => c,
        Err(e) => return failure(None, &e, out),
    };
    let pair = resolve(&cfg).and_then(|(task, _)| {
        let a = run_task(&cfg, task, Engine::Analytic)?;
        let m = run_task(&cfg, task, Engine::Mc)?;
        Ok((a, m))
    });
    let (an, mc) = match pair {
        Ok(p) => p,
        Err(e) => return failure(Some(&cfg), &e, out),
    };
    let mut all = true;
    let rows: Vec<Value> = an
        .rows
        .iter()
        .zip(&mc.rows)
        .map(|(a, m)| {
            let se = m.std_error.unwrap_or(0.0);
            let diff = (a.value - m.value).abs();
            let z = if se > 0.0 {
                diff / se
            } else if diff == 0.0 {
                0.0
            } else {
                f64::INFINITY
            };
            let pass = z < 3.0;
            all &= pass;
            json!({
                "input": a.input,
                "analytic": a.value,
                "mc_mean": m.value,
                "mc_std_error": m.std_error,
                "z": z,
                "status": if pass { "PASS" } else { "FAIL" },
            })
        })
        .collect();
    let doc = json!({
        "status": if all { "PASS" } else { "FAIL" },
        "config": cfg.canonical(),
        "task": an.task,
        "input": an.input,
        "rows": rows,
        "analytic_diagnostics": an.rows.iter().map(|r| &r.diagnostics).collect::<Vec<_>>(),
        "mc_diagnostics": mc.rows.iter().map(|r| &r.diagnostics).collect::<Vec<_>>(),
        "wall_time_seconds": start.elapsed().as_secs_f64(),
    });
    if let Err(e) = emit(&doc, out) {
        return failure(Some(&cfg), &e, None);
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_VERIFY_FAIL)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            csv,
            overrides,
        } => run(&config, out.as_deref(), csv.as_deref(), &overrides),
        Command::Verify { config, out, overrides } => verify(&config, out.as_deref(), &overrides),
    }
}
