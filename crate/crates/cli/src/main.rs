//! `qpots`: runs experiments and solver sweeps through the qPOTS service.
//! Without `--server`, an embedded service is started on a loopback port.

use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, ValueEnum};
use serde_json::{json, Map, Value};

use qpots_client::{Client, ExperimentState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Run,
    Nsga2Only,
}

#[derive(Debug, Parser)]
#[command(name = "qpots", version, about = "Batch Pareto-optimal Thompson sampling experiments")]
struct Args {
    /// Problem name, e.g. branin_currin, zdt3, dtlz3:20.
    #[arg(long, default_value = "branin_currin")]
    problem: String,
    /// qpots or sobol.
    #[arg(long, default_value = "qpots")]
    policy: String,
    #[arg(long)]
    q: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    n_seed: Option<usize>,
    /// Observation noise variance.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    pop_size: Option<usize>,
    #[arg(long)]
    n_gen: Option<usize>,
    /// off, pareto[:m] or first:<m>.
    #[arg(long)]
    nystrom: Option<String>,
    #[arg(long)]
    eq_tol: Option<f64>,
    /// Output directory for config.json, trace_rep{i}.csv and summary.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "run")]
    mode: Mode,
    /// Base URL of a running service; an embedded one is used otherwise.
    #[arg(long)]
    server: Option<String>,
}

fn nystrom_json(arg: &str) -> Result<Value> {
    let (rule, m) = match arg.split_once(':') {
        Some((r, m)) => (r, Some(m.parse::<usize>().with_context(|| format!("bad landmark count in {arg:?}"))?)),
        None => (arg, None),
    };
    Ok(match (rule, m) {
        ("off", None) => json!({ "enabled": false }),
        ("pareto", m) => json!({ "enabled": true, "landmark_rule": "nondominated_training_points", "max_landmarks": m.unwrap_or(50) }),
        ("first", Some(m)) => json!({ "enabled": true, "landmark_rule": "first_m", "max_landmarks": m }),
        _ => bail!("--nystrom expects off, pareto[:m] or first:<m>, got {arg:?}"),
    })
}

/// A partial experiment config holding only the flags that were given.
fn experiment_json(args: &Args) -> Result<Value> {
    let mut m = Map::new();
    m.insert("problem".into(), json!(args.problem));
    m.insert("policy".into(), json!(args.policy));
    let mut put = |k: &str, v: Option<Value>| {
        if let Some(v) = v {
            m.insert(k.into(), v);
        }
    };
    put("q", args.q.map(|v| json!(v)));
    put("master_seed", args.seed.map(|v| json!(v)));
    put("budget", args.budget.map(|v| json!(v)));
    put("n_seed", args.n_seed.map(|v| json!(v)));
    put("noise_variance", args.noise.map(|v| json!(v)));
    put("replicates", args.reps.map(|v| json!(v)));
    put("eq_tolerance", args.eq_tol.map(|v| json!(v)));
    put("output_dir", args.out.as_ref().map(|p| json!(p)));
    put("nystrom", args.nystrom.as_deref().map(nystrom_json).transpose()?);
    let mut evolver = Map::new();
    if let Some(p) = args.pop_size {
        evolver.insert("pop_size".into(), json!(p));
    }
    if let Some(g) = args.n_gen {
        evolver.insert("n_generations".into(), json!(g));
    }
    if !evolver.is_empty() {
        m.insert("evolver".into(), Value::Object(evolver));
    }
    Ok(Value::Object(m))
}

async fn run_experiment(client: &Client, args: &Args) -> Result<()> {
    let status = client.start_experiment(&experiment_json(args)?).await?;
    let id = status.id;
    eprintln!(
        "experiment {id}: {} with {:?}, q={}, budget={}, {} replicate(s)",
        status.config.problem, status.config.policy, status.config.q, status.config.budget, status.config.replicates
    );
    let stopper = client.clone();
    tokio::spawn(async move {
        if tokio::signal::ctrl_c().await.is_ok() {
            eprintln!("stopping experiment {id}; rerun with the same --out to resume");
            let _ = stopper.stop_experiment(id).await;
        }
    });
    let mut last = Vec::new();
    let done = client
        .wait(id, Duration::from_millis(500), |s| {
            if s.evals != last {
                eprintln!("evals {:?}", s.evals);
                last = s.evals.clone();
            }
        })
        .await?;
    match done.state {
        ExperimentState::Completed => {
            println!("iter,evals,hv_mean,hv_std");
            for r in client.summary(id).await? {
                println!("{},{},{},{}", r.iter, r.evals, r.hv_mean, r.hv_std);
            }
            Ok(())
        }
        ExperimentState::Stopped => {
            eprintln!("stopped before the budget was spent");
            Ok(())
        }
        _ => bail!("experiment failed: {}", done.error.unwrap_or_default()),
    }
}

async fn run_sweep(client: &Client, args: &Args) -> Result<()> {
    let seeds: Vec<u64> = (0..args.reps.unwrap_or(5) as u64).map(|s| s + args.seed.unwrap_or(0)).collect();
    let mut rows = Vec::new();
    let gens: Vec<usize> = match args.n_gen {
        Some(g) => vec![g],
        None => (1..=10).map(|k| 10 * k).collect(),
    };
    rows.extend(client.sweep(&args.problem, &[args.pop_size.unwrap_or(100)], &gens, &seeds).await?);
    if args.pop_size.is_none() {
        let pops = [20, 50, 100, 250, 500];
        rows.extend(client.sweep(&args.problem, &pops, &[args.n_gen.unwrap_or(100)], &seeds).await?);
    }
    let mut csv = String::from("pop_size,n_generations,seed,igd\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.pop_size, r.n_generations, r.seed, r.igd));
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("nsga2_sweep.csv"), &csv)?;
    }
    print!("{csv}");
    Ok(())
}

#[tokio::main]
async fn main() -> Result<()> {
    let args = Args::parse();
    let (client, _server) = match &args.server {
        Some(url) => (Client::new(url.clone()), None),
        None => {
            let (addr, handle) = qpots_server::spawn("127.0.0.1:0").await?;
            (Client::new(format!("http://{addr}")), Some(handle))
        }
    };
    client.health().await.with_context(|| format!("no qPOTS service at {}", client.base_url()))?;
    match args.mode {
        Mode::Run => run_experiment(&client, &args).await,
        Mode::Nsga2Only => run_sweep(&client, &args).await,
    }
}
