use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gram_cli::artifacts::{parse_stages, Stage, Store};
use gram_cli::service::{self, RetrieveRequest, ServiceConfig, DEFAULT_LISTEN, LISTEN_ENV};
use gram_cli::stages::{load_config, load_data, run_stage, run_stages};
use gram_core::verify::{gradient_suite, GradSuiteConfig};

#[derive(Parser)]
#[command(name = "gram", version, about = "Generative retrieval with attribute codes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON pipeline config; defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus, splits and initial codes.
    GenData(Common),
    /// Supervised training of the code generator.
    TrainSft(Common),
    /// Generate and filter extra codes, then co-train on them.
    Augment(Common),
    /// Co-alignment against the co-trained model.
    Align(Common),
    /// Code every product with the aligned model.
    BuildIndex(Common),
    /// Learn per-code weights with the model frozen.
    TrainWeights(Common),
    /// Evaluate all methods on the test queries.
    Eval(Common),
    /// Run several stages in order.
    Run {
        #[command(flatten)]
        common: Common,
        /// Comma-separated stage names; all stages when omitted.
        #[arg(long)]
        stages: Option<String>,
    },
    /// Retrieve products for one query and print the JSON response.
    Retrieve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        query: String,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Time retrieval over the test queries.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Passes over the test queries.
        #[arg(long, default_value_t = 1)]
        rounds: usize,
    },
    /// Serve retrieval and upserts over HTTP.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Listen address; falls back to $GRAM_LISTEN, then 127.0.0.1:8080.
        #[arg(long)]
        listen: Option<String>,
    },
    /// Finite-difference check of every trainable objective.
    CheckGrad {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 24)]
        probes: usize,
    },
}

fn store_for(common: &Common) -> Result<(gram_core::pipeline::PipelineConfig, Store)> {
    let cfg = load_config(common.config.as_deref(), common.seed)?;
    let store = Store::for_config(&cfg);
    Ok((cfg, store))
}

fn single(common: &Common, stage: Stage) -> Result<()> {
    let (cfg, store) = store_for(common)?;
    run_stage(&cfg, &store, stage)?;
    println!("{}", store.dir(stage).display());
    Ok(())
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let i = ((sorted.len() as f64 - 1.0) * p).round() as usize;
    sorted[i]
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData(c) => single(&c, Stage::GenData),
        Command::TrainSft(c) => single(&c, Stage::TrainSft),
        Command::Augment(c) => single(&c, Stage::Augment),
        Command::Align(c) => single(&c, Stage::Align),
        Command::BuildIndex(c) => single(&c, Stage::BuildIndex),
        Command::TrainWeights(c) => single(&c, Stage::TrainWeights),
        Command::Eval(c) => {
            single(&c, Stage::Eval)?;
            let (_, store) = store_for(&c)?;
            print!("{}", String::from_utf8(store.read(Stage::Eval, "report.md")?)?);
            Ok(())
        }
        Command::Run { common, stages } => {
            let (cfg, store) = store_for(&common)?;
            let stages = match stages {
                Some(s) => parse_stages(&s)?,
                None => Stage::ALL.to_vec(),
            };
            run_stages(&cfg, &store, &stages)?;
            println!("{}", store.root().display());
            Ok(())
        }
        Command::Retrieve { common, query, k } => {
            let (cfg, store) = store_for(&common)?;
            let engine = ServiceConfig::from_store(&cfg, &store)?.load_engine()?;
            let resp = service::retrieve(&engine, &RetrieveRequest { query, k })
                .map_err(|e| anyhow::anyhow!("{e:?}"))?;
            println!("{}", serde_json::to_string(&resp)?);
            Ok(())
        }
        Command::Bench { common, rounds } => {
            let (cfg, store) = store_for(&common)?;
            let mut sc = ServiceConfig::from_store(&cfg, &store)?;
            sc.cache_capacity = 0;
            let engine = sc.load_engine()?;
            let data = load_data(&cfg, &store)?;
            let mut ms = Vec::new();
            let start = Instant::now();
            for _ in 0..rounds.max(1) {
                for q in &data.test_queries {
                    let t = Instant::now();
                    engine.retrieve(&q.text, None)?;
                    ms.push(t.elapsed().as_secs_f64() * 1e3);
                }
            }
            let total = start.elapsed().as_secs_f64();
            ms.sort_by(f64::total_cmp);
            let report = serde_json::json!({
                "queries": ms.len(),
                "mean_ms": ms.iter().sum::<f64>() / ms.len() as f64,
                "p50_ms": percentile(&ms, 0.5),
                "p95_ms": percentile(&ms, 0.95),
                "qps": ms.len() as f64 / total,
            });
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Serve { common, listen } => {
            let (cfg, store) = store_for(&common)?;
            let mut sc = ServiceConfig::from_store(&cfg, &store)?;
            sc.listen = listen
                .or_else(|| std::env::var(LISTEN_ENV).ok())
                .unwrap_or_else(|| DEFAULT_LISTEN.to_string());
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
            rt.block_on(service::serve(&sc))
        }
        Command::CheckGrad { seed, probes } => {
            let start = Instant::now();
            let checks = gradient_suite(&GradSuiteConfig {
                seed,
                probes,
                ..Default::default()
            })
            .context("gradient suite")?;
            let mut ok = true;
            for c in &checks {
                let pass = c.passed(20);
                ok &= pass;
                println!(
                    "{:<14} probes={:<3} max_rel_error={:.3e} tol={:.0e} {}",
                    c.objective,
                    c.probes.len(),
                    c.max_rel_error,
                    c.tolerance,
                    if pass { "PASS" } else { "FAIL" }
                );
            }
            println!("elapsed {:.2}s", start.elapsed().as_secs_f64());
            if !ok {
                anyhow::bail!("gradient check failed");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
