use std::fs;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use vidi_service::config::KRange;
use vidi_service::{annotations, api, demo, pipeline, RunConfig, RunRecord, RunStatus, RunStore};

#[derive(Parser)]
#[command(
    name = "vidi",
    version,
    about = "Cluster radiographs by explanation similarity"
)]
struct Cli {
    /// Directory holding the run store.
    #[arg(
        long,
        global = true,
        default_value = "vidi-data",
        env = "VIDI_DATA_DIR"
    )]
    data_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a config file.
    Run {
        #[arg(short, long)]
        config: PathBuf,
    },
    /// Run the pipeline sweeping k over a range, overriding the config's k.
    Sweep {
        #[arg(short, long)]
        config: PathBuf,
        #[arg(long, default_value_t = 2)]
        k_min: usize,
        #[arg(long, default_value_t = 30)]
        k_max: usize,
    },
    /// Re-cluster a complete run's features with a fixed k.
    Recluster {
        #[arg(long)]
        run: String,
        #[arg(short)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write the annotation export CSV of a run.
    Export {
        #[arg(long)]
        run: String,
        /// Output file; stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// List stored runs.
    List,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Generate a synthetic dataset, model and config to try the pipeline.
    Demo {
        #[arg(long, default_value = "vidi-demo")]
        out: PathBuf,
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn summarize(record: &RunRecord) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(record)?);
    if record.status == RunStatus::Failed {
        let e = record
            .error
            .as_ref()
            .map(|e| e.message.as_str())
            .unwrap_or("unknown error");
        bail!("run {} failed: {e}", record.run_id);
    }
    Ok(())
}

fn main() -> anyhow::Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let store = RunStore::open(&cli.data_dir)
        .with_context(|| format!("opening {}", cli.data_dir.display()))?;
    match cli.command {
        Command::Run { config } => {
            summarize(&pipeline::run_pipeline(&store, RunConfig::load(&config)?)?)
        }
        Command::Sweep {
            config,
            k_min,
            k_max,
        } => {
            let mut config = RunConfig::load(&config)?;
            config.k = None;
            config.k_range = Some(KRange {
                min: k_min,
                max: k_max,
            });
            summarize(&pipeline::run_pipeline(&store, config)?)
        }
        Command::Recluster { run, k, seed } => {
            summarize(&pipeline::recluster(&store, &run, k, seed)?)
        }
        Command::Export { run, output } => {
            let csv = annotations::export_csv(&store, &run)?;
            match output {
                Some(path) => {
                    fs::write(&path, csv).with_context(|| format!("writing {}", path.display()))?
                }
                None => print!("{csv}"),
            }
            Ok(())
        }
        Command::List => {
            for r in store.list()? {
                let q = r
                    .quality
                    .map(|q| {
                        format!(
                            "h={:.3} c={:.3} v={:.3}",
                            q.homogeneity, q.completeness, q.v_measure
                        )
                    })
                    .unwrap_or_default();
                println!(
                    "{}  {:<8}  k={:<3} {q}",
                    r.run_id,
                    format!("{:?}", r.status).to_lowercase(),
                    r.k.map_or("-".into(), |k| k.to_string())
                );
            }
            Ok(())
        }
        Command::Serve { port, host } => {
            let app = api::router(Arc::new(store));
            let addr = SocketAddr::new(host, port);
            tokio::runtime::Runtime::new()?.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                tracing::info!(%addr, "serving");
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        tokio::signal::ctrl_c().await.ok();
                    })
                    .await?;
                anyhow::Ok(())
            })
        }
        Command::Demo {
            out,
            per_class,
            seed,
        } => {
            fs::create_dir_all(&out)?;
            let path = demo::write_demo(&out, per_class, seed, KRange { min: 2, max: 12 })?;
            println!("{}", path.display());
            Ok(())
        }
    }
}
