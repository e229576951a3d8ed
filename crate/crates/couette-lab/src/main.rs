use anyhow::Context;
use clap::Parser;
use std::path::PathBuf;

/// Batch runner: evaluates one JSON config (see README for the schema) and
/// writes CSV/JSON reports plus a digest manifest to the output directory.
#[derive(Parser)]
#[command(name = "couette-lab", version, about)]
struct Args {
    /// Path to the JSON config document.
    config: PathBuf,
    /// Override the config's output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let args = Args::parse();
    let mut text = std::fs::read_to_string(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(dir) = args.out_dir {
        // rewrite out_dir without disturbing the rest of the document
        let mut v: serde_json::Value = serde_json::from_str(&text).context("parsing config")?;
        if let Some(obj) = v.as_object_mut() {
            obj.insert(
                "out_dir".to_string(),
                serde_json::Value::String(dir.display().to_string()),
            );
        }
        text = serde_json::to_string(&v)?;
    }
    std::process::exit(couette_lab::cli::execute(&text));
}
