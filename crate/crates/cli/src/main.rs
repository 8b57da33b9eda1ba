use std::fmt::Write as _;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use conceptmap_core::analytics::{self, DEFAULT_OUTLIER_M, DEFAULT_TRUSTWORTHINESS_M};
use conceptmap_core::hierarchy::LevelSizing;
use conceptmap_core::ingest;
use conceptmap_core::{build_hierarchy, embed_all, load_artifact, save_artifact, BuildConfig, ExplorerArtifact, Metric};
use conceptmap_service::AppState;

/// Above this many points `stats` estimates trustworthiness from a sample.
const EXACT_TRUST_LIMIT: usize = 5000;
const TRUST_SAMPLE: usize = 1000;

#[derive(Parser, Debug)]
#[command(name = "conceptmap", version, about = "Build, inspect and serve hierarchical maps of feature explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build an artifact from feature metadata and explanation embeddings.
    Build(BuildArgs),
    /// Serve an artifact over HTTP.
    Serve {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Print level sizes and layout trustworthiness.
    Stats {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TRUSTWORTHINESS_M)]
        m: usize,
    },
    /// Print the points farthest from their layout neighbors.
    Outliers {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long, default_value_t = 0)]
        level: usize,
        #[arg(long, default_value_t = DEFAULT_OUTLIER_M)]
        m: usize,
        #[arg(long, default_value_t = 20)]
        top: usize,
    },
    /// Write per-level positions as CSV files.
    Export {
        #[arg(long)]
        artifact: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct BuildArgs {
    /// Feature metadata, one JSON record per line.
    #[arg(long)]
    metadata: PathBuf,
    /// Explanation embeddings in CXEM format, one row per metadata record.
    #[arg(long)]
    embeddings: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Landmark fraction per coarser level, e.g. 0.2,0.2
    #[arg(long, value_delimiter = ',', conflicts_with = "counts")]
    fractions: Option<Vec<f64>>,
    /// Landmark count per coarser level, e.g. 600,120
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    metric: Option<Metric>,
    #[arg(long)]
    walks: Option<usize>,
    #[arg(long)]
    walk_length: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Sequential layout optimization; identical inputs give identical artifacts.
    #[arg(long)]
    deterministic: bool,
}

impl BuildArgs {
    fn config(&self) -> BuildConfig {
        let mut c = BuildConfig::default();
        if let Some(f) = &self.fractions {
            c.sizing = LevelSizing::Fractions(f.clone());
        }
        if let Some(n) = &self.counts {
            c.sizing = LevelSizing::Counts(n.clone());
        }
        c.k = self.k.unwrap_or(c.k);
        c.metric = self.metric.unwrap_or(c.metric);
        c.walks_per_node = self.walks.unwrap_or(c.walks_per_node);
        c.walk_length = self.walk_length.unwrap_or(c.walk_length);
        c.layout.epochs = self.epochs.or(c.layout.epochs);
        c.layout.deterministic = self.deterministic;
        c.seed = self.seed;
        c
    }
}

fn build(args: &BuildArgs) -> Result<()> {
    let config = args.config();
    let total = Instant::now();

    let t = Instant::now();
    let catalog = ingest::load_feature_metadata(&args.metadata)
        .with_context(|| format!("reading {}", args.metadata.display()))?;
    let matrix = ingest::load_embedding_matrix(&args.embeddings, catalog.len())
        .with_context(|| format!("reading {}", args.embeddings.display()))?;
    println!("ingest      {:>8.2}s  {} features x {} dims", t.elapsed().as_secs_f64(), matrix.rows(), matrix.dims());

    let t = Instant::now();
    let hierarchy = build_hierarchy(&matrix, &config)?;
    println!("hierarchy   {:>8.2}s  levels {:?}", t.elapsed().as_secs_f64(), hierarchy.sizes());

    let t = Instant::now();
    let positions = embed_all(&hierarchy, &config.layout, config.seed)?;
    println!("layout      {:>8.2}s", t.elapsed().as_secs_f64());

    let t = Instant::now();
    let artifact = ExplorerArtifact::new(catalog, matrix, hierarchy, positions);
    save_artifact(&artifact, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    println!("save        {:>8.2}s  {}", t.elapsed().as_secs_f64(), args.out.display());
    println!("total       {:>8.2}s", total.elapsed().as_secs_f64());
    Ok(())
}

fn stats(dir: &Path, m: usize) -> Result<()> {
    let t = Instant::now();
    let a = load_artifact(dir).with_context(|| format!("loading {}", dir.display()))?;
    eprintln!("loaded in {:.2}s", t.elapsed().as_secs_f64());
    println!("features {}  dims {}  seed {}", a.catalog.len(), a.embeddings.dims(), a.hierarchy.config.seed);
    println!("level\tsize\ttrustworthiness");
    for (l, level) in a.hierarchy.levels.iter().enumerate() {
        let rows: Vec<usize> = level.nodes.iter().map(|&g| g as usize).collect();
        let high = a.embeddings.select_rows(&rows)?;
        let low = &a.positions[l].positions;
        let metric = a.hierarchy.config.metric;
        let trust = if m >= level.len().saturating_sub(1) / 2 {
            "n/a".to_string()
        } else if level.len() <= EXACT_TRUST_LIMIT {
            format!("{:.4}", analytics::trustworthiness(&high, metric, low, m)?)
        } else {
            let step = level.len() / TRUST_SAMPLE;
            let sample: Vec<usize> = (0..level.len()).step_by(step.max(1)).collect();
            format!("{:.4} (sampled)", analytics::trustworthiness_sampled(&high, metric, low, m, &sample)?)
        };
        println!("{l}\t{}\t{trust}", level.len());
    }
    Ok(())
}

fn truncate(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        s.to_string()
    } else {
        let mut t: String = s.chars().take(max - 1).collect();
        t.push('…');
        t
    }
}

fn outliers(dir: &Path, level: usize, m: usize, top: usize) -> Result<()> {
    let a = load_artifact(dir).with_context(|| format!("loading {}", dir.display()))?;
    let lvl = a.hierarchy.level(level)?;
    let scores = analytics::outlier_scores(&a.positions[level].positions, m)?;
    println!("rank\tnode_id\tfeature_id\tscore\texplanation");
    for (rank, i) in analytics::descending_order(&scores).into_iter().take(top).enumerate() {
        let g = lvl.nodes[i] as usize;
        let record = &a.catalog.records()[g];
        println!(
            "{}\t{g}\t{}\t{:.4}\t{}",
            rank + 1,
            record.feature_id,
            scores[i],
            truncate(&record.explanation, 80)
        );
    }
    Ok(())
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn export(dir: &Path, out: &Path) -> Result<()> {
    let a = load_artifact(dir).with_context(|| format!("loading {}", dir.display()))?;
    fs::create_dir_all(out)?;
    for (l, level) in a.hierarchy.levels.iter().enumerate() {
        let sizes = if l >= 1 {
            Some(analytics::region_sizes(&a.hierarchy, l)?)
        } else {
            None
        };
        let mut text = String::from("node_id,feature_id,x,y,region_size,category\n");
        for (i, &g) in level.nodes.iter().enumerate() {
            let record = &a.catalog.records()[g as usize];
            let [x, y] = a.positions[l].positions[i];
            let size = sizes.as_ref().map(|s| s[i].1.to_string()).unwrap_or_default();
            let category = record.category.as_deref().map(csv_field).unwrap_or_default();
            writeln!(text, "{g},{},{x},{y},{size},{category}", record.feature_id)?;
        }
        let path = out.join(format!("level_{l}.csv"));
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    Ok(())
}

fn serve(dir: &Path, listen: SocketAddr) -> Result<()> {
    let state = AppState::load(dir).with_context(|| format!("loading {}", dir.display()))?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(conceptmap_service::serve(listen, state))?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Build(args) => {
            if args.fractions.as_ref().is_some_and(|f| f.is_empty()) {
                bail!("--fractions needs at least one value");
            }
            build(&args)
        }
        Command::Serve { artifact, listen } => serve(&artifact, listen),
        Command::Stats { artifact, m } => stats(&artifact, m),
        Command::Outliers { artifact, level, m, top } => outliers(&artifact, level, m, top),
        Command::Export { artifact, out } => export(&artifact, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
