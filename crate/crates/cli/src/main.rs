mod commands;
mod errors;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

/// Offline A/B testing of recommenders with simulated users.
#[derive(Debug, Parser)]
#[command(name = "recsandbox", version, about, long_about = None)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Global {
    /// Directory every output is written under.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    /// Master seed [default: 0, or the config's seed for abtest].
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Session worker threads [default: all cores].
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Log verbosity on stderr.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: tracing::Level,
}

impl Global {
    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    Rule,
    Llm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Random,
    Popularity,
    Fm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EmbedderArg {
    Deterministic,
    Remote,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Interactions,
    Labeled,
}

/// Where the catalog comes from.
#[derive(Debug, Clone, Args)]
pub struct CatalogArg {
    /// Catalog directory (movies.dat, users.dat, ratings.dat, optional
    /// metadata.jsonl) [default: a synthetic catalog built from --seed].
    #[arg(long)]
    pub catalog: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FmArgs {
    /// Comma-separated feature blocks: user_id, movie_id, user_demographics,
    /// movie_genres.
    #[arg(long, value_delimiter = ',', default_value = "user_id,movie_id,user_demographics,movie_genres")]
    pub features: Vec<String>,
    /// Factor dimension.
    #[arg(long, default_value_t = 16)]
    pub latent_dim: i64,
    /// Passes over the training set.
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// AdaGrad step size.
    #[arg(long, default_value_t = 0.05)]
    pub learning_rate: f32,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate an ML-1M style directory and write a normalized copy.
    Prepare {
        /// Directory holding movies.dat, users.dat, ratings.dat (required).
        #[arg(long)]
        data: PathBuf,
        /// Also compare counts and sparsity against the published dataset [default: off].
        #[arg(long, default_value_t = false)]
        expect_published: bool,
    },
    /// Generate a synthetic catalog with known user affinities.
    Synth {
        /// Number of users.
        #[arg(long, default_value_t = 200)]
        users: usize,
        /// Number of movies.
        #[arg(long, default_value_t = 300)]
        movies: usize,
        /// Target interaction count.
        #[arg(long, default_value_t = 6000)]
        interactions: usize,
        /// Floor on interactions per user.
        #[arg(long, default_value_t = 5)]
        min_per_user: usize,
        /// Log-normal spread of per-user interaction counts.
        #[arg(long, default_value_t = 1.0)]
        activity_dispersion: f64,
    },
    /// Fit a recommender on the training split and save a checkpoint.
    Train {
        #[command(flatten)]
        catalog: CatalogArg,
        /// Recommender producing the lists.
        #[arg(long, value_enum, default_value_t = KindArg::Fm)]
        kind: KindArg,
        /// Oldest share of each user's training history to fit on.
        #[arg(long, default_value_t = 1.0)]
        train_fraction: f64,
        #[command(flatten)]
        fm: FmArgs,
    },
    /// Recall@k and NDCG@k of a checkpoint on the test split.
    EvalOffline {
        #[command(flatten)]
        catalog: CatalogArg,
        /// Checkpoint written by `train` (required).
        #[arg(long)]
        model: PathBuf,
        /// Cutoff for Recall@k and NDCG@k.
        #[arg(long, default_value_t = 20)]
        k: usize,
    },
    /// Simulate one user's sessions against one recommender.
    Simulate {
        #[command(flatten)]
        catalog: CatalogArg,
        /// User to simulate (required).
        #[arg(long)]
        user: u32,
        /// Arm name used in session ids and trace file names.
        #[arg(long, default_value = "fm")]
        arm: String,
        /// Recommender producing the lists.
        #[arg(long, value_enum, default_value_t = KindArg::Fm)]
        kind: KindArg,
        /// Decision policy; llm reads LLM_ENDPOINT, LLM_MODEL, LLM_API_KEY.
        #[arg(long, value_enum, default_value_t = PolicyArg::Rule)]
        policy: PolicyArg,
        /// Show poster references to the agent.
        #[arg(long, value_enum, default_value_t = OnOff::On)]
        vision: OnOff,
        /// Consecutive sessions per user; memory carries over.
        #[arg(long, default_value_t = 1)]
        sessions: u32,
        /// Memory embedder; remote reads EMBED_ENDPOINT, EMBED_MODEL, EMBED_API_KEY.
        #[arg(long, value_enum, default_value_t = EmbedderArg::Deterministic)]
        embedder: EmbedderArg,
        /// Fatigue preset: mini-column, 4o-column or mini-column-modulated.
        #[arg(long, default_value = "mini-column")]
        fatigue: String,
    },
    /// Run every arm of an experiment config over a shared cohort.
    Abtest {
        #[command(flatten)]
        catalog: CatalogArg,
        /// TOML or JSON experiment config (required).
        #[arg(long)]
        config: PathBuf,
    },
    /// Click and rating response to lists with more or fewer liked movies.
    AlignTaste {
        #[command(flatten)]
        catalog: CatalogArg,
        /// Items per composed list.
        #[arg(long, default_value_t = 20)]
        list_size: usize,
        /// Simulate a seeded sample of this many users [default: everyone].
        #[arg(long)]
        sample: Option<usize>,
        /// Skip the all-negative control list [default: off].
        #[arg(long, default_value_t = false)]
        no_control: bool,
        /// Show poster references to the agent.
        #[arg(long, value_enum, default_value_t = OnOff::On)]
        vision: OnOff,
    },
    /// Click distributions of low, medium and high activity groups.
    AlignActivity {
        #[command(flatten)]
        catalog: CatalogArg,
        /// Simulate a seeded sample of this many users [default: everyone].
        #[arg(long)]
        sample: Option<usize>,
        /// Recommender producing the lists.
        #[arg(long, value_enum, default_value_t = KindArg::Popularity)]
        kind: KindArg,
        /// Consecutive sessions per user; memory carries over.
        #[arg(long, default_value_t = 1)]
        sessions: u32,
        /// Give every group the medium trait [default: off].
        #[arg(long, default_value_t = false)]
        null_config: bool,
    },
    /// Turn simulated clicks and views into training records.
    ExportAugmented {
        /// Directory of *.events.jsonl and *.sessions.jsonl files (required).
        #[arg(long)]
        traces: PathBuf,
        /// interactions: user::movie::rating::timestamp lines; labeled: JSON lines with the signal.
        #[arg(long, value_enum, default_value_t = FormatArg::Interactions)]
        format: FormatArg,
        /// Catalog to merge the records into; the result is written to
        /// <out>/merged [default: no merge].
        #[arg(long)]
        merge: Option<PathBuf>,
    },
    /// Print a stored simulation report as a table.
    Report {
        /// Run directory containing report.json (required).
        #[arg(long)]
        run: PathBuf,
        /// Also write <out>/summary.csv [default: off].
        #[arg(long, default_value_t = false)]
        csv: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt().with_max_level(cli.global.log_level).with_writer(std::io::stderr).with_target(false).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let f = errors::classify(&e);
            eprintln!("error: {e:#}");
            eprintln!("remedy: {}", f.remedy);
            ExitCode::from(f.code)
        }
    }
}
