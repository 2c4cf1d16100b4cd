use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use imtforge::simulate::Level;
use imtforge::train::Algorithm;

#[derive(Parser, Debug)]
#[command(name = "imtforge", version, about = "Interactive-adaptive neural machine translation")]
pub struct Cli {
    /// TOML file whose [<subcommand>] table supplies flag defaults
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Learn BPE merge operations from tokenised text
    LearnBpe(LearnBpeArgs),
    /// Train a model with early stopping on development BLEU
    Train(TrainArgs),
    /// Translate lines from a file or stdin
    Translate(TranslateArgs),
    /// Terminal session: type a source line, then correct the hypothesis
    Interactive(InteractiveArgs),
    /// Simulate users post-editing a test set interactively
    Simulate(SimulateArgs),
    /// Score hypotheses against references
    Evaluate(EvaluateArgs),
    /// Run the HTTP session service
    Serve(ServeArgs),
    /// Write a bundled synthetic corpus
    Fixture(FixtureArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum LevelArg {
    Char,
    Word,
}

impl From<LevelArg> for Level {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::Char => Level::Char,
            LevelArg::Word => Level::Word,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adagrad,
    Adadelta,
    Adam,
}

impl From<OptimizerArg> for Algorithm {
    fn from(o: OptimizerArg) -> Self {
        match o {
            OptimizerArg::Sgd => Algorithm::Sgd,
            OptimizerArg::Adagrad => Algorithm::Adagrad,
            OptimizerArg::Adadelta => Algorithm::Adadelta,
            OptimizerArg::Adam => Algorithm::Adam,
        }
    }
}

/// Online-learning flags shared by interactive, simulate and serve.
#[derive(Args, Debug, Clone)]
pub struct OnlineArgs {
    #[arg(long, value_enum, default_value = "sgd")]
    pub optimizer: OptimizerArg,
    /// Learning rate; the optimizer's default when omitted
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
}

impl OnlineArgs {
    pub fn algorithm(&self) -> Algorithm {
        self.optimizer.into()
    }

    pub fn lr(&self) -> f64 {
        self.lr.unwrap_or_else(|| self.algorithm().default_lr())
    }
}

#[derive(Args, Debug)]
pub struct LearnBpeArgs {
    #[arg(long)]
    pub merges: usize,
    /// Whitespace-tokenised text files, one sentence per line
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub src: PathBuf,
    #[arg(long)]
    pub trg: PathBuf,
    #[arg(long)]
    pub dev_src: PathBuf,
    #[arg(long)]
    pub dev_trg: PathBuf,
    /// Checkpoint directory (model, BPE codes, vocabularies, history)
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub merges: usize,
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden_dim: usize,
    #[arg(long, default_value_t = 32)]
    pub output_dim: usize,
    /// Use o * tanh(c) as the LSTM output instead of o * c
    #[arg(long)]
    pub standard_lstm_output: bool,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 8)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 200)]
    pub eval_interval: usize,
    #[arg(long, default_value_t = 20)]
    pub patience: usize,
    #[arg(long, default_value_t = 3000)]
    pub max_updates: usize,
    #[arg(long, default_value_t = 0.0)]
    pub noise_std: f64,
    #[arg(long, default_value_t = 5.0)]
    pub clip_norm: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Beam size for development decoding
    #[arg(long, default_value_t = 6)]
    pub beam: usize,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub beam: usize,
    /// Read from this file instead of stdin
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InteractiveArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value_t = 6)]
    pub beam: usize,
    /// Learn from every accepted translation
    #[arg(long)]
    pub adapt: bool,
    #[command(flatten)]
    pub online: OnlineArgs,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub test_src: PathBuf,
    #[arg(long)]
    pub test_trg: PathBuf,
    #[arg(long, value_enum, default_value = "char")]
    pub level: LevelArg,
    /// Update the model after every sentence
    #[arg(long)]
    pub adaptive: bool,
    /// Run both the static and the adaptive system on the same test order
    #[arg(long)]
    pub compare: bool,
    #[command(flatten)]
    pub online: OnlineArgs,
    #[arg(long, default_value_t = 6)]
    pub beam: usize,
    #[arg(long)]
    pub max_sentences: Option<usize>,
    /// Complete the partial word after a character correction
    #[arg(long)]
    pub word_completion: bool,
    /// Per-sentence CSV; with --compare, `.static` and `.adaptive` are
    /// inserted before the extension
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Include wall-clock timing columns in the CSV
    #[arg(long)]
    pub timing: bool,
    /// Bootstrap seed
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub hyp: PathBuf,
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Training text for RRR and UNF of the references
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub rr_window: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    pub ci_level: f64,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Learn from every accepted translation
    #[arg(long)]
    pub adapt: bool,
    #[command(flatten)]
    pub online: OnlineArgs,
    #[arg(long, default_value_t = 6)]
    pub beam: usize,
    #[arg(long, default_value_t = 64)]
    pub max_sessions: usize,
    /// Idle seconds before a session expires
    #[arg(long, default_value_t = 1800)]
    pub session_ttl: u64,
    /// Require `Authorization: Bearer <token>` on every request
    #[arg(long, env = "IMTFORGE_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FixtureKind {
    /// Target equals source, one letter per word
    Copy,
    /// Free sentences over a synthetic lexicon
    General,
    /// Sentences from a few templates, highly repetitive
    Template,
    /// Sentences sharing no n-grams with the general training set
    Control,
}

#[derive(Args, Debug)]
pub struct FixtureArgs {
    #[arg(long, value_enum)]
    pub kind: FixtureKind,
    #[arg(long)]
    pub out_src: PathBuf,
    #[arg(long)]
    pub out_trg: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub size: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Lexicon size of the synthetic language
    #[arg(long, default_value_t = 60)]
    pub lexicon: usize,
    #[arg(long, default_value_t = 11)]
    pub language_seed: u64,
    /// Number of templates for the template corpus
    #[arg(long, default_value_t = 3)]
    pub templates: usize,
    /// Size and seed of the general corpus the control set avoids
    #[arg(long, default_value_t = 1500)]
    pub train_size: usize,
    #[arg(long, default_value_t = 12)]
    pub train_seed: u64,
}
