use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cpg_cli::commands::{self, FormulaInputs, ToyOptions};
use cpg_cli::config::ExperimentConfig;
use cpg_cli::manifest::{DatasetManifest, Split};
use cpg_cli::{CliError, CliResult};
use cpg_core::generator::{LanguageEmbeddingTable, VariantKind};
use cpg_core::inference::DecodeOptions;
use cpg_core::toy::ToySpec;
use cpg_core::training::Checkpoint;

#[derive(Parser)]
#[command(
    name = "cpg",
    version,
    about = "Multilingual translation with contextual parameter generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides `paths.manifest` from the config.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    variant: Option<VariantKind>,
    #[arg(long)]
    parallel_fraction: Option<f64>,
    /// Train without monolingual auto-encoding.
    #[arg(long)]
    no_autoencode: bool,
    #[arg(long)]
    max_steps: Option<u64>,
}

#[derive(clap::Args)]
struct DecodeArgs {
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_len: Option<usize>,
}

impl DecodeArgs {
    /// The checkpoint's stored settings with any flags applied on top.
    fn options(&self, checkpoint: &Path) -> CliResult<DecodeOptions> {
        let mut o = commands::stored_decode_options(checkpoint)?;
        if let Some(b) = self.beam {
            o.beam_size = b;
        }
        if let Some(a) = self.alpha {
            o.alpha = a;
        }
        if self.max_len.is_some() {
            o.max_len = self.max_len;
        }
        o.validate()?;
        Ok(o)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Build vocabularies (and BPE merges) from the training data.
    Preprocess(ExperimentArgs),
    /// Train a model; writes the best checkpoint and a metrics log.
    Train {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Checkpoint output path (default: <output_dir>/model.cpgc).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Translate lines from a file or stdin.
    Translate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        src: String,
        #[arg(long)]
        tgt: String,
        /// Translate through this language instead of directly.
        #[arg(long)]
        pivot: Option<String>,
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Score a checkpoint on every pair of a manifest split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        /// Report path; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Also write the language-embedding distance matrix here.
        #[arg(long, requires = "output")]
        distances: Option<PathBuf>,
        #[command(flatten)]
        decode: DecodeArgs,
    },
    /// Pairwise cosine distances between language embeddings.
    AnalyzeEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Add a language to a trained model, training only its own parameters.
    Adapt {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        lang: String,
        /// Default: <output_dir>/adapted-<lang>.cpgc.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Closed-form versus audited trainable-parameter counts.
    CountParams {
        /// Count real models built from this config for every variant.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        languages: u64,
        /// Vocabulary size per language.
        #[arg(long, default_value_t = 10)]
        vocab: u64,
        /// Formula mode: encoder plus decoder size.
        #[arg(long, default_value_t = 100)]
        p: u64,
        #[arg(long, default_value_t = 4)]
        word_dim: u64,
        #[arg(long, default_value_t = 8)]
        lang_dim: u64,
    },
    /// Write a synthetic multilingual corpus and its manifest.
    GenerateToy {
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Comma-separated directed pairs such as `a-b,b-a`.
        #[arg(long, value_delimiter = ',')]
        pairs: Vec<String>,
        /// Make `a` and `b` near-identical and `c` unrelated.
        #[arg(long)]
        related: bool,
        #[arg(long, default_value_t = 500)]
        train: usize,
        #[arg(long, default_value_t = 50)]
        dev: usize,
        #[arg(long, default_value_t = 50)]
        test: usize,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum SplitArg {
    Train,
    Dev,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Dev => Split::Dev,
            SplitArg::Test => Split::Test,
        }
    }
}

impl ExperimentArgs {
    fn config(&self) -> CliResult<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed {
            c.seed = s;
            c.training.seed = s;
        }
        if let Some(v) = self.variant {
            c.model.variant = v;
        }
        if let Some(f) = self.parallel_fraction {
            c.training.parallel_fraction = f;
        }
        if self.no_autoencode {
            c.training.autoencode = false;
        }
        if let Some(n) = self.max_steps {
            c.training.max_steps = n;
        }
        if let Some(m) = &self.manifest {
            c.paths.manifest = Some(m.clone());
        }
        c.validate()?;
        Ok(c)
    }

    fn manifest(&self, config: &ExperimentConfig) -> CliResult<DatasetManifest> {
        let path = config
            .paths
            .manifest
            .as_deref()
            .ok_or_else(|| CliError::Usage("no manifest: pass --manifest or set paths.manifest".into()))?;
        DatasetManifest::load(path)
    }
}

fn write_to(path: Option<&Path>, f: impl FnOnce(&mut dyn Write) -> CliResult<()>) -> CliResult<()> {
    match path {
        Some(p) => {
            let mut file = std::fs::File::create(p).map_err(|e| CliError::write(p, e))?;
            f(&mut file)
        }
        None => f(&mut io::stdout().lock()),
    }
}

fn parse_pair(s: &str) -> CliResult<(String, String)> {
    s.split_once('-')
        .filter(|(a, b)| !a.is_empty() && !b.is_empty())
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .ok_or_else(|| CliError::Usage(format!("bad pair `{s}`, expected src-tgt")))
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Preprocess(exp) => {
            let config = exp.config()?;
            commands::preprocess(&config, &exp.manifest(&config)?)?;
            println!("vocabularies written to {}", config.paths.output_dir.display());
        }
        Command::Train { exp, checkpoint } => {
            let config = exp.config()?;
            let s = commands::train_command(&config, &exp.manifest(&config)?, checkpoint.as_deref())?;
            let bleu = s.best_bleu.map_or("none".to_string(), |b| format!("{b:.4}"));
            println!(
                "checkpoint={} best_step={} best_val_bleu={bleu} metrics={}",
                s.checkpoint.display(),
                s.step,
                s.metrics.display()
            );
        }
        Command::Translate {
            checkpoint,
            src,
            tgt,
            pivot,
            input,
            decode,
        } => {
            let opts = decode.options(&checkpoint)?;
            let out = io::stdout().lock();
            match input {
                Some(p) => {
                    let f = std::fs::File::open(&p).map_err(|e| CliError::path(&p, e))?;
                    commands::translate_command(
                        &checkpoint,
                        &src,
                        &tgt,
                        pivot.as_deref(),
                        &opts,
                        BufReader::new(f),
                        out,
                    )?
                }
                None => commands::translate_command(
                    &checkpoint,
                    &src,
                    &tgt,
                    pivot.as_deref(),
                    &opts,
                    io::stdin().lock(),
                    out,
                )?,
            }
        }
        Command::Evaluate {
            checkpoint,
            manifest,
            split,
            output,
            distances,
            decode,
        } => {
            let report = commands::evaluate_command(
                &checkpoint,
                &DatasetManifest::load(&manifest)?,
                split.into(),
                &decode.options(&checkpoint)?,
            )?;
            match output {
                Some(path) => {
                    let table = match &distances {
                        Some(_) => {
                            let model = Checkpoint::<f32>::load(&checkpoint)?.model;
                            Some(LanguageEmbeddingTable::from_store(model.generator(), model.params())?)
                        }
                        None => None,
                    };
                    let d = table.as_ref().zip(distances.as_deref());
                    commands::emit_report(&report, &path, d)?;
                }
                None => write_to(None, |w| Ok(report.write_tsv(w)?))?,
            }
        }
        Command::AnalyzeEmbeddings { checkpoint, output } => {
            write_to(output.as_deref(), |w| commands::analyze_embeddings(&checkpoint, w))?;
        }
        Command::Adapt {
            exp,
            checkpoint,
            lang,
            output,
        } => {
            let config = exp.config()?;
            let manifest = exp.manifest(&config)?;
            let output = output.unwrap_or_else(|| config.paths.output_dir.join(format!("adapted-{lang}.cpgc")));
            let s = commands::adapt_command(&checkpoint, &config, &manifest, &lang, &output)?;
            println!(
                "checkpoint={} trainable_scalars={} tensors={}",
                s.checkpoint.display(),
                s.trainable_scalars,
                s.tensors.join(",")
            );
        }
        Command::CountParams {
            config,
            languages,
            vocab,
            p,
            word_dim,
            lang_dim,
        } => match config {
            None => {
                let (pairwise, cpg, audited) = commands::count_formula(&FormulaInputs {
                    languages,
                    p,
                    word_dim,
                    vocab,
                    lang_dim,
                })?;
                println!("pairwise={pairwise} cpg={cpg} audited={audited}");
            }
            Some(path) => {
                let c = ExperimentConfig::load(&path)?;
                for (variant, closed, audited) in commands::count_config(&c, languages as usize, vocab as usize)? {
                    println!(
                        "variant={variant} closed={closed} audited={audited} match={}",
                        closed == audited
                    );
                }
            }
        },
        Command::GenerateToy {
            output,
            seed,
            pairs,
            related,
            train,
            dev,
            test,
        } => {
            let opts = ToyOptions {
                spec: ToySpec {
                    seed,
                    train,
                    dev,
                    test,
                    ..ToySpec::default()
                },
                pairs: pairs.iter().map(|p| parse_pair(p)).collect::<CliResult<_>>()?,
                related,
            };
            let manifest = commands::generate_toy(&output, &opts)?;
            println!("manifest={}", manifest.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("invalid arguments");
            let msg = first.trim_start_matches("error: ");
            eprintln!("error: {}", CliError::Usage(msg.to_string()).single_line());
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.single_line());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
