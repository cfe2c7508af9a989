use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use cpg_core::generator::{
    cosine_distance_matrix, count_trainable_parameters, cpg_formula, pairwise_formula, write_distance_tsv, CountInputs,
    LanguageEmbeddingTable, ParamGenerator, ParamStore, ParameterLayout, VariantKind,
};
use cpg_core::inference::{
    corpus_bleu, pivot_translate, token_accuracy, translate, DecodeOptions, EvalReport, EvalRow,
};
use cpg_core::model::{proj_name, words_name, ModelConfig, TranslationModel};
use cpg_core::text::{apply_bpe, count_tokens, encode_sentence, learn_bpe, tokenize, BpeModel, Vocabulary};
use cpg_core::toy::{both_directions, related_languages, standard_languages, ToySpec};
use cpg_core::training::{
    adapt_new_language, train, trainable_scalar_count, write_metrics, Checkpoint, DevSet, LanguagePair, MetricRow,
    ParallelCorpus, TrainingData,
};
use cpg_core::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, VocabMode};
use crate::error::{CliError, CliResult};
use crate::manifest::{read_lines, DatasetManifest, Split};

/// Key under which the effective experiment config is stored in checkpoints.
pub const CONFIG_NOTE: &str = "experiment_config";

fn vocab_path(dir: &Path, lang: &str) -> PathBuf {
    dir.join("vocab").join(format!("{lang}.txt"))
}

fn bpe_path(dir: &Path, lang: &str) -> PathBuf {
    dir.join("bpe").join(format!("{lang}.txt"))
}

fn create(path: &Path) -> CliResult<fs::File> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::write(parent, e))?;
    }
    fs::File::create(path).map_err(|e| CliError::write(path, e))
}

fn open(path: &Path) -> CliResult<std::io::BufReader<fs::File>> {
    Ok(std::io::BufReader::new(
        fs::File::open(path).map_err(|e| CliError::path(path, e))?,
    ))
}

fn load_checkpoint(path: &Path) -> CliResult<Checkpoint<f32>> {
    if !path.exists() {
        return Err(CliError::path(path, "no such file"));
    }
    Ok(Checkpoint::load(path)?)
}

/// Decode settings recorded with the checkpoint, or the defaults when it
/// carries no experiment config.
pub fn stored_decode_options(checkpoint: &Path) -> CliResult<DecodeOptions> {
    match load_checkpoint(checkpoint)?.notes.get(CONFIG_NOTE) {
        Some(text) => Ok(ExperimentConfig::parse(text)?.decode),
        None => Ok(DecodeOptions::default()),
    }
}

/// Builds per-language vocabularies (and BPE models) from the training side
/// of the manifest and writes them under the output directory.
pub fn preprocess(config: &ExperimentConfig, manifest: &DatasetManifest) -> CliResult<()> {
    let dir = &config.paths.output_dir;
    for lang in &manifest.languages {
        let text = manifest.training_text(lang)?;
        let words = count_tokens(text.iter().flat_map(|l| tokenize(l)));
        let units = match config.vocab.mode {
            VocabMode::Word => words,
            VocabMode::Bpe => {
                let bpe = learn_bpe(&words, config.vocab.bpe_merges);
                let mut units: BTreeMap<String, u64> = BTreeMap::new();
                for (w, c) in &words {
                    for u in apply_bpe(&bpe, w) {
                        *units.entry(u).or_insert(0) += c;
                    }
                }
                let path = bpe_path(dir, lang);
                bpe.write_to(create(&path)?)?;
                units
            }
        };
        let vocab = Vocabulary::build(lang.clone(), &units, config.vocab.min_count, config.vocab.max_size);
        let path = vocab_path(dir, lang);
        vocab.write_to(create(&path)?)?;
        log::info!(
            "{lang}: {} sentences, vocabulary {} -> {}",
            text.len(),
            vocab.len(),
            path.display()
        );
    }
    Ok(())
}

/// Vocabularies and segmenters produced by [`preprocess`].
pub struct TextModels {
    pub vocabs: BTreeMap<String, Vocabulary>,
    pub bpe: BTreeMap<String, BpeModel>,
}

impl TextModels {
    pub fn load(dir: &Path, languages: &[String], mode: VocabMode) -> CliResult<Self> {
        let mut vocabs = BTreeMap::new();
        let mut bpe = BTreeMap::new();
        for lang in languages {
            let path = vocab_path(dir, lang);
            if !path.exists() {
                return Err(CliError::path(&path, "missing vocabulary, run `cpg preprocess` first"));
            }
            vocabs.insert(lang.clone(), Vocabulary::read_from(lang.clone(), open(&path)?)?);
            if mode == VocabMode::Bpe {
                let path = bpe_path(dir, lang);
                bpe.insert(lang.clone(), BpeModel::read_from(open(&path)?)?);
            }
        }
        Ok(TextModels { vocabs, bpe })
    }

    pub fn encode(&self, lang: &str, line: &str) -> CliResult<Vec<usize>> {
        let vocab = self
            .vocabs
            .get(lang)
            .ok_or_else(|| CliError::Data(format!("no vocabulary for language `{lang}`")))?;
        let words = tokenize(line);
        let units: Vec<String> = match self.bpe.get(lang) {
            Some(b) => words.iter().flat_map(|w| apply_bpe(b, w)).collect(),
            None => words,
        };
        Ok(encode_sentence(vocab, &units))
    }

    fn pairs(&self, manifest: &DatasetManifest, split: Split) -> CliResult<Vec<ParallelCorpus>> {
        let mut by_pair: BTreeMap<(String, String), Vec<(Vec<usize>, Vec<usize>)>> = BTreeMap::new();
        for p in manifest.split(split) {
            let (src, tgt) = (read_lines(&p.src_file)?, read_lines(&p.tgt_file)?);
            let entry = by_pair.entry((p.src.clone(), p.tgt.clone())).or_default();
            for (s, t) in src.iter().zip(&tgt) {
                entry.push((self.encode(&p.src, s)?, self.encode(&p.tgt, t)?));
            }
        }
        Ok(by_pair
            .into_iter()
            .map(|((s, t), examples)| ParallelCorpus {
                pair: LanguagePair::new(s, t),
                examples,
            })
            .collect())
    }

    fn monolingual(&self, manifest: &DatasetManifest) -> CliResult<BTreeMap<String, Vec<Vec<usize>>>> {
        let mut mono: BTreeMap<String, Vec<Vec<usize>>> = BTreeMap::new();
        for m in &manifest.monolingual {
            let entry = mono.entry(m.lang.clone()).or_default();
            for line in read_lines(&m.file)? {
                entry.push(self.encode(&m.lang, &line)?);
            }
        }
        Ok(mono)
    }

    fn dev_sets(&self, manifest: &DatasetManifest) -> CliResult<Vec<DevSet>> {
        Ok(self
            .pairs(manifest, Split::Dev)?
            .into_iter()
            .map(|c| DevSet {
                pair: c.pair,
                examples: c.examples,
            })
            .collect())
    }
}

fn metrics_logger() -> impl FnMut(&MetricRow) {
    |row: &MetricRow| match row.val_bleu {
        Some(b) => log::info!(
            "step {} {} loss {:.4} validation BLEU {b:.4}",
            row.step,
            row.pair,
            row.loss
        ),
        None => log::debug!("step {} {} loss {:.4}", row.step, row.pair, row.loss),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub best_bleu: Option<f64>,
    pub step: u64,
}

pub fn train_command(
    config: &ExperimentConfig,
    manifest: &DatasetManifest,
    checkpoint: Option<&Path>,
) -> CliResult<TrainSummary> {
    let dir = &config.paths.output_dir;
    let text = TextModels::load(dir, &manifest.languages, config.vocab.mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model =
        TranslationModel::<f32>::new(config.model.clone(), text.vocabs.values().cloned().collect(), &mut rng)?;
    for (lang, b) in &text.bpe {
        model.set_bpe(lang, b.clone());
    }
    let data = TrainingData::new(
        text.pairs(manifest, Split::Train)?,
        text.monolingual(manifest)?,
        config.training.parallel_fraction,
        config.seed,
    )?;
    let dev = text.dev_sets(manifest)?;
    let mut start = Checkpoint::new(model);
    start.notes.insert(CONFIG_NOTE.into(), config.to_toml());
    let out = train(start, &data, &dev, &config.training, None, metrics_logger())?;
    if out.skipped_steps > 0 {
        log::warn!("{} steps skipped on non-finite values", out.skipped_steps);
    }

    let ckpt_path = checkpoint.map_or_else(|| dir.join("model.cpgc"), Path::to_path_buf);
    if let Some(parent) = ckpt_path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::write(parent, e))?;
    }
    out.best.save(&ckpt_path).map_err(|e| CliError::write(&ckpt_path, e))?;
    let metrics = dir.join("metrics.tsv");
    write_metrics(&out.metrics, create(&metrics)?)?;
    Ok(TrainSummary {
        checkpoint: ckpt_path,
        metrics,
        best_bleu: out.best_bleu,
        step: out.best.step,
    })
}

/// Translates every line of `input` and writes one line per sentence.
pub fn translate_command(
    checkpoint: &Path,
    src: &str,
    tgt: &str,
    pivot: Option<&str>,
    opts: &DecodeOptions,
    input: impl BufRead,
    mut output: impl Write,
) -> CliResult<()> {
    let model = load_checkpoint(checkpoint)?.model;
    for code in [Some(src), Some(tgt), pivot].into_iter().flatten() {
        model.generator().language_index(code)?;
    }
    for line in input.lines() {
        let line = line.map_err(|e| CliError::Data(format!("reading input: {e}")))?;
        let out = match pivot {
            Some(p) => pivot_translate(&model, &model, src, p, tgt, &line, opts)?.output,
            None => translate(&model, src, tgt, &line, opts)?,
        };
        writeln!(output, "{out}").map_err(|e| CliError::Runtime(format!("writing output: {e}")))?;
        output
            .flush()
            .map_err(|e| CliError::Runtime(format!("writing output: {e}")))?;
    }
    Ok(())
}

/// BLEU and token accuracy on detokenized output, re-tokenized, against the
/// reference files of `split`.
pub fn evaluate_command(
    checkpoint: &Path,
    manifest: &DatasetManifest,
    split: Split,
    opts: &DecodeOptions,
) -> CliResult<EvalReport> {
    let model = load_checkpoint(checkpoint)?.model;
    let mut grouped: BTreeMap<(String, String), (Vec<String>, Vec<String>)> = BTreeMap::new();
    for p in manifest.split(split) {
        let e = grouped.entry((p.src.clone(), p.tgt.clone())).or_default();
        e.0.extend(read_lines(&p.src_file)?);
        e.1.extend(read_lines(&p.tgt_file)?);
    }
    if grouped.is_empty() {
        return Err(CliError::Data(
            format!("manifest has no {split:?} resources").to_lowercase(),
        ));
    }
    let mut report = EvalReport::default();
    report
        .settings
        .insert("checkpoint".into(), checkpoint.display().to_string());
    report
        .settings
        .insert("split".into(), format!("{split:?}").to_lowercase());
    report.settings.insert("beam_size".into(), opts.beam_size.to_string());
    report.settings.insert("alpha".into(), opts.alpha.to_string());
    for ((src, tgt), (sources, references)) in grouped {
        let mut hyps = Vec::with_capacity(sources.len());
        for s in &sources {
            hyps.push(tokenize(&translate(&model, &src, &tgt, s, opts)?));
        }
        let refs: Vec<Vec<String>> = references.iter().map(|r| tokenize(r)).collect();
        let pair = format!("{src}-{tgt}");
        let n = refs.len();
        report.rows.push(EvalRow {
            pair: pair.clone(),
            metric: "bleu".into(),
            value: corpus_bleu(&hyps, &refs, 4)?,
            sentences: n,
        });
        report.rows.push(EvalRow {
            pair,
            metric: "token_accuracy".into(),
            value: token_accuracy(&hyps, &refs)?,
            sentences: n,
        });
    }
    Ok(report)
}

/// Writes the report TSV and, when given, a language distance matrix.
pub fn emit_report(
    report: &EvalReport,
    path: &Path,
    distances: Option<(&LanguageEmbeddingTable, &Path)>,
) -> CliResult<()> {
    let mut buf = Vec::new();
    report.write_tsv(&mut buf)?;
    create(path)?.write_all(&buf).map_err(|e| CliError::write(path, e))?;
    if let Some((table, dpath)) = distances {
        let d = cosine_distance_matrix(table)?;
        write_distance_tsv(table.languages(), &d, create(dpath)?)?;
    }
    Ok(())
}

pub fn analyze_embeddings(checkpoint: &Path, out: impl Write) -> CliResult<()> {
    let model = load_checkpoint(checkpoint)?.model;
    let table = LanguageEmbeddingTable::from_store(model.generator(), model.params())?;
    let d = cosine_distance_matrix(&table)?;
    write_distance_tsv(table.languages(), &d, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptSummary {
    pub checkpoint: PathBuf,
    pub trainable_scalars: u64,
    pub tensors: Vec<String>,
}

/// Adds `lang` to a trained generator-based model, training only its own
/// tensors on the manifest data that involves it.
pub fn adapt_command(
    base: &Path,
    config: &ExperimentConfig,
    manifest: &DatasetManifest,
    lang: &str,
    output: &Path,
) -> CliResult<AdaptSummary> {
    let mut start = load_checkpoint(base)?;
    start.optimizer = None;
    start.step = 0;
    start.notes.insert(CONFIG_NOTE.into(), config.to_toml());
    let dir = &config.paths.output_dir;
    let mut text = TextModels {
        vocabs: start
            .model
            .vocabs()
            .map(|v| (v.language().to_string(), v.clone()))
            .collect(),
        bpe: start.model.bpe_models().clone(),
    };
    if text.vocabs.contains_key(lang) {
        return Err(CliError::Data(format!("checkpoint already knows language `{lang}`")));
    }
    let new = TextModels::load(dir, &[lang.to_string()], config.vocab.mode)?;
    let vocab = new.vocabs[lang].clone();
    text.vocabs.extend(new.vocabs);
    text.bpe.extend(new.bpe.clone());

    let mut usable = DatasetManifest {
        languages: manifest.languages.clone(),
        parallel: manifest
            .parallel
            .iter()
            .filter(|p| {
                (p.src == lang || p.tgt == lang) && text.vocabs.contains_key(&p.src) && text.vocabs.contains_key(&p.tgt)
            })
            .cloned()
            .collect(),
        monolingual: manifest
            .monolingual
            .iter()
            .filter(|m| m.lang == lang)
            .cloned()
            .collect(),
    };
    usable.languages.retain(|l| text.vocabs.contains_key(l));
    let data = TrainingData::new(
        text.pairs(&usable, Split::Train)?,
        text.monolingual(&usable)?,
        config.training.parallel_fraction,
        config.seed,
    )?;
    let dev = text.dev_sets(&usable)?;
    let (out, trainable) = adapt_new_language(start, vocab, &data, &dev, &config.training, metrics_logger())?;
    let mut best = out.best;
    if let Some(b) = new.bpe.get(lang) {
        best.model.set_bpe(lang, b.clone());
    }
    if let Some(parent) = output.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::write(parent, e))?;
    }
    best.save(output).map_err(|e| CliError::write(output, e))?;
    Ok(AdaptSummary {
        checkpoint: output.to_path_buf(),
        trainable_scalars: trainable_scalar_count(best.model.params(), &trainable)?,
        tensors: trainable.into_iter().collect(),
    })
}

/// Sizes for the closed-form accounting of parameter counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FormulaInputs {
    pub languages: u64,
    pub p: u64,
    pub word_dim: u64,
    pub vocab: u64,
    pub lang_dim: u64,
}

impl Default for FormulaInputs {
    fn default() -> Self {
        FormulaInputs {
            languages: 3,
            p: 100,
            word_dim: 4,
            vocab: 10,
            lang_dim: 8,
        }
    }
}

/// Pairwise and CPG totals under the per-pair `P + 2WV` accounting, plus
/// the scalar count of an actually allocated CPG parameter set of that shape.
pub fn count_formula(f: &FormulaInputs) -> CliResult<(u64, u64, u64)> {
    if f.languages == 0 || f.p < 2 || f.lang_dim == 0 {
        return Err(CliError::Usage("need languages >= 1, p >= 2 and lang-dim >= 1".into()));
    }
    let layout = |n: u64| {
        ParameterLayout::builder()
            .group("all", &[("theta", &[n as usize, 1])])
            .build()
    };
    let languages: Vec<String> = (0..f.languages).map(|i| format!("l{i}")).collect();
    let generator = ParamGenerator::new(
        VariantKind::CpgPlain,
        layout(f.p / 2)?,
        layout(f.p - f.p / 2)?,
        languages.clone(),
        f.lang_dim as usize,
        0,
    )?;
    let mut store = ParamStore::<f32>::new();
    generator.initialize(&mut store, &mut ChaCha8Rng::seed_from_u64(0))?;
    let (w, v) = (f.word_dim as usize, f.vocab as usize);
    for l in &languages {
        store.insert(words_name(l), Tensor::zeros(&[v, w]));
        store.insert(proj_name(l), Tensor::zeros(&[w, v]));
    }
    Ok((
        pairwise_formula(f.languages, f.p, f.word_dim, f.vocab),
        cpg_formula(f.languages, f.p, f.word_dim, f.vocab, f.lang_dim),
        store.scalar_count(),
    ))
}

/// Closed-form versus audited count of a real model for every variant.
pub fn count_config(
    config: &ExperimentConfig,
    languages: usize,
    vocab: usize,
) -> CliResult<Vec<(VariantKind, u64, u64)>> {
    if languages == 0 {
        return Err(CliError::Usage("need at least one language".into()));
    }
    let vocabs: Vec<Vocabulary> = (0..languages)
        .map(|i| {
            let code = format!("l{i}");
            let content = (0..vocab).map(|k| format!("{code}w{k}")).collect();
            Vocabulary::from_tokens(code, content)
        })
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    for variant in [
        VariantKind::Pairwise,
        VariantKind::PerLanguage,
        VariantKind::Universal,
        VariantKind::CpgPlain,
        VariantKind::CpgCoupled,
        VariantKind::CpgGrouped,
    ] {
        let mc = ModelConfig {
            variant,
            ..config.model.clone()
        };
        let model = TranslationModel::<f32>::new(mc.clone(), vocabs.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        let (enc, dec) = (mc.encoder_layout()?, mc.decoder_layout()?);
        let closed = count_trainable_parameters(&CountInputs {
            variant,
            languages,
            encoder: &enc,
            decoder: &dec,
            per_language: mc.per_language_size(vocabs[0].len()),
            lang_dim: mc.lang_dim,
            group_rank: mc.group_rank,
            word_dim: mc.word_dim,
        })?;
        rows.push((variant, closed, model.scalar_count()));
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyOptions {
    pub spec: ToySpec,
    /// Directed pairs; both directions of a→b, a→c, b→c when empty.
    pub pairs: Vec<(String, String)>,
    /// `a` and `b` share structure, `c` is reordered.
    pub related: bool,
}

/// Writes a synthetic corpus and a manifest describing it into `dir`.
pub fn generate_toy(dir: &Path, opts: &ToyOptions) -> CliResult<PathBuf> {
    let langs = if opts.related {
        related_languages(opts.spec.concepts, opts.spec.seed)
    } else {
        standard_languages(opts.spec.concepts, opts.spec.seed)
    };
    let pairs = if opts.pairs.is_empty() {
        both_directions(&[("a", "b"), ("a", "c"), ("b", "c")])
    } else {
        opts.pairs.clone()
    };
    let corpus = opts.spec.generate(&langs, &pairs)?;
    fs::create_dir_all(dir).map_err(|e| CliError::write(dir, e))?;
    let mut manifest = String::new();
    for p in &corpus.parallel {
        for (split, lines) in [("train", &p.train), ("dev", &p.dev), ("test", &p.test)] {
            let stem = format!("{split}.{}-{}", p.pair.src, p.pair.tgt);
            let (sf, tf) = (format!("{stem}.{}", p.pair.src), format!("{stem}.{}", p.pair.tgt));
            let join = |side: fn(&(String, String)) -> &String| -> String {
                lines.iter().map(|l| format!("{}\n", side(l))).collect()
            };
            fs::write(dir.join(&sf), join(|l| &l.0)).map_err(|e| CliError::write(&dir.join(&sf), e))?;
            fs::write(dir.join(&tf), join(|l| &l.1)).map_err(|e| CliError::write(&dir.join(&tf), e))?;
            manifest.push_str(&format!(
                "[[parallel]]\nsrc = \"{}\"\ntgt = \"{}\"\nsrc_file = \"{sf}\"\ntgt_file = \"{tf}\"\nsplit = \"{split}\"\n\n",
                p.pair.src, p.pair.tgt
            ));
        }
    }
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest).map_err(|e| CliError::write(&path, e))?;
    Ok(path)
}
