//! End-to-end acceptance checks. Each test prints one `criterion N ...`
//! line; run with `--nocapture` to see them. Training-based checks share a
//! lock so that their timings are not distorted by each other.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;
use std::time::Instant;

use cpg_core::autodiff::{gradient_check_params, Tape};
use cpg_core::generator::{
    count_trainable_parameters, cpg_formula, language_embedding_name, pairwise_formula, CountInputs, ParamGenerator,
    ParamScope, ParamStore, ParameterLayout, Side, VariantKind,
};
use cpg_core::inference::{beam_search, corpus_bleu, greedy_decode, score_ids, translate, DecodeOptions};
use cpg_core::model::{ModelConfig, TranslationModel};
use cpg_core::text::{apply_bpe, learn_bpe, reconstruct_word, Vocabulary, EOS};
use cpg_core::toy::{both_directions, related_languages, standard_languages, ToyLanguage, ToySpec};
use cpg_core::training::{
    adapt_new_language, train, trainable_scalar_count, write_metrics, AmsGrad, AmsGradConfig, Checkpoint, DevSet,
    TrainingData, TrainingSchedule,
};
use cpg_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static TRAINING: Mutex<()> = Mutex::new(());

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    println!(
        "criterion {n:>2} {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn toy_config(variant: VariantKind, lang_dim: usize) -> ModelConfig {
    ModelConfig {
        word_dim: 32,
        hidden_dim: 64,
        attention_dim: 32,
        lang_dim,
        variant,
        ..ModelConfig::default()
    }
}

fn toy_schedule(steps: u64, seed: u64, autoencode: bool) -> TrainingSchedule {
    TrainingSchedule {
        batch_size: 32,
        max_steps: steps,
        validation_interval: 500,
        patience: 5,
        seed,
        autoencode,
        optimizer: AmsGradConfig::default(),
        ..TrainingSchedule::default()
    }
}

struct Toy {
    vocabs: Vec<Vocabulary>,
    data: TrainingData,
    dev: Vec<DevSet>,
}

fn toy(languages: &[ToyLanguage], pairs: &[(String, String)], fraction: f64, seed: u64) -> Toy {
    let corpus = ToySpec {
        seed,
        ..ToySpec::default()
    }
    .generate(languages, pairs)
    .unwrap();
    let vocabs = corpus.vocabularies().unwrap();
    let data = TrainingData::new(corpus.train_corpora(&vocabs).unwrap(), BTreeMap::new(), fraction, seed).unwrap();
    let dev = corpus.dev_sets(&vocabs).unwrap();
    Toy { vocabs, data, dev }
}

fn model(config: ModelConfig, vocabs: &[Vocabulary], seed: u64) -> TranslationModel<f32> {
    TranslationModel::new(config, vocabs.to_vec(), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn all_pairs() -> Vec<(String, String)> {
    both_directions(&[("a", "b"), ("a", "c"), ("b", "c")])
}

fn bits(t: &Tensor<f32>) -> Vec<u32> {
    t.data().iter().map(|x| x.to_bits()).collect()
}

#[test]
fn c01_gradient_fidelity() {
    let t = Instant::now();
    let vocab = |c: &str, n: usize| Vocabulary::from_tokens(c, (0..n).map(|i| format!("{c}{i}")).collect()).unwrap();
    let config = ModelConfig {
        word_dim: 3,
        hidden_dim: 2,
        attention_dim: 2,
        lang_dim: 2,
        variant: VariantKind::CpgPlain,
        ..ModelConfig::default()
    };
    let m: TranslationModel<f64> = TranslationModel::new(
        config,
        vec![vocab("x", 3), vocab("y", 4)],
        &mut ChaCha8Rng::seed_from_u64(11),
    )
    .unwrap();
    let params: BTreeMap<String, Tensor<f64>> = m.params().iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let err = gradient_check_params(
        |tape, p| {
            let mut store = ParamStore::new();
            for (k, v) in p {
                store.insert(k.clone(), v.clone());
            }
            let scope = ParamScope::new(tape, &store);
            m.pair_loss(&scope, "x", "y", &[vec![4, 6, 5, EOS]], &[vec![7, 4, 6, EOS]])
        },
        &params,
        1e-5,
    )
    .unwrap();
    let secs = t.elapsed().as_secs_f64();
    report(
        1,
        "gradient fidelity",
        err < 1e-4 && secs < 120.0,
        &format!(
            "max relative error {err:.2e} over {} scalars, {secs:.1}s",
            m.scalar_count()
        ),
    );
}

/// Hand-derived tensor sizes of the encoder/decoder for `c`.
fn hand_sizes(c: &ModelConfig) -> (u64, u64) {
    let (w, h, a, n) = (
        c.word_dim as u64,
        c.hidden_dim as u64,
        c.attention_dim as u64,
        c.decoder_layers as u64,
    );
    let lstm = |input: u64| input * 4 * h + h * 4 * h + 4 * h;
    let enc = 2 * lstm(w);
    let bridge = 2 * h * n * h + n * h;
    let attention = h * a + 2 * h * a + a;
    let layers = lstm(w + 2 * h) + (n - 1) * lstm(h);
    (enc, bridge + attention + layers)
}

#[test]
fn c02_parameter_count_identity() {
    let t = Instant::now();
    let (l, v) = (3u64, 30u64);
    let mut details = Vec::new();
    let mut ok = true;
    for variant in [
        VariantKind::Pairwise,
        VariantKind::PerLanguage,
        VariantKind::Universal,
        VariantKind::CpgPlain,
        VariantKind::CpgGrouped,
    ] {
        let config = ModelConfig {
            word_dim: 6,
            hidden_dim: 5,
            attention_dim: 4,
            lang_dim: 8,
            group_rank: 3,
            variant,
            ..ModelConfig::default()
        };
        let vocabs: Vec<Vocabulary> = ["a", "b", "c"]
            .iter()
            .map(|c| Vocabulary::from_tokens(*c, (0..26).map(|i| format!("{c}{i}")).collect()).unwrap())
            .collect();
        let mut m = model(config.clone(), &vocabs, 1);
        let enc = config.encoder_layout().unwrap();
        let dec = config.decoder_layout().unwrap();
        let closed = count_trainable_parameters(&CountInputs {
            variant,
            languages: 3,
            encoder: &enc,
            decoder: &dec,
            per_language: config.per_language_size(v as usize),
            lang_dim: config.lang_dim,
            group_rank: config.group_rank,
            word_dim: config.word_dim,
        })
        .unwrap();

        // Audit: the optimizer's moment buffers after one dense update.
        let mut opt = AmsGrad::new(AmsGradConfig::default());
        let grads = BTreeMap::new();
        opt.step(m.params_mut(), &grads, None).unwrap();
        let audited: u64 = opt.moments.values().map(|mo| mo.m.len() as u64).sum();

        let (pe, pd) = hand_sizes(&config);
        let p = pe + pd;
        let (w, h, mm, r) = (6u64, 5u64, 8u64, 3u64);
        let per_lang = v * w + h * v + v;
        let groups = (enc.groups().len() + dec.groups().len()) as u64;
        let hand = match variant {
            VariantKind::Pairwise => l * (l - 1) * p,
            VariantKind::PerLanguage => l * p,
            VariantKind::Universal => p + l * l * w,
            VariantKind::CpgPlain => p * mm + l * mm,
            VariantKind::CpgGrouped => p * r + groups * r * mm + l * mm,
            VariantKind::CpgCoupled => unreachable!(),
        } + l * per_lang;
        ok &= closed == audited && closed == hand && (enc.total() + dec.total()) as u64 == p;
        details.push(format!("{variant} {closed}/{audited}/{hand}"));
    }
    let pairwise = pairwise_formula(3, 100, 4, 10);
    let cpg = cpg_formula(3, 100, 4, 10, 8);
    ok &= pairwise == 3 * 2 * (100 + 2 * 4 * 10) && pairwise == 1080;
    ok &= cpg == 100 * 8 + 3 * 8 + 3 * 2 * 4 * 10 && cpg == 1064 && cpg < pairwise;
    details.push(format!("toy accounting cpg={cpg} < pairwise={pairwise}"));
    let secs = t.elapsed().as_secs_f64();
    ok &= secs < 10.0;
    details.push(format!("{secs:.2}s"));
    report(2, "parameter-count identity", ok, &details.join(", "));
}

#[test]
fn c03_decoupling_invariant() {
    let t = Instant::now();
    let toy = toy(&standard_languages(26, 0), &all_pairs(), 1.0, 0);
    let mut ok = true;
    let mut checked = 0;
    for variant in [VariantKind::CpgPlain, VariantKind::CpgGrouped] {
        let m = model(toy_config(variant, 8), &toy.vocabs, 2);
        for src in ["a", "b", "c"] {
            let sentence = &toy.data.parallel(&toy.dev[0].pair)[0].0;
            let annotations = |tgt: &str| {
                let tape = Tape::new();
                let scope = ParamScope::new(&tape, m.params());
                let net = m.bind(&scope, src, tgt).unwrap();
                let enc = m
                    .encode_source(&scope, &net, tgt, std::slice::from_ref(sentence))
                    .unwrap();
                let v = tape.value(enc.sentence(&tape, 0).unwrap()).clone();
                bits(&v)
            };
            let reference = annotations("a");
            for tgt in ["b", "c"] {
                ok &= annotations(tgt) == reference;
                checked += 1;
            }
        }
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        3,
        "decoupling invariant",
        ok && secs < 10.0,
        &format!("{checked} target comparisons bit-identical: {ok}, {secs:.2}s"),
    );
}

#[test]
fn c04_reduction_equivalences() {
    // Grouped generation with one group, M' = M and P = I against plain.
    let (p, m) = (37usize, 5usize);
    let layout = || {
        ParameterLayout::builder()
            .group("all", &[("w", &[p, 1])])
            .build()
            .unwrap()
    };
    let langs = vec!["a".to_string(), "b".to_string()];
    let plain = ParamGenerator::new(VariantKind::CpgPlain, layout(), layout(), langs.clone(), m, 0).unwrap();
    let grouped = ParamGenerator::new(VariantKind::CpgGrouped, layout(), layout(), langs, m, m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let mut ps = ParamStore::<f64>::new();
    let mut gs = ParamStore::<f64>::new();
    for side in ["enc", "dec"] {
        let w = random(&[p, m]);
        ps.insert(format!("gen.{side}"), w.clone());
        gs.insert(format!("gen.{side}.all.weight"), w);
        gs.insert(format!("gen.{side}.all.projector"), Tensor::identity(m));
    }
    for code in ["a", "b"] {
        let l = random(&[m]);
        ps.insert(language_embedding_name(code), l.clone());
        gs.insert(language_embedding_name(code), l);
    }
    let theta = |g: &ParamGenerator, s: &ParamStore<f64>, side: Side, src: &str, tgt: &str| {
        let tape = Tape::new();
        let scope = ParamScope::new(&tape, s);
        let v = tape
            .value(g.generate(&scope, side, src, tgt).unwrap().flat())
            .to_f64_vec();
        v
    };
    let mut worst = 0.0f64;
    for (side, src, tgt) in [
        (Side::Encoder, "a", "b"),
        (Side::Decoder, "a", "b"),
        (Side::Encoder, "b", "a"),
    ] {
        let x = theta(&plain, &ps, side, src, tgt);
        let y = theta(&grouped, &gs, side, src, tgt);
        worst = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }

    // Beam 1 against greedy on random toy inputs.
    let toy = toy(&standard_languages(26, 0), &all_pairs(), 1.0, 0);
    let model = model(toy_config(VariantKind::CpgPlain, 8), &toy.vocabs, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let opts = DecodeOptions {
        beam_size: 1,
        ..DecodeOptions::default()
    };
    let mut same = 0;
    let codes = ["a", "b", "c"];
    for _ in 0..100 {
        let (s, t) = (codes[rng.gen_range(0..3)], codes[rng.gen_range(0..3)]);
        let len = rng.gen_range(1..=8);
        let mut src: Vec<usize> = (0..len).map(|_| rng.gen_range(4..30)).collect();
        src.push(EOS);
        let g = greedy_decode(&model, s, t, &src, None).unwrap();
        let b = beam_search(&model, s, t, &src, &opts).unwrap();
        if g.tokens == b.tokens && g.log_prob.to_bits() == b.log_prob.to_bits() {
            same += 1;
        }
    }
    report(
        4,
        "reduction equivalences",
        worst < 1e-6 && same == 100,
        &format!("grouped vs plain max |Δθ| {worst:.1e}; beam 1 == greedy on {same}/100 inputs"),
    );
}

#[test]
fn c05_toy_supervised_learning() {
    let _lock = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
    let t = Instant::now();
    let toy = toy(&standard_languages(26, 0), &all_pairs(), 1.0, 0);
    let vocab_sizes: Vec<usize> = toy.vocabs.iter().map(Vocabulary::len).collect();
    let mut ckpt = Checkpoint::new(model(toy_config(VariantKind::CpgPlain, 8), &toy.vocabs, 0));
    let chunk = 500;
    let (mut bleu, mut acc) = (0.0, 0.0);
    while ckpt.step < 3000 {
        ckpt = train(ckpt, &toy.data, &[], &toy_schedule(chunk, 0, true), None, |_| {})
            .unwrap()
            .last;
        let scores: Vec<_> = toy
            .dev
            .iter()
            .map(|d| {
                score_ids(
                    &ckpt.model,
                    &d.pair.src,
                    &d.pair.tgt,
                    &d.examples,
                    &DecodeOptions::greedy(),
                )
                .unwrap()
            })
            .collect();
        bleu = scores.iter().map(|s| s.bleu).fold(f64::INFINITY, f64::min);
        acc = scores.iter().map(|s| s.token_accuracy).fold(f64::INFINITY, f64::min);
        if bleu >= 0.95 && acc >= 0.99 {
            break;
        }
    }
    let secs = t.elapsed().as_secs_f64();
    report(
        5,
        "toy supervised learning",
        bleu >= 0.95 && acc >= 0.99 && ckpt.step <= 3000 && secs < 900.0,
        &format!(
            "worst dev pair BLEU {bleu:.4}, token accuracy {acc:.4} at step {}, vocab sizes {vocab_sizes:?}, {secs:.0}s",
            ckpt.step
        ),
    );
}

#[test]
fn c06_zero_shot_wiring() {
    let _lock = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
    let langs = standard_languages(26, 0);
    let toy = toy(&langs, &both_directions(&[("a", "b"), ("a", "c")]), 1.0, 0);
    let test = ToySpec::default()
        .generate(&langs, &[("b".to_string(), "c".to_string())])
        .unwrap();
    let zs = &test.test_sets(&toy.vocabs).unwrap()[0];
    let untrained = model(toy_config(VariantKind::CpgPlain, 8), &toy.vocabs, 0);
    let before = score_ids(&untrained, "b", "c", &zs.examples, &DecodeOptions::greedy())
        .unwrap()
        .bleu;
    let trained = train(
        Checkpoint::new(untrained),
        &toy.data,
        &toy.dev,
        &toy_schedule(1000, 0, true),
        None,
        |_| {},
    )
    .unwrap()
    .best
    .model;
    let after = score_ids(&trained, "b", "c", &zs.examples, &DecodeOptions::greedy())
        .unwrap()
        .bleu;

    let c_words: BTreeSet<&str> = langs[2].lexicon.iter().map(String::as_str).collect();
    let mut foreign = 0;
    for (src, _) in &test.parallel[0].test {
        let out = translate(&trained, "b", "c", src, &DecodeOptions::greedy()).unwrap();
        foreign += out.split_whitespace().filter(|w| !c_words.contains(w)).count();
    }
    report(
        6,
        "zero-shot wiring",
        foreign == 0 && after > before,
        &format!("b->c BLEU untrained {before:.4}, trained on a<->b, a<->c {after:.4}; non-c tokens emitted {foreign}"),
    );
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs[xs.len() / 2]
}

#[test]
fn c07_autoencoding_benefit() {
    let _lock = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
    let mut with = Vec::new();
    let mut without = Vec::new();
    for seed in 0..3 {
        let toy = toy(&standard_languages(26, seed), &all_pairs(), 0.1, seed);
        for (autoencode, out) in [(true, &mut with), (false, &mut without)] {
            let m = model(toy_config(VariantKind::CpgPlain, 8), &toy.vocabs, seed);
            let o = train(
                Checkpoint::new(m),
                &toy.data,
                &toy.dev,
                &toy_schedule(1500, seed, autoencode),
                None,
                |_| {},
            )
            .unwrap();
            out.push(o.best_bleu.unwrap());
        }
    }
    let (a, b) = (median(with.clone()), median(without.clone()));
    report(
        7,
        "auto-encoding benefit",
        a >= b,
        &format!("median dev BLEU with auto-encoding {a:.4} {with:.4?}, without {b:.4} {without:.4?}"),
    );
}

#[test]
fn c08_optimizer_oracle() {
    let (lr, b1, b2, eps) = (1e-3, 0.9, 0.999, 1e-8);
    let mut opt = AmsGrad::<f64>::new(AmsGradConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    });
    let mut params = ParamStore::new();
    params.insert("x", Tensor::vector(vec![0.0]));
    let grads: BTreeMap<String, Tensor<f64>> = [("x".to_string(), Tensor::vector(vec![1.0]))].into();
    let mut deltas = Vec::new();
    for _ in 0..2 {
        let before = params.get("x").unwrap().data()[0];
        opt.step(&mut params, &grads, None).unwrap();
        deltas.push(before - params.get("x").unwrap().data()[0]);
    }
    // Recurrence evaluated by hand: m = 0.1, 0.19; v = v̂ = 0.001, 0.001999.
    let oracle = [
        lr * 0.1 / (0.001f64.sqrt() + eps),
        lr * 0.19 / (0.001999f64.sqrt() + eps),
    ];
    let trace_ok = (deltas[0] - oracle[0]).abs() < 1e-9
        && (deltas[1] - oracle[1]).abs() < 1e-9
        && (deltas[0] - 3.1623e-3).abs() < 5e-8
        && (deltas[1] - 4.2496e-3).abs() < 5e-8;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut opt = AmsGrad::<f64>::new(AmsGradConfig::default());
    let mut params = ParamStore::new();
    params.insert("w", Tensor::vector(vec![0.0; 16]));
    let mut prev = vec![0.0; 16];
    let mut monotone = true;
    for _ in 0..1000 {
        let scale = 10f64.powf(rng.gen_range(-3.0..2.0));
        let g: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0) * scale).collect();
        let grads: BTreeMap<String, Tensor<f64>> = [("w".to_string(), Tensor::vector(g))].into();
        opt.step(&mut params, &grads, None).unwrap();
        let vhat = opt.moments["w"].vhat.data().to_vec();
        monotone &= vhat.iter().zip(&prev).all(|(n, o)| n >= o);
        prev = vhat;
    }
    report(
        8,
        "optimizer oracle",
        trace_ok && monotone,
        &format!(
            "steps {:.6e} {:.6e}, v-hat monotone over 1000 steps: {monotone}",
            deltas[0], deltas[1]
        ),
    );
}

/// Recount-everything reference learner.
fn naive_bpe(counts: &BTreeMap<String, u64>, merges: usize) -> Vec<(String, String)> {
    let mut words: Vec<(Vec<String>, u64)> = counts
        .iter()
        .map(|(w, &c)| {
            let mut s: Vec<String> = w.chars().map(String::from).collect();
            s.push("</w>".into());
            (s, c)
        })
        .collect();
    let mut out = Vec::new();
    while out.len() < merges {
        let mut freq: HashMap<(String, String), u64> = HashMap::new();
        for (s, c) in &words {
            for p in s.windows(2) {
                *freq.entry((p[0].clone(), p[1].clone())).or_default() += c;
            }
        }
        let Some(best) = freq
            .into_iter()
            .filter(|(_, c)| *c >= 2)
            .min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)))
        else {
            break;
        };
        let (l, r) = best.0;
        for (s, _) in &mut words {
            let mut merged = Vec::new();
            let mut i = 0;
            while i < s.len() {
                if i + 1 < s.len() && s[i] == l && s[i + 1] == r {
                    merged.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    merged.push(s[i].clone());
                    i += 1;
                }
            }
            *s = merged;
        }
        out.push((l, r));
    }
    out
}

fn random_word<R: Rng>(rng: &mut R, alphabet: &[char], max_len: usize) -> String {
    let n = rng.gen_range(1..=max_len);
    (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect()
}

#[test]
fn c09_text_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let alphabet = ['a', 'b', 'c', 'd', 'é', 'ß'];
    let mut bpe_agree = 0;
    for _ in 0..50 {
        let counts: BTreeMap<String, u64> = (0..rng.gen_range(1..12))
            .map(|_| (random_word(&mut rng, &alphabet, 7), rng.gen_range(1..6)))
            .collect();
        let k = rng.gen_range(0..25);
        if learn_bpe(&counts, k).merges() == naive_bpe(&counts, k).as_slice() {
            bpe_agree += 1;
        }
    }

    let documented: BTreeMap<String, u64> = [("low", 5), ("lower", 2), ("newest", 6), ("widest", 3)]
        .iter()
        .map(|(w, c)| (w.to_string(), *c))
        .collect();
    let first = learn_bpe(&documented, 1).merges().to_vec();
    let first_ok = first == [("e".to_string(), "s".to_string())];

    let toks = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let b1 = corpus_bleu(&[toks("a b c e")], &[toks("a b c d")], 4).unwrap();
    let b2 = corpus_bleu(&[toks("a b c")], &[toks("a b c d")], 3).unwrap();
    let bp = (1.0f64 - 4.0 / 3.0).exp();
    let bleu_ok = b1.abs() < 1e-6 && (b2 - bp).abs() < 1e-6 && (b2 - 0.71653).abs() < 1e-5;

    let corpus: BTreeMap<String, u64> = (0..200).map(|_| (random_word(&mut rng, &alphabet, 9), 1)).collect();
    let model = learn_bpe(&corpus, 60);
    let mut recon = 0;
    for _ in 0..1000 {
        let w = random_word(&mut rng, &alphabet, 12);
        if reconstruct_word(&apply_bpe(&model, &w)) == w {
            recon += 1;
        }
    }
    report(
        9,
        "tokenization/BPE/BLEU oracles",
        bpe_agree == 50 && first_ok && bleu_ok && recon == 1000,
        &format!(
            "BPE agrees with reference on {bpe_agree}/50, first merge {first:?}, BLEU {b1:.6} and {b2:.6}, reconstruction {recon}/1000"
        ),
    );
}

#[test]
fn c10_adaptation_freeze() {
    let _lock = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
    let corpus = ToySpec::default()
        .generate(&standard_languages(26, 0), &both_directions(&[("a", "b"), ("a", "c")]))
        .unwrap();
    let vocabs = corpus.vocabularies().unwrap();
    let corpora = corpus.train_corpora(&vocabs).unwrap();
    let involving = |lang: &str| -> TrainingData {
        let subset = corpora
            .iter()
            .filter(|c| c.pair.src == lang || c.pair.tgt == lang)
            .cloned()
            .collect();
        TrainingData::new(subset, BTreeMap::new(), 1.0, 0).unwrap()
    };
    let config = ModelConfig {
        word_dim: 16,
        hidden_dim: 24,
        attention_dim: 16,
        ..toy_config(VariantKind::CpgPlain, 8)
    };
    let base_vocabs: Vec<Vocabulary> = vocabs.iter().filter(|v| v.language() != "c").cloned().collect();
    let base = train(
        Checkpoint::new(model(config.clone(), &base_vocabs, 0)),
        &involving("b"),
        &[],
        &toy_schedule(100, 0, true),
        None,
        |_| {},
    )
    .unwrap()
    .last;
    let before: BTreeMap<String, Vec<u32>> = base.model.params().iter().map(|(k, v)| (k.clone(), bits(v))).collect();

    let c_vocab = vocabs.iter().find(|v| v.language() == "c").unwrap().clone();
    let v = c_vocab.len() as u64;
    let (out, trainable) =
        adapt_new_language(base, c_vocab, &involving("c"), &[], &toy_schedule(50, 0, true), |_| {}).unwrap();
    let after = out.last.model.params();
    let changed: BTreeSet<String> = after
        .iter()
        .filter(|(k, t)| before.get(*k) != Some(&bits(t)))
        .map(|(k, _)| k.clone())
        .collect();
    let expected: BTreeSet<String> = out.last.model.language_tensor_names("c").unwrap().into_iter().collect();
    let all_c = expected.iter().all(|n| n.starts_with("lang.c."));
    let count = trainable_scalar_count(after, &trainable).unwrap();
    let (m, w, h) = (8u64, 16u64, 24u64);
    let hand = m + v * w + h * v + v;
    report(
        10,
        "adaptation freeze",
        changed == expected && trainable == expected && all_c && count == hand,
        &format!("changed tensors {changed:?}, trainable scalars {count} (hand count {hand})"),
    );
}

fn cosine_distance(x: &[f32], y: &[f32]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| *a as f64 * *b as f64).sum();
    let norm = |v: &[f32]| v.iter().map(|a| (*a as f64).powi(2)).sum::<f64>().sqrt();
    1.0 - dot / (norm(x) * norm(y))
}

#[test]
fn c11_embedding_distances() {
    let _lock = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
    let mut passes = 0;
    let mut details = Vec::new();
    for seed in 0..3 {
        let toy = toy(&related_languages(26, seed), &all_pairs(), 1.0, seed);
        let m = model(toy_config(VariantKind::CpgPlain, 32), &toy.vocabs, seed);
        let trained = train(
            Checkpoint::new(m),
            &toy.data,
            &[],
            &toy_schedule(2500, seed, true),
            None,
            |_| {},
        )
        .unwrap()
        .last
        .model;
        let l = |c: &str| {
            trained
                .params()
                .get(&language_embedding_name(c))
                .unwrap()
                .data()
                .to_vec()
        };
        let (a, b, c) = (l("a"), l("b"), l("c"));
        let (ab, ac, bc) = (
            cosine_distance(&a, &b),
            cosine_distance(&a, &c),
            cosine_distance(&b, &c),
        );
        if ab < ac && ab < bc {
            passes += 1;
        }
        details.push(format!("seed {seed}: d(a,b)={ab:.3} d(a,c)={ac:.3} d(b,c)={bc:.3}"));
    }
    report(
        11,
        "embedding distances",
        passes >= 2,
        &format!("{passes}/3 seeds ordered; {}", details.join("; ")),
    );
}

#[test]
fn c12_determinism() {
    let _lock = TRAINING.lock().unwrap_or_else(|e| e.into_inner());
    let toy = toy(&standard_languages(26, 3), &all_pairs(), 1.0, 3);
    let run = || {
        let m = model(toy_config(VariantKind::CpgPlain, 8), &toy.vocabs, 3);
        let schedule = TrainingSchedule {
            validation_interval: 100,
            ..toy_schedule(300, 3, true)
        };
        let out = train(Checkpoint::new(m), &toy.data, &toy.dev, &schedule, None, |_| {}).unwrap();
        let mut log = Vec::new();
        write_metrics(&out.metrics, &mut log).unwrap();
        (out.last.to_bytes().unwrap(), out.best.to_bytes().unwrap(), log)
    };
    let (c1, b1, l1) = run();
    let (c2, b2, l2) = run();
    report(
        12,
        "determinism",
        c1 == c2 && b1 == b2 && l1 == l2,
        &format!(
            "checkpoint {} bytes identical: {}, metrics log {} bytes identical: {}",
            c1.len(),
            c1 == c2 && b1 == b2,
            l1.len(),
            l1 == l2
        ),
    );
}
