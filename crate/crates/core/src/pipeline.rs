//! The three training phases, routing, evaluation and report files.
//!
//! Phase 1 trains encoder, enhancer and a dummy decoder jointly, then
//! freezes the first two and drops the dummy. Phase 2 lets the agent
//! rescale the cluster classifier. Phase 3 routes every training pair to
//! one cluster and trains that cluster's filter on it alone.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::autodiff::{Tape, Var};
use crate::checkpoint::CheckpointError;
use crate::cluster::{assign_cluster, pca_project_2d, silhouette_score, subsample_indices, ClusterError, LatentBatch};
use crate::config::{ConfigError, PipelineConfig};
use crate::data::{
    generate_synthetic_heterogeneous, load_parallel_corpus, synthetic_vocabulary, Corpus, DataError, Grammar, Pair,
    Split, VocabPolicy, Vocabulary, EOS, PAD,
};
use crate::metrics::{corpus_bleu, exact_match, token_accuracy};
use crate::model::{argmax, Decoder, EncoderOutput, ModelParams};
use crate::nn::{accumulate_grads, Dropout, Parameterized};
use crate::optim::Adam;
use crate::rng::{derive_seed, streams, Rng};
use crate::sac::{enhance_classifier, ClusterEnv, Enhancement, Env, RewardConfig, SacAgent, SINGLE_CLUSTER_SCORE};
use crate::tensor::{Tensor, TensorError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{phase} diverged: loss is {loss} at epoch {epoch}, batch {batch}")]
    Diverged {
        phase: &'static str,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
    #[error("{0}")]
    Order(String),
    #[error("checkpoint dims differ from the current config: {0}")]
    Dims(String),
    #[error("{0}")]
    Contract(String),
}

type Result<T> = std::result::Result<T, PipelineError>;

/// Training and validation splits over one vocabulary.
#[derive(Clone, Debug)]
pub struct Datasets {
    pub vocab: Vocabulary,
    pub train: Corpus,
    pub valid: Corpus,
    /// Generating grammar per pair, for the synthetic corpus only.
    pub train_grammars: Option<Vec<Grammar>>,
    pub valid_grammars: Option<Vec<Grammar>>,
}

pub fn load_datasets(cfg: &PipelineConfig) -> Result<Datasets> {
    if cfg.corpus == "synthetic" {
        let train = generate_synthetic_heterogeneous(
            derive_seed(cfg.seed, streams::DATA_TRAIN),
            cfg.train_size,
            cfg.mix,
            Split::Train,
        )?;
        let valid = generate_synthetic_heterogeneous(
            derive_seed(cfg.seed, streams::DATA_VALID),
            cfg.valid_size,
            cfg.mix,
            Split::Valid,
        )?;
        return Ok(Datasets {
            vocab: synthetic_vocabulary(),
            train: train.corpus,
            valid: valid.corpus,
            train_grammars: Some(train.grammars),
            valid_grammars: Some(valid.grammars),
        });
    }
    if cfg.valid_corpus.is_empty() {
        return Err(PipelineError::Contract(
            "config key `valid_corpus` must name a file when `corpus` is a path".into(),
        ));
    }
    let (train, vocab) = load_parallel_corpus(&cfg.corpus, Split::Train, VocabPolicy::Build)?;
    let (valid, _) = load_parallel_corpus(&cfg.valid_corpus, Split::Valid, VocabPolicy::Fixed(&vocab))?;
    Ok(Datasets {
        vocab,
        train,
        valid,
        train_grammars: None,
        valid_grammars: None,
    })
}

/// `target` followed by EOS.
fn with_eos(target: &[usize]) -> Vec<usize> {
    target.iter().copied().chain([EOS]).collect()
}

fn class_weights(vocab: usize) -> Vec<f64> {
    let mut w = vec![1.0; vocab];
    w[PAD] = 0.0;
    w
}

/// Cross-entropy of teacher-forced logits against `target` + EOS.
fn sequence_loss(tape: &mut Tape, logits: Var, target: &[usize], weights: &[f64]) -> Result<Var> {
    let logp = tape.log_softmax(logits);
    Ok(tape.nll_loss(logp, &with_eos(target), weights)?)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean loss of each batch, in order.
    pub batch_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub valid_losses: Vec<f64>,
    pub stopped_early: bool,
}

/// True once `losses` has risen for `patience` consecutive epochs.
fn should_stop(losses: &[f64], patience: usize) -> bool {
    losses.len() > patience && losses.windows(2).rev().take(patience).all(|w| w[1] > w[0])
}

fn dims_report(cfg: &PipelineConfig, params: &ModelParams) -> Option<String> {
    let d = params.dims;
    let mut diffs = Vec::new();
    for (key, want, got) in [
        ("hidden", cfg.hidden, d.hidden),
        ("latent", cfg.latent, d.latent),
        ("embed", cfg.embed, d.embed),
        ("n_filters", cfg.n_filters, d.clusters),
    ] {
        if want != got {
            diffs.push(format!("{key}: config {want}, checkpoint {got}"));
        }
    }
    (!diffs.is_empty()).then(|| diffs.join("; "))
}

/// Refuses parameters whose shapes disagree with the current config.
pub fn check_dims(cfg: &PipelineConfig, params: &ModelParams, vocab: usize) -> Result<()> {
    let mut report = dims_report(cfg, params);
    if params.dims.vocab != vocab {
        let v = format!("vocab: corpus {vocab}, checkpoint {}", params.dims.vocab);
        report = Some(report.map_or(v.clone(), |r| format!("{r}; {v}")));
    }
    match report {
        Some(r) => Err(PipelineError::Dims(r)),
        None => Ok(()),
    }
}

/// Phase 1: joint training of encoder, enhancer and dummy decoder.
///
/// Gradients are averaged over each batch. Training stops after
/// `cfg.epochs`, or earlier once validation loss has risen for
/// `cfg.patience` epochs in a row. Encoder and enhancer come back frozen
/// and the dummy decoder is dropped.
pub fn train_phase1(cfg: &PipelineConfig, data: &Datasets) -> Result<(ModelParams, TrainLog)> {
    if data.train.is_empty() {
        return Err(PipelineError::Contract("training corpus is empty".into()));
    }
    let dims = cfg.dims(data.vocab.len());
    let mut params = ModelParams::init(
        dims,
        cfg.precision,
        derive_seed(cfg.seed, streams::ENCODER),
        derive_seed(cfg.seed, streams::CLASSIFIER),
    )?;
    let mut rng = Rng::new(derive_seed(cfg.seed, streams::PHASE1));
    let mut adam = Adam::new(cfg.lr).with_precision(cfg.precision);
    let weights = class_weights(dims.vocab);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.train.len()).collect();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut batch_sum = 0.0;
            for &i in batch {
                let pair = &data.train.pairs[i];
                let mut drop = (cfg.dropout > 0.0).then_some(Dropout {
                    p: cfg.dropout,
                    rng: &mut rng,
                });
                let loss = phase1_sample(&mut params, pair, &weights, &mut drop)?;
                if !loss.is_finite() {
                    return Err(PipelineError::Diverged {
                        phase: "phase 1",
                        epoch,
                        batch: b,
                        loss,
                    });
                }
                batch_sum += loss;
            }
            params.scale_grads(1.0 / batch.len() as f64);
            adam.step(&mut params);
            log.batch_losses.push(batch_sum / batch.len() as f64);
            epoch_sum += batch_sum;
        }
        log.epoch_losses.push(epoch_sum / data.train.len() as f64);
        if !data.valid.is_empty() {
            log.valid_losses
                .push(phase1_valid_loss(&params, &data.valid, &weights)?);
            if should_stop(&log.valid_losses, cfg.patience) {
                log.stopped_early = true;
                break;
            }
        }
    }
    params.encoder.set_frozen(true);
    params.enhancer.set_frozen(true);
    params.dummy = None;
    Ok((params, log))
}

/// Forward and backward for one pair; grads accumulate into `params`.
fn phase1_sample(
    params: &mut ModelParams,
    pair: &Pair,
    weights: &[f64],
    drop: &mut Option<Dropout<'_>>,
) -> Result<f64> {
    let dummy = params.dummy.as_ref().expect("dummy decoder present in phase 1");
    let mut tape = Tape::new();
    let enc_b = params.encoder.bind(&mut tape);
    let enh_b = params.enhancer.bind(&mut tape);
    let dec_b = dummy.bind(&mut tape);
    let enc = enc_b.encode(&mut tape, &pair.source, drop)?;
    let r_e = enh_b.enhance(&mut tape, enc.final_hidden)?;
    let logits = dec_b.teacher_forced(&mut tape, &enc, r_e, &pair.target, drop)?;
    let loss = sequence_loss(&mut tape, logits, &pair.target, weights)?;
    let value = tape.scalar(loss);
    if !value.is_finite() {
        return Ok(value);
    }
    let grads = tape.backward(loss)?;
    accumulate_grads(&mut params.encoder, &enc_b.vars(), &grads);
    accumulate_grads(&mut params.enhancer, &enh_b.vars(), &grads);
    accumulate_grads(params.dummy.as_mut().unwrap(), &dec_b.vars(), &grads);
    Ok(value)
}

fn phase1_valid_loss(params: &ModelParams, corpus: &Corpus, weights: &[f64]) -> Result<f64> {
    let dummy = params.dummy.as_ref().expect("dummy decoder present in phase 1");
    let mut sum = 0.0;
    for pair in &corpus.pairs {
        let mut tape = Tape::new();
        let enc = params
            .encoder
            .bind(&mut tape)
            .encode(&mut tape, &pair.source, &mut None)?;
        let r_e = params.enhancer.bind(&mut tape).enhance(&mut tape, enc.final_hidden)?;
        let logits = dummy
            .bind(&mut tape)
            .teacher_forced(&mut tape, &enc, r_e, &pair.target, &mut None)?;
        let loss = sequence_loss(&mut tape, logits, &pair.target, weights)?;
        sum += tape.scalar(loss);
    }
    Ok(sum / corpus.len() as f64)
}

/// Frozen encoder outputs for one source sequence, computed without dropout.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedEncoding {
    pub len: usize,
    pub width: usize,
    /// `len x width`
    pub steps: Vec<f64>,
    pub final_hidden: Vec<f64>,
    pub final_cell: Vec<f64>,
    /// Enhanced latent point.
    pub latent: Vec<f64>,
}

impl CachedEncoding {
    /// Re-enters the cached values on `tape` as constants.
    pub fn materialize(&self, tape: &mut Tape) -> Result<(EncoderOutput, Var)> {
        let steps = tape.constant(self.len, self.width, self.steps.clone())?;
        let fh = tape.constant(1, self.width, self.final_hidden.clone())?;
        let fc = tape.constant(1, self.width, self.final_cell.clone())?;
        let r_e = tape.constant(1, self.latent.len(), self.latent.clone())?;
        Ok((
            EncoderOutput {
                step_outputs: steps,
                final_hidden: fh,
                final_cell: fc,
                len: self.len,
            },
            r_e,
        ))
    }
}

pub fn encode_frozen(params: &ModelParams, source: &[usize]) -> Result<CachedEncoding> {
    let mut tape = Tape::new();
    let enc = params.encoder.bind(&mut tape).encode(&mut tape, source, &mut None)?;
    let r_e = params.enhancer.bind(&mut tape).enhance(&mut tape, enc.final_hidden)?;
    Ok(CachedEncoding {
        len: enc.len,
        width: tape.dims(enc.step_outputs).1,
        steps: tape.value(enc.step_outputs).to_vec(),
        final_hidden: tape.value(enc.final_hidden).to_vec(),
        final_cell: tape.value(enc.final_cell).to_vec(),
        latent: tape.value(r_e).to_vec(),
    })
}

pub fn encode_corpus(params: &ModelParams, corpus: &Corpus) -> Result<Vec<CachedEncoding>> {
    corpus.pairs.iter().map(|p| encode_frozen(params, &p.source)).collect()
}

/// Latent points (one row per encoding).
pub fn latent_matrix(encodings: &[CachedEncoding]) -> Result<Tensor> {
    let rows: Vec<Vec<f64>> = encodings.iter().map(|e| e.latent.clone()).collect();
    Ok(Tensor::from_rows(&rows)?)
}

/// Pair indices grouped by assigned cluster.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoutedBatch {
    pub clusters: Vec<Vec<usize>>,
}

impl RoutedBatch {
    pub fn sizes(&self) -> Vec<usize> {
        self.clusters.iter().map(Vec::len).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        let n = self.clusters.iter().map(Vec::len).sum();
        let mut out = vec![0; n];
        for (c, members) in self.clusters.iter().enumerate() {
            for &i in members {
                out[i] = c;
            }
        }
        out
    }
}

/// Assigns each encoding to its most probable cluster.
pub fn route_encodings(params: &ModelParams, encodings: &[CachedEncoding]) -> Result<RoutedBatch> {
    let n = params.classifier.clusters();
    let mut clusters = vec![Vec::new(); n];
    if encodings.is_empty() {
        return Ok(RoutedBatch { clusters });
    }
    let probs = params.classifier.classify_rows(&latent_matrix(encodings)?)?;
    for (i, p) in probs.iter().enumerate() {
        clusters[assign_cluster(p)?].push(i);
    }
    Ok(RoutedBatch { clusters })
}

pub fn route_batch(params: &ModelParams, pairs: &[Pair]) -> Result<RoutedBatch> {
    let enc: Vec<CachedEncoding> = pairs
        .iter()
        .map(|p| encode_frozen(params, &p.source))
        .collect::<Result<_>>()?;
    route_encodings(params, &enc)
}

fn require_frozen(params: &ModelParams, next: &str) -> Result<()> {
    if !params.encoder_enhancer_frozen() {
        return Err(PipelineError::Order(format!(
            "encoder and enhancer are not frozen; run `train` before `{next}`"
        )));
    }
    Ok(())
}

/// Phase 2: rescale the classifier with the agent on a fixed subsample of
/// training latents. Returns `None` when skipped (`rl=false`, a single
/// cluster, or a zero step budget).
pub fn enhance(cfg: &PipelineConfig, params: &mut ModelParams, data: &Datasets) -> Result<Option<Enhancement>> {
    require_frozen(params, "enhance")?;
    if !cfg.rl || cfg.n_filters < 2 {
        return Ok(None);
    }
    let encodings = encode_corpus(params, &data.train)?;
    let idx = subsample_indices(
        encodings.len(),
        cfg.sac.silhouette_sample,
        derive_seed(cfg.seed, streams::SUBSAMPLE),
    );
    let sample: Vec<CachedEncoding> = idx.iter().map(|&i| encodings[i].clone()).collect();
    let points = latent_matrix(&sample)?;
    let mut env = ClusterEnv::new(points, params.classifier.clone(), RewardConfig::from_sac(&cfg.sac));
    let mut agent = SacAgent::new(
        env.observation_dim(),
        env.action_dim(),
        &cfg.sac,
        derive_seed(cfg.seed, streams::SAC),
    );
    let out = enhance_classifier(&mut env, &mut agent, &cfg.sac)?;
    params.classifier = out.classifier.clone();
    params.classifier.round_to(params.precision);
    Ok(Some(out))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FilterLog {
    pub train_sizes: Vec<usize>,
    /// Per filter, mean training loss of each epoch (empty when untouched).
    pub epoch_losses: Vec<Vec<f64>>,
}

/// Phase 3: one shared random initialization cloned into every filter; each
/// filter trains only on its own cluster with its own optimizer and RNG.
pub fn train_filters(cfg: &PipelineConfig, data: &Datasets, params: &mut ModelParams) -> Result<FilterLog> {
    require_frozen(params, "train-filters")?;
    let train_enc = encode_corpus(params, &data.train)?;
    let valid_enc = encode_corpus(params, &data.valid)?;
    let routed = route_encodings(params, &train_enc)?;
    let valid_routed = route_encodings(params, &valid_enc)?;
    train_filters_routed(cfg, data, params, &train_enc, &routed, &valid_enc, &valid_routed)
}

/// Phase 3 on precomputed encodings and routing.
pub fn train_filters_routed(
    cfg: &PipelineConfig,
    data: &Datasets,
    params: &mut ModelParams,
    train_enc: &[CachedEncoding],
    routed: &RoutedBatch,
    valid_enc: &[CachedEncoding],
    valid_routed: &RoutedBatch,
) -> Result<FilterLog> {
    require_frozen(params, "train-filters")?;
    if routed.clusters.iter().all(Vec::is_empty) {
        return Err(PipelineError::Contract(
            "every cluster is empty; nothing to train".into(),
        ));
    }
    let n = params.classifier.clusters();
    let init = params.new_decoder(&mut Rng::new(derive_seed(cfg.seed, streams::FILTER_INIT)));
    params.filters = vec![init; n];
    let weights = class_weights(params.dims.vocab);
    let mut log = FilterLog {
        train_sizes: routed.sizes(),
        epoch_losses: vec![Vec::new(); n],
    };
    for c in 0..n {
        let members = &routed.clusters[c];
        if members.is_empty() {
            continue;
        }
        let valid_members = valid_routed.clusters.get(c).map_or(&[][..], Vec::as_slice);
        let seed = derive_seed(derive_seed(cfg.seed, streams::FILTER_TRAIN), c as u64);
        log.epoch_losses[c] = train_one_filter(
            cfg,
            &mut params.filters[c],
            members,
            train_enc,
            &data.train.pairs,
            valid_members,
            valid_enc,
            &data.valid.pairs,
            &weights,
            seed,
        )?;
    }
    Ok(log)
}

#[allow(clippy::too_many_arguments)]
fn train_one_filter(
    cfg: &PipelineConfig,
    filter: &mut Decoder,
    members: &[usize],
    train_enc: &[CachedEncoding],
    train_pairs: &[Pair],
    valid_members: &[usize],
    valid_enc: &[CachedEncoding],
    valid_pairs: &[Pair],
    weights: &[f64],
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = Rng::new(seed);
    let mut adam = Adam::new(cfg.lr).with_precision(cfg.precision);
    let mut order = members.to_vec();
    let mut epoch_losses = Vec::new();
    let mut valid_losses = Vec::new();
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            for &i in batch {
                let mut drop = (cfg.dropout > 0.0).then_some(Dropout {
                    p: cfg.dropout,
                    rng: &mut rng,
                });
                let loss = filter_sample(filter, &train_enc[i], &train_pairs[i].target, weights, &mut drop, true)?;
                if !loss.is_finite() {
                    return Err(PipelineError::Diverged {
                        phase: "filter training",
                        epoch,
                        batch: b,
                        loss,
                    });
                }
                sum += loss;
            }
            filter.scale_grads(1.0 / batch.len() as f64);
            adam.step(filter);
        }
        epoch_losses.push(sum / members.len() as f64);
        if !valid_members.is_empty() {
            let mut v = 0.0;
            for &i in valid_members {
                v += filter_sample(filter, &valid_enc[i], &valid_pairs[i].target, weights, &mut None, false)?;
            }
            valid_losses.push(v / valid_members.len() as f64);
            if should_stop(&valid_losses, cfg.patience) {
                break;
            }
        }
    }
    Ok(epoch_losses)
}

fn filter_sample(
    filter: &mut Decoder,
    enc: &CachedEncoding,
    target: &[usize],
    weights: &[f64],
    drop: &mut Option<Dropout<'_>>,
    learn: bool,
) -> Result<f64> {
    let mut tape = Tape::new();
    let (out, r_e) = enc.materialize(&mut tape)?;
    let bound = filter.bind(&mut tape);
    let logits = bound.teacher_forced(&mut tape, &out, r_e, target, drop)?;
    let loss = sequence_loss(&mut tape, logits, target, weights)?;
    let value = tape.scalar(loss);
    if learn && value.is_finite() {
        let grads = tape.backward(loss)?;
        accumulate_grads(filter, &bound.vars(), &grads);
    }
    Ok(value)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub token_accuracy: f64,
    pub exact_match: f64,
    pub bleu4: f64,
    /// Silhouette of the evaluation latents under routing; -1 for a single
    /// non-empty cluster.
    pub silhouette: f64,
    pub pairs: usize,
    pub cluster_counts: Vec<usize>,
}

impl EvalReport {
    pub fn format(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "token_accuracy: {}", self.token_accuracy);
        let _ = writeln!(out, "exact_match: {}", self.exact_match);
        let _ = writeln!(out, "bleu4: {}", self.bleu4);
        let _ = writeln!(out, "silhouette: {}", self.silhouette);
        let _ = writeln!(out, "pairs: {}", self.pairs);
        for (i, c) in self.cluster_counts.iter().enumerate() {
            let _ = writeln!(out, "cluster_{i}: {c}");
        }
        out
    }

    pub fn parse(text: &str) -> Option<Self> {
        let mut r = EvalReport {
            token_accuracy: f64::NAN,
            exact_match: f64::NAN,
            bleu4: f64::NAN,
            silhouette: f64::NAN,
            pairs: usize::MAX,
            cluster_counts: Vec::new(),
        };
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once(": ")?;
            match k {
                "token_accuracy" => r.token_accuracy = v.parse().ok()?,
                "exact_match" => r.exact_match = v.parse().ok()?,
                "bleu4" => r.bleu4 = v.parse().ok()?,
                "silhouette" => r.silhouette = v.parse().ok()?,
                "pairs" => r.pairs = v.parse().ok()?,
                _ => {
                    let i: usize = k.strip_prefix("cluster_")?.parse().ok()?;
                    if i != r.cluster_counts.len() {
                        return None;
                    }
                    r.cluster_counts.push(v.parse().ok()?);
                }
            }
        }
        let complete = [r.token_accuracy, r.exact_match, r.bleu4, r.silhouette]
            .iter()
            .all(|v| !v.is_nan())
            && r.pairs != usize::MAX;
        complete.then_some(r)
    }
}

/// Per-pair evaluation outputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub cluster: usize,
    /// Greedy output, EOS excluded.
    pub output: Vec<usize>,
    /// Teacher-forced argmax at each reference position (target + EOS).
    pub forced: Vec<usize>,
}

/// Routes each pair and decodes it with its cluster's filter.
pub fn decode_corpus(params: &ModelParams, corpus: &Corpus, max_len: usize) -> Result<Vec<Decoded>> {
    if params.filters.is_empty() {
        return Err(PipelineError::Order(
            "no trained filters; run `train-filters` first".into(),
        ));
    }
    let enc = encode_corpus(params, corpus)?;
    let routed = route_encodings(params, &enc)?;
    let labels = routed.labels();
    let mut out = Vec::with_capacity(corpus.len());
    for ((pair, e), &c) in corpus.pairs.iter().zip(&enc).zip(&labels) {
        let mut tape = Tape::new();
        let (o, r_e) = e.materialize(&mut tape)?;
        let bound = params.filters[c].bind(&mut tape);
        let logits = bound.teacher_forced(&mut tape, &o, r_e, &pair.target, &mut None)?;
        let forced = tape.value(logits).chunks(params.dims.vocab).map(argmax).collect();
        let output = bound.greedy(&mut tape, &o, r_e, max_len)?;
        out.push(Decoded {
            cluster: c,
            output,
            forced,
        });
    }
    Ok(out)
}

pub fn evaluate_model(
    params: &ModelParams,
    corpus: &Corpus,
    max_len: usize,
    silhouette_cap: usize,
    seed: u64,
) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(PipelineError::Contract("evaluation split is empty".into()));
    }
    let decoded = decode_corpus(params, corpus, max_len)?;
    let refs: Vec<Vec<usize>> = corpus.pairs.iter().map(|p| p.target.clone()).collect();
    let refs_eos: Vec<Vec<usize>> = refs.iter().map(|r| with_eos(r)).collect();
    let outputs: Vec<Vec<usize>> = decoded.iter().map(|d| d.output.clone()).collect();
    let forced: Vec<Vec<usize>> = decoded.iter().map(|d| d.forced.clone()).collect();
    let labels: Vec<usize> = decoded.iter().map(|d| d.cluster).collect();
    let n = params.classifier.clusters();
    let counts = crate::cluster::cluster_sizes(&labels, n);
    let silhouette = routed_silhouette(params, corpus, &labels, silhouette_cap, seed)?;
    Ok(EvalReport {
        token_accuracy: token_accuracy(&forced, &refs_eos),
        exact_match: exact_match(&outputs, &refs),
        bleu4: corpus_bleu(&outputs, &refs),
        silhouette,
        pairs: corpus.len(),
        cluster_counts: counts,
    })
}

fn routed_silhouette(params: &ModelParams, corpus: &Corpus, labels: &[usize], cap: usize, seed: u64) -> Result<f64> {
    let idx = subsample_indices(corpus.len(), cap, derive_seed(seed, streams::SUBSAMPLE));
    let rows: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| params.latent_point(&corpus.pairs[i].source))
        .collect::<std::result::Result<_, _>>()?;
    let sub_labels: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let batch = LatentBatch::new(Tensor::from_rows(&rows)?, sub_labels, params.classifier.clusters())?;
    match silhouette_score(&batch) {
        Ok(r) => Ok(r.mean),
        Err(ClusterError::SingleCluster | ClusterError::TooFewPoints { .. }) => Ok(SINGLE_CLUSTER_SCORE),
        Err(e) => Err(e.into()),
    }
}

/// One row per (subsampled) point: projection, cluster, per-point score.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterReport {
    pub rows: Vec<ClusterRow>,
    /// Mean Silhouette, -1 for a single non-empty cluster.
    pub silhouette: f64,
    pub sizes: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusterRow {
    pub index: usize,
    pub pc1: f64,
    pub pc2: f64,
    pub cluster: usize,
    pub silhouette: f64,
}

pub fn cluster_report(params: &ModelParams, corpus: &Corpus, cap: usize, seed: u64) -> Result<ClusterReport> {
    require_frozen(params, "cluster-report")?;
    let idx = subsample_indices(corpus.len(), cap, derive_seed(seed, streams::SUBSAMPLE));
    let pairs: Vec<Pair> = idx.iter().map(|&i| corpus.pairs[i].clone()).collect();
    let enc: Vec<CachedEncoding> = pairs
        .iter()
        .map(|p| encode_frozen(params, &p.source))
        .collect::<Result<_>>()?;
    let points = latent_matrix(&enc)?;
    let labels = route_encodings(params, &enc)?.labels();
    let n = params.classifier.clusters();
    let batch = LatentBatch::new(points.clone(), labels.clone(), n)?;
    let (per_point, mean) = match silhouette_score(&batch) {
        Ok(r) => (r.per_point, r.mean),
        Err(ClusterError::SingleCluster | ClusterError::TooFewPoints { .. }) => {
            (vec![0.0; labels.len()], SINGLE_CLUSTER_SCORE)
        }
        Err(e) => return Err(e.into()),
    };
    let proj = pca_project_2d(&points)?;
    let rows = idx
        .iter()
        .enumerate()
        .map(|(k, &i)| ClusterRow {
            index: i,
            pc1: proj.coords.at(k, 0),
            pc2: proj.coords.at(k, 1),
            cluster: labels[k],
            silhouette: per_point[k],
        })
        .collect();
    Ok(ClusterReport {
        rows,
        silhouette: mean,
        sizes: batch.sizes(),
    })
}

impl ClusterReport {
    pub fn format(&self) -> String {
        let mut out = String::from("index\tpc1\tpc2\tcluster\tsilhouette\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.index, r.pc1, r.pc2, r.cluster, r.silhouette
            );
        }
        out
    }
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    fs::write(path, contents).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_needs_consecutive_rises() {
        assert!(!should_stop(&[1.0, 2.0, 3.0], 3));
        assert!(should_stop(&[1.0, 2.0, 3.0, 4.0], 3));
        assert!(!should_stop(&[1.0, 2.0, 1.5, 4.0], 3));
    }

    #[test]
    fn report_round_trips() {
        let r = EvalReport {
            token_accuracy: 0.1 + 0.2,
            exact_match: 1.0 / 3.0,
            bleu4: 0.0,
            silhouette: -1.0,
            pairs: 7,
            cluster_counts: vec![3, 0, 4],
        };
        assert_eq!(EvalReport::parse(&r.format()), Some(r));
        assert_eq!(EvalReport::parse("bleu4: 1\n"), None);
    }
}
