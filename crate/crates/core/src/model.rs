//! Network components: bi-directional LSTM encoder, latent enhancer, cluster
//! classifier, and attention LSTM decoders (the dummy decoder and the
//! per-cluster filters).
//!
//! Dimensions: the encoder runs `hidden` units per direction, so its final
//! state `h` has `2 * hidden` entries. The enhancer maps `h` into a
//! `latent`-dimensional space, and every decoder uses `latent` hidden units
//! so the enhanced point can seed the decoder's initial hidden state.
//! Encoder step outputs are projected from `2 * hidden` to `latent` before
//! dot-product attention.

use crate::autodiff::{Tape, Var};
use crate::data::{EOS, PAD, SOS};
use crate::nn::{dropout, join, BoundLinear, BoundLstm, Dropout, Embedding, Linear, LstmCell, Parameterized};
use crate::rng::Rng;
use crate::tensor::{Precision, Tensor, TensorError};

type Result<T> = std::result::Result<T, TensorError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub vocab: usize,
    pub embed: usize,
    pub hidden: usize,
    pub latent: usize,
    pub clusters: usize,
}

/// Tape handles produced by [`BoundEncoder::encode`].
#[derive(Clone, Copy, Debug)]
pub struct EncoderOutput {
    /// `L x 2H`, forward and backward states concatenated per step.
    pub step_outputs: Var,
    /// `1 x 2H`
    pub final_hidden: Var,
    /// `1 x 2H`
    pub final_cell: Var,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub embedding: Embedding,
    pub forward: LstmCell,
    pub backward: LstmCell,
}

pub struct BoundEncoder {
    table: Var,
    fwd: BoundLstm,
    bwd: BoundLstm,
}

impl Encoder {
    pub fn new(vocab: usize, embed: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            embedding: Embedding::new(vocab, embed, rng),
            forward: LstmCell::new(embed, hidden, rng),
            backward: LstmCell::new(embed, hidden, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEncoder {
        BoundEncoder {
            table: tape.param(&self.embedding.table),
            fwd: self.forward.bind(tape),
            bwd: self.backward.bind(tape),
        }
    }
}

impl BoundEncoder {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.table];
        self.fwd.vars(&mut v);
        self.bwd.vars(&mut v);
        v
    }

    pub fn encode(&self, tape: &mut Tape, tokens: &[usize], drop: &mut Option<Dropout<'_>>) -> Result<EncoderOutput> {
        if tokens.is_empty() {
            return Err(TensorError::Contract("cannot encode an empty sequence".into()));
        }
        let hd = self.fwd.hidden;
        let len = tokens.len();
        let x = tape.gather_rows(self.table, tokens)?;
        let x = dropout(tape, x, drop)?;
        let rows: Vec<Var> = (0..len).map(|t| tape.slice_rows(x, t, 1)).collect::<Result<_>>()?;
        let zero = tape.constant(1, hd, vec![0.0; hd])?;

        let (mut h, mut c) = (zero, zero);
        let mut fwd_out = Vec::with_capacity(len);
        for &xt in &rows {
            (h, c) = self.fwd.step(tape, xt, h, c)?;
            fwd_out.push(h);
        }
        let (fh, fc) = (h, c);

        let (mut h, mut c) = (zero, zero);
        let mut bwd_out = vec![zero; len];
        for t in (0..len).rev() {
            (h, c) = self.bwd.step(tape, rows[t], h, c)?;
            bwd_out[t] = h;
        }
        let (bh, bc) = (h, c);

        let f = tape.concat_rows(&fwd_out)?;
        let b = tape.concat_rows(&bwd_out)?;
        let steps = tape.concat_cols(&[f, b])?;
        let steps = dropout(tape, steps, drop)?;
        let final_hidden = tape.concat_cols(&[fh, bh])?;
        let final_hidden = dropout(tape, final_hidden, drop)?;
        let final_cell = tape.concat_cols(&[fc, bc])?;
        Ok(EncoderOutput {
            step_outputs: steps,
            final_hidden,
            final_cell,
            len,
        })
    }
}

impl Parameterized for Encoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.embedding.visit(&join(prefix, "embedding"), f);
        self.forward.visit(&join(prefix, "fwd"), f);
        self.backward.visit(&join(prefix, "bwd"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.embedding.visit_mut(f);
        self.forward.visit_mut(f);
        self.backward.visit_mut(f);
    }
}

/// Two-layer perceptron `2H -> latent (tanh) -> latent`.
#[derive(Clone, Debug, PartialEq)]
pub struct Enhancer {
    pub l1: Linear,
    pub l2: Linear,
}

pub struct BoundEnhancer {
    l1: BoundLinear,
    l2: BoundLinear,
}

impl Enhancer {
    pub fn new(input: usize, latent: usize, rng: &mut Rng) -> Self {
        Self {
            l1: Linear::new(input, latent, rng),
            l2: Linear::new(latent, latent, rng),
        }
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundEnhancer {
        BoundEnhancer {
            l1: self.l1.bind(tape),
            l2: self.l2.bind(tape),
        }
    }
}

impl BoundEnhancer {
    /// Maps final hidden states (one per row) to latent points.
    pub fn enhance(&self, tape: &mut Tape, h: Var) -> Result<Var> {
        let z = self.l1.forward(tape, h)?;
        let z = tape.tanh(z);
        self.l2.forward(tape, z)
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        self.l1.vars(&mut v);
        self.l2.vars(&mut v);
        v
    }
}

impl Parameterized for Enhancer {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.l1.visit_mut(f);
        self.l2.visit_mut(f);
    }
}

/// `latent -> latent (ReLU) -> n -> softmax`.
///
/// Never trained by gradient; only rescaled by the latent-enhancing agent.
/// Biases start at `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` rather than zero:
/// with zero biases a positive rescaling of rows cannot move any decision
/// boundary, leaving the agent nothing to act on.
#[derive(Clone, Debug, PartialEq)]
pub struct Classifier {
    pub l1: Linear,
    pub l2: Linear,
}

impl Classifier {
    pub fn new(latent: usize, clusters: usize, rng: &mut Rng) -> Result<Self> {
        if clusters < 1 {
            return Err(TensorError::Contract("cluster count must be at least 1".into()));
        }
        let mut l1 = Linear::new(latent, latent, rng);
        let mut l2 = Linear::new(latent, clusters, rng);
        let bound = 1.0 / (latent as f64).sqrt();
        l1.bias = Tensor::uniform(&[latent], bound, rng);
        l2.bias = Tensor::uniform(&[clusters], bound, rng);
        let mut c = Self { l1, l2 };
        c.set_frozen(true);
        Ok(c)
    }

    pub fn clusters(&self) -> usize {
        self.l2.outputs()
    }

    pub fn latent(&self) -> usize {
        self.l1.inputs()
    }

    /// Cluster probabilities for each row of `points` (`M x latent`).
    pub fn probs(&self, tape: &mut Tape, points: Var) -> Result<Var> {
        self.bind(tape).probs(tape, points)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundClassifier {
        BoundClassifier {
            l1: self.l1.bind(tape),
            l2: self.l2.bind(tape),
        }
    }

    /// Probability rows for a plain `M x latent` tensor.
    pub fn classify_rows(&self, points: &Tensor) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new();
        let (m, d) = points.matrix_dims();
        let x = tape.constant(m, d, points.data().to_vec())?;
        let p = self.probs(&mut tape, x)?;
        let n = self.clusters();
        Ok(tape.value(p).chunks(n).map(<[f64]>::to_vec).collect())
    }

    /// The scalable units: one per neuron (hidden rows then output rows).
    /// Each unit owns a weight column and its bias entry.
    pub fn unit_count(&self) -> usize {
        self.l1.outputs() + self.l2.outputs()
    }

    /// Multiplies every parameter of unit `u` by `scale[u]`.
    pub fn scale_units(&mut self, scale: &[f64]) {
        assert_eq!(scale.len(), self.unit_count());
        let (first, second) = scale.split_at(self.l1.outputs());
        scale_layer(&mut self.l1, first);
        scale_layer(&mut self.l2, second);
    }

    /// Mean and standard deviation of each unit's parameters.
    pub fn unit_stats(&self) -> Vec<(f64, f64)> {
        let mut out = layer_stats(&self.l1);
        out.extend(layer_stats(&self.l2));
        out
    }
}

fn scale_layer(layer: &mut Linear, scale: &[f64]) {
    let outs = layer.outputs();
    for (j, w) in layer.weight.data_mut().iter_mut().enumerate() {
        *w *= scale[j % outs];
    }
    for (b, &s) in layer.bias.data_mut().iter_mut().zip(scale) {
        *b *= s;
    }
}

fn layer_stats(layer: &Linear) -> Vec<(f64, f64)> {
    let (ins, outs) = (layer.inputs(), layer.outputs());
    let w = layer.weight.data();
    (0..outs)
        .map(|u| {
            let vals: Vec<f64> = (0..ins)
                .map(|i| w[i * outs + u])
                .chain([layer.bias.data()[u]])
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

pub struct BoundClassifier {
    l1: BoundLinear,
    l2: BoundLinear,
}

impl BoundClassifier {
    pub fn probs(&self, tape: &mut Tape, points: Var) -> Result<Var> {
        let z = self.l1.forward(tape, points)?;
        let z = tape.relu(z);
        let z = self.l2.forward(tape, z)?;
        Ok(tape.softmax(z))
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut v = Vec::new();
        self.l1.vars(&mut v);
        self.l2.vars(&mut v);
        v
    }
}

impl Parameterized for Classifier {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.l1.visit(&join(prefix, "l1"), f);
        self.l2.visit(&join(prefix, "l2"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.l1.visit_mut(f);
        self.l2.visit_mut(f);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderState {
    pub hidden: Var,
    pub cell: Var,
    pub prev_token: usize,
}

/// Attention memory: encoder steps projected into the decoder space.
#[derive(Clone, Copy, Debug)]
pub struct AttnMemory {
    /// `L x latent`
    pub proj: Var,
    /// `latent x L`
    pub proj_t: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Decoder {
    pub embedding: Embedding,
    pub lstm: LstmCell,
    pub attn: Linear,
    pub out: Linear,
}

pub struct BoundDecoder {
    table: Var,
    lstm: BoundLstm,
    attn: BoundLinear,
    out: BoundLinear,
}

impl Decoder {
    pub fn new(vocab: usize, embed: usize, enc_width: usize, latent: usize, rng: &mut Rng) -> Self {
        Self {
            embedding: Embedding::new(vocab, embed, rng),
            lstm: LstmCell::new(embed, latent, rng),
            attn: Linear::new(enc_width, latent, rng),
            out: Linear::new(2 * latent, vocab, rng),
        }
    }

    pub fn vocab(&self) -> usize {
        self.out.outputs()
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundDecoder {
        BoundDecoder {
            table: tape.param(&self.embedding.table),
            lstm: self.lstm.bind(tape),
            attn: self.attn.bind(tape),
            out: self.out.bind(tape),
        }
    }
}

impl BoundDecoder {
    pub fn vars(&self) -> Vec<Var> {
        let mut v = vec![self.table];
        self.lstm.vars(&mut v);
        self.attn.vars(&mut v);
        self.out.vars(&mut v);
        v
    }

    pub fn memory(&self, tape: &mut Tape, enc: &EncoderOutput) -> Result<AttnMemory> {
        let proj = self.attn.forward(tape, enc.step_outputs)?;
        let proj_t = tape.transpose(proj);
        Ok(AttnMemory { proj, proj_t })
    }

    /// Dot-product attention of a `1 x latent` query over the memory.
    /// Returns `(context, weights)`.
    pub fn attend(&self, tape: &mut Tape, query: Var, mem: &AttnMemory) -> Result<(Var, Var)> {
        let scores = tape.matmul(query, mem.proj_t)?;
        let weights = tape.softmax(scores);
        let context = tape.matmul(weights, mem.proj)?;
        Ok((context, weights))
    }

    /// Initial state: `r_e` as hidden, zero cell, start-of-sequence input.
    pub fn initial_state(&self, tape: &mut Tape, r_e: Var) -> Result<DecoderState> {
        let (_, d) = tape.dims(r_e);
        let cell = tape.constant(1, d, vec![0.0; d])?;
        Ok(DecoderState {
            hidden: r_e,
            cell,
            prev_token: SOS,
        })
    }

    /// One decoding step; returns vocabulary logits and the next state.
    pub fn step(
        &self,
        tape: &mut Tape,
        mem: &AttnMemory,
        state: DecoderState,
        drop: &mut Option<Dropout<'_>>,
    ) -> Result<(Var, DecoderState)> {
        let x = tape.gather_rows(self.table, &[state.prev_token])?;
        let x = dropout(tape, x, drop)?;
        let (h, c) = self.lstm.step(tape, x, state.hidden, state.cell)?;
        let h_out = dropout(tape, h, drop)?;
        let (context, _) = self.attend(tape, h_out, mem)?;
        let feat = tape.concat_cols(&[h_out, context])?;
        let logits = self.out.forward(tape, feat)?;
        Ok((
            logits,
            DecoderState {
                hidden: h,
                cell: c,
                prev_token: state.prev_token,
            },
        ))
    }

    /// Teacher-forced logits for `target` followed by EOS: `(T+1) x V`.
    pub fn teacher_forced(
        &self,
        tape: &mut Tape,
        enc: &EncoderOutput,
        r_e: Var,
        target: &[usize],
        drop: &mut Option<Dropout<'_>>,
    ) -> Result<Var> {
        let mem = self.memory(tape, enc)?;
        let mut state = self.initial_state(tape, r_e)?;
        let mut rows = Vec::with_capacity(target.len() + 1);
        for t in 0..=target.len() {
            let (logits, next) = self.step(tape, &mem, state, drop)?;
            rows.push(logits);
            state = next;
            if t < target.len() {
                state.prev_token = target[t];
            }
        }
        tape.concat_rows(&rows)
    }

    /// Argmax decoding until EOS or `max_len` tokens; PAD and SOS are never emitted.
    pub fn greedy(&self, tape: &mut Tape, enc: &EncoderOutput, r_e: Var, max_len: usize) -> Result<Vec<usize>> {
        let mem = self.memory(tape, enc)?;
        let mut state = self.initial_state(tape, r_e)?;
        let mut out = Vec::new();
        while out.len() < max_len {
            let (logits, next) = self.step(tape, &mem, state, &mut None)?;
            let token = argmax_excluding(tape.value(logits), &[PAD, SOS]);
            if token == EOS {
                break;
            }
            out.push(token);
            state = next;
            state.prev_token = token;
        }
        Ok(out)
    }
}

/// Index of the largest entry, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    argmax_excluding(values, &[])
}

fn argmax_excluding(values: &[f64], skip: &[usize]) -> usize {
    let mut best = usize::MAX;
    for (i, &v) in values.iter().enumerate() {
        if skip.contains(&i) {
            continue;
        }
        if best == usize::MAX || v > values[best] {
            best = i;
        }
    }
    best
}

impl Parameterized for Decoder {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.embedding.visit(&join(prefix, "embedding"), f);
        self.lstm.visit(&join(prefix, "lstm"), f);
        self.attn.visit(&join(prefix, "attn"), f);
        self.out.visit(&join(prefix, "out"), f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.embedding.visit_mut(f);
        self.lstm.visit_mut(f);
        self.attn.visit_mut(f);
        self.out.visit_mut(f);
    }
}

/// All parameter groups of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub precision: Precision,
    pub encoder: Encoder,
    pub enhancer: Enhancer,
    pub classifier: Classifier,
    /// Dummy decoder; present only until phase 1 finishes.
    pub dummy: Option<Decoder>,
    pub filters: Vec<Decoder>,
}

impl ModelParams {
    /// Fresh encoder, enhancer and dummy decoder from `encoder_seed`; the
    /// classifier from `classifier_seed`. No filters yet.
    pub fn init(dims: ModelDims, precision: Precision, encoder_seed: u64, classifier_seed: u64) -> Result<Self> {
        let mut rng = Rng::new(encoder_seed);
        let encoder = Encoder::new(dims.vocab, dims.embed, dims.hidden, &mut rng);
        let enhancer = Enhancer::new(2 * dims.hidden, dims.latent, &mut rng);
        let dummy = Decoder::new(dims.vocab, dims.embed, 2 * dims.hidden, dims.latent, &mut rng);
        let classifier = Classifier::new(dims.latent, dims.clusters, &mut Rng::new(classifier_seed))?;
        let mut p = Self {
            dims,
            precision,
            encoder,
            enhancer,
            classifier,
            dummy: Some(dummy),
            filters: Vec::new(),
        };
        p.round_to(precision);
        Ok(p)
    }

    pub fn new_decoder(&self, rng: &mut Rng) -> Decoder {
        let d = self.dims;
        let mut dec = Decoder::new(d.vocab, d.embed, 2 * d.hidden, d.latent, rng);
        dec.round_to(self.precision);
        dec
    }

    /// Named parameter groups in checkpoint order.
    pub fn groups(&self) -> Vec<(String, &dyn Parameterized)> {
        let mut g: Vec<(String, &dyn Parameterized)> = vec![
            ("encoder".into(), &self.encoder),
            ("enhancer".into(), &self.enhancer),
            ("classifier".into(), &self.classifier),
        ];
        if let Some(d) = &self.dummy {
            g.push(("dummy".into(), d));
        }
        for (i, f) in self.filters.iter().enumerate() {
            g.push((format!("filter.{}", i + 1), f));
        }
        g
    }

    pub fn encoder_enhancer_frozen(&self) -> bool {
        self.encoder.is_frozen() && self.enhancer.is_frozen()
    }

    /// Digest over the encoder and enhancer bytes.
    pub fn frozen_digest(&self) -> u64 {
        self.encoder.digest() ^ self.enhancer.digest().rotate_left(1)
    }

    /// Encodes and enhances one source sequence without gradients.
    pub fn latent_point(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let enc = self.encoder.bind(&mut tape).encode(&mut tape, tokens, &mut None)?;
        let r = self.enhancer.bind(&mut tape).enhance(&mut tape, enc.final_hidden)?;
        Ok(tape.value(r).to_vec())
    }
}

impl Parameterized for ModelParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.enhancer.visit(&join(prefix, "enhancer"), f);
        self.classifier.visit(&join(prefix, "classifier"), f);
        if let Some(d) = &self.dummy {
            d.visit(&join(prefix, "dummy"), f);
        }
        for (i, d) in self.filters.iter().enumerate() {
            d.visit(&join(prefix, &format!("filter.{}", i + 1)), f);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Tensor)) {
        self.encoder.visit_mut(f);
        self.enhancer.visit_mut(f);
        self.classifier.visit_mut(f);
        if let Some(d) = &mut self.dummy {
            d.visit_mut(f);
        }
        self.filters.iter_mut().for_each(|d| d.visit_mut(f));
    }
}
