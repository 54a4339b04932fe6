//! The recurrent autoencoder: a linear input layer, a GRU encoder that emits
//! the per-step message context vector (MCV), a decoder, and (depending on
//! the variant) a linear output layer. Forward, full backpropagation through
//! time, Adam and the training loop are implemented here in plain `f64`.
//!
//! Layer stack per variant, with tanh after every linear and GRU layer:
//!
//! * `Full`          — linear(f→h) · GRU(h→h) · GRU(h→h) · linear(h→f)
//! * `GruDecoder`    — linear(f→h) · GRU(h→h) · GRU(h→f); no output linear
//! * `LinearDecoder` — linear(f→h) · GRU(h→h) · linear(h→h) · linear(h→f)
//!
//! The encoder hidden state at each step is the MCV sequence; the decoder
//! consumes it step-aligned, so reconstruction is per time step.

mod adam;
mod gru;
mod io;
mod train;

pub use adam::{adam_step, AdamState};
pub use gru::{gru_cell_backward, gru_cell_forward, gru_cell_forward_cached, GruGrads, GruParams, GruStepCache};
pub use io::{load_model, save_model};
pub use train::{train, validate, TrainConfig, TrainReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ScalingParams, Subsequence};
use crate::detector::IntrusionThreshold;
use crate::math::{add_acc, matvec, matvec_t_acc, outer_acc, Mat};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {context}")]
    DimensionMismatch { context: String },
    #[error("non-finite gradient in {param}")]
    NonFiniteGradient { param: String },
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("activation cache is stale: model parameters changed since the forward pass")]
    StaleCache,
    #[error("model is not trained (pass force=true to save anyway)")]
    NotTrained,
    #[error("empty input: {context}")]
    EmptyInput { context: String },
    #[error("model file: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Which decoder the autoencoder uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    /// GRU decoder followed by a linear output layer.
    Full,
    /// GRU decoder mapping straight to feature space; no output linear.
    GruDecoder,
    /// Two linear layers instead of the recurrent decoder.
    LinearDecoder,
}

impl ModelVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelVariant::Full => "full",
            ModelVariant::GruDecoder => "gru-decoder",
            ModelVariant::LinearDecoder => "linear-decoder",
        }
    }

    pub fn parse(s: &str) -> Option<ModelVariant> {
        match s {
            "full" => Some(ModelVariant::Full),
            "gru-decoder" => Some(ModelVariant::GruDecoder),
            "linear-decoder" => Some(ModelVariant::LinearDecoder),
            _ => None,
        }
    }
}

/// Weight matrix plus bias of a dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearParams {
    pub weight: Mat,
    pub bias: Vec<f64>,
}

impl LinearParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearParams {
            weight: Mat::zeros(out_dim, in_dim),
            bias: vec![0.0; out_dim],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

/// The variant-dependent layer set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layers {
    pub input_linear: LinearParams,
    pub encoder: GruParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decoder_gru: Option<GruParams>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub decoder_linear: Vec<LinearParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_linear: Option<LinearParams>,
}

/// A per-message-id autoencoder with everything needed at inference time:
/// layer parameters, the scaler fitted on its training data and, once
/// calibrated, the intrusion threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub variant: ModelVariant,
    pub feature_count: usize,
    pub hidden_dim: usize,
    pub seed: u64,
    pub layers: Layers,
    pub scaler: Option<ScalingParams>,
    pub threshold: Option<IntrusionThreshold>,
    pub trained: bool,
    /// Bumped on every parameter mutation; guards cached activations.
    version: u64,
}

fn init_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let bound = 1.0 / (cols as f64).sqrt();
    let mut m = Mat::zeros(rows, cols);
    for v in m.data.iter_mut() {
        *v = rng.gen_range(-bound..bound);
    }
    m
}

fn init_linear(rng: &mut ChaCha8Rng, out_dim: usize, in_dim: usize) -> LinearParams {
    LinearParams {
        weight: init_mat(rng, out_dim, in_dim),
        bias: vec![0.0; out_dim],
    }
}

fn init_gru(rng: &mut ChaCha8Rng, input_dim: usize, hidden_dim: usize) -> GruParams {
    GruParams {
        w_update: init_mat(rng, hidden_dim, input_dim),
        u_update: init_mat(rng, hidden_dim, hidden_dim),
        b_update: vec![0.0; hidden_dim],
        w_reset: init_mat(rng, hidden_dim, input_dim),
        u_reset: init_mat(rng, hidden_dim, hidden_dim),
        b_reset: vec![0.0; hidden_dim],
        w_cand: init_mat(rng, hidden_dim, input_dim),
        u_cand: init_mat(rng, hidden_dim, hidden_dim),
        b_cand: vec![0.0; hidden_dim],
    }
}

/// Fresh model with weights drawn uniformly from ±1/√fan_in and zero
/// biases; deterministic for a fixed seed.
pub fn init_model(
    variant: ModelVariant,
    feature_count: usize,
    hidden_dim: usize,
    seed: u64,
) -> Result<AutoencoderModel, ModelError> {
    if feature_count < 1 || hidden_dim < 1 {
        return Err(ModelError::DimensionMismatch {
            context: format!("feature_count {feature_count} and hidden_dim {hidden_dim} must be ≥ 1"),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_linear = init_linear(&mut rng, hidden_dim, feature_count);
    let encoder = init_gru(&mut rng, hidden_dim, hidden_dim);
    let layers = match variant {
        ModelVariant::Full => Layers {
            input_linear,
            encoder,
            decoder_gru: Some(init_gru(&mut rng, hidden_dim, hidden_dim)),
            decoder_linear: Vec::new(),
            output_linear: Some(init_linear(&mut rng, feature_count, hidden_dim)),
        },
        ModelVariant::GruDecoder => Layers {
            input_linear,
            encoder,
            decoder_gru: Some(init_gru(&mut rng, hidden_dim, feature_count)),
            decoder_linear: Vec::new(),
            output_linear: None,
        },
        ModelVariant::LinearDecoder => Layers {
            input_linear,
            encoder,
            decoder_gru: None,
            decoder_linear: vec![
                init_linear(&mut rng, hidden_dim, hidden_dim),
                init_linear(&mut rng, feature_count, hidden_dim),
            ],
            output_linear: None,
        },
    };
    Ok(AutoencoderModel {
        variant,
        feature_count,
        hidden_dim,
        seed,
        layers,
        scaler: None,
        threshold: None,
        trained: false,
        version: 0,
    })
}

/// Activations of one forward pass, consumed by [`AutoencoderModel::backward`].
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    k: usize,
    /// Post-tanh input embeddings.
    emb: Vec<Vec<f64>>,
    enc: Vec<GruStepCache>,
    /// tanh of the encoder hidden state: the MCV sequence.
    mcv: Vec<Vec<f64>>,
    dec: Vec<GruStepCache>,
    /// tanh of the decoder GRU state (Full only).
    dec_out: Vec<Vec<f64>>,
    /// Hidden activations of the first decoder linear (LinearDecoder only).
    ld_hidden: Vec<Vec<f64>>,
    /// Final reconstruction rows (post-tanh).
    recon: Vec<Vec<f64>>,
}

/// Parameter gradients in the same shape as [`Layers`].
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub input_linear_w: Mat,
    pub input_linear_b: Vec<f64>,
    pub encoder: GruGrads,
    pub decoder_gru: Option<GruGrads>,
    pub decoder_linear: Vec<(Mat, Vec<f64>)>,
    pub output_linear: Option<(Mat, Vec<f64>)>,
}

impl ModelGrads {
    pub fn zeros_like(model: &AutoencoderModel) -> Self {
        let l = &model.layers;
        ModelGrads {
            input_linear_w: Mat::zeros(l.input_linear.weight.rows, l.input_linear.weight.cols),
            input_linear_b: vec![0.0; l.input_linear.bias.len()],
            encoder: GruGrads::zeros_like(&l.encoder),
            decoder_gru: l.decoder_gru.as_ref().map(GruGrads::zeros_like),
            decoder_linear: l
                .decoder_linear
                .iter()
                .map(|lin| (Mat::zeros(lin.weight.rows, lin.weight.cols), vec![0.0; lin.bias.len()]))
                .collect(),
            output_linear: l
                .output_linear
                .as_ref()
                .map(|lin| (Mat::zeros(lin.weight.rows, lin.weight.cols), vec![0.0; lin.bias.len()])),
        }
    }

    /// Flatten in the model's canonical parameter order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(&self.input_linear_w.data);
        out.extend_from_slice(&self.input_linear_b);
        append_gru_grads(&mut out, &self.encoder);
        if let Some(g) = &self.decoder_gru {
            append_gru_grads(&mut out, g);
        }
        for (w, b) in &self.decoder_linear {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        if let Some((w, b)) = &self.output_linear {
            out.extend_from_slice(&w.data);
            out.extend_from_slice(b);
        }
        out
    }

    /// Elementwise accumulate another gradient set, then optionally scale.
    pub fn accumulate(&mut self, other: &ModelGrads) {
        fn acc_mat(a: &mut Mat, b: &Mat) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
        fn acc_vec(a: &mut [f64], b: &[f64]) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        fn acc_gru(a: &mut GruGrads, b: &GruGrads) {
            acc_mat(&mut a.w_update, &b.w_update);
            acc_mat(&mut a.u_update, &b.u_update);
            acc_vec(&mut a.b_update, &b.b_update);
            acc_mat(&mut a.w_reset, &b.w_reset);
            acc_mat(&mut a.u_reset, &b.u_reset);
            acc_vec(&mut a.b_reset, &b.b_reset);
            acc_mat(&mut a.w_cand, &b.w_cand);
            acc_mat(&mut a.u_cand, &b.u_cand);
            acc_vec(&mut a.b_cand, &b.b_cand);
        }
        acc_mat(&mut self.input_linear_w, &other.input_linear_w);
        acc_vec(&mut self.input_linear_b, &other.input_linear_b);
        acc_gru(&mut self.encoder, &other.encoder);
        if let (Some(a), Some(b)) = (self.decoder_gru.as_mut(), other.decoder_gru.as_ref()) {
            acc_gru(a, b);
        }
        for ((aw, ab), (bw, bb)) in self.decoder_linear.iter_mut().zip(&other.decoder_linear) {
            acc_mat(aw, bw);
            acc_vec(ab, bb);
        }
        if let (Some((aw, ab)), Some((bw, bb))) =
            (self.output_linear.as_mut(), other.output_linear.as_ref())
        {
            acc_mat(aw, bw);
            acc_vec(ab, bb);
        }
    }

    pub fn scale(&mut self, factor: f64) {
        fn sc_mat(a: &mut Mat, f: f64) {
            for x in a.data.iter_mut() {
                *x *= f;
            }
        }
        fn sc_vec(a: &mut [f64], f: f64) {
            for x in a.iter_mut() {
                *x *= f;
            }
        }
        fn sc_gru(a: &mut GruGrads, f: f64) {
            sc_mat(&mut a.w_update, f);
            sc_mat(&mut a.u_update, f);
            sc_vec(&mut a.b_update, f);
            sc_mat(&mut a.w_reset, f);
            sc_mat(&mut a.u_reset, f);
            sc_vec(&mut a.b_reset, f);
            sc_mat(&mut a.w_cand, f);
            sc_mat(&mut a.u_cand, f);
            sc_vec(&mut a.b_cand, f);
        }
        sc_mat(&mut self.input_linear_w, factor);
        sc_vec(&mut self.input_linear_b, factor);
        sc_gru(&mut self.encoder, factor);
        if let Some(g) = self.decoder_gru.as_mut() {
            sc_gru(g, factor);
        }
        for (w, b) in self.decoder_linear.iter_mut() {
            sc_mat(w, factor);
            sc_vec(b, factor);
        }
        if let Some((w, b)) = self.output_linear.as_mut() {
            sc_mat(w, factor);
            sc_vec(b, factor);
        }
    }
}

fn append_gru(out: &mut Vec<f64>, p: &GruParams) {
    out.extend_from_slice(&p.w_update.data);
    out.extend_from_slice(&p.u_update.data);
    out.extend_from_slice(&p.b_update);
    out.extend_from_slice(&p.w_reset.data);
    out.extend_from_slice(&p.u_reset.data);
    out.extend_from_slice(&p.b_reset);
    out.extend_from_slice(&p.w_cand.data);
    out.extend_from_slice(&p.u_cand.data);
    out.extend_from_slice(&p.b_cand);
}

fn append_gru_grads(out: &mut Vec<f64>, g: &GruGrads) {
    out.extend_from_slice(&g.w_update.data);
    out.extend_from_slice(&g.u_update.data);
    out.extend_from_slice(&g.b_update);
    out.extend_from_slice(&g.w_reset.data);
    out.extend_from_slice(&g.u_reset.data);
    out.extend_from_slice(&g.b_reset);
    out.extend_from_slice(&g.w_cand.data);
    out.extend_from_slice(&g.u_cand.data);
    out.extend_from_slice(&g.b_cand);
}

fn read_slice(src: &[f64], pos: &mut usize, len: usize) -> Vec<f64> {
    let out = src[*pos..*pos + len].to_vec();
    *pos += len;
    out
}

fn read_gru(src: &[f64], pos: &mut usize, p: &mut GruParams) {
    p.w_update.data = read_slice(src, pos, p.w_update.len());
    p.u_update.data = read_slice(src, pos, p.u_update.len());
    p.b_update = read_slice(src, pos, p.b_update.len());
    p.w_reset.data = read_slice(src, pos, p.w_reset.len());
    p.u_reset.data = read_slice(src, pos, p.u_reset.len());
    p.b_reset = read_slice(src, pos, p.b_reset.len());
    p.w_cand.data = read_slice(src, pos, p.w_cand.len());
    p.u_cand.data = read_slice(src, pos, p.u_cand.len());
    p.b_cand = read_slice(src, pos, p.b_cand.len());
}

impl AutoencoderModel {
    pub fn version(&self) -> u64 {
        self.version
    }

    fn bump_version(&mut self) {
        self.version = self.version.wrapping_add(1);
    }

    pub fn set_scaler(&mut self, scaler: ScalingParams) {
        self.scaler = Some(scaler);
    }

    pub fn set_threshold(&mut self, threshold: IntrusionThreshold) {
        self.threshold = Some(threshold);
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn param_count(&self) -> usize {
        let l = &self.layers;
        let mut n = l.input_linear.param_count() + l.encoder.param_count();
        if let Some(g) = &l.decoder_gru {
            n += g.param_count();
        }
        for lin in &l.decoder_linear {
            n += lin.param_count();
        }
        if let Some(lin) = &l.output_linear {
            n += lin.param_count();
        }
        n
    }

    /// All parameters flattened in canonical order (input linear, encoder,
    /// decoder, output), each matrix row-major.
    pub fn param_vector(&self) -> Vec<f64> {
        let l = &self.layers;
        let mut out = Vec::with_capacity(self.param_count());
        out.extend_from_slice(&l.input_linear.weight.data);
        out.extend_from_slice(&l.input_linear.bias);
        append_gru(&mut out, &l.encoder);
        if let Some(g) = &l.decoder_gru {
            append_gru(&mut out, g);
        }
        for lin in &l.decoder_linear {
            out.extend_from_slice(&lin.weight.data);
            out.extend_from_slice(&lin.bias);
        }
        if let Some(lin) = &l.output_linear {
            out.extend_from_slice(&lin.weight.data);
            out.extend_from_slice(&lin.bias);
        }
        out
    }

    /// Overwrite all parameters from a flat vector in canonical order.
    pub fn set_param_vector(&mut self, params: &[f64]) -> Result<(), ModelError> {
        if params.len() != self.param_count() {
            return Err(ModelError::DimensionMismatch {
                context: format!(
                    "parameter vector has {} entries, model needs {}",
                    params.len(),
                    self.param_count()
                ),
            });
        }
        let mut pos = 0;
        let l = &mut self.layers;
        l.input_linear.weight.data = read_slice(params, &mut pos, l.input_linear.weight.len());
        l.input_linear.bias = read_slice(params, &mut pos, l.input_linear.bias.len());
        read_gru(params, &mut pos, &mut l.encoder);
        if let Some(g) = l.decoder_gru.as_mut() {
            read_gru(params, &mut pos, g);
        }
        for lin in l.decoder_linear.iter_mut() {
            lin.weight.data = read_slice(params, &mut pos, lin.weight.len());
            lin.bias = read_slice(params, &mut pos, lin.bias.len());
        }
        if let Some(lin) = l.output_linear.as_mut() {
            lin.weight.data = read_slice(params, &mut pos, lin.weight.len());
            lin.bias = read_slice(params, &mut pos, lin.bias.len());
        }
        self.bump_version();
        Ok(())
    }

    /// (name, offset, length) of every tensor in the flat layout; used to
    /// name the offending parameter in error messages.
    pub fn param_layout(&self) -> Vec<(String, usize, usize)> {
        let l = &self.layers;
        let mut out = Vec::new();
        let mut pos = 0;
        let mut push = |name: &str, len: usize, pos: &mut usize| {
            out.push((name.to_string(), *pos, len));
            *pos += len;
        };
        push("input_linear.weight", l.input_linear.weight.len(), &mut pos);
        push("input_linear.bias", l.input_linear.bias.len(), &mut pos);
        let gru_names = [
            "w_update", "u_update", "b_update", "w_reset", "u_reset", "b_reset", "w_cand",
            "u_cand", "b_cand",
        ];
        let gru_lens = |g: &GruParams| {
            [
                g.w_update.len(),
                g.u_update.len(),
                g.b_update.len(),
                g.w_reset.len(),
                g.u_reset.len(),
                g.b_reset.len(),
                g.w_cand.len(),
                g.u_cand.len(),
                g.b_cand.len(),
            ]
        };
        for (name, len) in gru_names.iter().zip(gru_lens(&l.encoder)) {
            push(&format!("encoder.{name}"), len, &mut pos);
        }
        if let Some(g) = &l.decoder_gru {
            for (name, len) in gru_names.iter().zip(gru_lens(g)) {
                push(&format!("decoder_gru.{name}"), len, &mut pos);
            }
        }
        for (i, lin) in l.decoder_linear.iter().enumerate() {
            push(&format!("decoder_linear[{i}].weight"), lin.weight.len(), &mut pos);
            push(&format!("decoder_linear[{i}].bias"), lin.bias.len(), &mut pos);
        }
        if let Some(lin) = &l.output_linear {
            push("output_linear.weight", lin.weight.len(), &mut pos);
            push("output_linear.bias", lin.bias.len(), &mut pos);
        }
        out
    }

    /// Name of the tensor owning flat index `idx`.
    pub fn param_name(&self, idx: usize) -> String {
        for (name, offset, len) in self.param_layout() {
            if idx >= offset && idx < offset + len {
                return format!("{name}[{}]", idx - offset);
            }
        }
        format!("param[{idx}]")
    }

    /// Run the window through the autoencoder; returns the reconstruction
    /// (same k×f shape) and the activation cache for the backward pass.
    /// Forward is pure: parameters are never modified.
    pub fn forward(&self, window: &Subsequence) -> Result<(Vec<Vec<f64>>, ForwardCache), ModelError> {
        let k = window.len();
        if k == 0 {
            return Err(ModelError::EmptyInput { context: "forward on empty window".into() });
        }
        if window.feature_count() != self.feature_count
            || window.rows.iter().any(|r| r.len() != self.feature_count)
        {
            return Err(ModelError::DimensionMismatch {
                context: format!(
                    "window feature count {} does not match model f={}",
                    window.feature_count(),
                    self.feature_count
                ),
            });
        }
        let l = &self.layers;
        let h_dim = self.hidden_dim;

        let mut cache = ForwardCache {
            version: self.version,
            k,
            emb: Vec::with_capacity(k),
            enc: Vec::with_capacity(k),
            mcv: Vec::with_capacity(k),
            dec: Vec::new(),
            dec_out: Vec::new(),
            ld_hidden: Vec::new(),
            recon: Vec::with_capacity(k),
        };

        let mut h_enc = vec![0.0; h_dim];
        let mut h_dec = vec![
            0.0;
            match self.variant {
                ModelVariant::Full => h_dim,
                ModelVariant::GruDecoder => self.feature_count,
                ModelVariant::LinearDecoder => 0,
            }
        ];

        for row in &window.rows {
            // input linear + tanh
            let mut emb = vec![0.0; h_dim];
            matvec(&l.input_linear.weight, row, &mut emb);
            add_acc(&mut emb, &l.input_linear.bias);
            for v in emb.iter_mut() {
                *v = v.tanh();
            }

            let enc_step = gru_cell_forward_cached(&emb, &h_enc, &l.encoder)?;
            h_enc = enc_step.h.clone();
            let mcv: Vec<f64> = h_enc.iter().map(|v| v.tanh()).collect();

            let recon_row = match self.variant {
                ModelVariant::Full => {
                    let dec_params = l.decoder_gru.as_ref().expect("full variant has decoder gru");
                    let dec_step = gru_cell_forward_cached(&mcv, &h_dec, dec_params)?;
                    h_dec = dec_step.h.clone();
                    let dec_out: Vec<f64> = h_dec.iter().map(|v| v.tanh()).collect();
                    let out_params = l.output_linear.as_ref().expect("full variant has output linear");
                    let mut out = vec![0.0; self.feature_count];
                    matvec(&out_params.weight, &dec_out, &mut out);
                    add_acc(&mut out, &out_params.bias);
                    for v in out.iter_mut() {
                        *v = v.tanh();
                    }
                    cache.dec.push(dec_step);
                    cache.dec_out.push(dec_out);
                    out
                }
                ModelVariant::GruDecoder => {
                    let dec_params = l.decoder_gru.as_ref().expect("gru-decoder variant has decoder gru");
                    let dec_step = gru_cell_forward_cached(&mcv, &h_dec, dec_params)?;
                    h_dec = dec_step.h.clone();
                    let out: Vec<f64> = h_dec.iter().map(|v| v.tanh()).collect();
                    cache.dec.push(dec_step);
                    out
                }
                ModelVariant::LinearDecoder => {
                    let lin1 = &l.decoder_linear[0];
                    let lin2 = &l.decoder_linear[1];
                    let mut hid = vec![0.0; lin1.weight.rows];
                    matvec(&lin1.weight, &mcv, &mut hid);
                    add_acc(&mut hid, &lin1.bias);
                    for v in hid.iter_mut() {
                        *v = v.tanh();
                    }
                    let mut out = vec![0.0; self.feature_count];
                    matvec(&lin2.weight, &hid, &mut out);
                    add_acc(&mut out, &lin2.bias);
                    for v in out.iter_mut() {
                        *v = v.tanh();
                    }
                    cache.ld_hidden.push(hid);
                    out
                }
            };

            cache.emb.push(emb);
            cache.enc.push(enc_step);
            cache.mcv.push(mcv);
            cache.recon.push(recon_row);
        }

        Ok((cache.recon.clone(), cache))
    }

    /// Gradients of the mean-squared reconstruction error against `target`,
    /// by full backpropagation through time over the cached window.
    pub fn backward(
        &self,
        target: &Subsequence,
        cache: &ForwardCache,
    ) -> Result<ModelGrads, ModelError> {
        if cache.version != self.version {
            return Err(ModelError::StaleCache);
        }
        let k = cache.k;
        if target.len() != k || target.feature_count() != self.feature_count {
            return Err(ModelError::DimensionMismatch {
                context: format!(
                    "target shape {}×{} does not match cached window {}×{}",
                    target.len(),
                    target.feature_count(),
                    k,
                    self.feature_count
                ),
            });
        }
        let l = &self.layers;
        let f = self.feature_count;
        let h_dim = self.hidden_dim;
        let scale = 2.0 / (k * f) as f64;

        let mut grads = ModelGrads::zeros_like(self);
        let mut d_h_enc_next = vec![0.0; h_dim];
        let mut d_h_dec_next = match self.variant {
            ModelVariant::Full => vec![0.0; h_dim],
            ModelVariant::GruDecoder => vec![0.0; f],
            ModelVariant::LinearDecoder => Vec::new(),
        };

        for t in (0..k).rev() {
            let recon = &cache.recon[t];
            let d_recon: Vec<f64> = recon
                .iter()
                .zip(&target.rows[t])
                .map(|(xh, x)| scale * (xh - x))
                .collect();

            let d_mcv = match self.variant {
                ModelVariant::Full => {
                    // output linear (+ tanh)
                    let d_out_pre: Vec<f64> = d_recon
                        .iter()
                        .zip(recon)
                        .map(|(d, y)| d * (1.0 - y * y))
                        .collect();
                    let out_lin = l.output_linear.as_ref().unwrap();
                    let (gw, gb) = grads.output_linear.as_mut().unwrap();
                    outer_acc(gw, &d_out_pre, &cache.dec_out[t]);
                    add_acc(gb, &d_out_pre);
                    let mut d_dec_out = vec![0.0; h_dim];
                    matvec_t_acc(&out_lin.weight, &d_out_pre, &mut d_dec_out);
                    // tanh on the decoder state
                    let mut d_h_dec: Vec<f64> = d_dec_out
                        .iter()
                        .zip(&cache.dec_out[t])
                        .map(|(d, y)| d * (1.0 - y * y))
                        .collect();
                    add_acc(&mut d_h_dec, &d_h_dec_next);
                    let (d_mcv, d_h_prev) = gru_cell_backward(
                        l.decoder_gru.as_ref().unwrap(),
                        &cache.dec[t],
                        &d_h_dec,
                        grads.decoder_gru.as_mut().unwrap(),
                    );
                    d_h_dec_next = d_h_prev;
                    d_mcv
                }
                ModelVariant::GruDecoder => {
                    // recon = tanh(h_dec)
                    let mut d_h_dec: Vec<f64> = d_recon
                        .iter()
                        .zip(recon)
                        .map(|(d, y)| d * (1.0 - y * y))
                        .collect();
                    add_acc(&mut d_h_dec, &d_h_dec_next);
                    let (d_mcv, d_h_prev) = gru_cell_backward(
                        l.decoder_gru.as_ref().unwrap(),
                        &cache.dec[t],
                        &d_h_dec,
                        grads.decoder_gru.as_mut().unwrap(),
                    );
                    d_h_dec_next = d_h_prev;
                    d_mcv
                }
                ModelVariant::LinearDecoder => {
                    let d_out_pre: Vec<f64> = d_recon
                        .iter()
                        .zip(recon)
                        .map(|(d, y)| d * (1.0 - y * y))
                        .collect();
                    let lin2 = &l.decoder_linear[1];
                    {
                        let (gw2, gb2) = &mut grads.decoder_linear[1];
                        outer_acc(gw2, &d_out_pre, &cache.ld_hidden[t]);
                        add_acc(gb2, &d_out_pre);
                    }
                    let mut d_hid = vec![0.0; l.decoder_linear[0].weight.rows];
                    matvec_t_acc(&lin2.weight, &d_out_pre, &mut d_hid);
                    let d_hid_pre: Vec<f64> = d_hid
                        .iter()
                        .zip(&cache.ld_hidden[t])
                        .map(|(d, y)| d * (1.0 - y * y))
                        .collect();
                    let lin1 = &l.decoder_linear[0];
                    {
                        let (gw1, gb1) = &mut grads.decoder_linear[0];
                        outer_acc(gw1, &d_hid_pre, &cache.mcv[t]);
                        add_acc(gb1, &d_hid_pre);
                    }
                    let mut d_mcv = vec![0.0; h_dim];
                    matvec_t_acc(&lin1.weight, &d_hid_pre, &mut d_mcv);
                    d_mcv
                }
            };

            // mcv = tanh(h_enc)
            let mut d_h_enc: Vec<f64> = d_mcv
                .iter()
                .zip(&cache.mcv[t])
                .map(|(d, y)| d * (1.0 - y * y))
                .collect();
            add_acc(&mut d_h_enc, &d_h_enc_next);
            let (d_emb, d_h_prev) =
                gru_cell_backward(&l.encoder, &cache.enc[t], &d_h_enc, &mut grads.encoder);
            d_h_enc_next = d_h_prev;

            // input linear (+ tanh)
            let d_emb_pre: Vec<f64> = d_emb
                .iter()
                .zip(&cache.emb[t])
                .map(|(d, y)| d * (1.0 - y * y))
                .collect();
            outer_acc(&mut grads.input_linear_w, &d_emb_pre, &cache.enc[t].x);
            add_acc(&mut grads.input_linear_b, &d_emb_pre);
        }

        Ok(grads)
    }
}

/// Mean of squared element-wise differences over all k·f elements.
pub fn mse_loss(x: &[Vec<f64>], x_hat: &[Vec<f64>]) -> Result<f64, ModelError> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(ModelError::DimensionMismatch {
            context: format!("mse over {} vs {} rows", x.len(), x_hat.len()),
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for (a, b) in x.iter().zip(x_hat) {
        if a.len() != b.len() {
            return Err(ModelError::DimensionMismatch {
                context: format!("mse row width {} vs {}", a.len(), b.len()),
            });
        }
        for (av, bv) in a.iter().zip(b) {
            let d = av - bv;
            sum += d * d;
            count += 1;
        }
    }
    Ok(sum / count as f64)
}
