//! Trainable downstream machinery: the layer-weighted sum over encoder
//! states, the FC + BLSTM soft-mask head, and the cross-attention coupler
//! for two-speaker separation.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::avencoder::{EncoderConfig, LayerStack, GROUP_HEAD};
use crate::dsp::{FeatureSequence, SoftMask};
use crate::error::AvsepError;
use crate::nn::{layers, BoundParams, ParamSet, Tape, Var};
use crate::Result;

/// Downstream head dimensions. The BLSTM width follows the reference system;
/// the cross-attention head count is scaled to divide the desk-scale model
/// dimension.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct HeadConfig {
    pub fc_dim: usize,
    pub blstm_hidden: usize,
    pub cross_heads: usize,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            fc_dim: 256,
            blstm_hidden: 256,
            cross_heads: 4,
        }
    }
}

impl HeadConfig {
    pub fn tiny() -> Self {
        HeadConfig {
            fc_dim: 8,
            blstm_hidden: 4,
            cross_heads: 2,
        }
    }
}

/// Simplex weights over the N+1 encoder levels.
#[derive(Debug, Clone)]
pub struct LayerWeights {
    weights: Vec<f64>,
}

impl LayerWeights {
    /// Effective weights from free logits via softmax; any logits vector
    /// lands on the simplex.
    pub fn from_logits(logits: &[f64]) -> Self {
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        LayerWeights {
            weights: exps.iter().map(|e| e / sum).collect(),
        }
    }

    /// Explicit weights; must already be a probability vector.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| *w < 0.0) {
            return Err(AvsepError::InvalidArgument(
                "layer weights must be nonnegative".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(AvsepError::InvalidArgument(format!(
                "layer weights sum to {sum}, expected 1"
            )));
        }
        Ok(LayerWeights { weights })
    }

    pub fn uniform(n: usize) -> Self {
        LayerWeights {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn one_hot(n: usize, k: usize) -> Self {
        let mut weights = vec![0.0; n];
        weights[k] = 1.0;
        LayerWeights { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Convex combination of all encoder levels: sum_l w(l) * H^(l).
pub fn weighted_sum(stack: &LayerStack, lw: &LayerWeights) -> Result<FeatureSequence> {
    if lw.len() != stack.n_states() {
        return Err(AvsepError::ShapeMismatch(format!(
            "{} weights for {} layer states",
            lw.len(),
            stack.n_states()
        )));
    }
    let mut out = Array2::zeros(stack.states[0].dim());
    for (w, h) in lw.weights().iter().zip(&stack.states) {
        out.scaled_add(*w, h);
    }
    FeatureSequence::new(out, stack.frame_rate_hz)
}

/// Coupled two-speaker features, the outputs of the cross-attention pair.
#[derive(Debug, Clone)]
pub struct CoupledFeatures {
    pub o_sp1: Array2<f64>,
    pub o_sp2: Array2<f64>,
    pub frame_rate_hz: f64,
}

impl CoupledFeatures {
    pub fn validate(&self) -> Result<()> {
        if self.o_sp1.dim() != self.o_sp2.dim() {
            return Err(AvsepError::ShapeMismatch(format!(
                "coupled features {:?} vs {:?}",
                self.o_sp1.dim(),
                self.o_sp2.dim()
            )));
        }
        Ok(())
    }
}

/// Elementwise sum of the two coupled outputs.
pub fn couple_combine(cf: &CoupledFeatures) -> Result<FeatureSequence> {
    cf.validate()?;
    FeatureSequence::new(&cf.o_sp1 + &cf.o_sp2, cf.frame_rate_hz)
}

// ---------------------------------------------------------------------------
// Parameter construction
// ---------------------------------------------------------------------------

/// Initialize the head parameters: layer-weight logits (uniform), the SE
/// stack, and optionally the shared cross-attention block.
pub fn init_head_params(
    enc: &EncoderConfig,
    head: &HeadConfig,
    with_cross_attention: bool,
    rng: &mut ChaCha8Rng,
) -> ParamSet {
    let mut p = ParamSet::new();
    p.insert(
        format!("{GROUP_HEAD}.layer_weights.logits"),
        Array2::zeros((1, enc.n_layers + 1)),
    );
    let se_in = enc.model_dim + enc.bins();
    layers::init_linear(&mut p, rng, &format!("{GROUP_HEAD}.se.fc_in"), se_in, head.fc_dim);
    layers::init_bilstm(&mut p, rng, &format!("{GROUP_HEAD}.se.blstm1"), head.fc_dim, head.blstm_hidden);
    layers::init_bilstm(
        &mut p,
        rng,
        &format!("{GROUP_HEAD}.se.blstm2"),
        2 * head.blstm_hidden,
        head.blstm_hidden,
    );
    layers::init_linear(
        &mut p,
        rng,
        &format!("{GROUP_HEAD}.se.fc_out"),
        2 * head.blstm_hidden,
        enc.bins(),
    );
    if with_cross_attention {
        layers::init_mha(&mut p, rng, &format!("{GROUP_HEAD}.cross_attn"), enc.model_dim);
    }
    p
}

// ---------------------------------------------------------------------------
// Tape-level builders (used by both training and the pure operations)
// ---------------------------------------------------------------------------

/// Softmax of the trainable layer-weight logits, as a 1 x (N+1) var.
pub fn layer_weights_var(tape: &mut Tape, bp: &BoundParams) -> Var {
    let logits = bp.var(&format!("{GROUP_HEAD}.layer_weights.logits"));
    tape.softmax_rows(logits)
}

/// Eq-1 aggregation on the tape: weights (1 x L) against L stacked states.
pub fn weighted_sum_var(tape: &mut Tape, weights: Var, stack: &[Var]) -> Var {
    tape.lin_comb(weights, stack)
}

/// SE head on the tape: upsample encoder-rate features to the STFT rate,
/// concatenate the log1p spectrogram, then FC -> 2-layer BLSTM -> FC ->
/// sigmoid. Frame counts must match exactly after upsampling.
pub fn se_head_vars(
    tape: &mut Tape,
    bp: &BoundParams,
    head: &HeadConfig,
    features: Var,
    noisy_log1p: Var,
    upsample: usize,
) -> Result<Var> {
    let up = if upsample > 1 {
        tape.repeat_rows(features, upsample)
    } else {
        features
    };
    let t_up = tape.value(up).nrows();
    let t_spec = tape.value(noisy_log1p).nrows();
    if t_up != t_spec {
        return Err(AvsepError::ShapeMismatch(format!(
            "upsampled features have {t_up} frames, spectrogram has {t_spec}"
        )));
    }
    let cat = tape.concat_cols(&[up, noisy_log1p]);
    let fc = layers::linear(tape, bp, &format!("{GROUP_HEAD}.se.fc_in"), cat);
    let fc = tape.relu(fc);
    let b1 = layers::bilstm(tape, bp, &format!("{GROUP_HEAD}.se.blstm1"), fc, head.blstm_hidden);
    let b2 = layers::bilstm(tape, bp, &format!("{GROUP_HEAD}.se.blstm2"), b1, head.blstm_hidden);
    let out = layers::linear(tape, bp, &format!("{GROUP_HEAD}.se.fc_out"), b2);
    Ok(tape.sigmoid(out))
}

/// Cross-attention coupling on the tape: one shared MHA block applied in
/// both directions, first argument as query.
pub fn cross_attention_vars(
    tape: &mut Tape,
    bp: &BoundParams,
    n_heads: usize,
    h1: Var,
    h2: Var,
) -> Result<(layers::MhaOutput, layers::MhaOutput)> {
    if tape.value(h1).dim() != tape.value(h2).dim() {
        return Err(AvsepError::ShapeMismatch(format!(
            "cross attention inputs {:?} vs {:?}",
            tape.value(h1).dim(),
            tape.value(h2).dim()
        )));
    }
    let prefix = format!("{GROUP_HEAD}.cross_attn");
    let o1 = layers::multi_head_attention(tape, bp, &prefix, n_heads, h1, h2);
    let o2 = layers::multi_head_attention(tape, bp, &prefix, n_heads, h2, h1);
    Ok((o1, o2))
}

// ---------------------------------------------------------------------------
// Pure inference operations
// ---------------------------------------------------------------------------

/// Soft mask from aggregated features and the noisy log1p spectrogram
/// (inference mode).
pub fn se_head(
    features: &FeatureSequence,
    noisy_log1p: &FeatureSequence,
    params: &ParamSet,
    head: &HeadConfig,
    upsample: usize,
) -> Result<SoftMask> {
    let mut tape = Tape::new();
    let bp = params.bind(&mut tape);
    let f = tape.leaf(features.values.clone());
    let n = tape.leaf(noisy_log1p.values.clone());
    let mask = se_head_vars(&mut tape, &bp, head, f, n, upsample)?;
    SoftMask::new(tape.value(mask).clone())
}

/// Couple two aggregated feature sequences with shared-parameter
/// cross-attention (inference mode).
pub fn cross_attention(
    h1: &FeatureSequence,
    h2: &FeatureSequence,
    params: &ParamSet,
    n_heads: usize,
) -> Result<CoupledFeatures> {
    let mut tape = Tape::new();
    let bp = params.bind(&mut tape);
    let a = tape.leaf(h1.values.clone());
    let b = tape.leaf(h2.values.clone());
    let (o1, o2) = cross_attention_vars(&mut tape, &bp, n_heads, a, b)?;
    let cf = CoupledFeatures {
        o_sp1: tape.value(o1.out).clone(),
        o_sp2: tape.value(o2.out).clone(),
        frame_rate_hz: h1.frame_rate_hz,
    };
    cf.validate()?;
    Ok(cf)
}
