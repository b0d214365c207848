//! Dense-network engine for the fixed encoder/classifier architecture.
//!
//! The encoder is four LeakyReLU layers (20 → 128 → 64 → 32 → 2) with dropout
//! after the first three; the classifier is one linear layer mapping the 2-D
//! embedding to one logit per class. All arithmetic is `f64`.

mod adam;
mod grad;

pub use adam::AdamState;
pub use grad::{
    input_gradient, input_gradient_with_value, param_gradients, softmax, BatchGradients,
    InputObjective, Loss,
};
pub(crate) use grad::{nearest_mahalanobis, softmax_unchecked};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::linalg::Embedding;
use crate::{Error, Result};

pub const INPUT_DIM: usize = 20;
pub const ENCODER_WIDTHS: [usize; 4] = [128, 64, 32, 2];
pub const EMBED_DIM: usize = 2;
pub const LEAKY_SLOPE: f64 = 0.15;
pub const DROPOUT_P: f64 = 0.3;
/// Encoder layers followed by dropout.
pub const DROPOUT_LAYERS: usize = 3;

/// Weights (row-major, `out_dim × in_dim`) and bias of one dense layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerParams {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self {
            out_dim,
            in_dim,
            weights: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
        }
    }

    /// Kaiming-uniform weights for a leaky rectifier with the given slope; zero bias.
    pub fn kaiming(out_dim: usize, in_dim: usize, slope: f64, rng: &mut impl Rng) -> Self {
        let gain = (2.0 / (1.0 + slope * slope)).sqrt();
        let bound = gain * (3.0 / in_dim as f64).sqrt();
        let weights = (0..out_dim * in_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        Self {
            out_dim,
            in_dim,
            weights,
            bias: vec![0.0; out_dim],
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.in_dim + col]
    }

    #[inline]
    pub fn weight_mut(&mut self, row: usize, col: usize) -> &mut f64 {
        &mut self.weights[row * self.in_dim + col]
    }

    /// `W x + b`
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    fn check_shape(&self) -> Result<()> {
        if self.weights.len() != self.out_dim * self.in_dim {
            return Err(Error::Dimension {
                expected: self.out_dim * self.in_dim,
                got: self.weights.len(),
            });
        }
        if self.bias.len() != self.out_dim {
            return Err(Error::Dimension {
                expected: self.out_dim,
                got: self.bias.len(),
            });
        }
        Ok(())
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    Binary,
    Multiclass,
}

/// Encoder + classifier parameters and the regime they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnModel {
    pub encoder: Vec<LayerParams>,
    pub classifier: LayerParams,
    pub leaky_slope: f64,
    pub dropout_p: f64,
    pub regime: Regime,
    pub cl_trained: bool,
    pub seed: u64,
}

/// Forward evaluation mode. Stochastic mode applies inverted dropout after
/// the first three encoder layers.
pub enum ForwardMode<'a> {
    Deterministic,
    Stochastic {
        rng: &'a mut ChaCha8Rng,
        dropout_p: f64,
    },
}

impl ForwardMode<'_> {
    pub fn reborrow(&mut self) -> ForwardMode<'_> {
        match self {
            ForwardMode::Deterministic => ForwardMode::Deterministic,
            ForwardMode::Stochastic { rng, dropout_p } => ForwardMode::Stochastic {
                rng,
                dropout_p: *dropout_p,
            },
        }
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Vec<f64>,
    /// Pre-activations of the four encoder layers.
    pub pre_activations: Vec<Vec<f64>>,
    /// Post-activation (and post-dropout) outputs of the four encoder layers.
    pub activations: Vec<Vec<f64>>,
    /// Scaled keep-masks for the dropout layers: 0 or 1/(1-p); all ones when deterministic.
    pub dropout_masks: Vec<Vec<f64>>,
    pub embedding: Embedding,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn predicted_class(&self) -> usize {
        argmax(&self.logits)
    }
}

pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[inline]
fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

#[inline]
fn leaky_derivative(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

impl FnnModel {
    /// Seeded model over the canonical 20-feature input.
    pub fn new(num_classes: usize, regime: Regime, seed: u64) -> Result<Self> {
        Self::with_input_dim(INPUT_DIM, num_classes, regime, seed)
    }

    pub fn with_input_dim(
        input_dim: usize,
        num_classes: usize,
        regime: Regime,
        seed: u64,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut encoder = Vec::with_capacity(4);
        let mut fan_in = input_dim;
        for width in ENCODER_WIDTHS {
            encoder.push(LayerParams::kaiming(width, fan_in, LEAKY_SLOPE, &mut rng));
            fan_in = width;
        }
        let classifier = LayerParams::kaiming(num_classes, EMBED_DIM, LEAKY_SLOPE, &mut rng);
        Ok(Self {
            encoder,
            classifier,
            leaky_slope: LEAKY_SLOPE,
            dropout_p: DROPOUT_P,
            regime,
            cl_trained: false,
            seed,
        })
    }

    /// All-zero parameters.
    pub fn zeros(input_dim: usize, num_classes: usize) -> Self {
        let mut encoder = Vec::with_capacity(4);
        let mut fan_in = input_dim;
        for width in ENCODER_WIDTHS {
            encoder.push(LayerParams::zeros(width, fan_in));
            fan_in = width;
        }
        Self {
            encoder,
            classifier: LayerParams::zeros(num_classes, EMBED_DIM),
            leaky_slope: LEAKY_SLOPE,
            dropout_p: DROPOUT_P,
            regime: Regime::Multiclass,
            cl_trained: false,
            seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.out_dim
    }

    /// Checks the layer chain, classifier width and finiteness.
    pub fn validate(&self) -> Result<()> {
        if self.encoder.len() != ENCODER_WIDTHS.len() {
            return Err(Error::Config(format!(
                "encoder must have {} layers, found {}",
                ENCODER_WIDTHS.len(),
                self.encoder.len()
            )));
        }
        let mut fan_in = self.input_dim();
        for (layer, width) in self.encoder.iter().zip(ENCODER_WIDTHS) {
            layer.check_shape()?;
            if layer.in_dim != fan_in {
                return Err(Error::Dimension { expected: fan_in, got: layer.in_dim });
            }
            if layer.out_dim != width {
                return Err(Error::Dimension { expected: width, got: layer.out_dim });
            }
            fan_in = width;
        }
        self.classifier.check_shape()?;
        if self.classifier.in_dim != EMBED_DIM {
            return Err(Error::Dimension { expected: EMBED_DIM, got: self.classifier.in_dim });
        }
        if self.num_classes() < 2 {
            return Err(Error::Config("classifier needs at least 2 classes".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) || !self.leaky_slope.is_finite() {
            return Err(Error::Config("invalid dropout probability or slope".into()));
        }
        if !self.encoder.iter().chain([&self.classifier]).all(LayerParams::is_finite) {
            return Err(Error::Config("model parameters contain non-finite values".into()));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], mut mode: ForwardMode<'_>) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension { expected: self.input_dim(), got: x.len() });
        }
        let mut pre_activations = Vec::with_capacity(4);
        let mut activations: Vec<Vec<f64>> = Vec::with_capacity(4);
        let mut dropout_masks = Vec::with_capacity(DROPOUT_LAYERS);
        for (l, layer) in self.encoder.iter().enumerate() {
            let input = if l == 0 { x } else { activations[l - 1].as_slice() };
            let pre = layer.apply(input);
            let mut out: Vec<f64> = pre.iter().map(|&a| leaky(a, self.leaky_slope)).collect();
            if l < DROPOUT_LAYERS {
                let mask = match &mut mode {
                    ForwardMode::Deterministic => vec![1.0; out.len()],
                    ForwardMode::Stochastic { rng, dropout_p } => {
                        let p = *dropout_p;
                        let keep_scale = 1.0 / (1.0 - p);
                        (0..out.len())
                            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep_scale })
                            .collect()
                    }
                };
                if let ForwardMode::Stochastic { .. } = mode {
                    for (o, m) in out.iter_mut().zip(&mask) {
                        *o *= m;
                    }
                }
                dropout_masks.push(mask);
            }
            pre_activations.push(pre);
            activations.push(out);
        }
        let last = &activations[3];
        let embedding = [last[0], last[1]];
        let logits = self.classifier.apply(&embedding);
        Ok(ForwardTrace {
            input: x.to_vec(),
            pre_activations,
            activations,
            dropout_masks,
            embedding,
            logits,
        })
    }

    pub fn forward_deterministic(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.forward(x, ForwardMode::Deterministic)
    }

    pub fn embed(&self, x: &[f64]) -> Result<Embedding> {
        Ok(self.forward_deterministic(x)?.embedding)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(self.forward_deterministic(x)?.predicted_class())
    }

    /// Classifier layer alone, applied to an embedding-space point.
    pub fn classify_embedding(&self, e: Embedding) -> Vec<f64> {
        self.classifier.apply(&e)
    }

    /// Backpropagates `d_logits` (and an extra gradient on the embedding) through
    /// the trace, accumulating parameter gradients into `grads`. Returns the
    /// gradient with respect to the input.
    pub fn backward_into(
        &self,
        trace: &ForwardTrace,
        d_logits: &[f64],
        d_embedding: Embedding,
        grads: &mut Gradients,
    ) -> Vec<f64> {
        let e = trace.embedding;
        let cls = &self.classifier;
        let mut g_h = vec![d_embedding[0], d_embedding[1]];
        for (k, &gz) in d_logits.iter().enumerate() {
            if gz == 0.0 {
                continue;
            }
            grads.classifier.bias[k] += gz;
            for j in 0..EMBED_DIM {
                grads.classifier.weights[k * EMBED_DIM + j] += gz * e[j];
                g_h[j] += cls.weight(k, j) * gz;
            }
        }
        for l in (0..self.encoder.len()).rev() {
            let layer = &self.encoder[l];
            let pre = &trace.pre_activations[l];
            let mut g_a = g_h;
            if l < DROPOUT_LAYERS {
                for (g, m) in g_a.iter_mut().zip(&trace.dropout_masks[l]) {
                    *g *= m;
                }
            }
            for (g, &a) in g_a.iter_mut().zip(pre) {
                *g *= leaky_derivative(a, self.leaky_slope);
            }
            let input = if l == 0 { &trace.input } else { &trace.activations[l - 1] };
            let grad_layer = &mut grads.encoder[l];
            let mut g_prev = vec![0.0; layer.in_dim];
            for (o, &g) in g_a.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad_layer.bias[o] += g;
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                let grow = &mut grad_layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += g * input[i];
                    g_prev[i] += row[i] * g;
                }
            }
            g_h = g_prev;
        }
        g_h
    }

    /// Mutable parameter blocks in a fixed order (weights then bias, layer by layer).
    pub fn param_blocks_mut(&mut self) -> Vec<&mut [f64]> {
        let mut blocks = Vec::with_capacity(10);
        for layer in self.encoder.iter_mut().chain(std::iter::once(&mut self.classifier)) {
            blocks.push(layer.weights.as_mut_slice());
            blocks.push(layer.bias.as_mut_slice());
        }
        blocks
    }

    /// Stable content hash over architecture, hyperparameters and parameter bits.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update(format!("{:?}|{}|", self.regime, self.cl_trained).as_bytes());
        hasher.update(self.leaky_slope.to_bits().to_le_bytes());
        hasher.update(self.dropout_p.to_bits().to_le_bytes());
        for layer in self.encoder.iter().chain(std::iter::once(&self.classifier)) {
            hasher.update((layer.out_dim as u64).to_le_bytes());
            hasher.update((layer.in_dim as u64).to_le_bytes());
            for v in layer.weights.iter().chain(&layer.bias) {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(&hasher.finalize()[..16])
    }
}

/// Gradient buffers shaped like the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub encoder: Vec<LayerParams>,
    pub classifier: LayerParams,
}

impl Gradients {
    pub fn zeros_like(model: &FnnModel) -> Self {
        Self {
            encoder: model
                .encoder
                .iter()
                .map(|l| LayerParams::zeros(l.out_dim, l.in_dim))
                .collect(),
            classifier: LayerParams::zeros(model.classifier.out_dim, model.classifier.in_dim),
        }
    }

    pub fn blocks(&self) -> Vec<&[f64]> {
        let mut blocks = Vec::with_capacity(10);
        for layer in self.encoder.iter().chain(std::iter::once(&self.classifier)) {
            blocks.push(layer.weights.as_slice());
            blocks.push(layer.bias.as_slice());
        }
        blocks
    }

    pub fn scale(&mut self, factor: f64) {
        for layer in self.encoder.iter_mut().chain(std::iter::once(&mut self.classifier)) {
            layer.weights.iter_mut().chain(layer.bias.iter_mut()).for_each(|v| *v *= factor);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probe(seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..INPUT_DIM).map(|_| rng.random_range(-2.0..2.0)).collect()
    }

    #[test]
    fn zero_model_gives_zero_logits() {
        let model = FnnModel::zeros(INPUT_DIM, 4);
        let trace = model.forward_deterministic(&probe(1)).unwrap();
        assert!(trace.logits.iter().all(|&z| z == 0.0));
        let p = softmax(&trace.logits, 1.0).unwrap();
        assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn identity_path_copies_first_coordinate() {
        let mut model = FnnModel::zeros(INPUT_DIM, 2);
        for layer in &mut model.encoder {
            *layer.weight_mut(0, 0) = 1.0;
        }
        let mut x = vec![0.0; INPUT_DIM];
        x[0] = 1.0;
        x[5] = 3.0;
        let trace = model.forward_deterministic(&x).unwrap();
        assert_eq!(trace.embedding, [1.0, 0.0]);
    }

    #[test]
    fn forward_matches_layer_by_layer_reevaluation() {
        let model = FnnModel::new(4, Regime::Multiclass, 11).unwrap();
        let x = probe(2);
        let trace = model.forward_deterministic(&x).unwrap();
        // Independent re-evaluation with explicit index loops.
        let mut h = x.clone();
        for layer in &model.encoder {
            let mut next = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                let mut acc = layer.bias[o];
                for i in 0..layer.in_dim {
                    acc += layer.weights[o * layer.in_dim + i] * h[i];
                }
                next[o] = if acc > 0.0 { acc } else { 0.15 * acc };
            }
            h = next;
        }
        for j in 0..2 {
            assert!((h[j] - trace.embedding[j]).abs() < 1e-12);
        }
        for k in 0..4 {
            let z = model.classifier.bias[k]
                + model.classifier.weights[k * 2] * h[0]
                + model.classifier.weights[k * 2 + 1] * h[1];
            assert!((z - trace.logits[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_forward_is_pure() {
        let model = FnnModel::new(3, Regime::Multiclass, 5).unwrap();
        let x = probe(3);
        let a = model.forward_deterministic(&x).unwrap();
        let b = model.forward_deterministic(&x).unwrap();
        assert_eq!(a, b);
        assert!(a.dropout_masks.iter().flatten().all(|&m| m == 1.0));
    }

    #[test]
    fn stochastic_forward_reproducible_and_degenerates() {
        let model = FnnModel::new(3, Regime::Multiclass, 5).unwrap();
        let x = probe(4);
        let run = |seed: u64, p: f64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            model
                .forward(&x, ForwardMode::Stochastic { rng: &mut rng, dropout_p: p })
                .unwrap()
        };
        assert_eq!(run(9, 0.3), run(9, 0.3));
        let det = model.forward_deterministic(&x).unwrap();
        let zero_p = run(9, 0.0);
        assert_eq!(det.logits, zero_p.logits);
        assert_eq!(det.embedding, zero_p.embedding);
        // only the first three layers are masked
        assert_eq!(run(9, 0.3).dropout_masks.len(), 3);
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let model = FnnModel::new(2, Regime::Binary, 0).unwrap();
        assert!(matches!(
            model.forward_deterministic(&[0.0; 5]),
            Err(Error::Dimension { expected: 20, got: 5 })
        ));
    }

    #[test]
    fn new_model_validates() {
        let model = FnnModel::new(4, Regime::Multiclass, 0).unwrap();
        model.validate().unwrap();
        assert_eq!(model.leaky_slope, 0.15);
        assert_eq!(model.dropout_p, 0.3);
        assert!(FnnModel::new(1, Regime::Multiclass, 0).is_err());
    }

    #[test]
    fn fingerprint_tracks_parameters() {
        let a = FnnModel::new(4, Regime::Multiclass, 0).unwrap();
        let mut b = a.clone();
        assert_eq!(a.fingerprint(), b.fingerprint());
        b.classifier.bias[0] += 1e-12;
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
