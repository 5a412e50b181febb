//! The Intensity Extractor and its two heads.
//!
//! Input frames are projected to `hidden_dim`, offset by a sinusoidal
//! position table and passed through feed-forward transformer (FFT) blocks:
//! multi-head self-attention and a two-layer 1-D convolution network, each
//! wrapped in dropout, a residual connection and layer norm. The emotion
//! embedding of the utterance's class is added to every output frame,
//! giving the intensity sequence `I`. Its time average `h` feeds a linear
//! emotion classifier and a two-layer tanh projector that emits the scalar
//! rank score.

mod io;

pub use io::{load_model, model_from_bytes, model_to_bytes, save_model, Precision};
pub(crate) use io::{read_model_section, read_tensor_table, write_model_section, write_tensor_table};

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::emotion::EmotionVocab;
use crate::features::{FeatureMatrix, NormStats, INPUT_CHANNELS};
use crate::numerics::{Graph, Tensor, Var};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractorConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_fft_blocks: usize,
    pub n_heads: usize,
    /// Kernel of the first FFT convolution; the second one is pointwise.
    pub conv_kernel: usize,
    pub conv_filter_dim: usize,
    pub dropout: f64,
    /// Includes neutral.
    pub n_emotion_classes: usize,
    pub projector_hidden: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self {
            input_dim: INPUT_CHANNELS,
            hidden_dim: 256,
            n_fft_blocks: 2,
            n_heads: 2,
            conv_kernel: 9,
            conv_filter_dim: 1024,
            dropout: 0.1,
            n_emotion_classes: 5,
            projector_hidden: 128,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.to_string()));
        if self.input_dim == 0 || self.hidden_dim == 0 || self.conv_filter_dim == 0 {
            return fail("extractor dimensions must be >= 1");
        }
        if self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return fail("hidden_dim must be divisible by n_heads");
        }
        if self.n_emotion_classes < 2 {
            return fail("n_emotion_classes must be >= 2 (neutral plus one emotion)");
        }
        if self.conv_kernel == 0 {
            return fail("conv_kernel must be >= 1");
        }
        if self.projector_hidden == 0 {
            return fail("projector_hidden must be >= 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail("dropout must be in [0, 1)");
        }
        Ok(())
    }

    /// Name and shape of every trainable tensor.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let h = self.hidden_dim;
        let f = self.conv_filter_dim;
        let mut v = vec![
            ("input.weight".to_string(), vec![self.input_dim, h]),
            ("input.bias".to_string(), vec![h]),
        ];
        for b in 0..self.n_fft_blocks {
            let p = format!("blocks.{b}");
            for name in ["q", "k", "v", "out"] {
                v.push((format!("{p}.attn.{name}.weight"), vec![h, h]));
                v.push((format!("{p}.attn.{name}.bias"), vec![h]));
            }
            v.push((format!("{p}.attn_norm.gain"), vec![h]));
            v.push((format!("{p}.attn_norm.bias"), vec![h]));
            v.push((format!("{p}.ff.conv1.weight"), vec![self.conv_kernel * h, f]));
            v.push((format!("{p}.ff.conv1.bias"), vec![f]));
            v.push((format!("{p}.ff.conv2.weight"), vec![f, h]));
            v.push((format!("{p}.ff.conv2.bias"), vec![h]));
            v.push((format!("{p}.ff_norm.gain"), vec![h]));
            v.push((format!("{p}.ff_norm.bias"), vec![h]));
        }
        v.push(("emotion_embedding".to_string(), vec![self.n_emotion_classes, h]));
        v.push(("classifier.weight".to_string(), vec![h, self.n_emotion_classes]));
        v.push(("classifier.bias".to_string(), vec![self.n_emotion_classes]));
        v.push(("projector.hidden.weight".to_string(), vec![h, self.projector_hidden]));
        v.push(("projector.hidden.bias".to_string(), vec![self.projector_hidden]));
        v.push(("projector.out.weight".to_string(), vec![self.projector_hidden, 1]));
        v.push(("projector.out.bias".to_string(), vec![1]));
        v
    }
}

/// Trainable tensors plus the input normalization statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: BTreeMap<String, Tensor>,
    pub norm: NormStats,
}

impl ModelParams {
    /// Fan-in scaled uniform weights and biases, unit/zero layer norms,
    /// embedding table drawn from N(0, 0.01²).
    pub fn init<R: Rng + ?Sized>(cfg: &ExtractorConfig, norm: NormStats, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        if norm.channels() != cfg.input_dim {
            return Err(Error::Dimension(format!(
                "normalizer has {} channels, extractor expects {}",
                norm.channels(),
                cfg.input_dim
            )));
        }
        let embed = Normal::new(0.0, 0.01).expect("valid normal");
        let mut tensors = BTreeMap::new();
        let mut fan_in = cfg.input_dim;
        for (name, shape) in cfg.param_shapes() {
            let numel: usize = shape.iter().product();
            let data: Vec<f64> = if name.ends_with("norm.gain") {
                vec![1.0; numel]
            } else if name.ends_with("norm.bias") {
                vec![0.0; numel]
            } else if name == "emotion_embedding" {
                (0..numel).map(|_| embed.sample(rng)).collect()
            } else {
                if name.ends_with(".weight") {
                    fan_in = shape[0];
                }
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..numel).map(|_| rng.random_range(-bound..bound)).collect()
            };
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        Ok(Self { tensors, norm })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Invalid(format!("missing parameter {name}")))
    }

    pub fn n_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Every tensor present with the shape `cfg` requires, and nothing else.
    pub fn check_shapes(&self, cfg: &ExtractorConfig) -> Result<()> {
        let shapes = cfg.param_shapes();
        if shapes.len() != self.tensors.len() {
            return Err(Error::Dimension(format!(
                "expected {} parameter tensors, found {}",
                shapes.len(),
                self.tensors.len()
            )));
        }
        for (name, shape) in shapes {
            let t = self.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "{name}: expected {shape:?}, found {:?}",
                    t.shape()
                )));
            }
        }
        if self.norm.channels() != cfg.input_dim {
            return Err(Error::Dimension("normalization statistics width".into()));
        }
        Ok(())
    }
}

/// Per-frame intensity representations, `T × hidden_dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySequence(pub Tensor);

impl IntensitySequence {
    pub fn n_frames(&self) -> usize {
        self.0.dims2().map(|d| d.0).unwrap_or(0)
    }

    pub fn dim(&self) -> usize {
        self.0.dims2().map(|d| d.1).unwrap_or(0)
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct RankScore(pub f64);

/// A trained (or freshly initialized) extractor with everything needed to
/// run it: architecture, class vocabulary, parameters and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct RankModel {
    pub config: ExtractorConfig,
    pub vocab: EmotionVocab,
    pub params: ModelParams,
    pub provenance: BTreeMap<String, String>,
}

/// Dropout is active only in `Train` mode.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

/// Model parameters recorded as leaves of one graph.
pub struct Bound<'g> {
    vars: BTreeMap<String, Var<'g>>,
}

impl<'g> Bound<'g> {
    pub fn var(&self, name: &str) -> Var<'g> {
        self.vars[name]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var<'g>)> {
        self.vars.iter()
    }
}

/// Sinusoidal position table, `T × dim`.
pub fn positional_encoding(t_len: usize, dim: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[t_len, dim]);
    let data = pe.data_mut();
    for pos in 0..t_len {
        for i in 0..dim {
            let rate = 10_000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 / rate;
            data[pos * dim + i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}

impl RankModel {
    pub fn new<R: Rng + ?Sized>(
        config: ExtractorConfig,
        vocab: EmotionVocab,
        norm: NormStats,
        rng: &mut R,
    ) -> Result<Self> {
        if vocab.len() != config.n_emotion_classes {
            return Err(Error::Config(format!(
                "vocabulary has {} classes, config says {}",
                vocab.len(),
                config.n_emotion_classes
            )));
        }
        let params = ModelParams::init(&config, norm, rng)?;
        Ok(Self {
            config,
            vocab,
            params,
            provenance: BTreeMap::new(),
        })
    }

    /// Records every parameter on `g`; `trainable` decides whether they
    /// receive gradients.
    pub fn bind<'g>(&self, g: &'g Graph, trainable: bool) -> Bound<'g> {
        let vars = self
            .params
            .tensors
            .iter()
            .map(|(k, t)| {
                let v = if trainable {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                };
                (k.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    /// Raw feature frames as a normalized `T × input_dim` tensor.
    pub fn normalize(&self, fm: &FeatureMatrix) -> Result<Tensor> {
        if fm.n_channels() != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "{}: {} channels, model expects {}",
                fm.source_id,
                fm.n_channels(),
                self.config.input_dim
            )));
        }
        let mut x = fm.to_tensor();
        self.params.norm.apply(&mut x)?;
        Ok(x)
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.config.n_emotion_classes {
            return Err(Error::Invalid(format!(
                "emotion class {class} out of range for {} classes",
                self.config.n_emotion_classes
            )));
        }
        Ok(())
    }

    /// Intensity sequence for already-normalized input `x` (`T × input_dim`).
    pub fn intensity_var<'g>(
        &self,
        b: &Bound<'g>,
        x: Var<'g>,
        class: usize,
        mode: &mut Mode<'_>,
    ) -> Result<Var<'g>> {
        self.check_class(class)?;
        let cfg = &self.config;
        let shape = x.shape();
        if shape.len() != 2 || shape[1] != cfg.input_dim || shape[0] == 0 {
            return Err(Error::Dimension(format!(
                "extractor input must be T x {}, got {shape:?}",
                cfg.input_dim
            )));
        }
        let g = x.graph();
        let t_len = shape[0];
        let mut h = x
            .matmul(b.var("input.weight"))?
            .add_row(b.var("input.bias"))?;
        h = h.add(g.constant(positional_encoding(t_len, cfg.hidden_dim)))?;
        for blk in 0..cfg.n_fft_blocks {
            let p = format!("blocks.{blk}");
            let a = self.self_attention(b, &p, h)?;
            let a = dropout(a, cfg.dropout, mode)?;
            h = h
                .add(a)?
                .layer_norm(b.var(&format!("{p}.attn_norm.gain")), b.var(&format!("{p}.attn_norm.bias")))?;
            let f = h
                .conv1d(
                    b.var(&format!("{p}.ff.conv1.weight")),
                    Some(b.var(&format!("{p}.ff.conv1.bias"))),
                    cfg.conv_kernel,
                )?
                .relu()?
                .conv1d(
                    b.var(&format!("{p}.ff.conv2.weight")),
                    Some(b.var(&format!("{p}.ff.conv2.bias"))),
                    1,
                )?;
            let f = dropout(f, cfg.dropout, mode)?;
            h = h
                .add(f)?
                .layer_norm(b.var(&format!("{p}.ff_norm.gain")), b.var(&format!("{p}.ff_norm.bias")))?;
        }
        let emb = b.var("emotion_embedding").embedding_row(class)?;
        Ok(h.add_row(emb)?)
    }

    fn self_attention<'g>(&self, b: &Bound<'g>, p: &str, h: Var<'g>) -> Result<Var<'g>> {
        let lin = |name: &str| -> Result<Var<'g>> {
            Ok(h
                .matmul(b.var(&format!("{p}.attn.{name}.weight")))?
                .add_row(b.var(&format!("{p}.attn.{name}.bias")))?)
        };
        let q = lin("q")?;
        let k = lin("k")?;
        let v = lin("v")?;
        let n_heads = self.config.n_heads;
        let hd = self.config.hidden_dim / n_heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let mut heads = Vec::with_capacity(n_heads);
        for i in 0..n_heads {
            let qh = q.slice_cols(i * hd, hd)?;
            let kh = k.slice_cols(i * hd, hd)?;
            let vh = v.slice_cols(i * hd, hd)?;
            let att = qh.matmul(kh.transpose()?)?.scale(scale)?.softmax(1)?;
            heads.push(att.matmul(vh)?);
        }
        let cat = if heads.len() == 1 {
            heads[0]
        } else {
            Var::concat_cols(&heads)?
        };
        Ok(cat
            .matmul(b.var(&format!("{p}.attn.out.weight")))?
            .add_row(b.var(&format!("{p}.attn.out.bias")))?)
    }

    /// Time average of an intensity sequence, `hidden_dim` vector.
    pub fn pool_var<'g>(i: Var<'g>) -> Result<Var<'g>> {
        Ok(i.mean_over_time()?)
    }

    /// Emotion logits from a pooled vector.
    pub fn classify_var<'g>(&self, b: &Bound<'g>, h: Var<'g>) -> Result<Var<'g>> {
        let c = self.config.n_emotion_classes;
        let row = h.reshape(vec![1, self.config.hidden_dim])?;
        Ok(row
            .matmul(b.var("classifier.weight"))?
            .add_row(b.var("classifier.bias"))?
            .reshape(vec![c])?)
    }

    /// Scalar rank score from a pooled vector.
    pub fn project_var<'g>(&self, b: &Bound<'g>, h: Var<'g>) -> Result<Var<'g>> {
        let row = h.reshape(vec![1, self.config.hidden_dim])?;
        Ok(row
            .matmul(b.var("projector.hidden.weight"))?
            .add_row(b.var("projector.hidden.bias"))?
            .tanh()?
            .matmul(b.var("projector.out.weight"))?
            .add_row(b.var("projector.out.bias"))?
            .reshape(vec![1])?)
    }

    /// Eval-mode intensity sequence for raw (unnormalized) frames.
    pub fn forward_intensity(&self, x: &Tensor, class: usize) -> Result<IntensitySequence> {
        let mut x = x.clone();
        self.params.norm.apply(&mut x)?;
        self.forward_normalized(&x, class)
    }

    /// Eval-mode intensity sequence for normalized frames.
    pub fn forward_normalized(&self, x: &Tensor, class: usize) -> Result<IntensitySequence> {
        let g = Graph::new();
        let b = self.bind(&g, false);
        let i = self.intensity_var(&b, g.constant(x.clone()), class, &mut Mode::Eval)?;
        Ok(IntensitySequence(i.value()))
    }

    pub fn classify(&self, h: &[f64]) -> Result<Vec<f64>> {
        self.head(h, |m, b, v| m.classify_var(b, v))
    }

    pub fn project_score(&self, h: &[f64]) -> Result<RankScore> {
        Ok(RankScore(self.head(h, |m, b, v| m.project_var(b, v))?[0]))
    }

    fn head(
        &self,
        h: &[f64],
        f: impl for<'g> Fn(&Self, &Bound<'g>, Var<'g>) -> Result<Var<'g>>,
    ) -> Result<Vec<f64>> {
        if h.len() != self.config.hidden_dim {
            return Err(Error::Dimension(format!(
                "pooled vector has {} values, hidden_dim is {}",
                h.len(),
                self.config.hidden_dim
            )));
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("pooled vector is not finite".into()));
        }
        let g = Graph::new();
        let b = self.bind(&g, false);
        let out = f(self, &b, g.constant(Tensor::vector(h.to_vec())))?;
        Ok(out.value().into_data())
    }
}

/// Arithmetic mean over frames.
pub fn pool(i: &IntensitySequence) -> Result<Vec<f64>> {
    let (t, d) = i
        .0
        .dims2()
        .filter(|(t, _)| *t > 0)
        .ok_or_else(|| Error::Invalid("cannot pool an empty sequence".into()))?;
    let mut out = vec![0.0; d];
    for r in 0..t {
        out.iter_mut().zip(i.frame(r)).for_each(|(a, v)| *a += v);
    }
    out.iter_mut().for_each(|v| *v /= t as f64);
    Ok(out)
}

fn dropout<'g>(x: Var<'g>, p: f64, mode: &mut Mode<'_>) -> Result<Var<'g>> {
    let Mode::Train(rng) = mode else {
        return Ok(x);
    };
    if p == 0.0 {
        return Ok(x);
    }
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let keep = 1.0 / (1.0 - p);
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
        .collect();
    let m = x.graph().constant(Tensor::new(shape, mask)?);
    Ok(x.mul(m)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> RankModel {
        let cfg = ExtractorConfig {
            input_dim: 5,
            hidden_dim: 8,
            n_fft_blocks: 1,
            n_heads: 2,
            conv_kernel: 3,
            conv_filter_dim: 6,
            dropout: 0.1,
            n_emotion_classes: 3,
            projector_hidden: 4,
        };
        let vocab = EmotionVocab::from_labels(["neutral", "angry", "sleepy"]);
        RankModel::new(cfg, vocab, NormStats::identity(5), &mut ChaCha8Rng::seed_from_u64(7)).unwrap()
    }

    fn input(t: usize, c: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::matrix(t, c, (0..t * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn config_rejects_bad_heads() {
        let cfg = ExtractorConfig {
            hidden_dim: 10,
            n_heads: 3,
            ..ExtractorConfig::default()
        };
        assert!(cfg.validate().is_err());
        assert!(ExtractorConfig::default().validate().is_ok());
    }

    #[test]
    fn output_shape_for_any_length() {
        let m = tiny();
        for t in [1, 2, 7] {
            let i = m.forward_intensity(&input(t, 5, t as u64), 1).unwrap();
            assert_eq!(i.0.shape(), &[t, 8]);
        }
    }

    #[test]
    fn invalid_class_is_rejected() {
        let m = tiny();
        assert!(m.forward_intensity(&input(3, 5, 0), 3).is_err());
    }

    #[test]
    fn zero_heads_give_uniform_and_zero() {
        let mut m = tiny();
        for (k, t) in m.params.tensors.iter_mut() {
            if k.starts_with("classifier") || k.starts_with("projector") {
                t.data_mut().fill(0.0);
            }
        }
        let h = vec![0.7; 8];
        let logits = m.classify(&h).unwrap();
        assert_eq!(logits.len(), 3);
        assert!(logits.iter().all(|v| *v == 0.0));
        assert_eq!(m.project_score(&h).unwrap(), RankScore(0.0));
    }

    #[test]
    fn dropout_changes_train_mode_only() {
        let m = tiny();
        let x = input(4, 5, 1);
        let a = m.forward_normalized(&x, 1).unwrap();
        let b = m.forward_normalized(&x, 1).unwrap();
        assert_eq!(a, b);
        let g = Graph::new();
        let bd = m.bind(&g, false);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut mode = Mode::Train(&mut rng);
        let t = m
            .intensity_var(&bd, g.constant(x.clone()), 1, &mut mode)
            .unwrap()
            .value();
        assert_ne!(t, a.0);
    }

    #[test]
    fn pool_of_single_frame_is_that_frame() {
        let s = IntensitySequence(Tensor::matrix(1, 3, vec![1.0, -2.0, 0.5]).unwrap());
        assert_eq!(pool(&s).unwrap(), vec![1.0, -2.0, 0.5]);
    }
}
