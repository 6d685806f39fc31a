//! The two-stream detection model: configuration, parameters, checkpointing.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{load_checkpoint, save_checkpoint, CountSketch, Scalar, Tensor};

/// Classification head width: tampered-vs-authentic, or one class per
/// tampering technique.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassMode {
    TwoClass,
    MultiClass,
}

impl ClassMode {
    pub fn n_classes(&self) -> usize {
        match self {
            ClassMode::TwoClass => 2,
            ClassMode::MultiClass => 4,
        }
    }

    /// Display name for a non-background class index.
    pub fn class_name(&self, id: usize) -> &'static str {
        match (self, id) {
            (ClassMode::TwoClass, 1) => "tampered",
            (ClassMode::MultiClass, 1) => "splice",
            (ClassMode::MultiClass, 2) => "copy_move",
            (ClassMode::MultiClass, 3) => "removal",
            _ => "background",
        }
    }

    /// Map a ground-truth box label to a class index, or fail with a
    /// diagnostic when the label does not belong to this mode's class set.
    pub fn class_id_for_label(&self, label: &str) -> Result<usize> {
        match self {
            ClassMode::TwoClass => match label {
                "tampered" | "splice" | "copy_move" | "removal" => Ok(1),
                other => Err(Error::invalid(format!(
                    "label '{other}' does not map to the two-class head"
                ))),
            },
            ClassMode::MultiClass => match label {
                "splice" => Ok(1),
                "copy_move" => Ok(2),
                "removal" => Ok(3),
                other => Err(Error::invalid(format!(
                    "label '{other}' does not map to the multi-class head (want splice/copy_move/removal)"
                ))),
            },
        }
    }

    pub fn foreground_names(&self) -> Vec<&'static str> {
        match self {
            ClassMode::TwoClass => vec!["tampered"],
            ClassMode::MultiClass => vec!["splice", "copy_move", "removal"],
        }
    }
}

/// Which backbones exist. Single-stream variants are the ablation models.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamMode {
    Fused,
    RgbOnly,
    NoiseOnly,
}

/// Which stream feeds the proposal head in fused mode (the noise option is
/// an ablation, not a supported configuration).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RpnStream {
    Rgb,
    Noise,
}

/// How RoI feature pairs are fused for classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionKind {
    /// Exact bilinear form, dimension `C²`.
    Full,
    /// Count-sketch approximation, dimension `sketch_dim`.
    Compact,
}

/// Backbone geometry: one 3×3 conv stage per channel entry, 2×2 max pooling
/// between stages, so total stride is `2^(stages-1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub channels: Vec<usize>,
    /// Shorter image side after resizing; must be a multiple of the stride.
    pub input_side: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        BackboneConfig {
            channels: vec![16, 32, 64, 64],
            input_side: 128,
        }
    }
}

impl BackboneConfig {
    pub fn stride(&self) -> usize {
        1 << (self.channels.len() - 1)
    }

    pub fn out_channels(&self) -> usize {
        *self.channels.last().unwrap()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::invalid("backbone needs at least one stage"));
        }
        if self.input_side % self.stride() != 0 || self.input_side == 0 {
            return Err(Error::invalid(format!(
                "input side {} is not a positive multiple of the total stride {}",
                self.input_side,
                self.stride()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    pub class_mode: ClassMode,
    pub stream_mode: StreamMode,
    pub rpn_stream: RpnStream,
    pub fusion: FusionKind,
    pub sketch_dim: usize,
    pub anchor_scales: Vec<f32>,
    pub anchor_ratios: Vec<f32>,
    pub roi_size: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: BackboneConfig::default(),
            class_mode: ClassMode::TwoClass,
            stream_mode: StreamMode::Fused,
            rpn_stream: RpnStream::Rgb,
            fusion: FusionKind::Full,
            sketch_dim: 16384,
            anchor_scales: vec![8.0, 16.0, 32.0, 64.0],
            anchor_ratios: vec![0.5, 1.0, 2.0],
            roi_size: 7,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn anchors_per_location(&self) -> usize {
        self.anchor_scales.len() * self.anchor_ratios.len()
    }

    /// Width of the classification-head input vector.
    pub fn head_input_dim(&self) -> usize {
        let c = self.backbone.out_channels();
        match self.stream_mode {
            StreamMode::Fused => match self.fusion {
                FusionKind::Full => c * c,
                FusionKind::Compact => self.sketch_dim,
            },
            _ => c * self.roi_size * self.roi_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.anchor_scales.is_empty() || self.anchor_ratios.is_empty() {
            return Err(Error::invalid("anchor scales and ratios must be nonempty"));
        }
        if self.roi_size == 0 {
            return Err(Error::invalid("roi_size must be positive"));
        }
        if self.stream_mode == StreamMode::Fused
            && self.fusion == FusionKind::Compact
            && !self.sketch_dim.is_power_of_two()
        {
            return Err(Error::invalid(format!(
                "sketch dimension {} must be a power of two",
                self.sketch_dim
            )));
        }
        Ok(())
    }
}

/// One convolution stage's parameters.
#[derive(Clone, Debug)]
pub struct ConvLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Proposal head: a 3×3 conv trunk and 1×1 objectness/regression convs.
#[derive(Clone, Debug)]
pub struct RpnParams<T> {
    pub conv: ConvLayer<T>,
    pub cls: ConvLayer<T>,
    pub reg: ConvLayer<T>,
}

/// Fully connected head parameters.
#[derive(Clone, Debug)]
pub struct FcLayer<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// The full detector: up to two structurally identical backbones (weights
/// never shared), one proposal head, the fused classification head, and the
/// box-regression head.
#[derive(Clone, Debug)]
pub struct TwoStreamModel<T> {
    pub cfg: ModelConfig,
    pub rgb_backbone: Option<Vec<ConvLayer<T>>>,
    pub noise_backbone: Option<Vec<ConvLayer<T>>>,
    pub rpn: RpnParams<T>,
    pub cls_head: FcLayer<T>,
    pub bbox_head: FcLayer<T>,
    pub sketch: Option<Arc<CountSketch>>,
}

fn init_tensor<T: Scalar, R: Rng>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_vec(shape, data).unwrap()
}

fn init_conv<T: Scalar, R: Rng>(c_out: usize, c_in: usize, k: usize, rng: &mut R) -> ConvLayer<T> {
    ConvLayer {
        weight: init_tensor(&[c_out, c_in, k, k], c_in * k * k, rng),
        bias: Tensor::zeros(&[c_out]),
    }
}

fn init_fc<T: Scalar, R: Rng>(m: usize, n: usize, rng: &mut R) -> FcLayer<T> {
    FcLayer {
        weight: init_tensor(&[m, n], n, rng),
        bias: Tensor::zeros(&[m]),
    }
}

fn init_backbone<T: Scalar, R: Rng>(channels: &[usize], rng: &mut R) -> Vec<ConvLayer<T>> {
    let mut layers = Vec::with_capacity(channels.len());
    let mut c_in = 3;
    for &c_out in channels {
        layers.push(init_conv(c_out, c_in, 3, rng));
        c_in = c_out;
    }
    layers
}

impl<T: Scalar> TwoStreamModel<T> {
    /// Fresh model with centered-uniform `1/√fan_in` weights drawn from the
    /// config seed.
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let c = cfg.backbone.out_channels();
        let a = cfg.anchors_per_location();

        let rgb_backbone = (cfg.stream_mode != StreamMode::NoiseOnly)
            .then(|| init_backbone(&cfg.backbone.channels, &mut rng));
        let noise_backbone = (cfg.stream_mode != StreamMode::RgbOnly)
            .then(|| init_backbone(&cfg.backbone.channels, &mut rng));

        let rpn = RpnParams {
            conv: init_conv(c, c, 3, &mut rng),
            cls: init_conv(2 * a, c, 1, &mut rng),
            reg: init_conv(4 * a, c, 1, &mut rng),
        };

        let head_dim = cfg.head_input_dim();
        let cls_head = init_fc(cfg.class_mode.n_classes(), head_dim, &mut rng);
        let bbox_head = init_fc(4, c * cfg.roi_size * cfg.roi_size, &mut rng);

        let sketch = (cfg.stream_mode == StreamMode::Fused && cfg.fusion == FusionKind::Compact)
            .then(|| CountSketch::new(c, cfg.sketch_dim, cfg.seed ^ 0x5ce7c4u64).map(Arc::new))
            .transpose()?;

        Ok(TwoStreamModel {
            cfg,
            rgb_backbone,
            noise_backbone,
            rpn,
            cls_head,
            bbox_head,
            sketch,
        })
    }

    /// Visit every parameter tensor with its checkpoint name, in a fixed
    /// order.
    pub fn visit_params<'a>(&'a self, mut f: impl FnMut(String, &'a Tensor<T>)) {
        let conv = |prefix: String, l: &'a ConvLayer<T>, f: &mut dyn FnMut(String, &'a Tensor<T>)| {
            f(format!("{prefix}/w"), &l.weight);
            f(format!("{prefix}/b"), &l.bias);
        };
        if let Some(layers) = &self.rgb_backbone {
            for (i, l) in layers.iter().enumerate() {
                conv(format!("rgb/conv{i}"), l, &mut f);
            }
        }
        if let Some(layers) = &self.noise_backbone {
            for (i, l) in layers.iter().enumerate() {
                conv(format!("noise/conv{i}"), l, &mut f);
            }
        }
        conv("rpn/conv".into(), &self.rpn.conv, &mut f);
        conv("rpn/cls".into(), &self.rpn.cls, &mut f);
        conv("rpn/reg".into(), &self.rpn.reg, &mut f);
        f("head/cls/w".into(), &self.cls_head.weight);
        f("head/cls/b".into(), &self.cls_head.bias);
        f("head/bbox/w".into(), &self.bbox_head.weight);
        f("head/bbox/b".into(), &self.bbox_head.bias);
    }

    /// Mutable variant of [`TwoStreamModel::visit_params`], same order.
    pub fn visit_params_mut(&mut self, mut f: impl FnMut(String, &mut Tensor<T>)) {
        let conv =
            |prefix: String, l: &mut ConvLayer<T>, f: &mut dyn FnMut(String, &mut Tensor<T>)| {
                f(format!("{prefix}/w"), &mut l.weight);
                f(format!("{prefix}/b"), &mut l.bias);
            };
        if let Some(layers) = &mut self.rgb_backbone {
            for (i, l) in layers.iter_mut().enumerate() {
                conv(format!("rgb/conv{i}"), l, &mut f);
            }
        }
        if let Some(layers) = &mut self.noise_backbone {
            for (i, l) in layers.iter_mut().enumerate() {
                conv(format!("noise/conv{i}"), l, &mut f);
            }
        }
        conv("rpn/conv".into(), &mut self.rpn.conv, &mut f);
        conv("rpn/cls".into(), &mut self.rpn.cls, &mut f);
        conv("rpn/reg".into(), &mut self.rpn.reg, &mut f);
        f("head/cls/w".into(), &mut self.cls_head.weight);
        f("head/cls/b".into(), &mut self.cls_head.bias);
        f("head/bbox/w".into(), &mut self.bbox_head.weight);
        f("head/bbox/b".into(), &mut self.bbox_head.bias);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(|_, t| n += t.numel());
        n
    }

    /// Elementwise conversion of all parameters (for the `f64` gradient-check
    /// instantiation of the same model).
    pub fn cast<U: Scalar>(&self) -> TwoStreamModel<U> {
        let conv = |l: &ConvLayer<T>| ConvLayer {
            weight: l.weight.cast(),
            bias: l.bias.cast(),
        };
        TwoStreamModel {
            cfg: self.cfg.clone(),
            rgb_backbone: self.rgb_backbone.as_ref().map(|ls| ls.iter().map(conv).collect()),
            noise_backbone: self
                .noise_backbone
                .as_ref()
                .map(|ls| ls.iter().map(conv).collect()),
            rpn: RpnParams {
                conv: conv(&self.rpn.conv),
                cls: conv(&self.rpn.cls),
                reg: conv(&self.rpn.reg),
            },
            cls_head: FcLayer {
                weight: self.cls_head.weight.cast(),
                bias: self.cls_head.bias.cast(),
            },
            bbox_head: FcLayer {
                weight: self.bbox_head.weight.cast(),
                bias: self.bbox_head.bias.cast(),
            },
            sketch: self.sketch.clone(),
        }
    }
}

// ── Checkpoint serialization ────────────────────────────────────────

fn meta(values: &[f32]) -> Tensor<f32> {
    Tensor::from_vec(&[values.len()], values.to_vec()).unwrap()
}

fn seed_parts(seed: u64) -> Vec<f32> {
    (0..4).map(|i| ((seed >> (16 * i)) & 0xffff) as f32).collect()
}

fn seed_from_parts(parts: &[f32]) -> u64 {
    parts
        .iter()
        .enumerate()
        .map(|(i, &p)| (p as u64) << (16 * i))
        .sum()
}

impl TwoStreamModel<f32> {
    /// Write parameters plus a metadata block (mode, geometry, fusion type,
    /// sketch tables) to a checkpoint file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut owned: Vec<(String, Tensor<f32>)> = Vec::new();
        owned.push((
            "__meta/model".into(),
            meta(&[
                match self.cfg.class_mode {
                    ClassMode::TwoClass => 0.0,
                    ClassMode::MultiClass => 1.0,
                },
                match self.cfg.stream_mode {
                    StreamMode::Fused => 0.0,
                    StreamMode::RgbOnly => 1.0,
                    StreamMode::NoiseOnly => 2.0,
                },
                match self.cfg.rpn_stream {
                    RpnStream::Rgb => 0.0,
                    RpnStream::Noise => 1.0,
                },
                match self.cfg.fusion {
                    FusionKind::Full => 0.0,
                    FusionKind::Compact => 1.0,
                },
                self.cfg.sketch_dim as f32,
                self.cfg.backbone.input_side as f32,
                self.cfg.roi_size as f32,
            ]),
        ));
        owned.push((
            "__meta/channels".into(),
            meta(&self.cfg.backbone.channels.iter().map(|&c| c as f32).collect::<Vec<_>>()),
        ));
        owned.push(("__meta/anchor_scales".into(), meta(&self.cfg.anchor_scales)));
        owned.push(("__meta/anchor_ratios".into(), meta(&self.cfg.anchor_ratios)));
        owned.push(("__meta/seed".into(), meta(&seed_parts(self.cfg.seed))));
        if let Some(sk) = &self.sketch {
            owned.push(("__meta/sketch_seed".into(), meta(&seed_parts(sk.seed))));
            let as_f32 = |v: &[u32]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
            let sg_f32 = |v: &[i8]| v.iter().map(|&x| x as f32).collect::<Vec<_>>();
            owned.push(("__sketch/h1".into(), meta(&as_f32(&sk.h1))));
            owned.push(("__sketch/s1".into(), meta(&sg_f32(&sk.s1))));
            owned.push(("__sketch/h2".into(), meta(&as_f32(&sk.h2))));
            owned.push(("__sketch/s2".into(), meta(&sg_f32(&sk.s2))));
        }
        self.visit_params(|name, t| owned.push((name, t.clone())));
        let entries: Vec<(String, &Tensor<f32>)> =
            owned.iter().map(|(n, t)| (n.clone(), t)).collect();
        save_checkpoint(path, &entries)
    }

    /// Load a model saved by [`TwoStreamModel::save`].
    pub fn load(path: &Path) -> Result<Self> {
        let entries = load_checkpoint(path)?;
        let lookup = |name: &str| -> Result<&Tensor<f32>> {
            entries
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor '{name}'")))
        };

        let m = lookup("__meta/model")?.data().to_vec();
        if m.len() != 7 {
            return Err(Error::Checkpoint("malformed model metadata".into()));
        }
        let channels: Vec<usize> = lookup("__meta/channels")?
            .data()
            .iter()
            .map(|&c| c as usize)
            .collect();
        let cfg = ModelConfig {
            backbone: BackboneConfig {
                channels,
                input_side: m[5] as usize,
            },
            class_mode: if m[0] == 0.0 { ClassMode::TwoClass } else { ClassMode::MultiClass },
            stream_mode: match m[1] as usize {
                0 => StreamMode::Fused,
                1 => StreamMode::RgbOnly,
                _ => StreamMode::NoiseOnly,
            },
            rpn_stream: if m[2] == 0.0 { RpnStream::Rgb } else { RpnStream::Noise },
            fusion: if m[3] == 0.0 { FusionKind::Full } else { FusionKind::Compact },
            sketch_dim: m[4] as usize,
            anchor_scales: lookup("__meta/anchor_scales")?.data().to_vec(),
            anchor_ratios: lookup("__meta/anchor_ratios")?.data().to_vec(),
            roi_size: m[6] as usize,
            seed: seed_from_parts(lookup("__meta/seed")?.data()),
        };

        let mut model = TwoStreamModel::new(cfg)?;
        if model.sketch.is_some() {
            let to_u32 = |v: &[f32]| v.iter().map(|&x| x as u32).collect::<Vec<_>>();
            let to_i8 = |v: &[f32]| v.iter().map(|&x| x as i8).collect::<Vec<_>>();
            model.sketch = Some(Arc::new(CountSketch::from_tables(
                model.cfg.sketch_dim,
                seed_from_parts(lookup("__meta/sketch_seed")?.data()),
                to_u32(lookup("__sketch/h1")?.data()),
                to_i8(lookup("__sketch/s1")?.data()),
                to_u32(lookup("__sketch/h2")?.data()),
                to_i8(lookup("__sketch/s2")?.data()),
            )?));
        }

        let mut missing: Option<String> = None;
        model.visit_params_mut(|name, t| {
            match entries.iter().find(|(n, _)| *n == name) {
                Some((_, loaded)) if loaded.shape() == t.shape() => {
                    *t = loaded.clone();
                }
                Some(_) => missing = Some(format!("tensor '{name}' has wrong shape")),
                None => missing = Some(format!("missing tensor '{name}'")),
            }
        });
        if let Some(msg) = missing {
            return Err(Error::Checkpoint(msg));
        }
        Ok(model)
    }
}
