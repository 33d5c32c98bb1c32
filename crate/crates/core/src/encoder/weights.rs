use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::config::{EncoderConfig, PositionalKind};

/// Affine map `y = x·W + b` with `W` stored `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            weight: Matrix::zeros(input, output),
            bias: vec![0.0; output],
        }
    }

    pub fn xavier<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            weight: Matrix::xavier(input, output, rng),
            bias: vec![0.0; output],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Matrix {
        let mut y = x.mul_unchecked(&self.weight);
        y.add_row_bias(&self.bias);
        y
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        LayerNorm {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    fn zeros(dim: usize) -> Self {
        LayerNorm {
            gain: vec![0.0; dim],
            bias: vec![0.0; dim],
        }
    }
}

/// The four attention projections, the ones adapters may target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Projection {
    Query,
    Key,
    Value,
    Output,
}

impl Projection {
    pub const ALL: [Projection; 4] = [
        Projection::Query,
        Projection::Key,
        Projection::Value,
        Projection::Output,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Projection::Query => "query",
            Projection::Key => "key",
            Projection::Value => "value",
            Projection::Output => "output",
        }
    }
}

/// One encoder weight matrix eligible for adaptation, e.g. `layer1.value`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TargetId {
    pub layer: usize,
    pub projection: Projection,
}

impl TargetId {
    pub fn new(layer: usize, projection: Projection) -> Self {
        TargetId { layer, projection }
    }

    pub fn name(&self) -> String {
        format!("layer{}.{}", self.layer, self.projection.name())
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::invalid(format!("unknown adapter target {s:?}"));
        let (layer, proj) = s.split_once('.').ok_or_else(bad)?;
        let layer = layer
            .strip_prefix("layer")
            .and_then(|n| n.parse().ok())
            .ok_or_else(bad)?;
        let projection = Projection::ALL
            .into_iter()
            .find(|p| p.name() == proj)
            .ok_or_else(bad)?;
        Ok(TargetId { layer, projection })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub attn_norm: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ffn_norm: LayerNorm,
}

impl EncoderLayer {
    pub fn projection(&self, p: Projection) -> &Linear {
        match p {
            Projection::Query => &self.query,
            Projection::Key => &self.key,
            Projection::Value => &self.value,
            Projection::Output => &self.output,
        }
    }

    pub fn projection_mut(&mut self, p: Projection) -> &mut Linear {
        match p {
            Projection::Query => &mut self.query,
            Projection::Key => &mut self.key,
            Projection::Value => &mut self.value,
            Projection::Output => &mut self.output,
        }
    }
}

/// Frozen foundation-model parameters (`W0`), also reused as the gradient
/// container during back-propagation.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    /// `seq_len × hidden`; fixed sinusoids or a learned table per config.
    pub positional: Matrix,
    pub layers: Vec<EncoderLayer>,
    /// Masked-reconstruction head, present while pre-training.
    pub head: Option<Linear>,
}

impl EncoderWeights {
    /// Xavier-initialised weights, identity layer norms, zero biases.
    pub fn xavier<R: Rng + ?Sized>(config: EncoderConfig, with_head: bool, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let layers = (0..config.layers)
            .map(|_| EncoderLayer {
                query: Linear::xavier(h, h, rng),
                key: Linear::xavier(h, h, rng),
                value: Linear::xavier(h, h, rng),
                output: Linear::xavier(h, h, rng),
                attn_norm: LayerNorm::identity(h),
                ffn_in: Linear::xavier(h, config.ffn, rng),
                ffn_out: Linear::xavier(config.ffn, h, rng),
                ffn_norm: LayerNorm::identity(h),
            })
            .collect();
        let positional = match config.positional {
            PositionalKind::Sinusoidal => sinusoidal_table(config.seq_len, h),
            PositionalKind::Learned => Matrix::gaussian(config.seq_len, h, 0.02, rng),
        };
        let head = with_head.then(|| Linear::xavier(h, h, rng));
        Ok(EncoderWeights {
            config,
            positional,
            layers,
            head,
        })
    }

    /// All-zero weights with identity layer norms and the configured
    /// positional table.
    pub fn degenerate(config: EncoderConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let layers = (0..config.layers)
            .map(|_| EncoderLayer {
                query: Linear::zeros(h, h),
                key: Linear::zeros(h, h),
                value: Linear::zeros(h, h),
                output: Linear::zeros(h, h),
                attn_norm: LayerNorm::identity(h),
                ffn_in: Linear::zeros(h, config.ffn),
                ffn_out: Linear::zeros(config.ffn, h),
                ffn_norm: LayerNorm::identity(h),
            })
            .collect();
        let positional = match config.positional {
            PositionalKind::Sinusoidal => sinusoidal_table(config.seq_len, h),
            PositionalKind::Learned => Matrix::zeros(config.seq_len, h),
        };
        Ok(EncoderWeights {
            config,
            positional,
            layers,
            head: None,
        })
    }

    /// Same shapes, every entry zero (gradient accumulator).
    pub fn zeros_like(&self) -> Self {
        let h = self.config.hidden;
        let f = self.config.ffn;
        EncoderWeights {
            config: self.config,
            positional: Matrix::zeros(self.config.seq_len, h),
            layers: (0..self.config.layers)
                .map(|_| EncoderLayer {
                    query: Linear::zeros(h, h),
                    key: Linear::zeros(h, h),
                    value: Linear::zeros(h, h),
                    output: Linear::zeros(h, h),
                    attn_norm: LayerNorm::zeros(h),
                    ffn_in: Linear::zeros(h, f),
                    ffn_out: Linear::zeros(f, h),
                    ffn_norm: LayerNorm::zeros(h),
                })
                .collect(),
            head: self.head.as_ref().map(|_| Linear::zeros(h, h)),
        }
    }

    pub fn target(&self, t: TargetId) -> Result<&Linear> {
        self.layers
            .get(t.layer)
            .map(|l| l.projection(t.projection))
            .ok_or_else(|| Error::invalid(format!("target {} outside the encoder", t.name())))
    }

    pub fn target_mut(&mut self, t: TargetId) -> Result<&mut Linear> {
        let name = t.name();
        self.layers
            .get_mut(t.layer)
            .map(|l| l.projection_mut(t.projection))
            .ok_or_else(|| Error::invalid(format!("target {name} outside the encoder")))
    }

    /// Every attention projection in every layer.
    pub fn all_targets(&self) -> Vec<TargetId> {
        (0..self.layers.len())
            .flat_map(|l| Projection::ALL.into_iter().map(move |p| TargetId::new(l, p)))
            .collect()
    }

    /// Named parameter slices in checkpoint order. The positional table is
    /// listed only when learned; the head only when present.
    pub fn named_params(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        if self.config.positional == PositionalKind::Learned {
            out.push(("positional".into(), self.positional.data()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layer{i}.{s}");
            for proj in Projection::ALL {
                let lin = l.projection(proj);
                out.push((p(&format!("attn.{}.weight", proj.name())), lin.weight.data()));
                out.push((p(&format!("attn.{}.bias", proj.name())), &lin.bias));
            }
            out.push((p("attn_norm.gain"), &l.attn_norm.gain));
            out.push((p("attn_norm.bias"), &l.attn_norm.bias));
            out.push((p("ffn.in.weight"), l.ffn_in.weight.data()));
            out.push((p("ffn.in.bias"), &l.ffn_in.bias));
            out.push((p("ffn.out.weight"), l.ffn_out.weight.data()));
            out.push((p("ffn.out.bias"), &l.ffn_out.bias));
            out.push((p("ffn_norm.gain"), &l.ffn_norm.gain));
            out.push((p("ffn_norm.bias"), &l.ffn_norm.bias));
        }
        if let Some(h) = &self.head {
            out.push(("head.weight".into(), h.weight.data()));
            out.push(("head.bias".into(), &h.bias));
        }
        out
    }

    /// Mutable counterpart of [`named_params`](Self::named_params), same order.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        if self.config.positional == PositionalKind::Learned {
            out.push(self.positional.data_mut());
        }
        for l in &mut self.layers {
            let EncoderLayer {
                query,
                key,
                value,
                output,
                attn_norm,
                ffn_in,
                ffn_out,
                ffn_norm,
            } = l;
            for lin in [query, key, value, output] {
                out.push(lin.weight.data_mut());
                out.push(&mut lin.bias);
            }
            out.push(&mut attn_norm.gain);
            out.push(&mut attn_norm.bias);
            out.push(ffn_in.weight.data_mut());
            out.push(&mut ffn_in.bias);
            out.push(ffn_out.weight.data_mut());
            out.push(&mut ffn_out.bias);
            out.push(&mut ffn_norm.gain);
            out.push(&mut ffn_norm.bias);
        }
        if let Some(h) = &mut self.head {
            out.push(h.weight.data_mut());
            out.push(&mut h.bias);
        }
        out
    }

    /// Trainable parameter count (fixed sinusoids excluded).
    pub fn num_params(&self) -> usize {
        self.named_params().iter().map(|(_, p)| p.len()).sum()
    }

    pub fn round_to_f32(&mut self) {
        for p in self.params_mut() {
            p.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
    }

    /// Drops the reconstruction head (fine-tuning never uses it).
    pub fn without_head(&self) -> Self {
        EncoderWeights {
            head: None,
            ..self.clone()
        }
    }

    pub fn all_finite(&self) -> bool {
        self.named_params()
            .iter()
            .all(|(_, p)| p.iter().all(|v| v.is_finite()))
    }
}

/// Fixed sine/cosine position table of the original Transformer.
pub fn sinusoidal_table(len: usize, dim: usize) -> Matrix {
    Matrix::from_fn(len, dim, |pos, i| {
        let pair = (i / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * pair / dim as f64);
        if i % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}
