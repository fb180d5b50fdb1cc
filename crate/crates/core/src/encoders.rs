//! Feature encoders and auxiliary logit heads.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamVector, Slot};
use crate::scalar::Real;
use crate::seed::SeedRng;
use crate::tape::{Tape, Var};

pub const DEFAULT_HIDDEN: usize = 32;
pub const DEFAULT_OUTPUT: usize = 32;
pub const DEFAULT_TEXT_HIDDEN: usize = 128;
pub const DEFAULT_DROPOUT: f64 = 0.1;
/// Layers of the MLP encoder and residual blocks of the ResNet encoder.
pub const DEPTH: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", try_from = "String")]
pub enum EncoderKind {
    Mlp,
    Resnet,
    TextHead,
}

impl std::str::FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(EncoderKind::Mlp),
            "resnet" => Ok(EncoderKind::Resnet),
            "text-head" => Ok(EncoderKind::TextHead),
            "ft-transformer" | "fttransformer" | "ft_transformer" => Err(Error::Config(
                "the FT-Transformer encoder is not available; use `mlp` or `resnet`".into(),
            )),
            other => Err(Error::Config(format!("unknown encoder kind {other:?}"))),
        }
    }
}

impl TryFrom<String> for EncoderKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl std::fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EncoderKind::Mlp => "mlp",
            EncoderKind::Resnet => "resnet",
            EncoderKind::TextHead => "text-head",
        })
    }
}

/// Widths shared by all encoders of a model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderDims {
    pub hidden: usize,
    pub output: usize,
    pub text_hidden: usize,
    pub dropout: f64,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            hidden: DEFAULT_HIDDEN,
            output: DEFAULT_OUTPUT,
            text_hidden: DEFAULT_TEXT_HIDDEN,
            dropout: DEFAULT_DROPOUT,
        }
    }
}

/// Whether dropout is active. Training mode carries the mask stream.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut SeedRng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Dense affine map `y = W x + b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub inputs: usize,
    pub outputs: usize,
    weight: Slot,
    bias: Slot,
}

impl Linear {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn alloc<T: Real>(
        params: &mut ParamVector<T>,
        name: &str,
        inputs: usize,
        outputs: usize,
        rng: &mut SeedRng,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let mut draw = || T::lit(rng.random_range(-bound..bound));
        let weight = params.alloc(format!("{name}.weight"), &[outputs, inputs], &mut draw);
        let bias = params.alloc(format!("{name}.bias"), &[outputs], &mut draw);
        Linear {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    pub fn weight_slot(&self) -> Slot {
        self.weight
    }

    pub fn bias_slot(&self) -> Slot {
        self.bias
    }

    pub fn record<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = tape.param(self.bias);
        let y = tape.matvec(w, x, self.outputs, self.inputs);
        tape.add(y, b)
    }
}

fn dropout<T: Real>(tape: &mut Tape<'_, T>, x: Var, rate: f64, mode: &mut Mode<'_>) -> Var {
    let Mode::Train(rng) = mode else {
        return x;
    };
    if rate <= 0.0 {
        return x;
    }
    let keep = T::lit(1.0 / (1.0 - rate));
    let mask = (0..tape.value(x).len())
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect();
    tape.mask(x, mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Encoder {
    /// Linear-ReLU-dropout twice, then a linear projection.
    Mlp { layers: Vec<Linear>, dropout: f64 },
    /// Input projection followed by residual blocks
    /// `z + W2 dropout(relu(W1 z + b1)) + b2`.
    Resnet {
        input: Linear,
        blocks: Vec<(Linear, Linear)>,
        dropout: f64,
    },
    /// Trainable hidden layer over a frozen embedding, then a projection.
    TextHead {
        hidden: Linear,
        proj: Linear,
        dropout: f64,
    },
}

impl Encoder {
    pub fn alloc<T: Real>(
        kind: EncoderKind,
        params: &mut ParamVector<T>,
        prefix: &str,
        input_dim: usize,
        dims: &EncoderDims,
        rng: &mut SeedRng,
    ) -> Self {
        let p = |s: &str| format!("{prefix}.{s}");
        match kind {
            EncoderKind::Mlp => {
                let mut layers = Vec::with_capacity(DEPTH);
                let mut width = input_dim;
                for i in 0..DEPTH {
                    let out = if i + 1 == DEPTH { dims.output } else { dims.hidden };
                    layers.push(Linear::alloc(params, &p(&format!("layer{i}")), width, out, rng));
                    width = out;
                }
                Encoder::Mlp {
                    layers,
                    dropout: dims.dropout,
                }
            }
            EncoderKind::Resnet => {
                let input = Linear::alloc(params, &p("input"), input_dim, dims.output, rng);
                let blocks = (0..DEPTH)
                    .map(|i| {
                        let first = Linear::alloc(params, &p(&format!("block{i}.0")), dims.output, dims.hidden, rng);
                        let second = Linear::alloc(params, &p(&format!("block{i}.1")), dims.hidden, dims.output, rng);
                        (first, second)
                    })
                    .collect();
                Encoder::Resnet {
                    input,
                    blocks,
                    dropout: dims.dropout,
                }
            }
            EncoderKind::TextHead => Encoder::TextHead {
                hidden: Linear::alloc(params, &p("hidden"), input_dim, dims.text_hidden, rng),
                proj: Linear::alloc(params, &p("proj"), dims.text_hidden, dims.output, rng),
                dropout: dims.dropout,
            },
        }
    }

    pub fn kind(&self) -> EncoderKind {
        match self {
            Encoder::Mlp { .. } => EncoderKind::Mlp,
            Encoder::Resnet { .. } => EncoderKind::Resnet,
            Encoder::TextHead { .. } => EncoderKind::TextHead,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Encoder::Mlp { layers, .. } => layers[0].inputs,
            Encoder::Resnet { input, .. } => input.inputs,
            Encoder::TextHead { hidden, .. } => hidden.inputs,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Encoder::Mlp { layers, .. } => layers.last().expect("non-empty").outputs,
            Encoder::Resnet { input, .. } => input.outputs,
            Encoder::TextHead { proj, .. } => proj.outputs,
        }
    }

    /// Every dense layer, in allocation order.
    pub fn layers(&self) -> Vec<&Linear> {
        match self {
            Encoder::Mlp { layers, .. } => layers.iter().collect(),
            Encoder::Resnet { input, blocks, .. } => std::iter::once(input)
                .chain(blocks.iter().flat_map(|(a, b)| [a, b]))
                .collect(),
            Encoder::TextHead { hidden, proj, .. } => vec![hidden, proj],
        }
    }

    pub fn record<T: Real>(&self, tape: &mut Tape<'_, T>, x: Var, mode: &mut Mode<'_>) -> Var {
        match self {
            Encoder::Mlp { layers, dropout: rate } => {
                let mut h = x;
                for (i, layer) in layers.iter().enumerate() {
                    h = layer.record(tape, h);
                    if i + 1 < layers.len() {
                        h = tape.relu(h);
                        h = dropout(tape, h, *rate, mode);
                    }
                }
                h
            }
            Encoder::Resnet {
                input,
                blocks,
                dropout: rate,
            } => {
                let mut z = input.record(tape, x);
                for (first, second) in blocks {
                    let h = first.record(tape, z);
                    let h = tape.relu(h);
                    let h = dropout(tape, h, *rate, mode);
                    let h = second.record(tape, h);
                    z = tape.add(z, h);
                }
                z
            }
            Encoder::TextHead {
                hidden,
                proj,
                dropout: rate,
            } => {
                let h = hidden.record(tape, x);
                let h = tape.relu(h);
                let h = dropout(tape, h, *rate, mode);
                proj.record(tape, h)
            }
        }
    }

    /// Encodes one raw feature vector.
    pub fn encode<T: Real>(&self, params: &ParamVector<T>, x: &[T], mut mode: Mode<'_>) -> Result<Vec<T>> {
        check_features(x, self.input_dim(), "encoder input")?;
        let mut tape = Tape::new(params.values());
        let xv = tape.constant(x.to_vec());
        let z = self.record(&mut tape, xv, &mut mode);
        Ok(tape.value(z).to_vec())
    }
}

pub(crate) fn check_features<T: Real>(x: &[T], dim: usize, context: &str) -> Result<()> {
    if x.len() != dim {
        return Err(Error::dims(context, dim, x.len()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(context.into()));
    }
    Ok(())
}

/// Logit head over an encoder output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuxHead {
    pub linear: Linear,
}

impl AuxHead {
    pub fn alloc<T: Real>(params: &mut ParamVector<T>, prefix: &str, inputs: usize, classes: usize, rng: &mut SeedRng) -> Self {
        AuxHead {
            linear: Linear::alloc(params, &format!("{prefix}.aux"), inputs, classes, rng),
        }
    }

    pub fn record<T: Real>(&self, tape: &mut Tape<'_, T>, z: Var) -> Var {
        self.linear.record(tape, z)
    }

    pub fn logits<T: Real>(&self, params: &ParamVector<T>, z: &[T]) -> Result<Vec<T>> {
        check_features(z, self.linear.inputs, "auxiliary head input")?;
        let mut tape = Tape::new(params.values());
        let zv = tape.constant(z.to_vec());
        let o = self.record(&mut tape, zv);
        Ok(tape.value(o).to_vec())
    }
}
