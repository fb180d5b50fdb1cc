//! Multi-source evidential fusion model.
//!
//! Every source runs `encoder -> evidential layer`, giving one simple mass
//! per source. The masses are fused with Dempster's rule and decided with the
//! pignistic transform. Each source also carries an auxiliary logit head used
//! only by the training objective
//!
//! ```text
//! L = L_main + sum_k lambda_k * L_aux_k
//! ```
//!
//! where both terms are class-weighted negative log-likelihoods averaged over
//! the batch.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::belief::{degree_of_conflict, Frame, SimpleMass};
use crate::encoders::{check_features, AuxHead, Encoder, EncoderDims, EncoderKind, Mode};
use crate::enn::{init_enn, EnnLayout, DEFAULT_PROTOTYPES};
use crate::error::{Error, Result};
use crate::params::ParamVector;
use crate::scalar::Real;
use crate::seed::SeedRng;
use crate::tape::{softmax, Tape, Var, PROB_FLOOR};

/// Auxiliary weight for structured sources (`alpha`).
pub const DEFAULT_STRUCTURED_AUX_WEIGHT: f64 = 2.0;
/// Auxiliary weight for text sources (`beta`).
pub const DEFAULT_TEXT_AUX_WEIGHT: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub prototypes: usize,
    pub encoder: EncoderDims,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            prototypes: DEFAULT_PROTOTYPES,
            encoder: EncoderDims::default(),
        }
    }
}

/// What a source reads from a sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceInput {
    /// Column indices of the preprocessed structured matrix.
    Columns(Vec<usize>),
    /// A named precomputed embedding.
    Embedding(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceSpec {
    pub name: String,
    pub encoder: EncoderKind,
    pub input: SourceInput,
    pub aux_weight: f64,
}

impl SourceSpec {
    pub fn input_dim_hint(&self) -> Option<usize> {
        match &self.input {
            SourceInput::Columns(cols) => Some(cols.len()),
            SourceInput::Embedding(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceModel {
    pub spec: SourceSpec,
    pub input_dim: usize,
    pub encoder: Encoder,
    pub enn: EnnLayout,
    pub aux: AuxHead,
}

/// One training or evaluation example: an input vector per source.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub inputs: Vec<Vec<T>>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prediction<T> {
    pub fused_mass: SimpleMass<T>,
    pub probs: Vec<T>,
    pub per_source_masses: Vec<SimpleMass<T>>,
    pub predicted_class: usize,
    pub ignorance: T,
    /// `conflict[i][j]` is the degree of conflict between sources `i` and `j`.
    pub conflict: Vec<Vec<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub main: T,
    pub aux: Vec<T>,
    pub overall: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionModel<T> {
    frame: Frame,
    config: ModelConfig,
    sources: Vec<SourceModel>,
    class_weights: Vec<T>,
    params: ParamVector<T>,
}

/// Tape handles for one recorded sample.
pub struct SampleVars {
    pub source_masses: Vec<Var>,
    pub logits: Vec<Var>,
    pub fused: Var,
    pub probs: Var,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: PartialOrd>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> FusionModel<T> {
    /// Allocates and randomly initializes every encoder and head. Prototypes
    /// are zero until [`FusionModel::init_prototypes`] runs.
    pub fn new(
        frame: Frame,
        config: ModelConfig,
        sources: Vec<(SourceSpec, usize)>,
        class_weights: Vec<T>,
        rng: &mut SeedRng,
    ) -> Result<Self> {
        validate_sources(&frame, &config, &sources, &class_weights)?;
        let mut params = ParamVector::new();
        let m = frame.len();
        let sources = sources
            .into_iter()
            .enumerate()
            .map(|(k, (spec, input_dim))| {
                let prefix = format!("source{k}.{}", spec.name);
                let encoder = Encoder::alloc(
                    spec.encoder,
                    &mut params,
                    &format!("{prefix}.encoder"),
                    input_dim,
                    &config.encoder,
                    rng,
                );
                let enn = EnnLayout::alloc(
                    &mut params,
                    &format!("{prefix}.enn"),
                    config.prototypes,
                    encoder.output_dim(),
                    m,
                );
                let aux = AuxHead::alloc(&mut params, &prefix, encoder.output_dim(), m, rng);
                SourceModel {
                    spec,
                    input_dim,
                    encoder,
                    enn,
                    aux,
                }
            })
            .collect();
        Ok(FusionModel {
            frame,
            config,
            sources,
            class_weights,
            params,
        })
    }

    /// Rebuilds a model around stored parameters. The index map must match
    /// the one the layout produces.
    pub fn from_parts(
        frame: Frame,
        config: ModelConfig,
        sources: Vec<(SourceSpec, usize)>,
        class_weights: Vec<T>,
        params: ParamVector<T>,
    ) -> Result<Self> {
        let mut rng = crate::seed::substream(0, "layout");
        let mut model = FusionModel::new(frame, config, sources, class_weights, &mut rng)?;
        if model.params.entries() != params.entries() || model.params.len() != params.values().len() {
            return Err(Error::Data(
                "stored parameter index map does not match the model layout".into(),
            ));
        }
        model.params = params;
        Ok(model)
    }

    /// Places each source's prototypes by k-means on the eval-mode encoder
    /// outputs of `samples`.
    pub fn init_prototypes(&mut self, samples: &[Sample<T>], rng: &mut SeedRng) -> Result<()> {
        let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
        for k in 0..self.sources.len() {
            let source = &self.sources[k];
            let features = samples
                .iter()
                .map(|s| {
                    let x = s.inputs.get(k).ok_or_else(|| missing(source))?;
                    source.encoder.encode(&self.params, x, Mode::Eval)
                })
                .collect::<Result<Vec<_>>>()?;
            let enn = init_enn(&features, &labels, self.frame.len(), self.config.prototypes, rng)?;
            let layout = self.sources[k].enn.clone();
            layout.write(&mut self.params, &enn)?;
        }
        Ok(())
    }

    pub fn frame(&self) -> &Frame {
        &self.frame
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn sources(&self) -> &[SourceModel] {
        &self.sources
    }

    pub fn class_weights(&self) -> &[T] {
        &self.class_weights
    }

    pub fn params(&self) -> &ParamVector<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector<T> {
        &mut self.params
    }

    pub fn aux_weights(&self) -> Vec<T> {
        self.sources.iter().map(|s| T::lit(s.spec.aux_weight)).collect()
    }

    /// Records the full forward pass of one sample.
    pub fn record(&self, tape: &mut Tape<'_, T>, inputs: &[Vec<T>], mode: &mut Mode<'_>) -> Result<SampleVars> {
        if inputs.len() != self.sources.len() {
            return Err(match self.sources.get(inputs.len()) {
                Some(source) => missing(source),
                None => Error::dims("sample sources", self.sources.len(), inputs.len()),
            });
        }
        let mut source_masses = Vec::with_capacity(inputs.len());
        let mut logits = Vec::with_capacity(inputs.len());
        for (source, x) in self.sources.iter().zip(inputs) {
            check_features(x, source.input_dim, &format!("input of source {:?}", source.spec.name))?;
            let xv = tape.constant(x.clone());
            let z = source.encoder.record(tape, xv, mode);
            source_masses.push(source.enn.record(tape, z)?);
            logits.push(source.aux.record(tape, z));
        }
        let mut fused = source_masses[0];
        for &m in &source_masses[1..] {
            fused = tape.combine(fused, m)?;
        }
        let probs = tape.pignistic(fused);
        Ok(SampleVars {
            source_masses,
            logits,
            fused,
            probs,
        })
    }

    pub fn forward(&self, inputs: &[Vec<T>], mut mode: Mode<'_>) -> Result<Prediction<T>> {
        let mut tape = Tape::new(self.params.values());
        let vars = self.record(&mut tape, inputs, &mut mode)?;
        let fused_mass = SimpleMass::from_vec(tape.value(vars.fused).to_vec())?;
        let per_source_masses = vars
            .source_masses
            .iter()
            .map(|&v| SimpleMass::from_vec(tape.value(v).to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let probs = tape.value(vars.probs).to_vec();
        let conflict = per_source_masses
            .iter()
            .map(|a| {
                per_source_masses
                    .iter()
                    .map(|b| degree_of_conflict(a, b))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Prediction {
            ignorance: *fused_mass.ignorance(),
            predicted_class: argmax(&probs),
            fused_mass,
            probs,
            per_source_masses,
            conflict,
        })
    }

    /// Eval-mode forward over every sample.
    pub fn predict_batch(&self, samples: &[Vec<Vec<T>>]) -> Result<Vec<Prediction<T>>> {
        samples.iter().map(|s| self.forward(s, Mode::Eval)).collect()
    }

    fn check_batch(&self, batch: &[Sample<T>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidInput("empty batch".into()));
        }
        let m = self.frame.len();
        if let Some(s) = batch.iter().find(|s| s.label >= m) {
            return Err(Error::InvalidInput(format!("label {} outside {m} classes", s.label)));
        }
        Ok(())
    }

    /// Records the training objective over `batch`.
    pub fn record_loss(
        &self,
        tape: &mut Tape<'_, T>,
        batch: &[Sample<T>],
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Var, Vec<Var>)> {
        self.check_batch(batch)?;
        let inv_n = T::one() / T::from_usize(batch.len()).expect("batch size fits");
        let mut main_terms = Vec::with_capacity(batch.len());
        let mut aux_terms = vec![Vec::with_capacity(batch.len()); self.sources.len()];
        for sample in batch {
            let vars = self.record(tape, &sample.inputs, mode)?;
            let w = self.class_weights[sample.label];
            main_terms.push((tape.nll(vars.probs, sample.label, w), inv_n));
            for (terms, &o) in aux_terms.iter_mut().zip(&vars.logits) {
                terms.push((tape.softmax_ce(o, sample.label, w), inv_n));
            }
        }
        let main = tape.weighted_sum(main_terms);
        let aux: Vec<Var> = aux_terms.into_iter().map(|t| tape.weighted_sum(t)).collect();
        let mut overall = vec![(main, T::one())];
        overall.extend(aux.iter().zip(self.aux_weights()).map(|(&a, l)| (a, l)));
        let overall = tape.weighted_sum(overall);
        Ok((overall, main, aux))
    }

    pub fn loss(&self, batch: &[Sample<T>], mut mode: Mode<'_>) -> Result<LossBreakdown<T>> {
        let mut tape = Tape::new(self.params.values());
        let (overall, main, aux) = self.record_loss(&mut tape, batch, &mut mode)?;
        Ok(LossBreakdown {
            main: tape.scalar(main),
            aux: aux.iter().map(|&a| tape.scalar(a)).collect(),
            overall: tape.scalar(overall),
        })
    }

    /// Overall loss and its exact gradient with respect to every parameter.
    pub fn loss_and_grad(&self, batch: &[Sample<T>], mut mode: Mode<'_>) -> Result<(T, Vec<T>)> {
        let mut tape = Tape::new(self.params.values());
        let (overall, _, _) = self.record_loss(&mut tape, batch, &mut mode)?;
        let loss = tape.scalar(overall);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss ({loss})")));
        }
        Ok((loss, tape.gradient(overall)))
    }

    /// Mean eval-mode overall loss, computed in chunks to bound tape size.
    pub fn mean_loss(&self, samples: &[Sample<T>]) -> Result<T> {
        const CHUNK: usize = 256;
        self.check_batch(samples)?;
        let n = T::from_usize(samples.len()).expect("count fits");
        let mut total = T::zero();
        for chunk in samples.chunks(CHUNK) {
            let l = self.loss(chunk, Mode::Eval)?.overall;
            total = total + l * T::from_usize(chunk.len()).expect("count fits");
        }
        Ok(total / n)
    }
}

fn missing(source: &SourceModel) -> Error {
    Error::Data(format!("sample has no input for source {:?}", source.spec.name))
}

fn validate_sources<T: Real>(
    frame: &Frame,
    config: &ModelConfig,
    sources: &[(SourceSpec, usize)],
    class_weights: &[T],
) -> Result<()> {
    if sources.is_empty() {
        return Err(Error::Config("a model needs at least one source".into()));
    }
    if config.prototypes == 0 {
        return Err(Error::Config("prototype count must be positive".into()));
    }
    let dims = &config.encoder;
    if dims.hidden == 0 || dims.output == 0 || dims.text_hidden == 0 {
        return Err(Error::Config("encoder widths must be positive".into()));
    }
    if !(0.0..1.0).contains(&dims.dropout) {
        return Err(Error::Config(format!("dropout {} outside [0, 1)", dims.dropout)));
    }
    let mut names = HashSet::new();
    for (spec, dim) in sources {
        if !names.insert(spec.name.as_str()) {
            return Err(Error::Config(format!("duplicate source name {:?}", spec.name)));
        }
        if !(spec.aux_weight >= 0.0 && spec.aux_weight.is_finite()) {
            return Err(Error::Config(format!(
                "auxiliary weight of {:?} must be finite and >= 0",
                spec.name
            )));
        }
        if *dim == 0 {
            return Err(Error::Config(format!("source {:?} has no input features", spec.name)));
        }
    }
    if class_weights.len() != frame.len() {
        return Err(Error::dims("class weights", frame.len(), class_weights.len()));
    }
    if class_weights.iter().any(|w| !(*w > T::zero() && w.is_finite())) {
        return Err(Error::Config("class weights must be positive".into()));
    }
    Ok(())
}

fn check_loss_inputs<T: Real>(rows: &[Vec<T>], labels: &[usize], weights: &[T]) -> Result<()> {
    if rows.len() != labels.len() {
        return Err(Error::dims("loss labels", rows.len(), labels.len()));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    for (row, &y) in rows.iter().zip(labels) {
        if row.len() != weights.len() {
            return Err(Error::dims("loss row", weights.len(), row.len()));
        }
        if y >= weights.len() {
            return Err(Error::InvalidInput(format!("label {y} outside {} classes", weights.len())));
        }
    }
    Ok(())
}

/// Class-weighted negative log-likelihood of pignistic probabilities.
pub fn loss_main<T: Real>(probs: &[Vec<T>], labels: &[usize], class_weights: &[T]) -> Result<T> {
    check_loss_inputs(probs, labels, class_weights)?;
    let floor = T::lit(PROB_FLOOR);
    let total: T = probs
        .iter()
        .zip(labels)
        .map(|(p, &y)| -class_weights[y] * p[y].max(floor).ln())
        .sum();
    Ok(total / T::from_usize(probs.len()).expect("count fits"))
}

/// Class-weighted cross entropy of softmax logits.
pub fn loss_aux<T: Real>(logits: &[Vec<T>], labels: &[usize], class_weights: &[T]) -> Result<T> {
    check_loss_inputs(logits, labels, class_weights)?;
    let total: T = logits
        .iter()
        .zip(labels)
        .map(|(o, &y)| {
            let max = o.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = o.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            -class_weights[y] * (o[y] - lse)
        })
        .sum();
    Ok(total / T::from_usize(logits.len()).expect("count fits"))
}

/// Probabilities of a logit row.
pub fn logit_probs<T: Real>(logits: &[T]) -> Vec<T> {
    softmax(logits)
}
