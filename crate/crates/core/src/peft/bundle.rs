use std::fmt;
use std::str::FromStr;

use crate::encoder::{EncoderWeights, Mlp, TargetId};
use crate::error::{Error, Result};
use crate::numerics::rng::{seeded, substream};
use crate::numerics::{gemm, Matrix};

/// Standard deviation of the Gaussian `A` initialisation.
pub const A_INIT_STD: f64 = 0.02;

/// Guard below which a DoRA column norm counts as zero.
const NORM_GUARD: f64 = 1e-12;

/// Fine-tuning method; the three low-rank adapters plus the two
/// full-weight baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Lora,
    Dora,
    Cola,
    /// Every weight trainable; stored as `ΔW = W − W0`.
    Full,
    /// Fresh Xavier-initialised encoder, no `W0`.
    Scratch,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Lora, Method::Dora, Method::Cola, Method::Full, Method::Scratch];

    pub fn name(self) -> &'static str {
        match self {
            Method::Lora => "lora",
            Method::Dora => "dora",
            Method::Cola => "cola",
            Method::Full => "full",
            Method::Scratch => "scratch",
        }
    }

    pub fn code(self) -> u32 {
        match self {
            Method::Lora => 1,
            Method::Dora => 2,
            Method::Cola => 3,
            Method::Full => 4,
            Method::Scratch => 5,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        Method::ALL.into_iter().find(|m| m.code() == code)
    }

    pub fn is_low_rank(self) -> bool {
        matches!(self, Method::Lora | Method::Dora | Method::Cola)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }
}

/// One `(B, A)` factor pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRank {
    /// `d × r`
    pub b: Matrix,
    /// `r × k`
    pub a: Matrix,
}

impl LowRank {
    fn init(d: usize, k: usize, rank: usize, rng: &mut impl rand::Rng) -> Self {
        LowRank {
            b: Matrix::zeros(d, rank),
            a: Matrix::gaussian(rank, k, A_INIT_STD, rng),
        }
    }

    /// `B·A`.
    pub fn product(&self) -> Matrix {
        self.b.mul_unchecked(&self.a)
    }
}

/// Adapter state for one encoder matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetAdapter {
    pub target: TargetId,
    /// DoRA magnitude vector `m′` (length `k`).
    pub magnitude: Option<Vec<f64>>,
    /// Initialised factor pairs; the last one is the trainable stage.
    pub stages: Vec<LowRank>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BundleMeta {
    pub class_names: Vec<String>,
    pub healthy_class: usize,
    pub seed: u64,
    pub dataset_fingerprint: String,
}

/// Configuration for [`adapter_init`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterSpec {
    pub method: Method,
    pub rank: usize,
    pub alpha: f64,
    /// CoLA chain length `l`.
    pub chain_length: usize,
    /// Adapted matrices; `None` means every attention projection.
    pub targets: Option<Vec<TargetId>>,
}

impl AdapterSpec {
    pub fn new(method: Method) -> Self {
        AdapterSpec {
            method,
            rank: 8,
            alpha: 8.0,
            chain_length: 3,
            targets: None,
        }
    }
}

/// Per-task payload stored in the library.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterBundle {
    pub task: String,
    pub method: Method,
    pub rank: usize,
    pub alpha: f64,
    pub chain_length: usize,
    /// Sorted by target; empty for the full-weight methods.
    pub targets: Vec<TargetAdapter>,
    /// `ΔW` for [`Method::Full`], the whole encoder for [`Method::Scratch`].
    pub encoder: Option<EncoderWeights>,
    pub classifier: Mlp,
    pub meta: BundleMeta,
}

/// Creates a fresh bundle: `A ~ N(0, 0.02²)`, `B = 0`, DoRA magnitudes set to
/// the column norms of `W0`, CoLA with only its first stage.
pub fn adapter_init(
    task: &str,
    spec: &AdapterSpec,
    w0: &EncoderWeights,
    classes: usize,
    seed: u64,
) -> Result<AdapterBundle> {
    let mut rng = seeded(seed);
    let base = w0.without_head();
    let mut targets = Vec::new();
    let mut encoder = None;

    match spec.method {
        Method::Lora | Method::Dora | Method::Cola => {
            if spec.rank == 0 {
                return Err(Error::invalid("adapter rank must be at least 1"));
            }
            if !(spec.alpha.is_finite() && spec.alpha > 0.0) {
                return Err(Error::invalid("adapter alpha must be positive"));
            }
            if spec.method == Method::Cola && spec.chain_length == 0 {
                return Err(Error::invalid("CoLA chain length must be at least 1"));
            }
            let mut ids = spec.targets.clone().unwrap_or_else(|| base.all_targets());
            if ids.is_empty() {
                return Err(Error::invalid("no adapter targets given"));
            }
            ids.sort();
            ids.dedup();
            for id in ids {
                let w = &base.target(id)?.weight;
                let (d, k) = w.shape();
                if spec.rank > d.min(k) {
                    return Err(Error::invalid(format!(
                        "rank {} exceeds min(d, k) = {} for {}",
                        spec.rank,
                        d.min(k),
                        id.name()
                    )));
                }
                let magnitude = if spec.method == Method::Dora {
                    Some(w.column_norms()?)
                } else {
                    None
                };
                targets.push(TargetAdapter {
                    target: id,
                    magnitude,
                    stages: vec![LowRank::init(d, k, spec.rank, &mut rng)],
                });
            }
        }
        Method::Full => encoder = Some(base.zeros_like()),
        Method::Scratch => encoder = Some(EncoderWeights::xavier(base.config, false, &mut rng)?),
    }
    let classifier = Mlp::classifier(base.config.hidden, classes, &mut rng)?;
    Ok(AdapterBundle {
        task: task.to_string(),
        method: spec.method,
        rank: if spec.method.is_low_rank() { spec.rank } else { 0 },
        alpha: if spec.method.is_low_rank() { spec.alpha } else { 0.0 },
        chain_length: match spec.method {
            Method::Cola => spec.chain_length,
            Method::Lora | Method::Dora => 1,
            _ => 0,
        },
        targets,
        encoder,
        classifier,
        meta: BundleMeta {
            seed,
            ..BundleMeta::default()
        },
    })
}

/// Effective weight of one adapted matrix.
pub fn effective_weight(w0: &Matrix, adapter: &TargetAdapter, scale: f64) -> Result<Matrix> {
    Ok(dora_parts(w0, adapter, scale)?.0)
}

/// Returns the effective weight, the pre-normalisation `V` and its column
/// norms (the latter two only for DoRA).
fn dora_parts(
    w0: &Matrix,
    adapter: &TargetAdapter,
    scale: f64,
) -> Result<(Matrix, Option<(Matrix, Vec<f64>)>)> {
    let mut v = w0.clone();
    for st in &adapter.stages {
        if st.b.rows() != w0.rows() || st.a.cols() != w0.cols() || st.b.cols() != st.a.rows() {
            return Err(Error::dim(format!(
                "{}: factors {:?}·{:?} do not fit {:?}",
                adapter.target.name(),
                st.b.shape(),
                st.a.shape(),
                w0.shape()
            )));
        }
        gemm(scale, &st.b, false, &st.a, false, 1.0, &mut v);
    }
    let Some(m) = &adapter.magnitude else {
        return Ok((v, None));
    };
    if m.len() != w0.cols() {
        return Err(Error::dim("magnitude length differs from column count"));
    }
    let norms = v.column_norms()?;
    if let Some(j) = norms.iter().position(|&n| n < NORM_GUARD) {
        return Err(Error::numeric(format!(
            "{}: column {j} has zero norm",
            adapter.target.name()
        )));
    }
    let mut w = v.clone();
    let factors: Vec<f64> = m.iter().zip(&norms).map(|(m, n)| m / n).collect();
    for i in 0..w.rows() {
        for (x, f) in w.row_mut(i).iter_mut().zip(&factors) {
            *x *= f;
        }
    }
    Ok((w, Some((v, norms))))
}

/// Freezes the current CoLA stage and starts the next one (`B = 0`, fresh
/// Gaussian `A`), leaving the effective weight unchanged.
pub fn cola_advance_stage(bundle: &mut AdapterBundle) -> Result<()> {
    if bundle.method != Method::Cola {
        return Err(Error::state(format!("{} bundles have no chain", bundle.method)));
    }
    let current = bundle.active_stage();
    if current + 1 >= bundle.chain_length {
        return Err(Error::state(format!(
            "chain of length {} is already at its last stage",
            bundle.chain_length
        )));
    }
    let mut rng = substream(bundle.meta.seed, current as u64 + 1);
    for t in &mut bundle.targets {
        let (d, k) = (t.stages[0].b.rows(), t.stages[0].a.cols());
        t.stages.push(LowRank::init(d, k, bundle.rank, &mut rng));
    }
    Ok(())
}

impl AdapterBundle {
    /// `α / r`.
    pub fn scale(&self) -> f64 {
        if self.rank == 0 {
            0.0
        } else {
            self.alpha / self.rank as f64
        }
    }

    /// Zero-based index of the trainable CoLA stage (0 for other methods).
    pub fn active_stage(&self) -> usize {
        self.targets.first().map_or(0, |t| t.stages.len() - 1)
    }

    pub fn classes(&self) -> usize {
        self.classifier.classes()
    }

    pub fn target_ids(&self) -> Vec<TargetId> {
        self.targets.iter().map(|t| t.target).collect()
    }

    /// Encoder weights actually used by this task. `W0` is only read.
    pub fn resolve(&self, w0: &EncoderWeights) -> Result<EncoderWeights> {
        match self.method {
            Method::Scratch => self
                .encoder
                .clone()
                .ok_or_else(|| Error::state("scratch bundle carries no encoder")),
            Method::Full => {
                let delta = self
                    .encoder
                    .as_ref()
                    .ok_or_else(|| Error::state("full fine-tune bundle carries no weight delta"))?;
                let mut w = w0.without_head();
                if w.config != delta.config {
                    return Err(Error::dim("weight delta was built for a different encoder"));
                }
                for (dst, src) in w.params_mut().into_iter().zip(delta.named_params()) {
                    for (a, b) in dst.iter_mut().zip(src.1) {
                        *a += b;
                    }
                }
                Ok(w)
            }
            _ => {
                let mut w = w0.without_head();
                let scale = self.scale();
                for t in &self.targets {
                    let eff = effective_weight(&w0.target(t.target)?.weight, t, scale)?;
                    w.target_mut(t.target)?.weight = eff;
                }
                Ok(w)
            }
        }
    }

    /// Trainable tensors, named, in optimiser order. `W0` never appears.
    pub fn trainable_named(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = Vec::new();
        let cola = self.method == Method::Cola;
        for t in &self.targets {
            let name = t.target.name();
            if let Some(m) = &t.magnitude {
                out.push((format!("{name}.magnitude"), m));
            }
            let stage = t.stages.len() - 1;
            let st = &t.stages[stage];
            let tag = if cola { format!(".stage{}", stage + 1) } else { String::new() };
            out.push((format!("{name}{tag}.B"), st.b.data()));
            out.push((format!("{name}{tag}.A"), st.a.data()));
        }
        if let Some(enc) = &self.encoder {
            let prefix = if self.method == Method::Full { "delta" } else { "encoder" };
            for (n, p) in enc.named_params() {
                out.push((format!("{prefix}.{n}"), p));
            }
        }
        for (n, p) in self.classifier.named_params() {
            out.push((format!("classifier.{n}"), p));
        }
        out
    }

    pub fn trainable_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for t in &mut self.targets {
            let TargetAdapter { magnitude, stages, .. } = t;
            if let Some(m) = magnitude {
                out.push(m);
            }
            let st = stages.last_mut().expect("at least one stage");
            out.push(st.b.data_mut());
            out.push(st.a.data_mut());
        }
        if let Some(enc) = &mut self.encoder {
            out.extend(enc.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    pub fn trainable_count(&self) -> usize {
        self.trainable_named().iter().map(|(_, p)| p.len()).sum()
    }

    /// Adapter parameters (trainable part, classifier excluded).
    pub fn adapter_trainable_count(&self) -> usize {
        self.trainable_count() - self.classifier.num_params()
    }

    /// Maps gradients w.r.t. the resolved encoder and the classifier onto
    /// [`trainable_mut`](Self::trainable_mut) order.
    pub fn chain_gradients(
        &self,
        w0: &EncoderWeights,
        encoder_grads: &EncoderWeights,
        classifier_grads: &Mlp,
    ) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::new();
        let scale = self.scale();
        for t in &self.targets {
            let g = &encoder_grads.target(t.target)?.weight;
            let w0t = &w0.target(t.target)?.weight;
            let stage = t.stages.last().expect("at least one stage");
            // dL/dV, where V = W0 + s·ΣBA.
            let dv = match &t.magnitude {
                None => g.clone(),
                Some(m) => {
                    let (_, parts) = dora_parts(w0t, t, scale)?;
                    let (v, norms) = parts.expect("dora parts");
                    let (d, k) = v.shape();
                    let mut dm = vec![0.0; k];
                    let mut dot = vec![0.0; k];
                    for i in 0..d {
                        for j in 0..k {
                            dot[j] += g.get(i, j) * v.get(i, j);
                        }
                    }
                    for j in 0..k {
                        dm[j] = dot[j] / norms[j];
                    }
                    let mut dv = Matrix::zeros(d, k);
                    for i in 0..d {
                        for j in 0..k {
                            let n = norms[j];
                            let vhat = v.get(i, j) / n;
                            dv.set(i, j, m[j] / n * (g.get(i, j) - vhat * dot[j] / n));
                        }
                    }
                    out.push(dm);
                    dv
                }
            };
            let mut db = Matrix::zeros(stage.b.rows(), stage.b.cols());
            gemm(scale, &dv, false, &stage.a, true, 0.0, &mut db);
            let mut da = Matrix::zeros(stage.a.rows(), stage.a.cols());
            gemm(scale, &stage.b, true, &dv, false, 0.0, &mut da);
            out.push(db.into_data());
            out.push(da.into_data());
        }
        if self.encoder.is_some() {
            for (_, p) in encoder_grads.named_params() {
                out.push(p.to_vec());
            }
        }
        for (_, p) in classifier_grads.named_params() {
            out.push(p.to_vec());
        }
        Ok(out)
    }

    /// Snaps every stored value onto the `f32` grid used on disk.
    pub fn round_to_f32(&mut self) {
        for t in &mut self.targets {
            if let Some(m) = &mut t.magnitude {
                m.iter_mut().for_each(|v| *v = *v as f32 as f64);
            }
            for st in &mut t.stages {
                st.b.round_to_f32();
                st.a.round_to_f32();
            }
        }
        if let Some(e) = &mut self.encoder {
            e.round_to_f32();
        }
        self.classifier.round_to_f32();
    }

    /// Every stored tensor, named, in serialisation order.
    pub fn stored_tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out = Vec::new();
        for t in &self.targets {
            let name = t.target.name();
            if let Some(m) = &t.magnitude {
                out.push((format!("{name}.magnitude"), vec![1, m.len()], m.as_slice()));
            }
            for (j, st) in t.stages.iter().enumerate() {
                let (br, bc) = st.b.shape();
                let (ar, ac) = st.a.shape();
                out.push((format!("{name}.stage{}.B", j + 1), vec![br, bc], st.b.data()));
                out.push((format!("{name}.stage{}.A", j + 1), vec![ar, ac], st.a.data()));
            }
        }
        for l in self.classifier.layers.iter().enumerate() {
            let (i, lin) = l;
            let (r, c) = lin.weight.shape();
            out.push((format!("classifier.fc{i}.weight"), vec![r, c], lin.weight.data()));
            out.push((format!("classifier.fc{i}.bias"), vec![lin.bias.len()], lin.bias.as_slice()));
        }
        out
    }

    /// Parameters stored in the bundle (all tensors, including the
    /// classifier and any encoder payload).
    pub fn stored_params(&self) -> usize {
        let own: usize = self.stored_tensors().iter().map(|(_, _, d)| d.len()).sum();
        own + self.encoder.as_ref().map_or(0, EncoderWeights::num_params)
    }

    /// Classifier parameters alone.
    pub fn classifier_params(&self) -> usize {
        self.classifier.num_params()
    }
}
