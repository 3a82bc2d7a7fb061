//! Full classifier: embedding, stacked encoder layers and a pooled linear head.
//!
//! Each layer normalizes its input, runs the tri-branch temporal encoder
//! with a residual onto the un-normalized stream, then the spatial graph
//! module. Class logits come from the mean over time and channels.

use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;

use crate::autodiff::tape::{Tape, Var};
use crate::error::{invalid, Error, Result};
use crate::mce::{Embedding, Mce};
use crate::params::{Bound, Linear, ParamId, ParamStore, Rng};
use crate::sgm::{GraphMode, Sgm};
use crate::ssm::{ScanKernel, SsmConfig};
use crate::tdsse::{Tdsse, View};
use crate::tensor::{Real, Tensor};

/// Structural modification of the full model.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub enum Variant {
    #[default]
    Full,
    /// Single linear lift per value instead of the multi-scale embedding.
    NoMce,
    /// Only the raw-view encoder; same structure as [`Variant::RawOnly`].
    NoTdsse,
    /// No adjacency: the spatial stage keeps only the channel SSM.
    NoSgm,
    /// Frozen uniform adjacency.
    FixedGraph,
    NoSp,
    NoDag,
    RawOnly,
    RawDiff,
    RawFreq,
    KernelSubset(Vec<usize>),
}

impl Variant {
    /// Every named tag, with the kernel subset at its customary `{3, 5}`.
    pub fn all() -> Vec<Variant> {
        vec![
            Variant::Full,
            Variant::NoMce,
            Variant::NoTdsse,
            Variant::NoSgm,
            Variant::FixedGraph,
            Variant::NoSp,
            Variant::NoDag,
            Variant::RawOnly,
            Variant::RawDiff,
            Variant::RawFreq,
            Variant::KernelSubset(vec![3, 5]),
        ]
    }

    pub fn views(&self) -> Vec<View> {
        match self {
            Variant::NoTdsse | Variant::RawOnly => vec![View::Raw],
            Variant::RawDiff => vec![View::Raw, View::Diff],
            Variant::RawFreq => vec![View::Raw, View::Freq],
            _ => View::ALL.to_vec(),
        }
    }

    pub fn graph_mode(&self) -> GraphMode {
        match self {
            Variant::NoSgm => GraphMode::Disabled,
            Variant::FixedGraph => GraphMode::Fixed,
            _ => GraphMode::Learned,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Variant::Full => "full",
            Variant::NoMce => "no-mce",
            Variant::NoTdsse => "no-tdsse",
            Variant::NoSgm => "no-sgm",
            Variant::FixedGraph => "fixed-graph",
            Variant::NoSp => "no-sp",
            Variant::NoDag => "no-dag",
            Variant::RawOnly => "raw-only",
            Variant::RawDiff => "raw+diff",
            Variant::RawFreq => "raw+freq",
            Variant::KernelSubset(ks) => {
                let list: Vec<String> = ks.iter().map(|k| k.to_string()).collect();
                return write!(f, "kernel-subset({})", list.join(","));
            }
        };
        f.write_str(s)
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "full" => Variant::Full,
            "no-mce" => Variant::NoMce,
            "no-tdsse" => Variant::NoTdsse,
            "no-sgm" => Variant::NoSgm,
            "fixed-graph" => Variant::FixedGraph,
            "no-sp" => Variant::NoSp,
            "no-dag" => Variant::NoDag,
            "raw-only" => Variant::RawOnly,
            "raw+diff" => Variant::RawDiff,
            "raw+freq" => Variant::RawFreq,
            _ => {
                let inner = s
                    .strip_prefix("kernel-subset(")
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| invalid(format!("unknown variant '{s}'")))?;
                Variant::KernelSubset(parse_usize_list(inner)?)
            }
        })
    }
}

pub(crate) fn parse_usize_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| invalid(format!("expected an integer, got '{p}'"))))
        .collect()
}

/// All model hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub d_state: usize,
    pub d_conv: usize,
    pub expand: usize,
    pub kernels: Vec<usize>,
    /// Node embedding width; `None` means `max(D/2, 4)`.
    pub d_node: Option<usize>,
    pub n_classes: usize,
    pub channels: usize,
    pub seq_len: usize,
    pub lambda_sp: f64,
    pub lambda_dag: f64,
    pub dropout: f64,
    pub seed: u64,
    pub variant: Variant,
    pub scan_kernel: ScanKernel,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 32,
            n_layers: 2,
            d_state: 8,
            d_conv: 4,
            expand: 2,
            kernels: vec![3, 5, 7],
            d_node: None,
            n_classes: 3,
            channels: 8,
            seq_len: 128,
            lambda_sp: 0.01,
            lambda_dag: 0.5,
            dropout: 0.2,
            seed: 0,
            variant: Variant::Full,
            scan_kernel: ScanKernel::Sequential,
        }
    }
}

impl ModelConfig {
    pub fn d_node(&self) -> usize {
        self.d_node.unwrap_or((self.d_model / 2).max(4))
    }

    pub fn ssm(&self) -> SsmConfig {
        SsmConfig {
            d_model: self.d_model,
            d_state: self.d_state,
            expand: self.expand,
            d_conv: self.d_conv,
            kernel: self.scan_kernel,
        }
    }

    /// Kernel sizes after applying the variant.
    pub fn effective_kernels(&self) -> Vec<usize> {
        match &self.variant {
            Variant::KernelSubset(ks) => ks.clone(),
            _ => self.kernels.clone(),
        }
    }

    /// `(λ_SP, λ_DAG)` after applying the variant.
    pub fn effective_lambdas(&self) -> (f64, f64) {
        match self.variant {
            Variant::NoSp => (0.0, self.lambda_dag),
            Variant::NoDag => (self.lambda_sp, 0.0),
            _ => (self.lambda_sp, self.lambda_dag),
        }
    }

    pub fn with_variant(&self, variant: Variant) -> Self {
        Self { variant, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_layers == 0 {
            return bad("n_layers must be at least 1".into());
        }
        if self.n_classes < 2 {
            return bad("n_classes must be at least 2".into());
        }
        if self.channels == 0 || self.seq_len == 0 {
            return bad("channels and seq_len must be positive".into());
        }
        if !(self.lambda_sp >= 0.0) || !(self.lambda_dag >= 0.0) {
            return bad("lambda_sp and lambda_dag must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        let ks = self.effective_kernels();
        if self.variant != Variant::NoMce {
            if ks.is_empty() || ks.iter().any(|&k| k % 2 == 0 || k == 0) {
                return bad(format!("kernel sizes must be odd and non-empty, got {ks:?}"));
            }
            if ks.iter().any(|&k| k > self.seq_len) {
                return bad(format!("kernel sizes {ks:?} exceed seq_len {}", self.seq_len));
            }
        }
        if self.variant.graph_mode() != GraphMode::Disabled && self.channels < 2 {
            return bad("a channel graph needs at least 2 channels".into());
        }
        self.ssm().validate().map_err(|e| Error::Config(e.to_string()))
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::Config(format!("invalid value '{v}' for {key}")))
        }
        match key {
            "d_model" => self.d_model = num(key, value)?,
            "n_layers" => self.n_layers = num(key, value)?,
            "d_state" => self.d_state = num(key, value)?,
            "d_conv" => self.d_conv = num(key, value)?,
            "expand" => self.expand = num(key, value)?,
            "kernels" => self.kernels = parse_usize_list(value).map_err(|e| Error::Config(e.to_string()))?,
            "d_node" => {
                self.d_node = match value.trim() {
                    "auto" => None,
                    v => Some(num(key, v)?),
                }
            }
            "n_classes" => self.n_classes = num(key, value)?,
            "channels" => self.channels = num(key, value)?,
            "seq_len" => self.seq_len = num(key, value)?,
            "lambda_sp" => self.lambda_sp = num(key, value)?,
            "lambda_dag" => self.lambda_dag = num(key, value)?,
            "dropout" => self.dropout = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "variant" => self.variant = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "scan_kernel" => {
                self.scan_kernel = match value.trim() {
                    "sequential" => ScanKernel::Sequential,
                    "parallel" => ScanKernel::Parallel,
                    v => return Err(Error::Config(format!("unknown scan_kernel '{v}'"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown model key '{key}'"))),
        }
        Ok(())
    }

    pub fn is_key(key: &str) -> bool {
        matches!(
                key,
                "d_model"
                    | "n_layers"
                    | "d_state"
                    | "d_conv"
                    | "expand"
                    | "kernels"
                    | "d_node"
                    | "n_classes"
                    | "channels"
                    | "seq_len"
                    | "lambda_sp"
                    | "lambda_dag"
                    | "dropout"
                    | "seed"
                    | "variant"
                    | "scan_kernel"
            )
    }

    /// Settings in a form accepted by [`ModelConfig::set`].
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let ks: Vec<String> = self.kernels.iter().map(|k| k.to_string()).collect();
        let kernel = match self.scan_kernel {
            ScanKernel::Sequential => "sequential",
            ScanKernel::Parallel => "parallel",
        };
        vec![
            ("d_model".into(), self.d_model.to_string()),
            ("n_layers".into(), self.n_layers.to_string()),
            ("d_state".into(), self.d_state.to_string()),
            ("d_conv".into(), self.d_conv.to_string()),
            ("expand".into(), self.expand.to_string()),
            ("kernels".into(), ks.join(",")),
            ("d_node".into(), self.d_node.map_or("auto".into(), |d| d.to_string())),
            ("n_classes".into(), self.n_classes.to_string()),
            ("channels".into(), self.channels.to_string()),
            ("seq_len".into(), self.seq_len.to_string()),
            ("lambda_sp".into(), format!("{:?}", self.lambda_sp)),
            ("lambda_dag".into(), format!("{:?}", self.lambda_dag)),
            ("dropout".into(), format!("{:?}", self.dropout)),
            ("seed".into(), self.seed.to_string()),
            ("variant".into(), self.variant.to_string()),
            ("scan_kernel".into(), kernel.into()),
        ]
    }
}

#[derive(Clone, Debug)]
pub struct Layer {
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    pub tdsse: Tdsse,
    pub sgm: Sgm,
}

/// Forward result recorded on a tape.
pub struct ForwardOutput<'t, F: Real> {
    /// `[K]`, before softmax.
    pub logits: Var<'t, F>,
    /// One view-weight vector per layer.
    pub alphas: Vec<Var<'t, F>>,
    /// One pre-normalized adjacency per layer, if the layer has a graph.
    pub adjacency: Vec<Option<Var<'t, F>>>,
    pub l_sp: Vec<Option<Var<'t, F>>>,
    pub l_dag: Vec<Option<Var<'t, F>>>,
    /// Sums over layers.
    pub reg_sp: Var<'t, F>,
    pub reg_dag: Var<'t, F>,
}

/// Per-layer values detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagnostics<F: Real> {
    pub alphas: Vec<Tensor<F>>,
    pub adjacency: Vec<Option<Tensor<F>>>,
    pub l_sp: Vec<f64>,
    pub l_dag: Vec<f64>,
}

impl<F: Real> ForwardOutput<'_, F> {
    pub fn diagnostics(&self) -> Diagnostics<F> {
        let val = |v: &Option<Var<'_, F>>| v.map_or(0.0, |v| v.value().data()[0].as_f64());
        Diagnostics {
            alphas: self.alphas.iter().map(|a| (*a.value()).clone()).collect(),
            adjacency: self.adjacency.iter().map(|a| a.map(|a| (*a.value()).clone())).collect(),
            l_sp: self.l_sp.iter().map(val).collect(),
            l_dag: self.l_dag.iter().map(val).collect(),
        }
    }
}

/// `CE(logits, label) + λ_SP·reg_sp + λ_DAG·reg_dag`.
pub fn total_loss<'t, F: Real>(
    logits: Var<'t, F>,
    label: usize,
    reg_sp: Var<'t, F>,
    reg_dag: Var<'t, F>,
    lambda_sp: f64,
    lambda_dag: f64,
) -> Result<Var<'t, F>> {
    let k = logits.shape()[0];
    if label >= k {
        return Err(invalid(format!("label {label} out of range for {k} classes")));
    }
    let ce = logits.log_softmax()?.narrow(0, label, 1)?.neg();
    ce.add(reg_sp.mul_scalar(F::lit(lambda_sp)))?
        .add(reg_dag.mul_scalar(F::lit(lambda_dag)))
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<F: Real>(v: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// The classifier and its parameters.
#[derive(Clone, Debug)]
pub struct MedMamba<F: Real = f32> {
    pub cfg: ModelConfig,
    pub store: ParamStore<F>,
    pub embed: Embedding,
    pub layers: Vec<Layer>,
    pub head: Linear,
}

const CHECKPOINT_MAGIC: &str = "medmamba-checkpoint 1";

impl<F: Real> MedMamba<F> {
    /// Builds the model for `cfg` (including its variant) from `cfg.seed`.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Rng::seed_from_u64(cfg.seed);
        let mut store = ParamStore::new();
        let d = cfg.d_model;
        let embed = if cfg.variant == Variant::NoMce {
            Embedding::Linear(Linear::new(&mut store, &mut rng, "embed.linear", 1, d, true))
        } else {
            Embedding::MultiScale(Mce::init(&mut store, &mut rng, "embed.mce", &cfg.effective_kernels(), cfg.channels, d)?)
        };
        let views = cfg.variant.views();
        let mut layers = Vec::with_capacity(cfg.n_layers);
        for l in 0..cfg.n_layers {
            let name = format!("layer{l}");
            layers.push(Layer {
                ln_gain: store.add(format!("{name}.ln.gain"), Tensor::ones([d])),
                ln_bias: store.add(format!("{name}.ln.bias"), Tensor::zeros([d])),
                tdsse: Tdsse::init(&mut store, &mut rng, &format!("{name}.tdsse"), &views, cfg.ssm(), cfg.seq_len, cfg.dropout)?,
                sgm: Sgm::init(
                    &mut store,
                    &mut rng,
                    &format!("{name}.sgm"),
                    cfg.variant.graph_mode(),
                    cfg.channels,
                    cfg.d_node(),
                    cfg.ssm(),
                )?,
            });
        }
        let head = Linear::new(&mut store, &mut rng, "head", d, cfg.n_classes, true);
        Ok(Self {
            cfg: cfg.clone(),
            store,
            embed,
            layers,
            head,
        })
    }

    /// Records the forward pass of one `[T, C]` sample. Dropout is active
    /// only when `rng` is given.
    pub fn forward<'t>(&self, p: &Bound<'t, F>, x: Var<'t, F>, mut rng: Option<&mut Rng>) -> Result<ForwardOutput<'t, F>> {
        let shape = x.shape();
        if shape != [self.cfg.seq_len, self.cfg.channels] {
            return Err(Error::ShapeMismatch {
                op: "model input",
                lhs: shape,
                rhs: vec![self.cfg.seq_len, self.cfg.channels],
            });
        }
        let tape = x.tape();
        let mut z = self.embed.forward(p, x)?;
        let n = self.layers.len();
        let (mut alphas, mut adjacency, mut l_sp, mut l_dag) =
            (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let mut reg_sp = tape.constant(Tensor::zeros([1]));
        let mut reg_dag = tape.constant(Tensor::zeros([1]));
        for layer in &self.layers {
            let h = z.layernorm(p.get(layer.ln_gain), p.get(layer.ln_bias))?;
            let t = layer.tdsse.forward_with_residual(p, h, z, rng.as_deref_mut())?;
            let z_temp = t.z;
            let s = layer.sgm.forward(p, z_temp)?;
            if let Some(v) = s.l_sp {
                reg_sp = reg_sp.add(v)?;
            }
            if let Some(v) = s.l_dag {
                reg_dag = reg_dag.add(v)?;
            }
            alphas.push(t.alpha);
            adjacency.push(s.adjacency);
            l_sp.push(s.l_sp);
            l_dag.push(s.l_dag);
            z = s.z;
        }
        let [t, c, d] = [self.cfg.seq_len, self.cfg.channels, self.cfg.d_model];
        let pooled = z.reshape(&[t * c, d])?.mean_axis(0)?.reshape(&[1, d])?;
        let logits = self.head.forward(p, pooled)?.reshape(&[self.cfg.n_classes])?;
        Ok(ForwardOutput {
            logits,
            alphas,
            adjacency,
            l_sp,
            l_dag,
            reg_sp,
            reg_dag,
        })
    }

    /// Objective of one sample with the configured prior weights.
    pub fn loss<'t>(&self, out: &ForwardOutput<'t, F>, label: usize) -> Result<Var<'t, F>> {
        let (sp, dag) = self.cfg.effective_lambdas();
        total_loss(out.logits, label, out.reg_sp, out.reg_dag, sp, dag)
    }

    /// Loss value and one gradient per stored parameter.
    pub fn loss_and_gradients(&self, x: &Tensor<F>, label: usize, rng: Option<&mut Rng>) -> Result<(f64, Vec<Tensor<F>>)> {
        let tape = Tape::new();
        let p = self.store.bind(&tape);
        let out = self.forward(&p, tape.constant(x.clone()), rng)?;
        let loss = self.loss(&out, label)?;
        let value = loss.item()?.as_f64();
        let grads = tape.backward(loss)?;
        Ok((value, p.gradients(&grads)))
    }

    /// Inference: logits and diagnostics without recording gradients.
    pub fn evaluate(&self, x: &Tensor<F>) -> Result<(Tensor<F>, Diagnostics<F>)> {
        let tape = Tape::new();
        let p = self.store.bind_constant(&tape);
        let out = self.forward(&p, tape.constant(x.clone()), None)?;
        Ok(((*out.logits.value()).clone(), out.diagnostics()))
    }

    pub fn logits(&self, x: &Tensor<F>) -> Result<Tensor<F>> {
        Ok(self.evaluate(x)?.0)
    }

    /// Predicted class (lowest index on ties) and class probabilities.
    pub fn predict(&self, x: &Tensor<F>) -> Result<(usize, Tensor<F>)> {
        let logits = self.logits(x)?;
        let probs = softmax_tensor(&logits);
        Ok((argmax(logits.data()), probs))
    }

    pub fn num_params(&self) -> usize {
        self.store.num_trainable()
    }

    /// Writes the checkpoint: a text header then little-endian `f32` values.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "{CHECKPOINT_MAGIC}")?;
        for (k, v) in self.cfg.to_pairs() {
            writeln!(out, "config {k}={v}")?;
        }
        for id in self.store.ids() {
            let dims: Vec<String> = self.store.get(id).shape().iter().map(|d| d.to_string()).collect();
            writeln!(out, "param {} {}", self.store.name(id), dims.join("x"))?;
        }
        writeln!(out, "data")?;
        for id in self.store.ids() {
            for &v in self.store.get(id).data() {
                out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Reads a checkpoint written by [`MedMamba::save`], validating every shape.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        let mut reader = BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();
        reader.read_line(&mut line)?;
        if line.trim_end() != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint header".into()));
        }
        let mut cfg = ModelConfig::default();
        let mut params: Vec<(String, Vec<usize>)> = Vec::new();
        loop {
            line.clear();
            if reader.read_line(&mut line)? == 0 {
                return Err(bad("header ended before the data marker".into()));
            }
            let l = line.trim_end();
            if l == "data" {
                break;
            } else if let Some(kv) = l.strip_prefix("config ") {
                let (k, v) = kv.split_once('=').ok_or_else(|| bad(format!("malformed config line '{l}'")))?;
                cfg.set(k, v)?;
            } else if let Some(rest) = l.strip_prefix("param ") {
                let (name, dims) = rest.rsplit_once(' ').ok_or_else(|| bad(format!("malformed param line '{l}'")))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>().map_err(|_| bad(format!("bad shape '{dims}'"))))
                    .collect::<Result<Vec<_>>>()?;
                params.push((name.to_string(), shape));
            } else {
                return Err(bad(format!("unexpected header line '{l}'")));
            }
        }
        let mut model = Self::init(&cfg)?;
        if params.len() != model.store.len() {
            return Err(bad(format!(
                "checkpoint lists {} tensors, configuration expects {}",
                params.len(),
                model.store.len()
            )));
        }
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;
        let mut offset = 0;
        let ids: Vec<ParamId> = model.store.ids().collect();
        for (id, (name, shape)) in ids.into_iter().zip(params) {
            if model.store.name(id) != name || model.store.get(id).shape() != shape.as_slice() {
                return Err(bad(format!(
                    "tensor '{name}' {shape:?} does not match expected '{}' {:?}",
                    model.store.name(id),
                    model.store.get(id).shape()
                )));
            }
            let n = model.store.get(id).numel();
            let end = offset + 4 * n;
            if end > bytes.len() {
                return Err(bad("data section is truncated".into()));
            }
            let vals = bytes[offset..end]
                .chunks_exact(4)
                .map(|c| F::lit(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64))
                .collect();
            model.store.set(id, Tensor::new(shape, vals)?)?;
            offset = end;
        }
        if offset != bytes.len() {
            return Err(bad(format!("{} trailing bytes after data", bytes.len() - offset)));
        }
        Ok(model)
    }
}

/// Softmax of a logit vector.
pub fn softmax_tensor<F: Real>(logits: &Tensor<F>) -> Tensor<F> {
    let m = logits.data().iter().copied().fold(F::neg_infinity(), F::max);
    let e = logits.map(|v| (v - m).exp());
    let s = e.sum();
    e.map(|v| v / s)
}
