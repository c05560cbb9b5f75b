use indexmap::IndexMap;

use crate::autodiff::{Gradients, Tape, Var};
use crate::error::{Error, Result};
use crate::nn::{
    self, BatchNormParams, BatchStats, ConvParams, DenseParams, DscParams, Mode,
};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

use super::config::{HybridModelConfig, FEATURE_LENGTH};
use super::params::ParamStore;
use super::sfm::{compute_sfm, mfe_block_input, StatFeatureMaps};

/// The three parallel convolutional branches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    /// Feeder network 1, cosine-normalized convolutions.
    Cnc,
    /// Feeder network 2, depthwise-separable convolutions.
    Dsc,
    /// Meta-feature extraction network, standard convolutions.
    Mfe,
}

impl Branch {
    pub const ALL: [Branch; 3] = [Branch::Cnc, Branch::Dsc, Branch::Mfe];

    pub fn name(self) -> &'static str {
        match self {
            Branch::Cnc => "cnc",
            Branch::Dsc => "dsc",
            Branch::Mfe => "mfe",
        }
    }

    pub fn enabled(self, c: &HybridModelConfig) -> bool {
        match self {
            Branch::Cnc => c.use_cnc_branch,
            Branch::Dsc => c.use_dsc_branch,
            Branch::Mfe => c.use_mfe_branch,
        }
    }
}

/// One conv block: the raw convolution output (before batch norm) and the
/// pooled block output.
#[derive(Debug, Clone, Copy)]
pub struct BlockTap {
    pub conv: Var,
    pub output: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionTap {
    /// Trunk branch features `T(x)`.
    pub trunk: Var,
    /// Soft mask `M(x)` in (0, 1).
    pub mask: Var,
    /// `(1 + M) * T`, before projection.
    pub modulated: Var,
    /// Three-channel projection handed to the branches.
    pub output: Var,
}

/// Statistical maps computed after blocks 1..=3 to feed the next MFE block.
#[derive(Debug, Clone, Copy)]
pub struct SfmTap {
    pub cnc: Option<StatFeatureMaps>,
    pub dsc: Option<StatFeatureMaps>,
    pub mfe: StatFeatureMaps,
}

/// Intermediate activations exposed by the forward pass.
#[derive(Debug, Clone)]
pub struct Taps {
    pub attention: Option<AttentionTap>,
    /// Per enabled branch, the four block taps.
    pub blocks: IndexMap<Branch, Vec<BlockTap>>,
    pub sfm: Vec<SfmTap>,
    /// Channel concatenation of the enabled branches' block-4 outputs.
    pub concat: Var,
    pub pooled: Var,
    /// Post-ReLU activation of the 128-unit layer.
    pub penultimate: Var,
}

#[derive(Debug)]
pub struct ForwardOutput<T> {
    /// `[N, 2]`, columns (normal, abnormal).
    pub logits: Var,
    pub taps: Taps,
    /// Tape handle of every parameter used.
    pub params: IndexMap<String, Var>,
    /// Batch statistics per batch-norm layer (training mode only); commit
    /// them with [`HybridModel::commit_bn`].
    pub bn_stats: Vec<(String, BatchStats<T>)>,
}

impl<T: Real> ForwardOutput<T> {
    /// Gradients of every parameter, keyed by name.
    pub fn param_grads(&self, grads: &Gradients<T>) -> IndexMap<String, Tensor<T>> {
        self.params
            .iter()
            .filter_map(|(k, &v)| grads.get(v).map(|g| (k.clone(), g.clone())))
            .collect()
    }
}

/// Hybrid attention / three-branch network with its named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridModel<T> {
    config: HybridModelConfig,
    store: ParamStore<T>,
}

fn residual_init<T: Real>(store: &mut ParamStore<T>, prefix: &str, width: usize, rng: &mut Rng) {
    for i in 1..=2 {
        store.add_conv(&format!("{prefix}.conv{i}"), ConvParams::standard(width, width, 3, rng));
        store.add_bn(&format!("{prefix}.bn{i}"), BatchNormParams::new(width));
    }
}

impl<T: Real> HybridModel<T> {
    /// Builds and initialises the network. Each component draws from its
    /// own stream of the config seed, so toggling one component leaves the
    /// initial weights of the others unchanged.
    pub fn new(config: HybridModelConfig) -> Result<Self> {
        config.validate()?;
        let root = Rng::new(config.seed);
        let mut store = ParamStore::new();
        let w = config.channel_widths;
        if config.use_attention {
            let mut rng = root.fork(0);
            let a = config.attention_width;
            store.add_conv("attention.stem.conv", ConvParams::standard(3, a, 3, &mut rng));
            store.add_bn("attention.stem.bn", BatchNormParams::new(a));
            for r in 0..config.attention_residual_blocks {
                residual_init(&mut store, &format!("attention.trunk.{r}"), a, &mut rng);
            }
            residual_init(&mut store, "attention.mask.res", a, &mut rng);
            store.add_conv("attention.mask.conv", ConvParams::standard(a, a, 1, &mut rng));
            store.add_conv("attention.project", ConvParams::standard(a, 3, 1, &mut rng));
        }
        for (stream, branch) in Branch::ALL.into_iter().enumerate() {
            if !branch.enabled(&config) {
                continue;
            }
            let mut rng = root.fork(1 + stream as u64);
            for i in 0..4 {
                let in_ch = match (branch, i) {
                    (_, 0) => 3,
                    (Branch::Mfe, _) => config.mfe_stat_channels(),
                    _ => w[i - 1],
                };
                let prefix = format!("{}.{}", branch.name(), i + 1);
                let conv = format!("{prefix}.conv");
                match branch {
                    Branch::Cnc => store.add_conv(&conv, ConvParams::cosine(in_ch, w[i], 3, &mut rng)),
                    Branch::Dsc => store.add_dsc(&conv, DscParams::new(in_ch, w[i], &mut rng)),
                    Branch::Mfe => store.add_conv(&conv, ConvParams::standard(in_ch, w[i], 3, &mut rng)),
                }
                store.add_bn(&format!("{prefix}.bn"), BatchNormParams::new(w[i]));
            }
        }
        let mut rng = root.fork(4);
        let mut fan_in = config.concat_width();
        for (i, &width) in config.fc_widths.iter().enumerate() {
            store.add_dense(&format!("head.fc{}", i + 1), DenseParams::new(fan_in, width, &mut rng));
            fan_in = width;
        }
        Ok(HybridModel { config, store })
    }

    /// Model with the given state; every tensor the config calls for must be
    /// present with the right shape.
    pub fn from_tensors(config: HybridModelConfig, tensors: IndexMap<String, Tensor<T>>) -> Result<Self> {
        let mut model = HybridModel::new(config)?;
        model.store.load_from(tensors)?;
        Ok(model)
    }

    pub fn config(&self) -> &HybridModelConfig {
        &self.config
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    pub fn cast<U: Real>(&self) -> HybridModel<U> {
        HybridModel { config: self.config.clone(), store: self.store.cast() }
    }

    /// Applies the running-statistic updates gathered by a training-mode
    /// forward pass.
    pub fn commit_bn(&mut self, stats: &[(String, BatchStats<T>)]) -> Result<()> {
        for (prefix, s) in stats {
            self.store.update_bn(prefix, s)?;
        }
        Ok(())
    }

    /// Records the network on `tape` for the image batch `x: [N, 3, S, S]`.
    pub fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<ForwardOutput<T>> {
        self.forward_bound(tape, x, mode, IndexMap::new())
    }

    /// As [`forward`](Self::forward), but parameters named in `bound` use the
    /// given tape nodes instead of the stored values.
    pub fn forward_bound(
        &self,
        tape: &mut Tape<T>,
        x: Var,
        mode: Mode,
        bound: IndexMap<String, Var>,
    ) -> Result<ForwardOutput<T>> {
        let s = self.config.input_size;
        match *tape.shape(x) {
            [_, 3, h, w] if h == s && w == s => {}
            ref other => {
                return Err(Error::Shape(format!("model expects [N, 3, {s}, {s}], got {other:?}")))
            }
        }
        let mut f = Fwd { tape, store: &self.store, mode, params: bound, bn_stats: Vec::new() };
        let c = &self.config;

        let attention = if c.use_attention { Some(f.attention(x, c.attention_residual_blocks)?) } else { None };
        let input = attention.map_or(x, |a| a.output);

        let mut blocks: IndexMap<Branch, Vec<BlockTap>> = IndexMap::new();
        let mut sfm = Vec::new();
        let mut current: IndexMap<Branch, Var> = IndexMap::new();
        for i in 0..4 {
            let mut taps = IndexMap::new();
            for branch in Branch::ALL {
                if !branch.enabled(c) {
                    continue;
                }
                let block_in = match (branch, i) {
                    (_, 0) => input,
                    (Branch::Mfe, _) => {
                        let st: &SfmTap = sfm.last().expect("computed after the previous block");
                        mfe_block_input(f.tape, st.cnc.as_ref(), st.dsc.as_ref(), &st.mfe)?
                    }
                    _ => current[&branch],
                };
                let tap = f.block(branch, i + 1, block_in)?;
                taps.insert(branch, tap);
            }
            for (branch, tap) in &taps {
                blocks.entry(*branch).or_default().push(*tap);
                current.insert(*branch, tap.output);
            }
            if c.use_mfe_branch && i < 3 {
                let stat = |b: Branch, f: &mut Fwd<'_, T>| -> Result<Option<StatFeatureMaps>> {
                    taps.get(&b).map(|t| compute_sfm(f.tape, t.output)).transpose()
                };
                let cnc = stat(Branch::Cnc, &mut f)?;
                let dsc = stat(Branch::Dsc, &mut f)?;
                let mfe = stat(Branch::Mfe, &mut f)?.expect("mfe enabled");
                sfm.push(SfmTap { cnc, dsc, mfe });
            }
        }

        let finals: Vec<Var> = current.values().copied().collect();
        let concat = if finals.len() == 1 { finals[0] } else { f.tape.concat(&finals, 1)? };
        let pooled = nn::global_avg_pool(f.tape, concat)?;
        let mut h = pooled;
        let mut penultimate = pooled;
        for i in 1..=4 {
            h = f.dense(&format!("head.fc{i}"), h)?;
            if i < 4 {
                h = nn::relu(f.tape, h)?;
            }
            if i == 3 {
                penultimate = h;
            }
        }
        debug_assert_eq!(f.tape.shape(penultimate)[1], FEATURE_LENGTH);
        Ok(ForwardOutput {
            logits: h,
            taps: Taps { attention, blocks, sfm, concat, pooled, penultimate },
            params: f.params,
            bn_stats: f.bn_stats,
        })
    }

    /// Eval-mode forward of `x` on a fresh tape.
    pub fn infer(&self, x: &Tensor<T>) -> Result<(Tape<T>, ForwardOutput<T>)> {
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let out = self.forward(&mut tape, xv, Mode::Eval)?;
        Ok((tape, out))
    }

    /// Softmax probability of the abnormal class for each image, in eval mode.
    pub fn predict_proba(&self, x: &Tensor<T>) -> Result<Vec<f64>> {
        let (tape, out) = self.infer(x)?;
        let probs = tape.value(out.logits).softmax_rows()?;
        Ok(probs.data().chunks(2).map(|r| r[1].to_f64_lossy()).collect())
    }

    /// The 128-d penultimate activations `[N, 128]`, in eval mode.
    pub fn features(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (tape, out) = self.infer(x)?;
        Ok(tape.value(out.taps.penultimate).clone())
    }
}

/// Forward-pass state: binds parameters to the tape on first use and
/// collects batch statistics.
struct Fwd<'a, T: Real> {
    tape: &'a mut Tape<T>,
    store: &'a ParamStore<T>,
    mode: Mode,
    params: IndexMap<String, Var>,
    bn_stats: Vec<(String, BatchStats<T>)>,
}

impl<T: Real> Fwd<'_, T> {
    fn p(&mut self, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let v = self.tape.param(self.store.param(name)?.clone());
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    fn conv(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        nn::conv2d(self.tape, x, w, Some(b))
    }

    fn bn(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let gamma = self.p(&format!("{prefix}.gamma"))?;
        let beta = self.p(&format!("{prefix}.beta"))?;
        let mean = self.store.buffer(&format!("{prefix}.running_mean"))?;
        let var = self.store.buffer(&format!("{prefix}.running_var"))?;
        let (y, stats) = nn::batch_norm(self.tape, x, gamma, beta, mean, var, self.mode)?;
        if let Some(s) = stats {
            self.bn_stats.push((prefix.to_string(), s));
        }
        Ok(y)
    }

    fn dense(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let w = self.p(&format!("{prefix}.weight"))?;
        let b = self.p(&format!("{prefix}.bias"))?;
        nn::dense(self.tape, x, w, b)
    }

    fn conv_bn_relu(&mut self, conv: &str, bn: &str, x: Var) -> Result<Var> {
        let c = self.conv(conv, x)?;
        let b = self.bn(bn, c)?;
        nn::relu(self.tape, b)
    }

    fn residual(&mut self, prefix: &str, x: Var) -> Result<Var> {
        let h = self.conv_bn_relu(&format!("{prefix}.conv1"), &format!("{prefix}.bn1"), x)?;
        let h = self.conv_bn_relu(&format!("{prefix}.conv2"), &format!("{prefix}.bn2"), h)?;
        self.tape.add(x, h)
    }

    fn attention(&mut self, x: Var, residual_blocks: usize) -> Result<AttentionTap> {
        let stem = self.conv_bn_relu("attention.stem.conv", "attention.stem.bn", x)?;
        let mut trunk = stem;
        for r in 0..residual_blocks {
            trunk = self.residual(&format!("attention.trunk.{r}"), trunk)?;
        }
        let m = nn::maxpool2x2(self.tape, stem)?;
        let m = self.residual("attention.mask.res", m)?;
        let m = nn::upsample2x(self.tape, m)?;
        let m = self.conv("attention.mask.conv", m)?;
        let mask = nn::sigmoid(self.tape, m)?;
        let gain = self.tape.add_scalar(mask, T::one())?;
        let modulated = self.tape.mul(gain, trunk)?;
        let output = self.conv("attention.project", modulated)?;
        Ok(AttentionTap { trunk, mask, modulated, output })
    }

    fn block(&mut self, branch: Branch, index: usize, x: Var) -> Result<BlockTap> {
        let prefix = format!("{}.{index}", branch.name());
        let conv = match branch {
            Branch::Cnc => {
                let w = self.p(&format!("{prefix}.conv.weight"))?;
                nn::cosine_conv2d(self.tape, x, w)?
            }
            Branch::Dsc => {
                let dw = self.p(&format!("{prefix}.conv.depthwise"))?;
                let pw = self.p(&format!("{prefix}.conv.pointwise"))?;
                let b = self.p(&format!("{prefix}.conv.bias"))?;
                nn::depthwise_separable_conv2d(self.tape, x, dw, pw, b)?
            }
            Branch::Mfe => self.conv(&format!("{prefix}.conv"), x)?,
        };
        let h = self.bn(&format!("{prefix}.bn"), conv)?;
        let h = nn::relu(self.tape, h)?;
        let output = nn::maxpool2x2(self.tape, h)?;
        Ok(BlockTap { conv, output })
    }
}
