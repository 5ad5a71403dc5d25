use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::LatteConfig;
use super::patching::patch_layout;
use crate::autodiff::{Graph, LrGroup, Parameter, Tensor, Var};
use crate::error::{LatteError, Result};
use crate::geometry::Curvature;
use crate::layers::conv::unfold;
use crate::layers::{
    hyper, AdapterPolicy, BatchNorm, Ctx, InceptionBlock, LoraFactors, LoraLinear, LoraSpec,
    LorentzAttention, Module, PrototypeSet, QInit, RandomProjection, SubjectRows, TangentLayerNorm,
};

/// Forward stages in execution order; [`Ctx::trace`] records them by name.
pub const STAGES: &[&str] = &[
    "processor",
    "projection",
    "patching",
    "baseline_block",
    "inception_block",
    "difference",
    "layernorm",
    "patch_centroid",
    "attention",
    "centroid_unpatch",
    "predecoder",
    "prototype_decoder",
];

/// A minibatch: `x` stacks trials as `[B·T, C]` rows (trial-major).
#[derive(Clone, Debug)]
pub struct Batch {
    pub x: Tensor,
    pub subjects: Vec<u32>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }
}

/// Parameter counts by role.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParameterReport {
    pub shared: usize,
    pub subject_specific: usize,
    pub per_subject: usize,
    pub frozen: usize,
    pub subjects: usize,
}

impl ParameterReport {
    pub fn total(&self) -> usize {
        self.shared + self.subject_specific + self.frozen
    }
}

/// True for parameters that belong to one subject's adapter.
pub fn is_subject_param(name: &str) -> bool {
    name.contains(".lora.s") || name.contains(".boost.s")
}

#[derive(Clone, Debug)]
pub struct LatteModel {
    pub config: LatteConfig,
    pub curvature: Curvature,
    /// Subjects that own adapters, ascending.
    pub subjects: Vec<u32>,
    pub sca: LoraLinear,
    pub sca_bn: BatchNorm,
    pub stf: LoraLinear,
    pub stf_bn: BatchNorm,
    pub baseline: InceptionBlock,
    pub inception: InceptionBlock,
    pub norm: TangentLayerNorm,
    pub attention: LorentzAttention,
    pub projection: RandomProjection,
    pub prototypes: PrototypeSet,
}

impl LatteModel {
    pub fn new(config: &LatteConfig, subjects: &[u32], seed: u64) -> Result<Self> {
        config.validate()?;
        let k = config.curvature()?;
        let mut subjects = subjects.to_vec();
        subjects.sort_unstable();
        subjects.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let proc_spec = config.adapters.then_some(LoraSpec {
            rank: config.processor_rank,
            scale: 1.0,
            q_init: QInit::Normal {
                std: config.processor_lora_std,
            },
            group: LrGroup::Base,
        });
        let c = config;
        let sca = LoraLinear::new(
            "sca",
            c.components,
            c.channels,
            false,
            &subjects,
            proc_spec,
            &mut rng,
        );
        let stf = LoraLinear::new(
            "stf",
            c.latent_dim,
            c.components * c.temporal_kernel,
            false,
            &subjects,
            proc_spec,
            &mut rng,
        );
        let shape = c.inception_shape();
        let baseline = InceptionBlock::new("baseline", &shape, c.baseline_pool, &mut rng)?;
        let inception = InceptionBlock::new("inception", &shape, c.task_pool, &mut rng)?;
        let dim = c.token_dim();
        let attention = LorentzAttention::new("attention", dim, dim, c.heads, &mut rng)?;
        let adapter_subjects = c.adapters.then_some(subjects.as_slice());
        let projection = RandomProjection::new(
            "predecoder",
            &c.predecoder_spec(),
            adapter_subjects,
            &mut rng,
        );
        let prototypes = PrototypeSet::wrapped_normal(
            "prototypes",
            c.classes,
            c.projection_dim,
            c.prototype_std,
            c.prototypes_trainable,
            k,
            &mut rng,
        );
        Ok(Self {
            config: config.clone(),
            curvature: k,
            subjects,
            sca,
            sca_bn: BatchNorm::new("sca.bn", c.components),
            stf,
            stf_bn: BatchNorm::new("stf.bn", c.latent_dim),
            baseline,
            inception,
            norm: TangentLayerNorm::new("layernorm", dim),
            attention,
            projection,
            prototypes,
        })
    }

    /// The policy actually applied: adapters disabled in the config win.
    fn effective(&self, policy: AdapterPolicy) -> AdapterPolicy {
        if self.config.adapters {
            policy
        } else {
            AdapterPolicy::Off
        }
    }

    fn check_input(&self, g: &Graph, x: Var, subjects: &[u32]) -> Result<()> {
        let (rows, cols) = g.shape(x);
        let c = &self.config;
        if cols != c.channels || rows != subjects.len() * c.timesteps {
            return Err(LatteError::Dimension(format!(
                "input is {rows}x{cols}, expected {}x{} for {} trials",
                subjects.len() * c.timesteps,
                c.channels,
                subjects.len()
            )));
        }
        Ok(())
    }

    /// Channel mixing then temporal filtering, each with batch norm;
    /// returns Euclidean features `[B·T', latent_dim]`.
    pub fn processor(
        &self,
        g: &Graph,
        x: Var,
        subjects: &[u32],
        policy: AdapterPolicy,
        ctx: &mut Ctx,
    ) -> Result<Var> {
        self.check_input(g, x, subjects)?;
        let policy = self.effective(policy);
        let c = &self.config;
        let b = subjects.len();
        let routing = SubjectRows::from_trials(subjects, c.timesteps);
        let z = self.sca.forward(g, x, &routing, policy)?;
        let z = self.sca_bn.forward(g, z, ctx);
        let (t_out, cols) = unfold(g, z, b, c.timesteps, c.temporal_kernel, 0)?;
        let routing = SubjectRows::from_trials(subjects, t_out);
        let z = self.stf.forward(g, cols, &routing, policy)?;
        Ok(self.stf_bn.forward(g, z, ctx))
    }

    /// Lifts processor features and cuts them into patches; returns the
    /// points `[B·w·L, 1 + d]` and the patch length `L`.
    fn project_and_patch(
        &self,
        g: &Graph,
        feats: Var,
        b: usize,
        ctx: &mut Ctx,
    ) -> Result<(Var, usize)> {
        let k = self.curvature;
        let t_out = self.config.filtered_len();
        let points = hyper::lift(g, feats, k);
        ctx.mark("projection", points);
        let layout = patch_layout(t_out, self.config.windows)?;
        let within: Vec<usize> = layout.rows().collect();
        let rows: Vec<usize> = (0..b)
            .flat_map(|i| within.iter().map(move |r| i * t_out + r))
            .collect();
        let patched = if self.config.windows == 1 {
            points
        } else {
            g.select_rows(points, &rows)
        };
        ctx.mark("patching", patched);
        Ok((patched, layout.len))
    }

    /// Processor and max-pool inception block without adapters: the path
    /// shared with pretraining. Returns `[B·w·L, 1 + token_dim]`.
    pub fn encode_pretrain(
        &self,
        g: &Graph,
        x: Var,
        subjects: &[u32],
        ctx: &mut Ctx,
    ) -> Result<Var> {
        let b = subjects.len();
        let feats = self
            .processor(g, x, subjects, AdapterPolicy::Off, ctx)
            .map_err(|e| e.at_stage("processor"))?;
        ctx.mark("processor", feats);
        let (patched, len) = self
            .project_and_patch(g, feats, b, ctx)
            .map_err(|e| e.at_stage("patching"))?;
        let seqs = b * self.config.windows;
        self.inception
            .forward(g, patched, seqs, len, self.curvature, ctx)
            .map_err(|e| e.at_stage("inception_block"))
    }

    /// Class logits `[B, classes]`.
    pub fn forward(
        &self,
        g: &Graph,
        x: Var,
        subjects: &[u32],
        policy: AdapterPolicy,
        ctx: &mut Ctx,
    ) -> Result<Var> {
        let k = self.curvature;
        let c = &self.config;
        let b = subjects.len();
        let policy = self.effective(policy);

        let feats = self
            .processor(g, x, subjects, policy, ctx)
            .map_err(|e| e.at_stage("processor"))?;
        ctx.mark("processor", feats);
        let (patched, len) = self
            .project_and_patch(g, feats, b, ctx)
            .map_err(|e| e.at_stage("patching"))?;
        let seqs = b * c.windows;

        let base = self
            .baseline
            .forward(g, patched, seqs, len, k, ctx)
            .map_err(|e| e.at_stage("baseline_block"))?;
        ctx.mark("baseline_block", base);
        let inc = self
            .inception
            .forward(g, patched, seqs, len, k, ctx)
            .map_err(|e| e.at_stage("inception_block"))?;
        ctx.mark("inception_block", inc);

        let delta = g.sub(hyper::log_origin(g, base, k), hyper::log_origin(g, inc, k));
        let diff = hyper::exp_origin(g, delta, k);
        ctx.mark("difference", diff);
        let normed = self.norm.forward(g, diff, k);
        ctx.mark("layernorm", normed);
        let tokens = hyper::centroid_groups(g, normed, len, k);
        ctx.mark("patch_centroid", tokens);
        let attended = self
            .attention
            .forward(g, tokens, b, c.windows, k)
            .map_err(|e| e.at_stage("attention"))?;
        ctx.mark("attention", attended);
        let pooled = hyper::centroid_groups(g, attended, c.windows, k);
        ctx.mark("centroid_unpatch", pooled);
        let routing = SubjectRows::from_trials(subjects, 1);
        let projected = self
            .projection
            .forward(g, pooled, &routing, policy, k)
            .map_err(|e| e.at_stage("predecoder"))?;
        ctx.mark("predecoder", projected);
        let logits = self
            .prototypes
            .logits(g, projected, k)
            .map_err(|e| e.at_stage("prototype_decoder"))?;
        ctx.mark("prototype_decoder", logits);
        Ok(logits)
    }

    /// Inference-mode logits for a batch of trials.
    pub fn logits(&self, x: &Tensor, subjects: &[u32], policy: AdapterPolicy) -> Result<Tensor> {
        let g = Graph::new();
        let xv = g.constant(x.clone());
        let mut ctx = Ctx::eval();
        let out = self.forward(&g, xv, subjects, policy, &mut ctx)?;
        let t = (*g.value(out)).clone();
        if !t.all_finite() {
            return Err(LatteError::NonFinite("logits".into()));
        }
        Ok(t)
    }

    pub fn adapter_banks_hold(&self, subject: u32) -> bool {
        self.sca.bank.get(subject).is_some()
    }

    /// Allocates zero-initialized adapters for a subject the model has not
    /// seen; a no-op when it already has them or adapters are disabled.
    pub fn ensure_subject(&mut self, subject: u32, seed: u64) {
        if !self.config.adapters || self.subjects.contains(&subject) {
            return;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(subject) << 32));
        let c = &self.config;
        let spec = LoraSpec {
            rank: c.processor_rank,
            scale: 1.0,
            q_init: QInit::Normal {
                std: c.processor_lora_std,
            },
            group: LrGroup::Base,
        };
        self.sca.bank.adapters.insert(
            subject,
            LoraFactors::new(
                &format!("sca.lora.s{subject}"),
                c.components,
                c.channels,
                &spec,
                &mut rng,
            ),
        );
        self.stf.bank.adapters.insert(
            subject,
            LoraFactors::new(
                &format!("stf.lora.s{subject}"),
                c.latent_dim,
                c.components * c.temporal_kernel,
                &spec,
                &mut rng,
            ),
        );
        let fresh = RandomProjection::new(
            "predecoder",
            &c.predecoder_spec(),
            Some(&[subject]),
            &mut rng,
        );
        self.projection.lora.adapters.extend(fresh.lora.adapters);
        self.projection
            .boosts
            .adapters
            .extend(fresh.boosts.adapters);
        self.subjects.push(subject);
        self.subjects.sort_unstable();
    }

    /// Copies pretrained processor weights into this model and the pretrained
    /// inception block into both encoder branches.
    pub fn adopt_pretrained(&mut self, src: &LatteModel) -> Result<()> {
        if src.config.inception_shape() != self.config.inception_shape()
            || src.sca.weight.shape() != self.sca.weight.shape()
            || src.stf.weight.shape() != self.stf.weight.shape()
        {
            return Err(LatteError::Dimension(
                "pretrained weights do not match this architecture".into(),
            ));
        }
        self.sca.weight.value = src.sca.weight.value.clone();
        self.stf.weight.value = src.stf.weight.value.clone();
        copy_bn(&mut self.sca_bn, &src.sca_bn);
        copy_bn(&mut self.stf_bn, &src.stf_bn);
        self.baseline.load_from(&src.inception)?;
        self.inception.load_from(&src.inception)?;
        Ok(())
    }

    pub fn parameter_report(&self) -> ParameterReport {
        let mut r = ParameterReport {
            shared: 0,
            subject_specific: 0,
            per_subject: 0,
            frozen: 0,
            subjects: self.subjects.len(),
        };
        let first = self.subjects.first().copied();
        self.visit(&mut |p| {
            if !p.trainable {
                r.frozen += p.len();
            } else if is_subject_param(&p.name) {
                r.subject_specific += p.len();
                if let Some(s) = first {
                    let tag = format!(".s{s}.");
                    if p.name.contains(&tag) {
                        r.per_subject += p.len();
                    }
                }
            } else {
                r.shared += p.len();
            }
        });
        r
    }

    /// Rounds every parameter and buffer through `f32`, the precision of
    /// checkpoint files.
    pub fn quantize_f32(&mut self) {
        let q = |t: &mut Tensor| {
            for v in t.data_mut() {
                *v = *v as f32 as f64;
            }
        };
        self.visit_mut(&mut |p| q(&mut p.value));
        self.visit_buffers_mut(&mut |_, t| q(t));
    }

    /// Snapshot of every parameter value by name.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.push((p.name.clone(), p.value.clone())));
        out
    }
}

fn copy_bn(dst: &mut BatchNorm, src: &BatchNorm) {
    dst.gamma.value = src.gamma.value.clone();
    dst.beta.value = src.beta.value.clone();
    dst.running_mean = src.running_mean.clone();
    dst.running_var = src.running_var.clone();
}

impl Module for LatteModel {
    fn visit(&self, f: &mut dyn FnMut(&Parameter)) {
        self.sca.visit(f);
        self.sca_bn.visit(f);
        self.stf.visit(f);
        self.stf_bn.visit(f);
        self.baseline.visit(f);
        self.inception.visit(f);
        self.norm.visit(f);
        self.attention.visit(f);
        self.projection.visit(f);
        self.prototypes.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Parameter)) {
        self.sca.visit_mut(f);
        self.sca_bn.visit_mut(f);
        self.stf.visit_mut(f);
        self.stf_bn.visit_mut(f);
        self.baseline.visit_mut(f);
        self.inception.visit_mut(f);
        self.norm.visit_mut(f);
        self.attention.visit_mut(f);
        self.projection.visit_mut(f);
        self.prototypes.visit_mut(f);
    }

    fn visit_buffers(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.sca_bn.visit_buffers(f);
        self.stf_bn.visit_buffers(f);
        self.baseline.visit_buffers(f);
        self.inception.visit_buffers(f);
    }

    fn visit_buffers_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.sca_bn.visit_buffers_mut(f);
        self.stf_bn.visit_buffers_mut(f);
        self.baseline.visit_buffers_mut(f);
        self.inception.visit_buffers_mut(f);
    }
}
