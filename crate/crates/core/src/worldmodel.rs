//! World-model networks: representation, action embedding, transition,
//! policy, reward and value, each in an equivariant and a baseline form.
//!
//! The equivariant latent is four feature maps, one per quarter turn of the
//! observation. Rotating the observation only permutes those maps, the
//! transition acts on them with shared weights, the policy averages the four
//! per-frame action distributions after moving each back to the common frame,
//! and reward/value read an elementwise sum of the four maps. Sums over the
//! four frames use [`eqmz_nd::kernels::canonical_sum`], so every one of these
//! symmetries holds bit for bit.
//!
//! Every produced state latent is min-max scaled to `[0, 1]`, component by
//! component, which keeps long unrolls bounded and commutes with the cyclic
//! shift.
//!
//! All forward code is generic over [`Backend`] and serves both search
//! (eager evaluation) and training (recorded graph).

use std::fmt;
use std::str::FromStr;

use eqmz_nd::{Backend, Checkpoint, Eval, Initializer, NdError, ParamId, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

use crate::env::{Observation, OBS_CHANNELS};
use crate::group::{act_on_action, act_on_observation, action_permutation, ActionId, GroupElement, LatentState};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nd(#[from] NdError),
    #[error("checkpoint is missing meta field {0:?}")]
    MissingMeta(&'static str),
    #[error("checkpoint meta field {key:?} has invalid value {value:?}")]
    BadMeta { key: &'static str, value: String },
    #[error("checkpoint parameter {name:?}: {msg}")]
    ParamMismatch { name: String, msg: String },
}

/// Which implementation a world-model function uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    Equivariant,
    Baseline,
}

/// The full equivariant agent, the standard agent, and three ablations that
/// swap one or more equivariant parts for baseline ones.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
pub enum AgentVariant {
    EqMuZero,
    StdMuZero,
    StdWithEqEncoder,
    EqWithStdEncoder,
    EqWithStdPolicy,
}

impl AgentVariant {
    pub const ALL: [Self; 5] = [
        Self::EqMuZero,
        Self::StdMuZero,
        Self::StdWithEqEncoder,
        Self::EqWithStdEncoder,
        Self::EqWithStdPolicy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::EqMuZero => "EqMuZero",
            Self::StdMuZero => "StdMuZero",
            Self::StdWithEqEncoder => "StdWithEqEncoder",
            Self::EqWithStdEncoder => "EqWithStdEncoder",
            Self::EqWithStdPolicy => "EqWithStdPolicy",
        }
    }

    /// Family of the state encoder `h`.
    pub fn encoder(self) -> Family {
        match self {
            Self::EqMuZero | Self::StdWithEqEncoder | Self::EqWithStdPolicy => Family::Equivariant,
            Self::StdMuZero | Self::EqWithStdEncoder => Family::Baseline,
        }
    }

    /// Family of the action embedding and transition.
    pub fn dynamics(self) -> Family {
        match self {
            Self::EqMuZero | Self::EqWithStdEncoder | Self::EqWithStdPolicy => Family::Equivariant,
            Self::StdMuZero | Self::StdWithEqEncoder => Family::Baseline,
        }
    }

    pub fn policy(self) -> Family {
        match self {
            Self::EqMuZero | Self::EqWithStdEncoder => Family::Equivariant,
            _ => Family::Baseline,
        }
    }

    /// Family of the reward and value heads.
    pub fn heads(self) -> Family {
        self.dynamics()
    }

    /// Whether every component is equivariant, so the whole search is.
    pub fn is_fully_equivariant(self) -> bool {
        self == Self::EqMuZero
    }
}

impl fmt::Display for AgentVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AgentVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = Self::ALL.iter().map(|v| v.name()).collect();
                format!("unknown variant {s:?}; expected one of {}", names.join(", "))
            })
    }
}

/// How the equivariant transition mixes the four latent components.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionKind {
    /// One shared network per component; components never interact.
    Constrained,
    /// Component `i` sees all four components, starting from its own.
    Interacting,
}

impl FromStr for TransitionKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "constrained" => Ok(Self::Constrained),
            "interacting" => Ok(Self::Interacting),
            _ => Err(format!("unknown transition kind {s:?}")),
        }
    }
}

impl fmt::Display for TransitionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Constrained => "constrained",
            Self::Interacting => "interacting",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Channels per latent component.
    pub latent_channels: usize,
    /// Hidden width of the policy, reward and value MLPs.
    pub hidden: usize,
    pub num_actions: usize,
    pub transition: TransitionKind,
    pub init_seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_channels: 16,
            hidden: 32,
            num_actions: 5,
            transition: TransitionKind::Constrained,
            init_seed: 0,
        }
    }
}

const KERNEL: usize = 3;

#[derive(Clone, Copy, Debug)]
struct Conv {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Block {
    c1: Conv,
    c2: Conv,
}

#[derive(Clone, Copy, Debug)]
struct Dense {
    w: ParamId,
    b: ParamId,
}

#[derive(Clone, Copy, Debug)]
struct Mlp {
    l1: Dense,
    l2: Dense,
}

#[derive(Clone, Debug)]
enum EncoderNet {
    Eq([Conv; 3]),
    Std { stem: Conv, block: Block },
}

#[derive(Clone, Debug)]
enum DynamicsNet {
    Eq { embed: Vec<ParamId>, blocks: [Block; 2] },
    Std { embed: Vec<ParamId>, blocks: [Block; 2] },
}

#[derive(Clone, Debug)]
enum PolicyNet {
    Eq(Mlp),
    Std(Mlp),
}

#[derive(Clone, Debug)]
enum HeadsNet {
    Eq { reward: Mlp, value: Mlp },
    Std { reward: Mlp, value: Mlp },
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    init: Initializer,
}

impl Builder<'_> {
    fn conv(&mut self, name: &str, co: usize, ci: usize) -> Result<Conv, NdError> {
        let w = self.init.conv(co, ci, KERNEL);
        Ok(Conv {
            w: self.store.insert(format!("{name}.w"), w)?,
            b: self.store.insert(format!("{name}.b"), Tensor::zeros(&[co]))?,
        })
    }

    fn block(&mut self, name: &str, inp: usize, mid: usize, out: usize) -> Result<Block, NdError> {
        Ok(Block {
            c1: self.conv(&format!("{name}.conv1"), mid, inp)?,
            c2: self.conv(&format!("{name}.conv2"), out, mid)?,
        })
    }

    fn dense(&mut self, name: &str, out: usize, inp: usize) -> Result<Dense, NdError> {
        let w = self.init.dense(out, inp);
        Ok(Dense {
            w: self.store.insert(format!("{name}.w"), w)?,
            b: self.store.insert(format!("{name}.b"), Tensor::zeros(&[out]))?,
        })
    }

    fn mlp(&mut self, name: &str, inp: usize, hidden: usize, out: usize) -> Result<Mlp, NdError> {
        Ok(Mlp {
            l1: self.dense(&format!("{name}.fc1"), hidden, inp)?,
            l2: self.dense(&format!("{name}.fc2"), out, hidden)?,
        })
    }

    fn embed(&mut self, name: &str, actions: usize, dim: usize) -> Result<Vec<ParamId>, NdError> {
        (0..actions)
            .map(|a| {
                let v = self.init.glorot(&[dim], 1, dim);
                self.store.insert(format!("{name}.a{a}"), v)
            })
            .collect()
    }
}

/// Parameters plus the variant that decides how they are wired.
#[derive(Clone, Debug)]
pub struct WorldModel {
    config: ModelConfig,
    variant: AgentVariant,
    params: ParamStore,
    encoder: EncoderNet,
    dynamics: DynamicsNet,
    policy: PolicyNet,
    heads: HeadsNet,
}

/// Output of one model step used by the search.
#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    pub latent: LatentState<Tensor>,
    pub reward: f64,
    pub prior: Vec<f64>,
    pub value: f64,
}

/// `[channels, height, width]` tensor of an observation.
pub fn observation_tensor(obs: &Observation) -> Tensor {
    let (h, w) = (obs.height(), obs.width());
    let mut data = vec![0.0; OBS_CHANNELS * h * w];
    for (i, cell) in obs.cells().iter().enumerate() {
        for (ch, v) in cell.iter().enumerate() {
            data[ch * h * w + i] = *v;
        }
    }
    Tensor::new(&[OBS_CHANNELS, h, w], data).expect("shape")
}

fn quarter(i: usize) -> GroupElement {
    GroupElement::new(i as i64)
}

impl WorldModel {
    /// Freshly initialized model. Only the parameters the variant uses are
    /// created, under `eq.*` or `std.*` names.
    pub fn new(config: ModelConfig, variant: AgentVariant) -> Result<Self, ModelError> {
        let c = config.latent_channels;
        let (hid, na) = (config.hidden, config.num_actions);
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            init: Initializer::new(config.init_seed),
        };
        let encoder = match variant.encoder() {
            Family::Equivariant => EncoderNet::Eq([
                b.conv("eq.h.conv0", c, OBS_CHANNELS)?,
                b.conv("eq.h.conv1", c, c)?,
                b.conv("eq.h.conv2", c, c)?,
            ]),
            Family::Baseline => EncoderNet::Std {
                stem: b.conv("std.enc.stem", 4 * c, OBS_CHANNELS)?,
                block: b.block("std.enc.block", 4 * c, c, 4 * c)?,
            },
        };
        let dynamics = match variant.dynamics() {
            Family::Equivariant => {
                let first_in = match config.transition {
                    TransitionKind::Constrained => c,
                    TransitionKind::Interacting => 4 * c,
                };
                DynamicsNet::Eq {
                    embed: b.embed("eq.g", na, c)?,
                    blocks: [
                        b.block("eq.tau.block0", first_in, c, c)?,
                        b.block("eq.tau.block1", c, c, c)?,
                    ],
                }
            }
            Family::Baseline => DynamicsNet::Std {
                embed: b.embed("std.g", na, 4 * c)?,
                blocks: [
                    b.block("std.tau.block0", 4 * c, c, 4 * c)?,
                    b.block("std.tau.block1", 4 * c, c, 4 * c)?,
                ],
            },
        };
        let policy = match variant.policy() {
            Family::Equivariant => PolicyNet::Eq(b.mlp("eq.pi", c, hid, na)?),
            Family::Baseline => PolicyNet::Std(b.mlp("std.pi", 4 * c, hid, na)?),
        };
        let heads = match variant.heads() {
            Family::Equivariant => HeadsNet::Eq {
                reward: b.mlp("eq.rho", c, hid, 1)?,
                value: b.mlp("eq.v", c, hid, 1)?,
            },
            Family::Baseline => HeadsNet::Std {
                reward: b.mlp("std.rho", 4 * c, hid, 1)?,
                value: b.mlp("std.v", 4 * c, hid, 1)?,
            },
        };
        Ok(Self {
            config,
            variant,
            params,
            encoder,
            dynamics,
            policy,
            heads,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn variant(&self) -> AgentVariant {
        self.variant
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn num_actions(&self) -> usize {
        self.config.num_actions
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(self.params.clone())
            .with_meta("variant", self.variant)
            .with_meta("latent_channels", self.config.latent_channels)
            .with_meta("hidden", self.config.hidden)
            .with_meta("num_actions", self.config.num_actions)
            .with_meta("transition", self.config.transition)
            .with_meta("init_seed", self.config.init_seed)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        fn field<T: FromStr>(ckpt: &Checkpoint, key: &'static str) -> Result<T, ModelError> {
            let raw = ckpt.meta(key).ok_or(ModelError::MissingMeta(key))?;
            raw.parse().map_err(|_| ModelError::BadMeta {
                key,
                value: raw.to_string(),
            })
        }
        let variant: AgentVariant = field(ckpt, "variant")?;
        let config = ModelConfig {
            latent_channels: field(ckpt, "latent_channels")?,
            hidden: field(ckpt, "hidden")?,
            num_actions: field(ckpt, "num_actions")?,
            transition: field(ckpt, "transition")?,
            init_seed: field(ckpt, "init_seed")?,
        };
        let mut model = Self::new(config, variant)?;
        if ckpt.params.len() != model.params.len() {
            return Err(ModelError::ParamMismatch {
                name: "*".into(),
                msg: format!(
                    "checkpoint has {} tensors, variant expects {}",
                    ckpt.params.len(),
                    model.params.len()
                ),
            });
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.name(id).to_string();
            let src = ckpt.params.find(&name).ok_or_else(|| ModelError::ParamMismatch {
                name: name.clone(),
                msg: "missing".into(),
            })?;
            let t = ckpt.params.get(src);
            if t.shape() != model.params.get(id).shape() {
                return Err(ModelError::ParamMismatch {
                    msg: format!("shape {:?}, expected {:?}", t.shape(), model.params.get(id).shape()),
                    name,
                });
            }
            *model.params.get_mut(id) = t.clone();
        }
        Ok(model)
    }

    fn conv<B: Backend>(&self, b: &mut B, conv: Conv, x: &B::T) -> Result<B::T, NdError> {
        let w = b.param(&self.params, conv.w);
        let bias = b.param(&self.params, conv.b);
        b.conv2d(&w, &bias, x)
    }

    fn block<B: Backend>(&self, b: &mut B, block: Block, x: &B::T) -> Result<B::T, NdError> {
        let p = &self.params;
        let (w1, b1) = (b.param(p, block.c1.w), b.param(p, block.c1.b));
        let (w2, b2) = (b.param(p, block.c2.w), b.param(p, block.c2.b));
        b.residual_block(&w1, &b1, &w2, &b2, x)
    }

    fn mlp<B: Backend>(&self, b: &mut B, mlp: Mlp, x: &B::T) -> Result<B::T, NdError> {
        let p = &self.params;
        let (w1, b1) = (b.param(p, mlp.l1.w), b.param(p, mlp.l1.b));
        let h = b.dense(&w1, &b1, x)?;
        let h = b.relu(&h);
        let (w2, b2) = (b.param(p, mlp.l2.w), b.param(p, mlp.l2.b));
        b.dense(&w2, &b2, &h)
    }

    fn split<B: Backend>(&self, b: &mut B, x: &B::T) -> Result<LatentState<B::T>, NdError> {
        let c = self.config.latent_channels;
        Ok(LatentState::new([
            b.slice_channels(x, 0, c)?,
            b.slice_channels(x, c, c)?,
            b.slice_channels(x, 2 * c, c)?,
            b.slice_channels(x, 3 * c, c)?,
        ]))
    }

    fn scale_components<B: Backend>(&self, b: &mut B, z: LatentState<B::T>) -> Result<LatentState<B::T>, NdError> {
        let [c0, c1, c2, c3] = z.components;
        Ok(LatentState::new([
            b.minmax_scale(&c0)?,
            b.minmax_scale(&c1)?,
            b.minmax_scale(&c2)?,
            b.minmax_scale(&c3)?,
        ]))
    }

    fn stack<B: Backend>(&self, b: &mut B, z: &LatentState<B::T>) -> Result<B::T, NdError> {
        let [a, c, d, e] = &z.components;
        b.concat_channels(&[a, c, d, e])
    }

    /// State latent of an observation: `h(R^i x)` for `i = 0..4` when
    /// equivariant, a split of one wide feature map otherwise.
    pub fn represent<B: Backend>(&self, b: &mut B, obs: &Observation) -> Result<LatentState<B::T>, ModelError> {
        let raw = self.represent_raw(b, obs)?;
        Ok(self.scale_components(b, raw)?)
    }

    fn represent_raw<B: Backend>(&self, b: &mut B, obs: &Observation) -> Result<LatentState<B::T>, ModelError> {
        match &self.encoder {
            EncoderNet::Eq(convs) => {
                let mut comps = Vec::with_capacity(4);
                for i in 0..4 {
                    let x = b.constant(observation_tensor(&act_on_observation(quarter(i), obs)));
                    let h = self.conv(b, convs[0], &x)?;
                    let h = b.relu(&h);
                    let h = self.conv(b, convs[1], &h)?;
                    let h = b.relu(&h);
                    comps.push(self.conv(b, convs[2], &h)?);
                }
                Ok(LatentState::new(comps.try_into().map_err(|_| ()).expect("four")))
            }
            EncoderNet::Std { stem, block } => {
                let x = b.constant(observation_tensor(obs));
                let h = self.conv(b, *stem, &x)?;
                let h = b.relu(&h);
                let h = self.block(b, *block, &h)?;
                Ok(self.split(b, &h)?)
            }
        }
    }

    /// Adds the action embedding to each component: component `i` receives
    /// `g(R^i a)` broadcast over all spatial positions.
    pub fn embed_action<B: Backend>(
        &self,
        b: &mut B,
        z: &LatentState<B::T>,
        a: ActionId,
    ) -> Result<LatentState<B::T>, ModelError> {
        let c = self.config.latent_channels;
        let mut comps = Vec::with_capacity(4);
        for i in 0..4 {
            let v = match &self.dynamics {
                DynamicsNet::Eq { embed, .. } => b.param(&self.params, embed[act_on_action(quarter(i), a).index()]),
                DynamicsNet::Std { embed, .. } => {
                    let full = b.param(&self.params, embed[a.index()]);
                    let idx: Vec<usize> = (i * c..(i + 1) * c).collect();
                    b.gather(&full, &idx)?
                }
            };
            comps.push(b.add_channels(&z.components[i], &v)?);
        }
        Ok(LatentState::new(comps.try_into().map_err(|_| ()).expect("four")))
    }

    /// State-action encoding `h(R^i x) + g(R^i a)`.
    pub fn encode<B: Backend>(&self, b: &mut B, obs: &Observation, a: ActionId) -> Result<LatentState<B::T>, ModelError> {
        let z = self.represent(b, obs)?;
        self.embed_action(b, &z, a)
    }

    /// Transition on a state-action latent.
    pub fn transition<B: Backend>(&self, b: &mut B, z: &LatentState<B::T>) -> Result<LatentState<B::T>, ModelError> {
        let raw = self.transition_raw(b, z)?;
        Ok(self.scale_components(b, raw)?)
    }

    fn transition_raw<B: Backend>(&self, b: &mut B, z: &LatentState<B::T>) -> Result<LatentState<B::T>, ModelError> {
        match &self.dynamics {
            DynamicsNet::Eq { blocks, .. } => {
                let mut comps = Vec::with_capacity(4);
                for i in 0..4 {
                    let first = match self.config.transition {
                        TransitionKind::Constrained => self.block(b, blocks[0], &z.components[i])?,
                        TransitionKind::Interacting => {
                            let zc = &z.components;
                            let args = [&zc[i], &zc[(i + 1) % 4], &zc[(i + 2) % 4], &zc[(i + 3) % 4]];
                            let stacked = b.concat_channels(&args)?;
                            let p = &self.params;
                            let (w1, b1) = (b.param(p, blocks[0].c1.w), b.param(p, blocks[0].c1.b));
                            let (w2, b2) = (b.param(p, blocks[0].c2.w), b.param(p, blocks[0].c2.b));
                            let h = b.conv2d(&w1, &b1, &stacked)?;
                            let h = b.relu(&h);
                            let f = b.conv2d(&w2, &b2, &h)?;
                            b.add(&zc[i], &f)?
                        }
                    };
                    comps.push(self.block(b, blocks[1], &first)?);
                }
                Ok(LatentState::new(comps.try_into().map_err(|_| ()).expect("four")))
            }
            DynamicsNet::Std { blocks, .. } => {
                let x = self.stack(b, z)?;
                let h = self.block(b, blocks[0], &x)?;
                let h = self.block(b, blocks[1], &h)?;
                Ok(self.split(b, &h)?)
            }
        }
    }

    /// Next state latent from a state latent and an action.
    pub fn dynamics<B: Backend>(&self, b: &mut B, s: &LatentState<B::T>, a: ActionId) -> Result<LatentState<B::T>, ModelError> {
        let u = self.embed_action(b, s, a)?;
        self.transition(b, &u)
    }

    /// Action distribution. Equivariant form:
    /// `P(a|z) = ¼ Σ_i π(R^i a | z_i)`.
    pub fn policy<B: Backend>(&self, b: &mut B, z: &LatentState<B::T>) -> Result<B::T, ModelError> {
        match &self.policy {
            PolicyNet::Eq(mlp) => {
                let mut parts = Vec::with_capacity(4);
                for i in 0..4 {
                    let pooled = b.mean_pool(&z.components[i])?;
                    let logits = self.mlp(b, *mlp, &pooled)?;
                    let probs = b.softmax(&logits)?;
                    let perm = action_permutation(quarter(i), self.config.num_actions);
                    parts.push(b.gather(&probs, &perm)?);
                }
                let refs: Vec<&B::T> = parts.iter().collect();
                let total = b.canonical_sum(&refs)?;
                Ok(b.scale(&total, 0.25))
            }
            PolicyNet::Std(mlp) => {
                let x = self.stack(b, z)?;
                let pooled = b.mean_pool(&x)?;
                let logits = self.mlp(b, *mlp, &pooled)?;
                Ok(b.softmax(&logits)?)
            }
        }
    }

    fn head<B: Backend>(&self, b: &mut B, z: &LatentState<B::T>, pick: impl Fn(&HeadsNet) -> Mlp) -> Result<B::T, ModelError> {
        let mlp = pick(&self.heads);
        let [a, c, d, e] = &z.components;
        let pooled = match &self.heads {
            HeadsNet::Eq { .. } => {
                let total = b.canonical_sum(&[a, c, d, e])?;
                b.mean_pool(&total)?
            }
            HeadsNet::Std { .. } => {
                let x = b.concat_channels(&[a, c, d, e])?;
                b.mean_pool(&x)?
            }
        };
        Ok(self.mlp(b, mlp, &pooled)?)
    }

    /// Reward of the transition that produced state latent `z`, shape `[1]`.
    pub fn reward<B: Backend>(&self, b: &mut B, z: &LatentState<B::T>) -> Result<B::T, ModelError> {
        self.head(b, z, |h| match h {
            HeadsNet::Eq { reward, .. } | HeadsNet::Std { reward, .. } => *reward,
        })
    }

    /// Value of state latent `z`, shape `[1]`.
    pub fn value<B: Backend>(&self, b: &mut B, z: &LatentState<B::T>) -> Result<B::T, ModelError> {
        self.head(b, z, |h| match h {
            HeadsNet::Eq { value, .. } | HeadsNet::Std { value, .. } => *value,
        })
    }

    /// Root expansion: latent, prior and value of an observation. The reward
    /// field is zero.
    pub fn initial_inference(&self, obs: &Observation) -> Result<Expansion, ModelError> {
        let mut e = Eval;
        let latent = self.represent(&mut e, obs)?;
        let prior = self.policy(&mut e, &latent)?.into_data();
        let value = self.value(&mut e, &latent)?.item();
        Ok(Expansion {
            latent,
            reward: 0.0,
            prior,
            value,
        })
    }

    /// Child expansion: `(T(s ⊕ g(a)), R, P, V)`.
    pub fn recurrent_inference(&self, s: &LatentState<Tensor>, a: ActionId) -> Result<Expansion, ModelError> {
        let mut e = Eval;
        let latent = self.dynamics(&mut e, s, a)?;
        let reward = self.reward(&mut e, &latent)?.item();
        let prior = self.policy(&mut e, &latent)?.into_data();
        let value = self.value(&mut e, &latent)?.item();
        Ok(Expansion {
            latent,
            reward,
            prior,
            value,
        })
    }
}
