//! Shared role-conditioned linear-softmax sequence policy.
//!
//! At each step the logit of a role-legal token `t` is `W[t] · φ(ctx)`, and
//! the sampling distribution is `softmax(logits / temperature)`. Because the
//! model is linear in `W`, the gradient of a token log-probability is
//! `(onehot − probs) ⊗ φ / temperature`, which is what every update uses.

mod features;
mod params;
mod vocab;

pub use features::{FeatureLayout, Features};
pub use params::{Matrix, PolicyParams};
pub(crate) use params::{header_value, read_matrix_rows, write_matrix_rows};
pub use vocab::{Role, TokenId, Vocab};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::rng::Rng;
use crate::synthenv::{Attribute, EnvConfig, Instance, Token};

/// Logit bonus the base prior gives the digit matching the visible count.
const VISUAL_COUNT_PRIOR: f64 = 2.0;
/// Per-unit penalty on digit logits: the base prior under-reports large counts.
const UNDERCOUNT_PRIOR: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    Zero,
    /// Hand-set prior standing in for a pretrained model: answers mostly in
    /// format, captions mostly describe what is visible, no counting skill.
    Base,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub init: InitKind,
    pub observer_max_len: usize,
    pub solver_max_len: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { init: InitKind::Base, observer_max_len: 16, solver_max_len: 4 }
    }
}

/// Vocabulary, feature layout and length limits: everything about the
/// policy except its weights.
#[derive(Debug, Clone)]
pub struct PolicyModel {
    pub env: EnvConfig,
    pub vocab: Vocab,
    pub layout: FeatureLayout,
    pub observer_max_len: usize,
    pub solver_max_len: usize,
}

impl PolicyModel {
    pub fn new(env: &EnvConfig, cfg: &PolicyConfig) -> Result<Self> {
        env.validate()?;
        if cfg.observer_max_len == 0 || cfg.solver_max_len == 0 {
            return config_err("maximum sequence lengths must be positive");
        }
        let vocab = Vocab::new(env);
        let layout = FeatureLayout::new(
            env.slots,
            env.colors,
            env.shapes,
            vocab.len(),
            cfg.observer_max_len.max(cfg.solver_max_len),
        );
        Ok(Self {
            env: env.clone(),
            vocab,
            layout,
            observer_max_len: cfg.observer_max_len,
            solver_max_len: cfg.solver_max_len,
        })
    }

    pub fn max_len(&self, role: Role) -> usize {
        match role {
            Role::Observer => self.observer_max_len,
            Role::Solver => self.solver_max_len,
        }
    }

    pub fn init_params(&self, kind: InitKind) -> PolicyParams {
        match kind {
            InitKind::Zero => self.zero_params(),
            InitKind::Base => self.base_prior(),
        }
    }

    pub fn zero_params(&self) -> PolicyParams {
        PolicyParams::zeros(self.vocab.len(), self.layout.dim)
    }

    pub fn check_params(&self, params: &PolicyParams) -> Result<()> {
        let want = (self.vocab.len(), self.layout.dim);
        if params.weights.shape() != want {
            return Err(Error::Dimension {
                expected: format!("{want:?}"),
                got: format!("{:?}", params.weights.shape()),
            });
        }
        Ok(())
    }

    /// Stand-in for a pretrained model: grounded, non-repeating captions and
    /// well-formed answers, with a visual counting ability that is reliable only for small counts.
    fn base_prior(&self) -> PolicyParams {
        let mut p = self.zero_params();
        let l = &self.layout;
        let v = &self.vocab;
        let w = &mut p.weights;
        let observer = l.role.start + Role::Observer.index();
        let solver = l.role.start + Role::Solver.index();
        for id in 0..v.len() {
            match v.token(id) {
                Token::Fact { slot, attr } => {
                    // describe what is visible, do not repeat yourself
                    w.set(id, l.scene_index(slot as usize, attr), 6.0);
                    w.set(id, l.history.start + id, -4.0);
                    w.set(id, solver, -8.0);
                }
                Token::Digit(d) => {
                    w.set(id, observer, -3.0);
                    w.set(id, solver, 3.0 - UNDERCOUNT_PRIOR * f64::from(d));
                    // partial visual counting for single-attribute questions
                    let per_kind = self.env.slots + 1;
                    w.set(id, l.scene_count.start + d as usize, VISUAL_COUNT_PRIOR);
                    w.set(id, l.scene_count.start + per_kind + d as usize, VISUAL_COUNT_PRIOR);
                    for d in 0..=self.env.slots as u8 {
                        w.set(id, l.history.start + v.digit(d), -4.0);
                    }
                }
                Token::Eoc => {
                    w.set(id, l.bias.start, -3.0);
                    for f in 0..v.num_facts() {
                        w.set(id, l.history.start + f, 0.5);
                    }
                }
                Token::Eos => {
                    w.set(id, l.bias.start, -2.0);
                    for d in 0..=self.env.slots as u8 {
                        w.set(id, l.history.start + v.digit(d), 6.0);
                    }
                }
            }
        }
        p
    }

    /// Features shared by all steps of one sequence.
    pub fn sequence_base(
        &self,
        role: Role,
        inst: &Instance,
        image_visible: bool,
        caption: Option<&[TokenId]>,
    ) -> Features {
        let image_visible = image_visible || role == Role::Observer;
        let caption = if role == Role::Solver { Some(caption.unwrap_or(&[])) } else { None };
        self.layout.sequence_base(&self.vocab, role, inst, image_visible, caption)
    }
}

/// Conditioning for one emission.
#[derive(Debug, Clone, PartialEq)]
pub struct Context {
    pub role: Role,
    pub position: usize,
    pub features: Features,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub role: Role,
    pub tokens: Vec<TokenId>,
    pub contexts: Vec<Context>,
    pub behavior_logprobs: Vec<f64>,
    pub temperature: f64,
    pub truncated: bool,
    /// Version of the params that produced `behavior_logprobs`.
    pub policy_version: u64,
    pub instance_id: u64,
    /// Index of the parent caption inside its rollout tree (Solver only).
    pub caption_index: Option<usize>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Sample { temperature: f64, top_p: f64 },
    Greedy,
}

impl Decoding {
    pub fn sample(temperature: f64) -> Self {
        Decoding::Sample { temperature, top_p: 1.0 }
    }
}

/// Logits over `vocab.legal(ctx.role)`, in that order.
pub fn logits(model: &PolicyModel, params: &PolicyParams, ctx: &Context) -> Result<Vec<f64>> {
    model.check_params(params)?;
    if let Some(&(j, _)) = ctx.features.0.last() {
        if j >= model.layout.dim {
            return Err(Error::Dimension {
                expected: format!("feature index < {}", model.layout.dim),
                got: j.to_string(),
            });
        }
    }
    Ok(raw_logits(model, params, ctx))
}

fn raw_logits(model: &PolicyModel, params: &PolicyParams, ctx: &Context) -> Vec<f64> {
    model
        .vocab
        .legal(ctx.role)
        .iter()
        .map(|&t| ctx.features.dot(params.weights.row(t)))
        .collect()
}

/// Log-softmax of `logits / temperature`.
pub fn log_softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = logits.iter().map(|z| (z - max) / temperature).collect();
    let lse = shifted.iter().map(|z| z.exp()).sum::<f64>().ln();
    shifted.into_iter().map(|z| z - lse).collect()
}

pub fn softmax(logits: &[f64], temperature: f64) -> Vec<f64> {
    log_softmax(logits, temperature).into_iter().map(f64::exp).collect()
}

/// Per-step distribution over legal tokens (temperature 1).
pub fn probabilities(model: &PolicyModel, params: &PolicyParams, ctx: &Context) -> Result<Vec<f64>> {
    Ok(softmax(&logits(model, params, ctx)?, 1.0))
}

fn argmax(xs: &[f64]) -> usize {
    // first maximum wins, so ties resolve to the lowest token id
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn draw(logp: &[f64], top_p: f64, rng: &mut Rng) -> (usize, f64) {
    if top_p >= 1.0 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, lp) in logp.iter().enumerate() {
            acc += lp.exp();
            if u < acc {
                return (i, *lp);
            }
        }
        let last = logp.len() - 1;
        return (last, logp[last]);
    }
    // nucleus: smallest prefix of the sorted distribution with mass >= top_p
    let mut order: Vec<usize> = (0..logp.len()).collect();
    order.sort_by(|&a, &b| logp[b].total_cmp(&logp[a]).then(a.cmp(&b)));
    let mut kept = Vec::new();
    let mut mass = 0.0;
    for &i in &order {
        kept.push(i);
        mass += logp[i].exp();
        if mass >= top_p {
            break;
        }
    }
    let u: f64 = rng.gen::<f64>() * mass;
    let mut acc = 0.0;
    for &i in &kept {
        acc += logp[i].exp();
        if u < acc {
            return (i, logp[i] - mass.ln());
        }
    }
    let i = *kept.last().unwrap();
    (i, logp[i] - mass.ln())
}

/// Autoregressive generation until the role's terminal token or the
/// maximum length. `caption` is only used by the Solver role.
#[allow(clippy::too_many_arguments)]
pub fn generate(
    model: &PolicyModel,
    params: &PolicyParams,
    role: Role,
    inst: &Instance,
    image_visible: bool,
    caption: Option<&[TokenId]>,
    decoding: Decoding,
    rng: &mut Rng,
) -> Result<Trajectory> {
    model.check_params(params)?;
    let temperature = match decoding {
        Decoding::Sample { temperature, top_p } => {
            if !(temperature > 0.0 && temperature.is_finite()) {
                return config_err(format!("temperature must be positive, got {temperature}"));
            }
            if !(top_p > 0.0 && top_p <= 1.0) {
                return config_err(format!("top_p must be in (0, 1], got {top_p}"));
            }
            temperature
        }
        Decoding::Greedy => 1.0,
    };
    let base = model.sequence_base(role, inst, image_visible, caption);
    let legal = model.vocab.legal(role);
    let terminal = model.vocab.terminal(role);
    let max_len = model.max_len(role);

    let mut tokens = Vec::with_capacity(max_len);
    let mut contexts = Vec::with_capacity(max_len);
    let mut behavior_logprobs = Vec::with_capacity(max_len);
    let mut truncated = true;
    for position in 0..max_len {
        let ctx = Context { role, position, features: model.layout.step(&base, &tokens, position) };
        let z = raw_logits(model, params, &ctx);
        let logp = log_softmax(&z, temperature);
        let (k, lp) = match decoding {
            Decoding::Sample { top_p, .. } => draw(&logp, top_p, rng),
            Decoding::Greedy => {
                let k = argmax(&z);
                (k, logp[k])
            }
        };
        let tok = legal[k];
        tokens.push(tok);
        contexts.push(ctx);
        behavior_logprobs.push(lp);
        if tok == terminal {
            truncated = false;
            break;
        }
    }
    Ok(Trajectory {
        role,
        tokens,
        contexts,
        behavior_logprobs,
        temperature,
        truncated,
        policy_version: params.version,
        instance_id: inst.scene.scene_id,
        caption_index: None,
    })
}

#[allow(clippy::too_many_arguments)]
pub fn sample_sequence(
    model: &PolicyModel,
    params: &PolicyParams,
    role: Role,
    inst: &Instance,
    image_visible: bool,
    caption: Option<&[TokenId]>,
    temperature: f64,
    rng: &mut Rng,
) -> Result<Trajectory> {
    if role == Role::Solver && caption.is_none() {
        return config_err("solver sampling requires a caption (possibly empty)");
    }
    generate(model, params, role, inst, image_visible, caption, Decoding::sample(temperature), rng)
}

/// Position of `token` inside the role-legal list.
fn legal_position(model: &PolicyModel, role: Role, token: TokenId) -> usize {
    model
        .vocab
        .legal(role)
        .iter()
        .position(|&t| t == token)
        .expect("trajectory token is legal for its role")
}

/// Per-token log-probabilities of a stored trajectory under `params`, at the
/// trajectory's sampling temperature.
pub fn token_logprobs(model: &PolicyModel, params: &PolicyParams, traj: &Trajectory) -> Vec<f64> {
    traj.contexts
        .iter()
        .zip(&traj.tokens)
        .map(|(ctx, &tok)| {
            let logp = log_softmax(&raw_logits(model, params, ctx), traj.temperature);
            logp[legal_position(model, traj.role, tok)]
        })
        .collect()
}

/// Adds `Σ_t scales[t] · ∇ log π(token_t | ctx_t)` into `grad` and returns the
/// per-token log-probabilities.
pub fn accumulate_logprob_grad(
    model: &PolicyModel,
    params: &PolicyParams,
    traj: &Trajectory,
    scales: &[f64],
    grad: &mut Matrix,
) -> Vec<f64> {
    let legal = model.vocab.legal(traj.role);
    let mut out = Vec::with_capacity(traj.len());
    for ((ctx, &tok), &scale) in traj.contexts.iter().zip(&traj.tokens).zip(scales) {
        let logp = log_softmax(&raw_logits(model, params, ctx), traj.temperature);
        let k = legal_position(model, traj.role, tok);
        out.push(logp[k]);
        if scale == 0.0 {
            continue;
        }
        let s = scale / traj.temperature;
        for (i, &t) in legal.iter().enumerate() {
            let coef = s * (f64::from(u8::from(i == k)) - logp[i].exp());
            if coef == 0.0 {
                continue;
            }
            let row = grad.row_mut(t);
            for &(j, v) in &ctx.features.0 {
                row[j] += coef * v;
            }
        }
    }
    out
}

/// Total log-probability of the trajectory and its exact gradient w.r.t. the
/// weights.
pub fn logprob_and_grad(model: &PolicyModel, params: &PolicyParams, traj: &Trajectory) -> (f64, Matrix) {
    let mut grad = Matrix::zeros(params.weights.rows(), params.weights.cols());
    let ones = vec![1.0; traj.len()];
    let lps = accumulate_logprob_grad(model, params, traj, &ones, &mut grad);
    (lps.iter().sum(), grad)
}

/// Decoded Observer caption tokens, for display and evaluation.
pub fn describe(model: &PolicyModel, ids: &[TokenId]) -> String {
    model
        .vocab
        .decode(ids)
        .iter()
        .map(|t| match t {
            Token::Fact { slot, attr: Attribute::Color(c) } => format!("s{slot}:c{c}"),
            Token::Fact { slot, attr: Attribute::Shape(s) } => format!("s{slot}:h{s}"),
            Token::Digit(d) => d.to_string(),
            Token::Eoc => "<eoc>".into(),
            Token::Eos => "<eos>".into(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}
