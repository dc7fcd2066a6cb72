//! Size-independent policy and value networks.
//!
//! Both networks start with a state encoder: graph attention over the object
//! graph followed by a fully connected layer gives one embedding per object,
//! and a column-wise max over objects gives the state embedding. Each
//! object embedding concatenated with the state embedding is a contextual
//! embedding, fed to decoders whose parameters are tied across objects:
//!
//! * policy: `f_pi([o|s])` scores action template `k` on object `o`; a
//!   separate head on the state embedding scores Noop; a softmax over all
//!   scores is the policy;
//! * value: `V(s) = sum_o f_V([o|s])`.
//!
//! No parameter shape depends on the number of objects, so one
//! [`ParamStore`] serves every instance of a domain. Disjointly duplicating
//! an instance leaves the state embedding unchanged and doubles the value,
//! since each copy contributes the same per-object terms.

use thiserror::Error;

use crate::graph::{build_graph, node_features, ObjectGraph};
use crate::mdp::{DomainId, GroundAction, GroundState, MdpError, PolicyDistribution, ProblemInstance};
use crate::nn::layers::{fc, gat_layer, gcn_layer, mlp2, AttentionPass};
use crate::nn::{glorot_uniform, NnError, ParamStore, Tape, Tensor, Var, LEAKY_SLOPE};
use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("checkpoint domain {expected} does not match instance domain {found}")]
    DomainMismatch { expected: DomainId, found: DomainId },
    #[error("model expects {expected} node features, instance provides {found}")]
    FeatureCountMismatch { expected: usize, found: usize },
    #[error("model expects {expected} action templates, instance has {found}")]
    TemplateCountMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EncoderKind {
    Gat,
    Gcn,
}

impl EncoderKind {
    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Gat => "gat",
            EncoderKind::Gcn => "gcn",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "gat" => Some(EncoderKind::Gat),
            "gcn" => Some(EncoderKind::Gcn),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            EncoderKind::Gat => 0,
            EncoderKind::Gcn => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(EncoderKind::Gat),
            1 => Some(EncoderKind::Gcn),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EncoderConfig {
    pub domain: DomainId,
    pub encoder: EncoderKind,
    /// Graph layer output width per node.
    pub gat_out: usize,
    /// Width of object and state embeddings.
    pub embed_dim: usize,
    /// Hidden width of the two-layer decoders.
    pub hidden: usize,
    /// Attention passes combined by max.
    pub gat_repeats: usize,
    pub feature_count: usize,
    pub template_count: usize,
    /// Value network reuses the policy network's encoder.
    pub shared_encoder: bool,
}

impl EncoderConfig {
    pub fn for_domain(domain: DomainId) -> Self {
        Self {
            domain,
            encoder: EncoderKind::Gat,
            gat_out: 3,
            embed_dim: 20,
            hidden: 20,
            gat_repeats: 4,
            feature_count: domain.feature_count(),
            template_count: domain.template_count(),
            shared_encoder: false,
        }
    }

    pub fn contextual_dim(&self) -> usize {
        2 * self.embed_dim
    }

    fn encoder_prefix(&self, net: Net) -> &'static str {
        match (net, self.shared_encoder) {
            (Net::Value, false) => "value/enc",
            _ => "policy/enc",
        }
    }

    /// Name and shape of every parameter, in initialization order.
    pub fn param_shapes(&self) -> Vec<(String, [usize; 2])> {
        let (f, g, d, h, t) = (
            self.feature_count,
            self.gat_out,
            self.embed_dim,
            self.hidden,
            self.template_count,
        );
        let mut out = Vec::new();
        let encoders: &[&str] = if self.shared_encoder {
            &["policy/enc"]
        } else {
            &["policy/enc", "value/enc"]
        };
        for enc in encoders {
            match self.encoder {
                EncoderKind::Gat => {
                    for k in 0..self.gat_repeats {
                        out.push((format!("{enc}/gat{k}/w"), [f, g]));
                        out.push((format!("{enc}/gat{k}/a"), [2 * g, 1]));
                    }
                }
                EncoderKind::Gcn => out.push((format!("{enc}/gcn/w"), [f, g])),
            }
            out.push((format!("{enc}/fc/w"), [g, d]));
            out.push((format!("{enc}/fc/b"), [1, d]));
        }
        let mut mlp = |name: &str, input: usize, output: usize| {
            out.push((format!("{name}/l1/w"), [input, h]));
            out.push((format!("{name}/l1/b"), [1, h]));
            out.push((format!("{name}/l2/w"), [h, output]));
            out.push((format!("{name}/l2/b"), [1, output]));
        };
        mlp("policy/dec", 2 * d, t);
        mlp("policy/noop", d, 1);
        mlp("value/dec", 2 * d, 1);
        out
    }

    pub fn validate_instance(&self, instance: &ProblemInstance) -> Result<(), ModelError> {
        if instance.domain != self.domain {
            return Err(ModelError::DomainMismatch {
                expected: self.domain,
                found: instance.domain,
            });
        }
        let found = instance.domain.feature_count();
        if found != self.feature_count {
            return Err(ModelError::FeatureCountMismatch {
                expected: self.feature_count,
                found,
            });
        }
        if instance.template_count() != self.template_count {
            return Err(ModelError::TemplateCountMismatch {
                expected: self.template_count,
                found: instance.template_count(),
            });
        }
        Ok(())
    }
}

/// Total scalar parameters; a function of the configuration only.
pub fn param_count(config: &EncoderConfig) -> usize {
    config.param_shapes().iter().map(|(_, s)| s[0] * s[1]).sum()
}

/// Scale applied to the Glorot draw of the policy output layers so the
/// initial policy is close to uniform on every instance size.
pub const POLICY_HEAD_INIT_SCALE: f64 = 0.1;

/// Glorot-uniform weights and zero biases, drawn in
/// [`EncoderConfig::param_shapes`] order. Policy output layers are scaled
/// by [`POLICY_HEAD_INIT_SCALE`].
pub fn init_params(config: &EncoderConfig, seed: u64) -> ParamStore {
    let mut rng = RngStream::new(seed);
    let mut store = ParamStore::new();
    for (name, [r, c]) in config.param_shapes() {
        let t = if name.ends_with("/b") {
            Tensor::zeros(r, c)
        } else if name.starts_with("policy/") && name.ends_with("/l2/w") {
            let mut t = glorot_uniform(r, c, &mut rng);
            t.scale_in_place(POLICY_HEAD_INIT_SCALE);
            t
        } else {
            glorot_uniform(r, c, &mut rng)
        };
        store.insert(name, t);
    }
    store
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Net {
    Policy,
    Value,
}

/// Outputs of a state encoder on a tape.
#[derive(Debug, Clone, Copy)]
pub struct Encoding {
    /// `n x embed_dim`
    pub objects: Var,
    /// `1 x embed_dim`
    pub state: Var,
    /// `n x 2 embed_dim`
    pub contextual: Var,
}

/// A configuration plus parameters, evaluable on any instance of its domain.
#[derive(Debug, Clone, PartialEq)]
pub struct TransferNet {
    pub config: EncoderConfig,
    pub params: ParamStore,
}

/// Per-instance data reused across forward passes.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub instance: &'a ProblemInstance,
    pub graph: ObjectGraph,
}

impl<'a> Prepared<'a> {
    pub fn new(instance: &'a ProblemInstance) -> Self {
        Self {
            instance,
            graph: build_graph(instance),
        }
    }
}

impl TransferNet {
    pub fn new(config: EncoderConfig, seed: u64) -> Self {
        Self {
            config,
            params: init_params(&config, seed),
        }
    }

    pub fn from_params(config: EncoderConfig, params: ParamStore) -> Self {
        Self { config, params }
    }

    fn p(&self, tape: &mut Tape, name: &str) -> Result<Var, NnError> {
        tape.param(&self.params, name)
    }

    fn encode_net(
        &self,
        tape: &mut Tape,
        prep: &Prepared<'_>,
        state: &GroundState,
        net: Net,
    ) -> Result<Encoding, ModelError> {
        prep.instance.check_state(state)?;
        let prefix = self.config.encoder_prefix(net);
        let n = prep.instance.object_count();
        let x = tape.constant(node_features(prep.instance, state));
        let g = match self.config.encoder {
            EncoderKind::Gat => {
                let mut passes = Vec::with_capacity(self.config.gat_repeats);
                for k in 0..self.config.gat_repeats {
                    passes.push(AttentionPass {
                        w: self.p(tape, &format!("{prefix}/gat{k}/w"))?,
                        a: self.p(tape, &format!("{prefix}/gat{k}/a"))?,
                    });
                }
                gat_layer(tape, x, &prep.graph, &passes)?
            }
            EncoderKind::Gcn => {
                let w = self.p(tape, &format!("{prefix}/gcn/w"))?;
                gcn_layer(tape, x, &prep.graph, w)?
            }
        };
        let w = self.p(tape, &format!("{prefix}/fc/w"))?;
        let b = self.p(tape, &format!("{prefix}/fc/b"))?;
        let o = fc(tape, g, w, b)?;
        let objects = tape.leaky_relu(o, LEAKY_SLOPE);
        let pooled = tape.max_rows(objects)?;
        let tiled = tape.repeat_row(pooled, n)?;
        let contextual = tape.concat_cols(objects, tiled)?;
        Ok(Encoding {
            objects,
            state: pooled,
            contextual,
        })
    }

    fn mlp_params(&self, tape: &mut Tape, name: &str) -> Result<[(Var, Var); 2], NnError> {
        Ok([
            (self.p(tape, &format!("{name}/l1/w"))?, self.p(tape, &format!("{name}/l1/b"))?),
            (self.p(tape, &format!("{name}/l2/w"))?, self.p(tape, &format!("{name}/l2/b"))?),
        ])
    }

    /// Policy-network encoding of `state`.
    pub fn encode(
        &self,
        tape: &mut Tape,
        prep: &Prepared<'_>,
        state: &GroundState,
    ) -> Result<Encoding, ModelError> {
        self.encode_net(tape, prep, state, Net::Policy)
    }

    /// `1 x (T n + 1)` row of action scores in legal-action order.
    pub fn policy_scores(
        &self,
        tape: &mut Tape,
        prep: &Prepared<'_>,
        state: &GroundState,
    ) -> Result<Var, ModelError> {
        let enc = self.encode_net(tape, prep, state, Net::Policy)?;
        let n = prep.instance.object_count();
        let t = self.config.template_count;
        let dec = self.mlp_params(tape, "policy/dec")?;
        let per_object = mlp2(tape, enc.contextual, dec)?;
        // n x T -> T x n -> 1 x Tn gives index k * n + i
        let by_template = tape.transpose(per_object);
        let flat = tape.reshape(by_template, 1, t * n)?;
        let noop = self.mlp_params(tape, "policy/noop")?;
        let noop_score = mlp2(tape, enc.state, noop)?;
        Ok(tape.concat_cols(flat, noop_score)?)
    }

    /// Log-probabilities over legal actions as a tape row.
    pub fn policy_log_probs(
        &self,
        tape: &mut Tape,
        prep: &Prepared<'_>,
        state: &GroundState,
    ) -> Result<Var, ModelError> {
        let scores = self.policy_scores(tape, prep, state)?;
        Ok(tape.log_softmax_row(scores)?)
    }

    /// Scalar `V(s)` on a tape.
    pub fn value_var(
        &self,
        tape: &mut Tape,
        prep: &Prepared<'_>,
        state: &GroundState,
    ) -> Result<Var, ModelError> {
        let enc = self.encode_net(tape, prep, state, Net::Value)?;
        let dec = self.mlp_params(tape, "value/dec")?;
        let per_object = mlp2(tape, enc.contextual, dec)?;
        Ok(tape.sum_all(per_object))
    }

    pub fn policy_forward(
        &self,
        prep: &Prepared<'_>,
        state: &GroundState,
    ) -> Result<PolicyDistribution, ModelError> {
        let mut tape = Tape::new();
        let scores = self.policy_scores(&mut tape, prep, state)?;
        let s = tape.value(scores);
        debug_assert!(s.data().iter().all(|v| !v.is_nan()), "NaN policy score");
        Ok(PolicyDistribution::from_scores(s.data()))
    }

    pub fn value_forward(&self, prep: &Prepared<'_>, state: &GroundState) -> Result<f64, ModelError> {
        let mut tape = Tape::new();
        let v = self.value_var(&mut tape, prep, state)?;
        let v = tape.value(v).item();
        debug_assert!(v.is_finite(), "non-finite value estimate");
        Ok(v)
    }

    /// Convenience wrapper that builds the object graph on each call.
    pub fn policy(&self, instance: &ProblemInstance, state: &GroundState) -> Result<PolicyDistribution, ModelError> {
        self.policy_forward(&Prepared::new(instance), state)
    }

    pub fn value(&self, instance: &ProblemInstance, state: &GroundState) -> Result<f64, ModelError> {
        self.value_forward(&Prepared::new(instance), state)
    }
}

/// Inverse-CDF sample over the canonical action order.
pub fn sample_action(instance: &ProblemInstance, dist: &PolicyDistribution, rng: &mut RngStream) -> GroundAction {
    instance.action_at(dist.sample_index(rng))
}

/// Argmax action, ties to the lowest index.
pub fn greedy_action(instance: &ProblemInstance, dist: &PolicyDistribution) -> GroundAction {
    instance.action_at(dist.greedy_index())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domains::{generate_instance, GeneratorConfig, Topology};

    fn sysadmin(n: usize, seed: u64) -> ProblemInstance {
        generate_instance(&GeneratorConfig {
            domain: DomainId::SysAdmin,
            size: n,
            topology: Topology::RandomGraph { edge_prob: 0.4 },
            seed,
        })
        .unwrap()
    }

    #[test]
    fn param_count_closed_form_for_defaults() {
        // encoder: 4 * (1*3 + 6) + 3*20 + 20 = 116, twice
        // policy decoder: 40*20 + 20 + 20*1 + 1 = 841
        // noop head: 20*20 + 20 + 20 + 1 = 441
        // value decoder: 841
        let cfg = EncoderConfig::for_domain(DomainId::SysAdmin);
        assert_eq!(param_count(&cfg), 2 * 116 + 841 + 441 + 841);
        assert_eq!(init_params(&cfg, 0).scalar_count(), param_count(&cfg));
    }

    #[test]
    fn param_count_grows_with_embedding() {
        let cfg = EncoderConfig::for_domain(DomainId::GameOfLife);
        let wider = EncoderConfig {
            embed_dim: 24,
            ..cfg
        };
        assert!(param_count(&wider) > param_count(&cfg));
    }

    #[test]
    fn single_object_state_embedding_is_object_embedding() {
        let inst = sysadmin(1, 0);
        let net = TransferNet::new(EncoderConfig::for_domain(DomainId::SysAdmin), 3);
        let prep = Prepared::new(&inst);
        let mut tape = Tape::new();
        let enc = net.encode(&mut tape, &prep, &inst.initial_state()).unwrap();
        assert_eq!(tape.value(enc.objects).data(), tape.value(enc.state).data());
    }

    #[test]
    fn state_embedding_dominates_objects() {
        let inst = sysadmin(7, 2);
        let net = TransferNet::new(EncoderConfig::for_domain(DomainId::SysAdmin), 4);
        let prep = Prepared::new(&inst);
        let mut tape = Tape::new();
        let s = GroundState::from_flags(&[true, false, true, true, false, false, true]);
        let enc = net.encode(&mut tape, &prep, &s).unwrap();
        let (o, st) = (tape.value(enc.objects), tape.value(enc.state));
        for i in 0..7 {
            for d in 0..20 {
                assert!(st.at(0, d) >= o.at(i, d));
            }
        }
    }

    #[test]
    fn forced_noop_off_puts_all_mass_on_the_action() {
        let inst = sysadmin(1, 0);
        let mut net = TransferNet::new(EncoderConfig::for_domain(DomainId::SysAdmin), 1);
        net.params
            .insert("policy/noop/l2/b", Tensor::scalar(f64::NEG_INFINITY));
        let d = net.policy(&inst, &inst.initial_state()).unwrap();
        assert_eq!(d.probs(), &[1.0, 0.0]);
        assert_eq!(greedy_action(&inst, &d), GroundAction::apply(0, 0));
    }

    #[test]
    fn constant_value_head_scales_with_objects() {
        let inst = sysadmin(6, 1);
        let mut net = TransferNet::new(EncoderConfig::for_domain(DomainId::SysAdmin), 1);
        let w = net.params.get("value/dec/l2/w").unwrap().clone();
        net.params.insert("value/dec/l2/w", Tensor::zeros(w.rows(), w.cols()));
        net.params.insert("value/dec/l2/b", Tensor::scalar(1.5));
        assert_eq!(net.value(&inst, &inst.initial_state()).unwrap(), 6.0 * 1.5);
    }

    #[test]
    fn distribution_is_normalized_for_any_size() {
        let net = TransferNet::new(EncoderConfig::for_domain(DomainId::SysAdmin), 9);
        for n in [1, 2, 10, 50] {
            let inst = sysadmin(n, n as u64);
            let d = net.policy(&inst, &inst.initial_state()).unwrap();
            assert_eq!(d.len(), n + 1);
            assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(d.probs().iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn domain_mismatch_is_reported() {
        let cfg = EncoderConfig::for_domain(DomainId::GameOfLife);
        let err = cfg.validate_instance(&sysadmin(3, 0));
        assert!(matches!(err, Err(ModelError::DomainMismatch { .. })));
    }
}
