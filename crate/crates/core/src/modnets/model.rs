use rand::Rng;

use super::{Architecture, ModelConfig, ModnetError};
use crate::autodiff::{gradient_check, Graph, NodeId, Tensor};
use crate::seeds;

/// Parameters of one network. `params[i]` is named `names[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub modulus: usize,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
}

/// What a wiring is used for; decides which leaves carry gradients.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WiringMode {
    /// Index inputs, labels and a mean cross-entropy loss; parameters differentiable.
    Training,
    /// Index inputs, no loss, nothing differentiable.
    Evaluation,
    /// The two token embeddings are fed directly and are the only
    /// differentiable leaves.
    EmbeddingInputs,
}

/// A graph instantiated for one batch size, with handles to the nodes the
/// analyses read.
#[derive(Clone, Debug)]
pub struct Wiring {
    pub graph: Graph,
    pub mode: WiringMode,
    pub batch: usize,
    pub modulus: usize,
    pub params: Vec<NodeId>,
    pub left: NodeId,
    pub right: NodeId,
    pub labels: Option<NodeId>,
    pub hidden_preactivations: Vec<NodeId>,
    pub logits: NodeId,
    pub loss: Option<NodeId>,
    constants: Vec<Tensor>,
}

fn param_shapes(config: &ModelConfig, n: usize) -> Vec<(String, Vec<usize>, usize)> {
    let d = config.embedding_dim;
    let w = config.hidden_width;
    // (name, shape, fan_in)
    let mut out = vec![("embedding".to_string(), vec![n, d], n)];
    match config.architecture {
        Architecture::Attention1 => {
            out.push(("positional".into(), vec![2, d], n));
            out.push(("w_query".into(), vec![d, d], d));
            out.push(("w_key".into(), vec![d, d], d));
            out.push(("w_value".into(), vec![d, d], d));
            out.push(("w_output".into(), vec![d, d], d));
        }
        Architecture::Attention0 => {
            out.push(("positional".into(), vec![2, d], n));
            out.push(("w_value".into(), vec![d, d], d));
            out.push(("w_output".into(), vec![d, d], d));
        }
        Architecture::MlpAdd | Architecture::MlpConcat => {}
    }
    let first_in = if config.architecture == Architecture::MlpConcat { 2 * d } else { d };
    for layer in 0..config.num_hidden_layers {
        let fan_in = if layer == 0 { first_in } else { w };
        out.push((format!("hidden{layer}"), vec![w, fan_in], fan_in));
    }
    out.push(("unembed".into(), vec![n, w], w));
    out
}

impl Model {
    /// Fresh parameters drawn uniformly from `±1/sqrt(fan_in)`. Embedding and
    /// positional tables count as linear maps from one-hot inputs, so their
    /// fan-in is the modulus.
    pub fn init(config: ModelConfig, modulus: usize, seed: u64) -> Result<Self, ModnetError> {
        config.validate()?;
        if modulus < 3 {
            return Err(ModnetError::InvalidTask(format!("modulus {modulus} < 3")));
        }
        let mut rng = seeds::rng(seed, "init", 0);
        let mut names = Vec::new();
        let mut params = Vec::new();
        for (name, shape, fan_in) in param_shapes(&config, modulus) {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let len: usize = shape.iter().product();
            let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
            names.push(name);
            params.push(Tensor::new(shape, data)?);
        }
        Ok(Model {
            config,
            modulus,
            names,
            params,
        })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    /// First-layer input width.
    pub fn input_dim(&self) -> usize {
        match self.config.architecture {
            Architecture::MlpConcat => 2 * self.config.embedding_dim,
            _ => self.config.embedding_dim,
        }
    }

    /// Builds the computation graph for `batch` examples.
    ///
    /// Wiring per architecture, writing `x_a`, `x_b` for the two token
    /// embeddings:
    /// * `MlpAdd`: `x_a + x_b`
    /// * `MlpConcat`: `[x_a, x_b]`
    /// * `Attention0`: `W_o mean_p(W_v t_p)` with tokens `t_p = x + pos_p`
    /// * `Attention1`: `W_o sum_p softmax_p(q . k_p / sqrt(d)) W_v t_p`, the
    ///   query taken from the second token
    ///
    /// followed by `num_hidden_layers` bias-free ReLU layers and the unembedding.
    pub fn wiring(&self, batch: usize, mode: WiringMode) -> Result<Wiring, ModnetError> {
        let cfg = &self.config;
        let d = cfg.embedding_dim;
        let n = self.modulus;
        let mut g = Graph::new();
        let train = mode == WiringMode::Training;
        let params: Vec<NodeId> = self
            .names
            .iter()
            .zip(&self.params)
            .map(|(name, p)| g.input(name, p.shape(), train))
            .collect();
        let p = |name: &str| params[self.names.iter().position(|x| x == name).expect("known parameter")];
        let mut constants = Vec::new();

        let (left, right, x_a, x_b) = match mode {
            WiringMode::EmbeddingInputs => {
                let ea = g.input("emb_a", &[batch, d], true);
                let eb = g.input("emb_b", &[batch, d], true);
                (ea, eb, ea, eb)
            }
            _ => {
                let ia = g.input("a", &[batch], false);
                let ib = g.input("b", &[batch], false);
                let ea = g.gather(p("embedding"), ia)?;
                let eb = g.gather(p("embedding"), ib)?;
                (ia, ib, ea, eb)
            }
        };
        let labels = if train { Some(g.input("labels", &[batch], false)) } else { None };

        let mlp_input = match cfg.architecture {
            Architecture::MlpAdd => g.add(x_a, x_b)?,
            Architecture::MlpConcat => g.concat(x_a, x_b)?,
            arch => {
                let pos_index = g.input("position_index", &[batch, 2], false);
                constants.push(Tensor::from_parts(
                    vec![batch, 2],
                    (0..batch).flat_map(|_| [0.0, 1.0]).collect(),
                ));
                let pos = g.gather(p("positional"), pos_index)?; // [B,2,d]
                let pair = g.concat(x_a, x_b)?;
                let stacked = g.reshape(pair, &[batch, 2, d])?;
                let tokens = g.add(stacked, pos)?;
                let values = g.matmul(tokens, p("w_value"), true)?;
                let mixed = if arch == Architecture::Attention0 {
                    g.mean_positions(values)?
                } else {
                    let last_index = g.input("last_position", &[batch], false);
                    constants.push(Tensor::from_parts(vec![batch], vec![1.0; batch]));
                    let last_pos = g.gather(p("positional"), last_index)?;
                    let last = g.add(x_b, last_pos)?;
                    let query = g.matmul(last, p("w_query"), true)?;
                    let query = g.reshape(query, &[batch, 1, d])?;
                    let keys = g.matmul(tokens, p("w_key"), true)?;
                    let scores = g.matmul(query, keys, true)?; // [B,1,2]
                    let scores = g.scale(scores, 1.0 / (d as f64).sqrt());
                    let weights = g.softmax(scores);
                    g.label(weights, "attention_weights");
                    let out = g.matmul(weights, values, false)?; // [B,1,d]
                    g.reshape(out, &[batch, d])?
                };
                g.matmul(mixed, p("w_output"), true)?
            }
        };

        let mut hidden_preactivations = Vec::new();
        let mut h = mlp_input;
        for layer in 0..cfg.num_hidden_layers {
            let pre = g.matmul(h, p(&format!("hidden{layer}")), true)?;
            g.label(pre, &format!("hidden{layer}_pre"));
            hidden_preactivations.push(pre);
            h = g.relu(pre);
        }
        let logits = g.matmul(h, p("unembed"), true)?;
        g.label(logits, "logits");
        let loss = match labels {
            Some(y) => Some(g.cross_entropy(logits, y)?),
            None => None,
        };
        Ok(Wiring {
            graph: g,
            mode,
            batch,
            modulus: n,
            params,
            left,
            right,
            labels,
            hidden_preactivations,
            logits,
            loss,
            constants,
        })
    }
}

impl Wiring {
    /// Forward pass on index pairs (`Training` / `Evaluation` modes).
    pub fn run_pairs(&mut self, params: &[Tensor], a: &[usize], b: &[usize]) -> Result<(), ModnetError> {
        if self.mode == WiringMode::EmbeddingInputs {
            return Err(ModnetError::InvalidConfig("wiring expects embedding inputs".into()));
        }
        let ta = Tensor::from_parts(vec![self.batch], a.iter().map(|&v| v as f64).collect());
        let tb = Tensor::from_parts(vec![self.batch], b.iter().map(|&v| v as f64).collect());
        let labels = self.labels.map(|_| {
            let n = self.modulus;
            Tensor::from_parts(
                vec![self.batch],
                a.iter().zip(b).map(|(&x, &y)| ((x + y) % n) as f64).collect(),
            )
        });
        if a.len() != self.batch || b.len() != self.batch {
            return Err(ModnetError::InvalidConfig(format!(
                "batch of {} pairs fed to a wiring of size {}",
                a.len(),
                self.batch
            )));
        }
        let mut feeds: Vec<&Tensor> = params.iter().collect();
        feeds.push(&ta);
        feeds.push(&tb);
        if let Some(l) = labels.as_ref() {
            feeds.push(l);
        }
        feeds.extend(self.constants.iter());
        self.graph.forward(&feeds)?;
        Ok(())
    }

    /// Forward pass on raw token embeddings (`EmbeddingInputs` mode).
    pub fn run_embeddings(&mut self, params: &[Tensor], emb_a: &Tensor, emb_b: &Tensor) -> Result<(), ModnetError> {
        if self.mode != WiringMode::EmbeddingInputs {
            return Err(ModnetError::InvalidConfig("wiring expects index inputs".into()));
        }
        let mut feeds: Vec<&Tensor> = params.iter().collect();
        feeds.push(emb_a);
        feeds.push(emb_b);
        feeds.extend(self.constants.iter());
        self.graph.forward(&feeds)?;
        Ok(())
    }

    pub fn logits(&self) -> &Tensor {
        self.graph.value(self.logits).expect("forward ran")
    }

    pub fn loss_value(&self) -> Option<f64> {
        self.loss.and_then(|l| self.graph.value(l)).map(|t| t.data()[0])
    }
}

/// Worst relative error between backpropagated and central-difference
/// gradients of the training loss, over every parameter and every input
/// coordinate, on a batch of `batch` pairs drawn from `seed`.
pub fn loss_gradient_error(model: &Model, batch: usize, seed: u64) -> Result<f64, ModnetError> {
    let mut rng = seeds::rng(seed, "gradient-probe", 0);
    let n = model.modulus;
    let a: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..n)).collect();
    let b: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..n)).collect();
    let mut w = model.wiring(batch, WiringMode::Training)?;
    let loss = w.loss.ok_or_else(|| ModnetError::InvalidConfig("training wiring has no loss".into()))?;
    w.run_pairs(&model.params, &a, &b)?;
    // feed order: params, then the data inputs the run just set
    let mut feeds: Vec<Tensor> = model.params.clone();
    for &id in &w.graph.inputs()[model.params.len()..] {
        let value = w.graph.value(id).ok_or_else(|| ModnetError::InvalidConfig("unset graph input".into()))?;
        feeds.push(value.clone());
    }
    Ok(gradient_check(&mut w.graph, loss, &mut feeds, 1e-4, None, 1e-6)?)
}
