use std::collections::BTreeMap;

use super::{Lexicon, Model, ModelDims, ShareMode};
use crate::autodiff::{Graph, Mode, RunningMoments, Tensor, Var};
use crate::error::{Error, Result};

/// Which region network to run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Head {
    Object,
    Attribute,
}

impl Head {
    fn prefix(self) -> &'static str {
        match self {
            Head::Object => "fo",
            Head::Attribute => "fa",
        }
    }
}

/// Category family for class vectors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClassKind {
    Object,
    Attribute,
}

/// One forward (and optionally backward) pass over a model.
///
/// Parameters are copied into the graph as leaves; train-mode batch norm
/// writes its running moments straight back into the model. Per-session
/// caches hold the vocabulary embedding and the class-vector matrices.
pub struct Session<'a> {
    pub graph: Graph,
    pub mode: Mode,
    pub lex: &'a Lexicon,
    dims: ModelDims,
    share: ShareMode,
    params: BTreeMap<String, Var>,
    moments: &'a mut BTreeMap<String, RunningMoments>,
    vocab_emb: Option<Var>,
    class_obj: Option<Var>,
    class_attr: Option<Var>,
}

impl<'a> Session<'a> {
    /// `track` controls whether parameter leaves record gradients.
    pub fn new(model: &'a mut Model, lex: &'a Lexicon, mode: Mode, track: bool) -> Session<'a> {
        let Model {
            dims,
            share,
            params,
            moments,
        } = model;
        let mut graph = Graph::new();
        let vars = params
            .iter()
            .map(|(n, t)| (n.clone(), graph.leaf(t.clone(), track)))
            .collect();
        Session {
            graph,
            mode,
            lex,
            dims: *dims,
            share: *share,
            params: vars,
            moments,
            vocab_emb: None,
            class_obj: None,
            class_attr: None,
        }
    }

    pub fn dims(&self) -> &ModelDims {
        &self.dims
    }

    pub fn share(&self) -> ShareMode {
        self.share
    }

    pub fn param(&self, name: &str) -> Var {
        *self
            .params
            .get(name)
            .unwrap_or_else(|| panic!("session has no parameter `{name}`"))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        self.graph.value(v)
    }

    /// Gradients of every parameter reached by a backward pass.
    pub fn param_grads(&self) -> BTreeMap<String, Vec<f64>> {
        self.params
            .iter()
            .filter_map(|(n, &v)| self.graph.grad(v).map(|g| (n.clone(), g.to_vec())))
            .collect()
    }

    /// Applies `g` to a `B × word_dim` matrix of base vectors: an affine
    /// map to `d_e`, ReLU, and a second affine map with no activation.
    pub fn embed_base(&mut self, base: Var) -> Result<Var> {
        let g = &mut self.graph;
        let h = g.matmul(base, self.params["g.w1"])?;
        let h = g.add_bias(h, self.params["g.b1"])?;
        let h = g.relu(h)?;
        let h = g.matmul(h, self.params["g.w2"])?;
        g.add_bias(h, self.params["g.b2"])
    }

    /// `g(w)` for every vocabulary word, as a `V × d_e` matrix (cached).
    pub fn vocab_embeddings(&mut self) -> Result<Var> {
        if let Some(v) = self.vocab_emb {
            return Ok(v);
        }
        let vocab = &self.lex.vocab;
        if vocab.is_empty() {
            return Err(Error::Contract("empty vocabulary".into()));
        }
        let base = self
            .graph
            .constant(Tensor::matrix(vocab.len(), vocab.dim(), vocab.matrix())?);
        let e = self.embed_base(base)?;
        self.vocab_emb = Some(e);
        Ok(e)
    }

    /// Rows of the vocabulary embedding for the given word ids.
    pub fn embed_words(&mut self, ids: &[usize]) -> Result<Var> {
        if let Some(&bad) = ids.iter().find(|&&w| w >= self.lex.vocab.len()) {
            return Err(Error::MissingWord(format!("#{bad}")));
        }
        let all = self.vocab_embeddings()?;
        self.graph.row_select(all, ids)
    }

    /// `g(w)` for a single word.
    pub fn embed_word(&mut self, word: &str) -> Result<Var> {
        let id = self.lex.vocab.require(word)?;
        self.embed_words(&[id])
    }

    /// Runs `f_o` or `f_a` on a `B × region_dim` feature matrix: two
    /// affine layers, each followed by batch norm and ReLU.
    pub fn embed_regions(&mut self, features: Var, head: Head) -> Result<Var> {
        let cols = self.graph.shape(features).get(1).copied();
        if cols != Some(self.dims.region_dim) || self.graph.shape(features).len() != 2 {
            return Err(Error::shape(
                "embed_region",
                format!(
                    "features {:?}, expected region dim {}",
                    self.graph.shape(features),
                    self.dims.region_dim
                ),
            ));
        }
        let p = head.prefix();
        let mut h = features;
        for layer in 1..=2 {
            let w = self.params[&format!("{p}.w{layer}")];
            let scale = self.params[&format!("{p}.bn{layer}.scale")];
            let offset = self.params[&format!("{p}.bn{layer}.offset")];
            let moments = self
                .moments
                .get_mut(&format!("{p}.bn{layer}"))
                .expect("batch-norm moments present");
            h = self.graph.matmul(h, w)?;
            h = self.graph.batch_norm(h, scale, offset, self.mode, moments)?;
            h = self.graph.relu(h)?;
        }
        Ok(h)
    }

    /// Matrix of class vectors, one row per category: `g(y)` in SVLR mode,
    /// the free vectors `h_y` in multitask mode (cached).
    pub fn class_vectors(&mut self, kind: ClassKind) -> Result<Var> {
        let cached = match kind {
            ClassKind::Object => self.class_obj,
            ClassKind::Attribute => self.class_attr,
        };
        if let Some(v) = cached {
            return Ok(v);
        }
        let v = match self.share {
            ShareMode::Svlr => {
                let lex = self.lex;
                let words = match kind {
                    ClassKind::Object => lex.object_words(),
                    ClassKind::Attribute => lex.attribute_words(),
                };
                self.embed_words(words)?
            }
            ShareMode::Multitask => match kind {
                ClassKind::Object => self.param("h.obj"),
                ClassKind::Attribute => self.param("h.attr"),
            },
        };
        match kind {
            ClassKind::Object => self.class_obj = Some(v),
            ClassKind::Attribute => self.class_attr = Some(v),
        }
        Ok(v)
    }

    /// Class vector of one category.
    pub fn class_vector(&mut self, kind: ClassKind, category: usize) -> Result<Var> {
        let n = match kind {
            ClassKind::Object => self.dims.objects,
            ClassKind::Attribute => self.dims.attributes,
        };
        if category >= n {
            return Err(Error::MissingCategory(format!("{kind:?} #{category}")));
        }
        let all = self.class_vectors(kind)?;
        self.graph.row_select(all, &[category])
    }

    /// Batch norm with a named layer's parameters and moments.
    pub fn named_batch_norm(&mut self, x: Var, layer: &str) -> Result<Var> {
        let scale = self.params[&format!("{layer}.scale")];
        let offset = self.params[&format!("{layer}.offset")];
        let moments = self
            .moments
            .get_mut(layer)
            .expect("batch-norm moments present");
        self.graph.batch_norm(x, scale, offset, self.mode, moments)
    }
}
