//! The shared representation: word network `g`, region networks `f_o` and
//! `f_a`, and the parameter-sharing policy.
//!
//! In [`ShareMode::Svlr`] every category score is an inner product with
//! `g(category word)`. In [`ShareMode::Multitask`] recognition scores use a
//! separate trainable vector `h_y` per category instead, so the visual
//! networks are shared between tasks but word-region alignment is not.

mod checkpoint;
mod session;
mod vocab;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::autodiff::{RunningMoments, Tensor};
use crate::error::{Error, Result};
use crate::recognition::Ontology;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC};
pub use session::{ClassKind, Head, Session};
pub use vocab::Vocabulary;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub word_dim: usize,
    pub region_dim: usize,
    /// Hidden width of the region networks.
    pub hidden: usize,
    /// Shared embedding width `d_e`; also the hidden width of `g`.
    pub embed: usize,
    /// Width of the bimodal representation.
    pub bimodal: usize,
    pub objects: usize,
    pub attributes: usize,
}

impl ModelDims {
    /// Sizes used at full scale: 300-d word vectors, 2048 hidden units,
    /// 300-d embeddings, 2500-d bimodal pooling and 1000+1000 categories.
    pub fn full_scale(region_dim: usize) -> Self {
        ModelDims {
            word_dim: 300,
            region_dim,
            hidden: 2048,
            embed: 300,
            bimodal: 2500,
            objects: 1000,
            attributes: 1000,
        }
    }

    pub fn toy(region_dim: usize, objects: usize, attributes: usize) -> Self {
        ModelDims {
            word_dim: 16,
            region_dim,
            hidden: 24,
            embed: 8,
            bimodal: 40,
            objects,
            attributes,
        }
    }

    /// Width of `f(I)`: one score per object and attribute category.
    pub fn image_repr(&self) -> usize {
        self.objects + self.attributes
    }

    /// Width of `[q(Q); a(A)]`: four question bins plus the answer.
    pub fn qa_repr(&self) -> usize {
        5 * self.embed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ShareMode {
    Svlr,
    Multitask,
}

impl fmt::Display for ShareMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShareMode::Svlr => "svlr",
            ShareMode::Multitask => "multitask",
        })
    }
}

impl FromStr for ShareMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "svlr" => Ok(ShareMode::Svlr),
            "multitask" => Ok(ShareMode::Multitask),
            other => Err(Error::Config(format!("unknown share mode `{other}`"))),
        }
    }
}

/// Sub-network a parameter belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Word,
    RegionObject,
    RegionAttribute,
    ClassVectors,
    VqaHead,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        match name.split('.').next() {
            Some("g") => ParamGroup::Word,
            Some("fo") => ParamGroup::RegionObject,
            Some("fa") => ParamGroup::RegionAttribute,
            Some("h") => ParamGroup::ClassVectors,
            _ => ParamGroup::VqaHead,
        }
    }
}

/// Draws a `fan_in × fan_out` matrix uniformly from `±sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Tensor::from_parts(vec![fan_in, fan_out], data)
}

/// Named trainable parameters in a fixed (sorted) order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ParamStore {
    tensors: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }
}

/// Batch-norm layers and their widths.
fn bn_layers(d: &ModelDims) -> [(&'static str, usize); 6] {
    [
        ("fo.bn1", d.hidden),
        ("fo.bn2", d.embed),
        ("fa.bn1", d.hidden),
        ("fa.bn2", d.embed),
        ("vqa.bn1", d.bimodal),
        ("vqa.bn2", d.bimodal),
    ]
}

/// Parameters plus batch-norm running moments of one model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dims: ModelDims,
    pub share: ShareMode,
    pub params: ParamStore,
    pub moments: BTreeMap<String, RunningMoments>,
}

impl Model {
    /// Xavier-initialized weights, zero biases, unit batch-norm scales.
    pub fn new<R: Rng>(dims: ModelDims, share: ShareMode, rng: &mut R) -> Model {
        let mut p = ParamStore::default();
        let d = &dims;
        p.insert("g.w1", xavier_uniform(d.word_dim, d.embed, rng));
        p.insert("g.b1", Tensor::zeros(&[d.embed]));
        p.insert("g.w2", xavier_uniform(d.embed, d.embed, rng));
        p.insert("g.b2", Tensor::zeros(&[d.embed]));
        for head in ["fo", "fa"] {
            p.insert(format!("{head}.w1"), xavier_uniform(d.region_dim, d.hidden, rng));
            p.insert(format!("{head}.w2"), xavier_uniform(d.hidden, d.embed, rng));
        }
        if share == ShareMode::Multitask {
            p.insert("h.obj", xavier_uniform(d.objects, d.embed, rng));
            p.insert("h.attr", xavier_uniform(d.attributes, d.embed, rng));
        }
        p.insert("vqa.w1", xavier_uniform(d.image_repr(), d.bimodal, rng));
        p.insert("vqa.w2", xavier_uniform(d.qa_repr(), d.bimodal, rng));
        p.insert("vqa.w3", xavier_uniform(d.bimodal, 1, rng));
        let mut moments = BTreeMap::new();
        for (name, width) in bn_layers(d) {
            p.insert(format!("{name}.scale"), Tensor::filled(&[width], 1.0));
            p.insert(format!("{name}.offset"), Tensor::zeros(&[width]));
            moments.insert(name.to_string(), RunningMoments::new(width));
        }
        Model {
            dims,
            share,
            params: p,
            moments,
        }
    }

    pub fn param(&self, name: &str) -> &Tensor {
        self.params
            .get(name)
            .unwrap_or_else(|| panic!("model has no parameter `{name}`"))
    }
}

/// Vocabulary plus ontology, with each category resolved to its word.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub vocab: Vocabulary,
    pub ontology: Ontology,
    object_words: Vec<usize>,
    attribute_words: Vec<usize>,
}

impl Lexicon {
    pub fn new(vocab: Vocabulary, ontology: Ontology) -> Result<Self> {
        let object_words = ontology
            .objects()
            .iter()
            .map(|n| vocab.id(n).ok_or_else(|| Error::MissingWord(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        let attribute_words = ontology
            .attributes()
            .iter()
            .map(|n| vocab.id(n).ok_or_else(|| Error::MissingWord(n.clone())))
            .collect::<Result<Vec<_>>>()?;
        Ok(Lexicon {
            vocab,
            ontology,
            object_words,
            attribute_words,
        })
    }

    pub fn object_words(&self) -> &[usize] {
        &self.object_words
    }

    pub fn attribute_words(&self) -> &[usize] {
        &self.attribute_words
    }

    pub fn object_word(&self, category: usize) -> Result<usize> {
        self.object_words
            .get(category)
            .copied()
            .ok_or_else(|| Error::MissingCategory(format!("object #{category}")))
    }

    pub fn attribute_word(&self, category: usize) -> Result<usize> {
        self.attribute_words
            .get(category)
            .copied()
            .ok_or_else(|| Error::MissingCategory(format!("attribute #{category}")))
    }

    /// Checks that a model was built for this lexicon's shapes.
    pub fn check_model(&self, model: &Model) -> Result<()> {
        let d = &model.dims;
        if d.word_dim != self.vocab.dim()
            || d.objects != self.ontology.num_objects()
            || d.attributes != self.ontology.num_attributes()
        {
            return Err(Error::Contract(format!(
                "model dims (word {}, {} objects, {} attributes) do not match lexicon \
                 (word {}, {} objects, {} attributes)",
                d.word_dim,
                d.objects,
                d.attributes,
                self.vocab.dim(),
                self.ontology.num_objects(),
                self.ontology.num_attributes()
            )));
        }
        Ok(())
    }
}
