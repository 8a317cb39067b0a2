//! Planted-structure toy universe: a vocabulary with frozen base vectors, an
//! object ontology with one level of hypernyms, a recognition dataset of
//! labeled regions and a multiple-choice QA dataset over disjoint images.
//!
//! Every concept gets a latent vector. Word base vectors are noisy copies of
//! the latents; region features are fixed random projections of the object
//! and attribute latents plus Gaussian noise. Per-leaf training counts are
//! set exactly by a frequency profile so transfer can be binned by class
//! frequency in each dataset.

mod io;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::recognition::{hypernym_closure, Ontology, RegionBatch};
use crate::svlr::{Lexicon, Vocabulary};
use crate::vqa::{fallback_bins, Pos, QaSample, TaggedWord, Token, VqaItem};

pub use io::{read_corpus, write_corpus};

pub const GRID: usize = 14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Contract(format!("unknown split `{s}`"))),
        }
    }
}

/// Half-open cell rectangle `[r0, r1) × [c0, c1)` on the 14×14 grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

impl Rect {
    pub fn cells(&self) -> usize {
        (self.r1 - self.r0) * (self.c1 - self.c0)
    }

    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.r0..self.r1).contains(&r) && (self.c0..self.c1).contains(&c)
    }

    pub fn full() -> Rect {
        Rect {
            r0: 0,
            c0: 0,
            r1: GRID,
            c1: GRID,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegionRecord {
    pub id: usize,
    pub image: usize,
    pub split: Split,
    pub object: usize,
    /// Sorted attribute ids.
    pub attributes: Vec<usize>,
    pub mask: Rect,
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaRecord {
    pub split: Split,
    pub sample: QaSample,
}

/// A named group of mutually exclusive attributes ("color", "material").
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeFamily {
    pub name: String,
    pub members: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub ontology: Ontology,
    pub families: Vec<AttributeFamily>,
    pub recognition: Vec<RegionRecord>,
    pub qa_regions: Vec<RegionRecord>,
    pub qa: Vec<QaRecord>,
    /// Planted `(word, synonym)` pairs, as word ids.
    pub synonyms: Vec<(usize, usize)>,
}

/// Frequency cell of one leaf: exact training counts in each dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Frequency {
    pub recognition: usize,
    pub qa: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldSpec {
    pub seed: u64,
    pub leaves: usize,
    /// Hypernyms above the leaves; 0 gives a flat ontology.
    pub parents: usize,
    pub families: usize,
    pub attributes_per_family: usize,
    pub word_dim: usize,
    pub region_dim: usize,
    pub feature_noise: f64,
    pub word_noise: f64,
    /// Weight of the parent latent in a leaf latent.
    pub parent_mix: f64,
    pub regions_per_image: usize,
    pub options: usize,
    /// Training counts per leaf group; leaf `i` belongs to group `i % len`.
    pub profile: Vec<Frequency>,
    pub recognition_eval_per_class: usize,
    pub qa_eval_per_class: usize,
    pub synonyms: usize,
    pub synonym_rate: f64,
    /// Relative weights of the three question templates.
    pub template_weights: [f64; 3],
}

impl Default for WorldSpec {
    fn default() -> Self {
        WorldSpec {
            seed: 7,
            leaves: 16,
            parents: 4,
            families: 2,
            attributes_per_family: 6,
            word_dim: 16,
            region_dim: 32,
            feature_noise: 1.0,
            word_noise: 0.3,
            parent_mix: 0.5,
            regions_per_image: 4,
            options: 6,
            profile: vec![
                Frequency { recognition: 10, qa: 200 },
                Frequency { recognition: 150, qa: 200 },
                Frequency { recognition: 150, qa: 10 },
                Frequency { recognition: 10, qa: 10 },
            ],
            recognition_eval_per_class: 20,
            qa_eval_per_class: 30,
            synonyms: 4,
            synonym_rate: 0.5,
            template_weights: [0.4, 0.2, 0.4],
        }
    }
}

fn parse_profile(s: &str) -> Option<Vec<Frequency>> {
    s.split(',')
        .map(|cell| {
            let (r, q) = cell.trim().split_once(':')?;
            Some(Frequency {
                recognition: r.trim().parse().ok()?,
                qa: q.trim().parse().ok()?,
            })
        })
        .collect()
}

impl WorldSpec {
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text, origin)?;
        let mut s = WorldSpec::default();
        kv.set("seed", &mut s.seed)?;
        kv.set("leaves", &mut s.leaves)?;
        kv.set("parents", &mut s.parents)?;
        kv.set("families", &mut s.families)?;
        kv.set("attributes_per_family", &mut s.attributes_per_family)?;
        kv.set("word_dim", &mut s.word_dim)?;
        kv.set("region_dim", &mut s.region_dim)?;
        kv.set("feature_noise", &mut s.feature_noise)?;
        kv.set("word_noise", &mut s.word_noise)?;
        kv.set("parent_mix", &mut s.parent_mix)?;
        kv.set("regions_per_image", &mut s.regions_per_image)?;
        kv.set("options", &mut s.options)?;
        kv.set("recognition_eval_per_class", &mut s.recognition_eval_per_class)?;
        kv.set("qa_eval_per_class", &mut s.qa_eval_per_class)?;
        kv.set("synonyms", &mut s.synonyms)?;
        kv.set("synonym_rate", &mut s.synonym_rate)?;
        if let Some(p) = kv.take::<String>("profile")? {
            s.profile = parse_profile(&p)
                .ok_or_else(|| Error::Config(format!("bad profile `{p}`, expected r:q,r:q,...")))?;
        }
        if let Some(w) = kv.take::<String>("template_weights")? {
            let v: Vec<f64> = w
                .split(',')
                .map(|x| x.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad template_weights `{w}`")))?;
            s.template_weights = v
                .try_into()
                .map_err(|_| Error::Config("template_weights needs 3 values".into()))?;
        }
        kv.finish()?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_text(&self) -> String {
        let profile: Vec<String> = self
            .profile
            .iter()
            .map(|f| format!("{}:{}", f.recognition, f.qa))
            .collect();
        let w = &self.template_weights;
        format!(
            "seed = {}\nleaves = {}\nparents = {}\nfamilies = {}\nattributes_per_family = {}\n\
             word_dim = {}\nregion_dim = {}\nfeature_noise = {}\nword_noise = {}\nparent_mix = {}\n\
             regions_per_image = {}\noptions = {}\nprofile = {}\nrecognition_eval_per_class = {}\n\
             qa_eval_per_class = {}\nsynonyms = {}\nsynonym_rate = {}\ntemplate_weights = {},{},{}\n",
            self.seed,
            self.leaves,
            self.parents,
            self.families,
            self.attributes_per_family,
            self.word_dim,
            self.region_dim,
            self.feature_noise,
            self.word_noise,
            self.parent_mix,
            self.regions_per_image,
            self.options,
            profile.join(","),
            self.recognition_eval_per_class,
            self.qa_eval_per_class,
            self.synonyms,
            self.synonym_rate,
            w[0],
            w[1],
            w[2]
        )
    }

    pub fn num_objects(&self) -> usize {
        self.leaves + self.parents
    }

    pub fn num_attributes(&self) -> usize {
        self.families * self.attributes_per_family
    }

    /// Training counts of leaf number `leaf` (0-based among leaves).
    pub fn frequency(&self, leaf: usize) -> Frequency {
        self.profile[leaf % self.profile.len()]
    }

    fn any_qa(&self) -> bool {
        self.profile.iter().any(|f| f.qa > 0) || self.qa_eval_per_class > 0
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Spec(m));
        if self.leaves == 0 || self.families == 0 || self.attributes_per_family == 0 {
            return fail("need at least one leaf and one attribute".into());
        }
        if self.parents > self.leaves {
            return fail(format!("{} parents for {} leaves", self.parents, self.leaves));
        }
        if self.word_dim == 0 || self.region_dim == 0 {
            return fail("dimensions must be positive".into());
        }
        if self.profile.is_empty() {
            return fail("empty frequency profile".into());
        }
        if !(self.feature_noise >= 0.0 && self.word_noise >= 0.0) {
            return fail("noise levels must be nonnegative".into());
        }
        if !(0.0..=1.0).contains(&self.parent_mix) || !(0.0..=1.0).contains(&self.synonym_rate) {
            return fail("parent_mix and synonym_rate must lie in [0, 1]".into());
        }
        if self.synonyms > self.leaves {
            return fail(format!("{} synonyms for {} leaves", self.synonyms, self.leaves));
        }
        if self.regions_per_image == 0 {
            return fail("regions_per_image must be positive".into());
        }
        if self.any_qa() {
            if self.options < 2 {
                return fail("QA needs at least two options".into());
            }
            if self.regions_per_image > self.leaves {
                return fail(format!(
                    "{} regions per QA image need as many distinct leaves, have {}",
                    self.regions_per_image, self.leaves
                ));
            }
            let w = self.template_weights;
            if w.iter().any(|x| !(*x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return fail("template weights must be nonnegative with a positive sum".into());
            }
            if (w[0] > 0.0 || w[1] > 0.0) && self.options > self.attributes_per_family {
                return fail(format!(
                    "{} options exceed the {} attributes of a family",
                    self.options, self.attributes_per_family
                ));
            }
            if w[2] > 0.0 && self.options > self.leaves {
                return fail(format!("{} options exceed the {} leaves", self.options, self.leaves));
            }
        }
        Ok(())
    }
}

const LEAF_NAMES: [&str; 16] = [
    "dog", "cat", "horse", "bird", "car", "bus", "truck", "bike", "chair", "table", "sofa", "bed",
    "apple", "bread", "cake", "pizza",
];
const PARENT_NAMES: [&str; 4] = ["animal", "vehicle", "furniture", "food"];
const FAMILY_NAMES: [&str; 2] = ["color", "material"];
const ATTRIBUTE_NAMES: [[&str; 6]; 2] = [
    ["red", "blue", "green", "yellow", "white", "black"],
    ["wooden", "metal", "plastic", "glass", "cloth", "stone"],
];
const FUNCTION_WORDS: [&str; 6] = ["what", "is", "the", "which", "thing", "?"];

fn leaf_name(spec: &WorldSpec, i: usize) -> String {
    if spec.leaves <= LEAF_NAMES.len() {
        LEAF_NAMES[i].to_string()
    } else {
        format!("leaf{i}")
    }
}

fn parent_name(spec: &WorldSpec, i: usize) -> String {
    if spec.parents <= PARENT_NAMES.len() {
        PARENT_NAMES[i].to_string()
    } else {
        format!("kind{i}")
    }
}

fn family_name(spec: &WorldSpec, f: usize) -> String {
    if spec.families <= FAMILY_NAMES.len() {
        FAMILY_NAMES[f].to_string()
    } else {
        format!("family{f}")
    }
}

fn attribute_name(spec: &WorldSpec, f: usize, k: usize) -> String {
    if spec.families <= ATTRIBUTE_NAMES.len() && spec.attributes_per_family <= 6 {
        ATTRIBUTE_NAMES[f][k].to_string()
    } else {
        format!("{}{k}", family_name(spec, f))
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn projection(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<Vec<f64>> {
    let s = 1.0 / (cols as f64).sqrt();
    (0..rows).map(|_| gaussian(rng, cols, s)).collect()
}

fn add_projected(out: &mut [f64], proj: &[Vec<f64>], z: &[f64]) {
    for (o, row) in out.iter_mut().zip(proj) {
        *o += row.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn random_rect(rng: &mut ChaCha8Rng) -> Rect {
    let h = rng.random_range(3..=8);
    let w = rng.random_range(3..=8);
    let r0 = rng.random_range(0..=GRID - h);
    let c0 = rng.random_range(0..=GRID - w);
    Rect {
        r0,
        c0,
        r1: r0 + h,
        c1: c0 + w,
    }
}

struct Builder<'s> {
    spec: &'s WorldSpec,
    rng: ChaCha8Rng,
    object_latent: Vec<Vec<f64>>,
    attribute_latent: Vec<Vec<f64>>,
    object_proj: Vec<Vec<f64>>,
    attribute_proj: Vec<Vec<Vec<f64>>>,
    next_region: usize,
    next_image: usize,
}

impl Builder<'_> {
    fn leaf_object(&self, leaf: usize) -> usize {
        self.spec.parents + leaf
    }

    fn region(
        &mut self,
        image: usize,
        split: Split,
        object: usize,
        attributes: Vec<usize>,
    ) -> RegionRecord {
        let mut f = gaussian(&mut self.rng, self.spec.region_dim, self.spec.feature_noise);
        add_projected(&mut f, &self.object_proj, &self.object_latent[object]);
        for &a in &attributes {
            let fam = a / self.spec.attributes_per_family;
            add_projected(&mut f, &self.attribute_proj[fam], &self.attribute_latent[a]);
        }
        let mask = random_rect(&mut self.rng);
        let id = self.next_region;
        self.next_region += 1;
        RegionRecord {
            id,
            image,
            split,
            object,
            attributes,
            mask,
            features: f,
        }
    }

    /// One attribute per family, optionally avoiding one attribute.
    fn random_attributes(&mut self, avoid: Option<usize>) -> Vec<usize> {
        let per = self.spec.attributes_per_family;
        (0..self.spec.families)
            .map(|fam| loop {
                let a = fam * per + self.rng.random_range(0..per);
                if Some(a) != avoid || per == 1 {
                    break a;
                }
            })
            .collect()
    }

    fn recognition_split(&mut self, split: Split, counts: &[usize]) -> Vec<RegionRecord> {
        let mut slots: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(leaf, &n)| std::iter::repeat(leaf).take(n))
            .collect();
        slots.shuffle(&mut self.rng);
        let mut out = Vec::with_capacity(slots.len());
        for chunk in slots.chunks(self.spec.regions_per_image) {
            let image = self.next_image;
            self.next_image += 1;
            for &leaf in chunk {
                let attrs = self.random_attributes(None);
                let obj = self.leaf_object(leaf);
                out.push(self.region(image, split, obj, attrs));
            }
        }
        out
    }
}

struct Words {
    object: Vec<usize>,
    attribute: Vec<usize>,
    family: Vec<usize>,
    synonym: BTreeMap<usize, usize>,
    what: usize,
    is: usize,
    the: usize,
    which: usize,
    thing: usize,
    qmark: usize,
}

fn tokens(words: &[(usize, Pos)]) -> Vec<Token> {
    let bins = fallback_bins(&words.iter().map(|w| w.1).collect::<Vec<_>>());
    words
        .iter()
        .zip(bins)
        .map(|(&(word, pos), bin)| Token { word, pos, bin })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn qa_sample(
    b: &mut Builder,
    w: &Words,
    ont: &Ontology,
    id: usize,
    split: Split,
    leaf: usize,
    regions_out: &mut Vec<RegionRecord>,
) -> QaSample {
    let spec = b.spec;
    let weights = if spec.parents == 0 {
        [spec.template_weights[0], 0.0, spec.template_weights[2]]
    } else {
        spec.template_weights
    };
    let total: f64 = weights.iter().sum();
    let mut u = b.rng.random::<f64>() * total;
    let mut template = 2;
    for (t, &wt) in weights.iter().enumerate() {
        if u < wt {
            template = t;
            break;
        }
        u -= wt;
    }

    let target_obj = b.leaf_object(leaf);
    let per = spec.attributes_per_family;
    let family = b.rng.random_range(0..spec.families);
    let target_attrs = b.random_attributes(None);
    let queried_attr = target_attrs[family];

    let mut others: Vec<usize> = (0..spec.leaves).filter(|&l| l != leaf).collect();
    others.shuffle(&mut b.rng);
    others.truncate(spec.regions_per_image - 1);

    let image = b.next_image;
    b.next_image += 1;
    let mut regions = vec![b.region(image, split, target_obj, target_attrs)];
    for &o in &others {
        let avoid = (template == 2).then_some(queried_attr);
        let attrs = b.random_attributes(avoid);
        let obj = b.leaf_object(o);
        regions.push(b.region(image, split, obj, attrs));
    }
    let relevant = regions[0].id;
    regions.shuffle(&mut b.rng);
    let region_ids: Vec<usize> = regions.iter().map(|r| r.id).collect();
    regions_out.extend(regions);

    let obj_word = match w.synonym.get(&target_obj) {
        Some(&syn) if b.rng.random::<f64>() < spec.synonym_rate => syn,
        _ => w.object[target_obj],
    };
    let (question, correct_word, pos, mut distractors, name) = match template {
        0 | 1 => {
            let mut q = vec![
                (w.what, Pos::Other),
                (w.family[family], Pos::Other),
                (w.is, Pos::Other),
                (w.the, Pos::Other),
            ];
            if template == 1 {
                let parent = ont.parents(target_obj)[0];
                q.push((w.object[parent], Pos::Noun));
            }
            q.push((obj_word, Pos::Noun));
            q.push((w.qmark, Pos::Other));
            let mut pool: Vec<usize> = (family * per..(family + 1) * per)
                .filter(|&a| a != queried_attr)
                .map(|a| w.attribute[a])
                .collect();
            pool.shuffle(&mut b.rng);
            let name = if template == 0 { "what-attr" } else { "what-attr-kind" };
            (q, w.attribute[queried_attr], Pos::Adjective, pool, name)
        }
        _ => {
            let q = vec![
                (w.which, Pos::Other),
                (w.thing, Pos::Other),
                (w.is, Pos::Other),
                (w.attribute[queried_attr], Pos::Adjective),
                (w.qmark, Pos::Other),
            ];
            let mut rest: Vec<usize> = (0..spec.leaves)
                .filter(|l| *l != leaf && !others.contains(l))
                .collect();
            rest.shuffle(&mut b.rng);
            let pool: Vec<usize> = others
                .iter()
                .chain(&rest)
                .map(|&l| w.object[b.leaf_object(l)])
                .collect();
            (q, w.object[target_obj], Pos::Noun, pool, "which-thing")
        }
    };
    distractors.truncate(spec.options - 1);
    distractors.shuffle(&mut b.rng);
    let correct = b.rng.random_range(0..spec.options);
    distractors.insert(correct, correct_word);
    QaSample {
        id,
        image,
        template: name.to_string(),
        tokens: tokens(&question),
        options: distractors
            .into_iter()
            .map(|word| vec![TaggedWord { word, pos }])
            .collect(),
        correct,
        regions: region_ids,
        relevant: Some(relevant),
    }
}

/// Generates a corpus; identical specs give bit-identical corpora.
pub fn generate(spec: &WorldSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let wd = spec.word_dim;

    let parent_latent: Vec<Vec<f64>> = (0..spec.parents).map(|_| gaussian(&mut rng, wd, 1.0)).collect();
    let mix = spec.parent_mix;
    let own = (1.0 - mix * mix).sqrt();
    let parent_of = |leaf: usize| leaf * spec.parents / spec.leaves;
    let mut object_latent = parent_latent.clone();
    for leaf in 0..spec.leaves {
        let mut z = gaussian(&mut rng, wd, own);
        if spec.parents > 0 {
            for (v, p) in z.iter_mut().zip(&parent_latent[parent_of(leaf)]) {
                *v += mix * p;
            }
        } else {
            z.iter_mut().for_each(|v| *v /= own.max(1e-12));
        }
        object_latent.push(z);
    }
    let attribute_latent: Vec<Vec<f64>> = (0..spec.num_attributes())
        .map(|_| gaussian(&mut rng, wd, 1.0))
        .collect();

    let mut objects: Vec<String> = (0..spec.parents).map(|p| parent_name(spec, p)).collect();
    objects.extend((0..spec.leaves).map(|l| leaf_name(spec, l)));
    let mut attributes = Vec::new();
    let mut families = Vec::new();
    for f in 0..spec.families {
        let members: Vec<usize> = (0..spec.attributes_per_family)
            .map(|k| {
                attributes.push(attribute_name(spec, f, k));
                attributes.len() - 1
            })
            .collect();
        families.push(AttributeFamily {
            name: family_name(spec, f),
            members,
        });
    }
    let edges: Vec<(usize, usize)> = if spec.parents > 0 {
        (0..spec.leaves)
            .map(|l| (spec.parents + l, parent_of(l)))
            .collect()
    } else {
        Vec::new()
    };
    let ontology = Ontology::new(objects.clone(), attributes.clone(), &edges)?;

    let mut vocab = Vocabulary::new(wd);
    let noisy = |rng: &mut ChaCha8Rng, z: &[f64]| -> Vec<f64> {
        z.iter()
            .map(|v| v + spec.word_noise * rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let mut object_words = Vec::new();
    for (o, name) in objects.iter().enumerate() {
        let v = noisy(&mut rng, &object_latent[o]);
        object_words.push(vocab.push(name.clone(), v)?);
    }
    let mut attribute_words = Vec::new();
    for (a, name) in attributes.iter().enumerate() {
        let v = noisy(&mut rng, &attribute_latent[a]);
        attribute_words.push(vocab.push(name.clone(), v)?);
    }
    let mut family_words = Vec::new();
    for fam in &families {
        let v = gaussian(&mut rng, wd, 1.0);
        family_words.push(vocab.push(fam.name.clone(), v)?);
    }
    let mut fw = Vec::new();
    for name in FUNCTION_WORDS {
        let v = gaussian(&mut rng, wd, 1.0);
        fw.push(vocab.push(name, v)?);
    }
    // Synonyms go to the leaves most frequent in QA training.
    let mut by_qa: Vec<usize> = (0..spec.leaves).collect();
    by_qa.sort_by_key(|&l| (std::cmp::Reverse(spec.frequency(l).qa), l));
    let mut synonym = BTreeMap::new();
    let mut synonyms = Vec::new();
    for &leaf in by_qa.iter().take(spec.synonyms) {
        let obj = spec.parents + leaf;
        let v = noisy(&mut rng, &object_latent[obj]);
        let id = vocab.push(format!("{}_alt", objects[obj]), v)?;
        synonym.insert(obj, id);
        synonyms.push((object_words[obj], id));
    }
    let words = Words {
        object: object_words,
        attribute: attribute_words,
        family: family_words,
        synonym,
        what: fw[0],
        is: fw[1],
        the: fw[2],
        which: fw[3],
        thing: fw[4],
        qmark: fw[5],
    };

    let object_proj = projection(&mut rng, spec.region_dim, wd);
    let attribute_proj = (0..spec.families)
        .map(|_| projection(&mut rng, spec.region_dim, wd))
        .collect();
    let mut b = Builder {
        spec,
        rng,
        object_latent,
        attribute_latent,
        object_proj,
        attribute_proj,
        next_region: 0,
        next_image: 0,
    };

    let train_counts: Vec<usize> = (0..spec.leaves).map(|l| spec.frequency(l).recognition).collect();
    let eval_counts = vec![spec.recognition_eval_per_class; spec.leaves];
    let mut recognition = b.recognition_split(Split::Train, &train_counts);
    recognition.extend(b.recognition_split(Split::Val, &eval_counts));
    recognition.extend(b.recognition_split(Split::Test, &eval_counts));

    let mut qa_regions = Vec::new();
    let mut qa = Vec::new();
    for split in [Split::Train, Split::Val, Split::Test] {
        let mut targets: Vec<usize> = (0..spec.leaves)
            .flat_map(|l| {
                let n = match split {
                    Split::Train => spec.frequency(l).qa,
                    _ => spec.qa_eval_per_class,
                };
                std::iter::repeat(l).take(n)
            })
            .collect();
        targets.shuffle(&mut b.rng);
        for leaf in targets {
            let id = qa.len();
            let sample = qa_sample(&mut b, &words, &ontology, id, split, leaf, &mut qa_regions);
            qa.push(QaRecord { split, sample });
        }
    }

    Ok(Corpus {
        vocab,
        ontology,
        families,
        recognition,
        qa_regions,
        qa,
        synonyms,
    })
}

/// Realized per-object training counts: recognition regions labeled with the
/// object and QA questions whose queried region carries it.
pub fn count_audit(corpus: &Corpus) -> BTreeMap<usize, Frequency> {
    let mut out: BTreeMap<usize, Frequency> = BTreeMap::new();
    for r in corpus.recognition.iter().filter(|r| r.split == Split::Train) {
        out.entry(r.object)
            .or_insert(Frequency { recognition: 0, qa: 0 })
            .recognition += 1;
    }
    let index = corpus.region_index();
    for q in corpus.qa.iter().filter(|q| q.split == Split::Train) {
        if let Some(rel) = q.sample.relevant {
            let obj = corpus.qa_regions[index[&rel]].object;
            out.entry(obj).or_insert(Frequency { recognition: 0, qa: 0 }).qa += 1;
        }
    }
    out
}

impl Corpus {
    /// QA region id to position in `qa_regions`.
    pub fn region_index(&self) -> BTreeMap<usize, usize> {
        self.qa_regions
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id, i))
            .collect()
    }

    pub fn recognition_split(&self, split: Split) -> Vec<&RegionRecord> {
        self.recognition.iter().filter(|r| r.split == split).collect()
    }

    pub fn qa_split(&self, split: Split) -> Vec<&QaSample> {
        self.qa
            .iter()
            .filter(|q| q.split == split)
            .map(|q| &q.sample)
            .collect()
    }

    pub fn leaves(&self) -> Vec<usize> {
        self.ontology.leaves()
    }

    /// Pairs each sample with the feature vectors of its regions.
    pub fn vqa_items<'c>(&'c self, samples: &[&'c QaSample]) -> Result<Vec<VqaItem<'c>>> {
        let index = self.region_index();
        samples
            .iter()
            .map(|&s| {
                let regions = s
                    .regions
                    .iter()
                    .map(|id| {
                        index
                            .get(id)
                            .map(|&i| self.qa_regions[i].features.as_slice())
                            .ok_or_else(|| Error::Contract(format!("sample {}: unknown region {id}", s.id)))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(VqaItem { sample: s, regions })
            })
            .collect()
    }

    /// Recognition records as a training batch with hypernym-closed labels.
    pub fn region_batch(&self, regions: &[&RegionRecord]) -> Result<RegionBatch> {
        let mut batch = RegionBatch {
            features: Vec::with_capacity(regions.len()),
            object_labels: Vec::with_capacity(regions.len()),
            attribute_labels: Vec::with_capacity(regions.len()),
        };
        for r in regions {
            batch.features.push(r.features.clone());
            batch.object_labels.push(hypernym_closure(&[r.object], &self.ontology)?);
            batch.attribute_labels.push(r.attributes.iter().copied().collect());
        }
        Ok(batch)
    }

    pub fn lexicon(&self) -> Result<Lexicon> {
        Lexicon::new(self.vocab.clone(), self.ontology.clone())
    }

    /// Checks cross-references: region ids, label ranges, image disjointness.
    pub fn validate(&self) -> Result<()> {
        let index = self.region_index();
        let no = self.ontology.num_objects();
        let na = self.ontology.num_attributes();
        for r in self.recognition.iter().chain(&self.qa_regions) {
            if r.object >= no || r.attributes.iter().any(|&a| a >= na) {
                return Err(Error::Contract(format!("region {}: label out of range", r.id)));
            }
        }
        let rec_images: std::collections::BTreeSet<usize> =
            self.recognition.iter().map(|r| r.image).collect();
        for r in &self.qa_regions {
            if rec_images.contains(&r.image) {
                return Err(Error::Contract(format!(
                    "image {} appears in both datasets",
                    r.image
                )));
            }
        }
        for q in &self.qa {
            q.sample.validate()?;
            for id in q.sample.regions.iter().chain(q.sample.relevant.as_ref()) {
                if !index.contains_key(id) {
                    return Err(Error::Contract(format!(
                        "sample {}: unknown region {id}",
                        q.sample.id
                    )));
                }
            }
        }
        Ok(())
    }
}
