//! Finite-difference gradient suite over every autodiff primitive and every
//! model loss, plus the small random instances it runs on.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::gradcheck::{check_gradients, compare_with_differences, GradCheckConfig, GradCheckReport};
use crate::autodiff::{Graph, Mode, RunningMoments, Tensor, Var};
use crate::error::Result;
use crate::recognition::{self, hypernym_closure, Ontology, RegionBatch};
use crate::svlr::{Lexicon, Model, ModelDims, Session, ShareMode, Vocabulary};
use crate::vqa::{self, Pos, QaSample, TaggedWord, Token, VqaItem};

fn normal(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, normal(rng, r * c)).expect("shape")
}

fn random_vector(rng: &mut ChaCha8Rng, n: usize) -> Tensor {
    Tensor::vector(normal(rng, n)).expect("shape")
}

/// A small random world: lexicon, model with perturbed weights and
/// moments, a region batch and a few QA samples with their features.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub lex: Lexicon,
    pub model: Model,
    pub regions: RegionBatch,
    pub samples: Vec<QaSample>,
    pub features: Vec<Vec<Vec<f64>>>,
}

impl Fixture {
    pub fn new(seed: u64, share: ShareMode) -> Fixture {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parents = rng.random_range(1..=2);
        let leaves = rng.random_range(2..=4);
        let n_attr = rng.random_range(2..=4);
        let objects: Vec<String> = (0..parents)
            .map(|p| format!("parent{p}"))
            .chain((0..leaves).map(|l| format!("leaf{l}")))
            .collect();
        let attributes: Vec<String> = (0..n_attr).map(|a| format!("attr{a}")).collect();
        let edges: Vec<(usize, usize)> = (0..leaves)
            .map(|l| (parents + l, rng.random_range(0..parents)))
            .collect();
        let ontology = Ontology::new(objects.clone(), attributes.clone(), &edges).expect("ontology");
        let word_dim = 4;
        let mut vocab = Vocabulary::new(word_dim);
        for w in objects.iter().chain(&attributes).map(String::as_str).chain(["what", "is"]) {
            vocab.push(w, normal(&mut rng, word_dim)).expect("vocab");
        }
        let lex = Lexicon::new(vocab, ontology).expect("lexicon");

        let dims = ModelDims {
            word_dim,
            region_dim: 5,
            hidden: 4,
            embed: 3,
            bimodal: 4,
            objects: objects.len(),
            attributes: n_attr,
        };
        let mut model = Model::new(dims, share, &mut rng);
        for (name, t) in model.params.iter_mut() {
            let n = t.len();
            let noise = normal(&mut rng, n);
            for (x, z) in t.data_mut().iter_mut().zip(noise) {
                *x += if name.ends_with(".scale") { 0.3 * z } else { 0.2 * z };
            }
        }
        for m in model.moments.values_mut() {
            let n = m.dim();
            m.mean = normal(&mut rng, n).into_iter().map(|z| 0.3 * z).collect();
            m.var = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
        }

        let m = rng.random_range(3..=5);
        let mut regions = RegionBatch {
            features: Vec::new(),
            object_labels: Vec::new(),
            attribute_labels: Vec::new(),
        };
        for _ in 0..m {
            regions.features.push(normal(&mut rng, dims.region_dim));
            let leaf = parents + rng.random_range(0..leaves);
            regions
                .object_labels
                .push(hypernym_closure(&[leaf], &lex.ontology).expect("closure"));
            regions
                .attribute_labels
                .push((0..n_attr).filter(|_| rng.random_bool(0.4)).collect());
        }

        let word = |name: &str| lex.vocab.id(name).expect("word");
        let what = word("what");
        let is = word("is");
        let mut samples = Vec::new();
        let mut features = Vec::new();
        let mut next_region = 0;
        for id in 0..rng.random_range(2..=3) {
            let n_regions = rng.random_range(2..=3);
            let obj = word(&objects[rng.random_range(0..objects.len())]);
            let attr = word(&attributes[rng.random_range(0..n_attr)]);
            let tokens = vec![
                Token { word: what, pos: Pos::Other, bin: 1 },
                Token { word: attr, pos: Pos::Adjective, bin: 2 },
                Token { word: is, pos: Pos::Other, bin: 3 },
                Token { word: obj, pos: Pos::Noun, bin: 4 },
            ];
            let mut pool: Vec<TaggedWord> = objects
                .iter()
                .map(|o| TaggedWord { word: word(o), pos: Pos::Noun })
                .chain(attributes.iter().map(|a| TaggedWord { word: word(a), pos: Pos::Adjective }))
                .collect();
            pool.shuffle(&mut rng);
            let n_opt = rng.random_range(2..=3);
            let mut options: Vec<Vec<TaggedWord>> = pool[..n_opt].iter().map(|&w| vec![w]).collect();
            if rng.random_bool(0.5) {
                options[0].push(TaggedWord { word: is, pos: Pos::Other });
            }
            let ids: Vec<usize> = (next_region..next_region + n_regions).collect();
            next_region += n_regions;
            samples.push(QaSample {
                id,
                image: id,
                template: "random".into(),
                tokens,
                correct: rng.random_range(0..n_opt),
                options,
                relevant: Some(ids[0]),
                regions: ids,
            });
            features.push((0..n_regions).map(|_| normal(&mut rng, dims.region_dim)).collect());
        }
        Fixture {
            lex,
            model,
            regions,
            samples,
            features,
        }
    }

    pub fn items(&self) -> Vec<VqaItem<'_>> {
        self.samples
            .iter()
            .zip(&self.features)
            .map(|(sample, f)| VqaItem {
                sample,
                regions: f.iter().map(Vec::as_slice).collect(),
            })
            .collect()
    }
}

/// Checks the parameter gradients of a model-level function against
/// central differences of the same function on perturbed copies of the
/// model. A non-scalar output is reduced by summation.
pub fn check_model_gradients<F>(
    model: &Model,
    lex: &Lexicon,
    mode: Mode,
    mut f: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Session) -> Result<Var>,
{
    let names: Vec<String> = model.params.names().cloned().collect();
    let inputs: Vec<Tensor> = names.iter().map(|n| model.param(n).clone()).collect();
    let analytic = {
        let mut m = model.clone();
        let mut sess = Session::new(&mut m, lex, mode, true);
        let out = f(&mut sess)?;
        let root = if sess.graph.value(out).is_scalar() {
            out
        } else {
            sess.graph.sum(out)?
        };
        sess.graph.backward(root)?;
        let grads = sess.param_grads();
        names
            .iter()
            .zip(&inputs)
            .map(|(n, t)| grads.get(n).cloned().unwrap_or_else(|| vec![0.0; t.len()]))
            .collect::<Vec<_>>()
    };
    let eval = |ts: &[Tensor]| -> Result<f64> {
        let mut m = model.clone();
        for (n, t) in names.iter().zip(ts) {
            *m.params.get_mut(n).expect("param") = t.clone();
        }
        let mut sess = Session::new(&mut m, lex, mode, false);
        let out = f(&mut sess)?;
        Ok(sess.graph.value(out).data().iter().sum())
    };
    compare_with_differences(&analytic, &inputs, eval, cfg)
}

/// Result of one named case for one seed.
#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: &'static str,
    pub seed: u64,
    pub report: GradCheckReport,
}

/// Contracts the output of a primitive with fixed random weights so that
/// outputs with a constant sum (softmax, batch norm) still carry gradient.
fn probe(g: &mut Graph, out: Var, weights: &[f64]) -> Result<Var> {
    g.weighted_sum(out, weights.to_vec())
}

fn primitive_cases(seed: u64) -> Result<Vec<CaseReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let r = rng.random_range(2..=4);
    let c = rng.random_range(2..=4);
    let k = rng.random_range(2..=4);
    let a = random_matrix(&mut rng, r, c);
    let b = random_matrix(&mut rng, c, k);
    let same = random_matrix(&mut rng, r, c);
    let bias = random_vector(&mut rng, c);
    let w_rc = normal(&mut rng, r * c);
    let w_rk = normal(&mut rng, r * k);
    let smooth = GradCheckConfig::smooth();
    let kinks = GradCheckConfig::smooth_with_kinks();
    let piecewise = GradCheckConfig::piecewise();
    let mut out = Vec::new();
    let mut push = |name, report| out.push(CaseReport { name, seed, report });

    push("matmul", check_gradients(|g, v| { let y = g.matmul(v[0], v[1])?; probe(g, y, &w_rk) }, &[a.clone(), b.clone()], &smooth)?);
    push("transpose", check_gradients(|g, v| { let y = g.transpose(v[0])?; probe(g, y, &w_rc) }, &[a.clone()], &smooth)?);
    push("add", check_gradients(|g, v| { let y = g.add(v[0], v[1])?; probe(g, y, &w_rc) }, &[a.clone(), same.clone()], &smooth)?);
    push("add_bias", check_gradients(|g, v| { let y = g.add_bias(v[0], v[1])?; probe(g, y, &w_rc) }, &[a.clone(), bias.clone()], &smooth)?);
    push("sub", check_gradients(|g, v| { let y = g.sub(v[0], v[1])?; probe(g, y, &w_rc) }, &[a.clone(), same.clone()], &smooth)?);
    push("mul", check_gradients(|g, v| { let y = g.mul(v[0], v[1])?; probe(g, y, &w_rc) }, &[a.clone(), same.clone()], &smooth)?);
    push("scale", check_gradients(|g, v| { let y = g.scale(v[0], -1.7)?; probe(g, y, &w_rc) }, &[a.clone()], &smooth)?);
    push("add_scalar", check_gradients(|g, v| { let y = g.add_scalar(v[0], 0.3)?; probe(g, y, &w_rc) }, &[a.clone()], &smooth)?);
    push("relu", check_gradients(|g, v| { let y = g.relu(v[0])?; probe(g, y, &w_rc) }, &[a.clone()], &kinks)?);
    push("sigmoid", check_gradients(|g, v| { let y = g.sigmoid(v[0])?; probe(g, y, &w_rc) }, &[a.clone()], &smooth)?);
    push("log_sigmoid", check_gradients(|g, v| { let y = g.log_sigmoid(v[0])?; probe(g, y, &w_rc) }, &[a.clone()], &smooth)?);
    push("softmax", check_gradients(|g, v| { let y = g.softmax(v[0])?; probe(g, y, &w_rc) }, &[a.clone()], &smooth)?);
    let n = r * c;
    let cut = rng.random_range(1..n);
    push(
        "segment_softmax",
        check_gradients(|g, v| { let y = g.segment_softmax(v[0], &[(0, cut), (cut, n)])?; probe(g, y, &w_rc) }, &[a.clone()], &smooth)?,
    );
    let scale = random_vector(&mut rng, c);
    let offset = random_vector(&mut rng, c);
    push(
        "batch_norm_train",
        check_gradients(
            |g, v| {
                let mut m = RunningMoments::new(c);
                let y = g.batch_norm(v[0], v[1], v[2], Mode::Train, &mut m)?;
                probe(g, y, &w_rc)
            },
            &[a.clone(), scale.clone(), offset.clone()],
            &piecewise,
        )?,
    );
    let moments = RunningMoments {
        mean: normal(&mut rng, c),
        var: (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
    };
    push(
        "batch_norm_eval",
        check_gradients(
            |g, v| {
                let mut m = moments.clone();
                let y = g.batch_norm(v[0], v[1], v[2], Mode::Eval, &mut m)?;
                probe(g, y, &w_rc)
            },
            &[a.clone(), scale, offset],
            &smooth,
        )?,
    );
    let w_cat: Vec<f64> = normal(&mut rng, 2 * n);
    push("concat", check_gradients(|g, v| { let y = g.concat(&[v[0], v[1]])?; probe(g, y, &w_cat) }, &[a.clone(), same.clone()], &smooth)?);
    let side = random_matrix(&mut rng, r, k);
    let w_cols = normal(&mut rng, r * (c + k));
    push(
        "concat_cols",
        check_gradients(|g, v| { let y = g.concat_cols(&[v[0], v[1]])?; probe(g, y, &w_cols) }, &[a.clone(), side], &smooth)?,
    );
    let rows: Vec<usize> = (0..r + 1).map(|_| rng.random_range(0..r)).collect();
    let w_rows = normal(&mut rng, rows.len() * c);
    push("row_select", check_gradients(|g, v| { let y = g.row_select(v[0], &rows)?; probe(g, y, &w_rows) }, &[a.clone()], &smooth)?);
    let idx: Vec<usize> = (0..n + 2).map(|_| rng.random_range(0..n)).collect();
    let w_idx = normal(&mut rng, idx.len());
    push("gather", check_gradients(|g, v| { let y = g.gather(v[0], &idx)?; probe(g, y, &w_idx) }, &[a.clone()], &smooth)?);
    let sets: Vec<Vec<usize>> = (0..4)
        .map(|_| {
            let len = rng.random_range(0..=3);
            (0..len).map(|_| rng.random_range(0..n)).collect()
        })
        .collect();
    let w_sets = normal(&mut rng, sets.len());
    push(
        "max_over_sets",
        check_gradients(|g, v| { let y = g.max_over_sets(v[0], &sets)?; probe(g, y, &w_sets) }, &[a.clone()], &kinks)?,
    );
    push("minimum", check_gradients(|g, v| { let y = g.minimum(v[0], v[1])?; probe(g, y, &w_rc) }, &[a.clone(), same.clone()], &kinks)?);
    push("sum", check_gradients(|g, v| g.sum(v[0]), &[a.clone()], &smooth)?);
    push("mean", check_gradients(|g, v| g.mean(v[0]), &[a.clone()], &smooth)?);
    push("weighted_sum", check_gradients(|g, v| probe(g, v[0], &w_rc), &[a.clone()], &smooth)?);
    let groups = 2;
    let row_of: Vec<usize> = (0..n).map(|_| rng.random_range(0..r)).collect();
    let group_of: Vec<usize> = (0..n).map(|i| i % groups).collect();
    let w_groups = normal(&mut rng, groups * c);
    let weights = random_vector(&mut rng, n);
    push(
        "weighted_row_sum",
        check_gradients(
            |g, v| {
                let y = g.weighted_row_sum(v[0], v[1], &row_of, &group_of, groups)?;
                probe(g, y, &w_groups)
            },
            &[weights, a.clone()],
            &smooth,
        )?,
    );
    push("reshape", check_gradients(|g, v| { let y = g.reshape(v[0], &[c, r])?; probe(g, y, &w_rc) }, &[a.clone()], &smooth)?);
    push(
        "composite",
        check_gradients(
            |g, v| {
                let h = g.matmul(v[0], v[1])?;
                let h = g.sigmoid(h)?;
                let s = g.softmax(h)?;
                let l = g.log_sigmoid(s)?;
                g.mean(l)
            },
            &[a, b],
            &smooth,
        )?,
    );
    Ok(out)
}

fn model_cases(seed: u64, share: ShareMode) -> Result<Vec<CaseReport>> {
    let fx = Fixture::new(seed, share);
    let items = fx.items();
    let cfg = GradCheckConfig::piecewise();
    let mut out = Vec::new();
    let mut push = |name, report| out.push(CaseReport { name, seed, report });
    let (lex, model) = (&fx.lex, &fx.model);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xface);
    let score_weights = normal(&mut rng, items.iter().map(|i| i.sample.options.len()).sum());

    push(
        "object_loss",
        check_model_gradients(model, lex, Mode::Train, |s| recognition::object_loss(s, &fx.regions, 1.0), &cfg)?,
    );
    push(
        "attribute_loss",
        check_model_gradients(model, lex, Mode::Train, |s| recognition::attribute_loss(s, &fx.regions), &cfg)?,
    );
    push(
        "answer_loss",
        check_model_gradients(model, lex, Mode::Train, |s| vqa::answer_loss(s, &items, 1.0), &cfg)?,
    );
    push(
        "score_triplet_train",
        check_model_gradients(
            model,
            lex,
            Mode::Train,
            |s| {
                let fwd = vqa::score_items(s, &items)?;
                s.graph.weighted_sum(fwd.scores, score_weights.clone())
            },
            &cfg,
        )?,
    );
    push(
        "score_triplet_eval",
        check_model_gradients(
            model,
            lex,
            Mode::Eval,
            |s| {
                let fwd = vqa::score_items(s, &items[..1])?;
                let n = fwd.option_ranges[0].1;
                s.graph.weighted_sum(fwd.scores, score_weights[..n].to_vec())
            },
            &cfg,
        )?,
    );
    push(
        "zero_shot_score",
        check_model_gradients(
            model,
            lex,
            Mode::Eval,
            |s| {
                let fwd = vqa::zero_shot_items(s, &items)?;
                s.graph.weighted_sum(fwd.scores, score_weights.clone())
            },
            &cfg,
        )?,
    );
    let all_words: Vec<usize> = (0..lex.vocab.len()).collect();
    let emb_weights = normal(&mut rng, all_words.len() * model.dims.embed);
    push(
        "word_embedding",
        check_model_gradients(
            model,
            lex,
            Mode::Eval,
            |s| {
                let e = s.embed_words(&all_words)?;
                s.graph.weighted_sum(e, emb_weights.clone())
            },
            &GradCheckConfig::smooth_with_kinks(),
        )?,
    );
    Ok(out)
}

/// Runs every primitive and model case for one seed.
pub fn run_suite(seed: u64) -> Result<Vec<CaseReport>> {
    let mut out = primitive_cases(seed)?;
    out.extend(model_cases(seed, ShareMode::Svlr)?);
    let multitask: Vec<CaseReport> = model_cases(seed, ShareMode::Multitask)?;
    out.extend(multitask.into_iter().filter(|c| c.name != "word_embedding"));
    Ok(out)
}
