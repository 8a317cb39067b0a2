//! Open-vocabulary recognition: region-word inner-product scores, the
//! multi-label margin loss over objects and the class-balanced
//! cross-entropy over attributes.

mod ontology;

use std::collections::BTreeSet;

use crate::autodiff::{Graph, Mode, Tensor, Var};
use crate::error::{Error, Result};
use crate::svlr::{ClassKind, Head, Lexicon, Model, Session};

pub use ontology::{hypernym_closure, Ontology};

/// `M` regions with their hypernym-closed object labels `H_j` and
/// attribute labels `T_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionBatch {
    pub features: Vec<Vec<f64>>,
    pub object_labels: Vec<BTreeSet<usize>>,
    pub attribute_labels: Vec<BTreeSet<usize>>,
}

impl RegionBatch {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn feature_matrix(&self) -> Result<Tensor> {
        if self.features.is_empty() {
            return Err(Error::Contract("empty region batch".into()));
        }
        let cols = self.features[0].len();
        let data: Vec<f64> = self.features.iter().flatten().copied().collect();
        Tensor::matrix(self.features.len(), cols, data)
    }
}

/// `f(R)ᵀ C` for region embeddings `M × d_e` and class vectors `K × d_e`.
fn inner_scores(graph: &mut Graph, regions: Var, classes: Var) -> Result<Var> {
    let ct = graph.transpose(classes)?;
    graph.matmul(regions, ct)
}

/// `M × |O|` object scores `s_o(R)[k] = f_o(R)ᵀ class_vector(k)`.
pub fn object_scores(sess: &mut Session, features: Var) -> Result<Var> {
    let emb = sess.embed_regions(features, Head::Object)?;
    let classes = sess.class_vectors(ClassKind::Object)?;
    inner_scores(&mut sess.graph, emb, classes)
}

/// `M × |T|` attribute scores `s_a(R)[t] = f_a(R)ᵀ class_vector(t)`.
pub fn attribute_scores(sess: &mut Session, features: Var) -> Result<Var> {
    let emb = sess.embed_regions(features, Head::Attribute)?;
    let classes = sess.class_vectors(ClassKind::Attribute)?;
    inner_scores(&mut sess.graph, emb, classes)
}

/// Multi-label margin loss over precomputed `M × |O|` scores:
///
/// `(1/M) Σ_j (1/|H_j|) Σ_{l∈H_j} (1/|O|) Σ_{k∉H_j} max(0, η + s_jk − s_jl)`.
///
/// The inner normalizer is `1/|O|` even though only `|O \ H_j|` terms are
/// summed.
pub fn object_hinge(
    graph: &mut Graph,
    scores: Var,
    labels: &[BTreeSet<usize>],
    margin: f64,
) -> Result<Var> {
    let (m, n_obj) = graph
        .value(scores)
        .dims2()
        .ok_or_else(|| Error::shape("object_loss", "scores must be a matrix"))?;
    if labels.len() != m {
        return Err(Error::shape(
            "object_loss",
            format!("{} label sets for {m} regions", labels.len()),
        ));
    }
    let mut neg = Vec::new();
    let mut pos = Vec::new();
    let mut weights = Vec::new();
    for (j, h) in labels.iter().enumerate() {
        if h.is_empty() {
            return Err(Error::Contract(format!("region {j} has an empty object label set")));
        }
        if let Some(&bad) = h.iter().find(|&&l| l >= n_obj) {
            return Err(Error::MissingCategory(format!("object #{bad}")));
        }
        let w = 1.0 / (m as f64 * h.len() as f64 * n_obj as f64);
        for &l in h {
            for k in (0..n_obj).filter(|k| !h.contains(k)) {
                neg.push(j * n_obj + k);
                pos.push(j * n_obj + l);
                weights.push(w);
            }
        }
    }
    if neg.is_empty() {
        return Ok(graph.constant(Tensor::scalar(0.0)));
    }
    let sk = graph.gather(scores, &neg)?;
    let sl = graph.gather(scores, &pos)?;
    let diff = graph.sub(sk, sl)?;
    let shifted = graph.add_scalar(diff, margin)?;
    let hinge = graph.relu(shifted)?;
    graph.weighted_sum(hinge, weights)
}

/// Class-balanced attribute cross-entropy over precomputed `M × |T|` scores.
///
/// With `Γ(t)` the fraction of regions in the batch labeled `t`, positives
/// are weighted `1 − Γ(t)` on `−log σ(s)` and negatives `Γ(t)` on
/// `−log(1 − σ(s))`; the total is divided by `M`.
pub fn attribute_bce(graph: &mut Graph, scores: Var, labels: &[BTreeSet<usize>]) -> Result<Var> {
    let (m, n_attr) = graph
        .value(scores)
        .dims2()
        .ok_or_else(|| Error::shape("attribute_loss", "scores must be a matrix"))?;
    if labels.len() != m || m == 0 {
        return Err(Error::shape(
            "attribute_loss",
            format!("{} label sets for {m} regions", labels.len()),
        ));
    }
    let gamma = positive_fractions(labels, n_attr)?;
    let mf = m as f64;
    let mut w_pos = vec![0.0; m * n_attr];
    let mut w_neg = vec![0.0; m * n_attr];
    for (j, t_j) in labels.iter().enumerate() {
        for t in 0..n_attr {
            if t_j.contains(&t) {
                w_pos[j * n_attr + t] = -(1.0 - gamma[t]) / mf;
            } else {
                w_neg[j * n_attr + t] = -gamma[t] / mf;
            }
        }
    }
    let log_p = graph.log_sigmoid(scores)?;
    let flipped = graph.scale(scores, -1.0)?;
    let log_q = graph.log_sigmoid(flipped)?;
    let lp = graph.weighted_sum(log_p, w_pos)?;
    let lq = graph.weighted_sum(log_q, w_neg)?;
    graph.add(lp, lq)
}

/// `Γ(t)`: fraction of label sets containing `t`.
pub fn positive_fractions(labels: &[BTreeSet<usize>], n_attr: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; n_attr];
    for t_j in labels {
        for &t in t_j {
            if t >= n_attr {
                return Err(Error::MissingCategory(format!("attribute #{t}")));
            }
            counts[t] += 1;
        }
    }
    Ok(counts
        .into_iter()
        .map(|c| c as f64 / labels.len() as f64)
        .collect())
}

/// Object margin loss of a region batch.
pub fn object_loss(sess: &mut Session, batch: &RegionBatch, margin: f64) -> Result<Var> {
    let x = sess.graph.constant(batch.feature_matrix()?);
    let s = object_scores(sess, x)?;
    object_hinge(&mut sess.graph, s, &batch.object_labels, margin)
}

/// Attribute cross-entropy of a region batch.
pub fn attribute_loss(sess: &mut Session, batch: &RegionBatch) -> Result<Var> {
    let x = sess.graph.constant(batch.feature_matrix()?);
    let s = attribute_scores(sess, x)?;
    attribute_bce(&mut sess.graph, s, &batch.attribute_labels)
}

/// Scores one region against an arbitrary list of words, not just the
/// trained categories. Returns `(word, score)` sorted by descending score,
/// ties broken by vocabulary id.
pub fn classify_region(
    model: &mut Model,
    lex: &Lexicon,
    features: &[f64],
    head: Head,
    words: &[&str],
) -> Result<Vec<(String, f64)>> {
    let ids = words
        .iter()
        .map(|w| lex.vocab.require(w))
        .collect::<Result<Vec<_>>>()?;
    if ids.is_empty() {
        return Ok(Vec::new());
    }
    let mut sess = Session::new(model, lex, Mode::Eval, false);
    let x = sess
        .graph
        .constant(Tensor::matrix(1, features.len(), features.to_vec())?);
    let r = sess.embed_regions(x, head)?;
    let w = sess.embed_words(&ids)?;
    let s = inner_scores(&mut sess.graph, r, w)?;
    let vals = sess.graph.value(s).data().to_vec();
    let mut ranked: Vec<(usize, f64)> = ids.into_iter().zip(vals).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.dedup_by_key(|p| p.0);
    Ok(ranked
        .into_iter()
        .map(|(id, s)| (lex.vocab.word(id).to_string(), s))
        .collect())
}

/// Per-region recognition predictions in eval mode: object and attribute
/// score rows for every feature vector.
pub fn region_scores(
    model: &mut Model,
    lex: &Lexicon,
    features: &[Vec<f64>],
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    if features.is_empty() {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut sess = Session::new(model, lex, Mode::Eval, false);
    let cols = features[0].len();
    let x = sess.graph.constant(Tensor::matrix(
        features.len(),
        cols,
        features.iter().flatten().copied().collect(),
    )?);
    let so = object_scores(&mut sess, x)?;
    let sa = attribute_scores(&mut sess, x)?;
    let rows = |t: &Tensor| -> Vec<Vec<f64>> {
        let (r, _) = t.dims2().unwrap();
        (0..r).map(|i| t.row(i).to_vec()).collect()
    };
    Ok((rows(sess.graph.value(so)), rows(sess.graph.value(sa))))
}
