//! Naive-loop reference implementations of the recognition and VQA
//! computations, written directly against the parameter tables.

use std::collections::BTreeSet;

use svlr_core::autodiff::BN_EPS;
use svlr_core::recognition::RegionBatch;
use svlr_core::svlr::{Lexicon, Model, ShareMode};
use svlr_core::vqa::{Pos, QaSample};

pub type Mat = Vec<Vec<f64>>;

fn weights(model: &Model, name: &str) -> Mat {
    let t = model.param(name);
    let (r, c) = t.dims2().unwrap();
    (0..r).map(|i| (0..c).map(|j| t.data()[i * c + j]).collect()).collect()
}

fn vector(model: &Model, name: &str) -> Vec<f64> {
    model.param(name).data().to_vec()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

fn times(x: &[f64], w: &Mat) -> Vec<f64> {
    let mut out = vec![0.0; w[0].len()];
    for i in 0..x.len() {
        for j in 0..out.len() {
            out[j] += x[i] * w[i][j];
        }
    }
    out
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Normalizes each column with batch statistics (`train`) or the stored
/// running moments.
fn batch_norm(rows: &Mat, model: &Model, layer: &str, train: bool) -> Mat {
    let scale = vector(model, &format!("{layer}.scale"));
    let offset = vector(model, &format!("{layer}.offset"));
    let d = rows[0].len();
    let n = rows.len() as f64;
    let mut out = rows.clone();
    for j in 0..d {
        let (mean, var) = if train {
            let m = rows.iter().map(|r| r[j]).sum::<f64>() / n;
            let v = rows.iter().map(|r| (r[j] - m) * (r[j] - m)).sum::<f64>() / n;
            (m, v)
        } else {
            let mm = &model.moments[layer];
            (mm.mean[j], mm.var[j])
        };
        for i in 0..rows.len() {
            out[i][j] = scale[j] * (rows[i][j] - mean) / (var + BN_EPS).sqrt() + offset[j];
        }
    }
    out
}

/// `g(w)` for one word.
pub fn word(model: &Model, lex: &Lexicon, w: usize) -> Vec<f64> {
    let x = lex.vocab.vector(w);
    let b1 = vector(model, "g.b1");
    let b2 = vector(model, "g.b2");
    let h: Vec<f64> = times(x, &weights(model, "g.w1"))
        .iter()
        .zip(&b1)
        .map(|(v, b)| relu(v + b))
        .collect();
    times(&h, &weights(model, "g.w2")).iter().zip(&b2).map(|(v, b)| v + b).collect()
}

/// `f_o` (`prefix = "fo"`) or `f_a` on a stack of regions.
pub fn region_net(model: &Model, prefix: &str, regions: &Mat, train: bool) -> Mat {
    let mut h = regions.clone();
    for layer in 1..=2 {
        let w = weights(model, &format!("{prefix}.w{layer}"));
        let lin: Mat = h.iter().map(|r| times(r, &w)).collect();
        let bn = batch_norm(&lin, model, &format!("{prefix}.bn{layer}"), train);
        h = bn.into_iter().map(|r| r.into_iter().map(relu).collect()).collect();
    }
    h
}

pub fn class_vectors(model: &Model, lex: &Lexicon, objects: bool) -> Mat {
    match model.share {
        ShareMode::Svlr => {
            let ids = if objects { lex.object_words() } else { lex.attribute_words() };
            ids.iter().map(|&w| word(model, lex, w)).collect()
        }
        ShareMode::Multitask => weights(model, if objects { "h.obj" } else { "h.attr" }),
    }
}

fn scores(emb: &Mat, classes: &Mat) -> Mat {
    emb.iter().map(|e| classes.iter().map(|c| dot(e, c)).collect()).collect()
}

pub fn object_loss(model: &Model, lex: &Lexicon, batch: &RegionBatch, margin: f64) -> f64 {
    let s = scores(&region_net(model, "fo", &batch.features, true), &class_vectors(model, lex, true));
    let m = batch.len() as f64;
    let n_obj = s[0].len();
    let mut total = 0.0;
    for (j, h) in batch.object_labels.iter().enumerate() {
        let mut per_region = 0.0;
        for &l in h {
            let mut inner = 0.0;
            for k in 0..n_obj {
                if !h.contains(&k) {
                    inner += relu(margin + s[j][k] - s[j][l]);
                }
            }
            per_region += inner / n_obj as f64;
        }
        total += per_region / h.len() as f64;
    }
    total / m
}

pub fn attribute_loss(model: &Model, lex: &Lexicon, batch: &RegionBatch) -> f64 {
    let s = scores(&region_net(model, "fa", &batch.features, true), &class_vectors(model, lex, false));
    let m = batch.len();
    let n_attr = s[0].len();
    let mut total = 0.0;
    for t in 0..n_attr {
        let gamma = batch.attribute_labels.iter().filter(|l| l.contains(&t)).count() as f64 / m as f64;
        for j in 0..m {
            let p = 1.0 / (1.0 + (-s[j][t]).exp());
            if batch.attribute_labels[j].contains(&t) {
                total -= (1.0 - gamma) * p.ln();
            } else {
                total -= gamma * (1.0 - p).ln();
            }
        }
    }
    total / m as f64
}

/// Nouns and adjectives mentioned by the question and/or one option.
pub fn mentions(qa: &QaSample, option: Option<usize>, question: bool) -> (BTreeSet<usize>, BTreeSet<usize>) {
    let mut nouns = BTreeSet::new();
    let mut adjs = BTreeSet::new();
    let mut add = |w: usize, pos: Pos| match pos {
        Pos::Noun => {
            nouns.insert(w);
        }
        Pos::Adjective => {
            adjs.insert(w);
        }
        Pos::Other => {}
    };
    if question {
        for t in &qa.tokens {
            add(t.word, t.pos);
        }
    }
    if let Some(o) = option {
        for w in &qa.options[o] {
            add(w.word, w.pos);
        }
    }
    (nouns, adjs)
}

/// Unnormalized relevance of each region to a mention set, given the
/// region embeddings.
pub fn relevance(
    model: &Model,
    lex: &Lexicon,
    fo: &Mat,
    fa: &Mat,
    nouns: &BTreeSet<usize>,
    adjs: &BTreeSet<usize>,
) -> Vec<f64> {
    (0..fo.len())
        .map(|r| {
            let best = |emb: &[f64], set: &BTreeSet<usize>| {
                let mut m: Option<f64> = None;
                for &w in set {
                    let s = dot(emb, &word(model, lex, w));
                    m = Some(match m {
                        Some(v) if v >= s => v,
                        _ => s,
                    });
                }
                m.unwrap_or(0.0)
            };
            best(&fo[r], nouns) + best(&fa[r], adjs)
        })
        .collect()
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Eval-mode attention weights over `regions`.
pub fn attention(
    model: &Model,
    lex: &Lexicon,
    regions: &Mat,
    nouns: &BTreeSet<usize>,
    adjs: &BTreeSet<usize>,
) -> Vec<f64> {
    let fo = region_net(model, "fo", regions, false);
    let fa = region_net(model, "fa", regions, false);
    softmax(&relevance(model, lex, &fo, &fa, nouns, adjs))
}

/// `Σ_R a(R) [s_o(R); s_a(R)]` with region embeddings from a given mode.
fn pooled(model: &Model, lex: &Lexicon, fo: &Mat, fa: &Mat, att: &[f64]) -> Vec<f64> {
    let so = scores(fo, &class_vectors(model, lex, true));
    let sa = scores(fa, &class_vectors(model, lex, false));
    let mut out = vec![0.0; so[0].len() + sa[0].len()];
    for r in 0..att.len() {
        let row: Vec<f64> = so[r].iter().chain(&sa[r]).copied().collect();
        for k in 0..out.len() {
            out[k] += att[r] * row[k];
        }
    }
    out
}

pub fn image_representation(model: &Model, lex: &Lexicon, regions: &Mat, att: &[f64]) -> Vec<f64> {
    let fo = region_net(model, "fo", regions, false);
    let fa = region_net(model, "fa", regions, false);
    pooled(model, lex, &fo, &fa, att)
}

pub fn zero_shot_score(model: &Model, lex: &Lexicon, qa: &QaSample, regions: &Mat, option: usize) -> f64 {
    let fo = region_net(model, "fo", regions, false);
    let fa = region_net(model, "fa", regions, false);
    let (n, j) = mentions(qa, Some(option), true);
    let att = softmax(&relevance(model, lex, &fo, &fa, &n, &j));
    let (qn, qj) = mentions(qa, None, true);
    let (an, aj) = mentions(qa, Some(option), false);
    let pq = relevance(model, lex, &fo, &fa, &qn, &qj);
    let pa = relevance(model, lex, &fo, &fa, &an, &aj);
    let mut s = 0.0;
    for r in 0..att.len() {
        s += att[r] * pq[r].min(pa[r]);
    }
    s
}

fn mean_words(model: &Model, lex: &Lexicon, words: &[usize], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d];
    for &w in words {
        let e = word(model, lex, w);
        for k in 0..d {
            out[k] += e[k] / words.len() as f64;
        }
    }
    out
}

/// Train-mode answer loss of a batch: batch statistics span every region
/// of every sample (region networks) and every option (bimodal layer).
pub fn answer_loss(model: &Model, lex: &Lexicon, samples: &[(&QaSample, Mat)], margin: f64) -> f64 {
    let all: Mat = samples.iter().flat_map(|(_, r)| r.iter().cloned()).collect();
    let fo_all = region_net(model, "fo", &all, true);
    let fa_all = region_net(model, "fa", &all, true);
    let d = model.dims.embed;
    let mut image = Vec::new();
    let mut lang = Vec::new();
    let mut first = 0;
    for (qa, regions) in samples {
        let rows = first..first + regions.len();
        first += regions.len();
        let fo: Mat = fo_all[rows.clone()].to_vec();
        let fa: Mat = fa_all[rows].to_vec();
        let mut q = Vec::new();
        for bin in 1..=4u8 {
            let ws: Vec<usize> = qa.tokens.iter().filter(|t| t.bin == bin).map(|t| t.word).collect();
            q.extend(mean_words(model, lex, &ws, d));
        }
        for o in 0..qa.options.len() {
            let (n, j) = mentions(qa, Some(o), true);
            let att = softmax(&relevance(model, lex, &fo, &fa, &n, &j));
            image.push(pooled(model, lex, &fo, &fa, &att));
            let ws: Vec<usize> = qa.options[o].iter().map(|w| w.word).collect();
            let mut l = q.clone();
            l.extend(mean_words(model, lex, &ws, d));
            lang.push(l);
        }
    }
    let vis: Mat = image.iter().map(|r| times(r, &weights(model, "vqa.w1"))).collect();
    let txt: Mat = lang.iter().map(|r| times(r, &weights(model, "vqa.w2"))).collect();
    let vis = batch_norm(&vis, model, "vqa.bn1", true);
    let txt = batch_norm(&txt, model, "vqa.bn2", true);
    let w3 = weights(model, "vqa.w3");
    let s: Vec<f64> = vis
        .iter()
        .zip(&txt)
        .map(|(v, t)| {
            let mut total = 0.0;
            for k in 0..v.len() {
                total += relu(v[k] + t[k]) * w3[k][0];
            }
            total
        })
        .collect();
    let mut loss = 0.0;
    let mut start = 0;
    for (qa, _) in samples {
        let n = qa.options.len();
        let pos = s[start + qa.correct];
        for i in 0..n {
            if i != qa.correct {
                loss += relu(margin + s[start + i] - pos) / (n - 1) as f64;
            }
        }
        start += n;
    }
    loss / samples.len() as f64
}
