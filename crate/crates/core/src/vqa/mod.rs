//! Multiple-choice VQA on top of the shared representation.
//!
//! For every (question, image, candidate answer) triplet:
//!
//! 1. each region gets a relevance `a'(R)`: the best object score among
//!    mentioned nouns plus the best attribute score among mentioned
//!    adjectives (an empty set contributes 0), softmax-normalized over the
//!    image's regions;
//! 2. `f(I)` pools the per-region recognition scores `[s_o(R); s_a(R)]`
//!    with those weights;
//! 3. `q(Q)` is the concatenation of four per-bin mean word embeddings and
//!    `a(A)` the mean answer-word embedding;
//! 4. `β = BN1(W1 f(I)) + BN2(W2 [q; a])` and the score is `W3 relu(β)`.
//!
//! Everything is evaluated for a whole batch of samples at once; attention
//! and `f(I)` are recomputed per option because answer words are mentions.

mod sample;

use std::collections::{BTreeMap, BTreeSet};

use crate::autodiff::{Graph, Mode, Tensor, Var};
use crate::error::{Error, Result};
use crate::svlr::{ClassKind, Head, Lexicon, Model, Session};

pub use sample::{
    answer_mentions, extract_mentions, fallback_bins, question_mentions, Mentions, Pos, QaSample,
    TaggedWord, Token,
};

/// A sample together with the feature vectors of its image regions.
#[derive(Clone, Debug)]
pub struct VqaItem<'c> {
    pub sample: &'c QaSample,
    pub regions: Vec<&'c [f64]>,
}

/// Normalized attention over an image's regions.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub region_ids: Vec<usize>,
    /// Unnormalized relevance `a'(R)`.
    pub raw: Vec<f64>,
    pub weights: Vec<f64>,
}

impl AttentionMap {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Region embeddings, recognition scores and region-word scores for every
/// region in a batch.
struct RegionTable {
    fo: Var,
    fa: Var,
    /// Word id to column of `word_obj`/`word_attr`.
    column: BTreeMap<usize, usize>,
    /// `Rtot × W` object-space scores against mentioned words.
    word_obj: Var,
    word_attr: Var,
}

fn stack_features(regions: &[&[f64]]) -> Result<Tensor> {
    let cols = regions
        .first()
        .map(|r| r.len())
        .ok_or_else(|| Error::Contract("no regions".into()))?;
    if regions.iter().any(|r| r.len() != cols) {
        return Err(Error::shape("embed_region", "ragged region features"));
    }
    Tensor::matrix(regions.len(), cols, regions.iter().flat_map(|r| r.iter().copied()).collect())
}

fn region_table(sess: &mut Session, regions: &[&[f64]], words: &BTreeSet<usize>) -> Result<RegionTable> {
    let x = sess.graph.constant(stack_features(regions)?);
    let fo = sess.embed_regions(x, Head::Object)?;
    let fa = sess.embed_regions(x, Head::Attribute)?;
    let (word_obj, word_attr, column) = if words.is_empty() {
        let z = sess.graph.constant(Tensor::zeros(&[1, 1]));
        (z, z, BTreeMap::new())
    } else {
        let ids: Vec<usize> = words.iter().copied().collect();
        let column = ids.iter().enumerate().map(|(c, &w)| (w, c)).collect();
        let e = sess.embed_words(&ids)?;
        let et = sess.graph.transpose(e)?;
        let wo = sess.graph.matmul(fo, et)?;
        let wa = sess.graph.matmul(fa, et)?;
        (wo, wa, column)
    };
    Ok(RegionTable {
        fo,
        fa,
        column,
        word_obj,
        word_attr,
    })
}

/// One attention segment: a contiguous block of region rows scored against
/// a mention set.
struct Segment<'m> {
    first_row: usize,
    rows: usize,
    mentions: &'m Mentions,
}

impl RegionTable {
    fn width(&self) -> usize {
        self.column.len().max(1)
    }

    /// `max_{n∈N} f_o(R)ᵀg(n) + max_{j∈J} f_a(R)ᵀg(j)` for every region of
    /// every segment, concatenated.
    fn relevance(&self, graph: &mut Graph, segments: &[Segment]) -> Result<Var> {
        let w = self.width();
        let mut noun_sets = Vec::new();
        let mut adj_sets = Vec::new();
        for seg in segments {
            for r in seg.first_row..seg.first_row + seg.rows {
                noun_sets.push(
                    seg.mentions
                        .nouns
                        .iter()
                        .map(|n| r * w + self.column[n])
                        .collect::<Vec<_>>(),
                );
                adj_sets.push(
                    seg.mentions
                        .adjectives
                        .iter()
                        .map(|j| r * w + self.column[j])
                        .collect::<Vec<_>>(),
                );
            }
        }
        let n = graph.max_over_sets(self.word_obj, &noun_sets)?;
        let j = graph.max_over_sets(self.word_attr, &adj_sets)?;
        graph.add(n, j)
    }
}

fn segment_ranges(segments: &[Segment]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(segments.len());
    let mut start = 0;
    for s in segments {
        out.push((start, start + s.rows));
        start += s.rows;
    }
    out
}

/// Outputs of a batched forward pass.
pub struct Forward {
    /// `T × 1` triplet scores, options of all items in order.
    pub scores: Var,
    /// Per item, `[start, end)` into the option axis.
    pub option_ranges: Vec<(usize, usize)>,
    /// Per option, `[start, end)` into the attention vectors.
    pub attention_ranges: Vec<(usize, usize)>,
    pub raw_attention: Var,
    pub attention: Var,
    /// `T × (|O| + |T|)` attended image representation.
    pub image_repr: Var,
    /// `T × 5 d_e` concatenated question/answer representation.
    pub qa_repr: Var,
    /// Region ids per option, aligned with the attention vectors.
    region_ids: Vec<Vec<usize>>,
}

impl Forward {
    pub fn attention_map(&self, graph: &Graph, option: usize) -> AttentionMap {
        let (s, e) = self.attention_ranges[option];
        AttentionMap {
            region_ids: self.region_ids[option].clone(),
            raw: graph.value(self.raw_attention).data()[s..e].to_vec(),
            weights: graph.value(self.attention).data()[s..e].to_vec(),
        }
    }

    pub fn option_scores(&self, graph: &Graph, item: usize) -> Vec<f64> {
        let (s, e) = self.option_ranges[item];
        graph.value(self.scores).data()[s..e].to_vec()
    }
}

fn all_words(items: &[VqaItem]) -> BTreeSet<usize> {
    let mut words = BTreeSet::new();
    for it in items {
        for t in &it.sample.tokens {
            if t.pos != Pos::Other {
                words.insert(t.word);
            }
        }
        for opt in &it.sample.options {
            for w in opt {
                if w.pos != Pos::Other {
                    words.insert(w.word);
                }
            }
        }
    }
    words
}

fn flatten_regions<'c>(items: &[VqaItem<'c>]) -> Result<(Vec<&'c [f64]>, Vec<usize>)> {
    let mut feats = Vec::new();
    let mut base = Vec::with_capacity(items.len());
    for it in items {
        it.sample.validate()?;
        if it.regions.len() != it.sample.regions.len() {
            return Err(Error::Contract(format!(
                "sample {}: {} region features for {} region ids",
                it.sample.id,
                it.regions.len(),
                it.sample.regions.len()
            )));
        }
        base.push(feats.len());
        feats.extend(it.regions.iter().copied());
    }
    Ok((feats, base))
}

/// Per-bin mean embeddings concatenated in bin order, `P × 4 d_e`.
fn question_block(sess: &mut Session, items: &[VqaItem]) -> Result<Var> {
    let v = sess.lex.vocab.len();
    let mut avg = vec![0.0; items.len() * 4 * v];
    for (i, it) in items.iter().enumerate() {
        for bin in 1..=4u8 {
            let words: Vec<usize> = it
                .sample
                .tokens
                .iter()
                .filter(|t| t.bin == bin)
                .map(|t| t.word)
                .collect();
            let row = i * 4 + (bin as usize - 1);
            for &w in &words {
                if w >= v {
                    return Err(Error::MissingWord(format!("#{w}")));
                }
                avg[row * v + w] += 1.0 / words.len() as f64;
            }
        }
    }
    let e = sess.vocab_embeddings()?;
    let m = sess.graph.constant(Tensor::matrix(items.len() * 4, v, avg)?);
    let bins = sess.graph.matmul(m, e)?;
    let d = sess.dims().embed;
    sess.graph.reshape(bins, &[items.len(), 4 * d])
}

/// Mean answer-word embedding for every option, `T × d_e`.
fn answer_block(sess: &mut Session, options: &[&[TaggedWord]]) -> Result<Var> {
    let v = sess.lex.vocab.len();
    let mut avg = vec![0.0; options.len() * v];
    for (o, words) in options.iter().enumerate() {
        if words.is_empty() {
            return Err(Error::Contract("empty answer option".into()));
        }
        for w in words.iter() {
            if w.word >= v {
                return Err(Error::MissingWord(format!("#{}", w.word)));
            }
            avg[o * v + w.word] += 1.0 / words.len() as f64;
        }
    }
    let e = sess.vocab_embeddings()?;
    let m = sess.graph.constant(Tensor::matrix(options.len(), v, avg)?);
    sess.graph.matmul(m, e)
}

/// Scores every option of every item. Train mode normalizes with batch
/// statistics, so the batch needs at least two regions and two options.
pub fn score_items(sess: &mut Session, items: &[VqaItem]) -> Result<Forward> {
    if items.is_empty() {
        return Err(Error::Contract("empty VQA batch".into()));
    }
    let (feats, base) = flatten_regions(items)?;
    let words = all_words(items);
    let table = region_table(sess, &feats, &words)?;

    let mentions: Vec<Vec<Mentions>> = items
        .iter()
        .map(|it| (0..it.sample.options.len()).map(|o| extract_mentions(it.sample, o)).collect())
        .collect();
    let mut segments = Vec::new();
    let mut option_ranges = Vec::with_capacity(items.len());
    let mut region_ids = Vec::new();
    let mut item_of_option = Vec::new();
    let mut options: Vec<&[TaggedWord]> = Vec::new();
    for (i, it) in items.iter().enumerate() {
        let start = segments.len();
        for (o, m) in mentions[i].iter().enumerate() {
            segments.push(Segment {
                first_row: base[i],
                rows: it.regions.len(),
                mentions: m,
            });
            region_ids.push(it.sample.regions.clone());
            item_of_option.push(i);
            options.push(&it.sample.options[o]);
        }
        option_ranges.push((start, segments.len()));
    }
    let ranges = segment_ranges(&segments);
    let raw = table.relevance(&mut sess.graph, &segments)?;
    let attention = sess.graph.segment_softmax(raw, &ranges)?;

    let co = sess.class_vectors(ClassKind::Object)?;
    let ca = sess.class_vectors(ClassKind::Attribute)?;
    let g = &mut sess.graph;
    let cot = g.transpose(co)?;
    let cat = g.transpose(ca)?;
    let so = g.matmul(table.fo, cot)?;
    let sa = g.matmul(table.fa, cat)?;
    let scores_all = g.concat_cols(&[so, sa])?;
    let mut row_of = Vec::new();
    let mut group_of = Vec::new();
    for (t, seg) in segments.iter().enumerate() {
        for r in 0..seg.rows {
            row_of.push(seg.first_row + r);
            group_of.push(t);
        }
    }
    let image_repr = g.weighted_row_sum(attention, scores_all, &row_of, &group_of, segments.len())?;

    let q = question_block(sess, items)?;
    let q_per_option = sess.graph.row_select(q, &item_of_option)?;
    let a = answer_block(sess, &options)?;
    let qa_repr = sess.graph.concat_cols(&[q_per_option, a])?;

    let w1 = sess.param("vqa.w1");
    let w2 = sess.param("vqa.w2");
    let w3 = sess.param("vqa.w3");
    let vis = sess.graph.matmul(image_repr, w1)?;
    let vis = sess.named_batch_norm(vis, "vqa.bn1")?;
    let lang = sess.graph.matmul(qa_repr, w2)?;
    let lang = sess.named_batch_norm(lang, "vqa.bn2")?;
    let beta = sess.graph.add(vis, lang)?;
    let h = sess.graph.relu(beta)?;
    let scores = sess.graph.matmul(h, w3)?;

    Ok(Forward {
        scores,
        option_ranges,
        attention_ranges: ranges,
        raw_attention: raw,
        attention,
        image_repr,
        qa_repr,
        region_ids,
    })
}

/// Margin loss over answer options:
/// `(1/(N·P)) Σ_j Σ_i max(0, η + S(A⁻_j(i)) − S(A⁺_j))`.
pub fn answer_hinge(
    graph: &mut Graph,
    scores: Var,
    option_ranges: &[(usize, usize)],
    correct: &[usize],
    margin: f64,
) -> Result<Var> {
    if option_ranges.len() != correct.len() || correct.is_empty() {
        return Err(Error::shape("answer_loss", "one correct index per sample"));
    }
    let p = correct.len() as f64;
    let mut neg = Vec::new();
    let mut pos = Vec::new();
    let mut weights = Vec::new();
    for (&(s, e), &c) in option_ranges.iter().zip(correct) {
        let n = e - s;
        if n < 2 || c >= n {
            return Err(Error::Contract(
                "each sample needs a correct option and at least one negative".into(),
            ));
        }
        for i in (s..e).filter(|&i| i != s + c) {
            neg.push(i);
            pos.push(s + c);
            weights.push(1.0 / (p * (n - 1) as f64));
        }
    }
    let sn = graph.gather(scores, &neg)?;
    let sp = graph.gather(scores, &pos)?;
    let d = graph.sub(sn, sp)?;
    let d = graph.add_scalar(d, margin)?;
    let h = graph.relu(d)?;
    graph.weighted_sum(h, weights)
}

/// Answer loss of a batch of samples.
pub fn answer_loss(sess: &mut Session, items: &[VqaItem], margin: f64) -> Result<Var> {
    let fwd = score_items(sess, items)?;
    let correct: Vec<usize> = items.iter().map(|it| it.sample.correct).collect();
    answer_hinge(&mut sess.graph, fwd.scores, &fwd.option_ranges, &correct, margin)
}

/// Index of the highest score; ties go to the lowest index.
pub fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

/// Outputs of a batched zero-shot pass.
pub struct ZeroShotForward {
    /// `T × 1` zero-shot scores.
    pub scores: Var,
    pub option_ranges: Vec<(usize, usize)>,
    pub attention_ranges: Vec<(usize, usize)>,
    pub attention: Var,
    /// Question-only and answer-only relevance per region.
    pub question_relevance: Var,
    pub answer_relevance: Var,
}

impl ZeroShotForward {
    pub fn option_scores(&self, graph: &Graph, item: usize) -> Vec<f64> {
        let (s, e) = self.option_ranges[item];
        graph.value(self.scores).data()[s..e].to_vec()
    }
}

fn build_segments<'m>(ms: &'m [Mentions], shape: &[(usize, usize)]) -> Vec<Segment<'m>> {
    ms.iter()
        .zip(shape)
        .map(|(m, &(first_row, rows))| Segment {
            first_row,
            rows,
            mentions: m,
        })
        .collect()
}

/// Zero-shot answer scores `S = Σ_R a(R) min(p_q(R), p_a(R))`, where
/// `p_q`/`p_a` are the relevance restricted to question/answer mentions and
/// `a` is the attention over the full mention set. Uses only the shared
/// representation; the VQA head is never touched.
pub fn zero_shot_items(sess: &mut Session, items: &[VqaItem]) -> Result<ZeroShotForward> {
    if items.is_empty() {
        return Err(Error::Contract("empty VQA batch".into()));
    }
    let (feats, base) = flatten_regions(items)?;
    let words = all_words(items);
    let table = region_table(sess, &feats, &words)?;

    let mut full = Vec::new();
    let mut qm = Vec::new();
    let mut am = Vec::new();
    let mut shape = Vec::new();
    let mut option_ranges = Vec::with_capacity(items.len());
    for (i, it) in items.iter().enumerate() {
        let start = shape.len();
        let q = question_mentions(it.sample);
        for o in 0..it.sample.options.len() {
            full.push(extract_mentions(it.sample, o));
            qm.push(q.clone());
            am.push(answer_mentions(it.sample, o));
            shape.push((base[i], it.regions.len()));
        }
        option_ranges.push((start, shape.len()));
    }
    let full_segs = build_segments(&full, &shape);
    let ranges = segment_ranges(&full_segs);
    let g = &mut sess.graph;
    let raw = table.relevance(g, &full_segs)?;
    let attention = g.segment_softmax(raw, &ranges)?;
    let pq = table.relevance(g, &build_segments(&qm, &shape))?;
    let pa = table.relevance(g, &build_segments(&am, &shape))?;
    let gated = g.minimum(pq, pa)?;
    let l = g.value(gated).len();
    let column = g.reshape(gated, &[l, 1])?;
    let mut group_of = Vec::with_capacity(l);
    for (t, &(s, e)) in ranges.iter().enumerate() {
        group_of.extend(std::iter::repeat(t).take(e - s));
    }
    let row_of: Vec<usize> = (0..l).collect();
    let scores = g.weighted_row_sum(attention, column, &row_of, &group_of, ranges.len())?;
    Ok(ZeroShotForward {
        scores,
        option_ranges,
        attention_ranges: ranges,
        attention,
        question_relevance: pq,
        answer_relevance: pa,
    })
}

/// Eval-mode predictions of the full VQA model for a list of items.
pub fn predict_batch(model: &mut Model, lex: &Lexicon, items: &[VqaItem]) -> Result<Vec<usize>> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let mut sess = Session::new(model, lex, Mode::Eval, false);
    let fwd = score_items(&mut sess, items)?;
    Ok((0..items.len())
        .map(|i| argmax_lowest(&fwd.option_scores(&sess.graph, i)))
        .collect())
}

/// Eval-mode zero-shot predictions.
pub fn predict_zero_shot_batch(
    model: &mut Model,
    lex: &Lexicon,
    items: &[VqaItem],
) -> Result<Vec<usize>> {
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let mut sess = Session::new(model, lex, Mode::Eval, false);
    let fwd = zero_shot_items(&mut sess, items)?;
    Ok((0..items.len())
        .map(|i| argmax_lowest(&fwd.option_scores(&sess.graph, i)))
        .collect())
}

/// Eval-mode score of one (question, image, option) triplet.
pub fn score_triplet(model: &mut Model, lex: &Lexicon, item: &VqaItem, option: usize) -> Result<f64> {
    let mut sess = Session::new(model, lex, Mode::Eval, false);
    let fwd = score_items(&mut sess, std::slice::from_ref(item))?;
    fwd.option_scores(&sess.graph, 0)
        .get(option)
        .copied()
        .ok_or_else(|| Error::Contract(format!("option {option} out of range")))
}

/// Eval-mode zero-shot score of one option.
pub fn zero_shot_score(model: &mut Model, lex: &Lexicon, item: &VqaItem, option: usize) -> Result<f64> {
    let mut sess = Session::new(model, lex, Mode::Eval, false);
    let fwd = zero_shot_items(&mut sess, std::slice::from_ref(item))?;
    fwd.option_scores(&sess.graph, 0)
        .get(option)
        .copied()
        .ok_or_else(|| Error::Contract(format!("option {option} out of range")))
}

/// Eval-mode prediction for one item.
pub fn predict(model: &mut Model, lex: &Lexicon, item: &VqaItem) -> Result<usize> {
    Ok(predict_batch(model, lex, std::slice::from_ref(item))?[0])
}

/// Attention of one mention set over a list of regions (eval mode).
pub fn attention_scores(
    model: &mut Model,
    lex: &Lexicon,
    regions: &[&[f64]],
    region_ids: &[usize],
    mentions: &Mentions,
) -> Result<AttentionMap> {
    if regions.is_empty() || regions.len() != region_ids.len() {
        return Err(Error::Contract("attention needs one id per region".into()));
    }
    let mut sess = Session::new(model, lex, Mode::Eval, false);
    let words: BTreeSet<usize> = mentions
        .nouns
        .iter()
        .chain(&mentions.adjectives)
        .copied()
        .collect();
    let table = region_table(&mut sess, regions, &words)?;
    let seg = [Segment {
        first_row: 0,
        rows: regions.len(),
        mentions,
    }];
    let raw = table.relevance(&mut sess.graph, &seg)?;
    let weights = sess.graph.softmax(raw)?;
    Ok(AttentionMap {
        region_ids: region_ids.to_vec(),
        raw: sess.graph.value(raw).data().to_vec(),
        weights: sess.graph.value(weights).data().to_vec(),
    })
}

/// `f(I) = Σ_R a(R) [s_o(R); s_a(R)]` for given attention weights (eval mode).
pub fn image_representation(
    model: &mut Model,
    lex: &Lexicon,
    regions: &[&[f64]],
    attention: &AttentionMap,
) -> Result<Vec<f64>> {
    if attention.weights.len() != regions.len() {
        return Err(Error::Contract("attention must cover every region".into()));
    }
    let (so, sa) = crate::recognition::region_scores(
        model,
        lex,
        &regions.iter().map(|r| r.to_vec()).collect::<Vec<_>>(),
    )?;
    let width = so[0].len() + sa[0].len();
    let mut out = vec![0.0; width];
    for (r, &w) in attention.weights.iter().enumerate() {
        for (k, v) in so[r].iter().chain(&sa[r]).enumerate() {
            out[k] += w * v;
        }
    }
    Ok(out)
}

/// `q(Q)`: per-bin mean word embeddings concatenated (`4 d_e`).
pub fn question_representation(model: &mut Model, lex: &Lexicon, qa: &QaSample) -> Result<Vec<f64>> {
    let mut sess = Session::new(model, lex, Mode::Eval, false);
    let d = sess.dims().embed;
    let mut out = vec![0.0; 4 * d];
    for bin in 1..=4u8 {
        let ids: Vec<usize> = qa.tokens.iter().filter(|t| t.bin == bin).map(|t| t.word).collect();
        if ids.is_empty() {
            continue;
        }
        let e = sess.embed_words(&ids)?;
        let block = (bin as usize - 1) * d;
        out[block..block + d].copy_from_slice(&mean_rows(sess.graph.value(e)));
    }
    Ok(out)
}

/// `a(A)`: mean embedding of the answer words.
pub fn answer_representation(model: &mut Model, lex: &Lexicon, option: &[usize]) -> Result<Vec<f64>> {
    if option.is_empty() {
        return Err(Error::Contract("empty answer option".into()));
    }
    let mut sess = Session::new(model, lex, Mode::Eval, false);
    let e = sess.embed_words(option)?;
    Ok(mean_rows(sess.graph.value(e)))
}

fn mean_rows(t: &Tensor) -> Vec<f64> {
    let (r, c) = t.dims2().expect("matrix");
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(t.row(i)) {
            *o += v / r as f64;
        }
    }
    out
}
