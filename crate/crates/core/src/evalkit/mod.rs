//! Evaluation: accuracies, the frequency-binned transfer grid, attention
//! heatmap correlation and the nearest-neighbor probe.

mod attention;
mod probe;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};

use crate::autodiff::Mode;
use crate::error::{Error, Result};
use crate::recognition::region_scores;
use crate::svlr::{Lexicon, Model, Session};
use crate::synthworld::{count_audit, Corpus, RegionRecord, Split};
use crate::vqa::{predict_batch, predict_zero_shot_batch, score_items, AttentionMap, QaSample};

pub use attention::{
    center_baseline, reference_heatmap, spearman, threshold_sweep, to_heatmap14, Heatmap14,
    SweepRow, CENTER_SIGMA,
};
pub use probe::{nn_probe, Neighbor, ProbeResult};

/// Samples scored per forward pass during evaluation.
const EVAL_CHUNK: usize = 64;

/// Which answer scorer to evaluate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scorer {
    /// Trained VQA head.
    Full,
    /// Localization-only rule that needs no VQA training.
    ZeroShot,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VqaAccuracy {
    pub correct: usize,
    pub total: usize,
    pub per_template: BTreeMap<String, (usize, usize)>,
}

impl VqaAccuracy {
    pub fn overall(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

/// Accuracy of given predictions, overall and per question template.
pub fn accuracy_by_template(samples: &[&QaSample], predictions: &[usize]) -> Result<VqaAccuracy> {
    if samples.len() != predictions.len() {
        return Err(Error::Contract("one prediction per sample".into()));
    }
    let mut acc = VqaAccuracy::default();
    for (s, &p) in samples.iter().zip(predictions) {
        let hit = usize::from(p == s.correct);
        let cell = acc.per_template.entry(s.template.clone()).or_default();
        cell.0 += hit;
        cell.1 += 1;
        acc.correct += hit;
        acc.total += 1;
    }
    Ok(acc)
}

/// Eval-mode predictions for `samples`.
pub fn vqa_predictions(
    model: &mut Model,
    lex: &Lexicon,
    corpus: &Corpus,
    samples: &[&QaSample],
    scorer: Scorer,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_CHUNK) {
        let items = corpus.vqa_items(chunk)?;
        out.extend(match scorer {
            Scorer::Full => predict_batch(model, lex, &items)?,
            Scorer::ZeroShot => predict_zero_shot_batch(model, lex, &items)?,
        });
    }
    Ok(out)
}

pub fn vqa_accuracy(
    model: &mut Model,
    lex: &Lexicon,
    corpus: &Corpus,
    split: Split,
    scorer: Scorer,
) -> Result<VqaAccuracy> {
    let samples = corpus.qa_split(split);
    let preds = vqa_predictions(model, lex, corpus, &samples, scorer)?;
    accuracy_by_template(&samples, &preds)
}

/// Model attention for the correct option of one sample, with both heatmaps.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleAttention {
    pub sample: usize,
    pub attention: AttentionMap,
    pub model: Heatmap14,
    pub reference: Heatmap14,
}

/// Eval-mode attention maps for the samples that carry a relevant region.
pub fn attention_maps(
    model: &mut Model,
    lex: &Lexicon,
    corpus: &Corpus,
    samples: &[&QaSample],
) -> Result<Vec<SampleAttention>> {
    let index = corpus.region_index();
    let mask = |id: &usize| {
        index
            .get(id)
            .map(|&i| corpus.qa_regions[i].mask)
            .ok_or_else(|| Error::Contract(format!("unknown region {id}")))
    };
    let with_truth: Vec<&QaSample> = samples.iter().copied().filter(|s| s.relevant.is_some()).collect();
    let mut out = Vec::with_capacity(with_truth.len());
    for chunk in with_truth.chunks(EVAL_CHUNK) {
        let items = corpus.vqa_items(chunk)?;
        let mut sess = Session::new(model, lex, Mode::Eval, false);
        let fwd = score_items(&mut sess, &items)?;
        for (i, s) in chunk.iter().enumerate() {
            let attention = fwd.attention_map(&sess.graph, fwd.option_ranges[i].0 + s.correct);
            let masks = attention.region_ids.iter().map(mask).collect::<Result<Vec<_>>>()?;
            out.push(SampleAttention {
                sample: s.id,
                model: to_heatmap14(&attention, &masks)?,
                reference: reference_heatmap(mask(&s.relevant.unwrap())?)?,
                attention,
            });
        }
    }
    Ok(out)
}

/// Recognition accuracies over a set of labeled regions.
///
/// * raw top-1: the best object outside the label's own hypernyms is the label;
/// * closed top-1: the best object lies in the hypernym-closed label set;
/// * attribute accuracy: the best attribute is one of the region's attributes.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RecognitionAccuracy {
    pub regions: usize,
    pub raw_top1: f64,
    pub closed_top1: f64,
    pub atr_acc: f64,
    /// Object id to (raw hits, regions).
    pub per_class: BTreeMap<usize, (usize, usize)>,
}

impl RecognitionAccuracy {
    pub fn class_accuracy(&self) -> BTreeMap<usize, f64> {
        self.per_class
            .iter()
            .map(|(&c, &(h, n))| (c, h as f64 / n as f64))
            .collect()
    }
}

fn argmax_where(scores: &[f64], keep: impl Fn(usize) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if keep(i) && best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

pub fn recognition_accuracy(
    model: &mut Model,
    lex: &Lexicon,
    regions: &[&RegionRecord],
) -> Result<RecognitionAccuracy> {
    let ont = &lex.ontology;
    let mut acc = RecognitionAccuracy {
        regions: regions.len(),
        ..Default::default()
    };
    let (mut raw, mut closed, mut atr) = (0usize, 0usize, 0usize);
    for chunk in regions.chunks(EVAL_CHUNK * 4) {
        let feats: Vec<Vec<f64>> = chunk.iter().map(|r| r.features.clone()).collect();
        let (so, sa) = region_scores(model, lex, &feats)?;
        for (r, (o, a)) in chunk.iter().zip(so.iter().zip(&sa)) {
            let ancestors = ont.ancestors(r.object);
            let hit_raw = argmax_where(o, |k| !ancestors.contains(&k)) == Some(r.object);
            let best = argmax_where(o, |_| true);
            let hit_closed = best.is_some_and(|b| b == r.object || ancestors.contains(&b));
            let hit_atr = argmax_where(a, |_| true).is_some_and(|b| r.attributes.contains(&b));
            raw += usize::from(hit_raw);
            closed += usize::from(hit_closed);
            atr += usize::from(hit_atr);
            let cell = acc.per_class.entry(r.object).or_default();
            cell.0 += usize::from(hit_raw);
            cell.1 += 1;
        }
    }
    if !regions.is_empty() {
        let n = regions.len() as f64;
        acc.raw_top1 = raw as f64 / n;
        acc.closed_top1 = closed as f64 / n;
        acc.atr_acc = atr as f64 / n;
    }
    Ok(acc)
}

/// Bin of `value` given ascending lower edges: the number of edges ≤ value.
pub fn bin_of(value: usize, edges: &[usize]) -> usize {
    edges.iter().filter(|&&e| e <= value).count()
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GridCell {
    pub classes: Vec<usize>,
    pub baseline: f64,
    pub delta: f64,
}

/// Per-class recognition accuracy change binned by training frequency:
/// rows by frequency in QA training, columns by frequency in recognition
/// training.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferGrid {
    pub qa_edges: Vec<usize>,
    pub recognition_edges: Vec<usize>,
    /// `cells[row][col]`.
    pub cells: Vec<Vec<GridCell>>,
    /// Classes without test regions.
    pub excluded: Vec<usize>,
}

impl TransferGrid {
    /// Aggregates per-class baseline and treated accuracies. Classes missing
    /// from either map are excluded.
    pub fn from_class_accuracy(
        baseline: &BTreeMap<usize, f64>,
        treated: &BTreeMap<usize, f64>,
        frequencies: &BTreeMap<usize, (usize, usize)>,
        qa_edges: &[usize],
        recognition_edges: &[usize],
    ) -> TransferGrid {
        let rows = qa_edges.len() + 1;
        let cols = recognition_edges.len() + 1;
        let mut cells = vec![vec![GridCell::default(); cols]; rows];
        let mut excluded = Vec::new();
        for (&class, &(rec, qa)) in frequencies {
            let (Some(b), Some(t)) = (baseline.get(&class), treated.get(&class)) else {
                excluded.push(class);
                continue;
            };
            let cell = &mut cells[bin_of(qa, qa_edges)][bin_of(rec, recognition_edges)];
            cell.classes.push(class);
            cell.baseline += b;
            cell.delta += t - b;
        }
        for cell in cells.iter_mut().flatten() {
            if !cell.classes.is_empty() {
                let n = cell.classes.len() as f64;
                cell.baseline /= n;
                cell.delta /= n;
            }
        }
        TransferGrid {
            qa_edges: qa_edges.to_vec(),
            recognition_edges: recognition_edges.to_vec(),
            cells,
            excluded,
        }
    }

    pub fn cell_for(&self, recognition_count: usize, qa_count: usize) -> &GridCell {
        &self.cells[bin_of(qa_count, &self.qa_edges)][bin_of(recognition_count, &self.recognition_edges)]
    }

    pub fn evaluated(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.classes.len()).sum()
    }
}

/// Training frequencies `(recognition, qa)` of every object, zero when absent.
pub fn class_frequencies(corpus: &Corpus) -> BTreeMap<usize, (usize, usize)> {
    let audit = count_audit(corpus);
    (0..corpus.ontology.num_objects())
        .map(|o| {
            let f = audit.get(&o);
            (o, (f.map_or(0, |f| f.recognition), f.map_or(0, |f| f.qa)))
        })
        .collect()
}

/// Transfer grid of `treated` against `baseline` on the recognition test split.
pub fn transfer_grid(
    baseline: &mut Model,
    treated: &mut Model,
    lex: &Lexicon,
    corpus: &Corpus,
    qa_edges: &[usize],
    recognition_edges: &[usize],
) -> Result<TransferGrid> {
    if baseline.dims.objects != treated.dims.objects
        || baseline.dims.attributes != treated.dims.attributes
    {
        return Err(Error::Contract("checkpoints were trained on different ontologies".into()));
    }
    lex.check_model(baseline)?;
    lex.check_model(treated)?;
    let test = corpus.recognition_split(Split::Test);
    let b = recognition_accuracy(baseline, lex, &test)?.class_accuracy();
    let t = recognition_accuracy(treated, lex, &test)?.class_accuracy();
    Ok(TransferGrid::from_class_accuracy(
        &b,
        &t,
        &class_frequencies(corpus),
        qa_edges,
        recognition_edges,
    ))
}

/// Mean of per-seed class accuracies; classes must agree across seeds.
pub fn mean_class_accuracy(runs: &[BTreeMap<usize, f64>]) -> BTreeMap<usize, f64> {
    let keys: BTreeSet<usize> = runs.iter().flat_map(|r| r.keys().copied()).collect();
    keys.into_iter()
        .filter_map(|k| {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r.get(&k).copied()).collect();
            (vals.len() == runs.len()).then(|| (k, vals.iter().sum::<f64>() / vals.len() as f64))
        })
        .collect()
}
