use svlr_core::autodiff::{Graph, Mode, Tensor};
use svlr_core::gradsuite::Fixture;
use svlr_core::recognition;
use svlr_core::svlr::{Session, ShareMode};
use svlr_core::vqa::{self, extract_mentions, Mentions, Pos, TaggedWord, VqaItem};
use svlr_core::Error;

fn fixture(seed: u64) -> Fixture {
    Fixture::new(seed, ShareMode::Svlr)
}

#[test]
fn empty_mentions_attend_uniformly_and_one_region_gets_everything() {
    let fx = fixture(1);
    let mut model = fx.model.clone();
    let regions: Vec<&[f64]> = fx.features[0].iter().map(Vec::as_slice).collect();
    let ids: Vec<usize> = (0..regions.len()).collect();
    let a = vqa::attention_scores(&mut model, &fx.lex, &regions, &ids, &Mentions::default()).unwrap();
    for w in &a.weights {
        assert!((w - 1.0 / regions.len() as f64).abs() < 1e-15);
    }
    let m = extract_mentions(&fx.samples[0], 0);
    let one = vqa::attention_scores(&mut model, &fx.lex, &regions[..1], &ids[..1], &m).unwrap();
    assert_eq!(one.weights, vec![1.0]);
}

#[test]
fn image_representation_of_single_and_equal_attention() {
    let fx = fixture(2);
    let mut model = fx.model.clone();
    let regions: Vec<&[f64]> = fx.features[0].iter().take(2).map(Vec::as_slice).collect();
    let feats: Vec<Vec<f64>> = regions.iter().map(|r| r.to_vec()).collect();
    let (so, sa) = recognition::region_scores(&mut model, &fx.lex, &feats).unwrap();
    let full = |r: usize| so[r].iter().chain(&sa[r]).copied().collect::<Vec<f64>>();
    let att = |w: Vec<f64>| vqa::AttentionMap {
        region_ids: vec![0, 1],
        raw: vec![0.0; 2],
        weights: w,
    };
    let one = vqa::image_representation(&mut model, &fx.lex, &regions, &att(vec![1.0, 0.0])).unwrap();
    assert_eq!(one, full(0));
    let half = vqa::image_representation(&mut model, &fx.lex, &regions, &att(vec![0.5, 0.5])).unwrap();
    for (k, v) in half.iter().enumerate() {
        assert!((v - 0.5 * (full(0)[k] + full(1)[k])).abs() < 1e-12);
    }
}

#[test]
fn question_bins_average_and_ignore_order() {
    let fx = fixture(3);
    let mut model = fx.model.clone();
    let d = model.dims.embed;
    let mut qa = fx.samples[0].clone();
    for t in &mut qa.tokens {
        t.bin = 1;
    }
    let q = vqa::question_representation(&mut model, &fx.lex, &qa).unwrap();
    assert!(q[d..].iter().all(|&v| v == 0.0));
    let ids: Vec<usize> = qa.tokens.iter().map(|t| t.word).collect();
    let each: Vec<Vec<f64>> = ids
        .iter()
        .map(|&w| vqa::answer_representation(&mut model, &fx.lex, &[w]).unwrap())
        .collect();
    for k in 0..d {
        let mean = each.iter().map(|e| e[k]).sum::<f64>() / each.len() as f64;
        assert!((q[k] - mean).abs() < 1e-12);
    }
    qa.tokens.reverse();
    let r = vqa::question_representation(&mut model, &fx.lex, &qa).unwrap();
    for (a, b) in q.iter().zip(&r) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn answer_representation_mean_rules() {
    let fx = fixture(4);
    let mut model = fx.model.clone();
    let w = fx.lex.vocab.id("attr1").unwrap();
    let one = vqa::answer_representation(&mut model, &fx.lex, &[w]).unwrap();
    let two = vqa::answer_representation(&mut model, &fx.lex, &[w, w]).unwrap();
    for (a, b) in one.iter().zip(&two) {
        assert!((a - b).abs() < 1e-15);
    }
    assert!(matches!(
        vqa::answer_representation(&mut model, &fx.lex, &[]),
        Err(Error::Contract(_))
    ));
}

#[test]
fn zero_w3_scores_everything_zero() {
    let mut fx = fixture(5);
    let n = fx.model.param("vqa.w3").len();
    *fx.model.params.get_mut("vqa.w3").unwrap() = Tensor::zeros(&[n, 1]);
    let items = fx.items();
    for o in 0..items[0].sample.options.len() {
        assert_eq!(vqa::score_triplet(&mut fx.model.clone(), &fx.lex, &items[0], o).unwrap(), 0.0);
    }
}

#[test]
fn duplicated_options_tie_to_the_lowest_index() {
    let mut fx = fixture(6);
    let opt = fx.samples[0].options[0].clone();
    fx.samples[0].options = vec![opt.clone(), opt];
    fx.samples[0].correct = 1;
    let items = fx.items();
    let s0 = vqa::score_triplet(&mut fx.model.clone(), &fx.lex, &items[0], 0).unwrap();
    let s1 = vqa::score_triplet(&mut fx.model.clone(), &fx.lex, &items[0], 1).unwrap();
    assert_eq!(s0, s1);
    assert_eq!(vqa::predict(&mut fx.model.clone(), &fx.lex, &items[0]).unwrap(), 0);
    fx.samples[0].options.truncate(1);
    fx.samples[0].correct = 0;
    let items = fx.items();
    assert_eq!(vqa::predict(&mut fx.model.clone(), &fx.lex, &items[0]).unwrap(), 0);
}

#[test]
fn eval_scores_are_deterministic_and_batch_independent() {
    let fx = fixture(7);
    let items = fx.items();
    let batch = vqa::predict_batch(&mut fx.model.clone(), &fx.lex, &items).unwrap();
    for (i, item) in items.iter().enumerate() {
        assert_eq!(vqa::predict(&mut fx.model.clone(), &fx.lex, item).unwrap(), batch[i]);
        let a = vqa::score_triplet(&mut fx.model.clone(), &fx.lex, item, 0).unwrap();
        let b = vqa::score_triplet(&mut fx.model.clone(), &fx.lex, item, 0).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }
}

#[test]
fn hinge_at_margin_and_satisfied_margins() {
    let mut g = Graph::new();
    let s = g.constant(Tensor::matrix(2, 1, vec![0.0, 0.0]).unwrap());
    let l = vqa::answer_hinge(&mut g, s, &[(0, 2)], &[0], 1.0).unwrap();
    assert_eq!(g.value(l).item(), 1.0);
    let s = g.constant(Tensor::matrix(3, 1, vec![0.5, 2.0, 1.0]).unwrap());
    let l = vqa::answer_hinge(&mut g, s, &[(0, 3)], &[1], 1.0).unwrap();
    assert_eq!(g.value(l).item(), 0.0);
    let s = g.constant(Tensor::matrix(1, 1, vec![0.0]).unwrap());
    assert!(vqa::answer_hinge(&mut g, s, &[(0, 1)], &[0], 1.0).is_err());
}

#[test]
fn attention_depends_on_the_candidate_answer() {
    let fx = fixture(8);
    let mut model = fx.model.clone();
    let sample = &fx.samples[0];
    let regions: Vec<&[f64]> = fx.features[0].iter().map(Vec::as_slice).collect();
    let mut m = extract_mentions(sample, 0);
    let before = vqa::attention_scores(&mut model, &fx.lex, &regions, &sample.regions, &m).unwrap();
    let extra = fx
        .lex
        .object_words()
        .iter()
        .copied()
        .find(|w| !m.nouns.contains(w))
        .unwrap();
    m.nouns = vec![extra];
    let after = vqa::attention_scores(&mut model, &fx.lex, &regions, &sample.regions, &m).unwrap();
    assert_ne!(before.weights, after.weights);
}

#[test]
fn answer_loss_reaches_the_shared_networks() {
    let fx = fixture(9);
    let items = fx.items();
    let mut model = fx.model.clone();
    let mut sess = Session::new(&mut model, &fx.lex, Mode::Train, true);
    let l = vqa::answer_loss(&mut sess, &items, 1.0).unwrap();
    sess.graph.backward(l).unwrap();
    let grads = sess.param_grads();
    for name in ["g.w1", "fo.w1", "fa.w1", "vqa.w1", "vqa.w2", "vqa.w3"] {
        assert!(grads[name].iter().any(|&v| v != 0.0), "{name}");
    }
}

#[test]
fn zero_shot_ignores_the_vqa_head_and_gates_by_min() {
    let fx = fixture(10);
    let items = fx.items();
    let base: Vec<f64> = (0..items[0].sample.options.len())
        .map(|o| vqa::zero_shot_score(&mut fx.model.clone(), &fx.lex, &items[0], o).unwrap())
        .collect();
    let mut perturbed = fx.model.clone();
    for (name, t) in perturbed.params.iter_mut() {
        if name.starts_with("vqa.") {
            t.data_mut().iter_mut().for_each(|v| *v = -*v + 0.3);
        }
    }
    for (o, b) in base.iter().enumerate() {
        assert_eq!(vqa::zero_shot_score(&mut perturbed, &fx.lex, &items[0], o).unwrap(), *b);
    }

    // an answer repeating the question's mentions has p_a = p_q, so S = Σ a·p_q
    let mut sample = fx.samples[0].clone();
    let mentioned: Vec<TaggedWord> = sample
        .tokens
        .iter()
        .filter(|t| t.pos != Pos::Other)
        .map(|t| TaggedWord { word: t.word, pos: t.pos })
        .collect();
    sample.options = vec![mentioned.clone(), mentioned];
    let item = VqaItem {
        sample: &sample,
        regions: fx.features[0].iter().map(Vec::as_slice).collect(),
    };
    let mut model = fx.model.clone();
    let m = extract_mentions(&sample, 0);
    let att = vqa::attention_scores(&mut model, &fx.lex, &item.regions, &sample.regions, &m).unwrap();
    let expected: f64 = att.weights.iter().zip(&att.raw).map(|(a, p)| a * p).sum();
    let got = vqa::zero_shot_score(&mut model, &fx.lex, &item, 0).unwrap();
    assert!((got - expected).abs() < 1e-12);
}
