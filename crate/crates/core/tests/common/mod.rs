#![allow(dead_code)]

pub mod invariants;
pub mod isolation;
pub mod oracle;

use svlr_core::autodiff::Mode;
use svlr_core::gradsuite::Fixture;
use svlr_core::recognition;
use svlr_core::svlr::{Session, ShareMode};
use svlr_core::vqa::{self, extract_mentions};

pub const ORACLE_TOL: f64 = 1e-6;

/// Worst deviation between library and naive loop for one quantity,
/// relative to `max(1, |oracle|)`.
#[derive(Debug, Default, Clone)]
pub struct Deviation {
    pub name: &'static str,
    pub worst: f64,
    pub compared: usize,
}

impl Deviation {
    fn record(&mut self, got: f64, want: f64) {
        let err = (got - want).abs() / want.abs().max(1.0);
        self.worst = if err.is_nan() { f64::INFINITY } else { self.worst.max(err) };
        self.compared += 1;
    }
}

pub fn share_for(seed: u64) -> ShareMode {
    if seed % 2 == 0 {
        ShareMode::Svlr
    } else {
        ShareMode::Multitask
    }
}

pub fn object_loss_deviation(instances: u64) -> Deviation {
    let mut d = Deviation { name: "object_loss", ..Default::default() };
    for seed in 0..instances {
        let mut fx = Fixture::new(seed, share_for(seed));
        let want = oracle::object_loss(&fx.model, &fx.lex, &fx.regions, 1.0);
        let mut sess = Session::new(&mut fx.model, &fx.lex, Mode::Train, false);
        let l = recognition::object_loss(&mut sess, &fx.regions, 1.0).unwrap();
        d.record(sess.graph.value(l).item(), want);
    }
    d
}

pub fn attribute_loss_deviation(instances: u64) -> Deviation {
    let mut d = Deviation { name: "attribute_loss", ..Default::default() };
    for seed in 0..instances {
        let mut fx = Fixture::new(seed, share_for(seed));
        let want = oracle::attribute_loss(&fx.model, &fx.lex, &fx.regions);
        let mut sess = Session::new(&mut fx.model, &fx.lex, Mode::Train, false);
        let l = recognition::attribute_loss(&mut sess, &fx.regions).unwrap();
        d.record(sess.graph.value(l).item(), want);
    }
    d
}

pub fn answer_loss_deviation(instances: u64) -> Deviation {
    let mut d = Deviation { name: "answer_loss", ..Default::default() };
    for seed in 0..instances {
        let fx = Fixture::new(seed, share_for(seed));
        let batch: Vec<_> = fx.samples.iter().zip(fx.features.clone()).collect();
        let want = oracle::answer_loss(&fx.model, &fx.lex, &batch, 1.0);
        let mut model = fx.model.clone();
        let items = fx.items();
        let mut sess = Session::new(&mut model, &fx.lex, Mode::Train, false);
        let l = vqa::answer_loss(&mut sess, &items, 1.0).unwrap();
        d.record(sess.graph.value(l).item(), want);
    }
    d
}

pub fn attention_deviation(instances: u64) -> Deviation {
    let mut d = Deviation { name: "attention_scores", ..Default::default() };
    for seed in 0..instances {
        let fx = Fixture::new(seed, share_for(seed));
        let mut model = fx.model.clone();
        for (item, sample) in fx.items().iter().zip(&fx.samples) {
            let feats = &fx.features[sample.id];
            for o in 0..sample.options.len() {
                let m = extract_mentions(sample, o);
                let got = vqa::attention_scores(&mut model, &fx.lex, &item.regions, &sample.regions, &m).unwrap();
                let (n, j) = oracle::mentions(sample, Some(o), true);
                let want = oracle::attention(&fx.model, &fx.lex, feats, &n, &j);
                for (g, w) in got.weights.iter().zip(&want) {
                    d.record(*g, *w);
                }
            }
        }
    }
    d
}

pub fn image_representation_deviation(instances: u64) -> Deviation {
    let mut d = Deviation { name: "image_representation", ..Default::default() };
    for seed in 0..instances {
        let fx = Fixture::new(seed, share_for(seed));
        let mut model = fx.model.clone();
        for (item, sample) in fx.items().iter().zip(&fx.samples) {
            let feats = &fx.features[sample.id];
            let m = extract_mentions(sample, sample.correct);
            let att = vqa::attention_scores(&mut model, &fx.lex, &item.regions, &sample.regions, &m).unwrap();
            let got = vqa::image_representation(&mut model, &fx.lex, &item.regions, &att).unwrap();
            let want = oracle::image_representation(&fx.model, &fx.lex, feats, &att.weights);
            assert_eq!(got.len(), want.len());
            for (g, w) in got.iter().zip(&want) {
                d.record(*g, *w);
            }
        }
    }
    d
}

pub fn zero_shot_deviation(instances: u64) -> Deviation {
    let mut d = Deviation { name: "zero_shot_score", ..Default::default() };
    for seed in 0..instances {
        let fx = Fixture::new(seed, share_for(seed));
        let mut model = fx.model.clone();
        for (item, sample) in fx.items().iter().zip(&fx.samples) {
            for o in 0..sample.options.len() {
                let got = vqa::zero_shot_score(&mut model, &fx.lex, item, o).unwrap();
                let want = oracle::zero_shot_score(&fx.model, &fx.lex, sample, &fx.features[sample.id], o);
                d.record(got, want);
            }
        }
    }
    d
}

pub fn all_deviations(instances: u64) -> Vec<Deviation> {
    vec![
        object_loss_deviation(instances),
        attribute_loss_deviation(instances),
        answer_loss_deviation(instances),
        attention_deviation(instances),
        image_representation_deviation(instances),
        zero_shot_deviation(instances),
    ]
}
