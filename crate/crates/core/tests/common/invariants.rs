//! Property checks shared by the invariant tests and the acceptance run.
//! Each returns a description of the first violation.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use svlr_core::autodiff::{Graph, Mode, Tensor};
use svlr_core::evalkit::{spearman, Heatmap14};
use svlr_core::gradsuite::Fixture;
use svlr_core::recognition::{self, hypernym_closure, object_hinge, Ontology};
use svlr_core::svlr::Session;
use svlr_core::synthworld::{generate, WorldSpec};
use svlr_core::trainer::{lr_at, run_arm, Arm, RunConfig};
use svlr_core::vqa;

use super::share_for;

type Check = Result<(), String>;

fn segments_normalized(values: &[f64], ranges: &[(usize, usize)], what: &str) -> Check {
    for &(s, e) in ranges {
        let seg = &values[s..e];
        if seg.iter().any(|&w| !(w >= 0.0)) {
            return Err(format!("{what}: negative or NaN weight in {seg:?}"));
        }
        let total: f64 = seg.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(format!("{what}: segment sums to {total}"));
        }
    }
    Ok(())
}

pub fn attention_normalization(instances: u64) -> Check {
    for seed in 0..instances {
        let fx = Fixture::new(seed, share_for(seed));
        let items = fx.items();
        for mode in [Mode::Train, Mode::Eval] {
            let mut model = fx.model.clone();
            let mut sess = Session::new(&mut model, &fx.lex, mode, false);
            let fwd = vqa::score_items(&mut sess, &items).map_err(|e| e.to_string())?;
            let att = sess.graph.value(fwd.attention).data();
            segments_normalized(att, &fwd.attention_ranges, "score_items")?;
            let zs = vqa::zero_shot_items(&mut sess, &items).map_err(|e| e.to_string())?;
            let att = sess.graph.value(zs.attention).data();
            segments_normalized(att, &zs.attention_ranges, "zero_shot_items")?;
        }
    }
    Ok(())
}

pub fn loss_nonnegativity(instances: u64) -> Check {
    for seed in 0..instances {
        let fx = Fixture::new(seed, share_for(seed));
        let items = fx.items();
        let mut model = fx.model.clone();
        let mut sess = Session::new(&mut model, &fx.lex, Mode::Train, false);
        let o = recognition::object_loss(&mut sess, &fx.regions, 1.0).map_err(|e| e.to_string())?;
        let a = recognition::attribute_loss(&mut sess, &fx.regions).map_err(|e| e.to_string())?;
        let q = vqa::answer_loss(&mut sess, &items, 1.0).map_err(|e| e.to_string())?;
        for (name, v) in [("object", o), ("attribute", a), ("answer", q)] {
            let x = sess.graph.value(v).item();
            if !(x >= 0.0) {
                return Err(format!("{name} loss {x} at seed {seed}"));
            }
        }
    }
    // zero exactly when every margin constraint holds
    let labels = vec![BTreeSet::from([0]), BTreeSet::from([1, 2])];
    let hinge = |scores: Vec<f64>| {
        let mut g = Graph::new();
        let s = g.constant(Tensor::matrix(2, 3, scores).unwrap());
        let l = object_hinge(&mut g, s, &labels, 1.0).unwrap();
        g.value(l).item()
    };
    let satisfied = hinge(vec![2.0, 0.9, 1.0, -1.0, 3.0, 2.0]);
    let violated = hinge(vec![2.0, 1.5, 1.0, -1.0, 3.0, 2.0]);
    if satisfied != 0.0 || !(violated > 0.0) {
        return Err(format!("hinge zero set: satisfied {satisfied}, violated {violated}"));
    }
    Ok(())
}

/// Ancestors by repeated relaxation over the edge list.
fn naive_closure(labels: &[usize], edges: &[(usize, usize)]) -> BTreeSet<usize> {
    let mut set: BTreeSet<usize> = labels.iter().copied().collect();
    loop {
        let before = set.len();
        for &(c, p) in edges {
            if set.contains(&c) {
                set.insert(p);
            }
        }
        if set.len() == before {
            return set;
        }
    }
}

pub fn hypernym_reachability(instances: u64) -> Check {
    for seed in 0..instances {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(1..12);
        let objects: Vec<String> = (0..n).map(|i| format!("o{i}")).collect();
        // parents always have a lower index, so the graph is acyclic
        let mut edges = Vec::new();
        for c in 1..n {
            for p in 0..c {
                if rng.random_bool(0.25) {
                    edges.push((c, p));
                }
            }
        }
        let ont = Ontology::new(objects, vec!["a".into()], &edges).map_err(|e| e.to_string())?;
        let labels: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..n)).collect();
        let got = hypernym_closure(&labels, &ont).map_err(|e| e.to_string())?;
        let want = naive_closure(&labels, &edges);
        if got != want {
            return Err(format!("seed {seed}: closure {got:?}, expected {want:?}"));
        }
    }
    Ok(())
}

pub fn lr_schedule() -> Check {
    let cfg = RunConfig::full_scale(Arm::JointSvlr);
    for (step, want) in [(0, 1e-3), (24000, 5e-4), (48000, 2.5e-4)] {
        let got = lr_at(step, cfg.lr, cfg.lr_decay, cfg.interval());
        if (got - want).abs() > 1e-18 {
            return Err(format!("lr at {step} is {got}, expected {want}"));
        }
    }
    Ok(())
}

pub fn spearman_properties(instances: u64) -> Check {
    let ramp = Heatmap14::from_cells((1..=196).map(f64::from).collect()).unwrap();
    let rev = Heatmap14::from_cells((1..=196).rev().map(f64::from).collect()).unwrap();
    let self_corr = spearman(&ramp, &ramp).map_err(|e| e.to_string())?;
    let anti = spearman(&ramp, &rev).map_err(|e| e.to_string())?;
    if (self_corr - 1.0).abs() > 1e-12 || (anti + 1.0).abs() > 1e-12 {
        return Err(format!("extremes: self {self_corr}, reversed {anti}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..instances {
        let mut draw = || {
            // coarse values force ties
            Heatmap14::from_cells((0..196).map(|_| rng.random_range(0..6) as f64 + 0.5).collect()).unwrap()
        };
        let (a, b) = (draw(), draw());
        let ab = spearman(&a, &b).map_err(|e| e.to_string())?;
        let ba = spearman(&b, &a).map_err(|e| e.to_string())?;
        if ab != ba || !(-1.0..=1.0).contains(&ab) {
            return Err(format!("asymmetric or out of range: {ab} vs {ba}"));
        }
    }
    Ok(())
}

pub fn determinism() -> Check {
    let spec = WorldSpec::default();
    let a = generate(&spec).map_err(|e| e.to_string())?;
    let b = generate(&spec).map_err(|e| e.to_string())?;
    if a != b {
        return Err("corpus generation is not reproducible".into());
    }
    let mut cfg = RunConfig::for_arm(Arm::JointSvlr);
    cfg.steps = 20;
    cfg.eval_every = 10;
    let r1 = run_arm(&cfg, &a, 5).map_err(|e| e.to_string())?;
    let r2 = run_arm(&cfg, &a, 5).map_err(|e| e.to_string())?;
    if r1.metrics != r2.metrics || r1.model != r2.model {
        return Err("training reruns differ".into());
    }
    let bits = |m: &svlr_core::svlr::Model| -> Vec<u64> {
        m.params.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
    };
    if bits(&r1.model) != bits(&r2.model) {
        return Err("parameters are not bit-identical".into());
    }
    Ok(())
}
