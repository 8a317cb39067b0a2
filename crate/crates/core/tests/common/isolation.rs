//! Which parameter groups each loss may reach.

use std::collections::BTreeMap;

use svlr_core::autodiff::Mode;
use svlr_core::gradsuite::Fixture;
use svlr_core::recognition;
use svlr_core::svlr::{ParamGroup, Session, ShareMode};
use svlr_core::trainer::{joint_step, Adam, StepBatches};

type Check = Result<(), String>;

/// Parameters whose gradient has a nonzero entry.
fn touched(grads: &BTreeMap<String, Vec<f64>>) -> Vec<String> {
    grads
        .iter()
        .filter(|(_, g)| g.iter().any(|&v| v != 0.0))
        .map(|(n, _)| n.clone())
        .collect()
}

fn grads_of(fx: &Fixture, loss: &str) -> Result<BTreeMap<String, Vec<f64>>, String> {
    let mut model = fx.model.clone();
    let mut sess = Session::new(&mut model, &fx.lex, Mode::Train, true);
    let l = match loss {
        "object" => recognition::object_loss(&mut sess, &fx.regions, 1.0),
        "attribute" => recognition::attribute_loss(&mut sess, &fx.regions),
        "recognition" => recognition::object_loss(&mut sess, &fx.regions, 1.0).and_then(|o| {
            let a = recognition::attribute_loss(&mut sess, &fx.regions)?;
            sess.graph.add(o, a)
        }),
        other => unreachable!("{other}"),
    }
    .map_err(|e| e.to_string())?;
    sess.graph.backward(l).map_err(|e| e.to_string())?;
    Ok(sess.param_grads())
}

fn forbid(names: &[String], group: ParamGroup, what: &str) -> Check {
    match names.iter().find(|n| ParamGroup::of(n) == group) {
        Some(n) => Err(format!("{what} reached {n}")),
        None => Ok(()),
    }
}

fn require(names: &[String], group: ParamGroup, what: &str) -> Check {
    if names.iter().any(|n| ParamGroup::of(n) == group) {
        Ok(())
    } else {
        Err(format!("{what} never reached {group:?}; the check would be vacuous"))
    }
}

pub fn multitask_recognition_leaves_word_net(instances: u64) -> Check {
    for seed in 0..instances {
        let fx = Fixture::new(seed, ShareMode::Multitask);
        let t = touched(&grads_of(&fx, "recognition")?);
        forbid(&t, ParamGroup::Word, "multitask recognition loss")?;
        require(&t, ParamGroup::ClassVectors, "multitask recognition loss")?;
        // control: the same loss under SVLR sharing does train g
        let fx = Fixture::new(seed, ShareMode::Svlr);
        require(&touched(&grads_of(&fx, "recognition")?), ParamGroup::Word, "svlr recognition loss")?;
    }
    Ok(())
}

pub fn object_loss_leaves_attribute_net(instances: u64) -> Check {
    for seed in 0..instances {
        let fx = Fixture::new(seed, super::share_for(seed));
        let t = touched(&grads_of(&fx, "object")?);
        forbid(&t, ParamGroup::RegionAttribute, "object loss")?;
        require(&t, ParamGroup::RegionObject, "object loss")?;
    }
    Ok(())
}

pub fn attribute_loss_leaves_object_net(instances: u64) -> Check {
    for seed in 0..instances {
        let fx = Fixture::new(seed, super::share_for(seed));
        let t = touched(&grads_of(&fx, "attribute")?);
        forbid(&t, ParamGroup::RegionObject, "attribute loss")?;
        require(&t, ParamGroup::RegionAttribute, "attribute loss")?;
    }
    Ok(())
}

/// A training step with `α_ans = 0` and no weight decay leaves the VQA
/// head bit-identical even when a question batch is supplied.
pub fn zero_answer_weight_freezes_head(instances: u64) -> Check {
    for seed in 0..instances {
        let fx = Fixture::new(seed, super::share_for(seed));
        let items = fx.items();
        let mut model = fx.model.clone();
        let batches = StepBatches {
            regions: Some(&fx.regions),
            questions: Some(&items),
        };
        let mut adam = Adam::new(0.9, 0.999, 1e-8);
        joint_step(&mut model, &fx.lex, [0.0, 1.0, 1.0], (1.0, 1.0), &batches, &mut adam, 1e-2, 0.0)
            .map_err(|e| e.to_string())?;
        for (name, t) in model.params.iter() {
            let before = fx.model.param(name);
            let moved = t.data().iter().zip(before.data()).any(|(a, b)| a.to_bits() != b.to_bits());
            match ParamGroup::of(name) {
                ParamGroup::VqaHead if moved => return Err(format!("{name} moved with α_ans = 0")),
                ParamGroup::RegionObject if !moved && name.ends_with(".w1") => {
                    return Err(format!("{name} did not move; the step was vacuous"))
                }
                _ => {}
            }
        }
    }
    Ok(())
}
