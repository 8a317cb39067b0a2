//! Joint optimization of the answer, object and attribute losses, the
//! experimental arms, and run artifacts (metric log plus checkpoint).

mod adam;

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Mode;
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::evalkit::{recognition_accuracy, vqa_accuracy, Scorer};
use crate::recognition::{attribute_loss, object_loss, RegionBatch};
use crate::svlr::{save_checkpoint, Checkpoint, Lexicon, Model, ModelDims, Session, ShareMode};
use crate::synthworld::{Corpus, Split};
use crate::vqa::{answer_loss, QaSample, VqaItem};

pub use adam::Adam;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Arm {
    VqaOnly,
    GenomeOnly,
    JointMultitask,
    JointSvlr,
    ZeroShot,
}

impl Arm {
    pub const ALL: [Arm; 5] = [
        Arm::VqaOnly,
        Arm::GenomeOnly,
        Arm::JointMultitask,
        Arm::JointSvlr,
        Arm::ZeroShot,
    ];

    pub fn share(self) -> ShareMode {
        match self {
            Arm::JointMultitask => ShareMode::Multitask,
            _ => ShareMode::Svlr,
        }
    }

    /// Default `(α_ans, α_obj, α_atr)` when VQA is the target task.
    pub fn alphas(self) -> [f64; 3] {
        match self {
            Arm::VqaOnly => [1.0, 0.0, 0.0],
            Arm::GenomeOnly | Arm::ZeroShot => [0.0, 1.0, 1.0],
            Arm::JointMultitask | Arm::JointSvlr => [1.0, 0.1, 0.1],
        }
    }

    /// Arms without answer supervision are scored by the zero-shot rule.
    pub fn scorer(self) -> Scorer {
        match self {
            Arm::GenomeOnly | Arm::ZeroShot => Scorer::ZeroShot,
            _ => Scorer::Full,
        }
    }
}

impl fmt::Display for Arm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arm::VqaOnly => "vqa_only",
            Arm::GenomeOnly => "genome_only",
            Arm::JointMultitask => "joint_multitask",
            Arm::JointSvlr => "joint_svlr",
            Arm::ZeroShot => "zero_shot",
        })
    }
}

impl FromStr for Arm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Arm::ALL
            .into_iter()
            .find(|a| a.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown arm `{s}`")))
    }
}

/// Loss weights used when recognition is the target task.
pub const RECOGNITION_TARGET_ALPHAS: [f64; 3] = [0.1, 1.0, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub arm: Arm,
    pub alpha_ans: f64,
    pub alpha_obj: f64,
    pub alpha_atr: f64,
    pub eta_ans: f64,
    pub eta_obj: f64,
    /// Regions per recognition batch (`M`).
    pub region_batch: usize,
    /// Questions per QA batch (`P`).
    pub question_batch: usize,
    pub lr: f64,
    pub lr_decay: f64,
    /// Steps per decay; `None` means a quarter of the total.
    pub decay_interval: Option<usize>,
    pub weight_decay: f64,
    pub steps: usize,
    /// Recognition-only steps run before the joint phase.
    pub pretrain_steps: usize,
    pub eval_every: usize,
    pub seeds: Vec<u64>,
    pub hidden: usize,
    pub embed: usize,
    pub bimodal: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl RunConfig {
    /// Toy-scale defaults for an arm.
    pub fn for_arm(arm: Arm) -> Self {
        let [a, o, t] = arm.alphas();
        RunConfig {
            arm,
            alpha_ans: a,
            alpha_obj: o,
            alpha_atr: t,
            eta_ans: 1.0,
            eta_obj: 1.0,
            region_batch: 64,
            question_batch: 32,
            lr: 5e-3,
            lr_decay: 0.5,
            decay_interval: None,
            weight_decay: 1e-5,
            steps: 3000,
            pretrain_steps: 0,
            eval_every: 500,
            seeds: vec![1],
            hidden: 24,
            embed: 8,
            bimodal: 40,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    /// Full-scale regimen: M=200, P=50, 1e-3 halved every 24000 steps.
    pub fn full_scale(arm: Arm) -> Self {
        RunConfig {
            region_batch: 200,
            question_batch: 50,
            lr: 1e-3,
            decay_interval: Some(24000),
            hidden: 2048,
            embed: 300,
            bimodal: 2500,
            ..RunConfig::for_arm(arm)
        }
    }

    pub fn alphas(&self) -> [f64; 3] {
        [self.alpha_ans, self.alpha_obj, self.alpha_atr]
    }

    pub fn interval(&self) -> usize {
        self.decay_interval.unwrap_or(self.total_steps() / 4).max(1)
    }

    pub fn total_steps(&self) -> usize {
        self.pretrain_steps + self.steps
    }

    pub fn dims(&self, corpus: &Corpus) -> ModelDims {
        let region_dim = corpus
            .recognition
            .iter()
            .chain(&corpus.qa_regions)
            .map(|r| r.features.len())
            .next()
            .unwrap_or(1);
        ModelDims {
            word_dim: corpus.vocab.dim(),
            region_dim,
            hidden: self.hidden,
            embed: self.embed,
            bimodal: self.bimodal,
            objects: corpus.ontology.num_objects(),
            attributes: corpus.ontology.num_attributes(),
        }
    }

    /// Parses flat `key = value` text. `arm` picks the defaults; every other
    /// key overrides one field.
    pub fn from_text(text: &str, origin: &str) -> Result<Self> {
        let mut kv = KeyValues::parse(text, origin)?;
        let arm: Arm = kv.take::<String>("arm")?.map_or(Ok(Arm::JointSvlr), |s| s.parse())?;
        let mut c = RunConfig::for_arm(arm);
        kv.set("alpha_ans", &mut c.alpha_ans)?;
        kv.set("alpha_obj", &mut c.alpha_obj)?;
        kv.set("alpha_atr", &mut c.alpha_atr)?;
        kv.set("eta_ans", &mut c.eta_ans)?;
        kv.set("eta_obj", &mut c.eta_obj)?;
        kv.set("region_batch", &mut c.region_batch)?;
        kv.set("question_batch", &mut c.question_batch)?;
        kv.set("lr", &mut c.lr)?;
        kv.set("lr_decay", &mut c.lr_decay)?;
        if let Some(i) = kv.take::<usize>("decay_interval")? {
            c.decay_interval = Some(i);
        }
        kv.set("weight_decay", &mut c.weight_decay)?;
        kv.set("steps", &mut c.steps)?;
        kv.set("pretrain_steps", &mut c.pretrain_steps)?;
        kv.set("eval_every", &mut c.eval_every)?;
        if let Some(s) = kv.take::<String>("seeds")? {
            c.seeds = s
                .split(',')
                .map(|x| x.trim().parse())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Config(format!("bad seeds `{s}`")))?;
        }
        kv.set("hidden", &mut c.hidden)?;
        kv.set("embed", &mut c.embed)?;
        kv.set("bimodal", &mut c.bimodal)?;
        kv.set("adam_beta1", &mut c.adam_beta1)?;
        kv.set("adam_beta2", &mut c.adam_beta2)?;
        kv.set("adam_eps", &mut c.adam_eps)?;
        kv.finish()?;
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.alphas().iter().any(|a| !(*a >= 0.0)) {
            return bad("loss weights must be nonnegative");
        }
        if self.region_batch < 2 || self.question_batch < 1 {
            return bad("batch norm needs region_batch >= 2 and question_batch >= 1");
        }
        if !(self.lr > 0.0) || !(self.lr_decay > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("lr and lr_decay must be positive, weight_decay nonnegative");
        }
        if self.decay_interval == Some(0) || self.eval_every == 0 {
            return bad("decay_interval and eval_every must be positive");
        }
        if self.seeds.is_empty() {
            return bad("no seeds");
        }
        if self.hidden == 0 || self.embed == 0 || self.bimodal == 0 {
            return bad("model widths must be positive");
        }
        Ok(())
    }
}

/// `init · decay^⌊step / interval⌋`.
pub fn lr_at(step: usize, init: f64, decay: f64, interval: usize) -> f64 {
    init * decay.powi((step / interval) as i32)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub ans: f64,
    pub obj: f64,
    pub atr: f64,
}

/// Batches for one step; a missing batch means its losses are skipped.
pub struct StepBatches<'b, 'c> {
    pub regions: Option<&'b RegionBatch>,
    pub questions: Option<&'b [VqaItem<'c>]>,
}

/// Evaluates `Σ α·L` for the losses with positive weight, in the given mode.
/// Returns the session so the caller can backpropagate.
fn weighted_losses<'m>(
    model: &'m mut Model,
    lex: &'m Lexicon,
    alphas: [f64; 3],
    margins: (f64, f64),
    batches: &StepBatches,
    mode: Mode,
    track: bool,
) -> Result<(Session<'m>, Option<crate::autodiff::Var>, LossBreakdown)> {
    let [a_ans, a_obj, a_atr] = alphas;
    let mut sess = Session::new(model, lex, mode, track);
    let mut out = LossBreakdown::default();
    let mut terms = Vec::new();
    if a_obj > 0.0 {
        if let Some(b) = batches.regions {
            let l = object_loss(&mut sess, b, margins.1)?;
            out.obj = sess.value(l).item();
            terms.push((a_obj, l));
        }
    }
    if a_atr > 0.0 {
        if let Some(b) = batches.regions {
            let l = attribute_loss(&mut sess, b)?;
            out.atr = sess.value(l).item();
            terms.push((a_atr, l));
        }
    }
    if a_ans > 0.0 {
        if let Some(q) = batches.questions {
            let l = answer_loss(&mut sess, q, margins.0)?;
            out.ans = sess.value(l).item();
            terms.push((a_ans, l));
        }
    }
    let mut root = None;
    for (a, l) in terms {
        let s = sess.graph.scale(l, a)?;
        root = Some(match root {
            None => s,
            Some(r) => sess.graph.add(r, s)?,
        });
    }
    out.total = a_ans * out.ans + a_obj * out.obj + a_atr * out.atr;
    Ok((sess, root, out))
}

/// One optimization step on the weighted joint loss: a single backward pass
/// followed by an Adam update of every parameter.
#[allow(clippy::too_many_arguments)]
pub fn joint_step(
    model: &mut Model,
    lex: &Lexicon,
    alphas: [f64; 3],
    margins: (f64, f64),
    batches: &StepBatches,
    adam: &mut Adam,
    lr: f64,
    weight_decay: f64,
) -> Result<LossBreakdown> {
    let (grads, losses) = {
        let (mut sess, root, losses) =
            weighted_losses(model, lex, alphas, margins, batches, Mode::Train, true)?;
        if let Some(r) = root {
            sess.graph.backward(r)?;
        }
        (sess.param_grads(), losses)
    };
    adam.update(&mut model.params, &grads, lr, weight_decay);
    Ok(losses)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub step: usize,
    pub lr: f64,
    pub losses: LossBreakdown,
    pub vqa_val_acc: f64,
    pub obj_top1: f64,
    pub atr_acc: f64,
}

pub const METRICS_HEADER: &str =
    "step,lr,loss_total,loss_ans,loss_obj,loss_atr,vqa_val_acc,obj_top1,atr_acc";

impl MetricRow {
    pub fn to_csv(&self) -> String {
        let l = &self.losses;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step, self.lr, l.total, l.ans, l.obj, l.atr, self.vqa_val_acc, self.obj_top1, self.atr_acc
        )
    }
}

pub fn metrics_csv(rows: &[MetricRow]) -> String {
    let mut s = format!("{METRICS_HEADER}\n");
    for r in rows {
        s.push_str(&r.to_csv());
        s.push('\n');
    }
    s
}

pub struct RunArtifacts {
    pub config: RunConfig,
    pub seed: u64,
    pub model: Model,
    pub metrics: Vec<MetricRow>,
}

impl RunArtifacts {
    pub fn last(&self) -> &MetricRow {
        self.metrics.last().expect("at least the initial evaluation")
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let mut meta = std::collections::BTreeMap::new();
        meta.insert("arm".into(), self.config.arm.to_string());
        meta.insert("seed".into(), self.seed.to_string());
        meta.insert("steps".into(), self.config.total_steps().to_string());
        Checkpoint {
            model: self.model.clone(),
            meta,
        }
    }

    /// Writes `metrics.csv` and `checkpoint.txt` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("metrics.csv"), metrics_csv(&self.metrics))?;
        save_checkpoint(&self.checkpoint(), &dir.join("checkpoint.txt"))
    }
}

/// Fixed evaluation context shared by all logged rows.
struct Monitor<'c> {
    regions: RegionBatch,
    questions: Vec<VqaItem<'c>>,
}

fn evaluate(
    model: &mut Model,
    lex: &Lexicon,
    corpus: &Corpus,
    cfg: &RunConfig,
    monitor: &Monitor,
    step: usize,
) -> Result<MetricRow> {
    let batches = StepBatches {
        regions: (!monitor.regions.is_empty()).then_some(&monitor.regions),
        questions: (!monitor.questions.is_empty()).then_some(monitor.questions.as_slice()),
    };
    // Monitor every component; only the total is α-weighted.
    let (_, _, mut losses) = weighted_losses(
        model,
        lex,
        [1.0, 1.0, 1.0],
        (cfg.eta_ans, cfg.eta_obj),
        &batches,
        Mode::Eval,
        false,
    )?;
    let [a, o, t] = cfg.alphas();
    losses.total = a * losses.ans + o * losses.obj + t * losses.atr;
    let vqa = vqa_accuracy(model, lex, corpus, Split::Val, cfg.arm.scorer())?;
    let rec = recognition_accuracy(model, lex, &corpus.recognition_split(Split::Val))?;
    Ok(MetricRow {
        step,
        lr: lr_at(step, cfg.lr, cfg.lr_decay, cfg.interval()),
        losses,
        vqa_val_acc: vqa.overall(),
        obj_top1: rec.raw_top1,
        atr_acc: rec.atr_acc,
    })
}

fn non_finite(step: usize, lr: f64, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::NonFiniteLoss {
            step,
            dump: format!("{op} produced NaN/Inf at lr {lr}"),
        },
        other => other,
    }
}

/// Trains one arm for one seed. Deterministic in `(cfg, corpus, seed)`.
pub fn run_arm(cfg: &RunConfig, corpus: &Corpus, seed: u64) -> Result<RunArtifacts> {
    cfg.validate()?;
    let lex = corpus.lexicon()?;
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::new(cfg.dims(corpus), cfg.arm.share(), &mut init_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);

    let rec_train = corpus.recognition_split(Split::Train);
    let qa_train: Vec<&QaSample> = corpus.qa_split(Split::Train);
    let monitor = Monitor {
        regions: corpus.region_batch(&rec_train[..cfg.region_batch.min(rec_train.len())])?,
        questions: corpus.vqa_items(&qa_train[..cfg.question_batch.min(qa_train.len())])?,
    };
    let mut adam = Adam::new(cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    let mut metrics = vec![evaluate(&mut model, &lex, corpus, cfg, &monitor, 0)?];
    let total = cfg.total_steps();
    for step in 0..total {
        let alphas = if step < cfg.pretrain_steps {
            Arm::GenomeOnly.alphas()
        } else {
            cfg.alphas()
        };
        let lr = lr_at(step, cfg.lr, cfg.lr_decay, cfg.interval());
        let regions = if (alphas[1] > 0.0 || alphas[2] > 0.0) && rec_train.len() >= 2 {
            let idx = sample(&mut rng, rec_train.len(), cfg.region_batch.min(rec_train.len()));
            let picked: Vec<_> = idx.iter().map(|i| rec_train[i]).collect();
            Some(corpus.region_batch(&picked)?)
        } else {
            None
        };
        let questions = if alphas[0] > 0.0 && !qa_train.is_empty() {
            let idx = sample(&mut rng, qa_train.len(), cfg.question_batch.min(qa_train.len()));
            let picked: Vec<&QaSample> = idx.iter().map(|i| qa_train[i]).collect();
            Some(corpus.vqa_items(&picked)?)
        } else {
            None
        };
        let batches = StepBatches {
            regions: regions.as_ref(),
            questions: questions.as_deref(),
        };
        let losses = joint_step(
            &mut model,
            &lex,
            alphas,
            (cfg.eta_ans, cfg.eta_obj),
            &batches,
            &mut adam,
            lr,
            cfg.weight_decay,
        )
        .map_err(|e| non_finite(step, lr, e))?;
        if !losses.total.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                dump: format!("{losses:?} at lr {lr}"),
            });
        }
        let done = step + 1;
        if done % cfg.eval_every == 0 || done == total {
            metrics.push(evaluate(&mut model, &lex, corpus, cfg, &monitor, done)?);
        }
    }
    Ok(RunArtifacts {
        config: cfg.clone(),
        seed,
        model,
        metrics,
    })
}
