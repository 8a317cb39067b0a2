//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any fails.
//!
//! `cargo test --release -p svlr-core --test acceptance`

mod common;

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{all_deviations, invariants, isolation, ORACLE_TOL};
use svlr_core::evalkit::{class_frequencies, mean_class_accuracy, recognition_accuracy, TransferGrid};
use svlr_core::gradsuite::run_suite;
use svlr_core::synthworld::{generate, Corpus, Split, WorldSpec};
use svlr_core::trainer::{run_arm, Arm, RunConfig, RECOGNITION_TARGET_ALPHAS};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const GRID_EDGES: [usize; 1] = [50];

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(id: usize, name: &str, outcome: Outcome, elapsed: Duration, budget: Duration) -> bool {
    let in_time = elapsed <= budget;
    let pass = outcome.pass && in_time;
    println!(
        "[{}] {id}. {name}: {} ({:.1}s, budget {}s{})",
        if pass { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64(),
        budget.as_secs(),
        if in_time { "" } else { ", over budget" }
    );
    pass
}

fn gradient_suite() -> Outcome {
    let (mut cases, mut checked, mut skipped) = (0, 0, 0);
    let mut failed = Vec::new();
    for seed in 0..20 {
        match run_suite(seed) {
            Ok(reports) => {
                for c in reports {
                    cases += 1;
                    checked += c.report.checked;
                    skipped += c.report.skipped_kinks;
                    if !c.report.passed() {
                        failed.push(format!("{}@{}", c.name, c.seed));
                    }
                }
            }
            Err(e) => failed.push(format!("seed {seed}: {e}")),
        }
    }
    Outcome {
        pass: failed.is_empty() && skipped * 20 < checked,
        detail: format!(
            "{cases} cases over 20 seeds, {checked} coordinates checked, {skipped} kinks skipped, failures [{}]",
            failed.join(", ")
        ),
    }
}

fn oracle_equivalence() -> Outcome {
    let devs = all_deviations(100);
    let pass = devs.iter().all(|d| d.worst <= ORACLE_TOL && d.compared > 0);
    let parts: Vec<String> = devs
        .iter()
        .map(|d| format!("{} {:.1e}/{}", d.name, d.worst, d.compared))
        .collect();
    Outcome {
        pass,
        detail: format!("worst relative deviation (tol {ORACLE_TOL:e}): {}", parts.join(", ")),
    }
}

struct ArmRuns {
    vqa_val: Vec<f64>,
    class_accuracy: Vec<BTreeMap<usize, f64>>,
    elapsed: Duration,
}

impl ArmRuns {
    fn mean(&self) -> f64 {
        self.vqa_val.iter().sum::<f64>() / self.vqa_val.len() as f64
    }
}

fn train(corpus: &Corpus, cfg: &RunConfig) -> Result<ArmRuns, String> {
    let start = Instant::now();
    let lex = corpus.lexicon().map_err(|e| e.to_string())?;
    let test = corpus.recognition_split(Split::Test);
    let mut runs = ArmRuns {
        vqa_val: Vec::new(),
        class_accuracy: Vec::new(),
        elapsed: Duration::ZERO,
    };
    for seed in SEEDS {
        let mut run = run_arm(cfg, corpus, seed).map_err(|e| format!("{} seed {seed}: {e}", cfg.arm))?;
        runs.vqa_val.push(run.last().vqa_val_acc);
        let acc = recognition_accuracy(&mut run.model, &lex, &test).map_err(|e| e.to_string())?;
        runs.class_accuracy.push(acc.class_accuracy());
    }
    runs.elapsed = start.elapsed();
    Ok(runs)
}

struct Experiment {
    spec: WorldSpec,
    corpus: Corpus,
    vqa_only: ArmRuns,
    multitask: ArmRuns,
    svlr: ArmRuns,
    genome_only: ArmRuns,
    svlr_recognition_target: ArmRuns,
}

fn experiment() -> Result<Experiment, String> {
    let spec = WorldSpec::default();
    let corpus = generate(&spec).map_err(|e| e.to_string())?;
    let vqa_only = train(&corpus, &RunConfig::for_arm(Arm::VqaOnly))?;
    let multitask = train(&corpus, &RunConfig::for_arm(Arm::JointMultitask))?;
    let svlr = train(&corpus, &RunConfig::for_arm(Arm::JointSvlr))?;
    let genome_only = train(&corpus, &RunConfig::for_arm(Arm::GenomeOnly))?;
    let [a, o, t] = RECOGNITION_TARGET_ALPHAS;
    let vr = RunConfig {
        alpha_ans: a,
        alpha_obj: o,
        alpha_atr: t,
        ..RunConfig::for_arm(Arm::JointSvlr)
    };
    let svlr_recognition_target = train(&corpus, &vr)?;
    Ok(Experiment {
        spec,
        corpus,
        vqa_only,
        multitask,
        svlr,
        genome_only,
        svlr_recognition_target,
    })
}

fn percent(runs: &ArmRuns) -> String {
    let each: Vec<String> = runs.vqa_val.iter().map(|v| format!("{:.1}", 100.0 * v)).collect();
    format!("{:.2} [{}]", 100.0 * runs.mean(), each.join(" "))
}

fn transfer_direction(x: &Experiment) -> Outcome {
    let (s, m, v) = (x.svlr.mean(), x.multitask.mean(), x.vqa_only.mean());
    Outcome {
        pass: s >= m && m >= v && s - v >= 0.02,
        detail: format!(
            "mean VQA-val % over {} seeds: joint_svlr {}, joint_multitask {}, vqa_only {}; svlr - vqa_only = {:+.2} points",
            SEEDS.len(),
            percent(&x.svlr),
            percent(&x.multitask),
            percent(&x.vqa_only),
            100.0 * (s - v)
        ),
    }
}

fn zero_shot(x: &Experiment) -> Outcome {
    let chance = 1.0 / x.spec.options as f64;
    let acc = x.genome_only.mean();
    Outcome {
        pass: acc >= 1.5 * chance,
        detail: format!(
            "genome_only VQA-val % {} vs 1.5 x chance = {:.2}",
            percent(&x.genome_only),
            150.0 * chance
        ),
    }
}

fn transfer_grid(x: &Experiment) -> Outcome {
    let grid = TransferGrid::from_class_accuracy(
        &mean_class_accuracy(&x.genome_only.class_accuracy),
        &mean_class_accuracy(&x.svlr_recognition_target.class_accuracy),
        &class_frequencies(&x.corpus),
        &GRID_EDGES,
        &GRID_EDGES,
    );
    let planted_freq = x.spec.profile[0];
    let common_freq = x.spec.profile[1];
    let planted = grid.cell_for(planted_freq.recognition, planted_freq.qa);
    let common = grid.cell_for(common_freq.recognition, common_freq.qa);
    let nonempty = !planted.classes.is_empty() && !common.classes.is_empty();
    Outcome {
        pass: nonempty && planted.delta > 0.0 && common.delta.abs() < planted.delta.abs(),
        detail: format!(
            "recognition-target joint_svlr vs genome_only over {} seeds: rare-rec/common-QA cell ({} classes) delta {:+.4} from {:.3}; common-both cell ({} classes) delta {:+.4} from {:.3}",
            SEEDS.len(),
            planted.classes.len(),
            planted.delta,
            planted.baseline,
            common.classes.len(),
            common.delta,
            common.baseline
        ),
    }
}

fn checks(list: Vec<(&str, Result<(), String>)>) -> Outcome {
    let failed: Vec<String> = list
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}")))
        .collect();
    let names: Vec<&str> = list.iter().map(|(n, _)| *n).collect();
    Outcome {
        pass: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("all hold: {}", names.join(", "))
        } else {
            format!("violated: {}", failed.join("; "))
        },
    }
}

fn invariant_suite() -> Outcome {
    checks(vec![
        ("attention normalization", invariants::attention_normalization(100)),
        ("loss nonnegativity", invariants::loss_nonnegativity(100)),
        ("hypernym closure", invariants::hypernym_reachability(200)),
        ("lr schedule", invariants::lr_schedule()),
        ("spearman", invariants::spearman_properties(100)),
        ("determinism", invariants::determinism()),
    ])
}

fn isolation_suite() -> Outcome {
    checks(vec![
        ("multitask recognition leaves g", isolation::multitask_recognition_leaves_word_net(50)),
        ("object loss leaves f_a", isolation::object_loss_leaves_attribute_net(50)),
        ("attribute loss leaves f_o", isolation::attribute_loss_leaves_object_net(50)),
        ("zero answer weight freezes head", isolation::zero_answer_weight_freezes_head(50)),
    ])
}

fn timed<F: FnOnce() -> Outcome>(f: F) -> (Outcome, Duration) {
    let start = Instant::now();
    let o = f();
    (o, start.elapsed())
}

fn main() -> ExitCode {
    let secs = Duration::from_secs;
    let mut all = true;

    let (o, t) = timed(gradient_suite);
    all &= report(1, "gradient suite", o, t, secs(120));
    let (o, t) = timed(oracle_equivalence);
    all &= report(2, "oracle equivalence", o, t, secs(60));

    let start = Instant::now();
    match experiment() {
        Ok(x) => {
            let total = start.elapsed();
            all &= report(3, "transfer direction", transfer_direction(&x), total, secs(900));
            all &= report(4, "zero-shot", zero_shot(&x), x.genome_only.elapsed, secs(300));
            all &= report(5, "transfer grid", transfer_grid(&x), total, secs(900));
        }
        Err(e) => {
            let failed = || Outcome {
                pass: false,
                detail: format!("training failed: {e}"),
            };
            let t = start.elapsed();
            all &= report(3, "transfer direction", failed(), t, secs(900));
            all &= report(4, "zero-shot", failed(), t, secs(300));
            all &= report(5, "transfer grid", failed(), t, secs(900));
        }
    }

    let (o, t) = timed(invariant_suite);
    all &= report(6, "invariant suite", o, t, secs(60));
    let (o, t) = timed(isolation_suite);
    all &= report(7, "gradient isolation", o, t, secs(30));

    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
