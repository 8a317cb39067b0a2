use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use svlr_core::evalkit::report::{
    write_attention, write_probe, write_recognition, write_sweep, write_transfer_grid, write_vqa_accuracy,
};
use svlr_core::evalkit::{
    attention_maps, center_baseline, nn_probe, recognition_accuracy, spearman, threshold_sweep, transfer_grid,
    vqa_accuracy, Scorer, CENTER_SIGMA,
};
use svlr_core::gradsuite::run_suite;
use svlr_core::svlr::{load_checkpoint, Checkpoint, Lexicon};
use svlr_core::synthworld::{count_audit, generate, read_corpus, write_corpus, Corpus, Split, WorldSpec};
use svlr_core::trainer::{run_arm, Arm, RunConfig};
use svlr_core::{Error, Result};

use crate::ScorerArg;

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn load(checkpoint: &Path, corpus: &Path) -> Result<(Checkpoint, Corpus, Lexicon)> {
    let ckpt = load_checkpoint(checkpoint)?;
    let corpus = read_corpus(corpus)?;
    let lex = corpus.lexicon()?;
    lex.check_model(&ckpt.model)?;
    Ok((ckpt, corpus, lex))
}

pub fn synth(spec: &Path, out: &Path) -> Result<()> {
    let spec = WorldSpec::from_text(&read_text(spec)?, &spec.display().to_string())?;
    let corpus = generate(&spec)?;
    write_corpus(&corpus, out)?;
    fs::write(out.join("spec.txt"), spec.to_text())?;
    let audit = count_audit(&corpus);
    println!(
        "wrote {}: {} words, {} objects, {} attributes, {} recognition regions, {} questions, {} leaves audited",
        out.display(),
        corpus.vocab.len(),
        corpus.ontology.num_objects(),
        corpus.ontology.num_attributes(),
        corpus.recognition.len(),
        corpus.qa.len(),
        audit.len()
    );
    Ok(())
}

pub fn train(config: &Path, corpus: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::from_text(&read_text(config)?, &config.display().to_string())?;
    let corpus = read_corpus(corpus)?;
    for &seed in &cfg.seeds {
        let dir = if cfg.seeds.len() == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("seed-{seed}"))
        };
        let run = run_arm(&cfg, &corpus, seed)?;
        run.write(&dir)?;
        let last = run.last();
        println!(
            "{} seed {seed}: step {} vqa_val {:.4} obj_top1 {:.4} atr {:.4} -> {}",
            cfg.arm,
            last.step,
            last.vqa_val_acc,
            last.obj_top1,
            last.atr_acc,
            dir.display()
        );
    }
    Ok(())
}

fn scorer_for(arg: ScorerArg, ckpt: &Checkpoint) -> Result<Scorer> {
    Ok(match arg {
        ScorerArg::Full => Scorer::Full,
        ScorerArg::ZeroShot => Scorer::ZeroShot,
        ScorerArg::Auto => match ckpt.meta.get("arm") {
            Some(a) => a.parse::<Arm>()?.scorer(),
            None => Scorer::Full,
        },
    })
}

pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub report: PathBuf,
    pub baseline: Option<PathBuf>,
    pub scorer: ScorerArg,
    pub qa_edges: Vec<usize>,
    pub recognition_edges: Vec<usize>,
    pub thresholds: Vec<f64>,
}

fn ascending(edges: &[usize], flag: &str) -> Result<()> {
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Contract(format!("--{flag} must be strictly ascending")));
    }
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    ascending(&args.qa_edges, "qa-edges")?;
    ascending(&args.recognition_edges, "recognition-edges")?;
    let (mut ckpt, corpus, lex) = load(&args.checkpoint, &args.corpus)?;
    let scorer = scorer_for(args.scorer, &ckpt)?;
    let model = &mut ckpt.model;
    fs::create_dir_all(&args.report)?;
    let names = corpus.ontology.objects().to_vec();

    let vqa = vqa_accuracy(model, &lex, &corpus, Split::Val, scorer)?;
    write_vqa_accuracy(&vqa, &args.report.join("vqa_val.csv"))?;
    let rec = recognition_accuracy(model, &lex, &corpus.recognition_split(Split::Test))?;
    write_recognition(&rec, &names, &args.report.join("recognition_test.csv"))?;
    println!("vqa_val {:.4} ({}/{}) scorer {scorer:?}", vqa.overall(), vqa.correct, vqa.total);
    println!(
        "recognition_test raw_top1 {:.4} closed_top1 {:.4} atr {:.4}",
        rec.raw_top1, rec.closed_top1, rec.atr_acc
    );

    let maps = attention_maps(model, &lex, &corpus, &corpus.qa_split(Split::Val))?;
    let center = center_baseline(CENTER_SIGMA);
    let mut kept = (Vec::new(), Vec::new());
    let mut per_sample = String::from("sample,model_vs_reference,center_vs_reference\n");
    for m in &maps {
        // Constant maps have no rank correlation and are left out.
        if let (Ok(a), Ok(b)) = (spearman(&m.model, &m.reference), spearman(&center, &m.reference)) {
            per_sample.push_str(&format!("{},{a},{b}\n", m.sample));
            kept.0.push(m.model.clone());
            kept.1.push(m.reference.clone());
        }
    }
    fs::write(args.report.join("attention_correlation.csv"), per_sample)?;
    let pairs: Vec<_> = maps.iter().map(|m| (m.sample, m.attention.clone())).collect();
    write_attention(&pairs, &args.report.join("attention_weights.csv"))?;
    let centers = vec![center.clone(); kept.1.len()];
    let rows = threshold_sweep(&[kept.0, centers], &kept.1, &center, &args.thresholds)?;
    write_sweep(&rows, &["model", "center"], &args.report.join("attention_sweep.csv"))?;
    if let Some(all) = rows.iter().find(|r| r.subset == kept.1.len()) {
        if let Some(Some(m)) = all.means.first() {
            println!("attention spearman {m:.4} over {} samples", all.subset);
        }
    }

    if let Some(baseline) = &args.baseline {
        let mut base = load_checkpoint(baseline)?;
        lex.check_model(&base.model)?;
        let grid = transfer_grid(
            &mut base.model,
            model,
            &lex,
            &corpus,
            &args.qa_edges,
            &args.recognition_edges,
        )?;
        write_transfer_grid(&grid, &names, &args.report.join("transfer_grid.csv"))?;
        println!("transfer grid over {} classes", grid.evaluated());
    }
    Ok(())
}

pub fn zeroshot(checkpoint: &Path, corpus: &Path, report: Option<&Path>) -> Result<()> {
    let (mut ckpt, corpus, lex) = load(checkpoint, corpus)?;
    let acc = vqa_accuracy(&mut ckpt.model, &lex, &corpus, Split::Val, Scorer::ZeroShot)?;
    let options = corpus.qa_split(Split::Val).first().map_or(0, |s| s.options.len());
    println!(
        "zero-shot vqa_val {:.4} ({}/{}), chance {:.4}",
        acc.overall(),
        acc.correct,
        acc.total,
        if options > 0 { 1.0 / options as f64 } else { 0.0 }
    );
    if let Some(dir) = report {
        fs::create_dir_all(dir)?;
        write_vqa_accuracy(&acc, &dir.join("zero_shot_val.csv"))?;
    }
    Ok(())
}

pub fn probe(checkpoint: &Path, corpus: &Path, words: &[String], k: usize, report: Option<&Path>) -> Result<()> {
    let (mut ckpt, _, lex) = load(checkpoint, corpus)?;
    let queries: Vec<&str> = words.iter().map(String::as_str).collect();
    let results = nn_probe(&mut ckpt.model, &lex, &queries, k)?;
    let mut out = std::io::stdout().lock();
    for r in &results {
        for (space, list) in [("base", &r.base), ("svlr", &r.svlr)] {
            let shown: Vec<String> = list.iter().map(|n| format!("{} ({:.3})", n.word, n.distance)).collect();
            writeln!(out, "{} [{space}]: {}", r.query, shown.join(", "))?;
        }
    }
    if let Some(dir) = report {
        fs::create_dir_all(dir)?;
        write_probe(&results, &dir.join("probe.csv"))?;
    }
    Ok(())
}

pub fn gradcheck(seed: u64) -> Result<()> {
    let cases = run_suite(seed)?;
    let mut failed = 0;
    for c in &cases {
        let r = &c.report;
        println!(
            "{:<24} checked {:>4} skipped {:>3} max_rel {:.2e} {}",
            c.name,
            r.checked,
            r.skipped_kinks,
            r.max_rel_error,
            if r.passed() { "ok" } else { "FAIL" }
        );
        if !r.passed() {
            failed += 1;
            for m in &r.failures {
                println!("    {m:?}");
            }
        }
    }
    if failed > 0 {
        return Err(Error::Contract(format!("{failed} of {} gradient cases failed", cases.len())));
    }
    println!("all {} cases passed for seed {seed}", cases.len());
    Ok(())
}
