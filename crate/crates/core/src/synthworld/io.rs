//! Corpus directory layout. Every file is line oriented and closes with an
//! `end <records>` line so truncation is detected.
//!
//! ```text
//! vocab.txt        dim <d>, then `<word> <v1> ... <vd>`
//! ontology.txt     `object <name>`, `attribute <name>`, `<child> > <parent>`
//! families.txt     `<family> <attribute>...`
//! synonyms.txt     `<word> <synonym>`
//! recognition.txt  dim <d>, then one region per line (below)
//! qa_regions.txt   same format as recognition.txt
//! qa.txt           one record per question (below)
//! ```
//!
//! Region line: `<id> <image> <split> <object> <attr,attr|-> <r0> <c0> <r1> <c1> : <features>`.
//!
//! QA record:
//!
//! ```text
//! qa <id> <split> <image> <template> <correct> <relevant|-> <region,region,...>
//! q what/OTHER/1 color/OTHER/1 is/OTHER/1 the/OTHER/1 dog/NOUN/2 ?/OTHER/4
//! a red/ADJ
//! a blue/ADJ
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{AttributeFamily, Corpus, QaRecord, Rect, RegionRecord, Split};
use crate::error::{Error, Result};
use crate::recognition::Ontology;
use crate::svlr::Vocabulary;
use crate::vqa::{Pos, QaSample, TaggedWord, Token};

fn floats(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

fn write_regions(regions: &[RegionRecord], dim: usize, ont: &Ontology) -> String {
    let mut out = format!("dim {dim}\n");
    for r in regions {
        let attrs = if r.attributes.is_empty() {
            "-".to_string()
        } else {
            r.attributes
                .iter()
                .map(|&a| ont.attributes()[a].as_str())
                .collect::<Vec<_>>()
                .join(",")
        };
        writeln!(
            out,
            "{} {} {} {} {} {} {} {} {} : {}",
            r.id,
            r.image,
            r.split,
            ont.objects()[r.object],
            attrs,
            r.mask.r0,
            r.mask.c0,
            r.mask.r1,
            r.mask.c1,
            floats(&r.features)
        )
        .unwrap();
    }
    writeln!(out, "end {}", regions.len()).unwrap();
    out
}

fn write_qa(records: &[QaRecord], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    for rec in records {
        let q = &rec.sample;
        let regions: Vec<String> = q.regions.iter().map(usize::to_string).collect();
        writeln!(
            out,
            "qa {} {} {} {} {} {} {}",
            q.id,
            rec.split,
            q.image,
            q.template,
            q.correct,
            q.relevant.map_or("-".to_string(), |r| r.to_string()),
            regions.join(",")
        )
        .unwrap();
        let toks: Vec<String> = q
            .tokens
            .iter()
            .map(|t| format!("{}/{}/{}", vocab.word(t.word), t.pos, t.bin))
            .collect();
        writeln!(out, "q {}", toks.join(" ")).unwrap();
        for opt in &q.options {
            let ws: Vec<String> = opt
                .iter()
                .map(|w| format!("{}/{}", vocab.word(w.word), w.pos))
                .collect();
            writeln!(out, "a {}", ws.join(" ")).unwrap();
        }
    }
    writeln!(out, "end {}", records.len()).unwrap();
    out
}

pub fn write_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let v = &corpus.vocab;
    let mut vocab = format!("dim {}\n", v.dim());
    for (id, w) in v.words().iter().enumerate() {
        writeln!(vocab, "{w} {}", floats(v.vector(id))).unwrap();
    }
    writeln!(vocab, "end {}", v.len()).unwrap();
    fs::write(dir.join("vocab.txt"), vocab)?;

    let ont = &corpus.ontology;
    fs::write(
        dir.join("ontology.txt"),
        format!("{}end {}\n", ont.to_text(), ont.num_objects() + ont.num_attributes()),
    )?;

    let mut fam = String::new();
    for f in &corpus.families {
        let names: Vec<&str> = f.members.iter().map(|&a| ont.attributes()[a].as_str()).collect();
        writeln!(fam, "{} {}", f.name, names.join(" ")).unwrap();
    }
    writeln!(fam, "end {}", corpus.families.len()).unwrap();
    fs::write(dir.join("families.txt"), fam)?;

    let mut syn = String::new();
    for &(a, b) in &corpus.synonyms {
        writeln!(syn, "{} {}", v.word(a), v.word(b)).unwrap();
    }
    writeln!(syn, "end {}", corpus.synonyms.len()).unwrap();
    fs::write(dir.join("synonyms.txt"), syn)?;

    let dim = corpus
        .recognition
        .iter()
        .chain(&corpus.qa_regions)
        .map(|r| r.features.len())
        .next()
        .unwrap_or(0);
    fs::write(dir.join("recognition.txt"), write_regions(&corpus.recognition, dim, ont))?;
    fs::write(dir.join("qa_regions.txt"), write_regions(&corpus.qa_regions, dim, ont))?;
    fs::write(dir.join("qa.txt"), write_qa(&corpus.qa, v))?;
    Ok(())
}

/// Lines of a file with 1-based numbers, minus blanks, comments and the
/// closing `end` line.
struct Lines {
    origin: String,
    body: Vec<(usize, String)>,
}

fn load(dir: &Path, name: &str) -> Result<Lines> {
    let path = dir.join(name);
    let text = fs::read_to_string(&path)?;
    split_lines(&text, &path.display().to_string())
}

fn split_lines(text: &str, origin: &str) -> Result<Lines> {
    let mut body: Vec<(usize, String)> = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .collect();
    let last = text.lines().count();
    match body.pop() {
        Some((_, l)) if l.starts_with("end") => Ok(Lines {
            origin: origin.to_string(),
            body,
        }),
        _ => Err(Error::parse(origin, last + 1, "missing `end` line (truncated file?)")),
    }
}

impl Lines {
    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::parse(&self.origin, line, msg)
    }
}

fn parse_floats(lines: &Lines, no: usize, text: &str, expect: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = text
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| lines.err(no, "bad number"))?;
    if v.len() != expect {
        return Err(lines.err(no, format!("expected {expect} values, got {}", v.len())));
    }
    Ok(v)
}

fn dim_header(lines: &mut Lines) -> Result<usize> {
    if lines.body.is_empty() {
        return Err(lines.err(1, "missing `dim` header"));
    }
    let (no, head) = lines.body.remove(0);
    head.strip_prefix("dim ")
        .and_then(|d| d.trim().parse().ok())
        .ok_or_else(|| lines.err(no, "expected `dim <n>`"))
}

fn read_vocab(dir: &Path) -> Result<Vocabulary> {
    let mut lines = load(dir, "vocab.txt")?;
    let dim = dim_header(&mut lines)?;
    let mut vocab = Vocabulary::new(dim);
    for (no, l) in &lines.body {
        let (w, rest) = l.split_once(' ').unwrap_or((l.as_str(), ""));
        let v = parse_floats(&lines, *no, rest, dim)?;
        vocab.push(w, v).map_err(|e| lines.err(*no, e.to_string()))?;
    }
    Ok(vocab)
}

fn read_regions(dir: &Path, name: &str, ont: &Ontology) -> Result<Vec<RegionRecord>> {
    let mut lines = load(dir, name)?;
    let dim = dim_header(&mut lines)?;
    let mut out = Vec::with_capacity(lines.body.len());
    for (no, l) in &lines.body {
        let no = *no;
        let (head, feats) = l
            .split_once(':')
            .ok_or_else(|| lines.err(no, "missing `:` before features"))?;
        let f: Vec<&str> = head.split_whitespace().collect();
        if f.len() != 9 {
            return Err(lines.err(no, format!("expected 9 header fields, got {}", f.len())));
        }
        let num = |i: usize| -> Result<usize> {
            f[i].parse().map_err(|_| lines.err(no, format!("bad integer `{}`", f[i])))
        };
        let split: Split = f[2].parse().map_err(|e: Error| lines.err(no, e.to_string()))?;
        let object = ont
            .object_id(f[3])
            .ok_or_else(|| lines.err(no, format!("unknown object `{}`", f[3])))?;
        let mut attributes = Vec::new();
        if f[4] != "-" {
            for a in f[4].split(',') {
                attributes.push(
                    ont.attribute_id(a)
                        .ok_or_else(|| lines.err(no, format!("unknown attribute `{a}`")))?,
                );
            }
        }
        let mask = Rect {
            r0: num(5)?,
            c0: num(6)?,
            r1: num(7)?,
            c1: num(8)?,
        };
        if mask.r0 >= mask.r1 || mask.c0 >= mask.c1 || mask.r1 > super::GRID || mask.c1 > super::GRID {
            return Err(lines.err(no, "empty or out-of-grid mask"));
        }
        out.push(RegionRecord {
            id: num(0)?,
            image: num(1)?,
            split,
            object,
            attributes,
            mask,
            features: parse_floats(&lines, no, feats, dim)?,
        });
    }
    Ok(out)
}

fn word_id(lines: &Lines, no: usize, vocab: &Vocabulary, w: &str) -> Result<usize> {
    vocab
        .id(w)
        .ok_or_else(|| lines.err(no, format!("unknown word `{w}`")))
}

fn read_qa(dir: &Path, vocab: &Vocabulary) -> Result<Vec<QaRecord>> {
    let lines = load(dir, "qa.txt")?;
    let mut out: Vec<QaRecord> = Vec::new();
    let mut saw_question = false;
    for (no, l) in &lines.body {
        let no = *no;
        let (kind, rest) = l.split_once(' ').unwrap_or((l.as_str(), ""));
        match kind {
            "qa" => {
                if let Some(prev) = out.last() {
                    if prev.sample.options.is_empty() || !saw_question {
                        return Err(lines.err(no, "previous record has no question or options"));
                    }
                }
                let f: Vec<&str> = rest.split_whitespace().collect();
                if f.len() != 7 {
                    return Err(lines.err(no, format!("expected 7 fields, got {}", f.len())));
                }
                let num = |s: &str| -> Result<usize> {
                    s.parse().map_err(|_| lines.err(no, format!("bad integer `{s}`")))
                };
                let relevant = if f[5] == "-" { None } else { Some(num(f[5])?) };
                let regions = f[6].split(',').map(num).collect::<Result<Vec<_>>>()?;
                out.push(QaRecord {
                    split: f[1].parse().map_err(|e: Error| lines.err(no, e.to_string()))?,
                    sample: QaSample {
                        id: num(f[0])?,
                        image: num(f[2])?,
                        template: f[3].to_string(),
                        tokens: Vec::new(),
                        options: Vec::new(),
                        correct: num(f[4])?,
                        regions,
                        relevant,
                    },
                });
                saw_question = false;
            }
            "q" | "a" => {
                let rec = out
                    .last_mut()
                    .ok_or_else(|| lines.err(no, "token line before any `qa` record"))?;
                if kind == "q" {
                    if saw_question {
                        return Err(lines.err(no, "second question line"));
                    }
                    saw_question = true;
                    for t in rest.split_whitespace() {
                        let mut parts = t.rsplitn(3, '/');
                        let (bin, pos, w) = (parts.next(), parts.next(), parts.next());
                        let (Some(bin), Some(pos), Some(w)) = (bin, pos, w) else {
                            return Err(lines.err(no, format!("expected word/POS/bin, got `{t}`")));
                        };
                        rec.sample.tokens.push(Token {
                            word: word_id(&lines, no, vocab, w)?,
                            pos: pos.parse().map_err(|e: Error| lines.err(no, e.to_string()))?,
                            bin: bin.parse().map_err(|_| lines.err(no, format!("bad bin `{bin}`")))?,
                        });
                    }
                } else {
                    let mut opt = Vec::new();
                    for t in rest.split_whitespace() {
                        let (w, pos) = t
                            .rsplit_once('/')
                            .ok_or_else(|| lines.err(no, format!("expected word/POS, got `{t}`")))?;
                        opt.push(TaggedWord {
                            word: word_id(&lines, no, vocab, w)?,
                            pos: pos.parse::<Pos>().map_err(|e| lines.err(no, e.to_string()))?,
                        });
                    }
                    rec.sample.options.push(opt);
                }
            }
            _ => return Err(lines.err(no, format!("unexpected line `{l}`"))),
        }
    }
    for rec in &out {
        rec.sample.validate()?;
    }
    Ok(out)
}

pub fn read_corpus(dir: &Path) -> Result<Corpus> {
    let vocab = read_vocab(dir)?;
    let ont_lines = load(dir, "ontology.txt")?;
    // Blank out everything but the body so parse errors keep file line numbers.
    let last = ont_lines.body.last().map_or(0, |b| b.0);
    let mut ont_text = vec![String::new(); last];
    for (no, l) in &ont_lines.body {
        ont_text[no - 1] = l.clone();
    }
    let ont_text = ont_text.join("\n");
    let ontology = Ontology::parse(&ont_text, &ont_lines.origin)?;

    let fam = load(dir, "families.txt")?;
    let mut families = Vec::new();
    for (no, l) in &fam.body {
        let mut parts = l.split_whitespace();
        let name = parts.next().unwrap_or_default().to_string();
        let members = parts
            .map(|a| {
                ontology
                    .attribute_id(a)
                    .ok_or_else(|| fam.err(*no, format!("unknown attribute `{a}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        families.push(AttributeFamily { name, members });
    }

    let syn = load(dir, "synonyms.txt")?;
    let mut synonyms = Vec::new();
    for (no, l) in &syn.body {
        let (a, b) = l
            .split_once(' ')
            .ok_or_else(|| syn.err(*no, "expected `<word> <synonym>`"))?;
        synonyms.push((
            word_id(&syn, *no, &vocab, a.trim())?,
            word_id(&syn, *no, &vocab, b.trim())?,
        ));
    }

    let recognition = read_regions(dir, "recognition.txt", &ontology)?;
    let qa_regions = read_regions(dir, "qa_regions.txt", &ontology)?;
    let qa = read_qa(dir, &vocab)?;
    let corpus = Corpus {
        vocab,
        ontology,
        families,
        recognition,
        qa_regions,
        qa,
        synonyms,
    };
    corpus.validate()?;
    Ok(corpus)
}
