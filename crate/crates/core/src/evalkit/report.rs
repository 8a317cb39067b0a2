//! CSV emitters for evaluation tables and plot data.

use std::path::Path;

use csv::Writer;

use super::{GridCell, ProbeResult, RecognitionAccuracy, SweepRow, TransferGrid, VqaAccuracy};
use crate::error::{Error, Result};
use crate::vqa::AttentionMap;

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn open(path: &Path) -> Result<Writer<std::fs::File>> {
    Writer::from_path(path).map_err(csv_err)
}

fn row<I, S>(w: &mut Writer<std::fs::File>, fields: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(fields).map_err(csv_err)
}

pub fn write_vqa_accuracy(acc: &VqaAccuracy, path: &Path) -> Result<()> {
    let mut w = open(path)?;
    row(&mut w, ["template", "correct", "total", "accuracy"])?;
    for (t, &(c, n)) in &acc.per_template {
        row(&mut w, [t.clone(), c.to_string(), n.to_string(), (c as f64 / n as f64).to_string()])?;
    }
    row(
        &mut w,
        ["overall".to_string(), acc.correct.to_string(), acc.total.to_string(), acc.overall().to_string()],
    )?;
    w.flush()?;
    Ok(())
}

pub fn write_recognition(acc: &RecognitionAccuracy, names: &[String], path: &Path) -> Result<()> {
    let mut w = open(path)?;
    row(&mut w, ["class", "hits", "regions", "raw_top1"])?;
    for (&c, &(h, n)) in &acc.per_class {
        row(&mut w, [names[c].clone(), h.to_string(), n.to_string(), (h as f64 / n as f64).to_string()])?;
    }
    for (name, v) in [
        ("overall_raw_top1", acc.raw_top1),
        ("overall_closed_top1", acc.closed_top1),
        ("overall_atr_acc", acc.atr_acc),
    ] {
        row(&mut w, [name.to_string(), String::new(), acc.regions.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn range(edges: &[usize], i: usize) -> String {
    let lo = if i == 0 { 0 } else { edges[i - 1] };
    match edges.get(i) {
        Some(hi) => format!("{lo}-{}", hi - 1),
        None => format!("{lo}+"),
    }
}

pub fn write_transfer_grid(grid: &TransferGrid, names: &[String], path: &Path) -> Result<()> {
    let mut w = open(path)?;
    row(&mut w, ["qa_freq", "recognition_freq", "classes", "baseline", "delta", "members"])?;
    for (r, cells) in grid.cells.iter().enumerate() {
        for (c, GridCell { classes, baseline, delta }) in cells.iter().enumerate() {
            let members: Vec<&str> = classes.iter().map(|&k| names[k].as_str()).collect();
            row(
                &mut w,
                [
                    range(&grid.qa_edges, r),
                    range(&grid.recognition_edges, c),
                    classes.len().to_string(),
                    baseline.to_string(),
                    delta.to_string(),
                    members.join(" "),
                ],
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_sweep(rows: &[SweepRow], models: &[&str], path: &Path) -> Result<()> {
    let mut w = open(path)?;
    let mut header = vec!["threshold".to_string(), "subset".to_string()];
    header.extend(models.iter().map(|m| m.to_string()));
    row(&mut w, header)?;
    for r in rows {
        let mut f = vec![r.threshold.to_string(), r.subset.to_string()];
        f.extend(r.means.iter().map(|m| m.map_or(String::new(), |v| v.to_string())));
        row(&mut w, f)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_probe(results: &[ProbeResult], path: &Path) -> Result<()> {
    let mut w = open(path)?;
    row(&mut w, ["query", "space", "rank", "word", "distance"])?;
    for p in results {
        for (space, list) in [("base", &p.base), ("svlr", &p.svlr)] {
            for (i, n) in list.iter().enumerate() {
                row(
                    &mut w,
                    [p.query.clone(), space.to_string(), (i + 1).to_string(), n.word.clone(), n.distance.to_string()],
                )?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Per-sample attention dump: region id, raw relevance, normalized weight.
pub fn write_attention(maps: &[(usize, AttentionMap)], path: &Path) -> Result<()> {
    let mut w = open(path)?;
    row(&mut w, ["sample", "region", "raw", "weight"])?;
    for (sample, m) in maps {
        for ((id, raw), wt) in m.region_ids.iter().zip(&m.raw).zip(&m.weights) {
            row(&mut w, [sample.to_string(), id.to_string(), raw.to_string(), wt.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}
