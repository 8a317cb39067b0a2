//! Plain-text checkpoints.
//!
//! ```text
//! SVLR-CHECKPOINT 1
//! mode svlr
//! dims <word> <region> <hidden> <embed> <bimodal> <objects> <attributes>
//! meta <key> <value>            (zero or more)
//! param <name> <extent>...
//! <values, space separated>
//! moments <name> <width>
//! <means>
//! <variances>
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle is bit-exact.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Model, ModelDims, ParamStore, ShareMode};
use crate::autodiff::{RunningMoments, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &str = "SVLR-CHECKPOINT 1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: BTreeMap<String, String>,
}

fn join(values: &[f64]) -> String {
    let mut s = String::with_capacity(values.len() * 20);
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{v}").unwrap();
    }
    s
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let m = &ckpt.model;
    let d = &m.dims;
    let mut out = String::new();
    writeln!(out, "{CHECKPOINT_MAGIC}").unwrap();
    writeln!(out, "mode {}", m.share).unwrap();
    writeln!(
        out,
        "dims {} {} {} {} {} {} {}",
        d.word_dim, d.region_dim, d.hidden, d.embed, d.bimodal, d.objects, d.attributes
    )
    .unwrap();
    for (k, v) in &ckpt.meta {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Contract(format!("unwritable meta entry `{k}`")));
        }
        writeln!(out, "meta {k} {v}").unwrap();
    }
    for (name, t) in m.params.iter() {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        writeln!(out, "param {name} {}", dims.join(" ")).unwrap();
        writeln!(out, "{}", join(t.data())).unwrap();
    }
    for (name, mom) in &m.moments {
        writeln!(out, "moments {name} {}", mom.dim()).unwrap();
        writeln!(out, "{}", join(&mom.mean)).unwrap();
        writeln!(out, "{}", join(&mom.var)).unwrap();
    }
    out.push_str("end\n");
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    parse_checkpoint(&text, &path.display().to_string())
}

fn numbers(line: &str, expect: usize, origin: &str, no: usize) -> Result<Vec<f64>> {
    let vals = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::parse(origin, no, format!("bad number: {e}")))?;
    if vals.len() != expect {
        return Err(Error::parse(
            origin,
            no,
            format!("expected {expect} values, got {}", vals.len()),
        ));
    }
    Ok(vals)
}

pub(crate) fn parse_checkpoint(text: &str, origin: &str) -> Result<Checkpoint> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| {
        lines
            .next()
            .ok_or_else(|| Error::parse(origin, 0, format!("unexpected end of file, expected {what}")))
    };
    let (no, magic) = next("magic")?;
    if magic.trim() != CHECKPOINT_MAGIC {
        return Err(Error::parse(origin, no, "not an SVLR checkpoint"));
    }
    let (no, mode) = next("mode")?;
    let share: ShareMode = mode
        .strip_prefix("mode ")
        .ok_or_else(|| Error::parse(origin, no, "expected `mode`"))?
        .trim()
        .parse()
        .map_err(|e: Error| Error::parse(origin, no, e.to_string()))?;
    let (no, dims) = next("dims")?;
    let dv: Vec<usize> = dims
        .strip_prefix("dims ")
        .ok_or_else(|| Error::parse(origin, no, "expected `dims`"))?
        .split_whitespace()
        .map(str::parse)
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::parse(origin, no, "bad dims"))?;
    if dv.len() != 7 {
        return Err(Error::parse(origin, no, "dims needs 7 values"));
    }
    let dims = ModelDims {
        word_dim: dv[0],
        region_dim: dv[1],
        hidden: dv[2],
        embed: dv[3],
        bimodal: dv[4],
        objects: dv[5],
        attributes: dv[6],
    };
    let mut meta = BTreeMap::new();
    let mut params = ParamStore::default();
    let mut moments = BTreeMap::new();
    loop {
        let (no, line) = next("`end`")?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("end") => break,
            Some("meta") => {
                let k = parts
                    .next()
                    .ok_or_else(|| Error::parse(origin, no, "meta without key"))?;
                let v = line
                    .splitn(3, ' ')
                    .nth(2)
                    .unwrap_or("")
                    .to_string();
                meta.insert(k.to_string(), v);
            }
            Some("param") => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::parse(origin, no, "param without name"))?
                    .to_string();
                let shape: Vec<usize> = parts
                    .map(str::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::parse(origin, no, "bad shape"))?;
                let n = shape.iter().product();
                let (vno, vals) = next("parameter values")?;
                let data = numbers(vals, n, origin, vno)?;
                let t = Tensor::new(shape, data).map_err(|e| Error::parse(origin, no, e.to_string()))?;
                params.insert(name, t);
            }
            Some("moments") => {
                let name = parts
                    .next()
                    .ok_or_else(|| Error::parse(origin, no, "moments without name"))?
                    .to_string();
                let width: usize = parts
                    .next()
                    .and_then(|w| w.parse().ok())
                    .ok_or_else(|| Error::parse(origin, no, "bad moment width"))?;
                let (mno, ml) = next("means")?;
                let mean = numbers(ml, width, origin, mno)?;
                let (vno, vl) = next("variances")?;
                let var = numbers(vl, width, origin, vno)?;
                moments.insert(name, RunningMoments { mean, var });
            }
            _ => return Err(Error::parse(origin, no, format!("unexpected line `{line}`"))),
        }
    }
    Ok(Checkpoint {
        model: Model {
            dims,
            share,
            params,
            moments,
        },
        meta,
    })
}
