//! Object/attribute category sets and the hypernym DAG over objects.
//!
//! Text format, one entry per line:
//!
//! ```text
//! # comment
//! object animal
//! object dog
//! attribute red
//! dog > animal
//! ```

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Ontology {
    objects: Vec<String>,
    attributes: Vec<String>,
    /// Direct hypernyms of each object.
    parents: Vec<Vec<usize>>,
    object_index: HashMap<String, usize>,
    attribute_index: HashMap<String, usize>,
}

impl Ontology {
    /// Builds an ontology from category names and `(child, parent)` object
    /// edges. Fails on duplicates, dangling ids or cycles.
    pub fn new(
        objects: Vec<String>,
        attributes: Vec<String>,
        edges: &[(usize, usize)],
    ) -> Result<Self> {
        let mut object_index = HashMap::new();
        for (i, o) in objects.iter().enumerate() {
            if object_index.insert(o.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate object `{o}`")));
            }
        }
        let mut attribute_index = HashMap::new();
        for (i, a) in attributes.iter().enumerate() {
            if attribute_index.insert(a.clone(), i).is_some() {
                return Err(Error::Contract(format!("duplicate attribute `{a}`")));
            }
        }
        let mut parents = vec![Vec::new(); objects.len()];
        for &(c, p) in edges {
            if c >= objects.len() || p >= objects.len() {
                return Err(Error::MissingCategory(format!("edge {c} > {p}")));
            }
            if c == p {
                return Err(Error::Contract(format!("self edge on `{}`", objects[c])));
            }
            if !parents[c].contains(&p) {
                parents[c].push(p);
            }
        }
        for ps in &mut parents {
            ps.sort_unstable();
        }
        let ont = Ontology {
            objects,
            attributes,
            parents,
            object_index,
            attribute_index,
        };
        ont.check_acyclic()?;
        Ok(ont)
    }

    fn check_acyclic(&self) -> Result<()> {
        // 0 = unvisited, 1 = on stack, 2 = done
        let mut state = vec![0u8; self.objects.len()];
        for start in 0..self.objects.len() {
            if state[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            state[start] = 1;
            while let Some(top) = stack.last_mut() {
                let node = top.0;
                if let Some(&p) = self.parents[node].get(top.1) {
                    top.1 += 1;
                    match state[p] {
                        0 => {
                            state[p] = 1;
                            stack.push((p, 0));
                        }
                        1 => {
                            return Err(Error::Contract(format!(
                                "hypernym cycle through `{}`",
                                self.objects[p]
                            )))
                        }
                        _ => {}
                    }
                } else {
                    state[node] = 2;
                    stack.pop();
                }
            }
        }
        Ok(())
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn attributes(&self) -> &[String] {
        &self.attributes
    }

    pub fn num_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn num_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn object_id(&self, name: &str) -> Option<usize> {
        self.object_index.get(name).copied()
    }

    pub fn attribute_id(&self, name: &str) -> Option<usize> {
        self.attribute_index.get(name).copied()
    }

    pub fn parents(&self, object: usize) -> &[usize] {
        &self.parents[object]
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (c, p)))
            .collect()
    }

    /// Strict ancestors of an object.
    pub fn ancestors(&self, object: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut stack: Vec<usize> = self.parents[object].clone();
        while let Some(p) = stack.pop() {
            if seen.insert(p) {
                stack.extend_from_slice(&self.parents[p]);
            }
        }
        seen
    }

    /// Objects that are nobody's hypernym.
    pub fn leaves(&self) -> Vec<usize> {
        let mut is_parent = vec![false; self.objects.len()];
        for ps in &self.parents {
            for &p in ps {
                is_parent[p] = true;
            }
        }
        (0..self.objects.len()).filter(|&i| !is_parent[i]).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for o in &self.objects {
            writeln!(s, "object {o}").unwrap();
        }
        for a in &self.attributes {
            writeln!(s, "attribute {a}").unwrap();
        }
        for (c, p) in self.edges() {
            writeln!(s, "{} > {}", self.objects[c], self.objects[p]).unwrap();
        }
        s
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut objects = Vec::new();
        let mut attributes = Vec::new();
        let mut raw_edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some((c, p)) = line.split_once('>') {
                raw_edges.push((i + 1, c.trim().to_string(), p.trim().to_string()));
            } else if let Some(name) = line.strip_prefix("object ") {
                objects.push(name.trim().to_string());
            } else if let Some(name) = line.strip_prefix("attribute ") {
                attributes.push(name.trim().to_string());
            } else {
                return Err(Error::parse(origin, i + 1, format!("unrecognized line `{line}`")));
            }
        }
        let index: HashMap<&str, usize> = objects
            .iter()
            .enumerate()
            .map(|(i, o)| (o.as_str(), i))
            .collect();
        let mut edges = Vec::new();
        for (no, c, p) in &raw_edges {
            let ci = index
                .get(c.as_str())
                .ok_or_else(|| Error::parse(origin, *no, format!("unknown object `{c}`")))?;
            let pi = index
                .get(p.as_str())
                .ok_or_else(|| Error::parse(origin, *no, format!("unknown object `{p}`")))?;
            edges.push((*ci, *pi));
        }
        Ontology::new(objects, attributes, &edges).map_err(|e| Error::parse(origin, 0, e.to_string()))
    }
}

/// Labels together with all their hypernyms.
pub fn hypernym_closure(labels: &[usize], ont: &Ontology) -> Result<BTreeSet<usize>> {
    let mut out = BTreeSet::new();
    for &l in labels {
        if l >= ont.num_objects() {
            return Err(Error::MissingCategory(format!("object #{l}")));
        }
        out.insert(l);
        out.extend(ont.ancestors(l));
    }
    Ok(out)
}
