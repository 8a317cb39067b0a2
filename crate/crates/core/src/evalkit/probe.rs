use crate::autodiff::Mode;
use crate::error::Result;
use crate::svlr::{Lexicon, Model, Session};

#[derive(Clone, Debug, PartialEq)]
pub struct Neighbor {
    pub word: String,
    /// Cosine distance after mean-centering over the vocabulary.
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub query: String,
    pub base: Vec<Neighbor>,
    pub svlr: Vec<Neighbor>,
}

fn center(rows: &mut [Vec<f64>]) {
    let n = rows.len() as f64;
    let dim = rows.first().map_or(0, Vec::len);
    let mut mean = vec![0.0; dim];
    for r in rows.iter() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v / n;
        }
    }
    for r in rows.iter_mut() {
        for (v, m) in r.iter_mut().zip(&mean) {
            *v -= m;
        }
    }
}

fn cosine_distance(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

fn neighbors(rows: &[Vec<f64>], query: usize, k: usize, lex: &Lexicon) -> Vec<Neighbor> {
    let mut d: Vec<(f64, usize)> = (0..rows.len())
        .filter(|&i| i != query)
        .map(|i| (cosine_distance(&rows[query], &rows[i]), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter()
        .take(k)
        .map(|(distance, i)| Neighbor {
            word: lex.vocab.word(i).to_string(),
            distance,
        })
        .collect()
}

/// Nearest vocabulary words of each query in base-vector space and in the
/// learned word space `g`.
pub fn nn_probe(model: &mut Model, lex: &Lexicon, queries: &[&str], k: usize) -> Result<Vec<ProbeResult>> {
    let ids = queries
        .iter()
        .map(|q| lex.vocab.require(q))
        .collect::<Result<Vec<_>>>()?;
    let mut base: Vec<Vec<f64>> = (0..lex.vocab.len()).map(|i| lex.vocab.vector(i).to_vec()).collect();
    let mut svlr: Vec<Vec<f64>> = {
        let mut sess = Session::new(model, lex, Mode::Eval, false);
        let e = sess.vocab_embeddings()?;
        let t = sess.graph.value(e);
        (0..lex.vocab.len()).map(|i| t.row(i).to_vec()).collect()
    };
    center(&mut base);
    center(&mut svlr);
    Ok(queries
        .iter()
        .zip(ids)
        .map(|(q, id)| ProbeResult {
            query: q.to_string(),
            base: neighbors(&base, id, k, lex),
            svlr: neighbors(&svlr, id, k, lex),
        })
        .collect())
}
