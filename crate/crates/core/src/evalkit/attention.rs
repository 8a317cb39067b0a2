use crate::error::{Error, Result};
use crate::synthworld::{Rect, GRID};
use crate::vqa::AttentionMap;

/// Gaussian width of the center baseline, in cells.
pub const CENTER_SIGMA: f64 = 3.5;

/// 14×14 nonnegative grid summing to one, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap14 {
    cells: Vec<f64>,
}

impl Heatmap14 {
    /// Normalizes a nonnegative 196-cell grid.
    pub fn from_cells(cells: Vec<f64>) -> Result<Self> {
        if cells.len() != GRID * GRID {
            return Err(Error::shape("heatmap", format!("{} cells", cells.len())));
        }
        if cells.iter().any(|c| !c.is_finite() || *c < 0.0) {
            return Err(Error::Contract("heatmap cells must be finite and nonnegative".into()));
        }
        let total: f64 = cells.iter().sum();
        if total <= 0.0 {
            return Err(Error::Contract("heatmap has no mass".into()));
        }
        Ok(Heatmap14 {
            cells: cells.into_iter().map(|c| c / total).collect(),
        })
    }

    pub fn cells(&self) -> &[f64] {
        &self.cells
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.cells[r * GRID + c]
    }
}

/// Spreads each region's weight uniformly over its mask; overlaps add up.
pub fn to_heatmap14(attn: &AttentionMap, masks: &[Rect]) -> Result<Heatmap14> {
    if masks.len() != attn.weights.len() {
        return Err(Error::Contract("one mask per attended region".into()));
    }
    let mut cells = vec![0.0; GRID * GRID];
    for (&w, m) in attn.weights.iter().zip(masks) {
        if m.r0 >= m.r1 || m.c0 >= m.c1 || m.r1 > GRID || m.c1 > GRID {
            return Err(Error::Contract("empty or out-of-grid mask".into()));
        }
        let share = w / m.cells() as f64;
        for r in m.r0..m.r1 {
            for c in m.c0..m.c1 {
                cells[r * GRID + c] += share;
            }
        }
    }
    Heatmap14::from_cells(cells)
}

/// Planted relevance: uniform over the relevant region's mask.
pub fn reference_heatmap(mask: Rect) -> Result<Heatmap14> {
    let attn = AttentionMap {
        region_ids: vec![0],
        raw: vec![0.0],
        weights: vec![1.0],
    };
    to_heatmap14(&attn, &[mask])
}

/// Isotropic Gaussian around the grid center.
pub fn center_baseline(sigma: f64) -> Heatmap14 {
    let mid = (GRID as f64 - 1.0) / 2.0;
    let cells = (0..GRID * GRID)
        .map(|i| {
            let (r, c) = ((i / GRID) as f64, (i % GRID) as f64);
            (-((r - mid).powi(2) + (c - mid).powi(2)) / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    Heatmap14::from_cells(cells).expect("gaussian has mass")
}

/// Ranks starting at 1; tied values share the mean of their positions.
fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation over the 196 cells.
pub fn spearman(a: &Heatmap14, b: &Heatmap14) -> Result<f64> {
    let ra = mid_ranks(&a.cells);
    let rb = mid_ranks(&b.cells);
    let n = ra.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation("constant heatmap".into()));
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub threshold: f64,
    pub subset: usize,
    /// Mean model/reference correlation per model; `None` on an empty subset.
    pub means: Vec<Option<f64>>,
}

/// For each threshold, keeps the samples whose reference map correlates
/// with the center map at most that much and averages each model's
/// correlation with the reference over them.
pub fn threshold_sweep(
    models: &[Vec<Heatmap14>],
    reference: &[Heatmap14],
    center: &Heatmap14,
    thresholds: &[f64],
) -> Result<Vec<SweepRow>> {
    if models.iter().any(|m| m.len() != reference.len()) {
        return Err(Error::Contract("model and reference maps must align".into()));
    }
    let ref_center: Vec<f64> = reference
        .iter()
        .map(|r| spearman(r, center))
        .collect::<Result<_>>()?;
    let model_ref: Vec<Vec<f64>> = models
        .iter()
        .map(|maps| maps.iter().zip(reference).map(|(m, r)| spearman(m, r)).collect())
        .collect::<Result<_>>()?;
    Ok(thresholds
        .iter()
        .map(|&t| {
            let keep: Vec<usize> = (0..reference.len()).filter(|&i| ref_center[i] <= t).collect();
            let means = model_ref
                .iter()
                .map(|c| {
                    (!keep.is_empty())
                        .then(|| keep.iter().map(|&i| c[i]).sum::<f64>() / keep.len() as f64)
                })
                .collect();
            SweepRow {
                threshold: t,
                subset: keep.len(),
                means,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attn(weights: &[f64]) -> AttentionMap {
        AttentionMap {
            region_ids: (0..weights.len()).collect(),
            raw: vec![0.0; weights.len()],
            weights: weights.to_vec(),
        }
    }

    #[test]
    fn full_grid_region_is_uniform() {
        let h = to_heatmap14(&attn(&[1.0]), &[Rect::full()]).unwrap();
        assert!(h.cells().iter().all(|&c| (c - 1.0 / 196.0).abs() < 1e-15));
    }

    #[test]
    fn half_grids_split_their_weights() {
        let top = Rect { r0: 0, c0: 0, r1: 7, c1: 14 };
        let bottom = Rect { r0: 7, c0: 0, r1: 14, c1: 14 };
        let h = to_heatmap14(&attn(&[0.75, 0.25]), &[top, bottom]).unwrap();
        assert!((h.at(0, 0) - 0.75 / 98.0).abs() < 1e-15);
        assert!((h.at(13, 13) - 0.25 / 98.0).abs() < 1e-15);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let bad = Rect { r0: 3, c0: 3, r1: 3, c1: 5 };
        assert!(to_heatmap14(&attn(&[1.0]), &[bad]).is_err());
    }

    #[test]
    fn center_map_is_isotropic_and_peaked() {
        let h = center_baseline(CENTER_SIGMA);
        for r in 0..GRID {
            for c in 0..GRID {
                let rot = h.at(c, GRID - 1 - r);
                assert!((h.at(r, c) - rot).abs() < 1e-9);
            }
        }
        let max = h.cells().iter().cloned().fold(0.0, f64::max);
        assert_eq!(h.at(6, 6), max);
        assert_eq!(h.at(7, 7), max);
    }

    #[test]
    fn spearman_extremes() {
        let a = Heatmap14::from_cells((1..=196).map(f64::from).collect()).unwrap();
        let b = Heatmap14::from_cells((1..=196).rev().map(f64::from).collect()).unwrap();
        assert!((spearman(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&a, &b).unwrap() + 1.0).abs() < 1e-12);
        let flat = Heatmap14::from_cells(vec![1.0; 196]).unwrap();
        assert!(matches!(spearman(&a, &flat), Err(Error::UndefinedCorrelation(_))));
    }

    #[test]
    fn ties_get_mid_ranks() {
        assert_eq!(mid_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }
}
