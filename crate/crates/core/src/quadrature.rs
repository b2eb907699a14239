//! Gauss-Legendre rules mapped onto finite intervals.

use gauss_quad::legendre::GaussLegendre;

use crate::error::{Error, Result};

/// Nodes and weights of an `n`-point rule on `[lo, hi]`, nodes ascending.
/// Weights sum to `hi - lo`.
pub fn gauss_legendre(n: usize, lo: f64, hi: f64) -> Result<Vec<(f64, f64)>> {
    let rule = GaussLegendre::new(n)
        .map_err(|_| Error::InvalidParams(format!("Gauss-Legendre rule needs >= 2 nodes, got {n}")))?;
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut out: Vec<(f64, f64)> = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (mid + half * x, half * w))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Composite rule: `panels` equal panels with an `n`-point rule on each.
pub fn composite(panels: usize, n: usize, lo: f64, hi: f64) -> Result<Vec<(f64, f64)>> {
    if panels == 0 {
        return Err(Error::InvalidParams("composite rule needs at least one panel".into()));
    }
    let h = (hi - lo) / panels as f64;
    let mut out = Vec::with_capacity(panels * n);
    for i in 0..panels {
        let a = lo + i as f64 * h;
        let b = if i + 1 == panels { hi } else { a + h };
        out.extend(gauss_legendre(n, a, b)?);
    }
    Ok(out)
}
