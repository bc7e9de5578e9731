use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::PValueMap;

/// Voxel-wise agreement between two corrected p-value maps.
///
/// `D = log10(p_b) - log10(p_a)`, so `D > 0` where map `a` is more significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub alpha: f64,
    pub n_voxels: usize,
    /// Percent of voxels with `D > 0`.
    pub d_plus_pct: f64,
    /// Percent of voxels with `D < 0`.
    pub d_minus_pct: f64,
    pub mean_d_plus: f64,
    pub mean_abs_d_minus: f64,
    /// Percent of voxels significant in `a` only.
    pub gain_pct: f64,
    /// Percent of voxels significant in `b` only.
    pub loss_pct: f64,
    pub gain_voxels: Vec<usize>,
    pub loss_voxels: Vec<usize>,
}

pub fn log10_differences(a: &PValueMap, b: &PValueMap) -> Result<Vec<f64>> {
    if **a.mask() != **b.mask() {
        return Err(Error::structure("p-value maps are defined on different masks"));
    }
    Ok(a.values().iter().zip(b.values()).map(|(&pa, &pb)| pb.log10() - pa.log10()).collect())
}

/// Significance means `p <= alpha`.
pub fn compare_pvalue_maps(a: &PValueMap, b: &PValueMap, alpha: f64) -> Result<ComparisonReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::parameter(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let d = log10_differences(a, b)?;
    let n = d.len();
    let pct = |count: usize| if n == 0 { 0.0 } else { 100.0 * count as f64 / n as f64 };
    let mean = |xs: &[f64]| if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / xs.len() as f64 };

    let plus: Vec<f64> = d.iter().copied().filter(|&x| x > 0.0).collect();
    let minus: Vec<f64> = d.iter().filter(|&&x| x < 0.0).map(|x| -x).collect();
    let mut gain_voxels = Vec::new();
    let mut loss_voxels = Vec::new();
    for (v, (&pa, &pb)) in a.values().iter().zip(b.values()).enumerate() {
        match (pa <= alpha, pb <= alpha) {
            (true, false) => gain_voxels.push(v),
            (false, true) => loss_voxels.push(v),
            _ => {}
        }
    }
    Ok(ComparisonReport {
        alpha,
        n_voxels: n,
        d_plus_pct: pct(plus.len()),
        d_minus_pct: pct(minus.len()),
        mean_d_plus: mean(&plus),
        mean_abs_d_minus: mean(&minus),
        gain_pct: pct(gain_voxels.len()),
        loss_pct: pct(loss_voxels.len()),
        gain_voxels,
        loss_voxels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{GridShape, Mask};
    use std::sync::Arc;

    fn pmap(p: Vec<f64>) -> PValueMap {
        let mask = Arc::new(Mask::full(GridShape::new([p.len(), 1, 1]).unwrap()));
        PValueMap::new(mask, p).unwrap()
    }

    #[test]
    fn self_comparison_is_flat() {
        let a = pmap(vec![0.01, 0.2, 1.0, 0.05]);
        let r = compare_pvalue_maps(&a, &a, 0.05).unwrap();
        assert_eq!((r.d_plus_pct, r.d_minus_pct, r.gain_pct, r.loss_pct), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn single_voxel_gain() {
        let r = compare_pvalue_maps(&pmap(vec![0.01]), &pmap(vec![0.1]), 0.05).unwrap();
        assert!((r.mean_d_plus - 1.0).abs() < 1e-12);
        assert_eq!(r.d_plus_pct, 100.0);
        assert_eq!(r.gain_pct, 100.0);
        assert_eq!(r.loss_pct, 0.0);
        assert_eq!(r.gain_voxels, vec![0]);
    }

    #[test]
    fn mask_mismatch() {
        let a = pmap(vec![0.5, 0.5]);
        let b = pmap(vec![0.5, 0.5, 0.5]);
        assert!(compare_pvalue_maps(&a, &b, 0.05).is_err());
    }
}
