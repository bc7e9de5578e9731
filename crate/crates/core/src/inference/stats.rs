use crate::error::{Error, Result};
use crate::inference::SubjectData;
use crate::volume::StatisticMap;
use std::sync::Arc;

/// Magnitude assigned to zero-variance voxels with a nonzero mean effect; all
/// t-values are clamped to `[-T_CAP, T_CAP]`.
pub const T_CAP: f64 = 1e6;

fn finish(mean_diff: f64, ss: f64, scale: f64) -> f64 {
    // `scale` converts the residual sum of squares into the squared standard error.
    if ss == 0.0 {
        if mean_diff == 0.0 {
            0.0
        } else {
            T_CAP.copysign(mean_diff)
        }
    } else {
        (mean_diff / (ss * scale).sqrt()).clamp(-T_CAP, T_CAP)
    }
}

/// One-sample t over sign-flipped subjects, written into `out`.
pub(crate) fn one_sample_t_into(data: &SubjectData, signs: &[f64], out: &mut Vec<f64>, mean: &mut Vec<f64>) {
    let n_vox = data.n_voxels();
    let n = data.n_subjects() as f64;
    mean.clear();
    mean.resize(n_vox, 0.0);
    for (j, &s) in signs.iter().enumerate() {
        for (m, &x) in mean.iter_mut().zip(data.row(j)) {
            *m += s * x;
        }
    }
    for m in mean.iter_mut() {
        *m /= n;
    }
    out.clear();
    out.resize(n_vox, 0.0);
    for (j, &s) in signs.iter().enumerate() {
        for ((acc, &m), &x) in out.iter_mut().zip(mean.iter()).zip(data.row(j)) {
            let d = s * x - m;
            *acc += d * d;
        }
    }
    // se^2 = ss / (n - 1) / n
    let scale = 1.0 / ((n - 1.0) * n);
    for (t, &m) in out.iter_mut().zip(mean.iter()) {
        *t = finish(m, *t, scale);
    }
}

/// Pooled-variance two-sample t (`true` labels form the first group).
pub(crate) fn two_sample_t_into(data: &SubjectData, labels: &[bool], out: &mut Vec<f64>, scratch: &mut Vec<f64>) {
    let n_vox = data.n_voxels();
    let n1 = labels.iter().filter(|&&l| l).count() as f64;
    let n2 = labels.len() as f64 - n1;
    // scratch = [mean1 | mean2]
    scratch.clear();
    scratch.resize(2 * n_vox, 0.0);
    for (j, &l) in labels.iter().enumerate() {
        let half = if l { &mut scratch[..n_vox] } else { &mut scratch[n_vox..] };
        for (m, &x) in half.iter_mut().zip(data.row(j)) {
            *m += x;
        }
    }
    let (m1, m2) = scratch.split_at_mut(n_vox);
    m1.iter_mut().for_each(|m| *m /= n1);
    m2.iter_mut().for_each(|m| *m /= n2);
    out.clear();
    out.resize(n_vox, 0.0);
    for (j, &l) in labels.iter().enumerate() {
        let means = if l { &*m1 } else { &*m2 };
        for ((acc, &m), &x) in out.iter_mut().zip(means).zip(data.row(j)) {
            let d = x - m;
            *acc += d * d;
        }
    }
    let scale = (1.0 / n1 + 1.0 / n2) / (n1 + n2 - 2.0);
    for ((t, &a), &b) in out.iter_mut().zip(m1.iter()).zip(m2.iter()) {
        *t = finish(a - b, *t, scale);
    }
}

pub(crate) fn check_signs(data: &SubjectData, signs: &[f64]) -> Result<()> {
    if signs.len() != data.n_subjects() {
        return Err(Error::structure(format!(
            "{} signs for {} subjects",
            signs.len(),
            data.n_subjects()
        )));
    }
    if let Some(j) = signs.iter().position(|&s| s != 1.0 && s != -1.0) {
        return Err(Error::structure(format!("sign for subject {j} is {}, expected +1 or -1", signs[j])));
    }
    Ok(())
}

pub(crate) fn check_labels(data: &SubjectData, labels: &[bool]) -> Result<()> {
    if labels.len() != data.n_subjects() {
        return Err(Error::structure(format!(
            "{} labels for {} subjects",
            labels.len(),
            data.n_subjects()
        )));
    }
    let n1 = labels.iter().filter(|&&l| l).count();
    if n1 == 0 || n1 == labels.len() {
        return Err(Error::structure("two-sample test needs both groups nonempty"));
    }
    if labels.len() < 3 {
        return Err(Error::structure("two-sample test needs at least 3 subjects for a pooled variance"));
    }
    Ok(())
}

/// Voxel-wise one-sample t of `signs[j] * subject_j`.
pub fn one_sample_t(data: &SubjectData, signs: &[f64]) -> Result<StatisticMap> {
    check_signs(data, signs)?;
    let (mut out, mut mean) = (Vec::new(), Vec::new());
    one_sample_t_into(data, signs, &mut out, &mut mean);
    StatisticMap::new(Arc::clone(data.mask()), out)
}

/// Voxel-wise pooled two-sample t, first group (`true`) minus second.
pub fn two_sample_t(data: &SubjectData, labels: &[bool]) -> Result<StatisticMap> {
    check_labels(data, labels)?;
    let (mut out, mut scratch) = (Vec::new(), Vec::new());
    two_sample_t_into(data, labels, &mut out, &mut scratch);
    StatisticMap::new(Arc::clone(data.mask()), out)
}
