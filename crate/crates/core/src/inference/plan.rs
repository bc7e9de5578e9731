use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the number of randomizations an exhaustive plan may enumerate.
pub const MAX_EXHAUSTIVE: usize = 1 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RandomizationKind {
    SignFlip,
    TwoSamplePermutation,
}

/// How the null distribution is sampled.
///
/// Randomization 0 is always the observed data. `n_perm` counts the
/// randomizations after it, so the null holds `n_perm + 1` maps in total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationPlan {
    pub kind: RandomizationKind,
    pub n_perm: usize,
    pub seed: u64,
    /// Observed group membership (`true` = first group); two-sample only.
    pub group_labels: Option<Vec<bool>>,
    /// Enumerate every distinct sign pattern or label arrangement; `n_perm`
    /// is then derived from the subject count.
    pub exhaustive: bool,
    /// Externally supplied sign patterns, identity row first.
    pub sign_patterns: Option<Vec<Vec<i8>>>,
}

impl RandomizationPlan {
    pub fn sign_flip(n_perm: usize, seed: u64) -> Self {
        Self {
            kind: RandomizationKind::SignFlip,
            n_perm,
            seed,
            group_labels: None,
            exhaustive: false,
            sign_patterns: None,
        }
    }

    pub fn sign_flip_exhaustive() -> Self {
        Self { exhaustive: true, ..Self::sign_flip(0, 0) }
    }

    pub fn two_sample(labels: Vec<bool>, n_perm: usize, seed: u64) -> Self {
        Self {
            kind: RandomizationKind::TwoSamplePermutation,
            n_perm,
            seed,
            group_labels: Some(labels),
            exhaustive: false,
            sign_patterns: None,
        }
    }

    pub fn two_sample_exhaustive(labels: Vec<bool>) -> Self {
        Self { exhaustive: true, ..Self::two_sample(labels, 0, 0) }
    }

    /// Sign-flip plan from explicit patterns; the first row must be all `+1`.
    pub fn from_sign_patterns(patterns: Vec<Vec<i8>>) -> Result<Self> {
        let first = patterns.first().ok_or_else(|| Error::structure("no sign patterns given"))?;
        if first.iter().any(|&s| s != 1) {
            return Err(Error::structure("first sign pattern must be the identity (all +1)"));
        }
        let width = first.len();
        for (i, row) in patterns.iter().enumerate() {
            if row.len() != width {
                return Err(Error::structure(format!("sign pattern {} has {} entries, expected {width}", i + 1, row.len())));
            }
            if row.iter().any(|&s| s != 1 && s != -1) {
                return Err(Error::structure(format!("sign pattern {} has an entry other than +1/-1", i + 1)));
            }
        }
        Ok(Self { n_perm: patterns.len() - 1, sign_patterns: Some(patterns), ..Self::sign_flip(0, 0) })
    }

    /// Materialize every randomization for `n_subjects` subjects.
    pub fn resolve(&self, n_subjects: usize) -> Result<ResolvedPlan> {
        let items = match self.kind {
            RandomizationKind::SignFlip => self.resolve_signs(n_subjects)?,
            RandomizationKind::TwoSamplePermutation => self.resolve_labels(n_subjects)?,
        };
        Ok(ResolvedPlan { items })
    }

    fn resolve_signs(&self, n: usize) -> Result<Vec<Randomization>> {
        if let Some(rows) = &self.sign_patterns {
            if rows.iter().any(|r| r.len() != n) {
                return Err(Error::structure(format!("sign patterns must have {n} columns, one per subject")));
            }
            return Ok(rows
                .iter()
                .map(|r| Randomization::Signs(r.iter().map(|&s| s as f64).collect()))
                .collect());
        }
        if self.exhaustive {
            if n >= usize::BITS as usize || (1usize << n) > MAX_EXHAUSTIVE {
                return Err(Error::Budget(format!("2^{n} sign patterns exceed the limit of {MAX_EXHAUSTIVE}")));
            }
            // Bit j of b set -> subject j flipped; b = 0 is the identity.
            return Ok((0..1usize << n)
                .map(|b| Randomization::Signs((0..n).map(|j| if b >> j & 1 == 1 { -1.0 } else { 1.0 }).collect()))
                .collect());
        }
        let mut items = Vec::with_capacity(self.n_perm + 1);
        items.push(Randomization::Signs(vec![1.0; n]));
        for b in 1..=self.n_perm {
            let mut rng = self.stream(b);
            items.push(Randomization::Signs(
                (0..n).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect(),
            ));
        }
        Ok(items)
    }

    fn resolve_labels(&self, n: usize) -> Result<Vec<Randomization>> {
        let labels = self
            .group_labels
            .as_ref()
            .ok_or_else(|| Error::structure("two-sample permutation needs group labels"))?;
        if labels.len() != n {
            return Err(Error::structure(format!("{} group labels for {n} subjects", labels.len())));
        }
        let k = labels.iter().filter(|&&l| l).count();
        if k == 0 || k == n {
            return Err(Error::structure("two-sample permutation needs both groups nonempty"));
        }
        let mut items = vec![Randomization::Labels(labels.clone())];
        if self.exhaustive {
            let total = binomial(n, k).filter(|&c| c <= MAX_EXHAUSTIVE as u128).ok_or_else(|| {
                Error::Budget(format!("C({n}, {k}) label arrangements exceed the limit of {MAX_EXHAUSTIVE}"))
            })?;
            items.reserve(total as usize - 1);
            for_each_combination(n, k, |chosen| {
                let mut arrangement = vec![false; n];
                for &i in chosen {
                    arrangement[i] = true;
                }
                if &arrangement != labels {
                    items.push(Randomization::Labels(arrangement));
                }
            });
            return Ok(items);
        }
        for b in 1..=self.n_perm {
            let mut rng = self.stream(b);
            let mut shuffled = labels.clone();
            shuffled.shuffle(&mut rng);
            items.push(Randomization::Labels(shuffled));
        }
        Ok(items)
    }

    /// Independent generator for randomization `b`, so draws do not depend on
    /// evaluation order or worker count.
    fn stream(&self, b: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(b as u64);
        rng
    }
}

fn binomial(n: usize, k: usize) -> Option<u128> {
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(c)
}

/// Visit all k-subsets of `0..n` in lexicographic order.
fn for_each_combination(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        visit(&idx);
        let Some(i) = (0..k).rev().find(|&i| idx[i] != i + n - k) else {
            return;
        };
        idx[i] += 1;
        for j in i + 1..k {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

/// One randomization of the subjects.
#[derive(Debug, Clone, PartialEq)]
pub enum Randomization {
    /// Per-subject sign, shared by every voxel of that subject.
    Signs(Vec<f64>),
    /// Per-subject group membership.
    Labels(Vec<bool>),
}

/// All randomizations of a plan, identity at index 0.
#[derive(Debug, Clone)]
pub struct ResolvedPlan {
    items: Vec<Randomization>,
}

impl ResolvedPlan {
    pub fn n_perm(&self) -> usize {
        self.items.len() - 1
    }

    pub fn get(&self, b: usize) -> &Randomization {
        &self.items[b]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Randomization> {
        self.items.iter()
    }
}
