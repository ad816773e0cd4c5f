//! Candidate noise-conserving permutations and the mixing coefficient `alpha`.

use std::collections::HashMap;
use std::fmt;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::design::DesignSchedule;
use crate::error::{Error, Result};

/// How a permutation was constructed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PermutationFamily {
    Identity,
    Reverse,
    CyclicShift(usize),
    BlockRandom { seed: u64 },
    OddEven,
    Custom,
}

impl PermutationFamily {
    /// Cyclic shifts and odd/even swaps only approximately conserve stationary noise.
    pub fn is_approximate(&self) -> bool {
        matches!(self, Self::CyclicShift(_) | Self::OddEven)
    }
}

impl fmt::Display for PermutationFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::Reverse => write!(f, "reverse"),
            Self::CyclicShift(k) => write!(f, "shift:{k}"),
            Self::BlockRandom { seed } => write!(f, "block-random:{seed}"),
            Self::OddEven => write!(f, "odd-even"),
            Self::Custom => write!(f, "custom"),
        }
    }
}

/// A bijection on time slots. `(PY)_t = Y_{g(t)}`; indices are 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSpec {
    mapping: Vec<usize>,
    family: PermutationFamily,
}

impl PermutationSpec {
    /// Wraps a 0-based index array after checking it is a bijection.
    pub fn from_mapping(mapping: Vec<usize>, family: PermutationFamily) -> Result<Self> {
        let t = mapping.len();
        let mut seen = vec![false; t];
        for (i, &g) in mapping.iter().enumerate() {
            if g >= t {
                return Err(Error::InvalidPermutation(format!(
                    "target {} at position {} is out of range 1..={t}",
                    g + 1,
                    i + 1
                )));
            }
            if std::mem::replace(&mut seen[g], true) {
                return Err(Error::InvalidPermutation(format!(
                    "target {} appears more than once",
                    g + 1
                )));
            }
        }
        Ok(Self { mapping, family })
    }

    /// Builds a custom permutation from 1-based targets, as stored in permutation files.
    pub fn from_one_based(targets: &[usize]) -> Result<Self> {
        let mapping = targets
            .iter()
            .enumerate()
            .map(|(i, &g)| {
                g.checked_sub(1).ok_or_else(|| {
                    Error::InvalidPermutation(format!("target 0 at position {}", i + 1))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_mapping(mapping, PermutationFamily::Custom)
    }

    pub fn identity(t: usize) -> Self {
        Self {
            mapping: (0..t).collect(),
            family: PermutationFamily::Identity,
        }
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    /// 1-based targets.
    pub fn one_based(&self) -> Vec<usize> {
        self.mapping.iter().map(|g| g + 1).collect()
    }

    pub fn family(&self) -> PermutationFamily {
        self.family
    }

    pub fn len(&self) -> usize {
        self.mapping.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mapping.is_empty()
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.len()];
        for (t, &g) in self.mapping.iter().enumerate() {
            inv[g] = t;
        }
        Self {
            mapping: inv,
            family: PermutationFamily::Custom,
        }
    }

    /// `self` applied after `first`: `(self . first) Y = self (first Y)`.
    pub fn compose(&self, first: &Self) -> Result<Self> {
        if self.len() != first.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: first.len(),
            });
        }
        let mapping = self.mapping.iter().map(|&g| first.mapping[g]).collect();
        Ok(Self {
            mapping,
            family: PermutationFamily::Custom,
        })
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(t, &g)| t == g)
    }

    /// Dense permutation matrix with `P[t, g(t)] = 1`.
    pub fn matrix(&self) -> DMatrix<f64> {
        let t = self.len();
        let mut p = DMatrix::zeros(t, t);
        for (i, &g) in self.mapping.iter().enumerate() {
            p[(i, g)] = 1.0;
        }
        p
    }
}

/// `g(t) = T + 1 - t`.
pub fn reverse_perm(t: usize) -> PermutationSpec {
    PermutationSpec {
        mapping: (0..t).rev().collect(),
        family: PermutationFamily::Reverse,
    }
}

/// Left shift by `k` with wrap-around: `(PY)_t = Y_{t+k mod T}`.
pub fn cyclic_shift(t: usize, k: usize) -> Result<PermutationSpec> {
    if t == 0 || k >= t {
        return Err(Error::InvalidParameter(format!(
            "shift {k} must lie in 0..{t}"
        )));
    }
    Ok(PermutationSpec {
        mapping: (0..t).map(|i| (i + k) % t).collect(),
        family: PermutationFamily::CyclicShift(k),
    })
}

/// Swaps each consecutive (odd, even) pair of slots.
pub fn odd_even_swap(t: usize) -> Result<PermutationSpec> {
    if t % 2 != 0 {
        return Err(Error::OddLength(t));
    }
    Ok(PermutationSpec {
        mapping: (0..t).map(|i| i ^ 1).collect(),
        family: PermutationFamily::OddEven,
    })
}

/// A uniformly random permutation inside each block; slots never leave their block.
pub fn block_random_perm(d: &DesignSchedule, seed: u64) -> Result<PermutationSpec> {
    let blocks = d.block_of().ok_or(Error::MissingBlocks)?;
    let nb = d.num_blocks().unwrap_or(0);
    let mut members = vec![Vec::new(); nb];
    for (t, &b) in blocks.iter().enumerate() {
        members[b].push(t);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mapping = vec![0; d.len()];
    for slots in &members {
        let mut targets = slots.clone();
        targets.shuffle(&mut rng);
        for (&t, &g) in slots.iter().zip(&targets) {
            mapping[t] = g;
        }
    }
    Ok(PermutationSpec {
        mapping,
        family: PermutationFamily::BlockRandom { seed },
    })
}

/// `(PY)_t = Y_{g(t)}`.
pub fn apply(p: &PermutationSpec, y: &[f64]) -> Result<Vec<f64>> {
    if p.len() != y.len() {
        return Err(Error::LengthMismatch {
            expected: p.len(),
            actual: y.len(),
        });
    }
    Ok(p.mapping.iter().map(|&g| y[g]).collect())
}

fn check_aligned(d: &DesignSchedule, p: &PermutationSpec) -> Result<()> {
    if d.len() != p.len() {
        return Err(Error::LengthMismatch {
            expected: d.len(),
            actual: p.len(),
        });
    }
    Ok(())
}

/// Counts `c[j, k] = #{t : h(t) = j, h(g(t)) = k}`.
fn label_pair_counts(d: &DesignSchedule, p: &PermutationSpec) -> HashMap<(usize, usize), u64> {
    let h = d.stimulus_of();
    let mut counts = HashMap::with_capacity(d.len());
    for (t, &g) in p.mapping.iter().enumerate() {
        *counts.entry((h[t], h[g])).or_insert(0u64) += 1;
    }
    counts
}

/// True iff the permutation only relabels treatments.
pub fn is_trivial(p: &PermutationSpec, d: &DesignSchedule) -> Result<bool> {
    check_aligned(d, p)?;
    // Trivial iff every stimulus lands entirely inside a single stimulus.
    Ok(label_pair_counts(d, p).len() == d.num_stimuli())
}

/// Mixing coefficient `tr((B - G) P B P') / (m - 1)` via pair-label counting.
pub fn alpha(d: &DesignSchedule, p: &PermutationSpec) -> Result<f64> {
    check_aligned(d, p)?;
    let joint: u64 = label_pair_counts(d, p).values().map(|c| c * c).sum();
    let n2 = (d.repeats() * d.repeats()) as f64;
    Ok((joint as f64 / n2 - 1.0) / (d.num_stimuli() - 1) as f64)
}

/// Same quantity as [`alpha`] through dense `T x T` matrices.
pub fn alpha_dense(d: &DesignSchedule, p: &PermutationSpec) -> Result<f64> {
    check_aligned(d, p)?;
    let b = d.averaging_matrix();
    let pm = p.matrix();
    let pbp = &pm * &b * pm.transpose();
    Ok((d.contrast_matrix() * pbp).trace() / (d.num_stimuli() - 1) as f64)
}

/// `tr((B - G) M)` for a dense symmetric `M`, using group sums.
pub(crate) fn contrast_trace(d: &DesignSchedule, entry: impl Fn(usize, usize) -> f64) -> f64 {
    let t = d.len();
    let mut within = 0.0;
    for slots in d.slots_by_stimulus() {
        for &a in &slots {
            for &b in &slots {
                within += entry(a, b);
            }
        }
    }
    let mut total = 0.0;
    for a in 0..t {
        for b in 0..t {
            total += entry(a, b);
        }
    }
    within / d.repeats() as f64 - total / t as f64
}

/// `tr((B - G) P Sigma P') - tr((B - G) Sigma)`; zero iff `P` conserves noise for `Sigma`.
pub fn noise_conservation_gap(
    sigma: &DMatrix<f64>,
    d: &DesignSchedule,
    p: &PermutationSpec,
) -> Result<f64> {
    check_aligned(d, p)?;
    if sigma.nrows() != d.len() || sigma.ncols() != d.len() {
        return Err(Error::DimensionMismatch {
            expected: d.len(),
            actual: sigma.nrows().max(sigma.ncols()),
        });
    }
    let g = &p.mapping;
    let shuffled = contrast_trace(d, |a, b| sigma[(g[a], g[b])]);
    let original = contrast_trace(d, |a, b| sigma[(a, b)]);
    Ok(shuffled - original)
}
