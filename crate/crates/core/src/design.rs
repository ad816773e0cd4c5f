//! Balanced stimulus schedules and the between/within treatment contrasts.
//!
//! A schedule assigns one stimulus label to each of `T` time slots. Every
//! stimulus must appear the same number of times `n`, so `T = m * n`. The
//! averaging matrix `B = XX'/n` and the global averaging matrix `G` are never
//! stored; contrasts work on group indices in `O(T)`. Dense versions exist for
//! diagnostics and tests.

use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// A validated, balanced stimulus schedule with optional block (session) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignSchedule {
    stimulus_labels: Vec<String>,
    stimulus_of: Vec<usize>,
    block_labels: Option<Vec<String>>,
    block_of: Option<Vec<usize>>,
    repeats: usize,
}

/// One response vector aligned to a schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSeries {
    pub id: String,
    pub values: Vec<f64>,
}

/// Between- and within-treatment mean squares of one series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContrastValue {
    pub ms_between: f64,
    pub ms_within: f64,
}

fn index_labels<S: AsRef<str>>(labels: &[S]) -> (Vec<String>, Vec<usize>) {
    let mut names = Vec::new();
    let mut lookup: HashMap<&str, usize> = HashMap::new();
    let mut idx = Vec::with_capacity(labels.len());
    for l in labels {
        let l = l.as_ref();
        let k = *lookup.entry(l).or_insert_with(|| {
            names.push(l.to_string());
            names.len() - 1
        });
        idx.push(k);
    }
    (names, idx)
}

impl DesignSchedule {
    /// Validates a schedule. Stimulus indices are assigned in order of first appearance.
    pub fn build<S: AsRef<str>>(schedule: &[S], block_ids: Option<&[S]>) -> Result<Self> {
        if schedule.is_empty() {
            return Err(Error::EmptySchedule);
        }
        let (stimulus_labels, stimulus_of) = index_labels(schedule);
        let m = stimulus_labels.len();
        if m < 2 {
            return Err(Error::DegenerateDesign(m));
        }
        let mut counts = vec![0usize; m];
        for &j in &stimulus_of {
            counts[j] += 1;
        }
        let expected = counts[0];
        if let Some(j) = counts.iter().position(|&c| c != expected) {
            return Err(Error::UnbalancedDesign {
                label: stimulus_labels[j].clone(),
                count: counts[j],
                expected,
            });
        }
        let (block_labels, block_of) = match block_ids {
            Some(b) => {
                if b.len() != schedule.len() {
                    return Err(Error::LengthMismatch {
                        expected: schedule.len(),
                        actual: b.len(),
                    });
                }
                let (names, idx) = index_labels(b);
                (Some(names), Some(idx))
            }
            None => (None, None),
        };
        Ok(Self {
            stimulus_labels,
            stimulus_of,
            block_labels,
            block_of,
            repeats: expected,
        })
    }

    /// Builds a design directly from 0-based stimulus indices.
    pub fn from_indices(stimulus_of: &[usize], block_of: Option<&[usize]>) -> Result<Self> {
        let s: Vec<String> = stimulus_of.iter().map(|j| j.to_string()).collect();
        let b: Option<Vec<String>> = block_of.map(|b| b.iter().map(|k| k.to_string()).collect());
        Self::build(&s, b.as_deref())
    }

    /// Total number of measurements `T`.
    pub fn len(&self) -> usize {
        self.stimulus_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stimulus_of.is_empty()
    }

    /// Number of distinct stimuli `m`.
    pub fn num_stimuli(&self) -> usize {
        self.stimulus_labels.len()
    }

    /// Repeats per stimulus `n`.
    pub fn repeats(&self) -> usize {
        self.repeats
    }

    /// Stimulus index of each time slot (`h`).
    pub fn stimulus_of(&self) -> &[usize] {
        &self.stimulus_of
    }

    /// Block index of each time slot (`beta`), when blocks were supplied.
    pub fn block_of(&self) -> Option<&[usize]> {
        self.block_of.as_deref()
    }

    pub fn stimulus_labels(&self) -> &[String] {
        &self.stimulus_labels
    }

    pub fn block_labels(&self) -> Option<&[String]> {
        self.block_labels.as_deref()
    }

    pub fn num_blocks(&self) -> Option<usize> {
        self.block_labels.as_ref().map(|b| b.len())
    }

    pub fn has_blocks(&self) -> bool {
        self.block_of.is_some()
    }

    /// Time slots of each stimulus, in increasing order.
    pub fn slots_by_stimulus(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::with_capacity(self.repeats); self.num_stimuli()];
        for (t, &j) in self.stimulus_of.iter().enumerate() {
            groups[j].push(t);
        }
        groups
    }

    /// Returns the same schedule with block labels replaced.
    pub fn with_blocks(&self, block_of: &[usize]) -> Result<Self> {
        if block_of.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: block_of.len(),
            });
        }
        let b: Vec<String> = block_of.iter().map(|k| k.to_string()).collect();
        let (names, idx) = index_labels(&b);
        Ok(Self {
            block_labels: Some(names),
            block_of: Some(idx),
            ..self.clone()
        })
    }

    fn check_len(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.len() {
            return Err(Error::LengthMismatch {
                expected: self.len(),
                actual: y.len(),
            });
        }
        Ok(())
    }

    /// Dense averaging matrix `B = XX'/n`.
    pub fn averaging_matrix(&self) -> DMatrix<f64> {
        let t = self.len();
        let inv_n = 1.0 / self.repeats as f64;
        DMatrix::from_fn(t, t, |a, b| {
            if self.stimulus_of[a] == self.stimulus_of[b] {
                inv_n
            } else {
                0.0
            }
        })
    }

    /// Dense global averaging matrix `G`, every entry `1/T`.
    pub fn global_matrix(&self) -> DMatrix<f64> {
        let t = self.len();
        DMatrix::from_element(t, t, 1.0 / t as f64)
    }

    /// Dense `B - G`.
    pub fn contrast_matrix(&self) -> DMatrix<f64> {
        self.averaging_matrix() - self.global_matrix()
    }
}

impl MeasurementSeries {
    pub fn new(id: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        if let Some(t) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(t));
        }
        Ok(Self {
            id: id.into(),
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Mean response of each stimulus over its repeats.
pub fn treatment_averages(y: &[f64], d: &DesignSchedule) -> Result<Vec<f64>> {
    d.check_len(y)?;
    Ok(treatment_averages_unchecked(y, d))
}

// Sums run over sorted values, so each average depends only on the multiset of that
// stimulus's responses. A permutation that merely relabels stimuli then leaves the
// averages, and MS_bet, bit-identical.
pub(crate) fn treatment_averages_unchecked(y: &[f64], d: &DesignSchedule) -> Vec<f64> {
    let (m, n) = (d.num_stimuli(), d.repeats());
    let mut grouped = vec![0.0; m * n];
    let mut fill = vec![0usize; m];
    for (&v, &j) in y.iter().zip(d.stimulus_of()) {
        grouped[j * n + fill[j]] = v;
        fill[j] += 1;
    }
    grouped
        .chunks_mut(n)
        .map(|g| {
            g.sort_unstable_by(f64::total_cmp);
            g.iter().sum::<f64>() / n as f64
        })
        .collect()
}

/// Sample variance of the treatment averages, `sum_j (Ybar_j - Ybar)^2 / (m - 1)`.
pub fn ms_between(y: &[f64], d: &DesignSchedule) -> Result<f64> {
    d.check_len(y)?;
    Ok(ms_between_unchecked(y, d))
}

pub(crate) fn ms_between_unchecked(y: &[f64], d: &DesignSchedule) -> f64 {
    let avg = treatment_averages_unchecked(y, d);
    between_from_averages(&avg)
}

pub(crate) fn between_from_averages(avg: &[f64]) -> f64 {
    let mut sorted = avg.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let m = avg.len() as f64;
    // With a balanced design the grand mean equals the mean of the treatment averages.
    let grand = sorted.iter().sum::<f64>() / m;
    sorted.iter().map(|a| (a - grand).powi(2)).sum::<f64>() / (m - 1.0)
}

/// Pooled within-treatment variance, `SSW / (m (n - 1))`.
pub fn ms_within(y: &[f64], d: &DesignSchedule) -> Result<f64> {
    d.check_len(y)?;
    if d.repeats() < 2 {
        return Err(Error::NoReplication);
    }
    let avg = treatment_averages_unchecked(y, d);
    let ssw: f64 = y
        .iter()
        .zip(d.stimulus_of())
        .map(|(&v, &j)| (v - avg[j]).powi(2))
        .sum();
    let dof = (d.num_stimuli() * (d.repeats() - 1)) as f64;
    Ok(ssw / dof)
}

/// Both contrasts at once.
pub fn contrasts(y: &[f64], d: &DesignSchedule) -> Result<ContrastValue> {
    Ok(ContrastValue {
        ms_between: ms_between(y, d)?,
        ms_within: ms_within(y, d)?,
    })
}

/// `MS_bet` through the quadratic form `||(B - G) y||^2 / ((m - 1) n)` with dense matrices.
pub fn ms_between_dense(y: &[f64], d: &DesignSchedule) -> Result<f64> {
    d.check_len(y)?;
    let v = nalgebra::DVector::from_column_slice(y);
    let r = d.contrast_matrix() * v;
    let denom = ((d.num_stimuli() - 1) * d.repeats()) as f64;
    Ok(r.norm_squared() / denom)
}
