use serde::{Deserialize, Serialize};

use super::InvariantPair;
use crate::numerics::{rel_diff, rel_diff_vec, Matrix, Vector};

/// Which stream properties the observed invariants exhibit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecReport {
    /// `M` is the same at every step.
    pub spec1: bool,
    /// Largest relative distance of any `M_k` from the first one.
    pub spec1_deviation: f64,
    /// Groups of steps (at least two) whose `v` agree pairwise within the
    /// tolerance, each in increasing step order.
    pub spec3_sets: Vec<Vec<usize>>,
    /// Groups of steps whose `||v||` agree pairwise; coarser than
    /// `spec3_sets` and only informational.
    pub norm_sets: Vec<Vec<usize>>,
    pub period_estimate: Option<usize>,
    pub tolerance_used: f64,
}

impl SpecReport {
    /// The largest detected set, ties broken towards the earliest start.
    pub fn largest_set(&self) -> Option<&Vec<usize>> {
        self.spec3_sets
            .iter()
            .fold(None, |best: Option<&Vec<usize>>, s| match best {
                Some(b) if b.len() >= s.len() => Some(b),
                _ => Some(s),
            })
    }

    pub fn set_containing(&self, step: usize) -> Option<&Vec<usize>> {
        self.spec3_sets.iter().find(|s| s.contains(&step))
    }
}

pub fn detect_specs(pairs: &[InvariantPair], tol: f64) -> SpecReport {
    let spec1_deviation = pairs
        .iter()
        .skip(1)
        .map(|p| rel_diff(&p.m, &pairs[0].m))
        .fold(0.0, f64::max);
    let spec1 = !pairs.is_empty() && spec1_deviation <= tol;

    let vs: Vec<_> = pairs.iter().map(|p| &p.v).collect();
    let spec3_sets = cluster(pairs, |i, j| rel_distance(vs[i], vs[j]) <= tol);
    let norms: Vec<f64> = vs.iter().map(|v| v.norm()).collect();
    let norm_sets = cluster(pairs, |i, j| {
        let diff = (norms[i] - norms[j]).abs();
        diff == 0.0 || diff <= tol * norms[i].max(norms[j])
    });

    SpecReport {
        spec1,
        spec1_deviation,
        spec3_sets,
        norm_sets,
        period_estimate: estimate_period(&vs, tol),
        tolerance_used: tol,
    }
}

/// The same indicators from quantities that do not depend on a row
/// permutation: sorted entries of `M'` and of `v'`. They are necessary
/// conditions only; equal multisets do not imply equal vectors.
pub fn detect_specs_unordered(pairs: &[InvariantPair], tol: f64) -> SpecReport {
    let sorted = |xs: &mut dyn Iterator<Item = f64>| {
        let mut v: Vec<f64> = xs.collect();
        v.sort_by(f64::total_cmp);
        v
    };
    let canonical: Vec<InvariantPair> = pairs
        .iter()
        .map(|p| {
            let m = sorted(&mut p.m.iter().copied());
            InvariantPair {
                m: Matrix::from_vec(m.len(), 1, m),
                v: Vector::from_vec(sorted(&mut p.v.iter().copied())),
                step: p.step,
            }
        })
        .collect();
    detect_specs(&canonical, tol)
}

/// Symmetric relative distance so that clustering does not depend on order.
fn rel_distance(a: &Vector, b: &Vector) -> f64 {
    if a.norm() >= b.norm() {
        rel_diff_vec(b, a)
    } else {
        rel_diff_vec(a, b)
    }
}

/// Greedy complete-linkage grouping: the earliest unassigned step seeds a
/// group and a later step joins only if it is close to every member.
fn cluster(pairs: &[InvariantPair], close: impl Fn(usize, usize) -> bool) -> Vec<Vec<usize>> {
    let n = pairs.len();
    let mut assigned = vec![false; n];
    let mut sets = Vec::new();
    for seed in 0..n {
        if assigned[seed] {
            continue;
        }
        let mut members = vec![seed];
        for j in seed + 1..n {
            if !assigned[j] && members.iter().all(|&i| close(i, j)) {
                members.push(j);
            }
        }
        if members.len() >= 2 {
            for &i in &members {
                assigned[i] = true;
            }
            let mut steps: Vec<usize> = members.iter().map(|&i| pairs[i].step).collect();
            steps.sort_unstable();
            sets.push(steps);
        }
    }
    sets
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn shift_statistic(vs: &[&Vector], d: usize) -> f64 {
    median((0..vs.len() - d).map(|k| rel_distance(vs[k], vs[k + d])).collect())
}

/// Smallest shift `d >= 2` after which `v` typically repeats. The median
/// over all overlapping pairs ignores a start-up transient. A sequence that
/// already repeats at shift 1 is settling, not periodic.
fn estimate_period(vs: &[&Vector], tol: f64) -> Option<usize> {
    let n = vs.len();
    if n < 4 || shift_statistic(vs, 1) <= tol {
        return None;
    }
    (2..=n / 2).find(|&d| shift_statistic(vs, d) <= tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cipher::Permutation;

    fn pair(step: usize, v: &[f64]) -> InvariantPair {
        InvariantPair {
            m: Matrix::identity(2, 2),
            v: Vector::from_row_slice(v),
            step,
        }
    }

    #[test]
    fn constant_and_varying_steps() {
        let pairs = vec![
            pair(0, &[1.0, 0.0]),
            pair(1, &[5.0, 5.0]),
            pair(2, &[5.0, 5.0]),
            pair(3, &[-1.0, 2.0]),
            pair(4, &[5.0, 5.0 + 1e-9]),
        ];
        let r = detect_specs(&pairs, 1e-6);
        assert!(r.spec1);
        assert_eq!(r.spec3_sets, vec![vec![1, 2, 4]]);
        assert_eq!(r.largest_set(), Some(&vec![1, 2, 4]));
        assert_eq!(r.set_containing(3), None);
    }

    #[test]
    fn clusters_are_pairwise_tight() {
        // 0~1 and 1~2 but not 0~2: chaining must not merge all three.
        let pairs = vec![pair(0, &[1.0, 0.0]), pair(1, &[1.0, 0.006]), pair(2, &[1.0, 0.012])];
        let r = detect_specs(&pairs, 0.007);
        assert_eq!(r.spec3_sets, vec![vec![0, 1]]);
    }

    #[test]
    fn varying_hessian_breaks_spec1() {
        let mut pairs = vec![pair(0, &[1.0, 1.0]), pair(1, &[2.0, 1.0])];
        pairs[1].m[(0, 0)] = 3.0;
        let r = detect_specs(&pairs, 1e-6);
        assert!(!r.spec1);
        assert!(r.spec1_deviation > 0.5);
        assert!(r.spec3_sets.is_empty());
    }

    #[test]
    fn period_is_found_after_transient() {
        let mut pairs = Vec::new();
        for k in 0..30 {
            let phase = 2.0 * std::f64::consts::PI * (k % 6) as f64 / 6.0;
            let transient = if k < 3 { 10.0 / (k + 1) as f64 } else { 0.0 };
            pairs.push(pair(k, &[10.0 * phase.cos() + transient, 10.0 * phase.sin()]));
        }
        let r = detect_specs(&pairs, 1e-6);
        assert_eq!(r.period_estimate, Some(6));
        assert!(r.set_containing(3).unwrap().contains(&9));
    }

    #[test]
    fn settled_sequence_has_no_period() {
        let pairs: Vec<_> = (0..12).map(|k| pair(k, &[1.0, 2.0])).collect();
        let r = detect_specs(&pairs, 1e-6);
        assert_eq!(r.period_estimate, None);
        assert_eq!(r.spec3_sets.len(), 1);
        assert_eq!(r.norm_sets.len(), 1);
    }

    #[test]
    fn norm_sets_ignore_direction() {
        let pairs = vec![pair(0, &[3.0, 4.0]), pair(1, &[4.0, 3.0])];
        let r = detect_specs(&pairs, 1e-9);
        assert!(r.spec3_sets.is_empty());
        assert_eq!(r.norm_sets, vec![vec![0, 1]]);
    }

    #[test]
    fn unordered_detection_sees_through_permutations() {
        let m = Matrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let v = Vector::from_vec(vec![1.0, -2.0, 7.0]);
        let p = Permutation::try_from(vec![2, 0, 1]).unwrap();
        let pairs = vec![
            InvariantPair {
                m: m.clone(),
                v: v.clone(),
                step: 0,
            },
            InvariantPair {
                m: p.conjugate(&m),
                v: p.apply_vec(&v),
                step: 1,
            },
            InvariantPair {
                m: p.conjugate(&m),
                v: Vector::from_vec(vec![0.0, 1.0, 2.0]),
                step: 2,
            },
        ];
        assert!(!detect_specs(&pairs, 1e-9).spec1);
        let r = detect_specs_unordered(&pairs, 1e-9);
        assert!(r.spec1);
        assert_eq!(r.spec3_sets, vec![vec![0, 1]]);
    }

    #[test]
    fn empty_input() {
        let r = detect_specs(&[], 1e-6);
        assert!(!r.spec1);
        assert!(r.spec3_sets.is_empty());
        assert_eq!(r.period_estimate, None);
    }
}
