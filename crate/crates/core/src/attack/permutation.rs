use serde::{Deserialize, Serialize};

use super::{AttackError, InvariantPair};
use crate::cipher::Permutation;
use crate::Vector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationOptions {
    /// Entry tolerance for comparing invariant rows, relative to the
    /// largest entry of the reference `M'`.
    pub matrix_tol: f64,
    /// Groups of steps known to share `v`. A step in a group can be
    /// matched through the `v'` of any already resolved member.
    pub refine_sets: Vec<Vec<usize>>,
    /// Entry tolerance for comparing `v'`, relative to `||v'_ref||`.
    pub vector_tol: f64,
}

impl Default for PermutationOptions {
    fn default() -> Self {
        PermutationOptions {
            matrix_tol: 1e-7,
            refine_sets: Vec::new(),
            vector_tol: 1e-3,
        }
    }
}

/// Rows of step `step` that could not be told apart: each group of rows
/// shares the listed candidate rows of the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguitySet {
    pub step: usize,
    pub groups: Vec<AmbiguityGroup>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityGroup {
    pub rows: Vec<usize>,
    pub candidates: Vec<usize>,
}

/// Per-step permutations, aligned with the input pairs. `delta[k]` maps
/// the rows of step `k` to rows of the reference; `absolute[k]` is the
/// permutation the client applied. Both are `None` where the matching is
/// ambiguous.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationMap {
    pub reference_step: usize,
    pub steps: Vec<usize>,
    pub delta: Vec<Option<Permutation>>,
    pub absolute: Vec<Option<Permutation>>,
    pub ambiguity_sets: Vec<AmbiguitySet>,
}

impl PermutationMap {
    pub fn is_complete(&self) -> bool {
        self.ambiguity_sets.is_empty()
    }

    pub fn require_complete(&self) -> Result<(), AttackError> {
        if self.is_complete() {
            Ok(())
        } else {
            Err(AttackError::AmbiguousMatching(
                self.ambiguity_sets.iter().map(|a| a.step).collect(),
            ))
        }
    }

    pub fn absolute_for(&self, step: usize) -> Option<&Permutation> {
        let i = self.steps.iter().position(|&s| s == step)?;
        self.absolute[i].as_ref()
    }
}

/// Recovers every step's permutation from one known absolute permutation.
///
/// Rows of `M'_k` are matched to rows of `M'_ref` by their sorted entries
/// and diagonal, then pruned with the entries against rows already
/// matched. Rows that remain interchangeable reflect symmetries of `M`
/// itself; for steps in `refine_sets` the entries of `v'` can break them.
pub fn resolve_permutations(
    pairs: &[InvariantPair],
    reference_step: usize,
    reference_perm: &Permutation,
    opts: &PermutationOptions,
) -> Result<PermutationMap, AttackError> {
    let r = pairs
        .iter()
        .position(|p| p.step == reference_step)
        .ok_or_else(|| AttackError::ShapeMismatch(format!("no invariants for reference step {reference_step}")))?;
    let n = pairs[r].m.nrows();
    if reference_perm.len() != n || pairs.iter().any(|p| p.m.shape() != (n, n) || p.v.len() != n) {
        return Err(AttackError::ShapeMismatch(
            "invariants and permutation differ in size".into(),
        ));
    }
    let reference = &pairs[r];
    let tau = opts.matrix_tol * reference.m.amax().max(f64::MIN_POSITIVE);
    let ref_prints = fingerprints(&reference.m);

    let mut delta = vec![None; pairs.len()];
    let mut absolute = vec![None; pairs.len()];
    let mut pending: Vec<(usize, Vec<Vec<usize>>)> = Vec::new();
    delta[r] = Some(Permutation::identity(n));
    absolute[r] = Some(reference_perm.clone());

    for (k, pair) in pairs.iter().enumerate() {
        if k == r {
            continue;
        }
        let ctx = Matcher {
            mk: &pair.m,
            mr: &reference.m,
            tau,
        };
        let prints = fingerprints(&pair.m);
        let mut cand: Vec<Vec<usize>> = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| {
                        (pair.m[(i, i)] - reference.m[(j, j)]).abs() <= tau
                            && prints[i].iter().zip(&ref_prints[j]).all(|(a, b)| (a - b).abs() <= tau)
                    })
                    .collect()
            })
            .collect();
        if !ctx.propagate(&mut cand) {
            return Err(AttackError::PermutationMismatch(pair.step));
        }
        match ctx.count_solutions(&cand, 2) {
            (0, _) => return Err(AttackError::PermutationMismatch(pair.step)),
            (1, Some(sol)) => {
                let d = Permutation::try_from(sol).map_err(|_| AttackError::PermutationMismatch(pair.step))?;
                absolute[k] = Some(d.compose(reference_perm));
                delta[k] = Some(d);
            }
            _ => pending.push((k, cand)),
        }
    }

    // v' comparisons need a resolved member of a common refine set; each
    // newly resolved step can serve as such a member in the next round.
    loop {
        let mut progress = false;
        for (k, cand) in pending.iter_mut() {
            if cand.is_empty() {
                continue;
            }
            let k = *k;
            let anchors: Vec<usize> = opts
                .refine_sets
                .iter()
                .filter(|set| set.contains(&pairs[k].step))
                .flat_map(|set| {
                    (0..pairs.len()).filter(|&a| a != k && absolute[a].is_some() && set.contains(&pairs[a].step))
                })
                .collect();
            let ctx = Matcher {
                mk: &pairs[k].m,
                mr: &reference.m,
                tau,
            };
            for a in anchors {
                let w = v_in_reference_rows(&pairs[a].v, absolute[a].as_ref().unwrap(), reference_perm);
                let vtol = opts.vector_tol * w.norm();
                let mut narrowed: Vec<Vec<usize>> = cand
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        c.iter()
                            .copied()
                            .filter(|&j| (pairs[k].v[i] - w[j]).abs() <= vtol)
                            .collect()
                    })
                    .collect();
                if !ctx.propagate(&mut narrowed) {
                    continue;
                }
                if let (1, Some(sol)) = ctx.count_solutions(&narrowed, 2) {
                    let d = Permutation::try_from(sol).map_err(|_| AttackError::PermutationMismatch(pairs[k].step))?;
                    absolute[k] = Some(d.compose(reference_perm));
                    delta[k] = Some(d);
                    cand.clear();
                    progress = true;
                    break;
                }
            }
        }
        if !progress {
            break;
        }
    }
    let ambiguity_sets = pending
        .iter()
        .filter(|(_, cand)| !cand.is_empty())
        .map(|(k, cand)| AmbiguitySet {
            step: pairs[*k].step,
            groups: group_ambiguous(cand),
        })
        .collect();

    Ok(PermutationMap {
        reference_step,
        steps: pairs.iter().map(|p| p.step).collect(),
        delta,
        absolute,
        ambiguity_sets,
    })
}

fn fingerprints(m: &crate::Matrix) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| {
            let mut row: Vec<f64> = m.row(i).iter().copied().collect();
            row.sort_by(f64::total_cmp);
            row
        })
        .collect()
}

/// `w[j] = v'_a[p_a^-1(p_ref(j))]`: the anchor's `v'` listed in the row
/// order of the reference step.
fn v_in_reference_rows(v: &Vector, p_a: &Permutation, p_ref: &Permutation) -> Vector {
    let inv = p_a.inverse();
    Vector::from_fn(v.len(), |j, _| v[inv.map()[p_ref.map()[j]]])
}

fn group_ambiguous(cand: &[Vec<usize>]) -> Vec<AmbiguityGroup> {
    let mut groups: Vec<AmbiguityGroup> = Vec::new();
    for (i, c) in cand.iter().enumerate() {
        if c.len() < 2 {
            continue;
        }
        match groups.iter_mut().find(|g| &g.candidates == c) {
            Some(g) => g.rows.push(i),
            None => groups.push(AmbiguityGroup {
                rows: vec![i],
                candidates: c.clone(),
            }),
        }
    }
    groups
}

struct Matcher<'a> {
    mk: &'a crate::Matrix,
    mr: &'a crate::Matrix,
    tau: f64,
}

impl Matcher<'_> {
    /// Removes candidates that clash with rows already pinned down. Returns
    /// false when some row runs out of candidates.
    fn propagate(&self, cand: &mut [Vec<usize>]) -> bool {
        let n = cand.len();
        loop {
            let mut changed = false;
            let fixed: Vec<(usize, usize)> = (0..n)
                .filter(|&i| cand[i].len() == 1)
                .map(|i| (i, cand[i][0]))
                .collect();
            for i in 0..n {
                if cand[i].len() <= 1 {
                    continue;
                }
                let before = cand[i].len();
                cand[i].retain(|&j| {
                    fixed
                        .iter()
                        .all(|&(i2, j2)| j != j2 && (self.mk[(i, i2)] - self.mr[(j, j2)]).abs() <= self.tau)
                });
                changed |= cand[i].len() != before;
            }
            if cand.iter().any(|c| c.is_empty()) {
                return false;
            }
            // two fixed rows on one target
            let mut seen = vec![false; n];
            for &(_, j) in &fixed {
                if std::mem::replace(&mut seen[j], true) {
                    return false;
                }
            }
            if !changed {
                return true;
            }
        }
    }

    fn verify(&self, sol: &[usize]) -> bool {
        let n = sol.len();
        (0..n).all(|i| (0..n).all(|j| (self.mk[(i, j)] - self.mr[(sol[i], sol[j])]).abs() <= self.tau))
    }

    /// Counts complete matchings up to `limit`, returning the first one.
    fn count_solutions(&self, cand: &[Vec<usize>], limit: usize) -> (usize, Option<Vec<usize>>) {
        let mut first = None;
        let mut count = 0;
        self.search(cand.to_vec(), limit, &mut count, &mut first);
        (count, first)
    }

    fn search(&self, cand: Vec<Vec<usize>>, limit: usize, count: &mut usize, first: &mut Option<Vec<usize>>) {
        if *count >= limit {
            return;
        }
        let open = (0..cand.len())
            .filter(|&i| cand[i].len() > 1)
            .min_by_key(|&i| cand[i].len());
        let Some(i) = open else {
            let sol: Vec<usize> = cand.iter().map(|c| c[0]).collect();
            if self.verify(&sol) {
                *count += 1;
                first.get_or_insert(sol);
            }
            return;
        };
        for &j in &cand[i] {
            let mut next = cand.clone();
            next[i] = vec![j];
            if self.propagate(&mut next) {
                self.search(next, limit, count, first);
            }
            if *count >= limit {
                return;
            }
        }
    }
}
