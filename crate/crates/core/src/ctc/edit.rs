/// Substitution, insertion and deletion counts of a minimum-cost alignment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct EditCounts {
    pub substitutions: usize,
    pub insertions: usize,
    pub deletions: usize,
}

impl EditCounts {
    pub fn total(&self) -> usize {
        self.substitutions + self.insertions + self.deletions
    }

    /// `total / ref_len`; an empty reference divides by 1 instead.
    pub fn rate(&self, ref_len: usize) -> f64 {
        self.total() as f64 / ref_len.max(1) as f64
    }
}

impl std::ops::AddAssign for EditCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.substitutions += rhs.substitutions;
        self.insertions += rhs.insertions;
        self.deletions += rhs.deletions;
    }
}

/// Unit-cost Levenshtein alignment of `hyp` against `reference`.
///
/// Among minimum-cost alignments the one with the most substitutions is
/// chosen, which keeps the breakdown symmetric: swapping the arguments leaves
/// `substitutions` unchanged and exchanges insertions with deletions.
pub fn edit_distance<T: PartialEq>(reference: &[T], hyp: &[T]) -> EditCounts {
    let (n, m) = (reference.len(), hyp.len());
    // cost = (edits, -substitutions), compared lexicographically
    let mut prev: Vec<(usize, isize)> = (0..=m).map(|j| (j, 0)).collect();
    let mut cur = vec![(0usize, 0isize); m + 1];
    for i in 1..=n {
        cur[0] = (i, 0);
        for j in 1..=m {
            let diag = if reference[i - 1] == hyp[j - 1] {
                prev[j - 1]
            } else {
                (prev[j - 1].0 + 1, prev[j - 1].1 - 1)
            };
            let del = (prev[j].0 + 1, prev[j].1);
            let ins = (cur[j - 1].0 + 1, cur[j - 1].1);
            cur[j] = diag.min(del).min(ins);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    let (edits, neg_subs) = prev[m];
    let substitutions = (-neg_subs) as usize;
    // deletions − insertions = n − m, deletions + insertions = edits − subs
    let indels = edits - substitutions;
    let deletions = ((indels as isize + n as isize - m as isize) / 2) as usize;
    EditCounts {
        substitutions,
        insertions: indels - deletions,
        deletions,
    }
}
