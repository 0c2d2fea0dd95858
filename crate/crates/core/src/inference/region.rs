use crate::error::{Error, Result};

/// Gaps below this are closed when intervals are merged.
pub const MERGE_GAP: f64 = 1e-12;

/// Sorted, disjoint union of open intervals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TruncationRegion {
    intervals: Vec<(f64, f64)>,
}

impl TruncationRegion {
    /// Sorts, drops empty pieces and merges overlapping or touching intervals.
    pub fn new(mut intervals: Vec<(f64, f64)>) -> Self {
        intervals.retain(|(lo, hi)| lo < hi);
        intervals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(intervals.len());
        for (lo, hi) in intervals {
            match merged.last_mut() {
                Some(last) if lo - last.1 < MERGE_GAP => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        Self { intervals: merged }
    }

    pub fn interval(lo: f64, hi: f64) -> Self {
        Self::new(vec![(lo, hi)])
    }

    pub fn intervals(&self) -> &[(f64, f64)] {
        &self.intervals
    }

    pub fn is_empty(&self) -> bool {
        self.intervals.is_empty()
    }

    pub fn len(&self) -> usize {
        self.intervals.len()
    }

    /// Membership, counting interval endpoints as inside.
    pub fn contains(&self, z: f64) -> bool {
        let idx = self.intervals.partition_point(|iv| iv.1 < z);
        self.intervals.get(idx).is_some_and(|&(lo, _)| lo <= z)
    }

    /// Interval containing `z`, if any.
    pub fn piece_containing(&self, z: f64) -> Option<(f64, f64)> {
        let idx = self.intervals.partition_point(|iv| iv.1 < z);
        self.intervals.get(idx).copied().filter(|&(lo, _)| lo <= z)
    }

    pub fn require_contains(&self, z_obs: f64) -> Result<()> {
        if self.contains(z_obs) {
            Ok(())
        } else {
            Err(Error::ObservedExcluded { z_obs })
        }
    }

    pub fn intersect(&self, other: &TruncationRegion) -> TruncationRegion {
        let (a, b) = (&self.intervals, &other.intervals);
        let (mut i, mut j) = (0, 0);
        let mut out = Vec::new();
        while i < a.len() && j < b.len() {
            let lo = a[i].0.max(b[j].0);
            let hi = a[i].1.min(b[j].1);
            if lo < hi {
                out.push((lo, hi));
            }
            if a[i].1 < b[j].1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        TruncationRegion::new(out)
    }

    pub fn union(&self, other: &TruncationRegion) -> TruncationRegion {
        let mut all = self.intervals.clone();
        all.extend_from_slice(&other.intervals);
        TruncationRegion::new(all)
    }

    /// `[lo, hi]` minus this region.
    pub fn complement_within(&self, lo: f64, hi: f64) -> TruncationRegion {
        let mut out = Vec::new();
        let mut cursor = lo;
        for &(a, b) in &self.intervals {
            if b <= cursor {
                continue;
            }
            if a >= hi {
                break;
            }
            if a > cursor {
                out.push((cursor, a));
            }
            cursor = cursor.max(b);
        }
        if cursor < hi {
            out.push((cursor, hi));
        }
        TruncationRegion::new(out)
    }

    /// Whether every interval lies inside `other`, up to `tol` at the ends.
    pub fn is_subset_of(&self, other: &TruncationRegion, tol: f64) -> bool {
        self.intervals.iter().all(|&(lo, hi)| {
            other
                .intervals
                .iter()
                .any(|&(a, b)| a <= lo + tol && hi <= b + tol)
        })
    }

    pub fn total_length(&self) -> f64 {
        self.intervals.iter().map(|(lo, hi)| hi - lo).sum()
    }

    pub fn bounds(&self) -> Option<(f64, f64)> {
        Some((self.intervals.first()?.0, self.intervals.last()?.1))
    }
}
