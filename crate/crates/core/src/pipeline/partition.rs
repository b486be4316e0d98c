use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};

use crate::error::PipelineError;

/// Contiguous assignment of transformer layers to participants.
///
/// Participants and layers are 1-based. The first participant also holds
/// the embedding layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    layers: usize,
    ranges: Vec<(usize, usize)>,
    attacker: Option<usize>,
}

/// Splits `d` layers over `n` participants: the first `n − 1` get `⌈d/n⌉`
/// layers each and the last gets the remainder. The attacker defaults to the
/// last participant.
pub fn plan_partition(d: usize, n: usize) -> Result<PartitionPlan, PipelineError> {
    if n == 0 || d == 0 || n > d {
        return Err(PipelineError::Partition {
            layers: d,
            participants: n,
        });
    }
    let chunk = d.div_ceil(n);
    if (n - 1) * chunk >= d {
        // e.g. d=5, n=4: ceil gives 2,2,2 and nothing is left for the last.
        return Err(PipelineError::Partition {
            layers: d,
            participants: n,
        });
    }
    let ranges = (0..n)
        .map(|i| {
            let start = i * chunk + 1;
            let end = if i + 1 == n { d } else { (i + 1) * chunk };
            (start, end)
        })
        .collect();
    Ok(PartitionPlan {
        layers: d,
        ranges,
        attacker: (n >= 2).then_some(n),
    })
}

impl PartitionPlan {
    pub fn with_attacker(mut self, position: usize) -> Result<Self, PipelineError> {
        let n = self.participants();
        if position < 2 || position > n {
            return Err(PipelineError::AttackerPosition {
                position,
                participants: n,
            });
        }
        self.attacker = Some(position);
        Ok(self)
    }

    pub fn participants(&self) -> usize {
        self.ranges.len()
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn attacker(&self) -> Option<usize> {
        self.attacker
    }

    /// Layer range of participant `i` (1-based).
    pub fn range(&self, i: usize) -> RangeInclusive<usize> {
        let (s, e) = self.ranges[i - 1];
        s..=e
    }

    pub fn ranges(&self) -> impl Iterator<Item = RangeInclusive<usize>> + '_ {
        self.ranges.iter().map(|&(s, e)| s..=e)
    }

    /// Last layer computed before participant `position` receives its input.
    pub fn boundary_before(&self, position: usize) -> usize {
        self.ranges[position - 2].1
    }

    /// Layers the attacker has to invert.
    pub fn attacker_boundary(&self) -> Option<usize> {
        self.attacker.map(|a| self.boundary_before(a))
    }

    /// Boundaries between consecutive participants.
    pub fn boundaries(&self) -> Vec<usize> {
        self.ranges[..self.ranges.len() - 1].iter().map(|&(_, e)| e).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn large_model_five_way_split() {
        let p = plan_partition(80, 5).unwrap();
        assert_eq!(p.boundaries(), vec![16, 32, 48, 64]);
        assert_eq!(p.attacker_boundary(), Some(64));
    }

    #[test]
    fn three_and_four_way_splits_of_eighty() {
        assert_eq!(plan_partition(80, 3).unwrap().boundaries(), vec![27, 54]);
        assert_eq!(plan_partition(80, 4).unwrap().boundaries(), vec![20, 40, 60]);
    }

    #[test]
    fn one_layer_each() {
        let p = plan_partition(4, 4).unwrap();
        assert_eq!(p.ranges().collect::<Vec<_>>(), vec![1..=1, 2..=2, 3..=3, 4..=4]);
    }

    #[test]
    fn remainder_goes_last() {
        let p = plan_partition(7, 3).unwrap();
        assert_eq!(p.ranges().collect::<Vec<_>>(), vec![1..=3, 4..=6, 7..=7]);
    }

    #[test]
    fn errors() {
        assert!(plan_partition(3, 4).is_err());
        assert!(plan_partition(5, 4).is_err());
        assert!(plan_partition(4, 0).is_err());
        let p = plan_partition(8, 4).unwrap();
        assert!(p.clone().with_attacker(1).is_err());
        assert!(p.clone().with_attacker(5).is_err());
        assert_eq!(p.with_attacker(2).unwrap().attacker_boundary(), Some(2));
        assert_eq!(plan_partition(8, 1).unwrap().attacker(), None);
    }

    #[test]
    fn ranges_cover_all_layers() {
        for d in 1..40 {
            for n in 1..=d {
                let Ok(p) = plan_partition(d, n) else { continue };
                let covered: Vec<usize> = p.ranges().flatten().collect();
                assert_eq!(covered, (1..=d).collect::<Vec<_>>(), "d={d} n={n}");
            }
        }
    }
}
