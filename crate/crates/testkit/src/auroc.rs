//! Ranking quality by literal pair enumeration.

/// Outcome counts over all (positive, negative) score pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PairCounts {
    pub wins: u64,
    pub ties: u64,
    pub pairs: u64,
}

/// Count, over every pair, how often the positive score exceeds the negative
/// one and how often they are equal.
pub fn count_pairs(neg: &[f64], pos: &[f64]) -> PairCounts {
    let mut wins = 0;
    let mut ties = 0;
    for &p in pos {
        for &n in neg {
            if p > n {
                wins += 1;
            } else if p == n {
                ties += 1;
            }
        }
    }
    PairCounts {
        wins,
        ties,
        pairs: (neg.len() as u64) * (pos.len() as u64),
    }
}

/// P(pos > neg) + 0.5 P(pos == neg) from the counts.
pub fn auroc(neg: &[f64], pos: &[f64]) -> f64 {
    let c = count_pairs(neg, pos);
    (2 * c.wins + c.ties) as f64 / (2 * c.pairs) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_example() {
        // Six wins, two ties out of nine pairs.
        let v = auroc(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]);
        assert_eq!(v, 7.0 / 9.0);
    }

    #[test]
    fn separated_sets() {
        assert_eq!(auroc(&[0.0, 0.1], &[1.0, 2.0, 3.0]), 1.0);
        assert_eq!(auroc(&[1.0, 2.0, 3.0], &[0.0]), 0.0);
    }
}
