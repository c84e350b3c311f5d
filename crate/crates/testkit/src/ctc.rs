//! Alignment-lattice loss by exhaustive enumeration: walk every label path of
//! length `frames`, keep the ones that collapse to the target, and sum their
//! probabilities. Only usable on tiny inputs (classes^frames paths).

/// Collapse a frame-level path: merge adjacent repeats, then drop blanks.
pub fn collapse(path: &[usize], blank: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut prev = None;
    for &p in path {
        if Some(p) != prev {
            if p != blank {
                out.push(p);
            }
            prev = Some(p);
        }
    }
    out
}

/// Negative log-likelihood of `target` under per-frame log-probabilities
/// (`frames` rows of `classes` entries, row-major), accumulated in f64.
/// Returns +inf when no path collapses to the target.
pub fn nll_by_enumeration(
    log_probs: &[f32],
    frames: usize,
    classes: usize,
    target: &[usize],
    blank: usize,
) -> f64 {
    assert_eq!(log_probs.len(), frames * classes);
    let mut matching = Vec::new();
    let mut path = vec![0usize; frames];
    loop {
        if collapse(&path, blank) == target {
            let lp: f64 = path
                .iter()
                .enumerate()
                .map(|(t, &c)| f64::from(log_probs[t * classes + c]))
                .sum();
            matching.push(lp);
        }
        // Odometer step over classes^frames.
        let mut pos = 0;
        loop {
            if pos == frames {
                return -log_sum_exp(&matching);
            }
            path[pos] += 1;
            if path[pos] < classes {
                break;
            }
            path[pos] = 0;
            pos += 1;
        }
    }
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collapse_examples() {
        // blank = 2
        assert_eq!(collapse(&[0, 0, 2, 1], 2), vec![0, 1]);
        assert_eq!(collapse(&[2, 2, 2], 2), Vec::<usize>::new());
        assert_eq!(collapse(&[0, 2, 0], 2), vec![0, 0]);
    }

    #[test]
    fn empty_target_is_all_blank_path() {
        // Two frames, two classes, blank = 1. Only the all-blank path counts.
        let lp = [-0.5f32, -1.5, -0.25, -2.0];
        let nll = nll_by_enumeration(&lp, 2, 2, &[], 1);
        assert!((nll - (1.5 + 2.0)) < 1e-12);
    }

    #[test]
    fn single_frame_single_token() {
        let lp = [-0.7f32, -1.2, -0.9];
        let nll = nll_by_enumeration(&lp, 1, 3, &[0], 2);
        assert!((nll - 0.7).abs() < 1e-6);
    }
}
