//! Edit distance straight from the recursive definition. Exponential in the
//! input lengths; keep test strings short.

pub fn edit_distance(a: &[u32], b: &[u32]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    if b.is_empty() {
        return a.len();
    }
    let sub = edit_distance(&a[1..], &b[1..]) + usize::from(a[0] != b[0]);
    let del = edit_distance(&a[1..], b) + 1;
    let ins = edit_distance(a, &b[1..]) + 1;
    sub.min(del).min(ins)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basics() {
        assert_eq!(edit_distance(&[], &[]), 0);
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 2, 3]), 0);
        assert_eq!(edit_distance(&[1, 2, 3], &[1, 3]), 1);
        assert_eq!(edit_distance(&[1, 2], &[2, 1]), 2);
        assert_eq!(edit_distance(&[], &[5, 5, 5]), 3);
    }
}
