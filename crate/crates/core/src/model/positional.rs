use super::config::PositionalKind;

/// Position id per slot of a `len`-slot sequence anchored at `anchor`.
/// Ids start at 1; 0 is reserved for padding.
pub fn positional_indices(len: usize, anchor: usize, kind: PositionalKind) -> Vec<usize> {
    (0..len)
        .map(|s| match kind {
            PositionalKind::EntityFocused => s.abs_diff(anchor) + 1,
            PositionalKind::Standard => s + 1,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchor_in_the_middle() {
        assert_eq!(
            positional_indices(10, 4, PositionalKind::EntityFocused),
            vec![5, 4, 3, 2, 1, 2, 3, 4, 5, 6]
        );
    }

    #[test]
    fn anchor_at_start_and_singleton() {
        assert_eq!(
            positional_indices(4, 0, PositionalKind::EntityFocused),
            vec![1, 2, 3, 4]
        );
        assert_eq!(
            positional_indices(1, 0, PositionalKind::EntityFocused),
            vec![1]
        );
        assert_eq!(
            positional_indices(3, 2, PositionalKind::Standard),
            vec![1, 2, 3]
        );
    }
}
