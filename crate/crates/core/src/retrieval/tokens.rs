/// Deterministic text → token count. Implementations must satisfy
/// `count("") == 0` and be monotone under concatenation.
pub trait TokenCounter: Send + Sync {
    fn count(&self, text: &str) -> usize;
}

/// Counts runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenCounter;

impl TokenCounter for WhitespaceTokenCounter {
    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn empty_is_zero() {
        assert_eq!(WhitespaceTokenCounter.count(""), 0);
        assert_eq!(WhitespaceTokenCounter.count(" \n\t"), 0);
    }

    #[test]
    fn unicode_whitespace_splits() {
        assert_eq!(WhitespaceTokenCounter.count("a\u{2003}b\u{00a0}c"), 3);
    }

    proptest! {
        #[test]
        fn monotone_under_concatenation(a in ".{0,40}", b in ".{0,40}") {
            let c = WhitespaceTokenCounter;
            let joined = format!("{a}{b}");
            prop_assert!(c.count(&joined) >= c.count(&a).max(c.count(&b)));
        }
    }
}
