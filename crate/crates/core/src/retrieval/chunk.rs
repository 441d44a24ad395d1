use super::tokens::TokenCounter;

pub const DEFAULT_CHUNK_LIMIT: usize = 1600;

/// Splits `text` into chunks of at most `limit` tokens.
///
/// Paragraphs (blank-line separated) are packed greedily. A paragraph that
/// alone exceeds the limit is split into sentences and packed on its own;
/// a sentence that alone exceeds it is split at word boundaries. Chunks
/// never mix text from before and after an oversized unit.
pub fn chunk_document(text: &str, counter: &dyn TokenCounter, limit: usize) -> Vec<String> {
    assert!(limit > 0, "chunk limit must be positive");
    let mut out = Vec::new();
    pack(paragraphs(text), "\n\n", counter, limit, Level::Paragraph, &mut out);
    out
}

#[derive(Clone, Copy)]
enum Level {
    Paragraph,
    Sentence,
    Word,
    Char,
}

fn pack(units: Vec<String>, sep: &str, counter: &dyn TokenCounter, limit: usize, level: Level, out: &mut Vec<String>) {
    let mut current: Option<String> = None;
    for unit in units {
        if counter.count(&unit) == 0 && unit.trim().is_empty() {
            continue;
        }
        if let Some(cur) = &current {
            let candidate = format!("{cur}{sep}{unit}");
            if counter.count(&candidate) <= limit {
                current = Some(candidate);
                continue;
            }
            out.push(current.take().expect("checked above"));
        }
        if counter.count(&unit) <= limit {
            current = Some(unit);
            continue;
        }
        match level {
            Level::Paragraph => pack(sentences(&unit), " ", counter, limit, Level::Sentence, out),
            Level::Sentence => pack(words(&unit), " ", counter, limit, Level::Word, out),
            Level::Word => pack(unit.chars().map(String::from).collect(), "", counter, limit, Level::Char, out),
            // A single character over the limit cannot be split further.
            Level::Char => out.push(unit),
        }
    }
    if let Some(cur) = current {
        out.push(cur);
    }
}

fn paragraphs(text: &str) -> Vec<String> {
    let mut paras = Vec::new();
    let mut lines: Vec<&str> = Vec::new();
    for line in text.lines() {
        if line.trim().is_empty() {
            if !lines.is_empty() {
                paras.push(lines.join("\n").trim().to_string());
                lines.clear();
            }
        } else {
            lines.push(line);
        }
    }
    if !lines.is_empty() {
        paras.push(lines.join("\n").trim().to_string());
    }
    paras
}

/// Sentence boundaries fall after `.`, `!` or `?` when followed by
/// whitespace.
fn sentences(paragraph: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = paragraph.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') && chars.peek().is_some_and(|(_, n)| n.is_whitespace()) {
            let end = i + c.len_utf8();
            let s = paragraph[start..end].trim();
            if !s.is_empty() {
                out.push(s.to_string());
            }
            start = end;
        }
    }
    let tail = paragraph[start..].trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

fn words(sentence: &str) -> Vec<String> {
    sentence.split_whitespace().map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::tokens::WhitespaceTokenCounter;
    use proptest::prelude::*;

    fn words_para(n: usize, tag: &str) -> String {
        (0..n).map(|i| format!("{tag}{i}")).collect::<Vec<_>>().join(" ")
    }

    fn non_ws(s: &str) -> String {
        s.chars().filter(|c| !c.is_whitespace()).collect()
    }

    #[test]
    fn exact_limit_is_one_chunk() {
        let text = words_para(1600, "w");
        let chunks = chunk_document(&text, &WhitespaceTokenCounter, 1600);
        assert_eq!(chunks.len(), 1);
    }

    #[test]
    fn ten_paragraphs_pack_five_per_chunk() {
        let text: Vec<String> = (0..10).map(|p| words_para(300, &format!("p{p}w"))).collect();
        let chunks = chunk_document(&text.join("\n\n"), &WhitespaceTokenCounter, 1600);
        assert_eq!(chunks.len(), 2);
        for c in &chunks {
            assert_eq!(WhitespaceTokenCounter.count(c), 1500);
        }
    }

    #[test]
    fn long_paragraph_splits_by_sentence() {
        let para = (0..6).map(|s| format!("{}.", words_para(9, &format!("s{s}w")))).collect::<Vec<_>>().join(" ");
        let chunks = chunk_document(&para, &WhitespaceTokenCounter, 20);
        assert_eq!(chunks.len(), 3);
        assert!(chunks[0].ends_with('.'));
    }

    #[test]
    fn long_sentence_splits_by_word() {
        let chunks = chunk_document(&words_para(25, "x"), &WhitespaceTokenCounter, 10);
        assert_eq!(chunks.iter().map(|c| WhitespaceTokenCounter.count(c)).collect::<Vec<_>>(), [10, 10, 5]);
    }

    #[test]
    fn empty_text_has_no_chunks() {
        assert!(chunk_document("  \n\n ", &WhitespaceTokenCounter, 5).is_empty());
    }

    proptest! {
        #[test]
        fn respects_limit_and_preserves_content(
            paras in proptest::collection::vec("[a-z]{1,6}( [a-z]{1,6}[.!?]?){0,40}", 0..8),
            limit in 1usize..30,
        ) {
            let text = paras.join("\n\n");
            let chunks = chunk_document(&text, &WhitespaceTokenCounter, limit);
            for c in &chunks {
                prop_assert!(WhitespaceTokenCounter.count(c) <= limit);
            }
            prop_assert_eq!(non_ws(&chunks.join("\n")), non_ws(&text));
        }
    }
}
