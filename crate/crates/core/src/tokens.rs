//! Whitespace-token budgeting.
//!
//! Token counts here are whitespace-delimited words, a provider-neutral
//! approximation.

pub fn count_tokens(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Byte spans of each whitespace-delimited token.
fn spans(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                out.push((s, i));
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, text.len()));
    }
    out
}

/// The first `n` tokens, with the original spacing between them.
pub fn head(text: &str, n: usize) -> &str {
    if n == 0 {
        return "";
    }
    let spans = spans(text);
    match spans.get(n - 1) {
        Some(&(_, end)) if spans.len() > n => &text[spans[0].0..end],
        _ => text.trim(),
    }
}

/// The last `n` tokens, with the original spacing between them.
pub fn tail(text: &str, n: usize) -> &str {
    if n == 0 {
        return "";
    }
    let spans = spans(text);
    if spans.len() <= n {
        return text.trim();
    }
    let (start, _) = spans[spans.len() - n];
    &text[start..spans[spans.len() - 1].1]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn head_and_tail_keep_spacing() {
        let text = "  one two\nthree   four five ";
        assert_eq!(count_tokens(text), 5);
        assert_eq!(head(text, 3), "one two\nthree");
        assert_eq!(tail(text, 2), "four five");
        assert_eq!(head(text, 10), text.trim());
        assert_eq!(tail(text, 0), "");
        assert_eq!(head("", 3), "");
    }

    #[test]
    fn multibyte_text() {
        let text = "Umutungo w'ubutaka é ü";
        assert_eq!(tail(text, 2), "é ü");
        assert_eq!(head(text, 1), "Umutungo");
    }
}
