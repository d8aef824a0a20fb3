/// Splits on `.`, `!` or `?` followed by whitespace. Fragments of fewer than
/// three whitespace tokens are merged into the preceding sentence, keeping
/// the original text between them.
pub fn sentence_split(text: &str) -> Vec<String> {
    let text = text.trim();
    if text.is_empty() {
        return Vec::new();
    }
    let mut spans: Vec<(usize, usize)> = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if matches!(c, '.' | '!' | '?') {
            if let Some(&(_, next)) = chars.peek() {
                if next.is_whitespace() {
                    push_span(text, &mut spans, start, i + c.len_utf8());
                    start = i + c.len_utf8();
                }
            }
        }
    }
    push_span(text, &mut spans, start, text.len());

    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(spans.len());
    for (s, e) in spans {
        let short = text[s..e].split_whitespace().count() < 3;
        match merged.last_mut() {
            Some(last) if short => last.1 = e,
            _ => merged.push((s, e)),
        }
    }
    merged.into_iter().map(|(s, e)| text[s..e].to_string()).collect()
}

fn push_span(text: &str, spans: &mut Vec<(usize, usize)>, start: usize, end: usize) {
    let piece = &text[start..end];
    let lead = piece.len() - piece.trim_start().len();
    let trimmed = piece.trim();
    if !trimmed.is_empty() {
        spans.push((start + lead, start + lead + trimmed.len()));
    }
}
