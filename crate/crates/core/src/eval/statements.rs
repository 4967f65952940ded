/// Splits text into statements.
///
/// A statement ends at `.`, `!` or `?` followed by whitespace or end of text, or at a
/// newline. Pieces are trimmed and empty pieces dropped. The rule is deliberately
/// naive: abbreviations such as "Dr." end a statement.
pub fn split_statements(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        let end = match c {
            '\n' => Some((i, i + 1)),
            '.' | '!' | '?' => match chars.peek() {
                None => Some((i + 1, i + 1)),
                Some(&(_, next)) if next.is_whitespace() => Some((i + 1, i + 1)),
                _ => None,
            },
            _ => None,
        };
        if let Some((stmt_end, next_start)) = end {
            push_trimmed(&mut out, &text[start..stmt_end]);
            start = next_start;
        }
    }
    push_trimmed(&mut out, &text[start..]);
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_owned());
    }
}
