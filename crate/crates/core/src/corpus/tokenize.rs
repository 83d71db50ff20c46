/// Lowercased word tokens of a transcript.
///
/// Bracketed annotation codes (`[= dog]`, `[/]`) are removed with their
/// contents, words starting with `@` are dropped and `@` suffixes are cut
/// (`doggy@c` -> `doggy`). ASCII punctuation is deleted, not split on, so
/// `don't` becomes `dont`.
pub fn tokenize_transcript(transcript: &str) -> Vec<String> {
    let mut cleaned = String::with_capacity(transcript.len());
    let mut depth = 0usize;
    for c in transcript.chars() {
        match c {
            '[' => {
                depth += 1;
                cleaned.push(' ');
            }
            ']' if depth > 0 => {
                depth -= 1;
                cleaned.push(' ');
            }
            _ if depth > 0 => {}
            _ => cleaned.push(c),
        }
    }

    cleaned
        .split_whitespace()
        .filter(|w| !w.starts_with('@'))
        .filter_map(|w| {
            let stem = w.split('@').next().unwrap_or_default();
            let token: String = stem
                .chars()
                .filter(|c| !c.is_ascii_punctuation())
                .flat_map(char::to_lowercase)
                .collect();
            (!token.is_empty()).then_some(token)
        })
        .collect()
}
