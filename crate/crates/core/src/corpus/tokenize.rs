use super::vocab::RESERVED;

/// Lowercases and splits on whitespace. Reserved markers keep their exact
/// spelling (so `:P` survives lowercasing and `:p` is read as `:P`).
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace()
        .map(|tok| {
            RESERVED
                .iter()
                .find(|r| r.eq_ignore_ascii_case(tok))
                .map(|r| r.to_string())
                .unwrap_or_else(|| tok.to_lowercase())
        })
        .collect()
}
