/// Maximum number of word tokens kept per document.
pub const MAX_TOKENS: usize = 4000;

/// Lowercases `raw_text`, turns every non-alphanumeric character into a
/// separator, drops tokens that mix digits and letters ("3a", "4kg") and
/// keeps the first `max_len` tokens. Pure numbers survive.
pub fn preprocess(raw_text: &str, max_len: usize) -> Vec<String> {
    let lowered = raw_text.to_lowercase();
    let cleaned: String = lowered
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned
        .split_whitespace()
        .filter(|tok| !is_mixed_alphanumeric(tok))
        .take(max_len)
        .map(str::to_string)
        .collect()
}

fn is_mixed_alphanumeric(token: &str) -> bool {
    token.chars().any(char::is_numeric) && token.chars().any(char::is_alphabetic)
}
