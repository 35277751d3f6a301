/// Reserved token placed between dialogue turns. The tokenizer splits `<` and
/// `>` into their own tokens, so this string can never come out of
/// [`tokenize`].
pub const SEPARATOR: &str = "<sep>";

/// Lowercases and splits on whitespace and punctuation. Runs of alphanumeric
/// characters form a token; every other non-whitespace character is a token
/// of its own.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            word.extend(ch.to_lowercase());
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !ch.is_whitespace() {
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}
