//! Small text helpers shared by the scorer, the evaluator and the mutator.

/// Body of the first fenced code block in `response`, or the whole response
/// when there is none. An unterminated fence runs to the end of the text.
pub fn extract_code(response: &str) -> &str {
    let Some(open) = response.find("```") else {
        return response;
    };
    let after = &response[open + 3..];
    // skip the info string (language tag) on the fence line
    let body_start = match after.find('\n') {
        Some(nl) => nl + 1,
        None => return response,
    };
    let body = &after[body_start..];
    match body.find("```") {
        Some(close) => {
            let inner = &body[..close];
            inner.strip_suffix('\n').unwrap_or(inner)
        }
        None => body,
    }
}

/// Truncates to at most `max_chars` characters, marking the cut.
pub fn excerpt(text: &str, max_chars: usize) -> String {
    let mut chars = text.chars();
    let head: String = chars.by_ref().take(max_chars).collect();
    if chars.next().is_some() {
        format!("{head}…")
    } else {
        head
    }
}
