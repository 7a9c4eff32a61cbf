//! Lenient JSON extraction from model output.

use serde_json::Value;

use super::GatewayError;

/// Returns the first balanced top-level JSON object or array in `text` that
/// parses, after stripping surrounding code-fence markers.
pub fn extract_json(text: &str) -> Result<Value, GatewayError> {
    let body = strip_fences(text);
    let bytes = body.as_bytes();
    let mut start = 0;
    while let Some(offset) = body[start..].find(['{', '[']) {
        let open = start + offset;
        if let Some(close) = balanced_end(bytes, open) {
            if let Ok(value) = serde_json::from_str(&body[open..=close]) {
                return Ok(value);
            }
        }
        start = open + 1;
    }
    Err(GatewayError::NoJsonFound)
}

fn strip_fences(text: &str) -> &str {
    let mut body = text.trim();
    if body.starts_with("```") {
        body = match body.find('\n') {
            Some(nl) => &body[nl + 1..],
            None => body.trim_start_matches('`'),
        };
    }
    body = body.trim_end();
    if let Some(stripped) = body.strip_suffix("```") {
        body = stripped;
    }
    body.trim()
}

/// Index of the bracket closing the one at `open`, skipping string literals.
fn balanced_end(bytes: &[u8], open: usize) -> Option<usize> {
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (idx, &b) in bytes.iter().enumerate().skip(open) {
        if in_string {
            match b {
                _ if escaped => escaped = false,
                b'\\' => escaped = true,
                b'"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' | b'[' => depth += 1,
            b'}' | b']' => {
                depth = depth.checked_sub(1)?;
                if depth == 0 {
                    return Some(idx);
                }
            }
            _ => {}
        }
    }
    None
}
