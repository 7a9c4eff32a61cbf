//! Small string helpers shared by the pipeline stages.

use std::sync::LazyLock;

use regex::Regex;

static IMAGE_REF: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"!\[[^\]]*\]\(([^)\s]+)\)").expect("image ref regex"));
static NUMBER_PREFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(?:(?:\d+(?:\.\d+)*|[IVXLC]+)(?:[.):\-]\s*|\s+)|\d+(?:\.\d+)*[A-Z]{2})")
        .expect("numbering regex")
});
static TAG: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"<[^>]*>").expect("tag regex"));

/// Replaces every line break with a single space so the text fits in one JSON line.
pub fn collapse_newlines(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '\r' => {
                if chars.peek() == Some(&'\n') {
                    chars.next();
                }
                out.push(' ');
            }
            '\n' => out.push(' '),
            other => out.push(other),
        }
    }
    out
}

/// Canonical form used by containment checks: emphasis markers removed and
/// whitespace runs collapsed to one space.
pub fn normalize_for_match(text: &str) -> String {
    let stripped: String = text.chars().filter(|c| !matches!(c, '*' | '_')).collect();
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Whitespace-collapsed, trimmed text.
pub fn collapse_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn word_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Removes leading section numbering such as `1 `, `2. `, `3-`, `III ` or `3.2 `.
pub fn strip_numbering(name: &str) -> String {
    let trimmed = name.trim();
    let stripped = match NUMBER_PREFIX.find(trimmed) {
        // A glued prefix such as `3CULTURE` matches two letters too far.
        Some(m) if m.as_str().ends_with(|c: char| c.is_ascii_uppercase()) => {
            &trimmed[m.end() - 2..]
        }
        Some(m) => &trimmed[m.end()..],
        None => trimmed,
    };
    let stripped = stripped.trim();
    if stripped.is_empty() {
        trimmed.to_string()
    } else {
        stripped.to_string()
    }
}

/// Paths of every `![alt](path)` reference, in order of appearance.
pub fn image_paths(markdown: &str) -> Vec<String> {
    IMAGE_REF
        .captures_iter(markdown)
        .map(|c| c[1].to_string())
        .collect()
}

/// Every image markdown occurrence verbatim, in order.
pub fn image_markdown(markdown: &str) -> Vec<String> {
    IMAGE_REF
        .find_iter(markdown)
        .map(|m| m.as_str().to_string())
        .collect()
}

/// Canonical `![](path)` reference for a relative image path.
pub fn image_ref(path: &str) -> String {
    format!("![]({path})")
}

/// Recovers the path from a canonical `![](path)` reference.
pub fn image_ref_path(name: &str) -> Option<&str> {
    name.strip_prefix("![](")?.strip_suffix(')')
}

/// Drops HTML tags, keeping only their text content.
pub fn strip_tags(html: &str) -> String {
    collapse_whitespace(&TAG.replace_all(html, " "))
}

/// Splits prose into sentences on `.`, `!` or `?` followed by whitespace or end of text.
pub fn sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut current = String::new();
    let chars: Vec<char> = text.chars().collect();
    for (idx, &c) in chars.iter().enumerate() {
        current.push(c);
        if matches!(c, '.' | '!' | '?') {
            let next = chars.get(idx + 1);
            if next.is_none() || next.is_some_and(|n| n.is_whitespace()) {
                let s = current.trim();
                if !s.is_empty() {
                    out.push(s.to_string());
                }
                current.clear();
            }
        }
    }
    let tail = current.trim();
    if !tail.is_empty() {
        out.push(tail.to_string());
    }
    out
}

/// Escapes `&`, `<`, `>` and `"` for HTML text and attribute values.
pub fn escape_html(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// First `max_words` words of `text`, ending with a period when truncated.
pub fn truncate_words(text: &str, max_words: usize) -> String {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= max_words {
        return words.join(" ");
    }
    let mut out = words[..max_words].join(" ");
    while out.ends_with([',', ';', ':']) {
        out.pop();
    }
    if !out.ends_with(['.', '!', '?']) {
        out.push('.');
    }
    out
}

/// Heading level and text for a Markdown ATX heading line.
pub fn heading(line: &str) -> Option<(usize, &str)> {
    let trimmed = line.trim_start();
    let hashes = trimmed.chars().take_while(|&c| c == '#').count();
    if hashes == 0 || hashes > 6 {
        return None;
    }
    let rest = &trimmed[hashes..];
    if !rest.is_empty() && !rest.starts_with(char::is_whitespace) {
        return None;
    }
    Some((hashes, rest.trim().trim_end_matches('#').trim()))
}

/// Prose without inline heading markers, image refs or bare equation
/// numbers such as `(1)`. A heading's words run until the first
/// capitalized word followed by a lowercase one.
pub fn prose(content: &str) -> String {
    let capital = |t: &str| t.chars().next().is_some_and(char::is_uppercase);
    let tokens: Vec<&str> = content.split_whitespace().collect();
    let mut out = Vec::with_capacity(tokens.len());
    let mut i = 0;
    while i < tokens.len() {
        let t = tokens[i];
        if t.chars().all(|c| c == '#') {
            i += 1;
            if tokens.get(i).is_some_and(|n| n.chars().all(|c| c.is_ascii_digit() || c == '.')) {
                i += 1;
            }
            while i < tokens.len() && capital(tokens[i]) && tokens.get(i + 1).is_some_and(|n| !n.starts_with("![") && capital(n)) {
                i += 1;
            }
            if tokens.get(i + 1).is_none_or(|n| n.starts_with("![")) {
                i += 1;
            }
            continue;
        }
        let cited = i > 0 && matches!(tokens[i - 1].trim_end_matches('.').to_lowercase().as_str(), "eq" | "eqs" | "equation");
        let equation_number =
            !cited && t.len() > 2 && t.starts_with('(') && t.ends_with(')') && t[1..t.len() - 1].chars().all(|c| c.is_ascii_digit());
        if !equation_number && !t.starts_with("![") {
            out.push(t);
        }
        i += 1;
    }
    out.join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbering_prefixes_are_removed() {
        assert_eq!(strip_numbering("1 Introduction"), "Introduction");
        assert_eq!(strip_numbering("2. Method"), "Method");
        assert_eq!(strip_numbering("3-Results"), "Results");
        assert_eq!(strip_numbering("3.2 Ablation"), "Ablation");
        assert_eq!(strip_numbering("III Method"), "Method");
        assert_eq!(strip_numbering("3CULTURE EXPLORER"), "CULTURE EXPLORER");
        assert_eq!(strip_numbering("Introduction"), "Introduction");
        assert_eq!(strip_numbering("42"), "42");
        assert_eq!(strip_numbering("3D Reconstruction"), "3D Reconstruction");
    }

    #[test]
    fn normalization_ignores_emphasis_and_spacing() {
        assert_eq!(normalize_for_match("a  **bold**\n\n_x_ y"), "a bold x y");
    }

    #[test]
    fn image_refs_are_found_in_order() {
        let md = "text ![](images/a.jpg) and ![alt](images/b.png)\n![](c.gif)";
        assert_eq!(image_paths(md), ["images/a.jpg", "images/b.png", "c.gif"]);
        assert_eq!(image_ref_path("![](images/a.jpg)"), Some("images/a.jpg"));
        assert_eq!(image_ref_path("![x](images/a.jpg)"), None);
    }

    #[test]
    fn sentence_split() {
        let s = sentences("One two. Three? Four 3.5 five! tail");
        assert_eq!(s, ["One two.", "Three?", "Four 3.5 five!", "tail"]);
    }

    #[test]
    fn headings() {
        assert_eq!(heading("## 2 Method"), Some((2, "2 Method")));
        assert_eq!(heading("#hashtag"), None);
        assert_eq!(heading("plain"), None);
    }

    #[test]
    fn truncation_adds_terminal_period() {
        assert_eq!(truncate_words("a b c, d", 3), "a b c.");
        assert_eq!(truncate_words("a b", 3), "a b");
    }

    #[test]
    fn prose_drops_inline_headings() {
        let got = prose("### 3.1 Window Model A window closes. ![](a.png) (1) Eq. (1) holds. # 2.2 Step Rule ![](b.png) Done here.");
        assert_eq!(got, "A window closes. Eq. (1) holds. Done here.");
    }
}
