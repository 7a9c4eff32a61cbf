//! System prompts sent with each model call, one text asset per task.

pub const SECTION_SPLIT: &str = include_str!("../prompts/section_split.txt");
pub const CLEAN: &str = include_str!("../prompts/clean.txt");
pub const INITIALIZE_DAG: &str = include_str!("../prompts/initialize_dag.txt");
pub const VISUAL_DAG: &str = include_str!("../prompts/visual_dag.txt");
pub const SECTION_DAG: &str = include_str!("../prompts/section_dag.txt");
pub const OUTLINE_INITIALIZE: &str = include_str!("../prompts/outline_initialize.txt");
pub const SLIDE_OUTLINE: &str = include_str!("../prompts/slide_outline.txt");
pub const ARRANGE_TEMPLATE: &str = include_str!("../prompts/arrange_template.txt");
pub const COMMENTER: &str = include_str!("../prompts/commenter.txt");
pub const REVISER: &str = include_str!("../prompts/reviser.txt");
pub const POSTER_OUTLINE: &str = include_str!("../prompts/poster_outline.txt");
pub const GENERATE_PR: &str = include_str!("../prompts/generate_pr.txt");
pub const TITLE_HASHTAG: &str = include_str!("../prompts/title_hashtag.txt");
pub const PR_REFINE: &str = include_str!("../prompts/pr_refine.txt");

/// Every catalog entry by asset name.
pub const CATALOG: [(&str, &str); 14] = [
    ("section_split", SECTION_SPLIT),
    ("clean", CLEAN),
    ("initialize_dag", INITIALIZE_DAG),
    ("visual_dag", VISUAL_DAG),
    ("section_dag", SECTION_DAG),
    ("outline_initialize", OUTLINE_INITIALIZE),
    ("slide_outline", SLIDE_OUTLINE),
    ("arrange_template", ARRANGE_TEMPLATE),
    ("commenter", COMMENTER),
    ("reviser", REVISER),
    ("poster_outline", POSTER_OUTLINE),
    ("generate_pr", GENERATE_PR),
    ("title_hashtag", TITLE_HASHTAG),
    ("pr_refine", PR_REFINE),
];

pub fn get(name: &str) -> Option<&'static str> {
    CATALOG.iter().find(|(n, _)| *n == name).map(|(_, p)| *p)
}

/// Substitutes `{KEY}` placeholders. A prompt without the placeholder gets the
/// value appended after a blank line so the data is never dropped.
pub fn fill(prompt: &str, key: &str, value: &str) -> String {
    let marker = format!("{{{key}}}");
    if prompt.contains(&marker) {
        prompt.replace(&marker, value)
    } else {
        format!("{}\n\n{value}", prompt.trim_end())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_complete_and_nonempty() {
        for (name, text) in CATALOG {
            assert!(text.starts_with("Role:"), "{name}");
        }
        assert_eq!(get("clean"), Some(CLEAN));
        assert_eq!(get("nope"), None);
    }

    #[test]
    fn fill_replaces_or_appends() {
        assert!(fill(GENERATE_PR, "NODE_JSON", "{\"n\":1}").ends_with("{\"n\":1}\n"));
        assert!(!fill(GENERATE_PR, "NODE_JSON", "x").contains("{NODE_JSON}"));
        assert_eq!(fill("a\n", "K", "v"), "a\n\nv");
    }
}
