//! Surface-form normalization shared by the extractor and the graph builder.
//!
//! Two forms exist for every entity or relation string: a *display* form that
//! keeps the original casing, and a *key* form used for equality and
//! deduplication.

/// Trims, collapses internal whitespace, and strips surrounding quotes and
/// trailing periods. Casing is preserved.
pub fn normalize_display(raw: &str) -> String {
    let collapsed = raw.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut s = collapsed.as_str();
    loop {
        let before = s.len();
        s = s.trim();
        for (open, close) in [('"', '"'), ('\'', '\''), ('`', '`'), ('“', '”'), ('‘', '’')] {
            if s.len() >= open.len_utf8() + close.len_utf8()
                && s.starts_with(open)
                && s.ends_with(close)
            {
                s = &s[open.len_utf8()..s.len() - close.len_utf8()];
            }
        }
        s = s.trim_end_matches('.');
        if s.len() == before {
            break;
        }
    }
    s.trim().to_string()
}

/// Comparison key: the display form, lowercased.
pub fn normalize_key(raw: &str) -> String {
    normalize_display(raw).to_lowercase()
}

/// Case-insensitive substring test on normalized keys.
pub fn mentions(haystack: &str, needle: &str) -> bool {
    let needle = normalize_key(needle);
    !needle.is_empty() && haystack.to_lowercase().contains(&needle)
}
