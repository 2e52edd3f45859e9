use crate::error::{Error, Result};

/// Extraction prompt; `[TEXT]` marks where the input goes.
pub const PROMPT_TEMPLATE: &str = "Please extract entities in the given text and the relations between entities. Let's think step by step. Please return in this form: (entity, relation, entity). Here is the text: [TEXT].";

const PLACEHOLDER: &str = "[TEXT]";

/// Substitutes `text` into the template's single placeholder. A literal
/// `[TEXT]` inside `text` is left untouched.
pub fn build_prompt(text: &str) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::invalid("cannot build an extraction prompt for empty text"));
    }
    let at = PROMPT_TEMPLATE
        .find(PLACEHOLDER)
        .expect("template carries a placeholder");
    let (prefix, rest) = PROMPT_TEMPLATE.split_at(at);
    let suffix = &rest[PLACEHOLDER.len()..];
    let mut out = String::with_capacity(prefix.len() + text.len() + suffix.len());
    out.push_str(prefix);
    out.push_str(text);
    out.push_str(suffix);
    Ok(out)
}
