use std::sync::OnceLock;

use regex::Regex;

use super::symbols::{LONG_PAUSE, SHORT_PAUSE, SLURRED};
use crate::error::{Error, Result};

fn punctuation() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\p{P}").expect("static regex"))
}

fn is_pause(c: char) -> bool {
    c == LONG_PAUSE || c == SHORT_PAUSE || c == SLURRED
}

/// Uppercases, strips intermediate punctuation, collapses whitespace into the
/// standard separator, keeps the `%`/`/`/`+` pause separators, and ends the
/// utterance with `.` or `?`.
///
/// A trailing `?` is preserved; every other terminal mark (including `!`)
/// becomes `.`, and a period is appended when none is present.
pub fn normalize_text(raw: &str) -> Result<String> {
    let upper = raw.to_uppercase();
    let trimmed = upper.trim_end();
    let terminal = if trimmed.ends_with('?') { '?' } else { '.' };

    // Strip the trailing run of terminal punctuation, but not pause marks.
    let mut body = trimmed;
    while let Some(c) = body.chars().last() {
        if punctuation().is_match(c.encode_utf8(&mut [0; 4])) && !is_pause(c) {
            body = &body[..body.len() - c.len_utf8()];
            body = body.trim_end();
        } else {
            break;
        }
    }

    let mut out = String::with_capacity(body.len() + 1);
    let mut pending_space = false;
    for c in body.chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if is_pause(c) {
            // Pause marks replace adjacent spaces.
            pending_space = false;
            while out.ends_with(' ') {
                out.pop();
            }
            out.push(c);
            continue;
        }
        if punctuation().is_match(c.encode_utf8(&mut [0; 4])) {
            continue;
        }
        if pending_space && !out.is_empty() && !out.ends_with(is_pause) {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    let out = out.trim_end().to_string();

    if !out.chars().any(char::is_alphanumeric) {
        return Err(Error::EmptyText(raw.to_string()));
    }
    let mut out = out;
    // A leading pause mark carries no meaning before the first word.
    while out.starts_with(is_pause) {
        out.remove(0);
    }
    out.push(terminal);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pause_annotations_survive() {
        assert_eq!(
            normalize_text("Either way%you should shoot/very slowly%.").unwrap(),
            "EITHER WAY%YOU SHOULD SHOOT/VERY SLOWLY%."
        );
    }

    #[test]
    fn appends_period() {
        assert_eq!(normalize_text("hello").unwrap(), "HELLO.");
    }

    #[test]
    fn strips_intermediate_punctuation() {
        assert_eq!(normalize_text("A, b; c!").unwrap(), "A B C.");
    }

    #[test]
    fn keeps_question_mark() {
        assert_eq!(normalize_text("is it  raining ?").unwrap(), "IS IT RAINING?");
    }

    #[test]
    fn spaces_around_pauses_collapse() {
        assert_eq!(normalize_text("one , % two / three").unwrap(), "ONE%TWO/THREE.");
    }

    #[test]
    fn rejects_empty() {
        assert!(matches!(normalize_text("  ?! "), Err(Error::EmptyText(_))));
        assert!(matches!(normalize_text("%/."), Err(Error::EmptyText(_))));
    }

    proptest! {
        #[test]
        fn idempotent(raw in "[a-zA-Z ,;:!?.%/'\"-]{0,40}") {
            if let Ok(once) = normalize_text(&raw) {
                let twice = normalize_text(&once).unwrap();
                prop_assert_eq!(once, twice);
            }
        }

        #[test]
        fn output_shape(raw in "[a-z]{1,8}( [a-z]{1,8}){0,5}[.?!]?") {
            let out = normalize_text(&raw).unwrap();
            prop_assert!(out.ends_with('.') || out.ends_with('?'));
            prop_assert_eq!(out.to_uppercase(), out.clone());
        }
    }
}
