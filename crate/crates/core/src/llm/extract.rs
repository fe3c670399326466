use super::LlmError;

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Byte offset of the first standalone `SELECT` or `WITH`, case-insensitive.
fn first_keyword(text: &str) -> Option<usize> {
    let bytes = text.as_bytes();
    let lower = text.to_ascii_lowercase();
    let mut best: Option<usize> = None;
    for kw in ["select", "with"] {
        let mut from = 0;
        while let Some(rel) = lower[from..].find(kw) {
            let at = from + rel;
            let end = at + kw.len();
            let starts_word = at == 0 || !is_word_byte(bytes[at - 1]);
            let ends_word = end == bytes.len() || !is_word_byte(bytes[end]);
            if starts_word && ends_word {
                best = Some(best.map_or(at, |b| b.min(at)));
                break;
            }
            from = at + 1;
        }
    }
    best
}

fn is_comment_line(line: &str) -> bool {
    let t = line.trim_start();
    t.starts_with('#') || t.starts_with("--")
}

/// Pulls the SQL statement out of a model reply.
///
/// Starts at the first `SELECT`/`WITH` keyword and runs to the end of the
/// text or the next code fence. Comment lines trailing a terminating
/// semicolon are dropped.
pub fn extract_sql(text: &str) -> Result<String, LlmError> {
    let start = first_keyword(text).ok_or(LlmError::NoSqlFound)?;
    let rest = &text[start..];
    let body = match rest.find("```") {
        Some(fence) => &rest[..fence],
        None => rest,
    };
    let lines: Vec<&str> = body.lines().collect();
    let last_statement = lines
        .iter()
        .rposition(|l| !l.trim().is_empty() && !is_comment_line(l));
    let kept = match last_statement {
        Some(i) if lines[i].trim_end().ends_with(';') => &lines[..=i],
        _ => &lines[..],
    };
    Ok(kept.join("\n").trim().to_string())
}

/// Text after a `# Tip:` marker when present, otherwise the whole reply.
pub fn extract_tip(text: &str) -> String {
    let body = match text.find("# Tip:") {
        Some(at) => &text[at + "# Tip:".len()..],
        None => text,
    };
    body.trim().to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_fences() {
        assert_eq!(extract_sql("```sql\nSELECT 1\n```").unwrap(), "SELECT 1");
    }

    #[test]
    fn strips_prose_prefix() {
        assert_eq!(
            extract_sql("Sure! SELECT name FROM t").unwrap(),
            "SELECT name FROM t"
        );
    }

    #[test]
    fn reports_absence() {
        assert!(matches!(extract_sql("I cannot answer"), Err(LlmError::NoSqlFound)));
        assert!(matches!(extract_sql("selection without sql"), Err(LlmError::NoSqlFound)));
    }

    #[test]
    fn accepts_cte() {
        let out = extract_sql("Here:\nwith x as (select 1) select * from x").unwrap();
        assert_eq!(out, "with x as (select 1) select * from x");
    }

    #[test]
    fn drops_comment_lines_after_semicolon_only() {
        let out = extract_sql("SELECT a\nFROM t;\n-- done\n# note\n").unwrap();
        assert_eq!(out, "SELECT a\nFROM t;");
        let kept = extract_sql("SELECT a\n-- inline\nFROM t").unwrap();
        assert_eq!(kept, "SELECT a\n-- inline\nFROM t");
    }

    #[test]
    fn tip_marker() {
        assert_eq!(extract_tip("# Tip:\nJoin on id."), "Join on id.");
        assert_eq!(extract_tip("  Use DISTINCT "), "Use DISTINCT");
    }

    proptest! {
        #[test]
        fn idempotent(text in "(Sure|select|WITH|from|t|;|\n|-- c|# h|```|sql| |x){0,24}") {
            if let Ok(once) = extract_sql(&text) {
                prop_assert_eq!(extract_sql(&once).unwrap(), once);
            }
        }
    }
}
