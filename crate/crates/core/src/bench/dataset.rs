use std::collections::HashSet;
use std::path::Path;

use log::warn;
use serde_json::Value;

use super::BenchError;
use crate::pipeline::{Difficulty, TaskItem};
use crate::sql::database_path;

fn field<'a>(record: &'a Value, name: &str) -> Option<&'a str> {
    record.get(name).and_then(Value::as_str)
}

fn question_id(record: &Value, index: usize) -> String {
    match record.get("question_id") {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => index.to_string(),
    }
}

/// Reads a BIRD-style question file (a JSON array). `evidence` becomes the
/// hint and `SQL` the gold query; a missing `question_id` falls back to the
/// record index and a missing difficulty to `simple`.
pub fn load_items(path: &Path, db_root: &Path) -> Result<Vec<TaskItem>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    let records: Vec<Value> = serde_json::from_str(&text).map_err(|e| BenchError::Dataset {
        index: None,
        reason: format!("{}: {e}", path.display()),
    })?;
    let mut seen = HashSet::new();
    let mut items = Vec::with_capacity(records.len());
    for (index, record) in records.iter().enumerate() {
        let qid = question_id(record, index);
        let bad = |reason: String| BenchError::Dataset {
            index: Some(index),
            reason: format!("question {qid}: {reason}"),
        };
        let required = |name: &str| {
            field(record, name)
                .map(str::to_string)
                .ok_or_else(|| bad(format!("missing string field \"{name}\"")))
        };
        let db_id = required("db_id")?;
        let question = required("question")?;
        let gold_sql = required("SQL")?;
        if gold_sql.trim().is_empty() {
            return Err(bad("empty \"SQL\"".into()));
        }
        let hint = field(record, "evidence").unwrap_or_default().to_string();
        let difficulty = match field(record, "difficulty") {
            Some("simple") => Difficulty::Simple,
            Some("moderate") => Difficulty::Moderate,
            Some("challenging") => Difficulty::Challenging,
            Some(other) => return Err(bad(format!("unknown difficulty \"{other}\""))),
            None => {
                warn!("question {qid} has no difficulty; counting it as simple");
                Difficulty::Simple
            }
        };
        if !seen.insert(qid.clone()) {
            return Err(bad("duplicate question_id".into()));
        }
        let db_file = database_path(db_root, &db_id);
        if !db_file.is_file() {
            return Err(BenchError::UnknownDatabase {
                question_id: qid,
                db_id,
                path: db_file,
            });
        }
        items.push(TaskItem {
            question_id: qid,
            db_id,
            question,
            hint,
            gold_sql,
            difficulty,
        });
    }
    Ok(items)
}

/// Keeps the items named in `ids` (one id per line), in file order.
pub fn select_subset(items: Vec<TaskItem>, ids: &str) -> Vec<TaskItem> {
    let wanted: HashSet<&str> = ids.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
    items
        .into_iter()
        .filter(|i| wanted.contains(i.question_id.as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(json: &str) -> (tempfile::TempDir, std::path::PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let db_dir = dir.path().join("db").join("shop");
        std::fs::create_dir_all(&db_dir).unwrap();
        rusqlite::Connection::open(db_dir.join("shop.sqlite"))
            .unwrap()
            .execute_batch("CREATE TABLE t (x INTEGER);")
            .unwrap();
        let path = dir.path().join("dev.json");
        std::fs::write(&path, json).unwrap();
        (dir, path)
    }

    #[test]
    fn loads_in_file_order() {
        let (dir, path) = setup(
            r#"[
              {"question_id": 7, "db_id": "shop", "question": "a", "evidence": "e", "SQL": "SELECT 1", "difficulty": "moderate"},
              {"question_id": 3, "db_id": "shop", "question": "b", "evidence": "", "SQL": "SELECT 2", "difficulty": "simple"},
              {"question_id": "x9", "db_id": "shop", "question": "c", "SQL": "SELECT 3"}
            ]"#,
        );
        let items = load_items(&path, &dir.path().join("db")).unwrap();
        let ids: Vec<&str> = items.iter().map(|i| i.question_id.as_str()).collect();
        assert_eq!(ids, ["7", "3", "x9"]);
        assert_eq!(items[0].hint, "e");
        assert_eq!(items[0].difficulty, Difficulty::Moderate);
        assert_eq!(items[2].difficulty, Difficulty::Simple);
        let subset = select_subset(items, "x9\n7\n");
        assert_eq!(subset.len(), 2);
        assert_eq!(subset[0].question_id, "7");
    }

    #[test]
    fn missing_sql_names_the_record() {
        let (dir, path) = setup(r#"[{"question_id": 1, "db_id": "shop", "question": "a"}]"#);
        match load_items(&path, &dir.path().join("db")) {
            Err(BenchError::Dataset { index, reason }) => {
                assert_eq!(index, Some(0));
                assert!(reason.contains("SQL"), "{reason}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_database_is_rejected() {
        let (dir, path) = setup(r#"[{"db_id": "nope", "question": "a", "SQL": "SELECT 1"}]"#);
        assert!(matches!(
            load_items(&path, &dir.path().join("db")),
            Err(BenchError::UnknownDatabase { .. })
        ));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let (dir, path) = setup(
            r#"[{"question_id": 1, "db_id": "shop", "question": "a", "SQL": "SELECT 1"},
                {"question_id": 1, "db_id": "shop", "question": "b", "SQL": "SELECT 1"}]"#,
        );
        assert!(load_items(&path, &dir.path().join("db")).is_err());
    }
}
