//! Read-only SQLite execution and the result equality shared by scoring and
//! voting.

use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rusqlite::limits::Limit;
use rusqlite::types::ValueRef;
use rusqlite::{Connection, OpenFlags};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const DEFAULT_TIMEOUT_MS: u64 = 30_000;

#[derive(Debug, Error)]
pub enum SqlError {
    #[error("database file not found: {0}")]
    MissingDatabase(PathBuf),
    #[error("cannot read database {path}: {message}")]
    Unreadable { path: PathBuf, message: String },
}

/// One result cell. Blobs are kept as a SHA-256 digest.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum CanonicalValue {
    Null,
    Integer(i64),
    Real(f64),
    Text(String),
    BlobDigest(String),
}

/// Comparison form: integral reals inside i64 range collapse to integers.
#[derive(PartialEq, Eq, PartialOrd, Ord, Hash)]
enum Key<'a> {
    Null,
    Integer(i64),
    Real(u64),
    Text(&'a str),
    Blob(&'a str),
}

fn real_key(r: f64) -> Key<'static> {
    const LIMIT: f64 = 9_223_372_036_854_775_808.0; // 2^63
    if r.fract() == 0.0 && (-LIMIT..LIMIT).contains(&r) {
        return Key::Integer(r as i64);
    }
    Key::Real(r.to_bits())
}

impl CanonicalValue {
    fn key(&self) -> Key<'_> {
        match self {
            CanonicalValue::Null => Key::Null,
            CanonicalValue::Integer(i) => Key::Integer(*i),
            CanonicalValue::Real(r) => real_key(*r),
            CanonicalValue::Text(s) => Key::Text(s),
            CanonicalValue::BlobDigest(d) => Key::Blob(d),
        }
    }

    pub fn blob(bytes: &[u8]) -> Self {
        let digest = Sha256::digest(bytes);
        CanonicalValue::BlobDigest(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    fn from_ref(value: ValueRef<'_>) -> Self {
        match value {
            ValueRef::Null => CanonicalValue::Null,
            ValueRef::Integer(i) => CanonicalValue::Integer(i),
            ValueRef::Real(r) => CanonicalValue::Real(r),
            ValueRef::Text(t) => CanonicalValue::Text(String::from_utf8_lossy(t).into_owned()),
            ValueRef::Blob(b) => CanonicalValue::blob(b),
        }
    }
}

impl PartialEq for CanonicalValue {
    fn eq(&self, other: &Self) -> bool {
        self.key() == other.key()
    }
}

impl Eq for CanonicalValue {}

impl Hash for CanonicalValue {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.key().hash(state)
    }
}

impl PartialOrd for CanonicalValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for CanonicalValue {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key().cmp(&other.key())
    }
}

/// Distinct result tuples plus the row count before deduplication.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RowSet {
    pub arity: usize,
    pub rows: BTreeSet<Vec<CanonicalValue>>,
    pub original_row_count: usize,
}

impl RowSet {
    pub fn new(arity: usize, rows: impl IntoIterator<Item = Vec<CanonicalValue>>) -> Self {
        let mut original_row_count = 0;
        let rows = rows
            .into_iter()
            .inspect(|r| {
                debug_assert_eq!(r.len(), arity);
                original_row_count += 1;
            })
            .collect();
        RowSet {
            arity,
            rows,
            original_row_count,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl PartialEq for RowSet {
    fn eq(&self, other: &Self) -> bool {
        self.arity == other.arity && self.rows == other.rows
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ExecOutcome {
    Rows(RowSet),
    Failure { message: String },
    Timeout,
}

impl ExecOutcome {
    pub fn failure(message: impl Into<String>) -> Self {
        let message = message.into();
        ExecOutcome::Failure {
            message: if message.is_empty() {
                "unknown error".into()
            } else {
                message
            },
        }
    }

    pub fn rows(&self) -> Option<&RowSet> {
        match self {
            ExecOutcome::Rows(r) => Some(r),
            _ => None,
        }
    }

    /// Message for the failure paths, `None` for rows.
    pub fn error_message(&self, timeout_ms: u64) -> Option<String> {
        match self {
            ExecOutcome::Rows(_) => None,
            ExecOutcome::Failure { message } => Some(message.clone()),
            ExecOutcome::Timeout => Some(format!("query timed out after {timeout_ms} ms")),
        }
    }
}

/// True only for two row results that are equal as sets. Failures and
/// timeouts never match, not even themselves.
pub fn outcomes_equal(a: &ExecOutcome, b: &ExecOutcome) -> bool {
    match (a, b) {
        (ExecOutcome::Rows(x), ExecOutcome::Rows(y)) => x == y,
        _ => false,
    }
}

/// `<db_root>/<db_id>/<db_id>.sqlite`
pub fn database_path(db_root: &Path, db_id: &str) -> PathBuf {
    db_root.join(db_id).join(format!("{db_id}.sqlite"))
}

fn open_read_only(db_file: &Path) -> Result<Connection, SqlError> {
    if !db_file.is_file() {
        return Err(SqlError::MissingDatabase(db_file.to_path_buf()));
    }
    let conn = Connection::open_with_flags(
        db_file,
        OpenFlags::SQLITE_OPEN_READ_ONLY | OpenFlags::SQLITE_OPEN_NO_MUTEX,
    )
    .map_err(|e| SqlError::Unreadable {
        path: db_file.to_path_buf(),
        message: e.to_string(),
    })?;
    // untrusted SQL must not reach other files
    let _ = conn.set_limit(Limit::SQLITE_LIMIT_ATTACHED, 0);
    Ok(conn)
}

/// Runs one statement read-only, cancelling it once `timeout_ms` elapses.
pub fn execute(db_file: &Path, sql: &str, timeout_ms: u64) -> Result<ExecOutcome, SqlError> {
    let conn = open_read_only(db_file)?;
    let deadline = Instant::now() + Duration::from_millis(timeout_ms.max(1));
    conn.progress_handler(1_000, Some(move || Instant::now() >= deadline));

    Ok(match run_query(&conn, sql) {
        Ok(rows) => rows,
        Err(e) if is_interrupt(&e) => ExecOutcome::Timeout,
        Err(e) => ExecOutcome::failure(e.to_string()),
    })
}

fn is_interrupt(e: &rusqlite::Error) -> bool {
    matches!(
        e,
        rusqlite::Error::SqliteFailure(f, _) if f.code == rusqlite::ErrorCode::OperationInterrupted
    )
}

fn run_query(conn: &Connection, sql: &str) -> rusqlite::Result<ExecOutcome> {
    let mut stmt = conn.prepare(sql)?;
    let arity = stmt.column_count();
    let mut rows = stmt.query([])?;
    let mut collected = Vec::new();
    while let Some(row) = rows.next()? {
        let tuple = (0..arity)
            .map(|i| row.get_ref(i).map(CanonicalValue::from_ref))
            .collect::<rusqlite::Result<Vec<_>>>()?;
        collected.push(tuple);
    }
    Ok(ExecOutcome::Rows(RowSet::new(arity, collected)))
}

/// DDL of user tables and views, ordered by object name and separated by a
/// blank line.
pub fn schema_text(db_file: &Path) -> Result<String, SqlError> {
    let conn = open_read_only(db_file)?;
    let unreadable = |e: rusqlite::Error| SqlError::Unreadable {
        path: db_file.to_path_buf(),
        message: e.to_string(),
    };
    let mut stmt = conn
        .prepare(
            "SELECT sql FROM sqlite_master \
             WHERE type IN ('table', 'view') AND name NOT LIKE 'sqlite\\_%' ESCAPE '\\' \
             AND sql IS NOT NULL ORDER BY name",
        )
        .map_err(unreadable)?;
    let ddl = stmt
        .query_map([], |r| r.get::<_, String>(0))
        .map_err(unreadable)?
        .collect::<rusqlite::Result<Vec<_>>>()
        .map_err(unreadable)?;
    Ok(ddl.join("\n\n"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.sqlite");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(
            "CREATE TABLE singer (id INTEGER PRIMARY KEY, name TEXT, age REAL, photo BLOB);
             INSERT INTO singer VALUES (1, 'Ann', 30.0, x'00ff'), (2, 'Bob', 41.5, NULL), (3, 'Cy', 30.0, NULL);",
        )
        .unwrap();
        (dir, path)
    }

    fn ints(v: &[i64]) -> ExecOutcome {
        ExecOutcome::Rows(RowSet::new(1, v.iter().map(|i| vec![CanonicalValue::Integer(*i)])))
    }

    #[test]
    fn constant_query() {
        let (_d, db) = fixture();
        let out = execute(&db, "SELECT 1", 1000).unwrap();
        assert!(outcomes_equal(&out, &ints(&[1])));
    }

    #[test]
    fn engine_error_becomes_failure() {
        let (_d, db) = fixture();
        match execute(&db, "SELECT * FROM no_such_table", 1000).unwrap() {
            ExecOutcome::Failure { message } => assert!(message.contains("no such table")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file_is_a_harness_error() {
        let err = execute(Path::new("/nonexistent/x.sqlite"), "SELECT 1", 100).unwrap_err();
        assert!(matches!(err, SqlError::MissingDatabase(_)));
    }

    #[test]
    fn runaway_query_times_out() {
        let (_d, db) = fixture();
        let sql = "WITH RECURSIVE c(x) AS (SELECT 1 UNION ALL SELECT x + 1 FROM c) SELECT count(*) FROM c";
        let start = Instant::now();
        let out = execute(&db, sql, 100).unwrap();
        assert!(matches!(out, ExecOutcome::Timeout), "{out:?}");
        assert!(start.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn writes_are_refused_and_file_untouched() {
        let (_d, db) = fixture();
        let before = std::fs::read(&db).unwrap();
        let out = execute(&db, "DELETE FROM singer", 1000).unwrap();
        assert!(matches!(out, ExecOutcome::Failure { .. }));
        let out = execute(&db, "ATTACH DATABASE 'other.db' AS o", 1000).unwrap();
        assert!(matches!(out, ExecOutcome::Failure { .. }));
        assert_eq!(before, std::fs::read(&db).unwrap());
    }

    #[test]
    fn set_semantics_and_numeric_equality() {
        let (_d, db) = fixture();
        let asc = execute(&db, "SELECT name FROM singer ORDER BY id ASC", 1000).unwrap();
        let desc = execute(&db, "SELECT name FROM singer ORDER BY id DESC", 1000).unwrap();
        assert!(outcomes_equal(&asc, &desc));
        let ages = execute(&db, "SELECT age FROM singer WHERE age = 30", 1000).unwrap();
        assert_eq!(ages.rows().unwrap().len(), 1);
        assert_eq!(ages.rows().unwrap().original_row_count, 2);
        assert!(outcomes_equal(&ages, &ints(&[30])));
    }

    #[test]
    fn failures_never_equal() {
        let f = ExecOutcome::failure("x");
        assert!(!outcomes_equal(&f, &f.clone()));
        assert!(!outcomes_equal(&ExecOutcome::Timeout, &ExecOutcome::Timeout));
        assert!(!outcomes_equal(&f, &ints(&[1])));
    }

    #[test]
    fn arity_matters() {
        let a = ExecOutcome::Rows(RowSet::new(1, Vec::new()));
        let b = ExecOutcome::Rows(RowSet::new(2, Vec::new()));
        assert!(!outcomes_equal(&a, &b));
    }

    #[test]
    fn blobs_compare_by_digest() {
        let (_d, db) = fixture();
        let out = execute(&db, "SELECT photo FROM singer WHERE id = 1", 1000).unwrap();
        let expected = ExecOutcome::Rows(RowSet::new(1, [vec![CanonicalValue::blob(&[0x00, 0xff])]]));
        assert!(outcomes_equal(&out, &expected));
    }

    #[test]
    fn integral_reals_match_integers() {
        assert_eq!(CanonicalValue::Real(-0.0), CanonicalValue::Integer(0));
        assert_eq!(CanonicalValue::Real(7.0), CanonicalValue::Integer(7));
        assert_ne!(CanonicalValue::Real(7.5), CanonicalValue::Integer(7));
        assert_ne!(CanonicalValue::Real(9.3e18), CanonicalValue::Integer(i64::MAX));
        assert_ne!(CanonicalValue::Text("1".into()), CanonicalValue::Integer(1));
    }

    #[test]
    fn schema_is_name_ordered() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.sqlite");
        let conn = Connection::open(&path).unwrap();
        conn.execute_batch(
            "CREATE TABLE b (x INTEGER);
             CREATE TABLE a (y TEXT);
             CREATE VIEW ab AS SELECT y FROM a;
             CREATE INDEX b_x ON b(x);",
        )
        .unwrap();
        drop(conn);
        assert_eq!(
            schema_text(&path).unwrap(),
            "CREATE TABLE a (y TEXT)\n\nCREATE VIEW ab AS SELECT y FROM a\n\nCREATE TABLE b (x INTEGER)"
        );
    }
}
