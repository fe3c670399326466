//! A small, fully offline benchmark: three SQLite databases, twelve
//! questions and a scripted model whose answers are fixed per question.
//!
//! Hand-checked outcomes (also asserted by the tests below):
//!
//! | id | db      | level       | what the script does                         | verdict |
//! |----|---------|-------------|----------------------------------------------|---------|
//! | 0  | school  | simple      | same query as gold                           | right   |
//! | 1  | shop    | simple      | MAX subquery instead of ORDER BY/LIMIT       | right   |
//! | 2  | library | simple      | prose only, reflection is prose too          | wrong   |
//! | 3  | school  | moderate    | subquery instead of join                     | right   |
//! | 4  | school  | simple      | adds ORDER BY                                | right   |
//! | 5  | shop    | moderate    | bad column, repaired by reflection           | right   |
//! | 6  | shop    | simple      | `>=` where gold has `>`                      | wrong   |
//! | 7  | library | moderate    | join double-counts a twice-loaned book       | wrong   |
//! | 8  | school  | challenging | rate 1 wrong, rates 0.5 and 0 right: 2 vs 1  | right   |
//! | 9  | library | simple      | COUNT(id) for COUNT(*)                       | right   |
//! | 10 | shop    | moderate    | TOTAL() returns 16.0 against SUM()'s 16      | right   |
//! | 11 | library | challenging | three different answers, tie goes to 0.5     | wrong   |

use std::path::{Path, PathBuf};

use rusqlite::Connection;
use serde_json::json;

use crate::llm::Script;
use crate::pipeline::{rate_label, Difficulty, TaskItem};

const SCHOOL: &str = "
CREATE TABLE class (id INTEGER PRIMARY KEY, name TEXT NOT NULL, teacher TEXT NOT NULL);
CREATE TABLE student (
    id INTEGER PRIMARY KEY,
    name TEXT NOT NULL,
    grade INTEGER NOT NULL,
    class_id INTEGER NOT NULL REFERENCES class(id),
    score INTEGER NOT NULL
);
INSERT INTO class VALUES (1, '10A', 'Ms. Reyes'), (2, '10B', 'Mr. Okafor'), (3, '11A', 'Dr. Lindqvist');
INSERT INTO student VALUES
    (1, 'Ava', 10, 1, 88), (2, 'Ben', 10, 1, 72), (3, 'Cleo', 10, 2, 95), (4, 'Dev', 11, 3, 64),
    (5, 'Eli', 11, 3, 81), (6, 'Fay', 10, 1, 90), (7, 'Gus', 11, 3, 70), (8, 'Hal', 10, 1, 55);
";

const SHOP: &str = "
CREATE TABLE product (id INTEGER PRIMARY KEY, name TEXT NOT NULL, price REAL NOT NULL, category TEXT NOT NULL);
CREATE TABLE orders (id INTEGER PRIMARY KEY, product_id INTEGER NOT NULL REFERENCES product(id), qty INTEGER NOT NULL);
INSERT INTO product VALUES
    (1, 'Kite', 12.5, 'Toys'), (2, 'Puzzle', 10.0, 'Toys'), (3, 'Yo-yo', 3.5, 'Toys'),
    (4, 'Teapot', 24.0, 'Kitchen'), (5, 'Whisk', 6.25, 'Kitchen'), (6, 'Lamp', 31.0, 'Home');
INSERT INTO orders VALUES (1, 1, 2), (2, 4, 1), (3, 6, 3), (4, 3, 5), (5, 1, 1), (6, 5, 4);
";

const LIBRARY: &str = "
CREATE TABLE book (id INTEGER PRIMARY KEY, title TEXT NOT NULL, author TEXT NOT NULL, year INTEGER NOT NULL);
CREATE TABLE loan (id INTEGER PRIMARY KEY, book_id INTEGER NOT NULL REFERENCES book(id), member TEXT NOT NULL);
CREATE VIEW loan_titles AS SELECT l.member, b.title FROM loan l JOIN book b ON b.id = l.book_id;
INSERT INTO book VALUES
    (1, 'Emma', 'Jane Austen', 1815), (2, 'Persuasion', 'Jane Austen', 1817),
    (3, 'Middlemarch', 'George Eliot', 1871), (4, 'Dracula', 'Bram Stoker', 1897),
    (5, 'Ulysses', 'James Joyce', 1922);
INSERT INTO loan VALUES
    (1, 1, 'Iris'), (2, 3, 'Iris'), (3, 1, 'Jon'), (4, 4, 'Jon'), (5, 5, 'Kai'), (6, 2, 'Iris'), (7, 5, 'Jon');
";

pub const DATABASES: [(&str, &str); 3] = [("school", SCHOOL), ("shop", SHOP), ("library", LIBRARY)];

/// What the scripted model answers for the GenerateSql prompt.
#[derive(Clone, Copy, Debug)]
pub enum Generation {
    /// Every branch gets this reply.
    Same(&'static str),
    /// Replies for rates 1, 0.5 and 0.
    PerRate([&'static str; 3]),
}

#[derive(Clone, Copy, Debug)]
pub struct FixtureQuestion {
    pub id: u32,
    pub db_id: &'static str,
    pub difficulty: Difficulty,
    pub question: &'static str,
    pub hint: &'static str,
    pub gold: &'static str,
    pub generation: Generation,
    pub reflection: Option<&'static str>,
    pub tip: Option<&'static str>,
    /// Branch verdicts for rates 1, 0.5 and 0.
    pub branch_correct: [bool; 3],
    /// Verdict after the vote.
    pub correct: bool,
}

use Difficulty::{Challenging, Moderate, Simple};
use Generation::{PerRate, Same};

pub const QUESTIONS: [FixtureQuestion; 12] = [
    FixtureQuestion {
        id: 0,
        db_id: "school",
        difficulty: Simple,
        question: "How many students are there?",
        hint: "",
        gold: "SELECT COUNT(*) FROM student",
        generation: Same("SELECT COUNT(*) FROM student"),
        reflection: None,
        tip: None,
        branch_correct: [true; 3],
        correct: true,
    },
    FixtureQuestion {
        id: 1,
        db_id: "shop",
        difficulty: Simple,
        question: "What is the name of the most expensive product?",
        hint: "most expensive refers to MAX(price)",
        gold: "SELECT name FROM product ORDER BY price DESC LIMIT 1",
        generation: Same("```sql\nSELECT name FROM product WHERE price = (SELECT MAX(price) FROM product)\n```"),
        reflection: None,
        tip: None,
        branch_correct: [true; 3],
        correct: true,
    },
    FixtureQuestion {
        id: 2,
        db_id: "library",
        difficulty: Simple,
        question: "List the titles of books written by Jane Austen.",
        hint: "Jane Austen refers to author = 'Jane Austen'",
        gold: "SELECT title FROM book WHERE author = 'Jane Austen'",
        generation: Same("I am not able to answer questions about literature."),
        reflection: Some("The query could not be produced because the question is outside my knowledge."),
        tip: Some("# Tip:\nAlways answer with a query; the author column of book holds the writer's name."),
        branch_correct: [false; 3],
        correct: false,
    },
    FixtureQuestion {
        id: 3,
        db_id: "school",
        difficulty: Moderate,
        question: "Who teaches the class with the most students?",
        hint: "most students refers to MAX(COUNT(student.id)) grouped by class",
        gold: "SELECT c.teacher FROM class c JOIN student s ON s.class_id = c.id GROUP BY c.id ORDER BY COUNT(*) DESC LIMIT 1",
        generation: Same(
            "SELECT teacher FROM class WHERE id = (SELECT class_id FROM student GROUP BY class_id ORDER BY COUNT(*) DESC LIMIT 1)",
        ),
        reflection: None,
        tip: None,
        branch_correct: [true; 3],
        correct: true,
    },
    FixtureQuestion {
        id: 4,
        db_id: "school",
        difficulty: Simple,
        question: "List the names of students in grade 10.",
        hint: "",
        gold: "SELECT name FROM student WHERE grade = 10",
        generation: Same("SELECT name FROM student WHERE grade = 10 ORDER BY name;"),
        reflection: None,
        tip: None,
        branch_correct: [true; 3],
        correct: true,
    },
    FixtureQuestion {
        id: 5,
        db_id: "shop",
        difficulty: Moderate,
        question: "What is the total quantity ordered for each product category?",
        hint: "total quantity refers to SUM(qty)",
        gold: "SELECT p.category, SUM(o.qty) FROM orders o JOIN product p ON o.product_id = p.id GROUP BY p.category",
        generation: Same(
            "SELECT p.category, SUM(o.quantity) FROM orders o JOIN product p ON o.product_id = p.id GROUP BY p.category",
        ),
        reflection: Some(
            "The orders table names the column qty.\n```sql\nSELECT p.category, SUM(o.qty) FROM product p JOIN orders o ON o.product_id = p.id GROUP BY p.category\n```",
        ),
        tip: None,
        branch_correct: [true; 3],
        correct: true,
    },
    FixtureQuestion {
        id: 6,
        db_id: "shop",
        difficulty: Simple,
        question: "How many products cost more than 10?",
        hint: "cost more than 10 refers to price > 10",
        gold: "SELECT COUNT(*) FROM product WHERE price > 10",
        generation: Same("SELECT COUNT(*) FROM product WHERE price >= 10"),
        reflection: None,
        tip: Some("# Tip:\n\"More than\" is strict; use > rather than >=."),
        branch_correct: [false; 3],
        correct: false,
    },
    FixtureQuestion {
        id: 7,
        db_id: "library",
        difficulty: Moderate,
        question: "What is the average publication year of books that have been loaned?",
        hint: "loaned books are books whose id appears in loan.book_id",
        gold: "SELECT AVG(year) FROM book WHERE id IN (SELECT book_id FROM loan)",
        generation: Same("SELECT AVG(b.year) FROM book b JOIN loan l ON l.book_id = b.id"),
        reflection: None,
        tip: Some("# Tip:\nA join repeats a book once per loan; filter with IN when each book should count once."),
        branch_correct: [false; 3],
        correct: false,
    },
    FixtureQuestion {
        id: 8,
        db_id: "school",
        difficulty: Challenging,
        question: "Which students scored above the average score of their own class?",
        hint: "their own class refers to students sharing the same class_id",
        gold: "SELECT s.name FROM student s WHERE s.score > (SELECT AVG(t.score) FROM student t WHERE t.class_id = s.class_id)",
        generation: PerRate([
            "SELECT name FROM student WHERE score > (SELECT AVG(score) FROM student)",
            "SELECT s.name FROM student s JOIN (SELECT class_id, AVG(score) AS avg_score FROM student GROUP BY class_id) a ON a.class_id = s.class_id WHERE s.score > a.avg_score",
            "```sql\nSELECT s.name\nFROM student s\nJOIN (SELECT class_id, AVG(score) AS avg_score FROM student GROUP BY class_id) a\n  ON a.class_id = s.class_id\nWHERE s.score > a.avg_score;\n```",
        ]),
        reflection: None,
        tip: Some("# Tip:\nCompare against the per-class average, not the school-wide one."),
        branch_correct: [false, true, true],
        correct: true,
    },
    FixtureQuestion {
        id: 9,
        db_id: "library",
        difficulty: Simple,
        question: "How many loans are recorded?",
        hint: "",
        gold: "SELECT COUNT(*) FROM loan",
        generation: Same("SELECT COUNT(id) FROM loan"),
        reflection: None,
        tip: None,
        branch_correct: [true; 3],
        correct: true,
    },
    FixtureQuestion {
        id: 10,
        db_id: "shop",
        difficulty: Moderate,
        question: "What is the total quantity of all orders?",
        hint: "total quantity refers to SUM(qty)",
        gold: "SELECT SUM(qty) FROM orders",
        generation: Same("SELECT TOTAL(qty) FROM orders"),
        reflection: None,
        tip: None,
        branch_correct: [true; 3],
        correct: true,
    },
    FixtureQuestion {
        id: 11,
        db_id: "library",
        difficulty: Challenging,
        question: "Which member borrowed books by the largest number of different authors?",
        hint: "different authors refers to COUNT(DISTINCT author)",
        gold: "SELECT l.member FROM loan l JOIN book b ON b.id = l.book_id GROUP BY l.member ORDER BY COUNT(DISTINCT b.author) DESC LIMIT 1",
        generation: PerRate([
            "SELECT member FROM loan GROUP BY member ORDER BY COUNT(*) DESC",
            "SELECT b.author FROM loan l JOIN book b ON b.id = l.book_id GROUP BY b.author ORDER BY COUNT(*) DESC LIMIT 1",
            "SELECT l.member FROM loan l JOIN book b ON b.id = l.book_id GROUP BY l.member ORDER BY COUNT(DISTINCT b.author) DESC LIMIT 1",
        ]),
        reflection: None,
        tip: Some("# Tip:\nReturn the member, and count distinct authors rather than loans."),
        branch_correct: [false, false, true],
        correct: false,
    },
];

/// Rates the per-branch columns of [`FixtureQuestion`] refer to.
pub const RATES: [f64; 3] = [1.0, 0.5, 0.0];

pub const THOUGHT: &str =
    "I located the tables named in the question, matched its terms to columns using the hint, and kept only the columns asked for.";
const GENERIC_TIP: &str = "# Tip:\nRe-read the question and the hint before choosing columns.";

pub fn items() -> Vec<TaskItem> {
    QUESTIONS
        .iter()
        .map(|q| TaskItem {
            question_id: q.id.to_string(),
            db_id: q.db_id.to_string(),
            question: q.question.to_string(),
            hint: q.hint.to_string(),
            gold_sql: q.gold.to_string(),
            difficulty: q.difficulty,
        })
        .collect()
}

/// Script keyed by question id, so replies do not depend on which
/// demonstrations a branch happened to retrieve.
pub fn script() -> Script {
    let mut s = Script::default();
    s.insert("ThoughtProcess#*", THOUGHT).insert("MistakeTip#*", GENERIC_TIP);
    for q in &QUESTIONS {
        match q.generation {
            Same(reply) => {
                s.insert(format!("GenerateSql@{}", q.id), reply);
            }
            PerRate(replies) => {
                for (rate, reply) in RATES.iter().zip(replies) {
                    s.insert(format!("GenerateSql@{}/{}", q.id, rate_label(*rate)), reply);
                }
            }
        }
        if let Some(r) = q.reflection {
            s.insert(format!("ReflectSql@{}", q.id), r);
        }
        if let Some(t) = q.tip {
            s.insert(format!("MistakeTip@{}", q.id), t);
        }
    }
    s
}

pub fn create_databases(db_root: &Path) -> rusqlite::Result<()> {
    for (name, ddl) in DATABASES {
        let dir = db_root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| rusqlite::Error::ToSqlConversionFailure(Box::new(e)))?;
        let path = dir.join(format!("{name}.sqlite"));
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| rusqlite::Error::ToSqlConversionFailure(Box::new(e)))?;
        }
        Connection::open(&path)?.execute_batch(ddl)?;
    }
    Ok(())
}

/// BIRD-style question file for [`QUESTIONS`].
pub fn dataset_json() -> String {
    let records: Vec<_> = QUESTIONS
        .iter()
        .map(|q| {
            json!({
                "question_id": q.id,
                "db_id": q.db_id,
                "question": q.question,
                "evidence": q.hint,
                "SQL": q.gold,
                "difficulty": q.difficulty.label(),
            })
        })
        .collect();
    let mut s = serde_json::to_string_pretty(&records).expect("fixture serializes");
    s.push('\n');
    s
}

#[derive(Clone, Debug)]
pub struct FixturePaths {
    pub root: PathBuf,
    pub db_root: PathBuf,
    pub dataset: PathBuf,
    pub script: PathBuf,
    pub config: PathBuf,
}

/// Writes databases, question file, script and a run config under `root`.
pub fn write_fixture(root: &Path) -> std::io::Result<FixturePaths> {
    let db_root = root.join("databases");
    create_databases(&db_root).map_err(std::io::Error::other)?;
    let dataset = root.join("dev.json");
    std::fs::write(&dataset, dataset_json())?;
    let script_path = root.join("script.json");
    let mut s = serde_json::to_string_pretty(&script()).expect("script serializes");
    s.push('\n');
    std::fs::write(&script_path, s)?;
    let config = root.join("sqlnb.toml");
    let toml = format!(
        "k = 4\nrates = [1.0, 0.5, 0.0]\ndb_root = {db:?}\nseed_sample_seed = 42\n\n\
         [encoder]\nmode = \"deterministic-hash\"\ndimension = 384\n\n\
         [provider]\nkind = \"scripted\"\nscript = {script:?}\n\n\
         [init]\nkind = \"empty\"\n",
        db = db_root.display().to_string(),
        script = script_path.display().to_string(),
    );
    std::fs::write(&config, toml)?;
    Ok(FixturePaths {
        root: root.to_path_buf(),
        db_root,
        dataset,
        script: script_path,
        config,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::extract_sql;
    use crate::sql::{database_path, execute, outcomes_equal, CanonicalValue, ExecOutcome, RowSet};

    fn text(s: &str) -> CanonicalValue {
        CanonicalValue::Text(s.into())
    }

    fn int(i: i64) -> CanonicalValue {
        CanonicalValue::Integer(i)
    }

    fn one_col(values: &[CanonicalValue]) -> ExecOutcome {
        ExecOutcome::Rows(RowSet::new(1, values.iter().map(|v| vec![v.clone()])))
    }

    // Gold results worked out by hand from the INSERT statements above.
    fn hand_gold(id: u32) -> ExecOutcome {
        match id {
            0 => one_col(&[int(8)]),
            1 => one_col(&[text("Lamp")]),
            2 => one_col(&[text("Emma"), text("Persuasion")]),
            3 => one_col(&[text("Ms. Reyes")]),
            4 => one_col(&[text("Ava"), text("Ben"), text("Cleo"), text("Fay"), text("Hal")]),
            5 => ExecOutcome::Rows(RowSet::new(
                2,
                [
                    vec![text("Toys"), int(8)],
                    vec![text("Kitchen"), int(5)],
                    vec![text("Home"), int(3)],
                ],
            )),
            6 => one_col(&[int(3)]),
            // (1815 + 1817 + 1871 + 1897 + 1922) / 5
            7 => one_col(&[CanonicalValue::Real(1864.4)]),
            // class averages 76.25, 95, 71.67
            8 => one_col(&[text("Ava"), text("Fay"), text("Eli")]),
            9 => one_col(&[int(7)]),
            10 => one_col(&[int(16)]),
            // Jon: Austen, Stoker, Joyce; Iris: Austen, Eliot; Kai: Joyce
            11 => one_col(&[text("Jon")]),
            _ => unreachable!(),
        }
    }

    #[test]
    fn verdict_counts_per_difficulty() {
        let count = |d: Difficulty| {
            let of: Vec<_> = QUESTIONS.iter().filter(|q| q.difficulty == d).collect();
            (of.len(), of.iter().filter(|q| q.correct).count())
        };
        assert_eq!(count(Simple), (6, 4));
        assert_eq!(count(Moderate), (4, 3));
        assert_eq!(count(Challenging), (2, 1));
    }

    #[test]
    fn engine_agrees_with_hand_computed_results() {
        let dir = tempfile::tempdir().unwrap();
        create_databases(dir.path()).unwrap();
        for q in &QUESTIONS {
            let db = database_path(dir.path(), q.db_id);
            let gold = execute(&db, q.gold, 5_000).unwrap();
            assert!(outcomes_equal(&gold, &hand_gold(q.id)), "gold of {}: {gold:?}", q.id);

            let replies: Vec<&str> = match q.generation {
                Same(r) => vec![r; 3],
                PerRate(rs) => rs.to_vec(),
            };
            for (b, reply) in replies.iter().enumerate() {
                let mut sql = extract_sql(reply).unwrap_or_default();
                let mut exec = if sql.is_empty() {
                    ExecOutcome::failure("no SQL")
                } else {
                    execute(&db, &sql, 5_000).unwrap()
                };
                if exec.rows().is_none() {
                    sql = extract_sql(q.reflection.expect("failing query needs a reflection")).unwrap_or_default();
                    exec = if sql.is_empty() {
                        ExecOutcome::failure("no SQL")
                    } else {
                        execute(&db, &sql, 5_000).unwrap()
                    };
                }
                assert_eq!(
                    outcomes_equal(&exec, &gold),
                    q.branch_correct[b],
                    "question {} branch {b}: {exec:?}",
                    q.id
                );
            }
        }
    }

    #[test]
    fn wrong_answers_are_wrong_for_the_stated_reason() {
        let dir = tempfile::tempdir().unwrap();
        create_databases(dir.path()).unwrap();
        let run = |db: &str, sql: &str| execute(&database_path(dir.path(), db), sql, 5_000).unwrap();
        assert!(outcomes_equal(&run("shop", "SELECT COUNT(*) FROM product WHERE price >= 10"), &one_col(&[int(4)])));
        // seven loans: 1815*2 + 1871 + 1897 + 1922*2 + 1817
        let joined = run("library", "SELECT AVG(b.year) FROM book b JOIN loan l ON l.book_id = b.id");
        assert!(outcomes_equal(&joined, &one_col(&[CanonicalValue::Real(13059.0 / 7.0)])));
        let total = run("shop", "SELECT TOTAL(qty) FROM orders");
        assert!(matches!(&total, ExecOutcome::Rows(r) if r.rows.iter().next().unwrap()[0] == CanonicalValue::Real(16.0)));
    }

    #[test]
    fn script_and_dataset_round_trip() {
        let s = script();
        assert_eq!(s.responses["GenerateSql@8/0.5"], match QUESTIONS[8].generation {
            PerRate(r) => r[1],
            Same(_) => unreachable!(),
        });
        let dir = tempfile::tempdir().unwrap();
        let paths = write_fixture(dir.path()).unwrap();
        let items = crate::bench::load_items(&paths.dataset, &paths.db_root).unwrap();
        assert_eq!(items, super::items());
        let cfg = crate::bench::RunConfig::load(&paths.config).unwrap();
        assert_eq!(cfg.db_root, paths.db_root);
    }
}
