//! Execution-result equality: rows compare as sets, integral reals match
//! integers, and failures never match anything.

use sql_notebooks::demo;
use sql_notebooks::sql::{database_path, execute, outcomes_equal};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    demo::create_databases(dir.path())?;
    let shop = database_path(dir.path(), "shop");

    let pairs = [
        ("SELECT SUM(qty) FROM orders", "SELECT TOTAL(qty) FROM orders"),
        (
            "SELECT name FROM product WHERE category = 'Toys'",
            "SELECT name FROM product WHERE category = 'Toys' ORDER BY name DESC",
        ),
        ("SELECT category FROM product", "SELECT DISTINCT category FROM product"),
        ("SELECT COUNT(*) FROM product WHERE price > 10", "SELECT COUNT(*) FROM product WHERE price >= 10"),
        ("SELECT nope FROM product", "SELECT nope FROM product"),
    ];
    for (a, b) in pairs {
        let (ra, rb) = (execute(&shop, a, 5_000)?, execute(&shop, b, 5_000)?);
        println!("{}\n  {a}\n  {b}\n", if outcomes_equal(&ra, &rb) { "equal" } else { "different" });
    }

    // the database is opened read-only
    let write = execute(&shop, "DELETE FROM orders", 5_000)?;
    println!("DELETE -> {}", write.error_message(5_000).unwrap_or_default());
    Ok(())
}
