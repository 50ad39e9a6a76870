//! Neighbor queries: a candidate with one aggregation operator or one
//! top-level `WHERE` clause removed.

use crate::relational::engine::Executor;
use crate::relational::sqltext::{tokenize, Token, TokenKind};
use crate::relational::{Database, Schema};

const AGGREGATES: [&str; 5] = ["min", "max", "count", "sum", "avg"];
const CLAUSE_AFTER_WHERE: [&str; 8] = [
    "group", "having", "order", "limit", "union", "intersect", "except", "window",
];

fn matching_paren(toks: &[Token], open: usize) -> Option<usize> {
    let depth = toks[open].depth;
    toks.iter()
        .enumerate()
        .skip(open + 1)
        .find(|(_, t)| t.kind == TokenKind::RParen && t.depth == depth)
        .map(|(i, _)| i)
}

/// Syntactic rewrites only, in order: aggregation removals by position, then
/// `WHERE` removals. Returns `None` when the text does not lex.
pub fn rewrite_neighbors(sql: &str) -> Option<Vec<String>> {
    let toks = tokenize(sql).ok()?;
    let mut out = Vec::new();
    for (i, t) in toks.iter().enumerate() {
        let is_agg = t.kind == TokenKind::Word
            && AGGREGATES
                .iter()
                .any(|a| t.text(sql).eq_ignore_ascii_case(a))
            && toks.get(i + 1).is_some_and(|n| n.kind == TokenKind::LParen);
        if !is_agg {
            continue;
        }
        let Some(close) = matching_paren(&toks, i + 1) else {
            continue;
        };
        let inner = sql[toks[i + 1].end..toks[close].start].trim();
        if inner.is_empty() {
            continue;
        }
        out.push(format!("{}{}{}", &sql[..t.start], inner, &sql[toks[close].end..]));
    }
    for (i, t) in toks.iter().enumerate() {
        if t.depth != 0 || !t.is_word(sql, "where") {
            continue;
        }
        let end = toks[i + 1..].iter().find(|n| {
            n.depth == 0
                && (n.kind == TokenKind::Semicolon
                    || (n.kind == TokenKind::Word
                        && CLAUSE_AFTER_WHERE
                            .iter()
                            .any(|k| n.text(sql).eq_ignore_ascii_case(k))))
        });
        let head = sql[..t.start].trim_end();
        let rewritten = match end {
            Some(e) => format!("{head} {}", &sql[e.start..]),
            None => head.to_string(),
        };
        out.push(rewritten);
    }
    Some(out)
}

/// Distinct neighbor queries of `sql` that execute on `db`, excluding the
/// input itself. Unlexable input yields no neighbors.
pub fn neighbor_queries(sql: &str, schema: &Schema, db: &Database) -> Vec<String> {
    let Some(variants) = rewrite_neighbors(sql) else {
        return Vec::new();
    };
    let Ok(mut exec) = Executor::new(schema) else {
        return Vec::new();
    };
    if exec.load(db).is_err() {
        return Vec::new();
    }
    let normalize = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let input = normalize(sql);
    let mut out: Vec<String> = Vec::new();
    for v in variants {
        let n = normalize(&v);
        if n == input || out.iter().any(|o| normalize(o) == n) {
            continue;
        }
        if exec.run(&v).is_ok() {
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relational::{Column, ColumnType, TableDef};

    fn p() -> (Schema, Database) {
        let s = Schema::new(
            "p",
            "d",
            vec![TableDef::new(
                "P",
                vec![
                    Column::new("NAME", ColumnType::Text),
                    Column::new("AGE", ColumnType::Integer),
                    Column::new("SEC", ColumnType::Text),
                ],
            )],
            vec![],
        )
        .unwrap();
        let db = Database::empty(&s);
        (s, db)
    }

    #[test]
    fn drops_aggregate_and_where() {
        let (s, db) = p();
        assert_eq!(
            neighbor_queries("SELECT MAX(AGE) FROM P WHERE SEC='A'", &s, &db),
            vec!["SELECT AGE FROM P WHERE SEC='A'", "SELECT MAX(AGE) FROM P"]
        );
    }

    #[test]
    fn nothing_to_drop() {
        let (s, db) = p();
        assert!(neighbor_queries("SELECT NAME FROM P", &s, &db).is_empty());
    }

    #[test]
    fn count_star_becomes_star() {
        let (s, db) = p();
        assert_eq!(neighbor_queries("SELECT COUNT(*) FROM P", &s, &db), vec!["SELECT * FROM P"]);
    }

    #[test]
    fn where_before_later_clauses() {
        let v = rewrite_neighbors("SELECT sec, COUNT(*) FROM p WHERE age > 3 GROUP BY sec ORDER BY sec").unwrap();
        assert!(v.contains(&"SELECT sec, COUNT(*) FROM p GROUP BY sec ORDER BY sec".to_string()));
        let nested = rewrite_neighbors("SELECT name FROM p WHERE age = (SELECT MIN(age) FROM p WHERE sec = 'a')").unwrap();
        assert_eq!(
            nested,
            vec![
                "SELECT name FROM p WHERE age = (SELECT age FROM p WHERE sec = 'a')".to_string(),
                "SELECT name FROM p".to_string()
            ]
        );
    }

    #[test]
    fn non_executable_rewrites_are_dropped() {
        let (s, db) = p();
        let n = neighbor_queries("SELECT sec FROM P GROUP BY sec ORDER BY COUNT(*) DESC LIMIT 1", &s, &db);
        assert!(n.is_empty(), "{n:?}");
        assert!(neighbor_queries("SELECT 'oops", &s, &db).is_empty());
    }
}
