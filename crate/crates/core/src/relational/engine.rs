//! Query execution on an embedded SQLite engine.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rusqlite::types::{ToSqlOutput, ValueRef};
use rusqlite::{params_from_iter, Connection, ToSql};
use thiserror::Error;

use super::database::{Database, Table};
use super::denotation::Denotation;
use super::schema::{Column, ForeignKey, Schema, SchemaError, SchemaMeta, TableDef};
use super::sqltext::has_top_level_order_by;
use super::value::{ColumnType, Value};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(2);

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum ExecutionError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("missing relation or column: {0}")]
    Missing(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("query exceeded its {0:?} budget")]
    Timeout(Duration),
    #[error("statement is not a read-only query")]
    NotReadOnly,
    #[error("engine error: {0}")]
    Engine(String),
}

impl ExecutionError {
    fn classify(err: rusqlite::Error, timeout: Duration) -> Self {
        let msg = err.to_string();
        let lower = msg.to_ascii_lowercase();
        if lower.contains("interrupt") {
            ExecutionError::Timeout(timeout)
        } else if lower.contains("no such") || lower.contains("ambiguous column") {
            ExecutionError::Missing(msg)
        } else if lower.contains("syntax")
            || lower.contains("incomplete input")
            || lower.contains("unrecognized token")
            || lower.contains("multiple statements")
            || lower.contains("multiplestatement")
        {
            ExecutionError::Syntax(msg)
        } else if lower.contains("mismatch")
            || lower.contains("wrong number of arguments")
            || lower.contains("misuse of aggregate")
            || lower.contains("columns")
        {
            ExecutionError::Type(msg)
        } else {
            ExecutionError::Engine(msg)
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("sqlite: {0}")]
    Sqlite(#[from] rusqlite::Error),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("table `{0}` is not part of the schema")]
    UnknownTable(String),
}

struct SqlValue<'a>(&'a Value);

impl ToSql for SqlValue<'_> {
    fn to_sql(&self) -> rusqlite::Result<ToSqlOutput<'_>> {
        Ok(match self.0 {
            Value::Null => ToSqlOutput::Borrowed(ValueRef::Null),
            Value::Integer(i) => ToSqlOutput::Borrowed(ValueRef::Integer(*i)),
            Value::Real(r) => ToSqlOutput::Borrowed(ValueRef::Real(*r)),
            Value::Text(s) | Value::Date(s) => ToSqlOutput::Borrowed(ValueRef::Text(s.as_bytes())),
        })
    }
}

fn read_value(v: ValueRef<'_>) -> Value {
    match v {
        ValueRef::Null => Value::Null,
        ValueRef::Integer(i) => Value::Integer(i),
        ValueRef::Real(r) => Value::Real(r),
        ValueRef::Text(t) => Value::Text(String::from_utf8_lossy(t).into_owned()),
        ValueRef::Blob(b) => Value::Text(b.iter().map(|x| format!("{x:02x}")).collect()),
    }
}

fn quote_ident(name: &str) -> String {
    format!("\"{}\"", name.replace('"', "\"\""))
}

/// An engine connection with a loaded database. Each executor owns its own
/// in-memory connection; create one per thread.
pub struct Executor {
    conn: Connection,
    schema: Schema,
    layout: Vec<(String, Vec<String>)>,
    timeout: Duration,
    origin: Instant,
    deadline: Arc<AtomicU64>,
}

impl Executor {
    pub fn new(schema: &Schema) -> Result<Self, EngineError> {
        Self::with_timeout(schema, DEFAULT_TIMEOUT)
    }

    pub fn with_timeout(schema: &Schema, timeout: Duration) -> Result<Self, EngineError> {
        let conn = Connection::open_in_memory()?;
        let origin = Instant::now();
        let deadline = Arc::new(AtomicU64::new(u64::MAX));
        let d = Arc::clone(&deadline);
        conn.progress_handler(
            1000,
            Some(move || {
                let limit = d.load(Ordering::Relaxed);
                limit != u64::MAX && origin.elapsed().as_nanos() as u64 > limit
            }),
        )?;
        Ok(Executor {
            conn,
            schema: schema.clone(),
            layout: Vec::new(),
            timeout,
            origin,
            deadline,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    fn column_type(&self, table: &str, column: &str) -> ColumnType {
        self.schema
            .table(table)
            .and_then(|t| t.column(column))
            .map(|c| c.ty)
            .unwrap_or(ColumnType::Text)
    }

    /// Replaces the engine contents with `db`.
    pub fn load(&mut self, db: &Database) -> Result<(), EngineError> {
        let layout: Vec<(String, Vec<String>)> = db
            .tables
            .iter()
            .map(|t| (t.name.clone(), t.columns.clone()))
            .collect();
        for t in &db.tables {
            if self.schema.table(&t.name).is_none() {
                return Err(EngineError::UnknownTable(t.name.clone()));
            }
        }
        if layout != self.layout {
            self.conn.flush_prepared_statement_cache();
            let mut ddl = String::new();
            for (name, _) in &self.layout {
                ddl.push_str(&format!("DROP TABLE IF EXISTS {};\n", quote_ident(name)));
            }
            for (name, cols) in &layout {
                let cols: Vec<String> = cols
                    .iter()
                    .map(|c| format!("{} {}", quote_ident(c), self.column_type(name, c).sql_name()))
                    .collect();
                ddl.push_str(&format!(
                    "CREATE TABLE {} ({});\n",
                    quote_ident(name),
                    cols.join(", ")
                ));
            }
            self.conn.execute_batch(&ddl)?;
            self.layout = layout;
        }
        let tx = self.conn.unchecked_transaction()?;
        for t in &db.tables {
            tx.execute(&format!("DELETE FROM {}", quote_ident(&t.name)), [])?;
            if t.rows.is_empty() || t.columns.is_empty() {
                continue;
            }
            let placeholders = vec!["?"; t.columns.len()].join(", ");
            let mut stmt = tx.prepare_cached(&format!(
                "INSERT INTO {} VALUES ({})",
                quote_ident(&t.name),
                placeholders
            ))?;
            for row in &t.rows {
                stmt.execute(params_from_iter(row.iter().map(SqlValue)))?;
            }
        }
        tx.commit()?;
        Ok(())
    }

    /// Runs one read-only query against the loaded database.
    pub fn run(&self, sql: &str) -> Result<Denotation, ExecutionError> {
        let budget = self.origin.elapsed() + self.timeout;
        self.deadline
            .store(budget.as_nanos() as u64, Ordering::Relaxed);
        let result = self.run_inner(sql);
        self.deadline.store(u64::MAX, Ordering::Relaxed);
        result
    }

    fn run_inner(&self, sql: &str) -> Result<Denotation, ExecutionError> {
        let classify = |e| ExecutionError::classify(e, self.timeout);
        let mut stmt = self.conn.prepare(sql).map_err(classify)?;
        if !stmt.readonly() {
            return Err(ExecutionError::NotReadOnly);
        }
        let columns: Vec<String> = stmt.column_names().iter().map(|c| c.to_string()).collect();
        let n = columns.len();
        if n == 0 {
            return Err(ExecutionError::NotReadOnly);
        }
        let mut rows = stmt.query([]).map_err(classify)?;
        let mut out = Vec::new();
        while let Some(row) = rows.next().map_err(classify)? {
            let mut cells = Vec::with_capacity(n);
            for i in 0..n {
                cells.push(read_value(row.get_ref(i).map_err(classify)?));
            }
            out.push(cells);
        }
        Ok(Denotation::new(columns, out, has_top_level_order_by(sql)))
    }

    /// Loads `db` and runs `sql`.
    pub fn execute_on(&mut self, sql: &str, db: &Database) -> Result<Denotation, ExecutionError> {
        self.load(db)
            .map_err(|e| ExecutionError::Engine(e.to_string()))?;
        self.run(sql)
    }
}

/// One-shot execution of `program` on `db`.
pub fn execute(program: &str, db: &Database, schema: &Schema) -> Result<Denotation, ExecutionError> {
    let mut ex = Executor::new(schema).map_err(|e| ExecutionError::Engine(e.to_string()))?;
    ex.execute_on(program, db)
}

/// Reads a schema from a DDL script plus its sidecar metadata. Column types,
/// NOT NULL, primary keys, single-column UNIQUE constraints and declared
/// foreign keys come from the engine's catalog; the sidecar adds foreign keys
/// the DDL does not declare.
pub fn schema_from_ddl(id: &str, ddl: &str, meta: &SchemaMeta) -> Result<Schema, EngineError> {
    let conn = Connection::open_in_memory()?;
    conn.execute_batch(ddl)?;
    let names: Vec<String> = {
        let mut stmt = conn.prepare(
            "SELECT name FROM sqlite_master WHERE type = 'table' AND name NOT LIKE 'sqlite_%' ORDER BY rowid",
        )?;
        let rows = stmt.query_map([], |r| r.get::<_, String>(0))?;
        rows.collect::<Result<_, _>>()?
    };
    let mut tables = Vec::new();
    let mut fks = Vec::new();
    for name in &names {
        let q = quote_ident(name);
        let mut columns: Vec<Column> = {
            let mut stmt = conn.prepare(&format!("PRAGMA table_info({q})"))?;
            let rows = stmt.query_map([], |r| {
                let cname: String = r.get(1)?;
                let decl: String = r.get::<_, Option<String>>(2)?.unwrap_or_default();
                let notnull: i64 = r.get(3)?;
                let pk: i64 = r.get(5)?;
                Ok((cname, decl, notnull != 0, pk))
            })?;
            let raw: Vec<(String, String, bool, i64)> = rows.collect::<Result<_, _>>()?;
            let pk_cols = raw.iter().filter(|r| r.3 > 0).count();
            raw.into_iter()
                .map(|(cname, decl, notnull, pk)| {
                    let mut c = Column::new(cname, ColumnType::from_declared(&decl));
                    c.not_null = notnull;
                    if pk > 0 && pk_cols == 1 {
                        c = c.primary();
                    } else if pk > 0 {
                        c.not_null = true;
                    }
                    c
                })
                .collect()
        };
        let unique_indexes: Vec<String> = {
            let mut stmt = conn.prepare(&format!("PRAGMA index_list({q})"))?;
            let rows = stmt.query_map([], |r| Ok((r.get::<_, String>(1)?, r.get::<_, i64>(2)?)))?;
            rows.filter_map(|r| r.ok())
                .filter(|(_, unique)| *unique != 0)
                .map(|(n, _)| n)
                .collect()
        };
        for idx in unique_indexes {
            let mut stmt = conn.prepare(&format!("PRAGMA index_info({})", quote_ident(&idx)))?;
            let cols: Vec<String> = stmt
                .query_map([], |r| r.get::<_, String>(2))?
                .collect::<Result<_, _>>()?;
            if let [only] = cols.as_slice() {
                if let Some(c) = columns
                    .iter_mut()
                    .find(|c| c.name.eq_ignore_ascii_case(only) && !c.primary_key)
                {
                    c.unique = true;
                }
            }
        }
        {
            let mut stmt = conn.prepare(&format!("PRAGMA foreign_key_list({q})"))?;
            let rows = stmt.query_map([], |r| {
                Ok((
                    r.get::<_, String>(2)?,
                    r.get::<_, String>(3)?,
                    r.get::<_, Option<String>>(4)?,
                ))
            })?;
            for row in rows {
                let (parent, from, to) = row?;
                fks.push((name.clone(), from, parent, to));
            }
        }
        let mut def = TableDef::new(name.clone(), std::mem::take(&mut columns));
        def.description = meta.descriptions.get(name).cloned();
        tables.push(def);
    }
    let mut foreign_keys = Vec::new();
    for (child, from, parent, to) in fks {
        let to = match to {
            Some(t) => t,
            None => tables
                .iter()
                .find(|t| t.name.eq_ignore_ascii_case(&parent))
                .and_then(|t| t.columns.iter().find(|c| c.primary_key))
                .map(|c| c.name.clone())
                .ok_or_else(|| SchemaError::UnknownColumn(format!("{parent}.<primary key>")))?,
        };
        foreign_keys.push(ForeignKey {
            child_table: child,
            child_column: from,
            parent_table: parent,
            parent_column: to,
        });
    }
    for r in &meta.foreign_keys {
        foreign_keys.push(ForeignKey::new(&r.child, &r.parent)?);
    }
    Ok(Schema::new(id, meta.domain_id.clone(), tables, foreign_keys)?)
}

/// DDL for `schema` (types, keys, uniqueness, foreign keys).
pub fn schema_to_ddl(schema: &Schema) -> String {
    let mut out = String::new();
    for t in &schema.tables {
        let mut parts: Vec<String> = t
            .columns
            .iter()
            .map(|c| {
                let mut s = format!(
                    "{} {}",
                    quote_ident(&c.name),
                    if c.ty == ColumnType::Date { "DATE" } else { c.ty.sql_name() }
                );
                if c.primary_key {
                    s.push_str(" PRIMARY KEY");
                } else if c.unique {
                    s.push_str(" UNIQUE");
                }
                if c.not_null && !c.primary_key {
                    s.push_str(" NOT NULL");
                }
                s
            })
            .collect();
        for fk in schema
            .foreign_keys
            .iter()
            .filter(|fk| fk.child_table == t.name)
        {
            parts.push(format!(
                "FOREIGN KEY ({}) REFERENCES {} ({})",
                quote_ident(&fk.child_column),
                quote_ident(&fk.parent_table),
                quote_ident(&fk.parent_column)
            ));
        }
        out.push_str(&format!(
            "CREATE TABLE {} (\n  {}\n);\n",
            quote_ident(&t.name),
            parts.join(",\n  ")
        ));
    }
    out
}

/// Writes `db` to a native SQLite file (replacing any existing file).
pub fn write_sqlite_file(db: &Database, schema: &Schema, path: &Path) -> Result<(), EngineError> {
    if path.exists() {
        std::fs::remove_file(path).map_err(|e| {
            EngineError::Sqlite(rusqlite::Error::ToSqlConversionFailure(Box::new(e)))
        })?;
    }
    let conn = Connection::open(path)?;
    conn.execute_batch(&schema_to_ddl(schema))?;
    let tx = conn.unchecked_transaction()?;
    for t in &db.tables {
        let cols: Vec<String> = t.columns.iter().map(|c| quote_ident(c)).collect();
        let placeholders = vec!["?"; t.columns.len()].join(", ");
        let mut stmt = tx.prepare(&format!(
            "INSERT INTO {} ({}) VALUES ({})",
            quote_ident(&t.name),
            cols.join(", "),
            placeholders
        ))?;
        for row in &t.rows {
            stmt.execute(params_from_iter(row.iter().map(SqlValue)))?;
        }
    }
    tx.commit()?;
    Ok(())
}

/// Reads every schema table from a native SQLite file, coercing values to
/// the declared column types (dates stay raw; run repair to canonicalize).
pub fn read_sqlite_file(path: &Path, schema: &Schema) -> Result<Database, EngineError> {
    let conn = Connection::open_with_flags(path, rusqlite::OpenFlags::SQLITE_OPEN_READ_ONLY)?;
    let mut tables = Vec::new();
    for def in &schema.tables {
        let cols: Vec<String> = def.columns.iter().map(|c| quote_ident(&c.name)).collect();
        let mut stmt = conn.prepare(&format!(
            "SELECT {} FROM {}",
            cols.join(", "),
            quote_ident(&def.name)
        ))?;
        let n = cols.len();
        let mut rows = stmt.query([])?;
        let mut out = Vec::new();
        while let Some(row) = rows.next()? {
            let mut cells = Vec::with_capacity(n);
            for (i, c) in def.columns.iter().enumerate() {
                let v = read_value(row.get_ref(i)?);
                cells.push(v.clone().coerce(c.ty).unwrap_or(v));
            }
            out.push(cells);
        }
        tables.push(Table {
            name: def.name.clone(),
            columns: def.columns.iter().map(|c| c.name.clone()).collect(),
            rows: out,
        });
    }
    Ok(Database {
        schema_id: schema.id.clone(),
        tables,
    })
}

/// Column types keyed by lowercased `table.column`.
pub fn column_types(schema: &Schema) -> BTreeMap<String, ColumnType> {
    schema
        .record_columns()
        .map(|(t, c)| (format!("{}.{}", t.name, c.name).to_ascii_lowercase(), c.ty))
        .collect()
}
