//! Schemas, databases, values, denotations, and query execution.

pub mod database;
pub mod denotation;
#[cfg(feature = "engine")]
pub mod engine;
pub mod repair;
pub mod schema;
pub mod sqltext;
pub mod value;

pub use database::{validate_database, Database, PortableDatabase, RecordRef, Table, ValidationError};
pub use denotation::{denotations_equal, Denotation};
#[cfg(feature = "engine")]
pub use engine::{execute, schema_from_ddl, ExecutionError, Executor};
pub use repair::{repair_database, RepairConfig, RepairError};
pub use schema::{Column, ForeignKey, Schema, SchemaError, SchemaMeta, TableDef};
pub use value::{ColumnType, Value};
