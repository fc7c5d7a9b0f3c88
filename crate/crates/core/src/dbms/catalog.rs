//! `catalog.json`: table schemas and their bound store partitions.

use serde::{Deserialize, Serialize};

use crate::proxy::ValueType;
use crate::store::ValueLayout;

pub const CATALOG_FILE: &str = "catalog.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ColumnType {
    PlainInt,
    PlainBytes,
    SensitiveInt,
    SensitiveBytes,
}

impl ColumnType {
    pub fn is_sensitive(self) -> bool {
        matches!(self, ColumnType::SensitiveInt | ColumnType::SensitiveBytes)
    }

    pub fn value_type(self) -> ValueType {
        match self {
            ColumnType::PlainInt | ColumnType::SensitiveInt => ValueType::Int64,
            ColumnType::PlainBytes | ColumnType::SensitiveBytes => ValueType::Bytes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub ty: ColumnType,
}

impl Column {
    pub fn new(name: impl Into<String>, ty: ColumnType) -> Self {
        Column {
            name: name.into(),
            ty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub id: u32,
    pub name: String,
    pub columns: Vec<Column>,
    /// Absent for tables without sensitive columns.
    pub partition: Option<u32>,
    pub layout: ValueLayout,
}

impl TableDef {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub tables: Vec<TableDef>,
}

/// Partition layout for a table's sensitive columns: 8-byte slots when all
/// are integers, padded-width slots when all are padded byte strings, slab
/// buckets otherwise.
pub fn layout_for(columns: &[Column], pad_width: Option<u32>) -> ValueLayout {
    let sensitive: Vec<_> = columns.iter().filter(|c| c.ty.is_sensitive()).collect();
    if !sensitive.is_empty() && sensitive.iter().all(|c| c.ty == ColumnType::SensitiveInt) {
        return ValueLayout::FixedWidth(8);
    }
    match pad_width {
        Some(w)
            if !sensitive.is_empty()
                && sensitive.iter().all(|c| c.ty == ColumnType::SensitiveBytes) =>
        {
            ValueLayout::FixedWidth(w)
        }
        _ => ValueLayout::VarLen,
    }
}
