use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Upper bounds imposed by the 64-bit instruction word.
pub const MAX_BANKS: u32 = 16;
pub const MAX_ROWS: u32 = 1 << 24;
pub const MAX_COLUMNS: u32 = 1 << 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GeometryError {
    #[error("geometry field `{field}` must be at least 1")]
    Zero { field: &'static str },
    #[error("geometry field `{field}` = {value} exceeds the limit of {limit}")]
    TooLarge {
        field: &'static str,
        value: u32,
        limit: u32,
    },
    #[error("bank {bank} out of range (device has {num_banks} banks)")]
    Bank { bank: u32, num_banks: u32 },
    #[error("row {row} out of range (device has {num_rows} rows)")]
    Row { row: u32, num_rows: u32 },
    #[error("column {col} out of range (device has {num_columns} columns)")]
    Column { col: u32, num_columns: u32 },
}

/// Bank/row/column organization of a simulated module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DeviceGeometry {
    pub num_banks: u32,
    pub num_rows: u32,
    pub num_columns: u32,
    pub bytes_per_column: u32,
}

impl Default for DeviceGeometry {
    /// 8 banks x 4096 rows x 128 columns x 8 bytes (32 MiB).
    fn default() -> Self {
        Self {
            num_banks: 8,
            num_rows: 4096,
            num_columns: 128,
            bytes_per_column: 8,
        }
    }
}

impl DeviceGeometry {
    pub fn new(
        num_banks: u32,
        num_rows: u32,
        num_columns: u32,
        bytes_per_column: u32,
    ) -> Result<Self, GeometryError> {
        let g = Self {
            num_banks,
            num_rows,
            num_columns,
            bytes_per_column,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        let fields = [
            ("num_banks", self.num_banks, MAX_BANKS),
            ("num_rows", self.num_rows, MAX_ROWS),
            ("num_columns", self.num_columns, MAX_COLUMNS),
            ("bytes_per_column", self.bytes_per_column, 1 << 12),
        ];
        for (field, value, limit) in fields {
            if value == 0 {
                return Err(GeometryError::Zero { field });
            }
            if value > limit {
                return Err(GeometryError::TooLarge {
                    field,
                    value,
                    limit,
                });
            }
        }
        Ok(())
    }

    pub fn row_bytes(&self) -> usize {
        self.num_columns as usize * self.bytes_per_column as usize
    }

    pub fn row_bits(&self) -> u32 {
        self.num_columns * self.bytes_per_column * 8
    }

    pub fn total_rows(&self) -> usize {
        self.num_banks as usize * self.num_rows as usize
    }

    pub fn check_bank(&self, bank: u32) -> Result<(), GeometryError> {
        if bank >= self.num_banks {
            return Err(GeometryError::Bank {
                bank,
                num_banks: self.num_banks,
            });
        }
        Ok(())
    }

    pub fn check_row(&self, row: u32) -> Result<(), GeometryError> {
        if row >= self.num_rows {
            return Err(GeometryError::Row {
                row,
                num_rows: self.num_rows,
            });
        }
        Ok(())
    }

    pub fn check_column(&self, col: u32) -> Result<(), GeometryError> {
        if col >= self.num_columns {
            return Err(GeometryError::Column {
                col,
                num_columns: self.num_columns,
            });
        }
        Ok(())
    }

    /// Flat index of a (bank, row) pair.
    pub fn row_index(&self, bank: u32, row: u32) -> usize {
        bank as usize * self.num_rows as usize + row as usize
    }
}
