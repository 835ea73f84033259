//! Observed datasets with blockwise missingness.
//!
//! Values live in one row-major buffer; unobserved blocks hold `NaN`. A block
//! (modality) is either fully present or fully absent in every row.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{PatternMask, PatternTable, MAX_MODALITIES};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Modality {
    pub name: String,
    pub columns: Vec<String>,
}

/// Ordered modalities and their columns. Column order is modality order.
#[derive(Debug, Clone, PartialEq)]
pub struct Schema {
    modalities: Vec<Modality>,
    offsets: Vec<usize>,
}

impl Schema {
    pub fn new(modalities: Vec<Modality>) -> Result<Self> {
        if modalities.is_empty() {
            return Err(Error::InvalidConfig("schema has no modalities".into()));
        }
        if modalities.len() > MAX_MODALITIES {
            return Err(Error::TooManyModalities { max: MAX_MODALITIES, found: modalities.len() });
        }
        let mut seen = std::collections::HashSet::new();
        let mut offsets = vec![0];
        for m in &modalities {
            if m.columns.is_empty() {
                return Err(Error::InvalidConfig(format!("modality {} has no columns", m.name)));
            }
            if !seen.insert(m.name.clone()) {
                return Err(Error::InvalidConfig(format!("duplicate modality {}", m.name)));
            }
            for c in &m.columns {
                if !seen.insert(format!("\0{c}")) {
                    return Err(Error::InvalidConfig(format!("column {c} listed twice")));
                }
            }
            offsets.push(offsets.last().unwrap() + m.columns.len());
        }
        Ok(Self { modalities, offsets })
    }

    /// Convenience: modality `name_i` with `sizes[i]` columns `name_i_1..`.
    pub fn with_sizes(blocks: &[(&str, usize)]) -> Result<Self> {
        Self::new(
            blocks
                .iter()
                .map(|&(name, n)| Modality {
                    name: name.to_string(),
                    columns: if n == 1 {
                        vec![name.to_string()]
                    } else {
                        (1..=n).map(|j| format!("{name}_{j}")).collect()
                    },
                })
                .collect(),
        )
    }

    pub fn width(&self) -> usize {
        self.modalities.len()
    }

    pub fn n_columns(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn modalities(&self) -> &[Modality] {
        &self.modalities
    }

    pub fn columns_of(&self, modality: usize) -> Range<usize> {
        self.offsets[modality]..self.offsets[modality + 1]
    }

    pub fn modality_index(&self, name: &str) -> Option<usize> {
        self.modalities.iter().position(|m| m.name == name)
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.modalities.iter().flat_map(|m| &m.columns).position(|c| c == name)
    }

    pub fn modality_of_column(&self, column: usize) -> usize {
        self.offsets.partition_point(|&o| o <= column) - 1
    }

    pub fn column_names(&self) -> impl Iterator<Item = &str> {
        self.modalities.iter().flat_map(|m| m.columns.iter().map(String::as_str))
    }

    /// Column indices covered by the modalities of `mask`.
    pub fn columns_in(&self, mask: PatternMask) -> Vec<usize> {
        mask.modalities().flat_map(|m| self.columns_of(m)).collect()
    }

    /// Smallest mask covering the given columns.
    pub fn mask_covering(&self, columns: &[usize]) -> Result<PatternMask> {
        let mods: Vec<usize> = columns.iter().map(|&c| self.modality_of_column(c)).collect();
        PatternMask::from_modalities(self.width(), &mods)
    }
}

/// Borrowed view of one row.
#[derive(Debug, Clone, Copy)]
pub struct RowRef<'a> {
    pub id: u64,
    pub mask: PatternMask,
    /// Full-width values; unobserved blocks are `NaN`.
    pub values: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct ObservedDataset {
    schema: Arc<Schema>,
    ids: Vec<u64>,
    masks: Vec<PatternMask>,
    values: Vec<f64>,
}

impl ObservedDataset {
    pub fn new(schema: Arc<Schema>) -> Self {
        Self { schema, ids: Vec::new(), masks: Vec::new(), values: Vec::new() }
    }

    pub fn with_capacity(schema: Arc<Schema>, rows: usize) -> Self {
        let p = schema.n_columns();
        Self {
            schema,
            ids: Vec::with_capacity(rows),
            masks: Vec::with_capacity(rows),
            values: Vec::with_capacity(rows * p),
        }
    }

    /// Appends a row, deriving its mask from which blocks are non-`NaN`.
    pub fn push_row(&mut self, id: u64, values: &[f64]) -> Result<PatternMask> {
        let p = self.schema.n_columns();
        if values.len() != p {
            return Err(Error::InvalidConfig(format!("row {id} has {} values, expected {p}", values.len())));
        }
        let mut present = Vec::new();
        for (m, modality) in self.schema.modalities().iter().enumerate() {
            let block = &values[self.schema.columns_of(m)];
            let n_obs = block.iter().filter(|v| !v.is_nan()).count();
            if n_obs == block.len() {
                present.push(m);
            } else if n_obs != 0 {
                return Err(Error::PartialBlock { row: id, modality: modality.name.clone() });
            }
        }
        if present.is_empty() {
            return Err(Error::EmptyMask);
        }
        let mask = PatternMask::from_modalities(self.schema.width(), &present)?;
        self.ids.push(id);
        self.masks.push(mask);
        self.values.extend_from_slice(values);
        Ok(mask)
    }

    /// Appends a fully drawn row and then masks out unobserved blocks.
    pub fn push_masked(&mut self, id: u64, full_values: &[f64], mask: PatternMask) {
        let start = self.values.len();
        self.values.extend_from_slice(full_values);
        for m in 0..self.schema.width() {
            if !mask.observes(m) {
                for c in self.schema.columns_of(m) {
                    self.values[start + c] = f64::NAN;
                }
            }
        }
        self.ids.push(id);
        self.masks.push(mask);
    }

    pub fn schema(&self) -> &Arc<Schema> {
        &self.schema
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn masks(&self) -> &[PatternMask] {
        &self.masks
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> RowRef<'_> {
        let p = self.schema.n_columns();
        RowRef { id: self.ids[i], mask: self.masks[i], values: &self.values[i * p..(i + 1) * p] }
    }

    pub fn rows(&self) -> impl Iterator<Item = RowRef<'_>> {
        (0..self.len()).map(move |i| self.row(i))
    }

    pub fn pattern_table(&self) -> Result<PatternTable> {
        PatternTable::from_rows(&self.masks)
    }

    /// New dataset holding the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut out = Self::with_capacity(self.schema.clone(), indices.len());
        let p = self.schema.n_columns();
        for &i in indices {
            out.ids.push(self.ids[i]);
            out.masks.push(self.masks[i]);
            out.values.extend_from_slice(&self.values[i * p..(i + 1) * p]);
        }
        out
    }

    /// Row indices grouped by pattern, patterns in canonical order.
    pub fn indices_by_pattern(&self) -> Vec<(PatternMask, Vec<usize>)> {
        let mut groups: std::collections::BTreeMap<PatternMask, Vec<usize>> = Default::default();
        for (i, &m) in self.masks.iter().enumerate() {
            groups.entry(m).or_default().push(i);
        }
        groups.into_iter().collect()
    }
}
