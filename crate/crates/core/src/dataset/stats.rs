use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::sample::{ImageSample, Split};
use crate::registry::{ClassCode, ClassRegistry};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCount {
    pub class_code: ClassCode,
    pub name: String,
    pub by_source: BTreeMap<String, usize>,
    pub train: usize,
    pub val: usize,
    pub unassigned: usize,
    pub total: usize,
}

/// Per-class counts. Only classes with at least one sample get a row.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassStats {
    pub rows: Vec<ClassCount>,
    pub total: usize,
}

pub fn compute_stats(registry: &ClassRegistry, samples: &[ImageSample]) -> ClassStats {
    let mut rows: BTreeMap<ClassCode, ClassCount> = BTreeMap::new();
    for s in samples {
        let row = rows.entry(s.class_code).or_insert_with(|| ClassCount {
            class_code: s.class_code,
            name: registry.name(s.class_code).unwrap_or("<unknown>").to_string(),
            by_source: BTreeMap::new(),
            train: 0,
            val: 0,
            unassigned: 0,
            total: 0,
        });
        *row.by_source.entry(s.source_id.clone()).or_default() += 1;
        match s.split {
            Some(Split::Train) => row.train += 1,
            Some(Split::Val) => row.val += 1,
            None => row.unassigned += 1,
        }
        row.total += 1;
    }
    ClassStats {
        total: samples.len(),
        rows: rows.into_values().collect(),
    }
}

impl ClassStats {
    pub fn count(&self, code: ClassCode) -> usize {
        self.rows
            .iter()
            .find(|r| r.class_code == code)
            .map_or(0, |r| r.total)
    }

    /// Plain-text table with one column per source, then split counts.
    pub fn render_table(&self) -> String {
        let sources: Vec<String> = {
            let mut s: Vec<String> = self
                .rows
                .iter()
                .flat_map(|r| r.by_source.keys().cloned())
                .collect();
            s.sort();
            s.dedup();
            s
        };
        let name_width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(std::iter::once(5))
            .max()
            .unwrap_or(5);
        let mut out = String::new();
        let _ = write!(out, "{:<4} {:<name_width$}", "code", "class");
        for s in &sources {
            let _ = write!(out, " {s:>10}");
        }
        let _ = writeln!(out, " {:>8} {:>8} {:>8}", "train", "val", "total");
        for r in &self.rows {
            let _ = write!(out, "{:<4} {:<name_width$}", r.class_code, r.name);
            for s in &sources {
                let _ = write!(out, " {:>10}", r.by_source.get(s).copied().unwrap_or(0));
            }
            let _ = writeln!(out, " {:>8} {:>8} {:>8}", r.train, r.val, r.total);
        }
        let _ = writeln!(out, "classes: {}  images: {}", self.rows.len(), self.total);
        out
    }
}
