//! Genealogy addressing and realized lineages.
//!
//! A cell is addressed by its path from the root: digit `0` selects the
//! new-pole daughter, digit `1` the old-pole daughter. A [`LineageTree`]
//! stores the trait value of every *alive* cell; dead or never-born cells
//! are simply absent, and the set of stored ids is prefix-closed.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_DEPTH: usize = 63;

/// Which daughter of a dividing cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pole {
    New,
    Old,
}

impl Pole {
    fn digit(self) -> u64 {
        match self {
            Pole::New => 0,
            Pole::Old => 1,
        }
    }
}

/// Bit-path address of a cell. Ordering is generation first, then
/// lexicographic path order within a generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellId {
    depth: u8,
    bits: u64,
}

impl CellId {
    pub const ROOT: CellId = CellId { depth: 0, bits: 0 };

    pub fn generation(self) -> usize {
        self.depth as usize
    }

    /// Panics when the result would exceed [`MAX_DEPTH`]; use
    /// [`CellId::try_child`] where depth is not already bounded.
    pub fn child(self, pole: Pole) -> CellId {
        self.try_child(pole).expect("cell id depth overflow")
    }

    pub fn try_child(self, pole: Pole) -> Result<CellId> {
        if self.depth as usize >= MAX_DEPTH {
            return Err(Error::DepthOverflow(self.depth as usize + 1));
        }
        Ok(CellId {
            depth: self.depth + 1,
            bits: (self.bits << 1) | pole.digit(),
        })
    }

    pub fn parent(self) -> Option<CellId> {
        if self.depth == 0 {
            None
        } else {
            Some(CellId {
                depth: self.depth - 1,
                bits: self.bits >> 1,
            })
        }
    }

    /// Last digit of the path, `None` for the root.
    pub fn pole(self) -> Option<Pole> {
        if self.depth == 0 {
            None
        } else if self.bits & 1 == 0 {
            Some(Pole::New)
        } else {
            Some(Pole::Old)
        }
    }
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in (0..self.depth).rev() {
            let digit = if (self.bits >> k) & 1 == 1 { '1' } else { '0' };
            write!(f, "{digit}")?;
        }
        Ok(())
    }
}

impl FromStr for CellId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() > MAX_DEPTH {
            return Err(Error::DepthOverflow(s.len()));
        }
        let mut bits = 0u64;
        for ch in s.chars() {
            let digit = match ch {
                '0' => 0,
                '1' => 1,
                _ => return Err(Error::InvalidCellId(s.to_string())),
            };
            bits = (bits << 1) | digit;
        }
        Ok(CellId {
            depth: s.len() as u8,
            bits,
        })
    }
}

/// Which daughters of a cell are alive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fate {
    BothAlive,
    NewOnly,
    OldOnly,
    NoneAlive,
}

/// Mother-daughters triple `(x, y, z)`; a missing daughter is `None`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triple {
    pub mother: f64,
    pub new_pole: Option<f64>,
    pub old_pole: Option<f64>,
}

impl Triple {
    pub fn fate(&self) -> Fate {
        match (self.new_pole.is_some(), self.old_pole.is_some()) {
            (true, true) => Fate::BothAlive,
            (true, false) => Fate::NewOnly,
            (false, true) => Fate::OldOnly,
            (false, false) => Fate::NoneAlive,
        }
    }
}

/// Counts of alive cells of generation `<= n`, classified by fate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SubtreeCounts {
    pub n: usize,
    pub t_star: usize,
    pub t_both: usize,
    pub t_new_only: usize,
    pub t_old_only: usize,
    pub t_none: usize,
}

impl SubtreeCounts {
    fn record(&mut self, fate: Fate) {
        self.t_star += 1;
        match fate {
            Fate::BothAlive => self.t_both += 1,
            Fate::NewOnly => self.t_new_only += 1,
            Fate::OldOnly => self.t_old_only += 1,
            Fate::NoneAlive => self.t_none += 1,
        }
    }
}

/// Realized lineage: trait values of the alive cells.
///
/// Cells are stored per generation in lexicographic order. The tree is
/// immutable once built.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LineageTree {
    generations: Vec<Vec<(CellId, f64)>>,
}

impl LineageTree {
    /// Builds a tree from arbitrary `(id, value)` pairs, rejecting
    /// duplicates, non-finite values and non-prefix-closed inputs.
    pub fn new<I>(cells: I) -> Result<Self>
    where
        I: IntoIterator<Item = (CellId, f64)>,
    {
        let mut cells: Vec<(CellId, f64)> = cells.into_iter().collect();
        cells.sort_by_key(|&(id, _)| id);

        let mut generations: Vec<Vec<(CellId, f64)>> = Vec::new();
        for (idx, &(id, value)) in cells.iter().enumerate() {
            if idx > 0 && cells[idx - 1].0 == id {
                return Err(Error::DuplicateCell(id.to_string()));
            }
            if !value.is_finite() {
                return Err(Error::NonFiniteValue {
                    cell: id.to_string(),
                    value,
                });
            }
            let q = id.generation();
            if let Some(parent) = id.parent() {
                let present = generations
                    .get(q - 1)
                    .is_some_and(|g| g.binary_search_by_key(&parent, |&(c, _)| c).is_ok());
                if !present {
                    return Err(Error::NotPrefixClosed(id.to_string()));
                }
            }
            if generations.len() <= q {
                generations.resize_with(q + 1, Vec::new);
            }
            generations[q].push((id, value));
        }
        Ok(LineageTree { generations })
    }

    /// Caller guarantees sorted, prefix-closed, finite generations without
    /// trailing empty generations.
    pub(crate) fn from_generations_unchecked(mut generations: Vec<Vec<(CellId, f64)>>) -> Self {
        while generations.last().is_some_and(|g| g.is_empty()) {
            generations.pop();
        }
        LineageTree { generations }
    }

    pub fn len(&self) -> usize {
        self.generations.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.generations.is_empty()
    }

    /// Index of the deepest nonempty generation.
    pub fn depth(&self) -> Option<usize> {
        self.generations.len().checked_sub(1)
    }

    pub fn get(&self, id: CellId) -> Option<f64> {
        let gen = self.generations.get(id.generation())?;
        gen.binary_search_by_key(&id, |&(c, _)| c)
            .ok()
            .map(|k| gen[k].1)
    }

    pub fn contains(&self, id: CellId) -> bool {
        self.get(id).is_some()
    }

    /// Alive cells of generation `q` with their values.
    pub fn generation(&self, q: usize) -> &[(CellId, f64)] {
        self.generations.get(q).map_or(&[], Vec::as_slice)
    }

    /// Alive cell ids of generation `q`, in lexicographic order.
    pub fn generation_slice(&self, q: usize) -> Vec<CellId> {
        self.generation(q).iter().map(|&(id, _)| id).collect()
    }

    pub fn generation_size(&self, q: usize) -> usize {
        self.generation(q).len()
    }

    /// `|T*_n|`, the number of alive cells of generation at most `n`.
    pub fn size_up_to(&self, n: usize) -> usize {
        self.generations.iter().take(n + 1).map(Vec::len).sum()
    }

    /// All alive cells in generation-then-lexicographic order.
    pub fn iter(&self) -> impl Iterator<Item = (CellId, f64)> + '_ {
        self.generations.iter().flatten().copied()
    }

    /// Alive cells of generation at most `n`.
    pub fn cells_up_to(&self, n: usize) -> Vec<CellId> {
        self.generations
            .iter()
            .take(n + 1)
            .flatten()
            .map(|&(id, _)| id)
            .collect()
    }

    pub fn triple(&self, id: CellId) -> Result<Triple> {
        let mother = self
            .get(id)
            .ok_or_else(|| Error::AbsentCell(id.to_string()))?;
        let (new_pole, old_pole) = if id.generation() >= MAX_DEPTH {
            (None, None)
        } else {
            (self.get(id.child(Pole::New)), self.get(id.child(Pole::Old)))
        };
        Ok(Triple {
            mother,
            new_pole,
            old_pole,
        })
    }

    /// Triples of every alive cell of generation `q`, in lexicographic order.
    pub fn generation_triples(&self, q: usize) -> Vec<(CellId, Triple)> {
        let daughters = self.generation(q + 1);
        let mut cursor = 0;
        self.generation(q)
            .iter()
            .map(|&(id, mother)| {
                // daughters are sorted, so a single forward sweep finds them
                let mut new_pole = None;
                let mut old_pole = None;
                while cursor < daughters.len() && daughters[cursor].0.bits >> 1 == id.bits {
                    match daughters[cursor].0.pole() {
                        Some(Pole::New) => new_pole = Some(daughters[cursor].1),
                        Some(Pole::Old) => old_pole = Some(daughters[cursor].1),
                        None => unreachable!(),
                    }
                    cursor += 1;
                }
                (
                    id,
                    Triple {
                        mother,
                        new_pole,
                        old_pole,
                    },
                )
            })
            .collect()
    }

    /// Triples of every alive cell of generation at most `n`.
    pub fn triples_up_to(&self, n: usize) -> Vec<(CellId, Triple)> {
        (0..=n).flat_map(|q| self.generation_triples(q)).collect()
    }

    pub fn subtree_counts(&self, n: usize) -> SubtreeCounts {
        let mut counts = SubtreeCounts {
            n,
            ..Default::default()
        };
        for q in 0..=n {
            for (_, t) in self.generation_triples(q) {
                counts.record(t.fate());
            }
        }
        counts
    }

    /// Reads the one-object-per-line interchange format.
    pub fn read_jsonl<R: BufRead>(reader: R) -> Result<Self> {
        let mut cells = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: CellRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            let id = record.id.parse::<CellId>().map_err(|e| Error::Format {
                line: idx + 1,
                reason: e.to_string(),
            })?;
            cells.push((id, record.x));
        }
        LineageTree::new(cells)
    }

    pub fn write_jsonl<W: Write>(&self, mut writer: W) -> Result<()> {
        for (id, x) in self.iter() {
            let record = CellRecord {
                id: id.to_string(),
                x,
            };
            serde_json::to_writer(&mut writer, &record)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CellRecord {
    id: String,
    x: f64,
}
