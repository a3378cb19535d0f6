//! Importance of each open challenge per swarm type and topology.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Deserialize;
use thiserror::Error;

const MATRIX_CSV: &str = include_str!("../../data/importance_matrix.csv");
pub const MATRIX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
pub enum MatrixType {
    Static,
    Dynamic,
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
pub enum MatrixTopology {
    Centralised,
    Decentralised,
    Distributed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Deserialize)]
pub enum Challenge {
    SP1,
    SP2,
    SP3,
    SP4,
    PE1,
    PE2,
}

impl MatrixType {
    pub const ALL: [MatrixType; 3] = [MatrixType::Static, MatrixType::Dynamic, MatrixType::Hybrid];
}

impl MatrixTopology {
    pub const ALL: [MatrixTopology; 3] = [MatrixTopology::Centralised, MatrixTopology::Decentralised, MatrixTopology::Distributed];
}

impl Challenge {
    pub const ALL: [Challenge; 6] = [Challenge::SP1, Challenge::SP2, Challenge::SP3, Challenge::SP4, Challenge::PE1, Challenge::PE2];
}

macro_rules! display_debug {
    ($($t:ty),*) => {$(
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                fmt::Debug::fmt(self, f)
            }
        }
        impl FromStr for $t {
            type Err = MatrixError;
            fn from_str(s: &str) -> Result<Self, MatrixError> {
                Self::ALL.iter().copied().find(|v| v.to_string().eq_ignore_ascii_case(s))
                    .ok_or_else(|| MatrixError::UnknownKey(s.to_string()))
            }
        }
    )*};
}
display_debug!(MatrixType, MatrixTopology, Challenge);

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MatrixError {
    #[error("unknown matrix key '{0}'")]
    UnknownKey(String),
    #[error("matrix data is corrupt: {0}")]
    Corrupt(String),
}

#[derive(Debug, Deserialize)]
struct Row {
    sod_type: MatrixType,
    topology: MatrixTopology,
    challenge: Challenge,
    importance: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImportanceMatrix {
    cells: BTreeMap<(MatrixType, MatrixTopology, Challenge), u8>,
}

impl ImportanceMatrix {
    /// The matrix shipped with the crate.
    pub fn embedded() -> Self {
        Self::from_csv(MATRIX_CSV).expect("embedded matrix is valid")
    }

    pub fn from_csv(text: &str) -> Result<Self, MatrixError> {
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let mut cells = BTreeMap::new();
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| MatrixError::Corrupt(e.to_string()))?;
            if !(1..=5).contains(&row.importance) {
                return Err(MatrixError::Corrupt(format!("importance {} out of range", row.importance)));
            }
            if cells.insert((row.sod_type, row.topology, row.challenge), row.importance).is_some() {
                return Err(MatrixError::Corrupt("duplicate row".into()));
            }
        }
        if cells.len() != 54 {
            return Err(MatrixError::Corrupt(format!("{} rows, expected 54", cells.len())));
        }
        Ok(Self { cells })
    }

    pub fn get(&self, sod: MatrixType, topology: MatrixTopology, challenge: Challenge) -> u8 {
        self.cells[&(sod, topology, challenge)]
    }

    /// String-keyed lookup (case-insensitive).
    pub fn lookup(&self, sod: &str, topology: &str, challenge: &str) -> Result<u8, MatrixError> {
        Ok(self.get(sod.parse()?, topology.parse()?, challenge.parse()?))
    }

    pub fn rows(&self) -> impl Iterator<Item = (MatrixType, MatrixTopology, Challenge, u8)> + '_ {
        self.cells.iter().map(|(&(s, t, c), &v)| (s, t, c, v))
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Delimited dump: header plus 54 rows.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["sod_type", "topology", "challenge", "importance"]).expect("in-memory write");
        for (s, t, c, v) in self.rows() {
            w.write_record([s.to_string(), t.to_string(), c.to_string(), v.to_string()]).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf8")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_examples() {
        let m = ImportanceMatrix::embedded();
        assert_eq!(m.len(), 54);
        assert_eq!(m.lookup("Static", "Centralised", "SP1"), Ok(2));
        assert_eq!(m.lookup("Dynamic", "Decentralised", "SP4"), Ok(5));
        assert_eq!(m.lookup("Static", "Centralised", "SP2"), Ok(1));
        assert_eq!(m.lookup("Static", "Centralised", "SP3"), Ok(4));
        assert_eq!(m.lookup("Hybrid", "Distributed", "PE2"), Ok(5));
        assert_eq!(m.lookup("Hybrid", "Centralised", "SP2"), Ok(2));
        assert_eq!(m.lookup("Open", "Centralised", "SP1"), Err(MatrixError::UnknownKey("Open".into())));
        assert_eq!(m.lookup("Static", "Mesh", "SP1"), Err(MatrixError::UnknownKey("Mesh".into())));
    }

    #[test]
    fn dump_round_trips() {
        let m = ImportanceMatrix::embedded();
        let text = m.to_csv();
        assert_eq!(text.lines().count(), 55);
        assert_eq!(ImportanceMatrix::from_csv(&text).unwrap(), m);
    }

    #[test]
    fn rejects_incomplete_data() {
        let text: String = MATRIX_CSV.lines().take(20).map(|l| format!("{l}\n")).collect();
        assert!(matches!(ImportanceMatrix::from_csv(&text), Err(MatrixError::Corrupt(_))));
    }
}
