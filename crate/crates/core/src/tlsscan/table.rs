use std::collections::BTreeMap;
use std::path::Path;

use super::KeyExchange;

const BUILTIN: &str = include_str!("../../data/suites.csv");

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SuiteComponents {
    pub key_exchange: KeyExchange,
    pub cipher_bits: u16,
    pub cipher_family: String,
    pub mac: String,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot read suite table {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Suite name to components, loaded from `name,key_exchange,cipher_bits,cipher_family,mac` lines.
#[derive(Debug, Clone, Default)]
pub struct SuiteTable {
    entries: BTreeMap<String, SuiteComponents>,
}

impl SuiteTable {
    /// The table bundled with the crate.
    pub fn builtin() -> Self {
        Self::parse(BUILTIN).expect("bundled suite table parses")
    }

    pub fn load(path: &Path) -> Result<Self, TableError> {
        let text = std::fs::read_to_string(path).map_err(|source| TableError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, TableError> {
        let mut table = SuiteTable::default();
        table.extend_from(text)?;
        Ok(table)
    }

    /// Adds (or overrides) entries from another table file's text.
    pub fn extend_from(&mut self, text: &str) -> Result<(), TableError> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| TableError::Parse { line: i + 1, msg };
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != 5 {
                return Err(err(format!("expected 5 fields, found {}", f.len())));
            }
            let key_exchange = match f[1] {
                "ECDHE" => KeyExchange::Ecdhe,
                "DHE" => KeyExchange::Dhe,
                "STATIC_RSA" => KeyExchange::StaticRsa,
                "OTHER" => KeyExchange::Other,
                other => return Err(err(format!("unknown key exchange {other:?}"))),
            };
            let cipher_bits = f[2]
                .parse::<u16>()
                .map_err(|_| err(format!("bad cipher bits {:?}", f[2])))?;
            if f[0].is_empty() || f[3].is_empty() || f[4].is_empty() {
                return Err(err("empty field".into()));
            }
            self.entries.insert(
                f[0].to_string(),
                SuiteComponents {
                    key_exchange,
                    cipher_bits,
                    cipher_family: f[3].to_string(),
                    mac: f[4].to_string(),
                },
            );
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&SuiteComponents> {
        self.entries.get(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}
