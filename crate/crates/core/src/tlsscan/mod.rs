//! Cipher-suite preference enumeration and security scoring.
//!
//! A suite scores `base + modifier`: base is -1 when any weak primitive is
//! present (RC4, DES, 3DES, RC2, NULL encryption, export grade, MD5 MAC), 0
//! when the key exchange gives no forward secrecy, 1 otherwise; the modifier
//! adds 0.1 for bulk ciphers of at least 256 bits. A server scores the sum of
//! its suites' scores divided by their 1-based preference rank.

mod enumerate;
mod table;
mod wire;

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

pub use enumerate::{enumerate_suites, scan_endpoint, Enumeration, ScanError, ScanOptions};
pub use table::{SuiteComponents, SuiteTable, TableError};
pub use wire::{
    build_client_hello, is_tls13_suite, parse_client_hello, parse_server_hello,
    server_hello_bytes, suite_code, suite_name, ClientHelloInfo, HandshakeStop, HelloVersion,
    ServerHelloInfo, ServerReply, WireError, HANDSHAKE_FAILURE_ALERT, KNOWN_SUITES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum KeyExchange {
    Ecdhe,
    Dhe,
    StaticRsa,
    Other,
}

impl KeyExchange {
    pub fn is_ephemeral(self) -> bool {
        matches!(self, KeyExchange::Ecdhe | KeyExchange::Dhe)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            KeyExchange::Ecdhe => "ECDHE",
            KeyExchange::Dhe => "DHE",
            KeyExchange::StaticRsa => "STATIC_RSA",
            KeyExchange::Other => "OTHER",
        }
    }
}

impl fmt::Display for KeyExchange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Bulk cipher families treated as known-weak.
pub const WEAK_CIPHER_FAMILIES: [&str; 5] = ["RC4", "DES", "3DES", "RC2", "NULL"];
/// MAC algorithms treated as known-weak.
pub const WEAK_MACS: [&str; 1] = ["MD5"];
/// Bulk cipher key length that earns the strength bonus.
pub const STRONG_CIPHER_BITS: u16 = 256;
pub const KEY_LENGTH_BONUS: f64 = 0.1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CipherSuiteInfo {
    pub name: String,
    pub key_exchange: KeyExchange,
    pub cipher_family: String,
    pub cipher_bits: u16,
    pub mac: String,
    pub score: f64,
}

impl CipherSuiteInfo {
    pub fn base_score(&self) -> f64 {
        base_score(&self.name, &self.as_components())
    }

    fn as_components(&self) -> SuiteComponents {
        SuiteComponents {
            key_exchange: self.key_exchange,
            cipher_bits: self.cipher_bits,
            cipher_family: self.cipher_family.clone(),
            mac: self.mac.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScoreError {
    #[error("unknown cipher suite {0}")]
    UnknownSuite(String),
    #[error("cannot score a server without suites")]
    Empty,
    #[error("suite {0} listed more than once")]
    Duplicate(String),
}

fn is_weak(name: &str, c: &SuiteComponents) -> bool {
    WEAK_CIPHER_FAMILIES.contains(&c.cipher_family.as_str())
        || WEAK_MACS.contains(&c.mac.as_str())
        || name.starts_with("EXP")
}

fn base_score(name: &str, c: &SuiteComponents) -> f64 {
    if is_weak(name, c) {
        -1.0
    } else if c.key_exchange.is_ephemeral() {
        1.0
    } else {
        0.0
    }
}

/// Classifies a suite through `table` and attaches its score.
pub fn classify_suite(table: &SuiteTable, name: &str) -> Result<CipherSuiteInfo, ScoreError> {
    let c = table
        .get(name)
        .ok_or_else(|| ScoreError::UnknownSuite(name.to_string()))?;
    let modifier = if c.cipher_bits >= STRONG_CIPHER_BITS {
        KEY_LENGTH_BONUS
    } else {
        0.0
    };
    Ok(CipherSuiteInfo {
        name: name.to_string(),
        key_exchange: c.key_exchange,
        cipher_family: c.cipher_family.clone(),
        cipher_bits: c.cipher_bits,
        mac: c.mac.clone(),
        score: base_score(name, c) + modifier,
    })
}

/// Per-suite score; unknown names are an error, never a silent zero.
pub fn score_suite(table: &SuiteTable, name: &str) -> Result<f64, ScoreError> {
    classify_suite(table, name).map(|s| s.score)
}

/// Rank-weighted sum over a server's preference list (rank 1 first).
pub fn score_server(suites: &[CipherSuiteInfo]) -> Result<f64, ScoreError> {
    if suites.is_empty() {
        return Err(ScoreError::Empty);
    }
    let mut seen = HashSet::new();
    if let Some(dup) = suites.iter().find(|s| !seen.insert(s.name.as_str())) {
        return Err(ScoreError::Duplicate(dup.name.clone()));
    }
    Ok(suites
        .iter()
        .enumerate()
        .map(|(i, s)| s.score / (i + 1) as f64)
        .sum())
}

/// Scores an ordered list of suite names in one go.
pub fn score_preference(table: &SuiteTable, names: &[String]) -> Result<(Vec<CipherSuiteInfo>, f64), ScoreError> {
    let infos = names
        .iter()
        .map(|n| classify_suite(table, n))
        .collect::<Result<Vec<_>, _>>()?;
    let score = score_server(&infos)?;
    Ok((infos, score))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn table() -> SuiteTable {
        SuiteTable::builtin()
    }

    fn infos(names: &[&str]) -> Vec<CipherSuiteInfo> {
        names.iter().map(|n| classify_suite(&table(), n).unwrap()).collect()
    }

    #[test]
    fn worked_example_suites() {
        let t = table();
        assert_eq!(score_suite(&t, "ECDHE-RSA-AES256-SHA384").unwrap(), 1.1);
        assert_eq!(score_suite(&t, "ECDHE-ECDSA-AES128-SHA").unwrap(), 1.0);
        assert_eq!(score_suite(&t, "RC4-SHA").unwrap(), -1.0);
    }

    #[test]
    fn worked_example_server() {
        let s = score_server(&infos(&[
            "ECDHE-RSA-AES256-SHA384",
            "ECDHE-ECDSA-AES128-SHA",
            "RC4-SHA",
        ]))
        .unwrap();
        assert!((s - 1.267).abs() < 1e-3, "{s}");
    }

    #[test]
    fn reversed_example() {
        let s = score_server(&infos(&[
            "RC4-SHA",
            "ECDHE-ECDSA-AES128-SHA",
            "ECDHE-RSA-AES256-SHA384",
        ]))
        .unwrap();
        let by_hand = -1.0 / 1.0 + 1.0 / 2.0 + 1.1 / 3.0;
        assert!((s - by_hand).abs() < 1e-12);
        assert!((s - -0.133).abs() < 1e-3);
    }

    #[test]
    fn single_suite() {
        let s = score_server(&infos(&["ECDHE-ECDSA-AES128-SHA"])).unwrap();
        assert_eq!(s, 1.0);
    }

    #[test]
    fn suites_from_discontinued_list() {
        let t = table();
        let expect = [
            ("DHE-RSA-CAMELLIA256-SHA", 1.1),
            ("DHE-RSA-CAMELLIA128-SHA", 1.0),
            ("CAMELLIA256-SHA", 0.1),
            ("CAMELLIA128-SHA", 0.0),
            ("ECDHE-RSA-RC4-SHA", -1.0),
            ("RC4-MD5", -1.0),
        ];
        for (name, score) in expect {
            assert_eq!(score_suite(&t, name).unwrap(), score, "{name}");
        }
    }

    #[test]
    fn tls13_suites_are_modern() {
        let t = table();
        assert_eq!(score_suite(&t, "TLS_AES_128_GCM_SHA256").unwrap(), 1.0);
        assert_eq!(score_suite(&t, "TLS_AES_256_GCM_SHA384").unwrap(), 1.1);
        assert_eq!(score_suite(&t, "TLS_CHACHA20_POLY1305_SHA256").unwrap(), 1.1);
    }

    #[test]
    fn weakness_dominates_forward_secrecy() {
        let t = table();
        for name in [
            "ECDHE-RSA-DES-CBC3-SHA",
            "EDH-RSA-DES-CBC-SHA",
            "ECDHE-RSA-NULL-SHA",
            "EXP-EDH-RSA-DES-CBC-SHA",
            "NULL-MD5",
        ] {
            assert_eq!(score_suite(&t, name).unwrap(), -1.0, "{name}");
        }
        assert_eq!(score_suite(&t, "ECDH-RSA-AES256-SHA").unwrap(), 0.1);
    }

    #[test]
    fn unknown_and_empty() {
        assert_eq!(
            score_suite(&table(), "MADE-UP-SUITE"),
            Err(ScoreError::UnknownSuite("MADE-UP-SUITE".into()))
        );
        assert_eq!(score_server(&[]), Err(ScoreError::Empty));
        assert!(matches!(
            score_server(&infos(&["RC4-SHA", "RC4-SHA"])),
            Err(ScoreError::Duplicate(_))
        ));
    }

    #[test]
    fn every_table_entry_scores_within_tiers() {
        let t = table();
        for name in t.names() {
            let info = classify_suite(&t, name).unwrap();
            let base = info.base_score();
            assert!([-1.0, 0.0, 1.0].contains(&base));
            let m = info.score - base;
            assert!(m.abs() < 1e-12 || (m - 0.1).abs() < 1e-12);
            assert_eq!(m > 0.05, info.cipher_bits >= 256);
        }
    }

    fn harmonic(n: usize) -> f64 {
        (1..=n).map(|k| 1.0 / k as f64).sum()
    }

    fn arb_preference() -> impl Strategy<Value = Vec<CipherSuiteInfo>> {
        let names: Vec<String> = SuiteTable::builtin().names().map(str::to_string).collect();
        prop::sample::subsequence(names.clone(), 1..20)
            .prop_shuffle()
            .prop_map(|ns| {
                let t = SuiteTable::builtin();
                ns.iter().map(|n| classify_suite(&t, n).unwrap()).collect()
            })
    }

    proptest! {
        #[test]
        fn score_bounds(pref in arb_preference()) {
            let s = score_server(&pref).unwrap();
            let h = harmonic(pref.len());
            prop_assert!(s >= -h - 1e-12 && s <= 1.1 * h + 1e-12);
        }

        #[test]
        fn promoting_a_suite_moves_score_with_its_sign(pref in arb_preference(), pick in any::<prop::sample::Index>()) {
            prop_assume!(pref.len() >= 2);
            let i = pick.index(pref.len() - 1) + 1;
            let before = score_server(&pref).unwrap();
            let mut moved = pref.clone();
            let s = moved.remove(i);
            let sign = s.score;
            moved.insert(i - 1, s);
            let after = score_server(&moved).unwrap();
            // the displaced neighbour moves down one rank; compare the
            // promoted suite's contribution against an equal-score neighbour
            let neighbour = pref[i - 1].score;
            if sign > 0.0 && sign >= neighbour {
                prop_assert!(after >= before - 1e-12);
            }
            if sign < 0.0 && sign <= neighbour {
                prop_assert!(after <= before + 1e-12);
            }
        }
    }

    #[test]
    fn order_matters_not_just_membership() {
        let fwd = score_server(&infos(&[
            "ECDHE-RSA-AES256-SHA384",
            "ECDHE-ECDSA-AES128-SHA",
            "RC4-SHA",
        ]))
        .unwrap();
        let rev = score_server(&infos(&[
            "RC4-SHA",
            "ECDHE-ECDSA-AES128-SHA",
            "ECDHE-RSA-AES256-SHA384",
        ]))
        .unwrap();
        assert!((fwd - rev).abs() > 1.0);
    }
}
