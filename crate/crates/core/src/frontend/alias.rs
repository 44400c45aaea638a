//! Mnemonic alias canonicalization. The table ships as a data file so the
//! spelling that defines token identity is auditable without reading code.

use std::collections::HashMap;
use std::sync::OnceLock;

const ALIAS_TABLE: &str = include_str!("../../data/mnemonic_aliases.txt");

fn alias_map() -> &'static HashMap<&'static str, &'static str> {
    static MAP: OnceLock<HashMap<&'static str, &'static str>> = OnceLock::new();
    MAP.get_or_init(|| {
        let mut map = HashMap::new();
        for line in ALIAS_TABLE.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let (from, to) = (parts.next(), parts.next());
            if let (Some(from), Some(to)) = (from, to) {
                map.insert(from, to);
            }
        }
        map
    })
}

/// Canonical lowercase spelling of a mnemonic. Unlisted mnemonics pass
/// through unchanged (lowercased).
pub fn canonical_mnemonic(raw: &str) -> String {
    let lower = raw.to_ascii_lowercase();
    match alias_map().get(lower.as_str()) {
        Some(canonical) => (*canonical).to_string(),
        None => lower,
    }
}
