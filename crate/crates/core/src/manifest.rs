//! Run manifests: a `tmps-run v1` line followed by flat `key=value` lines.

use std::io::Write;

use crate::config::KeyValues;
use crate::error::{Error, Result};

pub const MANIFEST_MAGIC: &str = "tmps-run v1";

pub fn write_manifest<W: Write>(entries: &KeyValues, mut w: W) -> std::io::Result<()> {
    writeln!(w, "{MANIFEST_MAGIC}")?;
    w.write_all(entries.to_text().as_bytes())
}

pub fn read_manifest(text: &str) -> Result<KeyValues> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    if first.trim_end() != MANIFEST_MAGIC {
        return Err(Error::parse(1, format!("expected `{MANIFEST_MAGIC}` header")));
    }
    KeyValues::parse_from_line(rest, 2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let mut kv = KeyValues::default();
        kv.set("regime", "tmps");
        kv.set("p", "0.7");
        let mut buf = Vec::new();
        write_manifest(&kv, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "tmps-run v1\nregime=tmps\np=0.7\n");
        assert_eq!(read_manifest(&text).unwrap().to_text(), kv.to_text());
        assert!(read_manifest("tmps-run v2\n").is_err());
        assert!(matches!(
            read_manifest("tmps-run v1\na=1\na=2\n"),
            Err(Error::Parse { line: 3, .. })
        ));
    }
}
