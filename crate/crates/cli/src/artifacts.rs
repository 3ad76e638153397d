//! Artifact writers. Every artifact carries the config hash: JSON as a
//! top-level key, CSV as a trailing column.

use serde::Serialize;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: &'a str,
    command: &'a str,
    report: &'a T,
}

pub fn write_json<T: Serialize>(dir: &Path, name: &str, hash: &str, command: &str, report: &T) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let env = Envelope {
        config_hash: hash,
        command,
        report,
    };
    let mut text = serde_json::to_string_pretty(&env).map_err(io::Error::other)?;
    text.push('\n');
    fs::write(&path, text)?;
    Ok(path)
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\r', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// RFC 4180: header row, CRLF line ends, `config_hash` appended to every row.
pub fn write_csv(dir: &Path, name: &str, hash: &str, header: &[&str], rows: &[Vec<String>]) -> io::Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(name);
    let mut text = String::new();
    let mut line = |cells: Vec<String>| {
        let joined: Vec<String> = cells.iter().map(|c| csv_field(c)).collect();
        text.push_str(&joined.join(","));
        text.push_str("\r\n");
    };
    let mut head: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    head.push("config_hash".into());
    line(head);
    for row in rows {
        let mut r = row.clone();
        r.push(hash.to_string());
        line(r);
    }
    fs::write(&path, text)?;
    Ok(path)
}

/// Shortest round-trip representation, so reruns are byte-identical.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_crlf() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_csv(
            dir.path(),
            "t.csv",
            "abc",
            &["a", "b"],
            &[vec!["1".into(), "x,\"y\"".into()]],
        )
        .unwrap();
        let text = fs::read_to_string(p).unwrap();
        assert_eq!(text, "a,b,config_hash\r\n1,\"x,\"\"y\"\"\",abc\r\n");
    }

    #[test]
    fn json_envelope_leads_with_hash() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_json(dir.path(), "r.json", "abc", "check", &vec![1, 2]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        assert_eq!(v["config_hash"], "abc");
        assert_eq!(v["report"][1], 2);
    }
}
