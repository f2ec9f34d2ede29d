//! CSV files with a provenance comment line, written atomically.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

pub const SCHEMA: u32 = 1;
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// What every output file records about the run that produced it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub seed: u64,
    pub config_hash: String,
}

impl Provenance {
    pub fn comment(&self) -> String {
        format!(
            "# sm-arena {VERSION} schema={SCHEMA} seed={} config={}\n",
            self.seed, self.config_hash
        )
    }
}

pub type Row = Vec<String>;

/// Encodes rows as CSV text (no comment line).
pub fn encode(header: Option<&[&str]>, rows: &[Row]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(h) = header {
        w.write_record(h).expect("writing to memory");
    }
    for r in rows {
        w.write_record(r).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename,
/// so readers never see a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = tmp_path(path);
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

pub fn write_csv(path: &Path, prov: &Provenance, header: &[&str], rows: &[Row]) -> io::Result<()> {
    let mut bytes = prov.comment().into_bytes();
    bytes.extend(encode(Some(header), rows));
    write_atomic(path, &bytes)
}

/// Reads a CSV with `#` comment lines, returning the header and rows.
pub fn read_csv(path: &Path) -> io::Result<(Vec<String>, Vec<Row>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(to_io)?;
    let header = r.headers().map_err(to_io)?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(to_io)?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn to_io(e: csv::Error) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, e)
}

/// Append-only CSV whose rows arrive in groups; each group is written with a
/// single `write_all` and flushed before the caller records it as done.
pub struct Appender {
    file: File,
}

impl Appender {
    /// Opens `path` for appending, writing the comment and header first if
    /// the file is new or empty.
    pub fn open(path: &Path, prov: &Provenance, header: &[&str]) -> io::Result<Self> {
        let fresh = fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            let mut bytes = prov.comment().into_bytes();
            bytes.extend(encode(Some(header), &[]));
            file.write_all(&bytes)?;
            file.sync_data()?;
        }
        Ok(Appender { file })
    }

    pub fn append(&mut self, rows: &[Row]) -> io::Result<()> {
        self.file.write_all(&encode(None, rows))?;
        self.file.sync_data()
    }
}

/// First line of `path` if it is a provenance comment.
pub fn read_comment(path: &Path) -> io::Result<Option<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .next()
        .filter(|l| l.starts_with('#'))
        .map(str::to_string))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prov() -> Provenance {
        Provenance {
            seed: 9,
            config_hash: "ab".into(),
        }
    }

    #[test]
    fn write_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.csv");
        let rows = vec![vec!["1".to_string(), "a,b".to_string()]];
        write_csv(&p, &prov(), &["k", "v"], &rows).unwrap();
        let (h, r) = read_csv(&p).unwrap();
        assert_eq!(h, vec!["k", "v"]);
        assert_eq!(r, rows);
        assert_eq!(
            read_comment(&p).unwrap().unwrap(),
            format!("# sm-arena {VERSION} schema=1 seed=9 config=ab")
        );
        assert!(!tmp_path(&p).exists());
    }

    #[test]
    fn appender_writes_header_once() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        Appender::open(&p, &prov(), &["a"]).unwrap().append(&[vec!["1".into()]]).unwrap();
        Appender::open(&p, &prov(), &["a"]).unwrap().append(&[vec!["2".into()]]).unwrap();
        let (_, rows) = read_csv(&p).unwrap();
        assert_eq!(rows, vec![vec!["1".to_string()], vec!["2".to_string()]]);
    }
}
