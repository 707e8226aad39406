//! Output files. Every artifact carries the config hash and seed: CSVs as a
//! leading `#` comment line, JSON as top-level fields.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn comment_line(&self) -> String {
        format!("# config_hash={},seed={}\n", self.config_hash, self.seed)
    }
}

#[derive(Serialize)]
struct Stamped<'a, T: Serialize> {
    config_hash: &'a str,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

pub fn create(path: &Path) -> anyhow::Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

pub fn write_json<T: Serialize>(path: &Path, prov: &Provenance, body: &T) -> anyhow::Result<()> {
    let mut out = create(path)?;
    let stamped = Stamped { config_hash: &prov.config_hash, seed: prov.seed, body };
    serde_json::to_writer_pretty(&mut out, &stamped)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

/// Writes `header` and `rows` after the provenance comment.
pub fn write_csv<I, R>(path: &Path, prov: &Provenance, header: &[&str], rows: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator,
    R::Item: AsRef<[u8]>,
{
    let mut out = create(path)?;
    out.write_all(prov.comment_line().as_bytes())?;
    let mut writer = csv::Writer::from_writer(out);
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn in_dir(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// `data.csv` → `data.json`
pub fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_starts_with_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested/out.csv");
        let prov = Provenance { config_hash: "ab12".into(), seed: 3 };
        write_csv(&path, &prov, &["a", "b"], vec![vec!["1", "2"]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "# config_hash=ab12,seed=3\na,b\n1,2\n");
    }

    #[test]
    fn json_is_stamped() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        let prov = Provenance { config_hash: "ff".into(), seed: 8 };
        #[derive(Serialize)]
        struct Body {
            value: u32,
        }
        write_json(&path, &prov, &Body { value: 5 }).unwrap();
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path).unwrap()).unwrap();
        assert_eq!(v["config_hash"], "ff");
        assert_eq!(v["seed"], 8);
        assert_eq!(v["value"], 5);
    }
}
