use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::oneshot;

use crate::ServiceError;

/// Append-only files owned by the log writer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFile {
    Fingerprints,
    Predictions,
}

struct Entry {
    file: LogFile,
    line: String,
    done: oneshot::Sender<io::Result<()>>,
}

/// Single writer thread for the append-only logs. Lines queued while a
/// write is in progress are committed together with one fsync per file.
pub struct LogWriter {
    tx: Option<mpsc::Sender<Entry>>,
    thread: Option<JoinHandle<()>>,
}

impl LogWriter {
    pub fn open(fingerprints: &Path, predictions: &Path) -> Result<Self, ServiceError> {
        let open = |p: &Path| OpenOptions::new().create(true).append(true).open(p);
        let mut files = [open(fingerprints)?, open(predictions)?];
        let (tx, rx) = mpsc::channel::<Entry>();
        let thread = std::thread::Builder::new()
            .name("wifiloc-log".into())
            .spawn(move || {
                while let Ok(first) = rx.recv() {
                    let mut batch = vec![first];
                    batch.extend(rx.try_iter());
                    let result = commit(&mut files, &batch);
                    if let Err(e) = &result {
                        log::error!("log commit failed: {e}");
                    }
                    for entry in batch {
                        let r = match &result {
                            Ok(()) => Ok(()),
                            Err(e) => Err(io::Error::new(e.kind(), e.to_string())),
                        };
                        let _ = entry.done.send(r);
                    }
                }
            })?;
        Ok(LogWriter {
            tx: Some(tx),
            thread: Some(thread),
        })
    }

    /// Queues one line. The order of `append` calls is the order on disk;
    /// the receiver resolves once the line is durable.
    pub fn append(&self, file: LogFile, line: String) -> oneshot::Receiver<io::Result<()>> {
        let (done, rx) = oneshot::channel();
        let entry = Entry { file, line, done };
        if let Some(tx) = &self.tx {
            if let Err(mpsc::SendError(entry)) = tx.send(entry) {
                let _ = entry.done.send(Err(io::Error::other("log writer stopped")));
            }
        }
        rx
    }
}

fn commit(files: &mut [File; 2], batch: &[Entry]) -> io::Result<()> {
    let mut touched = [false; 2];
    let mut buffers = [Vec::new(), Vec::new()];
    for e in batch {
        let i = match e.file {
            LogFile::Fingerprints => 0,
            LogFile::Predictions => 1,
        };
        buffers[i].extend_from_slice(e.line.as_bytes());
        buffers[i].push(b'\n');
        touched[i] = true;
    }
    for i in 0..2 {
        if touched[i] {
            files[i].write_all(&buffers[i])?;
            files[i].sync_data()?;
        }
    }
    Ok(())
}

impl Drop for LogWriter {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Writes `bytes` to `path` via a synced temporary file and a rename, so
/// readers see either the old or the new content.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    if let Some(dir) = path.parent() {
        // Persist the rename itself; not supported everywhere.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

/// Parses a JSON-lines log. A torn final line (crash mid-append) is
/// skipped with a warning; damage anywhere else is an error.
pub fn read_log<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, ServiceError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(e.into()),
    };
    let lines: Vec<String> = BufReader::new(file).lines().collect::<io::Result<_>>()?;
    let last = lines.iter().rposition(|l| !l.trim().is_empty());
    let mut out = Vec::with_capacity(lines.len());
    for (n, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(v) => out.push(v),
            Err(e) if Some(n) == last => {
                log::warn!("{}: ignoring incomplete last line: {e}", path.display());
            }
            Err(e) => {
                return Err(ServiceError::Corrupt(format!("{} line {}: {e}", path.display(), n + 1)));
            }
        }
    }
    Ok(out)
}

pub const REGISTRY_SCHEMA_VERSION: u32 = 1;

/// Training metadata of one installed model version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub version: u64,
    pub seed: u64,
    /// Content digest of the fingerprints the model was trained on.
    pub dataset_digest: String,
    pub fingerprints: usize,
    pub trained_at_ms: i64,
    pub duration_ms: u64,
}

/// Snapshot of which bundle is live and which are archived.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRegistry {
    pub schema_version: u32,
    pub current: Option<u64>,
    pub versions: Vec<ModelVersion>,
}

impl Default for ModelRegistry {
    fn default() -> Self {
        ModelRegistry {
            schema_version: REGISTRY_SCHEMA_VERSION,
            current: None,
            versions: Vec::new(),
        }
    }
}

impl ModelRegistry {
    pub fn next_version(&self) -> u64 {
        self.versions.last().map_or(1, |v| v.version + 1)
    }

    pub fn current(&self) -> Option<&ModelVersion> {
        let c = self.current?;
        self.versions.iter().find(|v| v.version == c)
    }

    pub fn archived(&self) -> impl Iterator<Item = &ModelVersion> {
        self.versions.iter().filter(move |v| Some(v.version) != self.current)
    }

    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        match fs::read(path) {
            Ok(bytes) => {
                let reg: ModelRegistry = serde_json::from_slice(&bytes)?;
                if reg.schema_version != REGISTRY_SCHEMA_VERSION {
                    return Err(ServiceError::Corrupt(format!(
                        "model registry schema {} is not supported",
                        reg.schema_version
                    )));
                }
                Ok(reg)
            }
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(ModelRegistry::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), ServiceError> {
        atomic_write(path, &serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }
}

pub fn bundle_path(models_dir: &Path, version: u64) -> PathBuf {
    models_dir.join(format!("v{version}.json"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[tokio::test]
    async fn appends_in_order_and_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let (fp, pr) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
        {
            let w = LogWriter::open(&fp, &pr).unwrap();
            let acks: Vec<_> = (0..50)
                .map(|i| w.append(if i % 2 == 0 { LogFile::Fingerprints } else { LogFile::Predictions }, i.to_string()))
                .collect();
            for a in acks {
                a.await.unwrap().unwrap();
            }
        }
        let evens: Vec<u32> = read_log(&fp).unwrap();
        assert_eq!(evens, (0..50).filter(|i| i % 2 == 0).collect::<Vec<_>>());
        let w = LogWriter::open(&fp, &pr).unwrap();
        w.append(LogFile::Fingerprints, "100".into()).await.unwrap().unwrap();
        drop(w);
        assert_eq!(read_log::<u32>(&fp).unwrap().last(), Some(&100));
    }

    #[test]
    fn torn_tail_is_skipped_but_middle_damage_is_not() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("log.jsonl");
        fs::write(&p, "1\n2\n{\"tru").unwrap();
        assert_eq!(read_log::<u32>(&p).unwrap(), vec![1, 2]);
        fs::write(&p, "1\nxx\n3\n").unwrap();
        assert!(read_log::<u32>(&p).is_err());
        assert!(read_log::<u32>(&dir.path().join("missing")).unwrap().is_empty());
    }

    #[test]
    fn registry_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("registry.json");
        let mut reg = ModelRegistry::load(&p).unwrap();
        assert_eq!(reg.next_version(), 1);
        reg.versions.push(ModelVersion {
            version: 1,
            seed: 42,
            dataset_digest: "d".into(),
            fingerprints: 10,
            trained_at_ms: 0,
            duration_ms: 5,
        });
        reg.current = Some(1);
        reg.save(&p).unwrap();
        let back = ModelRegistry::load(&p).unwrap();
        assert_eq!(back, reg);
        assert_eq!(back.next_version(), 2);
        assert_eq!(back.archived().count(), 0);
    }
}
