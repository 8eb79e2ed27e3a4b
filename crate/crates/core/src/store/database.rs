//! A warehouse bound to a directory: snapshot, journal and writer lock.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use super::codec::{
    encode_journal_entry, journal_header, load_snapshot, read_journal, save_snapshot,
};
use super::{SnapshotHeader, StoreError, Warehouse};

pub const SNAPSHOT_FILE: &str = "warehouse.snap";
pub const JOURNAL_FILE: &str = "warehouse.journal";
pub const LOCK_FILE: &str = "LOCK";

/// Exclusive writer role over a warehouse directory, held as a lock file
/// containing the owner's process id. Released on drop.
#[derive(Debug)]
pub struct WriterLock {
    path: PathBuf,
}

impl WriterLock {
    pub fn acquire(dir: &Path) -> Result<Self, StoreError> {
        let path = dir.join(LOCK_FILE);
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(&path) {
                Ok(mut f) => {
                    writeln!(f, "{}", std::process::id())?;
                    return Ok(WriterLock { path });
                }
                Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
                    if !lock_is_stale(&path) {
                        return Err(StoreError::Locked(path));
                    }
                    tracing::warn!(path = %path.display(), "removing stale writer lock");
                    fs::remove_file(&path)?;
                }
                Err(e) => return Err(e.into()),
            }
        }
        Err(StoreError::Locked(path))
    }
}

impl Drop for WriterLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// A lock is stale when its recorded owner is no longer running. Only
/// decidable where `/proc` exists; elsewhere locks are never stale.
fn lock_is_stale(path: &Path) -> bool {
    let Ok(text) = fs::read_to_string(path) else {
        return false;
    };
    let Ok(pid) = text.trim().parse::<u32>() else {
        return false;
    };
    let proc_root = Path::new("/proc");
    proc_root.join("self").exists() && !proc_root.join(pid.to_string()).exists()
}

/// An open warehouse directory.
///
/// Mutations go through [`Database::warehouse_mut`] and become durable on
/// [`Database::commit`], which appends the queued journal entries and
/// fsyncs. [`Database::checkpoint`] folds the journal into a new snapshot.
#[derive(Debug)]
pub struct Database {
    dir: PathBuf,
    warehouse: Warehouse,
    journal: Option<File>,
    _lock: Option<WriterLock>,
}

impl Database {
    /// Initializes an empty warehouse in `dir`, which must be absent or an
    /// empty directory.
    pub fn create(dir: &Path) -> Result<Self, StoreError> {
        if dir.exists() {
            if fs::read_dir(dir)?.next().is_some() {
                return Err(StoreError::Occupied(dir.to_path_buf()));
            }
        } else {
            fs::create_dir_all(dir)?;
        }
        let lock = WriterLock::acquire(dir)?;
        let warehouse = Warehouse::new();
        save_snapshot(&warehouse, &dir.join(SNAPSHOT_FILE))?;
        let journal = fresh_journal(&dir.join(JOURNAL_FILE))?;
        Ok(Database {
            dir: dir.to_path_buf(),
            warehouse,
            journal: Some(journal),
            _lock: Some(lock),
        })
    }

    /// Opens for writing, taking the writer lock.
    pub fn open(dir: &Path) -> Result<Self, StoreError> {
        let lock = WriterLock::acquire(dir)?;
        let warehouse = recover(dir)?;
        let path = dir.join(JOURNAL_FILE);
        let journal = if path.exists() {
            OpenOptions::new().append(true).open(&path)?
        } else {
            fresh_journal(&path)?
        };
        Ok(Database {
            dir: dir.to_path_buf(),
            warehouse,
            journal: Some(journal),
            _lock: Some(lock),
        })
    }

    /// Opens a consistent view without the writer lock. Mutations can be
    /// made in memory but [`Database::commit`] refuses them.
    pub fn open_read_only(dir: &Path) -> Result<Self, StoreError> {
        Ok(Database {
            dir: dir.to_path_buf(),
            warehouse: recover(dir)?,
            journal: None,
            _lock: None,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn is_read_only(&self) -> bool {
        self.journal.is_none()
    }

    pub fn warehouse(&self) -> &Warehouse {
        &self.warehouse
    }

    pub fn warehouse_mut(&mut self) -> &mut Warehouse {
        &mut self.warehouse
    }

    /// Appends queued journal entries and syncs. Returns how many.
    pub fn commit(&mut self) -> Result<usize, StoreError> {
        if self.warehouse.pending_journal().is_empty() {
            return Ok(0);
        }
        let Some(file) = self.journal.as_mut() else {
            return Err(StoreError::ReadOnly);
        };
        let entries = self.warehouse.take_journal();
        let mut buf = Vec::new();
        for entry in &entries {
            buf.extend_from_slice(&encode_journal_entry(entry));
        }
        file.write_all(&buf)?;
        file.sync_data()?;
        Ok(entries.len())
    }

    /// Commits, writes a fresh snapshot and truncates the journal.
    pub fn checkpoint(&mut self) -> Result<SnapshotHeader, StoreError> {
        if self.journal.is_none() {
            return Err(StoreError::ReadOnly);
        }
        self.commit()?;
        let header = save_snapshot(&self.warehouse, &self.dir.join(SNAPSHOT_FILE))?;
        self.journal = Some(fresh_journal(&self.dir.join(JOURNAL_FILE))?);
        Ok(header)
    }
}

impl Drop for Database {
    fn drop(&mut self) {
        if self.journal.is_some() && !self.warehouse.pending_journal().is_empty() {
            if let Err(e) = self.commit() {
                tracing::error!(error = %e, "commit on close failed");
            }
        }
    }
}

fn fresh_journal(path: &Path) -> Result<File, StoreError> {
    let tmp = path.with_extension("journal.tmp");
    {
        let mut f = File::create(&tmp)?;
        f.write_all(&journal_header())?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(OpenOptions::new().append(true).open(path)?)
}

/// Snapshot plus every journal entry newer than it.
fn recover(dir: &Path) -> Result<Warehouse, StoreError> {
    let snap = dir.join(SNAPSHOT_FILE);
    if !snap.exists() {
        return Err(StoreError::Io(io::Error::new(
            io::ErrorKind::NotFound,
            format!("no warehouse at {}", dir.display()),
        )));
    }
    let mut warehouse = load_snapshot(&snap)?;
    let journal = dir.join(JOURNAL_FILE);
    if journal.exists() {
        for entry in read_journal(&journal)? {
            if entry.seq > warehouse.journal_seq() {
                warehouse.apply_journal(&entry)?;
            }
        }
        warehouse.take_journal();
    }
    Ok(warehouse)
}
