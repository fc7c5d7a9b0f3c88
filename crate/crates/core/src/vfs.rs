//! Named-file storage used by both zones.
//!
//! Appends are buffered until [`Disk::sync`]; only synced bytes survive
//! [`Disk::crash`]. `write_atomic` is durable on return (write, fsync, rename).
//! [`MemDisk`] is the deterministic medium used by the simulator and tests;
//! [`FsDisk`] maps the same contract onto a real directory.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;

pub trait Disk: Send + Sync {
    /// Current contents (synced bytes followed by buffered appends).
    fn read(&self, name: &str) -> io::Result<Option<Vec<u8>>>;
    fn append(&self, name: &str, bytes: &[u8]) -> io::Result<()>;
    fn sync(&self, name: &str) -> io::Result<()>;
    fn write_atomic(&self, name: &str, bytes: &[u8]) -> io::Result<()>;
    fn remove(&self, name: &str) -> io::Result<()>;
    fn list(&self) -> io::Result<Vec<String>>;
    /// Drops every buffered append, as a power loss would.
    fn crash(&self);
}

pub type SharedDisk = Arc<dyn Disk>;

fn crashed_error() -> io::Error {
    io::Error::new(io::ErrorKind::BrokenPipe, "disk crashed during sync")
}

/// One synced write, as seen by an observer of the storage device.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceWrite {
    pub name: String,
    pub offset: u64,
    pub len: u64,
}

#[derive(Default)]
struct MemFile {
    durable: Vec<u8>,
    pending: Vec<u8>,
}

#[derive(Default)]
struct MemState {
    files: BTreeMap<String, MemFile>,
    /// Remaining synced bytes before a torn sync trips the device.
    torn_budget: Option<u64>,
    fail_next_sync: bool,
    tripped: bool,
    synced_bytes: u64,
    syncs: u64,
    writes: Vec<DeviceWrite>,
    record_writes: bool,
}

/// In-memory disk with an explicit synced/buffered split and fault hooks.
#[derive(Clone, Default)]
pub struct MemDisk {
    state: Arc<Mutex<MemState>>,
}

impl MemDisk {
    pub fn new() -> Self {
        Self::default()
    }

    /// Trips the device once `budget` more bytes have been synced; the sync
    /// that crosses the budget persists only the bytes up to it and fails.
    /// An atomic write that does not fit is dropped whole.
    pub fn arm_torn_sync(&self, budget: u64) {
        self.state.lock().torn_budget = Some(budget);
    }

    pub fn disarm(&self) {
        let mut st = self.state.lock();
        st.torn_budget = None;
        st.fail_next_sync = false;
    }

    pub fn fail_next_sync(&self) {
        self.state.lock().fail_next_sync = true;
    }

    /// True once a torn sync has fired and the device refuses further writes.
    pub fn tripped(&self) -> bool {
        self.state.lock().tripped
    }

    pub fn synced_bytes(&self) -> u64 {
        self.state.lock().synced_bytes
    }

    pub fn sync_count(&self) -> u64 {
        self.state.lock().syncs
    }

    pub fn durable_len(&self, name: &str) -> Option<u64> {
        self.state
            .lock()
            .files
            .get(name)
            .map(|f| f.durable.len() as u64)
    }

    /// Cuts a file's durable contents to `len` bytes (torn-tail test hook).
    pub fn truncate_durable(&self, name: &str, len: u64) {
        let mut st = self.state.lock();
        if let Some(f) = st.files.get_mut(name) {
            f.durable.truncate(len as usize);
            f.pending.clear();
        }
    }

    /// XORs one durable byte with `mask` (corruption test hook).
    pub fn corrupt_byte(&self, name: &str, pos: u64, mask: u8) {
        let mut st = self.state.lock();
        if let Some(f) = st.files.get_mut(name) {
            if let Some(b) = f.durable.get_mut(pos as usize) {
                *b ^= mask;
            }
        }
    }

    pub fn set_record_writes(&self, on: bool) {
        self.state.lock().record_writes = on;
    }

    pub fn drain_writes(&self) -> Vec<DeviceWrite> {
        std::mem::take(&mut self.state.lock().writes)
    }

    /// Concatenation of every durable file, for content scans.
    pub fn durable_image(&self) -> Vec<u8> {
        let st = self.state.lock();
        let mut out = Vec::new();
        for f in st.files.values() {
            out.extend_from_slice(&f.durable);
        }
        out
    }

    /// Deep copy of the durable contents, as a fresh disk.
    pub fn fork_durable(&self) -> MemDisk {
        let st = self.state.lock();
        let copy = MemDisk::new();
        {
            let mut cs = copy.state.lock();
            for (name, f) in &st.files {
                cs.files.insert(
                    name.clone(),
                    MemFile {
                        durable: f.durable.clone(),
                        pending: Vec::new(),
                    },
                );
            }
        }
        copy
    }
}

impl Disk for MemDisk {
    fn read(&self, name: &str) -> io::Result<Option<Vec<u8>>> {
        let st = self.state.lock();
        Ok(st.files.get(name).map(|f| {
            let mut v = f.durable.clone();
            v.extend_from_slice(&f.pending);
            v
        }))
    }

    fn append(&self, name: &str, bytes: &[u8]) -> io::Result<()> {
        let mut st = self.state.lock();
        if st.tripped {
            return Err(crashed_error());
        }
        st.files
            .entry(name.to_string())
            .or_default()
            .pending
            .extend_from_slice(bytes);
        Ok(())
    }

    fn sync(&self, name: &str) -> io::Result<()> {
        let mut guard = self.state.lock();
        let st = &mut *guard;
        if st.tripped {
            return Err(crashed_error());
        }
        if st.fail_next_sync {
            st.fail_next_sync = false;
            return Err(io::Error::other("injected sync failure"));
        }
        let Some(f) = st.files.get_mut(name) else {
            return Ok(());
        };
        if f.pending.is_empty() {
            return Ok(());
        }
        let offset = f.durable.len() as u64;
        let mut n = f.pending.len() as u64;
        let mut torn = false;
        if let Some(budget) = st.torn_budget.as_mut() {
            if n > *budget {
                n = *budget;
                torn = true;
            }
            *budget -= n;
        }
        let moved: Vec<u8> = f.pending.drain(..n as usize).collect();
        f.durable.extend_from_slice(&moved);
        st.synced_bytes += n;
        st.syncs += 1;
        if st.record_writes && n > 0 {
            st.writes.push(DeviceWrite {
                name: name.to_string(),
                offset,
                len: n,
            });
        }
        if torn {
            st.tripped = true;
            st.torn_budget = None;
            return Err(crashed_error());
        }
        Ok(())
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> io::Result<()> {
        let mut st = self.state.lock();
        if st.tripped {
            return Err(crashed_error());
        }
        // All or nothing: a budget too small for the whole file keeps the old one.
        if let Some(budget) = st.torn_budget.as_mut() {
            if bytes.len() as u64 > *budget {
                st.tripped = true;
                st.torn_budget = None;
                return Err(crashed_error());
            }
            *budget -= bytes.len() as u64;
        }
        st.synced_bytes += bytes.len() as u64;
        if st.record_writes {
            st.writes.push(DeviceWrite {
                name: name.to_string(),
                offset: 0,
                len: bytes.len() as u64,
            });
        }
        st.files.insert(
            name.to_string(),
            MemFile {
                durable: bytes.to_vec(),
                pending: Vec::new(),
            },
        );
        Ok(())
    }

    fn remove(&self, name: &str) -> io::Result<()> {
        let mut st = self.state.lock();
        if st.tripped {
            return Err(crashed_error());
        }
        st.files.remove(name);
        Ok(())
    }

    fn list(&self) -> io::Result<Vec<String>> {
        Ok(self.state.lock().files.keys().cloned().collect())
    }

    fn crash(&self) {
        let mut st = self.state.lock();
        for f in st.files.values_mut() {
            f.pending.clear();
        }
        st.files.retain(|_, f| !f.durable.is_empty());
        st.tripped = false;
        st.torn_budget = None;
        st.fail_next_sync = false;
    }
}

/// Directory-backed disk. Appends are held in memory until `sync`, which
/// writes and fsyncs them, so crash semantics match [`MemDisk`].
pub struct FsDisk {
    root: PathBuf,
    pending: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl FsDisk {
    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        fs::create_dir_all(root.as_ref())?;
        Ok(FsDisk {
            root: root.as_ref().to_path_buf(),
            pending: Mutex::new(BTreeMap::new()),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn sync_dir(&self) -> io::Result<()> {
        File::open(&self.root)?.sync_all()
    }
}

impl Disk for FsDisk {
    fn read(&self, name: &str) -> io::Result<Option<Vec<u8>>> {
        let mut data = match fs::read(self.path(name)) {
            Ok(d) => Some(d),
            Err(e) if e.kind() == io::ErrorKind::NotFound => None,
            Err(e) => return Err(e),
        };
        if let Some(p) = self.pending.lock().get(name) {
            data.get_or_insert_with(Vec::new).extend_from_slice(p);
        }
        Ok(data)
    }

    fn append(&self, name: &str, bytes: &[u8]) -> io::Result<()> {
        self.pending
            .lock()
            .entry(name.to_string())
            .or_default()
            .extend_from_slice(bytes);
        Ok(())
    }

    fn sync(&self, name: &str) -> io::Result<()> {
        let Some(buf) = self.pending.lock().remove(name) else {
            return Ok(());
        };
        let existed = self.path(name).exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.path(name))?;
        f.write_all(&buf)?;
        f.sync_data()?;
        if !existed {
            self.sync_dir()?;
        }
        Ok(())
    }

    fn write_atomic(&self, name: &str, bytes: &[u8]) -> io::Result<()> {
        self.pending.lock().remove(name);
        let tmp = self.path(&format!("{name}.tmp"));
        let mut f = File::create(&tmp)?;
        f.write_all(bytes)?;
        f.seek(SeekFrom::Start(0))?;
        f.sync_all()?;
        fs::rename(&tmp, self.path(name))?;
        self.sync_dir()
    }

    fn remove(&self, name: &str) -> io::Result<()> {
        self.pending.lock().remove(name);
        match fs::remove_file(self.path(name)) {
            Ok(()) => Ok(()),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
            Err(e) => Err(e),
        }
    }

    fn list(&self) -> io::Result<Vec<String>> {
        let mut names: Vec<String> = fs::read_dir(&self.root)?
            .filter_map(|e| e.ok())
            .filter(|e| e.path().is_file())
            .filter_map(|e| e.file_name().into_string().ok())
            .filter(|n| !n.ends_with(".tmp"))
            .collect();
        for k in self.pending.lock().keys() {
            if !names.contains(k) {
                names.push(k.clone());
            }
        }
        names.sort();
        Ok(names)
    }

    fn crash(&self) {
        self.pending.lock().clear();
    }
}
