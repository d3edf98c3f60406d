//! Prepared dataset: every instance's labeled windows plus the subject
//! split, cached on disk so training commands skip parsing.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::splits::{make_logo_splits, Role, SplitPlan};
use super::types::{ActivityKind, InstanceMeta, LabeledWindow, SensorInstance, WindowLabel, AXES, WINDOW_LEN};
use super::windows::windows_for_instance;
use crate::error::{Error, Result};
use crate::rng;

const MAGIC: &[u8; 4] = b"PFKW";
const VERSION: u32 = 1;
const WINDOW_FLOATS: usize = WINDOW_LEN * AXES;

pub const WINDOWS_FILE: &str = "windows.bin";
pub const INSTANCES_FILE: &str = "instances.json";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDataset {
    pub instances: Vec<InstanceMeta>,
    /// Unaugmented windows in instance order.
    pub windows: Vec<LabeledWindow>,
    pub splits: SplitPlan,
}

/// Class counts of one split role.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleCounts {
    pub adl_windows: usize,
    pub fall_windows: usize,
    pub fall_instances: usize,
    pub subjects: usize,
}

impl PreparedDataset {
    /// Windows every instance and draws the subject split. ADL windows use
    /// the per-instance stream `adl/<instance_id>`; the split uses `splits`.
    pub fn prepare(instances: &[SensorInstance], seed: u64) -> Result<Self> {
        let mut windows = Vec::new();
        for inst in instances {
            let mut r = rng::stream(seed, &format!("adl/{}", inst.instance_id));
            windows.extend(windows_for_instance(inst, &mut r)?);
        }
        let subjects: Vec<u32> = instances.iter().map(|i| i.subject_id).collect();
        let splits = make_logo_splits(&subjects, &mut rng::stream(seed, "splits"))?;
        Ok(PreparedDataset {
            instances: instances.iter().map(SensorInstance::meta).collect(),
            windows,
            splits,
        })
    }

    pub fn instance(&self, id: &str) -> Option<&InstanceMeta> {
        self.instances.iter().find(|m| m.instance_id == id)
    }

    /// Windows of the subjects that play `role` in `fold`.
    pub fn windows_for(&self, fold: usize, role: Role) -> Result<Vec<LabeledWindow>> {
        let subjects = self.splits.subjects(fold, role)?;
        Ok(self
            .windows
            .iter()
            .filter(|w| subjects.contains(&w.subject_id))
            .cloned()
            .collect())
    }

    /// Fall instances of the subjects that play `role` in `fold`.
    pub fn fall_instances_for(&self, fold: usize, role: Role) -> Result<Vec<&InstanceMeta>> {
        let subjects = self.splits.subjects(fold, role)?;
        Ok(self
            .instances
            .iter()
            .filter(|m| m.kind == ActivityKind::Fall && subjects.contains(&m.subject_id))
            .collect())
    }

    pub fn role_counts(&self, fold: usize, role: Role) -> Result<RoleCounts> {
        let subjects = self.splits.subjects(fold, role)?;
        let mut c = RoleCounts {
            subjects: subjects.len(),
            ..RoleCounts::default()
        };
        for w in self.windows.iter().filter(|w| subjects.contains(&w.subject_id)) {
            match w.label {
                WindowLabel::Adl => c.adl_windows += 1,
                WindowLabel::PreImpactFall => c.fall_windows += 1,
            }
        }
        c.fall_instances = self.fall_instances_for(fold, role)?.len();
        Ok(c)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let index: HashMap<&str, u32> = self
            .instances
            .iter()
            .enumerate()
            .map(|(i, m)| (m.instance_id.as_str(), i as u32))
            .collect();
        let mut buf = Vec::with_capacity(16 + self.windows.len() * (9 + 4 * WINDOW_FLOATS) + 4);
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.windows.len() as u64).to_le_bytes());
        for w in &self.windows {
            let idx = index
                .get(&*w.instance_id)
                .ok_or_else(|| Error::Data(format!("window references unknown instance {}", w.instance_id)))?;
            buf.extend_from_slice(&idx.to_le_bytes());
            buf.extend_from_slice(&(w.start_frame as u32).to_le_bytes());
            buf.push(w.label.index() as u8);
            for v in &w.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        write(dir, WINDOWS_FILE, &buf)?;
        write(dir, INSTANCES_FILE, &to_json(&self.instances)?)?;
        write(dir, SPLITS_FILE, &to_json(&self.splits)?)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let instances: Vec<InstanceMeta> = from_json(dir, INSTANCES_FILE)?;
        let splits: SplitPlan = from_json(dir, SPLITS_FILE)?;
        let path = dir.join(WINDOWS_FILE);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let bad = |m: &str| Error::Data(format!("{}: {m}", path.display()));
        if bytes.len() < 20 || &bytes[..4] != MAGIC {
            return Err(bad("not a prepared window cache"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(bad("checksum mismatch"));
        }
        let mut r = Reader { bytes: body, pos: 4 };
        if r.u32()? != VERSION {
            return Err(bad("unsupported version"));
        }
        let count = r.u64()? as usize;
        let ids: Vec<Arc<str>> = instances.iter().map(|m| Arc::from(m.instance_id.as_str())).collect();
        let mut windows = Vec::with_capacity(count);
        for _ in 0..count {
            let idx = r.u32()? as usize;
            let start = r.u32()? as usize;
            let label = r.take(1)?[0] as usize;
            let meta = instances.get(idx).ok_or_else(|| bad("instance index out of range"))?;
            if label > 1 || start + WINDOW_LEN > meta.frames {
                return Err(bad("corrupt window record"));
            }
            let data = r
                .take(4 * WINDOW_FLOATS)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            windows.push(LabeledWindow {
                data,
                label: WindowLabel::from_index(label),
                instance_id: ids[idx].clone(),
                start_frame: start,
                subject_id: meta.subject_id,
            });
        }
        if r.pos != body.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(PreparedDataset {
            instances,
            windows,
            splits,
        })
    }

    /// Window and instance totals per label, for logging.
    pub fn summary(&self) -> BTreeMap<&'static str, usize> {
        let mut m = BTreeMap::new();
        m.insert("instances", self.instances.len());
        m.insert(
            "fall_instances",
            self.instances.iter().filter(|i| i.kind == ActivityKind::Fall).count(),
        );
        m.insert(
            "adl_windows",
            self.windows.iter().filter(|w| w.label == WindowLabel::Adl).count(),
        );
        m.insert(
            "fall_windows",
            self.windows
                .iter()
                .filter(|w| w.label == WindowLabel::PreImpactFall)
                .count(),
        );
        m
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Data("window cache is truncated".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn write(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    serde_json::to_vec_pretty(v).map_err(|e| Error::Data(e.to_string()))
}

fn from_json<T: for<'de> Deserialize<'de>>(dir: &Path, name: &str) -> Result<T> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}
