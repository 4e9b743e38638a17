//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "HCC1"  u32 entry-count
//! entry*: u16 name-len, name (UTF-8), u8 kind (0 f64, 1 u64, 2 bytes),
//!         u8 rank, u64 dim × rank, payload
//! u32 CRC-32 of every preceding byte
//! ```
//!
//! Files are written to a sibling temporary and renamed into place, so a
//! failed write never damages an existing checkpoint.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{AdamState, Tensor};
use crate::camera::Cameras;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::field::Field;
use crate::scene::Scene;
use crate::trainer::{Optimizers, TrainConfig, Trainer};

pub const MAGIC: &[u8; 4] = b"HCC1";

#[derive(Debug, Clone, PartialEq)]
enum Array {
    F64(Vec<usize>, Vec<f64>),
    U64(Vec<usize>, Vec<u64>),
    Bytes(Vec<u8>),
}

#[derive(Debug, Default)]
struct Container {
    entries: Vec<(String, Array)>,
}

impl Container {
    fn tensor(&mut self, name: impl Into<String>, t: &Tensor) {
        self.entries.push((
            name.into(),
            Array::F64(vec![t.rows(), t.cols()], t.as_slice().to_vec()),
        ));
    }

    fn u64s(&mut self, name: impl Into<String>, v: Vec<u64>) {
        self.entries.push((name.into(), Array::U64(vec![v.len()], v)));
    }

    fn f64s(&mut self, name: impl Into<String>, v: Vec<f64>) {
        self.entries.push((name.into(), Array::F64(vec![v.len()], v)));
    }

    fn bytes(&mut self, name: impl Into<String>, v: Vec<u8>) {
        self.entries.push((name.into(), Array::Bytes(v)));
    }

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (name, arr) in &self.entries {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (kind, shape): (u8, Vec<usize>) = match arr {
                Array::F64(s, _) => (0, s.clone()),
                Array::U64(s, _) => (1, s.clone()),
                Array::Bytes(b) => (2, vec![b.len()]),
            };
            out.push(kind);
            out.push(shape.len() as u8);
            for d in &shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            match arr {
                Array::F64(_, v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Array::U64(_, v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Array::Bytes(b) => out.extend_from_slice(b),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() >= 4 && &bytes[..3] == b"HCC" && bytes[3] != MAGIC[3] {
            return Err(fail(format!(
                "format version {:?} is not supported (expected {:?})",
                bytes[3] as char, MAGIC[3] as char
            )));
        }
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err(fail("not a checkpoint (bad magic or truncated header)".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(fail("checksum mismatch (file truncated or corrupted)".into()));
        }
        let mut cur = Cursor { buf: body, pos: 4 };
        let truncated = || fail("truncated entry".into());
        let count = cur.u32().ok_or_else(truncated)?;
        let mut entries = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let len = cur.u16().ok_or_else(truncated)? as usize;
            let name = String::from_utf8(cur.take(len).ok_or_else(truncated)?.to_vec())
                .map_err(|_| fail("entry name is not UTF-8".into()))?;
            let kind = cur.u8().ok_or_else(truncated)?;
            let rank = cur.u8().ok_or_else(truncated)? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(cur.u64().ok_or_else(truncated)? as usize);
            }
            let n: usize = shape.iter().product();
            let arr = match kind {
                0 => Array::F64(
                    shape,
                    (0..n)
                        .map(|_| cur.u64().map(f64::from_bits))
                        .collect::<Option<_>>()
                        .ok_or_else(truncated)?,
                ),
                1 => Array::U64(
                    shape,
                    (0..n).map(|_| cur.u64()).collect::<Option<_>>().ok_or_else(truncated)?,
                ),
                2 => Array::Bytes(cur.take(n).ok_or_else(truncated)?.to_vec()),
                k => return Err(fail(format!("entry {name}: unknown kind {k}"))),
            };
            entries.push((name, arr));
        }
        if cur.pos != body.len() {
            return Err(fail("trailing bytes after the last entry".into()));
        }
        Ok(Self { entries })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }
    fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|b| b[0])
    }
    fn u16(&mut self) -> Option<u16> {
        self.take(2).map(|b| u16::from_le_bytes(b.try_into().unwrap()))
    }
    fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()))
    }
    fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|b| u64::from_le_bytes(b.try_into().unwrap()))
    }
}

const ADAM_GROUPS: [&str; 3] = ["main", "correction", "camera"];

fn adam_groups(o: &Optimizers) -> [&AdamState; 3] {
    [&o.main, &o.correction, &o.camera]
}

fn container_of(t: &Trainer) -> Container {
    let mut c = Container::default();
    let cfg = Config {
        train: t.config.clone(),
        ..Config::default()
    };
    c.bytes("config", cfg.to_text().into_bytes());
    c.u64s("meta.iteration", vec![t.iteration]);
    c.u64s(
        "meta.epoch_order",
        t.epoch_order.iter().map(|&i| i as u64).collect(),
    );
    c.bytes("rng.seed", t.rng.get_seed().to_vec());
    c.u64s("rng.stream", vec![t.rng.get_stream()]);
    let wp = t.rng.get_word_pos();
    c.u64s("rng.word_pos", vec![wp as u64, (wp >> 64) as u64]);
    for (name, v) in t.field.named_parameters() {
        c.tensor(format!("field.{name}"), &v.data());
    }
    let cams = &t.cameras;
    c.u64s("camera.size", vec![cams.width() as u64, cams.height() as u64]);
    c.tensor("camera.rotations", &cams.rotations.data());
    c.tensor("camera.translations", &cams.translations.data());
    c.tensor("camera.focal_scales", &cams.focal_scales.data());
    for (group, st) in ADAM_GROUPS.iter().zip(adam_groups(&t.optimizers)) {
        c.f64s(format!("adam.{group}.hyper"), vec![st.beta1, st.beta2, st.eps]);
        c.u64s(format!("adam.{group}.step"), vec![st.step]);
        for (i, (m, v)) in st.first_moment.iter().zip(&st.second_moment).enumerate() {
            c.tensor(format!("adam.{group}.m.{i}"), m);
            c.tensor(format!("adam.{group}.v.{i}"), v);
        }
    }
    c
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Serialized bytes of the trainer state.
pub fn to_bytes(trainer: &Trainer) -> Vec<u8> {
    container_of(trainer).encode()
}

/// Writes the trainer state to `path` via a temporary file and a rename.
pub fn save(path: &Path, trainer: &Trainer) -> Result<()> {
    let bytes = to_bytes(trainer);
    let tmp = temp_path(path);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Everything needed to resume training or to evaluate.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub field: Field,
    pub cameras: Cameras,
    pub optimizers: Optimizers,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
    pub epoch_order: Vec<usize>,
}

struct Reader {
    entries: Vec<(String, Array)>,
    path: PathBuf,
}

impl Reader {
    fn fail(&self, reason: String) -> Error {
        Error::Checkpoint {
            path: self.path.clone(),
            reason,
        }
    }

    fn get(&self, name: &str) -> Result<&Array> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, a)| a)
            .ok_or_else(|| self.fail(format!("missing entry {name}")))
    }

    fn tensor(&self, name: &str) -> Result<Tensor> {
        match self.get(name)? {
            Array::F64(s, d) if s.len() == 2 => Ok(Tensor::from_vec(s[0], s[1], d.clone())),
            _ => Err(self.fail(format!("{name} is not a matrix"))),
        }
    }

    fn tensor_into(&self, name: &str, dst: &mut Tensor) -> Result<()> {
        let t = self.tensor(name)?;
        if t.shape() != dst.shape() {
            return Err(self.fail(format!(
                "{name} has shape {:?}, the configured model expects {:?}",
                t.shape(),
                dst.shape()
            )));
        }
        *dst = t;
        Ok(())
    }

    fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name)? {
            Array::U64(_, d) => Ok(d),
            _ => Err(self.fail(format!("{name} is not an integer array"))),
        }
    }

    fn f64s(&self, name: &str) -> Result<&[f64]> {
        match self.get(name)? {
            Array::F64(_, d) => Ok(d),
            _ => Err(self.fail(format!("{name} is not a real array"))),
        }
    }

    fn bytes(&self, name: &str) -> Result<&[u8]> {
        match self.get(name)? {
            Array::Bytes(b) => Ok(b),
            _ => Err(self.fail(format!("{name} is not a byte array"))),
        }
    }

    fn scalar(&self, name: &str) -> Result<u64> {
        match self.u64s(name)? {
            [v] => Ok(*v),
            _ => Err(self.fail(format!("{name} is not a scalar"))),
        }
    }
}

pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
    let r = Reader {
        entries: Container::decode(bytes, path)?.entries,
        path: path.to_path_buf(),
    };
    let text = std::str::from_utf8(r.bytes("config")?)
        .map_err(|_| r.fail("config is not UTF-8".into()))?;
    let config = Config::parse(text)?.train;

    let mut scratch = ChaCha8Rng::seed_from_u64(0);
    let field = Field::new(config.field.clone(), &mut scratch)?;
    for (name, v) in field.named_parameters() {
        r.tensor_into(&format!("field.{name}"), &mut v.data_mut())?;
    }

    let size = r.u64s("camera.size")?;
    if size.len() != 2 {
        return Err(r.fail("camera.size must hold width and height".into()));
    }
    let cameras = Cameras::from_parts(
        r.tensor("camera.rotations")?,
        r.tensor("camera.translations")?,
        r.tensor("camera.focal_scales")?,
        size[0] as usize,
        size[1] as usize,
    )?;

    let mut optimizers = Optimizers::new(&field, &cameras);
    let groups = [
        &mut optimizers.main,
        &mut optimizers.correction,
        &mut optimizers.camera,
    ];
    for (group, st) in ADAM_GROUPS.iter().zip(groups) {
        let hyper = r.f64s(&format!("adam.{group}.hyper"))?;
        if hyper.len() != 3 {
            return Err(r.fail(format!("adam.{group}.hyper must hold 3 values")));
        }
        (st.beta1, st.beta2, st.eps) = (hyper[0], hyper[1], hyper[2]);
        st.step = r.scalar(&format!("adam.{group}.step"))?;
        for i in 0..st.first_moment.len() {
            r.tensor_into(&format!("adam.{group}.m.{i}"), &mut st.first_moment[i])?;
            r.tensor_into(&format!("adam.{group}.v.{i}"), &mut st.second_moment[i])?;
        }
    }

    let seed: [u8; 32] = r
        .bytes("rng.seed")?
        .try_into()
        .map_err(|_| r.fail("rng.seed must be 32 bytes".into()))?;
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(r.scalar("rng.stream")?);
    let wp = r.u64s("rng.word_pos")?;
    if wp.len() != 2 {
        return Err(r.fail("rng.word_pos must hold 2 words".into()));
    }
    rng.set_word_pos(u128::from(wp[0]) | (u128::from(wp[1]) << 64));

    Ok(Checkpoint {
        config,
        field,
        cameras,
        optimizers,
        rng,
        iteration: r.scalar("meta.iteration")?,
        epoch_order: r
            .u64s("meta.epoch_order")?
            .iter()
            .map(|&i| i as usize)
            .collect(),
    })
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, path)
}

impl Checkpoint {
    /// A trainer positioned exactly where this checkpoint was taken.
    pub fn into_trainer(self, scene: &Scene) -> Result<Trainer> {
        Trainer::from_parts(
            scene,
            self.config,
            self.field,
            self.cameras,
            self.optimizers,
            self.rng,
            self.iteration,
            self.epoch_order,
        )
    }
}
