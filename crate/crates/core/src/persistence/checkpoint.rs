//! Versioned binary checkpoints. The byte layout is described in
//! `docs/checkpoint-format.md`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{PncError, Result};
use crate::model::{Model, Parameters, Tensor};
use crate::structure::CircuitStructure;
use crate::training::OptimizerState;

use super::Config;

pub const MAGIC: &[u8; 4] = b"PNC1";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

/// SHA-256 over the canonical description of every layer layout.
pub fn structure_fingerprint(structure: &CircuitStructure) -> [u8; DIGEST_LEN] {
    Sha256::digest(structure.canonical_description().as_bytes()).into()
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Config,
    pub model: Model,
    pub optimizer: Option<OptimizerState>,
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend_from_slice(&(name.len() as u32).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
    for &d in &t.shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in &t.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_parameters(out: &mut Vec<u8>, p: &Parameters) {
    let named = p.named();
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        put_tensor(out, &name, t);
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode(config: &Config, model: &Model, optimizer: Option<&OptimizerState>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    let text = config.render();
    out.extend_from_slice(&(text.len() as u64).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
    out.extend_from_slice(&structure_fingerprint(&model.structure));
    put_parameters(&mut out, &model.params);
    match optimizer {
        None => out.push(0),
        Some(state) => {
            out.push(1);
            out.extend_from_slice(&state.step.to_le_bytes());
            put_parameters(&mut out, &state.first_moment);
            put_parameters(&mut out, &state.second_moment);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

/// Writes atomically: the bytes go to a sibling temporary file that is then
/// renamed over `path`.
pub fn save_checkpoint(
    path: &Path,
    config: &Config,
    model: &Model,
    optimizer: Option<&OptimizerState>,
) -> Result<()> {
    let bytes = encode(config, model, optimizer);
    let file_name = path
        .file_name()
        .ok_or_else(|| PncError::Input(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = file_name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()
    };
    if let Err(e) = write() {
        let _ = fs::remove_file(&tmp);
        return Err(PncError::io(&tmp, e));
    }
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        PncError::io(path, e)
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| PncError::format(self.pos, format!("truncated {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let at = self.pos;
        usize::try_from(self.u64(what)?).map_err(|_| PncError::format(at, format!("{what} too large")))
    }

    fn tensor(&mut self) -> Result<(String, Tensor)> {
        let at = self.pos;
        let name_len = self.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(self.take(name_len, "tensor name")?)
            .map_err(|_| PncError::format(at, "tensor name is not UTF-8"))?
            .to_string();
        let ndim = self.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(ndim.min(16));
        for _ in 0..ndim {
            shape.push(self.len("tensor dimension")?);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .filter(|c| c.checked_mul(8).is_some_and(|b| b <= self.bytes.len()))
            .ok_or_else(|| PncError::format(at, format!("tensor {name} is larger than the file")))?;
        let raw = self.take(count * 8, "tensor data")?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor { shape, data }))
    }

    /// Reads a tensor list and fills it into a copy of `template`.
    fn parameters(&mut self, template: &Parameters) -> Result<Parameters> {
        let at = self.pos;
        let count = self.u32("tensor count")? as usize;
        let expected = template.named();
        if count != expected.len() {
            return Err(PncError::format(
                at,
                format!("{count} tensors stored, model has {}", expected.len()),
            ));
        }
        let mut out = template.clone();
        for (slot, (want_name, want)) in out.tensors_mut().into_iter().zip(expected) {
            let at = self.pos;
            let (name, t) = self.tensor()?;
            if name != want_name || t.shape != want.shape {
                return Err(PncError::format(
                    at,
                    format!("tensor {name} {:?} where {want_name} {:?} was expected", t.shape, want.shape),
                ));
            }
            *slot = t;
        }
        Ok(out)
    }
}

/// Parses checkpoint bytes. The trailing checksum is verified before anything
/// else is interpreted, so truncated or altered files yield no model.
pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    if bytes.len() < MAGIC.len() + DIGEST_LEN {
        return Err(PncError::Checksum(format!("file of {} bytes is too short", bytes.len())));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(PncError::Checksum("payload checksum does not match".into()));
    }
    let mut r = Reader { bytes: body, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(PncError::format(0, "not a checkpoint (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(PncError::format(4, format!("unsupported format version {version}")));
    }
    let text_at = r.pos;
    let text_len = r.len("config length")?;
    let text = std::str::from_utf8(r.take(text_len, "config")?)
        .map_err(|_| PncError::format(text_at, "config is not UTF-8"))?;
    let config = Config::parse(text)?;
    let stored: [u8; DIGEST_LEN] = r.take(DIGEST_LEN, "fingerprint")?.try_into().unwrap();
    let structure = config.build_structure()?;
    let actual = structure_fingerprint(&structure);
    if stored != actual {
        return Err(PncError::FingerprintMismatch {
            expected: hex(&actual),
            found: hex(&stored),
        });
    }
    let template = Model::randomized(structure.clone(), config.model_options(), 0, 0.0)?;
    let params = r.parameters(&template.params)?;
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        1 => {
            let step = r.u64("optimizer step")?;
            Some(OptimizerState {
                first_moment: r.parameters(&template.params)?,
                second_moment: r.parameters(&template.params)?,
                step,
            })
        }
        f => return Err(PncError::format(r.pos - 1, format!("bad optimizer flag {f}"))),
    };
    if r.pos != body.len() {
        return Err(PncError::format(r.pos, "trailing bytes before checksum"));
    }
    let model = Model::from_parameters(structure, config.model_options(), params)?;
    Ok(Checkpoint {
        config,
        model,
        optimizer,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| PncError::io(path, e))?;
    decode(&bytes)
}

/// Loads a checkpoint and refuses it unless it was saved for `structure`.
pub fn load_checkpoint_into(path: &Path, structure: &CircuitStructure) -> Result<Checkpoint> {
    let ck = load_checkpoint(path)?;
    let expected = structure_fingerprint(structure);
    let found = structure_fingerprint(&ck.model.structure);
    if expected != found {
        return Err(PncError::FingerprintMismatch {
            expected: hex(&expected),
            found: hex(&found),
        });
    }
    Ok(ck)
}
