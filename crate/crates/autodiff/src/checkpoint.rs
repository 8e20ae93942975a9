//! `DCEEG1` checkpoint files: a text manifest followed by raw
//! little-endian value blocks in manifest order.
//!
//! ```text
//! DCEEG1
//! meta <key>=<value>
//! tensor <name> <f32|f64> <d0>x<d1>...|scalar <trainable|frozen>
//! end
//! <bytes>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::real::{DType, Real};
use crate::store::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &str = "DCEEG1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: IndexMap<String, String>,
    pub store: ParamStore<T>,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(store: ParamStore<T>) -> Self {
        Checkpoint {
            meta: IndexMap::new(),
            store,
        }
    }

    pub fn meta(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(String::as_str)
            .ok_or_else(|| Error::Format(format!("missing meta key '{key}'")))
    }
}

fn escape(v: &str) -> String {
    v.replace('\\', "\\\\").replace('\n', "\\n")
}

fn unescape(v: &str) -> String {
    let mut out = String::with_capacity(v.len());
    let mut chars = v.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('n') => out.push('\n'),
                Some(o) => out.push(o),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

pub fn write_checkpoint<T: Real, W: Write>(w: &mut W, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut header = format!("{CHECKPOINT_MAGIC}\n");
    for (k, v) in &ckpt.meta {
        if k.contains('=') || k.contains(char::is_whitespace) {
            return Err(Error::Format(format!("invalid meta key '{k}'")));
        }
        header.push_str(&format!("meta {k}={}\n", escape(v)));
    }
    for (name, t) in ckpt.store.iter() {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Format(format!("invalid tensor name '{name}'")));
        }
        let dims = if t.shape().is_empty() {
            "scalar".to_string()
        } else {
            t.shape()
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join("x")
        };
        let flag = if t.requires_grad {
            "trainable"
        } else {
            "frozen"
        };
        header.push_str(&format!(
            "tensor {name} {} {dims} {flag}\n",
            T::DTYPE.name()
        ));
    }
    header.push_str("end\n");
    w.write_all(header.as_bytes())?;
    let mut buf = Vec::new();
    for (_, t) in ckpt.store.iter() {
        buf.clear();
        for &v in t.data() {
            v.write_le(&mut buf);
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

struct Entry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
    trainable: bool,
}

pub fn read_checkpoint<T: Real, R: Read>(r: R) -> Result<Checkpoint<T>> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", line.trim_end())));
    }
    let mut meta = IndexMap::new();
    let mut entries = Vec::new();
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(Error::Format("header ended without 'end'".into()));
        }
        let l = line.trim_end_matches('\n');
        if l == "end" {
            break;
        }
        if let Some(rest) = l.strip_prefix("meta ") {
            let (k, v) = rest
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad meta line '{l}'")))?;
            meta.insert(k.to_string(), unescape(v));
        } else if let Some(rest) = l.strip_prefix("tensor ") {
            let parts: Vec<&str> = rest.split(' ').collect();
            if parts.len() != 4 {
                return Err(Error::Format(format!("bad tensor line '{l}'")));
            }
            let dtype = DType::parse(parts[1])
                .ok_or_else(|| Error::Format(format!("unknown dtype '{}'", parts[1])))?;
            let shape = if parts[2] == "scalar" {
                vec![]
            } else {
                parts[2]
                    .split('x')
                    .map(|d| {
                        d.parse::<usize>()
                            .map_err(|_| Error::Format(format!("bad dims '{}'", parts[2])))
                    })
                    .collect::<Result<Vec<_>>>()?
            };
            let trainable = match parts[3] {
                "trainable" => true,
                "frozen" => false,
                o => return Err(Error::Format(format!("bad flag '{o}'"))),
            };
            entries.push(Entry {
                name: parts[0].to_string(),
                dtype,
                shape,
                trainable,
            });
        } else {
            return Err(Error::Format(format!("unrecognized header line '{l}'")));
        }
    }
    let mut store = ParamStore::new();
    for e in entries {
        let n: usize = e.shape.iter().product();
        let mut bytes = vec![0u8; n * e.dtype.size()];
        r.read_exact(&mut bytes)
            .map_err(|_| Error::Format(format!("truncated data for '{}'", e.name)))?;
        let data: Vec<T> = match e.dtype {
            DType::F32 => bytes
                .chunks_exact(4)
                .map(|c| T::of(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
            DType::F64 => bytes
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        };
        let mut t = Tensor::new(e.shape, data)?;
        t.requires_grad = e.trainable;
        store.insert(e.name, t);
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after last tensor".into()));
    }
    Ok(Checkpoint { meta, store })
}

pub fn save_checkpoint<T: Real>(path: impl AsRef<Path>, ckpt: &Checkpoint<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, ckpt)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    read_checkpoint(File::open(path)?)
}
