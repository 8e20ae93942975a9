//! Preprocessed epoch collections and the `DCEEG-EPOCHS` file.
//!
//! Text header with per-class counts and dimensions, then per epoch:
//! class index (u32), window start (f64), source id (u16 length + UTF-8),
//! samples (f64, channel-major). All little-endian.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SignalError};
use crate::recording::{EegEpoch, BACKGROUND};

pub const EPOCHS_MAGIC: &str = "DCEEG-EPOCHS 1";

#[derive(Clone, Debug, PartialEq)]
pub struct EpochDataset {
    pub channels: Vec<String>,
    pub sample_rate_hz: f64,
    pub window_samples: usize,
    /// Background first, then seizure labels sorted.
    pub classes: Vec<String>,
    pub epochs: Vec<EegEpoch>,
}

impl EpochDataset {
    /// Build from epochs, deriving the class list.
    pub fn new(
        channels: Vec<String>,
        sample_rate_hz: f64,
        window_samples: usize,
        epochs: Vec<EegEpoch>,
    ) -> Result<Self> {
        let mut labels: Vec<String> = epochs
            .iter()
            .filter(|e| e.is_seizure())
            .map(|e| e.label.clone())
            .collect();
        labels.sort();
        labels.dedup();
        let classes = std::iter::once(BACKGROUND.to_string())
            .chain(labels)
            .collect();
        Self::with_classes(channels, sample_rate_hz, window_samples, classes, epochs)
    }

    pub fn with_classes(
        channels: Vec<String>,
        sample_rate_hz: f64,
        window_samples: usize,
        classes: Vec<String>,
        epochs: Vec<EegEpoch>,
    ) -> Result<Self> {
        let ds = EpochDataset {
            channels,
            sample_rate_hz,
            window_samples,
            classes,
            epochs,
        };
        for e in &ds.epochs {
            if e.num_channels != ds.channels.len() || e.window_samples != window_samples {
                return Err(SignalError::Format(format!(
                    "epoch from {} is {}x{}, dataset is {}x{window_samples}",
                    e.source_id,
                    e.num_channels,
                    e.window_samples,
                    ds.channels.len()
                )));
            }
            ds.class_index(&e.label)?;
        }
        Ok(ds)
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes.iter().position(|c| c == label).ok_or_else(|| {
            SignalError::Format(format!(
                "label '{label}' not in class list {:?}",
                self.classes
            ))
        })
    }

    pub fn labels(&self) -> Vec<usize> {
        self.epochs
            .iter()
            .map(|e| {
                self.class_index(&e.label)
                    .expect("validated at construction")
            })
            .collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes.len()];
        for l in self.labels() {
            c[l] += 1;
        }
        c
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> EpochDataset {
        EpochDataset {
            epochs: idx.iter().map(|&i| self.epochs[i].clone()).collect(),
            ..self.header_clone()
        }
    }

    fn header_clone(&self) -> EpochDataset {
        EpochDataset {
            channels: self.channels.clone(),
            sample_rate_hz: self.sample_rate_hz,
            window_samples: self.window_samples,
            classes: self.classes.clone(),
            epochs: Vec::new(),
        }
    }

    pub fn write<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{EPOCHS_MAGIC}")?;
        writeln!(w, "channels {}", self.channels.join(","))?;
        writeln!(w, "sample_rate_hz {}", self.sample_rate_hz)?;
        writeln!(w, "window_samples {}", self.window_samples)?;
        writeln!(w, "classes {}", self.classes.join(","))?;
        for (c, n) in self.classes.iter().zip(self.class_counts()) {
            writeln!(w, "count {c} {n}")?;
        }
        writeln!(w, "epochs {}", self.epochs.len())?;
        writeln!(w, "end_header")?;
        let mut buf = Vec::new();
        for (e, label) in self.epochs.iter().zip(self.labels()) {
            buf.clear();
            buf.extend_from_slice(&(label as u32).to_le_bytes());
            buf.extend_from_slice(&e.window_start_s.to_le_bytes());
            let id = e.source_id.as_bytes();
            let len = u16::try_from(id.len())
                .map_err(|_| SignalError::Format("source id too long".into()))?;
            buf.extend_from_slice(&len.to_le_bytes());
            buf.extend_from_slice(id);
            for v in &e.data {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != EPOCHS_MAGIC {
            return Err(SignalError::Format(format!(
                "bad magic {:?}",
                line.trim_end()
            )));
        }
        let fmt = |m: String| SignalError::Format(m);
        let (mut channels, mut rate, mut window, mut classes, mut total) =
            (None, None, None, None, None);
        let mut counts = Vec::new();
        loop {
            line.clear();
            if r.read_line(&mut line)? == 0 {
                return Err(fmt("missing end_header".into()));
            }
            let l = line.trim_end();
            if l == "end_header" {
                break;
            }
            let (k, v) = l
                .split_once(' ')
                .ok_or_else(|| fmt(format!("bad header line '{l}'")))?;
            let int = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| fmt(format!("bad integer '{v}'")))
            };
            match k {
                "channels" => channels = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
                "sample_rate_hz" => {
                    rate = Some(
                        v.parse::<f64>()
                            .map_err(|_| fmt(format!("bad rate '{v}'")))?,
                    )
                }
                "window_samples" => window = Some(int(v)?),
                "classes" => classes = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
                "count" => {
                    let (c, n) = v
                        .split_once(' ')
                        .ok_or_else(|| fmt(format!("bad count line '{l}'")))?;
                    counts.push((c.to_string(), int(n)?));
                }
                "epochs" => total = Some(int(v)?),
                _ => return Err(fmt(format!("unknown header key '{k}'"))),
            }
        }
        let missing = |k: &str| fmt(format!("header lacks '{k}'"));
        let channels = channels.ok_or_else(|| missing("channels"))?;
        let window = window.ok_or_else(|| missing("window_samples"))?;
        let classes = classes.ok_or_else(|| missing("classes"))?;
        let total = total.ok_or_else(|| missing("epochs"))?;
        let per = channels.len() * window;
        let mut epochs = Vec::with_capacity(total);
        let mut b4 = [0u8; 4];
        let mut b8 = [0u8; 8];
        let mut b2 = [0u8; 2];
        let mut data_bytes = vec![0u8; per * 8];
        for i in 0..total {
            let trunc = |_| fmt(format!("truncated body at epoch {i}"));
            r.read_exact(&mut b4).map_err(trunc)?;
            let label = u32::from_le_bytes(b4) as usize;
            r.read_exact(&mut b8).map_err(trunc)?;
            let start = f64::from_le_bytes(b8);
            r.read_exact(&mut b2).map_err(trunc)?;
            let mut id = vec![0u8; u16::from_le_bytes(b2) as usize];
            r.read_exact(&mut id).map_err(trunc)?;
            r.read_exact(&mut data_bytes).map_err(trunc)?;
            let label = classes
                .get(label)
                .ok_or_else(|| fmt(format!("class index {label} out of range")))?
                .clone();
            epochs.push(EegEpoch {
                data: data_bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
                num_channels: channels.len(),
                window_samples: window,
                label,
                source_id: String::from_utf8(id)
                    .map_err(|_| fmt("source id is not UTF-8".into()))?,
                window_start_s: start,
            });
        }
        let ds = Self::with_classes(
            channels,
            rate.ok_or_else(|| missing("sample_rate_hz"))?,
            window,
            classes,
            epochs,
        )?;
        let actual = ds.class_counts();
        for (c, n) in &counts {
            let got = actual[ds.class_index(c)?];
            if got != *n {
                return Err(fmt(format!("header says {n} '{c}' epochs, body has {got}")));
            }
        }
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read(File::open(path)?)
    }
}
