//! `DCEEG-RAW` recordings and their annotation CSVs.
//!
//! ```text
//! DCEEG-RAW 1
//! id <recording id>
//! sample_rate_hz <rate>
//! channels <name>,<name>,...
//! samples <per channel>
//! end_header
//! <f32 LE, channel-major>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Result, SignalError};
use crate::recording::{Annotation, EegRecording};

pub const RAW_MAGIC: &str = "DCEEG-RAW 1";

pub fn write_raw<W: Write>(w: &mut W, rec: &EegRecording) -> Result<()> {
    if rec
        .channels
        .iter()
        .any(|c| c.contains(',') || c.contains(char::is_whitespace))
    {
        return Err(SignalError::Format(
            "channel names may not contain commas or whitespace".into(),
        ));
    }
    writeln!(w, "{RAW_MAGIC}")?;
    writeln!(w, "id {}", rec.id)?;
    writeln!(w, "sample_rate_hz {}", rec.sample_rate_hz)?;
    writeln!(w, "channels {}", rec.channels.join(","))?;
    writeln!(w, "samples {}", rec.num_samples())?;
    writeln!(w, "end_header")?;
    let mut buf = Vec::with_capacity(rec.num_samples() * 4);
    for row in &rec.samples {
        buf.clear();
        for &v in row {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Read a signal file; annotations are left empty.
pub fn read_raw<R: Read>(r: R) -> Result<EegRecording> {
    let mut r = BufReader::new(r);
    let mut line = String::new();
    r.read_line(&mut line)?;
    if line.trim_end() != RAW_MAGIC {
        return Err(SignalError::Format(format!(
            "bad magic {:?}",
            line.trim_end()
        )));
    }
    let (mut id, mut rate, mut channels, mut samples) = (None, None, None, None);
    loop {
        line.clear();
        if r.read_line(&mut line)? == 0 {
            return Err(SignalError::Format("missing end_header".into()));
        }
        let l = line.trim_end();
        if l == "end_header" {
            break;
        }
        let (k, v) = l
            .split_once(' ')
            .ok_or_else(|| SignalError::Format(format!("bad header line '{l}'")))?;
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| SignalError::Format(format!("bad number '{v}' for {k}")))
        };
        match k {
            "id" => id = Some(v.to_string()),
            "sample_rate_hz" => rate = Some(num(v)?),
            "channels" => channels = Some(v.split(',').map(str::to_string).collect::<Vec<_>>()),
            "samples" => samples = Some(num(v)? as usize),
            _ => return Err(SignalError::Format(format!("unknown header key '{k}'"))),
        }
    }
    let missing = |k: &str| SignalError::Format(format!("header lacks '{k}'"));
    let channels = channels.ok_or_else(|| missing("channels"))?;
    let n = samples.ok_or_else(|| missing("samples"))?;
    let mut rows = Vec::with_capacity(channels.len());
    let mut bytes = vec![0u8; n * 4];
    for c in &channels {
        r.read_exact(&mut bytes)
            .map_err(|_| SignalError::Format(format!("truncated samples for channel {c}")))?;
        rows.push(
            bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
                .collect(),
        );
    }
    EegRecording::new(
        id.ok_or_else(|| missing("id"))?,
        rate.ok_or_else(|| missing("sample_rate_hz"))?,
        channels,
        rows,
        vec![],
    )
}

pub fn write_annotations<W: Write>(w: W, anns: &[Annotation]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for a in anns {
        out.serialize(a)?;
    }
    if anns.is_empty() {
        out.write_record(["onset_s", "offset_s", "label"])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_annotations<R: Read>(r: R) -> Result<Vec<Annotation>> {
    let mut rd = csv::Reader::from_reader(r);
    let headers = rd.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["onset_s", "offset_s", "label"] {
        return Err(SignalError::Format(format!(
            "annotation columns must be onset_s,offset_s,label, got {headers:?}"
        )));
    }
    rd.deserialize()
        .map(|row| row.map_err(SignalError::from))
        .collect()
}

/// Write `<stem>.raw` and `<stem>.csv` into `dir`.
pub fn save_recording(dir: &Path, stem: &str, rec: &EegRecording) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.raw")))?);
    write_raw(&mut w, rec)?;
    w.flush()?;
    write_annotations(
        File::create(dir.join(format!("{stem}.csv")))?,
        &rec.annotations,
    )
}

/// Read a `.raw` file and its sibling `.csv` (if present).
pub fn load_recording(raw_path: &Path) -> Result<EegRecording> {
    let mut rec = read_raw(File::open(raw_path)?)?;
    let csv_path = raw_path.with_extension("csv");
    if csv_path.exists() {
        rec.annotations = read_annotations(File::open(csv_path)?)?;
        rec.validate()?;
    }
    Ok(rec)
}

/// Every `.raw` file in `dir`, sorted by name.
pub fn load_dir(dir: &Path) -> Result<Vec<EegRecording>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "raw"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_recording(p)).collect()
}
