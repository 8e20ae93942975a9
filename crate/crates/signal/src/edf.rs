//! EDF input is not supported. Convert recordings to `DCEEG-RAW` first.
//!
//! Field mapping for an external converter:
//!
//! | EDF                         | DCEEG-RAW / CSV            |
//! |-----------------------------|----------------------------|
//! | patient + recording id      | `id`                       |
//! | samples per record / duration of record | `sample_rate_hz` |
//! | signal labels (EEG only, e.g. `EEG FP1-REF` → `Fp1`) | `channels` |
//! | digital samples scaled by physical min/max, in µV | samples (f32) |
//! | EDF+ annotations or `.tse` / `.csv` seizure files | `onset_s,offset_s,label` |

use std::path::Path;

use crate::error::{Result, SignalError};
use crate::recording::EegRecording;

pub fn read_edf(path: &Path) -> Result<EegRecording> {
    Err(SignalError::Unsupported(format!(
        "EDF input ({}); convert to DCEEG-RAW with an external tool",
        path.display()
    )))
}
