use ndarray::Array2;

use super::{Record, RecordHeader, StorageFormat, WfdbError};

/// Decodes a signal file according to the header's storage format.
pub fn parse_signal(bytes: &[u8], header: &RecordHeader) -> Result<Record, WfdbError> {
    match header.storage_format {
        StorageFormat::Format212 => parse_signal_212(bytes, header),
        StorageFormat::Format16 => parse_signal_16(bytes, header),
        StorageFormat::TextCsv => {
            let text = std::str::from_utf8(bytes)
                .map_err(|e| WfdbError::Schema(format!("csv is not utf-8: {e}")))?;
            let record = parse_signal_csv(text, &header.record_id)?;
            check_count(header.n_samples, record.n_samples())?;
            Ok(record)
        }
    }
}

/// Decodes WFDB format 212: each byte triple `(b0, b1, b2)` packs two 12-bit
/// two's-complement samples, `s1 = ((b1 & 0x0F) << 8) | b0` and
/// `s2 = ((b1 & 0xF0) << 4) | b2`. Samples are frame-interleaved across leads.
pub fn parse_signal_212(bytes: &[u8], header: &RecordHeader) -> Result<Record, WfdbError> {
    if header.storage_format != StorageFormat::Format212 {
        return Err(WfdbError::FormatMismatch(format!(
            "header declares {:?}, decoder expects format 212",
            header.storage_format
        )));
    }
    header.validate()?;
    let total = header.n_samples * header.n_leads;
    let needed = (total * 3).div_ceil(2);
    if bytes.len() < needed {
        return Err(WfdbError::TruncatedStream {
            needed,
            found: bytes.len(),
        });
    }
    let available = bytes.len() * 2 / 3 / header.n_leads;
    check_count(header.n_samples, available)?;
    let raw = decode_212(bytes, total);
    Ok(to_record(header, &raw))
}

/// Decodes WFDB format 16: little-endian 16-bit two's-complement samples,
/// frame-interleaved across leads.
pub fn parse_signal_16(bytes: &[u8], header: &RecordHeader) -> Result<Record, WfdbError> {
    if header.storage_format != StorageFormat::Format16 {
        return Err(WfdbError::FormatMismatch(format!(
            "header declares {:?}, decoder expects format 16",
            header.storage_format
        )));
    }
    header.validate()?;
    let total = header.n_samples * header.n_leads;
    let needed = total * 2;
    if bytes.len() < needed {
        return Err(WfdbError::TruncatedStream {
            needed,
            found: bytes.len(),
        });
    }
    check_count(header.n_samples, bytes.len() / 2 / header.n_leads)?;
    let raw: Vec<i16> = bytes[..needed]
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    Ok(to_record(header, &raw))
}

fn check_count(declared: usize, decoded: usize) -> Result<(), WfdbError> {
    if declared != decoded {
        return Err(WfdbError::SampleCountMismatch { declared, decoded });
    }
    Ok(())
}

fn to_record(header: &RecordHeader, raw: &[i16]) -> Record {
    let n_leads = header.n_leads;
    let signal = Array2::from_shape_fn((header.n_samples, n_leads), |(n, l)| {
        (f64::from(raw[n * n_leads + l]) - header.baseline[l]) / header.gain[l]
    });
    Record {
        header: header.clone(),
        signal,
    }
}

fn sign_extend_12(v: u16) -> i16 {
    ((v << 4) as i16) >> 4
}

/// Decodes the first `count` 12-bit samples of a format-212 byte stream.
pub(crate) fn decode_212(bytes: &[u8], count: usize) -> Vec<i16> {
    let mut out = Vec::with_capacity(count);
    for chunk in bytes.chunks(3) {
        if out.len() == count {
            break;
        }
        let b0 = u16::from(chunk[0]);
        let b1 = u16::from(chunk[1]);
        out.push(sign_extend_12(((b1 & 0x0F) << 8) | b0));
        if out.len() == count {
            break;
        }
        let b2 = u16::from(chunk[2]);
        out.push(sign_extend_12(((b1 & 0xF0) << 4) | b2));
    }
    out
}

/// Packs 12-bit samples (values in `[-2048, 2047]`) into format 212. An odd
/// trailing sample occupies two bytes.
pub fn encode_212(samples: &[i16]) -> Vec<u8> {
    let mut out = Vec::with_capacity((samples.len() * 3).div_ceil(2));
    for pair in samples.chunks(2) {
        let s1 = (pair[0] as u16) & 0x0FFF;
        out.push((s1 & 0xFF) as u8);
        match pair.get(1) {
            Some(&s2) => {
                let s2 = (s2 as u16) & 0x0FFF;
                out.push(((s1 >> 8) as u8) | (((s2 >> 8) as u8) << 4));
                out.push((s2 & 0xFF) as u8);
            }
            None => out.push((s1 >> 8) as u8),
        }
    }
    out
}

/// Parses a CSV signal. The header row is `fs=<Hz>,<lead name>,...`; each
/// following row is `<sample index>,<value mV>,...`.
pub fn parse_signal_csv(text: &str, record_id: &str) -> Result<Record, WfdbError> {
    let mut rows = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let head = rows
        .next()
        .ok_or_else(|| WfdbError::MalformedHeader("empty csv".into()))?;
    let cells: Vec<&str> = head.split(',').map(str::trim).collect();
    let fs: f64 = cells[0]
        .strip_prefix("fs=")
        .ok_or_else(|| WfdbError::MalformedHeader("csv header must start with fs=<Hz>".into()))?
        .parse()
        .map_err(|_| WfdbError::MalformedHeader(format!("non-numeric fs {:?}", cells[0])))?;
    let lead_names: Vec<String> = cells[1..].iter().map(|s| s.to_string()).collect();
    let n_leads = lead_names.len();
    if n_leads == 0 {
        return Err(WfdbError::MalformedHeader("csv declares 0 leads".into()));
    }

    let mut values = Vec::new();
    for (i, row) in rows.enumerate() {
        let cells: Vec<&str> = row.split(',').map(str::trim).collect();
        if cells.len() != n_leads + 1 {
            return Err(WfdbError::Schema(format!(
                "csv row {} has {} columns, expected {}",
                i + 2,
                cells.len(),
                n_leads + 1
            )));
        }
        for c in &cells[1..] {
            let v: f64 = c
                .parse()
                .map_err(|_| WfdbError::Schema(format!("csv row {}: bad value {c:?}", i + 2)))?;
            values.push(v);
        }
    }
    let n_samples = values.len() / n_leads;
    let header = RecordHeader {
        record_id: record_id.to_string(),
        n_leads,
        fs,
        n_samples,
        gain: vec![1.0; n_leads],
        baseline: vec![0.0; n_leads],
        storage_format: StorageFormat::TextCsv,
        files: vec![],
        lead_names,
    };
    header.validate()?;
    let signal = Array2::from_shape_vec((n_samples, n_leads), values)
        .map_err(|e| WfdbError::Schema(e.to_string()))?;
    Record::new(header, signal)
}
