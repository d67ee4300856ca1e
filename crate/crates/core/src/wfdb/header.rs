use super::{RecordHeader, StorageFormat, WfdbError};

/// WFDB's default ADC gain when a signal line declares 0 or omits it.
const DEFAULT_GAIN: f64 = 200.0;

/// Parses WFDB header text.
///
/// Record line: `name[/segments] n_leads fs[/counter][(base)] n_samples ...`.
/// Signal lines: `file format[xN][:skew][+offset] gain[(baseline)][/units] adcres adczero ...`.
/// Lines starting with `#` are comments.
pub fn parse_header(text: &str) -> Result<RecordHeader, WfdbError> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));

    let record_line = lines
        .next()
        .ok_or_else(|| WfdbError::MalformedHeader("empty header".into()))?;
    let fields: Vec<&str> = record_line.split_whitespace().collect();
    let name = fields[0];
    if name.contains('/') {
        return Err(WfdbError::UnsupportedFormat(format!(
            "multi-segment record {name}"
        )));
    }
    let n_leads: usize = parse_field(fields.get(1), "number of signals")?;
    if n_leads == 0 {
        return Err(WfdbError::MalformedHeader("record declares 0 leads".into()));
    }
    let fs_field = fields
        .get(2)
        .ok_or_else(|| WfdbError::MalformedHeader("missing sampling frequency".into()))?;
    let fs_text = fs_field.split(['/', '(']).next().unwrap_or_default();
    let fs: f64 = fs_text
        .parse()
        .map_err(|_| WfdbError::MalformedHeader(format!("non-numeric fs {fs_field:?}")))?;
    let n_samples: usize = parse_field(fields.get(3), "number of samples")?;

    let mut files = Vec::with_capacity(n_leads);
    let mut gain = Vec::with_capacity(n_leads);
    let mut baseline = Vec::with_capacity(n_leads);
    let mut lead_names = Vec::with_capacity(n_leads);
    let mut format: Option<StorageFormat> = None;

    for lead in 0..n_leads {
        let line = lines.next().ok_or_else(|| {
            WfdbError::MalformedHeader(format!("missing signal line for lead {lead}"))
        })?;
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 2 {
            return Err(WfdbError::MalformedHeader(format!(
                "short signal line {line:?}"
            )));
        }
        files.push(f[0].to_string());

        let code = f[1]
            .split(|c: char| !c.is_ascii_digit())
            .next()
            .unwrap_or_default();
        let this = match code {
            "212" => StorageFormat::Format212,
            "16" => StorageFormat::Format16,
            other => return Err(WfdbError::UnsupportedFormat(format!("format code {other}"))),
        };
        match format {
            Some(prev) if prev != this => {
                return Err(WfdbError::UnsupportedFormat(
                    "leads stored in different formats".into(),
                ))
            }
            _ => format = Some(this),
        }

        // gain[(baseline)][/units]
        let (g, b) = match f.get(2) {
            Some(spec) => parse_gain(spec)?,
            None => (DEFAULT_GAIN, None),
        };
        let adc_zero: f64 = match f.get(4) {
            Some(z) => z
                .parse()
                .map_err(|_| WfdbError::MalformedHeader(format!("non-numeric adc zero {z:?}")))?,
            None => 0.0,
        };
        gain.push(if g == 0.0 { DEFAULT_GAIN } else { g });
        baseline.push(b.unwrap_or(adc_zero));
        lead_names.push(f.get(8..).map(|d| d.join(" ")).unwrap_or_default());
    }

    let header = RecordHeader {
        record_id: name.to_string(),
        n_leads,
        fs,
        n_samples,
        gain,
        baseline,
        storage_format: format.expect("n_leads >= 1"),
        files,
        lead_names,
    };
    header.validate()?;
    Ok(header)
}

fn parse_field<T: std::str::FromStr>(field: Option<&&str>, what: &str) -> Result<T, WfdbError> {
    let text = field.ok_or_else(|| WfdbError::MalformedHeader(format!("missing {what}")))?;
    text.parse()
        .map_err(|_| WfdbError::MalformedHeader(format!("non-numeric {what} {text:?}")))
}

fn parse_gain(spec: &str) -> Result<(f64, Option<f64>), WfdbError> {
    let spec = spec.split('/').next().unwrap_or_default();
    let bad = || WfdbError::MalformedHeader(format!("bad gain field {spec:?}"));
    match spec.split_once('(') {
        Some((g, rest)) => {
            let b = rest.strip_suffix(')').ok_or_else(bad)?;
            Ok((
                g.parse().map_err(|_| bad())?,
                Some(b.parse().map_err(|_| bad())?),
            ))
        }
        None => Ok((spec.parse().map_err(|_| bad())?, None)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const QT_STYLE: &str = "selX 2 250 225000\n\
        selX.dat 212 200 11 1024 -40 -12345 0 MLII\n\
        selX.dat 212 200(10)/mV 11 1024 13 21 0 V5\n";

    #[test]
    fn parses_two_lead_212_header() {
        let h = parse_header(QT_STYLE).unwrap();
        assert_eq!(h.record_id, "selX");
        assert_eq!(h.n_leads, 2);
        assert_eq!(h.fs, 250.0);
        assert_eq!(h.n_samples, 225_000);
        assert_eq!(h.storage_format, StorageFormat::Format212);
        assert_eq!(h.gain, vec![200.0, 200.0]);
        // lead 0 falls back to adc zero, lead 1 has an explicit baseline
        assert_eq!(h.baseline, vec![1024.0, 10.0]);
        assert_eq!(h.lead_names, vec!["MLII", "V5"]);
    }

    #[test]
    fn zero_leads_is_malformed() {
        assert!(matches!(
            parse_header("x 0 250 100\n"),
            Err(WfdbError::MalformedHeader(_))
        ));
    }

    #[test]
    fn format_80_is_unsupported() {
        let text = "x 1 250 100\nx.dat 80 200 8 0\n";
        assert!(matches!(
            parse_header(text),
            Err(WfdbError::UnsupportedFormat(_))
        ));
    }

    #[test]
    fn non_numeric_fs_is_malformed() {
        assert!(matches!(
            parse_header("x 1 abc 100\nx.dat 16 200\n"),
            Err(WfdbError::MalformedHeader(_))
        ));
        assert!(matches!(
            parse_header("x 1\n"),
            Err(WfdbError::MalformedHeader(_))
        ));
    }

    #[test]
    fn comments_and_counter_frequency_are_skipped() {
        let text = "# comment\nx 1 360/720(0) 10\nx.dat 16 0\n";
        let h = parse_header(text).unwrap();
        assert_eq!(h.fs, 360.0);
        assert_eq!(h.gain, vec![DEFAULT_GAIN]);
        assert_eq!(h.storage_format, StorageFormat::Format16);
    }

    #[test]
    fn missing_signal_line_is_malformed() {
        assert!(matches!(
            parse_header("x 2 250 10\nx.dat 212 200\n"),
            Err(WfdbError::MalformedHeader(_))
        ));
    }
}
