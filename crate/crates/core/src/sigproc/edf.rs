//! EDF container: 256-byte fixed header, 256 bytes per signal, then data
//! records of 16-bit little-endian two's complement samples.
//!
//! Annotations are not read from EDF+ TAL blocks; seizure times travel in a
//! sidecar file (see [`super::parse_annotations`]).

use super::{Recording, Result, SigprocError};

const FIXED_HEADER: usize = 256;
const SIGNAL_HEADER: usize = 256;

/// Physical and digital extremes of one signal.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelScaling {
    pub physical_min: f64,
    pub physical_max: f64,
    pub digital_min: i32,
    pub digital_max: i32,
}

impl ChannelScaling {
    pub fn symmetric(physical_max: f64) -> Self {
        Self {
            physical_min: -physical_max,
            physical_max,
            digital_min: -32768,
            digital_max: 32767,
        }
    }

    fn gain(&self) -> f64 {
        (self.physical_max - self.physical_min) / (self.digital_max - self.digital_min) as f64
    }

    pub fn to_physical(&self, digital: i16) -> f64 {
        (digital as i32 - self.digital_min) as f64 * self.gain() + self.physical_min
    }

    pub fn to_digital(&self, physical: f64) -> i16 {
        let d = (physical - self.physical_min) / self.gain() + self.digital_min as f64;
        d.round().clamp(self.digital_min as f64, self.digital_max as f64) as i16
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdfHeader {
    pub patient: String,
    pub recording: String,
    pub start_date: String,
    pub start_time: String,
    pub n_records: usize,
    pub record_duration_s: f64,
    pub labels: Vec<String>,
    pub physical_dimension: Vec<String>,
    pub samples_per_record: Vec<usize>,
    pub scaling: Vec<ChannelScaling>,
}

/// What `write_edf` needs beyond the samples themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct EdfLayout {
    pub record_duration_s: f64,
    pub scaling: Vec<ChannelScaling>,
}

impl EdfLayout {
    pub fn from_header(header: &EdfHeader) -> Self {
        Self {
            record_duration_s: header.record_duration_s,
            scaling: header.scaling.clone(),
        }
    }

    /// One-second records, symmetric physical range on every channel.
    pub fn symmetric(n_channels: usize, physical_max: f64) -> Self {
        Self {
            record_duration_s: 1.0,
            scaling: vec![ChannelScaling::symmetric(physical_max); n_channels],
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, width: usize) -> Result<(&'a str, usize)> {
        let offset = self.pos;
        let end = offset + width;
        if end > self.bytes.len() {
            return Err(SigprocError::TruncatedHeader {
                offset,
                needed: width,
                available: self.bytes.len().saturating_sub(offset),
            });
        }
        self.pos = end;
        // EDF headers are ASCII; anything else is replaced rather than rejected.
        let raw = &self.bytes[offset..end];
        let text = std::str::from_utf8(raw).unwrap_or("\u{fffd}");
        Ok((text, offset))
    }

    fn text(&mut self, width: usize) -> Result<String> {
        Ok(self.take(width)?.0.trim().to_string())
    }

    fn number<T: std::str::FromStr>(&mut self, width: usize, field: &'static str) -> Result<T> {
        let (text, offset) = self.take(width)?;
        text.trim().parse().map_err(|_| SigprocError::MalformedNumericField {
            field,
            offset,
            text: text.to_string(),
        })
    }
}

/// Parses the header and returns it alongside the physical-unit recording.
pub fn read_edf(bytes: &[u8]) -> Result<(EdfHeader, Recording)> {
    let mut cur = Cursor { bytes, pos: 0 };
    if bytes.len() < FIXED_HEADER {
        return Err(SigprocError::TruncatedHeader {
            offset: 0,
            needed: FIXED_HEADER,
            available: bytes.len(),
        });
    }
    let _version = cur.text(8)?;
    let patient = cur.text(80)?;
    let recording = cur.text(80)?;
    let start_date = cur.text(8)?;
    let start_time = cur.text(8)?;
    let header_bytes: usize = cur.number(8, "header bytes")?;
    let _reserved = cur.text(44)?;
    let n_records_offset = cur.pos;
    let n_records: i64 = cur.number(8, "number of data records")?;
    let duration_offset = cur.pos;
    let record_duration_s: f64 = cur.number(8, "record duration")?;
    let ns_offset = cur.pos;
    let ns: usize = cur.number(4, "number of signals")?;

    if header_bytes != FIXED_HEADER + ns * SIGNAL_HEADER {
        return Err(SigprocError::MalformedNumericField {
            field: "header bytes",
            offset: 184,
            text: header_bytes.to_string(),
        });
    }
    if ns == 0 {
        return Err(SigprocError::MalformedNumericField {
            field: "number of signals",
            offset: ns_offset,
            text: "0".into(),
        });
    }
    if !(record_duration_s > 0.0) {
        return Err(SigprocError::MalformedNumericField {
            field: "record duration",
            offset: duration_offset,
            text: record_duration_s.to_string(),
        });
    }

    let labels: Vec<String> = (0..ns).map(|_| cur.text(16)).collect::<Result<_>>()?;
    let _transducer: Vec<String> = (0..ns).map(|_| cur.text(80)).collect::<Result<_>>()?;
    let physical_dimension: Vec<String> = (0..ns).map(|_| cur.text(8)).collect::<Result<_>>()?;
    let pmin: Vec<f64> = (0..ns)
        .map(|_| cur.number(8, "physical minimum"))
        .collect::<Result<_>>()?;
    let pmax: Vec<f64> = (0..ns)
        .map(|_| cur.number(8, "physical maximum"))
        .collect::<Result<_>>()?;
    let dmin: Vec<i32> = (0..ns)
        .map(|_| cur.number(8, "digital minimum"))
        .collect::<Result<_>>()?;
    let dmax: Vec<i32> = (0..ns)
        .map(|_| cur.number(8, "digital maximum"))
        .collect::<Result<_>>()?;
    let _prefilter: Vec<String> = (0..ns).map(|_| cur.text(80)).collect::<Result<_>>()?;
    let spr_offset = cur.pos;
    let samples_per_record: Vec<usize> = (0..ns)
        .map(|_| cur.number(8, "samples per record"))
        .collect::<Result<_>>()?;
    let _reserved: Vec<String> = (0..ns).map(|_| cur.text(32)).collect::<Result<_>>()?;

    let scaling: Vec<ChannelScaling> = (0..ns)
        .map(|i| ChannelScaling {
            physical_min: pmin[i],
            physical_max: pmax[i],
            digital_min: dmin[i],
            digital_max: dmax[i],
        })
        .collect();
    if let Some(i) = scaling
        .iter()
        .position(|s| s.digital_max <= s.digital_min || s.physical_max == s.physical_min)
    {
        return Err(SigprocError::UnsupportedLayout(format!(
            "signal {i} has a degenerate physical or digital range"
        )));
    }
    let spr = samples_per_record[0];
    if samples_per_record.iter().any(|&s| s != spr) {
        return Err(SigprocError::UnsupportedLayout(format!(
            "mixed samples per record starting at byte offset {spr_offset}"
        )));
    }

    let record_bytes = 2 * spr * ns;
    let data_bytes = &bytes[header_bytes..];
    let n_records = if n_records < 0 {
        if record_bytes == 0 || !data_bytes.len().is_multiple_of(record_bytes) {
            return Err(SigprocError::InconsistentRecordCount {
                offset: n_records_offset,
                declared: n_records,
                actual: data_bytes.len(),
                record_bytes,
            });
        }
        data_bytes.len() / record_bytes
    } else {
        let n = n_records as usize;
        if data_bytes.len() != n * record_bytes {
            return Err(SigprocError::InconsistentRecordCount {
                offset: n_records_offset,
                declared: n_records,
                actual: data_bytes.len(),
                record_bytes,
            });
        }
        n
    };

    let mut data = vec![Vec::with_capacity(n_records * spr); ns];
    for r in 0..n_records {
        let record = &data_bytes[r * record_bytes..(r + 1) * record_bytes];
        for (ch, series) in data.iter_mut().enumerate() {
            let block = &record[ch * 2 * spr..(ch + 1) * 2 * spr];
            series.extend(
                block
                    .chunks_exact(2)
                    .map(|b| scaling[ch].to_physical(i16::from_le_bytes([b[0], b[1]]))),
            );
        }
    }

    let header = EdfHeader {
        patient,
        recording,
        start_date,
        start_time,
        n_records,
        record_duration_s,
        labels: labels.clone(),
        physical_dimension,
        samples_per_record,
        scaling,
    };
    let rec = Recording::new(labels, spr as f64 / record_duration_s, data, Vec::new())?;
    Ok((header, rec))
}

/// Parses an EDF byte stream into a physical-unit recording.
pub fn parse_edf(bytes: &[u8]) -> Result<Recording> {
    read_edf(bytes).map(|(_, rec)| rec)
}

fn put(out: &mut Vec<u8>, text: &str, width: usize) {
    let mut field: Vec<u8> = text
        .bytes()
        .map(|b| if b.is_ascii() { b } else { b'?' })
        .take(width)
        .collect();
    field.resize(width, b' ');
    out.extend_from_slice(&field);
}

/// Formats a number into at most `width` ASCII characters.
fn fit_number(v: f64, width: usize) -> String {
    let plain = format!("{v}");
    if plain.len() <= width {
        return plain;
    }
    for prec in (0..width).rev() {
        let s = format!("{v:.prec$}");
        if s.len() <= width {
            return s;
        }
    }
    plain[..width].to_string()
}

/// Serializes a recording. Samples are mapped to the digital range of
/// `layout`; amplitudes outside the declared physical range are rejected.
pub fn write_edf(recording: &Recording, layout: &EdfLayout) -> Result<Vec<u8>> {
    recording.check()?;
    let ns = recording.n_channels();
    if ns == 0 {
        return Err(SigprocError::EmptyRecording);
    }
    if layout.scaling.len() != ns {
        return Err(SigprocError::UnsupportedLayout(format!(
            "{} scalings for {ns} channels",
            layout.scaling.len()
        )));
    }
    let spr_f = recording.sample_rate * layout.record_duration_s;
    let spr = spr_f.round() as usize;
    if spr == 0 || (spr_f - spr as f64).abs() > 1e-9 {
        return Err(SigprocError::UnsupportedLayout(format!(
            "record of {} s does not hold a whole number of samples at {} Hz",
            layout.record_duration_s, recording.sample_rate
        )));
    }
    let n = recording.n_samples();
    if !n.is_multiple_of(spr) {
        return Err(SigprocError::UnsupportedLayout(format!(
            "{n} samples do not fill whole records of {spr}"
        )));
    }
    for (ch, (series, s)) in recording.data.iter().zip(&layout.scaling).enumerate() {
        if let Some((i, &v)) = series
            .iter()
            .enumerate()
            .find(|(_, &v)| !(v >= s.physical_min && v <= s.physical_max))
        {
            return Err(SigprocError::UnrepresentableAmplitude {
                channel: ch,
                sample: i,
                value: v,
                min: s.physical_min,
                max: s.physical_max,
            });
        }
    }

    // Convert with the scaling a reader will see after the header text is parsed.
    let written: Vec<ChannelScaling> = layout
        .scaling
        .iter()
        .map(|s| ChannelScaling {
            physical_min: fit_number(s.physical_min, 8).parse().unwrap_or(s.physical_min),
            physical_max: fit_number(s.physical_max, 8).parse().unwrap_or(s.physical_max),
            ..s.clone()
        })
        .collect();

    let n_records = n / spr;
    let mut out = Vec::with_capacity(FIXED_HEADER + ns * SIGNAL_HEADER + 2 * n);
    put(&mut out, "0", 8);
    put(&mut out, "X X X X", 80);
    put(&mut out, "Startdate 01-JAN-2000 X X X", 80);
    put(&mut out, "01.01.00", 8);
    put(&mut out, "00.00.00", 8);
    put(&mut out, &(FIXED_HEADER + ns * SIGNAL_HEADER).to_string(), 8);
    put(&mut out, "", 44);
    put(&mut out, &n_records.to_string(), 8);
    put(&mut out, &fit_number(layout.record_duration_s, 8), 8);
    put(&mut out, &ns.to_string(), 4);
    for l in &recording.channel_labels {
        put(&mut out, l, 16);
    }
    for _ in 0..ns {
        put(&mut out, "", 80);
    }
    for _ in 0..ns {
        put(&mut out, "uV", 8);
    }
    for s in &written {
        put(&mut out, &fit_number(s.physical_min, 8), 8);
    }
    for s in &written {
        put(&mut out, &fit_number(s.physical_max, 8), 8);
    }
    for s in &written {
        put(&mut out, &s.digital_min.to_string(), 8);
    }
    for s in &written {
        put(&mut out, &s.digital_max.to_string(), 8);
    }
    for _ in 0..ns {
        put(&mut out, "", 80);
    }
    for _ in 0..ns {
        put(&mut out, &spr.to_string(), 8);
    }
    for _ in 0..ns {
        put(&mut out, "", 32);
    }
    for r in 0..n_records {
        for (series, s) in recording.data.iter().zip(&written) {
            for &v in &series[r * spr..(r + 1) * spr] {
                out.extend_from_slice(&s.to_digital(v).to_le_bytes());
            }
        }
    }
    Ok(out)
}
