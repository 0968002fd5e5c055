//! Text formats for photon streams, time tags and result tables.
//!
//! Photon stream:
//! ```text
//! # photon_stream v1 duration_ps=<N>
//! <time_ps>
//! ```
//! Time tags (the measured view drops the origin column):
//! ```text
//! # timetags v1 duration_ps=<N> seed=<S>
//! <channel>,<time_ps>,<origin>
//! ```
//! Result tables are plain comma-separated values with a fixed header row.

use std::io::{self, Write};

use thiserror::Error;

use crate::analysis::{
    ChannelJitter, CrosstalkEstimate, DelayHistogram, Regime, ResetFit, SdePoint, SweepPoint,
    SweepResult,
};
use crate::engine::{MeasuredTag, Origin, TimeTag};
use crate::model::ELEMENTS;
use crate::source::{PhotonStream, Picos};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct FormatError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> FormatError {
    FormatError {
        line,
        message: message.into(),
    }
}

/// Split a `# <magic> v1 k=v ...` header and check the keys match `keys` in order.
fn parse_header<'a>(
    line: &'a str,
    magic: &str,
    keys: &[&str],
) -> Result<Vec<&'a str>, FormatError> {
    let mut tokens = line.split_ascii_whitespace();
    if tokens.next() != Some("#") || tokens.next() != Some(magic) {
        return Err(err(1, format!("expected '# {magic} v1' header")));
    }
    if tokens.next() != Some("v1") {
        return Err(err(1, "unsupported format version"));
    }
    let mut values = Vec::with_capacity(keys.len());
    for key in keys {
        let tok = tokens
            .next()
            .ok_or_else(|| err(1, format!("header missing {key}")))?;
        let value = tok
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix('='))
            .ok_or_else(|| err(1, format!("expected {key}=<value>, got '{tok}'")))?;
        values.push(value);
    }
    if let Some(extra) = tokens.next() {
        return Err(err(1, format!("unexpected header field '{extra}'")));
    }
    Ok(values)
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize, what: &str) -> Result<T, FormatError> {
    s.trim()
        .parse()
        .map_err(|_| err(line, format!("bad {what} '{}'", s.trim())))
}

pub fn write_photon_stream<W: Write>(mut w: W, stream: &PhotonStream) -> io::Result<()> {
    writeln!(w, "# photon_stream v1 duration_ps={}", stream.duration())?;
    for t in stream.arrivals() {
        writeln!(w, "{t}")?;
    }
    Ok(())
}

pub fn parse_photon_stream(text: &str) -> Result<PhotonStream, FormatError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty input"))?;
    let duration: Picos = parse_num(
        parse_header(header, "photon_stream", &["duration_ps"])?[0],
        1,
        "duration",
    )?;
    if duration <= 0 {
        return Err(err(1, "duration must be positive"));
    }
    let mut arrivals = Vec::new();
    for (idx, line) in lines.enumerate() {
        let n = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        arrivals.push(parse_num::<Picos>(line, n, "timestamp")?);
    }
    PhotonStream::new(arrivals, duration).map_err(|e| match e {
        crate::source::SourceError::BadTimestamp { position, .. } => {
            err(position + 2, e.to_string())
        }
        other => err(1, other.to_string()),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagFileHeader {
    pub duration: Picos,
    pub seed: u64,
}

impl TagFileHeader {
    fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        writeln!(
            w,
            "# timetags v1 duration_ps={} seed={}",
            self.duration, self.seed
        )
    }
}

pub fn write_timetags<W: Write>(
    mut w: W,
    header: &TagFileHeader,
    tags: &[TimeTag],
) -> io::Result<()> {
    header.write(&mut w)?;
    for t in tags {
        writeln!(w, "{},{},{}", t.channel, t.time, t.origin.as_str())?;
    }
    Ok(())
}

pub fn write_measured_tags<W: Write>(
    mut w: W,
    header: &TagFileHeader,
    tags: &[MeasuredTag],
) -> io::Result<()> {
    header.write(&mut w)?;
    for t in tags {
        writeln!(w, "{},{}", t.channel, t.time)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TagRecord {
    pub channel: u8,
    pub time: Picos,
    /// Absent in the measured view.
    pub origin: Option<Origin>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TagFile {
    pub header: TagFileHeader,
    pub records: Vec<TagRecord>,
}

/// Parse either the full or the measured tag export. All records must share
/// the same column count.
pub fn parse_timetags(text: &str) -> Result<TagFile, FormatError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty input"))?;
    let h = parse_header(header, "timetags", &["duration_ps", "seed"])?;
    let header = TagFileHeader {
        duration: parse_num(h[0], 1, "duration")?,
        seed: parse_num(h[1], 1, "seed")?,
    };
    if header.duration <= 0 {
        return Err(err(1, "duration must be positive"));
    }
    let mut records = Vec::new();
    let mut columns = None;
    for (idx, line) in lines.enumerate() {
        let n = idx + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if !matches!(fields.len(), 2 | 3) {
            return Err(err(n, "expected 2 or 3 fields"));
        }
        if *columns.get_or_insert(fields.len()) != fields.len() {
            return Err(err(n, "inconsistent column count"));
        }
        let channel: u8 = parse_num(fields[0], n, "channel")?;
        if channel as usize >= ELEMENTS {
            return Err(err(n, format!("channel {channel} out of range")));
        }
        let origin = match fields.get(2) {
            Some(o) => Some(
                o.trim()
                    .parse::<Origin>()
                    .map_err(|_| err(n, format!("unknown origin '{}'", o.trim())))?,
            ),
            None => None,
        };
        records.push(TagRecord {
            channel,
            time: parse_num(fields[1], n, "time")?,
            origin,
        });
    }
    Ok(TagFile { header, records })
}

/// Parse comma-separated rows under an exact header line.
pub fn parse_csv<'a>(text: &'a str, header: &[&str]) -> Result<Vec<Vec<&'a str>>, FormatError> {
    let mut lines = text.lines();
    let first = lines.next().ok_or_else(|| err(1, "empty input"))?;
    let got: Vec<&str> = first.split(',').map(str::trim).collect();
    if got != header {
        return Err(err(1, format!("expected header '{}'", header.join(","))));
    }
    let mut rows = Vec::new();
    for (idx, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != header.len() {
            return Err(err(
                idx + 2,
                format!("expected {} fields, got {}", header.len(), fields.len()),
            ));
        }
        rows.push(fields);
    }
    Ok(rows)
}

pub const SWEEP_HEADER: &str = "attenuation_db,incident_rate,ch0,ch1,ch2,ch3,ch4,ch5,ch6,ch7,ch8,ch9,ch10,ch11,ch12,ch13,ch14,ch15";
pub const FITS_HEADER: [&str; 5] = ["channel", "tau_ns", "eps", "dark_hz", "residual"];
pub const JITTER_HEADER: [&str; 3] = ["channel", "j_meas_ps", "j_snspd_ps"];
pub const CROSSTALK_HEADER: [&str; 4] = ["i", "j", "regime", "percent"];
pub const SDE_HEADER: [&str; 3] = ["flux", "sde_mc", "sde_analytic"];
pub const DELAY_HEADER: [&str; 5] = ["regime", "i", "j", "bin_start_ps", "count"];

pub fn write_sweep_csv<W: Write>(mut w: W, sweep: &SweepResult) -> io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for p in &sweep.points {
        write!(w, "{},{}", p.attenuation_db, p.incident_rate)?;
        for r in p.counted_rates {
            write!(w, ",{r}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_fits_csv<W: Write>(mut w: W, fits: &[(usize, ResetFit)]) -> io::Result<()> {
    writeln!(w, "{}", FITS_HEADER.join(","))?;
    for (ch, f) in fits {
        writeln!(
            w,
            "{ch},{},{},{},{}",
            f.tau_ns, f.eps, f.dark_hz, f.residual_norm
        )?;
    }
    Ok(())
}

/// Channels whose budget failed are omitted.
pub fn write_jitter_csv<W: Write>(mut w: W, channels: &[ChannelJitter]) -> io::Result<()> {
    writeln!(w, "{}", JITTER_HEADER.join(","))?;
    for c in channels {
        if let Ok(b) = &c.budget {
            writeln!(w, "{},{},{}", c.channel, b.j_meas, b.j_snspd)?;
        }
    }
    Ok(())
}

pub fn write_crosstalk_csv<W: Write>(mut w: W, estimates: &[CrosstalkEstimate]) -> io::Result<()> {
    writeln!(w, "{}", CROSSTALK_HEADER.join(","))?;
    for e in estimates {
        for i in 0..ELEMENTS {
            for j in 0..ELEMENTS {
                if i != j {
                    writeln!(w, "{i},{j},{},{}", e.regime.as_str(), e.percent[i][j])?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_delay_csv<W: Write>(mut w: W, hists: &[(Regime, &DelayHistogram)]) -> io::Result<()> {
    writeln!(w, "{}", DELAY_HEADER.join(","))?;
    for (regime, h) in hists {
        for (k, n) in h.counts.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{n}",
                regime.as_str(),
                h.aggressor,
                h.victim,
                k as f64 * h.bin_ps
            )?;
        }
    }
    Ok(())
}

pub fn write_sde_csv<W: Write>(mut w: W, points: &[SdePoint]) -> io::Result<()> {
    writeln!(w, "{}", SDE_HEADER.join(","))?;
    for p in points {
        writeln!(w, "{},{},{}", p.flux, p.sde_mc, p.sde_analytic)?;
    }
    Ok(())
}

/// Sweep table back into a [`SweepResult`]. Point durations are not part of
/// the table and read back as zero.
pub fn read_sweep_csv(text: &str, coupling: [f64; ELEMENTS]) -> Result<SweepResult, FormatError> {
    let header: Vec<&str> = SWEEP_HEADER.split(',').collect();
    let points = parse_csv(text, &header)?
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let n = k + 2;
            let mut counted_rates = [0.0; ELEMENTS];
            for (ch, v) in counted_rates.iter_mut().enumerate() {
                *v = parse_num(r[ch + 2], n, "count rate")?;
            }
            Ok(SweepPoint {
                attenuation_db: parse_num(r[0], n, "attenuation_db")?,
                incident_rate: parse_num(r[1], n, "incident_rate")?,
                counted_rates,
                duration: 0,
            })
        })
        .collect::<Result<Vec<_>, FormatError>>()?;
    Ok(SweepResult { points, coupling })
}

/// `(channel, tau_ns, eps, dark_hz, residual)` rows.
pub fn read_fits_csv(text: &str) -> Result<Vec<(usize, [f64; 4])>, FormatError> {
    parse_csv(text, &FITS_HEADER)?
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let n = k + 2;
            Ok((
                parse_num(r[0], n, "channel")?,
                [
                    parse_num(r[1], n, "tau_ns")?,
                    parse_num(r[2], n, "eps")?,
                    parse_num(r[3], n, "dark_hz")?,
                    parse_num(r[4], n, "residual")?,
                ],
            ))
        })
        .collect()
}

/// `(channel, j_meas_ps, j_snspd_ps)` rows.
pub fn read_jitter_csv(text: &str) -> Result<Vec<(usize, f64, f64)>, FormatError> {
    parse_csv(text, &JITTER_HEADER)?
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let n = k + 2;
            Ok((
                parse_num(r[0], n, "channel")?,
                parse_num(r[1], n, "j_meas_ps")?,
                parse_num(r[2], n, "j_snspd_ps")?,
            ))
        })
        .collect()
}

/// `(i, j, regime, percent)` rows.
pub fn read_crosstalk_csv(text: &str) -> Result<Vec<(usize, usize, Regime, f64)>, FormatError> {
    parse_csv(text, &CROSSTALK_HEADER)?
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let n = k + 2;
            Ok((
                parse_num(r[0], n, "i")?,
                parse_num(r[1], n, "j")?,
                r[2].parse::<Regime>().map_err(|m| err(n, m))?,
                parse_num(r[3], n, "percent")?,
            ))
        })
        .collect()
}

/// `(flux, sde_mc, sde_analytic)` rows.
pub fn read_sde_csv(text: &str) -> Result<Vec<(f64, f64, f64)>, FormatError> {
    parse_csv(text, &SDE_HEADER)?
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let n = k + 2;
            Ok((
                parse_num(r[0], n, "flux")?,
                parse_num(r[1], n, "sde_mc")?,
                parse_num(r[2], n, "sde_analytic")?,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn photon_stream_text() {
        let s = PhotonStream::new(vec![0, 7, 7, 99], 100).unwrap();
        let mut buf = Vec::new();
        write_photon_stream(&mut buf, &s).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# photon_stream v1 duration_ps=100\n"));
        assert_eq!(parse_photon_stream(&text).unwrap(), s);
        assert!(parse_photon_stream("# photon_stream v1 duration_ps=10\n5\n3\n").is_err());
        assert!(parse_photon_stream("# photon_stream v2 duration_ps=10\n").is_err());
        assert!(parse_photon_stream("").is_err());
    }

    #[test]
    fn timetag_text() {
        let header = TagFileHeader {
            duration: 1000,
            seed: 42,
        };
        let tags = vec![
            TimeTag {
                time: -3,
                channel: 1,
                origin: Origin::Dark,
            },
            TimeTag {
                time: 15,
                channel: 15,
                origin: Origin::Crosstalk,
            },
        ];
        let mut buf = Vec::new();
        write_timetags(&mut buf, &header, &tags).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# timetags v1 duration_ps=1000 seed=42\n1,-3,dark\n15,15,crosstalk\n"
        );
        let file = parse_timetags(&text).unwrap();
        assert_eq!(file.header, header);
        assert_eq!(file.records[1].origin, Some(Origin::Crosstalk));

        let mut buf = Vec::new();
        write_measured_tags(&mut buf, &header, &crate::engine::measured_view(&tags)).unwrap();
        let file = parse_timetags(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert!(file.records.iter().all(|r| r.origin.is_none()));

        assert!(parse_timetags("# timetags v1 duration_ps=10 seed=1\n16,0,dark\n").is_err());
        assert!(parse_timetags("# timetags v1 duration_ps=10 seed=1\n1,0\n1,0,dark\n").is_err());
        assert!(parse_timetags("# timetags v1 seed=1 duration_ps=10\n").is_err());
    }

    #[test]
    fn csv_header_is_enforced() {
        assert!(read_sde_csv("flux,sde_mc\n1,2\n").is_err());
        assert!(read_sde_csv("flux,sde_mc,sde_analytic\n1,2\n").is_err());
        let rows = read_sde_csv("flux,sde_mc,sde_analytic\n1e9,0.55,0.556\n").unwrap();
        assert_eq!(rows, vec![(1e9, 0.55, 0.556)]);
    }

    proptest! {
        #[test]
        fn tag_export_round_trips(
            raw in proptest::collection::vec((0u8..16, -1_000_000i64..1_000_000, 0usize..3), 0..200),
            seed in any::<u64>(),
        ) {
            let origins = [Origin::Photon, Origin::Dark, Origin::Crosstalk];
            let tags: Vec<TimeTag> = raw
                .iter()
                .map(|&(channel, time, o)| TimeTag { time, channel, origin: origins[o] })
                .collect();
            let header = TagFileHeader { duration: 1_000_000, seed };
            let mut buf = Vec::new();
            write_timetags(&mut buf, &header, &tags).unwrap();
            let file = parse_timetags(std::str::from_utf8(&buf).unwrap()).unwrap();
            prop_assert_eq!(file.header, header);
            let back: Vec<TimeTag> = file
                .records
                .iter()
                .map(|r| TimeTag { time: r.time, channel: r.channel, origin: r.origin.unwrap() })
                .collect();
            prop_assert_eq!(back, tags);
        }
    }
}
