// Binary layout, little-endian, 16 bytes per record after an 8-byte magic
// "EVST0001". Record byte offsets: x:u16 at 0, y:u16 at 2, p:u8 at 4,
// zero padding 5..8, t:u64 (microseconds) at 8.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Event;
use crate::error::{Error, Result};

pub const EVENT_MAGIC: &[u8; 8] = b"EVST0001";
pub const EVENT_RECORD_BYTES: usize = 16;

pub fn write_events_binary<W: Write>(mut out: W, events: &[Event]) -> Result<()> {
    out.write_all(EVENT_MAGIC)?;
    for e in events {
        out.write_all(&encode_record(e))?;
    }
    out.flush()?;
    Ok(())
}

fn encode_record(e: &Event) -> [u8; EVENT_RECORD_BYTES] {
    let mut rec = [0u8; EVENT_RECORD_BYTES];
    rec[0..2].copy_from_slice(&e.x.to_le_bytes());
    rec[2..4].copy_from_slice(&e.y.to_le_bytes());
    rec[4] = e.p;
    rec[8..16].copy_from_slice(&e.t.to_le_bytes());
    rec
}

fn decode_record(rec: &[u8; EVENT_RECORD_BYTES], index: usize) -> Result<Event> {
    if rec[5..8].iter().any(|&b| b != 0) {
        return Err(Error::Format(format!("event record {index}: non-zero padding")));
    }
    let p = rec[4];
    if p > 1 {
        return Err(Error::Format(format!("event record {index}: polarity {p}")));
    }
    Ok(Event {
        x: u16::from_le_bytes([rec[0], rec[1]]),
        y: u16::from_le_bytes([rec[2], rec[3]]),
        p,
        t: u64::from_le_bytes(rec[8..16].try_into().expect("8 bytes")),
    })
}

pub fn read_events_binary<R: Read>(mut input: R) -> Result<Vec<Event>> {
    let mut magic = [0u8; 8];
    input
        .read_exact(&mut magic)
        .map_err(|_| Error::Truncated("event file magic"))?;
    if &magic != EVENT_MAGIC {
        return Err(Error::BadMagic {
            expected: String::from_utf8_lossy(EVENT_MAGIC).into_owned(),
            found: String::from_utf8_lossy(&magic).into_owned(),
        });
    }
    let mut body = Vec::new();
    input.read_to_end(&mut body)?;
    if body.len() % EVENT_RECORD_BYTES != 0 {
        return Err(Error::Truncated("event record"));
    }
    body.chunks_exact(EVENT_RECORD_BYTES)
        .enumerate()
        .map(|(i, c)| decode_record(c.try_into().expect("exact chunk"), i))
        .collect()
}

/// Parses `x,y,t,p` lines. A leading header line, blank lines and `#`
/// comments are skipped.
pub fn read_events_csv<R: BufRead>(input: R) -> Result<Vec<Event>> {
    let mut events = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && fields.first().is_some_and(|f| f.parse::<u64>().is_err()) {
            continue;
        }
        let bad = || Error::Format(format!("line {}: expected x,y,t,p, got '{line}'", lineno + 1));
        let [x, y, t, p] = fields[..] else {
            return Err(bad());
        };
        let event = Event {
            x: x.parse().map_err(|_| bad())?,
            y: y.parse().map_err(|_| bad())?,
            t: t.parse().map_err(|_| bad())?,
            p: p.parse().map_err(|_| bad())?,
        };
        if event.p > 1 {
            return Err(bad());
        }
        events.push(event);
    }
    Ok(events)
}

pub fn write_events_csv<W: Write>(mut out: W, events: &[Event]) -> Result<()> {
    writeln!(out, "x,y,t,p")?;
    for e in events {
        writeln!(out, "{},{},{},{}", e.x, e.y, e.t, e.p)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads an event file, picking the format from the extension (`.csv`/`.txt`
/// for text, anything else binary).
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let file = BufReader::new(File::open(path)?);
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("txt") => read_events_csv(file),
        _ => read_events_binary(file),
    }
}

pub(crate) fn write_events_file(path: &Path, events: &[Event]) -> Result<()> {
    write_events_binary(BufWriter::new(File::create(path)?), events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<Event> {
        vec![
            Event::new(0, 0, 0, 0),
            Event::new(345, 259, 25_000, 1),
            Event::new(u16::MAX, 7, u64::MAX, 1),
        ]
    }

    #[test]
    fn binary_layout_is_fixed() {
        let mut buf = Vec::new();
        write_events_binary(&mut buf, &[Event::new(0x0102, 0x0304, 0x05, 1)]).unwrap();
        assert_eq!(&buf[..8], b"EVST0001");
        assert_eq!(
            &buf[8..],
            &[0x02, 0x01, 0x04, 0x03, 1, 0, 0, 0, 0x05, 0, 0, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn binary_roundtrip() {
        let mut buf = Vec::new();
        write_events_binary(&mut buf, &sample()).unwrap();
        assert_eq!(buf.len(), 8 + 3 * EVENT_RECORD_BYTES);
        assert_eq!(read_events_binary(&buf[..]).unwrap(), sample());
    }

    #[test]
    fn binary_rejects_corruption() {
        let mut buf = Vec::new();
        write_events_binary(&mut buf, &sample()).unwrap();
        assert!(matches!(read_events_binary(&buf[..buf.len() - 3]), Err(Error::Truncated(_))));
        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(read_events_binary(&bad[..]), Err(Error::BadMagic { .. })));
        let mut bad = buf.clone();
        bad[8 + 4] = 3;
        assert!(matches!(read_events_binary(&bad[..]), Err(Error::Format(_))));
        assert!(read_events_binary(&b"EVS"[..]).is_err());
    }

    #[test]
    fn csv_roundtrip_and_header() {
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &sample()).unwrap();
        assert_eq!(read_events_csv(&buf[..]).unwrap(), sample());
        let text = "1,2,3,1\n\n# note\n4,5,6,0\n";
        assert_eq!(read_events_csv(text.as_bytes()).unwrap().len(), 2);
        assert!(read_events_csv("1,2,3\n".as_bytes()).is_err());
        assert!(read_events_csv("1,2,3,4\n".as_bytes()).is_err());
    }
}
