//! File formats: EVTB binary events, CSV events, PFM/PGM images, flow fields.
//!
//! EVTB layout (little-endian):
//!
//! | offset | size | field                    |
//! |--------|------|--------------------------|
//! | 0      | 4    | magic `EVTB`             |
//! | 4      | 4    | version `u32` = 1        |
//! | 8      | 2    | width `u16`              |
//! | 10     | 2    | height `u16`             |
//! | 12     | 8    | event count `u64`        |
//! | 20     | 16·n | records                  |
//!
//! Each record is `t: i64` (µs), `x: u16`, `y: u16`, `p: i8` (+1/−1) and three
//! zero bytes of padding.

use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{argument, format_err, validation, Error, Result};
use crate::event::{check_dims, Event, EventStream, Polarity};
use crate::image::Image;
use crate::turbsim::TiltFlow;

pub const EVTB_MAGIC: &[u8; 4] = b"EVTB";
pub const EVTB_VERSION: u32 = 1;
pub const EVTB_HEADER_LEN: usize = 20;
pub const EVTB_RECORD_LEN: usize = 16;

pub fn encode_evtb(stream: &EventStream) -> Result<Vec<u8>> {
    check_dims(stream.width(), stream.height())?;
    let mut buf = Vec::with_capacity(EVTB_HEADER_LEN + EVTB_RECORD_LEN * stream.len());
    buf.extend_from_slice(EVTB_MAGIC);
    buf.extend_from_slice(&EVTB_VERSION.to_le_bytes());
    buf.extend_from_slice(&(stream.width() as u16).to_le_bytes());
    buf.extend_from_slice(&(stream.height() as u16).to_le_bytes());
    buf.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        buf.extend_from_slice(&e.t.to_le_bytes());
        buf.extend_from_slice(&e.x.to_le_bytes());
        buf.extend_from_slice(&e.y.to_le_bytes());
        buf.push(e.p.as_i8() as u8);
        buf.extend_from_slice(&[0, 0, 0]);
    }
    Ok(buf)
}

pub fn decode_evtb(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < EVTB_HEADER_LEN {
        return Err(format_err(format!(
            "EVTB header truncated ({} bytes)",
            bytes.len()
        )));
    }
    if &bytes[0..4] != EVTB_MAGIC {
        return Err(format_err("bad EVTB magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != EVTB_VERSION {
        return Err(format_err(format!("unsupported EVTB version {version}")));
    }
    let width = u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize;
    let height = u16::from_le_bytes(bytes[10..12].try_into().unwrap()) as usize;
    let count = u64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let body = &bytes[EVTB_HEADER_LEN..];
    let expected = (count as u128) * EVTB_RECORD_LEN as u128;
    if (body.len() as u128) < expected {
        return Err(format_err(format!(
            "EVTB truncated: header declares {count} records, {} bytes of payload",
            body.len()
        )));
    }
    if (body.len() as u128) > expected {
        return Err(format_err(format!(
            "EVTB has {} trailing bytes after {count} records",
            body.len() as u128 - expected
        )));
    }
    let mut events = Vec::with_capacity(count as usize);
    for (i, rec) in body.chunks_exact(EVTB_RECORD_LEN).enumerate() {
        let t = i64::from_le_bytes(rec[0..8].try_into().unwrap());
        let x = u16::from_le_bytes(rec[8..10].try_into().unwrap());
        let y = u16::from_le_bytes(rec[10..12].try_into().unwrap());
        let p =
            Polarity::from_i8(rec[12] as i8).map_err(|e| validation(format!("record {i}: {e}")))?;
        events.push(Event { x, y, t, p });
    }
    EventStream::new(width, height, events)
}

pub fn write_events(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_evtb(stream)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads EVTB, or CSV when the file does not start with the EVTB magic.
pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    read_events_sized(path, None)
}

/// As [`read_events`]; CSV input takes the sensor size `dims` instead of inferring it.
pub fn read_events_sized(
    path: impl AsRef<Path>,
    dims: Option<(usize, usize)>,
) -> Result<EventStream> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(EVTB_MAGIC) {
        decode_evtb(&bytes)
    } else {
        parse_events_csv(&bytes, dims)
    }
}

/// CSV with header `t,x,y,p`. Sensor size is taken from `dims` or inferred
/// as one past the largest coordinate.
pub fn parse_events_csv(bytes: &[u8], dims: Option<(usize, usize)>) -> Result<EventStream> {
    let text = std::str::from_utf8(bytes).map_err(|_| format_err("CSV is not UTF-8"))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == "t,x,y,p" => {}
        Some((_, h)) => return Err(format_err(format!("unexpected CSV header {h:?}"))),
        None => return Err(format_err("empty CSV")),
    }
    let mut events = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(format_err(format!(
                "line {}: expected 4 fields",
                lineno + 1
            )));
        }
        let bad = |what: &str| format_err(format!("line {}: bad {what}", lineno + 1));
        let t: i64 = fields[0].parse().map_err(|_| bad("t"))?;
        let x: u16 = fields[1].parse().map_err(|_| bad("x"))?;
        let y: u16 = fields[2].parse().map_err(|_| bad("y"))?;
        let p: i8 = fields[3].parse().map_err(|_| bad("p"))?;
        let p =
            Polarity::from_i8(p).map_err(|e| validation(format!("line {}: {e}", lineno + 1)))?;
        events.push(Event { x, y, t, p });
    }
    let (w, h) = dims.unwrap_or_else(|| {
        let w = events.iter().map(|e| e.x as usize + 1).max().unwrap_or(1);
        let h = events.iter().map(|e| e.y as usize + 1).max().unwrap_or(1);
        (w, h)
    });
    EventStream::new(w, h, events)
}

pub fn events_to_csv(stream: &EventStream) -> String {
    let mut out = String::from("t,x,y,p\n");
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p.as_i8()));
    }
    out
}

pub fn write_events_csv(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, events_to_csv(stream)).map_err(|e| Error::io(path, e))
}

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

/// PFM header: `Pf`/`PF`, dimensions, then scale `-1.0` (little-endian).
/// Scanlines are stored bottom-to-top.
pub fn encode_pfm(image: &Image) -> Vec<u8> {
    encode_pfm_raw(
        image.width(),
        image.height(),
        image.channels(),
        image.data(),
    )
}

fn encode_pfm_raw(width: usize, height: usize, channels: usize, data: &[f64]) -> Vec<u8> {
    let tag = if channels == 3 { "PF" } else { "Pf" };
    let mut buf = format!("{tag}\n{width} {height}\n-1.0\n").into_bytes();
    buf.reserve(data.len() * 4);
    let row = width * channels;
    for y in (0..height).rev() {
        for v in &data[y * row..(y + 1) * row] {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    buf
}

struct PfmRaw {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

fn decode_pfm_raw(bytes: &[u8]) -> Result<PfmRaw> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    let channels = match tokens[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(format_err(format!("not a PFM file (tag {other:?})"))),
    };
    let width: usize = tokens[1].parse().map_err(|_| format_err("bad PFM width"))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| format_err("bad PFM height"))?;
    let scale: f64 = tokens[3].parse().map_err(|_| format_err("bad PFM scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(format_err("PFM scale must be non-zero"));
    }
    let little = scale < 0.0;
    let n = width * height * channels;
    let body = &bytes[offset..];
    if body.len() != n * 4 {
        return Err(format_err(format!(
            "PFM payload is {} bytes, expected {}",
            body.len(),
            n * 4
        )));
    }
    let row = width * channels;
    let mut data = vec![0.0; n];
    for (i, chunk) in body.chunks_exact(4).enumerate() {
        let raw: [u8; 4] = chunk.try_into().unwrap();
        let v = if little {
            f32::from_le_bytes(raw)
        } else {
            f32::from_be_bytes(raw)
        };
        let file_row = i / row;
        let y = height - 1 - file_row;
        data[y * row + i % row] = v as f64;
    }
    Ok(PfmRaw {
        width,
        height,
        channels,
        data,
    })
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Image> {
    let raw = decode_pfm_raw(bytes)?;
    Image::new(raw.width, raw.height, raw.channels, raw.data)
}

/// 16-bit binary PGM; samples are clamped to `[0, 1]` and quantized.
pub fn encode_pgm16(image: &Image) -> Result<Vec<u8>> {
    if image.channels() != 1 {
        return Err(argument("PGM output requires a single-channel image"));
    }
    let mut buf = format!("P5\n{} {}\n65535\n", image.width(), image.height()).into_bytes();
    for v in image.data() {
        let q = (v.clamp(0.0, 1.0) * 65535.0).round() as u16;
        buf.extend_from_slice(&q.to_be_bytes());
    }
    Ok(buf)
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let (tokens, offset) = header_tokens(bytes, 4)?;
    if tokens[0] != "P5" {
        return Err(format_err(format!(
            "not a binary PGM (tag {:?})",
            tokens[0]
        )));
    }
    let width: usize = tokens[1].parse().map_err(|_| format_err("bad PGM width"))?;
    let height: usize = tokens[2]
        .parse()
        .map_err(|_| format_err("bad PGM height"))?;
    let maxval: u32 = tokens[3]
        .parse()
        .map_err(|_| format_err("bad PGM maxval"))?;
    if maxval == 0 || maxval > 65535 {
        return Err(format_err(format!("PGM maxval {maxval} out of range")));
    }
    let wide = maxval > 255;
    let n = width * height;
    let body = &bytes[offset..];
    let need = if wide { 2 * n } else { n };
    if body.len() < need {
        return Err(format_err("PGM payload truncated"));
    }
    let scale = maxval as f64;
    let data = if wide {
        body[..need]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    } else {
        body[..need].iter().map(|&b| b as f64 / scale).collect()
    };
    Image::new(width, height, 1, data)
}

/// Reads PFM or PGM, chosen by the file's magic.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.get(0..2) {
        Some(b"Pf") | Some(b"PF") => decode_pfm(&bytes),
        Some(b"P5") => decode_pgm(&bytes),
        _ => Err(format_err(format!(
            "{}: unrecognized image format",
            path.display()
        ))),
    }
}

/// Writes PGM when the extension is `.pgm`, PFM otherwise.
pub fn write_image(image: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if image.data().iter().any(|v| !v.is_finite()) {
        return Err(validation("refusing to write non-finite samples"));
    }
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let bytes = if is_pgm {
        encode_pgm16(image)?
    } else {
        encode_pfm(image)
    };
    write_file(path, &bytes)
}

/// Flow fields are stored as 3-channel PFM with channels `(u, v, 0)`.
pub fn write_flow(flow: &TiltFlow, path: impl AsRef<Path>) -> Result<()> {
    let mut data = Vec::with_capacity(flow.u().len() * 3);
    for (u, v) in flow.u().iter().zip(flow.v()) {
        data.extend_from_slice(&[*u, *v, 0.0]);
    }
    write_file(
        path.as_ref(),
        &encode_pfm_raw(flow.width(), flow.height(), 3, &data),
    )
}

pub fn read_flow(path: impl AsRef<Path>) -> Result<TiltFlow> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_pfm_raw(&bytes)?;
    if raw.channels != 3 {
        return Err(format_err("flow file must be a 3-channel PFM"));
    }
    let u = raw.data.iter().step_by(3).copied().collect();
    let v = raw.data.iter().skip(1).step_by(3).copied().collect();
    TiltFlow::new(raw.width, raw.height, u, v)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Splits the first `n` whitespace-separated header tokens (skipping `#`
/// comments) and returns them with the offset of the payload, which starts
/// after exactly one whitespace byte following the last token.
fn header_tokens(bytes: &[u8], n: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(n);
    let mut i = 0;
    while tokens.len() < n {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(format_err("truncated image header"));
        }
        tokens.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if i >= bytes.len() {
        return Err(format_err("image header not terminated"));
    }
    Ok((tokens, i + 1))
}

/// Reads a whole file through a buffered reader; used for line-oriented inputs.
pub fn read_to_string(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut s = String::new();
    BufReader::new(file)
        .read_to_string(&mut s)
        .map_err(|e| Error::io(path, e))?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(x: u16, y: u16, t: i64, p: i8) -> Event {
        Event::new(x, y, t, Polarity::from_i8(p).unwrap())
    }

    #[test]
    fn empty_stream_is_header_only() {
        let bytes = encode_evtb(&EventStream::empty(4, 4)).unwrap();
        assert_eq!(bytes.len(), 20);
        assert_eq!(
            bytes,
            [b'E', b'V', b'T', b'B', 1, 0, 0, 0, 4, 0, 4, 0, 0, 0, 0, 0, 0, 0, 0, 0]
        );
    }

    #[test]
    fn one_event_hand_encoded() {
        let s = EventStream::new(4, 4, vec![ev(1, 2, 100, 1)]).unwrap();
        let bytes = encode_evtb(&s).unwrap();
        let mut expected = vec![
            b'E', b'V', b'T', b'B', 1, 0, 0, 0, 4, 0, 4, 0, 1, 0, 0, 0, 0, 0, 0, 0,
        ];
        expected.extend_from_slice(&[0x64, 0, 0, 0, 0, 0, 0, 0]); // t = 100
        expected.extend_from_slice(&[1, 0, 2, 0]); // x, y
        expected.extend_from_slice(&[0x01, 0, 0, 0]); // p, pad
        assert_eq!(bytes, expected);
        assert_eq!(decode_evtb(&bytes).unwrap(), s);
    }

    #[test]
    fn negative_polarity_byte() {
        let s = EventStream::new(1, 1, vec![ev(0, 0, -5, -1)]).unwrap();
        let bytes = encode_evtb(&s).unwrap();
        assert_eq!(bytes[20 + 12], 0xFF);
        assert_eq!(decode_evtb(&bytes).unwrap(), s);
    }

    #[test]
    fn decode_errors() {
        let good = encode_evtb(&EventStream::new(4, 4, vec![ev(1, 2, 100, 1)]).unwrap()).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        assert!(matches!(decode_evtb(&bad_magic), Err(Error::Format(_))));

        let mut bad_version = good.clone();
        bad_version[4] = 2;
        assert!(matches!(decode_evtb(&bad_version), Err(Error::Format(_))));

        assert!(matches!(
            decode_evtb(&good[..good.len() - 1]),
            Err(Error::Format(_))
        ));

        let mut zero_p = good.clone();
        zero_p[20 + 12] = 0;
        assert!(matches!(decode_evtb(&zero_p), Err(Error::Validation(_))));

        let mut oob = good.clone();
        oob[20 + 8] = 9; // x = 9 on a 4-wide sensor
        assert!(matches!(decode_evtb(&oob), Err(Error::Validation(_))));
    }

    #[test]
    fn unsorted_records_are_sorted_on_read() {
        let s = EventStream::new(4, 4, vec![ev(0, 0, 1, 1), ev(0, 0, 2, 1)]).unwrap();
        let mut bytes = encode_evtb(&s).unwrap();
        let (a, b) = bytes[20..].split_at_mut(16);
        a.swap_with_slice(b);
        assert_eq!(decode_evtb(&bytes).unwrap(), s);
    }

    #[test]
    fn csv_three_rows() {
        let csv = b"t,x,y,p\n10,0,1,1\n20,2,0,-1\n30,1,1,1\n";
        let s = parse_events_csv(csv, None).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!((s.width(), s.height()), (3, 2));
        assert_eq!(s.events()[1], ev(2, 0, 20, -1));
        assert!(parse_events_csv(b"t,x,y,p\n1,0,0,0\n", None).is_err());
        assert!(parse_events_csv(b"x,y,t,p\n", None).is_err());
    }

    #[test]
    fn pfm_constant_payload() {
        let img = Image::constant(2, 2, 1, 0.5).unwrap();
        let bytes = encode_pfm(&img);
        let header = b"Pf\n2 2\n-1.0\n";
        assert_eq!(&bytes[..header.len()], header);
        let payload = &bytes[header.len()..];
        assert_eq!(payload.len(), 16);
        for chunk in payload.chunks(4) {
            assert_eq!(chunk, 0.5f32.to_le_bytes());
        }
    }

    #[test]
    fn pfm_rows_bottom_to_top_and_big_endian_read() {
        let img = Image::from_fn(2, 2, |x, y| (y * 2 + x) as f64).unwrap();
        let bytes = encode_pfm(&img);
        let header_len = b"Pf\n2 2\n-1.0\n".len();
        assert_eq!(&bytes[header_len..header_len + 4], 2.0f32.to_le_bytes());

        let mut be = b"Pf\n2 2\n1.0\n".to_vec();
        for v in [2.0f32, 3.0, 0.0, 1.0] {
            be.extend_from_slice(&v.to_be_bytes());
        }
        assert_eq!(decode_pfm(&be).unwrap(), img);
    }

    #[test]
    fn pgm_full_scale() {
        let mut bytes = b"P5\n1 1\n65535\n".to_vec();
        bytes.extend_from_slice(&[0xFF, 0xFF]);
        assert_eq!(decode_pgm(&bytes).unwrap().data(), &[1.0]);
        let img = Image::new(2, 1, 1, vec![0.0, 1.0]).unwrap();
        let round = decode_pgm(&encode_pgm16(&img).unwrap()).unwrap();
        assert_eq!(round, img);
    }

    #[test]
    fn pfm_header_errors() {
        assert!(decode_pfm(b"P6\n1 1\n-1.0\n\0\0\0\0").is_err());
        assert!(decode_pfm(b"Pf\n1 1\n-1.0\n\0\0").is_err());
        assert!(decode_pfm(b"Pf\n1").is_err());
    }

    #[test]
    fn file_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let img = Image::new(3, 2, 3, (0..18).map(|i| i as f64 / 17.0).collect()).unwrap();
        let p = dir.path().join("a.pfm");
        write_image(&img, &p).unwrap();
        let back = read_image(&p).unwrap();
        write_image(&back, dir.path().join("b.pfm")).unwrap();
        assert_eq!(
            fs::read(&p).unwrap(),
            fs::read(dir.path().join("b.pfm")).unwrap()
        );

        let flow = TiltFlow::new(2, 1, vec![-1.5, 0.25], vec![3.0, -0.125]).unwrap();
        write_flow(&flow, dir.path().join("f.pfm")).unwrap();
        assert_eq!(read_flow(dir.path().join("f.pfm")).unwrap(), flow);
    }
}
