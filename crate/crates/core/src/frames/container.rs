//! `USKF` binary frame container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "USKF" | version u16 | width u16 | height u16 | spacing_um u32 | frame_count u32
//! frame_count x ( timestamp_ms u64 | width*height intensity bytes, row-major )
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{FrameError, FrameGeometry, FrameSequence, UltrasoundFrame};

pub const CONTAINER_MAGIC: &[u8; 4] = b"USKF";
pub const CONTAINER_VERSION: u16 = 1;

pub fn read_frames(path: &Path) -> Result<FrameSequence, FrameError> {
    let file = File::open(path).map_err(|e| FrameError::io(path, e))?;
    decode_frames(BufReader::new(file), &path.display().to_string())
}

pub fn write_frames(path: &Path, frames: &FrameSequence) -> Result<(), FrameError> {
    let file = File::create(path).map_err(|e| FrameError::io(path, e))?;
    let mut w = BufWriter::new(file);
    encode_frames(&mut w, frames)
        .and_then(|_| w.flush())
        .map_err(|e| FrameError::io(path, e))
}

pub(crate) fn encode_frames<W: Write>(w: &mut W, frames: &FrameSequence) -> io::Result<()> {
    let g = frames.geometry();
    let invalid = |what: &str| io::Error::new(io::ErrorKind::InvalidInput, what.to_string());
    let width = u16::try_from(g.width_px).map_err(|_| invalid("width exceeds u16"))?;
    let height = u16::try_from(g.height_px).map_err(|_| invalid("height exceeds u16"))?;
    let spacing_um = (g.pixel_spacing_mm * 1000.0).round();
    if !(1.0..=u32::MAX as f64).contains(&spacing_um) {
        return Err(invalid("pixel spacing not representable in micrometers"));
    }
    let count = u32::try_from(frames.len()).map_err(|_| invalid("too many frames"))?;

    w.write_all(CONTAINER_MAGIC)?;
    w.write_u16::<LittleEndian>(CONTAINER_VERSION)?;
    w.write_u16::<LittleEndian>(width)?;
    w.write_u16::<LittleEndian>(height)?;
    w.write_u32::<LittleEndian>(spacing_um as u32)?;
    w.write_u32::<LittleEndian>(count)?;
    for f in frames.frames() {
        let ts = u64::try_from(f.timestamp_ms).map_err(|_| invalid("negative timestamp"))?;
        w.write_u64::<LittleEndian>(ts)?;
        w.write_all(&f.intensities)?;
    }
    Ok(())
}

pub(crate) fn decode_frames<R: Read>(mut r: R, name: &str) -> Result<FrameSequence, FrameError> {
    let truncated = |frame, declared| FrameError::TruncatedFrameData {
        path: name.to_string(),
        frame,
        declared,
    };
    let io_err = |e: io::Error| FrameError::Io {
        path: name.to_string(),
        source: e,
    };

    let mut magic = [0u8; 4];
    match r.read_exact(&mut magic) {
        Ok(()) if &magic == CONTAINER_MAGIC => {}
        Ok(()) => {
            return Err(FrameError::MagicMismatch {
                path: name.to_string(),
            })
        }
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
            return Err(FrameError::MagicMismatch {
                path: name.to_string(),
            })
        }
        Err(e) => return Err(io_err(e)),
    }

    let header = (|| -> io::Result<(u16, u16, u16, u32, u32)> {
        Ok((
            r.read_u16::<LittleEndian>()?,
            r.read_u16::<LittleEndian>()?,
            r.read_u16::<LittleEndian>()?,
            r.read_u32::<LittleEndian>()?,
            r.read_u32::<LittleEndian>()?,
        ))
    })();
    let (version, width, height, spacing_um, count) = match header {
        Ok(h) => h,
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Err(truncated(0, 0)),
        Err(e) => return Err(io_err(e)),
    };
    if version != CONTAINER_VERSION {
        return Err(FrameError::UnsupportedVersion {
            path: name.to_string(),
            version,
        });
    }
    let geometry = FrameGeometry::new(width as usize, height as usize, spacing_um as f64 / 1000.0)?;
    let declared = count as usize;
    if declared == 0 {
        return Err(FrameError::EmptyTrial { what: "frames" });
    }

    let mut frames = Vec::with_capacity(declared);
    let mut prev: Option<i64> = None;
    for i in 0..declared {
        let ts = match r.read_u64::<LittleEndian>() {
            Ok(ts) => ts as i64,
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                return Err(truncated(i, declared))
            }
            Err(e) => return Err(io_err(e)),
        };
        let mut pixels = vec![0u8; geometry.pixel_count()];
        match r.read_exact(&mut pixels) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => {
                return Err(truncated(i, declared))
            }
            Err(e) => return Err(io_err(e)),
        }
        if prev.is_some_and(|p| ts <= p) {
            return Err(FrameError::NonMonotonicTimestamps {
                source_name: name.to_string(),
                row: i,
            });
        }
        prev = Some(ts);
        frames.push(UltrasoundFrame {
            timestamp_ms: ts,
            geometry,
            intensities: pixels,
        });
    }
    FrameSequence::new(geometry, frames)
}
