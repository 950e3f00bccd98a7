use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use super::set::LabeledSet;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const MAGIC_IMAGES: u32 = 0x0000_0803;
const MAGIC_LABELS: u32 = 0x0000_0801;

/// Decoded IDX payload.
#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// `[N, 1, rows, cols]`, pixels scaled to `[0, 1]`.
    Images(Tensor),
    Labels(Vec<usize>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| Error::at_byte(bytes.len(), "truncated header"))
}

/// Parses an uncompressed IDX blob (u8 images or labels).
pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let magic = be_u32(bytes, 0)?;
    let ndims = match magic {
        MAGIC_IMAGES => 3,
        MAGIC_LABELS => 1,
        other => {
            return Err(Error::at_byte(
                0,
                format!("bad magic 0x{other:08x}, expected 0x00000803 or 0x00000801"),
            ))
        }
    };
    let mut dims = Vec::with_capacity(ndims);
    for d in 0..ndims {
        dims.push(be_u32(bytes, 4 + 4 * d)? as usize);
    }
    let header = 4 + 4 * ndims;
    if let Some(d) = dims.iter().position(|&n| n == 0) {
        return Err(Error::at_byte(4 + 4 * d, format!("zero dimension in {dims:?}")));
    }
    let payload: usize = dims.iter().product();
    let end = header + payload;
    if bytes.len() < end {
        return Err(Error::at_byte(
            bytes.len(),
            format!("truncated payload: need {payload} bytes after the header, have {}", bytes.len() - header),
        ));
    }
    if bytes.len() > end {
        return Err(Error::at_byte(end, format!("{} trailing bytes", bytes.len() - end)));
    }
    let body = &bytes[header..end];
    Ok(if ndims == 3 {
        let data = body.iter().map(|&b| f64::from(b) / 255.0).collect();
        IdxData::Images(Tensor::new(vec![dims[0], 1, dims[1], dims[2]], data)?)
    } else {
        IdxData::Labels(body.iter().map(|&b| usize::from(b)).collect())
    })
}

/// Inflates gzip input (detected by its `1f 8b` header); other input is returned as is.
pub fn read_maybe_gzip(bytes: Vec<u8>) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::at_byte(0, format!("bad gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes)
    }
}

/// Loads an image file and a label file (raw or gzip IDX) into a labeled set.
pub fn load_idx_pair(
    images: &Path,
    labels: &Path,
    classes: usize,
    sha256: (Option<&str>, Option<&str>),
) -> Result<LabeledSet> {
    let decode = |path: &Path, sum: Option<&str>| -> Result<IdxData> {
        let raw = read_maybe_gzip(super::read_checked(path, sum)?)?;
        parse_idx(&raw).map_err(|e| match e {
            Error::Format { location, message } => Error::Format {
                location,
                message: format!("{}: {message}", path.display()),
            },
            other => other,
        })
    };
    let IdxData::Images(x) = decode(images, sha256.0)? else {
        return Err(Error::config(format!("{} is not an image file", images.display())));
    };
    let IdxData::Labels(y) = decode(labels, sha256.1)? else {
        return Err(Error::config(format!("{} is not a label file", labels.display())));
    };
    LabeledSet::new(x, y, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Location;

    fn images_blob() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        b.extend_from_slice(&[0, 255, 51, 102, 255, 0, 0, 255]);
        b
    }

    #[test]
    fn two_images() {
        let IdxData::Images(t) = parse_idx(&images_blob()).unwrap() else { panic!() };
        assert_eq!(t.shape(), &[2, 1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.2, 0.4, 1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn labels() {
        let b = [0, 0, 8, 1, 0, 0, 0, 3, 7, 0, 9];
        assert_eq!(parse_idx(&b).unwrap(), IdxData::Labels(vec![7, 0, 9]));
    }

    fn offset(e: Error) -> usize {
        match e {
            Error::Format { location: Location::Byte(b), .. } => b,
            other => panic!("{other}"),
        }
    }

    #[test]
    fn error_offsets() {
        let b = images_blob();
        assert_eq!(offset(parse_idx(&b[..b.len() - 1]).unwrap_err()), 23);
        assert_eq!(offset(parse_idx(&b[..10]).unwrap_err()), 10);
        let mut m = b.clone();
        m[3] = 4;
        assert_eq!(offset(parse_idx(&m).unwrap_err()), 0);
        let mut t = b;
        t.push(1);
        assert_eq!(offset(parse_idx(&t).unwrap_err()), 24);
    }

    #[test]
    fn gzip_passthrough() {
        use std::io::Write;
        let mut enc = flate2::write::GzEncoder::new(Vec::new(), flate2::Compression::default());
        enc.write_all(&images_blob()).unwrap();
        let gz = enc.finish().unwrap();
        assert_eq!(read_maybe_gzip(gz).unwrap(), images_blob());
        assert_eq!(read_maybe_gzip(images_blob()).unwrap(), images_blob());
    }
}
