//! Binary netpbm (P5/P6) reading and writing, plus PNG input.
//!
//! Label maps are stored as P5 with maxval 255 and the raw class ID in each
//! byte. Gray images use the same container with intensities.

use std::path::Path;

use super::{ClassTaxonomy, GrayImage, LabelMap, RgbImage, MAX_PIXELS};
use crate::error::{Error, Result};

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_offset: usize,
}

fn is_ws(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c)
}

fn parse_header(bytes: &[u8], magic: &[u8; 2], ctx: &str) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::format(ctx, format!("missing {} magic", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(&b) if is_ws(b) => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n' && b != b'\r') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::format(ctx, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(ctx, format!("header field {} is not a decimal number", i + 1)));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text
            .parse()
            .map_err(|_| Error::format(ctx, format!("header value {text} overflows")))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(&b) if is_ws(b) => pos += 1,
        _ => return Err(Error::format(ctx, "header not terminated by whitespace")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::format(ctx, format!("zero dimension {width}x{height}")));
    }
    if width.checked_mul(height).is_none_or(|n| n > MAX_PIXELS) {
        return Err(Error::format(ctx, format!("dimensions {width}x{height} too large")));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(ctx, format!("maxval {maxval} unsupported; expected 1..=255")));
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_offset: pos,
    })
}

fn raster<'a>(bytes: &'a [u8], header: &Header, channels: usize, ctx: &str) -> Result<&'a [u8]> {
    let n = header.width * header.height * channels;
    let data = &bytes[header.data_offset..];
    if data.len() < n {
        return Err(Error::format(
            ctx,
            format!("truncated raster: {} of {n} bytes present", data.len()),
        ));
    }
    let data = &data[..n];
    if let Some(&v) = data.iter().find(|&&v| v as usize > header.maxval) {
        return Err(Error::format(ctx, format!("sample {v} exceeds maxval {}", header.maxval)));
    }
    Ok(data)
}

/// Decodes a P5 buffer into `(width, height, bytes)`.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let header = parse_header(bytes, b"P5", "pgm")?;
    let data = raster(bytes, &header, 1, "pgm")?;
    Ok((header.width, header.height, data.to_vec()))
}

pub fn encode_pgm(width: usize, height: usize, data: &[u8]) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(data);
    out
}

pub fn encode_ppm(img: &RgbImage) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.as_bytes());
    out
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn is_png(bytes: &[u8]) -> bool {
    bytes.starts_with(b"\x89PNG\r\n\x1a\n")
}

fn decode_png_gray(bytes: &[u8], ctx: &str) -> Result<(usize, usize, Vec<u8>)> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::format(ctx, e.to_string()))?;
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w as usize, h as usize, buf.into_raw()))
        }
        other => Err(Error::format(
            ctx,
            format!("expected 8-bit grayscale PNG, found {:?}", other.color()),
        )),
    }
}

fn read_gray_bytes(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = read(path)?;
    let ctx = path.display().to_string();
    if is_png(&bytes) {
        decode_png_gray(&bytes, &ctx)
    } else {
        decode_pgm(&bytes).map_err(|e| match e {
            Error::Format { message, .. } => Error::format(ctx, message),
            other => other,
        })
    }
}

/// Loads a P5 or 8-bit grayscale PNG label map and validates it against `tax`.
pub fn load_labelmap(path: impl AsRef<Path>, tax: &ClassTaxonomy) -> Result<LabelMap> {
    let map = load_labelmap_unchecked(path)?;
    map.validate(tax)?;
    Ok(map)
}

/// Loads a label map without binding it to a taxonomy.
pub fn load_labelmap_unchecked(path: impl AsRef<Path>) -> Result<LabelMap> {
    let (w, h, data) = read_gray_bytes(path.as_ref())?;
    LabelMap::new(w, h, data)
}

pub fn save_labelmap(map: &LabelMap, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_pgm(map.width(), map.height(), map.cells()))
}

pub fn load_gray(path: impl AsRef<Path>) -> Result<GrayImage> {
    let (w, h, data) = read_gray_bytes(path.as_ref())?;
    GrayImage::new(w, h, data)
}

pub fn save_gray(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_pgm(img.width(), img.height(), img.as_bytes()))
}

/// Loads a P6 PPM or an RGB/RGBA PNG (alpha discarded).
pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let bytes = read(path)?;
    let ctx = path.display().to_string();
    if is_png(&bytes) {
        let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
            .map_err(|e| Error::format(&ctx, e.to_string()))?
            .into_rgb8();
        let (w, h) = img.dimensions();
        return RgbImage::new(w as usize, h as usize, img.into_raw());
    }
    let header = parse_header(&bytes, b"P6", &ctx)?;
    let data = raster(&bytes, &header, 3, &ctx)?;
    RgbImage::new(header.width, header.height, data.to_vec())
}

pub fn save_rgb(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &encode_ppm(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn decodes_minimal_header() {
        let mut bytes = b"P5 4 2 255 ".to_vec();
        bytes.extend_from_slice(&[0, 1, 2, 3, 4, 5, 6, 7]);
        let (w, h, data) = decode_pgm(&bytes).unwrap();
        assert_eq!((w, h), (4, 2));
        assert_eq!(data, vec![0, 1, 2, 3, 4, 5, 6, 7]);
    }

    #[test]
    fn skips_comments() {
        let mut bytes = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[9, 10]);
        assert_eq!(decode_pgm(&bytes).unwrap().2, vec![9, 10]);
    }

    #[test]
    fn rejects_bad_input() {
        let mut truncated = b"P5 4 2 255 ".to_vec();
        truncated.extend_from_slice(&[0; 7]);
        assert!(matches!(decode_pgm(&truncated), Err(Error::Format { .. })));
        assert!(decode_pgm(b"P2 1 1 255 0").is_err());
        assert!(decode_pgm(b"P5 1 1 65535 \0\0").is_err());
        assert!(decode_pgm(b"P5 99999999999999999999999 1 255 ").is_err());
        assert!(decode_pgm(b"P5 100000 100000 255 ").is_err());
        assert!(decode_pgm(b"P5 1 1 255").is_err());
        assert!(decode_pgm(b"P5 0 1 255 ").is_err());
    }

    #[test]
    fn load_rejects_cells_outside_taxonomy() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.pgm");
        std::fs::write(&path, encode_pgm(2, 1, &[7, 200])).unwrap();
        let err = load_labelmap(&path, &ClassTaxonomy::driving_default()).unwrap_err();
        assert!(matches!(err, Error::UnknownClass { class: 200 }));
        assert!(load_labelmap(dir.path().join("missing.pgm"), &ClassTaxonomy::default())
            .unwrap_err()
            .is_io());
    }

    #[test]
    fn png_gray_is_accepted_and_rgb_png_rejected_as_labelmap() {
        let dir = tempfile::tempdir().unwrap();
        let gray = dir.path().join("g.png");
        image::GrayImage::from_raw(3, 2, vec![0, 7, 8, 18, 22, 1]).unwrap().save(&gray).unwrap();
        let map = load_labelmap(&gray, &ClassTaxonomy::default()).unwrap();
        assert_eq!((map.width(), map.height()), (3, 2));
        assert_eq!(map.cells(), &[0, 7, 8, 18, 22, 1]);

        let rgb = dir.path().join("c.png");
        image::RgbImage::from_raw(1, 1, vec![1, 2, 3]).unwrap().save(&rgb).unwrap();
        assert!(load_labelmap_unchecked(&rgb).is_err());
        assert_eq!(load_rgb(&rgb).unwrap().as_bytes(), &[1, 2, 3]);
    }

    #[test]
    fn ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ppm");
        let img = RgbImage::new(2, 2, (0..12).collect()).unwrap();
        save_rgb(&img, &path).unwrap();
        assert_eq!(load_rgb(&path).unwrap(), img);
    }

    proptest! {
        #[test]
        fn pgm_round_trip(w in 1usize..40, h in 1usize..40, seed in any::<u64>()) {
            let cells: Vec<u8> = (0..w * h).map(|i| ((seed >> (i % 57)) as usize + i * 31) as u8 % 23).collect();
            let map = LabelMap::new(w, h, cells).unwrap();
            let (dw, dh, data) = decode_pgm(&encode_pgm(w, h, map.cells())).unwrap();
            prop_assert_eq!(LabelMap::new(dw, dh, data).unwrap(), map);
        }
    }
}
