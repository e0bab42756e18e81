//! Raster file I/O: 8-bit PNG (gray or RGB) and binary PPM/PGM (P6/P5).
//!
//! Loading maps byte v to v/255 exactly; saving clamps to [0,1] and
//! quantizes with round(v*255) (half up) so golden-image tests are
//! bit-exact. No metadata is preserved.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Round-half-up quantization of a unit-range value to a byte.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn load_image(path: &Path) -> Result<Image> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => load_png(path),
        "ppm" | "pgm" => load_pnm(path),
        other => Err(Error::UnsupportedFormat(format!(
            "unknown extension '{other}' for {}",
            path.display()
        ))),
    }
}

pub fn save_image(img: &Image, path: &Path) -> Result<()> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "png" => save_png(img, path),
        "ppm" | "pgm" => save_pnm(img, path),
        other => Err(Error::UnsupportedFormat(format!(
            "unknown extension '{other}' for {}",
            path.display()
        ))),
    }
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|source| Error::Unreadable {
        path: path.to_path_buf(),
        source,
    })
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| Error::Unwritable {
        path: path.to_path_buf(),
        source,
    })
}

fn load_png(path: &Path) -> Result<Image> {
    let decoder = png::Decoder::new(BufReader::new(open(path)?));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::MalformedImage(format!("{}: {e}", path.display())))?;
    let mut buf = vec![0u8; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::MalformedImage(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::UnsupportedFormat(format!(
            "{}: only 8-bit PNG is supported",
            path.display()
        )));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    let (channels, stride, offsets): (usize, usize, &[usize]) = match info.color_type {
        png::ColorType::Grayscale => (1, 1, &[0]),
        png::ColorType::GrayscaleAlpha => (1, 2, &[0]),
        png::ColorType::Rgb => (3, 3, &[0, 1, 2]),
        png::ColorType::Rgba => (3, 4, &[0, 1, 2]),
        png::ColorType::Indexed => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: indexed PNG is not supported",
                path.display()
            )))
        }
    };
    let mut data = vec![0.0; h * w * channels];
    for (c, &off) in offsets.iter().enumerate() {
        let plane = &mut data[c * h * w..(c + 1) * h * w];
        for (i, px) in bytes.chunks_exact(stride).enumerate() {
            plane[i] = px[off] as f64 / 255.0;
        }
    }
    Image::new(h, w, channels, data)
}

fn save_png(img: &Image, path: &Path) -> Result<()> {
    let file = create(path)?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    encoder.set_depth(png::BitDepth::Eight);
    encoder.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::Unwritable {
            path: path.to_path_buf(),
            source: std::io::Error::other(e.to_string()),
        })?;
    let n = img.pixel_count();
    let mut bytes = vec![0u8; n * img.channels()];
    for c in 0..img.channels() {
        let plane = img.channel(c);
        for i in 0..n {
            bytes[i * img.channels() + c] = quantize(plane[i]);
        }
    }
    writer.write_image_data(&bytes).map_err(|e| Error::Unwritable {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    Ok(())
}

fn load_pnm(path: &Path) -> Result<Image> {
    let mut bytes = Vec::new();
    open(path)?
        .read_to_end(&mut bytes)
        .map_err(|source| Error::Unreadable {
            path: path.to_path_buf(),
            source,
        })?;
    let malformed = |msg: &str| Error::MalformedImage(format!("{}: {msg}", path.display()));

    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> Result<String> {
        // Skip whitespace and '#' comments between header tokens.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedImage("truncated header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token(&bytes)?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "{}: PNM magic '{other}' not supported (need P5/P6)",
                path.display()
            )))
        }
    };
    let w: usize = token(&bytes)?.parse().map_err(|_| malformed("bad width"))?;
    let h: usize = token(&bytes)?.parse().map_err(|_| malformed("bad height"))?;
    let maxval: usize = token(&bytes)?.parse().map_err(|_| malformed("bad maxval"))?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "{}: only 8-bit PNM (maxval 255) is supported, got {maxval}",
            path.display()
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = w * h * channels;
    if bytes.len() < pos + need {
        return Err(malformed("truncated pixel data"));
    }
    let raster = &bytes[pos..pos + need];
    let mut data = vec![0.0; need];
    for c in 0..channels {
        let plane = &mut data[c * w * h..(c + 1) * w * h];
        for i in 0..w * h {
            plane[i] = raster[i * channels + c] as f64 / 255.0;
        }
    }
    Image::new(h, w, channels, data)
}

fn save_pnm(img: &Image, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(create(path)?);
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let wr = |e: std::io::Error| Error::Unwritable {
        path: path.to_path_buf(),
        source: e,
    };
    write!(out, "{magic}\n{} {}\n255\n", img.width(), img.height()).map_err(wr)?;
    let n = img.pixel_count();
    let mut bytes = vec![0u8; n * img.channels()];
    for c in 0..img.channels() {
        let plane = img.channel(c);
        for i in 0..n {
            bytes[i * img.channels() + c] = quantize(plane[i]);
        }
    }
    out.write_all(&bytes).map_err(wr)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn quantization_rule() {
        assert_eq!(quantize(0.5), 128); // round half up
        assert_eq!(quantize(1.2), 255); // clamp high
        assert_eq!(quantize(-0.1), 0); // clamp low
        assert_eq!(quantize(0.0), 0);
        assert_eq!(quantize(1.0), 255);
    }

    #[test]
    fn one_pixel_p6_exact_mapping() {
        let dir = std::env::temp_dir().join("smoothlab_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("red.ppm");
        std::fs::write(&path, b"P6\n1 1\n255\n\xff\x00\x00").unwrap();
        let img = load_image(&path).unwrap();
        assert_eq!(
            (img.height(), img.width(), img.channels()),
            (1, 1, 3)
        );
        assert_eq!(img.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn truncated_p6_header() {
        let dir = std::env::temp_dir().join("smoothlab_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.ppm");
        std::fs::write(&path, b"P6\n1 ").unwrap();
        match load_image(&path) {
            Err(Error::MalformedImage(_)) => {}
            other => panic!("expected MalformedImage, got {other:?}"),
        }
    }

    #[test]
    fn roundtrip_quantized_png_and_ppm() {
        let dir = std::env::temp_dir().join("smoothlab_io_test");
        std::fs::create_dir_all(&dir).unwrap();
        let mut rng = Rng::new(99);
        let data: Vec<f64> = (0..6 * 5 * 3)
            .map(|_| rng.next_below(256) as f64 / 255.0)
            .collect();
        let img = Image::new(6, 5, 3, data).unwrap();
        for name in ["rt.png", "rt.ppm"] {
            let path = dir.join(name);
            save_image(&img, &path).unwrap();
            let back = load_image(&path).unwrap();
            assert_eq!(img, back, "roundtrip failed for {name}");
        }
    }

    #[test]
    fn missing_file_is_unreadable() {
        match load_image(Path::new("/nonexistent/nope.png")) {
            Err(Error::Unreadable { .. }) => {}
            other => panic!("expected Unreadable, got {other:?}"),
        }
    }
}
