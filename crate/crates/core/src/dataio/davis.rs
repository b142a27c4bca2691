//! DAVIS-style directories: `JPEGImages/<seq>/NNNNN.jpg` frames and
//! palette-indexed `Annotations/<seq>/NNNNN.png` label maps.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::imageops::{self, FilterType};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::{DataError, Result, VideoSample};
use crate::boundary::BoundaryMap;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DavisOptions {
    /// Centre-crop to the target aspect ratio, then resize to `(height, width)`.
    pub resolution: Option<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub frames: usize,
    pub objects: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub split: String,
    pub sequences: Vec<ManifestEntry>,
    #[serde(default)]
    pub generator: serde_json::Value,
}

/// The standard 256-entry VOC/DAVIS colour palette, as flat RGB bytes.
pub fn davis_palette() -> Vec<u8> {
    let mut out = Vec::with_capacity(768);
    for i in 0..256u32 {
        let (mut r, mut g, mut b, mut c) = (0u8, 0u8, 0u8, i);
        for j in 0..8 {
            r |= ((c & 1) as u8) << (7 - j);
            g |= (((c >> 1) & 1) as u8) << (7 - j);
            b |= (((c >> 2) & 1) as u8) << (7 - j);
            c >>= 3;
        }
        out.extend([r, g, b]);
    }
    out
}

fn png_err(path: &Path) -> impl FnOnce(png::DecodingError) -> DataError + '_ {
    move |source| DataError::PngDecode {
        path: path.display().to_string(),
        source,
    }
}

/// Raw palette indices (or grey levels) of an 8-bit-or-less single-channel PNG.
pub fn read_label_png(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let mut decoder = png::Decoder::new(BufReader::new(File::open(path)?));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(png_err(path))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| DataError::Invalid(format!("{} is too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(png_err(path))?;
    let (w, h) = (info.width as usize, info.height as usize);
    if !matches!(info.color_type, png::ColorType::Indexed | png::ColorType::Grayscale) {
        return Err(DataError::Invalid(format!(
            "{}: expected a palette or greyscale label image, got {:?}",
            path.display(),
            info.color_type
        )));
    }
    let bits = info.bit_depth as usize;
    if bits > 8 {
        return Err(DataError::Invalid(format!("{}: {bits}-bit labels are not supported", path.display())));
    }
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            let bit = x * bits;
            let byte = row[bit / 8];
            out.push((byte >> (8 - bits - bit % 8)) & ((1u16 << bits) - 1) as u8);
        }
    }
    Ok((h, w, out))
}

/// Writes raw indices as an 8-bit palette PNG using [`davis_palette`].
pub fn write_label_png(path: &Path, h: usize, w: usize, indices: &[u8]) -> Result<()> {
    if indices.len() != h * w {
        return Err(DataError::Invalid(format!("{} indices for a {h}x{w} image", indices.len())));
    }
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
    enc.set_color(png::ColorType::Indexed);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_palette(davis_palette());
    let mut writer = enc.write_header()?;
    writer.write_image_data(indices)?;
    writer.finish()?;
    Ok(())
}

/// Writes a boundary map as a 1-bit greyscale PNG.
pub fn write_boundary_png(path: &Path, map: &BoundaryMap) -> Result<()> {
    let &[1, h, w] = map.shape() else {
        return Err(DataError::Invalid(format!("boundary map must be [1, H, W], got {:?}", map.shape())));
    };
    let stride = w.div_ceil(8);
    let mut packed = vec![0u8; stride * h];
    for (i, &v) in map.values().data().iter().enumerate() {
        if v == 1.0 {
            let (y, x) = (i / w, i % w);
            packed[y * stride + x / 8] |= 0x80 >> (x % 8);
        }
    }
    let mut enc = png::Encoder::new(BufWriter::new(File::create(path)?), w as u32, h as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::One);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&packed)?;
    writer.finish()?;
    Ok(())
}

fn tensor_from_rgb(img: &RgbImage) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f64 / 255.0
    })
}

fn rgb_from_tensor(t: &Tensor) -> RgbImage {
    let (h, w) = (t.shape()[1], t.shape()[2]);
    let d = t.data();
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let p = y as usize * w + x as usize;
        image::Rgb([0, 1, 2].map(|c| (d[c * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8))
    })
}

/// Largest centred window of the target aspect ratio, as `(y0, x0, h, w)`.
fn centre_crop(h: usize, w: usize, th: usize, tw: usize) -> (usize, usize, usize, usize) {
    if w * th > h * tw {
        let cw = (h * tw / th).max(1);
        (0, (w - cw) / 2, h, cw)
    } else {
        let ch = (w * th / tw).max(1);
        ((h - ch) / 2, 0, ch, w)
    }
}

fn resize_labels(labels: &[u8], w: usize, crop: (usize, usize, usize, usize), th: usize, tw: usize) -> Vec<u8> {
    let (y0, x0, ch, cw) = crop;
    (0..th * tw)
        .map(|i| {
            let sy = y0 + (((i / tw) as f64 + 0.5) * ch as f64 / th as f64) as usize;
            let sx = x0 + (((i % tw) as f64 + 0.5) * cw as f64 / tw as f64) as usize;
            labels[sy.min(y0 + ch - 1) * w + sx.min(x0 + cw - 1)]
        })
        .collect()
}

fn numbered_files(dir: &Path, ext: &str) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()).map(|e| e.eq_ignore_ascii_case(ext)) != Some(true) {
            continue;
        }
        if let Some(n) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse().ok()) {
            out.push((n, path));
        }
    }
    out.sort();
    Ok(out)
}

fn load_sequence(images: &Path, annotations: &Path, name: &str, opts: &DavisOptions) -> Result<VideoSample> {
    let files = numbered_files(&images.join(name), "jpg")?;
    if files.is_empty() {
        return Err(DataError::Invalid(format!("sequence `{name}` has no frames")));
    }
    for (k, (n, _)) in files.iter().enumerate() {
        let expected = files[0].0 + k as u64;
        if *n != expected {
            return Err(DataError::NonContiguous {
                seq: name.into(),
                expected,
                found: *n,
            });
        }
    }
    let mut frames = Vec::new();
    let mut raw_labels = Vec::new();
    for (k, (_, path)) in files.iter().enumerate() {
        let stem = path.file_stem().expect("numbered file").to_owned();
        let mut img = image::open(path)?.to_rgb8();
        let (h, w) = (img.height() as usize, img.width() as usize);
        let ann = annotations.join(name).join(stem).with_extension("png");
        let mut labels = if ann.exists() {
            let (lh, lw, l) = read_label_png(&ann)?;
            if (lh, lw) != (h, w) {
                return Err(DataError::Invalid(format!("{}: {lh}x{lw} labels for a {h}x{w} frame", ann.display())));
            }
            Some(l)
        } else if k == 0 {
            return Err(DataError::MissingFirstAnnotation(name.into()));
        } else {
            None
        };
        if let Some((th, tw)) = opts.resolution {
            let crop = centre_crop(h, w, th, tw);
            let view = imageops::crop_imm(&img, crop.1 as u32, crop.0 as u32, crop.3 as u32, crop.2 as u32).to_image();
            img = imageops::resize(&view, tw as u32, th as u32, FilterType::Triangle);
            labels = labels.map(|l| resize_labels(&l, w, crop, th, tw));
        }
        frames.push(tensor_from_rgb(&img));
        raw_labels.push(labels);
    }
    let mut ids: Vec<u8> = raw_labels.iter().flatten().flatten().copied().filter(|&v| v != 0).collect();
    ids.sort_unstable();
    ids.dedup();
    let mut dense = [0u8; 256];
    for (k, &id) in ids.iter().enumerate() {
        dense[id as usize] = k as u8 + 1;
    }
    let labels = raw_labels
        .into_iter()
        .map(|l| l.map(|l| l.into_iter().map(|v| dense[v as usize]).collect()))
        .collect();
    let mut sample = VideoSample::new(name, frames, labels, ids.len())?;
    sample.palette_ids = ids;
    Ok(sample)
}

fn resolution_dir(base: PathBuf) -> PathBuf {
    let nested = base.join("480p");
    if nested.is_dir() {
        nested
    } else {
        base
    }
}

/// Loads every sequence under `root`, sorted by name.
///
/// Both `JPEGImages/<seq>` and the official `JPEGImages/480p/<seq>` nesting
/// are accepted. A root without a `JPEGImages` directory yields no sequences.
pub fn load_davis_dir(root: &Path, opts: &DavisOptions) -> Result<Vec<VideoSample>> {
    if !root.is_dir() {
        return Err(DataError::Invalid(format!("{} is not a directory", root.display())));
    }
    let images = resolution_dir(root.join("JPEGImages"));
    if !images.is_dir() {
        return Ok(Vec::new());
    }
    let annotations = resolution_dir(root.join("Annotations"));
    let mut names: Vec<String> = fs::read_dir(&images)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    names.sort();
    names.iter().map(|n| load_sequence(&images, &annotations, n, opts)).collect()
}

/// Writes samples in DAVIS layout with `ImageSets/2017/<split>.txt` and a
/// `manifest.json`. Frames are stored as high-quality JPEG.
pub fn write_davis_dir(root: &Path, samples: &[VideoSample], split: &str, generator: serde_json::Value) -> Result<Manifest> {
    let sets = root.join("ImageSets").join("2017");
    fs::create_dir_all(&sets)?;
    let mut entries = Vec::new();
    for s in samples {
        let img_dir = root.join("JPEGImages").join(&s.name);
        let ann_dir = root.join("Annotations").join(&s.name);
        fs::create_dir_all(&img_dir)?;
        fs::create_dir_all(&ann_dir)?;
        for (t, frame) in s.frames.iter().enumerate() {
            let mut out = BufWriter::new(File::create(img_dir.join(format!("{t:05}.jpg")))?);
            rgb_from_tensor(frame).write_with_encoder(JpegEncoder::new_with_quality(&mut out, 95))?;
            if let Some(labels) = &s.labels[t] {
                let raw: Vec<u8> = labels
                    .iter()
                    .map(|&l| if l == 0 { 0 } else { s.palette_ids[l as usize - 1] })
                    .collect();
                write_label_png(&ann_dir.join(format!("{t:05}.png")), s.height, s.width, &raw)?;
            }
        }
        entries.push(ManifestEntry {
            name: s.name.clone(),
            frames: s.len(),
            objects: s.num_objects,
            height: s.height,
            width: s.width,
        });
    }
    let list: String = samples.iter().map(|s| format!("{}\n", s.name)).collect();
    fs::write(sets.join(format!("{split}.txt")), list)?;
    let manifest = Manifest {
        format: "davis-2017".into(),
        split: split.into(),
        sequences: entries,
        generator,
    };
    fs::write(root.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
