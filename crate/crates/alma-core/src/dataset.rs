//! Labelled image datasets: container, file format, generators, importer.
//!
//! The on-disk format mirrors the model format — a text header followed by
//! length-prefixed binary blocks:
//!
//! ```text
//! ALMADS1\n
//! count=200\n
//! shape=3,8,8\n
//! classes=10\n
//! end\n
//! <count image blocks: u64 LE byte length + f64 LE pixels>
//! <count labels: u32 LE>
//! ```
//!
//! Round-trips are bit-exact. Two procedural generators cover testing
//! needs without external downloads: [`Dataset::synthetic`] builds a
//! 10-class, 8x8 RGB dataset from noisy class templates (the bundled desk
//! dataset), and [`Dataset::blobs`] builds a small linearly separable
//! 3-class problem for trainer sanity checks. [`import_image_dir`] ingests
//! a directory of binary PGM/PPM files grouped into one subdirectory per
//! class for users who bring their own data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::fileio::{
    attach_path, join_dims, parse_dims, write_f64_block, BodyReader, HeaderReader,
};
use crate::tensor::Tensor;
use crate::{Error, Result};

/// First line of every dataset file.
pub const DATASET_MAGIC: &str = "ALMADS1";

/// A set of equally shaped images with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    shape: Vec<usize>,
    images: Vec<Tensor>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// Builds a dataset, checking that every image matches `shape`, pixel
    /// values lie in `[0, 1]`, and labels are below `num_classes`.
    pub fn new(
        shape: Vec<usize>,
        images: Vec<Tensor>,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} images but {} labels",
                images.len(),
                labels.len()
            )));
        }
        if num_classes < 2 {
            return Err(Error::invalid("a dataset needs at least 2 classes"));
        }
        for (i, image) in images.iter().enumerate() {
            image.expect_shape(&shape)?;
            if !image.within(0.0, 1.0) {
                return Err(Error::invalid(format!(
                    "image {i} has pixels outside [0, 1]"
                )));
            }
        }
        if let Some((i, &label)) = labels
            .iter()
            .enumerate()
            .find(|(_, &label)| label >= num_classes)
        {
            return Err(Error::invalid(format!(
                "label {label} of sample {i} is out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset {
            shape,
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Per-sample image shape.
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image(&self, i: usize) -> &Tensor {
        &self.images[i]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Iterates `(image, label)` pairs.
    pub fn iter(&self) -> impl Iterator<Item = (&Tensor, usize)> {
        self.images.iter().zip(self.labels.iter().copied())
    }

    /// The bundled desk dataset: 10 classes of 8x8 RGB images. Each class
    /// is a fixed random template with uniform pixel noise on top, so the
    /// classes are well separated but not trivially constant. Labels cycle
    /// round-robin, keeping the class balance exact.
    pub fn synthetic(count: usize, seed: u64) -> Dataset {
        let shape = vec![3, 8, 8];
        let pixels: usize = shape.iter().product();
        let classes = 10;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let templates: Vec<Vec<f64>> = (0..classes)
            .map(|_| (0..pixels).map(|_| rng.gen_range(0.2..0.8)).collect())
            .collect();
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % classes;
            let data: Vec<f64> = templates[class]
                .iter()
                .map(|&t| (t + rng.gen_range(-0.12..0.12)).clamp(0.0, 1.0))
                .collect();
            images.push(Tensor::from_vec(shape.clone(), data).expect("pixel count"));
            labels.push(class);
        }
        Dataset {
            shape,
            images,
            labels,
            num_classes: classes,
        }
    }

    /// A linearly separable 3-class blob problem on 4 features, for
    /// trainer sanity checks: tight clusters around three well-separated
    /// centres inside the unit box.
    pub fn blobs(count: usize, seed: u64) -> Dataset {
        let centres: [[f64; 4]; 3] = [
            [0.2, 0.2, 0.8, 0.5],
            [0.8, 0.3, 0.2, 0.7],
            [0.5, 0.8, 0.5, 0.2],
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut images = Vec::with_capacity(count);
        let mut labels = Vec::with_capacity(count);
        for i in 0..count {
            let class = i % centres.len();
            let data: Vec<f64> = centres[class]
                .iter()
                .map(|&c| (c + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0))
                .collect();
            images.push(Tensor::vector(data));
            labels.push(class);
        }
        Dataset {
            shape: vec![4],
            images,
            labels,
            num_classes: 3,
        }
    }

    /// Saves the dataset to `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = BufWriter::new(File::create(path)?);
        self.write(&mut out)
    }

    /// Writes the dataset to any sink.
    pub fn write(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "{DATASET_MAGIC}")?;
        writeln!(out, "count={}", self.len())?;
        writeln!(out, "shape={}", join_dims(&self.shape))?;
        writeln!(out, "classes={}", self.num_classes)?;
        writeln!(out, "end")?;
        for image in &self.images {
            write_f64_block(out, image.data())?;
        }
        for &label in &self.labels {
            out.write_all(&(label as u32).to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    /// Loads a dataset from `path`.
    pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
        let path = path.as_ref();
        let mut reader = BufReader::new(File::open(path)?);
        Dataset::read(&mut reader).map_err(|e| attach_path(e, path))
    }

    /// Reads a dataset from any source.
    pub fn read(reader: &mut impl Read) -> Result<Dataset> {
        let mut header = HeaderReader::new(reader);
        let magic = header.line()?;
        if magic != DATASET_MAGIC {
            return Err(header.error(format!("bad magic {magic:?}, expected {DATASET_MAGIC:?}")));
        }
        let count: usize = header
            .kv("count")?
            .parse()
            .map_err(|_| header.error("count is not a number".into()))?;
        let shape = parse_dims(&header.kv("shape")?).map_err(|msg| header.error(msg))?;
        let num_classes: usize = header
            .kv("classes")?
            .parse()
            .map_err(|_| header.error("classes is not a number".into()))?;
        header.expect_end()?;
        let consumed = header.consumed;

        let pixels: usize = shape.iter().product();
        let mut body = BodyReader::new(reader, consumed);
        let mut images = Vec::with_capacity(count);
        for i in 0..count {
            let data = body.f64_block(pixels, &format!("image {i}"))?;
            images.push(Tensor::from_vec(shape.clone(), data)?);
        }
        let labels: Vec<usize> = body
            .u32s(count, "labels")?
            .into_iter()
            .map(|l| l as usize)
            .collect();
        body.expect_eof()?;
        Dataset::new(shape, images, labels, num_classes)
    }
}

/// Imports a directory of images as a dataset. The directory must contain
/// one subdirectory per class, named with the class index (`0`, `1`, ...),
/// each holding binary PGM (`P5`, loaded as 1-channel) or PPM (`P6`,
/// 3-channel) files with a maxval of at most 255. All images must share
/// one shape; pixels are scaled to `[0, 1]`. Files are visited in sorted
/// order, so the import is deterministic.
pub fn import_image_dir(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut class_dirs: Vec<(usize, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        if !entry.file_type()?.is_dir() {
            continue;
        }
        let name = entry.file_name();
        let Some(class) = name.to_str().and_then(|n| n.parse::<usize>().ok()) else {
            continue;
        };
        class_dirs.push((class, entry.path()));
    }
    if class_dirs.is_empty() {
        return Err(Error::invalid(format!(
            "no integer-named class directories under {}",
            dir.display()
        )));
    }
    class_dirs.sort();
    let num_classes = class_dirs
        .iter()
        .map(|(c, _)| c + 1)
        .max()
        .expect("nonempty");

    let mut images = Vec::new();
    let mut labels = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    for (class, class_dir) in class_dirs {
        let mut files: Vec<std::path::PathBuf> = std::fs::read_dir(&class_dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pgm") | Some("ppm")
                )
            })
            .collect();
        files.sort();
        for file in files {
            let image = read_netpbm(&file)?;
            match &shape {
                None => shape = Some(image.shape().to_vec()),
                Some(s) => {
                    if image.shape() != s.as_slice() {
                        return Err(Error::invalid(format!(
                            "{} has shape {:?}, expected {s:?}",
                            file.display(),
                            image.shape()
                        )));
                    }
                }
            }
            images.push(image);
            labels.push(class);
        }
    }
    let shape = shape.ok_or_else(|| Error::invalid("no PGM/PPM files found"))?;
    Dataset::new(shape, images, labels, num_classes)
}

/// Reads one binary PGM (`P5`) or PPM (`P6`) file into a `[c, h, w]`
/// tensor scaled to `[0, 1]`.
fn read_netpbm(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path)?;
    let fail = |msg: String| Error::FileFormat {
        path: path.display().to_string(),
        location: "header".into(),
        msg,
    };

    // Header tokens: magic, width, height, maxval — separated by
    // whitespace and optional '#' comment lines.
    let mut pos = 0usize;
    let mut token = || -> std::result::Result<String, Error> {
        while pos < bytes.len() {
            let b = bytes[pos];
            if b == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                pos += 1;
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("truncated header".into()));
        }
        String::from_utf8(bytes[start..pos].to_vec()).map_err(|_| fail("non-ASCII header".into()))
    };

    let magic = token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(fail(format!("unsupported magic {other:?} (want P5 or P6)"))),
    };
    let width: usize = token()?.parse().map_err(|_| fail("bad width".into()))?;
    let height: usize = token()?.parse().map_err(|_| fail("bad height".into()))?;
    let maxval: usize = token()?.parse().map_err(|_| fail("bad maxval".into()))?;
    if maxval == 0 || maxval > 255 {
        return Err(fail(format!("maxval {maxval} unsupported (want 1..=255)")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;

    let expected = width * height * channels;
    let raster = bytes
        .get(pos..pos + expected)
        .ok_or_else(|| fail(format!("raster truncated: want {expected} bytes")))?;

    // Netpbm rasters interleave channels per pixel; the tensor layout is
    // planar [c, h, w].
    let mut data = vec![0.0; expected];
    let plane = width * height;
    for (i, &byte) in raster.iter().enumerate() {
        let (pixel, channel) = (i / channels, i % channels);
        data[channel * plane + pixel] = byte as f64 / maxval as f64;
    }
    Tensor::from_vec(vec![channels, height, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_dataset_is_balanced_and_in_range() {
        let ds = Dataset::synthetic(50, 7);
        assert_eq!(ds.len(), 50);
        assert_eq!(ds.shape(), &[3, 8, 8]);
        assert_eq!(ds.num_classes(), 10);
        let mut counts = [0usize; 10];
        for (image, label) in ds.iter() {
            assert!(image.within(0.0, 1.0));
            counts[label] += 1;
        }
        assert_eq!(counts, [5; 10]);
    }

    #[test]
    fn synthetic_generation_is_deterministic() {
        assert_eq!(Dataset::synthetic(20, 3), Dataset::synthetic(20, 3));
        assert_ne!(Dataset::synthetic(20, 3), Dataset::synthetic(20, 4));
    }

    #[test]
    fn classes_are_separated_more_than_noise() {
        // Same-class samples should be closer than cross-class samples on
        // average, by construction.
        let ds = Dataset::synthetic(40, 11);
        let dist = |a: &Tensor, b: &Tensor| {
            a.data()
                .iter()
                .zip(b.data())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        // Samples 0 and 10 share class 0; sample 1 is class 1.
        let same = dist(ds.image(0), ds.image(10));
        let cross = dist(ds.image(0), ds.image(1));
        assert!(same < cross, "same-class {same} vs cross-class {cross}");
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ds = Dataset::synthetic(17, 5);
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();
        let loaded = Dataset::read(&mut buf.as_slice()).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn round_trip_through_a_file() {
        let ds = Dataset::blobs(12, 2);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.ds");
        ds.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), ds);
    }

    #[test]
    fn truncation_and_bad_magic_are_reported() {
        let ds = Dataset::synthetic(4, 1);
        let mut buf = Vec::new();
        ds.write(&mut buf).unwrap();

        let err = Dataset::read(&mut &buf[..buf.len() - 2]).unwrap_err();
        assert!(matches!(err, Error::FileFormat { .. }), "{err:?}");

        let err = Dataset::read(&mut &b"ALMAXX1\nrest\n"[..]).unwrap_err();
        match err {
            Error::FileFormat { msg, .. } => assert!(msg.contains("magic")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn validation_catches_mismatches() {
        let img = Tensor::zeros(vec![2, 2]);
        assert!(Dataset::new(vec![2, 2], vec![img.clone()], vec![5], 3).is_err());
        assert!(Dataset::new(vec![2, 3], vec![img.clone()], vec![0], 3).is_err());
        assert!(Dataset::new(vec![2, 2], vec![img.clone()], vec![0, 1], 3).is_err());
        let out_of_range = Tensor::full(vec![2, 2], 1.5);
        assert!(Dataset::new(vec![2, 2], vec![out_of_range], vec![0], 3).is_err());
        assert!(Dataset::new(vec![2, 2], vec![img], vec![0], 3).is_ok());
    }

    #[test]
    fn imports_pgm_and_ppm_class_directories() {
        let dir = tempfile::tempdir().unwrap();
        // Class 0: one 2x2 grayscale image; class 1: one 2x2 RGB image
        // won't do (shapes must agree) — use grayscale for both.
        std::fs::create_dir(dir.path().join("0")).unwrap();
        std::fs::create_dir(dir.path().join("1")).unwrap();
        std::fs::write(
            dir.path().join("0/a.pgm"),
            [b"P5\n# comment\n2 2\n255\n".as_slice(), &[0, 51, 102, 255]].concat(),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("1/b.pgm"),
            [b"P5\n2 2\n255\n".as_slice(), &[10, 20, 30, 40]].concat(),
        )
        .unwrap();

        let ds = import_image_dir(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.shape(), &[1, 2, 2]);
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.label(0), 0);
        assert_eq!(ds.label(1), 1);
        assert!((ds.image(0).data()[1] - 0.2).abs() < 1e-12);
        assert_eq!(ds.image(0).data()[3], 1.0);
    }

    #[test]
    fn ppm_images_are_planar_rgb() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("0")).unwrap();
        std::fs::create_dir(dir.path().join("1")).unwrap();
        // One pixel: R=255, G=0, B=51; 1x1 image.
        std::fs::write(
            dir.path().join("0/c.ppm"),
            [b"P6\n1 1\n255\n".as_slice(), &[255, 0, 51]].concat(),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("1/d.ppm"),
            [b"P6\n1 1\n255\n".as_slice(), &[0, 0, 0]].concat(),
        )
        .unwrap();
        let ds = import_image_dir(dir.path()).unwrap();
        assert_eq!(ds.shape(), &[3, 1, 1]);
        assert_eq!(ds.image(0).data()[0], 1.0);
        assert_eq!(ds.image(0).data()[1], 0.0);
        assert!((ds.image(0).data()[2] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn import_rejects_mixed_shapes_and_empty_dirs() {
        let dir = tempfile::tempdir().unwrap();
        assert!(import_image_dir(dir.path()).is_err());

        std::fs::create_dir(dir.path().join("0")).unwrap();
        std::fs::write(
            dir.path().join("0/a.pgm"),
            [b"P5\n1 1\n255\n".as_slice(), &[7]].concat(),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("0/b.pgm"),
            [b"P5\n2 1\n255\n".as_slice(), &[7, 8]].concat(),
        )
        .unwrap();
        assert!(import_image_dir(dir.path()).is_err());
    }

    #[test]
    fn import_ignores_non_numeric_directories() {
        let dir = tempfile::tempdir().unwrap();
        for name in ["0", "1", "misc"] {
            std::fs::create_dir(dir.path().join(name)).unwrap();
        }
        for (name, value) in [("0/a.pgm", 7u8), ("1/b.pgm", 8), ("misc/x.pgm", 9)] {
            std::fs::write(
                dir.path().join(name),
                [b"P5\n1 1\n255\n".as_slice(), &[value]].concat(),
            )
            .unwrap();
        }
        let ds = import_image_dir(dir.path()).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.num_classes(), 2);
    }

    #[test]
    fn blobs_are_linearly_separable_by_construction() {
        let ds = Dataset::blobs(30, 9);
        assert_eq!(ds.num_classes(), 3);
        // Nearest-centre classification must be perfect given the margin.
        let centres = [
            [0.2, 0.2, 0.8, 0.5],
            [0.8, 0.3, 0.2, 0.7],
            [0.5, 0.8, 0.5, 0.2],
        ];
        for (image, label) in ds.iter() {
            let nearest = (0..3)
                .min_by(|&a, &b| {
                    let da: f64 = image
                        .data()
                        .iter()
                        .zip(&centres[a])
                        .map(|(x, c)| (x - c).powi(2))
                        .sum();
                    let db: f64 = image
                        .data()
                        .iter()
                        .zip(&centres[b])
                        .map(|(x, c)| (x - c).powi(2))
                        .sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            assert_eq!(nearest, label);
        }
    }
}
