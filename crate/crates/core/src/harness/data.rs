//! Datasets: IDX image files and synthetic Gaussian blobs.

use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::autodiff::Sample;
use crate::numkit::Rng;

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_CLASSES: usize = 10;

/// Disjoint training and test samples.
#[derive(Debug, Clone)]
pub struct Dataset {
    train: Arc<Vec<Sample>>,
    test: Arc<Vec<Sample>>,
}

impl Dataset {
    pub fn new(train: Vec<Sample>, test: Vec<Sample>) -> Result<Self, HarnessError> {
        let dims = train.iter().chain(&test).map(|s| (s.x.len(), s.y.len()));
        let mut first = None;
        for d in dims {
            match first {
                None => first = Some(d),
                Some(f) if f != d => {
                    return Err(HarnessError::Data(format!(
                        "inconsistent sample dimensions {f:?} and {d:?}"
                    )))
                }
                _ => {}
            }
        }
        Ok(Dataset {
            train: Arc::new(train),
            test: Arc::new(test),
        })
    }

    pub fn n_train(&self) -> usize {
        self.train.len()
    }

    pub fn n_test(&self) -> usize {
        self.test.len()
    }

    pub fn train(&self) -> &Arc<Vec<Sample>> {
        &self.train
    }

    pub fn test(&self) -> &Arc<Vec<Sample>> {
        &self.test
    }

    pub fn input_dim(&self) -> usize {
        self.train.first().or(self.test.first()).map_or(0, |s| s.x.len())
    }

    pub fn classes(&self) -> usize {
        self.train.first().or(self.test.first()).map_or(0, |s| s.y.len())
    }

    /// Moves the final `n_test` training samples into the test split.
    pub fn split_test(self, n_test: usize) -> Result<Self, HarnessError> {
        if n_test > self.train.len() {
            return Err(HarnessError::Data(format!(
                "cannot hold out {n_test} of {} samples",
                self.train.len()
            )));
        }
        let mut train = Arc::try_unwrap(self.train).unwrap_or_else(|a| (*a).clone());
        let held = train.split_off(train.len() - n_test);
        let mut test = Arc::try_unwrap(self.test).unwrap_or_else(|a| (*a).clone());
        test.splice(0..0, held);
        Dataset::new(train, test)
    }

    /// SHA-256 over the little-endian bytes of every input and target.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for s in self.train.iter().chain(self.test.iter()) {
            for v in s.x.iter().chain(&s.y) {
                h.update(v.to_le_bytes());
            }
        }
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32, HarnessError> {
    match bytes.get(offset..offset + 4) {
        Some(b) => Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]])),
        None => Err(HarnessError::Idx {
            offset,
            message: format!("truncated while reading {what}: file has {} bytes", bytes.len()),
        }),
    }
}

fn check_magic(bytes: &[u8], expected: u32) -> Result<(), HarnessError> {
    let found = be_u32(bytes, 0, "magic number")?;
    if found != expected {
        return Err(HarnessError::Idx {
            offset: 0,
            message: format!("bad magic number {found:#010x}, expected {expected:#010x}"),
        });
    }
    Ok(())
}

/// Parses an IDX image file into `(rows·cols)`-long rows scaled to `[0, 1]`.
pub fn parse_idx_images(bytes: &[u8], limit: Option<usize>) -> Result<Vec<Vec<f64>>, HarnessError> {
    check_magic(bytes, IDX_IMAGES_MAGIC)?;
    let count = be_u32(bytes, 4, "image count")? as usize;
    let rows = be_u32(bytes, 8, "row count")? as usize;
    let cols = be_u32(bytes, 12, "column count")? as usize;
    let pixels = rows * cols;
    let need = 16 + count * pixels;
    if bytes.len() < need {
        return Err(HarnessError::Idx {
            offset: bytes.len(),
            message: format!("truncated image data: header declares {count} images of {pixels} bytes, need {need} bytes"),
        });
    }
    let take = limit.map_or(count, |l| l.min(count));
    Ok((0..take)
        .map(|i| {
            let start = 16 + i * pixels;
            bytes[start..start + pixels].iter().map(|&p| p as f64 / 255.0).collect()
        })
        .collect())
}

pub fn parse_idx_labels(bytes: &[u8], limit: Option<usize>) -> Result<Vec<usize>, HarnessError> {
    check_magic(bytes, IDX_LABELS_MAGIC)?;
    let count = be_u32(bytes, 4, "label count")? as usize;
    if bytes.len() < 8 + count {
        return Err(HarnessError::Idx {
            offset: bytes.len(),
            message: format!("truncated label data: header declares {count} labels, need {} bytes", 8 + count),
        });
    }
    let take = limit.map_or(count, |l| l.min(count));
    bytes[8..8 + take]
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if (l as usize) < IDX_CLASSES {
                Ok(l as usize)
            } else {
                Err(HarnessError::Idx {
                    offset: 8 + i,
                    message: format!("label {l} outside 0..{IDX_CLASSES}"),
                })
            }
        })
        .collect()
}

fn read(path: &Path) -> Result<Vec<u8>, HarnessError> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

fn declared_count(bytes: &[u8]) -> Result<u32, HarnessError> {
    be_u32(bytes, 4, "item count")
}

/// Image/label file pair as samples with one-hot targets.
pub fn load_idx_samples(images: &Path, labels: &Path, limit: Option<usize>) -> Result<Vec<Sample>, HarnessError> {
    let ib = read(images)?;
    let lb = read(labels)?;
    let x = parse_idx_images(&ib, limit).map_err(|e| e.in_file(images))?;
    let y = parse_idx_labels(&lb, limit).map_err(|e| e.in_file(labels))?;
    let (ni, nl) = (declared_count(&ib)?, declared_count(&lb)?);
    if ni != nl {
        return Err(HarnessError::Data(format!(
            "{} declares {ni} images but {} declares {nl} labels",
            images.display(),
            labels.display()
        )));
    }
    Ok(x.into_iter()
        .zip(y)
        .map(|(x, l)| Sample::classified(x, l, IDX_CLASSES))
        .collect())
}

/// Every sample of the pair in the training split.
pub fn load_idx_dataset(images: &Path, labels: &Path) -> Result<Dataset, HarnessError> {
    Dataset::new(load_idx_samples(images, labels, None)?, Vec::new())
}

/// Separate training and test files, truncated to the requested sizes.
pub fn load_idx_split(
    train: (&Path, &Path),
    test: (&Path, &Path),
    n_train: Option<usize>,
    n_test: Option<usize>,
) -> Result<Dataset, HarnessError> {
    let tr = load_idx_samples(train.0, train.1, n_train)?;
    let te = load_idx_samples(test.0, test.1, n_test)?;
    for (want, got, name) in [(n_train, tr.len(), "training"), (n_test, te.len(), "test")] {
        if let Some(w) = want {
            if got < w {
                return Err(HarnessError::Data(format!("requested {w} {name} samples, files hold {got}")));
            }
        }
    }
    Dataset::new(tr, te)
}

/// Spread of blob centers; points scatter with unit variance around them.
pub const BLOB_CENTER_SCALE: f64 = 5.0;
/// Centers closer than this are redrawn.
pub const BLOB_MIN_SEPARATION: f64 = 8.0;
const BLOB_MAX_DRAWS: usize = 1000;

/// Isotropic unit-variance clusters around `classes` centers drawn from
/// `N(0, 5²)` per coordinate, redrawn (up to a bounded number of times) while
/// closer than [`BLOB_MIN_SEPARATION`] to an earlier center. Labels cycle
/// through the classes so every class receives `⌊n/classes⌋` or one more
/// points. All points go to the training split.
pub fn make_blobs(n: usize, classes: usize, dim: usize, rng: &mut Rng) -> Result<Dataset, HarnessError> {
    if classes < 2 || n < classes || dim == 0 {
        return Err(HarnessError::Data(format!(
            "make_blobs needs n >= classes >= 2 and dim >= 1 (got n={n}, classes={classes}, dim={dim})"
        )));
    }
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(classes);
    for _ in 0..classes {
        let mut c: Vec<f64> = Vec::new();
        for _ in 0..BLOB_MAX_DRAWS {
            c = (0..dim).map(|_| BLOB_CENTER_SCALE * rng.normal()).collect();
            let far = centers.iter().all(|o| {
                let d2: f64 = o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 >= BLOB_MIN_SEPARATION * BLOB_MIN_SEPARATION
            });
            if far {
                break;
            }
        }
        centers.push(c);
    }
    let samples = (0..n)
        .map(|i| {
            let c = i % classes;
            let x = centers[c].iter().map(|m| m + rng.normal()).collect();
            Sample::classified(x, c, classes)
        })
        .collect();
    Dataset::new(samples, Vec::new())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn idx_images(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        for v in [IDX_IMAGES_MAGIC, count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend_from_slice(pixels);
        b
    }

    fn idx_labels(labels: &[u8]) -> Vec<u8> {
        let mut b = Vec::new();
        b.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
        b.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        b.extend_from_slice(labels);
        b
    }

    fn write(dir: &Path, name: &str, bytes: &[u8]) -> std::path::PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(bytes).unwrap();
        p
    }

    #[test]
    fn four_image_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..16).map(|i| (i * 17) as u8).collect();
        let im = write(dir.path(), "im", &idx_images(4, 2, 2, &pixels));
        let lb = write(dir.path(), "lb", &idx_labels(&[3, 0, 9, 3]));
        let ds = load_idx_dataset(&im, &lb).unwrap();
        assert_eq!(ds.n_train(), 4);
        assert_eq!(ds.input_dim(), 4);
        let s = &ds.train()[1];
        assert_eq!(s.x, vec![68.0 / 255.0, 85.0 / 255.0, 102.0 / 255.0, 119.0 / 255.0]);
        assert_eq!(s.label(), 0);
        assert_eq!(ds.train()[2].y.iter().filter(|v| **v == 1.0).count(), 1);
        assert_eq!(ds.train()[3].x[3], 1.0);
        assert!(ds.train().iter().flat_map(|s| &s.x).all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn wrong_magic_names_offset() {
        let mut b = idx_images(1, 1, 1, &[0]);
        b[3] = 0x01;
        match parse_idx_images(&b, None) {
            Err(HarnessError::Idx { offset: 0, message }) => assert!(message.contains("magic")),
            other => panic!("{other:?}"),
        }
        assert!(parse_idx_labels(&idx_images(1, 1, 1, &[0]), None).is_err());
    }

    #[test]
    fn truncation_errors() {
        assert!(matches!(parse_idx_images(&[], None), Err(HarnessError::Idx { offset: 0, .. })));
        assert!(matches!(parse_idx_labels(&[], None), Err(HarnessError::Idx { .. })));
        let short = idx_images(2, 2, 2, &[1, 2, 3, 4, 5]);
        assert!(matches!(parse_idx_images(&short, None), Err(HarnessError::Idx { offset: 21, .. })));
        let mut lb = idx_labels(&[1, 2, 3]);
        lb.pop();
        assert!(parse_idx_labels(&lb, None).is_err());
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let im = write(dir.path(), "im", &idx_images(2, 1, 1, &[0, 255]));
        let lb = write(dir.path(), "lb", &idx_labels(&[1, 2, 3]));
        assert!(matches!(load_idx_dataset(&im, &lb), Err(HarnessError::Data(_))));
    }

    #[test]
    fn out_of_range_label() {
        assert!(matches!(parse_idx_labels(&idx_labels(&[1, 10]), None), Err(HarnessError::Idx { offset: 9, .. })));
    }

    #[test]
    fn blobs_deterministic_with_golden_checksum() {
        let a = make_blobs(100, 2, 2, &mut Rng::new(11)).unwrap();
        let b = make_blobs(100, 2, 2, &mut Rng::new(11)).unwrap();
        assert_eq!(a.checksum(), b.checksum());
        assert_ne!(a.checksum(), make_blobs(100, 2, 2, &mut Rng::new(12)).unwrap().checksum());
        assert_eq!(a.checksum(), GOLDEN_BLOBS);
    }

    const GOLDEN_BLOBS: &str = "d49ca2868e0358cc63ef79e03b810c59ac561cfaac21c6300fa824391aac16b5";

    #[test]
    fn two_points_two_classes() {
        let ds = make_blobs(2, 2, 3, &mut Rng::new(0)).unwrap();
        let labels: Vec<usize> = ds.train().iter().map(|s| s.label()).collect();
        assert_eq!(labels, vec![0, 1]);
        assert!(make_blobs(1, 2, 3, &mut Rng::new(0)).is_err());
        assert!(make_blobs(5, 1, 3, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn blobs_linearly_separable_by_sgd() {
        use crate::autodiff::{accuracy, loss_and_grad, Loss, MlpSpec, OutputTransform};
        let ds = make_blobs(200, 2, 2, &mut Rng::new(3)).unwrap();
        let spec = MlpSpec::new(vec![2, 2], vec![], OutputTransform::SoftmaxClamped { eps: 1e-12 }).unwrap();
        let mut theta = crate::numkit::ParamVector::zeros(spec.n_params());
        let mut rng = Rng::new(4);
        for _ in 0..200 {
            let batch: Vec<Sample> = (0..16).map(|_| ds.train()[rng.below(200)].clone()).collect();
            let (_, g) = loss_and_grad(&spec, &theta, &batch, Loss::CrossEntropy).unwrap();
            theta = crate::numkit::axpby(1.0, &theta, -0.1 / 16.0, &g).unwrap();
        }
        assert!(accuracy(&spec, &theta, ds.train()).unwrap() >= 0.95);
    }

    #[test]
    fn split_moves_tail_into_test() {
        let ds = make_blobs(10, 2, 2, &mut Rng::new(1)).unwrap();
        let tail = ds.train()[8].clone();
        let ds = ds.split_test(3).unwrap();
        assert_eq!((ds.n_train(), ds.n_test()), (7, 3));
        assert_eq!(ds.test()[1], tail);
    }
}
