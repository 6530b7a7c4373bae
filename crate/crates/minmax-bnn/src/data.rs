//! MNIST IDX ingestion, class subsetting, and balanced batch sampling.
//!
//! IDX files are big-endian: a 4-byte magic whose low byte is the dimension
//! count, one 32-bit extent per dimension, then the raw payload. Images use
//! magic 2051 (3 dims), labels 2049 (1 dim). Pixels are scaled by exactly
//! 1/255 so {0, 255} map to {0, 1}.

use crate::error::{Error, Result};
use crate::rate::ClassPartition;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub extents: Vec<u32>,
    pub payload: Vec<u8>,
}

/// Parse an IDX file, insisting on the given magic so image and label files
/// cannot be confused.
pub fn parse_idx(path: &Path, expected_magic: u32) -> Result<IdxFile> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx_bytes(&bytes, expected_magic, path)
}

fn parse_idx_bytes(bytes: &[u8], expected_magic: u32, path: &Path) -> Result<IdxFile> {
    let need = |offset: usize, needed: usize| -> Result<()> {
        if bytes.len() < offset + needed {
            Err(Error::IdxTruncated {
                path: path.to_path_buf(),
                offset: bytes.len(),
                needed: offset + needed - bytes.len(),
            })
        } else {
            Ok(())
        }
    };

    need(0, 4)?;
    let magic = u32::from_be_bytes(bytes[0..4].try_into().expect("length checked"));
    if magic != expected_magic {
        return Err(Error::IdxWrongMagic {
            path: path.to_path_buf(),
            got: magic,
            expected: expected_magic,
        });
    }
    let ndims = (magic & 0xFF) as usize;

    need(4, 4 * ndims)?;
    let mut extents = Vec::with_capacity(ndims);
    for i in 0..ndims {
        let at = 4 + 4 * i;
        extents.push(u32::from_be_bytes(
            bytes[at..at + 4].try_into().expect("length checked"),
        ));
    }

    let mut count: usize = 1;
    for &e in &extents {
        count = count
            .checked_mul(e as usize)
            .ok_or_else(|| Error::IdxExtentOverflow {
                path: path.to_path_buf(),
                extents: extents.clone(),
            })?;
    }

    let header = 4 + 4 * ndims;
    need(header, count)?;
    if bytes.len() > header + count {
        return Err(Error::Data(format!(
            "{}: {} trailing bytes after the declared payload",
            path.display(),
            bytes.len() - header - count
        )));
    }
    Ok(IdxFile {
        magic,
        extents,
        payload: bytes[header..].to_vec(),
    })
}

/// Serialize an IDX file; the exact inverse of `parse_idx`.
pub fn write_idx(path: &Path, magic: u32, extents: &[u32], payload: &[u8]) -> Result<()> {
    let mut bytes = Vec::with_capacity(4 + 4 * extents.len() + payload.len());
    bytes.extend_from_slice(&magic.to_be_bytes());
    for &e in extents {
        bytes.extend_from_slice(&e.to_be_bytes());
    }
    bytes.extend_from_slice(payload);
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Load an image file: magic 2051, extents (count, 28, 28).
pub fn load_images(path: &Path) -> Result<IdxFile> {
    let f = parse_idx(path, IMAGES_MAGIC)?;
    if f.extents.len() != 3 || f.extents[1] != 28 || f.extents[2] != 28 {
        return Err(Error::Data(format!(
            "{}: expected extents (count, 28, 28), got {:?}",
            path.display(),
            f.extents
        )));
    }
    Ok(f)
}

/// Load a label file: magic 2049, one extent.
pub fn load_labels(path: &Path) -> Result<IdxFile> {
    let f = parse_idx(path, LABELS_MAGIC)?;
    if f.extents.len() != 1 {
        return Err(Error::Data(format!(
            "{}: expected a single extent, got {:?}",
            path.display(),
            f.extents
        )));
    }
    Ok(f)
}

/// A class-filtered slice of a dataset with pixels scaled to `[0, 1]` and
/// labels remapped to `0..k` in ascending original-class order.
#[derive(Debug, Clone)]
pub struct DatasetView {
    /// `[count, 784]`, one flattened image per row.
    pub images: Tensor,
    /// Remapped labels, one per row.
    pub labels: Vec<usize>,
    /// Original class ids, ascending; `class_ids[new_label] = original`.
    pub class_ids: Vec<u8>,
    /// Per-class row indices into this view.
    pub per_class: Vec<Vec<usize>>,
}

impl DatasetView {
    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }
}

/// Filter to a class subset, keeping at most `per_class_limit` samples per
/// class in file order.
pub fn make_view(
    images: &IdxFile,
    labels: &IdxFile,
    class_subset: &[u8],
    per_class_limit: Option<usize>,
) -> Result<DatasetView> {
    let n = images.extents[0] as usize;
    if labels.payload.len() != n {
        return Err(Error::Data(format!(
            "{} images but {} labels",
            n,
            labels.payload.len()
        )));
    }
    let mut classes: Vec<u8> = class_subset.to_vec();
    classes.sort_unstable();
    classes.dedup();
    if classes.is_empty() {
        return Err(Error::Config(String::from("class subset is empty")));
    }

    let mut keep: Vec<(usize, usize)> = Vec::new(); // (source row, new label)
    let mut per_class_counts = vec![0usize; classes.len()];
    for (row, &label) in labels.payload.iter().enumerate() {
        if let Ok(new_label) = classes.binary_search(&label) {
            if per_class_limit.is_none_or(|cap| per_class_counts[new_label] < cap) {
                keep.push((row, new_label));
                per_class_counts[new_label] += 1;
            }
        }
    }
    for (j, &count) in per_class_counts.iter().enumerate() {
        if count == 0 {
            return Err(Error::EmptyClass {
                class: classes[j] as usize,
            });
        }
    }

    let mut view_images = Tensor::zeros(&[keep.len(), 784]);
    let mut view_labels = Vec::with_capacity(keep.len());
    let mut per_class = vec![Vec::new(); classes.len()];
    for (dst, &(src, new_label)) in keep.iter().enumerate() {
        let raw = &images.payload[src * 784..(src + 1) * 784];
        let out = &mut view_images.data_mut()[dst * 784..(dst + 1) * 784];
        for (o, &b) in out.iter_mut().zip(raw) {
            *o = b as f64 / 255.0;
        }
        view_labels.push(new_label);
        per_class[new_label].push(dst);
    }
    Ok(DatasetView {
        images: view_images,
        labels: view_labels,
        class_ids: classes,
        per_class,
    })
}

/// One training batch: images, remapped labels, and the derived partition.
#[derive(Debug, Clone)]
pub struct Batch {
    /// `[n, 784]` with samples grouped by class in ascending label order.
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub partition: ClassPartition,
}

/// Endless class-balanced batch stream: every batch takes exactly
/// `batch_per_class` samples from each class, without replacement within a
/// pass over that class; each exhausted class is reshuffled independently.
/// A tail smaller than `batch_per_class` is dropped at the pass boundary.
#[derive(Debug)]
pub struct BalancedBatches<'a> {
    view: &'a DatasetView,
    batch_per_class: usize,
    rng: ChaCha8Rng,
    order: Vec<Vec<usize>>,
    cursor: Vec<usize>,
}

impl<'a> BalancedBatches<'a> {
    pub fn new(view: &'a DatasetView, batch_per_class: usize, rng: ChaCha8Rng) -> Result<Self> {
        if batch_per_class == 0 {
            return Err(Error::Config(String::from("batch_per_class must be >= 1")));
        }
        for (j, idx) in view.per_class.iter().enumerate() {
            if idx.len() < batch_per_class {
                return Err(Error::Config(format!(
                    "class {} has {} samples, fewer than batch_per_class = {}",
                    view.class_ids[j],
                    idx.len(),
                    batch_per_class
                )));
            }
        }
        let k = view.num_classes();
        Ok(BalancedBatches {
            view,
            batch_per_class,
            rng,
            order: vec![Vec::new(); k],
            cursor: vec![0; k],
        })
    }

    pub fn next_batch(&mut self) -> Batch {
        let k = self.view.num_classes();
        let bpc = self.batch_per_class;
        let n = k * bpc;
        let mut images = Tensor::zeros(&[n, 784]);
        let mut labels = Vec::with_capacity(n);
        let mut dst = 0;
        for class in 0..k {
            if self.cursor[class] + bpc > self.order[class].len() {
                self.order[class] = self.view.per_class[class].clone();
                self.order[class].shuffle(&mut self.rng);
                self.cursor[class] = 0;
            }
            for i in 0..bpc {
                let src = self.order[class][self.cursor[class] + i];
                images.data_mut()[dst * 784..(dst + 1) * 784]
                    .copy_from_slice(&self.view.images.data()[src * 784..(src + 1) * 784]);
                labels.push(class);
                dst += 1;
            }
            self.cursor[class] += bpc;
        }
        let partition =
            ClassPartition::from_labels(&labels, k).expect("balanced batches cover every class");
        Batch {
            images,
            labels,
            partition,
        }
    }
}
