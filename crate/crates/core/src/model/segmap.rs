//! Segmentation maps and their two binary encodings: the compact wire form
//! used in server replies and the self-describing `SSMP` file.

use crate::error::{DecodeError, TensorError};
use crate::tensor::Tensor;
use crate::wire::{Reader, Writer};

pub const SEGMAP_MAGIC: [u8; 4] = *b"SSMP";
pub const SEGMAP_VERSION: u16 = 1;

/// Per-pixel class labels in `1..=classes`, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMap {
    height: usize,
    width: usize,
    classes: usize,
    labels: Vec<u16>,
}

impl SegMap {
    pub fn new(
        height: usize,
        width: usize,
        classes: usize,
        labels: Vec<u16>,
    ) -> Result<Self, DecodeError> {
        if labels.len() != height * width {
            return Err(DecodeError::Length {
                field: "labels",
                declared: height * width,
                actual: labels.len(),
            });
        }
        if let Some((i, &l)) = labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l == 0 || l as usize > classes)
        {
            return Err(DecodeError::Invalid {
                field: "labels",
                reason: format!("label {l} at pixel {i} outside 1..={classes}"),
            });
        }
        Ok(Self {
            height,
            width,
            classes,
            labels,
        })
    }

    pub fn filled(height: usize, width: usize, classes: usize, label: u16) -> Self {
        Self::new(height, width, classes, vec![label; height * width]).expect("label in range")
    }

    /// Channelwise argmax of `S x H x W` scores; ties go to the lowest class.
    pub fn argmax(scores: &Tensor) -> Result<Self, TensorError> {
        let (s, h, w) = scores.chw()?;
        if s == 0 {
            return Err(TensorError::Empty("argmax"));
        }
        let plane = h * w;
        let y = scores.data();
        let labels = (0..plane)
            .map(|i| {
                let mut best = 0;
                for c in 1..s {
                    if y[c * plane + i] > y[best * plane + i] {
                        best = c;
                    }
                }
                best as u16 + 1
            })
            .collect();
        Ok(Self {
            height: h,
            width: w,
            classes: s,
            labels,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.labels[y * self.width + x]
    }

    fn wide(classes: usize) -> bool {
        classes > u8::MAX as usize
    }

    /// Reply payload: `H u32, W u32`, then one byte per pixel (two when more
    /// than 255 classes are in play).
    pub fn to_wire(&self) -> Vec<u8> {
        let wide = Self::wide(self.classes);
        let mut w = Writer::with_capacity(8 + self.labels.len() * if wide { 2 } else { 1 });
        w.u32(self.height as u32);
        w.u32(self.width as u32);
        for &l in &self.labels {
            if wide {
                w.u16(l);
            } else {
                w.u8(l as u8);
            }
        }
        w.into_inner()
    }

    pub fn from_wire(bytes: &[u8], classes: usize) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let h = r.u32("height")? as usize;
        let w = r.u32("width")? as usize;
        let labels = Self::read_labels(&mut r, h, w, classes)?;
        r.finish("labels")?;
        Self::new(h, w, classes, labels)
    }

    fn read_labels(
        r: &mut Reader<'_>,
        h: usize,
        w: usize,
        classes: usize,
    ) -> Result<Vec<u16>, DecodeError> {
        let n = h
            .checked_mul(w)
            .ok_or(DecodeError::Truncated { field: "labels" })?;
        let per = if Self::wide(classes) { 2 } else { 1 };
        let need = n
            .checked_mul(per)
            .ok_or(DecodeError::Truncated { field: "labels" })?;
        if r.remaining() != need {
            return Err(DecodeError::Length {
                field: "labels",
                declared: need,
                actual: r.remaining(),
            });
        }
        let raw = r.take(need, "labels")?;
        Ok(if per == 2 {
            raw.chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect()
        } else {
            raw.iter().map(|&b| b as u16).collect()
        })
    }

    /// File form: magic, version, class count `u16`, then the wire form.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&SEGMAP_MAGIC);
        w.u16(SEGMAP_VERSION);
        w.u16(self.classes as u16);
        w.bytes(&self.to_wire());
        w.into_inner()
    }

    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        r.magic(SEGMAP_MAGIC)?;
        r.version(SEGMAP_VERSION)?;
        let classes = r.u16("classes")? as usize;
        Self::from_wire(&bytes[8..], classes)
    }
}
