//! Layer-wise memory: one record per editing step holding the prompt
//! embedding, the full latent trajectory and the mask. Record 0 is the
//! background and owns the all-ones mask.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::latent::Latent;
use crate::mask::Mask;
use crate::prompt::PromptEmbedding;

/// Fixed bookkeeping charged to every memory regardless of content.
pub const MEMORY_HEADER_BYTES: usize = 64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    pub label: String,
    pub prompt: PromptEmbedding,
    /// `trajectory[t]` is the stored latent at timestep `t`, for `t = 0..=T`.
    pub trajectory: Vec<Latent>,
    pub mask: Mask,
}

impl LayerRecord {
    pub fn steps(&self) -> usize {
        self.trajectory.len().saturating_sub(1)
    }

    pub fn final_latent(&self) -> &Latent {
        &self.trajectory[0]
    }

    pub fn byte_len(&self) -> usize {
        self.trajectory.iter().map(Latent::byte_len).sum::<usize>()
            + self.prompt.byte_len()
            + self.mask.len()
            + self.label.len()
    }

    /// SHA-256 over every stored byte of the record.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.label.as_bytes());
        for tok in self.prompt.tokens() {
            h.update(tok.to_le_bytes());
        }
        for v in self.prompt.vectors() {
            h.update(v.to_le_bytes());
        }
        for z in &self.trajectory {
            h.update(z.to_le_bytes());
        }
        h.update(self.mask.bits().iter().map(|&b| b as u8).collect::<Vec<_>>());
        h.finalize().into()
    }
}

/// Shape every record must match.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentDims {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerMemory {
    dims: LatentDims,
    records: Vec<LayerRecord>,
}

impl LayerMemory {
    pub fn new(dims: LatentDims) -> Self {
        Self {
            dims,
            records: Vec::new(),
        }
    }

    pub fn dims(&self) -> LatentDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[LayerRecord] {
        &self.records
    }

    pub fn record(&self, i: usize) -> Result<&LayerRecord> {
        self.records.get(i).ok_or(Error::OutOfRange {
            index: i,
            len: self.records.len(),
        })
    }

    pub fn latest(&self) -> Option<&LayerRecord> {
        self.records.last()
    }

    pub fn masks(&self) -> Vec<Mask> {
        self.records.iter().map(|r| r.mask.clone()).collect()
    }

    fn check_record(&self, record: &LayerRecord) -> Result<()> {
        let d = self.dims;
        if record.trajectory.len() != d.steps + 1 {
            return Err(Error::dims(
                format!("{} trajectory entries", d.steps + 1),
                record.trajectory.len(),
            ));
        }
        for z in &record.trajectory {
            if z.shape() != (d.channels, d.height, d.width) {
                return Err(Error::dims(
                    format!("{:?}", (d.channels, d.height, d.width)),
                    format!("{:?}", z.shape()),
                ));
            }
        }
        if record.mask.dims() != (d.width, d.height) {
            return Err(Error::dims(
                format!("{}x{}", d.width, d.height),
                format!("{}x{}", record.mask.width(), record.mask.height()),
            ));
        }
        if self.records.is_empty() && !record.mask.is_full() {
            return Err(Error::InvalidConfig(
                "the background record needs the all-ones mask".into(),
            ));
        }
        Ok(())
    }

    /// Appends at index `len`; returns that index.
    pub fn append_layer(&mut self, record: LayerRecord) -> Result<usize> {
        self.check_record(&record)?;
        self.records.push(record);
        Ok(self.records.len() - 1)
    }

    /// The stored latent of layer `i` at timestep `t`.
    pub fn latent_at(&self, i: usize, t: usize) -> Result<&Latent> {
        let record = self.record(i)?;
        record.trajectory.get(t).ok_or(Error::OutOfRange {
            index: t,
            len: record.trajectory.len(),
        })
    }

    /// Removes record `i`; later records shift down by one.
    pub fn remove_layer(&mut self, i: usize) -> Result<LayerRecord> {
        if i == 0 {
            return Err(Error::BackgroundLayer);
        }
        if i >= self.records.len() {
            return Err(Error::OutOfRange {
                index: i,
                len: self.records.len(),
            });
        }
        Ok(self.records.remove(i))
    }

    /// Swaps the record at `i` for a rebuilt one (used after deletion, which
    /// re-derives the topmost layer's trajectory).
    pub(crate) fn replace_layer(&mut self, i: usize, record: LayerRecord) -> Result<()> {
        self.check_record(&record)?;
        let slot = self.records.get_mut(i).ok_or(Error::OutOfRange {
            index: i,
            len: 0,
        })?;
        *slot = record;
        Ok(())
    }

    /// Bytes held by tensors, embeddings, masks and labels, plus the header.
    pub fn memory_footprint(&self) -> usize {
        MEMORY_HEADER_BYTES + self.records.iter().map(LayerRecord::byte_len).sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::latent::sample_init_latent;
    use crate::prompt::embed_prompt;

    const DIMS: LatentDims = LatentDims {
        channels: 2,
        height: 4,
        width: 4,
        steps: 3,
    };

    fn record(label: &str, seed: u64, mask: Mask) -> LayerRecord {
        LayerRecord {
            label: label.into(),
            prompt: embed_prompt(label, 8, 0).unwrap(),
            trajectory: (0..=DIMS.steps)
                .map(|t| sample_init_latent(seed, t, 2, 4, 4))
                .collect(),
            mask,
        }
    }

    fn square() -> Mask {
        Mask::from_fn(4, 4, |x, y| x < 2 && y < 2)
    }

    #[test]
    fn append_and_read_back() {
        let mut mem = LayerMemory::new(DIMS);
        assert_eq!(mem.append_layer(record("floor", 1, Mask::full(4, 4))).unwrap(), 0);
        let r1 = record("a mug", 2, square());
        let r2 = record("a dish", 3, square());
        assert_eq!(mem.append_layer(r1.clone()).unwrap(), 1);
        assert_eq!(mem.append_layer(r2.clone()).unwrap(), 2);
        for t in 0..=DIMS.steps {
            assert_eq!(
                mem.latent_at(1, t).unwrap().to_le_bytes(),
                r1.trajectory[t].to_le_bytes()
            );
            assert_eq!(mem.latent_at(2, t).unwrap(), &r2.trajectory[t]);
        }
        assert!(mem.latent_at(3, 0).is_err());
        assert!(mem.latent_at(0, DIMS.steps + 1).is_err());
    }

    #[test]
    fn background_must_be_full() {
        let mut mem = LayerMemory::new(DIMS);
        assert!(mem.append_layer(record("floor", 1, square())).is_err());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut mem = LayerMemory::new(DIMS);
        mem.append_layer(record("floor", 1, Mask::full(4, 4))).unwrap();
        let mut bad = record("a mug", 2, square());
        bad.trajectory.pop();
        assert!(mem.append_layer(bad).is_err());
        let wrong_mask = record("a mug", 2, Mask::full(5, 4));
        assert!(mem.append_layer(wrong_mask).is_err());
    }

    #[test]
    fn remove_layer_rules() {
        let mut mem = LayerMemory::new(DIMS);
        mem.append_layer(record("floor", 1, Mask::full(4, 4))).unwrap();
        mem.append_layer(record("a mug", 2, square())).unwrap();
        mem.append_layer(record("a dish", 3, square())).unwrap();
        assert!(matches!(mem.remove_layer(0), Err(Error::BackgroundLayer)));
        assert!(mem.remove_layer(3).is_err());
        let removed = mem.remove_layer(1).unwrap();
        assert_eq!(removed.label, "a mug");
        assert_eq!(mem.len(), 2);
        assert_eq!(mem.record(1).unwrap().label, "a dish");
        mem.remove_layer(1).unwrap();
        assert_eq!(mem.len(), 1);
    }

    #[test]
    fn footprint_grows() {
        let mut mem = LayerMemory::new(DIMS);
        assert_eq!(mem.memory_footprint(), MEMORY_HEADER_BYTES);
        let mut prev = mem.memory_footprint();
        mem.append_layer(record("floor", 1, Mask::full(4, 4))).unwrap();
        for k in 0..4 {
            mem.append_layer(record("a mug", k, square())).unwrap();
            let now = mem.memory_footprint();
            assert!(now > prev);
            prev = now;
        }
    }

    #[test]
    fn checksum_tracks_content() {
        let a = record("a mug", 2, square());
        let mut b = a.clone();
        assert_eq!(a.checksum(), b.checksum());
        b.trajectory[1].data_mut()[0] += 1.0;
        assert_ne!(a.checksum(), b.checksum());
    }
}
