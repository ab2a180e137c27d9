use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::image::{BinaryMask, GrayImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: GrayImage,
    pub mask: BinaryMask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: GrayImage, mask: BinaryMask) -> Result<Self> {
        if image.dims() != mask.dims() {
            return Err(Error::DimensionMismatch { left: image.dims(), right: mask.dims() });
        }
        Ok(Self { id: id.into(), image, mask })
    }
}

/// Ordered image/mask pairs with unique ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    items: Vec<Sample>,
    split: Split,
}

impl Dataset {
    pub fn new(items: Vec<Sample>, split: Split) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for s in &items {
            if s.image.dims() != s.mask.dims() {
                return Err(Error::DimensionMismatch { left: s.image.dims(), right: s.mask.dims() });
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId(s.id.clone()));
            }
        }
        Ok(Self { items, split })
    }

    pub fn items(&self) -> &[Sample] {
        &self.items
    }

    pub fn into_items(self) -> Vec<Sample> {
        self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(self, split: Split) -> Self {
        Self { split, ..self }
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|s| s.id.as_str())
    }
}

/// Shuffles `ds` and cuts it into disjoint train and validation sets of
/// `round(n * fraction)` items each (validation is capped by what remains).
pub fn split_dataset(ds: &Dataset, fractions: (f64, f64), seed: u64) -> Result<(Dataset, Dataset)> {
    let (ft, fv) = fractions;
    if !(ft > 0.0) || !(fv > 0.0) {
        return Err(config_err("split.fractions", "fractions must be positive"));
    }
    if ft + fv > 1.0 + 1e-12 {
        return Err(config_err("split.fractions", "fractions sum to more than 1"));
    }
    let n = ds.len();
    let n_train = (Float::round(n as f64 * ft) as usize).min(n);
    let n_val = (Float::round(n as f64 * fv) as usize).min(n - n_train);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| ds.items[i].clone()).collect::<Vec<_>>();
    let train = Dataset { items: pick(&order[..n_train]), split: Split::Train };
    let val = Dataset { items: pick(&order[n_train..n_train + n_val]), split: Split::Val };
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::format;

    fn toy(n: usize) -> Dataset {
        let items = (0..n)
            .map(|i| {
                let img = GrayImage::filled(8, 8, (i % 10) as f32 / 10.0).unwrap();
                Sample::new(format!("s{i}"), img, BinaryMask::empty(8, 8)).unwrap()
            })
            .collect();
        Dataset::new(items, Split::Train).unwrap()
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let mut items = toy(2).into_items();
        items[1].id = items[0].id.clone();
        assert_eq!(Dataset::new(items, Split::Test), Err(Error::DuplicateId("s0".into())));
    }

    #[test]
    fn split_sizes_and_disjointness() {
        let ds = toy(100);
        let (a, b) = split_dataset(&ds, (0.75, 0.25), 1).unwrap();
        assert_eq!((a.len(), b.len()), (75, 25));
        let ids: BTreeSet<&str> = a.ids().chain(b.ids()).collect();
        assert_eq!(ids.len(), 100);
        assert_eq!(split_dataset(&ds, (0.75, 0.25), 1).unwrap(), (a, b));
    }

    #[test]
    fn oversubscribed_fractions_fail() {
        assert!(split_dataset(&toy(10), (0.8, 0.3), 0).is_err());
        assert!(split_dataset(&toy(10), (0.0, 0.3), 0).is_err());
    }
}
