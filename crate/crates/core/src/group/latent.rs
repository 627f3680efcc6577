use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::tensor::{Tensor, Var};
use crate::{Error, Result, Scalar};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub size: usize,
}

/// Partition of the latent vector into named contiguous segments.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentSpec {
    segments: Vec<Segment>,
}

impl LatentSpec {
    pub fn new(segments: Vec<(impl Into<String>, usize)>) -> Result<Self> {
        let segments: Vec<Segment> = segments
            .into_iter()
            .map(|(name, size)| Segment { name: name.into(), size })
            .collect();
        if segments.is_empty() {
            return Err(Error::contract("latent spec needs at least one segment"));
        }
        if let Some(s) = segments.iter().find(|s| s.size == 0) {
            return Err(Error::contract(format!("segment `{}` has size 0", s.name)));
        }
        for (i, s) in segments.iter().enumerate() {
            if segments[..i].iter().any(|o| o.name == s.name) {
                return Err(Error::contract(format!("duplicate segment name `{}`", s.name)));
            }
        }
        Ok(LatentSpec { segments })
    }

    /// A single segment `z` covering all dimensions.
    pub fn single(size: usize) -> Result<Self> {
        Self::new(vec![("z", size)])
    }

    /// Class-dependent `z_y` followed by domain-dependent `z_d`.
    pub fn class_domain(class_size: usize, domain_size: usize) -> Result<Self> {
        Self::new(vec![("z_y", class_size), ("z_d", domain_size)])
    }

    /// Segments named `z0, z1, ...` with the given sizes.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        match sizes {
            [n] => Self::single(*n),
            [a, b] => Self::class_domain(*a, *b),
            _ => Self::new(sizes.iter().enumerate().map(|(i, &s)| (format!("z{i}"), s)).collect()),
        }
    }

    pub fn total(&self) -> usize {
        self.segments.iter().map(|s| s.size).sum()
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.segments.iter().map(|s| s.size).collect()
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.segments
            .iter()
            .map(|s| {
                let r = start..start + s.size;
                start += s.size;
                r
            })
            .collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }

    pub fn range_of(&self, name: &str) -> Option<Range<usize>> {
        self.index_of(name).map(|i| self.ranges()[i].clone())
    }
}

/// Splits `z: B x |Z|` into one var per segment, in spec order.
pub fn split_latent<'g, S: Scalar>(z: Var<'g, S>, spec: &LatentSpec) -> Result<Vec<Var<'g, S>>> {
    let shape = z.shape();
    if shape.len() != 2 || shape[1] != spec.total() {
        return Err(Error::contract(format!(
            "latent of shape {shape:?} does not match spec width {}",
            spec.total()
        )));
    }
    if spec.len() == 1 {
        return Ok(vec![z]);
    }
    Ok(spec.ranges().into_iter().map(|r| z.slice(1, r.start, r.len())).collect())
}

/// Column block of a `B x |Z|` tensor.
pub fn segment_columns<S: Scalar>(z: &Tensor<S>, range: Range<usize>) -> Tensor<S> {
    let (b, w) = (z.shape()[0], z.shape()[1]);
    let mut data = Vec::with_capacity(b * range.len());
    for i in 0..b {
        data.extend_from_slice(&z.data()[i * w + range.start..i * w + range.end]);
    }
    Tensor::new(vec![b, range.len()], data).expect("non-empty segment")
}
