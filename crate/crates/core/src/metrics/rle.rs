//! Row-major run-length encoding of binary masks.
//!
//! Counts alternate between runs of zeros and runs of ones, starting with a
//! (possibly empty) zero run. Unlike the column-major COCO variant, pixels are
//! scanned row by row.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BinaryMask;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RleMask {
    #[serde(rename = "h")]
    pub height: usize,
    #[serde(rename = "w")]
    pub width: usize,
    pub counts: Vec<u64>,
}

impl RleMask {
    pub fn validate(&self) -> Result<()> {
        let total: u64 = self.counts.iter().sum();
        let want = (self.height * self.width) as u64;
        if total != want {
            return Err(Error::invalid(format!(
                "RLE counts sum to {total}, expected {}×{} = {want}",
                self.height, self.width
            )));
        }
        if self.counts.iter().skip(1).any(|&c| c == 0) {
            return Err(Error::invalid("only the first RLE run may be empty"));
        }
        Ok(())
    }

    /// Number of set pixels, without decoding.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).sum()
    }
}

pub fn rle_encode(mask: &BinaryMask) -> RleMask {
    let mut counts = Vec::new();
    let mut current = 0u8;
    let mut run = 0u64;
    for &v in mask.data() {
        if v != current {
            counts.push(run);
            run = 0;
            current = v;
        }
        run += 1;
    }
    counts.push(run);
    RleMask {
        height: mask.height(),
        width: mask.width(),
        counts,
    }
}

pub fn rle_decode(rle: &RleMask) -> Result<BinaryMask> {
    rle.validate()?;
    let mut data = Vec::with_capacity(rle.height * rle.width);
    for (i, &c) in rle.counts.iter().enumerate() {
        data.extend(std::iter::repeat_n((i % 2) as u8, c as usize));
    }
    BinaryMask::new(rle.height, rle.width, data)
}
