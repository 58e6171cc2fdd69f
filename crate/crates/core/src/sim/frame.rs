//! Camera frame payload carried on the image topic.

use crate::data::{tensor_from_rgb8, tensor_to_rgb8, Annotation, RoadClass, Sample};
use crate::detect::BBox;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One rendered camera frame plus the renderer's ground truth, which only the
/// oracle detector reads.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFrame {
    pub frame_id: u64,
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<u8>,
    pub truths: Vec<Annotation>,
}

impl ImageFrame {
    pub fn from_sample(frame_id: u64, sample: &Sample) -> Result<Self> {
        let (width, height, rgb) = tensor_to_rgb8(&sample.image)?;
        Ok(Self { frame_id, width, height, rgb, truths: sample.annotations.clone() })
    }

    pub fn image(&self) -> Result<Tensor> {
        tensor_from_rgb8(self.width, self.height, &self.rgb)
    }

    /// Frame id (u64), width, height (u32), RGB8 bytes, truth count (u32), then per truth
    /// a class byte and four f64. All integers and reals little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.rgb.len() + self.truths.len() * 33);
        out.extend_from_slice(&self.frame_id.to_le_bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&self.rgb);
        out.extend_from_slice(&(self.truths.len() as u32).to_le_bytes());
        for a in &self.truths {
            out.push(a.class.id() as u8);
            for v in [a.bbox.cx, a.bbox.cy, a.bbox.w, a.bbox.h] {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let frame_id = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let rgb = r.take(width * height * 3)?.to_vec();
        let n = r.u32()? as usize;
        let mut truths = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let class = RoadClass::from_id(r.take(1)?[0] as usize)
                .ok_or_else(|| Error::Format("bad class byte in frame".into()))?;
            let mut v = [0.0; 4];
            for slot in &mut v {
                *slot = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            }
            truths.push(Annotation::new(class, BBox::new(v[0], v[1], v[2], v[3])));
        }
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes in frame payload".into()));
        }
        Ok(Self { frame_id, width, height, rgb, truths })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated frame payload".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
