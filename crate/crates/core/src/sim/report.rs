//! Defect reports and the sinks that stand in for the remote server.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{self, BufWriter, Write};
use std::net::{SocketAddr, TcpStream};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::data::RoadClass;
use crate::detect::{fmt_sig6, BBox, Detection};

#[derive(Debug, Clone, PartialEq)]
pub struct DefectReport {
    pub frame_seq: u64,
    pub sim_time: f64,
    pub class: RoadClass,
    pub bbox: BBox,
    pub confidence: f64,
    pub image_ref: String,
}

impl DefectReport {
    /// `sim_time seq class cx cy w h confidence image_ref`
    pub fn record(&self) -> String {
        let b = self.bbox;
        format!(
            "{:.3} {} {} {} {} {} {} {} {}",
            self.sim_time,
            self.frame_seq,
            self.class,
            fmt_sig6(b.cx),
            fmt_sig6(b.cy),
            fmt_sig6(b.w),
            fmt_sig6(b.h),
            fmt_sig6(self.confidence),
            self.image_ref
        )
    }
}

pub trait ReportSink: Send {
    fn send(&mut self, record: &str) -> io::Result<()>;

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Appends one record per line.
pub struct FileSink {
    out: BufWriter<File>,
}

impl FileSink {
    pub fn append(path: impl AsRef<Path>) -> io::Result<Self> {
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { out: BufWriter::new(f) })
    }

    pub fn create(path: impl AsRef<Path>) -> io::Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }
}

impl ReportSink for FileSink {
    fn send(&mut self, record: &str) -> io::Result<()> {
        writeln!(self.out, "{record}")
    }

    fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Writes each record as a 4-byte big-endian length followed by the record bytes.
/// Connects lazily and reconnects after a failure.
pub struct SocketSink {
    addr: SocketAddr,
    stream: Option<TcpStream>,
}

impl SocketSink {
    pub fn new(addr: SocketAddr) -> Self {
        Self { addr, stream: None }
    }
}

pub fn frame_record(record: &str) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + record.len());
    out.extend_from_slice(&(record.len() as u32).to_be_bytes());
    out.extend_from_slice(record.as_bytes());
    out
}

impl ReportSink for SocketSink {
    fn send(&mut self, record: &str) -> io::Result<()> {
        if self.stream.is_none() {
            self.stream = Some(TcpStream::connect_timeout(&self.addr, Duration::from_millis(500))?);
        }
        let stream = self.stream.as_mut().expect("connected");
        let res = stream.write_all(&frame_record(record));
        if res.is_err() {
            self.stream = None;
        }
        res
    }

    fn flush(&mut self) -> io::Result<()> {
        match self.stream.as_mut() {
            Some(s) => s.flush(),
            None => Ok(()),
        }
    }
}

/// Collects records in memory; clones share the same storage.
#[derive(Clone, Default)]
pub struct MemorySink {
    pub records: Arc<Mutex<Vec<String>>>,
    /// While set, every send fails.
    pub offline: Arc<Mutex<bool>>,
}

impl MemorySink {
    pub fn records(&self) -> Vec<String> {
        self.records.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn set_offline(&self, offline: bool) {
        *self.offline.lock().unwrap_or_else(|e| e.into_inner()) = offline;
    }
}

impl ReportSink for MemorySink {
    fn send(&mut self, record: &str) -> io::Result<()> {
        if *self.offline.lock().unwrap_or_else(|e| e.into_inner()) {
            return Err(io::Error::new(io::ErrorKind::NotConnected, "sink offline"));
        }
        self.records.lock().unwrap_or_else(|e| e.into_inner()).push(record.to_string());
        Ok(())
    }
}

/// Holds records the inner sink refused, up to `capacity`, dropping the oldest beyond that.
pub struct BufferedSink {
    inner: Box<dyn ReportSink>,
    pending: VecDeque<String>,
    capacity: usize,
    dropped: u64,
}

pub const DEFAULT_SINK_BUFFER: usize = 256;

impl BufferedSink {
    pub fn new(inner: Box<dyn ReportSink>, capacity: usize) -> Self {
        Self { inner, pending: VecDeque::new(), capacity: capacity.max(1), dropped: 0 }
    }

    pub fn push(&mut self, record: String) {
        self.pending.push_back(record);
        while self.pending.len() > self.capacity {
            self.pending.pop_front();
            self.dropped += 1;
        }
        self.retry();
    }

    /// Sends as many pending records as the inner sink accepts, in order.
    pub fn retry(&mut self) {
        while let Some(front) = self.pending.front() {
            match self.inner.send(front) {
                Ok(()) => {
                    self.pending.pop_front();
                }
                Err(e) => {
                    log::debug!("report sink unavailable: {e}");
                    break;
                }
            }
        }
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.retry();
        self.inner.flush()
    }
}

/// Default same-class suppression radius in meters.
pub const DEDUP_RADIUS: f64 = 1.0;

/// Filters defect detections and forwards new ones to the sink.
pub struct Reporter {
    sink: BufferedSink,
    radius: f64,
    seen: Vec<(RoadClass, f64, f64)>,
    sent: Vec<DefectReport>,
}

impl Reporter {
    pub fn new(sink: BufferedSink, radius: f64) -> Self {
        Self { sink, radius, seen: Vec::new(), sent: Vec::new() }
    }

    /// Returns whether a report was filed. Lane detections are never reported, and a
    /// defect whose ground position lies within the radius of an earlier same-class
    /// report is suppressed.
    pub fn report_defect(
        &mut self,
        det: &Detection,
        frame_seq: u64,
        sim_time: f64,
        image_ref: &str,
        world: Option<(f64, f64)>,
    ) -> bool {
        let Some(class) = RoadClass::from_id(det.class_id).filter(|c| c.is_defect()) else {
            return false;
        };
        if let Some((x, y)) = world {
            let r2 = self.radius * self.radius;
            if self.seen.iter().any(|&(c, sx, sy)| c == class && (sx - x).powi(2) + (sy - y).powi(2) <= r2) {
                return false;
            }
            self.seen.push((class, x, y));
        }
        let report = DefectReport {
            frame_seq,
            sim_time,
            class,
            bbox: det.bbox,
            confidence: det.confidence,
            image_ref: image_ref.to_string(),
        };
        self.sink.push(report.record());
        self.sent.push(report);
        true
    }

    pub fn reports(&self) -> &[DefectReport] {
        &self.sent
    }

    pub fn sink(&mut self) -> &mut BufferedSink {
        &mut self.sink
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(class: usize) -> Detection {
        Detection::new(class, 0.9, BBox::new(0.5, 0.5, 0.1, 0.1))
    }

    fn reporter() -> (Reporter, MemorySink) {
        let mem = MemorySink::default();
        (Reporter::new(BufferedSink::new(Box::new(mem.clone()), 4), DEDUP_RADIUS), mem)
    }

    #[test]
    fn lane_is_never_reported() {
        let (mut r, mem) = reporter();
        assert!(!r.report_defect(&det(2), 0, 0.0, "f", Some((0.0, 0.0))));
        assert!(mem.records().is_empty());
    }

    #[test]
    fn same_defect_in_many_frames_reports_once() {
        let (mut r, mem) = reporter();
        for i in 0..10 {
            r.report_defect(&det(1), i, i as f64 * 0.1, "f", Some((5.0 + 0.05 * i as f64, 1.0)));
        }
        assert_eq!(mem.records().len(), 1);
    }

    #[test]
    fn distinct_defects_report_separately() {
        let (mut r, mem) = reporter();
        assert!(r.report_defect(&det(0), 0, 0.0, "f", Some((5.0, 1.0))));
        assert!(r.report_defect(&det(0), 1, 0.1, "f", Some((8.0, 1.0))));
        assert!(r.report_defect(&det(1), 2, 0.2, "f", Some((8.0, 1.0))), "other class is not suppressed");
        assert_eq!(mem.records().len(), 3);
    }

    #[test]
    fn record_layout() {
        let rep = DefectReport {
            frame_seq: 12,
            sim_time: 1.25,
            class: RoadClass::Pothole,
            bbox: BBox::new(0.5, 0.25, 0.125, 0.1),
            confidence: 0.875,
            image_ref: "frame_000012.ppm".into(),
        };
        assert_eq!(rep.record(), "1.250 12 pothole 0.5 0.25 0.125 0.1 0.875 frame_000012.ppm");
        let framed = frame_record("abc");
        assert_eq!(framed, vec![0, 0, 0, 3, b'a', b'b', b'c']);
    }

    #[test]
    fn offline_sink_buffers_then_drops_oldest() {
        let (mut r, mem) = reporter();
        mem.set_offline(true);
        for i in 0..6 {
            r.report_defect(&det(1), i, 0.0, &format!("f{i}"), Some((10.0 * i as f64, 0.0)));
        }
        assert_eq!((r.sink().pending(), r.sink().dropped()), (4, 2));
        mem.set_offline(false);
        r.sink().flush().unwrap();
        let got = mem.records();
        assert_eq!(got.len(), 4);
        assert!(got[0].ends_with("f2") && got[3].ends_with("f5"));
    }
}
