//! In-process publish/subscribe bus with the six fixed topics and the node direction matrix.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, MutexGuard};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TopicName {
    Reset,
    Land,
    CmdVel,
    Takeoff,
    Navdata,
    ImageRaw,
}

impl TopicName {
    pub const ALL: [TopicName; 6] = [
        TopicName::Reset,
        TopicName::Land,
        TopicName::CmdVel,
        TopicName::Takeoff,
        TopicName::Navdata,
        TopicName::ImageRaw,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TopicName::Reset => "/UAV/reset",
            TopicName::Land => "/UAV/land",
            TopicName::CmdVel => "/cmd_vel",
            TopicName::Takeoff => "/UAV/takeoff",
            TopicName::Navdata => "/UAV/navdata",
            TopicName::ImageRaw => "/UAV/front/image_raw",
        }
    }

    /// The only node allowed to publish on this topic.
    pub fn publisher(self) -> NodeId {
        match self {
            TopicName::Navdata | TopicName::ImageRaw => NodeId::Node02,
            _ => NodeId::Node01,
        }
    }

    /// Bounded topics keep only the newest envelopes per subscriber.
    pub fn capacity(self) -> Option<usize> {
        match self {
            TopicName::ImageRaw => Some(IMAGE_QUEUE_CAPACITY),
            _ => None,
        }
    }
}

pub const IMAGE_QUEUE_CAPACITY: usize = 2;

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TopicName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "/UAVtakeoff" {
            return Ok(TopicName::Takeoff);
        }
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Bus(format!("unknown topic {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeId {
    /// Detection and tracking.
    Node01,
    /// Drone driver.
    Node02,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub topic: TopicName,
    pub publisher: NodeId,
    pub seq: u64,
    pub sim_time: f64,
    pub payload: Vec<u8>,
}

#[derive(Debug, Default)]
struct Queue {
    items: VecDeque<Envelope>,
    dropped: u64,
}

#[derive(Default)]
struct Inner {
    seqs: HashMap<(NodeId, TopicName), u64>,
    subscribers: HashMap<TopicName, Vec<Arc<Mutex<Queue>>>>,
}

/// Cloneable handle; every clone talks to the same bus.
#[derive(Clone, Default)]
pub struct Bus {
    inner: Arc<Mutex<Inner>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Bus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Receives every envelope published on `topic` from now on.
    pub fn subscribe(&self, topic: TopicName) -> Subscription {
        let queue = Arc::new(Mutex::new(Queue::default()));
        lock(&self.inner).subscribers.entry(topic).or_default().push(queue.clone());
        Subscription { topic, queue }
    }

    /// Assigns the next sequence number for `(publisher, topic)` and fans out.
    pub fn publish(&self, publisher: NodeId, topic: TopicName, sim_time: f64, payload: Vec<u8>) -> Result<u64> {
        if topic.publisher() != publisher {
            return Err(Error::Bus(format!("{publisher:?} may not publish on {topic}")));
        }
        let mut inner = lock(&self.inner);
        let counter = inner.seqs.entry((publisher, topic)).or_insert(0);
        let seq = *counter;
        *counter += 1;
        let env = Envelope { topic, publisher, seq, sim_time, payload };
        if let Some(subs) = inner.subscribers.get(&topic) {
            for q in subs {
                let mut q = lock(q);
                if let Some(cap) = topic.capacity() {
                    while q.items.len() >= cap {
                        q.items.pop_front();
                        q.dropped += 1;
                    }
                }
                q.items.push_back(env.clone());
            }
        }
        Ok(seq)
    }
}

pub struct Subscription {
    topic: TopicName,
    queue: Arc<Mutex<Queue>>,
}

impl Subscription {
    pub fn topic(&self) -> TopicName {
        self.topic
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        lock(&self.queue).items.pop_front()
    }

    pub fn drain(&self) -> Vec<Envelope> {
        lock(&self.queue).items.drain(..).collect()
    }

    /// Envelopes discarded by the drop-oldest policy.
    pub fn dropped(&self) -> u64 {
        lock(&self.queue).dropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fifo_per_topic() {
        let bus = Bus::new();
        let sub = bus.subscribe(TopicName::CmdVel);
        bus.publish(NodeId::Node01, TopicName::CmdVel, 0.0, b"A".to_vec()).unwrap();
        bus.publish(NodeId::Node01, TopicName::CmdVel, 0.1, b"B".to_vec()).unwrap();
        let got: Vec<Vec<u8>> = sub.drain().into_iter().map(|e| e.payload).collect();
        assert_eq!(got, vec![b"A".to_vec(), b"B".to_vec()]);
    }

    #[test]
    fn direction_matrix_is_enforced() {
        let bus = Bus::new();
        assert!(bus.publish(NodeId::Node02, TopicName::CmdVel, 0.0, vec![]).is_err());
        assert!(bus.publish(NodeId::Node01, TopicName::Navdata, 0.0, vec![]).is_err());
        for t in TopicName::ALL {
            assert!(bus.publish(t.publisher(), t, 0.0, vec![]).is_ok());
        }
        let n01 = TopicName::ALL.iter().filter(|t| t.publisher() == NodeId::Node01).count();
        assert_eq!(n01, 4);
    }

    #[test]
    fn fan_out_is_identical() {
        let bus = Bus::new();
        let a = bus.subscribe(TopicName::Navdata);
        let b = bus.subscribe(TopicName::Navdata);
        for i in 0..5u8 {
            bus.publish(NodeId::Node02, TopicName::Navdata, i as f64, vec![i]).unwrap();
        }
        assert_eq!(a.drain(), b.drain());
    }

    #[test]
    fn late_subscriber_misses_earlier_envelopes() {
        let bus = Bus::new();
        bus.publish(NodeId::Node01, TopicName::Land, 0.0, vec![]).unwrap();
        let sub = bus.subscribe(TopicName::Land);
        assert!(sub.try_recv().is_none());
    }

    #[test]
    fn image_queue_drops_oldest() {
        let bus = Bus::new();
        let sub = bus.subscribe(TopicName::ImageRaw);
        for i in 0..5u8 {
            bus.publish(NodeId::Node02, TopicName::ImageRaw, 0.0, vec![i]).unwrap();
        }
        let got: Vec<u64> = sub.drain().iter().map(|e| e.seq).collect();
        assert_eq!(got, vec![3, 4]);
        assert_eq!(sub.dropped(), 3);
    }

    #[test]
    fn topic_names_parse() {
        for t in TopicName::ALL {
            assert_eq!(t.as_str().parse::<TopicName>().unwrap(), t);
        }
        assert_eq!("/UAVtakeoff".parse::<TopicName>().unwrap(), TopicName::Takeoff);
        assert!("/UAV/fly".parse::<TopicName>().is_err());
    }
}
