//! Transmitter and receiver state machines and the frame encoding of reduced
//! event-sets.
//!
//! Both sides start from the same buffer and apply the same event-sets in the
//! same order, so their buffers stay bitwise identical. Delivery must be
//! lossless and in order; the receiver rejects any frame whose timestep is not
//! exactly one past the last one it processed.
//!
//! Frame layout, little-endian:
//!
//! | offset | size | field |
//! |---|---|---|
//! | 0 | 2 | magic `0xC0BA` |
//! | 2 | 1 | version, `1` |
//! | 3 | 1 | matrix dimension `n` |
//! | 4 | 1 | flags, must be `0` |
//! | 5 | 4 | timestep (u32) |
//! | 9 | 2 | entry count (u16) |
//! | 11 | 10 per entry | `i` (u8), `j` (u8), value (binary64); one-based, `i <= j` |

use std::io::{self, Read, Write};

use crate::bounder::{self, BoundResult};
use crate::error::{Error, Result};
use crate::events::{Event, EventSet, ReducedEventSet};
use crate::symmat::SymMatrix;
use crate::triggers::TriggerPlan;

pub const MAGIC: u16 = 0xC0BA;
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 11;
pub const ENTRY_LEN: usize = 10;

/// Bytes on the wire for a frame with `count` entries.
pub const fn frame_len(count: usize) -> usize {
    HEADER_LEN + ENTRY_LEN * count
}

pub fn encode(e: &ReducedEventSet) -> Result<Vec<u8>> {
    let n = u8::try_from(e.n()).map_err(|_| Error::Frame(format!("dimension {} exceeds 255", e.n())))?;
    let count = u16::try_from(e.len())
        .map_err(|_| Error::Frame(format!("{} entries exceed the u16 count", e.len())))?;
    let mut out = Vec::with_capacity(frame_len(e.len()));
    out.extend_from_slice(&MAGIC.to_le_bytes());
    out.push(VERSION);
    out.push(n);
    out.push(0);
    out.extend_from_slice(&e.timestep().to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    for ev in e.entries() {
        // n <= 255 so one-based indices fit
        out.push((ev.i + 1) as u8);
        out.push((ev.j + 1) as u8);
        out.extend_from_slice(&ev.value.to_le_bytes());
    }
    Ok(out)
}

struct Header {
    n: usize,
    timestep: u32,
    count: usize,
}

fn parse_header(b: &[u8]) -> Result<Header> {
    if b.len() < HEADER_LEN {
        return Err(Error::Frame(format!("truncated header: {} bytes", b.len())));
    }
    let magic = u16::from_le_bytes([b[0], b[1]]);
    if magic != MAGIC {
        return Err(Error::Frame(format!("bad magic {magic:#06x}")));
    }
    if b[2] != VERSION {
        return Err(Error::Frame(format!("unsupported version {}", b[2])));
    }
    if b[3] == 0 {
        return Err(Error::Frame("dimension 0".into()));
    }
    if b[4] != 0 {
        return Err(Error::Frame(format!("unknown flags {:#04x}", b[4])));
    }
    Ok(Header {
        n: b[3] as usize,
        timestep: u32::from_le_bytes([b[5], b[6], b[7], b[8]]),
        count: u16::from_le_bytes([b[9], b[10]]) as usize,
    })
}

fn parse_entries(h: &Header, body: &[u8]) -> Result<ReducedEventSet> {
    let mut entries = Vec::with_capacity(h.count);
    for chunk in body.chunks_exact(ENTRY_LEN) {
        let (i, j) = (chunk[0] as usize, chunk[1] as usize);
        if i == 0 || j == 0 || i > h.n || j > h.n {
            return Err(Error::Frame(format!("index ({i}, {j}) out of range for n = {}", h.n)));
        }
        let value = f64::from_le_bytes(chunk[2..10].try_into().expect("8-byte slice"));
        entries.push(Event {
            i: i - 1,
            j: j - 1,
            value,
        });
    }
    ReducedEventSet::new(h.n, h.timestep, entries).map_err(|e| match e {
        Error::Frame(_) => e,
        other => Error::Frame(other.to_string()),
    })
}

/// Decodes exactly one frame; trailing bytes are an error.
pub fn decode(bytes: &[u8]) -> Result<ReducedEventSet> {
    let h = parse_header(bytes)?;
    let expected = frame_len(h.count);
    if bytes.len() != expected {
        return Err(Error::Frame(format!(
            "frame length {} does not match {} entries ({expected} bytes)",
            bytes.len(),
            h.count
        )));
    }
    parse_entries(&h, &bytes[HEADER_LEN..])
}

pub fn write_frame<W: Write>(w: &mut W, e: &ReducedEventSet) -> Result<usize> {
    let bytes = encode(e)?;
    w.write_all(&bytes)?;
    Ok(bytes.len())
}

/// Reads the next frame from a stream of concatenated frames; `None` at a clean end.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<ReducedEventSet>> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => return Err(Error::Frame(format!("truncated header: {filled} bytes"))),
            Ok(k) => filled += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let h = parse_header(&header)?;
    let mut body = vec![0u8; ENTRY_LEN * h.count];
    r.read_exact(&mut body).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => Error::Frame("truncated entries".into()),
        _ => e.into(),
    })?;
    parse_entries(&h, &body).map(Some)
}

/// Starting buffer shared by both ends.
#[derive(Clone, Debug, Default, PartialEq)]
pub enum InitialBuffer {
    #[default]
    Zero,
    Identity,
    Matrix(SymMatrix),
}

impl InitialBuffer {
    pub fn resolve(&self, n: usize) -> Result<SymMatrix> {
        match self {
            InitialBuffer::Zero => Ok(SymMatrix::zeros(n)),
            InitialBuffer::Identity => Ok(SymMatrix::identity(n)),
            InitialBuffer::Matrix(m) if m.n() == n => Ok(m.clone()),
            InitialBuffer::Matrix(m) => Err(Error::DimensionMismatch {
                expected: n,
                found: m.n(),
            }),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Transmitter {
    plan: TriggerPlan,
    buf: SymMatrix,
    k: u32,
}

impl Transmitter {
    pub fn new(plan: TriggerPlan, init: &InitialBuffer) -> Result<Self> {
        let buf = init.resolve(plan.n())?;
        Ok(Self { plan, buf, k: 0 })
    }

    /// Decides what to send for `p`, updates the buffer with it, and returns
    /// the reduced event-set stamped with the new timestep.
    pub fn step(&mut self, p: &SymMatrix) -> Result<ReducedEventSet> {
        let events = self.plan.decide(p, &self.buf)?.with_timestep(self.k + 1);
        events.apply(&mut self.buf)?;
        self.k += 1;
        Ok(events)
    }

    pub fn buffer(&self) -> &SymMatrix {
        &self.buf
    }

    pub fn timestep(&self) -> u32 {
        self.k
    }

    pub fn plan(&self) -> &TriggerPlan {
        &self.plan
    }
}

/// Output of one receiver step.
#[derive(Clone, Debug, PartialEq)]
pub struct Reception {
    /// Elementwise bounds on the buffer error.
    pub delta: SymMatrix,
    pub bound: BoundResult,
}

impl Reception {
    pub fn p_hat(&self) -> &SymMatrix {
        &self.bound.p_hat
    }
}

#[derive(Clone, Debug)]
pub struct Receiver {
    plan: TriggerPlan,
    buf: SymMatrix,
    buf_prev: SymMatrix,
    k: u32,
}

impl Receiver {
    pub fn new(plan: TriggerPlan, init: &InitialBuffer) -> Result<Self> {
        let buf = init.resolve(plan.n())?;
        Ok(Self {
            plan,
            buf_prev: buf.clone(),
            buf,
            k: 0,
        })
    }

    /// Checks ordering and folds the event-set into the buffer.
    pub fn receive(&mut self, frame: &ReducedEventSet) -> Result<EventSet> {
        if frame.timestep() != self.k.wrapping_add(1) {
            return Err(Error::OutOfOrder {
                expected: self.k.wrapping_add(1),
                got: frame.timestep(),
            });
        }
        if frame.n() != self.buf.n() {
            return Err(Error::DimensionMismatch {
                expected: self.buf.n(),
                found: frame.n(),
            });
        }
        self.buf_prev.clone_from(&self.buf);
        frame.apply(&mut self.buf)?;
        self.k += 1;
        Ok(frame.complete())
    }

    /// Receives a frame and returns the conservative bound on the
    /// transmitter's current matrix.
    ///
    /// The buffers stay updated even if bounding fails, so the channel
    /// remains synchronized with the transmitter.
    pub fn step(&mut self, frame: &ReducedEventSet) -> Result<Reception> {
        let events = self.receive(frame)?;
        let delta = self.plan.bounds(&self.buf, &self.buf_prev, &events)?;
        let bound = bounder::bound(&self.buf, &delta)?;
        Ok(Reception { delta, bound })
    }

    pub fn buffer(&self) -> &SymMatrix {
        &self.buf
    }

    pub fn previous_buffer(&self) -> &SymMatrix {
        &self.buf_prev
    }

    pub fn timestep(&self) -> u32 {
        self.k
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triggers::TriggerSpec;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> SymMatrix {
        SymMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn empty_frame_is_header_only() {
        let bytes = encode(&ReducedEventSet::empty(5, 7)).unwrap();
        assert_eq!(bytes.len(), 11);
        assert_eq!(&bytes[..2], &[0xBA, 0xC0]);
        assert_eq!(bytes[3], 5);
        assert_eq!(&bytes[5..9], &7u32.to_le_bytes());
        assert_eq!(decode(&bytes).unwrap(), ReducedEventSet::empty(5, 7));
    }

    #[test]
    fn decode_errors() {
        let e = ReducedEventSet::new(3, 1, vec![Event { i: 0, j: 2, value: 0.5 }]).unwrap();
        let good = encode(&e).unwrap();
        assert_eq!(good.len(), 21);

        let mut swapped = good.clone();
        swapped.swap(11, 12);
        assert!(matches!(decode(&swapped), Err(Error::Frame(_))));

        let mut magic = good.clone();
        magic[0] = 0;
        assert!(decode(&magic).is_err());

        assert!(decode(&good[..good.len() - 1]).is_err());
        assert!(decode(&good[..5]).is_err());
        let mut long = good.clone();
        long.push(0);
        assert!(decode(&long).is_err());

        let mut dup = good.clone();
        dup[9] = 2;
        dup.extend_from_slice(&good[11..]);
        assert!(matches!(decode(&dup), Err(Error::Frame(_))));

        let mut zero_index = good.clone();
        zero_index[11] = 0;
        assert!(decode(&zero_index).is_err());
    }

    #[test]
    fn stream_of_frames() {
        let frames = [
            ReducedEventSet::empty(2, 1),
            ReducedEventSet::new(2, 2, vec![Event { i: 1, j: 1, value: -3.25 }]).unwrap(),
        ];
        let mut bytes = Vec::new();
        for f in &frames {
            write_frame(&mut bytes, f).unwrap();
        }
        let mut cursor = io::Cursor::new(bytes.clone());
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), frames[0]);
        assert_eq!(read_frame(&mut cursor).unwrap().unwrap(), frames[1]);
        assert!(read_frame(&mut cursor).unwrap().is_none());
        let mut cut = io::Cursor::new(&bytes[..bytes.len() - 3]);
        read_frame(&mut cut).unwrap();
        assert!(read_frame(&mut cut).is_err());
    }

    #[test]
    fn transmitter_sends_nothing_when_unchanged() {
        let plan = TriggerPlan::new(&TriggerSpec::absolute(1e-9), 2).unwrap();
        let init = InitialBuffer::Matrix(m(&[&[1.0, 0.1], &[0.1, 2.0]]));
        let mut tx = Transmitter::new(plan, &init).unwrap();
        let e = tx.step(&m(&[&[1.0, 0.1], &[0.1, 2.0]])).unwrap();
        assert!(e.is_empty());
        assert_eq!(e.timestep(), 1);
        assert_eq!(tx.buffer(), &m(&[&[1.0, 0.1], &[0.1, 2.0]]));
    }

    #[test]
    fn always_send_copies_matrix() {
        let plan = TriggerPlan::new(&TriggerSpec::AlwaysSend, 3).unwrap();
        let mut tx = Transmitter::new(plan.clone(), &InitialBuffer::Zero).unwrap();
        let mut rx = Receiver::new(plan, &InitialBuffer::Zero).unwrap();
        let p = m(&[&[2.0, 0.3, 0.1], &[0.3, 1.0, 0.0], &[0.1, 0.0, 0.5]]);
        let e = tx.step(&p).unwrap();
        assert_eq!(e.len(), 6);
        assert_eq!(tx.buffer(), &p);
        let out = rx.step(&decode(&encode(&e).unwrap()).unwrap()).unwrap();
        assert_eq!(out.p_hat(), &p);
    }

    #[test]
    fn zero_change_under_relative_trigger_leaves_buffer() {
        let plan = TriggerPlan::new(&TriggerSpec::relative(0.1), 2).unwrap();
        let mut rx = Receiver::new(plan, &InitialBuffer::Zero).unwrap();
        let out = rx.step(&ReducedEventSet::empty(2, 1)).unwrap();
        assert_eq!(out.p_hat(), &SymMatrix::zeros(2));
    }

    #[test]
    fn receiver_rejects_out_of_order() {
        let plan = TriggerPlan::new(&TriggerSpec::absolute(0.1), 2).unwrap();
        let mut rx = Receiver::new(plan, &InitialBuffer::Identity).unwrap();
        assert!(matches!(
            rx.step(&ReducedEventSet::empty(2, 2)),
            Err(Error::OutOfOrder { expected: 1, got: 2 })
        ));
        rx.step(&ReducedEventSet::empty(2, 1)).unwrap();
        assert!(rx.step(&ReducedEventSet::empty(2, 1)).is_err());
        assert!(rx.step(&ReducedEventSet::empty(3, 2)).is_err());
    }

    #[test]
    fn initial_buffer_dimension_is_checked() {
        let plan = TriggerPlan::new(&TriggerSpec::AlwaysSend, 2).unwrap();
        let bad = InitialBuffer::Matrix(SymMatrix::zeros(3));
        assert!(Transmitter::new(plan.clone(), &bad).is_err());
        assert!(Receiver::new(plan, &bad).is_err());
    }

    fn arb_frame() -> impl Strategy<Value = ReducedEventSet> {
        (1usize..=12, any::<u32>()).prop_flat_map(|(n, k)| {
            let upper = n * (n + 1) / 2;
            (
                proptest::collection::vec(any::<bool>(), upper),
                proptest::collection::vec(-1e12f64..1e12, upper),
            )
                .prop_map(move |(mask, vals)| {
                    let pairs = (0..n).flat_map(|i| (i..n).map(move |j| (i, j)));
                    let entries = pairs
                        .zip(mask.iter().zip(&vals))
                        .filter(|(_, (keep, _))| **keep)
                        .map(|((i, j), (_, &value))| Event { i, j, value })
                        .collect();
                    ReducedEventSet::new(n, k, entries).unwrap()
                })
        })
    }

    proptest! {
        #[test]
        fn frame_round_trip(frame in arb_frame()) {
            let bytes = encode(&frame).unwrap();
            prop_assert_eq!(bytes.len(), frame_len(frame.len()));
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(encode(&back).unwrap(), bytes);
            prop_assert_eq!(back, frame);
        }
    }
}
