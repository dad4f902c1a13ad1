//! Event-camera samples and time-ordered streams.

use std::cmp::Ordering;

use crate::error::{argument, validation, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn from_i8(p: i8) -> Result<Self> {
        match p {
            1 => Ok(Polarity::Positive),
            -1 => Ok(Polarity::Negative),
            other => Err(validation(format!(
                "polarity must be +1 or -1, got {other}"
            ))),
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }
}

/// A single brightness-change event. Timestamps are integer microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: i64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: i64, p: Polarity) -> Self {
        Event { x, y, t, p }
    }

    /// Canonical order: time, then row, column, polarity.
    pub fn canonical_cmp(&self, other: &Self) -> Ordering {
        (self.t, self.y, self.x, self.p).cmp(&(other.t, other.y, other.x, other.p))
    }
}

/// Events from one sensor, canonically ordered and within bounds.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: usize,
    height: usize,
    events: Vec<Event>,
}

impl EventStream {
    pub fn empty(width: usize, height: usize) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    /// Validates bounds and sorts into canonical order. Never drops events.
    pub fn new(width: usize, height: usize, mut events: Vec<Event>) -> Result<Self> {
        check_dims(width, height)?;
        if let Some(e) = events
            .iter()
            .find(|e| e.x as usize >= width || e.y as usize >= height)
        {
            return Err(validation(format!(
                "event at ({}, {}) t={} outside {}x{} sensor",
                e.x, e.y, e.t, width, height
            )));
        }
        if !is_canonical(&events) {
            events.sort_unstable_by(Event::canonical_cmp);
        }
        Ok(EventStream {
            width,
            height,
            events,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn into_events(self) -> Vec<Event> {
        self.events
    }

    /// First and last timestamps, if any.
    pub fn time_range(&self) -> Option<(i64, i64)> {
        Some((self.events.first()?.t, self.events.last()?.t))
    }

    /// Index range of events with `t0 <= t < t1`.
    pub fn index_range(&self, t0: i64, t1: i64) -> std::ops::Range<usize> {
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t < t1);
        lo..hi.max(lo)
    }

    /// Events in the half-open window `[t0, t1)`, order preserved.
    pub fn slice(&self, t0: i64, t1: i64) -> Result<EventStream> {
        if t0 > t1 {
            return Err(argument(format!(
                "slice window reversed: t0={t0} > t1={t1}"
            )));
        }
        Ok(EventStream {
            width: self.width,
            height: self.height,
            events: self.events[self.index_range(t0, t1)].to_vec(),
        })
    }

    /// Per-pixel event lists in time order, stored as offsets into one buffer.
    pub fn by_pixel(&self) -> PixelEvents {
        let n = self.width * self.height;
        let mut counts = vec![0usize; n + 1];
        for e in &self.events {
            counts[e.y as usize * self.width + e.x as usize + 1] += 1;
        }
        for i in 0..n {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut slots = vec![(0i64, Polarity::Positive); self.events.len()];
        for e in &self.events {
            let idx = e.y as usize * self.width + e.x as usize;
            slots[cursor[idx]] = (e.t, e.p);
            cursor[idx] += 1;
        }
        PixelEvents {
            width: self.width,
            height: self.height,
            offsets,
            events: slots,
        }
    }
}

/// Events grouped by pixel (row-major), each group in time order.
#[derive(Debug, Clone)]
pub struct PixelEvents {
    pub width: usize,
    pub height: usize,
    offsets: Vec<usize>,
    events: Vec<(i64, Polarity)>,
}

impl PixelEvents {
    pub fn pixel(&self, idx: usize) -> &[(i64, Polarity)] {
        &self.events[self.offsets[idx]..self.offsets[idx + 1]]
    }

    pub fn row(&self, y: usize) -> impl Iterator<Item = &[(i64, Polarity)]> + '_ {
        (y * self.width..(y + 1) * self.width).map(move |i| self.pixel(i))
    }
}

fn is_canonical(events: &[Event]) -> bool {
    events
        .windows(2)
        .all(|w| w[0].canonical_cmp(&w[1]) != Ordering::Greater)
}

pub(crate) fn check_dims(width: usize, height: usize) -> Result<()> {
    if width == 0 || height == 0 || width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(validation(format!(
            "sensor dimensions {width}x{height} outside 1..=65535"
        )));
    }
    Ok(())
}
