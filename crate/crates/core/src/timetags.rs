//! Photon detection events and the `PTT1` on-disk format.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! header (32 bytes)
//!   0..4   magic "PTT1"
//!   4..6   format version (u16) = 1
//!   6..8   channel count (u16) = 2
//!   8..16  acquisition duration in ps (u64)
//!   16..24 record count (u64)
//!   24..32 reserved, zero
//! records (9 bytes each)
//!   0..8   timestamp in ps (u64)
//!   8      channel (u8)
//! ```

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::PS_PER_S;

pub const MAGIC: &[u8; 4] = b"PTT1";
pub const FORMAT_VERSION: u16 = 1;
pub const CHANNEL_COUNT: u16 = 2;
pub const HEADER_LEN: usize = 32;
pub const RECORD_LEN: usize = 9;

#[derive(Debug, Error)]
pub enum TagError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic bytes {0:?}, expected \"PTT1\"")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u16),
    #[error("unsupported channel count {0}")]
    UnsupportedChannels(u16),
    #[error("file truncated at byte offset {offset}: expected {expected} bytes")]
    Truncated { offset: u64, expected: u64 },
    #[error("timestamps not monotone at record {index}: {time} ps after {previous} ps")]
    NonMonotone { index: u64, previous: u64, time: u64 },
    #[error("channel {channel} out of range at record {index}")]
    BadChannel { index: u64, channel: u8 },
    #[error("timestamp {time} ps at record {index} exceeds duration {duration} ps")]
    BeyondDuration { index: u64, time: u64, duration: u64 },
    #[error("acquisition duration must be positive")]
    ZeroDuration,
}

/// One detection: integer picoseconds since acquisition start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TimeTag {
    pub time: u64,
    pub channel: u8,
}

/// Provenance carried alongside a stream; not part of the binary format.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamMeta {
    pub seed: Option<u64>,
    pub config_digest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimeTagStream {
    tags: Vec<TimeTag>,
    duration_ps: u64,
    pub meta: StreamMeta,
}

impl TimeTagStream {
    /// Validates ordering, channel range and duration bound.
    pub fn new(tags: Vec<TimeTag>, duration_ps: u64) -> Result<Self, TagError> {
        validate(&tags, duration_ps)?;
        Ok(Self {
            tags,
            duration_ps,
            meta: StreamMeta::default(),
        })
    }

    pub fn empty(duration_ps: u64) -> Self {
        Self {
            tags: Vec::new(),
            duration_ps,
            meta: StreamMeta::default(),
        }
    }

    /// Single-channel stream from sorted timestamps.
    pub fn from_times(times: Vec<u64>, channel: u8, duration_ps: u64) -> Result<Self, TagError> {
        let tags = times.into_iter().map(|time| TimeTag { time, channel }).collect();
        Self::new(tags, duration_ps)
    }

    pub fn with_meta(mut self, meta: StreamMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn tags(&self) -> &[TimeTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn duration_ps(&self) -> u64 {
        self.duration_ps
    }

    pub fn duration_s(&self) -> f64 {
        self.duration_ps as f64 / PS_PER_S
    }

    /// Timestamps of one channel, in order.
    pub fn channel_times(&self, channel: u8) -> Vec<u64> {
        self.tags
            .iter()
            .filter(|t| t.channel == channel)
            .map(|t| t.time)
            .collect()
    }

    /// Timestamps of every tag regardless of channel.
    pub fn times(&self) -> Vec<u64> {
        self.tags.iter().map(|t| t.time).collect()
    }

    /// Time-ordered union of two streams; ties keep `self` first.
    pub fn merge(&self, other: &TimeTagStream) -> TimeTagStream {
        let mut out = Vec::with_capacity(self.len() + other.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.tags, &other.tags);
        while i < a.len() && j < b.len() {
            if b[j].time < a[i].time {
                out.push(b[j]);
                j += 1;
            } else {
                out.push(a[i]);
                i += 1;
            }
        }
        out.extend_from_slice(&a[i..]);
        out.extend_from_slice(&b[j..]);
        TimeTagStream {
            tags: out,
            duration_ps: self.duration_ps.max(other.duration_ps),
            meta: StreamMeta::default(),
        }
    }

    pub fn into_tags(self) -> Vec<TimeTag> {
        self.tags
    }
}

fn validate(tags: &[TimeTag], duration_ps: u64) -> Result<(), TagError> {
    let mut previous = 0u64;
    for (index, tag) in tags.iter().enumerate() {
        let index = index as u64;
        if tag.channel as u16 >= CHANNEL_COUNT {
            return Err(TagError::BadChannel {
                index,
                channel: tag.channel,
            });
        }
        if tag.time < previous {
            return Err(TagError::NonMonotone {
                index,
                previous,
                time: tag.time,
            });
        }
        if tag.time > duration_ps {
            return Err(TagError::BeyondDuration {
                index,
                time: tag.time,
                duration: duration_ps,
            });
        }
        previous = tag.time;
    }
    Ok(())
}

pub fn write_stream<W: Write>(stream: &TimeTagStream, mut dest: W) -> Result<(), TagError> {
    validate(&stream.tags, stream.duration_ps)?;
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4..6].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    header[6..8].copy_from_slice(&CHANNEL_COUNT.to_le_bytes());
    header[8..16].copy_from_slice(&stream.duration_ps.to_le_bytes());
    header[16..24].copy_from_slice(&(stream.tags.len() as u64).to_le_bytes());
    dest.write_all(&header)?;

    let mut buf = Vec::with_capacity(RECORD_LEN * 4096);
    for chunk in stream.tags.chunks(4096) {
        buf.clear();
        for tag in chunk {
            buf.extend_from_slice(&tag.time.to_le_bytes());
            buf.push(tag.channel);
        }
        dest.write_all(&buf)?;
    }
    dest.flush()?;
    Ok(())
}

/// Fill `buf` completely or report how many bytes were available.
fn read_full<R: Read>(src: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match src.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn read_stream<R: Read>(mut src: R) -> Result<TimeTagStream, TagError> {
    let mut header = [0u8; HEADER_LEN];
    let got = read_full(&mut src, &mut header)?;
    if got >= 4 && &header[0..4] != MAGIC {
        let mut magic = [0u8; 4];
        magic.copy_from_slice(&header[0..4]);
        return Err(TagError::BadMagic(magic));
    }
    if got < HEADER_LEN {
        return Err(TagError::Truncated {
            offset: got as u64,
            expected: HEADER_LEN as u64,
        });
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION {
        return Err(TagError::UnsupportedVersion(version));
    }
    let channels = u16::from_le_bytes([header[6], header[7]]);
    if channels != CHANNEL_COUNT {
        return Err(TagError::UnsupportedChannels(channels));
    }
    let duration_ps = u64::from_le_bytes(header[8..16].try_into().unwrap());
    let count = u64::from_le_bytes(header[16..24].try_into().unwrap());

    let mut tags = Vec::with_capacity(count.min(1 << 24) as usize);
    let mut buf = vec![0u8; RECORD_LEN * 4096];
    let mut remaining = count;
    let mut offset = HEADER_LEN as u64;
    let mut previous = 0u64;
    while remaining > 0 {
        let n = remaining.min(4096) as usize;
        let want = n * RECORD_LEN;
        let got = read_full(&mut src, &mut buf[..want])?;
        if got < want {
            return Err(TagError::Truncated {
                offset: offset + got as u64,
                expected: HEADER_LEN as u64 + count * RECORD_LEN as u64,
            });
        }
        for rec in buf[..want].chunks_exact(RECORD_LEN) {
            let index = tags.len() as u64;
            let time = u64::from_le_bytes(rec[0..8].try_into().unwrap());
            let channel = rec[8];
            if time < previous {
                return Err(TagError::NonMonotone {
                    index,
                    previous,
                    time,
                });
            }
            if channel as u16 >= CHANNEL_COUNT {
                return Err(TagError::BadChannel { index, channel });
            }
            if time > duration_ps {
                return Err(TagError::BeyondDuration {
                    index,
                    time,
                    duration: duration_ps,
                });
            }
            previous = time;
            tags.push(TimeTag { time, channel });
        }
        offset += want as u64;
        remaining -= n as u64;
    }
    Ok(TimeTagStream {
        tags,
        duration_ps,
        meta: StreamMeta::default(),
    })
}

/// Per-channel count rates (counts/s) for channels 0 and 1.
pub fn count_rates(stream: &TimeTagStream) -> Result<(f64, f64), TagError> {
    if stream.duration_ps == 0 {
        return Err(TagError::ZeroDuration);
    }
    let mut counts = [0u64; 2];
    for tag in &stream.tags {
        counts[tag.channel as usize] += 1;
    }
    let t = stream.duration_s();
    Ok((counts[0] as f64 / t, counts[1] as f64 / t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn encode(stream: &TimeTagStream) -> Vec<u8> {
        let mut out = Vec::new();
        write_stream(stream, &mut out).unwrap();
        out
    }

    #[test]
    fn empty_stream_is_header_only() {
        let bytes = encode(&TimeTagStream::empty(1_000));
        assert_eq!(bytes.len(), HEADER_LEN);
        assert_eq!(&bytes[0..4], b"PTT1");
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 0);
        assert_eq!(read_stream(&bytes[..]).unwrap(), TimeTagStream::empty(1_000));
    }

    #[test]
    fn single_record_layout() {
        let s = TimeTagStream::new(vec![TimeTag { time: 0, channel: 0 }], 10).unwrap();
        let bytes = encode(&s);
        assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN);
        assert_eq!(&bytes[HEADER_LEN..], &[0u8; 9]);
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u16::from_le_bytes([bytes[6], bytes[7]]), 2);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 10);
        assert_eq!(&bytes[24..32], &[0u8; 8]);
    }

    #[test]
    fn corrupted_magic() {
        let mut bytes = encode(&TimeTagStream::empty(5));
        bytes[0] = b'X';
        assert!(matches!(read_stream(&bytes[..]), Err(TagError::BadMagic(_))));
    }

    #[test]
    fn truncated_record_reports_offset() {
        let s = TimeTagStream::new(
            vec![TimeTag { time: 1, channel: 0 }, TimeTag { time: 2, channel: 1 }],
            10,
        )
        .unwrap();
        let bytes = encode(&s);
        let cut = &bytes[..bytes.len() - 3];
        match read_stream(cut) {
            Err(TagError::Truncated { offset, expected }) => {
                assert_eq!(offset, (HEADER_LEN + RECORD_LEN + 6) as u64);
                assert_eq!(expected, (HEADER_LEN + 2 * RECORD_LEN) as u64);
            }
            other => panic!("expected truncation, got {other:?}"),
        }
    }

    #[test]
    fn non_monotone_file_rejected() {
        let s = TimeTagStream::new(
            vec![TimeTag { time: 1, channel: 0 }, TimeTag { time: 5, channel: 1 }],
            10,
        )
        .unwrap();
        let mut bytes = encode(&s);
        bytes[HEADER_LEN + RECORD_LEN..HEADER_LEN + RECORD_LEN + 8].copy_from_slice(&0u64.to_le_bytes());
        assert!(matches!(
            read_stream(&bytes[..]),
            Err(TagError::NonMonotone { index: 1, .. })
        ));
    }

    #[test]
    fn unsorted_input_rejected_on_write() {
        let s = TimeTagStream {
            tags: vec![TimeTag { time: 5, channel: 0 }, TimeTag { time: 1, channel: 0 }],
            duration_ps: 10,
            meta: StreamMeta::default(),
        };
        assert!(matches!(
            write_stream(&s, Vec::new()),
            Err(TagError::NonMonotone { .. })
        ));
        assert!(TimeTagStream::new(s.tags.clone(), 10).is_err());
    }

    #[test]
    fn count_rates_examples() {
        assert_eq!(count_rates(&TimeTagStream::empty(PS_PER_S as u64)).unwrap(), (0.0, 0.0));
        let times: Vec<u64> = (0..37_000u64).map(|i| i * 27_000_000).collect();
        let s = TimeTagStream::from_times(times, 0, PS_PER_S as u64).unwrap();
        assert_eq!(count_rates(&s).unwrap(), (37_000.0, 0.0));
        assert!(matches!(count_rates(&TimeTagStream::empty(0)), Err(TagError::ZeroDuration)));
    }

    #[test]
    fn merge_keeps_order() {
        let a = TimeTagStream::from_times(vec![1, 4, 9], 0, 10).unwrap();
        let b = TimeTagStream::from_times(vec![2, 4, 10], 1, 10).unwrap();
        let m = a.merge(&b);
        assert_eq!(m.times(), vec![1, 2, 4, 4, 9, 10]);
        assert_eq!(m.channel_times(1), vec![2, 4, 10]);
    }

    fn arb_stream() -> impl Strategy<Value = TimeTagStream> {
        prop::collection::vec((0u64..1_000_000_000_000, 0u8..2), 0..2000).prop_map(|mut raw| {
            raw.sort();
            let duration = raw.last().map_or(1, |t| t.0 + 1);
            let tags = raw.into_iter().map(|(time, channel)| TimeTag { time, channel }).collect();
            TimeTagStream::new(tags, duration).unwrap()
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_identity(stream in arb_stream()) {
            let bytes = encode(&stream);
            prop_assert_eq!(bytes.len(), HEADER_LEN + RECORD_LEN * stream.len());
            let back = read_stream(&bytes[..]).unwrap();
            prop_assert_eq!(encode(&back), bytes);
            prop_assert_eq!(back, stream);
        }

        #[test]
        fn merge_preserves_global_order(a in arb_stream(), b in arb_stream()) {
            let m = a.merge(&b);
            prop_assert_eq!(m.len(), a.len() + b.len());
            prop_assert!(m.tags().windows(2).all(|w| w[0].time <= w[1].time));
        }
    }
}
