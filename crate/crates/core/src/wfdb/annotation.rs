use serde::{Deserialize, Serialize};

use super::{ParseWarning, WfdbError};

const SKIP: u8 = 59;
const NUM: u8 = 60;
const SUB: u8 = 61;
const CHN: u8 = 62;
const AUX: u8 = 63;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationEvent {
    pub sample: usize,
    /// 6-bit annotation type code.
    pub code: u8,
    #[serde(default)]
    pub sub: u8,
    #[serde(default)]
    pub chan: u8,
    #[serde(default)]
    pub num: u8,
    #[serde(default)]
    pub aux: Option<Vec<u8>>,
}

impl AnnotationEvent {
    pub fn new(sample: usize, code: u8) -> Self {
        Self {
            sample,
            code,
            sub: 0,
            chan: 0,
            num: 0,
            aux: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnnotationStream {
    pub events: Vec<AnnotationEvent>,
    pub warnings: Vec<ParseWarning>,
}

/// Decodes an MIT-format annotation stream.
///
/// Each 16-bit little-endian word carries a 6-bit code (top bits) and a
/// 10-bit field (low bits). For ordinary codes the field is a time increment
/// added to a running sample counter. `SKIP` (59) is followed by a 4-byte
/// signed interval (high word first) added to the counter. `NUM`, `SUB`,
/// `CHN` and `AUX` (60-63) modify the preceding annotation without advancing
/// time; `AUX` is followed by a byte payload padded to even length. A zero
/// word terminates the stream.
///
/// Annotations whose time lands outside `[0, n_samples)` (when `n_samples`
/// is known) are dropped and reported as warnings.
pub fn parse_annotations(
    bytes: &[u8],
    n_samples: Option<usize>,
) -> Result<AnnotationStream, WfdbError> {
    if bytes.len() % 2 != 0 {
        return Err(WfdbError::TruncatedStream {
            needed: bytes.len() + 1,
            found: bytes.len(),
        });
    }
    let mut out = AnnotationStream::default();
    let mut time: i64 = 0;
    let mut num: u8 = 0;
    let mut chan: u8 = 0;
    // whether the last emitted annotation was kept (pseudo codes attach to it)
    let mut last_kept = false;
    let mut pos = 0;

    while pos + 2 <= bytes.len() {
        let word = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]);
        pos += 2;
        if word == 0 {
            break;
        }
        let code = (word >> 10) as u8;
        let field = word & 0x03FF;
        match code {
            SKIP => {
                let needed = pos + 4;
                if bytes.len() < needed {
                    return Err(WfdbError::TruncatedStream {
                        needed,
                        found: bytes.len(),
                    });
                }
                let hi = u16::from_le_bytes([bytes[pos], bytes[pos + 1]]) as u32;
                let lo = u16::from_le_bytes([bytes[pos + 2], bytes[pos + 3]]) as u32;
                pos += 4;
                time += i64::from(((hi << 16) | lo) as i32);
            }
            NUM => {
                num = field as u8;
                if last_kept {
                    out.events.last_mut().expect("kept event").num = num;
                }
            }
            SUB => {
                if last_kept {
                    out.events.last_mut().expect("kept event").sub = field as u8;
                }
            }
            CHN => {
                chan = field as u8;
                if last_kept {
                    out.events.last_mut().expect("kept event").chan = chan;
                }
            }
            AUX => {
                let len = field as usize;
                let padded = len + (len % 2);
                let needed = pos + padded;
                if bytes.len() < needed {
                    return Err(WfdbError::TruncatedStream {
                        needed,
                        found: bytes.len(),
                    });
                }
                if last_kept {
                    out.events.last_mut().expect("kept event").aux =
                        Some(bytes[pos..pos + len].to_vec());
                }
                pos = needed;
            }
            _ => {
                time += i64::from(field);
                let in_range = time >= 0 && n_samples.map_or(true, |n| time < n as i64);
                if in_range {
                    out.events.push(AnnotationEvent {
                        sample: time as usize,
                        code,
                        sub: 0,
                        chan,
                        num,
                        aux: None,
                    });
                } else {
                    out.warnings
                        .push(ParseWarning::OutOfRangeAnnotation { sample: time, code });
                }
                last_kept = in_range;
            }
        }
    }
    Ok(out)
}

/// Writes events in MIT format (inverse of [`parse_annotations`] for events
/// with nondecreasing samples), including the terminating zero word.
pub fn encode_annotations(events: &[AnnotationEvent]) -> Vec<u8> {
    let mut out = Vec::new();
    let push = |out: &mut Vec<u8>, code: u8, field: u16| {
        out.extend_from_slice(&((u16::from(code) << 10) | (field & 0x03FF)).to_le_bytes());
    };
    let mut time = 0usize;
    let mut num = 0u8;
    let mut chan = 0u8;
    for e in events {
        let mut delta = e.sample - time;
        if delta > 0x03FF {
            push(&mut out, SKIP, 0);
            let d = delta as u32;
            out.extend_from_slice(&((d >> 16) as u16).to_le_bytes());
            out.extend_from_slice(&((d & 0xFFFF) as u16).to_le_bytes());
            delta = 0;
        }
        push(&mut out, e.code, delta as u16);
        time = e.sample;
        if e.num != num {
            push(&mut out, NUM, u16::from(e.num));
            num = e.num;
        }
        if e.sub != 0 {
            push(&mut out, SUB, u16::from(e.sub));
        }
        if e.chan != chan {
            push(&mut out, CHN, u16::from(e.chan));
            chan = e.chan;
        }
        if let Some(aux) = &e.aux {
            push(&mut out, AUX, aux.len() as u16);
            out.extend_from_slice(aux);
            if aux.len() % 2 == 1 {
                out.push(0);
            }
        }
    }
    out.extend_from_slice(&[0, 0]);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_word_event() {
        let word: u16 = (1 << 10) | 300;
        assert_eq!(word.to_le_bytes(), [0x2C, 0x05]);
        let s = parse_annotations(&[0x2C, 0x05], None).unwrap();
        assert_eq!(s.events, vec![AnnotationEvent::new(300, 1)]);
    }

    #[test]
    fn terminator_yields_empty_stream() {
        let s = parse_annotations(&[0x00, 0x00, 0x2C, 0x05], None).unwrap();
        assert!(s.events.is_empty());
    }

    #[test]
    fn odd_length_is_truncated() {
        assert!(matches!(
            parse_annotations(&[0x2C, 0x05, 0x00], None),
            Err(WfdbError::TruncatedStream { .. })
        ));
    }

    #[test]
    fn skip_num_chn_aux_are_decoded() {
        let mut b = Vec::new();
        let w = |code: u16, f: u16| ((code << 10) | f).to_le_bytes();
        b.extend(w(1, 5)); // N at 5
        b.extend(w(59, 0)); // SKIP 70000
        b.extend(70000u32.to_be_bytes().chunks(2).flat_map(|c| [c[1], c[0]]));
        b.extend(w(24, 10)); // p at 70015
        b.extend(w(60, 3)); // NUM 3 (persists)
        b.extend(w(62, 1)); // CHN 1
        b.extend(w(63, 3)); // AUX "abc" + pad
        b.extend(b"abc\0");
        b.extend(w(27, 1)); // t at 70016
        b.extend([0, 0]);
        let s = parse_annotations(&b, None).unwrap();
        assert_eq!(s.events.len(), 3);
        assert_eq!((s.events[0].sample, s.events[0].code), (5, 1));
        assert_eq!((s.events[1].sample, s.events[1].code), (70015, 24));
        assert_eq!(s.events[1].num, 3);
        assert_eq!(s.events[1].chan, 1);
        assert_eq!(s.events[1].aux.as_deref(), Some(&b"abc"[..]));
        assert_eq!(
            (s.events[2].sample, s.events[2].num, s.events[2].chan),
            (70016, 3, 1)
        );
    }

    #[test]
    fn out_of_range_annotations_become_warnings() {
        let mut b = Vec::new();
        b.extend(((1u16 << 10) | 50).to_le_bytes());
        b.extend(((1u16 << 10) | 100).to_le_bytes());
        let s = parse_annotations(&b, Some(100)).unwrap();
        assert_eq!(s.events, vec![AnnotationEvent::new(50, 1)]);
        assert_eq!(
            s.warnings,
            vec![ParseWarning::OutOfRangeAnnotation {
                sample: 150,
                code: 1
            }]
        );
    }

    #[test]
    fn truncated_skip_payload() {
        let b = [0x00, 0xEC, 0x01, 0x00];
        assert!(matches!(
            parse_annotations(&b, None),
            Err(WfdbError::TruncatedStream { .. })
        ));
    }

    fn arb_events() -> impl Strategy<Value = Vec<AnnotationEvent>> {
        prop::collection::vec((0usize..3000, 1u8..59, 0u8..4), 0..40).prop_map(|raw| {
            let mut t = 0;
            raw.into_iter()
                .map(|(d, code, num)| {
                    t += d;
                    AnnotationEvent {
                        num,
                        ..AnnotationEvent::new(t, code)
                    }
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn encode_parse_round_trip(events in arb_events()) {
            let parsed = parse_annotations(&encode_annotations(&events), None).unwrap();
            prop_assert_eq!(parsed.events, events);
        }

        #[test]
        fn parsing_is_prefix_monotone(events in arb_events(), cut in 0usize..400) {
            let bytes = encode_annotations(&events);
            let full = parse_annotations(&bytes, None).unwrap().events;
            let cut = (cut * 2).min(bytes.len());
            if let Ok(prefix) = parse_annotations(&bytes[..cut], None) {
                prop_assert!(prefix.events.len() <= full.len());
                for (a, b) in prefix.events.iter().zip(&full) {
                    prop_assert_eq!((a.sample, a.code), (b.sample, b.code));
                }
            }
        }
    }
}
