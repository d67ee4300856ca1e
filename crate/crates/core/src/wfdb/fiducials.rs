use serde::{Deserialize, Serialize};

use super::{
    AnnotationEvent, FiducialSet, LabelQuality, ParseWarning, Wave, WaveFiducial, WfdbError,
};

/// Maps annotation codes to fiducial roles.
///
/// The defaults follow the usual PhysioNet code assignments: `p` = 24,
/// `t` = 27, `(` = 39, `)` = 40 and the beat codes for QRS peaks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaveCodeTable {
    pub p_peak: Vec<u8>,
    pub qrs_peak: Vec<u8>,
    pub t_peak: Vec<u8>,
    pub onset: Vec<u8>,
    pub offset: Vec<u8>,
}

impl Default for WaveCodeTable {
    fn default() -> Self {
        Self {
            p_peak: vec![24],
            qrs_peak: vec![
                1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 25, 30, 34, 35, 38, 41,
            ],
            t_peak: vec![27],
            onset: vec![39],
            offset: vec![40],
        }
    }
}

enum Role {
    Peak(Wave),
    Onset,
    Offset,
}

impl WaveCodeTable {
    fn role(&self, code: u8) -> Option<Role> {
        if self.onset.contains(&code) {
            Some(Role::Onset)
        } else if self.offset.contains(&code) {
            Some(Role::Offset)
        } else if self.p_peak.contains(&code) {
            Some(Role::Peak(Wave::P))
        } else if self.qrs_peak.contains(&code) {
            Some(Role::Peak(Wave::Qrs))
        } else if self.t_peak.contains(&code) {
            Some(Role::Peak(Wave::T))
        } else {
            None
        }
    }
}

/// Groups boundary markers around the peak they enclose. Fails on the first
/// boundary that cannot be attached to a wave.
pub fn events_to_fiducials(
    events: &[AnnotationEvent],
    table: &WaveCodeTable,
    quality: LabelQuality,
    lead: Option<usize>,
) -> Result<FiducialSet, WfdbError> {
    let (set, warnings) = events_to_fiducials_lenient(events, table, quality, lead);
    match warnings.into_iter().next() {
        Some(ParseWarning::OrphanBoundary { sample }) => Err(WfdbError::OrphanBoundary { sample }),
        Some(other) => Err(WfdbError::InvalidFiducials(other.to_string())),
        None => Ok(set),
    }
}

/// Like [`events_to_fiducials`], but orphan boundaries are dropped and
/// reported instead of aborting.
pub fn events_to_fiducials_lenient(
    events: &[AnnotationEvent],
    table: &WaveCodeTable,
    quality: LabelQuality,
    lead: Option<usize>,
) -> (FiducialSet, Vec<ParseWarning>) {
    let mut set = FiducialSet::new(quality, lead);
    let mut warnings = Vec::new();
    let mut onset: Option<usize> = None;
    let mut open: Option<(Wave, WaveFiducial)> = None;

    let mut sorted: Vec<&AnnotationEvent> = events.iter().collect();
    sorted.sort_by_key(|e| e.sample);

    for ev in sorted {
        let Some(role) = table.role(ev.code) else {
            continue;
        };
        match role {
            Role::Onset => {
                if let Some(prev) = onset.replace(ev.sample) {
                    warnings.push(ParseWarning::OrphanBoundary { sample: prev });
                }
                if let Some((wave, w)) = open.take() {
                    set.wave_mut(wave).push(w);
                }
            }
            Role::Peak(wave) => {
                if let Some((w0, w)) = open.take() {
                    set.wave_mut(w0).push(w);
                }
                open = Some((
                    wave,
                    WaveFiducial {
                        onset: onset.take(),
                        peak: Some(ev.sample),
                        offset: None,
                    },
                ));
            }
            Role::Offset => match open.take() {
                Some((wave, mut w)) => {
                    w.offset = Some(ev.sample);
                    set.wave_mut(wave).push(w);
                }
                None => {
                    if let Some(prev) = onset.take() {
                        warnings.push(ParseWarning::OrphanBoundary { sample: prev });
                    }
                    warnings.push(ParseWarning::OrphanBoundary { sample: ev.sample });
                }
            },
        }
    }
    if let Some((wave, w)) = open {
        set.wave_mut(wave).push(w);
    }
    if let Some(prev) = onset {
        warnings.push(ParseWarning::OrphanBoundary { sample: prev });
    }
    set.sort();
    (set, warnings)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ev(sample: usize, symbol: char) -> AnnotationEvent {
        let code = match symbol {
            '(' => 39,
            ')' => 40,
            'p' => 24,
            't' => 27,
            'N' => 1,
            'V' => 5,
            _ => 0,
        };
        AnnotationEvent::new(sample, code)
    }

    fn parse(events: &[AnnotationEvent]) -> Result<FiducialSet, WfdbError> {
        events_to_fiducials(events, &WaveCodeTable::default(), LabelQuality::High, None)
    }

    #[test]
    fn direct_mapping() {
        let set = parse(&[
            ev(100, '('),
            ev(110, 'p'),
            ev(120, ')'),
            ev(150, '('),
            ev(160, 'N'),
            ev(180, ')'),
        ])
        .unwrap();
        assert_eq!(set.wave(Wave::P), &[WaveFiducial::complete(100, 110, 120)]);
        assert_eq!(
            set.wave(Wave::Qrs),
            &[WaveFiducial::complete(150, 160, 180)]
        );
        assert!(set.wave(Wave::T).is_empty());
    }

    #[test]
    fn double_onset_is_orphan() {
        assert_eq!(
            parse(&[ev(100, '('), ev(105, '('), ev(110, 'N'), ev(120, ')')]),
            Err(WfdbError::OrphanBoundary { sample: 100 })
        );
    }

    #[test]
    fn empty_events_give_empty_set() {
        assert!(parse(&[]).unwrap().is_empty());
    }

    #[test]
    fn incomplete_triples_are_kept() {
        // T wave with offset only, P wave with no boundaries
        let set = parse(&[
            ev(10, 'p'),
            ev(40, '('),
            ev(50, 'N'),
            ev(60, ')'),
            ev(100, 't'),
            ev(130, ')'),
        ])
        .unwrap();
        assert_eq!(
            set.wave(Wave::P),
            &[WaveFiducial {
                onset: None,
                peak: Some(10),
                offset: None
            }]
        );
        assert_eq!(
            set.wave(Wave::T),
            &[WaveFiducial {
                onset: None,
                peak: Some(100),
                offset: Some(130)
            }]
        );
    }

    #[test]
    fn offset_without_peak_is_orphan() {
        assert_eq!(
            parse(&[ev(5, ')')]),
            Err(WfdbError::OrphanBoundary { sample: 5 })
        );
        let (set, warnings) = events_to_fiducials_lenient(
            &[ev(5, ')'), ev(10, 'N')],
            &WaveCodeTable::default(),
            LabelQuality::Low,
            Some(1),
        );
        assert_eq!(set.wave(Wave::Qrs).len(), 1);
        assert_eq!(warnings.len(), 1);
    }

    proptest! {
        #[test]
        fn output_always_satisfies_invariants(
            raw in prop::collection::vec((0usize..50, prop::sample::select(vec!['(', ')', 'p', 't', 'N', 'V', 'x'])), 0..60)
        ) {
            let mut t = 0;
            let events: Vec<AnnotationEvent> = raw.into_iter().map(|(d, s)| { t += d; ev(t, s) }).collect();
            let (set, _) = events_to_fiducials_lenient(&events, &WaveCodeTable::default(), LabelQuality::Low, None);
            prop_assert!(set.validate(Some(t + 1)).is_ok());
        }
    }
}
