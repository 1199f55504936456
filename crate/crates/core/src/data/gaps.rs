use super::types::Timestamp;

/// Maximal runs of missing timestamps in a grid-aligned, time-ordered series.
///
/// Each entry is `(first_missing, last_missing)` inclusive. A contiguous (or
/// empty) series yields no entries.
pub fn detect_gaps(timestamps: &[Timestamp], expected_interval: i64) -> Vec<(Timestamp, Timestamp)> {
    assert!(expected_interval > 0, "interval must be positive");
    timestamps
        .windows(2)
        .filter(|w| w[1] - w[0] > expected_interval)
        .map(|w| (w[0] + expected_interval, w[1] - expected_interval))
        .collect()
}

/// Number of grid points covered by a list of gaps.
pub fn missing_count(gaps: &[(Timestamp, Timestamp)], expected_interval: i64) -> usize {
    gaps.iter()
        .map(|(a, b)| ((b - a) / expected_interval + 1) as usize)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::types::MINUTE_MS;

    fn minutes(range: impl Iterator<Item = i64>) -> Vec<i64> {
        range.map(|m| m * MINUTE_MS).collect()
    }

    #[test]
    fn contiguous_has_no_gaps() {
        assert!(detect_gaps(&minutes(0..100), MINUTE_MS).is_empty());
        assert!(detect_gaps(&[], MINUTE_MS).is_empty());
    }

    #[test]
    fn single_missing_minute() {
        // 10:00 .. 10:10 without 10:05
        let base = 600;
        let ts: Vec<i64> = minutes((base..=base + 10).filter(|m| *m != base + 5));
        let gaps = detect_gaps(&ts, MINUTE_MS);
        assert_eq!(gaps, vec![((base + 5) * MINUTE_MS, (base + 5) * MINUTE_MS)]);
    }

    #[test]
    fn two_separate_runs() {
        // 10:00 .. 11:10 without 10:05-10:07 and 11:00
        let base = 600;
        let ts = minutes((base..=base + 70).filter(|m| !(base + 5..=base + 7).contains(m) && *m != base + 60));
        let gaps = detect_gaps(&ts, MINUTE_MS);
        assert_eq!(
            gaps,
            vec![
                ((base + 5) * MINUTE_MS, (base + 7) * MINUTE_MS),
                ((base + 60) * MINUTE_MS, (base + 60) * MINUTE_MS)
            ]
        );
        assert_eq!(missing_count(&gaps, MINUTE_MS), 4);
    }
}
