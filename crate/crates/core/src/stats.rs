//! Aggregation of per-rank durations over repeated runs.

/// Minimum, mean and maximum of one duration vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

impl Summary {
    /// Returns `None` for an empty slice.
    pub fn of(durations: &[f64]) -> Option<Summary> {
        if durations.is_empty() {
            return None;
        }
        let min = durations.iter().copied().fold(f64::INFINITY, f64::min);
        let max = durations.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = durations.iter().sum::<f64>() / durations.len() as f64;
        // rounding in the sum can push the mean a hair outside the range
        let avg = mean.clamp(min, max);
        Some(Summary { min, avg, max })
    }
}

/// How the reported repeat is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Selection {
    /// Every metric comes from the repeat with the smallest makespan.
    #[default]
    BestMakespan,
    /// Each metric is minimized independently across repeats.
    PerMetric,
}

/// Index of the smallest value; ties go to the earliest repeat.
pub fn best_index(values: &[f64]) -> Option<usize> {
    values
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, b)) if b <= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStats {
    /// Per-repeat, per-rank durations.
    pub repeats: Vec<Vec<f64>>,
    /// Repeat with the smallest makespan.
    pub selected: usize,
    pub min: f64,
    pub avg: f64,
    pub max: f64,
    /// Makespan of the selected repeat.
    pub makespan: f64,
}

impl RunStats {
    /// Panics if there are no repeats or a repeat has no ranks.
    pub fn from_repeats(repeats: Vec<Vec<f64>>, selection: Selection) -> RunStats {
        let summaries: Vec<Summary> = repeats
            .iter()
            .map(|d| Summary::of(d).expect("repeat with at least one rank"))
            .collect();
        let makespans: Vec<f64> = summaries.iter().map(|s| s.max).collect();
        let selected = best_index(&makespans).expect("at least one repeat");
        let chosen = summaries[selected];
        let (min, avg, max) = match selection {
            Selection::BestMakespan => (chosen.min, chosen.avg, chosen.max),
            Selection::PerMetric => {
                let pick = |f: fn(&Summary) -> f64| summaries.iter().map(f).fold(f64::INFINITY, f64::min);
                (pick(|s| s.min), pick(|s| s.avg), pick(|s| s.max))
            }
        };
        RunStats {
            repeats,
            selected,
            min,
            avg,
            max,
            makespan: chosen.max,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn three_rank_summary() {
        let s = Summary::of(&[3.0, 5.0, 4.0]).unwrap();
        assert_eq!((s.min, s.avg, s.max), (3.0, 4.0, 5.0));
        assert_eq!(Summary::of(&[]), None);
    }

    #[test]
    fn best_of_five_takes_first_tie() {
        assert_eq!(best_index(&[9.0, 7.0, 8.0, 7.0, 10.0]), Some(1));
        assert_eq!(best_index(&[]), None);
    }

    #[test]
    fn single_repeat_is_identity() {
        let s = RunStats::from_repeats(vec![vec![2.0, 6.0]], Selection::BestMakespan);
        assert_eq!(s.selected, 0);
        assert_eq!((s.min, s.avg, s.max, s.makespan), (2.0, 4.0, 6.0, 6.0));
    }

    #[test]
    fn per_metric_selection() {
        let repeats = vec![vec![1.0, 9.0], vec![4.0, 6.0]];
        let best = RunStats::from_repeats(repeats.clone(), Selection::BestMakespan);
        assert_eq!((best.min, best.max), (4.0, 6.0));
        let per = RunStats::from_repeats(repeats, Selection::PerMetric);
        assert_eq!((per.min, per.avg, per.max), (1.0, 5.0, 6.0));
        assert_eq!(per.selected, 1);
    }

    proptest! {
        #[test]
        fn summary_ordering(v in prop::collection::vec(0.0f64..1e12, 1..64)) {
            let s = Summary::of(&v).unwrap();
            prop_assert!(s.min <= s.avg && s.avg <= s.max);
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            prop_assert!((s.avg - mean).abs() <= mean.abs() * 4.0 * f64::EPSILON);
        }

        #[test]
        fn selected_repeat_is_fastest(reps in prop::collection::vec(prop::collection::vec(0.0f64..1e6, 1..8), 1..6)) {
            let s = RunStats::from_repeats(reps.clone(), Selection::BestMakespan);
            for r in &reps {
                prop_assert!(s.makespan <= r.iter().copied().fold(f64::MIN, f64::max));
            }
        }
    }
}
