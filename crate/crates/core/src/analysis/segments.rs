use crate::Scalar;

/// Run of consecutive valid samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    /// Index of the first sample in the source trace.
    pub start: usize,
    pub samples: Vec<T>,
}

impl<T> Segment<T> {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Maximal runs of `valid` samples; runs shorter than two samples are dropped.
pub fn segment_trace<T: Scalar>(values: &[T], valid: &[bool]) -> Vec<Segment<T>> {
    assert_eq!(values.len(), valid.len(), "values and mask differ in length");
    let mut out = Vec::new();
    let mut i = 0;
    while i < values.len() {
        if !valid[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i < values.len() && valid[i] {
            i += 1;
        }
        if i - start >= 2 {
            out.push(Segment {
                start,
                samples: values[start..i].to_vec(),
            });
        }
    }
    out
}

/// Segments of `x` and `y` restricted to samples valid in both, index-aligned.
pub fn overlap_segments<T: Scalar>(
    x: &[T],
    x_valid: &[bool],
    y: &[T],
    y_valid: &[bool],
) -> (Vec<Segment<T>>, Vec<Segment<T>>) {
    assert_eq!(x.len(), y.len(), "traces differ in length");
    let both: Vec<bool> = x_valid.iter().zip(y_valid).map(|(&a, &b)| a && b).collect();
    (segment_trace(x, &both), segment_trace(y, &both))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_valid_is_one_segment() {
        let s = segment_trace(&[1.0, 2.0, 3.0], &[true; 3]);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].samples, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn alternating_mask_gives_nothing() {
        let v = vec![0.0; 10];
        let m: Vec<bool> = (0..10).map(|i| i % 2 == 0).collect();
        assert!(segment_trace(&v, &m).is_empty());
    }

    #[test]
    fn two_runs() {
        let v = vec![0.0; 160];
        let mut m = vec![false; 160];
        m[0..100].fill(true);
        m[105..155].fill(true);
        let s = segment_trace(&v, &m);
        assert_eq!(s.iter().map(|s| (s.start, s.len())).collect::<Vec<_>>(), vec![(0, 100), (105, 50)]);
    }

    #[test]
    fn overlap_uses_both_masks() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let (a, b) = overlap_segments(
            &x,
            &[true, true, true, false, true],
            &x,
            &[false, true, true, true, true],
        );
        assert_eq!(a.len(), 1);
        assert_eq!((a[0].start, b[0].start, a[0].len()), (1, 1, 2));
    }
}
