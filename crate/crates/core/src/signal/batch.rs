use crate::error::{ensure, Result};

/// Fixed-length multichannel windows sharing channel count, length and rate.
///
/// `signals` is laid out `(batch, channels, samples)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBatch {
    pub signals: Vec<f32>,
    pub channels: usize,
    pub samples: usize,
    pub labels: Vec<usize>,
    pub sample_rate: f64,
    pub channel_ids: Vec<usize>,
}

impl SegmentBatch {
    pub fn new(
        signals: Vec<f32>,
        channels: usize,
        samples: usize,
        labels: Vec<usize>,
        sample_rate: f64,
        channel_ids: Vec<usize>,
    ) -> Result<Self> {
        ensure!(channels > 0 && samples > 0, Shape, "empty segment shape ({channels}, {samples})");
        ensure!(
            signals.len() == labels.len() * channels * samples,
            Shape,
            "{} values for {} segments of ({channels}, {samples})",
            signals.len(),
            labels.len()
        );
        ensure!(channel_ids.len() == channels, Shape, "{} channel ids for {channels} channels", channel_ids.len());
        ensure!(sample_rate > 0.0, InvalidArgument, "sample rate must be positive");
        Ok(Self { signals, channels, samples, labels, sample_rate, channel_ids })
    }

    pub fn empty(channels: usize, samples: usize, sample_rate: f64) -> Self {
        Self {
            signals: Vec::new(),
            channels,
            samples,
            labels: Vec::new(),
            sample_rate,
            channel_ids: (0..channels).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn segment(&self, i: usize) -> &[f32] {
        let n = self.channels * self.samples;
        &self.signals[i * n..(i + 1) * n]
    }

    pub fn row(&self, i: usize, channel: usize) -> &[f32] {
        let start = (i * self.channels + channel) * self.samples;
        &self.signals[start..start + self.samples]
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= num_classes) {
            return Err(crate::Error::Format(format!("label {bad} outside [0, {num_classes})")));
        }
        Ok(())
    }

    pub fn push(&mut self, segment: &[f32], label: usize) -> Result<()> {
        ensure!(
            segment.len() == self.channels * self.samples,
            Shape,
            "segment of {} values does not match ({}, {})",
            segment.len(),
            self.channels,
            self.samples
        );
        self.signals.extend_from_slice(segment);
        self.labels.push(label);
        Ok(())
    }

    /// Appends all segments of `other`, which must share shape and rate.
    pub fn extend(&mut self, other: &SegmentBatch) -> Result<()> {
        ensure!(
            other.channels == self.channels && other.samples == self.samples,
            Shape,
            "cannot join ({}, {}) segments with ({}, {})",
            other.channels,
            other.samples,
            self.channels,
            self.samples
        );
        ensure!(other.sample_rate == self.sample_rate, InvalidArgument, "sampling rates differ");
        self.signals.extend_from_slice(&other.signals);
        self.labels.extend_from_slice(&other.labels);
        Ok(())
    }

    pub fn select(&self, indices: &[usize]) -> SegmentBatch {
        let mut out = SegmentBatch { channel_ids: self.channel_ids.clone(), ..Self::empty(self.channels, self.samples, self.sample_rate) };
        for &i in indices {
            out.signals.extend_from_slice(self.segment(i));
            out.labels.push(self.labels[i]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_are_channel_major_within_segment() {
        let data: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let b = SegmentBatch::new(data, 2, 3, vec![0, 1], 200.0, vec![0, 1]).unwrap();
        assert_eq!(b.row(1, 0), &[6.0, 7.0, 8.0]);
        assert_eq!(b.row(0, 1), &[3.0, 4.0, 5.0]);
        assert!(b.check_labels(2).is_ok());
        assert!(b.check_labels(1).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(SegmentBatch::new(vec![0.0; 5], 2, 3, vec![0], 200.0, vec![0, 1]).is_err());
    }
}
