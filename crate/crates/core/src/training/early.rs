/// Stops once the monitored score has not improved for `patience`
/// consecutive epochs past `min_epochs`.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub min_epochs: usize,
    pub patience: usize,
    best: Option<(usize, f64)>,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(min_epochs: usize, patience: usize) -> Self {
        Self { min_epochs, patience, best: None, stale: 0 }
    }

    /// Records the score for 1-based `epoch`; returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, score: f64) -> bool {
        let improved = self.best.is_none_or(|(_, b)| score > b);
        if improved {
            self.best = Some((epoch, score));
            self.stale = 0;
        } else if epoch > self.min_epochs {
            self.stale += 1;
        }
        improved
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<(usize, f64)> {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_scores_stop_three_epochs_after_the_grace_period() {
        let mut es = EarlyStopping::new(20, 3);
        let mut stopped = None;
        for epoch in 1..=50 {
            es.observe(epoch, 0.5);
            if es.should_stop() {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(23));
        assert_eq!(es.best(), Some((1, 0.5)));
    }

    #[test]
    fn best_is_the_argmax() {
        let scores = [0.1, 0.4, 0.3, 0.6, 0.55, 0.6];
        let mut es = EarlyStopping::new(0, 10);
        for (i, &s) in scores.iter().enumerate() {
            es.observe(i + 1, s);
        }
        assert_eq!(es.best(), Some((4, 0.6)));
    }
}
