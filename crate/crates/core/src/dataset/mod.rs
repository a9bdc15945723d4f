//! Driving records, feature groups, windowing and the synthetic corpus.

mod csv_io;
mod features;
mod normalize;
mod record;
mod synth;
mod window;

pub use csv_io::{future_column, load_csv, read_csv, save_csv, write_csv, ColumnMap, SCALAR_COLUMNS};
pub use features::{
    base_features, Feature, FeatureGroup, CONTROL_FEATURES, IMAGE_FEATURES, SIDE_FEATURES,
};
pub use normalize::NormStats;
pub use record::{DrivingRecord, DETECTION_RANGE, GREEN, RED, YELLOW};
pub use synth::{default_profiles, generate_synthetic_client, DriverProfile};
pub use window::{build_windows, split_point, Window};

use crate::error::{Error, Result};
use crate::ClientId;

pub const TRAIN_FRACTION: f64 = 0.8;

/// Normalised train and test windows of one client.
#[derive(Debug, Clone)]
pub struct ClientDataset {
    pub client: ClientId,
    pub group: FeatureGroup,
    pub horizon: usize,
    pub train: Vec<Window>,
    pub test: Vec<Window>,
    pub stats: NormStats,
    /// Index of the first test record in the source trace.
    pub split_record: usize,
}

impl ClientDataset {
    /// Splits `records` chronologically, windows each side separately and
    /// z-scores both with statistics of the training windows.
    pub fn build(
        client: ClientId,
        records: &[DrivingRecord],
        group: FeatureGroup,
        horizon: usize,
    ) -> Result<Self> {
        let features = group.features(horizon);
        let cut = split_point(records.len(), TRAIN_FRACTION);
        let mut train = build_windows(&records[..cut], &features, horizon, horizon)?;
        let mut test = build_windows(&records[cut..], &features, horizon, horizon)?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Empty(format!(
                "client {client}: {} train / {} test windows from {} records",
                train.len(),
                test.len(),
                records.len()
            )));
        }
        let stats = NormStats::fit(&train, &features)?;
        train.iter_mut().for_each(|w| stats.apply(w));
        test.iter_mut().for_each(|w| stats.apply(w));
        Ok(ClientDataset {
            client,
            group,
            horizon,
            train,
            test,
            stats,
            split_record: cut,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.group.input_dim(self.horizon)
    }
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ks_of_identical_and_disjoint_samples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(ks_distance(&a, &a), 0.0);
        assert_eq!(ks_distance(&a, &[7.0, 8.0]), 1.0);
        assert!((ks_distance(&[1.0, 2.0, 3.0, 4.0], &[3.0, 4.0, 5.0, 6.0]) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn build_splits_chronologically() {
        let p = &default_profiles(1, 3)[0];
        let r = generate_synthetic_client(p, 600, 5, 11).unwrap();
        let d = ClientDataset::build(ClientId(0), &r, FeatureGroup::FG4, 5).unwrap();
        let max_train = d.train.iter().map(|w| w.target_end(5)).max().unwrap();
        let min_test = d.test.iter().map(|w| w.input_start(5)).min().unwrap();
        assert!(max_train < min_test);
        assert_eq!(d.train[0].x.len(), 5 * FeatureGroup::FG4.input_dim(5));
    }
}
