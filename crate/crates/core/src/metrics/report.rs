use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One metric value together with the settings that produced it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub value: f64,
    pub samples: usize,
    /// Every setting the value depends on (filter size, sigma, floor, L, ...).
    pub fingerprint: BTreeMap<String, serde_json::Value>,
    pub dataset: String,
    pub seed: u64,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, value: f64, samples: usize, dataset: impl Into<String>, seed: u64) -> Self {
        MetricReport {
            metric: metric.into(),
            value,
            samples,
            fingerprint: BTreeMap::new(),
            dataset: dataset.into(),
            seed,
        }
    }

    pub fn with(mut self, key: &str, value: impl Serialize) -> Result<Self> {
        self.fingerprint.insert(key.to_string(), serde_json::to_value(value)?);
        Ok(self)
    }

    pub fn fingerprint_string(&self) -> String {
        self.fingerprint
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }

    pub const CSV_HEADER: &'static str = "metric,value,samples,dataset,seed,fingerprint";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},\"{}\"",
            self.metric,
            self.value,
            self.samples,
            self.dataset,
            self.seed,
            self.fingerprint_string().replace('"', "\"\"")
        )
    }

    /// Reports without a fingerprint are rejected: metric values depend on their settings.
    pub fn validate(&self) -> Result<()> {
        if self.fingerprint.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "report for {} has no configuration fingerprint",
                self.metric
            )));
        }
        Ok(())
    }
}
