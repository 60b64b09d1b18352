//! Sweeps over methods, `T_pred`, `alpha` and seeds.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrators::{plan, PlanContext};
use crate::metrics::{AggregateRow, RunRecord};
use crate::store;
use crate::trajectory::{FieldSpec, Method, RunConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub methods: Vec<Method>,
    #[serde(rename = "T_pred")]
    pub t_pred: Vec<usize>,
    pub alpha: Vec<f64>,
    pub seeds: Vec<u64>,
    pub environment: String,
    pub field: FieldSpec,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            methods: vec![Method::SafeFlowMatcher],
            t_pred: vec![1],
            alpha: vec![2.0],
            seeds: (0..50).collect(),
            environment: "corridor".into(),
            field: FieldSpec::Gmm,
        }
    }
}

/// One aggregate row: every seed of a single configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub label: String,
    pub configs: Vec<RunConfig>,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("experiment plan has an empty seed list"));
        }
        if self.methods.is_empty() || self.t_pred.is_empty() || self.alpha.is_empty() {
            return Err(Error::invalid("every sweep axis needs at least one value"));
        }
        Ok(())
    }

    /// Cartesian product of the axes applied on top of `base`, in
    /// method-major order. Each config is validated.
    pub fn cells(&self, base: &RunConfig) -> Result<Vec<SweepCell>> {
        self.validate()?;
        let mut cells = Vec::new();
        for &method in &self.methods {
            for &t_pred in &self.t_pred {
                for &alpha in &self.alpha {
                    let proto = RunConfig {
                        method,
                        t_pred,
                        alpha,
                        environment: self.environment.clone(),
                        field: self.field.clone(),
                        ..base.clone()
                    };
                    proto.validate()?;
                    let configs = self
                        .seeds
                        .iter()
                        .map(|&seed| RunConfig { seed, ..proto.clone() })
                        .collect();
                    cells.push(SweepCell {
                        label: format!("{method} T_pred={t_pred} alpha={alpha}"),
                        configs,
                    });
                }
            }
        }
        Ok(cells)
    }

    /// Base config with this plan's environment and field, used to build the
    /// shared [`PlanContext`].
    pub fn context_config(&self, base: &RunConfig) -> RunConfig {
        RunConfig {
            environment: self.environment.clone(),
            field: self.field.clone(),
            ..base.clone()
        }
    }

    pub fn load(path: &FsPath) -> Result<Self> {
        let text = store::read_to_string(path)?;
        let value: serde_json::Value = if path.extension().is_some_and(|e| e == "toml") {
            let table: toml::Table = toml::from_str(&text).map_err(|e| Error::malformed(path, e))?;
            serde_json::to_value(table).map_err(|e| Error::malformed(path, e))?
        } else {
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e))?
        };
        let plan: ExperimentPlan = store::from_versioned_value(path, value)?;
        plan.validate()?;
        Ok(plan)
    }
}

/// Groups `records` (flattened in cell order) back into one row per cell.
pub fn aggregate(cells: &[SweepCell], records: &[RunRecord]) -> Result<Vec<AggregateRow>> {
    let expected: usize = cells.iter().map(|c| c.configs.len()).sum();
    if records.len() != expected {
        return Err(Error::DimensionMismatch {
            expected,
            got: records.len(),
        });
    }
    let mut offset = 0;
    cells
        .iter()
        .map(|cell| {
            let n = cell.configs.len();
            let row = AggregateRow::from_records(cell.label.clone(), &records[offset..offset + n]);
            offset += n;
            row
        })
        .collect()
}

/// Runs every cell on the calling thread.
pub fn run_serial(cells: &[SweepCell], ctx: &PlanContext) -> Result<Vec<RunRecord>> {
    cells
        .iter()
        .flat_map(|c| &c.configs)
        .map(|cfg| plan(cfg, ctx).map(|o| o.record))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_seed_list_is_rejected() {
        let plan = ExperimentPlan {
            seeds: vec![],
            ..Default::default()
        };
        assert!(plan.validate().is_err());
        assert!(plan.cells(&RunConfig::default()).is_err());
    }

    #[test]
    fn unknown_method_name_is_rejected() {
        let json = r#"{"methods":["diffuser"],"T_pred":[1],"alpha":[2.0],"seeds":[0],
            "environment":"corridor","field":{"kind":"gmm"}}"#;
        assert!(serde_json::from_str::<ExperimentPlan>(json).is_err());
    }

    #[test]
    fn cells_cover_the_product() {
        let plan = ExperimentPlan {
            methods: vec![Method::SafeFlowMatcher, Method::SafeFmNaive],
            t_pred: vec![1, 2],
            alpha: vec![1.0, 1.5, 2.0],
            seeds: vec![3, 4],
            ..Default::default()
        };
        let cells = plan.cells(&RunConfig::default()).unwrap();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0].label, "safeflowmatcher T_pred=1 alpha=1");
        assert!(cells.iter().all(|c| c.configs.len() == 2));
        assert_eq!(cells[11].configs[1].seed, 4);
        assert_eq!(cells[11].configs[1].method, Method::SafeFmNaive);
    }

    #[test]
    fn invalid_axis_value_is_rejected() {
        let plan = ExperimentPlan {
            alpha: vec![0.5],
            ..Default::default()
        };
        assert!(plan.cells(&RunConfig::default()).is_err());
    }

    #[test]
    fn toml_plan_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("plan.toml");
        std::fs::write(
            &p,
            "schema_version = 1\nmethods = [\"safeflowmatcher\"]\nT_pred = [1, 16]\nalpha = [2.0]\nseeds = [0, 1]\nenvironment = \"open\"\n[field]\nkind = \"gmm\"\n",
        )
        .unwrap();
        let plan = ExperimentPlan::load(&p).unwrap();
        assert_eq!(plan.t_pred, vec![1, 16]);
        assert_eq!(plan.environment, "open");
    }

    #[test]
    fn aggregate_checks_record_count() {
        let plan = ExperimentPlan {
            seeds: vec![0, 1],
            environment: "open".into(),
            ..Default::default()
        };
        let base = RunConfig {
            t_corr: 8,
            dataset: crate::trajectory::DatasetSpec {
                n_paths: 20,
                ..Default::default()
            },
            ..Default::default()
        };
        let ctx = PlanContext::from_config(&plan.context_config(&base)).unwrap();
        let cells = plan.cells(&base).unwrap();
        let records = run_serial(&cells, &ctx).unwrap();
        let rows = aggregate(&cells, &records).unwrap();
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].runs, 2);
        assert!(aggregate(&cells, &records[..1]).is_err());
    }
}
