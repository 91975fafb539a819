//! Serialised experiment inputs and outputs.

use std::path::Path;

use autoreparam::effect::Layout;
use autoreparam::inference::{ChainDiagnostics, HmcConfig, SweepRow};
use autoreparam::pipeline::{Method, MethodRun};
use autoreparam::vi::ViConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub model: String,
    pub data: Option<String>,
    pub method: Method,
    pub hmc: HmcConfig,
    pub vi: ViConfig,
    pub out: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViRecord {
    pub final_elbo: f64,
    pub grad_evals: u64,
    /// Fitted centring weights, one per reparameterisable coordinate.
    pub lambda: Option<Vec<f64>>,
    pub lambda_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssEntry {
    pub variable: String,
    pub ess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub spec: ExperimentSpec,
    pub diagnostics: ChainDiagnostics,
    pub vi: ViRecord,
    pub ess_table: Vec<EssEntry>,
    /// Standard error of ESS per 1000 gradients across chains.
    pub stderr: f64,
    pub step_sizes: Vec<Vec<f64>>,
    pub sweep: Vec<SweepRow>,
}

impl ResultRecord {
    pub fn new(spec: ExperimentSpec, run: &MethodRun, lambda_sites: &[(String, usize)]) -> Self {
        let names = run.layout.coordinate_names();
        let d = &run.run.diagnostics;
        let ess_table = names
            .into_iter()
            .zip(&d.ess_per_variable)
            .map(|(variable, &ess)| EssEntry { variable, ess })
            .collect();
        let lambda_names = run.vi.lambda_flat.as_ref().map(|_| {
            Layout::from_sites(lambda_sites.iter().map(|(n, l)| (n.as_str(), *l)))
                .coordinate_names()
        });
        Self {
            spec,
            stderr: d.stderr,
            diagnostics: d.clone(),
            vi: ViRecord {
                final_elbo: run.vi.final_elbo,
                grad_evals: run.vi.grad_evals,
                lambda: run.vi.lambda_flat.clone(),
                lambda_names,
            },
            ess_table,
            step_sizes: run.run.step_sizes.clone(),
            sweep: run.run.sweep.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Usage(format!("cannot serialise record: {e}")))?;
        s.push('\n');
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn summary(&self) -> SummaryRow {
        SummaryRow {
            model: self.spec.model.clone(),
            method: self.spec.method,
            seed: self.spec.seed,
            min_ess: self.diagnostics.min_ess,
            grad_evals: self.diagnostics.grad_evals,
            ess_per_1000_grads: self.diagnostics.ess_per_1000_grads,
            stderr: self.stderr,
            elbo: self.vi.final_elbo,
        }
    }
}

/// One line of the aggregate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub method: Method,
    pub seed: u64,
    pub min_ess: f64,
    pub grad_evals: u64,
    pub ess_per_1000_grads: f64,
    pub stderr: f64,
    pub elbo: f64,
}

/// Appends `row`, writing the header first if the file is new or empty.
pub fn append_summary(path: &Path, row: &SummaryRow) -> Result<(), CliError> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::io(path, e))?;
    let mut w = csv::WriterBuilder::new().has_headers(fresh).from_writer(file);
    w.serialize(row)
        .and_then(|_| w.flush().map_err(csv::Error::from))
        .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use autoreparam::inference::Leapfrog;
    use autoreparam::pipeline::run_method;
    use autoreparam::zoo::build_funnel;

    fn small_record(method: Method) -> ResultRecord {
        let hmc = HmcConfig {
            warmup_steps: 20,
            adapt_steps: 10,
            samples: 50,
            chains: 2,
            ..HmcConfig::desk(3)
        }
        .with_leapfrog(Leapfrog::Fixed(3));
        let vi = ViConfig {
            steps: 30,
            n_mc: 4,
            ..ViConfig::desk(3)
        };
        let model = build_funnel();
        let run = run_method(&model, method, &vi, &hmc).unwrap();
        let spec = ExperimentSpec {
            model: "funnel".into(),
            data: None,
            method,
            hmc,
            vi,
            out: "out.json".into(),
            seed: 3,
        };
        let sites = autoreparam::reparam::reparameterisable_sites(&model).unwrap();
        ResultRecord::new(spec, &run, &sites)
    }

    #[test]
    fn json_round_trip() {
        for method in [Method::Cp, Method::Vip] {
            let record = small_record(method);
            let parsed = ResultRecord::parse(&record.to_json().unwrap()).unwrap();
            assert_eq!(parsed, record);
        }
    }

    #[test]
    fn vip_record_names_lambda() {
        let record = small_record(Method::Vip);
        assert_eq!(record.vi.lambda.as_ref().unwrap().len(), 2);
        assert_eq!(record.vi.lambda_names.as_deref(), Some(&["z".to_string(), "x".to_string()][..]));
        assert_eq!(record.ess_table.len(), 2);
    }

    #[test]
    fn csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("autoreparam-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("rows.csv");
        let _ = std::fs::remove_file(&path);
        let row = small_record(Method::Cp).summary();
        append_summary(&path, &row).unwrap();
        append_summary(&path, &row).unwrap();
        let mut reader = csv::Reader::from_path(&path).unwrap();
        let rows: Vec<SummaryRow> = reader.deserialize().map(|r| r.unwrap()).collect();
        assert_eq!(rows, vec![row.clone(), row]);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
