//! Multiple linear regression benchmarks (G1, H1, G2, H2, Recency).
//!
//! Each is an ordinary least-squares fit over a [`VariableSpec`], on the
//! same Min-Max normalized features the polynomial models use, with an
//! explicit intercept. The one-hot groups make the design rank-deficient;
//! [`lstsq_minnorm`] returns the minimum-norm solution.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{check_dims, HopsError, Result};
use crate::evaluation::{
    search, CellKey, ExperimentProtocol, GridCell, ModelKind, Predictions,
};
use crate::features::{
    build_design_matrix, build_design_matrix_from, FeatureMatrix, HourlyRecord, MinMaxNormalizer,
    Timestamp, VariableSpec,
};
use crate::numerics::{dot, lstsq_minnorm, Matrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub spec: VariableSpec,
    /// Intercept first, then one entry per feature column.
    pub coefficients: Vec<f64>,
    pub normalizer: MinMaxNormalizer,
    /// Timestamp at which `Trend` equals 1.
    pub trend_origin: Timestamp,
}

impl LinearModel {
    /// Predictions for raw (unnormalized) feature rows.
    pub fn predict_matrix(&self, x_raw: &Matrix) -> Result<Vec<f64>> {
        check_dims("LinearModel columns", self.coefficients.len() - 1, x_raw.cols())?;
        let x = self.normalizer.apply(x_raw)?;
        Ok((0..x.rows())
            .map(|i| self.coefficients[0] + dot(&self.coefficients[1..], x.row(i)))
            .collect())
    }

    /// `name,value` with `intercept` first.
    pub fn write_coefficients_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["name", "value"])?;
        out.write_record(["intercept".to_string(), self.coefficients[0].to_string()])?;
        for (name, v) in self.spec.column_names().iter().zip(&self.coefficients[1..]) {
            out.write_record([name.clone(), v.to_string()])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn read_json<R: Read>(r: R) -> Result<Self> {
        let m: Self = serde_json::from_reader(r)?;
        check_dims(
            "LinearModel coefficient count",
            m.spec.column_count() + 1,
            m.coefficients.len(),
        )?;
        Ok(m)
    }
}

/// Least-squares fit on the given rows of a prebuilt design.
pub fn fit_linear_rows(
    design: &FeatureMatrix,
    rows: &[usize],
    spec: &VariableSpec,
    trend_origin: Timestamp,
) -> Result<LinearModel> {
    check_dims("fit_linear design columns", spec.column_count(), design.matrix.cols())?;
    if rows.is_empty() {
        return Err(HopsError::InvalidParameter("no labelled training rows".into()));
    }
    let y: Vec<f64> = rows
        .iter()
        .map(|&i| {
            design.loads[i].ok_or_else(|| {
                HopsError::InvalidParameter(format!("row {} has no load", design.timestamps[i]))
            })
        })
        .collect::<Result<_>>()?;
    let x_raw = design.matrix.select_rows(rows);
    let normalizer = MinMaxNormalizer::fit(&x_raw)?;
    let x = normalizer.apply(&x_raw)?;
    let a = Matrix::from_fn(x.rows(), x.cols() + 1, |i, j| if j == 0 { 1.0 } else { x.get(i, j - 1) });
    Ok(LinearModel {
        spec: spec.clone(),
        coefficients: lstsq_minnorm(&a, &y)?,
        normalizer,
        trend_origin,
    })
}

/// Fits on every labelled row of `records`.
pub fn fit_linear(records: &[HourlyRecord], spec: &VariableSpec) -> Result<LinearModel> {
    let design = build_design_matrix(records, spec)?;
    let rows: Vec<usize> = (0..design.matrix.rows())
        .filter(|&i| design.loads[i].is_some())
        .collect();
    fit_linear_rows(&design, &rows, spec, records[0].timestamp)
}

/// Predicts every row `records` can produce after warm-up.
pub fn predict_linear(model: &LinearModel, records: &[HourlyRecord]) -> Result<Predictions> {
    let design = build_design_matrix_from(records, &model.spec, model.trend_origin)?;
    Ok(Predictions {
        predicted: model.predict_matrix(&design.matrix)?,
        timestamps: design.timestamps,
        actual: design.loads,
    })
}

#[derive(Debug, Clone)]
pub struct RecencyFit {
    pub model: LinearModel,
    pub h: usize,
    pub d: usize,
    pub cells: Vec<GridCell>,
}

/// Chooses `(h, d)` by validation MAPE under `protocol`'s splits, then
/// refits on its retraining years.
pub fn fit_recency(
    records: &[HourlyRecord],
    h_range: &[usize],
    d_range: &[usize],
    protocol: &ExperimentProtocol,
) -> Result<RecencyFit> {
    let p = ExperimentProtocol {
        kind: ModelKind::Linear,
        spec: "recency".into(),
        recency_search: Some((h_range.to_vec(), d_range.to_vec())),
        ..protocol.clone()
    };
    let out = search(records, &p)?;
    let CellKey { h: Some(h), d: Some(d), .. } = out.selected else {
        unreachable!("recency search keys carry h and d")
    };
    let crate::evaluation::FittedModel::Linear(model) = out.model else {
        unreachable!("linear protocol yields a linear model")
    };
    Ok(RecencyFit { model, h, d, cells: out.cells })
}
