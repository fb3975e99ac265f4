use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest count as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Named regressors plus a response.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    names: Vec<String>,
    response_name: String,
    x: DMatrix<f64>,
    y: Vec<f64>,
}

impl DesignMatrix {
    pub fn from_columns(
        names: Vec<String>,
        columns: Vec<Vec<f64>>,
        response_name: impl Into<String>,
        response: Vec<f64>,
    ) -> Result<Self> {
        let n = response.len();
        let p = columns.len();
        if names.len() != p {
            return Err(Error::Data(format!(
                "{} column names for {p} columns",
                names.len()
            )));
        }
        if p == 0 {
            return Err(Error::InsufficientData("design has no columns".into()));
        }
        if p > n {
            return Err(Error::InsufficientData(format!(
                "{p} columns but only {n} observations"
            )));
        }
        let mut seen = HashSet::new();
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("duplicate column name `{name}`")));
            }
        }
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n {
                return Err(Error::Data(format!(
                    "column `{name}` has {} rows, response has {n}",
                    col.len()
                )));
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!(
                    "column `{name}` has non-finite entries"
                )));
            }
        }
        if response.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("response has non-finite entries".into()));
        }
        let x = DMatrix::from_fn(n, p, |i, j| columns[j][i]);
        Ok(Self {
            names,
            response_name: response_name.into(),
            x,
            y: response,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn response_name(&self) -> &str {
        &self.response_name
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn n_cols(&self) -> usize {
        self.names.len()
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.names.iter().position(|n| n == name)?;
        Some(self.x.column(j).iter().copied().collect())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.x
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub std_err: f64,
    pub t: f64,
    pub p_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegressionResult {
    pub dependent: String,
    pub coefficients: Vec<Coefficient>,
    pub r_squared: f64,
    pub adj_r_squared: f64,
    /// Absent when the model has no regressors beyond a constant.
    pub f_statistic: Option<f64>,
    pub n_observations: usize,
    pub df_model: usize,
    pub df_resid: usize,
    /// Whether the column space contains the constant vector; R² is centered iff so.
    pub has_constant: bool,
    pub level: f64,
}

impl RegressionResult {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "term", "coef", "std_err", "t", "p_value", "ci_low", "ci_high",
        ])?;
        for c in &self.coefficients {
            w.write_record([
                c.name.clone(),
                c.estimate.to_string(),
                c.std_err.to_string(),
                c.t.to_string(),
                c.p_value.to_string(),
                c.ci_low.to_string(),
                c.ci_high.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io("<regression csv>", e))?;
        Ok(())
    }

    /// Aligned plain-text summary in the usual OLS report layout.
    pub fn to_table(&self) -> String {
        let name_w = self
            .coefficients
            .iter()
            .map(|c| c.name.len())
            .max()
            .unwrap_or(0)
            .max(16);
        let lo = (1.0 - self.level) / 2.0;
        let hi = 1.0 - lo;
        let mut s = String::new();
        let f_stat = self
            .f_statistic
            .map(|f| format!("{f:.4}"))
            .unwrap_or_else(|| "nan".into());
        let _ = writeln!(
            s,
            "Dep. Variable:     {:<24} R-squared:       {:.3}",
            self.dependent, self.r_squared
        );
        let _ = writeln!(
            s,
            "Model:             {:<24} Adj. R-squared:  {:.3}",
            "OLS", self.adj_r_squared
        );
        let _ = writeln!(
            s,
            "Method:            {:<24} F-statistic:     {f_stat}",
            "Least Squares"
        );
        let _ = writeln!(s, "No. Observations:  {:<24}", self.n_observations);
        let _ = writeln!(s, "{}", "=".repeat(name_w + 66));
        let _ = writeln!(
            s,
            "{:<name_w$} {:>10} {:>10} {:>10} {:>10} {:>10} {:>10}",
            "",
            "coef",
            "std err",
            "t",
            "P>|t|",
            format!("[{lo:.3}"),
            format!("{hi:.3}]"),
        );
        let _ = writeln!(s, "{}", "-".repeat(name_w + 66));
        for c in &self.coefficients {
            let _ = writeln!(
                s,
                "{:<name_w$} {:>10.4} {:>10.3} {:>10.3} {:>10.3} {:>10.3} {:>10.3}",
                c.name, c.estimate, c.std_err, c.t, c.p_value, c.ci_low, c.ci_high
            );
        }
        let _ = writeln!(s, "{}", "=".repeat(name_w + 66));
        s
    }
}

fn numerical_rank(x: &DMatrix<f64>) -> usize {
    if x.ncols() == 0 {
        return 0;
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOLERANCE * max).count()
}

/// Columns that add nothing to the span of the columns before them.
fn dependent_columns(x: &DMatrix<f64>, names: &[String]) -> Vec<String> {
    let mut kept: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..x.ncols() {
        let mut candidate = kept.clone();
        candidate.push(j);
        let sub = x.select_columns(&candidate);
        if numerical_rank(&sub) == candidate.len() {
            kept.push(j);
        } else {
            dependent.push(names[j].clone());
        }
    }
    dependent
}

/// Ordinary least squares with classical standard errors, fit via Householder QR.
pub fn ols(design: &DesignMatrix, level: f64) -> Result<RegressionResult> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Config(format!(
            "confidence level {level} not in (0, 1)"
        )));
    }
    let x = &design.x;
    let (n, p) = x.shape();
    if n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} observations leave no residual degrees of freedom for {p} columns"
        )));
    }
    if numerical_rank(x) < p {
        return Err(Error::SingularDesign {
            columns: dependent_columns(x, &design.names),
        });
    }

    let y = DVector::from_column_slice(&design.y);
    let qr = x.clone().qr();
    let q = qr.q();
    let r = qr.r();
    let qty = q.transpose() * &y;
    let beta = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::SingularDesign {
            columns: dependent_columns(x, &design.names),
        })?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::SingularDesign {
            columns: dependent_columns(x, &design.names),
        })?;

    let fitted = x * &beta;
    let resid = &y - &fitted;
    let rss = resid.dot(&resid);
    let df_resid = n - p;
    let sigma2 = rss / df_resid as f64;

    // Constant in the column space iff projecting 1 onto it leaves no residual.
    let ones = DVector::from_element(n, 1.0);
    let proj = &q * (q.transpose() * &ones);
    let has_constant = (&ones - proj).norm() <= 1e-8 * (n as f64).sqrt();

    let tss = if has_constant {
        let m = y.mean();
        y.iter().map(|v| (v - m) * (v - m)).sum::<f64>()
    } else {
        y.dot(&y)
    };
    if tss == 0.0 {
        return Err(Error::DegenerateColumn(design.response_name.clone()));
    }
    let r_squared = (1.0 - rss / tss).clamp(0.0, 1.0);
    let k_const = usize::from(has_constant);
    let df_model = p - k_const;
    let adj_r_squared = 1.0 - (n - k_const) as f64 / df_resid as f64 * (1.0 - r_squared);
    let f_statistic = (df_model > 0).then(|| {
        let ess = tss - rss;
        (ess / df_model as f64) / (rss / df_resid as f64)
    });

    let t_dist = StudentsT::new(0.0, 1.0, df_resid as f64).expect("positive degrees of freedom");
    let crit = t_dist.inverse_cdf(1.0 - (1.0 - level) / 2.0);

    let coefficients = (0..p)
        .map(|j| {
            let row = r_inv.row(j);
            let std_err = (sigma2 * row.dot(&row)).sqrt();
            let estimate = beta[j];
            let t = estimate / std_err;
            let p_value = if t.is_nan() {
                f64::NAN
            } else {
                2.0 * t_dist.sf(t.abs())
            };
            Coefficient {
                name: design.names[j].clone(),
                estimate,
                std_err,
                t,
                p_value,
                ci_low: estimate - crit * std_err,
                ci_high: estimate + crit * std_err,
            }
        })
        .collect();

    Ok(RegressionResult {
        dependent: design.response_name.clone(),
        coefficients,
        r_squared,
        adj_r_squared,
        f_statistic,
        n_observations: n,
        df_model,
        df_resid,
        has_constant,
        level,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn design(cols: Vec<(&str, Vec<f64>)>, y: Vec<f64>) -> DesignMatrix {
        let (names, columns): (Vec<_>, Vec<_>) =
            cols.into_iter().map(|(n, c)| (n.to_string(), c)).unzip();
        DesignMatrix::from_columns(names, columns, "y", y).unwrap()
    }

    #[test]
    fn exact_line() {
        let x = vec![0.0, 1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let d = design(vec![("const", vec![1.0; 5]), ("x", x)], y);
        let fit = ols(&d, 0.95).unwrap();
        assert!(fit.coefficients[0].estimate.abs() < 1e-12);
        assert!((fit.coefficients[1].estimate - 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!(fit.has_constant);
    }

    #[test]
    fn three_point_normal_equations() {
        // XᵀX = [[3,3],[3,5]], Xᵀy = [5,6] => β = (7/6, 1/2)
        let d = design(
            vec![("const", vec![1.0; 3]), ("x", vec![0.0, 1.0, 2.0])],
            vec![1.0, 2.0, 2.0],
        );
        let fit = ols(&d, 0.95).unwrap();
        assert!((fit.coefficients[0].estimate - 7.0 / 6.0).abs() < 1e-12);
        assert!((fit.coefficients[1].estimate - 0.5).abs() < 1e-12);
        // RSS = 1/6, σ² = 1/6, var(β1) = σ² · 3/6
        assert!((fit.coefficients[1].std_err - (1.0f64 / 12.0).sqrt()).abs() < 1e-12);
        assert_eq!(fit.df_resid, 1);
        assert!((fit.r_squared - 0.75).abs() < 1e-12);
    }

    #[test]
    fn zero_column_rejected_by_name() {
        let d = design(
            vec![
                ("const", vec![1.0; 4]),
                ("zero", vec![0.0; 4]),
                ("x", vec![1.0, 2.0, 4.0, 3.0]),
            ],
            vec![1.0, 3.0, 2.0, 5.0],
        );
        match ols(&d, 0.95) {
            Err(Error::SingularDesign { columns }) => assert_eq!(columns, vec!["zero"]),
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn collinear_dummies_named() {
        let g1 = vec![1.0, 1.0, 0.0, 0.0, 0.0];
        let g2 = vec![0.0, 0.0, 1.0, 1.0, 1.0];
        let d = design(
            vec![("const", vec![1.0; 5]), ("g1", g1), ("g2", g2)],
            vec![1.0, 2.0, 3.0, 2.0, 1.0],
        );
        match ols(&d, 0.95) {
            Err(Error::SingularDesign { columns }) => assert_eq!(columns, vec!["g2"]),
            other => panic!("expected singular design, got {other:?}"),
        }
    }

    #[test]
    fn group_dummies_count_as_constant() {
        let g1 = vec![1.0, 1.0, 0.0, 0.0, 0.0];
        let g2 = vec![0.0, 0.0, 1.0, 1.0, 1.0];
        let x = vec![0.3, -1.0, 2.0, 0.5, 1.5];
        let d = design(
            vec![("g1", g1), ("g2", g2), ("x", x)],
            vec![1.0, 2.0, 3.0, 2.0, 1.0],
        );
        let fit = ols(&d, 0.95).unwrap();
        assert!(fit.has_constant);
        assert_eq!(fit.df_model, 2);
    }

    #[test]
    fn bad_inputs() {
        assert!(DesignMatrix::from_columns(
            vec!["a".into(), "a".into()],
            vec![vec![1.0, 2.0, 3.0], vec![1.0, 0.0, 1.0]],
            "y",
            vec![1.0, 2.0, 3.0]
        )
        .is_err());
        assert!(DesignMatrix::from_columns(
            vec!["a".into()],
            vec![vec![1.0, f64::NAN]],
            "y",
            vec![1.0, 2.0]
        )
        .is_err());
        let d = design(vec![("a", vec![1.0])], vec![2.0]);
        assert!(matches!(ols(&d, 0.95), Err(Error::InsufficientData(_))));
    }

    fn lcg_problem(seed: u64, n: usize, p: usize) -> (Vec<(String, Vec<f64>)>, Vec<f64>) {
        let mut state = seed.wrapping_add(1);
        let mut next = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        let mut cols = vec![("const".to_string(), vec![1.0; n])];
        for j in 1..p {
            cols.push((format!("x{j}"), (0..n).map(|_| next()).collect()));
        }
        let y = (0..n)
            .map(|i| {
                cols.iter()
                    .enumerate()
                    .map(|(j, (_, c))| c[i] * j as f64)
                    .sum::<f64>()
                    + next()
            })
            .collect();
        (cols, y)
    }

    proptest! {
        #[test]
        fn residuals_orthogonal_and_r2_is_squared_correlation(
            seed in 0u64..10_000,
            n in 12usize..80,
            p in 2usize..6,
        ) {
            let (cols, y) = lcg_problem(seed, n, p);
            let (names, columns): (Vec<_>, Vec<_>) = cols.into_iter().unzip();
            let d = DesignMatrix::from_columns(names, columns, "y", y.clone()).unwrap();
            let fit = ols(&d, 0.95).unwrap();
            let beta = DVector::from_iterator(p, fit.coefficients.iter().map(|c| c.estimate));
            let fitted = d.matrix() * beta;
            let yv = DVector::from_column_slice(&y);
            let resid = &yv - &fitted;
            let xte = d.matrix().transpose() * resid;
            prop_assert!(xte.amax() < 1e-8 * yv.norm());
            let fitted: Vec<f64> = fitted.iter().copied().collect();
            let r = crate::stats::pearson_correlation(&fitted, &y).unwrap();
            prop_assert!((r * r - fit.r_squared).abs() < 1e-10);
            for c in &fit.coefficients {
                prop_assert!(c.ci_low <= c.estimate && c.estimate <= c.ci_high);
            }
            prop_assert!((0.0..=1.0).contains(&fit.r_squared));
        }
    }

    #[test]
    fn csv_and_table_render() {
        let d = design(
            vec![("const", vec![1.0; 4]), ("x", vec![0.0, 1.0, 2.0, 3.0])],
            vec![0.1, 0.9, 2.2, 2.8],
        );
        let fit = ols(&d, 0.95).unwrap();
        let mut buf = Vec::new();
        fit.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("term,coef,std_err,t,p_value,ci_low,ci_high\n"));
        assert_eq!(text.lines().count(), 3);
        let table = fit.to_table();
        assert!(table.contains("R-squared"));
        assert!(table.contains("[0.025"));
        assert!(table.contains("0.975]"));
    }
}
