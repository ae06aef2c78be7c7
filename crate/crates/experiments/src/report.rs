//! Sweep results and their text forms.
//!
//! The CSV form has one header and two kinds of rows: a `measurement` row per
//! (sweep point, repetition) and, after all measurements, an `aggregate` row
//! per sweep point holding the mean and sample standard deviation of its
//! successful measurements. Missing values are written as `NA`.

use std::fmt;
use std::io::Write;

use harmon_core::data::format_f64;

use crate::config::ExperimentId;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Factor {
    Additive,
    Slope,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ReferenceStrategy {
    /// The whole reference sample.
    Full,
    /// Only reference subjects inside the moving site's age window.
    AgeMatched,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Composition {
    Balanced,
    MaleOnly,
    FemaleOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Regime {
    HealthyOnly,
    HealthyAndPathological,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SweepPoint {
    Bias {
        factor: Factor,
        additive: f64,
        slope: f64,
        noise: f64,
    },
    SampleSize {
        n: usize,
    },
    AgeRange {
        span: f64,
        lo: f64,
        strategy: ReferenceStrategy,
    },
    Sex {
        moving: Composition,
        reference: Composition,
        with_covariate: bool,
    },
    Pathology {
        factor: f64,
        regime: Regime,
    },
}

impl fmt::Display for Factor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Additive => "additive",
            Self::Slope => "slope",
            Self::Noise => "noise",
        })
    }
}

impl fmt::Display for ReferenceStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Full => "full",
            Self::AgeMatched => "age_matched",
        })
    }
}

impl fmt::Display for Composition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Balanced => "balanced",
            Self::MaleOnly => "male_only",
            Self::FemaleOnly => "female_only",
        })
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::HealthyOnly => "hc_only",
            Self::HealthyAndPathological => "hc_patho",
        })
    }
}

/// Compact `key=value;...` label used as the `point` column.
impl fmt::Display for SweepPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let n = format_f64;
        match *self {
            Self::Bias {
                factor,
                additive,
                slope,
                noise,
            } => write!(
                f,
                "sweep={factor};A={};S={};M={}",
                n(additive),
                n(slope),
                n(noise)
            ),
            Self::SampleSize { n: size } => write!(f, "N={size}"),
            Self::AgeRange { span, lo, strategy } => {
                write!(
                    f,
                    "span={};window={}-{};reference={strategy}",
                    n(span),
                    n(lo),
                    n(lo + span)
                )
            }
            Self::Sex {
                moving,
                reference,
                with_covariate,
            } => write!(
                f,
                "moving={moving};reference={reference};sex_covariate={}",
                if with_covariate { "with" } else { "without" }
            ),
            Self::Pathology { factor, regime } => write!(f, "Ap=Mp={};fit={regime}", n(factor)),
        }
    }
}

/// Metrics of one repetition. Fields an experiment does not measure stay `None`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub n_train: Option<f64>,
    pub n_test: Option<f64>,
    /// Feature-averaged Bhattacharyya distances to the reference population.
    pub bd_before: Option<f64>,
    pub bd_after: Option<f64>,
    /// Largest per-feature distance after harmonization.
    pub bd_after_max: Option<f64>,
    pub mad_train: Option<f64>,
    pub mad_test: Option<f64>,
    pub variance_error: Option<f64>,
    pub displacement_ratio: Option<f64>,
}

pub const METRIC_NAMES: [&str; 9] = [
    "n_train",
    "n_test",
    "bd_before",
    "bd_after",
    "bd_after_max",
    "mad_train",
    "mad_test",
    "variance_error",
    "displacement_ratio",
];

impl Metrics {
    pub fn values(&self) -> [Option<f64>; 9] {
        [
            self.n_train,
            self.n_test,
            self.bd_before,
            self.bd_after,
            self.bd_after_max,
            self.mad_train,
            self.mad_test,
            self.variance_error,
            self.displacement_ratio,
        ]
    }

    fn from_values(v: [Option<f64>; 9]) -> Self {
        Self {
            n_train: v[0],
            n_test: v[1],
            bd_before: v[2],
            bd_after: v[3],
            bd_after_max: v[4],
            mad_train: v[5],
            mad_test: v[6],
            variance_error: v[7],
            displacement_ratio: v[8],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Ok(Metrics),
    /// The fit failed (e.g. a confounded design); the run continued.
    Failed(String),
    /// The point could not be sampled (e.g. too few subjects in a window).
    Skipped(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub sweep_index: usize,
    pub rep: usize,
    pub seed: u64,
    pub outcome: Outcome,
}

impl Measurement {
    pub fn metrics(&self) -> Option<&Metrics> {
        match &self.outcome {
            Outcome::Ok(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub sweep_index: usize,
    /// Successful repetitions.
    pub n_ok: usize,
    pub mean: Metrics,
    pub std: Metrics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub experiment: ExperimentId,
    pub points: Vec<SweepPoint>,
    /// Sorted by (sweep index, repetition).
    pub measurements: Vec<Measurement>,
}

fn mean_std(x: &[f64]) -> (Option<f64>, Option<f64>) {
    match x.len() {
        0 => (None, None),
        1 => (Some(x[0]), None),
        n => {
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            (Some(mean), Some(var.sqrt()))
        }
    }
}

impl ExperimentReport {
    pub fn new(
        experiment: ExperimentId,
        points: Vec<SweepPoint>,
        mut measurements: Vec<Measurement>,
    ) -> Self {
        measurements.sort_by_key(|m| (m.sweep_index, m.rep));
        Self {
            experiment,
            points,
            measurements,
        }
    }

    pub fn measurements_at(&self, sweep_index: usize) -> impl Iterator<Item = &Measurement> {
        self.measurements
            .iter()
            .filter(move |m| m.sweep_index == sweep_index)
    }

    /// Mean and sample standard deviation over successful repetitions,
    /// metric by metric (non-finite values are left out).
    pub fn aggregate(&self, sweep_index: usize) -> Aggregate {
        let ok: Vec<&Metrics> = self
            .measurements_at(sweep_index)
            .filter_map(Measurement::metrics)
            .collect();
        let mut mean = [None; 9];
        let mut std = [None; 9];
        for k in 0..9 {
            let vals: Vec<f64> = ok
                .iter()
                .filter_map(|m| m.values()[k])
                .filter(|x| x.is_finite())
                .collect();
            (mean[k], std[k]) = mean_std(&vals);
        }
        Aggregate {
            sweep_index,
            n_ok: ok.len(),
            mean: Metrics::from_values(mean),
            std: Metrics::from_values(std),
        }
    }

    pub fn aggregates(&self) -> Vec<Aggregate> {
        (0..self.points.len()).map(|i| self.aggregate(i)).collect()
    }

    /// Index of the first point matching `pred`.
    pub fn find(&self, pred: impl Fn(&SweepPoint) -> bool) -> Option<usize> {
        self.points.iter().position(pred)
    }

    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let mut header: Vec<String> = [
            "record",
            "experiment",
            "sweep_index",
            "point",
            "rep",
            "seed",
            "status",
        ]
        .map(String::from)
        .to_vec();
        header.extend(METRIC_NAMES.iter().map(|s| s.to_string()));
        header.extend(METRIC_NAMES.iter().map(|s| format!("{s}_std")));
        w.write_record(&header).map_err(csv_err)?;

        let cell = |x: Option<f64>| {
            x.filter(|v| v.is_finite())
                .map_or_else(|| "NA".to_string(), format_f64)
        };
        for m in &self.measurements {
            let (status, metrics) = match &m.outcome {
                Outcome::Ok(x) => ("ok".to_string(), *x),
                Outcome::Failed(e) => (format!("failed: {e}"), Metrics::default()),
                Outcome::Skipped(e) => (format!("skipped: {e}"), Metrics::default()),
            };
            let mut rec = vec![
                "measurement".to_string(),
                self.experiment.to_string(),
                m.sweep_index.to_string(),
                self.points[m.sweep_index].to_string(),
                m.rep.to_string(),
                m.seed.to_string(),
                status,
            ];
            rec.extend(metrics.values().into_iter().map(cell));
            rec.extend(std::iter::repeat_n(String::new(), 9));
            w.write_record(&rec).map_err(csv_err)?;
        }
        for a in self.aggregates() {
            let mut rec = vec![
                "aggregate".to_string(),
                self.experiment.to_string(),
                a.sweep_index.to_string(),
                self.points[a.sweep_index].to_string(),
                String::new(),
                String::new(),
                format!("n_ok={}", a.n_ok),
            ];
            rec.extend(a.mean.values().into_iter().map(cell));
            rec.extend(a.std.values().into_iter().map(cell));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Whitespace-separated table, one line per sweep point:
    /// `sweep_index point n_ok <metric>_mean <metric>_std ...`.
    pub fn write_plot_data<W: Write>(&self, mut sink: W) -> Result<()> {
        let mut header = vec![
            "#".to_string(),
            "sweep_index".into(),
            "point".into(),
            "n_ok".into(),
        ];
        for name in METRIC_NAMES {
            header.push(format!("{name}_mean"));
            header.push(format!("{name}_std"));
        }
        writeln!(sink, "{}", header.join(" "))?;
        let cell = |x: Option<f64>| {
            x.filter(|v| v.is_finite())
                .map_or_else(|| "NA".to_string(), format_f64)
        };
        for a in self.aggregates() {
            let mut line = vec![
                a.sweep_index.to_string(),
                self.points[a.sweep_index].to_string(),
                a.n_ok.to_string(),
            ];
            for (m, s) in a.mean.values().into_iter().zip(a.std.values()) {
                line.push(cell(m));
                line.push(cell(s));
            }
            writeln!(sink, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

fn csv_err(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(points: usize, reps: usize) -> ExperimentReport {
        let pts = (0..points)
            .map(|n| SweepPoint::SampleSize { n: n + 2 })
            .collect();
        let ms = (0..points)
            .flat_map(|i| {
                (0..reps).map(move |k| Measurement {
                    sweep_index: i,
                    rep: k,
                    seed: (i * 100 + k) as u64,
                    outcome: Outcome::Ok(Metrics {
                        mad_test: Some((i + k) as f64),
                        ..Default::default()
                    }),
                })
            })
            .collect();
        ExperimentReport::new(ExperimentId::SampleSize, pts, ms)
    }

    #[test]
    fn empty_grid_is_header_only() {
        let mut out = Vec::new();
        report(0, 0).write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap().lines().count(), 1);
    }

    #[test]
    fn row_counts() {
        let mut out = Vec::new();
        report(5, 30).write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(
            text.lines()
                .filter(|l| l.starts_with("measurement"))
                .count(),
            150
        );
        assert_eq!(
            text.lines().filter(|l| l.starts_with("aggregate")).count(),
            5
        );
        let mut plot = Vec::new();
        report(5, 30).write_plot_data(&mut plot).unwrap();
        assert_eq!(String::from_utf8(plot).unwrap().lines().count(), 6);
    }

    #[test]
    fn aggregate_matches_rows() {
        let r = report(2, 4);
        let a = r.aggregate(1);
        // values 1, 2, 3, 4
        assert_eq!(a.mean.mad_test, Some(2.5));
        assert!((a.std.mad_test.unwrap() - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(a.mean.bd_after, None);
        assert_eq!(a.n_ok, 4);
    }

    #[test]
    fn labels() {
        let p = SweepPoint::Bias {
            factor: Factor::Slope,
            additive: 1.0,
            slope: 0.5,
            noise: 1.0,
        };
        assert_eq!(p.to_string(), "sweep=slope;A=1;S=0.5;M=1");
        let q = SweepPoint::AgeRange {
            span: 10.0,
            lo: 20.0,
            strategy: ReferenceStrategy::AgeMatched,
        };
        assert_eq!(q.to_string(), "span=10;window=20-30;reference=age_matched");
    }
}
