//! Correlation of attacked scores against a linearly decreasing reference.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::stats::{linspace_decreasing, mean_of, median, pearson, spearman};
use super::table::{EvaluationTable, Record};
use crate::error::{Error, Result};

/// The grid variable swept within one correlation slice.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Ascending ε per fixed iteration count.
    #[default]
    Epsilon,
    /// Ascending iteration count per fixed ε.
    Iterations,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ProtocolOptions {
    pub axis: SweepAxis,
    pub aggregate: Aggregate,
    /// Skip incomplete slices instead of failing.
    pub allow_partial: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub attack: String,
    pub white_box_metric: String,
    pub axis: SweepAxis,
    pub aggregate: Aggregate,
    pub plcc_mean_abs: f64,
    pub srcc_mean_abs: f64,
    /// Per video: aggregated `(|PLCC|, |SRCC|)` over its slices.
    pub per_video: BTreeMap<String, (f64, f64)>,
    pub slices: usize,
    /// Slices whose scores were constant; counted as correlation 1.
    pub degenerate_slices: usize,
    pub skipped_slices: usize,
}

/// One slice's absolute correlations and whether either was undefined.
fn slice_correlation(scores: &[f64]) -> Result<(f64, f64, bool)> {
    let reference = linspace_decreasing(scores.len());
    let mut degenerate = false;
    let mut abs_or_one = |r: Result<f64>| match r {
        Ok(v) => Ok(v.abs()),
        Err(Error::UndefinedCorrelation(_)) => {
            degenerate = true;
            Ok(1.0)
        }
        Err(e) => Err(e),
    };
    let p = abs_or_one(pearson(scores, &reference))?;
    let s = abs_or_one(spearman(scores, &reference))?;
    Ok((p, s, degenerate))
}

fn aggregate(values: &[f64], how: Aggregate) -> f64 {
    match how {
        Aggregate::Mean => mean_of(values),
        Aggregate::Median => median(values),
    }
}

/// Correlation summary for one attack label of `table`.
pub fn correlation_protocol(table: &EvaluationTable, attack: &str, opts: ProtocolOptions) -> Result<CorrelationSummary> {
    let records: Vec<&Record> = table.records.iter().filter(|r| r.attack == attack).collect();
    if records.is_empty() {
        return Err(Error::MissingCell(format!("no records for attack `{attack}`")));
    }
    let (sweep, fixed): (Vec<f64>, Vec<f64>) = match opts.axis {
        SweepAxis::Epsilon => (
            table.grid_epsilons.clone(),
            table.grid_iterations.iter().map(|&i| i as f64).collect(),
        ),
        SweepAxis::Iterations => (
            table.grid_iterations.iter().map(|&i| i as f64).collect(),
            table.grid_epsilons.clone(),
        ),
    };
    if sweep.len() < 2 {
        return Err(Error::Config(format!(
            "the swept grid needs at least 2 values to correlate, got {}",
            sweep.len()
        )));
    }
    let coords = |r: &Record| match opts.axis {
        SweepAxis::Epsilon => (r.epsilon, r.iterations as f64),
        SweepAxis::Iterations => (r.iterations as f64, r.epsilon),
    };
    let mut cells: BTreeMap<(&str, u64, u64), f64> = BTreeMap::new();
    for r in &records {
        if let Some(score) = r.attacked_score {
            let (s, f) = coords(r);
            cells.insert((r.video_id.as_str(), f.to_bits(), s.to_bits()), score);
        }
    }
    let videos: Vec<String> = {
        let mut v: Vec<String> = records.iter().map(|r| r.video_id.clone()).collect();
        v.dedup();
        v.sort();
        v.dedup();
        v
    };
    let (mut all_p, mut all_s) = (Vec::new(), Vec::new());
    let mut per_video = BTreeMap::new();
    let (mut degenerate, mut skipped) = (0, 0);
    for video in &videos {
        let (mut vp, mut vs) = (Vec::new(), Vec::new());
        'slice: for &f in &fixed {
            let mut scores = Vec::with_capacity(sweep.len());
            for &s in &sweep {
                match cells.get(&(video.as_str(), f.to_bits(), s.to_bits())) {
                    Some(&v) => scores.push(v),
                    None if opts.allow_partial => {
                        skipped += 1;
                        continue 'slice;
                    }
                    None => {
                        let (eps, it) = match opts.axis {
                            SweepAxis::Epsilon => (s, f),
                            SweepAxis::Iterations => (f, s),
                        };
                        return Err(Error::MissingCell(format!(
                            "attack `{attack}`, video `{video}`, ε = {eps}, I = {it}"
                        )));
                    }
                }
            }
            let (p, s, deg) = slice_correlation(&scores)?;
            if deg {
                degenerate += 1;
            }
            vp.push(p);
            vs.push(s);
        }
        if !vp.is_empty() {
            per_video.insert(video.clone(), (aggregate(&vp, opts.aggregate), aggregate(&vs, opts.aggregate)));
            all_p.extend(vp);
            all_s.extend(vs);
        }
    }
    if all_p.is_empty() {
        return Err(Error::MissingCell(format!("attack `{attack}` has no complete slice")));
    }
    Ok(CorrelationSummary {
        attack: attack.to_string(),
        white_box_metric: records[0].white_box_metric.clone(),
        axis: opts.axis,
        aggregate: opts.aggregate,
        plcc_mean_abs: aggregate(&all_p, opts.aggregate),
        srcc_mean_abs: aggregate(&all_s, opts.aggregate),
        per_video,
        slices: all_p.len(),
        degenerate_slices: degenerate,
        skipped_slices: skipped,
    })
}

/// Summaries for every attack label in the table.
pub fn summarize_all(table: &EvaluationTable, opts: ProtocolOptions) -> Result<Vec<CorrelationSummary>> {
    table
        .attacks()
        .iter()
        .map(|a| correlation_protocol(table, a, opts))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iterations: usize,
    pub plcc: f64,
    pub srcc: f64,
}

/// For each iteration count, the median over videos of the ε-swept
/// absolute correlations.
pub fn iteration_curve(table: &EvaluationTable, attack: &str, allow_partial: bool) -> Result<Vec<CurvePoint>> {
    let mut points = Vec::new();
    for &it in &table.grid_iterations {
        let sub = EvaluationTable::with_grids(
            table
                .records
                .iter()
                .filter(|r| r.attack == attack && r.iterations == it)
                .cloned()
                .collect(),
            table.grid_epsilons.clone(),
            vec![it],
        );
        let summary = correlation_protocol(
            &sub,
            attack,
            ProtocolOptions {
                axis: SweepAxis::Epsilon,
                aggregate: Aggregate::Median,
                allow_partial,
            },
        );
        match summary {
            Ok(s) => points.push(CurvePoint {
                iterations: it,
                plcc: s.plcc_mean_abs,
                srcc: s.srcc_mean_abs,
            }),
            Err(Error::MissingCell(_)) if allow_partial => {}
            Err(e) => return Err(e),
        }
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackKind;

    fn table(score: impl Fn(usize, f64, usize) -> f64) -> EvaluationTable {
        let eps = [0.0, 1.0 / 255.0, 2.0 / 255.0, 5.0 / 255.0];
        let its = [1, 2];
        let mut recs = Vec::new();
        for v in 0..3 {
            for &e in &eps {
                for &i in &its {
                    recs.push(Record {
                        video_id: format!("v{v}"),
                        attack: "a".into(),
                        attack_kind: AttackKind::Ic2vqa,
                        white_box_metric: "m".into(),
                        epsilon: e,
                        iterations: i,
                        clean_score: 0.5,
                        attacked_score: Some(score(v, e, i)),
                        error: None,
                    });
                }
            }
        }
        EvaluationTable::new(recs)
    }

    #[test]
    fn monotone_scores_give_unit_srcc() {
        let dec = correlation_protocol(&table(|_, e, _| 0.9 - e), "a", ProtocolOptions::default()).unwrap();
        assert!((dec.srcc_mean_abs - 1.0).abs() < 1e-12);
        let inc = correlation_protocol(&table(|v, e, i| 0.1 + e * e + (v + i) as f64), "a", ProtocolOptions::default())
            .unwrap();
        assert!((inc.srcc_mean_abs - 1.0).abs() < 1e-12);
        assert_eq!(inc.slices, 6);
        assert_eq!(inc.degenerate_slices, 0);
    }

    #[test]
    fn constant_scores_are_flagged() {
        let s = correlation_protocol(&table(|_, _, _| 0.4), "a", ProtocolOptions::default()).unwrap();
        assert_eq!(s.srcc_mean_abs, 1.0);
        assert_eq!(s.degenerate_slices, 6);
    }

    #[test]
    fn missing_cell_is_named() {
        let mut t = table(|_, e, _| e);
        t.records.retain(|r| !(r.video_id == "v1" && r.iterations == 2 && r.epsilon > 0.01));
        match correlation_protocol(&t, "a", ProtocolOptions::default()) {
            Err(Error::MissingCell(msg)) => assert!(msg.contains("v1") && msg.contains("I = 2"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let partial = correlation_protocol(
            &t,
            "a",
            ProtocolOptions {
                allow_partial: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(partial.slices, 5);
        assert_eq!(partial.skipped_slices, 1);
    }

    #[test]
    fn iteration_axis_and_curve() {
        let t = table(|_, e, i| e + i as f64);
        let s = correlation_protocol(
            &t,
            "a",
            ProtocolOptions {
                axis: SweepAxis::Iterations,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(s.slices, 12);
        assert!((s.plcc_mean_abs - 1.0).abs() < 1e-12);
        let curve = iteration_curve(&t, "a", false).unwrap();
        assert_eq!(curve.len(), 2);
        assert!((curve[0].srcc - 1.0).abs() < 1e-12);
    }
}
