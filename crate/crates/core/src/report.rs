//! Score trajectories, initial-vs-last comparison rows and baseline tables
//! rebuilt from a run log. Output carries no timestamps, so rebuilding from
//! the same log is byte-stable.

use std::fmt::Write;

use thiserror::Error;

use crate::optimizer::{BaselineSystem, IterationRecord};
use crate::runlog::{RecordBody, RunLogRecord};
use crate::selector::Strategy;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReportError {
    #[error("run log contains no iteration or baseline summaries")]
    EmptyRun,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRow {
    pub run: usize,
    pub iteration: u32,
    pub instructions: usize,
    pub best_mean: f64,
    pub average_mean: f64,
    pub best_so_far: f64,
}

/// Initial-vs-last scores for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub run: usize,
    pub batch_size: usize,
    pub strategy: Strategy,
    pub iterations: usize,
    pub initial: f64,
    pub last: f64,
}

impl ComparisonRow {
    pub fn delta(&self) -> f64 {
        self.last - self.initial
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineRow {
    pub system: BaselineSystem,
    pub mean: Option<f64>,
    pub scored: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub iterations: Vec<IterationRow>,
    pub comparisons: Vec<ComparisonRow>,
    pub baselines: Vec<BaselineRow>,
}

fn best(r: &IterationRecord) -> f64 {
    r.best_mean().map(|s| s.value()).unwrap_or(f64::NAN)
}

/// A new run starts when the iteration counter does not increase or when
/// strategy or batch size change.
pub fn build_report(records: &[RunLogRecord]) -> Result<Report, ReportError> {
    let mut runs: Vec<Vec<&IterationRecord>> = Vec::new();
    let mut baselines = Vec::new();
    for record in records {
        match &record.body {
            RecordBody::IterationSummary(it) => {
                let continues = runs.last().and_then(|r| r.last()).is_some_and(|prev| {
                    it.iteration > prev.iteration
                        && it.strategy == prev.strategy
                        && it.batch_size == prev.batch_size
                });
                if continues {
                    runs.last_mut().expect("non-empty").push(it);
                } else {
                    runs.push(vec![it]);
                }
            }
            RecordBody::BaselineSummary(b) => baselines.push(BaselineRow {
                system: b.system,
                mean: b.mean.map(|m| m.value()),
                scored: b.items.len(),
            }),
            RecordBody::ScoreEvent(_) | RecordBody::Warning(_) => {}
        }
    }
    if runs.is_empty() && baselines.is_empty() {
        return Err(ReportError::EmptyRun);
    }
    let mut report = Report {
        baselines,
        ..Report::default()
    };
    for (run, its) in runs.iter().enumerate() {
        for it in its {
            report.iterations.push(IterationRow {
                run,
                iteration: it.iteration,
                instructions: it.instruction_scores.len(),
                best_mean: best(it),
                average_mean: it.average_mean().unwrap_or(f64::NAN),
                best_so_far: it.best_so_far.value(),
            });
        }
        let first = its.first().expect("non-empty run");
        let last = its.last().expect("non-empty run");
        report.comparisons.push(ComparisonRow {
            run,
            batch_size: first.batch_size,
            strategy: first.strategy,
            iterations: its.len(),
            initial: best(first),
            last: best(last),
        });
    }
    Ok(report)
}

impl Report {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str("Selection comparison\n");
        let _ = writeln!(
            out,
            "{:>4}  {:>10}  {:<15}  {:>10}  {:>9}  {:>9}  {:>8}",
            "run", "batch size", "strategy", "iterations", "initial", "last", "delta"
        );
        for c in &self.comparisons {
            let _ = writeln!(
                out,
                "{:>4}  {:>10}  {:<15}  {:>10}  {:>9.2}  {:>9.2}  {:>+8.2}",
                c.run,
                c.batch_size,
                c.strategy.as_str(),
                c.iterations,
                c.initial,
                c.last,
                c.delta()
            );
        }
        out.push_str("\nPer-iteration scores\n");
        let _ = writeln!(
            out,
            "{:>4}  {:>9}  {:>12}  {:>9}  {:>9}  {:>11}",
            "run", "iteration", "instructions", "best", "mean", "best so far"
        );
        for r in &self.iterations {
            let _ = writeln!(
                out,
                "{:>4}  {:>9}  {:>12}  {:>9.4}  {:>9.4}  {:>11.4}",
                r.run, r.iteration, r.instructions, r.best_mean, r.average_mean, r.best_so_far
            );
        }
        if !self.baselines.is_empty() {
            out.push_str("\nBaseline comparison\n");
            let _ = writeln!(out, "{:<22}  {:>9}  {:>6}", "system", "score", "scored");
            for b in &self.baselines {
                let mean = b
                    .mean
                    .map_or_else(|| "n/a".to_string(), |m| format!("{m:.2}"));
                let _ = writeln!(
                    out,
                    "{:<22}  {:>9}  {:>6}",
                    b.system.label(),
                    mean,
                    b.scored
                );
            }
        }
        out
    }

    /// Three CSV tables separated by blank lines, each with its own header.
    pub fn render_csv(&self) -> String {
        let mut out = String::from("run,batch_size,strategy,iterations,initial,last,delta\n");
        for c in &self.comparisons {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                c.run,
                c.batch_size,
                c.strategy.as_str(),
                c.iterations,
                c.initial,
                c.last,
                c.delta()
            );
        }
        out.push_str("\nrun,iteration,instructions,best_mean,average_mean,best_so_far\n");
        for r in &self.iterations {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.run, r.iteration, r.instructions, r.best_mean, r.average_mean, r.best_so_far
            );
        }
        if !self.baselines.is_empty() {
            out.push_str("\nsystem,mean,scored\n");
            for b in &self.baselines {
                let mean = b.mean.map_or_else(String::new, |m| m.to_string());
                let _ = writeln!(out, "{},{},{}", b.system.label(), mean, b.scored);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{GradientReport, Instruction};
    use crate::optimizer::InstructionScore;
    use crate::scoring::ScoreValue;
    use crate::selector::ArmId;

    fn s(v: f64) -> ScoreValue {
        ScoreValue::new(v).unwrap()
    }

    fn summary(
        iteration: u32,
        strategy: Strategy,
        batch_size: usize,
        means: &[f64],
    ) -> RunLogRecord {
        let instruction = Instruction::initial(ArmId(0), "I").unwrap();
        let best = means.iter().cloned().fold(f64::MIN, f64::max);
        RunLogRecord {
            timestamp: "t".into(),
            body: RecordBody::IterationSummary(IterationRecord {
                iteration,
                strategy,
                batch_size,
                queries: vec!["q".into()],
                instruction_scores: means
                    .iter()
                    .enumerate()
                    .map(|(i, m)| InstructionScore {
                        instruction_id: ArmId(i as u64),
                        mean_score: s(*m),
                        pulls: 1,
                        running_mean: s(*m),
                    })
                    .collect(),
                selected_arm: ArmId(0),
                worst_arm: ArmId(0),
                gradient: GradientReport {
                    inferences: vec![],
                    improvements: vec!["x".into()],
                },
                new_instructions: vec![],
                pruned: vec![],
                pool_after: vec![ArmId(0)],
                best_instruction: instruction,
                best_so_far: s(best),
            }),
        }
    }

    #[test]
    fn initial_and_last_columns() {
        let mut records = vec![summary(0, Strategy::Ucb, 1, &[25.54])];
        for i in 1..9 {
            records.push(summary(i, Strategy::Ucb, 1, &[26.0, 27.0]));
        }
        records.push(summary(9, Strategy::Ucb, 1, &[27.1, 28.78]));
        let report = build_report(&records).unwrap();
        assert_eq!(report.comparisons.len(), 1);
        let row = &report.comparisons[0];
        assert_eq!((row.initial, row.last), (25.54, 28.78));
        assert_eq!(row.iterations, 10);
        let text = report.render_text();
        assert!(text.contains("25.54") && text.contains("28.78"));
        assert!(report.render_csv().contains("0,1,ucb,10,25.54,28.78,"));
    }

    #[test]
    fn single_iteration_initial_equals_last() {
        let report = build_report(&[summary(0, Strategy::Greedy, 3, &[27.62, 26.0])]).unwrap();
        assert_eq!(report.comparisons[0].initial, report.comparisons[0].last);
    }

    #[test]
    fn two_strategies_two_rows() {
        let records = vec![
            summary(0, Strategy::Greedy, 3, &[27.62]),
            summary(1, Strategy::Greedy, 3, &[28.02]),
            summary(0, Strategy::EpsilonGreedy, 3, &[27.98]),
            summary(1, Strategy::EpsilonGreedy, 3, &[28.72]),
        ];
        let report = build_report(&records).unwrap();
        assert_eq!(report.comparisons.len(), 2);
        assert_eq!(report.comparisons[1].strategy, Strategy::EpsilonGreedy);
    }

    #[test]
    fn no_summaries_is_empty_run() {
        let w = RunLogRecord {
            timestamp: "t".into(),
            body: RecordBody::warning(None, "x"),
        };
        assert_eq!(build_report(&[w]), Err(ReportError::EmptyRun));
    }

    #[test]
    fn rendering_is_stable() {
        let records = vec![
            summary(0, Strategy::Ucb, 3, &[28.3]),
            summary(1, Strategy::Ucb, 3, &[27.69]),
        ];
        let a = build_report(&records).unwrap();
        let b = build_report(&records).unwrap();
        assert_eq!(a.render_text(), b.render_text());
        assert_eq!(a.render_csv(), b.render_csv());
    }
}
