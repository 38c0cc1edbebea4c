//! Trains model variants over a grid of focusing and context modes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::focus::{ContextMode, FocusMode};
use crate::model::{BagcnModel, ModelConfig};
use crate::train::{train_model, PreparedSet, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    pub focus: FocusMode,
    pub context: ContextMode,
}

impl Variant {
    pub fn new(focus: FocusMode, context: ContextMode) -> Self {
        Variant { focus, context }
    }

    /// Without focusing the context mode has no parameters, so it is not shown.
    pub fn label(&self) -> String {
        match self.focus {
            FocusMode::Off => FocusMode::Off.label().into(),
            f => format!("{} {}", f.label(), self.context.label()),
        }
    }
}

/// Every focusing mode with every context mode; `wo/F` appears once.
pub fn full_grid() -> Vec<Variant> {
    let mut grid = vec![Variant::new(FocusMode::Off, ContextMode::None)];
    for f in [FocusMode::Max, FocusMode::Avg, FocusMode::Att] {
        grid.extend(ContextMode::ALL.iter().map(|&c| Variant::new(f, c)));
    }
    grid
}

/// Focusing modes under bidirectional context, then context modes under
/// attention focusing.
pub fn focus_and_context_grid() -> Vec<Variant> {
    let mut grid: Vec<Variant> = FocusMode::ALL
        .iter()
        .map(|&f| Variant::new(f, if f == FocusMode::Off { ContextMode::None } else { ContextMode::Bi }))
        .collect();
    grid.push(Variant::new(FocusMode::Att, ContextMode::None));
    grid.push(Variant::new(FocusMode::Att, ContextMode::Uni));
    grid
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub focus: FocusMode,
    pub context: ContextMode,
    pub seed: u64,
    pub params: usize,
    pub top1: f64,
}

/// Trains each variant for each seed on identical data and batch order.
/// Rows come back in grid order, seeds innermost.
pub fn run_ablation(
    grid: &[Variant],
    seeds: &[u64],
    base: &ModelConfig,
    cfg: &TrainConfig,
    train: &PreparedSet,
    test: &PreparedSet,
) -> Result<Vec<AblationRow>> {
    let jobs: Vec<(Variant, u64)> = grid.iter().flat_map(|&v| seeds.iter().map(move |&s| (v, s))).collect();
    jobs.par_iter()
        .map(|&(v, seed)| {
            let mcfg = base.clone().with_modes(v.focus, v.context);
            let mut model = BagcnModel::build(&mcfg, seed)?;
            let run_cfg = TrainConfig { seed, out_dir: None, ..cfg.clone() };
            let summary = train_model(&mut model, train, Some(test), &run_cfg, &mut |_| {})?;
            Ok(AblationRow {
                variant: v.label(),
                focus: v.focus,
                context: v.context,
                seed,
                params: model.num_params(),
                top1: summary.final_test.map_or(0.0, |m| m.top1),
            })
        })
        .collect()
}

/// Mean and sample standard deviation of top-1 per variant, in first-seen order.
pub fn summarize(rows: &[AblationRow]) -> Vec<(String, usize, f64, f64)> {
    let mut order: Vec<String> = Vec::new();
    for r in rows {
        if !order.contains(&r.variant) {
            order.push(r.variant.clone());
        }
    }
    order
        .into_iter()
        .map(|name| {
            let xs: Vec<&AblationRow> = rows.iter().filter(|r| r.variant == name).collect();
            let n = xs.len() as f64;
            let mean = xs.iter().map(|r| r.top1).sum::<f64>() / n;
            let var = if xs.len() > 1 {
                xs.iter().map(|r| (r.top1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            (name, xs[0].params, mean, var.sqrt())
        })
        .collect()
}

pub fn mean_top1(rows: &[AblationRow], v: Variant) -> Option<f64> {
    let xs: Vec<f64> = rows.iter().filter(|r| r.focus == v.focus && r.context == v.context).map(|r| r.top1).collect();
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

pub fn to_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant,focus,context,seed,params,top1\n");
    for r in rows {
        s += &format!(
            "{},{},{},{},{},{:.6}\n",
            r.variant,
            r.focus.label(),
            r.context.label(),
            r.seed,
            r.params,
            r.top1
        );
    }
    s
}

pub fn render_table(rows: &[AblationRow]) -> String {
    let summary = summarize(rows);
    let w = summary.iter().map(|s| s.0.len()).max().unwrap_or(7).max(7);
    let mut s = format!("{:<w$}  {:>8}  {:>16}\n", "variant", "params", "top-1 (mean±sd)");
    for (name, params, mean, sd) in summary {
        s += &format!("{name:<w$}  {params:>8}  {:>8.2}% ± {:>4.2}\n", 100.0 * mean, 100.0 * sd);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(full_grid().len(), 10);
        let g = focus_and_context_grid();
        assert_eq!(g.len(), 6);
        assert_eq!(g[0].label(), "wo/F");
        assert_eq!(g[3].label(), "att 2-Ca");
    }

    #[test]
    fn table_rendering() {
        let row = |seed, top1| AblationRow {
            variant: "att 2-Ca".into(),
            focus: FocusMode::Att,
            context: ContextMode::Bi,
            seed,
            params: 10,
            top1,
        };
        let rows = vec![row(0, 0.9), row(1, 1.0)];
        let s = summarize(&rows);
        assert!((s[0].2 - 0.95).abs() < 1e-12);
        assert!((s[0].3 - (0.005f64).sqrt()).abs() < 1e-12);
        assert!(to_csv(&rows).lines().count() == 3);
        assert!(render_table(&rows).contains("95.00%"));
        assert_eq!(mean_top1(&rows, Variant::new(FocusMode::Att, ContextMode::Bi)), Some(0.95));
    }
}
