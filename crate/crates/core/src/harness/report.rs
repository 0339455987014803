//! Per-variant reward curves aggregated across seeds.

use std::collections::BTreeMap;
use std::path::Path;

use super::records::{Phase, RunRecord};
use crate::error::{Error, Result};

pub const SUMMARY_HEADER: &str = "variant,episode_index,mean_reward,reward_std,n_seeds,smoothed_mean";

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub variant: String,
    pub episode_index: usize,
    pub mean_reward: f64,
    /// Sample standard deviation; zero for a single seed.
    pub reward_std: f64,
    pub n_seeds: usize,
    /// Trailing moving average of `mean_reward` over `window` episodes.
    pub smoothed_mean: f64,
}

/// Groups post-fault rows by (variant, episode_index).
pub fn summarize(records: &[RunRecord], window: usize) -> Result<Vec<CurvePoint>> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    let mut groups: BTreeMap<(&str, usize), Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.phase == Phase::PostFault) {
        groups
            .entry((r.variant.as_str(), r.episode_index))
            .or_default()
            .push(r.episodic_reward);
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument("no post_fault rows to summarize".into()));
    }
    let mut out: Vec<CurvePoint> = Vec::with_capacity(groups.len());
    for ((variant, episode_index), mut xs) in groups {
        // order-independent sums
        xs.sort_by(f64::total_cmp);
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        out.push(CurvePoint {
            variant: variant.to_string(),
            episode_index,
            mean_reward: mean,
            reward_std: std,
            n_seeds: n,
            smoothed_mean: mean,
        });
    }
    let mut start = 0;
    while start < out.len() {
        let end = start + out[start..].iter().take_while(|p| p.variant == out[start].variant).count();
        let means: Vec<f64> = out[start..end].iter().map(|p| p.mean_reward).collect();
        for (k, p) in out[start..end].iter_mut().enumerate() {
            let lo = (k + 1).saturating_sub(window);
            p.smoothed_mean = means[lo..=k].iter().sum::<f64>() / (k + 1 - lo) as f64;
        }
        start = end;
    }
    Ok(out)
}

pub fn render_summary(points: &[CurvePoint]) -> String {
    let mut s = String::from(SUMMARY_HEADER);
    s.push('\n');
    for p in points {
        s.push_str(&format!(
            "{},{},{:.6},{:.6},{},{:.6}\n",
            p.variant, p.episode_index, p.mean_reward, p.reward_std, p.n_seeds, p.smoothed_mean
        ));
    }
    s
}

/// Writes `<out_dir>/summary.csv` and returns its path.
pub fn write_summary(points: &[CurvePoint], out_dir: &Path) -> Result<std::path::PathBuf> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("summary.csv");
    std::fs::write(&path, render_summary(points)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(variant: &str, seed: u64, ep: usize, r: f64) -> RunRecord {
        RunRecord {
            run_id: format!("x-{variant}-s{seed}"),
            variant: variant.into(),
            seed,
            phase: Phase::PostFault,
            episode_index: ep,
            env_steps_so_far: 0,
            episodic_reward: r,
        }
    }

    #[test]
    fn two_seed_statistics() {
        let pts = summarize(&[row("baseline", 0, 0, 1.0), row("baseline", 1, 0, 3.0)], 10).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].mean_reward, 2.0);
        assert_eq!(pts[0].reward_std, 2f64.sqrt());
        assert_eq!(pts[0].n_seeds, 2);
    }

    #[test]
    fn single_seed_and_window() {
        let rows = [row("a", 0, 0, 1.0), row("a", 0, 1, 2.0), row("a", 0, 2, 6.0), row("b", 0, 0, 5.0)];
        let pts = summarize(&rows, 2).unwrap();
        assert!(pts.iter().all(|p| p.reward_std == 0.0 && p.n_seeds == 1));
        let smooth: Vec<f64> = pts.iter().map(|p| p.smoothed_mean).collect();
        assert_eq!(smooth, vec![1.0, 1.5, 4.0, 5.0]);
        let raw = summarize(&rows, 1).unwrap();
        assert!(raw.iter().all(|p| p.smoothed_mean == p.mean_reward));
    }

    #[test]
    fn nothing_post_fault_is_an_error() {
        let mut r = row("a", 0, 0, 1.0);
        r.phase = Phase::Pretrain;
        assert!(summarize(&[r], 10).is_err());
    }
}
