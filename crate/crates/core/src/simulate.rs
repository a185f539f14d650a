//! Monte Carlo exploration over a synthetic tool pool, with and without
//! usage-anchored dropout.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::registry::{
    coverage_rate, entropy_of, sample_visible_subset, top_k_share_of, Modality, RegistryError, ToolCategory, ToolDescriptor,
    ToolRegistry, ToolUsageLedger,
};

const SCOPE: &str = "sim_forecast_short";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolProfile {
    pub id: String,
    pub quality_mean: f64,
    pub quality_sd: f64,
    /// Score the policy assigns before it has tried the tool.
    #[serde(default)]
    pub prior: f64,
    #[serde(default)]
    pub protected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutScenario {
    pub tools: Vec<ToolProfile>,
    pub episodes: usize,
    pub slots: usize,
    pub alpha: f64,
    /// Probability that a slot picks a uniformly random visible tool.
    pub epsilon: f64,
    pub prefixes: Vec<usize>,
    #[serde(default = "five")]
    pub top_k: usize,
}

fn five() -> usize {
    5
}

impl DropoutScenario {
    /// Twelve tools; the first looks best up front and is only marginally
    /// better in fact.
    pub fn biased() -> Self {
        let mut tools = vec![ToolProfile { id: "tool_00".into(), quality_mean: 0.62, quality_sd: 0.1, prior: 0.9, protected: false }];
        for i in 1..12 {
            tools.push(ToolProfile {
                id: format!("tool_{i:02}"),
                quality_mean: 0.5 + 0.01 * i as f64,
                quality_sd: 0.1,
                prior: 0.0,
                protected: false,
            });
        }
        Self { tools, episodes: 100, slots: 2, alpha: 1.0, epsilon: 0.1, prefixes: vec![10, 20, 30, 40, 50, 60, 70, 80, 90, 100], top_k: 5 }
    }

    fn registry(&self) -> Result<ToolRegistry, RegistryError> {
        ToolRegistry::new(
            self.tools
                .iter()
                .map(|t| {
                    let d = ToolDescriptor::new(&t.id, ToolCategory::Forecasting, Modality::Numeric, "simulated tool");
                    if t.protected { d.protected_in("*") } else { d }
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub prefix: usize,
    pub top_k_share: f64,
    pub coverage: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropoutDiagnostics {
    pub seeds: usize,
    pub alpha: f64,
    pub on: Vec<CurvePoint>,
    pub off: Vec<CurvePoint>,
    pub mean_top_k_on: f64,
    pub mean_top_k_off: f64,
}

fn mix(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(episode as u64).rotate_left(17)
}

fn run_once(sc: &DropoutScenario, registry: &ToolRegistry, seed: u64, dropout: bool) -> Result<Vec<CurvePoint>, RegistryError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ledger = ToolUsageLedger::new();
    let mut stats: BTreeMap<&str, (f64, u32)> = BTreeMap::new();
    let mut per_episode: Vec<BTreeSet<String>> = Vec::with_capacity(sc.episodes);
    let universe: BTreeSet<String> = sc.tools.iter().map(|t| t.id.clone()).collect();
    let dists: Vec<Normal<f64>> = sc
        .tools
        .iter()
        .map(|t| Normal::new(t.quality_mean, t.quality_sd.max(0.0)).expect("finite sd"))
        .collect();
    let mut curve = Vec::new();
    for ep in 0..sc.episodes {
        let mut used = Vec::with_capacity(sc.slots);
        for slot in 0..sc.slots {
            let visible = if dropout {
                sample_visible_subset(registry, &ledger, SCOPE, slot, mix(seed, ep), sc.alpha)?
            } else {
                universe.clone()
            };
            let pool: Vec<usize> = (0..sc.tools.len()).filter(|i| visible.contains(&sc.tools[*i].id)).collect();
            let explore: f64 = rng.gen();
            let noise_draw: f64 = rng.gen();
            let pick = if explore < sc.epsilon {
                pool[((noise_draw * pool.len() as f64) as usize).min(pool.len() - 1)]
            } else {
                let score = |i: &usize| {
                    let t = &sc.tools[*i];
                    stats.get(t.id.as_str()).map(|(s, n)| s / *n as f64).unwrap_or(t.prior)
                };
                *pool.iter().max_by(|a, b| score(a).total_cmp(&score(b)).then(b.cmp(a))).expect("pool is never empty")
            };
            let q = dists[pick].sample(&mut rng);
            let e = stats.entry(sc.tools[pick].id.as_str()).or_insert((0.0, 0));
            e.0 += q;
            e.1 += 1;
            used.push(sc.tools[pick].id.clone());
        }
        ledger.record_usage(registry, SCOPE, &used)?;
        per_episode.push(used.into_iter().collect());
        let prefix = ep + 1;
        if sc.prefixes.contains(&prefix) {
            let counts: Vec<u64> = ledger.scope_counts(SCOPE).map(|m| m.values().copied().collect()).unwrap_or_default();
            curve.push(CurvePoint {
                prefix,
                top_k_share: top_k_share_of(counts.iter().copied(), sc.top_k).unwrap_or(0.0),
                coverage: coverage_rate(&universe, &per_episode)?,
                entropy: entropy_of(counts.iter().copied()).unwrap_or(0.0),
            });
        }
    }
    Ok(curve)
}

fn average(curves: &[Vec<CurvePoint>]) -> Vec<CurvePoint> {
    let n = curves.len().max(1) as f64;
    let Some(first) = curves.first() else { return Vec::new() };
    (0..first.len())
        .map(|k| CurvePoint {
            prefix: first[k].prefix,
            top_k_share: curves.iter().map(|c| c[k].top_k_share).sum::<f64>() / n,
            coverage: curves.iter().map(|c| c[k].coverage).sum::<f64>() / n,
            entropy: curves.iter().map(|c| c[k].entropy).sum::<f64>() / n,
        })
        .collect()
}

/// Runs the scenario with dropout on and off over `seeds`, averaging the
/// per-prefix curves. Both arms share the policy random stream per seed.
pub fn simulate_dropout(sc: &DropoutScenario, seeds: &[u64]) -> Result<DropoutDiagnostics, RegistryError> {
    let registry = sc.registry()?;
    let mut on = Vec::with_capacity(seeds.len());
    let mut off = Vec::with_capacity(seeds.len());
    for &s in seeds {
        on.push(run_once(sc, &registry, s, true)?);
        off.push(run_once(sc, &registry, s, false)?);
    }
    let (on, off) = (average(&on), average(&off));
    let mean = |c: &[CurvePoint]| c.iter().map(|p| p.top_k_share).sum::<f64>() / c.len().max(1) as f64;
    Ok(DropoutDiagnostics {
        seeds: seeds.len(),
        alpha: sc.alpha,
        mean_top_k_on: mean(&on),
        mean_top_k_off: mean(&off),
        on,
        off,
    })
}

pub fn render_csv(d: &DropoutDiagnostics) -> String {
    let mut s = String::from("prefix,top_k_on,top_k_off,coverage_on,coverage_off,entropy_on,entropy_off\n");
    for (a, b) in d.on.iter().zip(&d.off) {
        let _ = writeln!(
            s,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            a.prefix, a.top_k_share, b.top_k_share, a.coverage, b.coverage, a.entropy, b.entropy
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_protected_is_identical() {
        let mut sc = DropoutScenario::biased();
        sc.episodes = 30;
        sc.prefixes = vec![10, 20, 30];
        for t in &mut sc.tools {
            t.protected = true;
        }
        let d = simulate_dropout(&sc, &[1, 2, 3]).unwrap();
        assert_eq!(d.on, d.off);
    }

    #[test]
    fn tiny_alpha_is_near_off() {
        let mut sc = DropoutScenario::biased();
        sc.alpha = 1e-4;
        sc.episodes = 50;
        sc.prefixes = vec![50];
        let d = simulate_dropout(&sc, &(0..10).collect::<Vec<_>>()).unwrap();
        assert!((d.mean_top_k_on - d.mean_top_k_off).abs() < 0.05, "{d:?}");
    }
}
