//! Application generation and per-VM demand traces.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::domain::{ApplicationSpec, ComponentKind, ComponentSpec, EPS};
use crate::error::{Error, Result};
use crate::SimRng;

/// Samples in a day-long trace at 5-minute resolution.
pub const TRACE_SAMPLES: usize = 288;

/// Standard deviation separating the two component design patterns.
pub const PATTERN_STDDEV_SPLIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignPattern {
    /// Optional utilizations and discounts both spread by less than 0.1.
    #[default]
    Approximate,
    /// At least one of the two spreads by 0.1 or more.
    Different,
}

impl DesignPattern {
    fn default_sigma(self) -> f64 {
        match self {
            DesignPattern::Approximate => 0.01,
            DesignPattern::Different => 0.2,
        }
    }

    pub fn matches(self, utilization_sd: f64, discount_sd: f64) -> bool {
        let approximate =
            utilization_sd < PATTERN_STDDEV_SPLIT && discount_sd < PATTERN_STDDEV_SPLIT;
        match self {
            DesignPattern::Approximate => approximate,
            DesignPattern::Different => !approximate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ComponentGenConfig {
    pub optional_utilization_threshold: f64,
    pub optional_percentage: f64,
    pub connected_percentage: f64,
    /// Defaults to the optional utilization threshold.
    pub discount_total: Option<f64>,
    pub component_count: usize,
    pub pattern: DesignPattern,
    /// Standard deviation of the per-component normal draw; defaults per pattern.
    pub sigma: Option<f64>,
    pub max_retries: usize,
}

impl Default for ComponentGenConfig {
    fn default() -> Self {
        Self {
            optional_utilization_threshold: 0.5,
            optional_percentage: 0.5,
            connected_percentage: 0.0,
            discount_total: None,
            component_count: 8,
            pattern: DesignPattern::Approximate,
            sigma: None,
            max_retries: 1000,
        }
    }
}

impl ComponentGenConfig {
    pub fn discount_total(&self) -> f64 {
        self.discount_total
            .unwrap_or(self.optional_utilization_threshold)
    }

    pub fn sigma(&self) -> f64 {
        self.sigma.unwrap_or_else(|| self.pattern.default_sigma())
    }

    pub fn optional_count(&self) -> usize {
        ceil_share(self.optional_percentage, self.component_count)
    }

    pub fn validate(&self) -> Result<()> {
        let fractions = [
            ("optional_utilization_threshold", self.optional_utilization_threshold),
            ("optional_percentage", self.optional_percentage),
            ("connected_percentage", self.connected_percentage),
            ("discount_total", self.discount_total()),
        ];
        for (name, v) in fractions {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if self.component_count == 0 {
            return Err(Error::Config("component_count must be at least 1".into()));
        }
        if !(self.sigma() >= 0.0) {
            return Err(Error::Config(format!("sigma must be non-negative, got {}", self.sigma())));
        }
        let n_opt = self.optional_count();
        if n_opt == 0 && (self.optional_utilization_threshold > 0.0 || self.discount_total() > 0.0) {
            return Err(Error::Config(
                "a positive optional threshold or discount needs at least one optional component"
                    .into(),
            ));
        }
        if self.pattern == DesignPattern::Different && n_opt < 2 {
            return Err(Error::Config(
                "the different pattern needs at least two optional components".into(),
            ));
        }
        if self.pattern == DesignPattern::Different {
            // Largest population sd of n non-negative shares summing to b is
            // b * sqrt(n - 1) / n, reached with everything in one share.
            let n = n_opt as f64;
            let widest = |b: f64| b * (n - 1.0).sqrt() / n;
            let best = widest(self.optional_utilization_threshold).max(widest(self.discount_total()));
            if best < PATTERN_STDDEV_SPLIT {
                return Err(Error::Config(format!(
                    "the different pattern is unreachable with {n_opt} optional components: \
                     their standard deviation cannot exceed {best:.3} (split {PATTERN_STDDEV_SPLIT})"
                )));
            }
        }
        Ok(())
    }
}

fn ceil_share(fraction: f64, count: usize) -> usize {
    ((fraction * count as f64 - EPS).ceil().max(0.0) as usize).min(count)
}

fn population_sd(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `n` draws from N(total / n, sigma) truncated at zero and rescaled to sum
/// to `total`. `None` if every draw truncated to zero.
fn draw_shares(rng: &mut SimRng, n: usize, total: f64, sigma: f64) -> Option<Vec<f64>> {
    if total <= 0.0 {
        return Some(vec![0.0; n]);
    }
    let mean = total / n as f64;
    let normal = Normal::new(mean, sigma).ok()?;
    let raw: Vec<f64> = (0..n).map(|_| normal.sample(rng).max(0.0)).collect();
    let sum: f64 = raw.iter().sum();
    if sum <= 0.0 {
        return None;
    }
    let mut shares: Vec<f64> = raw.iter().map(|x| x / sum * total).collect();
    // Push the rounding residue onto the largest share so the sum is exact.
    let residue = total - shares.iter().sum::<f64>();
    if let Some(max) = shares.iter_mut().max_by(|a, b| a.total_cmp(b)) {
        *max = (*max + residue).clamp(0.0, 1.0);
    }
    Some(shares)
}

/// Generates one application from `cfg`.
///
/// Mandatory components come first and split the non-optional utilization
/// evenly. If every configured component is optional and the threshold is
/// below one, an extra mandatory component carries the remainder.
pub fn generate_application(cfg: &ComponentGenConfig, rng: &mut SimRng) -> Result<ApplicationSpec> {
    cfg.validate()?;
    let count = cfg.component_count;
    let n_opt = cfg.optional_count();
    let n_mand = count - n_opt;
    let threshold = cfg.optional_utilization_threshold;
    let sigma = cfg.sigma();

    let mut drawn = None;
    for _ in 0..cfg.max_retries.max(1) {
        let Some(u) = draw_shares(rng, n_opt, threshold, sigma) else {
            continue;
        };
        let Some(d) = draw_shares(rng, n_opt, cfg.discount_total(), sigma) else {
            continue;
        };
        if n_opt == 0 || cfg.pattern.matches(population_sd(&u), population_sd(&d)) {
            drawn = Some((u, d));
            break;
        }
    }
    let (utils, discounts) = drawn.ok_or_else(|| {
        Error::Generation(format!(
            "no draw matched the {:?} pattern (standard deviation split {PATTERN_STDDEV_SPLIT}) \
             after {} attempts",
            cfg.pattern, cfg.max_retries
        ))
    })?;

    let residual = (1.0 - threshold).max(0.0);
    let mut components = Vec::with_capacity(count + 1);
    let mandatory_slots = if n_mand == 0 && residual > EPS { 1 } else { n_mand };
    for _ in 0..mandatory_slots {
        components.push(ComponentSpec {
            id: 0,
            kind: ComponentKind::Mandatory,
            utilization: residual / mandatory_slots as f64,
            discount: 0.0,
            connection_tag: None,
        });
    }
    for (u, d) in utils.into_iter().zip(discounts) {
        components.push(ComponentSpec {
            id: 0,
            kind: ComponentKind::Optional,
            utilization: u,
            discount: d,
            connection_tag: None,
        });
    }

    // Connection groups over the configured components: pairs, with a
    // trailing triple when the count is odd.
    let n_conn = ceil_share(cfg.connected_percentage, count);
    let mut picks: Vec<usize> = (0..components.len()).collect();
    picks.shuffle(rng);
    picks.truncate(n_conn);
    let mut chunks: Vec<Vec<usize>> = picks.chunks(2).map(<[usize]>::to_vec).collect();
    if chunks.len() > 1 && chunks.last().is_some_and(|c| c.len() == 1) {
        let last = chunks.pop().unwrap();
        chunks.last_mut().unwrap().extend(last);
    }
    for (tag, group) in (1u32..).zip(chunks) {
        for i in group {
            components[i].connection_tag = Some(tag);
        }
    }

    ApplicationSpec::new(components)
}

/// Reads one day-file of CPU percentages (one integer 0-100 per line) and
/// fits it to [`TRACE_SAMPLES`] fractions.
pub fn load_planetlab_trace(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut samples = Vec::with_capacity(TRACE_SAMPLES);
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let v: u32 = line.parse().map_err(|_| Error::TraceParse {
            path: path.to_path_buf(),
            line: i + 1,
            message: format!("`{line}` is not a non-negative integer"),
        })?;
        if v > 100 {
            return Err(Error::TraceParse {
                path: path.to_path_buf(),
                line: i + 1,
                message: format!("{v} exceeds 100%"),
            });
        }
        samples.push(v as f64 / 100.0);
    }
    if samples.is_empty() {
        return Err(Error::Trace {
            path: path.to_path_buf(),
            message: "file holds no samples".into(),
        });
    }
    if samples.len() != TRACE_SAMPLES {
        log::warn!(
            "{}: {} samples, fitting to {TRACE_SAMPLES}",
            path.display(),
            samples.len()
        );
    }
    Ok(fit_to_len(samples, TRACE_SAMPLES))
}

/// Pads by holding the last value, or truncates.
pub fn fit_to_len(mut samples: Vec<f64>, len: usize) -> Vec<f64> {
    if let Some(&last) = samples.last() {
        samples.resize(len, last);
    }
    samples.truncate(len);
    samples
}

/// All regular files in `dir`, sorted by name, loaded as traces.
pub fn load_trace_dir(dir: &Path) -> Result<Vec<Arc<[f64]>>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::Trace {
        path: dir.to_path_buf(),
        message: format!("cannot read trace directory: {e}"),
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Trace {
            path: dir.to_path_buf(),
            message: "trace directory is empty".into(),
        });
    }
    files
        .iter()
        .map(|f| load_planetlab_trace(f).map(Arc::from))
        .collect()
}

/// Where per-VM requested utilization comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceSource {
    /// A directory of day-files, assigned to VMs round-robin.
    PlanetLab { dir: PathBuf },
    /// Mean-reverting random walk clamped to `[0, 1]`. Each VM draws its own
    /// long-run level uniformly from `mean +/- spread`. The default mimics
    /// PlanetLab day traces: low mean load with large swings.
    RandomWalk {
        mean: f64,
        spread: f64,
        step: f64,
        reversion: f64,
    },
    Constant { value: f64 },
}

impl Default for TraceSource {
    fn default() -> Self {
        TraceSource::RandomWalk {
            mean: 0.2,
            spread: 0.15,
            step: 0.15,
            reversion: 0.2,
        }
    }
}

impl TraceSource {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TraceSource::PlanetLab { ref dir } => {
                if !dir.is_dir() {
                    return Err(Error::Trace {
                        path: dir.clone(),
                        message: "trace directory does not exist".into(),
                    });
                }
            }
            TraceSource::RandomWalk {
                mean,
                spread,
                step,
                reversion,
            } => {
                if !(0.0..=1.0).contains(&mean)
                    || !(spread >= 0.0)
                    || !(step >= 0.0)
                    || !(0.0..=1.0).contains(&reversion)
                {
                    return Err(Error::Config(
                        "random walk needs mean and reversion in [0, 1] and non-negative spread and step"
                            .into(),
                    ));
                }
            }
            TraceSource::Constant { value } => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(Error::Config(format!("constant demand {value} is outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// Demand series for each of `vms` VMs over `horizon` intervals.
    pub fn series(&self, vms: usize, horizon: usize, seed: u64) -> Result<Vec<Arc<[f64]>>> {
        self.validate()?;
        match self {
            TraceSource::PlanetLab { dir } => {
                let traces = load_trace_dir(dir)?;
                Ok((0..vms)
                    .map(|i| Arc::from(fit_to_len(traces[i % traces.len()].to_vec(), horizon)))
                    .collect())
            }
            _ => Ok((0..vms)
                .map(|i| {
                    let mut rng = SimRng::seed_from_u64(seed);
                    rng.set_stream(i as u64 + 1);
                    Arc::from(self.synthetic_series(&mut rng, horizon))
                })
                .collect()),
        }
    }

    fn synthetic_series(&self, rng: &mut SimRng, horizon: usize) -> Vec<f64> {
        match *self {
            TraceSource::Constant { value } => vec![value; horizon],
            TraceSource::RandomWalk {
                mean,
                spread,
                step,
                reversion,
            } => {
                let level = (mean + spread * (2.0 * rng.random::<f64>() - 1.0)).clamp(0.0, 1.0);
                let noise = Normal::new(0.0, step).expect("step validated non-negative");
                let mut x = level;
                (0..horizon)
                    .map(|_| {
                        let current = x;
                        x = (x + reversion * (level - x) + noise.sample(rng)).clamp(0.0, 1.0);
                        current
                    })
                    .collect()
            }
            TraceSource::PlanetLab { .. } => unreachable!("file traces are not synthetic"),
        }
    }
}

/// Demand of one synthetic source at interval `t`.
pub fn synthetic_demand(source: &TraceSource, seed: u64, t: usize) -> Result<f64> {
    if matches!(source, TraceSource::PlanetLab { .. }) {
        return Err(Error::Config("file-backed traces are not synthetic".into()));
    }
    let series = source.series(1, t + 1, seed)?;
    Ok(series[0][t])
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn rng(seed: u64) -> SimRng {
        SimRng::seed_from_u64(seed)
    }

    fn optional_stats(app: &ApplicationSpec) -> (usize, f64, f64) {
        (
            app.optional().count(),
            app.optional_utilization_threshold(),
            app.total_discount(),
        )
    }

    #[test]
    fn reference_shaped_application() {
        let cfg = ComponentGenConfig {
            optional_utilization_threshold: 0.5,
            optional_percentage: 0.5,
            connected_percentage: 0.25,
            discount_total: Some(0.5),
            component_count: 8,
            pattern: DesignPattern::Different,
            ..Default::default()
        };
        let app = generate_application(&cfg, &mut rng(1)).unwrap();
        let (n, u, d) = optional_stats(&app);
        assert_eq!(app.len(), 8);
        assert_eq!(n, 4);
        assert!((u - 0.5).abs() < 1e-9);
        assert!((d - 0.5).abs() < 1e-9);
        let tagged = app.components().iter().filter(|c| c.connection_tag.is_some()).count();
        assert_eq!(tagged, 2);
    }

    #[test]
    fn zero_sigma_splits_evenly() {
        let cfg = ComponentGenConfig {
            optional_utilization_threshold: 1.0,
            optional_percentage: 1.0,
            component_count: 4,
            sigma: Some(0.0),
            ..Default::default()
        };
        let app = generate_application(&cfg, &mut rng(2)).unwrap();
        assert_eq!(app.len(), 4);
        for c in app.components() {
            assert!(c.is_optional());
            assert!((c.utilization - 0.25).abs() < 1e-12);
            assert!((c.discount - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn no_connections_when_percentage_zero() {
        let app = generate_application(&ComponentGenConfig::default(), &mut rng(3)).unwrap();
        assert!(app.components().iter().all(|c| c.connection_tag.is_none()));
    }

    #[test]
    fn all_optional_below_full_threshold_adds_base_component() {
        let cfg = ComponentGenConfig {
            optional_percentage: 1.0,
            optional_utilization_threshold: 0.5,
            ..Default::default()
        };
        let app = generate_application(&cfg, &mut rng(4)).unwrap();
        assert_eq!(app.len(), 9);
        assert_eq!(app.components()[0].kind, ComponentKind::Mandatory);
        assert!((app.components()[0].utilization - 0.5).abs() < 1e-12);
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let cfg = ComponentGenConfig {
            optional_percentage: 0.0,
            ..Default::default()
        };
        assert!(matches!(generate_application(&cfg, &mut rng(5)), Err(Error::Config(_))));
        let cfg = ComponentGenConfig {
            pattern: DesignPattern::Different,
            sigma: Some(0.0),
            max_retries: 5,
            ..Default::default()
        };
        assert!(matches!(
            generate_application(&cfg, &mut rng(5)),
            Err(Error::Generation(_))
        ));
        // 0.25 over 6 shares peaks at 0.25 * sqrt(5) / 6 = 0.093
        let cfg = ComponentGenConfig {
            pattern: DesignPattern::Different,
            optional_utilization_threshold: 0.25,
            optional_percentage: 0.75,
            ..Default::default()
        };
        let err = generate_application(&cfg, &mut rng(5)).unwrap_err();
        assert!(err.to_string().contains("0.093"), "{err}");
    }

    #[test]
    fn patterns_are_honoured() {
        for (pattern, seed) in [(DesignPattern::Approximate, 6), (DesignPattern::Different, 7)] {
            let cfg = ComponentGenConfig {
                pattern,
                ..Default::default()
            };
            for s in 0..20 {
                let app = generate_application(&cfg, &mut rng(seed * 100 + s)).unwrap();
                let u: Vec<f64> = app.optional().map(|c| c.utilization).collect();
                let d: Vec<f64> = app.optional().map(|c| c.discount).collect();
                assert!(pattern.matches(population_sd(&u), population_sd(&d)));
            }
        }
    }

    #[test]
    fn odd_connection_count_makes_a_triple() {
        let cfg = ComponentGenConfig {
            connected_percentage: 0.375,
            ..Default::default()
        };
        let app = generate_application(&cfg, &mut rng(8)).unwrap();
        let tagged: Vec<u32> = app.components().iter().filter_map(|c| c.connection_tag).collect();
        assert_eq!(tagged.len(), 3);
        assert!(tagged.iter().all(|&t| t == tagged[0]));
    }

    fn write_trace(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    #[test]
    fn planetlab_constant_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_trace(dir.path(), "a", &"85\n".repeat(TRACE_SAMPLES));
        let s = load_planetlab_trace(&p).unwrap();
        assert_eq!(s.len(), TRACE_SAMPLES);
        assert!(s.iter().all(|&x| x == 0.85));
        let p = write_trace(dir.path(), "b", "0\n0\n");
        assert!(load_planetlab_trace(&p).unwrap().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn planetlab_fit_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write_trace(dir.path(), "short", "10\n20\n");
        let s = load_planetlab_trace(&p).unwrap();
        assert_eq!((s[0], s[1], s[TRACE_SAMPLES - 1]), (0.1, 0.2, 0.2));
        let p = write_trace(dir.path(), "long", &"5\n".repeat(400));
        assert_eq!(load_planetlab_trace(&p).unwrap().len(), TRACE_SAMPLES);
        let p = write_trace(dir.path(), "bad", "10\nabc\n");
        assert!(matches!(
            load_planetlab_trace(&p),
            Err(Error::TraceParse { line: 2, .. })
        ));
        let p = write_trace(dir.path(), "empty", "");
        assert!(matches!(load_planetlab_trace(&p), Err(Error::Trace { .. })));
    }

    #[test]
    fn day_files_become_independent_inputs() {
        let dir = tempfile::tempdir().unwrap();
        for day in 0..10 {
            write_trace(dir.path(), &format!("day{day:02}"), &format!("{}\n", day * 5));
        }
        let traces = load_trace_dir(dir.path()).unwrap();
        assert_eq!(traces.len(), 10);
        assert_eq!(traces[3][0], 0.15);
        let src = TraceSource::PlanetLab {
            dir: dir.path().to_path_buf(),
        };
        let series = src.series(12, 5, 0).unwrap();
        assert_eq!(series[11][0], series[1][0]);
    }

    #[test]
    fn synthetic_sources() {
        let c = TraceSource::Constant { value: 0.85 };
        assert_eq!(synthetic_demand(&c, 1, 100).unwrap(), 0.85);
        let walk = TraceSource::RandomWalk {
            mean: 0.95,
            spread: 0.05,
            step: 0.5,
            reversion: 0.0,
        };
        let a = walk.series(3, 500, 11).unwrap();
        let b = walk.series(3, 500, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().flat_map(|s| s.iter()).all(|&x| (0.0..=1.0).contains(&x)));
        assert_ne!(a[0], a[1]);
    }
}
