use serde::{Deserialize, Serialize};

use super::load::RawTable;
use super::schema::{ColumnKind, ColumnSpec, DatasetSchema, Role, Transform};
use crate::distributions::RngStream;
use crate::error::{Error, Result};

/// Known latent structure of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub z: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<Vec<usize>>,
    /// Regression target on the transformed scale, before clipping at 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t: Option<Vec<f64>>,
    pub group_ids: Vec<usize>,
    /// Class prior of each protected group (rows indexed by group id).
    pub group_priors: Vec<Vec<f64>>,
    /// Unsmoothed ε-DF of the generating class priors.
    pub generating_epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub table: RawTable,
    pub schema: DatasetSchema,
    pub truth: GroundTruth,
}

impl SynthOutput {
    /// Ground truth as CSV rows: `row,group,z[,u][,t]`.
    pub fn truth_table(&self) -> RawTable {
        let mut header = vec!["row".to_string(), "group".to_string(), "z".to_string()];
        if self.truth.u.is_some() {
            header.push("u".into());
        }
        if self.truth.t.is_some() {
            header.push("t".into());
        }
        let rows = (0..self.truth.z.len())
            .map(|i| {
                let mut r = vec![i.to_string(), self.truth.group_ids[i].to_string(), self.truth.z[i].to_string()];
                if let Some(u) = &self.truth.u {
                    r.push(u[i].to_string());
                }
                if let Some(t) = &self.truth.t {
                    r.push(format!("{:.9}", t[i]));
                }
                r
            })
            .collect();
        RawTable { header, rows }
    }
}

/// Worst-case log-ratio of class probabilities over ordered group pairs.
pub fn generating_epsilon(priors: &[Vec<f64>]) -> f64 {
    let mut eps = 0.0f64;
    for z in 0..priors[0].len() {
        for a in priors {
            for b in priors {
                eps = eps.max(a[z].ln() - b[z].ln());
            }
        }
    }
    eps
}

/// Two-group class priors tilted in opposite directions; `skew = 0` gives
/// identical uniform priors.
pub fn skewed_priors(k: usize, groups: usize, skew: f64) -> Vec<Vec<f64>> {
    (0..groups)
        .map(|g| {
            let side = if groups > 1 { g as f64 / (groups - 1) as f64 - 0.5 } else { 0.0 };
            let w: Vec<f64> = (0..k)
                .map(|z| {
                    let pos = if k > 1 { z as f64 / (k - 1) as f64 - 0.5 } else { 0.0 };
                    (2.0 * skew * side * pos).exp()
                })
                .collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        })
        .collect()
}

fn check_priors(priors: &[Vec<f64>], weights: &[f64], k: usize) -> Result<()> {
    if priors.is_empty() || priors.len() != weights.len() {
        return Err(Error::Config("need one class prior and one weight per group".into()));
    }
    for p in priors {
        if p.len() != k || p.iter().any(|&x| !(x > 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("class prior {p:?} must have {k} positive entries summing to 1")));
        }
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Config("group weights must be positive".into()));
    }
    Ok(())
}

/// Protected attribute layout shared by the NB and GMM generators: a single
/// attribute `group` whose values are `g0, g1, …`.
fn group_column(groups: usize) -> (ColumnSpec, Vec<String>) {
    let labels: Vec<String> = (0..groups).map(|g| format!("g{g}")).collect();
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    (ColumnSpec::new("group", ColumnKind::Protected).with_vocabulary(&refs), labels)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NbSynthConfig {
    pub n: usize,
    pub k: usize,
    /// Number of categorical observed attributes.
    pub attributes: usize,
    pub categories: usize,
    /// Class prior per protected group.
    pub group_priors: Vec<Vec<f64>>,
    pub group_weights: Vec<f64>,
    /// Scale of the class-conditional logits; larger is more separable.
    pub signal: f64,
    pub seed: u64,
}

impl NbSynthConfig {
    pub fn with_skew(n: usize, k: usize, skew: f64, seed: u64) -> Self {
        NbSynthConfig {
            n,
            k,
            attributes: 8,
            categories: 4,
            group_priors: skewed_priors(k, 2, skew),
            group_weights: vec![0.5, 0.5],
            signal: 1.5,
            seed,
        }
    }
}

/// Categorical data from a latent class model whose class prior depends on
/// a protected group.
pub fn synth_nb(cfg: &NbSynthConfig) -> Result<SynthOutput> {
    check_priors(&cfg.group_priors, &cfg.group_weights, cfg.k)?;
    if cfg.attributes == 0 || cfg.categories < 2 {
        return Err(Error::Config("need at least one attribute with two categories".into()));
    }
    let mut rng = RngStream::new(cfg.seed);
    let mut theta_rng = rng.derive(1);
    // theta[z][d] is a distribution over categories.
    let theta: Vec<Vec<Vec<f64>>> = (0..cfg.k)
        .map(|_| {
            (0..cfg.attributes)
                .map(|_| {
                    let w: Vec<f64> = (0..cfg.categories).map(|_| (cfg.signal * theta_rng.normal()).exp()).collect();
                    let s: f64 = w.iter().sum();
                    w.iter().map(|x| x / s).collect()
                })
                .collect()
        })
        .collect();
    let (gcol, glabels) = group_column(cfg.group_priors.len());
    let cats: Vec<String> = (0..cfg.categories).map(|c| format!("c{c}")).collect();
    let cat_refs: Vec<&str> = cats.iter().map(String::as_str).collect();
    let mut columns: Vec<ColumnSpec> = (0..cfg.attributes)
        .map(|d| ColumnSpec::new(&format!("x{d}"), ColumnKind::Categorical).with_vocabulary(&cat_refs))
        .collect();
    columns.push(gcol);
    let header: Vec<String> = columns.iter().map(|c| c.name.clone()).collect();

    let mut rows = Vec::with_capacity(cfg.n);
    let mut z = Vec::with_capacity(cfg.n);
    let mut gids = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let g = rng.categorical(&cfg.group_weights);
        let zi = rng.categorical(&cfg.group_priors[g]);
        let mut row: Vec<String> = (0..cfg.attributes).map(|d| cats[rng.categorical(&theta[zi][d])].clone()).collect();
        row.push(glabels[g].clone());
        rows.push(row);
        z.push(zi);
        gids.push(g);
    }
    Ok(SynthOutput {
        table: RawTable { header, rows },
        schema: DatasetSchema::new(columns)?,
        truth: GroundTruth {
            z,
            u: None,
            t: None,
            group_ids: gids,
            generating_epsilon: generating_epsilon(&cfg.group_priors),
            group_priors: cfg.group_priors.clone(),
        },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSynthConfig {
    pub n: usize,
    pub k: usize,
    pub dims: usize,
    /// Distance between neighbouring class means in units of the noise s.d.
    pub separation: f64,
    pub group_priors: Vec<Vec<f64>>,
    pub group_weights: Vec<f64>,
    pub seed: u64,
}

impl GmmSynthConfig {
    pub fn new(n: usize, k: usize, dims: usize, separation: f64, seed: u64) -> Self {
        GmmSynthConfig {
            n,
            k,
            dims,
            separation,
            group_priors: skewed_priors(k, 2, 0.0),
            group_weights: vec![0.5, 0.5],
            seed,
        }
    }
}

/// Class means: scaled simplex corners when `k ≤ dims` (every pair exactly
/// `separation` apart), otherwise evenly spaced along the first axis.
fn gmm_means(k: usize, dims: usize, separation: f64) -> Vec<Vec<f64>> {
    (0..k)
        .map(|z| {
            let mut m = vec![0.0; dims];
            if k <= dims {
                m[z] = separation / std::f64::consts::SQRT_2;
            } else {
                m[0] = separation * z as f64;
            }
            m
        })
        .collect()
}

/// Real-valued data from `k` unit-variance Gaussians.
pub fn synth_gmm(cfg: &GmmSynthConfig) -> Result<SynthOutput> {
    check_priors(&cfg.group_priors, &cfg.group_weights, cfg.k)?;
    if cfg.dims == 0 || !(cfg.separation >= 0.0) {
        return Err(Error::Config("need dims ≥ 1 and separation ≥ 0".into()));
    }
    let mut rng = RngStream::new(cfg.seed);
    let means = gmm_means(cfg.k, cfg.dims, cfg.separation);
    let (gcol, glabels) = group_column(cfg.group_priors.len());
    let mut columns: Vec<ColumnSpec> =
        (0..cfg.dims).map(|d| ColumnSpec::new(&format!("f{d}"), ColumnKind::Continuous)).collect();
    columns.push(gcol);
    let header = columns.iter().map(|c| c.name.clone()).collect();
    let mut rows = Vec::with_capacity(cfg.n);
    let mut z = Vec::with_capacity(cfg.n);
    let mut gids = Vec::with_capacity(cfg.n);
    for _ in 0..cfg.n {
        let g = rng.categorical(&cfg.group_weights);
        let zi = rng.categorical(&cfg.group_priors[g]);
        let mut row: Vec<String> = means[zi].iter().map(|m| format!("{:.9}", m + rng.normal())).collect();
        row.push(glabels[g].clone());
        rows.push(row);
        z.push(zi);
        gids.push(g);
    }
    Ok(SynthOutput {
        table: RawTable { header, rows },
        schema: DatasetSchema::new(columns)?,
        truth: GroundTruth {
            z,
            u: None,
            t: None,
            group_ids: gids,
            generating_epsilon: generating_epsilon(&cfg.group_priors),
            group_priors: cfg.group_priors.clone(),
        },
    })
}

/// Coefficients of the synthetic criminal-justice generator. `t` is on the
/// `ln(1 + days)` scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpSynthConfig {
    pub n: usize,
    pub beta0: f64,
    pub beta_z: [f64; 3],
    pub beta_u: [f64; 2],
    /// Per charge degree, in the order `F`, `M`.
    pub beta_c: [f64; 2],
    pub sigma_t: f64,
    /// `P(u = 1)` for race `B` and `W`.
    pub p_u: [f64; 2],
    /// Shift of the decile score for race `B`.
    pub decile_bias: f64,
    pub seed: u64,
}

impl SpSynthConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        SpSynthConfig {
            n,
            beta0: 1.5,
            beta_z: [0.0, 1.0, 2.0],
            beta_u: [0.0, 0.5],
            beta_c: [0.8, 0.0],
            sigma_t: 0.5,
            p_u: [0.7, 0.3],
            decile_bias: 1.5,
            seed,
        }
    }
}

pub const SP_AGE_BANDS: [&str; 3] = ["<25", "25-45", ">45"];
pub const SP_CHARGES: [&str; 2] = ["F", "M"];
pub const SP_RACES: [&str; 2] = ["B", "W"];
pub const SP_GENDERS: [&str; 2] = ["M", "F"];

/// Column layout used for criminal-justice data (real or synthetic).
pub fn sp_schema() -> DatasetSchema {
    DatasetSchema::new(vec![
        ColumnSpec::new("juv_misd_count", ColumnKind::Continuous).with_role(Role::M),
        ColumnSpec::new("juv_fel_count", ColumnKind::Continuous).with_role(Role::F),
        ColumnSpec::new("priors_count", ColumnKind::Continuous).with_role(Role::P),
        ColumnSpec::new("decile_score", ColumnKind::Continuous).with_role(Role::D),
        ColumnSpec::new("age_band", ColumnKind::Categorical).with_role(Role::A).with_vocabulary(&SP_AGE_BANDS),
        ColumnSpec::new("charge_degree", ColumnKind::Categorical).with_role(Role::C).with_vocabulary(&SP_CHARGES),
        ColumnSpec::new("jail_days", ColumnKind::Target).with_role(Role::T).with_transform(Transform::Log1p),
        ColumnSpec::new("race", ColumnKind::Protected).with_vocabulary(&SP_RACES),
        ColumnSpec::new("gender", ColumnKind::Protected).with_vocabulary(&SP_GENDERS),
        ColumnSpec::new("two_year_recid", ColumnKind::Categorical).with_role(Role::Label).with_vocabulary(&["0", "1"]),
    ])
    .expect("static schema is valid")
}

/// Risk class from criminal history through a fixed ordinal mapping.
pub fn sp_risk_class(m: f64, f: f64, p: f64, d: f64) -> usize {
    let score = 0.3 * m + 0.4 * f + 0.15 * p + 0.5 * d;
    if score < 3.5 {
        0
    } else if score < 5.0 {
        1
    } else {
        2
    }
}

/// Forward simulation of the criminal-justice DAG: systems of oppression
/// `u` from race, age band and charge degree from `u`, criminal history and
/// a race-biased decile score, risk `z` from history, and `t` from the
/// regression on `z`, `u` and `c`.
pub fn synth_sp(cfg: &SpSynthConfig) -> Result<SynthOutput> {
    if !(cfg.sigma_t > 0.0) || cfg.p_u.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::Config("need σ_t > 0 and probabilities in [0, 1]".into()));
    }
    let coefs = [cfg.beta0, cfg.decile_bias].into_iter().chain(cfg.beta_z).chain(cfg.beta_u).chain(cfg.beta_c);
    if coefs.clone().any(|c| !c.is_finite()) {
        return Err(Error::Config("coefficients must be finite".into()));
    }
    let schema = sp_schema();
    let header: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
    let mut rng = RngStream::new(cfg.seed);
    let age_given_u = [[0.2, 0.45, 0.35], [0.5, 0.35, 0.15]];
    let charge_given_u = [[0.4, 0.6], [0.65, 0.35]];
    let mut rows = Vec::with_capacity(cfg.n);
    let (mut zs, mut us, mut ts, mut gids) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for _ in 0..cfg.n {
        let race = rng.categorical(&[0.5, 0.5]);
        let gender = rng.categorical(&[0.8, 0.2]);
        let u = usize::from(rng.uniform() < cfg.p_u[race]);
        let a = rng.categorical(&age_given_u[u]);
        let c = rng.categorical(&charge_given_u[u]);
        let r = rng.normal();
        let m = rng.poisson(0.2 * (0.5 * r).exp());
        let f = rng.poisson(0.1 * (0.5 * r).exp());
        let p = rng.poisson(2.0 * (0.6 * r).exp());
        let bias = if race == 0 { cfg.decile_bias } else { 0.0 };
        let d = (5.0 + 2.0 * r + bias + 0.5 * rng.normal()).round().clamp(1.0, 10.0);
        let z = sp_risk_class(m, f, p, d);
        let t = cfg.beta0 + cfg.beta_z[z] + cfg.beta_u[u] + cfg.beta_c[c] + cfg.sigma_t * rng.normal();
        let days = t.max(0.0).exp_m1();
        let recid_p = 1.0 / (1.0 + (-(z as f64 - 1.0) - 0.3 * r).exp());
        let recid = usize::from(rng.uniform() < recid_p);
        rows.push(vec![
            format!("{m}"),
            format!("{f}"),
            format!("{p}"),
            format!("{d}"),
            SP_AGE_BANDS[a].to_string(),
            SP_CHARGES[c].to_string(),
            format!("{days:.6}"),
            SP_RACES[race].to_string(),
            SP_GENDERS[gender].to_string(),
            recid.to_string(),
        ]);
        zs.push(z);
        us.push(u);
        ts.push(t);
        gids.push(race * SP_GENDERS.len() + gender);
    }
    // Empirical class priors per intersection, for reference.
    let mut counts = vec![vec![0.0; 3]; SP_RACES.len() * SP_GENDERS.len()];
    for (&g, &z) in gids.iter().zip(&zs) {
        counts[g][z] += 1.0;
    }
    let priors: Vec<Vec<f64>> = counts
        .iter()
        .map(|c| {
            let s: f64 = c.iter().sum();
            c.iter().map(|x| if s > 0.0 { x / s } else { 1.0 / 3.0 }).collect()
        })
        .collect();
    let eps = if priors.iter().flatten().all(|&p| p > 0.0) { generating_epsilon(&priors) } else { f64::INFINITY };
    Ok(SynthOutput {
        table: RawTable { header, rows },
        schema,
        truth: GroundTruth { z: zs, u: Some(us), t: Some(ts), group_ids: gids, group_priors: priors, generating_epsilon: eps },
    })
}
