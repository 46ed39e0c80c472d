//! Synthetic NTL corpus with planted phenomena: label drivers, an irrelevant
//! feature, a correlated feature pair and an optional extreme label.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::split::{stratified_split, SplitSpec};
use super::{DataError, FeatureColumn, FeatureTable, Provenance, Split};

pub const FEATURE_CATALOG: [&str; 23] = [
    "#Visit",
    "#Fraud",
    "#Fraud1",
    "#Fraud2",
    "#Correct",
    "#Impossible",
    "LastVisit",
    "LastFraud",
    "LastFraud1",
    "LastFraud2",
    "LastCorrect",
    "LastImpossible",
    "LastImpossible2",
    "#FraudZone",
    "#FraudZone1Year",
    "#FraudStreet",
    "#FraudInBuilding",
    "#Threats",
    "LastThreat",
    "EnergyCut",
    "CurrentReadingAbsences",
    "ConsumptionDropRatio",
    "PeerConsumptionRatio",
];

/// Weights of the planted drivers in the latent risk score. The zone driver
/// is the zone's latent fraud rate, observed through #FraudZone1Year and
/// #FraudZone.
pub const RISK_WEIGHTS: [(&str, f64); 4] = [
    ("CurrentReadingAbsences", 3.0),
    ("zone_fraud_rate", 2.5),
    ("LastFraud", 2.0),
    ("ConsumptionDropRatio", 1.5),
];

/// Logit slope of the risk score. Kept low so that even the riskiest
/// profiles are far from certain NTL cases.
const RISK_SLOPE: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_customers: usize,
    pub ntl_rate: f64,
    pub outlier: bool,
    pub outlier_kwh: f64,
    pub runner_up_kwh: f64,
    pub baseline_annual_kwh: f64,
    pub seed: u64,
    pub feature_catalog: Vec<String>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_customers: 20_000,
            ntl_rate: 0.034,
            outlier: false,
            outlier_kwh: 260_000.0,
            runner_up_kwh: 50_000.0,
            baseline_annual_kwh: 3_500.0,
            seed: 1,
            feature_catalog: FEATURE_CATALOG.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: String| Err(DataError::InvalidConfig(m));
        if self.n_customers < 10 {
            return bad(format!("n_customers must be at least 10, got {}", self.n_customers));
        }
        if !(self.ntl_rate > 0.0 && self.ntl_rate < 1.0) {
            return bad(format!("ntl_rate must lie in (0, 1), got {}", self.ntl_rate));
        }
        if !(self.outlier_kwh > self.runner_up_kwh
            && self.runner_up_kwh > self.baseline_annual_kwh
            && self.baseline_annual_kwh > 0.0)
        {
            return bad("need outlier_kwh > runner_up_kwh > baseline_annual_kwh > 0".into());
        }
        if self.feature_catalog.is_empty() {
            return bad("feature_catalog is empty".into());
        }
        for (i, name) in self.feature_catalog.iter().enumerate() {
            if !FEATURE_CATALOG.contains(&name.as_str()) {
                return bad(format!("unknown feature `{name}`"));
            }
            if self.feature_catalog[..i].contains(name) {
                return bad(format!("feature `{name}` listed twice"));
            }
        }
        Ok(())
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }
}

/// Generator bookkeeping written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorManifest {
    pub seed: u64,
    pub config: SynthConfig,
    pub risk_weights: BTreeMap<String, f64>,
    pub risk_intercept: f64,
    pub n_ntl: usize,
    pub max_label: f64,
    pub second_max_label: f64,
    pub outlier_customer: Option<String>,
    pub outlier_split: Option<Split>,
    pub never_visited: usize,
    pub never_read: usize,
    pub zones: usize,
}

impl GeneratorManifest {
    /// `key=value` lines, one per entry, in a fixed order.
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(out, "{k}={v}");
        };
        kv("seed", self.seed.to_string());
        kv("config_digest", c.digest());
        kv("n_customers", c.n_customers.to_string());
        kv("ntl_rate", c.ntl_rate.to_string());
        kv("outlier", c.outlier.to_string());
        kv("outlier_kwh", c.outlier_kwh.to_string());
        kv("runner_up_kwh", c.runner_up_kwh.to_string());
        kv("baseline_annual_kwh", c.baseline_annual_kwh.to_string());
        kv("feature_catalog", c.feature_catalog.join("|"));
        for (name, w) in &self.risk_weights {
            kv(&format!("risk_weight.{name}"), w.to_string());
        }
        kv("risk_intercept", self.risk_intercept.to_string());
        kv("n_ntl", self.n_ntl.to_string());
        kv("max_label", self.max_label.to_string());
        kv("second_max_label", self.second_max_label.to_string());
        kv("outlier_customer", self.outlier_customer.clone().unwrap_or_default());
        kv("outlier_split", self.outlier_split.map(|s| s.to_string()).unwrap_or_default());
        kv("never_visited", self.never_visited.to_string());
        kv("never_read", self.never_read.to_string());
        kv("zones", self.zones.to_string());
        out
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub table: FeatureTable,
    pub manifest: GeneratorManifest,
}

/// One customer's full feature record before catalog projection.
#[derive(Debug, Clone, Default)]
struct Customer {
    cells: BTreeMap<&'static str, Option<f64>>,
}

impl Customer {
    fn set(&mut self, name: &'static str, v: Option<f64>) {
        self.cells.insert(name, v);
    }

    fn get(&self, name: &str) -> Option<f64> {
        self.cells.get(name).copied().flatten()
    }
}

fn poisson(rng: &mut ChaCha8Rng, lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 0.0;
    }
    Poisson::new(lambda).expect("positive rate").sample(rng)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Last-occurrence features are months since the most recent (or `nth`
/// most recent) event, missing when there was no such event.
fn nth_recent(months: &[f64], nth: usize) -> Option<f64> {
    let mut m = months.to_vec();
    m.sort_by(f64::total_cmp);
    m.get(nth).copied()
}

pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SyntheticCorpus, DataError> {
    cfg.validate()?;
    let n = cfg.n_customers;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    // Threats come from their own stream so they carry no label signal.
    let mut threat_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7468_7265_6174_7321);

    let n_zones = (n / 80).max(1);
    let zone_rate = Gamma::new(1.5, 6.0).expect("valid gamma");
    let zones: Vec<(f64, f64, f64)> = (0..n_zones)
        .map(|_| {
            let lambda: f64 = zone_rate.sample(&mut rng);
            let last_year = poisson(&mut rng, lambda);
            // Older years accumulate on top of the last one.
            let history = last_year + poisson(&mut rng, 3.0 * lambda);
            (lambda, last_year, history)
        })
        .collect();

    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut customers = Vec::with_capacity(n);
    let mut zone_lambda = Vec::with_capacity(n);
    let mut never_visited = 0;
    let mut never_read = 0;
    for _ in 0..n {
        let mut c = Customer::default();
        let (lambda, last_year, history) = zones[rng.gen_range(0..n_zones)];
        zone_lambda.push(lambda);
        c.set("#FraudZone1Year", Some(last_year));
        c.set("#FraudZone", Some(history));
        c.set("#FraudStreet", Some(poisson(&mut rng, 0.04 * lambda)));
        c.set("#FraudInBuilding", Some(poisson(&mut rng, 0.015 * lambda)));

        // Latent tampering propensity, skewed towards zero.
        let tamper: f64 = rng.gen::<f64>().powi(3);

        let visits = if rng.gen_bool(0.55) { 1 + poisson(&mut rng, 1.5) as usize } else { 0 };
        if visits == 0 {
            never_visited += 1;
        }
        let p_fraud = (0.05 + 0.25 * tamper + 0.004 * lambda).min(0.9);
        let (mut fraud1, mut fraud2, mut fraud_other, mut correct, mut impossible, mut all) =
            (vec![], vec![], vec![], vec![], vec![], vec![]);
        for _ in 0..visits {
            let month = rng.gen_range(0..120) as f64;
            all.push(month);
            let u: f64 = rng.gen();
            if u < p_fraud {
                match rng.gen_range(0..10) {
                    0..=5 => fraud1.push(month),
                    6..=8 => fraud2.push(month),
                    _ => fraud_other.push(month),
                }
            } else if u < p_fraud + 0.15 {
                impossible.push(month);
            } else {
                correct.push(month);
            }
        }
        let frauds: Vec<f64> = fraud1.iter().chain(&fraud2).chain(&fraud_other).copied().collect();
        let count = |v: &Vec<f64>| Some(v.len() as f64);
        c.set("#Visit", Some(visits as f64));
        c.set("#Fraud", count(&frauds));
        c.set("#Fraud1", count(&fraud1));
        c.set("#Fraud2", count(&fraud2));
        c.set("#Correct", count(&correct));
        c.set("#Impossible", count(&impossible));
        c.set("LastVisit", nth_recent(&all, 0));
        c.set("LastFraud", nth_recent(&frauds, 0));
        c.set("LastFraud1", nth_recent(&fraud1, 0));
        c.set("LastFraud2", nth_recent(&fraud2, 0));
        c.set("LastCorrect", nth_recent(&correct, 0));
        c.set("LastImpossible", nth_recent(&impossible, 0));
        c.set("LastImpossible2", nth_recent(&impossible, 1));

        let threats =
            if threat_rng.gen_bool(0.012) { 1.0 + poisson(&mut threat_rng, 0.3) } else { 0.0 };
        c.set("#Threats", Some(threats));
        c.set(
            "LastThreat",
            (threats > 0.0).then(|| threat_rng.gen_range(0..120) as f64),
        );

        let cut = rng.gen_bool(if frauds.is_empty() { 0.04 } else { 0.12 });
        c.set("EnergyCut", Some(if cut { 1.0 } else { 0.0 }));

        if rng.gen_bool(0.04) {
            never_read += 1;
            c.set("CurrentReadingAbsences", None);
        } else {
            let absences = Binomial::new(12, 0.03 + 0.5 * tamper).expect("valid binomial");
            c.set("CurrentReadingAbsences", Some(absences.sample(&mut rng) as f64));
        }
        let drop = (1.0 - 0.45 * tamper + 0.15 * noise.sample(&mut rng)).clamp(0.0, 2.0);
        c.set("ConsumptionDropRatio", Some((drop * 1000.0).round() / 1000.0));
        let peer = (0.3 * noise.sample(&mut rng) - 0.3 * tamper).exp();
        c.set("PeerConsumptionRatio", Some((peer * 1000.0).round() / 1000.0));
        customers.push(c);
    }

    // Planted drivers, each scaled to roughly [0, 1].
    let zone_scale = (1.0f64 + zones.iter().map(|z| z.0).fold(0.0, f64::max)).ln().max(1.0);
    let risk: Vec<f64> = customers
        .iter()
        .zip(&zone_lambda)
        .map(|(c, lambda)| {
            let absences = c.get("CurrentReadingAbsences").map_or(0.25, |a| a / 12.0);
            // The latent zone rate, of which both zone counts are noisy
            // measurements.
            let zone = (1.0 + lambda).ln() / zone_scale;
            let recent = c.get("LastFraud").map_or(0.0, |m| (-m / 24.0).exp());
            let drop = (1.0 - c.get("ConsumptionDropRatio").unwrap_or(1.0)).max(0.0);
            let w = |name: &str| RISK_WEIGHTS.iter().find(|(k, _)| *k == name).unwrap().1;
            w("CurrentReadingAbsences") * absences
                + w("zone_fraud_rate") * zone
                + w("LastFraud") * recent
                + w("ConsumptionDropRatio") * drop
        })
        .collect();

    // Intercept so that the expected NTL count is n · ntl_rate.
    let target = cfg.ntl_rate * n as f64;
    let expected = |b: f64| risk.iter().map(|r| sigmoid(b + RISK_SLOPE * r)).sum::<f64>();
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if expected(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let intercept = 0.5 * (lo + hi);

    let risk_max = risk.iter().copied().fold(f64::MIN_POSITIVE, f64::max);
    let regular_cap = 0.9 * cfg.runner_up_kwh;
    let mut labels = vec![0.0; n];
    for (i, r) in risk.iter().enumerate() {
        if rng.gen_bool(sigmoid(intercept + RISK_SLOPE * r)) {
            // Years of unbilled consumption, larger for riskier profiles.
            let scale = 0.7 + 0.3 * r / risk_max;
            let years = 0.3 + 11.5 * rng.gen::<f64>().powf(0.8) * scale;
            let kwh = (cfg.baseline_annual_kwh * years).clamp(100.0, regular_cap);
            labels[i] = (kwh * 10.0).round() / 10.0;
        }
    }

    let mut ntl_rows: Vec<usize> = (0..n).filter(|&i| labels[i] > 0.0).collect();
    let need = if cfg.outlier { 2 } else { 1 };
    if ntl_rows.len() < need {
        let mut by_risk: Vec<usize> = (0..n).collect();
        by_risk.sort_by(|&a, &b| risk[b].total_cmp(&risk[a]).then(a.cmp(&b)));
        let promote: Vec<usize> =
            by_risk.into_iter().filter(|&i| labels[i] == 0.0).take(need - ntl_rows.len()).collect();
        for i in promote {
            labels[i] = cfg.baseline_annual_kwh;
        }
        ntl_rows = (0..n).filter(|&i| labels[i] > 0.0).collect();
    }

    let ids: Vec<String> = (0..n).map(|i| format!("C{i:06}")).collect();
    let mut outlier_customer = None;
    if cfg.outlier {
        let pick = ntl_rows[rng.gen_range(0..ntl_rows.len())];
        labels[pick] = cfg.outlier_kwh;
        // A large consumer: far above its peers, so the model can single
        // the case out and its label bias shows up in the attributions.
        let peer_max = customers
            .iter()
            .filter_map(|c| c.get("PeerConsumptionRatio"))
            .fold(1.0, f64::max);
        customers[pick].set("PeerConsumptionRatio", Some((2.0 * peer_max * 1000.0).round() / 1000.0));
        outlier_customer = Some(ids[pick].clone());
        let runner = ntl_rows
            .iter()
            .copied()
            .filter(|&i| i != pick)
            .max_by(|&a, &b| labels[a].total_cmp(&labels[b]).then(b.cmp(&a)))
            .expect("two NTL rows");
        labels[runner] = cfg.runner_up_kwh;
    } else {
        let top = ntl_rows
            .iter()
            .copied()
            .max_by(|&a, &b| labels[a].total_cmp(&labels[b]).then(b.cmp(&a)))
            .expect("one NTL row");
        labels[top] = cfg.runner_up_kwh;
    }

    let mut sorted = labels.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let columns = cfg
        .feature_catalog
        .iter()
        .map(|name| {
            FeatureColumn::new(name.clone(), customers.iter().map(|c| c.get(name)).collect())
        })
        .collect();
    let table = FeatureTable::new(
        ids,
        columns,
        labels,
        vec![Split::Train; n],
        Provenance::Generated { seed: cfg.seed, config_digest: cfg.digest() },
    )?;
    let manifest = GeneratorManifest {
        seed: cfg.seed,
        config: cfg.clone(),
        risk_weights: RISK_WEIGHTS.iter().map(|(k, w)| (k.to_string(), *w)).collect(),
        risk_intercept: intercept,
        n_ntl: table.ntl_count(),
        max_label: sorted[0],
        second_max_label: sorted[1],
        outlier_customer,
        outlier_split: None,
        never_visited,
        never_read,
        zones: n_zones,
    };
    Ok(SyntheticCorpus { table, manifest })
}

/// Generates and splits a corpus. The planted outlier is kept in the training
/// partition (swapping tags with a training NTL row if needed) so that it can
/// bias the fitted model; per-stratum counts are unchanged by the swap.
pub fn generate_split_corpus(
    cfg: &SynthConfig,
    spec: &SplitSpec,
) -> Result<SyntheticCorpus, DataError> {
    let SyntheticCorpus { table, mut manifest } = generate_synthetic(cfg)?;
    let table = stratified_split(&table, spec)?;
    let mut tags = table.split().to_vec();
    if let Some(id) = &manifest.outlier_customer {
        let row = table.row_of(id).expect("outlier row exists");
        if tags[row] != Split::Train {
            let partner = (0..table.n_rows())
                .find(|&r| tags[r] == Split::Train && table.is_ntl(r))
                .ok_or(DataError::EmptyStratum { stratum: "ntl", partition: Split::Train })?;
            tags.swap(row, partner);
        }
        manifest.outlier_split = Some(Split::Train);
    }
    let table = table.with_split(tags)?;
    Ok(SyntheticCorpus { table, manifest })
}
