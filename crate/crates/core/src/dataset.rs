//! Ranked datasets: data model, JSON Lines storage, a synthetic generator
//! with a latent quality variable, and k-fold splitting.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Mat, RngStream};

pub const DATASET_FORMAT: &str = "rankforge-dataset";
pub const OVERLAY_FORMAT: &str = "rankforge-rank-overlay";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedItem {
    pub id: String,
    pub features: Vec<f64>,
    /// 1-based, larger is better.
    pub rank: usize,
    pub latent_quality: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Synthetic,
    Ingested,
    AnnotationExport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedDataset {
    items: Vec<RankedItem>,
    feature_dim: usize,
    provenance: Provenance,
}

impl RankedDataset {
    /// Validates that ranks form a permutation of `1..=n` and that every
    /// feature vector has length `feature_dim` and finite entries.
    pub fn new(items: Vec<RankedItem>, feature_dim: usize, provenance: Provenance) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::invalid("no items"));
        }
        let n = items.len();
        let mut seen_rank: HashMap<usize, &str> = HashMap::with_capacity(n);
        let mut seen_id: HashMap<&str, ()> = HashMap::with_capacity(n);
        for item in &items {
            if item.features.len() != feature_dim {
                return Err(Error::Dimension(format!(
                    "item {} has {} features, expected {feature_dim}",
                    item.id,
                    item.features.len()
                )));
            }
            if item.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("item {} has a non-finite feature", item.id)));
            }
            if item.rank == 0 || item.rank > n {
                return Err(Error::invalid(format!(
                    "item {} has rank {} outside 1..={n}",
                    item.id, item.rank
                )));
            }
            if let Some(other) = seen_rank.insert(item.rank, &item.id) {
                return Err(Error::invalid(format!(
                    "duplicate rank {} on items {other} and {}",
                    item.rank, item.id
                )));
            }
            if seen_id.insert(&item.id, ()).is_some() {
                return Err(Error::invalid(format!("duplicate item id {}", item.id)));
            }
        }
        Ok(Self { items, feature_dim, provenance })
    }

    pub fn items(&self) -> &[RankedItem] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn ranks(&self) -> Vec<usize> {
        self.items.iter().map(|it| it.rank).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.items.iter().map(|it| it.id.clone()).collect()
    }

    pub fn find(&self, id: &str) -> Option<&RankedItem> {
        self.items.iter().find(|it| it.id == id)
    }

    /// Latent qualities, if every item carries one.
    pub fn latent(&self) -> Option<Vec<f64>> {
        self.items.iter().map(|it| it.latent_quality).collect()
    }

    /// Subset by position with ranks re-densified to `1..=len`, preserving
    /// the relative order of the original ranks.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut items: Vec<RankedItem> = indices.iter().map(|&i| self.items[i].clone()).collect();
        let dense = densify(&items.iter().map(|it| it.rank).collect::<Vec<_>>());
        for (it, r) in items.iter_mut().zip(dense) {
            it.rank = r;
        }
        Self::new(items, self.feature_dim, self.provenance)
    }

    /// Replaces every rank from an `(id, rank)` overlay covering all items.
    pub fn with_ranks(&self, ranking: &[(String, usize)]) -> Result<Self> {
        if ranking.len() != self.items.len() {
            return Err(Error::invalid(format!(
                "ranking covers {} ids, dataset has {}",
                ranking.len(),
                self.items.len()
            )));
        }
        let lookup: HashMap<&str, usize> = ranking.iter().map(|(id, r)| (id.as_str(), *r)).collect();
        let items = self
            .items
            .iter()
            .map(|it| {
                let rank = *lookup
                    .get(it.id.as_str())
                    .ok_or_else(|| Error::invalid(format!("ranking has no entry for {}", it.id)))?;
                Ok(RankedItem { rank, ..it.clone() })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(items, self.feature_dim, Provenance::AnnotationExport)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.save_with_config(path, None)
    }

    /// Like [`save`](Self::save), recording `config` in the header line.
    pub fn save_with_config(&self, path: impl AsRef<Path>, config: Option<&serde_json::Value>) -> Result<()> {
        let path = path.as_ref();
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = DatasetHeader {
            format: DATASET_FORMAT.into(),
            version: FORMAT_VERSION,
            feature_dim: self.feature_dim,
            n: self.items.len(),
            provenance: Some(self.provenance),
            config: config.cloned(),
        };
        let write = |w: &mut BufWriter<fs::File>, line: String| {
            writeln!(w, "{line}").map_err(|e| Error::io(path, e))
        };
        write(&mut w, serde_json::to_string(&header).expect("header serialises"))?;
        for item in &self.items {
            write(&mut w, serde_json::to_string(item).expect("item serialises"))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let parse_err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = BufReader::new(file).lines().enumerate().filter_map(|(i, l)| match l {
            Ok(l) if l.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (hline, header) = match lines.next() {
            None => return Err(Error::Format { path: path.into(), message: "no items".into() }),
            Some((i, l)) => (i, l.map_err(|e| Error::io(path, e))?),
        };
        let header: DatasetHeader =
            serde_json::from_str(&header).map_err(|e| parse_err(hline, format!("bad header: {e}")))?;
        if header.format != DATASET_FORMAT {
            return Err(parse_err(hline, format!("unknown format {:?}", header.format)));
        }
        if header.version != FORMAT_VERSION {
            return Err(parse_err(hline, format!("unsupported version {}", header.version)));
        }
        let mut items: Vec<RankedItem> = Vec::with_capacity(header.n);
        let mut rank_line: HashMap<usize, (usize, String)> = HashMap::new();
        for (lineno, line) in lines {
            let line = line.map_err(|e| Error::io(path, e))?;
            let item: RankedItem =
                serde_json::from_str(&line).map_err(|e| parse_err(lineno, format!("malformed record: {e}")))?;
            if item.features.len() != header.feature_dim {
                return Err(parse_err(
                    lineno,
                    format!(
                        "item {} has {} features but feature_dim is {}",
                        item.id,
                        item.features.len(),
                        header.feature_dim
                    ),
                ));
            }
            if item.rank == 0 || item.rank > header.n {
                return Err(parse_err(
                    lineno,
                    format!("item {} has rank {} outside 1..={}", item.id, item.rank, header.n),
                ));
            }
            if let Some((prev_line, prev_id)) = rank_line.insert(item.rank, (lineno, item.id.clone())) {
                return Err(parse_err(
                    lineno,
                    format!(
                        "duplicate rank {} on items {prev_id} (line {prev_line}) and {}",
                        item.rank, item.id
                    ),
                ));
            }
            items.push(item);
        }
        if items.is_empty() {
            return Err(Error::Format { path: path.into(), message: "no items".into() });
        }
        if items.len() != header.n {
            return Err(Error::Format {
                path: path.into(),
                message: format!("header declares {} items, found {}", header.n, items.len()),
            });
        }
        let provenance = header.provenance.unwrap_or(Provenance::Ingested);
        Self::new(items, header.feature_dim, provenance).map_err(|e| Error::Format {
            path: path.into(),
            message: e.to_string(),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: u32,
    feature_dim: usize,
    n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
    /// Free-form description of how the file was produced.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config: Option<serde_json::Value>,
}

#[derive(Debug, Serialize, Deserialize)]
struct OverlayHeader {
    format: String,
    version: u32,
    n: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct OverlayRecord {
    id: String,
    rank: usize,
}

/// Writes an `(id, rank)` overlay in JSON Lines, header first.
pub fn save_rank_overlay(ranking: &[(String, usize)], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let header = OverlayHeader { format: OVERLAY_FORMAT.into(), version: FORMAT_VERSION, n: ranking.len() };
    out.push_str(&serde_json::to_string(&header).expect("header serialises"));
    out.push('\n');
    for (id, rank) in ranking {
        out.push_str(&serde_json::to_string(&OverlayRecord { id: id.clone(), rank: *rank }).expect("record"));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn load_rank_overlay(path: impl AsRef<Path>) -> Result<Vec<(String, usize)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let parse_err = |line: usize, message: String| Error::Parse { path: path.into(), line: line + 1, message };
    let (hl, header) = lines
        .next()
        .ok_or_else(|| Error::Format { path: path.into(), message: "no items".into() })?;
    let header: OverlayHeader = serde_json::from_str(header).map_err(|e| parse_err(hl, e.to_string()))?;
    if header.format != OVERLAY_FORMAT || header.version != FORMAT_VERSION {
        return Err(parse_err(hl, format!("unsupported overlay {} v{}", header.format, header.version)));
    }
    let out = lines
        .map(|(i, l)| {
            serde_json::from_str::<OverlayRecord>(l)
                .map(|r| (r.id, r.rank))
                .map_err(|e| parse_err(i, e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    if out.len() != header.n {
        return Err(Error::Format {
            path: path.into(),
            message: format!("header declares {} ranks, found {}", header.n, out.len()),
        });
    }
    Ok(out)
}

/// Maps distinct values to `1..=len` preserving order.
pub fn densify(ranks: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ranks.len()).collect();
    order.sort_by_key(|&i| ranks[i]);
    let mut out = vec![0; ranks.len()];
    for (pos, &i) in order.iter().enumerate() {
        out[i] = pos + 1;
    }
    out
}

/// `y / n`, the percentile rank.
pub fn percentile_rank(y: usize, n: usize) -> Result<f64> {
    if y == 0 || y > n {
        return Err(Error::invalid(format!("rank {y} outside 1..={n}")));
    }
    Ok(y as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Nonlinearity {
    Linear,
    Polynomial,
}

impl Nonlinearity {
    fn basis(self, q: f64) -> Vec<f64> {
        match self {
            Nonlinearity::Linear => vec![q],
            Nonlinearity::Polynomial => vec![q, q * q, q * q * q],
        }
    }

    fn basis_len(self) -> usize {
        match self {
            Nonlinearity::Linear => 1,
            Nonlinearity::Polynomial => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub d: usize,
    pub informative_dim: usize,
    pub feature_noise_sigma: f64,
    pub nonlinearity: Nonlinearity,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 300,
            d: 64,
            informative_dim: 8,
            feature_noise_sigma: 0.0,
            nonlinearity: Nonlinearity::Linear,
            seed: 0,
        }
    }
}

/// Draws latent qualities q ~ U[0,1] and features `f = A B phi(q) + eps`.
///
/// `B` (k x |phi|) mixes the basis functions into `k` informative
/// coordinates and `A` (d x k) embeds them in feature space. Entries of `B`
/// are standard normal and those of `A` have variance `1/k`, so every entry
/// of the product `A B` has unit variance. Rank 1 is the item with the
/// smallest q.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<RankedDataset> {
    if cfg.n < 2 {
        return Err(Error::invalid(format!("synthetic dataset needs n >= 2, got {}", cfg.n)));
    }
    if cfg.d == 0 || cfg.informative_dim == 0 || cfg.informative_dim > cfg.d {
        return Err(Error::invalid(format!(
            "need 1 <= informative_dim ({}) <= d ({})",
            cfg.informative_dim, cfg.d
        )));
    }
    if !(cfg.feature_noise_sigma >= 0.0) || !cfg.feature_noise_sigma.is_finite() {
        return Err(Error::invalid("feature_noise_sigma must be finite and >= 0"));
    }
    let k = cfg.informative_dim;
    let basis_len = cfg.nonlinearity.basis_len();

    let mut map_rng = RngStream::derived(cfg.seed, "data-map", 0);
    let embed_scale = 1.0 / (k as f64).sqrt();
    let embed = Mat::from_vec(cfg.d, k, (0..cfg.d * k).map(|_| embed_scale * map_rng.normal()).collect())?;
    let mix = Mat::from_vec(k, basis_len, (0..k * basis_len).map(|_| map_rng.normal()).collect())?;

    let mut q_rng = RngStream::derived(cfg.seed, "data-latent", 0);
    let mut latent: Vec<f64> = Vec::with_capacity(cfg.n);
    let mut taken = std::collections::HashSet::with_capacity(cfg.n);
    while latent.len() < cfg.n {
        let q = q_rng.next_f64();
        if taken.insert(q.to_bits()) {
            latent.push(q);
        }
    }

    let mut noise_rng = RngStream::derived(cfg.seed, "data-noise", 0);
    let zero_k = vec![0.0; k];
    let zero_d = vec![0.0; cfg.d];
    let mut order: Vec<usize> = (0..cfg.n).collect();
    order.sort_by(|&a, &b| latent[a].total_cmp(&latent[b]));
    let mut rank = vec![0; cfg.n];
    for (pos, &i) in order.iter().enumerate() {
        rank[i] = pos + 1;
    }

    let items = latent
        .iter()
        .enumerate()
        .map(|(i, &q)| {
            let z = crate::numerics::affine(&mix, &zero_k, &cfg.nonlinearity.basis(q))?;
            let mut f = crate::numerics::affine(&embed, &zero_d, &z)?;
            if cfg.feature_noise_sigma > 0.0 {
                for v in &mut f {
                    *v += cfg.feature_noise_sigma * noise_rng.normal();
                }
            }
            Ok(RankedItem {
                id: format!("item-{i:05}"),
                features: f,
                rank: rank[i],
                latent_quality: Some(q),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    RankedDataset::new(items, cfg.d, Provenance::Synthetic)
}

/// One cross-validation fold; ranks inside `train` and `test` are
/// re-densified.
#[derive(Debug, Clone)]
pub struct Fold {
    pub index: usize,
    pub train: RankedDataset,
    pub test: RankedDataset,
    pub test_indices: Vec<usize>,
}

/// Shuffled k-fold partition. Item at shuffled position `p` goes to fold
/// `p % k`, so fold sizes differ by at most one.
pub fn kfold_split(ds: &RankedDataset, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::invalid(format!("k-fold needs k >= 2, got {k}")));
    }
    if k > ds.len() {
        return Err(Error::invalid(format!("k = {k} exceeds dataset size {}", ds.len())));
    }
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    RngStream::derived(seed, "folds", 0).shuffle(&mut perm);
    (0..k)
        .map(|fold| {
            let mut test: Vec<usize> = perm.iter().skip(fold).step_by(k).copied().collect();
            test.sort_unstable();
            let mut in_test = vec![false; ds.len()];
            test.iter().for_each(|&i| in_test[i] = true);
            let train: Vec<usize> = (0..ds.len()).filter(|&i| !in_test[i]).collect();
            Ok(Fold { index: fold, train: ds.subset(&train)?, test: ds.subset(&test)?, test_indices: test })
        })
        .collect()
}

/// Holds out `fraction` of the items (at least one, leaving at least two for
/// training) as a validation split. Returns `(train, validation)`.
pub fn holdout_split(ds: &RankedDataset, fraction: f64, seed: u64) -> Result<(RankedDataset, RankedDataset)> {
    if ds.len() < 3 {
        return Err(Error::invalid("need at least 3 items to hold out a validation split"));
    }
    let n_val = ((ds.len() as f64 * fraction).round() as usize).clamp(1, ds.len() - 2);
    let mut perm: Vec<usize> = (0..ds.len()).collect();
    RngStream::derived(seed, "validation", 0).shuffle(&mut perm);
    let mut val = perm[..n_val].to_vec();
    let mut train = perm[n_val..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    Ok((ds.subset(&train)?, ds.subset(&val)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> RankedDataset {
        generate_synthetic(&SyntheticConfig { n, d: 4, informative_dim: 2, seed: 3, ..Default::default() })
            .unwrap()
    }

    #[test]
    fn synthetic_is_deterministic() {
        let cfg = SyntheticConfig { n: 50, feature_noise_sigma: 0.3, ..Default::default() };
        let a = generate_synthetic(&cfg).unwrap();
        let b = generate_synthetic(&cfg).unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        a.save(dir.path().join("a.jsonl")).unwrap();
        b.save(dir.path().join("b.jsonl")).unwrap();
        assert_eq!(
            fs::read(dir.path().join("a.jsonl")).unwrap(),
            fs::read(dir.path().join("b.jsonl")).unwrap()
        );
    }

    #[test]
    fn synthetic_ranks_follow_latent() {
        let ds = small(40);
        let mut ranks = ds.ranks();
        ranks.sort_unstable();
        assert_eq!(ranks, (1..=40).collect::<Vec<_>>());
        let mut items = ds.items().to_vec();
        items.sort_by(|a, b| a.latent_quality.unwrap().total_cmp(&b.latent_quality.unwrap()));
        assert!(items.windows(2).all(|w| w[0].rank < w[1].rank));
    }

    #[test]
    fn synthetic_rejects_tiny_n() {
        assert!(generate_synthetic(&SyntheticConfig { n: 1, ..Default::default() }).is_err());
    }

    #[test]
    fn percentile_rank_examples() {
        assert_eq!(percentile_rank(10, 10).unwrap(), 1.0);
        assert_eq!(percentile_rank(1, 4).unwrap(), 0.25);
        assert!(percentile_rank(0, 4).is_err());
        assert!(percentile_rank(5, 4).is_err());
        let ps: Vec<f64> = (1..=9).map(|y| percentile_rank(y, 9).unwrap()).collect();
        assert!(ps.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn kfold_partitions() {
        let ds = generate_synthetic(&SyntheticConfig { n: 300, d: 3, informative_dim: 1, ..Default::default() })
            .unwrap();
        let folds = kfold_split(&ds, 10, 9).unwrap();
        assert_eq!(folds.len(), 10);
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test_indices.clone()).collect();
        assert!(folds.iter().all(|f| f.test.len() == 30 && f.train.len() == 270));
        all.sort_unstable();
        assert_eq!(all, (0..300).collect::<Vec<_>>());
        for f in &folds {
            let mut r = f.train.ranks();
            r.sort_unstable();
            assert_eq!(r, (1..=270).collect::<Vec<_>>());
        }
    }

    #[test]
    fn kfold_uneven_sizes_and_errors() {
        let ds = small(23);
        let folds = kfold_split(&ds, 5, 1).unwrap();
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        assert!(kfold_split(&ds, 24, 1).is_err());
        assert!(kfold_split(&ds, 1, 1).is_err());
    }

    #[test]
    fn densification_preserves_order() {
        let ds = small(30);
        let folds = kfold_split(&ds, 3, 4).unwrap();
        for f in &folds {
            for (a, ia) in f.test.items().iter().zip(&f.test_indices) {
                for (b, ib) in f.test.items().iter().zip(&f.test_indices) {
                    let orig = ds.items()[*ia].rank.cmp(&ds.items()[*ib].rank);
                    assert_eq!(a.rank.cmp(&b.rank), orig);
                }
            }
        }
    }

    #[test]
    fn save_load_round_trip_exact() {
        let ds = generate_synthetic(&SyntheticConfig { n: 25, feature_noise_sigma: 0.7, ..Default::default() })
            .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ds.jsonl");
        ds.save(&p).unwrap();
        let back = RankedDataset::load(&p).unwrap();
        assert_eq!(back, ds);
        for (a, b) in back.items().iter().zip(ds.items()) {
            assert!(a.features.iter().zip(&b.features).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn load_rejects_duplicate_rank_naming_both_ids() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("dup.jsonl");
        fs::write(
            &p,
            concat!(
                r#"{"format":"rankforge-dataset","version":1,"feature_dim":1,"n":6}"#, "\n",
                r#"{"id":"a","features":[0.1],"rank":1,"latent_quality":null}"#, "\n",
                r#"{"id":"b","features":[0.1],"rank":5,"latent_quality":null}"#, "\n",
                r#"{"id":"c","features":[0.1],"rank":5,"latent_quality":null}"#, "\n",
            ),
        )
        .unwrap();
        let err = RankedDataset::load(&p).unwrap_err().to_string();
        assert!(err.contains("duplicate rank 5"), "{err}");
        assert!(err.contains(" b ") && err.contains(" c"), "{err}");
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn load_rejects_empty_version_and_dims() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.jsonl");
        fs::write(&p, "").unwrap();
        assert!(RankedDataset::load(&p).unwrap_err().to_string().contains("no items"));

        fs::write(&p, "{\"format\":\"rankforge-dataset\",\"version\":1,\"feature_dim\":2,\"n\":0}\n").unwrap();
        assert!(RankedDataset::load(&p).unwrap_err().to_string().contains("no items"));

        fs::write(&p, "{\"format\":\"rankforge-dataset\",\"version\":2,\"feature_dim\":1,\"n\":1}\n").unwrap();
        assert!(RankedDataset::load(&p).unwrap_err().to_string().contains("unsupported version"));

        fs::write(
            &p,
            "{\"format\":\"rankforge-dataset\",\"version\":1,\"feature_dim\":2,\"n\":1}\n\
             {\"id\":\"a\",\"features\":[1.0],\"rank\":1,\"latent_quality\":null}\n",
        )
        .unwrap();
        let err = RankedDataset::load(&p).unwrap_err().to_string();
        assert!(err.contains("line 2") && err.contains("feature_dim"), "{err}");

        fs::write(&p, "{\"format\":\"rankforge-dataset\",\"version\":1,\"feature_dim\":1,\"n\":1}\nnot json\n")
            .unwrap();
        assert!(RankedDataset::load(&p).unwrap_err().to_string().contains("malformed record"));
    }

    #[test]
    fn overlay_round_trip_and_apply() {
        let ds = small(5);
        let ranking: Vec<(String, usize)> =
            ds.items().iter().map(|it| (it.id.clone(), ds.len() + 1 - it.rank)).collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("o.jsonl");
        save_rank_overlay(&ranking, &p).unwrap();
        assert_eq!(load_rank_overlay(&p).unwrap(), ranking);
        let flipped = ds.with_ranks(&ranking).unwrap();
        assert_eq!(flipped.provenance(), Provenance::AnnotationExport);
        assert_eq!(flipped.items()[0].rank, ds.len() + 1 - ds.items()[0].rank);
    }

    #[test]
    fn holdout_sizes() {
        let ds = small(100);
        let (tr, va) = holdout_split(&ds, 0.1, 0).unwrap();
        assert_eq!((tr.len(), va.len()), (90, 10));
    }
}
