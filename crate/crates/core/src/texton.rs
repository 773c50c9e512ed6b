//! Texton dictionaries, texton histograms and texture distances.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::container::{self, NamedArray};
use crate::error::{Error, Result};
use crate::filterbank::{normalized, respond, FilterBank};
use crate::losses::{gram_loss, LmKindExtractor};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Tensor};

pub const DEFAULT_TEXTONS: usize = 32;
pub const TEXTON_KIND: &str = "texton_dictionary";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once no center moves farther than this.
    pub tol: f64,
    pub seed: u64,
}

impl KMeansConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        Self {
            k,
            max_iters: 100,
            tol: 1e-6,
            seed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct KMeans {
    pub centers: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Objective after every assignment step, ending with the returned centers.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest(centers: &[Vec<f64>], v: &[f64]) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centers.iter().enumerate() {
        let d = sq_dist(c, v);
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn distinct_count(points: &[Vec<f64>], cap: usize) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|v| (v + 0.0).to_bits()).collect())
        .collect();
    keys.sort_unstable();
    keys.dedup();
    keys.len().min(cap)
}

fn assign(points: &[Vec<f64>], centers: &[Vec<f64>], out: &mut [usize]) -> f64 {
    let mut total = 0.0;
    for (p, a) in points.iter().zip(out.iter_mut()) {
        *a = nearest(centers, p);
        total += sq_dist(p, &centers[*a]);
    }
    total
}

/// k-means++ seeding followed by Lloyd iterations. An emptied cluster is
/// moved to the point farthest from its current center.
pub fn kmeans(points: &[Vec<f64>], cfg: &KMeansConfig) -> Result<KMeans> {
    if cfg.k < 2 {
        return Err(Error::invalid("k-means needs k >= 2"));
    }
    let dim = points.first().map_or(0, Vec::len);
    if dim == 0
        || points
            .iter()
            .any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::Data(
            "points must be finite vectors of equal, nonzero length".into(),
        ));
    }
    if distinct_count(points, cfg.k) < cfg.k {
        return Err(Error::Data(format!(
            "fewer than {} distinct points to cluster",
            cfg.k
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut centers = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < cfg.k {
        let total: f64 = d2.iter().sum();
        let mut t = rng.random::<f64>() * total;
        let mut pick = d2
            .iter()
            .rposition(|&d| d > 0.0)
            .expect("distinct points remain");
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 && t < d {
                pick = i;
                break;
            }
            t -= d;
        }
        let c = points[pick].clone();
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &c));
        }
        centers.push(c);
    }

    let mut assignments = vec![0; points.len()];
    let mut objective = Vec::new();
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        objective.push(assign(points, &centers, &mut assignments));
        iterations += 1;
        let mut sums = vec![vec![0.0; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (p, &a) in points.iter().zip(&assignments) {
            counts[a] += 1;
            sums[a].iter_mut().zip(p).for_each(|(s, v)| *s += v);
        }
        let mut shift = 0.0f64;
        for j in 0..cfg.k {
            let next = if counts[j] == 0 {
                let far = points
                    .iter()
                    .zip(&assignments)
                    .map(|(p, &a)| sq_dist(p, &centers[a]))
                    .enumerate()
                    .fold(
                        (0, -1.0),
                        |best, (i, d)| if d > best.1 { (i, d) } else { best },
                    )
                    .0;
                points[far].clone()
            } else {
                sums[j].iter().map(|s| s / counts[j] as f64).collect()
            };
            shift = shift.max(sq_dist(&next, &centers[j]).sqrt());
            centers[j] = next;
        }
        if shift < cfg.tol {
            break;
        }
    }
    objective.push(assign(points, &centers, &mut assignments));
    Ok(KMeans {
        centers,
        assignments,
        objective,
        iterations,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct DictMeta {
    k: usize,
    dim: usize,
    fingerprint: String,
    support: usize,
    objective: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextonDictionary {
    centers: Vec<Vec<f64>>,
    fingerprint: String,
    support: usize,
    /// k-means objective trace from learning.
    pub objective: Vec<f64>,
}

impl TextonDictionary {
    pub fn new(centers: Vec<Vec<f64>>, fingerprint: String, support: usize) -> Result<Self> {
        if centers.len() < 2 {
            return Err(Error::invalid(
                "a texton dictionary needs at least 2 centers",
            ));
        }
        let dim = centers[0].len();
        if dim == 0
            || centers
                .iter()
                .any(|c| c.len() != dim || c.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::invalid(
                "texton centers must be finite and of equal length",
            ));
        }
        if distinct_count(&centers, usize::MAX) != centers.len() {
            return Err(Error::invalid("texton centers must be distinct"));
        }
        Ok(Self {
            centers,
            fingerprint,
            support,
            objective: Vec::new(),
        })
    }

    pub fn k(&self) -> usize {
        self.centers.len()
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }

    pub fn centers(&self) -> &[Vec<f64>] {
        &self.centers
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn support(&self) -> usize {
        self.support
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = DictMeta {
            k: self.k(),
            dim: self.dim(),
            fingerprint: self.fingerprint.clone(),
            support: self.support,
            objective: self.objective.clone(),
        };
        let arrays = [NamedArray {
            name: "centers".into(),
            shape: vec![self.k(), self.dim()],
            data: self.centers.concat(),
        }];
        container::write(path, TEXTON_KIND, serde_json::to_value(meta)?, &arrays)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, arrays) = container::read(path, TEXTON_KIND)?;
        let meta: DictMeta = serde_json::from_value(header.meta)?;
        let centers = arrays
            .into_iter()
            .find(|a| a.name == "centers")
            .ok_or_else(|| Error::Format("missing 'centers' array".into()))?;
        if centers.shape != [meta.k, meta.dim] {
            return Err(Error::Format(format!(
                "centers shape {:?} disagrees with header",
                centers.shape
            )));
        }
        let mut dict = Self::new(
            centers.data.chunks(meta.dim).map(<[f64]>::to_vec).collect(),
            meta.fingerprint,
            meta.support,
        )?;
        dict.objective = meta.objective;
        Ok(dict)
    }
}

/// Per-pixel contrast-normalized response vectors of an image.
pub fn pixel_responses<S: Scalar>(
    image: &Tensor<S>,
    bank: &FilterBank<S>,
) -> Result<Vec<Vec<f64>>> {
    let stack = respond(bank, &normalized(image)?, true)?;
    Ok(stack
        .pixel_vectors()
        .map(|v| v.iter().map(|x| x.as_f64()).collect())
        .collect())
}

pub fn learn_textons<S: Scalar>(
    images: &[Tensor<S>],
    bank: &FilterBank<S>,
    k: usize,
    seed: u64,
) -> Result<TextonDictionary> {
    let mut points = Vec::new();
    for img in images {
        points.extend(pixel_responses(img, bank)?);
    }
    if points.len() < k {
        return Err(Error::Data(format!(
            "{} pixels cannot seed {k} textons",
            points.len()
        )));
    }
    let km = kmeans(&points, &KMeansConfig::new(k, seed))?;
    let mut dict = TextonDictionary::new(km.centers, bank.fingerprint(), bank.support())?;
    dict.objective = km.objective;
    Ok(dict)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextonHistogram {
    pub bins: Vec<f64>,
}

/// Texton index of every pixel, row-major.
pub fn texton_map<S: Scalar>(
    image: &Tensor<S>,
    dict: &TextonDictionary,
    bank: &FilterBank<S>,
) -> Result<Vec<usize>> {
    if bank.fingerprint() != dict.fingerprint {
        return Err(Error::invalid(format!(
            "dictionary was learned with bank {} but got bank {}",
            dict.fingerprint,
            bank.fingerprint()
        )));
    }
    let pts = pixel_responses(image, bank)?;
    if pts.first().is_some_and(|p| p.len() != dict.dim()) {
        return Err(Error::invalid(format!(
            "response length {} differs from dictionary dimension {}",
            pts[0].len(),
            dict.dim()
        )));
    }
    Ok(pts.iter().map(|p| nearest(&dict.centers, p)).collect())
}

pub fn texton_histogram<S: Scalar>(
    image: &Tensor<S>,
    dict: &TextonDictionary,
    bank: &FilterBank<S>,
) -> Result<TextonHistogram> {
    let labels = texton_map(image, dict, bank)?;
    let mut bins = vec![0.0; dict.k()];
    for &l in &labels {
        bins[l] += 1.0;
    }
    let n = labels.len() as f64;
    bins.iter_mut().for_each(|b| *b /= n);
    Ok(TextonHistogram { bins })
}

/// Chi-squared distance `½ Σ (a-b)² / (a+b+1e-12)`.
pub fn histogram_distance(a: &TextonHistogram, b: &TextonHistogram) -> Result<f64> {
    if a.bins.len() != b.bins.len() {
        return Err(Error::shape(&[a.bins.len()], &[b.bins.len()]));
    }
    Ok(0.5
        * a.bins
            .iter()
            .zip(&b.bins)
            .map(|(x, y)| (x - y) * (x - y) / (x + y + 1e-12))
            .sum::<f64>())
}

/// Gram distance between two images over LM responses grouped by kernel kind,
/// with equal layer weights.
pub fn gram_distance<S: Scalar>(
    x: &Tensor<S>,
    x_hat: &Tensor<S>,
    bank: &FilterBank<S>,
) -> Result<f64> {
    let extractor = LmKindExtractor::new(bank.clone());
    let layers = bank.kind_layers(1).len();
    let weights = vec![S::one() / S::of_usize(layers); layers];
    let mut g = Graph::new();
    let a = g.constant(x.clone());
    let b = g.constant(x_hat.clone());
    let d = gram_loss(&mut g, a, b, &extractor, &weights)?;
    Ok(g.value(d).item().as_f64())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_squared_extremes() {
        let a = TextonHistogram {
            bins: vec![1.0, 0.0],
        };
        let b = TextonHistogram {
            bins: vec![0.0, 1.0],
        };
        assert!((histogram_distance(&a, &b).unwrap() - 1.0).abs() < 1e-10);
        assert_eq!(histogram_distance(&a, &a).unwrap(), 0.0);
        let c = TextonHistogram { bins: vec![1.0] };
        assert!(histogram_distance(&a, &c).is_err());
    }

    #[test]
    fn kmeans_recovers_separated_points() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![5.0, 5.0],
            vec![0.0, 0.0],
            vec![-3.0, 1.0],
        ];
        let km = kmeans(&pts, &KMeansConfig::new(3, 1)).unwrap();
        assert_eq!(*km.objective.last().unwrap(), 0.0);
        let mut c = km.centers.clone();
        c.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(c, vec![vec![-3.0, 1.0], vec![0.0, 0.0], vec![5.0, 5.0]]);
        assert!(kmeans(&pts, &KMeansConfig::new(4, 1)).is_err());
    }

    #[test]
    fn nearest_prefers_lowest_index() {
        let c = vec![vec![1.0], vec![-1.0]];
        assert_eq!(nearest(&c, &[0.0]), 0);
    }
}
