//! Near-duplicate detection with concatenated average/perceptual/difference hashes.
//!
//! Each hash is 64 bits, row-major, with the first cell in the most significant
//! bit. Duplicates are the connected components of the graph linking records
//! whose 192-bit triples lie within a Hamming threshold, computed separately
//! for each category.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::imaging::{resize_bilinear, to_grayscale, PixelImage};
use crate::manifest::{ImageRecord, Manifest, Stage, StageReport, StageTally};

pub const DEFAULT_THRESHOLD: u32 = 10;
pub const REMOVAL_REASON: &str = "near_duplicate";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HashTriple {
    pub ahash: u64,
    pub phash: u64,
    pub dhash: u64,
}

impl HashTriple {
    pub fn of(img: &PixelImage) -> Self {
        let gray = to_grayscale(img);
        HashTriple {
            ahash: average_hash(&gray),
            phash: perceptual_hash(&gray),
            dhash: difference_hash(&gray),
        }
    }

    pub fn complement(self) -> Self {
        HashTriple {
            ahash: !self.ahash,
            phash: !self.phash,
            dhash: !self.dhash,
        }
    }
}

impl fmt::Display for HashTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}{:016x}{:016x}", self.ahash, self.phash, self.dhash)
    }
}

impl FromStr for HashTriple {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let valid = s.len() == 48
            && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if !valid {
            return Err(Error::invalid(format!(
                "hash triple must be 48 lowercase hex chars, got {s:?}"
            )));
        }
        let part = |i: usize| u64::from_str_radix(&s[i * 16..(i + 1) * 16], 16).expect("validated hex");
        Ok(HashTriple {
            ahash: part(0),
            phash: part(1),
            dhash: part(2),
        })
    }
}

impl Serialize for HashTriple {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HashTriple {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Packs booleans into a u64, first element in the most significant bit.
fn pack_bits(bits: impl IntoIterator<Item = bool>) -> u64 {
    bits.into_iter().fold(0u64, |acc, b| (acc << 1) | u64::from(b))
}

pub fn average_hash(img: &PixelImage) -> u64 {
    let small = resize_bilinear(&to_grayscale(img), 8, 8);
    let samples = small.samples();
    let sum: u32 = samples.iter().map(|&s| u32::from(s)).sum();
    let mean = f64::from(sum) / 64.0;
    pack_bits(samples.iter().map(|&s| f64::from(s) > mean))
}

pub fn difference_hash(img: &PixelImage) -> u64 {
    let small = resize_bilinear(&to_grayscale(img), 9, 8);
    let s = small.samples();
    pack_bits((0..8).flat_map(|row| (0..8).map(move |x| s[row * 9 + x + 1] > s[row * 9 + x])))
}

const DCT_SIDE: usize = 32;
const DCT_KEEP: usize = 8;

/// First eight rows of the orthonormal 32-point DCT-II basis.
fn dct_basis() -> &'static [[f64; DCT_SIDE]; DCT_KEEP] {
    static BASIS: OnceLock<[[f64; DCT_SIDE]; DCT_KEEP]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let n = DCT_SIDE as f64;
        let mut m = [[0.0; DCT_SIDE]; DCT_KEEP];
        for (k, row) in m.iter_mut().enumerate() {
            let alpha = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
            for (i, v) in row.iter_mut().enumerate() {
                *v = alpha
                    * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * k as f64 / (2.0 * n)).cos();
            }
        }
        m
    })
}

/// Low-frequency 8x8 block of the orthonormal 2-D DCT-II of a 32x32 gray image.
///
/// The input is mean-centred first; this only changes the DC term and makes
/// every AC coefficient of a constant image exactly zero.
pub fn low_frequency_dct(img: &PixelImage) -> [[f64; DCT_KEEP]; DCT_KEEP] {
    let small = resize_bilinear(&to_grayscale(img), DCT_SIDE as u32, DCT_SIDE as u32);
    let s = small.samples();
    let sum: u32 = s.iter().map(|&v| u32::from(v)).sum();
    let mean = f64::from(sum) / (DCT_SIDE * DCT_SIDE) as f64;
    let basis = dct_basis();

    // Rows first: tmp[y][k] = sum_x basis[k][x] * p[y][x]
    let mut tmp = [[0.0; DCT_KEEP]; DCT_SIDE];
    for (y, t) in tmp.iter_mut().enumerate() {
        for (k, out) in t.iter_mut().enumerate() {
            *out = (0..DCT_SIDE)
                .map(|x| basis[k][x] * (f64::from(s[y * DCT_SIDE + x]) - mean))
                .sum();
        }
    }
    let mut coeffs = [[0.0; DCT_KEEP]; DCT_KEEP];
    for (v, row) in coeffs.iter_mut().enumerate() {
        for (u, out) in row.iter_mut().enumerate() {
            *out = (0..DCT_SIDE).map(|y| basis[v][y] * tmp[y][u]).sum();
        }
    }
    coeffs
}

pub fn perceptual_hash(img: &PixelImage) -> u64 {
    let coeffs = low_frequency_dct(img);
    let flat: Vec<f64> = coeffs.iter().flatten().copied().collect();
    let mut ac: Vec<f64> = flat[1..].to_vec();
    ac.sort_by(f64::total_cmp);
    let median = ac[ac.len() / 2];
    pack_bits(
        flat.iter()
            .enumerate()
            .map(|(i, &c)| i != 0 && c > median),
    )
}

pub fn hamming(a: &HashTriple, b: &HashTriple) -> u32 {
    (a.ahash ^ b.ahash).count_ones() + (a.phash ^ b.phash).count_ones() + (a.dhash ^ b.dhash).count_ones()
}

pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            rank: vec![0; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DuplicateCluster {
    pub category_id: u32,
    /// Sorted ascending.
    pub member_ids: Vec<String>,
    pub keeper_id: String,
    pub max_pairwise_distance: u32,
}

/// Picks the member with the largest pixel area, then the most bytes, then the
/// lexicographically smallest id.
pub fn select_keeper<'a>(members: &[&'a ImageRecord]) -> &'a str {
    members
        .iter()
        .min_by(|a, b| {
            b.area()
                .cmp(&a.area())
                .then(b.byte_size.cmp(&a.byte_size))
                .then(a.id.cmp(&b.id))
        })
        .map(|r| r.id.as_str())
        .expect("select_keeper needs at least one member")
}

/// Connected components (size >= 2) of the within-threshold graph over one
/// category's records. `threshold = 0` finds exact-hash duplicates only.
pub fn find_duplicate_clusters(records: &[&ImageRecord], threshold: u32) -> Result<Vec<DuplicateCluster>> {
    let Some(first) = records.first() else {
        return Ok(Vec::new());
    };
    let mut hashes = Vec::with_capacity(records.len());
    for r in records {
        if r.category_id != first.category_id {
            return Err(Error::MixedCategories(first.category_id, r.category_id));
        }
        hashes.push(r.hash.ok_or_else(|| Error::MissingHash(r.id.clone()))?);
    }

    let n = records.len();
    let mut uf = UnionFind::new(n);
    for i in 0..n {
        for j in i + 1..n {
            if hamming(&hashes[i], &hashes[j]) <= threshold {
                uf.union(i, j);
            }
        }
    }

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = uf.find(i);
        groups.entry(root).or_default().push(i);
    }

    let mut clusters: Vec<DuplicateCluster> = groups
        .into_values()
        .filter(|g| g.len() >= 2)
        .map(|g| {
            let members: Vec<&ImageRecord> = g.iter().map(|&i| records[i]).collect();
            let mut max_d = 0;
            for (a, &i) in g.iter().enumerate() {
                for &j in &g[a + 1..] {
                    max_d = max_d.max(hamming(&hashes[i], &hashes[j]));
                }
            }
            let mut member_ids: Vec<String> = members.iter().map(|r| r.id.clone()).collect();
            member_ids.sort();
            DuplicateCluster {
                category_id: first.category_id,
                keeper_id: select_keeper(&members).to_string(),
                member_ids,
                max_pairwise_distance: max_d,
            }
        })
        .collect();
    clusters.sort_by(|a, b| a.member_ids.cmp(&b.member_ids));
    Ok(clusters)
}

/// Clusters every category's active records and removes all non-keepers.
/// Active records must already carry hashes.
pub fn dedup_manifest(m: &mut Manifest, threshold: u32) -> Result<(StageReport, Vec<DuplicateCluster>)> {
    let mut by_category: BTreeMap<u32, Vec<&ImageRecord>> = BTreeMap::new();
    for r in m.active() {
        by_category.entry(r.category_id).or_default().push(r);
    }
    let mut tally = StageTally::new();
    let mut clusters = Vec::new();
    for (&category, records) in &by_category {
        for _ in records {
            tally.input(category);
        }
        clusters.extend(find_duplicate_clusters(records, threshold)?);
    }
    for cluster in &clusters {
        for id in cluster.member_ids.iter().filter(|id| **id != cluster.keeper_id) {
            let rec = m.record_mut(id).expect("cluster member exists");
            rec.remove(Stage::Dedup, REMOVAL_REASON);
            tally.removed(cluster.category_id, REMOVAL_REASON);
        }
    }
    Ok((tally.finish(Stage::Dedup), clusters))
}
