//! Synthetic image/report/label triples with planted cross-modal structure.
//!
//! Each disease class owns a 5x5 binary motif drawn at a fixed grid
//! position and a small set of report phrases. A record's labels are drawn
//! from per-class priors; its image carries the motif of every positive
//! class plus Gaussian noise; its report names every positive class and
//! randomly negates some of the negative ones.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::file::{DatasetFile, Record};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MOTIF: usize = 5;

struct ClassText {
    name: &'static str,
    /// Negated form is `no <term> .`
    term: &'static str,
    positives: &'static [&'static str],
}

const CLASSES: [ClassText; 15] = [
    ClassText {
        name: "Atelectasis",
        term: "atelectasis",
        positives: &["mild bibasilar atelectasis .", "there is bibasilar atelectasis ."],
    },
    ClassText {
        name: "Cardiomegaly",
        term: "cardiomegaly",
        positives: &["the heart is enlarged with cardiomegaly .", "stable cardiomegaly ."],
    },
    ClassText {
        name: "Effusion",
        term: "effusion",
        positives: &["small left pleural effusion .", "there is a left effusion ."],
    },
    ClassText {
        name: "Infiltration",
        term: "infiltrate",
        positives: &["patchy right infiltrate .", "there is a patchy infiltrate ."],
    },
    ClassText {
        name: "Mass",
        term: "mass",
        positives: &["a large hilar mass is seen .", "hilar mass ."],
    },
    ClassText {
        name: "Nodule",
        term: "nodule",
        positives: &["a calcified nodule is noted .", "calcified nodule in the apex ."],
    },
    ClassText {
        name: "Pneumonia",
        term: "pneumonia",
        positives: &["findings suggest lobar pneumonia .", "lobar pneumonia ."],
    },
    ClassText {
        name: "Pneumothorax",
        term: "pneumothorax",
        positives: &["apical pneumothorax on the right .", "there is an apical pneumothorax ."],
    },
    ClassText {
        name: "Consolidation",
        term: "consolidation",
        positives: &["dense basilar consolidation .", "basilar consolidation is present ."],
    },
    ClassText {
        name: "Edema",
        term: "edema",
        positives: &["interstitial pulmonary edema .", "mild interstitial edema ."],
    },
    ClassText {
        name: "Emphysema",
        term: "emphysema",
        positives: &["hyperinflated lungs with emphysema .", "changes of emphysema ."],
    },
    ClassText {
        name: "Fibrosis",
        term: "fibrosis",
        positives: &["reticular fibrosis at both bases .", "chronic reticular fibrosis ."],
    },
    ClassText {
        name: "Pleural_Thickening",
        term: "thickening",
        positives: &["biapical pleural thickening .", "there is biapical thickening ."],
    },
    ClassText {
        name: "Hernia",
        term: "hernia",
        positives: &["a hiatal hernia is present .", "large hiatal hernia ."],
    },
    ClassText {
        name: "No_Finding",
        term: "",
        positives: &["no acute cardiopulmonary abnormality ."],
    },
];

/// Parameters of the generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Number of classes; the last one is "no finding".
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub image_size: usize,
    /// Motif intensity.
    pub amplitude: f64,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    /// Prior of each disease class (`classes - 1` entries).
    pub priors: Vec<f64>,
    /// Chance that a negative disease class is mentioned as negated.
    pub negation_prob: f64,
    /// Shuffle phrase order inside each report.
    pub shuffle_phrases: bool,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 15,
            train: 2000,
            val: 250,
            test: 500,
            image_size: 32,
            amplitude: 1.0,
            noise: 0.5,
            priors: vec![
                0.14, 0.10, 0.16, 0.20, 0.08, 0.09, 0.06, 0.07, 0.08, 0.06, 0.05, 0.05, 0.05, 0.03,
            ],
            negation_prob: 0.3,
            shuffle_phrases: false,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(2..=CLASSES.len()).contains(&self.classes) {
            return bad(format!("data.classes must be in 2..={}", CLASSES.len()));
        }
        if self.priors.len() != self.classes - 1 {
            return bad(format!(
                "data.priors needs {} entries, got {}",
                self.classes - 1,
                self.priors.len()
            ));
        }
        if self.priors.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return bad("data.priors must lie in [0, 1]".into());
        }
        if !(0.0..=1.0).contains(&self.negation_prob) {
            return bad("data.negation_prob must lie in [0, 1]".into());
        }
        if !(self.noise >= 0.0) || !self.amplitude.is_finite() {
            return bad("data.noise must be nonnegative and data.amplitude finite".into());
        }
        let need = self.lattice() * (MOTIF + 1);
        if self.image_size < need {
            return bad(format!("data.image_size must be at least {need} to fit every motif"));
        }
        Ok(())
    }

    fn diseases(&self) -> usize {
        self.classes - 1
    }

    /// Side of the square lattice of motif positions.
    fn lattice(&self) -> usize {
        let mut k = 1;
        while k * k < self.diseases() {
            k += 1;
        }
        k
    }

    pub fn no_finding(&self) -> usize {
        self.classes - 1
    }

    pub fn class_names(&self) -> Vec<String> {
        let mut names: Vec<String> = CLASSES[..self.diseases()].iter().map(|c| c.name.to_string()).collect();
        names.push(CLASSES[CLASSES.len() - 1].name.to_string());
        names
    }

    /// Top-left pixel of the motif of disease class `m`.
    pub fn motif_origin(&self, m: usize) -> (usize, usize) {
        let k = self.lattice();
        let cell = self.image_size / k;
        let (row, col) = (m / k, m % k);
        let off = (cell - MOTIF) / 2;
        (row * cell + off, col * cell + off)
    }

    /// Class-specific binary pattern.
    pub fn motif(&self, m: usize) -> [[bool; MOTIF]; MOTIF] {
        motif_table()[m]
    }

    fn text(&self, m: usize) -> &'static ClassText {
        if m == self.no_finding() {
            &CLASSES[CLASSES.len() - 1]
        } else {
            &CLASSES[m]
        }
    }

    /// Every positive phrase variant of class `m`.
    pub fn positive_phrases(&self, m: usize) -> &'static [&'static str] {
        self.text(m).positives
    }

    /// Negated phrase of disease class `m` (none for "no finding").
    pub fn negation_phrase(&self, m: usize) -> Option<String> {
        (m != self.no_finding()).then(|| format!("no {} .", self.text(m).term))
    }

    /// Noise-free image of a label vector.
    pub fn render_clean(&self, labels: &[u8]) -> Tensor {
        let s = self.image_size;
        let mut img = vec![0.0; s * s];
        for m in (0..self.diseases()).filter(|&m| labels[m] == 1) {
            let (r0, c0) = self.motif_origin(m);
            let pat = self.motif(m);
            for (dr, row) in pat.iter().enumerate() {
                for (dc, &on) in row.iter().enumerate() {
                    if on {
                        img[(r0 + dr) * s + c0 + dc] = self.amplitude;
                    }
                }
            }
        }
        Tensor::new(vec![s, s, 1], img).expect("image shape")
    }

    fn record(&self, id: u64) -> Record {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, id));
        let mut labels = vec![0u8; self.classes];
        for m in 0..self.diseases() {
            labels[m] = u8::from(rng.random::<f64>() < self.priors[m]);
        }
        let nf = self.no_finding();
        labels[nf] = u8::from(labels[..nf].iter().all(|&l| l == 0));

        let mut image = self.render_clean(&labels).into_data();
        if self.noise > 0.0 {
            let normal = Normal::new(0.0, self.noise).expect("noise level");
            for px in image.iter_mut() {
                *px += normal.sample(&mut rng);
            }
        }

        let mut phrases: Vec<String> = Vec::new();
        for m in (0..self.classes).filter(|&m| labels[m] == 1) {
            let opts = self.positive_phrases(m);
            phrases.push(opts[rng.random_range(0..opts.len())].to_string());
        }
        for m in (0..self.diseases()).filter(|&m| labels[m] == 0) {
            if rng.random::<f64>() < self.negation_prob {
                phrases.push(self.negation_phrase(m).expect("disease class"));
            }
        }
        if self.shuffle_phrases {
            phrases.shuffle(&mut rng);
        }

        let s = self.image_size;
        Record {
            id,
            image: Tensor::new(vec![s, s, 1], image).expect("image shape"),
            report: phrases.join(" "),
            labels,
        }
    }
}

/// Train, validation and test splits.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: DatasetFile,
    pub val: DatasetFile,
    pub test: DatasetFile,
}

/// Generates all three splits; record ids are disjoint across splits and
/// every record depends only on `(spec.seed, id)`.
pub fn generate(spec: &SyntheticSpec) -> Result<Splits> {
    spec.validate()?;
    let mut next = 0u64;
    let mut split = |name: &str, n: usize| {
        let records = (next..next + n as u64).map(|id| spec.record(id)).collect();
        next += n as u64;
        DatasetFile {
            split: Some(name.to_string()),
            records,
        }
    };
    Ok(Splits {
        train: split("train", spec.train),
        val: split("val", spec.val),
        test: split("test", spec.test),
    })
}

/// SplitMix64-style combination of a seed and a stream index.
pub fn mix(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fixed motifs: pairwise Hamming distance at least 8, 10 to 15 pixels lit.
fn motif_table() -> &'static [[[bool; MOTIF]; MOTIF]; 14] {
    use std::sync::OnceLock;
    static TABLE: OnceLock<[[[bool; MOTIF]; MOTIF]; 14]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0F_C1A55);
        let mut out: Vec<[[bool; MOTIF]; MOTIF]> = Vec::new();
        while out.len() < 14 {
            let mut p = [[false; MOTIF]; MOTIF];
            for row in p.iter_mut() {
                for px in row.iter_mut() {
                    *px = rng.random::<bool>();
                }
            }
            let lit = p.iter().flatten().filter(|&&b| b).count();
            let far = out.iter().all(|q| {
                p.iter().flatten().zip(q.iter().flatten()).filter(|(a, b)| a != b).count() >= 8
            });
            if (10..=15).contains(&lit) && far {
                out.push(p);
            }
        }
        out.try_into().expect("14 motifs")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            train: 60,
            val: 10,
            test: 20,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn motif_positions_are_disjoint() {
        let spec = SyntheticSpec::default();
        let mut cover = vec![0u8; 32 * 32];
        for m in 0..14 {
            let (r, c) = spec.motif_origin(m);
            assert!(r + MOTIF <= 32 && c + MOTIF <= 32);
            for dr in 0..MOTIF {
                for dc in 0..MOTIF {
                    cover[(r + dr) * 32 + c + dc] += 1;
                }
            }
        }
        assert!(cover.iter().all(|&c| c <= 1));
    }

    #[test]
    fn noiseless_single_positive_equals_motif() {
        let spec = SyntheticSpec {
            noise: 0.0,
            ..small()
        };
        let mut labels = vec![0u8; 15];
        labels[4] = 1;
        let img = spec.render_clean(&labels);
        let (r0, c0) = spec.motif_origin(4);
        let pat = spec.motif(4);
        for r in 0..32 {
            for c in 0..32 {
                let inside = (r0..r0 + MOTIF).contains(&r) && (c0..c0 + MOTIF).contains(&c);
                let want = if inside && pat[r - r0][c - c0] { 1.0 } else { 0.0 };
                assert_eq!(img.data()[r * 32 + c], want);
            }
        }
        // the generator itself produces exactly the clean render at zero noise
        let splits = generate(&spec).unwrap();
        for rec in &splits.train.records {
            assert_eq!(rec.image, spec.render_clean(&rec.labels));
        }
    }

    #[test]
    fn no_finding_is_exclusive() {
        let splits = generate(&small()).unwrap();
        for rec in splits.train.records.iter().chain(&splits.test.records) {
            let diseased = rec.labels[..14].iter().any(|&l| l == 1);
            assert_eq!(rec.labels[14] == 1, !diseased);
        }
    }

    #[test]
    fn generation_is_deterministic_and_seed_sensitive() {
        let a = generate(&small()).unwrap();
        assert_eq!(a, generate(&small()).unwrap());
        let b = generate(&SyntheticSpec { seed: 9, ..small() }).unwrap();
        assert_ne!(a.train.records, b.train.records);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate(&SyntheticSpec { priors: vec![0.1; 3], ..small() }).is_err());
        assert!(generate(&SyntheticSpec { negation_prob: 2.0, ..small() }).is_err());
        assert!(generate(&SyntheticSpec { image_size: 16, ..small() }).is_err());
    }
}
