//! Synthetic factor-entangled embedding corpora with known ground truth.
//!
//! Each utterance is a linear mix of a speaker component, one component per
//! nuisance factor, and isotropic Gaussian noise:
//!
//! `x = speaker_strength * A[:, spk] + sum_f strength_f * B_f[:, class_f] + noise_sigma * eps`
//!
//! All mixing columns are drawn from one jointly orthonormalized basis, so
//! the speaker subspace is exactly orthogonal to every nuisance subspace and
//! tests can isolate components by projection. Nuisance classes are drawn
//! independently of the speaker unless `confound > 0`.

use serde::{Deserialize, Serialize};

use crate::dataio::{DataError, EmbeddingArchive, LabelTable, Trial, TrialList};
use crate::rng;

use rand::seq::SliceRandom;
use rand::RngExt;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid generator spec: {0}")]
    InvalidSpec(String),
    #[error("unknown factor {0:?}")]
    UnknownFactor(String),
    #[error("insufficient pairs: requested {requested}, only {available} available")]
    InsufficientPairs { requested: usize, available: usize },
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FactorSpec {
    pub name: String,
    pub n_classes: usize,
    pub strength: f64,
}

impl FactorSpec {
    pub fn new(name: &str, n_classes: usize, strength: f64) -> Self {
        FactorSpec { name: name.to_string(), n_classes, strength }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub dim: usize,
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    pub nuisance_factors: Vec<FactorSpec>,
    pub speaker_strength: f64,
    pub noise_sigma: f64,
    /// Probability that an utterance's nuisance class is tied to its speaker
    /// instead of drawn uniformly; 0 keeps the factors independent.
    #[serde(default)]
    pub confound: f64,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            dim: 512,
            n_speakers: 50,
            utts_per_speaker: 40,
            nuisance_factors: vec![FactorSpec::new("noise", 4, 1.0)],
            speaker_strength: 1.0,
            noise_sigma: 0.3,
            confound: 0.0,
            seed: 7,
        }
    }
}

impl GeneratorSpec {
    fn validate(&self) -> Result<(), SynthError> {
        if self.dim == 0 || self.n_speakers == 0 || self.utts_per_speaker == 0 {
            return Err(SynthError::InvalidSpec("dims and counts must be positive".into()));
        }
        for f in &self.nuisance_factors {
            if f.n_classes < 2 {
                return Err(SynthError::InvalidSpec(format!(
                    "factor {:?} needs at least 2 classes",
                    f.name
                )));
            }
            if !f.strength.is_finite() || f.strength < 0.0 {
                return Err(SynthError::InvalidSpec(format!(
                    "factor {:?} has bad strength {}",
                    f.name, f.strength
                )));
            }
            if f.name == "speaker" {
                return Err(SynthError::InvalidSpec("`speaker` is not a nuisance factor".into()));
            }
        }
        if !(self.speaker_strength > 0.0) || !(self.noise_sigma >= 0.0) {
            return Err(SynthError::InvalidSpec("bad strength/sigma".into()));
        }
        if !(0.0..=1.0).contains(&self.confound) {
            return Err(SynthError::InvalidSpec("confound must be in [0, 1]".into()));
        }
        Ok(())
    }

    fn total_onehot_width(&self) -> usize {
        self.n_speakers + self.nuisance_factors.iter().map(|f| f.n_classes).sum::<usize>()
    }

    pub fn speaker_label(spk: usize) -> String {
        format!("s{spk:04}")
    }

    pub fn class_label(class: usize) -> String {
        format!("c{class}")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub copies: usize,
    pub perturb_factor: String,
    /// Scale of the swap `new_class_mix - old_class_mix` added to each copy.
    /// Matching the generator strength of the factor replaces the class
    /// contribution exactly; 0 leaves the copies identical to the originals.
    pub perturb_strength: f64,
    pub seed: u64,
}

pub struct Corpus {
    pub embeddings: EmbeddingArchive,
    pub labels: LabelTable,
    pub warnings: Vec<String>,
}

/// Column-orthonormal mixing basis: speaker block then one block per factor.
/// Falls back to unit-normalized columns (with a warning) when the embedding
/// dimension cannot host that many orthogonal directions.
struct MixingBasis {
    columns: Vec<Vec<f64>>, // total_onehot_width columns of length dim
    exact: bool,
}

impl MixingBasis {
    fn build(spec: &GeneratorSpec) -> MixingBasis {
        let total = spec.total_onehot_width();
        let mut rng = rng::stream(spec.seed, "mixing", 0);
        let mut columns: Vec<Vec<f64>> = (0..total)
            .map(|_| (0..spec.dim).map(|_| rng::standard_normal(&mut rng)).collect())
            .collect();
        let exact = total <= spec.dim;
        // modified Gram-Schmidt; skip orthogonalization when over-complete
        for i in 0..total {
            if exact {
                for j in 0..i {
                    let proj: f64 =
                        columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum();
                    let prev = columns[j].clone();
                    for (v, p) in columns[i].iter_mut().zip(&prev) {
                        *v -= proj * p;
                    }
                }
            }
            let norm: f64 = columns[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            for v in &mut columns[i] {
                *v /= norm;
            }
        }
        MixingBasis { columns, exact }
    }

    fn speaker_column(&self, spk: usize) -> &[f64] {
        &self.columns[spk]
    }

    fn factor_column(&self, spec: &GeneratorSpec, factor_idx: usize, class: usize) -> &[f64] {
        let mut offset = spec.n_speakers;
        for f in &spec.nuisance_factors[..factor_idx] {
            offset += f.n_classes;
        }
        &self.columns[offset + class]
    }
}

fn draw_classes(spec: &GeneratorSpec, spk: usize, utt_index: u64) -> Vec<usize> {
    let mut rng = rng::stream(spec.seed, "utt", utt_index);
    spec.nuisance_factors
        .iter()
        .map(|f| {
            let confounded = spec.confound > 0.0 && rng.random::<f64>() < spec.confound;
            if confounded {
                spk % f.n_classes
            } else {
                rng.random_range(0..f.n_classes)
            }
        })
        .collect()
}

/// Generate a corpus. Deterministic in `spec.seed`; per-utterance randomness
/// comes from a substream keyed by the utterance index, so results do not
/// depend on generation order.
pub fn generate_corpus(spec: &GeneratorSpec) -> Result<Corpus, SynthError> {
    spec.validate()?;
    let basis = MixingBasis::build(spec);
    let mut warnings = Vec::new();
    if !basis.exact {
        warnings.push(format!(
            "dim {} is smaller than the total one-hot width {}; mixing columns are \
             normalized but not orthogonal",
            spec.dim,
            spec.total_onehot_width()
        ));
    }

    let mut factor_names: Vec<String> = vec!["speaker".to_string()];
    factor_names.extend(spec.nuisance_factors.iter().map(|f| f.name.clone()));
    let mut labels = LabelTable::new(&factor_names)?;
    let mut archive = EmbeddingArchive::new(spec.dim);

    for spk in 0..spec.n_speakers {
        for u in 0..spec.utts_per_speaker {
            let utt_index = (spk * spec.utts_per_speaker + u) as u64;
            let classes = draw_classes(spec, spk, utt_index);
            let mut x = vec![0.0; spec.dim];
            for (xv, av) in x.iter_mut().zip(basis.speaker_column(spk)) {
                *xv += spec.speaker_strength * av;
            }
            for (fi, f) in spec.nuisance_factors.iter().enumerate() {
                let col = basis.factor_column(spec, fi, classes[fi]);
                for (xv, bv) in x.iter_mut().zip(col) {
                    *xv += f.strength * bv;
                }
            }
            if spec.noise_sigma > 0.0 {
                // noise comes after the class draws in the substream, so label
                // assignments are independent of sigma
                let mut rng = rng::stream(spec.seed, "utt-noise", utt_index);
                for xv in &mut x {
                    *xv += spec.noise_sigma * rng::standard_normal(&mut rng);
                }
            }
            let id = format!("{}-u{u:04}", GeneratorSpec::speaker_label(spk));
            let mut row = vec![GeneratorSpec::speaker_label(spk)];
            row.extend(classes.iter().map(|&c| GeneratorSpec::class_label(c)));
            archive.push(&id, &x)?;
            labels.push_row(&id, &row)?;
        }
    }
    Ok(Corpus { embeddings: archive, labels, warnings })
}

/// Append `copies` perturbed duplicates per utterance: the class of
/// `perturb_factor` is resampled and its mixing contribution swapped while
/// everything else, in particular the speaker component, is untouched.
/// Copy ids carry an `-augK` suffix.
pub fn augment_corpus(
    archive: &EmbeddingArchive,
    labels: &LabelTable,
    aug: &AugmentSpec,
    generator: &GeneratorSpec,
) -> Result<Corpus, SynthError> {
    generator.validate()?;
    if aug.copies == 0 {
        return Err(SynthError::InvalidSpec("copies must be >= 1".into()));
    }
    let factor_idx = generator
        .nuisance_factors
        .iter()
        .position(|f| f.name == aug.perturb_factor)
        .ok_or_else(|| SynthError::UnknownFactor(aug.perturb_factor.clone()))?;
    let n_classes = generator.nuisance_factors[factor_idx].n_classes;
    let basis = MixingBasis::build(generator);

    let mut out = EmbeddingArchive::new(archive.dim());
    let mut out_labels = LabelTable::new(labels.factors())?;
    let row_of = |id: &str| -> Result<Vec<String>, SynthError> {
        labels
            .factors()
            .iter()
            .map(|f| labels.label(id, f).map(str::to_string))
            .collect::<Result<_, _>>()
            .map_err(SynthError::Data)
    };
    for (id, vec) in archive.iter() {
        out.push(id, vec)?;
        out_labels.push_row(id, &row_of(id)?)?;
    }
    let perturb_factor_name = &generator.nuisance_factors[factor_idx].name;
    for (u, (id, vec)) in archive.iter().enumerate() {
        let old_label = labels.label(id, perturb_factor_name)?;
        let old_class = (0..n_classes)
            .find(|&c| GeneratorSpec::class_label(c) == old_label)
            .ok_or_else(|| {
                SynthError::InvalidSpec(format!(
                    "label {old_label:?} of {id:?} is not a generator class"
                ))
            })?;
        for k in 1..=aug.copies {
            let mut rng =
                rng::stream(aug.seed, "augment", (u * aug.copies + k) as u64);
            let new_class = rng.random_range(0..n_classes);
            let mut x = vec.to_vec();
            if aug.perturb_strength != 0.0 {
                let old_col = basis.factor_column(generator, factor_idx, old_class).to_vec();
                let new_col = basis.factor_column(generator, factor_idx, new_class);
                for ((xv, ov), nv) in x.iter_mut().zip(&old_col).zip(new_col) {
                    *xv += aug.perturb_strength * (nv - ov);
                }
            }
            let copy_id = format!("{id}-aug{k}");
            let mut row = row_of(id)?;
            if aug.perturb_strength != 0.0 {
                let fi = labels
                    .factors()
                    .iter()
                    .position(|f| f == perturb_factor_name)
                    .expect("factor present");
                row[fi] = GeneratorSpec::class_label(new_class);
            }
            out.push(&copy_id, &x)?;
            out_labels.push_row(&copy_id, &row)?;
        }
    }
    Ok(Corpus { embeddings: out, labels: out_labels, warnings: Vec::new() })
}

/// Build a trial list: targets pair same-speaker distinct utterances,
/// nontargets pair different speakers. With `condition = (factor, class)` the
/// test utterance must carry that class. Sampling is uniform without
/// replacement and deterministic in `seed`.
pub fn make_trials(
    labels: &LabelTable,
    ids: &[String],
    n_target: usize,
    n_nontarget: usize,
    condition: Option<(&str, &str)>,
    seed: u64,
) -> Result<TrialList, SynthError> {
    let speakers: Vec<&str> = ids
        .iter()
        .map(|id| labels.label(id, "speaker"))
        .collect::<Result<_, _>>()?;
    let eligible_test: Vec<bool> = match condition {
        Some((factor, class)) => ids
            .iter()
            .map(|id| labels.label(id, factor).map(|l| l == class))
            .collect::<Result<_, _>>()?,
        None => vec![true; ids.len()],
    };

    let mut target_pairs: Vec<(u32, u32)> = Vec::new();
    let mut nontarget_pairs: Vec<(u32, u32)> = Vec::new();
    for e in 0..ids.len() {
        for t in 0..ids.len() {
            if e == t || !eligible_test[t] {
                continue;
            }
            if speakers[e] == speakers[t] {
                target_pairs.push((e as u32, t as u32));
            } else {
                nontarget_pairs.push((e as u32, t as u32));
            }
        }
    }
    if target_pairs.len() < n_target {
        return Err(SynthError::InsufficientPairs {
            requested: n_target,
            available: target_pairs.len(),
        });
    }
    if nontarget_pairs.len() < n_nontarget {
        return Err(SynthError::InsufficientPairs {
            requested: n_nontarget,
            available: nontarget_pairs.len(),
        });
    }
    let mut rng = rng::stream(seed, "trials-target", 0);
    target_pairs.shuffle(&mut rng);
    let mut rng = rng::stream(seed, "trials-nontarget", 0);
    nontarget_pairs.shuffle(&mut rng);

    let mut trials = TrialList::default();
    for &(e, t) in &target_pairs[..n_target] {
        trials.trials.push(Trial {
            enroll: ids[e as usize].clone(),
            test: ids[t as usize].clone(),
            is_target: true,
        });
    }
    for &(e, t) in &nontarget_pairs[..n_nontarget] {
        trials.trials.push(Trial {
            enroll: ids[e as usize].clone(),
            test: ids[t as usize].clone(),
            is_target: false,
        });
    }
    Ok(trials)
}
