//! Does training on nuisance-resampled copies of the corpus make the speaker
//! code more robust? Train one model without augmentation and one with the
//! doubled corpus (same speakers), then compare verification EER on a
//! nuisance-conditioned trial set.
//!
//! ```bash
//! cargo run --release --example augmentation_benefit
//! ```

use disentangle::backend::{compute_det, fit_lda, fit_plda, project_lda, score_plda};
use disentangle::dataio::{make_splits, EmbeddingArchive, LabelTable, SplitSpec, TrialList};
use disentangle::synth::{augment_corpus, generate_corpus, make_trials, AugmentSpec, GeneratorSpec};
use disentangle::uai::{UaiConfig, UaiModel};

fn pipeline_eer(
    embeddings: &EmbeddingArchive,
    labels: &LabelTable,
    split: &SplitSpec,
    trials: &TrialList,
) -> f64 {
    let mut train = EmbeddingArchive::new(embeddings.dim());
    for id in &split.train_ids {
        train.push(id, embeddings.get(id).unwrap()).unwrap();
    }
    let lda = fit_lda(&train, labels, 24).unwrap();
    let plda = fit_plda(&project_lda(&lda, &train).unwrap(), labels, 15).unwrap();
    let scores =
        score_plda(&plda.model, trials, &project_lda(&lda, embeddings).unwrap()).unwrap();
    compute_det(&scores).unwrap().eer
}

fn main() {
    let gen = GeneratorSpec {
        dim: 256,
        n_speakers: 30,
        utts_per_speaker: 24,
        seed: 21,
        ..GeneratorSpec::default()
    };
    let corpus = generate_corpus(&gen).unwrap();
    let ids = corpus.embeddings.ids().to_vec();
    let (split, _) =
        make_splits(&ids, (0.8, 0.1, 0.1), Some(("speaker", &corpus.labels)), 21).unwrap();

    // double the training data by resampling the noise class of each
    // utterance; the speaker component is untouched
    let aug = AugmentSpec {
        copies: 1,
        perturb_factor: "noise".into(),
        perturb_strength: 1.0,
        seed: 21,
    };
    let augmented = augment_corpus(&corpus.embeddings, &corpus.labels, &aug, &gen).unwrap();
    let aug_split = SplitSpec {
        train_ids: split
            .train_ids
            .iter()
            .flat_map(|id| [id.clone(), format!("{id}-aug1")])
            .collect(),
        val_ids: split.val_ids.clone(),
        test_ids: split.test_ids.clone(),
        seed: 21,
    };

    let cfg = UaiConfig { h1_dim: 64, epochs: 20, seed: 21, ..UaiConfig::new(256, 30) };
    println!("training without augmentation...");
    let mut plain = UaiModel::build(cfg.clone()).unwrap();
    plain.train(&corpus.embeddings, &corpus.labels, &split).unwrap();
    println!("training with augmented data ({} utterances)...", augmented.embeddings.len());
    let mut boosted = UaiModel::build(cfg).unwrap();
    boosted.train(&augmented.embeddings, &augmented.labels, &aug_split).unwrap();

    let (h1_plain, _) = plain.extract_embeddings(&corpus.embeddings).unwrap();
    let (h1_boosted, _) = boosted.extract_embeddings(&corpus.embeddings).unwrap();

    let eval_ids: Vec<String> =
        split.val_ids.iter().chain(&split.test_ids).cloned().collect();
    let trials =
        make_trials(&corpus.labels, &eval_ids, 60, 400, Some(("noise", "c2")), 21).unwrap();

    let eer_plain = pipeline_eer(&h1_plain, &corpus.labels, &split, &trials);
    let eer_boosted = pipeline_eer(&h1_boosted, &corpus.labels, &split, &trials);
    println!("EER without augmentation: {:.2}%", 100.0 * eer_plain);
    println!("EER with augmentation:    {:.2}%", 100.0 * eer_boosted);
    println!(
        "augmentation changed EER by {:+.2} points",
        100.0 * (eer_boosted - eer_plain)
    );
}
