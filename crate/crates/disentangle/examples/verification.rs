//! Speaker verification with the LDA+PLDA backend: score trials whose test
//! utterances all carry one nuisance condition, once on raw embeddings and
//! once on the disentangled speaker code, and compare equal error rates.
//!
//! ```bash
//! cargo run --release --example verification
//! ```

use disentangle::backend::{
    compute_det, eer_delta, fit_lda, fit_plda, project_lda, score_plda, DetCurve,
};
use disentangle::dataio::{make_splits, EmbeddingArchive, LabelTable, SplitSpec, TrialList};
use disentangle::synth::{generate_corpus, make_trials, GeneratorSpec};
use disentangle::uai::{UaiConfig, UaiModel};

fn pipeline(
    embeddings: &EmbeddingArchive,
    labels: &LabelTable,
    split: &SplitSpec,
    trials: &TrialList,
    lda_dim: usize,
) -> DetCurve {
    let mut train = EmbeddingArchive::new(embeddings.dim());
    for id in &split.train_ids {
        train.push(id, embeddings.get(id).unwrap()).unwrap();
    }
    let lda = fit_lda(&train, labels, lda_dim).unwrap();
    let plda = fit_plda(&project_lda(&lda, &train).unwrap(), labels, 15).unwrap();
    let projected = project_lda(&lda, embeddings).unwrap();
    let scores = score_plda(&plda.model, trials, &projected).unwrap();
    compute_det(&scores).unwrap()
}

fn main() {
    let spec = GeneratorSpec::default();
    let corpus = generate_corpus(&spec).unwrap();
    let ids = corpus.embeddings.ids().to_vec();
    let (split, _) =
        make_splits(&ids, (0.8, 0.1, 0.1), Some(("speaker", &corpus.labels)), 7).unwrap();

    println!("training the disentangler ({} epochs)...", UaiConfig::new(512, 50).epochs);
    let mut model = UaiModel::build(UaiConfig::new(512, 50)).unwrap();
    model.train(&corpus.embeddings, &corpus.labels, &split).unwrap();
    let (h1, _) = model.extract_embeddings(&corpus.embeddings).unwrap();

    // held-out trials; every test utterance carries noise class c3
    let eval_ids: Vec<String> =
        split.val_ids.iter().chain(&split.test_ids).cloned().collect();
    let trials =
        make_trials(&corpus.labels, &eval_ids, 500, 500, Some(("noise", "c3")), 99).unwrap();

    let raw_curve = pipeline(&corpus.embeddings, &corpus.labels, &split, &trials, 40);
    let h1_curve = pipeline(&h1, &corpus.labels, &split, &trials, 40);
    println!("raw + LDA + PLDA : EER {:.2}%", 100.0 * raw_curve.eer);
    println!("h1  + LDA + PLDA : EER {:.2}%", 100.0 * h1_curve.eer);
    println!(
        "absolute EER reduction from disentanglement: {:.2} points",
        100.0 * eer_delta(&raw_curve, &h1_curve)
    );

    let dir = std::env::temp_dir().join("disentangle-example-verification");
    std::fs::create_dir_all(&dir).unwrap();
    raw_curve.save_csv(&dir.join("det_raw.csv")).unwrap();
    h1_curve.save_csv(&dir.join("det_h1.csv")).unwrap();
    println!("DET curves written to {}", dir.display());
}
