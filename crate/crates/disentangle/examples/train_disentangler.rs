//! Train the adversarial invariance model on a synthetic corpus and watch
//! the minimax dynamics: prediction loss falls, the adversary objective is
//! driven toward its ceiling, held-out speaker accuracy climbs.
//!
//! ```bash
//! cargo run --release --example train_disentangler
//! ```

use disentangle::dataio::make_splits;
use disentangle::synth::{generate_corpus, GeneratorSpec};
use disentangle::uai::{save_uai, UaiConfig, UaiModel};

fn main() {
    let spec = GeneratorSpec {
        dim: 256,
        n_speakers: 25,
        utts_per_speaker: 24,
        seed: 7,
        ..GeneratorSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let ids = corpus.embeddings.ids().to_vec();
    let (split, _) =
        make_splits(&ids, (0.8, 0.1, 0.1), Some(("speaker", &corpus.labels)), 7).unwrap();

    let cfg = UaiConfig { h1_dim: 64, epochs: 20, ..UaiConfig::new(256, 25) };
    let mut model = UaiModel::build(cfg).unwrap();
    let log = model.train(&corpus.embeddings, &corpus.labels, &split).unwrap();
    println!("epoch  main      pred    recon    adv     val-speaker-acc");
    for e in &log.epochs {
        println!(
            "{:>5}  {:>8.4}  {:>6.4}  {:>6.4}  {:>6.4}  {}",
            e.epoch,
            e.main_loss,
            e.pred_loss,
            e.recon_loss,
            e.adv_loss,
            e.val_speaker_accuracy
                .map(|a| format!("{a:.3}"))
                .unwrap_or_else(|| "-".into())
        );
    }

    let (h1, h2) = model.extract_embeddings(&corpus.embeddings).unwrap();
    println!(
        "extracted codes: h1 dim {}, h2 dim {}, {} utterances",
        h1.dim(),
        h2.dim(),
        h1.len()
    );

    let dir = std::env::temp_dir().join("disentangle-example-model");
    save_uai(&model, &dir, "fnv1a64:0").unwrap();
    println!("checkpoint written to {}", dir.display());
}
