//! The probing experiment: how much does each embedding reveal about each
//! factor? Train one classifier per (embedding, factor) cell and print the
//! accuracy table. Disentanglement should drain nuisance information from
//! the speaker code h1 while keeping speaker accuracy close to the raw
//! embeddings.
//!
//! ```bash
//! cargo run --release --example probe_factors
//! ```

use disentangle::dataio::make_splits;
use disentangle::probe::{train_probe, ProbeConfig};
use disentangle::synth::{generate_corpus, GeneratorSpec};
use disentangle::uai::{UaiConfig, UaiModel};

fn main() {
    let spec = GeneratorSpec {
        dim: 256,
        n_speakers: 25,
        utts_per_speaker: 32,
        seed: 7,
        ..GeneratorSpec::default()
    };
    let corpus = generate_corpus(&spec).unwrap();
    let ids = corpus.embeddings.ids().to_vec();
    let (split, _) =
        make_splits(&ids, (0.8, 0.1, 0.1), Some(("speaker", &corpus.labels)), 7).unwrap();

    let cfg = UaiConfig { h1_dim: 64, epochs: 25, ..UaiConfig::new(256, 25) };
    let mut model = UaiModel::build(cfg).unwrap();
    model.train(&corpus.embeddings, &corpus.labels, &split).unwrap();
    let (h1, h2) = model.extract_embeddings(&corpus.embeddings).unwrap();

    let probe_cfg = ProbeConfig {
        hidden_layers: 0,
        hidden_width: 1,
        lr: 0.002,
        l2_coeff: 1e-3,
        max_epochs: 250,
        patience: 25,
        seed: 1,
        ..ProbeConfig::default()
    };

    println!("{:<10} {:>10} {:>10}", "embedding", "speaker", "noise");
    for (name, archive) in [("raw", &corpus.embeddings), ("h1", &h1), ("h2", &h2)] {
        let mut row = format!("{name:<10}");
        for factor in ["speaker", "noise"] {
            let (_, report) =
                train_probe(archive, &corpus.labels, factor, &split, &probe_cfg).unwrap();
            row.push_str(&format!(" {:>9.1}%", 100.0 * report.test_accuracy));
        }
        println!("{row}");
    }
    println!("\nrows: raw input embeddings, speaker code h1, residual code h2");
}
