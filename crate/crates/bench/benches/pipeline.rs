use std::hint::black_box;

use aqua_core::icon_db::{build_manifest, IconRecord, IconSource};
use aqua_core::imaging::GrayF;
use aqua_core::retrieval::{query, ArticleChunk, ChunkKind, CorpusIndex, HashedBagOfWords};
use aqua_core::synth::IconGenerator;
use aqua_core::vision::{match_icon, ncc_score};
use aqua_core::EmbeddingClient;
use criterion::{criterion_group, criterion_main, Criterion};

fn ncc(c: &mut Criterion) {
    let mut gen = IconGenerator::new(1);
    let a = GrayF::from_image(&gen.icon(48));
    let b = GrayF::from_image(&gen.icon(48));
    let small = GrayF::from_image(&gen.icon(32));
    c.bench_function("ncc 48x48", |bench| bench.iter(|| ncc_score(black_box(&a), black_box(&b)).unwrap()));
    c.bench_function("ncc resized 32 vs 48", |bench| bench.iter(|| ncc_score(black_box(&small), black_box(&b)).unwrap()));
}

fn icon_matching(c: &mut Criterion) {
    let mut gen = IconGenerator::new(2);
    let images: Vec<_> = (0..1286).map(|_| gen.icon(48)).collect();
    let records = images
        .iter()
        .enumerate()
        .map(|(i, img)| IconRecord::new(&format!("Icon {i}"), img.clone(), IconSource::CommandDump).unwrap())
        .collect();
    let manifest = build_manifest(records, "Fusion 360").manifest;
    let patch = GrayF::from_image(&images[700]);
    c.bench_function("match_icon, 1286 icons", |bench| bench.iter(|| match_icon(black_box(&patch), &manifest)));
}

fn retrieval(c: &mut Criterion) {
    let embedder = HashedBagOfWords::new(256);
    let words = ["extrude", "sketch", "fillet", "marking", "menu", "canvas", "joint", "render", "hole", "profile"];
    let chunks = (0..5635)
        .map(|i| {
            let text: Vec<&str> = (0..40).map(|j| words[(i * 7 + j * 3) % words.len()]).collect();
            let text = text.join(" ");
            let mut embedding = embedder.embed(&text).unwrap();
            let n = embedding.iter().map(|x| x * x).sum::<f64>().sqrt();
            embedding.iter_mut().for_each(|x| *x /= n);
            ArticleChunk {
                id: format!("doc{i:05}#0"),
                source_uri: format!("doc{i}"),
                kind: ChunkKind::Documentation,
                token_count: 40,
                text,
                embedding,
            }
        })
        .collect();
    let index = CorpusIndex { chunks, dim: 256, embed_backend_id: embedder.backend_id(), built_at: 0 };
    c.bench_function("query top-20, 5635 chunks", |bench| {
        bench.iter(|| query(&index, black_box("how do I open the marking menu"), &embedder, 20).unwrap())
    });
}

criterion_group!(benches, ncc, icon_matching, retrieval);
criterion_main!(benches);
