use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use workbench::annotation::{cohen_kappa, fleiss_kappa, sentence_edit_diff};
use workbench::generation::{format_tagged, parse_tagged};
use workbench::merge::{merge, MergeOptions};
use workbench::taxonomy::{Taxonomy, TaxonomyBuilder};
use workbench::Clock;

fn tagged(c: &mut Criterion) {
    let labels: Vec<String> = (0..200).map(|i| format!("Revision intention number {i}")).collect();
    let text = format_tagged(&labels, "<label>", "</label>", "<end>");
    c.bench_function("parse_tagged/200", |b| b.iter(|| parse_tagged(black_box(&text), "<label>", "</label>", "<end>").unwrap()));
}

fn kappa(c: &mut Criterion) {
    let a: Vec<String> = (0..1000).map(|i| format!("c{}", i % 7)).collect();
    let b: Vec<String> = (0..1000).map(|i| format!("c{}", (i * 3 + i / 11) % 7)).collect();
    c.bench_function("cohen_kappa/1000", |bench| bench.iter(|| cohen_kappa(black_box(&a), black_box(&b)).unwrap()));
    let table: Vec<Vec<u64>> = (0..1000u64).map(|i| vec![i % 4, 3 - i % 4, 1, 2]).collect();
    c.bench_function("fleiss_kappa/1000x6", |bench| bench.iter(|| fleiss_kappa(black_box(&table)).unwrap()));
}

fn edit_diff(c: &mut Criterion) {
    let mut group = c.benchmark_group("sentence_edit_diff");
    for words in [50, 200, 800] {
        let original: String = (0..words).map(|i| format!("word{} ", i % 37)).collect();
        let revised: String = (0..words).map(|i| if i % 9 == 0 { format!("changed{i} ") } else { format!("word{} ", i % 37) }).collect();
        group.bench_with_input(BenchmarkId::from_parameter(words), &(original, revised), |b, (o, r)| b.iter(|| sentence_edit_diff(o, r)));
    }
    group.finish();
}

fn taxonomy(id: &str, offset: usize) -> Taxonomy {
    let mut b = TaxonomyBuilder::new(id, "legal", "email", Clock::fixed_default().now());
    for i in 0..12 {
        let intent = b.intention(&format!("Intention {}", i + offset), "why");
        for d in 0..4 {
            let desc = b.description(&intent, &format!("Description {d} of {}", i + offset), "why");
            for e in 0..2 {
                b.example(&desc, &format!("Original {e}."), &format!("Revised {e}."), "why");
            }
        }
    }
    b.build()
}

fn merging(c: &mut Criterion) {
    let inputs = [taxonomy("tax-a", 0), taxonomy("tax-b", 6), taxonomy("tax-c", 9)];
    let clock = Clock::fixed_default();
    let opts = MergeOptions::default();
    c.bench_function("merge/3x12", |b| b.iter(|| merge(black_box(&inputs), None, &opts, &clock).unwrap()));
}

criterion_group!(benches, tagged, kappa, edit_diff, merging);
criterion_main!(benches);
