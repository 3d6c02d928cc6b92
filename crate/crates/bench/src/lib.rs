use std::hint::black_box;

use criterion::{BenchmarkId, Criterion, Throughput};
use saap_core::arbitration::{verify_chain, Party, Turn, TurnKind};
use saap_core::fixtures;
use saap_core::store::{NewRun, RunKind};
use saap_core::{
    deviation_rank, export_csv, import_csv, validate_record, AgentProfile, NewDocument,
    RecordFilter, SchemaConfig, Store, StoredRecord,
};

/// `n` stored records cycling through the sample rows.
pub fn stored_records(n: usize) -> Vec<StoredRecord> {
    let store = Store::in_memory();
    let profile = AgentProfile::new("shirley-v1", "SHIRLEY", "Analyze.", 0.0);
    let run = store
        .create_run(NewRun::for_profile(&profile, SchemaConfig::DEFAULT_VERSION, RunKind::Analysis))
        .unwrap();
    for i in 0..n {
        let doc = store
            .ingest_document(NewDocument {
                jurisdiction: ["UK", "US", "HK"][i % 3].into(),
                language: "en".into(),
                court: String::new(),
                decision_date: None,
                source_ref: format!("bench-{i}"),
                body: format!("judgment {i}"),
            })
            .unwrap();
        store.put_record(run.run_id, &doc, fixtures::sample_record_cycled(i), 1).unwrap();
    }
    store.query_records(&RecordFilter::run(run.run_id))
}

fn ranking(c: &mut Criterion) {
    let mut group = c.benchmark_group("deviation_rank");
    for n in [25, 1_000, 10_000] {
        let records = stored_records(n);
        group.throughput(Throughput::Elements(n as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &records, |b, records| {
            b.iter(|| deviation_rank(black_box(records), "biasLevel").unwrap())
        });
    }
    group.finish();
}

fn csv(c: &mut Criterion) {
    let mut group = c.benchmark_group("csv_batch_100");
    for schema in [SchemaConfig::core(), SchemaConfig::wide()] {
        let batch: Vec<_> = (0..100).map(fixtures::sample_record_cycled).collect();
        let text = export_csv(&batch, &schema).unwrap();
        group.bench_function(BenchmarkId::new("export", &schema.version), |b| {
            b.iter(|| export_csv(black_box(&batch), &schema).unwrap())
        });
        group.bench_function(BenchmarkId::new("import", &schema.version), |b| {
            b.iter(|| import_csv(black_box(&text), &schema).unwrap())
        });
    }
    group.finish();
}

fn validation(c: &mut Criterion) {
    let schema = SchemaConfig::core();
    let records = fixtures::sample_tone_records();
    c.bench_function("validate_record", |b| {
        b.iter(|| {
            for r in &records {
                black_box(validate_record(r, &schema).unwrap());
            }
        })
    });
}

fn transcript_chain(c: &mut Criterion) {
    let mut turns: Vec<Turn> = Vec::new();
    for i in 0..24 {
        let speaker = [Party::Sara, Party::Shirley, Party::Critic][i % 3];
        let turn = Turn::new(turns.last(), speaker, TurnKind::Answer, None, format!("turn {i} content"));
        turns.push(turn);
    }
    c.bench_function("verify_chain_24", |b| b.iter(|| assert!(verify_chain(black_box(&turns)))));
}

pub fn benchmarks(c: &mut Criterion) {
    ranking(c);
    csv(c);
    validation(c);
    transcript_chain(c);
}
