//! Compares the mapped (rayon-backed when the `parallel` feature is on)
//! frame pipeline against a plain sequential tile loop built from the
//! same primitives, plus the batched low-frequency probe transform.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use tdsse::exec;
use tdsse::image::{tile_bytes, write_tile, TileIndex};
use tdsse::keys::{MasterKey, VariantId};
use tdsse::keyschedule::derive_tile_key;
use tdsse::pipeline::{derive_frame_nonce, encrypt_frame, CipherKind, PipelineConfig};
use tdsse::probes::to_lowfreq;
use tdsse::roi::{generate_mask, select_roi_tiles, RoiPolicy};
use tdsse::synth::synth_images;
use tdsse::tile_cipher::{aes_ctr_tile, CtrParams};

const TILE: usize = 64;

fn bench_frame_encrypt(c: &mut Criterion) {
    let master = MasterKey::from_bytes([7; 32]);
    let image = synth_images(1, 256, 256, 3, 41).unwrap().remove(0);
    let policy = RoiPolicy::new(TILE, 0.5, 0.3, 41).unwrap();
    let mask = generate_mask(&policy, image.height(), image.width()).unwrap();
    let cfg = PipelineConfig::new(VariantId::A3, CipherKind::AesCtr, policy);

    let mut group = c.benchmark_group("frame_encrypt");
    group.bench_function("mapped_pipeline", |b| {
        b.iter(|| encrypt_frame(&cfg, &master, 0, black_box(&image), &mask).unwrap());
    });
    group.bench_function("serial_tile_loop", |b| {
        b.iter(|| {
            let nonce = derive_frame_nonce(&master, VariantId::A3, 0);
            let tiles = select_roi_tiles(&mask, TILE, 0.5).unwrap();
            let mut out = image.clone();
            for &(i, j) in &tiles {
                let idx = TileIndex { t: 0, i, j };
                let key = derive_tile_key(VariantId::A3, &master, &nonce, &idx).unwrap();
                let plain = tile_bytes(&image, i, j, TILE).unwrap();
                let ct = aes_ctr_tile(&key, &CtrParams::from_nonce(&nonce), &plain);
                write_tile(&mut out, i, j, TILE, &ct).unwrap();
            }
            black_box(out)
        });
    });
    group.finish();
}

fn bench_lowfreq_batch(c: &mut Criterion) {
    let images = synth_images(4, 256, 256, 3, 42).unwrap();
    let mut tiles = Vec::new();
    for img in &images {
        for i in 0..img.height() / TILE {
            for j in 0..img.width() / TILE {
                tiles.push(tile_bytes(img, i, j, TILE).unwrap());
            }
        }
    }

    let mut group = c.benchmark_group("lowfreq_batch");
    group.bench_function("mapped", |b| {
        b.iter(|| exec::map_vec(black_box(tiles.clone()), |t| to_lowfreq(&t, 3).unwrap()));
    });
    group.bench_function("serial_iter", |b| {
        b.iter(|| {
            black_box(&tiles)
                .iter()
                .map(|t| to_lowfreq(t, 3).unwrap())
                .collect::<Vec<_>>()
        });
    });
    group.finish();
}

criterion_group!(benches, bench_frame_encrypt, bench_lowfreq_batch);
criterion_main!(benches);
