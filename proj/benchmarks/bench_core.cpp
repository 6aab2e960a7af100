// Copyright 2026 The serireg authors
// SPDX-License-Identifier: Apache-2.0

#include <benchmark/benchmark.h>

#include "serireg/distortion.hpp"
#include "serireg/geometry.hpp"
#include "serireg/metrics.hpp"
#include "serireg/parallel.hpp"
#include "serireg/phantom.hpp"
#include "serireg/registration.hpp"

namespace {

using namespace serireg;

Slice bench_slice(int n) {
    PhantomSpec spec;
    spec.kind = PhantomKind::bent_tube;
    spec.nx = spec.ny = n;
    spec.nz = 32;
    spec.seed = 1;
    spec.tube.bend_amplitude_px = 4.0;
    return generate_phantom(spec).slice(5);
}

DisplacementField bench_field(int n, double sigma, double grid) {
    DistortionSpec spec;
    spec.seed = 2;
    spec.elastic.grid_px = grid;
    spec.elastic.sigma_px = sigma;
    return sample_elastic(spec, 0, n, n);
}

void BM_WarpBilinear(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Slice s = bench_slice(n);
    const DisplacementField f = bench_field(n, 2.0, 32.0);
    for (auto _ : state)
        benchmark::DoNotOptimize(warp_slice(s, f, {InterpKind::bilinear, 0.f}));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_WarpBilinear)->Arg(128)->Arg(256);

void BM_WarpBicubic(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Slice s = bench_slice(n);
    const DisplacementField f = bench_field(n, 2.0, 32.0);
    for (auto _ : state)
        benchmark::DoNotOptimize(warp_slice(s, f, {InterpKind::bicubic, 0.f}));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_WarpBicubic)->Arg(128)->Arg(256);

void BM_ComposeFields(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const DisplacementField u = bench_field(n, 2.0, 32.0);
    const DisplacementField v = bench_field(n, 1.5, 24.0);
    for (auto _ : state) benchmark::DoNotOptimize(compose_fields(u, v));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_ComposeFields)->Arg(128)->Arg(256);

void BM_InvertField(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const DisplacementField u = bench_field(n, 2.0, 32.0);
    for (auto _ : state) benchmark::DoNotOptimize(invert_field(u, 0.01, 100));
}
BENCHMARK(BM_InvertField)->Arg(128)->Arg(256);

void BM_SampleElastic(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    DistortionSpec spec;
    spec.seed = 3;
    spec.elastic.grid_px = 32.0;
    spec.elastic.sigma_px = 3.0;
    int z = 0;
    for (auto _ : state) benchmark::DoNotOptimize(sample_elastic(spec, z++, n, n));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_SampleElastic)->Arg(128)->Arg(256);

void BM_RegisterTranslation(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Slice fixed = bench_slice(n);
    const Slice moving =
        warp_slice(fixed, DisplacementField(n, n, Vec2{-3.f, 2.f}), {InterpKind::bilinear, 0.f});
    for (auto _ : state) benchmark::DoNotOptimize(register_translation(fixed, moving));
}
BENCHMARK(BM_RegisterTranslation)->Arg(128)->Arg(256);

void BM_RegisterRigid(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Slice fixed = bench_slice(n);
    const RigidTransform2D t{0.05, 3.0, -2.0, (n - 1) / 2.0, (n - 1) / 2.0};
    const Slice moving =
        warp_slice(fixed, rigid_to_field(t, n, n), {InterpKind::bilinear, 0.f});
    for (auto _ : state) benchmark::DoNotOptimize(register_rigid(fixed, moving));
}
BENCHMARK(BM_RegisterRigid)->Arg(128);

void BM_RegisterElastic(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Slice fixed = bench_slice(n);
    const DisplacementField truth = bench_field(n, 2.0, 32.0);
    const Slice moving = warp_slice(fixed, truth, {InterpKind::bilinear, 0.f});
    for (auto _ : state) benchmark::DoNotOptimize(register_elastic(fixed, moving));
}
BENCHMARK(BM_RegisterElastic)->Arg(128);

void BM_SimilaritySuite(benchmark::State& state) {
    const int n = static_cast<int>(state.range(0));
    const Slice a = bench_slice(n);
    const Slice b =
        warp_slice(a, DisplacementField(n, n, Vec2{0.5f, -0.5f}), {InterpKind::bilinear, 0.f});
    const Mask mask = make_mask(a, 0.0, 4);
    for (auto _ : state) benchmark::DoNotOptimize(similarity_suite(a, b, mask));
    state.SetItemsProcessed(state.iterations() * n * n);
}
BENCHMARK(BM_SimilaritySuite)->Arg(128)->Arg(256);

void BM_DistortVolume(benchmark::State& state) {
    PhantomSpec pspec;
    pspec.kind = PhantomKind::bent_tube;
    pspec.nx = pspec.ny = 128;
    pspec.nz = 32;
    pspec.seed = 4;
    const Volume v = generate_phantom(pspec);
    const DistortionSpec spec = DistortionSpec::preset_default(9);
    for (auto _ : state) benchmark::DoNotOptimize(distort_volume(v, spec));
    state.SetItemsProcessed(state.iterations() * v.voxels.size());
}
BENCHMARK(BM_DistortVolume);

} // namespace

BENCHMARK_MAIN();
