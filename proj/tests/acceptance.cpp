// End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
// the binary exits nonzero if any criterion fails.
//
// Usage: acceptance <path-to-eval_helper>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "tvmerge/analysis.hpp"
#include "tvmerge/conflict_aware.hpp"
#include "tvmerge/grid_search.hpp"
#include "tvmerge/log.hpp"
#include "tvmerge/merge_engine.hpp"
#include "tvmerge/ops.hpp"
#include "tvmerge/prune.hpp"
#include "testutil.hpp"

using namespace tvmerge;
using testutil::TempDir;

namespace {

std::string g_eval_helper;

struct Criterion {
    const char* name;
    std::function<void()> run;  // throws or fails via check() on failure
};

struct CheckFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void check(bool ok, const std::string& what) {
    if (!ok) throw CheckFailure(what);
}

MergeRecipe two_vector_recipe(const testutil::SyntheticModel& model, const std::string& out,
                              MergeMethod method) {
    MergeRecipe r;
    r.version = 1;
    r.base = model.base_path;
    r.output = out;
    r.method = method;
    for (std::size_t i = 0; i < model.ft_paths.size(); ++i) {
        RecipeVector v;
        v.name = "v" + std::to_string(i);
        v.path = model.ft_paths[i];
        v.lambda = 1.0;
        r.vectors.push_back(std::move(v));
    }
    return r;
}

// --- 1: sequential masking reaches exactly zero overlap ---------------------

void criterion_zero_overlap() {
    SplitMix64 rng(1001);
    for (int trial = 0; trial < 20; ++trial) {
        TempDir dir;
        std::vector<std::pair<std::string, Shape>> layout;
        const int tensors = 2 + static_cast<int>(rng.bounded(3));
        for (int t = 0; t < tensors; ++t) {
            const auto rows = static_cast<std::int64_t>(1 + rng.bounded(256));
            const auto cols = static_cast<std::int64_t>(1 + rng.bounded(256));
            layout.push_back({"t" + std::to_string(t), {rows, cols}});
        }
        const auto model = testutil::make_model(dir, 2, rng.next(), layout);
        MergeRecipe r = two_vector_recipe(model, dir.file("out.safetensors"), MergeMethod::Cabs);
        r.n = 1;
        r.m = 4;
        r.masked_vectors_dir = dir.file("masked");
        const RunReport rep = run_recipe(r);

        check(rep.total_shared[0][1] == 0, "shared count must be exactly zero");
        check(rep.overlap_rate(0, 1) == 0.0, "aggregate overlap rate must be exactly zero");

        const Checkpoint m0 = Checkpoint::open(dir.file("masked") + "/v0.safetensors");
        const Checkpoint m1 = Checkpoint::open(dir.file("masked") + "/v1.safetensors");
        double inner = 0.0;
        for (const auto& meta : m0.metas())
            inner += frobenius_inner(m0.read_f32(meta.name), m1.read_f32(meta.name));
        check(inner == 0.0, "pairwise Frobenius inner product must be exactly 0.0");
    }
}

// --- 2: overlap is the provable minimum when quotas exceed the space --------

void criterion_overlap_minimality() {
    auto min_overlap_bruteforce = [](int m, int na, int nb) {
        std::size_t best = static_cast<std::size_t>(m) + 1;
        for (unsigned a = 0; a < (1u << m); ++a) {
            if (std::popcount(a) != na) continue;
            for (unsigned b = 0; b < (1u << m); ++b) {
                if (std::popcount(b) != nb) continue;
                best = std::min(best, static_cast<std::size_t>(std::popcount(a & b)));
            }
        }
        return best;
    };

    // headline configuration: 3:4 quotas must overlap exactly 2 per block
    {
        const std::size_t n = 4 * 500;
        const ArrayXf ta = testutil::gaussian_values(n, 21);
        const ArrayXf tb = testutil::gaussian_values(n, 22);
        const ArrayXf* vs[] = {&ta, &tb};
        const auto masks = ca_masks(vs, {static_cast<std::int64_t>(n)}, [] {
            PruneSpec s;
            s.method = PruneMethod::BalancedNM;
            s.n = 3;
            s.m = 4;
            return s;
        }());
        check(min_overlap_bruteforce(4, 3, 3) == 2, "brute-force minimum for 3:4 must be 2");
        for (std::size_t b = 0; b < n; b += 4) {
            std::size_t overlap = 0;
            for (std::size_t i = b; i < b + 4; ++i)
                overlap += masks[0].test(i) && masks[1].test(i);
            check(overlap == 2, "per-block overlap must equal 3+3-4 exactly");
        }
    }

    // every quota pair up to m = 8 matches the brute-force minimum
    SplitMix64 rng(23);
    for (int m_len = 2; m_len <= 8; ++m_len) {
        for (int n_keep = 1; n_keep <= m_len; ++n_keep) {
            const std::size_t n = static_cast<std::size_t>(m_len) * 25;
            const ArrayXf ta = testutil::gaussian_values(n, rng.next());
            const ArrayXf tb = testutil::gaussian_values(n, rng.next());
            const ArrayXf* vs[] = {&ta, &tb};
            PruneSpec s;
            s.method = PruneMethod::BalancedNM;
            s.n = n_keep;
            s.m = m_len;
            const auto masks = ca_masks(vs, {static_cast<std::int64_t>(n)}, s);
            const std::size_t want = min_overlap_bruteforce(m_len, n_keep, n_keep);
            for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(m_len)) {
                std::size_t overlap = 0;
                for (std::size_t i = b; i < b + static_cast<std::size_t>(m_len); ++i)
                    overlap += masks[0].test(i) && masks[1].test(i);
                check(overlap == want, "per-block overlap must match the brute-force minimum");
            }
        }
    }
}

// --- 3: block law and exhaustive top-n agreement -----------------------------

void criterion_block_law() {
    SplitMix64 rng(33);
    for (int trial = 0; trial < 1000; ++trial) {
        const int m_len = 1 + static_cast<int>(rng.bounded(16));
        const int n_keep = 1 + static_cast<int>(rng.bounded(static_cast<std::uint64_t>(m_len)));
        const ArrayXf v = testutil::gaussian_values(static_cast<std::size_t>(m_len), rng.next());
        const Bitset mask = prune_balanced_nm(v, {m_len}, n_keep, m_len);
        check(mask.count() == static_cast<std::size_t>(n_keep), "full block popcount must be n");

        std::vector<std::size_t> idx(static_cast<std::size_t>(m_len));
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
            const float ka = std::fabs(v[static_cast<Eigen::Index>(a)]);
            const float kb = std::fabs(v[static_cast<Eigen::Index>(b)]);
            if (ka != kb) return ka > kb;
            return a < b;
        });
        std::set<std::size_t> expect(idx.begin(), idx.begin() + n_keep);
        const auto got_vec = mask.set_indices();
        std::set<std::size_t> got(got_vec.begin(), got_vec.end());
        check(got == expect, "mask must agree with the exhaustive top-n oracle");
    }

    // law over a larger shaped tensor
    const ArrayXf v = testutil::gaussian_values(96 * 48, 5);
    const Bitset mask = prune_balanced_nm(v, {96, 48}, 3, 8);
    for (std::size_t r = 0; r < 96; ++r)
        for (std::size_t b = 0; b + 8 <= 48; b += 8)
            check(mask.count_range(r * 48 + b, r * 48 + b + 8) == 3,
                  "every full block of the shaped tensor keeps exactly n");
}

// --- 4: random drop statistics and rescale compensation ----------------------

void criterion_random_drop_stats() {
    const std::size_t n = 1000000;
    // positive-mean fixture so relative error of the mean is well defined
    SplitMix64 vals_rng(404);
    ArrayXf v(static_cast<Eigen::Index>(n));
    for (std::size_t i = 0; i < n; ++i)
        v[static_cast<Eigen::Index>(i)] = 0.5f + static_cast<float>(vals_rng.next_double());
    const double original_mean = static_cast<double>(v.sum()) / static_cast<double>(n);

    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Bitset mask = prune_random(n, 0.1, seed, "stats");
        const double frac = static_cast<double>(mask.count()) / static_cast<double>(n);
        check(std::fabs(frac - 0.1) <= 0.001, "kept fraction must land in 0.100 +/- 0.001");

        ArrayXf kept = apply_mask(v, mask);
        rescale_in_place(kept, 0.1);
        const double mean = static_cast<double>(kept.sum()) / static_cast<double>(n);
        check(std::fabs(mean - original_mean) / original_mean <= 0.01,
              "rescaled mean must stay within 1% of the original mean");
    }
}

// --- 5: overlap decay curves on correlated vectors ---------------------------

void criterion_overlap_curves() {
    const std::size_t n = 1000000;
    const auto [ta, tb] = make_correlated_pair(n, 1.0, 2026);
    double prev_gap = -1.0;
    int level = 0;
    for (const double keep : {0.5, 0.25, 0.1}) {
        const double mag =
            overlap_stats(prune_magnitude_layer(ta, keep), prune_magnitude_layer(tb, keep)).rate();
        const double rnd = overlap_stats(prune_random(n, keep, 9100 + level, "a"),
                                         prune_random(n, keep, 9200 + level, "b"))
                               .rate();
        check(mag > rnd, "magnitude overlap must exceed random overlap");
        check(std::fabs(rnd - expected_random_overlap(keep)) <= 0.01,
              "random overlap must match its expectation within 0.01");
        check(mag - rnd > prev_gap, "the overlap gap must widen as sparsity rises");
        prev_gap = mag - rnd;
        ++level;
    }
}

// --- 6: merge algebra is exact in F32 ----------------------------------------

void criterion_merge_algebra() {
    for (const std::size_t k : {1u, 2u, 4u}) {
        TempDir dir;
        const std::vector<std::pair<std::string, Shape>> layout = {
            {"attn.weight", {16, 32}}, {"mlp.weight", {8, 64}}, {"bias", {48}}};
        const auto model = testutil::make_model(dir, k, 600 + k, layout);
        MergeRecipe r = two_vector_recipe(model, dir.file("out.safetensors"),
                                          k == 1 ? MergeMethod::TaskArithmetic : MergeMethod::Cabs);
        if (k != 1) {
            r.n = 1;
            r.m = 4;
        }
        const double lambda_table[] = {0.5, 1.0, 1.5, 2.0};
        for (std::size_t i = 0; i < k; ++i) r.vectors[i].lambda = lambda_table[i];
        r.masked_vectors_dir = dir.file("masked");
        const RunReport rep = run_recipe(r);

        const Checkpoint base = Checkpoint::open(model.base_path);
        const Checkpoint out = Checkpoint::open(r.output);
        std::vector<Checkpoint> masked;
        for (std::size_t i = 0; i < k; ++i)
            masked.push_back(Checkpoint::open(dir.file("masked") + "/v" + std::to_string(i) +
                                              ".safetensors"));

        for (const auto& meta : base.metas()) {
            const ArrayXf b = base.read_f32(meta.name);
            const ArrayXf o = out.read_f32(meta.name);
            ArrayXf expect = ArrayXf::Zero(b.size());
            for (std::size_t i = 0; i < k; ++i)
                add_scaled(expect, masked[i].read_f32(meta.name),
                           static_cast<float>(lambda_table[i]));
            for (Eigen::Index j = 0; j < b.size(); ++j)
                check(o[j] - b[j] == expect[j],
                      "output delta must equal the weighted masked sum bit for bit");
        }

        // norm decomposition residual on the masked vectors
        if (k >= 2) {
            check(rep.overlap_rate(0, 1) == 0.0, "masks must be disjoint in this configuration");
            for (const auto& meta : base.metas()) {
                std::vector<ArrayXf> vs;
                std::vector<const ArrayXf*> ptrs;
                std::vector<double> ls;
                for (std::size_t i = 0; i < k; ++i) {
                    vs.push_back(masked[i].read_f32(meta.name));
                    ls.push_back(lambda_table[i]);
                }
                for (auto& v : vs) ptrs.push_back(&v);
                const OrthoReport rep2 = ortho_check(ptrs, ls);
                check(rep2.relative_residual <= 1e-6,
                      "norm decomposition residual must stay below 1e-6 relative");
            }
        }
    }
}

// --- 7: container round trip --------------------------------------------------

void criterion_container_round_trip() {
    TempDir dir;
    std::vector<std::string> corpus;

    {  // mixed dtypes through the writer
        const std::string path = dir.file("mixed.safetensors");
        CheckpointWriter w(path);
        w.declare("f32", "F32", {3, 5});
        w.declare("f16", "F16", {7});
        w.declare("bf16", "BF16", {2, 2});
        w.declare("ids", "I64", {4});
        w.append_f32(testutil::gaussian_values(15, 1));
        ArrayXf halves(7);
        halves << 1.0f, -0.5f, 0.25f, 2.0f, -4.0f, 0.125f, 0.0f;
        w.append_f32(halves);
        ArrayXf bfs(4);
        bfs << 1.0f, -2.0f, 0.5f, 8.0f;
        w.append_f32(bfs);
        std::vector<std::byte> ids(32);
        for (int i = 0; i < 32; ++i) ids[i] = static_cast<std::byte>(255 - i);
        w.append_raw(ids);
        w.finish();
        corpus.push_back(path);
    }
    {  // hand-crafted header with odd spacing, unsorted keys and metadata
        const std::string header =
            "{ \"__metadata__\": {\"format\": \"pt\"},\n"
            "  \"zz\": {\"dtype\":\"BF16\",\"shape\":[2],\"data_offsets\":[0,4]},\n"
            "  \"aa\": {\"dtype\":\"F32\",\"shape\":[1],\"data_offsets\":[4,8]}  }";
        std::string data(4, '\x3F');
        data += testutil::le_f32(-7.5f);
        const std::string path = dir.file("crafted.safetensors");
        testutil::write_file(path, testutil::container_bytes(header, data));
        corpus.push_back(path);
    }
    {  // empty checkpoint
        const std::string path = dir.file("empty.safetensors");
        write_tensors({}, path);
        corpus.push_back(path);
    }

    for (const auto& src : corpus) {
        const std::string dst = src + ".copy";
        write_checkpoint_copy(Checkpoint::open(src), dst);
        check(testutil::files_equal(src, dst), "open -> write must be byte-identical: " + src);
    }
}

// --- 8: two-step lambda search -------------------------------------------------

void criterion_grid_search() {
    TempDir dir;
    write_tensors({{"w", testutil::f32_tensor({2}, ArrayXf::Zero(2))}}, dir.file("base.safetensors"));
    ArrayXf unit = ArrayXf::Zero(2);
    unit[0] = 1.0f;
    write_tensors({{"w", testutil::f32_tensor({2}, unit)}}, dir.file("tv.safetensors"));

    SearchSpec spec;
    spec.recipe.version = 1;
    spec.recipe.base = dir.file("base.safetensors");
    spec.recipe.method = MergeMethod::TaskArithmetic;
    RecipeVector v;
    v.name = "v";
    v.path = dir.file("tv.safetensors");
    v.is_delta = true;
    spec.recipe.vectors.push_back(std::move(v));
    spec.lo = 0.0;
    spec.hi = 3.0;
    spec.workdir = dir.file("work");
    spec.table_path = dir.file("table.csv");
    const std::string counter = dir.file("calls.txt");
    spec.evaluator = {g_eval_helper, "count", counter, "quad", "1.23"};

    const SearchResult res = grid_search(spec);
    check(std::fabs(res.best[0] - 1.23) <= 0.01, "two-step search must land on 1.23 +/- 0.01");
    check(res.best_score > res.best_coarse_score,
          "the fine pass must strictly beat the coarse-only result off the coarse lattice");

    // predicted invocation count: 31 coarse + 21 fine - 3 cached
    const std::size_t predicted = 31 + 21 - 3;
    check(res.evaluations == predicted, "evaluator call count must equal the prediction");
    std::ifstream calls(counter);
    std::string line;
    std::size_t lines = 0;
    while (std::getline(calls, line))
        if (!line.empty()) ++lines;
    check(lines == predicted, "the evaluator itself must have been invoked exactly that often");
}

// --- 9: determinism across repeats and thread counts ----------------------------

void criterion_determinism() {
    TempDir dir;
    std::vector<std::pair<std::string, Shape>> layout;
    for (int t = 0; t < 12; ++t)
        layout.push_back({"layer." + std::to_string(t) + ".weight",
                          {8 + (t % 3) * 4, 16 + (t % 5) * 8}});
    const auto model = testutil::make_model(dir, 2, 77, layout);

    for (const MergeMethod method : {MergeMethod::Cabs, MergeMethod::Dare}) {
        MergeRecipe r = two_vector_recipe(model, dir.file("a.safetensors"), method);
        if (method == MergeMethod::Cabs) {
            r.n = 2;
            r.m = 8;
        } else {
            r.keep_fraction = 0.25;
        }
        r.seed = 7;

        RunOptions serial;
        serial.threads = 1;
        run_recipe(r, serial);
        const std::string first = testutil::read_file(r.output);
        run_recipe(r, serial);
        check(testutil::read_file(r.output) == first, "repeat runs must be bit-identical");

        r.output = dir.file("b.safetensors");
        RunOptions parallel;
        parallel.threads = 8;
        run_recipe(r, parallel);
        check(testutil::read_file(r.output) == first,
              "1-thread and 8-thread runs must be bit-identical");
    }
}

// --- 10: balance of retained weights ---------------------------------------------

void criterion_balance() {
    const std::size_t rows = 128, cols = 128;
    ArrayXf v = testutil::gaussian_values(rows * cols, 88);
    for (std::size_t r = 0; r < rows / 2; ++r)
        for (std::size_t c = 0; c < cols / 2; ++c)
            v[static_cast<Eigen::Index>(r * cols + c)] *= 50.0f;  // concentrated quadrant

    const Shape shape = {static_cast<std::int64_t>(rows), static_cast<std::int64_t>(cols)};
    const Bitset bs = prune_balanced_nm(v, shape, 1, 4);   // keep 0.25
    const Bitset mag = prune_magnitude_layer(v, 0.25);
    check(bs.count() == mag.count(), "both methods must keep the same number of weights");

    const BalanceGrid g_bs = balance_grid(bs, shape, 1, 4);  // block-sized bands
    const BalanceGrid g_mag = balance_grid(mag, shape, 1, 4);
    check(g_bs.cv == 0.0, "block pruning must have zero dispersion at block banding");
    check(g_mag.cv > g_bs.cv, "magnitude pruning must be strictly less balanced");
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 2) {
        std::fprintf(stderr, "usage: acceptance <eval_helper-path>\n");
        return 2;
    }
    g_eval_helper = argv[1];
    set_log_level(LogLevel::Warn);

    const std::vector<Criterion> criteria = {
        {"1. sequential masking reaches exactly zero overlap and orthogonality", criterion_zero_overlap},
        {"2. overlap equals the brute-force minimum under 3:4 quotas", criterion_overlap_minimality},
        {"3. block law holds and matches the exhaustive top-n oracle", criterion_block_law},
        {"4. random 90% drop keeps 10% +/- 0.1% and rescale preserves the mean", criterion_random_drop_stats},
        {"5. magnitude overlap exceeds random overlap with a widening gap", criterion_overlap_curves},
        {"6. merged deltas equal the weighted masked sums bit-exactly", criterion_merge_algebra},
        {"7. container open -> write round trip is byte-identical", criterion_container_round_trip},
        {"8. two-step search recovers an off-lattice optimum at the predicted cost", criterion_grid_search},
        {"9. merge runs are bit-identical across repeats and thread counts", criterion_determinism},
        {"10. block pruning balances retained weights, magnitude pruning does not", criterion_balance},
    };

    int failures = 0;
    for (const auto& c : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        std::string error;
        try {
            c.run();
        } catch (const std::exception& e) {
            error = e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (error.empty()) {
            std::printf("[PASS] %s (%.2fs)\n", c.name, secs);
        } else {
            std::printf("[FAIL] %s (%.2fs): %s\n", c.name, secs, error.c_str());
            ++failures;
        }
        std::fflush(stdout);
    }
    if (failures == 0) {
        std::printf("all %zu acceptance criteria passed\n", criteria.size());
        return 0;
    }
    std::printf("%d acceptance criteria failed\n", failures);
    return 1;
}
