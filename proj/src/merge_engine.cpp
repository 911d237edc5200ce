#include "tvmerge/merge_engine.hpp"

#include <algorithm>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>

#include "tvmerge/analysis.hpp"
#include "tvmerge/conflict_aware.hpp"
#include "tvmerge/errors.hpp"
#include "tvmerge/log.hpp"
#include "tvmerge/ops.hpp"
#include "tvmerge/parallel.hpp"
#include "tvmerge/prune.hpp"
#include "tvmerge/rng.hpp"

namespace tvmerge {

namespace fs = std::filesystem;

double RunReport::overlap_rate(std::size_t i, std::size_t j) const {
    if (i >= total_kept.size() || total_kept[i] == 0) return 0.0;
    return static_cast<double>(total_shared[i][j]) / static_cast<double>(total_kept[i]);
}

nlohmann::ordered_json RunReport::to_json() const {
    nlohmann::ordered_json doc;
    doc["version"] = 1;
    doc["dry_run"] = dry_run;
    doc["method"] = method;
    doc["base"] = base;
    doc["output"] = output;
    doc["rescale"] = {{"enabled", rescale_enabled}, {"factor", rescale_factor}};
    if (!ca_order.empty()) doc["order"] = ca_order;

    doc["vectors"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < vector_names.size(); ++i) {
        nlohmann::ordered_json v;
        v["name"] = vector_names[i];
        v["lambda"] = lambdas[i];
        if (!dry_run) {
            v["kept"] = total_kept[i];
            v["total"] = total_elements;
            v["keep_fraction"] = total_elements > 0
                                     ? static_cast<double>(total_kept[i]) / static_cast<double>(total_elements)
                                     : 0.0;
        }
        doc["vectors"].push_back(std::move(v));
    }

    if (!dry_run) {
        nlohmann::ordered_json matrix = nlohmann::ordered_json::array();
        nlohmann::ordered_json pairs = nlohmann::ordered_json::array();
        for (std::size_t i = 0; i < vector_names.size(); ++i) {
            nlohmann::ordered_json row = nlohmann::ordered_json::array();
            for (std::size_t j = 0; j < vector_names.size(); ++j) {
                row.push_back(overlap_rate(i, j));
                if (j > i)
                    pairs.push_back({{"a", vector_names[i]},
                                     {"b", vector_names[j]},
                                     {"shared", total_shared[i][j]},
                                     {"rate", overlap_rate(i, j)}});
            }
            matrix.push_back(std::move(row));
        }
        doc["overlap"] = {{"matrix", std::move(matrix)}, {"pairs", std::move(pairs)}};

        doc["tensors"] = nlohmann::ordered_json::array();
        for (const auto& t : tensors) {
            nlohmann::ordered_json jt;
            jt["name"] = t.name;
            jt["numel"] = t.numel;
            jt["kept"] = t.kept;
            jt["shared"] = t.shared;
            doc["tensors"].push_back(std::move(jt));
        }
    }
    doc["wall_seconds"] = wall_seconds;
    return doc;
}

namespace {

struct TensorJob {
    const TensorMeta* base_meta = nullptr;
    bool arithmetic = false;
};

struct TensorResult {
    std::vector<std::byte> out_bytes;                    // narrowed merged tensor
    std::vector<std::vector<std::byte>> masked_bytes;    // optional per-vector masked taus (F32)
    TensorRunStats stats;
};

std::vector<std::byte> narrow_to_bytes(const ArrayXf& working, const TensorMeta& meta) {
    const auto n = static_cast<std::size_t>(working.size());
    std::vector<std::byte> out(meta.nbytes());
    switch (meta.dtype) {
        case Dtype::F32:
            std::memcpy(out.data(), working.data(), n * 4);
            break;
        case Dtype::F16: {
            auto* dst = reinterpret_cast<std::uint16_t*>(out.data());
            for (std::size_t i = 0; i < n; ++i) dst[i] = f32_to_f16(working[static_cast<Eigen::Index>(i)]);
            break;
        }
        case Dtype::BF16: {
            auto* dst = reinterpret_cast<std::uint16_t*>(out.data());
            for (std::size_t i = 0; i < n; ++i) dst[i] = f32_to_bf16(working[static_cast<Eigen::Index>(i)]);
            break;
        }
        default:
            throw InternalError("narrow_to_bytes on a non-arithmetic tensor");
    }
    return out;
}

std::vector<std::byte> f32_bytes(const ArrayXf& v) {
    std::vector<std::byte> out(static_cast<std::size_t>(v.size()) * 4);
    std::memcpy(out.data(), v.data(), out.size());
    return out;
}

// Alignment for a materialized task-vector file: same arithmetic names and
// shapes as the base (the stored dtype may differ; deltas are F32).
void check_delta_aligned(const Checkpoint& base, const Checkpoint& delta_ckpt) {
    for (const auto& m : base.metas()) {
        if (!m.is_arithmetic()) continue;
        const TensorMeta* d = delta_ckpt.find(m.name);
        if (!d)
            throw ValidationError("tensor '" + m.name + "' missing from task-vector file '" +
                                  delta_ckpt.path() + "'");
        if (d->shape != m.shape)
            throw ValidationError("tensor '" + m.name + "': shape mismatch in '" +
                                  delta_ckpt.path() + "'");
        if (!d->is_arithmetic())
            throw ValidationError("tensor '" + m.name + "': non-arithmetic dtype in task-vector file");
    }
    for (const auto& m : delta_ckpt.metas()) {
        if (!m.is_arithmetic()) continue;
        const TensorMeta* b = base.find(m.name);
        if (!b || !b->is_arithmetic())
            throw ValidationError("tensor '" + m.name + "' in task-vector file '" +
                                  delta_ckpt.path() + "' has no arithmetic counterpart in the base");
    }
}

}  // namespace

RunReport run_recipe(const MergeRecipe& recipe_in, const RunOptions& opts) {
    const auto t0 = std::chrono::steady_clock::now();

    MergeRecipe recipe = recipe_in;
    if (opts.output_override) recipe.output = *opts.output_override;
    if (opts.seed_override) recipe.seed = *opts.seed_override;

    {
        ValidateOptions vopts;
        vopts.allow_zero_lambda = opts.allow_zero_lambda;
        const auto violations = validate_recipe(recipe, vopts);
        if (!violations.empty()) {
            std::string msg = "recipe validation failed:";
            for (const auto& v : violations) msg += "\n  - " + v;
            throw ValidationError(msg);
        }
    }

    const Checkpoint base = Checkpoint::open(recipe.base);
    std::vector<Checkpoint> sources;
    sources.reserve(recipe.vectors.size());
    for (const auto& v : recipe.vectors) {
        Checkpoint c = Checkpoint::open(v.path);
        if (v.is_delta)
            check_delta_aligned(base, c);
        else
            check_aligned(base, c);
        sources.push_back(std::move(c));
    }

    const std::size_t k = recipe.vectors.size();
    std::vector<double> lambdas(k);
    for (std::size_t i = 0; i < k; ++i) lambdas[i] = recipe.lambda_for(i);

    const bool rescale_on = recipe.rescale_enabled();
    const double keep = recipe.effective_keep_fraction();
    const float factor = rescale_on ? static_cast<float>(1.0 / keep) : 1.0f;

    const auto ca_order = recipe.ca_order_indices();
    const std::uint64_t seed = recipe.seed.value_or(0);

    RunReport report;
    report.dry_run = opts.dry_run;
    report.method = method_name(recipe.method);
    report.base = recipe.base;
    report.output = recipe.output;
    for (const auto& v : recipe.vectors) report.vector_names.push_back(v.name);
    report.lambdas = lambdas;
    report.rescale_enabled = rescale_on;
    report.rescale_factor = factor;
    if (recipe.uses_conflict_aware())
        for (auto i : ca_order) report.ca_order.push_back(recipe.vectors[i].name);

    // Output tensors in name order, deterministically.
    std::vector<const TensorMeta*> ordered;
    for (const auto& m : base.metas()) ordered.push_back(&m);
    std::sort(ordered.begin(), ordered.end(),
              [](const TensorMeta* a, const TensorMeta* b) { return a->name < b->name; });

    if (opts.dry_run) {
        const auto t1 = std::chrono::steady_clock::now();
        report.wall_seconds = std::chrono::duration<double>(t1 - t0).count();
        log_info("dry run: %zu tensors, %zu task vectors, method %s", ordered.size(), k,
                 report.method.c_str());
        return report;
    }

    CheckpointWriter out(recipe.output);
    for (const auto* m : ordered) out.declare(m->name, m->dtype_str, m->shape, m->elem_size);

    std::vector<std::unique_ptr<CheckpointWriter>> masked_writers;
    if (recipe.masked_vectors_dir) {
        fs::create_directories(*recipe.masked_vectors_dir);
        for (const auto& v : recipe.vectors) {
            auto w = std::make_unique<CheckpointWriter>(
                (fs::path(*recipe.masked_vectors_dir) / (v.name + ".safetensors")).string());
            for (const auto* m : ordered)
                if (m->is_arithmetic()) w->declare(m->name, "F32", m->shape);
            masked_writers.push_back(std::move(w));
        }
    }

    // Per-vector seeds so random masks differ across vectors under one
    // recipe seed.
    std::vector<std::uint64_t> vec_seeds(k);
    for (std::size_t i = 0; i < k; ++i) vec_seeds[i] = mix64(seed ^ fnv1a64(recipe.vectors[i].name));

    const bool want_masked = !masked_writers.empty();

    auto compute_tensor = [&](const TensorMeta& meta) -> TensorResult {
        TensorResult res;
        if (!meta.is_arithmetic()) {
            auto raw = base.raw(meta);
            res.out_bytes.assign(raw.begin(), raw.end());
            return res;
        }
        if (meta.numel() == 0) {
            // nothing to prune or merge; keep the (empty) stats row
            if (want_masked) res.masked_bytes.resize(k);
            res.stats.name = meta.name;
            res.stats.kept.assign(k, 0);
            res.stats.shared.assign(k, std::vector<std::size_t>(k, 0));
            return res;
        }

        const ArrayXf base_vals = base.read_f32(meta);
        const auto n = static_cast<std::size_t>(base_vals.size());

        auto load_tau = [&](std::size_t i) -> ArrayXf {
            const ArrayXf v = sources[i].read_f32(meta.name);
            if (recipe.vectors[i].is_delta) return v;
            return delta(v, base_vals);
        };

        // Mask generation. Vectors may be visited twice (mask pass, then
        // accumulate pass) so only one tau is live at a time.
        std::vector<Bitset> masks(k);
        bool full_masks = false;
        switch (recipe.method) {
            case MergeMethod::TaskArithmetic:
                full_masks = true;
                break;
            case MergeMethod::Dare:
                for (std::size_t i = 0; i < k; ++i)
                    masks[i] = prune_random(n, *recipe.keep_fraction, vec_seeds[i], meta.name);
                break;
            case MergeMethod::MagnitudeLayer:
                for (std::size_t i = 0; i < k; ++i)
                    masks[i] = prune_magnitude_layer(load_tau(i), *recipe.keep_fraction);
                break;
            case MergeMethod::MagnitudeRow:
                for (std::size_t i = 0; i < k; ++i)
                    masks[i] = prune_magnitude_row(load_tau(i), meta.shape, *recipe.keep_fraction);
                break;
            case MergeMethod::BsOnly:
                for (std::size_t i = 0; i < k; ++i)
                    masks[i] = prune_balanced_nm(load_tau(i), meta.shape, *recipe.n, *recipe.m);
                break;
            case MergeMethod::Cabs: {
                PruneSpec quota;
                quota.method = PruneMethod::BalancedNM;
                quota.n = *recipe.n;
                quota.m = *recipe.m;
                CaSession session(meta.shape, quota, recipe.overlap_fill);
                for (auto i : ca_order) masks[i] = session.next(load_tau(i));
                break;
            }
            case MergeMethod::CaOnly: {
                PruneSpec quota;
                quota.method = PruneMethod::MagnitudeLayer;
                quota.keep_fraction = *recipe.keep_fraction;
                CaSession session(meta.shape, quota, recipe.overlap_fill);
                for (auto i : ca_order) masks[i] = session.next(load_tau(i));
                break;
            }
            case MergeMethod::Ties: {
                // Trim, then elect per-element signs from the sum of the
                // retained values; disagreeing entries lose their bits.
                ArrayXf sum = ArrayXf::Zero(base_vals.size());
                for (std::size_t i = 0; i < k; ++i) {
                    const ArrayXf tau = load_tau(i);
                    masks[i] = prune_magnitude_layer(tau, *recipe.keep_fraction);
                    add_scaled_masked(sum, tau, masks[i], 1.0f);
                }
                for (std::size_t i = 0; i < k; ++i) {
                    const ArrayXf tau = load_tau(i);
                    Bitset& mask = masks[i];
                    for (std::size_t j = 0; j < n; ++j) {
                        if (!mask.test(j)) continue;
                        const float s = sum[static_cast<Eigen::Index>(j)];
                        const bool neg = s < 0.0f;
                        const float v = tau[static_cast<Eigen::Index>(j)];
                        if ((neg && v > 0.0f) || (!neg && v < 0.0f)) mask.reset(j);
                    }
                }
                break;
            }
        }

        // Accumulate in recipe order, left to right.
        ArrayXf acc = base_vals;
        if (want_masked) res.masked_bytes.resize(k);
        for (std::size_t i = 0; i < k; ++i) {
            ArrayXf tau = load_tau(i);
            if (factor != 1.0f) tau *= factor;
            const auto lambda = static_cast<float>(lambdas[i]);
            if (full_masks) {
                add_scaled(acc, tau, lambda);
                if (want_masked) res.masked_bytes[i] = f32_bytes(tau);
            } else {
                add_scaled_masked(acc, tau, masks[i], lambda);
                if (want_masked) res.masked_bytes[i] = f32_bytes(apply_mask(tau, masks[i]));
            }
        }
        res.out_bytes = narrow_to_bytes(acc, meta);

        res.stats.name = meta.name;
        res.stats.numel = meta.numel();
        res.stats.kept.resize(k);
        res.stats.shared.assign(k, std::vector<std::size_t>(k, 0));
        for (std::size_t i = 0; i < k; ++i)
            res.stats.kept[i] = full_masks ? n : masks[i].count();
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
                if (full_masks)
                    res.stats.shared[i][j] = n;
                else if (j == i)
                    res.stats.shared[i][j] = res.stats.kept[i];
                else
                    res.stats.shared[i][j] = masks[i].and_count(masks[j]);
            }
        return res;
    };

    report.total_kept.assign(k, 0);
    report.total_shared.assign(k, std::vector<std::size_t>(k, 0));

    const std::size_t window = std::max(1, opts.threads);
    std::vector<TensorResult> results(window);
    try {
        for (std::size_t chunk = 0; chunk < ordered.size(); chunk += window) {
            const std::size_t end = std::min(chunk + window, ordered.size());
            parallel_for(chunk, end, opts.threads,
                         [&](std::size_t i) { results[i - chunk] = compute_tensor(*ordered[i]); });
            for (std::size_t i = chunk; i < end; ++i) {
                TensorResult& res = results[i - chunk];
                out.append_raw(res.out_bytes);
                if (want_masked && ordered[i]->is_arithmetic())
                    for (std::size_t v = 0; v < k; ++v)
                        masked_writers[v]->append_f32(Eigen::Map<const ArrayXf>(
                            reinterpret_cast<const float*>(res.masked_bytes[v].data()),
                            static_cast<Eigen::Index>(res.masked_bytes[v].size() / 4)));
                if (ordered[i]->is_arithmetic()) {
                    report.total_elements += res.stats.numel;
                    for (std::size_t a = 0; a < k; ++a) {
                        report.total_kept[a] += res.stats.kept[a];
                        for (std::size_t b = 0; b < k; ++b)
                            report.total_shared[a][b] += res.stats.shared[a][b];
                    }
                    report.tensors.push_back(std::move(res.stats));
                }
                res = TensorResult{};
            }
        }
        out.finish();
        for (auto& w : masked_writers) w->finish();
    } catch (...) {
        std::error_code ec;
        fs::remove(recipe.output, ec);
        throw;
    }

    const auto t1 = std::chrono::steady_clock::now();
    report.wall_seconds = std::chrono::duration<double>(t1 - t0).count();

    if (opts.write_report_file) {
        const std::string report_path = recipe.report_path.value_or(recipe.output + ".report.json");
        std::ofstream rf(report_path);
        if (!rf) throw IoError("cannot write report '" + report_path + "'");
        rf << report.to_json().dump(2) << '\n';
    }
    log_info("merged %zu tensors into %s (%.3fs)", ordered.size(), recipe.output.c_str(),
             report.wall_seconds);
    return report;
}

}  // namespace tvmerge
