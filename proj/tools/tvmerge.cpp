// tvmerge: merge fine-tuned model checkpoints by sparsifying their task
// vectors (conflict-aware n:m pruning, magnitude/random baselines), inspect
// the resulting masks, and grid-search scaling coefficients.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "tvmerge/analysis.hpp"
#include "tvmerge/errors.hpp"
#include "tvmerge/grid_search.hpp"
#include "tvmerge/log.hpp"
#include "tvmerge/merge_engine.hpp"
#include "tvmerge/ops.hpp"
#include "tvmerge/safetensors.hpp"

namespace {

using tvmerge::ArrayXf;
using tvmerge::Bitset;
using tvmerge::Checkpoint;
using ordered_json = nlohmann::ordered_json;

struct GlobalFlags {
    int threads = 1;
    std::string log_level = "info";
    bool json = false;
    std::string output;  // override for merge/search outputs
    std::optional<std::uint64_t> seed;
};

void emit_json(const ordered_json& doc, const std::string& output_path) {
    if (!output_path.empty()) {
        std::ofstream out(output_path);
        if (!out) throw tvmerge::IoError("cannot write '" + output_path + "'");
        out << doc.dump(2) << '\n';
    } else {
        std::cout << doc.dump(2) << std::endl;
    }
}

int cmd_diff(const GlobalFlags& g, const std::string& base_path, const std::string& ft_path,
             const std::string& out_path) {
    const Checkpoint base = Checkpoint::open(base_path);
    const Checkpoint ft = Checkpoint::open(ft_path);
    tvmerge::check_aligned(base, ft);

    std::vector<const tvmerge::TensorMeta*> ordered;
    for (const auto& m : base.metas())
        if (m.is_arithmetic()) ordered.push_back(&m);
    std::sort(ordered.begin(), ordered.end(),
              [](const tvmerge::TensorMeta* a, const tvmerge::TensorMeta* b) { return a->name < b->name; });

    tvmerge::CheckpointWriter w(out_path);
    for (const auto* m : ordered) w.declare(m->name, "F32", m->shape);
    for (const auto* m : ordered)
        w.append_f32(tvmerge::delta(ft.read_f32(m->name), base.read_f32(*m)));
    w.finish();

    ordered_json doc;
    doc["output"] = out_path;
    doc["tensors"] = ordered.size();
    if (g.json) emit_json(doc, g.output);
    else tvmerge::log_info("wrote task vector with %zu tensors to %s", ordered.size(), out_path.c_str());
    return tvmerge::kExitOk;
}

int cmd_merge(const GlobalFlags& g, const std::string& recipe_path, bool dry_run) {
    tvmerge::MergeRecipe recipe = tvmerge::load_recipe(recipe_path);
    tvmerge::RunOptions opts;
    opts.threads = g.threads;
    opts.dry_run = dry_run;
    opts.seed_override = g.seed;
    if (!g.output.empty()) opts.output_override = g.output;
    const tvmerge::RunReport report = tvmerge::run_recipe(recipe, opts);
    if (g.json) emit_json(report.to_json(), "");
    return tvmerge::kExitOk;
}

// Masks come from the nonzero support of each tensor, so any sparse
// task-vector checkpoint (e.g. the masked_vectors_dir output of a merge)
// can be analyzed directly.
Bitset support_of(const Checkpoint& c, const tvmerge::TensorMeta& meta) {
    return tvmerge::nonzero_mask(c.read_f32(meta));
}

int cmd_analyze_overlap(const GlobalFlags& g, const std::string& path_a, const std::string& path_b,
                        bool per_tensor) {
    const Checkpoint a = Checkpoint::open(path_a);
    const Checkpoint b = Checkpoint::open(path_b);

    tvmerge::OverlapStats total;
    ordered_json tensors = ordered_json::array();
    for (const auto& m : a.metas()) {
        if (!m.is_arithmetic()) continue;
        const tvmerge::TensorMeta* mb = b.find(m.name);
        if (!mb || mb->shape != m.shape)
            throw tvmerge::ValidationError("tensor '" + m.name + "' missing or misshaped in '" +
                                        path_b + "'");
        const auto stats = tvmerge::overlap_stats(support_of(a, m), support_of(b, *mb));
        total += stats;
        if (per_tensor)
            tensors.push_back({{"name", m.name},
                               {"kept_a", stats.kept_a},
                               {"kept_b", stats.kept_b},
                               {"shared", stats.shared},
                               {"rate", stats.kept_a ? stats.rate() : 0.0}});
    }

    ordered_json doc;
    doc["kept_a"] = total.kept_a;
    doc["kept_b"] = total.kept_b;
    doc["shared"] = total.shared;
    doc["rate"] = total.rate();
    if (per_tensor) doc["tensors"] = std::move(tensors);
    emit_json(doc, g.output);
    return tvmerge::kExitOk;
}

int cmd_analyze_balance(const GlobalFlags& g, const std::string& path, const std::string& tensor,
                        std::size_t band_rows, std::size_t band_cols, const std::string& csv_path) {
    const Checkpoint c = Checkpoint::open(path);
    const tvmerge::TensorMeta& meta = c.meta(tensor);
    const Bitset mask = support_of(c, meta);
    const tvmerge::BalanceGrid grid = tvmerge::balance_grid(mask, meta.shape, band_rows, band_cols);

    if (!csv_path.empty()) {
        std::ofstream out(csv_path);
        if (!out) throw tvmerge::IoError("cannot write '" + csv_path + "'");
        grid.write_csv(out);
    }
    ordered_json doc;
    doc["tensor"] = tensor;
    doc["band_rows"] = grid.band_rows;
    doc["band_cols"] = grid.band_cols;
    doc["grid_rows"] = grid.grid_rows;
    doc["grid_cols"] = grid.grid_cols;
    doc["kept"] = grid.total();
    doc["mean"] = grid.mean;
    doc["variance"] = grid.variance;
    doc["cv"] = grid.cv;
    if (!csv_path.empty()) doc["csv"] = csv_path;
    emit_json(doc, g.output);
    return tvmerge::kExitOk;
}

int cmd_analyze_ortho(const GlobalFlags& g, const std::vector<std::string>& paths,
                      std::vector<double> lambdas) {
    if (paths.size() < 2) throw tvmerge::ValidationError("ortho needs at least two checkpoints");
    if (lambdas.empty()) lambdas.assign(paths.size(), 1.0);
    if (lambdas.size() != paths.size())
        throw tvmerge::ValidationError("need one lambda per checkpoint");

    std::vector<Checkpoint> ckpts;
    for (const auto& p : paths) ckpts.push_back(Checkpoint::open(p));

    // Concatenate per-tensor reports by summing the underlying double terms:
    // inner products and squared norms are additive across tensors.
    std::vector<double> sq(paths.size(), 0.0);
    std::vector<std::vector<double>> inner(paths.size(), std::vector<double>(paths.size(), 0.0));
    double combined = 0.0;
    for (const auto& m : ckpts[0].metas()) {
        if (!m.is_arithmetic()) continue;
        std::vector<ArrayXf> vs;
        for (auto& c : ckpts) {
            const tvmerge::TensorMeta* mm = c.find(m.name);
            if (!mm || mm->shape != m.shape)
                throw tvmerge::ValidationError("tensor '" + m.name + "' missing or misshaped in '" +
                                            c.path() + "'");
            vs.push_back(c.read_f32(*mm));
        }
        std::vector<const ArrayXf*> ptrs;
        for (auto& v : vs) ptrs.push_back(&v);
        const auto rep = tvmerge::ortho_check(ptrs, lambdas);
        for (std::size_t i = 0; i < paths.size(); ++i) {
            sq[i] += rep.scaled_sq_norms[i];
            for (std::size_t j = 0; j < paths.size(); ++j) inner[i][j] += rep.inners[i][j];
        }
        combined += rep.combined_sq_norm;
    }

    double expected = 0.0;
    for (std::size_t i = 0; i < paths.size(); ++i) expected += sq[i];
    for (std::size_t i = 0; i < paths.size(); ++i)
        for (std::size_t j = i + 1; j < paths.size(); ++j)
            expected += 2.0 * lambdas[i] * lambdas[j] * inner[i][j];
    const double residual = combined - expected;

    ordered_json doc;
    doc["lambdas"] = lambdas;
    doc["scaled_sq_norms"] = sq;
    doc["inner_products"] = inner;
    doc["combined_sq_norm"] = combined;
    doc["residual"] = residual;
    doc["relative_residual"] = std::fabs(residual) / std::max(combined, 1e-30);
    emit_json(doc, g.output);
    return tvmerge::kExitOk;
}

int cmd_search(const GlobalFlags& g, const std::string& spec_path, bool keep) {
    tvmerge::SearchSpec spec = tvmerge::load_search_spec(spec_path);
    if (keep) spec.keep_intermediate = true;
    tvmerge::RunOptions opts;
    opts.threads = g.threads;
    opts.seed_override = g.seed;
    const tvmerge::SearchResult result = tvmerge::grid_search(spec, opts);
    if (g.json) {
        emit_json(result.to_json(), g.output);
    } else {
        const std::string best = ordered_json(result.best).dump();
        tvmerge::log_info("best lambda %s with score %.6f after %zu evaluations", best.c_str(),
                       result.best_score, result.evaluations);
    }
    return tvmerge::kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Checkpoint merging via sparsified task vectors"};
    app.require_subcommand(1);

    GlobalFlags g;
    app.add_option("--threads", g.threads, "Worker threads for per-tensor work")
        ->check(CLI::Range(1, 256));
    app.add_option("--log-level", g.log_level, "error | warn | info | debug");
    app.add_flag("--json", g.json, "Emit exactly one JSON document on stdout");
    app.add_option("--output", g.output, "Override the output path");
    std::int64_t seed_opt = -1;
    app.add_option("--seed", seed_opt, "Override the recipe seed");

    // diff
    auto* diff = app.add_subcommand("diff", "Materialize a task vector (fine-tuned minus base)");
    std::string diff_base, diff_ft, diff_out;
    diff->add_option("--base", diff_base, "Base checkpoint")->required();
    diff->add_option("--fine-tuned", diff_ft, "Fine-tuned checkpoint")->required();
    diff->add_option("--out", diff_out, "Output task-vector checkpoint")->required();

    // merge
    auto* merge = app.add_subcommand("merge", "Run a merge recipe");
    std::string recipe_path;
    bool dry_run = false;
    merge->add_option("recipe", recipe_path, "Recipe JSON")->required();
    merge->add_flag("--dry-run", dry_run, "Validate and plan only; write nothing");

    // analyze
    auto* analyze = app.add_subcommand("analyze", "Mask and task-vector diagnostics");
    analyze->require_subcommand(1);

    auto* overlap = analyze->add_subcommand("overlap", "Overlap rate of two sparse checkpoints");
    std::string ov_a, ov_b;
    bool ov_per_tensor = false;
    overlap->add_option("a", ov_a)->required();
    overlap->add_option("b", ov_b)->required();
    overlap->add_flag("--per-tensor", ov_per_tensor, "Include per-tensor rates");

    auto* balance = analyze->add_subcommand("balance", "Banded retained-weight counts");
    std::string bal_path, bal_tensor, bal_csv;
    std::size_t band_rows = 1, band_cols = 1;
    balance->add_option("checkpoint", bal_path)->required();
    balance->add_option("--tensor", bal_tensor, "Tensor name")->required();
    balance->add_option("--band-rows", band_rows)->required();
    balance->add_option("--band-cols", band_cols)->required();
    balance->add_option("--csv", bal_csv, "Write the grid as CSV");

    auto* ortho = analyze->add_subcommand("ortho", "Inner products and norm decomposition");
    std::vector<std::string> ortho_paths;
    std::vector<double> ortho_lambdas;
    ortho->add_option("checkpoints", ortho_paths, "Two or more sparse task-vector checkpoints")
        ->required()
        ->expected(2, -1);
    ortho->add_option("--lambdas", ortho_lambdas, "Scaling coefficients (default all 1)")
        ->delimiter(',');

    // search
    auto* search = app.add_subcommand("search", "Two-step lambda grid search");
    std::string search_spec;
    bool search_keep = false;
    search->add_option("spec", search_spec, "Search spec JSON")->required();
    search->add_flag("--keep", search_keep, "Keep intermediate merged checkpoints");

    CLI11_PARSE(app, argc, argv);

    if (!tvmerge::set_log_level(g.log_level)) {
        std::fprintf(stderr, "unknown log level '%s'\n", g.log_level.c_str());
        return tvmerge::kExitValidation;
    }
    if (seed_opt >= 0) g.seed = static_cast<std::uint64_t>(seed_opt);

    try {
        if (*diff) return cmd_diff(g, diff_base, diff_ft, diff_out);
        if (*merge) return cmd_merge(g, recipe_path, dry_run);
        if (*overlap) return cmd_analyze_overlap(g, ov_a, ov_b, ov_per_tensor);
        if (*balance) return cmd_analyze_balance(g, bal_path, bal_tensor, band_rows, band_cols, bal_csv);
        if (*ortho) return cmd_analyze_ortho(g, ortho_paths, ortho_lambdas);
        if (*search) return cmd_search(g, search_spec, search_keep);
    } catch (const std::exception& e) {
        const int code = tvmerge::exit_code_for(e);
        ordered_json err;
        err["error"] = {{"exit_code", code}, {"kind", tvmerge::error_kind(code)}, {"message", e.what()}};
        std::cerr << err.dump() << std::endl;
        return code;
    }
    return tvmerge::kExitInternal;
}
