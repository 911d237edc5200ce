#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tvmerge/recipe.hpp"
#include "tvmerge/safetensors.hpp"

namespace tvmerge {

struct RunOptions {
    int threads = 1;
    bool dry_run = false;
    std::optional<std::uint64_t> seed_override;
    std::optional<std::string> output_override;
    bool write_report_file = true;
    bool allow_zero_lambda = false;  // set by the search harness
};

struct TensorRunStats {
    std::string name;
    std::int64_t numel = 0;
    std::vector<std::size_t> kept;                // per vector
    std::vector<std::vector<std::size_t>> shared; // k x k and-counts
};

// What one run did: the lambdas actually applied, per-tensor keep counts,
// the realized pairwise overlap matrix, and wall time.
struct RunReport {
    bool dry_run = false;
    std::string method;
    std::string base;
    std::string output;
    std::vector<std::string> vector_names;
    std::vector<double> lambdas;
    bool rescale_enabled = false;
    double rescale_factor = 1.0;
    std::vector<std::string> ca_order;  // only for sequential methods

    std::vector<TensorRunStats> tensors;          // arithmetic tensors, name order
    std::vector<std::size_t> total_kept;          // per vector
    std::vector<std::vector<std::size_t>> total_shared;
    std::int64_t total_elements = 0;
    double wall_seconds = 0.0;

    // total_shared[i][j] / total_kept[i]; 0 when nothing is kept.
    double overlap_rate(std::size_t i, std::size_t j) const;
    nlohmann::ordered_json to_json() const;
};

// Full pipeline: open checkpoints, build task vectors per tensor, generate
// masks, merge and write the output checkpoint. Deterministic for a given
// recipe regardless of thread count.
RunReport run_recipe(const MergeRecipe& recipe, const RunOptions& opts = {});

}  // namespace tvmerge
