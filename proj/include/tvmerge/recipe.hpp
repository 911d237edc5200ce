#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tvmerge/conflict_aware.hpp"

namespace tvmerge {

enum class MergeMethod {
    TaskArithmetic,
    Dare,
    MagnitudeLayer,
    MagnitudeRow,
    Ties,
    Cabs,
    CaOnly,
    BsOnly,
};

const char* method_name(MergeMethod m);
std::optional<MergeMethod> method_from_name(std::string_view name);

struct RecipeVector {
    std::string name;
    std::string path;
    std::optional<double> lambda;
    bool is_delta = false;  // path already holds the task vector, not a fine-tuned model
};

// Declarative description of one merge run. Serialized as a single JSON
// document with a top-level "version" field.
struct MergeRecipe {
    int version = 1;
    std::string base;
    std::string output;
    std::vector<RecipeVector> vectors;
    std::optional<double> unified_lambda;  // overrides per-vector lambdas
    MergeMethod method = MergeMethod::TaskArithmetic;
    std::optional<double> keep_fraction;
    std::optional<int> n, m;
    std::optional<bool> rescale;  // default depends on the method
    std::optional<std::uint64_t> seed;
    std::vector<std::string> order;  // sparsification order; empty = recipe order
    OverlapFill overlap_fill = OverlapFill::Block;
    std::optional<std::string> report_path;
    std::optional<std::string> masked_vectors_dir;
    std::vector<std::string> unknown_keys;  // collected during parse

    double lambda_for(std::size_t i) const;
    // Rescaling is on by default only for the random-drop method; any method
    // can opt in (or out) explicitly.
    bool rescale_enabled() const;
    double effective_keep_fraction() const;  // keep_fraction, or n/m
    bool uses_blocks() const;
    bool uses_conflict_aware() const;
    // Indices into `vectors` in sparsification order.
    std::vector<std::size_t> ca_order_indices() const;
};

MergeRecipe parse_recipe(const nlohmann::ordered_json& doc);
MergeRecipe load_recipe(const std::string& path);
nlohmann::ordered_json recipe_to_json(const MergeRecipe& r);

struct ValidateOptions {
    bool require_lambda = true;     // relaxed for grid-search base recipes
    bool require_output = true;
    bool allow_zero_lambda = false; // search grids legitimately visit lambda = 0
};

// Static checks only; never opens the referenced files.
std::vector<std::string> validate_recipe(const MergeRecipe& r, const ValidateOptions& opts = {});

}  // namespace tvmerge
